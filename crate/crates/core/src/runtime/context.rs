use std::sync::Arc;

use super::registry::{Function, Registry, TASK_ENTRY};
use super::tasks::TaskTable;
use crate::error::{Error, Result};
use crate::pstack::{PersistentStack, Stack};
use crate::region::Region;

/// State shared by every worker of one runtime instance.
pub(crate) struct Shared {
    pub region: Arc<Region>,
    pub registry: Registry,
    pub tasks: Option<TaskTable>,
    pub entry_body: Function,
    pub entry_recover: Function,
}

impl Shared {
    pub fn functions(&self, id: u64) -> Result<(Function, Function)> {
        if id == TASK_ENTRY {
            return Ok((self.entry_body.clone(), self.entry_recover.clone()));
        }
        let e = self.registry.get(id)?;
        Ok((e.body.clone(), e.recover.clone()))
    }
}

/// Handle through which a running function reaches its worker's persistent
/// stack and calls other registered functions.
pub struct CallContext<'a> {
    shared: &'a Shared,
    stack: &'a mut Stack,
    worker: usize,
    recovering: bool,
}

impl<'a> CallContext<'a> {
    pub(crate) fn new(shared: &'a Shared, stack: &'a mut Stack, worker: usize, recovering: bool) -> Self {
        CallContext { shared, stack, worker, recovering }
    }

    /// Index of the worker (and of its stack), from 0.
    pub fn worker(&self) -> usize {
        self.worker
    }

    /// Process number used by shared recoverable objects, from 1.
    pub fn process(&self) -> usize {
        self.worker + 1
    }

    pub fn region(&self) -> &'a Arc<Region> {
        &self.shared.region
    }

    pub fn tasks(&self) -> Result<&'a TaskTable> {
        self.shared.tasks.as_ref().ok_or_else(|| Error::TaskTable("no task table in this region".into()))
    }

    pub fn depth(&self) -> usize {
        self.stack.depth()
    }

    /// True while running on behalf of recovery.
    pub fn recovering(&self) -> bool {
        self.recovering
    }

    /// Answer slot of the current top frame: the value returned by the last
    /// callee that completed, if any. A recover function reads this to learn
    /// whether its callee finished before the crash.
    pub fn callee_answer(&self) -> Result<Option<u64>> {
        self.stack.top_answer()
    }

    pub(crate) fn stack_mut(&mut self) -> &mut Stack {
        self.stack
    }

    /// Calls function `id`: clear the caller's answer slot, push the callee's
    /// frame, run the body, store the answer in the caller's frame, pop.
    pub fn call(&mut self, id: u64, args: &[u8]) -> Result<u64> {
        let (body, _) = self.shared.functions(id)?;
        self.stack.reset_answer()?;
        self.stack.push(id, args)?;
        let outcome = body(self, args);
        self.complete(outcome)
    }

    /// Runs the tail of the call protocol for the frame on top of the stack.
    pub(crate) fn complete(&mut self, outcome: Result<u64>) -> Result<u64> {
        match outcome {
            Ok(answer) => {
                if self.stack.depth() >= 3 {
                    self.stack.write_answer(answer)?;
                }
                self.stack.pop()?;
                Ok(answer)
            }
            Err(e) if e.is_crash() => Err(e),
            Err(e) => {
                self.stack.pop()?;
                Err(e)
            }
        }
    }

    /// Calls a function whose answer does not fit in 8 bytes. The caller
    /// allocates `answer_len` bytes and passes their offset in front of the
    /// arguments; the callee writes and flushes the answer there and returns
    /// the offset. See [`split_big_args`] and [`CallContext::write_big_answer`].
    ///
    /// A crash between the allocation and the push leaks the buffer.
    pub fn call_big(&mut self, id: u64, args: &[u8], answer_len: u64) -> Result<u64> {
        if answer_len == 0 {
            return Err(Error::Config("a large answer needs a non-zero length".into()));
        }
        let target = self.region().allocate(answer_len)?;
        let mut full = Vec::with_capacity(8 + args.len());
        full.extend_from_slice(&target.to_le_bytes());
        full.extend_from_slice(args);
        let got = self.call(id, &full)?;
        if got != target {
            return Err(Error::App(format!("function {id} returned {got} instead of its answer buffer {target}")));
        }
        Ok(target)
    }

    /// Writes a large answer into the buffer named by the caller and flushes it.
    pub fn write_big_answer(&self, target: u64, bytes: &[u8]) -> Result<u64> {
        let capacity = self.region().block_size(target)?;
        if bytes.len() as u64 > capacity {
            return Err(Error::App(format!("answer of {} bytes exceeds its {capacity}-byte buffer", bytes.len())));
        }
        self.region().write_bytes(target, bytes)?;
        self.region().flush(target, bytes.len() as u64)?;
        Ok(target)
    }
}

/// Splits the arguments of a large-answer callee into the answer buffer
/// offset and the caller's own arguments.
pub fn split_big_args(args: &[u8]) -> Result<(u64, &[u8])> {
    if args.len() < 8 {
        return Err(Error::App("large-answer call without an answer buffer".into()));
    }
    Ok((u64::from_le_bytes(args[..8].try_into().unwrap()), &args[8..]))
}
