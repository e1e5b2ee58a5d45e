//! Execution engine: registered functions run on per-worker persistent
//! stacks, and recovery replays recover functions from the top of each stack.

mod context;
mod registry;
mod sched;
mod tasks;

use std::sync::Arc;

use crossbeam_queue::SegQueue;

pub use context::{split_big_args, CallContext};
pub use registry::{Function, FunctionEntry, Registry, TASK_ENTRY};
pub use sched::{TurnGuard, TurnScheduler};
pub use tasks::{TaskDescriptor, TaskSpec, TaskStatus, TaskTable, DEFAULT_MAX_ARGS};

use crate::error::{Error, Result};
use crate::pstack::{PersistentStack, Stack, StackStrategy};
use crate::region::Region;
use context::Shared;

/// Counters of one recovery pass.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct RecoveryStats {
    pub stacks: usize,
    /// Recover functions invoked.
    pub recovered: usize,
    /// Frames popped without a recover call because their answer had
    /// already reached the caller.
    pub skipped: usize,
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct RunStats {
    pub executed: usize,
}

pub struct Runtime {
    shared: Arc<Shared>,
    scheduler: Option<Arc<TurnScheduler>>,
}

fn slot_arg(args: &[u8]) -> Result<usize> {
    let bytes: [u8; 8] = args.try_into().map_err(|_| Error::TaskTable("malformed task entry frame".into()))?;
    Ok(u64::from_le_bytes(bytes) as usize)
}

fn entry_body(ctx: &mut CallContext<'_>, args: &[u8]) -> Result<u64> {
    let slot = slot_arg(args)?;
    let tasks = ctx.tasks()?;
    let task = tasks.get(slot)?;
    if let (TaskStatus::Done, Some(answer)) = (task.status, task.answer) {
        return Ok(answer);
    }
    let answer = ctx.call(task.function_id, &task.args)?;
    tasks.complete(slot, answer)?;
    Ok(answer)
}

fn entry_recover(ctx: &mut CallContext<'_>, args: &[u8]) -> Result<u64> {
    let slot = slot_arg(args)?;
    let tasks = ctx.tasks()?;
    let task = tasks.get(slot)?;
    if let (TaskStatus::Done, Some(answer)) = (task.status, task.answer) {
        return Ok(answer);
    }
    if let Some(answer) = ctx.callee_answer()? {
        tasks.complete(slot, answer)?;
        return Ok(answer);
    }
    entry_body(ctx, args)
}

impl Runtime {
    /// Runtime over `region`. The task table is opened when the region has one.
    pub fn new(region: Arc<Region>, registry: Registry) -> Result<Runtime> {
        let tasks = if region.task_table_root()? != 0 { Some(TaskTable::open(&region)?) } else { None };
        Ok(Runtime {
            shared: Arc::new(Shared {
                region,
                registry,
                tasks,
                entry_body: Arc::new(entry_body),
                entry_recover: Arc::new(entry_recover),
            }),
            scheduler: None,
        })
    }

    /// Serializes workers through `sched`, which is installed as the flush hook.
    pub fn with_scheduler(mut self, sched: Arc<TurnScheduler>) -> Self {
        sched.attach(&self.shared.region);
        self.scheduler = Some(sched);
        self
    }

    pub fn region(&self) -> &Arc<Region> {
        &self.shared.region
    }

    pub fn tasks(&self) -> Result<&TaskTable> {
        self.shared.tasks.as_ref().ok_or_else(|| Error::TaskTable("no task table in this region".into()))
    }

    /// Creates a task table and loads `specs` into it.
    pub fn create_tasks(&mut self, specs: &[TaskSpec]) -> Result<()> {
        let region = &self.shared.region;
        let table = TaskTable::create(region, specs.len() as u32, DEFAULT_MAX_ARGS)?;
        for spec in specs {
            if !self.shared.registry.contains(spec.function_id) {
                return Err(Error::UnknownFunction(spec.function_id));
            }
        }
        table.add(specs)?;
        Arc::get_mut(&mut self.shared).ok_or_else(|| Error::TaskTable("runtime is in use".into()))?.tasks = Some(table);
        Ok(())
    }

    /// Makes sure stacks `0..n` exist, creating the missing ones.
    pub fn ensure_stacks(&self, n: usize, strategy: StackStrategy) -> Result<()> {
        let region = &self.shared.region;
        for _ in region.n_stacks()?..n {
            Stack::create(region, strategy)?;
        }
        Ok(())
    }

    /// Runs `f` on a fresh context over stack `worker`, outside the task machinery.
    pub fn with_context<T>(&self, worker: usize, f: impl FnOnce(&mut CallContext<'_>) -> Result<T>) -> Result<T> {
        let mut stack = Stack::open(&self.shared.region, worker)?;
        let mut ctx = CallContext::new(&self.shared, &mut stack, worker, false);
        f(&mut ctx)
    }

    /// Normal mode: queues every pending task and lets `n_workers` workers
    /// drain the queue, each on its own stack.
    pub fn run_normal(&self, n_workers: usize) -> Result<RunStats> {
        let tasks = self.tasks()?;
        if n_workers == 0 {
            return Ok(RunStats::default());
        }
        let region = &self.shared.region;
        if region.n_stacks()? < n_workers {
            return Err(Error::Config(format!("{n_workers} workers but only {} stacks", region.n_stacks()?)));
        }
        let mut stacks = Vec::with_capacity(n_workers);
        for w in 0..n_workers {
            let stack = Stack::open(region, w)?;
            if stack.depth() > 1 {
                return Err(Error::Recovery(format!("stack {w} holds live frames; recover before running")));
            }
            stacks.push(stack);
        }
        let queue = SegQueue::new();
        for slot in tasks.pending()? {
            queue.push(slot);
        }
        if let Some(s) = &self.scheduler {
            s.begin(0..n_workers);
        }
        let results: Vec<Result<usize>> = std::thread::scope(|scope| {
            let handles: Vec<_> = stacks
                .into_iter()
                .enumerate()
                .map(|(w, mut stack)| {
                    let (queue, shared, sched) = (&queue, &*self.shared, self.scheduler.clone());
                    scope.spawn(move || {
                        let _turn = sched.as_ref().map(|s| s.enter(w));
                        let mut ctx = CallContext::new(shared, &mut stack, w, false);
                        let mut executed = 0;
                        while let Some(slot) = queue.pop() {
                            ctx.call(TASK_ENTRY, &(slot as u64).to_le_bytes())?;
                            executed += 1;
                        }
                        Ok(executed)
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap_or(Err(Error::WorkerPanic))).collect()
        });
        merge(results).map(|v| RunStats { executed: v.into_iter().sum() })
    }

    /// Recovery mode: one thread per registered stack, each running recover
    /// functions from its top frame down to the dummy.
    pub fn recover_all(&self) -> Result<RecoveryStats> {
        let n = self.shared.region.n_stacks()?;
        if let Some(s) = &self.scheduler {
            s.begin(0..n);
        }
        let results: Vec<Result<RecoveryStats>> = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..n)
                .map(|w| {
                    let (shared, sched) = (&*self.shared, self.scheduler.clone());
                    scope.spawn(move || {
                        let _turn = sched.as_ref().map(|s| s.enter(w));
                        recover_stack(shared, w)
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap_or(Err(Error::WorkerPanic))).collect()
        });
        let per_stack = merge(results)?;
        let mut total = RecoveryStats::default();
        for s in per_stack {
            total.stacks += 1;
            total.recovered += s.recovered;
            total.skipped += s.skipped;
        }
        Ok(total)
    }
}

fn recover_stack(shared: &Shared, w: usize) -> Result<RecoveryStats> {
    let mut stack = Stack::open(&shared.region, w).map_err(|e| match e {
        Error::CorruptStack(m) => Error::Recovery(format!("stack {w}: {m}")),
        other => other,
    })?;
    let mut stats = RecoveryStats { stacks: 1, ..Default::default() };
    while stack.depth() > 1 {
        let depth = stack.depth();
        if depth >= 3 && stack.answer_of(depth - 2)?.is_some() {
            stack.pop()?;
            stats.skipped += 1;
            continue;
        }
        let top = stack.top()?;
        let (_, recover) = shared.functions(top.function_id)?;
        let mut ctx = CallContext::new(shared, &mut stack, w, true);
        match recover(&mut ctx, &top.args) {
            Err(e) if !e.is_crash() => {
                return Err(Error::Recovery(format!("stack {w}: recover of function {}: {e}", top.function_id)));
            }
            outcome => ctx.complete(outcome)?,
        };
        debug_assert_eq!(ctx.stack_mut().depth(), depth - 1);
        stats.recovered += 1;
    }
    Ok(stats)
}

/// Collects per-worker results. A crash outranks other errors, since it
/// is what caused them.
fn merge<T>(results: Vec<Result<T>>) -> Result<Vec<T>> {
    let mut out = Vec::with_capacity(results.len());
    let mut first_err = None;
    for r in results {
        match r {
            Ok(v) => out.push(v),
            Err(e) if e.is_crash() => return Err(e),
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    match first_err {
        Some(e) => Err(e),
        None => Ok(out),
    }
}
