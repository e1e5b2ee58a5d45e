use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpResult {
    Success,
    Fail,
    /// Only while the operation is in flight; never written to a log.
    Unknown,
}

/// One `CAS(old, new)` of the experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CasOp {
    pub op_id: u64,
    pub thread: usize,
    pub old: i32,
    pub new: i32,
    pub result: OpResult,
}

impl CasOp {
    pub fn ok(&self) -> bool {
        self.result == OpResult::Success
    }
}

/// History of one experiment: initial value, every operation with its
/// reported result, and the value read at quiescence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecutionLog {
    pub init: i32,
    pub ops: Vec<CasOp>,
    pub final_value: i32,
}

impl ExecutionLog {
    /// Checks that every operation finished and op ids are unique.
    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::with_capacity(self.ops.len());
        for (i, op) in self.ops.iter().enumerate() {
            if op.result == OpResult::Unknown {
                return Err(Error::Log { line: i + 2, msg: format!("op {} has no result", op.op_id) });
            }
            if !seen.insert(op.op_id) {
                return Err(Error::Log { line: i + 2, msg: format!("op {} appears twice", op.op_id) });
            }
        }
        Ok(())
    }

    pub fn successes(&self) -> usize {
        self.ops.iter().filter(|o| o.ok()).count()
    }

    pub fn read(path: impl AsRef<Path>) -> Result<ExecutionLog> {
        std::fs::read_to_string(path)?.parse()
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(std::fs::write(path, self.to_string())?)
    }
}

impl fmt::Display for ExecutionLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "init {}", self.init)?;
        for op in &self.ops {
            let r = match op.result {
                OpResult::Success => "ok",
                OpResult::Fail => "fail",
                OpResult::Unknown => "unknown",
            };
            writeln!(f, "op {} {} {} {} {r}", op.op_id, op.thread, op.old, op.new)?;
        }
        writeln!(f, "final {}", self.final_value)
    }
}

fn field<T: FromStr>(line: usize, what: &str, s: Option<&str>) -> Result<T> {
    let s = s.ok_or_else(|| Error::Log { line, msg: format!("missing {what}") })?;
    s.parse().map_err(|_| Error::Log { line, msg: format!("bad {what} {s:?}") })
}

impl FromStr for ExecutionLog {
    type Err = Error;

    fn from_str(text: &str) -> Result<ExecutionLog> {
        let (mut init, mut final_value, mut ops) = (None, None, Vec::new());
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let raw = raw.trim();
            if raw.is_empty() || raw.starts_with('#') {
                continue;
            }
            let mut it = raw.split_whitespace();
            match it.next() {
                Some("init") => {
                    if init.replace(field::<i32>(line, "value", it.next())?).is_some() {
                        return Err(Error::Log { line, msg: "second init record".into() });
                    }
                }
                Some("final") => {
                    if final_value.replace(field::<i32>(line, "value", it.next())?).is_some() {
                        return Err(Error::Log { line, msg: "second final record".into() });
                    }
                }
                Some("op") => {
                    let op_id = field(line, "op id", it.next())?;
                    let thread = field(line, "thread", it.next())?;
                    let old = field(line, "old value", it.next())?;
                    let new = field(line, "new value", it.next())?;
                    let result = match it.next() {
                        Some("ok") => OpResult::Success,
                        Some("fail") => OpResult::Fail,
                        other => return Err(Error::Log { line, msg: format!("bad result {other:?}") }),
                    };
                    ops.push(CasOp { op_id, thread, old, new, result });
                }
                Some(other) => return Err(Error::Log { line, msg: format!("unknown record {other:?}") }),
                None => unreachable!(),
            }
            if let Some(extra) = it.next() {
                return Err(Error::Log { line, msg: format!("trailing field {extra:?}") });
            }
        }
        let init = init.ok_or(Error::Log { line: 0, msg: "no init record".into() })?;
        let final_value = final_value.ok_or(Error::Log { line: 0, msg: "no final record".into() })?;
        let log = ExecutionLog { init, ops, final_value };
        log.validate()?;
        Ok(log)
    }
}
