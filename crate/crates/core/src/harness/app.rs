//! The CAS experiment as a set of registered functions.
//!
//! Each task runs three frames deep: the runtime's task wrapper, `CAS_TASK`
//! holding the workload operation, and `RCAS_CAS` holding the register call
//! with its process and sequence number.

use std::sync::Arc;

use super::log::{CasOp, ExecutionLog, OpResult};
use super::workload::Workload;
use crate::error::{Error, Result};
use crate::pstack::StackStrategy;
use crate::rcas::{seq_for, RcasRegister, Variant};
use crate::region::Region;
use crate::runtime::{CallContext, Registry, Runtime, TaskSpec, TaskStatus};

pub const CAS_TASK: u64 = 0x10;
pub const RCAS_CAS: u64 = 0x11;

pub fn task_args(op_id: u64, old: i32, new: i32) -> Vec<u8> {
    let mut a = Vec::with_capacity(16);
    a.extend_from_slice(&op_id.to_le_bytes());
    a.extend_from_slice(&old.to_le_bytes());
    a.extend_from_slice(&new.to_le_bytes());
    a
}

pub fn decode_task_args(a: &[u8]) -> Result<(u64, i32, i32)> {
    if a.len() != 16 {
        return Err(Error::App(format!("CAS task arguments of {} bytes", a.len())));
    }
    Ok((
        u64::from_le_bytes(a[..8].try_into().unwrap()),
        i32::from_le_bytes(a[8..12].try_into().unwrap()),
        i32::from_le_bytes(a[12..16].try_into().unwrap()),
    ))
}

pub fn rcas_args(p: usize, seq: u32, old: i32, new: i32) -> Vec<u8> {
    let mut a = Vec::with_capacity(16);
    a.extend_from_slice(&(p as u32).to_le_bytes());
    a.extend_from_slice(&seq.to_le_bytes());
    a.extend_from_slice(&old.to_le_bytes());
    a.extend_from_slice(&new.to_le_bytes());
    a
}

fn decode_rcas_args(a: &[u8]) -> Result<(usize, u32, i32, i32)> {
    if a.len() != 16 {
        return Err(Error::App(format!("register call arguments of {} bytes", a.len())));
    }
    let word = |i: usize| a[4 * i..4 * i + 4].try_into().unwrap();
    Ok((
        u32::from_le_bytes(word(0)) as usize,
        u32::from_le_bytes(word(1)),
        i32::from_le_bytes(word(2)),
        i32::from_le_bytes(word(3)),
    ))
}

/// Answer of a CAS: bit 0 is the outcome, the bits above carry the process.
pub fn encode_answer(ok: bool, p: usize) -> u64 {
    ok as u64 | (p as u64) << 8
}

pub fn decode_answer(answer: u64) -> (bool, usize) {
    (answer & 1 == 1, (answer >> 8) as usize)
}

fn cas_task(ctx: &mut CallContext<'_>, args: &[u8]) -> Result<u64> {
    let (op_id, old, new) = decode_task_args(args)?;
    ctx.call(RCAS_CAS, &rcas_args(ctx.process(), seq_for(op_id), old, new))
}

pub fn registry(reg: Arc<RcasRegister>) -> Registry {
    let mut r = Registry::new();
    r.register(CAS_TASK, cas_task, |ctx, args| match ctx.callee_answer()? {
        Some(answer) => Ok(answer),
        None => cas_task(ctx, args),
    })
    .expect("fresh registry");
    let (a, b) = (reg.clone(), reg);
    r.register(
        RCAS_CAS,
        move |_, args| {
            let (p, seq, old, new) = decode_rcas_args(args)?;
            Ok(encode_answer(a.cas(p, seq, old, new)?, p))
        },
        move |_, args| {
            let (p, seq, old, new) = decode_rcas_args(args)?;
            Ok(encode_answer(b.recover(p, seq, old, new)?, p))
        },
    )
    .expect("fresh registry");
    r
}

/// Region size that comfortably holds a run of `ops` operations on `threads` stacks.
pub fn region_size_for(threads: usize, ops: usize, strategy: StackStrategy) -> u64 {
    let stack = match strategy {
        StackStrategy::Bounded { capacity } => capacity * 2,
        StackStrategy::Array { initial_capacity } => (initial_capacity * 4).max(4096),
        StackStrategy::BlockList { block_size } => (block_size * 8).max(4096),
    };
    let raw = (1 << 20) + ops as u64 * 256 + threads as u64 * (stack + 1024) + (threads * threads) as u64 * 128;
    raw.next_multiple_of(1 << 16)
}

/// Lays out the register, the stacks and the task table for `workload`.
pub fn setup(
    region: &Arc<Region>,
    threads: usize,
    workload: &Workload,
    variant: Variant,
    strategy: StackStrategy,
) -> Result<Runtime> {
    let reg = Arc::new(RcasRegister::init(region, threads, workload.init, variant)?);
    let mut rt = Runtime::new(region.clone(), registry(reg))?;
    rt.ensure_stacks(threads, strategy)?;
    let specs: Vec<TaskSpec> = workload
        .ops
        .iter()
        .map(|op| TaskSpec { task_id: op.op_id, function_id: CAS_TASK, args: task_args(op.op_id, op.old, op.new) })
        .collect();
    rt.create_tasks(&specs)?;
    Ok(rt)
}

/// Runtime over a region prepared by [`setup`].
pub fn attach(region: &Arc<Region>) -> Result<(Runtime, Arc<RcasRegister>)> {
    let reg = Arc::new(RcasRegister::attach(region)?);
    Ok((Runtime::new(region.clone(), registry(reg.clone()))?, reg))
}

/// Builds the log from the task table and the register. Tasks that are not
/// done yet come out with an unknown result.
pub fn collect_log(rt: &Runtime, reg: &RcasRegister) -> Result<ExecutionLog> {
    let mut ops = Vec::new();
    for task in rt.tasks()?.all()? {
        let (op_id, old, new) = decode_task_args(&task.args)?;
        let (result, thread) = match (task.status, task.answer) {
            (TaskStatus::Done, Some(answer)) => {
                let (ok, p) = decode_answer(answer);
                (if ok { OpResult::Success } else { OpResult::Fail }, p.saturating_sub(1))
            }
            _ => (OpResult::Unknown, 0),
        };
        ops.push(CasOp { op_id, thread, old, new, result });
    }
    Ok(ExecutionLog { init: reg.initial()?, ops, final_value: reg.read()? })
}
