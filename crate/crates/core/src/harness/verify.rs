use std::collections::{HashMap, HashSet};

use super::log::{CasOp, ExecutionLog, OpResult};
use crate::error::Result;

/// Why a log is not serializable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reason {
    DegreeImbalance,
    Disconnected,
    FailedOpUnplaceable,
}

impl std::fmt::Display for Reason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Reason::DegreeImbalance => "degree-imbalance",
            Reason::Disconnected => "disconnected",
            Reason::FailedOpUnplaceable => "failed-op-unplaceable",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verdict {
    pub serializable: bool,
    /// Op ids in a sequential order that reproduces every result, when serializable.
    pub witness: Vec<u64>,
    pub reason: Option<Reason>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub op_id: u64,
}

/// Multigraph over register values with one edge `old -> new` per
/// successful CAS, in log order.
#[derive(Debug, Clone, Default)]
pub struct ValueGraph {
    pub values: Vec<i32>,
    pub index: HashMap<i32, usize>,
    pub edges: Vec<Edge>,
}

impl ValueGraph {
    fn vertex(&mut self, v: i32) -> usize {
        *self.index.entry(v).or_insert_with(|| {
            self.values.push(v);
            self.values.len() - 1
        })
    }
}

pub fn build_graph(log: &ExecutionLog) -> ValueGraph {
    let mut g = ValueGraph::default();
    g.vertex(log.init);
    g.vertex(log.final_value);
    for op in &log.ops {
        let (a, b) = (g.vertex(op.old), g.vertex(op.new));
        if op.ok() {
            g.edges.push(Edge { from: a, to: b, op_id: op.op_id });
        }
    }
    g
}

/// Trail through every edge from `init` to `final_value`, as edge indices.
/// `Err` names the violated condition.
pub fn euler_trail(g: &ValueGraph, init: i32, final_value: i32) -> std::result::Result<Vec<usize>, Reason> {
    let (Some(&s), Some(&t)) = (g.index.get(&init), g.index.get(&final_value)) else {
        return Err(if g.edges.is_empty() && init == final_value {
            Reason::Disconnected
        } else {
            Reason::DegreeImbalance
        });
    };
    let n = g.values.len();
    let mut balance = vec![0i64; n];
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, e) in g.edges.iter().enumerate() {
        balance[e.from] += 1;
        balance[e.to] -= 1;
        adj[e.from].push(i);
    }
    let balanced = (0..n).all(|v| {
        let want = if s == t {
            0
        } else if v == s {
            1
        } else if v == t {
            -1
        } else {
            0
        };
        balance[v] == want
    });
    if !balanced {
        return Err(Reason::DegreeImbalance);
    }
    let mut next = vec![0usize; n];
    let mut stack: Vec<(usize, Option<usize>)> = vec![(s, None)];
    let mut trail = Vec::with_capacity(g.edges.len());
    while let Some(&(v, via)) = stack.last() {
        if next[v] < adj[v].len() {
            let e = adj[v][next[v]];
            next[v] += 1;
            stack.push((g.edges[e].to, Some(e)));
        } else {
            stack.pop();
            trail.extend(via);
        }
    }
    if trail.len() != g.edges.len() {
        return Err(Reason::Disconnected);
    }
    trail.reverse();
    Ok(trail)
}

pub fn find_euler_trail(g: &ValueGraph, init: i32, final_value: i32) -> Option<Vec<usize>> {
    euler_trail(g, init, final_value).ok()
}

/// Values the register holds along `trail`: the initial value and every edge head.
fn trail_values(g: &ValueGraph, init: i32, trail: &[usize]) -> Vec<i32> {
    std::iter::once(init).chain(trail.iter().map(|&e| g.values[g.edges[e].to])).collect()
}

/// Whether every failed CAS can be placed at a moment when the register
/// holds something other than its expected value.
pub fn place_failed_ops(log: &ExecutionLog, trail: &[usize]) -> bool {
    let g = build_graph(log);
    let held: HashSet<i32> = trail_values(&g, log.init, trail).into_iter().collect();
    log.ops.iter().filter(|o| o.result == OpResult::Fail).all(|o| held.iter().any(|&v| v != o.old))
}

pub fn verify(log: &ExecutionLog) -> Result<Verdict> {
    log.validate()?;
    let g = build_graph(log);
    let trail = match euler_trail(&g, log.init, log.final_value) {
        Ok(t) => t,
        Err(reason) => return Ok(Verdict { serializable: false, witness: Vec::new(), reason: Some(reason) }),
    };
    let values = trail_values(&g, log.init, &trail);
    // slots[k]: failed ops placed while the register holds values[k].
    let mut slots: Vec<Vec<u64>> = vec![Vec::new(); values.len()];
    let mut first_other: HashMap<i32, Option<usize>> = HashMap::new();
    for op in log.ops.iter().filter(|o| o.result == OpResult::Fail) {
        let at = *first_other.entry(op.old).or_insert_with(|| values.iter().position(|&v| v != op.old));
        match at {
            Some(k) => slots[k].push(op.op_id),
            None => {
                return Ok(Verdict {
                    serializable: false,
                    witness: Vec::new(),
                    reason: Some(Reason::FailedOpUnplaceable),
                })
            }
        }
    }
    let mut witness = Vec::with_capacity(log.ops.len());
    for (k, placed) in slots.into_iter().enumerate() {
        witness.extend(placed);
        if let Some(&e) = trail.get(k) {
            witness.push(g.edges[e].op_id);
        }
    }
    Ok(Verdict { serializable: true, witness, reason: None })
}

/// Runs `witness` sequentially against a register starting at `log.init` and
/// checks that each op gets its reported result and the final value matches.
pub fn replay_witness(log: &ExecutionLog, witness: &[u64]) -> bool {
    let by_id: HashMap<u64, &CasOp> = log.ops.iter().map(|o| (o.op_id, o)).collect();
    if witness.len() != log.ops.len() || witness.iter().collect::<HashSet<_>>().len() != witness.len() {
        return false;
    }
    let mut reg = log.init;
    for id in witness {
        let Some(op) = by_id.get(id) else { return false };
        let ok = reg == op.old;
        if ok {
            reg = op.new;
        }
        if ok != op.ok() {
            return false;
        }
    }
    reg == log.final_value
}
