use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::log::{CasOp, OpResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueRange {
    /// [-10, 10]: values repeat often and many CASes succeed.
    Narrow,
    /// [-100000, 100000].
    Wide,
}

impl ValueRange {
    pub fn bounds(self) -> (i32, i32) {
        match self {
            ValueRange::Narrow => (-10, 10),
            ValueRange::Wide => (-100_000, 100_000),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Workload {
    pub init: i32,
    pub ops: Vec<CasOp>,
}

/// Initial value and `n_ops` CAS operations with uniformly drawn values,
/// fully determined by `seed`.
pub fn generate_workload(seed: u64, n_ops: usize, range: ValueRange) -> Workload {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = range.bounds();
    let init = rng.gen_range(lo..=hi);
    let ops = (0..n_ops as u64)
        .map(|op_id| CasOp {
            op_id,
            thread: 0,
            old: rng.gen_range(lo..=hi),
            new: rng.gen_range(lo..=hi),
            result: OpResult::Unknown,
        })
        .collect();
    Workload { init, ops }
}
