use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// When a simulated crash fires.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CrashMode {
    None,
    /// External process termination. Nothing is injected in-process.
    Kill,
    /// Crash right after the k-th line flush (1-based) of the current run.
    /// Fires once.
    AtFlush(u64),
    /// After every line flush, crash with the given probability. Stays armed
    /// across restarts.
    Random {
        seed: u64,
        probability: f64,
    },
}

/// Which not-yet-flushed lines of an interrupted multi-line flush survive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TornOrder {
    /// Lines persist in ascending order; everything after the crash point is lost.
    #[default]
    InOrderPrefix,
    /// Each remaining line of the interrupted flush persists with probability 1/2.
    RandomSubset(u64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrashPlan {
    pub mode: CrashMode,
    pub ordering: TornOrder,
}

impl CrashPlan {
    pub const NONE: CrashPlan = CrashPlan { mode: CrashMode::None, ordering: TornOrder::InOrderPrefix };

    pub fn at_flush(k: u64) -> Self {
        CrashPlan { mode: CrashMode::AtFlush(k), ordering: TornOrder::InOrderPrefix }
    }

    pub fn random(seed: u64, probability: f64) -> Self {
        CrashPlan { mode: CrashMode::Random { seed, probability }, ordering: TornOrder::InOrderPrefix }
    }

    pub fn with_ordering(mut self, ordering: TornOrder) -> Self {
        self.ordering = ordering;
        self
    }
}

impl Default for CrashPlan {
    fn default() -> Self {
        CrashPlan::NONE
    }
}

/// Armed plan plus the RNG streams it draws from.
#[derive(Debug)]
pub(crate) struct PlanState {
    plan: CrashPlan,
    trigger_rng: ChaCha8Rng,
    torn_rng: ChaCha8Rng,
}

impl PlanState {
    pub(crate) fn new(plan: CrashPlan) -> Self {
        let trigger_seed = match plan.mode {
            CrashMode::Random { seed, .. } => seed,
            _ => 0,
        };
        let torn_seed = match plan.ordering {
            TornOrder::RandomSubset(seed) => seed,
            TornOrder::InOrderPrefix => 0,
        };
        PlanState {
            plan,
            trigger_rng: ChaCha8Rng::seed_from_u64(trigger_seed),
            torn_rng: ChaCha8Rng::seed_from_u64(torn_seed),
        }
    }

    pub(crate) fn plan(&self) -> CrashPlan {
        self.plan
    }

    /// Called after line flush number `count` completed. Returns true when the
    /// system must crash now.
    pub(crate) fn should_crash(&mut self, count: u64) -> bool {
        match self.plan.mode {
            CrashMode::AtFlush(k) if k == count => {
                self.plan.mode = CrashMode::None;
                true
            }
            CrashMode::Random { probability, .. } => {
                probability > 0.0 && self.trigger_rng.gen_bool(probability.min(1.0))
            }
            _ => false,
        }
    }

    /// Whether an unflushed line of the interrupted flush survives the crash.
    pub(crate) fn torn_line_survives(&mut self) -> bool {
        match self.plan.ordering {
            TornOrder::InOrderPrefix => false,
            TornOrder::RandomSubset(_) => self.torn_rng.gen_bool(0.5),
        }
    }
}
