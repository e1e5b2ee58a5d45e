use std::cell::Cell;
use std::collections::BTreeSet;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::region::Region;

static NEXT_ID: AtomicUsize = AtomicUsize::new(1);

thread_local! {
    // (scheduler id, worker) of the thread, when it runs under a scheduler.
    static CURRENT: Cell<Option<(usize, usize)>> = const { Cell::new(None) };
}

struct Turns {
    active: BTreeSet<usize>,
    turn: Option<usize>,
    rng: ChaCha8Rng,
}

/// Runs worker threads one at a time, handing the turn to a seeded random
/// worker after every line flush. Interleavings are then a pure function of
/// the seed, so a crash at flush `k` always hits the same program state.
pub struct TurnScheduler {
    id: usize,
    turns: Mutex<Turns>,
    cv: Condvar,
}

impl std::fmt::Debug for TurnScheduler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TurnScheduler").field("id", &self.id).finish_non_exhaustive()
    }
}

impl TurnScheduler {
    pub fn new(seed: u64) -> Arc<TurnScheduler> {
        Arc::new(TurnScheduler {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            turns: Mutex::new(Turns { active: BTreeSet::new(), turn: None, rng: ChaCha8Rng::seed_from_u64(seed) }),
            cv: Condvar::new(),
        })
    }

    /// Installs the scheduler as the region's flush hook.
    pub fn attach(self: &Arc<Self>, region: &Region) {
        let me = self.clone();
        region.set_flush_hook(Some(Arc::new(move |_| me.yield_turn())));
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Turns> {
        self.turns.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Declares the workers of the next round. Must be called before they start.
    pub fn begin(&self, workers: impl IntoIterator<Item = usize>) {
        let mut t = self.lock();
        t.active = workers.into_iter().collect();
        t.turn = None;
        Self::pick(&mut t);
    }

    fn pick(t: &mut Turns) {
        t.turn = if t.active.is_empty() {
            None
        } else {
            let k = t.rng.gen_range(0..t.active.len());
            t.active.iter().nth(k).copied()
        };
    }

    /// Binds the calling thread to `worker` and blocks until it holds the turn.
    /// The turn is released when the guard drops.
    pub fn enter(self: &Arc<Self>, worker: usize) -> TurnGuard {
        CURRENT.with(|c| c.set(Some((self.id, worker))));
        let t = self.lock();
        drop(self.cv.wait_while(t, |t| t.turn != Some(worker)).unwrap_or_else(|e| e.into_inner()));
        TurnGuard { sched: self.clone(), worker }
    }

    fn yield_turn(&self) {
        let Some((id, worker)) = CURRENT.with(|c| c.get()) else { return };
        if id != self.id {
            return;
        }
        let mut t = self.lock();
        if t.turn != Some(worker) {
            return;
        }
        Self::pick(&mut t);
        self.cv.notify_all();
        drop(self.cv.wait_while(t, |t| t.turn != Some(worker)).unwrap_or_else(|e| e.into_inner()));
    }

    fn leave(&self, worker: usize) {
        CURRENT.with(|c| c.set(None));
        let mut t = self.lock();
        t.active.remove(&worker);
        if t.turn == Some(worker) || t.turn.is_none() {
            Self::pick(&mut t);
        }
        self.cv.notify_all();
    }
}

#[must_use]
pub struct TurnGuard {
    sched: Arc<TurnScheduler>,
    worker: usize,
}

impl Drop for TurnGuard {
    fn drop(&mut self) {
        self.sched.leave(self.worker);
    }
}
