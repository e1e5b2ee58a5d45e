use std::collections::BTreeSet;
use std::sync::{Arc, Mutex};

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nvstack::harness::{
    oracle_verify, replay_witness, run_experiment, verify, CasOp, CrashSpec, ExecutionLog, ExperimentConfig, OpResult,
    ValueRange,
};
use nvstack::pstack::{PersistentStack, Stack, StackStrategy};
use nvstack::rcas::{encode_note, Variant, Word};
use nvstack::region::{CrashPlan, Region, RegionOptions, TornOrder};
use nvstack::runtime::{Registry, Runtime, TaskSpec, TaskStatus, TurnScheduler};

fn sim(size: u64) -> Arc<Region> {
    Arc::new(Region::anonymous(size, RegionOptions::simulated()).unwrap())
}

// ---------------------------------------------------------------- region

#[derive(Debug, Clone)]
enum RegionOp {
    Write(u64, Vec<u8>),
    Flush(u64, u64),
}

fn region_ops() -> impl Strategy<Value = Vec<RegionOp>> {
    let op = prop_oneof![
        (0u64..4000, prop::collection::vec(any::<u8>(), 1..200)).prop_map(|(o, d)| RegionOp::Write(o, d)),
        (0u64..4000, 1u64..600).prop_map(|(o, l)| RegionOp::Flush(o, l)),
    ];
    prop::collection::vec(op, 1..40)
}

/// Applies `ops` inside the heap of `r`, stopping at the first error.
fn apply_region_ops(r: &Region, base: u64, ops: &[RegionOp]) -> nvstack::Result<()> {
    for op in ops {
        match op {
            RegionOp::Write(o, d) => r.write_bytes(base + o, d)?,
            RegionOp::Flush(o, l) => r.flush(base + o, *l)?,
        }
    }
    Ok(())
}

const REGION_SIZE: u64 = 64 * 1024;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn offsets_survive_detach_and_attach(values in prop::collection::vec((0u64..3000, any::<u64>()), 1..20)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img");
        let expected: Vec<(u64, u64)> = {
            let r = Region::create(&path, REGION_SIZE, RegionOptions::direct()).unwrap();
            let block = r.allocate(4096).unwrap();
            r.set_rcas_root(block).unwrap();
            for (slot, v) in &values {
                r.write_u64(block + 8 * (slot % 500), *v).unwrap();
            }
            r.flush(block, 4096).unwrap();
            r.sync().unwrap();
            (0..500).map(|i| (block + 8 * i, r.read_u64(block + 8 * i).unwrap())).collect()
        };
        let r = Region::attach(&path, nvstack::region::CacheMode::Direct).unwrap();
        prop_assert_eq!(r.rcas_root().unwrap(), expected[0].0);
        for (off, v) in expected {
            prop_assert_eq!(r.read_u64(off).unwrap(), v);
        }
    }

    #[test]
    fn single_byte_is_old_or_new_after_any_crash(
        at in 0u64..2000,
        old in any::<u8>(),
        new in any::<u8>(),
        span in 1u64..400,
        k in 1u64..12,
        seed in any::<u64>(),
        subset in any::<bool>(),
    ) {
        let r = sim(REGION_SIZE);
        let base = r.allocate(4096).unwrap();
        r.write_u8(base + at, old).unwrap();
        r.flush(base + at, 1).unwrap();
        let ordering = if subset { TornOrder::RandomSubset(seed) } else { TornOrder::InOrderPrefix };
        r.arm(CrashPlan::at_flush(k).with_ordering(ordering));
        r.write_u8(base + at, new).unwrap();
        let start = (base + at).saturating_sub(span / 2);
        let _ = r.flush(start, span);
        r.crash();
        let got = r.read_u8(base + at).unwrap();
        prop_assert!(got == old || got == new, "byte became {got}, old {old}, new {new}");
    }

    #[test]
    fn simulated_and_direct_agree_without_crashes(ops in region_ops()) {
        let a = sim(REGION_SIZE);
        let b = Arc::new(Region::anonymous(REGION_SIZE, RegionOptions::direct()).unwrap());
        let (ba, bb) = (a.allocate(8192).unwrap(), b.allocate(8192).unwrap());
        prop_assert_eq!(ba, bb);
        for op in &ops {
            apply_region_ops(&a, ba, std::slice::from_ref(op)).unwrap();
            apply_region_ops(&b, bb, std::slice::from_ref(op)).unwrap();
            prop_assert_eq!(a.read_vec(ba, 8192).unwrap(), b.read_vec(bb, 8192).unwrap());
        }
        a.flush(ba, 8192).unwrap();
        prop_assert_eq!(a.image_snapshot(), b.image_snapshot());
    }

    #[test]
    fn crash_at_k_leaves_the_image_of_flush_k(ops in region_ops(), k in 1u64..30) {
        let reference = sim(REGION_SIZE);
        let base = reference.allocate(8192).unwrap();
        let captured: Arc<Mutex<Option<Vec<u8>>>> = Arc::default();
        {
            let (captured, r) = (captured.clone(), Arc::downgrade(&reference));
            reference.set_flush_hook(Some(Arc::new(move |count| {
                if count == k {
                    *captured.lock().unwrap() = Some(r.upgrade().unwrap().image_snapshot());
                }
            })));
        }
        reference.arm(CrashPlan::NONE);
        apply_region_ops(&reference, base, &ops).unwrap();
        reference.set_flush_hook(None);
        let Some(expected) = captured.lock().unwrap().take() else {
            // Fewer than k flushes: nothing to compare.
            return Ok(());
        };

        let r = sim(REGION_SIZE);
        prop_assert_eq!(r.allocate(8192).unwrap(), base);
        r.arm(CrashPlan::at_flush(k));
        prop_assert!(apply_region_ops(&r, base, &ops).is_err());
        r.crash();
        prop_assert!(r.image_snapshot() == expected, "image after crash differs from the image at flush {}", k);
    }
}

// ---------------------------------------------------------------- stacks

#[derive(Debug, Clone)]
enum StackOp {
    Push(u64, Vec<u8>),
    Pop,
    Answer(u64),
    Reset,
}

type View = Vec<(u64, Vec<u8>, Option<u64>)>;

fn stack_ops(max_args: usize, len: usize) -> impl Strategy<Value = Vec<StackOp>> {
    let op = prop_oneof![
        4 => (1u64..1 << 40, prop::collection::vec(any::<u8>(), 0..max_args)).prop_map(|(id, a)| StackOp::Push(id, a)),
        3 => Just(StackOp::Pop),
        1 => any::<u64>().prop_map(StackOp::Answer),
        1 => Just(StackOp::Reset),
    ];
    prop::collection::vec(op, 1..len)
}

fn strategies() -> [StackStrategy; 3] {
    [
        StackStrategy::Bounded { capacity: 64 * 1024 },
        StackStrategy::Array { initial_capacity: 64 },
        StackStrategy::BlockList { block_size: 128 },
    ]
}

/// The expected stack after `op`, or `None` when `op` does not apply.
fn model_step(model: &View, op: &StackOp) -> Option<View> {
    let mut next = model.clone();
    match op {
        StackOp::Push(id, args) => next.push((*id, args.clone(), None)),
        StackOp::Pop if next.len() >= 2 => {
            next.pop();
        }
        StackOp::Answer(v) if next.len() >= 3 => {
            let i = next.len() - 2;
            next[i].2 = Some(*v);
        }
        StackOp::Reset => next.last_mut().unwrap().2 = None,
        _ => return None,
    }
    Some(next)
}

fn apply(stack: &mut Stack, op: &StackOp) -> nvstack::Result<()> {
    match op {
        StackOp::Push(id, args) => stack.push(*id, args),
        StackOp::Pop => stack.pop(),
        StackOp::Answer(v) => stack.write_answer(*v),
        StackOp::Reset => stack.reset_answer(),
    }
}

fn view(stack: &Stack) -> View {
    stack.frames().unwrap().into_iter().map(|f| (f.function_id, f.args.clone(), f.answer())).collect()
}

fn reparse(r: &Arc<Region>) -> View {
    view(&Stack::open(r, 0).unwrap())
}

fn dummy_model() -> View {
    vec![(0, Vec::new(), None)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn strategies_agree_after_every_operation(ops in stack_ops(300, 80)) {
        let regions: Vec<_> = strategies().iter().map(|_| sim(1 << 20)).collect();
        let mut stacks: Vec<Stack> = strategies().iter().zip(&regions).map(|(s, r)| Stack::create(r, *s).unwrap()).collect();
        let mut model = dummy_model();
        for op in &ops {
            let Some(next) = model_step(&model, op) else { continue };
            for (stack, r) in stacks.iter_mut().zip(&regions) {
                apply(stack, op).unwrap();
                prop_assert_eq!(&view(stack), &next);
                prop_assert_eq!(&reparse(r), &next);
            }
            model = next;
        }
    }

    #[test]
    fn a_crash_during_any_operation_leaves_before_or_after(
        ops in stack_ops(200, 40),
        pick in any::<prop::sample::Index>(),
        k in 1u64..40,
        which in 0usize..3,
    ) {
        let strategy = strategies()[which];
        let r = sim(1 << 20);
        let mut stack = Stack::create(&r, strategy).unwrap();
        let applicable: Vec<&StackOp> = {
            let mut model = dummy_model();
            ops.iter().filter(|op| model_step(&model, op).map(|m| model = m).is_some()).collect()
        };
        if applicable.is_empty() {
            return Ok(());
        }
        let victim = pick.index(applicable.len());
        let mut model = dummy_model();
        for op in &applicable[..victim] {
            apply(&mut stack, op).unwrap();
            model = model_step(&model, op).unwrap();
        }
        let after = model_step(&model, applicable[victim]).unwrap();
        r.arm(CrashPlan::at_flush(k));
        let res = apply(&mut stack, applicable[victim]);
        r.crash();
        let got = reparse(&r);
        if res.is_ok() {
            prop_assert_eq!(got, after);
        } else {
            prop_assert!(got == model || got == after, "crash at flush {} left {:?}", k, got);
        }
    }

    #[test]
    fn pop_undoes_push(
        prefix in stack_ops(100, 20),
        id in 1u64..u64::MAX,
        args in prop::collection::vec(any::<u8>(), 0..500),
        which in 0usize..3,
    ) {
        let r = sim(1 << 20);
        let mut stack = Stack::create(&r, strategies()[which]).unwrap();
        let mut model = dummy_model();
        for op in &prefix {
            if let Some(next) = model_step(&model, op) {
                apply(&mut stack, op).unwrap();
                model = next;
            }
        }
        let before = reparse(&r);
        stack.push(id, &args).unwrap();
        stack.pop().unwrap();
        prop_assert_eq!(reparse(&r), before);
    }

    #[test]
    fn long_frames_are_never_half_visible(len in 100usize..2000, k in 1u64..50, subset_seed in any::<Option<u64>>()) {
        let r = sim(1 << 20);
        let mut stack = Stack::create(&r, StackStrategy::Bounded { capacity: 8192 }).unwrap();
        stack.push(7, &[1, 2, 3]).unwrap();
        let before = reparse(&r);
        let ordering = subset_seed.map_or(TornOrder::InOrderPrefix, TornOrder::RandomSubset);
        r.arm(CrashPlan::at_flush(k).with_ordering(ordering));
        let args: Vec<u8> = (0..len).map(|i| (i % 251) as u8).collect();
        let res = stack.push(9, &args);
        r.crash();
        let got = reparse(&r);
        let mut after = before.clone();
        after.push((9, args, None));
        if res.is_ok() {
            prop_assert_eq!(got, after);
        } else {
            prop_assert!(got == before || got == after);
        }
    }
}

// ---------------------------------------------------------------- runtime

const F: u64 = 1;
const CELLS: u64 = 64;

fn level_args(stack: u32, level: u32) -> Vec<u8> {
    [stack.to_le_bytes(), level.to_le_bytes()].concat()
}

fn parse_level_args(a: &[u8]) -> (u32, u32) {
    (u32::from_le_bytes(a[..4].try_into().unwrap()), u32::from_le_bytes(a[4..8].try_into().unwrap()))
}

type Calls = Arc<Mutex<Vec<(u32, u32)>>>;

/// F's recover logs `(stack, level)` and folds the level into the stack's
/// persistent cell at `cells + 8 * stack`.
fn logging_registry(calls: &Calls, cells: u64) -> Registry {
    let mut reg = Registry::new();
    let calls = calls.clone();
    reg.register(
        F,
        |_, _| Ok(0),
        move |ctx, args| {
            let (s, level) = parse_level_args(args);
            calls.lock().unwrap().push((s, level));
            let at = cells + 8 * s as u64;
            let r = ctx.region();
            let v = r.read_u64(at)?.wrapping_mul(31).wrapping_add(level as u64 + 1);
            r.write_u64(at, v)?;
            r.flush(at, 8)?;
            Ok(level as u64)
        },
    )
    .unwrap();
    reg
}

/// A region with one stack per entry of `depths`, each holding that many F
/// frames above the dummy, and a zeroed cell area. Returns the cell area.
fn stacked_region(depths: &[u32], answered: &[bool]) -> (Arc<Region>, u64) {
    let r = sim(1 << 21);
    let cells = r.allocate(8 * CELLS).unwrap();
    r.write_bytes(cells, &vec![0; 8 * CELLS as usize]).unwrap();
    r.flush(cells, 8 * CELLS).unwrap();
    for (s, (&d, &ans)) in depths.iter().zip(answered).enumerate() {
        let mut stack = Stack::create(&r, StackStrategy::default()).unwrap();
        for level in 1..=d {
            stack.push(F, &level_args(s as u32, level)).unwrap();
        }
        if ans && stack.depth() >= 3 {
            stack.write_answer(99).unwrap();
        }
    }
    (r, cells)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn recovery_runs_each_stack_top_down(
        shape in prop::collection::vec((0u32..8, any::<bool>()), 1..5),
    ) {
        let depths: Vec<u32> = shape.iter().map(|s| s.0).collect();
        let answered: Vec<bool> = shape.iter().map(|s| s.1).collect();
        let (r, cells) = stacked_region(&depths, &answered);
        let calls = Calls::default();
        let rt = Runtime::new(r.clone(), logging_registry(&calls, cells)).unwrap();
        let stats = rt.recover_all().unwrap();
        let calls = calls.lock().unwrap().clone();
        for (s, (&d, &ans)) in depths.iter().zip(&answered).enumerate() {
            let mine: Vec<u32> = calls.iter().filter(|c| c.0 == s as u32).map(|c| c.1).collect();
            // A top frame whose answer already reached its caller is popped unrecovered.
            let top = if ans && d >= 2 { d - 1 } else { d };
            let expected: Vec<u32> = (1..=top).rev().collect();
            prop_assert_eq!(mine, expected);
            prop_assert_eq!(Stack::open(&r, s).unwrap().depth(), 1);
        }
        prop_assert_eq!(stats.recovered + stats.skipped, depths.iter().sum::<u32>() as usize);
    }

    #[test]
    fn repeated_crashes_during_recovery_still_converge(
        depth in 1u32..10,
        points in prop::collection::vec(1u64..10, 1..6),
    ) {
        let (r, cells) = stacked_region(&[depth], &[false]);
        let calls = Calls::default();
        let rt = Runtime::new(r.clone(), logging_registry(&calls, cells)).unwrap();
        let mut crashes = 0;
        for k in points.iter().copied().chain(std::iter::once(0)) {
            let live: BTreeSet<u32> = Stack::open(&r, 0).unwrap().frames().unwrap()[1..]
                .iter()
                .map(|f| parse_level_args(&f.args).1)
                .collect();
            calls.lock().unwrap().clear();
            r.arm(if k == 0 { CrashPlan::NONE } else { CrashPlan::at_flush(k) });
            let res = rt.recover_all();
            for (_, level) in calls.lock().unwrap().iter() {
                prop_assert!(live.contains(level), "recover ran for popped frame {}", level);
            }
            match res {
                Ok(_) => break,
                Err(e) => {
                    prop_assert!(e.is_crash(), "{e}");
                    crashes += 1;
                    r.crash();
                }
            }
        }
        prop_assert!(crashes <= points.len());
        prop_assert_eq!(Stack::open(&r, 0).unwrap().depth(), 1);
    }

    #[test]
    fn parallel_recovery_does_not_depend_on_interleaving(
        depths in prop::collection::vec(0u32..6, 2..5),
        seeds in (any::<u64>(), any::<u64>()),
    ) {
        let answered = vec![false; depths.len()];
        let (template, cells) = stacked_region(&depths, &answered);
        let image = template.image_snapshot();
        let mut images = Vec::new();
        for seed in [seeds.0, seeds.1] {
            let r = Arc::new(Region::from_image(&image, nvstack::region::CacheMode::Simulated).unwrap());
            let calls = Calls::default();
            let rt = Runtime::new(r.clone(), logging_registry(&calls, cells)).unwrap()
                .with_scheduler(TurnScheduler::new(seed));
            rt.recover_all().unwrap();
            r.set_flush_hook(None);
            images.push(r.image_snapshot());
        }
        prop_assert!(images[0] == images[1]);
    }

    #[test]
    fn every_task_completes_exactly_once_in_the_table(
        n in 1usize..40,
        workers in 1usize..4,
        seed in any::<u64>(),
        p in 0.0f64..0.1,
    ) {
        const DOUBLE: u64 = 3;
        let r = sim(1 << 21);
        let cells = r.allocate(8 * 64).unwrap();
        r.write_bytes(cells, &[0; 8 * 64]).unwrap();
        r.flush(cells, 8 * 64).unwrap();
        let mut reg = Registry::new();
        let body = move |ctx: &mut nvstack::runtime::CallContext<'_>, a: &[u8]| {
            let v = u64::from_le_bytes(a[..8].try_into().unwrap());
            let at = cells + 8 * v;
            ctx.region().write_u64(at, ctx.region().read_u64(at)? + 1)?;
            ctx.region().flush(at, 8)?;
            Ok(2 * v)
        };
        reg.register(DOUBLE, body, body).unwrap();
        let mut rt = Runtime::new(r.clone(), reg).unwrap();
        let specs: Vec<TaskSpec> = (0..n as u64)
            .map(|i| TaskSpec { task_id: 100 + i, function_id: DOUBLE, args: i.to_le_bytes().to_vec() })
            .collect();
        rt.create_tasks(&specs).unwrap();
        rt.ensure_stacks(workers, StackStrategy::default()).unwrap();
        let rt = rt.with_scheduler(TurnScheduler::new(seed));
        r.arm(CrashPlan::random(seed, p));
        let mut cycles = 0;
        loop {
            cycles += 1;
            prop_assert!(cycles < 10_000);
            match rt.recover_all().and_then(|_| rt.run_normal(workers)) {
                Ok(_) => break,
                Err(e) => {
                    prop_assert!(e.is_crash(), "{e}");
                    r.crash();
                }
            }
        }
        r.arm(CrashPlan::NONE);
        let tasks = rt.tasks().unwrap();
        prop_assert_eq!(tasks.done_count().unwrap(), n);
        for (i, t) in tasks.all().unwrap().into_iter().enumerate() {
            prop_assert_eq!(t.status, TaskStatus::Done);
            prop_assert_eq!(t.answer, Some(2 * i as u64));
            // The leaf body is not idempotent, so a crash may re-run it; but it ran at least once.
            prop_assert!(r.read_u64(cells + 8 * i as u64).unwrap() >= 1);
        }
    }
}

// ---------------------------------------------------------------- register and checker

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn word_packing_round_trips(value in any::<i32>(), owner in any::<u8>(), seq in 0u32..1 << 24) {
        let w = Word { value, owner, seq };
        prop_assert_eq!(Word::unpack(w.pack()), w);
        let note = encode_note(value, seq);
        prop_assert!(note >> 63 == 1);
        prop_assert_eq!(note as u32 as i32, value);
    }

    #[test]
    fn verifier_matches_the_oracle(log in small_logs()) {
        let v = verify(&log).unwrap();
        prop_assert_eq!(v.serializable, oracle_verify(&log).unwrap());
        if v.serializable {
            prop_assert!(replay_witness(&log, &v.witness));
        }
        // Same log, same verdict.
        prop_assert_eq!(verify(&log).unwrap(), v);
    }
}

/// Logs over a tiny value domain, so repeated values are common. Half of
/// them come from an actual sequential execution, the rest are arbitrary.
fn small_logs() -> impl Strategy<Value = ExecutionLog> {
    (any::<u64>(), 0usize..=8, 0usize..6, any::<bool>()).prop_map(|(seed, successes, failures, honest)| {
        random_log(&mut ChaCha8Rng::seed_from_u64(seed), successes, failures, honest)
    })
}

fn random_log(rng: &mut impl Rng, successes: usize, failures: usize, honest: bool) -> ExecutionLog {
    let init = rng.gen_range(0..4);
    let mut ops = Vec::new();
    let mut cur = init;
    let (mut s, mut f) = (successes, failures);
    while s + f > 0 {
        let succeed = f == 0 || (s > 0 && rng.gen_bool(0.5));
        let (old, result) = if succeed {
            s -= 1;
            let old = if honest { cur } else { rng.gen_range(0..4) };
            (old, OpResult::Success)
        } else {
            f -= 1;
            let old = if honest { (cur + rng.gen_range(1..4)) % 4 } else { rng.gen_range(0..4) };
            (old, OpResult::Fail)
        };
        let new = rng.gen_range(0..4);
        if succeed {
            cur = new;
        }
        ops.push(CasOp { op_id: ops.len() as u64, thread: rng.gen_range(0..3), old, new, result });
    }
    if honest {
        // Hide the execution order from the checker.
        for i in (1..ops.len()).rev() {
            ops.swap(i, rng.gen_range(0..=i));
        }
        for (i, op) in ops.iter_mut().enumerate() {
            op.op_id = i as u64;
        }
    } else {
        cur = rng.gen_range(0..4);
    }
    ExecutionLog { init, ops, final_value: cur }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn correct_register_runs_are_serializable(
        seed in any::<u64>(),
        threads in 1usize..5,
        p in 0.0f64..0.2,
        wide in any::<bool>(),
    ) {
        let cfg = ExperimentConfig {
            threads,
            ops: 120,
            seed,
            range: if wide { ValueRange::Wide } else { ValueRange::Narrow },
            crash: CrashSpec::Random(p),
            variant: Variant::Correct,
            ..Default::default()
        };
        let report = run_experiment(&cfg).unwrap();
        prop_assert!(report.log.ops.iter().all(|o| o.result != OpResult::Unknown));
        let v = verify(&report.log).unwrap();
        prop_assert!(v.serializable, "{:?}", v.reason);
    }
}
