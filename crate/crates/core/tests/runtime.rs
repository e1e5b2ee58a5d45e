use std::sync::{Arc, Mutex};

use nvstack::error::Error;
use nvstack::pstack::{PersistentStack, Stack, StackStrategy};
use nvstack::region::{CrashPlan, Region, RegionOptions};
use nvstack::runtime::{split_big_args, Registry, Runtime, TaskSpec, TaskStatus, TurnScheduler};

const F: u64 = 1;
const G: u64 = 2;

fn region() -> Arc<Region> {
    Arc::new(Region::anonymous(1 << 22, RegionOptions::simulated()).unwrap())
}

type Log = Arc<Mutex<Vec<String>>>;

fn note(log: &Log, s: impl Into<String>) {
    log.lock().unwrap().push(s.into());
}

/// F calls G and adds one to its answer; G returns 42. Both recovers log
/// themselves. G crashes the region when `crash_in_g` is set.
fn f_g_registry(log: &Log, crash_in_g: bool, crash_in_g_recover: Arc<Mutex<bool>>) -> Registry {
    let mut reg = Registry::new();
    let l = log.clone();
    reg.register(
        F,
        |ctx, _| {
            let a = ctx.call(G, &[])?;
            assert_eq!(ctx.depth(), 2);
            Ok(a + 1)
        },
        move |ctx, _| {
            note(&l, "F.recover");
            match ctx.callee_answer()? {
                Some(a) => Ok(a + 1),
                None => Ok(ctx.call(G, &[])? + 1),
            }
        },
    )
    .unwrap();
    let l = log.clone();
    reg.register(
        G,
        move |ctx, _| {
            if crash_in_g {
                ctx.region().inject_crash();
                return Err(Error::Crashed);
            }
            Ok(42)
        },
        move |ctx, _| {
            note(&l, "G.recover");
            let mut once = crash_in_g_recover.lock().unwrap();
            if *once {
                *once = false;
                ctx.region().inject_crash();
                return Err(Error::Crashed);
            }
            Ok(42)
        },
    )
    .unwrap();
    reg
}

fn one_stack(r: &Arc<Region>, reg: Registry) -> Runtime {
    let rt = Runtime::new(r.clone(), reg).unwrap();
    rt.ensure_stacks(1, StackStrategy::default()).unwrap();
    rt
}

#[test]
fn nested_call_returns_answer_and_unwinds() {
    let r = region();
    let log = Log::default();
    let rt = one_stack(&r, f_g_registry(&log, false, Arc::new(Mutex::new(false))));
    let got = rt.with_context(0, |ctx| ctx.call(F, &[])).unwrap();
    assert_eq!(got, 43);
    assert_eq!(Stack::open(&r, 0).unwrap().depth(), 1);
}

#[test]
fn unregistered_function_is_a_dispatch_error() {
    let r = region();
    let rt = one_stack(&r, Registry::new());
    assert!(matches!(rt.with_context(0, |ctx| ctx.call(9, &[])), Err(Error::UnknownFunction(9))));
}

#[test]
fn crash_in_callee_recovers_callee_first() {
    let r = region();
    let log = Log::default();
    let rt = one_stack(&r, f_g_registry(&log, true, Arc::new(Mutex::new(false))));
    assert!(rt.with_context(0, |ctx| ctx.call(F, &[])).unwrap_err().is_crash());
    r.crash();
    let stats = rt.recover_all().unwrap();
    assert_eq!(*log.lock().unwrap(), ["G.recover", "F.recover"]);
    assert_eq!(stats.recovered, 2);
    assert_eq!(Stack::open(&r, 0).unwrap().depth(), 1);
}

#[test]
fn crash_in_callee_recover_reruns_callee_recover() {
    let r = region();
    let log = Log::default();
    let rt = one_stack(&r, f_g_registry(&log, true, Arc::new(Mutex::new(true))));
    let _ = rt.with_context(0, |ctx| ctx.call(F, &[]));
    r.crash();
    assert!(rt.recover_all().unwrap_err().is_crash());
    r.crash();
    rt.recover_all().unwrap();
    assert_eq!(*log.lock().unwrap(), ["G.recover", "G.recover", "F.recover"]);
}

#[test]
fn clean_image_recovers_nothing() {
    let r = region();
    let rt = one_stack(&r, Registry::new());
    rt.ensure_stacks(3, StackStrategy::default()).unwrap();
    let stats = rt.recover_all().unwrap();
    assert_eq!((stats.stacks, stats.recovered, stats.skipped), (3, 0, 0));
}

#[test]
fn two_stacks_recover_lifo_each() {
    let r = region();
    let log = Log::default();
    let mut reg = Registry::new();
    for id in [F, G] {
        let l = log.clone();
        reg.register(
            id,
            |_, _| Ok(0),
            move |ctx, args| {
                note(&l, format!("{}:{}", ctx.worker(), args[0]));
                Ok(0)
            },
        )
        .unwrap();
    }
    let rt = Runtime::new(r.clone(), reg).unwrap();
    rt.ensure_stacks(2, StackStrategy::default()).unwrap();
    for w in 0..2 {
        let mut s = Stack::open(&r, w).unwrap();
        s.push(F, &[1]).unwrap();
        s.push(G, &[2]).unwrap();
    }
    let stats = rt.recover_all().unwrap();
    assert_eq!(stats.recovered, 4);
    let log = log.lock().unwrap().clone();
    for w in 0..2 {
        let mine: Vec<_> = log.iter().filter(|e| e.starts_with(&format!("{w}:"))).cloned().collect();
        assert_eq!(mine, [format!("{w}:2"), format!("{w}:1")]);
        assert_eq!(Stack::open(&r, w).unwrap().depth(), 1);
    }
}

#[test]
fn crash_mid_recovery_resumes_with_remaining_frames() {
    let r = region();
    let log = Log::default();
    let mut reg = Registry::new();
    let l = log.clone();
    let armed = Mutex::new(true);
    reg.register(
        F,
        |_, _| Ok(0),
        move |ctx, args| {
            note(&l, args[0].to_string());
            if args[0] == 2 && std::mem::replace(&mut *armed.lock().unwrap(), false) {
                ctx.region().inject_crash();
                return Err(Error::Crashed);
            }
            Ok(0)
        },
    )
    .unwrap();
    let rt = one_stack(&r, reg);
    let mut s = Stack::open(&r, 0).unwrap();
    for i in 1..=3u8 {
        s.push(F, &[i]).unwrap();
    }
    assert!(rt.recover_all().unwrap_err().is_crash());
    r.crash();
    rt.recover_all().unwrap();
    // Frame 3 was popped before the crash; frame 2's recover was interrupted.
    assert_eq!(*log.lock().unwrap(), ["3", "2", "2", "1"]);
}

#[test]
fn big_answer_round_trip() {
    let r = region();
    let mut reg = Registry::new();
    reg.register(
        F,
        |ctx, args| {
            let (target, rest) = split_big_args(args)?;
            let answer: Vec<u8> = (0..64).map(|i| i as u8 ^ rest[0]).collect();
            ctx.write_big_answer(target, &answer)
        },
        |_, _| unreachable!(),
    )
    .unwrap();
    let rt = one_stack(&r, reg);
    let off = rt.with_context(0, |ctx| ctx.call_big(F, &[0x55], 64)).unwrap();
    let expected: Vec<u8> = (0..64).map(|i| i as u8 ^ 0x55).collect();
    assert_eq!(r.read_vec(off, 64).unwrap(), expected);
    assert!(matches!(rt.with_context(0, |ctx| ctx.call_big(F, &[], 0)), Err(Error::Config(_))));
}

#[test]
fn big_answer_reproduced_by_recover_after_crash() {
    // Nested under an outer frame, so the callee's answer slot lives in a caller.
    let produce = |ctx: &mut nvstack::runtime::CallContext<'_>, args: &[u8]| {
        let (target, _) = split_big_args(args)?;
        ctx.write_big_answer(target, &[0xAB; 64])
    };
    let build = || {
        let mut reg = Registry::new();
        reg.register(G, produce, produce).unwrap();
        reg.register(
            F,
            |ctx, _| ctx.call_big(G, &[], 64),
            |ctx, _| match ctx.callee_answer()? {
                Some(off) => Ok(off),
                None => ctx.call_big(G, &[], 64),
            },
        )
        .unwrap();
        reg
    };
    let total = {
        let r = region();
        let rt = one_stack(&r, build());
        r.arm(CrashPlan::NONE);
        rt.with_context(0, |ctx| ctx.call(F, &[])).unwrap();
        r.flush_count()
    };
    let mut crashed_in_callee = 0;
    for k in 1..total {
        let r = region();
        let rt = one_stack(&r, build());
        r.arm(CrashPlan::at_flush(k));
        assert!(rt.with_context(0, |ctx| ctx.call(F, &[])).unwrap_err().is_crash());
        r.crash();
        let frames = Stack::open(&r, 0).unwrap().frames().unwrap();
        if frames.len() == 3 {
            crashed_in_callee += 1;
            let (target, _) = split_big_args(&frames[2].args).unwrap();
            rt.recover_all().unwrap();
            assert_eq!(r.read_vec(target, 64).unwrap(), vec![0xAB; 64], "k={k}");
        } else {
            rt.recover_all().unwrap();
        }
    }
    assert!(crashed_in_callee >= 2);
}

fn counting_registry() -> Registry {
    let mut reg = Registry::new();
    reg.register(F, |_, args| Ok(args[0] as u64 * 2), |_, args| Ok(args[0] as u64 * 2)).unwrap();
    reg
}

#[test]
fn four_workers_finish_all_tasks() {
    let r = region();
    let mut rt = Runtime::new(r.clone(), counting_registry()).unwrap();
    rt.ensure_stacks(4, StackStrategy::default()).unwrap();
    let specs: Vec<_> = (0..100).map(|i| TaskSpec { task_id: i, function_id: F, args: vec![i as u8] }).collect();
    rt.create_tasks(&specs).unwrap();
    let stats = rt.run_normal(4).unwrap();
    assert_eq!(stats.executed, 100);
    for (i, d) in rt.tasks().unwrap().all().unwrap().into_iter().enumerate() {
        assert_eq!((d.status, d.answer), (TaskStatus::Done, Some(2 * i as u64)));
    }
}

#[test]
fn zero_workers_make_no_progress() {
    let r = region();
    let mut rt = Runtime::new(r.clone(), counting_registry()).unwrap();
    rt.create_tasks(&[TaskSpec { task_id: 1, function_id: F, args: vec![1] }]).unwrap();
    assert_eq!(rt.run_normal(0).unwrap().executed, 0);
    assert_eq!(rt.tasks().unwrap().pending().unwrap(), vec![0]);
}

#[test]
fn duplicate_task_ids_rejected() {
    let r = region();
    let mut rt = Runtime::new(r.clone(), counting_registry()).unwrap();
    let t = TaskSpec { task_id: 1, function_id: F, args: vec![1] };
    assert!(matches!(rt.create_tasks(&[t.clone(), t]), Err(Error::DuplicateTask(1))));
}

#[test]
fn tasks_finish_exactly_once_under_random_crashes() {
    for seed in 0..10 {
        let r = region();
        let mut rt = Runtime::new(r.clone(), counting_registry()).unwrap().with_scheduler(TurnScheduler::new(seed));
        rt.ensure_stacks(3, StackStrategy::default()).unwrap();
        let specs: Vec<_> = (0..40).map(|i| TaskSpec { task_id: i, function_id: F, args: vec![i as u8] }).collect();
        rt.create_tasks(&specs).unwrap();
        r.arm(CrashPlan::random(seed, 0.05));
        let mut crashes = 0;
        loop {
            match rt.recover_all().and_then(|_| rt.run_normal(3)) {
                Ok(_) => break,
                Err(e) if e.is_crash() => {
                    crashes += 1;
                    r.crash();
                }
                Err(e) => panic!("{e}"),
            }
        }
        assert!(crashes > 0);
        r.arm(CrashPlan::NONE);
        for (i, d) in rt.tasks().unwrap().all().unwrap().into_iter().enumerate() {
            assert_eq!((d.status, d.answer), (TaskStatus::Done, Some(2 * i as u64)), "seed {seed}");
        }
    }
}
