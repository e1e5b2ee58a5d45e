use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::app;
use super::log::ExecutionLog;
use super::verify::verify;
use super::workload::{generate_workload, ValueRange, Workload};
use crate::error::{Error, Result};
use crate::pstack::{PersistentStack, Stack, StackStrategy};
use crate::rcas::{seq_for, Variant};
use crate::region::{CacheMode, CrashPlan, Region, RegionOptions};
use crate::runtime::{Runtime, TaskStatus, TurnScheduler, TASK_ENTRY};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CrashSpec {
    None,
    /// One simulated crash at the k-th line flush of the run.
    AtFlush(u64),
    /// A simulated crash after each flush with this probability.
    Random(f64),
    /// Real worker processes killed at random moments, at least `min_kills` times.
    Kill {
        min_kills: usize,
    },
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub threads: usize,
    pub ops: usize,
    pub range: ValueRange,
    pub seed: u64,
    pub crash: CrashSpec,
    pub variant: Variant,
    pub strategy: StackStrategy,
    /// Backing file; an anonymous mapping (or a temporary file, in kill mode) when absent.
    pub image: Option<PathBuf>,
    /// Give up after this many crash cycles.
    pub max_cycles: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            threads: 4,
            ops: 1000,
            range: ValueRange::Narrow,
            seed: 0,
            crash: CrashSpec::None,
            variant: Variant::Correct,
            strategy: StackStrategy::default(),
            image: None,
            max_cycles: 100_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub log: ExecutionLog,
    /// Crashes (or kills) that interrupted normal or recovery mode.
    pub crashes: usize,
    /// Recover functions run across all recovery passes.
    pub recovered_frames: usize,
    /// Line flushes in the last (uninterrupted) cycle, in simulated runs.
    pub flushes: u64,
}

fn new_region(cfg: &ExperimentConfig, size: u64, opts: RegionOptions) -> Result<Arc<Region>> {
    Ok(Arc::new(match &cfg.image {
        Some(path) => Region::create(path, size, opts)?,
        None => Region::anonymous(size, opts)?,
    }))
}

fn check_stacks_clean(region: &Region) -> Result<()> {
    let region = Arc::new(Region::from_image(&region.image_snapshot(), CacheMode::Simulated)?);
    for i in 0..region.n_stacks()? {
        let depth = Stack::open(&region, i)?.depth();
        if depth != 1 {
            return Err(Error::Recovery(format!("stack {i} still holds {} frames after recovery", depth - 1)));
        }
    }
    Ok(())
}

/// Alternates recovery and normal mode until every task is done, restarting
/// after each simulated crash.
fn drive(rt: &Runtime, threads: usize, max_cycles: usize) -> Result<(usize, usize)> {
    let region = rt.region();
    let (mut crashes, mut recovered) = (0, 0);
    loop {
        let pass = rt.recover_all().and_then(|stats| {
            recovered += stats.recovered;
            check_stacks_clean(region)?;
            rt.run_normal(threads)
        });
        match pass {
            Ok(_) => {
                if !rt.tasks()?.pending()?.is_empty() {
                    return Err(Error::App("normal mode ended with pending tasks".into()));
                }
                return Ok((crashes, recovered));
            }
            Err(e) if e.is_crash() => {
                crashes += 1;
                if crashes > max_cycles {
                    return Err(Error::App(format!("no completion after {max_cycles} crashes")));
                }
                region.crash();
            }
            Err(e) => return Err(e),
        }
    }
}

fn finish(rt: &Runtime, crashes: usize, recovered: usize) -> Result<ExperimentReport> {
    let flushes = rt.region().flush_count();
    rt.region().arm(CrashPlan::NONE);
    let (rt2, reg) = app::attach(rt.region())?;
    let log = app::collect_log(&rt2, &reg)?;
    log.validate()?;
    Ok(ExperimentReport { log, crashes, recovered_frames: recovered, flushes })
}

/// Runs the experiment in this process with a simulated cache. Crash points
/// are line-flush indices counted from the end of setup.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let plan = match cfg.crash {
        CrashSpec::None => CrashPlan::NONE,
        CrashSpec::AtFlush(k) => CrashPlan::at_flush(k),
        CrashSpec::Random(p) => CrashPlan::random(cfg.seed, p),
        CrashSpec::Kill { .. } => return Err(Error::Config("kill mode needs a worker executable".into())),
    };
    if cfg.threads == 0 {
        return Err(Error::Config("at least one worker is needed".into()));
    }
    let workload = generate_workload(cfg.seed, cfg.ops, cfg.range);
    let size = app::region_size_for(cfg.threads, cfg.ops, cfg.strategy);
    let region = new_region(cfg, size, RegionOptions::simulated())?;
    let rt = app::setup(&region, cfg.threads, &workload, cfg.variant, cfg.strategy)?
        .with_scheduler(TurnScheduler::new(cfg.seed));
    region.arm(plan);
    let (crashes, recovered) = drive(&rt, cfg.threads, cfg.max_cycles)?;
    finish(&rt, crashes, recovered)
}

/// Two workers, init 5. Worker 0 installs 7 with op 0 but crashes before its
/// answer is recorded; meanwhile worker 1's op 1 replaces 7 by 9. Recovery
/// must still report op 0 as a success.
pub fn scripted_overwrite_then_crash(variant: Variant) -> Result<ExperimentReport> {
    let workload = Workload {
        init: 5,
        ops: vec![
            super::log::CasOp { op_id: 0, thread: 0, old: 5, new: 7, result: super::log::OpResult::Unknown },
            super::log::CasOp { op_id: 1, thread: 1, old: 7, new: 9, result: super::log::OpResult::Unknown },
        ],
    };
    let region =
        Arc::new(Region::anonymous(app::region_size_for(2, 2, StackStrategy::default()), RegionOptions::simulated())?);
    let rt = app::setup(&region, 2, &workload, variant, StackStrategy::default())?;
    let reg = crate::rcas::RcasRegister::attach(&region)?;
    // Worker 0: the three frames of op 0, then the register CAS itself.
    let mut s0 = Stack::open(&region, 0)?;
    s0.push(TASK_ENTRY, &0u64.to_le_bytes())?;
    s0.push(app::CAS_TASK, &app::task_args(0, 5, 7))?;
    s0.push(app::RCAS_CAS, &app::rcas_args(1, seq_for(0), 5, 7))?;
    if !reg.cas(1, seq_for(0), 5, 7)? {
        return Err(Error::App("scripted CAS(5, 7) failed".into()));
    }
    // Worker 1 runs op 1 to completion.
    rt.with_context(1, |ctx| ctx.call(TASK_ENTRY, &1u64.to_le_bytes()))?;
    region.inject_crash();
    region.crash();
    let (crashes, recovered) = drive(&rt, 2, 1)?;
    finish(&rt, crashes + 1, recovered)
}

#[derive(Debug, Clone, Default)]
pub struct EnumerationReport {
    /// Flushes in the crash-free run.
    pub total_flushes: u64,
    pub points: u64,
    pub passed: u64,
    /// Crash point and what went wrong.
    pub failures: Vec<(u64, String)>,
}

/// Crashes a single-worker run at every flush index up to `max_flush` and
/// checks that each run recovers and yields a serializable log.
pub fn enumerate(ops: usize, max_flush: u64, seed: u64, variant: Variant) -> Result<EnumerationReport> {
    let base = ExperimentConfig { threads: 1, ops, seed, variant, ..Default::default() };
    let clean = run_experiment(&base)?;
    let total = clean.flushes;
    let mut report = EnumerationReport { total_flushes: total, ..Default::default() };
    for k in 1..=total.min(max_flush) {
        report.points += 1;
        let cfg = ExperimentConfig { crash: CrashSpec::AtFlush(k), ..base.clone() };
        let outcome = run_experiment(&cfg).and_then(|r| {
            if r.crashes != 1 {
                return Err(Error::App(format!("{} crashes instead of one", r.crashes)));
            }
            let v = verify(&r.log)?;
            if v.serializable {
                Ok(())
            } else {
                Err(Error::App(format!("log not serializable ({})", v.reason.unwrap())))
            }
        });
        match outcome {
            Ok(()) => report.passed += 1,
            Err(e) => report.failures.push((k, e.to_string())),
        }
    }
    Ok(report)
}

/// Body of a worker process in kill mode: recover whatever the last process
/// left behind, then work until every task is done.
pub fn worker_main(image: &Path) -> Result<()> {
    lower_priority();
    let region = Arc::new(Region::attach(image, CacheMode::Direct)?);
    let (rt, reg) = app::attach(&region)?;
    let stats = rt.recover_all()?;
    println!("recovered {}", stats.recovered);
    rt.run_normal(reg.processes())?;
    region.sync()
}

static IMAGE_COUNTER: AtomicU64 = AtomicU64::new(0);

fn temp_image(seed: u64) -> PathBuf {
    let n = IMAGE_COUNTER.fetch_add(1, Ordering::Relaxed);
    std::env::temp_dir().join(format!("nvstack-{}-{seed}-{n}.img", std::process::id()))
}

/// Kill mode: this process prepares a file-backed image and supervises
/// worker processes (`<worker_exe> worker --image <path>`), killing each one
/// after a random amount of progress until `min_kills` kills have happened,
/// then lets the last one finish.
pub fn run_kill_experiment(cfg: &ExperimentConfig, worker_exe: &Path) -> Result<ExperimentReport> {
    let CrashSpec::Kill { min_kills } = cfg.crash else {
        return Err(Error::Config("kill experiment without a kill crash mode".into()));
    };
    let (path, temporary) = match &cfg.image {
        Some(p) => (p.clone(), false),
        None => (temp_image(cfg.seed), true),
    };
    let result = supervise(cfg, &path, worker_exe, min_kills);
    if temporary {
        let _ = std::fs::remove_file(&path);
    }
    result
}

fn supervise(cfg: &ExperimentConfig, path: &Path, worker_exe: &Path, min_kills: usize) -> Result<ExperimentReport> {
    let workload = generate_workload(cfg.seed, cfg.ops, cfg.range);
    let size = app::region_size_for(cfg.threads, cfg.ops, cfg.strategy);
    let region = Arc::new(Region::create(path, size, RegionOptions::direct())?);
    let rt = app::setup(&region, cfg.threads, &workload, cfg.variant, cfg.strategy)?;
    region.sync()?;
    let tasks = rt.tasks()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6b69_6c6c);
    let (mut kills, mut recovered) = (0, 0);
    loop {
        let mut command = Command::new(worker_exe);
        command.arg("worker").arg("--image").arg(path).stdin(Stdio::null()).stdout(Stdio::piped());
        lower_child_priority(&mut command);
        let mut child = command.spawn()?;
        let pending = tasks.pending()?;
        if kills >= min_kills || pending.is_empty() {
            let status = child.wait()?;
            recovered += recovered_by(&mut child);
            if !status.success() {
                return Err(Error::App(format!("worker process failed: {status}")));
            }
            break;
        }
        // Spread the remaining kills over the remaining work: kill as soon as
        // a randomly chosen pending task within the next share is done. The
        // queue hands out slots in order, so this is a random amount of
        // progress. Drawing zero kills the worker during startup or recovery.
        let left = min_kills - kills;
        let quota = (pending.len() / (2 * (left + 1))).max(1);
        let pick = rng.gen_range(0..quota);
        let watched = if pick == 0 { None } else { Some(pending[pick]) };
        let deadline = Instant::now() + Duration::from_secs(120);
        loop {
            if let Some(status) = child.try_wait()? {
                recovered += recovered_by(&mut child);
                if !status.success() {
                    return Err(Error::App(format!("worker process failed: {status}")));
                }
                break;
            }
            let reached = match watched {
                None => true,
                Some(slot) => tasks.status(slot)? == TaskStatus::Done,
            };
            if reached {
                let _ = child.kill();
                let status = child.wait()?;
                recovered += recovered_by(&mut child);
                if killed_by_signal(&status) {
                    kills += 1;
                } else if !status.success() {
                    return Err(Error::App(format!("worker process failed: {status}")));
                }
                break;
            }
            if Instant::now() > deadline {
                let _ = child.kill();
                return Err(Error::App("worker made no progress for two minutes".into()));
            }
            std::thread::sleep(Duration::from_micros(20));
        }
    }
    if kills < min_kills {
        return Err(Error::App(format!("run completed after only {kills} of {min_kills} kills")));
    }
    let (rt2, reg) = app::attach(&region)?;
    let log = app::collect_log(&rt2, &reg)?;
    log.validate()?;
    Ok(ExperimentReport { log, crashes: kills, recovered_frames: recovered, flushes: 0 })
}

/// Recover calls a finished worker reported on its standard output.
fn recovered_by(child: &mut std::process::Child) -> usize {
    let mut out = String::new();
    if let Some(mut pipe) = child.stdout.take() {
        let _ = std::io::Read::read_to_string(&mut pipe, &mut out);
    }
    out.lines().filter_map(|l| l.strip_prefix("recovered ")?.trim().parse::<usize>().ok()).sum()
}

#[cfg(unix)]
fn killed_by_signal(status: &std::process::ExitStatus) -> bool {
    use std::os::unix::process::ExitStatusExt;
    status.signal().is_some()
}

#[cfg(not(unix))]
fn killed_by_signal(status: &std::process::ExitStatus) -> bool {
    !status.success()
}

/// Lets the supervising process preempt the worker as soon as it wakes up,
/// even when both share a single core.
#[cfg(unix)]
fn lower_priority() {
    // SAFETY: plain syscall wrapper with no memory arguments.
    unsafe {
        libc::nice(19);
    }
}

#[cfg(not(unix))]
fn lower_priority() {}

#[cfg(unix)]
fn lower_child_priority(command: &mut Command) {
    use std::os::unix::process::CommandExt;
    // SAFETY: nice is async-signal-safe and touches no memory of the parent.
    unsafe {
        command.pre_exec(|| {
            libc::nice(19);
            Ok(())
        });
    }
}

#[cfg(not(unix))]
fn lower_child_priority(_: &mut Command) {}
