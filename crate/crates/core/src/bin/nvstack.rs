use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use nvstack::harness::{
    self, oracle_verify, replay_witness, verify, CrashSpec, ExecutionLog, ExperimentConfig, ValueRange,
};
use nvstack::pstack::StackStrategy;
use nvstack::rcas::Variant;
use nvstack::region::{CacheMode, Region};

#[derive(Parser)]
#[command(name = "nvstack", version, about = "Persistent-stack runtime and recoverable CAS experiment")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum RangeArg {
    Narrow,
    Wide,
}

#[derive(Clone, Copy, ValueEnum)]
enum CrashArg {
    None,
    Kill,
    Inject,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Correct,
    Buggy,
}

#[derive(Clone, Copy, ValueEnum)]
enum StackArg {
    Bounded,
    Array,
    BlockList,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the CAS experiment and write its log.
    Run {
        #[arg(long)]
        image: Option<PathBuf>,
        /// Replace the image file if it already exists.
        #[arg(long)]
        overwrite: bool,
        #[arg(long, default_value_t = 4)]
        threads: usize,
        #[arg(long, default_value_t = 1000)]
        ops: usize,
        #[arg(long, value_enum, default_value_t = RangeArg::Narrow)]
        range: RangeArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = CrashArg::None)]
        crash: CrashArg,
        /// Inject mode: crash once, at this line flush.
        #[arg(long, conflicts_with = "crash_prob")]
        at_flush: Option<u64>,
        /// Inject mode: crash after each flush with this probability.
        #[arg(long)]
        crash_prob: Option<f64>,
        /// Kill mode: number of worker processes to kill before letting one finish.
        #[arg(long, default_value_t = 10)]
        min_kills: usize,
        #[arg(long, value_enum, default_value_t = VariantArg::Correct)]
        variant: VariantArg,
        #[arg(long, value_enum, default_value_t = StackArg::Bounded)]
        stack: StackArg,
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Run recovery on an image left by a crashed run.
    Recover {
        #[arg(long)]
        image: PathBuf,
    },
    /// Check a log for serializability.
    Verify {
        #[arg(long)]
        log: PathBuf,
        /// Also run the brute-force check (at most 8 successful operations).
        #[arg(long)]
        oracle: bool,
    },
    /// Crash a single-worker run at every flush index and check each outcome.
    Enumerate {
        #[arg(long, default_value_t = 20)]
        ops: usize,
        #[arg(long, default_value_t = u64::MAX)]
        max_flush: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = VariantArg::Correct)]
        variant: VariantArg,
    },
    /// Worker process of kill mode.
    #[command(hide = true)]
    Worker {
        #[arg(long)]
        image: PathBuf,
    },
}

fn variant(v: VariantArg) -> Variant {
    match v {
        VariantArg::Correct => Variant::Correct,
        VariantArg::Buggy => Variant::Buggy,
    }
}

fn strategy(s: StackArg) -> StackStrategy {
    match s {
        StackArg::Bounded => StackStrategy::default(),
        StackArg::Array => StackStrategy::Array { initial_capacity: 256 },
        StackArg::BlockList => StackStrategy::BlockList { block_size: 256 },
    }
}

/// Prints the verdict; true when serializable.
fn report(log: &ExecutionLog) -> Result<bool> {
    let v = verify(log)?;
    if v.serializable {
        println!("serializable ({} ops, {} successful)", log.ops.len(), log.successes());
    } else {
        println!("NOT serializable: {}", v.reason.map(|r| r.to_string()).unwrap_or_default());
    }
    Ok(v.serializable)
}

fn run(cmd: Cmd) -> Result<bool> {
    match cmd {
        Cmd::Run {
            image,
            overwrite,
            threads,
            ops,
            range,
            seed,
            crash,
            at_flush,
            crash_prob,
            min_kills,
            variant: v,
            stack,
            log,
        } => {
            let crash = match (crash, at_flush, crash_prob) {
                (CrashArg::None, None, None) => CrashSpec::None,
                (CrashArg::Inject, Some(k), None) => CrashSpec::AtFlush(k),
                (CrashArg::Inject, None, Some(p)) if (0.0..=1.0).contains(&p) => CrashSpec::Random(p),
                (CrashArg::Inject, None, None) => bail!("inject mode needs --at-flush or --crash-prob"),
                (CrashArg::Inject, ..) => bail!("--crash-prob must lie in [0, 1]"),
                (CrashArg::Kill, None, None) => CrashSpec::Kill { min_kills },
                _ => bail!("--at-flush and --crash-prob only apply to inject mode"),
            };
            if let Some(path) = &image {
                if path.exists() {
                    if !overwrite {
                        bail!("{} exists; pass --overwrite to replace it", path.display());
                    }
                    std::fs::remove_file(path).with_context(|| format!("removing {}", path.display()))?;
                }
            }
            let cfg = ExperimentConfig {
                threads,
                ops,
                range: match range {
                    RangeArg::Narrow => ValueRange::Narrow,
                    RangeArg::Wide => ValueRange::Wide,
                },
                seed,
                crash,
                variant: variant(v),
                strategy: strategy(stack),
                image,
                ..Default::default()
            };
            let rep = match crash {
                CrashSpec::Kill { .. } => {
                    let exe = std::env::current_exe().context("locating the worker executable")?;
                    harness::run_kill_experiment(&cfg, &exe)?
                }
                _ => harness::run_experiment(&cfg)?,
            };
            eprintln!("{} ops, {} crashes, {} recover calls", rep.log.ops.len(), rep.crashes, rep.recovered_frames);
            if let Some(path) = log {
                rep.log.write(&path).with_context(|| format!("writing {}", path.display()))?;
            }
            report(&rep.log)
        }
        Cmd::Recover { image } => {
            let region = Arc::new(Region::attach(&image, CacheMode::Direct)?);
            let (rt, _) = harness::app::attach(&region)?;
            let stats = rt.recover_all()?;
            region.sync()?;
            println!(
                "recovered {} stacks: {} recover calls, {} completed frames popped",
                stats.stacks, stats.recovered, stats.skipped
            );
            Ok(true)
        }
        Cmd::Verify { log, oracle } => {
            let log = ExecutionLog::read(&log).with_context(|| format!("reading {}", log.display()))?;
            let v = verify(&log)?;
            let ok = report(&log)?;
            if v.serializable && !replay_witness(&log, &v.witness) {
                bail!("witness does not replay");
            }
            if oracle {
                let o = oracle_verify(&log)?;
                println!("oracle: {}", if o { "serializable" } else { "NOT serializable" });
                if o != ok {
                    println!("verifier and oracle disagree");
                    return Ok(false);
                }
            }
            Ok(ok)
        }
        Cmd::Enumerate { ops, max_flush, seed, variant: v } => {
            let rep = harness::enumerate(ops, max_flush, seed, variant(v))?;
            for (k, why) in &rep.failures {
                println!("crash at flush {k}: {why}");
            }
            println!(
                "{} of {} crash points passed ({} flushes in the crash-free run)",
                rep.passed, rep.points, rep.total_flushes
            );
            Ok(rep.failures.is_empty())
        }
        Cmd::Worker { image } => {
            harness::worker_main(&image)?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
