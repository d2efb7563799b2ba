//! Argument parsing and dispatch for the `simrun` and `jitter` binaries.
//!
//! Both entry points take an argument iterator and return the process exit
//! code, so tests can drive them without spawning processes.

use std::ffi::OsString;
use std::path::PathBuf;

use cellguard_core::jitter::{filter_kind, TraceGenConfig, DEFAULT_CCDF_THRESHOLDS_US};
use cellguard_core::{analyze, ccdf, excursions_per_second, generate_trace, AnalyzeConfig, FrameKind, Mode, TimingNoise, TraceRecord};
use clap::{Parser, Subcommand, ValueEnum};

use crate::compare::{compare_rows, format_table};
use crate::{load_scenario, load_trace, report_json, write_ccdf, write_file, write_per_second, write_sim_output, write_trace, Error};

#[derive(Debug, Parser)]
#[command(name = "simrun", about = "Run a cell scenario and write events.jsonl, trace.csv and final_state.json")]
struct SimrunArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// The run is expected to end in SAFE_STOP.
    #[arg(long)]
    expect_safe_stop: bool,
}

fn parse<T: Parser>(args: impl IntoIterator<Item = OsString>) -> Result<T, i32> {
    T::try_parse_from(args).map_err(|e| {
        let _ = e.print();
        e.exit_code()
    })
}

fn report_error(prog: &str, e: &Error) -> i32 {
    eprintln!("{prog}: {e}");
    e.exit_code()
}

pub fn simrun(args: impl IntoIterator<Item = OsString>) -> i32 {
    let args: SimrunArgs = match parse(args) {
        Ok(a) => a,
        Err(code) => return code,
    };
    match simrun_inner(&args) {
        Ok(code) => code,
        Err(e) => report_error("simrun", &e),
    }
}

fn simrun_inner(args: &SimrunArgs) -> Result<i32, Error> {
    let mut scenario = load_scenario(&args.scenario)?;
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    let out = cellguard_core::run(&scenario)?;
    write_sim_output(&args.out, &out)?;
    let stopped = out.final_state.mode() == Mode::SafeStop;
    Ok(match (stopped, args.expect_safe_stop) {
        (true, false) => {
            eprintln!("simrun: run ended in SAFE_STOP ({:?})", out.final_state.safe_io.state.cause);
            3
        }
        (false, true) => {
            eprintln!("simrun: expected SAFE_STOP, run ended in {:?}", out.final_state.mode());
            3
        }
        _ => 0,
    })
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum KindArg {
    Command,
    Status,
}

impl From<KindArg> for FrameKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Command => FrameKind::Command,
            KindArg::Status => FrameKind::Status,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ProfileArg {
    None,
    Isolated,
    Contended,
}

#[derive(Debug, Parser)]
#[command(name = "jitter", about = "Cycle-jitter statistics over frame timestamp traces")]
struct JitterArgs {
    #[command(subcommand)]
    cmd: JitterCmd,
}

#[derive(Debug, Subcommand)]
enum JitterCmd {
    /// Write a JSON jitter report for one trace.
    Analyze {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        ccdf: Option<PathBuf>,
        #[arg(long)]
        per_second: Option<PathBuf>,
        /// Only use frames of this kind.
        #[arg(long)]
        kind: Option<KindArg>,
    },
    /// Print a side-by-side table for two traces.
    Compare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, default_value = "a")]
        a_label: String,
        #[arg(long, default_value = "b")]
        b_label: String,
        #[arg(long)]
        kind: Option<KindArg>,
    },
    /// Write a synthetic trace from the timing-noise model.
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100_000)]
        cycles: u64,
        #[arg(long, value_enum, default_value = "isolated")]
        profile: ProfileArg,
        /// Overrides the profile's Gaussian sigma.
        #[arg(long)]
        sigma_us: Option<f64>,
        /// Overrides the profile's tail probability.
        #[arg(long)]
        p_tail: Option<f64>,
        #[arg(long, default_value_t = 1000.0)]
        nominal_us: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

pub fn jitter(args: impl IntoIterator<Item = OsString>) -> i32 {
    let args: JitterArgs = match parse(args) {
        Ok(a) => a,
        Err(code) => return code,
    };
    match jitter_inner(args.cmd) {
        Ok(()) => 0,
        Err(e) => report_error("jitter", &e),
    }
}

fn load_filtered(path: &PathBuf, kind: Option<KindArg>) -> Result<Vec<TraceRecord>, Error> {
    let trace = load_trace(path)?;
    Ok(match kind {
        Some(k) => filter_kind(&trace, k.into()),
        None => trace,
    })
}

fn jitter_inner(cmd: JitterCmd) -> Result<(), Error> {
    let cfg = AnalyzeConfig::default();
    match cmd {
        JitterCmd::Analyze { trace, out, ccdf: ccdf_path, per_second, kind } => {
            let records = load_filtered(&trace, kind)?;
            let analysis = |source| Error::Analysis { path: trace.clone(), source };
            let report = analyze(&records, &cfg).map_err(analysis)?;
            write_file(&out, |w| {
                use std::io::Write;
                writeln!(w, "{}", report_json(&report))
            })?;
            if let Some(p) = ccdf_path {
                let c = ccdf(&records, &DEFAULT_CCDF_THRESHOLDS_US).map_err(analysis)?;
                write_file(&p, |w| write_ccdf(w, &c))?;
            }
            if let Some(p) = per_second {
                let b = excursions_per_second(&records, cfg.excursion_threshold_us).map_err(analysis)?;
                write_file(&p, |w| write_per_second(w, &b))?;
            }
        }
        JitterCmd::Compare { a, b, a_label, b_label, kind } => {
            let ra = analyze(&load_filtered(&a, kind)?, &cfg).map_err(|source| Error::Analysis { path: a.clone(), source })?;
            let rb = analyze(&load_filtered(&b, kind)?, &cfg).map_err(|source| Error::Analysis { path: b.clone(), source })?;
            print!("{}", format_table(&a_label, &b_label, &compare_rows(&ra, &rb)));
        }
        JitterCmd::Generate { out, cycles, profile, sigma_us, p_tail, nominal_us, seed } => {
            let mut noise = match profile {
                ProfileArg::None => TimingNoise::NONE,
                ProfileArg::Isolated => TimingNoise::ISOLATED,
                ProfileArg::Contended => TimingNoise::CONTENDED,
            };
            noise.sigma_us = sigma_us.unwrap_or(noise.sigma_us);
            noise.p_tail = p_tail.unwrap_or(noise.p_tail);
            let gen = TraceGenConfig { nominal_us, ..TraceGenConfig::from_noise(cycles, noise, seed) };
            let trace = generate_trace(&gen).map_err(|source| Error::Analysis { path: out.clone(), source })?;
            write_file(&out, |w| write_trace(w, &trace))?;
        }
    }
    Ok(())
}
