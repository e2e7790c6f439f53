use std::process::ExitCode;

use anyhow::Result;
use clap::Parser;
use cvqkd::montecarlo::{self, Basis};
use cvqkd::postselect;
use log::error;

mod config;
mod emit;

use config::{Cli, CommandKind, Format, RunConfig, UsageError};
use emit::{EventWriter, OptimizeReport, SimulationReport, Sink};

/// Cap on effective amplitudes kept for the KS check.
const KS_SAMPLE_CAP: usize = 1_000_000;

const EXIT_NOT_CONVERGED: u8 = 1;
const EXIT_USAGE: u8 = 2;

enum Status {
    Done,
    NotConverged,
}

fn keyrate(cfg: &RunConfig) -> Result<Status> {
    let r = postselect::key_rate(&cfg.params, &cfg.grid)?;
    let body = match cfg.format {
        Format::Json => emit::json(&r)?,
        Format::Csv => emit::keyrate_csv(&r),
    };
    let mut sink = Sink::open(cfg.output.as_deref())?;
    sink.write_all(body.as_bytes())?;
    sink.finish()?;
    Ok(if r.converged { Status::Done } else { Status::NotConverged })
}

fn optimize(cfg: &RunConfig) -> Result<Status> {
    let opt = postselect::optimize_d(cfg.params.eta(), &cfg.grid, cfg.d_interval)?;
    let reference = postselect::key_rate(&cfg.params, &cfg.grid)?;
    let mut sink = Sink::open(cfg.output.as_deref())?;
    sink.write_all(emit::json(&OptimizeReport::new(&opt, &reference))?.as_bytes())?;
    sink.finish()?;
    Ok(if opt.result.converged { Status::Done } else { Status::NotConverged })
}

fn map(cfg: &RunConfig) -> Result<Status> {
    let grid = postselect::info_map(cfg.params.eta(), &cfg.grid)?;
    let mut sink = Sink::open(cfg.output.as_deref())?;
    match cfg.format {
        Format::Json => sink.write_all(emit::json(&grid)?.as_bytes())?,
        Format::Csv => {
            let mut buf = Vec::with_capacity(64 * grid.values.len());
            emit::map_csv(&grid, &mut buf)?;
            sink.write_all(&buf)?;
        }
    }
    sink.finish()?;
    Ok(Status::Done)
}

fn simulate(cfg: &RunConfig) -> Result<Status> {
    let mut events = cfg.events.as_deref().map(EventWriter::create).transpose()?;
    let mut amplitudes = Vec::new();
    let stats = montecarlo::run_session_with_records(&cfg.params, cfg.n_events, cfg.seed, |r| {
        if r.basis == Basis::X && amplitudes.len() < KS_SAMPLE_CAP {
            amplitudes.push(r.effective_amplitude());
        }
        if let Some(w) = events.as_mut() {
            w.record(r);
        }
    })?;
    if let Some(w) = events {
        w.finish()?;
    }

    let rate_check = montecarlo::rate_consistency_check(&stats, &cfg.params, &cfg.grid)?;
    let report = SimulationReport {
        stats: &stats,
        analytic_rate: rate_check.analytic,
        rate_check,
        error_check: montecarlo::error_consistency_check(&stats, &cfg.params, &cfg.grid)?,
        amplitude_ks: montecarlo::amplitude_ks_test(&mut amplitudes, cfg.params.d()),
    };
    let mut sink = Sink::open(cfg.output.as_deref())?;
    sink.write_all(emit::json(&report)?.as_bytes())?;
    sink.finish()?;
    Ok(Status::Done)
}

fn run(cfg: &RunConfig) -> Result<Status> {
    if let Some(n) = cfg.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cfg.command {
        CommandKind::Keyrate => keyrate(cfg),
        CommandKind::Optimize => optimize(cfg),
        CommandKind::Map => map(cfg),
        CommandKind::Simulate => simulate(cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let cfg = match RunConfig::from_cli(cli) {
        Ok(cfg) => cfg,
        Err(UsageError(msg)) => {
            eprintln!("error: {msg}");
            return ExitCode::from(EXIT_USAGE);
        }
    };

    match run(&cfg) {
        Ok(Status::Done) => ExitCode::SUCCESS,
        Ok(Status::NotConverged) => {
            error!("key rate did not converge under node doubling; refine the grid");
            ExitCode::from(EXIT_NOT_CONVERGED)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
