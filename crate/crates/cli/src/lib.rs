//! Config-driven experiment runner for gremlab.

// `!(x > 0.0)` is deliberate: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod experiments;
pub mod output;
pub mod report;

use config::{Experiment, ExperimentConfig, RunArgs, SEED_ENV};
use output::{config_echo, content_hash, write_run, ErrorRecord, Meta};
use serde_json::Value;
use std::time::Instant;

/// Exit status of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Pass,
    ToleranceFailure,
    Error,
}

impl Status {
    pub fn code(self) -> u8 {
        match self {
            Status::Pass => 0,
            Status::ToleranceFailure => 1,
            Status::Error => 2,
        }
    }
}

fn error_meta(
    experiment: Experiment,
    started_at: String,
    start: Instant,
    config: Value,
    kind: &str,
    message: String,
) -> Meta {
    Meta {
        schema_version: config::SCHEMA_VERSION,
        experiment: experiment.name().into(),
        started_at,
        wall_seconds: start.elapsed().as_secs_f64(),
        threads: rayon::current_num_threads(),
        config,
        curve_sha256: None,
        pass: false,
        details: Value::Null,
        error: Some(ErrorRecord { kind: kind.into(), message }),
    }
}

/// Resolves the config, runs the experiment and writes its outputs.
/// Errors are recorded in meta.json whenever an output directory is known.
pub fn run(experiment: Experiment, args: &RunArgs) -> Status {
    let start = Instant::now();
    let started_at = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Micros, true);
    let env_seed = std::env::var(SEED_ENV).ok();
    let cfg: ExperimentConfig = match config::resolve(experiment, args, env_seed.as_deref()) {
        Ok(c) => c,
        Err(message) => {
            eprintln!("error: {message}");
            if let Some(dir) = &args.out {
                let meta = error_meta(experiment, started_at, start, Value::Null, "validation", message);
                if let Err(e) = write_run(dir, None, &meta) {
                    eprintln!("error: cannot write {}: {e}", dir.display());
                }
            }
            return Status::Error;
        }
    };
    let echo = config_echo(&cfg);
    let (meta, curve, status) = match experiments::run(&cfg) {
        Ok(o) => {
            let meta = Meta {
                schema_version: config::SCHEMA_VERSION,
                experiment: experiment.name().into(),
                started_at,
                wall_seconds: start.elapsed().as_secs_f64(),
                threads: rayon::current_num_threads(),
                config: echo,
                curve_sha256: Some(content_hash(&o.csv)),
                pass: o.pass,
                details: o.details,
                error: None,
            };
            let status = if o.pass { Status::Pass } else { Status::ToleranceFailure };
            (meta, Some(o.csv), status)
        }
        Err(message) => {
            eprintln!("error: {message}");
            (error_meta(experiment, started_at, start, echo, "compute", message), None, Status::Error)
        }
    };
    if let Err(e) = write_run(&cfg.out, curve.as_deref(), &meta) {
        eprintln!("error: cannot write {}: {e}", cfg.out.display());
        return Status::Error;
    }
    let verdict = match status {
        Status::Pass => "PASS",
        Status::ToleranceFailure => "FAIL",
        Status::Error => "ERROR",
    };
    println!("{} {verdict} in {:.2}s -> {}", experiment.name(), meta.wall_seconds, cfg.out.display());
    status
}
