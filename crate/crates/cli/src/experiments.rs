//! The five experiments. Each returns its curve.csv bytes and a pass verdict.

use crate::config::{Experiment, ExperimentConfig};
use gremlab::analysis::{build_generator, ecdf_ks, exact_pi, mean_estimate, write_oracle_csv, OracleRow};
use gremlab::cascades::{rpc_laplace, sample_rpc_restricted, ResourceCaps, StepTestFunction, TestBox};
use gremlab::clocks::{extract_clocks, rescale_clock};
use gremlab::dynamics::{simulate_until, trajectory_seed, window_overlap, OverlapTally, StopRule};
use gremlab::environment::TrapLandscape;
use gremlab::limits::{constants, stable_cdf, theorem1_curve, write_curve_csv};
use rayon::prelude::*;
use serde_json::{json, Value};

/// Event cap per clock trajectory.
const MAX_CLOCK_EVENTS: usize = 100_000_000;
/// Fraction of oracle cells that must lie within tolerance stderr.
const ORACLE_PASS_FRACTION: f64 = 0.9;

pub struct Outcome {
    pub csv: Vec<u8>,
    pub pass: bool,
    /// Experiment-specific figures for meta.json.
    pub details: Value,
}

pub fn run(cfg: &ExperimentConfig) -> Result<Outcome, String> {
    match cfg.experiment {
        Experiment::Aging => aging(cfg),
        Experiment::Clocks => clocks(cfg),
        Experiment::Cascade => cascade(cfg),
        Experiment::Limits => limits(cfg),
        Experiment::Oracle => oracle(cfg),
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn write_rows(header: Vec<String>, rows: Vec<Vec<String>>) -> Result<Vec<u8>, String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header).map_err(err)?;
    for r in rows {
        w.write_record(&r).map_err(err)?;
    }
    w.into_inner().map_err(err)
}

/// Overlap tally of `m` walkers over the window `[t, t + s]`.
fn overlap_tally(land: &TrapLandscape, t: f64, s: f64, stream: u64, m: u64) -> Result<OverlapTally, String> {
    let levels = land.spec().levels();
    (0..m)
        .into_par_iter()
        .map(|i| window_overlap(land, t, s, trajectory_seed(stream, i)))
        .try_fold(
            || OverlapTally::new(levels),
            |mut acc, o| {
                acc.record(o?);
                Ok(acc)
            },
        )
        .try_reduce(|| OverlapTally::new(levels), |a, b| Ok(a.merge(&b)))
        .map_err(|e: gremlab::dynamics::DynamicsError| e.to_string())
}

/// Columns: n, theta, pi_k and stderr_k, asl_k (zero past l*), corr, corr_limit.
fn aging(cfg: &ExperimentConfig) -> Result<Outcome, String> {
    let levels = cfg.spec.levels();
    let q = cfg.q_table();
    let mut header = vec!["n".to_string(), "theta".into()];
    for k in 1..=levels {
        header.push(format!("pi_{k}"));
        header.push(format!("stderr_{k}"));
    }
    header.extend((1..=levels).map(|k| format!("asl_{k}")));
    header.extend(["corr".into(), "corr_limit".into()]);
    let mut rows = Vec::new();
    let mut worst: f64 = 0.0;
    let mut horizons = Vec::new();
    for (ni, &n) in cfg.n_list.iter().enumerate() {
        let spec = cfg.spec.with_branching(n).map_err(err)?;
        let plan = spec.scaling_plan().map_err(err)?;
        let curve = theorem1_curve(&spec, &q, &cfg.theta).map_err(err)?;
        let land = TrapLandscape::new(spec, cfg.seed);
        let max_theta = cfg.theta.iter().cloned().fold(0.0, f64::max);
        horizons.push((1.0 + max_theta) * plan.c_n);
        for (ti, (&theta, point)) in cfg.theta.iter().zip(&curve).enumerate() {
            let stream = trajectory_seed(cfg.seed, (1000 * ni + ti) as u64);
            let tally = overlap_tally(&land, plan.c_n, theta * plan.c_n, stream, cfg.trajectories)?;
            let est = (1..=levels).map(|k| tally.estimate(k)).collect::<Result<Vec<_>, _>>().map_err(err)?;
            let asl: Vec<f64> = (0..levels).map(|i| point.terms.get(i).copied().unwrap_or(0.0)).collect();
            let pis: Vec<f64> = est.iter().map(|e| e.value).collect();
            if ni + 1 == cfg.n_list.len() {
                worst = pis.iter().zip(&asl).map(|(p, a)| (p - a).abs()).fold(worst, f64::max);
            }
            let mut row = vec![n.to_string(), theta.to_string()];
            for e in &est {
                row.push(e.value.to_string());
                row.push(e.stderr.to_string());
            }
            row.extend(asl.iter().map(f64::to_string));
            row.push(q.combine(&pis).to_string());
            row.push(point.value.to_string());
            rows.push(row);
        }
    }
    Ok(Outcome {
        csv: write_rows(header, rows)?,
        pass: worst <= cfg.tolerance,
        details: json!({ "max_abs_error": worst, "horizons": horizons }),
    })
}

/// Rescaled clock of level l* at each grid time: median and KS distance to
/// the stable law with Laplace exponent `b t k^alpha_bar`.
fn clocks(cfg: &ExperimentConfig) -> Result<Outcome, String> {
    let header = ["n", "t", "median", "ks", "alpha_bar", "b"].map(String::from).to_vec();
    let mut rows = Vec::new();
    let mut worst_ks: f64 = 0.0;
    for (ni, &n) in cfg.n_list.iter().enumerate() {
        let spec = cfg.spec.with_branching(n).map_err(err)?;
        let plan = spec.scaling_plan().map_err(err)?;
        let lstar = plan.lstar;
        let b = constants(&spec).map_err(err)?.b[lstar - 1];
        let alpha = plan.alpha_bar(lstar);
        let max_t = cfg.theta.iter().cloned().fold(0.0, f64::max);
        let count = ((max_t * plan.a(lstar)).floor() as usize).max(1);
        let land = TrapLandscape::new(spec, cfg.seed);
        let stream = trajectory_seed(cfg.seed, 1000 * ni as u64);
        let samples: Vec<Vec<f64>> = (0..cfg.trajectories)
            .into_par_iter()
            .map(|i| {
                let rule = StopRule::ClockCount { level: lstar, count };
                let traj = simulate_until(&land, rule, trajectory_seed(stream, i), MAX_CLOCK_EVENTS).map_err(err)?;
                rescale_clock(&extract_clocks(&traj)[lstar - 1], &plan, &cfg.theta).map_err(err)
            })
            .collect::<Result<_, _>>()?;
        worst_ks = 0.0;
        for (ti, &t) in cfg.theta.iter().enumerate() {
            let mut xs: Vec<f64> = samples.iter().map(|s| s[ti]).collect();
            let ks = ecdf_ks(&xs, |x| stable_cdf(alpha, b * t, x)).map_err(err)?;
            xs.sort_by(f64::total_cmp);
            worst_ks = worst_ks.max(ks);
            let row = [n as f64, t, xs[xs.len() / 2], ks, alpha, b];
            rows.push(row.iter().map(f64::to_string).collect());
        }
    }
    Ok(Outcome {
        csv: write_rows(header, rows)?,
        pass: worst_ks <= cfg.tolerance,
        details: json!({ "max_ks": worst_ks }),
    })
}

/// Laplace functional of the truncated Ruelle cascade with one box
/// `(0,1] x (0.1,1]` of weight theta per level, against its exact value.
fn cascade(cfg: &ExperimentConfig) -> Result<Outcome, String> {
    let beta = cfg.spec.alphas().to_vec();
    let d = vec![1.0; beta.len()];
    let windows = vec![1.0; beta.len()];
    let caps = ResourceCaps::default();
    let header = ["theta", "mc", "stderr", "exact", "z"].map(String::from).to_vec();
    let mut rows = Vec::new();
    let mut worst: f64 = 0.0;
    for (ti, &theta) in cfg.theta.iter().enumerate() {
        let b = TestBox { t_lo: 0.0, t_hi: 1.0, x_lo: 0.1, x_hi: 1.0, value: theta };
        let f = StepTestFunction { levels: vec![vec![b]; beta.len()] };
        let exact = rpc_laplace(&beta, &d, &f, cfg.gamma, windows[0]).map_err(err)?;
        let stream = trajectory_seed(cfg.seed, ti as u64);
        let vals: Vec<f64> = (0..cfg.trajectories)
            .into_par_iter()
            .map(|i| {
                sample_rpc_restricted(&beta, &d, &windows, cfg.gamma, trajectory_seed(stream, i), caps)
                    .map(|m| (-m.integrate(&f)).exp())
                    .map_err(err)
            })
            .collect::<Result<_, _>>()?;
        let est = mean_estimate(&vals).map_err(err)?;
        let z = (est.value - exact).abs() / est.stderr.max(f64::MIN_POSITIVE);
        worst = worst.max(z);
        let row = [theta, est.value, est.stderr, exact, z];
        rows.push(row.iter().map(f64::to_string).collect());
    }
    Ok(Outcome { csv: write_rows(header, rows)?, pass: worst <= cfg.tolerance, details: json!({ "max_z": worst }) })
}

fn limits(cfg: &ExperimentConfig) -> Result<Outcome, String> {
    let curve = theorem1_curve(&cfg.spec, &cfg.q_table(), &cfg.theta).map_err(err)?;
    let mut csv = Vec::new();
    write_curve_csv(&curve, &mut csv).map_err(err)?;
    let lstar = cfg.spec.aging_level().map_err(err)?;
    Ok(Outcome { csv, pass: true, details: json!({ "lstar": lstar }) })
}

/// Monte Carlo overlap probabilities against the exact semigroup, per (n, window, k).
fn oracle(cfg: &ExperimentConfig) -> Result<Outcome, String> {
    let levels = cfg.spec.levels();
    let mut rows = Vec::new();
    for (ni, &n) in cfg.n_list.iter().enumerate() {
        let land = TrapLandscape::new(cfg.spec.with_branching(n).map_err(err)?, cfg.seed);
        let gen = build_generator(&land).map_err(err)?;
        for (wi, &[t, s]) in cfg.windows.iter().enumerate() {
            let stream = trajectory_seed(cfg.seed, (1000 * ni + wi) as u64);
            let tally = overlap_tally(&land, t, s, stream, cfg.trajectories)?;
            for k in 1..=levels {
                let exact = exact_pi(&gen, k, t, s).map_err(err)?;
                rows.push(OracleRow { k, t, s, exact, estimate: tally.estimate(k).map_err(err)? });
            }
        }
    }
    let passing = rows.iter().filter(|r| r.pass(cfg.tolerance)).count();
    let mut csv = Vec::new();
    write_oracle_csv(&rows, cfg.tolerance, &mut csv).map_err(err)?;
    Ok(Outcome {
        csv,
        pass: passing as f64 >= ORACLE_PASS_FRACTION * rows.len() as f64,
        details: json!({ "cells": rows.len(), "passing": passing }),
    })
}
