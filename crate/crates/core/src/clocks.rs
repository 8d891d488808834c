//! Per-level clock processes. `S_k(i)` is the time of the i-th jump that
//! strands below level k, i.e. that leaves the current level-k vertex or
//! resamples it.

use crate::dynamics::Trajectory;
use crate::hierarchy::ScalingPlan;
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClockError {
    #[error("rescaling needs level <= l* = {lstar}, got {level}")]
    NotAging { level: usize, lstar: usize },
    #[error("grid point {0} is negative or not finite")]
    Grid(f64),
    #[error("clock at level {level} recorded {recorded} jumps but {needed} are needed; extend the horizon")]
    Truncated { level: usize, needed: u64, recorded: usize },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Jump times of the level-k clock.
#[derive(Debug, Clone, PartialEq)]
pub struct ClockSeries {
    pub level: usize,
    pub jump_times: Vec<f64>,
}

impl ClockSeries {
    pub fn jump_count(&self) -> usize {
        self.jump_times.len()
    }

    /// `S_k(i)` with `S_k(0) = 0`; `None` past the recorded jumps.
    pub fn value(&self, i: usize) -> Option<f64> {
        match i {
            0 => Some(0.0),
            _ => self.jump_times.get(i - 1).copied(),
        }
    }
}

/// Clocks for levels 1..=L.
pub fn extract_clocks(traj: &Trajectory) -> Vec<ClockSeries> {
    let levels = traj.levels();
    let mut clocks: Vec<ClockSeries> =
        (1..=levels).map(|level| ClockSeries { level, jump_times: Vec::new() }).collect();
    for e in traj.events() {
        for c in &mut clocks[e.stranding_level..] {
            c.jump_times.push(e.time);
        }
    }
    clocks
}

/// `S_k(floor(t a_n(k))) / c_n` on each grid point.
pub fn rescale_clock(series: &ClockSeries, plan: &ScalingPlan, grid: &[f64]) -> Result<Vec<f64>, ClockError> {
    let k = series.level;
    if k == 0 || k > plan.lstar {
        return Err(ClockError::NotAging { level: k, lstar: plan.lstar });
    }
    grid.iter()
        .map(|&t| {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(ClockError::Grid(t));
            }
            let i = (t * plan.a(k)).floor() as u64;
            series.value(i as usize).map(|v| v / plan.c_n).ok_or(ClockError::Truncated {
                level: k,
                needed: i,
                recorded: series.jump_count(),
            })
        })
        .collect()
}

/// Whether some jump time lies in the closed window `[t, t+s]`.
pub fn clock_range_hit(series: &ClockSeries, t: f64, s: f64) -> bool {
    let i = series.jump_times.partition_point(|&x| x < t);
    series.jump_times.get(i).is_some_and(|&x| x <= t + s)
}

/// Writes `level, index, value` rows for every recorded jump.
pub fn write_clocks_csv<W: Write>(clocks: &[ClockSeries], out: W) -> Result<(), ClockError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["level", "index", "value"])?;
    for c in clocks {
        for (i, t) in c.jump_times.iter().enumerate() {
            w.write_record([c.level.to_string(), (i + 1).to_string(), t.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}
