//! Parameter arithmetic for the tree: level exponents, critical time-scale
//! exponents, the aging level and the jump-count and time scales per level.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Distance below which `rho` is treated as sitting on a critical exponent.
pub const CRITICAL_TOLERANCE: f64 = 1e-9;

/// Largest supported depth; the canonical path encoding stores the level in one byte.
pub const MAX_LEVELS: usize = 255;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HierarchyError {
    #[error("need at least one level")]
    NoLevels,
    #[error("depth {0} exceeds the supported maximum {MAX_LEVELS}")]
    TooDeep(usize),
    #[error("branch size must be at least 2, got {0}")]
    Branching(u32),
    #[error("alpha count {got} does not match level count {levels}")]
    AlphaCount { levels: usize, got: usize },
    #[error("alpha at level {index} is {value}, outside (0,1)")]
    AlphaRange { index: usize, value: f64 },
    #[error("alphas must be strictly increasing; violated at level {index}")]
    AlphaOrder { index: usize },
    #[error("rho must be positive and finite, got {0}")]
    Rho(f64),
    #[error("rho {rho} is within {CRITICAL_TOLERANCE} of the critical exponent d_{level} = {d}")]
    Critical { rho: f64, level: usize, d: f64 },
    #[error("fully non-aging regime: rho {rho} >= d_1 = {d1}")]
    NoAgingLevel { rho: f64, d1: f64 },
    #[error("R table needs at least two entries")]
    TableTooShort,
    #[error("R table must start at 0, got {0}")]
    TableOrigin(f64),
    #[error("R table entry {index} is not finite")]
    TableValue { index: usize },
    #[error("R table is not strictly increasing at index {index}")]
    TableMonotone { index: usize },
    #[error("R table is not strictly concave at index {index}")]
    TableConcave { index: usize },
    #[error("no continuum aging: rho {rho} >= R(1) + 1 = {bound}")]
    NoContinuumAging { rho: f64, bound: f64 },
}

/// Tree shape and landscape exponents. Levels are 1-based in every accessor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpec", into = "RawSpec")]
pub struct HierarchySpec {
    levels: usize,
    branching: u32,
    alphas: Vec<f64>,
    rho: f64,
}

#[derive(Serialize, Deserialize)]
struct RawSpec {
    #[serde(rename = "L")]
    levels: usize,
    n: u32,
    alphas: Vec<f64>,
    rho: f64,
}

impl TryFrom<RawSpec> for HierarchySpec {
    type Error = HierarchyError;
    fn try_from(r: RawSpec) -> Result<Self, Self::Error> {
        if r.alphas.len() != r.levels {
            return Err(HierarchyError::AlphaCount { levels: r.levels, got: r.alphas.len() });
        }
        HierarchySpec::new(r.n, r.alphas, r.rho)
    }
}

impl From<HierarchySpec> for RawSpec {
    fn from(s: HierarchySpec) -> Self {
        RawSpec { levels: s.levels, n: s.branching, alphas: s.alphas, rho: s.rho }
    }
}

impl HierarchySpec {
    /// Validates ordering of the alphas and that `rho` avoids every critical exponent.
    pub fn new(branching: u32, alphas: Vec<f64>, rho: f64) -> Result<Self, HierarchyError> {
        let levels = alphas.len();
        if levels == 0 {
            return Err(HierarchyError::NoLevels);
        }
        if levels > MAX_LEVELS {
            return Err(HierarchyError::TooDeep(levels));
        }
        if branching < 2 {
            return Err(HierarchyError::Branching(branching));
        }
        for (i, &a) in alphas.iter().enumerate() {
            if !(a > 0.0 && a < 1.0) {
                return Err(HierarchyError::AlphaRange { index: i + 1, value: a });
            }
            if i > 0 && a <= alphas[i - 1] {
                return Err(HierarchyError::AlphaOrder { index: i + 1 });
            }
        }
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(HierarchyError::Rho(rho));
        }
        let spec = HierarchySpec { levels, branching, alphas, rho };
        for (k, d) in spec.critical_exponents().into_iter().enumerate() {
            if (rho - d).abs() <= CRITICAL_TOLERANCE {
                return Err(HierarchyError::Critical { rho, level: k + 1, d });
            }
        }
        Ok(spec)
    }

    /// Builds a spec whose alphas come from a tabulated R profile.
    pub fn from_r_table(branching: u32, r_values: &[f64], rho: f64) -> Result<Self, HierarchyError> {
        Self::new(branching, alphas_from_r(r_values)?, rho)
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn branching(&self) -> u32 {
        self.branching
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    /// Exponent of level `k` (1-based).
    pub fn alpha(&self, k: usize) -> f64 {
        self.alphas[k - 1]
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// Same tree and exponents with another time-scale exponent.
    pub fn with_rho(&self, rho: f64) -> Result<Self, HierarchyError> {
        Self::new(self.branching, self.alphas.clone(), rho)
    }

    /// Same exponents with another branch size.
    pub fn with_branching(&self, branching: u32) -> Result<Self, HierarchyError> {
        Self::new(branching, self.alphas.clone(), self.rho)
    }

    /// `d_k = sum_{i>=k} 1/alpha_i - (L - k)` for k = 1..L.
    pub fn critical_exponents(&self) -> Vec<f64> {
        let l = self.levels;
        let mut d = vec![0.0; l];
        let mut acc = 0.0;
        for k in (1..=l).rev() {
            acc += 1.0 / self.alpha(k);
            d[k - 1] = acc - (l - k) as f64;
        }
        d
    }

    /// Deepest level whose critical exponent exceeds `rho`.
    pub fn aging_level(&self) -> Result<usize, HierarchyError> {
        let d = self.critical_exponents();
        if self.rho >= d[0] {
            return Err(HierarchyError::NoAgingLevel { rho: self.rho, d1: d[0] });
        }
        Ok(d.iter().rposition(|&dk| self.rho < dk).map_or(0, |i| i + 1))
    }

    /// Scaling plan at the spec's own branch size.
    pub fn scaling_plan(&self) -> Result<ScalingPlan, HierarchyError> {
        scaling_sequences(self, self.branching as f64)
    }
}

/// Critical exponents; free-function form of [`HierarchySpec::critical_exponents`].
pub fn critical_exponents(spec: &HierarchySpec) -> Vec<f64> {
    spec.critical_exponents()
}

/// Aging level; free-function form of [`HierarchySpec::aging_level`].
pub fn aging_level(spec: &HierarchySpec) -> Result<usize, HierarchyError> {
    spec.aging_level()
}

/// Jump-count scales `a_n(k)`, time scales `c_n(k)` and the derived
/// products of exponents. Every scale is stored both as a power of `n`
/// (`*_exponent`) and as a real number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingPlan {
    pub n: f64,
    pub rho: f64,
    pub alphas: Vec<f64>,
    pub d: Vec<f64>,
    pub lstar: usize,
    pub alpha_bar: Vec<f64>,
    pub a_exponent: Vec<f64>,
    pub a_n: Vec<f64>,
    pub c_n_levels: Vec<f64>,
    pub c_n: f64,
}

impl ScalingPlan {
    pub fn levels(&self) -> usize {
        self.alphas.len()
    }

    /// `a_n(k)`, 1-based.
    pub fn a(&self, k: usize) -> f64 {
        self.a_n[k - 1]
    }

    /// `c_n(k)`, 1-based.
    pub fn c(&self, k: usize) -> f64 {
        self.c_n_levels[k - 1]
    }

    /// Exponent of `c_n(k)` as a power of n.
    pub fn c_exponent(&self, k: usize) -> f64 {
        if k == self.levels() {
            self.rho
        } else {
            self.a_exponent[k]
        }
    }

    /// `prod_{i=k}^{l*} alpha_i` for k <= l*.
    pub fn alpha_bar(&self, k: usize) -> f64 {
        self.alpha_bar[k - 1]
    }
}

/// Scales for branch size `n` (which may differ from the spec's, e.g. for
/// convergence sweeps). For k <= l* the exponent is
/// `alpha_bar_k (1 + rho - d_{l*+1})` with `d_{L+1} = 1`, which makes
/// `c_n(k) = a_n(k)^{1/alpha_k}` hold exactly.
pub fn scaling_sequences(spec: &HierarchySpec, n: f64) -> Result<ScalingPlan, HierarchyError> {
    let l = spec.levels();
    let lstar = spec.aging_level()?;
    let d = spec.critical_exponents();
    let rho = spec.rho();
    let d_next = if lstar == l { 1.0 } else { d[lstar] };
    let mut alpha_bar = vec![0.0; lstar];
    let mut prod = 1.0;
    for k in (1..=lstar).rev() {
        prod *= spec.alpha(k);
        alpha_bar[k - 1] = prod;
    }
    let a_exponent: Vec<f64> = (1..=l)
        .map(|k| if k > lstar { 1.0 + rho - d[k - 1] } else { alpha_bar[k - 1] * (1.0 + rho - d_next) })
        .collect();
    let a_n: Vec<f64> = a_exponent.iter().map(|&e| n.powf(e)).collect();
    let c_n = n.powf(rho);
    let c_n_levels = (1..=l).map(|k| if k == l { c_n } else { a_n[k] }).collect();
    Ok(ScalingPlan { n, rho, alphas: spec.alphas().to_vec(), d, lstar, alpha_bar, a_exponent, a_n, c_n_levels, c_n })
}

/// Level exponents from a profile tabulated at k/L:
/// `alpha_k = exp(-(R(k/L) - R((k-1)/L)))`. The table must start at 0 and be
/// strictly increasing and strictly concave at grid resolution.
pub fn alphas_from_r(r_values: &[f64]) -> Result<Vec<f64>, HierarchyError> {
    check_r_table(r_values)?;
    for i in 2..r_values.len() {
        let prev = r_values[i - 1] - r_values[i - 2];
        let cur = r_values[i] - r_values[i - 1];
        if cur >= prev {
            return Err(HierarchyError::TableConcave { index: i });
        }
    }
    Ok(r_values.windows(2).map(|w| (-(w[1] - w[0])).exp()).collect())
}

fn check_r_table(r_values: &[f64]) -> Result<(), HierarchyError> {
    if r_values.len() < 2 {
        return Err(HierarchyError::TableTooShort);
    }
    if let Some(index) = r_values.iter().position(|v| !v.is_finite()) {
        return Err(HierarchyError::TableValue { index });
    }
    if r_values[0] != 0.0 {
        return Err(HierarchyError::TableOrigin(r_values[0]));
    }
    if let Some(i) = r_values.windows(2).position(|w| w[1] <= w[0]) {
        return Err(HierarchyError::TableMonotone { index: i + 1 });
    }
    Ok(())
}

/// Piecewise-linear interpolation of a table sampled at k/(len-1).
pub fn interpolate_table(table: &[f64], x: f64) -> f64 {
    let m = (table.len() - 1) as f64;
    let pos = (x.clamp(0.0, 1.0) * m).min(m);
    let i = (pos.floor() as usize).min(table.len() - 2);
    let frac = pos - i as f64;
    table[i] + frac * (table[i + 1] - table[i])
}

/// `r* = sup{s : R(1) - R(s) + 1 > rho}` with R interpolated linearly.
/// Only monotonicity of the table is required here.
pub fn continuum_boundary(r_values: &[f64], rho: f64) -> Result<f64, HierarchyError> {
    check_r_table(r_values)?;
    let r1 = *r_values.last().unwrap_or(&0.0);
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(HierarchyError::Rho(rho));
    }
    if rho >= r1 + 1.0 {
        return Err(HierarchyError::NoContinuumAging { rho, bound: r1 + 1.0 });
    }
    let target = r1 + 1.0 - rho;
    if target >= r1 {
        return Ok(1.0);
    }
    // Bisection over grid cells, then solve inside the bracketing segment.
    let (mut lo, mut hi) = (0usize, r_values.len() - 1);
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if r_values[mid] <= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let m = (r_values.len() - 1) as f64;
    let frac = (target - r_values[lo]) / (r_values[hi] - r_values[lo]);
    Ok((lo as f64 + frac) / m)
}
