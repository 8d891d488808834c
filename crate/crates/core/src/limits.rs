//! Limit objects: generalized arcsine laws, one-sided stable laws, truncated
//! stable subordinators and their compositions, the Neveu branching family,
//! the constants of the clock limits and the two limit correlation curves.

use crate::dynamics::QTable;
use crate::hierarchy::{continuum_boundary, interpolate_table, HierarchyError, HierarchySpec};
use crate::numerics::integrate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Poisson};
use statrs::function::beta::beta_reg;
use statrs::function::gamma::gamma;
use std::f64::consts::PI;
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LimitError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),
    #[error("expected {expected:.3e} jumps, above the cap {cap}")]
    Resource { expected: f64, cap: u64 },
    #[error("value {value} exceeds the horizon {horizon} of the next path")]
    Horizon { value: f64, horizon: f64 },
    #[error("quadrature residual {residual:.3e} above tolerance {tolerance:.1e}")]
    Numeric { residual: f64, tolerance: f64 },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

fn check_index(alpha: f64) -> Result<(), LimitError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(LimitError::Argument(format!("index {alpha} outside (0,1)")));
    }
    Ok(())
}

/// Probability that an alpha-stable subordinator's range misses `[1, 1/u]`:
/// `(sin(alpha pi)/pi) int_0^u x^(alpha-1) (1-x)^(-alpha) dx`, the regularized
/// incomplete beta function `I_u(alpha, 1-alpha)`.
pub fn asl_cdf(alpha: f64, u: f64) -> Result<f64, LimitError> {
    check_index(alpha)?;
    if !(0.0..=1.0).contains(&u) {
        return Err(LimitError::Argument(format!("u = {u} outside [0,1]")));
    }
    if u == 0.0 || u == 1.0 {
        return Ok(u);
    }
    Ok(beta_reg(alpha, 1.0 - alpha, u))
}

/// Density of [`asl_cdf`] on (0,1).
pub fn asl_density(alpha: f64, x: f64) -> f64 {
    (alpha * PI).sin() / PI * x.powf(alpha - 1.0) * (1.0 - x).powf(-alpha)
}

/// Probability that individuals `t1 < t2` of generation `r` share an ancestor
/// at generation `p <= r`.
pub fn genealogy_overlap(r: f64, p: f64, t1: f64, t2: f64) -> Result<f64, LimitError> {
    if !(0.0 <= p && p <= r && 0.0 < t1 && t1 < t2) {
        return Err(LimitError::Argument(format!(
            "need 0 <= p <= r and 0 < t1 < t2, got p={p}, r={r}, t1={t1}, t2={t2}"
        )));
    }
    if p == r {
        return Ok(1.0);
    }
    asl_cdf((-(r - p)).exp(), t1 / t2)
}

/// Kanter's representation of the standard one-sided stable law, `E e^{-kS} = e^{-k^alpha}`.
pub fn sample_positive_stable<R: Rng>(alpha: f64, rng: &mut R) -> f64 {
    let u = PI * (1.0 - rng.gen::<f64>());
    let e: f64 = rng.sample(Exp1);
    let a = (alpha * u).sin() / u.sin().powf(1.0 / alpha);
    let b = ((1.0 - alpha) * u).sin() / e;
    a * b.powf((1.0 - alpha) / alpha)
}

/// Draw with `E e^{-kS} = exp(-t c k^alpha)`.
pub fn stable_marginal<R: Rng>(alpha: f64, c: f64, t: f64, rng: &mut R) -> f64 {
    (t * c).powf(1.0 / alpha) * sample_positive_stable(alpha, rng)
}

/// Same as [`stable_marginal`] with its own seeded stream.
pub fn stable_marginal_seeded(alpha: f64, c: f64, t: f64, seed: u64) -> Result<f64, LimitError> {
    check_index(alpha)?;
    if !(c > 0.0 && t > 0.0) {
        return Err(LimitError::Argument("scale and time must be positive".into()));
    }
    Ok(stable_marginal(alpha, c, t, &mut ChaCha8Rng::seed_from_u64(seed)))
}

fn kanter_weight(alpha: f64, u: f64) -> f64 {
    (alpha * u).sin().powf(alpha / (1.0 - alpha)) * ((1.0 - alpha) * u).sin() / u.sin().powf(1.0 / (1.0 - alpha))
}

/// CDF of the one-sided stable law with `E e^{-kX} = exp(-c k^alpha)`,
/// `F(x) = (1/pi) int_0^pi exp(-A(u) y^(-alpha/(1-alpha))) du` with `y = x c^(-1/alpha)`.
pub fn stable_cdf(alpha: f64, c: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let y = x * c.powf(-1.0 / alpha);
    let p = y.powf(-alpha / (1.0 - alpha));
    integrate(|u| (-kanter_weight(alpha, u) * p).exp(), 0.0, PI, 1e-13, 400).value / PI
}

/// Survival function `1 - F`, accurate in the far tail.
pub fn stable_survival(alpha: f64, c: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let y = x * c.powf(-1.0 / alpha);
    let p = y.powf(-alpha / (1.0 - alpha));
    // In the far tail the integrand is a spike at u = pi that a plain adaptive
    // rule can step over, so cut geometrically towards pi.
    let f = |u: f64| -(-kanter_weight(alpha, u) * p).exp_m1();
    let mut cuts: Vec<f64> = (1..=60).map(|j| PI * (1.0 - 0.5f64.powi(j))).collect();
    cuts.insert(0, 0.0);
    cuts.push(PI);
    let total: f64 = cuts.windows(2).map(|w| integrate(f, w[0], w[1], 1e-17, 100).value).sum();
    total / PI
}

/// Lévy-measure integral `int_gamma^inf (1 - e^{-k x}) d alpha x^(-1-alpha) dx`.
pub fn truncated_laplace_exponent(alpha: f64, d: f64, gamma_cut: f64, kappa: f64) -> f64 {
    let full = d * gamma(1.0 - alpha) * kappa.powf(alpha);
    full - d * small_jump_integral(alpha, gamma_cut, kappa)
}

// int_0^gamma (1 - e^{-k x}) alpha x^(-1-alpha) dx as an alternating series.
fn small_jump_integral(alpha: f64, gamma_cut: f64, kappa: f64) -> f64 {
    let z = kappa * gamma_cut;
    if z > 20.0 {
        let q = integrate(|x: f64| -(-kappa * x).exp_m1() * alpha * x.powf(-1.0 - alpha), 0.0, gamma_cut, 1e-14, 2000);
        return q.value;
    }
    let mut sum = 0.0;
    let mut term = 1.0; // z^j / j!
    for j in 1..200 {
        term *= z / j as f64;
        let add = if j % 2 == 1 { term } else { -term } / (j as f64 - alpha);
        sum += add;
        if add.abs() < 1e-18 * sum.abs().max(1e-300) {
            break;
        }
    }
    alpha * gamma_cut.powf(-alpha) * sum
}

/// Truncated jump representation of a stable subordinator with Lévy density
/// `d alpha x^(-1-alpha)` restricted to jumps above `gamma`, on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubordinatorPath {
    pub alpha: f64,
    pub d: f64,
    pub gamma: f64,
    pub horizon: f64,
    times: Vec<f64>,
    cumulative: Vec<f64>,
}

impl SubordinatorPath {
    /// Path from explicit jumps; times must be nondecreasing in `[0, horizon]`.
    pub fn from_jumps(alpha: f64, d: f64, gamma: f64, horizon: f64, jumps: &[(f64, f64)]) -> Result<Self, LimitError> {
        let mut times = Vec::with_capacity(jumps.len());
        let mut cumulative = Vec::with_capacity(jumps.len());
        let mut acc = 0.0;
        let mut prev = 0.0;
        for &(t, x) in jumps {
            if !(t >= prev && t <= horizon && x > gamma) {
                return Err(LimitError::Argument(format!("jump ({t}, {x}) out of order or below truncation")));
            }
            prev = t;
            acc += x;
            times.push(t);
            cumulative.push(acc);
        }
        Ok(SubordinatorPath { alpha, d, gamma, horizon, times, cumulative })
    }

    pub fn jump_count(&self) -> usize {
        self.times.len()
    }

    /// Jumps as (time, size) pairs.
    pub fn jumps(&self) -> Vec<(f64, f64)> {
        let mut prev = 0.0;
        self.times
            .iter()
            .zip(&self.cumulative)
            .map(|(&t, &c)| {
                let x = c - prev;
                prev = c;
                (t, x)
            })
            .collect()
    }

    /// `S(t) = sum of jumps at times <= t`.
    pub fn eval(&self, t: f64) -> f64 {
        match self.times.partition_point(|&s| s <= t) {
            0 => 0.0,
            i => self.cumulative[i - 1],
        }
    }

    /// Laplace exponent of the truncated law per unit time.
    pub fn truncated_exponent(&self, kappa: f64) -> f64 {
        truncated_laplace_exponent(self.alpha, self.d, self.gamma, kappa)
    }

    /// Mean mass of the dropped jumps on `[0, horizon]`.
    pub fn truncation_mass(&self) -> f64 {
        self.horizon * self.d * self.alpha * self.gamma.powf(1.0 - self.alpha) / (1.0 - self.alpha)
    }
}

/// Poisson jumps on `[0, horizon] x (gamma, inf)` with intensity `dt d alpha x^(-1-alpha) dx`.
pub fn subordinator_path<R: Rng>(
    alpha: f64,
    d: f64,
    horizon: f64,
    gamma_cut: f64,
    max_jumps: u64,
    rng: &mut R,
) -> Result<SubordinatorPath, LimitError> {
    check_index(alpha)?;
    if !(d > 0.0 && horizon >= 0.0 && gamma_cut > 0.0 && horizon.is_finite()) {
        return Err(LimitError::Argument("need d > 0, horizon >= 0, gamma > 0".into()));
    }
    let mean = horizon * d * gamma_cut.powf(-alpha);
    if mean > max_jumps as f64 {
        return Err(LimitError::Resource { expected: mean, cap: max_jumps });
    }
    let count = if mean > 0.0 {
        Poisson::new(mean).map_err(|e| LimitError::Argument(e.to_string()))?.sample(rng) as usize
    } else {
        0
    };
    let mut jumps: Vec<(f64, f64)> = (0..count)
        .map(|_| {
            let t = horizon * rng.gen::<f64>();
            let u: f64 = 1.0 - rng.gen::<f64>();
            (t, gamma_cut * u.powf(-1.0 / alpha))
        })
        .collect();
    jumps.sort_by(|a, b| a.0.total_cmp(&b.0));
    SubordinatorPath::from_jumps(alpha, d, gamma_cut, horizon, &jumps)
}

/// `outer(...(inner(t)))` on each grid point; `paths` runs outer to inner.
pub fn compose(paths: &[&SubordinatorPath], grid: &[f64]) -> Result<Vec<f64>, LimitError> {
    if paths.is_empty() {
        return Err(LimitError::Argument("need at least one path".into()));
    }
    grid.iter()
        .map(|&t| {
            let mut v = t;
            for p in paths.iter().rev() {
                if v > p.horizon {
                    return Err(LimitError::Horizon { value: v, horizon: p.horizon });
                }
                v = p.eval(v);
            }
            Ok(v)
        })
        .collect()
}

/// Marginal draw of `V_1 ∘ ... ∘ V_m (t)` from exact stable increments;
/// `indices[i]`, `constants[i]` give the exponent `c_i k^{a_i}` of `V_{i+1}`,
/// listed outer to inner.
pub fn compose_marginal<R: Rng>(indices: &[f64], constants: &[f64], t: f64, rng: &mut R) -> f64 {
    let mut v = t;
    for (&a, &c) in indices.iter().zip(constants).rev() {
        if v == 0.0 {
            break;
        }
        v = stable_marginal(a, c, v, rng);
    }
    v
}

/// Dropping jumps below `gamma` keeps draws finite-activity; `Identity` legs
/// come from zero-length generation steps.
#[derive(Debug, Clone, PartialEq)]
pub enum Leg {
    Identity,
    Path(SubordinatorPath),
}

impl Leg {
    fn eval(&self, t: f64) -> f64 {
        match self {
            Leg::Identity => t,
            Leg::Path(p) => p.eval(t),
        }
    }
}

/// Neveu's branching process sampled on a generation grid: `W(r_i, ·)` is
/// the composition of the first i legs, leg i having index `exp(-(r_i - r_{i-1}))`
/// and Laplace exponent `k^index`.
#[derive(Debug, Clone, PartialEq)]
pub struct CsbpFamily {
    pub grid: Vec<f64>,
    pub legs: Vec<Leg>,
    pub horizon: f64,
}

/// Lévy-density multiplier giving Laplace exponent `k^alpha`.
pub fn unit_stable_density(alpha: f64) -> f64 {
    1.0 / gamma(1.0 - alpha)
}

fn check_grid(grid: &[f64]) -> Result<(), LimitError> {
    if grid.is_empty() || grid[0] != 0.0 || grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(LimitError::Argument("generation grid must start at 0 and increase strictly".into()));
    }
    Ok(())
}

/// Samples independent truncated legs; each leg's horizon is the previous
/// composite's value at `horizon`, so every composite is defined on `[0, horizon]`.
pub fn neveu_family(
    grid: &[f64],
    horizon: f64,
    gamma_cut: f64,
    seed: u64,
    max_jumps: u64,
) -> Result<CsbpFamily, LimitError> {
    check_grid(grid)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut legs = Vec::with_capacity(grid.len() - 1);
    let mut reach = horizon;
    for w in grid.windows(2) {
        let index = (-(w[1] - w[0])).exp();
        let leg = if index >= 1.0 {
            Leg::Identity
        } else {
            Leg::Path(subordinator_path(index, unit_stable_density(index), reach, gamma_cut, max_jumps, &mut rng)?)
        };
        reach = leg.eval(reach);
        legs.push(leg);
    }
    Ok(CsbpFamily { grid: grid.to_vec(), legs, horizon })
}

impl CsbpFamily {
    /// `W(r_i, t)` for grid index i.
    pub fn eval(&self, i: usize, t: f64) -> Result<f64, LimitError> {
        if t > self.horizon {
            return Err(LimitError::Horizon { value: t, horizon: self.horizon });
        }
        Ok(self.legs[..i].iter().fold(t, |v, leg| leg.eval(v)))
    }

    /// Exact `E exp(-k W(r_i, t))` of the truncated family.
    pub fn truncated_laplace(&self, i: usize, t: f64, kappa: f64) -> f64 {
        let exponent = self.legs[..i].iter().rev().fold(kappa, |k, leg| match leg {
            Leg::Identity => k,
            Leg::Path(p) => p.truncated_exponent(k),
        });
        (-t * exponent).exp()
    }
}

/// `exp(-t k^{e^{-r}})`.
pub fn neveu_laplace(r: f64, t: f64, kappa: f64) -> f64 {
    (-t * kappa.powf((-r).exp())).exp()
}

/// `E exp(-k W(r, t))` of the truncated family on a generation grid, without sampling.
pub fn neveu_truncated_laplace(grid: &[f64], gamma_cut: f64, t: f64, kappa: f64) -> Result<f64, LimitError> {
    check_grid(grid)?;
    let exponent = grid.windows(2).rev().fold(kappa, |k, w| {
        let index = (-(w[1] - w[0])).exp();
        truncated_laplace_exponent(index, unit_stable_density(index), gamma_cut, k)
    });
    Ok((-t * exponent).exp())
}

/// Exact marginal draw of `W(r_last, t)` on a grid from stable increments.
pub fn neveu_marginal<R: Rng>(grid: &[f64], t: f64, rng: &mut R) -> Result<f64, LimitError> {
    check_grid(grid)?;
    let mut v = t;
    for w in grid.windows(2) {
        v = stable_marginal((-(w[1] - w[0])).exp(), 1.0, v, rng);
    }
    Ok(v)
}

/// One point of a limit curve with its per-level arcsine terms.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub theta: f64,
    pub value: f64,
    pub terms: Vec<f64>,
}

fn check_thetas(thetas: &[f64]) -> Result<(), LimitError> {
    if thetas.is_empty() {
        return Err(LimitError::Argument("empty theta grid".into()));
    }
    if let Some(t) = thetas.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
        return Err(LimitError::Argument(format!("theta {t} must be positive")));
    }
    Ok(())
}

/// `sum_{k<=l*} [q(k/L) - q((k-1)/L)] Asl_{alpha_bar_k}(1/(1+theta))`.
pub fn theorem1_curve(spec: &HierarchySpec, q: &QTable, thetas: &[f64]) -> Result<Vec<CurvePoint>, LimitError> {
    check_thetas(thetas)?;
    if q.levels() != spec.levels() {
        return Err(LimitError::Argument(format!("q table has {} levels, spec has {}", q.levels(), spec.levels())));
    }
    let plan = spec.scaling_plan()?;
    thetas
        .iter()
        .map(|&theta| {
            let u = 1.0 / (1.0 + theta);
            let terms = (1..=plan.lstar).map(|k| asl_cdf(plan.alpha_bar(k), u)).collect::<Result<Vec<_>, _>>()?;
            let value = terms.iter().enumerate().map(|(i, a)| q.weight(i + 1) * a).sum();
            Ok(CurvePoint { theta, value, terms })
        })
        .collect()
}

/// `int_0^{r*} q'(x) Asl_{alpha(x)}(1/(1+theta)) dx` with
/// `alpha(x) = exp(-(R(r*) - R(x)))`; both profiles are tables on uniform
/// grids of [0,1] and `q'` comes from centered differences.
pub fn corollary1_curve(
    r_values: &[f64],
    q_values: &[f64],
    rho: f64,
    thetas: &[f64],
) -> Result<Vec<CurvePoint>, LimitError> {
    check_thetas(thetas)?;
    let q = QTable::new(q_values.to_vec()).map_err(|e| LimitError::Argument(e.to_string()))?;
    let r_star = continuum_boundary(r_values, rho)?;
    let m = q.levels();
    let h = 1.0 / m as f64;
    let qv = q.values();
    let slopes: Vec<f64> = (0..=m)
        .map(|i| match i {
            0 => (qv[1] - qv[0]) / h,
            i if i == m => (qv[m] - qv[m - 1]) / h,
            i => (qv[i + 1] - qv[i - 1]) / (2.0 * h),
        })
        .collect();
    let r_top = interpolate_table(r_values, r_star);
    let mut breaks: Vec<f64> = (0..=m).map(|i| i as f64 * h).collect();
    let nr = r_values.len() - 1;
    breaks.extend((0..=nr).map(|i| i as f64 / nr as f64));
    breaks.push(r_star);
    breaks.retain(|&x| x <= r_star);
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    thetas
        .iter()
        .map(|&theta| {
            let u = 1.0 / (1.0 + theta);
            if r_star == 0.0 {
                return Ok(CurvePoint { theta, value: 0.0, terms: Vec::new() });
            }
            let integrand = |x: f64| {
                let alpha = (-(r_top - interpolate_table(r_values, x))).exp();
                let asl = if alpha >= 1.0 { 0.0 } else { beta_reg(alpha, 1.0 - alpha, u) };
                interpolate_table(&slopes, x) * asl
            };
            let mut value = 0.0;
            let mut residual = 0.0;
            for w in breaks.windows(2) {
                let r = integrate(integrand, w[0], w[1], 1e-12, 200);
                value += r.value;
                residual += r.error;
            }
            if residual > 1e-6 {
                return Err(LimitError::Numeric { residual, tolerance: 1e-6 });
            }
            Ok(CurvePoint { theta, value, terms: Vec::new() })
        })
        .collect()
}

/// Writes `theta, value, asl_1..asl_m` rows.
pub fn write_curve_csv<W: Write>(points: &[CurvePoint], out: W) -> Result<(), LimitError> {
    let mut w = csv::Writer::from_writer(out);
    let width = points.iter().map(|p| p.terms.len()).max().unwrap_or(0);
    let mut header = vec!["theta".to_string(), "value".into()];
    header.extend((1..=width).map(|k| format!("asl_{k}")));
    w.write_record(&header)?;
    for p in points {
        let mut row = vec![p.theta.to_string(), p.value.to_string()];
        row.extend((0..width).map(|i| p.terms.get(i).map_or(String::new(), |v| v.to_string())));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Constants of the clock limits. Indices are 1-based levels stored at `k - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitConstants {
    pub lstar: usize,
    /// Tail constants `D_k`, k = 1..=l*; the last one is computed numerically.
    pub tail: Vec<f64>,
    /// Laplace constants `d_m` of the aggregated marks, m = l*+1..=L.
    pub aggregate: Vec<f64>,
    /// `c_k = D_k Gamma(1 - alpha_k)`, k = 1..=l*.
    pub c: Vec<f64>,
    /// Laplace constants `b_k` of the limit clocks, k = 1..=l*.
    pub b: Vec<f64>,
}

impl LimitConstants {
    /// `d_m` for m in l*+1..=L.
    pub fn aggregate_at(&self, m: usize) -> f64 {
        self.aggregate[m - self.lstar - 1]
    }
}

/// `d_L = Gamma(1 - alpha_L)`, `d_m = d_{m+1}^{alpha_m/alpha_{m+1}} Gamma(1 - alpha_m/alpha_{m+1})`
/// for m down to `from`.
pub fn aggregate_constants(spec: &HierarchySpec, from: usize) -> Vec<f64> {
    let levels = spec.levels();
    let mut d = vec![0.0; levels + 1 - from];
    let mut cur = gamma(1.0 - spec.alpha(levels));
    d[levels - from] = cur;
    for m in (from..levels).rev() {
        let ratio = spec.alpha(m) / spec.alpha(m + 1);
        cur = cur.powf(ratio) * gamma(1.0 - ratio);
        d[m - from] = cur;
    }
    d
}

/// `E[Z^p]` for a one-sided stable `Z` with `E e^{-kZ} = exp(-c k^beta)`, by
/// quadrature of `int_0^inf P(Z >= s) p s^(p-1) ds`.
pub fn stable_moment_numeric(beta: f64, c: f64, p: f64) -> Result<f64, LimitError> {
    if !(p > 0.0 && p < beta) {
        return Err(LimitError::Argument(format!("moment order {p} must lie in (0, {beta})")));
    }
    // s = w^(1/p) on (0,1]; s = w^(-1/(beta-p)) beyond 1 flattens the tail.
    let head = integrate(|w: f64| stable_survival(beta, c, w.powf(1.0 / p)), 0.0, 1.0, 1e-11, 400);
    let e = beta - p;
    let tail = integrate(
        |w: f64| {
            if w == 0.0 {
                return 0.0;
            }
            let s = w.powf(-1.0 / e);
            stable_survival(beta, c, s) * p * s.powf(p - 1.0) * s / (e * w)
        },
        0.0,
        1.0,
        1e-11,
        400,
    );
    let residual = head.error + tail.error;
    if residual > 1e-7 {
        return Err(LimitError::Numeric { residual, tolerance: 1e-7 });
    }
    Ok(head.value + tail.value)
}

/// All constants for a spec. `D_{l*}` is `Gamma(1 + alpha_{l*}) E[Z^{alpha_{l*}}]`
/// with `Z` the limit of the aggregated marks one level down, evaluated by
/// quadrature of the stable survival function; when `l* = L` the aggregate is a
/// single exponential holding time and `D_L = Gamma(1 + alpha_L)`.
pub fn constants(spec: &HierarchySpec) -> Result<LimitConstants, LimitError> {
    let lstar = spec.aging_level()?;
    let levels = spec.levels();
    let aggregate = if lstar < levels { aggregate_constants(spec, lstar + 1) } else { Vec::new() };
    let mut tail: Vec<f64> = (1..lstar).map(|k| gamma(1.0 + spec.alpha(k))).collect();
    let a = spec.alpha(lstar);
    let top = if lstar < levels {
        gamma(1.0 + a) * stable_moment_numeric(spec.alpha(lstar + 1), aggregate[0], a)?
    } else {
        gamma(1.0 + a)
    };
    tail.push(top);
    let c: Vec<f64> = (1..=lstar).map(|k| tail[k - 1] * gamma(1.0 - spec.alpha(k))).collect();
    let mut b = vec![0.0; lstar];
    b[lstar - 1] = c[lstar - 1];
    for k in (1..lstar).rev() {
        b[k - 1] = c[k - 1] * b[k].powf(spec.alpha(k));
    }
    Ok(LimitConstants { lstar, tail, aggregate, c, b })
}
