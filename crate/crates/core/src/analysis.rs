//! Estimators used by the validation suite and exact oracles for small trees.
//!
//! `exact_pi` splits `Pi_k(t,s)` into the law of the leaf at time t, started
//! uniform, times the probability of keeping the level-k prefix for a further
//! time s. The second factor is the survival function of the generator with
//! prefix-changing transitions turned into killing. Both semigroups are
//! evaluated by uniformization.

use crate::environment::TrapLandscape;
use crate::numerics::poisson_weights;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use std::io::Write;
use thiserror::Error;

/// Truncation mass of the Poisson weights in uniformization.
pub const UNIFORMIZATION_TAIL: f64 = 1e-10;

/// Largest tree handled by [`build_generator`].
pub const MAX_GENERATOR_LEAVES: usize = 4096;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("no samples")]
    Empty,
    #[error("tree has {0} leaves; exact oracles are capped at {MAX_GENERATOR_LEAVES}")]
    TooLarge(u64),
    #[error("generator invariant violated: {0}")]
    Invariant(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Point estimate with standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

impl Estimate {
    /// Whether `target` lies within `z` standard errors.
    pub fn covers(&self, target: f64, z: f64) -> bool {
        (self.value - target).abs() <= z * self.stderr
    }
}

/// Wald estimate of a proportion. When every trial fails or every trial
/// succeeds, the variance uses the continuity-corrected `(x + 1/2)/(N + 1)` so
/// the interval does not collapse to zero width.
pub fn binomial_ci(successes: u64, trials: u64) -> Estimate {
    if trials == 0 {
        return Estimate { value: f64::NAN, stderr: f64::NAN };
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let pv = if successes == 0 || successes == trials { (successes as f64 + 0.5) / (n + 1.0) } else { p };
    Estimate { value: p, stderr: (pv * (1.0 - pv) / n).sqrt() }
}

/// Mean with the standard error of the mean.
pub fn mean_estimate(samples: &[f64]) -> Result<Estimate, AnalysisError> {
    if samples.len() < 2 {
        return Err(AnalysisError::Empty);
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(Estimate { value: mean, stderr: (var / n).sqrt() })
}

/// Kolmogorov-Smirnov distance between the empirical CDF and `cdf`.
pub fn ecdf_ks<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> Result<f64, AnalysisError> {
    if samples.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    Ok(d)
}

/// Two-sample Kolmogorov-Smirnov distance.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<f64, AnalysisError> {
    if a.is_empty() || b.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let mut xa = a.to_vec();
    let mut xb = b.to_vec();
    xa.sort_by(f64::total_cmp);
    xb.sort_by(f64::total_cmp);
    let (na, nb) = (xa.len() as f64, xb.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < xa.len() && j < xb.len() {
        let x = xa[i].min(xb[j]);
        while i < xa.len() && xa[i] <= x {
            i += 1;
        }
        while j < xb.len() && xb[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

/// Default fraction of top order statistics used by [`hill_tail`].
pub const DEFAULT_HILL_FRACTION: f64 = 0.05;

/// Hill estimate of the tail index from the largest `fraction * N` samples.
pub fn hill_tail(samples: &[f64], fraction: f64) -> Result<f64, AnalysisError> {
    if samples.is_empty() {
        return Err(AnalysisError::Empty);
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(AnalysisError::Argument(format!("top fraction {fraction} outside (0,1)")));
    }
    let mut xs = samples.to_vec();
    xs.sort_by(|a, b| b.total_cmp(a));
    let k = ((fraction * xs.len() as f64).floor() as usize).max(1);
    if k >= xs.len() || !(xs[k] > 0.0) {
        return Err(AnalysisError::Argument("not enough positive samples for the Hill estimate".into()));
    }
    let threshold = xs[k].ln();
    let s: f64 = xs[..k].iter().map(|x| x.ln() - threshold).sum();
    Ok(k as f64 / s)
}

/// Upper-tail p-value of Pearson's chi-square statistic.
pub fn chi_square_pvalue(observed: &[u64], probabilities: &[f64]) -> Result<f64, AnalysisError> {
    if observed.len() != probabilities.len() || observed.len() < 2 {
        return Err(AnalysisError::Argument("need matching observed/expected of length >= 2".into()));
    }
    let total: u64 = observed.iter().sum();
    if total == 0 {
        return Err(AnalysisError::Empty);
    }
    let mut stat = 0.0;
    let mut cells = 0usize;
    for (&o, &p) in observed.iter().zip(probabilities) {
        let e = p * total as f64;
        if e > 0.0 {
            stat += (o as f64 - e).powi(2) / e;
            cells += 1;
        } else if o > 0 {
            return Ok(0.0);
        }
    }
    if cells < 2 {
        return Ok(1.0);
    }
    let dist = ChiSquared::new((cells - 1) as f64).map_err(|e| AnalysisError::Argument(e.to_string()))?;
    Ok(1.0 - dist.cdf(stat))
}

/// Dense jump kernel and generator of the leaf dynamics on a small tree.
/// Leaves are indexed lexicographically.
#[derive(Debug, Clone)]
pub struct GeneratorMatrix {
    levels: usize,
    branching: u32,
    leaves: Vec<Vec<u32>>,
    jump: Vec<f64>,
    generator: Vec<f64>,
    leaf_lambda: Vec<f64>,
    invariant: Vec<f64>,
}

impl GeneratorMatrix {
    pub fn size(&self) -> usize {
        self.leaves.len()
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn leaf(&self, i: usize) -> &[u32] {
        &self.leaves[i]
    }

    /// Leaf index of 1-based coordinates.
    pub fn index_of(&self, coords: &[u32]) -> usize {
        coords.iter().fold(0usize, |acc, &c| acc * self.branching as usize + (c as usize - 1))
    }

    /// Jump probability `W(mu, mu')`.
    pub fn jump_probability(&self, i: usize, j: usize) -> f64 {
        self.jump[i * self.size() + j]
    }

    /// Rate `lambda(mu) W(mu, mu')`, self-jumps included.
    pub fn rate(&self, i: usize, j: usize) -> f64 {
        self.leaf_lambda[i] * self.jump_probability(i, j)
    }

    /// Generator entry: off-diagonal rates, diagonal minus the off-row sum.
    pub fn generator(&self, i: usize, j: usize) -> f64 {
        self.generator[i * self.size() + j]
    }

    /// Unnormalized invariant measure `prod_k lambda^-1(mu|_k)`.
    pub fn invariant_measure(&self, i: usize) -> f64 {
        self.invariant[i]
    }

    /// Row-vector distribution at time `t` started from `initial`.
    pub fn evolve(&self, initial: &[f64], t: f64) -> Vec<f64> {
        let size = self.size();
        let rate = self.uniformization_rate();
        if rate == 0.0 || t == 0.0 {
            return initial.to_vec();
        }
        let p = self.uniformized(rate, None);
        let (first, weights) = poisson_weights(rate * t, UNIFORMIZATION_TAIL);
        let mut v = initial.to_vec();
        let mut acc = vec![0.0; size];
        for j in 0..first + weights.len() {
            if j >= first {
                let w = weights[j - first];
                for (a, x) in acc.iter_mut().zip(&v) {
                    *a += w * x;
                }
            }
            let mut next = vec![0.0; size];
            for (r, &vr) in v.iter().enumerate() {
                if vr != 0.0 {
                    let row = &p[r * size..(r + 1) * size];
                    for (nx, &pr) in next.iter_mut().zip(row) {
                        *nx += vr * pr;
                    }
                }
            }
            v = next;
        }
        acc
    }

    /// Probability, from each leaf, of keeping the level-k prefix for time `s`.
    pub fn prefix_survival(&self, k: usize, s: f64) -> Vec<f64> {
        let size = self.size();
        let rate = self.uniformization_rate();
        if rate == 0.0 || s == 0.0 {
            return vec![1.0; size];
        }
        let p = self.uniformized(rate, Some(k));
        let (first, weights) = poisson_weights(rate * s, UNIFORMIZATION_TAIL);
        let mut u = vec![1.0; size];
        let mut acc = vec![0.0; size];
        for j in 0..first + weights.len() {
            if j >= first {
                let w = weights[j - first];
                for (a, x) in acc.iter_mut().zip(&u) {
                    *a += w * x;
                }
            }
            u = (0..size).map(|r| p[r * size..(r + 1) * size].iter().zip(&u).map(|(a, b)| a * b).sum()).collect();
        }
        acc
    }

    fn uniformization_rate(&self) -> f64 {
        (0..self.size()).map(|i| -self.generator(i, i)).fold(0.0, f64::max)
    }

    // I + Q/rate, restricted to transitions inside level-k prefix blocks when `block` is set.
    fn uniformized(&self, rate: f64, block: Option<usize>) -> Vec<f64> {
        let size = self.size();
        let mut p = vec![0.0; size * size];
        for i in 0..size {
            for j in 0..size {
                let keep = match block {
                    Some(k) => self.leaves[i][..k] == self.leaves[j][..k],
                    None => true,
                };
                if keep {
                    p[i * size + j] = self.generator(i, j) / rate + if i == j { 1.0 } else { 0.0 };
                }
            }
        }
        p
    }
}

fn ancestor_products(landscape: &TrapLandscape, leaf: &[u32]) -> Vec<f64> {
    // lambda at levels 0..L-1 (root first).
    (0..leaf.len()).map(|l| landscape.lambda(&leaf[..l])).collect()
}

/// Jump kernel `W(mu, mu') = sum_{l <= glca ^ (L-1)} (1 - lambda(mu|_l)) prod_{l<l'<L} lambda(mu|_l') / n^(L-l)`.
pub fn jump_kernel(landscape: &TrapLandscape, from: &[u32], to: &[u32]) -> f64 {
    let levels = from.len();
    let n = landscape.spec().branching() as f64;
    let g = from.iter().zip(to).take_while(|(a, b)| a == b).count().min(levels - 1);
    let lam = ancestor_products(landscape, from);
    (0..=g)
        .map(|l| {
            let climb: f64 = lam[l + 1..].iter().product();
            (1.0 - lam[l]) * climb / n.powi((levels - l) as i32)
        })
        .sum()
}

/// Dense generator over all leaves; verifies stochasticity and reversibility.
pub fn build_generator(landscape: &TrapLandscape) -> Result<GeneratorMatrix, AnalysisError> {
    let spec = landscape.spec();
    let levels = spec.levels();
    let n = spec.branching();
    let total = (n as u64).checked_pow(levels as u32).unwrap_or(u64::MAX);
    if total > MAX_GENERATOR_LEAVES as u64 {
        return Err(AnalysisError::TooLarge(total));
    }
    let size = total as usize;
    let leaves: Vec<Vec<u32>> = (0..size)
        .map(|mut idx| {
            let mut c = vec![0u32; levels];
            for slot in c.iter_mut().rev() {
                *slot = (idx % n as usize) as u32 + 1;
                idx /= n as usize;
            }
            c
        })
        .collect();
    let mut jump = vec![0.0; size * size];
    for i in 0..size {
        for j in 0..size {
            jump[i * size + j] = jump_kernel(landscape, &leaves[i], &leaves[j]);
        }
    }
    let leaf_lambda: Vec<f64> = leaves.iter().map(|c| landscape.lambda(c)).collect();
    let invariant: Vec<f64> = leaves.iter().map(|c| (1..=levels).map(|k| landscape.depth(&c[..k])).product()).collect();
    let mut generator = vec![0.0; size * size];
    for i in 0..size {
        let mut off = 0.0;
        for j in 0..size {
            if i != j {
                let r = leaf_lambda[i] * jump[i * size + j];
                generator[i * size + j] = r;
                off += r;
            }
        }
        generator[i * size + i] = -off;
    }
    let g = GeneratorMatrix { levels, branching: n, leaves, jump, generator, leaf_lambda, invariant };
    for i in 0..size {
        let row: f64 = (0..size).map(|j| g.jump_probability(i, j)).sum();
        if (row - 1.0).abs() > 1e-12 {
            return Err(AnalysisError::Invariant(format!("jump row {i} sums to {row}")));
        }
        for j in (i + 1)..size {
            let a = g.invariant[i] * g.rate(i, j);
            let b = g.invariant[j] * g.rate(j, i);
            if (a - b).abs() > 1e-10 * a.abs().max(b.abs()) {
                return Err(AnalysisError::Invariant(format!("detailed balance fails for ({i},{j}): {a} vs {b}")));
            }
        }
    }
    Ok(g)
}

/// `Pi_k(t,s)` for the walker started uniform.
pub fn exact_pi(generator: &GeneratorMatrix, k: usize, t: f64, s: f64) -> Result<f64, AnalysisError> {
    if k == 0 || k > generator.levels() {
        return Err(AnalysisError::Argument(format!("level {k} outside 1..={}", generator.levels())));
    }
    if !(t >= 0.0 && s >= 0.0) {
        return Err(AnalysisError::Argument(format!("negative time t={t}, s={s}")));
    }
    let size = generator.size();
    let start = vec![1.0 / size as f64; size];
    let at_t = generator.evolve(&start, t);
    let survive = generator.prefix_survival(k, s);
    Ok(at_t.iter().zip(&survive).map(|(a, b)| a * b).sum())
}

/// One row of an oracle comparison report.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleRow {
    pub k: usize,
    pub t: f64,
    pub s: f64,
    pub exact: f64,
    pub estimate: Estimate,
}

impl OracleRow {
    pub fn pass(&self, z: f64) -> bool {
        self.estimate.covers(self.exact, z)
    }
}

/// Writes `k, t, s, exact, mc_estimate, stderr, pass` rows.
pub fn write_oracle_csv<W: Write>(rows: &[OracleRow], z: f64, out: W) -> Result<(), AnalysisError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["k", "t", "s", "exact", "mc_estimate", "stderr", "pass"])?;
    for r in rows {
        w.write_record([
            r.k.to_string(),
            r.t.to_string(),
            r.s.to_string(),
            r.exact.to_string(),
            r.estimate.value.to_string(),
            r.estimate.stderr.to_string(),
            if r.pass(z) { "pass".into() } else { "fail".to_string() },
        ])?;
    }
    w.flush()?;
    Ok(())
}
