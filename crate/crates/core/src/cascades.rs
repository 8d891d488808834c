//! Nested marked point configurations and the clock functionals acting on them.
//!
//! A cascade of depth l is a forest: level-1 marks `(t, x)` each carrying an
//! ordered list of level-2 marks, and so on. `T_l(m)(t)` sums the leaf values
//! reachable from level-1 marks with `t_j1 <= t`, descending only into
//! children with `t <= x` of their parent. `T̄` merges levels 1 and 2 by
//! laying the children of consecutive level-1 marks end to end.

use crate::dynamics::Trajectory;
use crate::environment::TrapLandscape;
use crate::hierarchy::{HierarchySpec, ScalingPlan};
use crate::numerics::integrate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Poisson};
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CascadeError {
    #[error("cascade depth must be at least {min}, got {got}")]
    Depth { min: usize, got: usize },
    #[error("level k = {k} outside 1..={depth}")]
    Level { k: usize, depth: usize },
    #[error("mark at level {level} has t = {t}, x = {x}; both must be positive and finite")]
    Value { level: usize, t: f64, x: f64 },
    #[error("sibling times not strictly increasing at level {level}")]
    Order { level: usize },
    #[error("mark below the declared depth {depth}")]
    TooDeep { depth: usize },
    #[error("{what}: limit {limit} exceeded (reached {reached})")]
    Resource { what: &'static str, limit: u64, reached: u64 },
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("quadrature residual {residual} above tolerance")]
    Numeric { residual: f64 },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// A mark with its children one level down.
#[derive(Debug, Clone, PartialEq)]
pub struct Mark {
    pub t: f64,
    pub x: f64,
    pub children: Vec<Mark>,
}

impl Mark {
    pub fn leaf(t: f64, x: f64) -> Self {
        Mark { t, x, children: Vec::new() }
    }

    pub fn new(t: f64, x: f64, children: Vec<Mark>) -> Self {
        Mark { t, x, children }
    }
}

/// Finite cascade of a fixed depth.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeMeasure {
    depth: usize,
    roots: Vec<Mark>,
}

fn validate(marks: &[Mark], level: usize, depth: usize) -> Result<(), CascadeError> {
    if level > depth && !marks.is_empty() {
        return Err(CascadeError::TooDeep { depth });
    }
    let mut prev = 0.0;
    for m in marks {
        if !(m.t > 0.0 && m.x > 0.0 && m.t.is_finite() && m.x.is_finite()) {
            return Err(CascadeError::Value { level, t: m.t, x: m.x });
        }
        if m.t <= prev {
            return Err(CascadeError::Order { level });
        }
        prev = m.t;
        validate(&m.children, level + 1, depth)?;
    }
    Ok(())
}

impl CascadeMeasure {
    /// Checks positivity, strict ordering of sibling times and the depth.
    pub fn new(depth: usize, roots: Vec<Mark>) -> Result<Self, CascadeError> {
        if depth == 0 {
            return Err(CascadeError::Depth { min: 1, got: 0 });
        }
        validate(&roots, 1, depth)?;
        Ok(CascadeMeasure { depth, roots })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn roots(&self) -> &[Mark] {
        &self.roots
    }

    /// Re-validates the ordered-labeling invariant.
    pub fn check(&self) -> Result<(), CascadeError> {
        validate(&self.roots, 1, self.depth)
    }

    /// Number of marks per level.
    pub fn counts(&self) -> Vec<usize> {
        fn walk(marks: &[Mark], level: usize, out: &mut [usize]) {
            if marks.is_empty() {
                return;
            }
            out[level - 1] += marks.len();
            for m in marks {
                walk(&m.children, level + 1, out);
            }
        }
        let mut out = vec![0; self.depth];
        walk(&self.roots, 1, &mut out);
        out
    }

    /// The restriction `m|_l` to the first `l` levels.
    pub fn truncated(&self, depth: usize) -> Result<CascadeMeasure, CascadeError> {
        if depth == 0 || depth > self.depth {
            return Err(CascadeError::Level { k: depth, depth: self.depth });
        }
        fn cut(marks: &[Mark], left: usize) -> Vec<Mark> {
            marks
                .iter()
                .map(|m| Mark {
                    t: m.t,
                    x: m.x,
                    children: if left > 1 { cut(&m.children, left - 1) } else { Vec::new() },
                })
                .collect()
        }
        Ok(CascadeMeasure { depth, roots: cut(&self.roots, depth) })
    }

    /// Cascade representation of a trajectory: level-k marks are the visits to
    /// level-k vertices, labelled 1, 2, ... within their parent visit; internal
    /// marks carry their child count and leaves carry the holding times. Visits
    /// still open at the end keep the children completed so far.
    pub fn from_trajectory(traj: &Trajectory) -> CascadeMeasure {
        let depth = traj.levels();
        let events: Vec<(f64, usize)> = traj.events().map(|e| (e.holding, e.stranding_level)).collect();
        let mut pos = 0usize;
        let roots = build_visits(&events, &mut pos, 1, depth);
        CascadeMeasure { depth, roots }
    }

    /// Total of `f_k(t, x)` over all marks.
    pub fn integrate(&self, f: &StepTestFunction) -> f64 {
        fn walk(marks: &[Mark], level: usize, f: &StepTestFunction) -> f64 {
            marks.iter().map(|m| f.value(level, m.t, m.x) + walk(&m.children, level + 1, f)).sum()
        }
        walk(&self.roots, 1, f)
    }

    /// Writes `depth, parent_index_path, t, x` rows in depth-first order; the
    /// path lists the 1-based sibling indices of the ancestors, joined by '/'.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), CascadeError> {
        fn walk<W: Write>(
            marks: &[Mark],
            level: usize,
            path: &mut Vec<usize>,
            w: &mut csv::Writer<W>,
        ) -> Result<(), CascadeError> {
            for (i, m) in marks.iter().enumerate() {
                let p: Vec<String> = path.iter().map(|v| v.to_string()).collect();
                w.write_record([level.to_string(), p.join("/"), m.t.to_string(), m.x.to_string()])?;
                path.push(i + 1);
                walk(&m.children, level + 1, path, w)?;
                path.pop();
            }
            Ok(())
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["depth", "parent_index_path", "t", "x"])?;
        walk(&self.roots, 1, &mut Vec::new(), &mut w)?;
        w.flush()?;
        Ok(())
    }
}

// Marks at `level` forming the children list of one visit at `level - 1`.
fn build_visits(events: &[(f64, usize)], pos: &mut usize, level: usize, depth: usize) -> Vec<Mark> {
    let mut marks = Vec::new();
    while *pos < events.len() {
        let t = (marks.len() + 1) as f64;
        let mark = if level == depth {
            let (holding, _) = events[*pos];
            *pos += 1;
            Mark::leaf(t, holding)
        } else {
            let children = build_visits(events, pos, level + 1, depth);
            Mark::new(t, children.len() as f64, children)
        };
        marks.push(mark);
        // The last consumed jump closed this mark; it closes the parent visit too
        // when it strands above the parent's level.
        let stranding = events[*pos - 1].1;
        if level >= 2 && stranding + 2 <= level {
            break;
        }
    }
    marks
}

/// Right-continuous step function with jumps at `times`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepPath {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl StepPath {
    pub fn eval(&self, t: f64) -> f64 {
        match self.times.partition_point(|&s| s <= t) {
            0 => 0.0,
            i => self.values[i - 1],
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

fn subtree_sum(mark: &Mark, level: usize, depth: usize, acc: &mut f64) {
    if level == depth {
        *acc += mark.x;
        return;
    }
    for c in &mark.children {
        if c.t > mark.x {
            break;
        }
        subtree_sum(c, level + 1, depth, acc);
    }
}

/// `T_l(m)(t)`.
pub fn functional_t(m: &CascadeMeasure, t: f64) -> f64 {
    let mut acc = 0.0;
    for r in &m.roots {
        if r.t > t {
            break;
        }
        subtree_sum(r, 1, m.depth, &mut acc);
    }
    acc
}

/// `T_l(m)` as a step path with one step per level-1 mark.
pub fn functional_t_path(m: &CascadeMeasure) -> StepPath {
    let mut acc = 0.0;
    let mut times = Vec::with_capacity(m.roots.len());
    let mut values = Vec::with_capacity(m.roots.len());
    for r in &m.roots {
        subtree_sum(r, 1, m.depth, &mut acc);
        times.push(r.t);
        values.push(acc);
    }
    StepPath { times, values }
}

fn collapse(roots: &[Mark], take: impl Fn(&Mark) -> Vec<Mark>) -> Vec<Mark> {
    let mut out = Vec::new();
    let mut shift = 0.0;
    for parent in roots {
        for c in &parent.children {
            if c.t > parent.x {
                break;
            }
            out.push(Mark { t: shift + c.t, x: c.x, children: take(c) });
        }
        shift += parent.x;
    }
    out
}

/// `T̄(m)`: depth drops by one; deeper marks are carried over unchanged.
pub fn functional_tbar(m: &CascadeMeasure) -> Result<CascadeMeasure, CascadeError> {
    if m.depth < 2 {
        return Err(CascadeError::Depth { min: 2, got: m.depth });
    }
    let roots = collapse(&m.roots, |c| c.children.clone());
    Ok(CascadeMeasure { depth: m.depth - 1, roots })
}

/// `T_{k,l}(m) = T_{l-k+1}(T̄ applied k-1 times)`.
pub fn functional_tkl(m: &CascadeMeasure, k: usize) -> Result<StepPath, CascadeError> {
    if k == 0 || k > m.depth {
        return Err(CascadeError::Level { k, depth: m.depth });
    }
    if k == 1 {
        return Ok(functional_t_path(m));
    }
    let mut cur = functional_tbar(m)?;
    for _ in 2..k {
        cur = functional_tbar(&cur)?;
    }
    Ok(functional_t_path(&cur))
}

/// Limits on sampler work.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResourceCaps {
    pub max_marks: u64,
    pub max_nodes: u64,
}

impl Default for ResourceCaps {
    fn default() -> Self {
        ResourceCaps { max_marks: 5_000_000, max_nodes: 200_000_000 }
    }
}

/// Geometric count on {1, 2, ...} with `P(G >= m) = (1 - p)^(m-1)`.
pub fn geometric<R: Rng>(p: f64, rng: &mut R) -> u64 {
    if p >= 1.0 {
        return 1;
    }
    let u: f64 = 1.0 - rng.gen::<f64>();
    let g = (u.ln() / (-p).ln_1p()).floor();
    if g >= 9.0e18 {
        u64::MAX
    } else {
        1 + g as u64
    }
}

struct Budget {
    used: u64,
    limit: u64,
    what: &'static str,
}

impl Budget {
    fn take(&mut self, n: u64) -> Result<(), CascadeError> {
        self.used = self.used.saturating_add(n);
        if self.used > self.limit {
            return Err(CascadeError::Resource { what: self.what, limit: self.limit, reached: self.used });
        }
        Ok(())
    }
}

// Total holding time of r visits to children of `prefix` (level m - 1) and
// everything below them, in a fixed environment.
fn theta_rec<R: Rng>(
    landscape: &TrapLandscape,
    prefix: &mut Vec<u32>,
    m: usize,
    r: u64,
    rng: &mut R,
    budget: &mut Budget,
) -> Result<f64, CascadeError> {
    let spec = landscape.spec();
    let levels = spec.levels();
    let n = spec.branching();
    budget.take(r)?;
    let mut acc = 0.0;
    for _ in 0..r {
        prefix.push(rng.gen_range(1..=n));
        if m == levels {
            let e: f64 = rng.sample(Exp1);
            acc += landscape.depth(prefix) * e;
        } else {
            let g = geometric(landscape.lambda(prefix), rng);
            acc += theta_rec(landscape, prefix, m + 1, g, rng, budget)?;
        }
        prefix.pop();
    }
    Ok(acc)
}

/// Draw of `Theta_m(r)` in a fresh environment (annealed).
pub fn sample_theta(spec: &HierarchySpec, m: usize, r: u64, seed: u64, max_nodes: u64) -> Result<f64, CascadeError> {
    let levels = spec.levels();
    if m == 0 || m > levels {
        return Err(CascadeError::Level { k: m, depth: levels });
    }
    if r == 0 {
        return Err(CascadeError::Argument("r must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let landscape = TrapLandscape::new(spec.clone(), rng.gen());
    let mut prefix = vec![1; m - 1];
    let mut budget = Budget { used: 0, limit: max_nodes, what: "theta recursion nodes" };
    theta_rec(&landscape, &mut prefix, m, r, &mut rng, &mut budget)
}

/// Rescaled `Theta_m(floor(r a_n(m))) / c_n`.
pub fn sample_theta_rescaled(
    spec: &HierarchySpec,
    plan: &ScalingPlan,
    m: usize,
    r: f64,
    seed: u64,
    max_nodes: u64,
) -> Result<f64, CascadeError> {
    let count = (r * plan.a(m)).floor() as u64;
    if count == 0 {
        return Ok(0.0);
    }
    Ok(sample_theta(spec, m, count, seed, max_nodes)? / plan.c_n)
}

/// Rescaled cascade of the walk's jump chains up to the aging level, in a fixed
/// environment. Children are only drawn for labels `j <= xi` of their parent,
/// the part every functional reads.
pub fn sample_walk_cascade(
    landscape: &TrapLandscape,
    plan: &ScalingPlan,
    horizons: &[f64],
    seed: u64,
    caps: ResourceCaps,
) -> Result<CascadeMeasure, CascadeError> {
    let lstar = plan.lstar;
    if horizons.len() != lstar {
        return Err(CascadeError::Argument(format!("need {lstar} horizons, got {}", horizons.len())));
    }
    if let Some(h) = horizons.iter().find(|h| !(**h > 0.0 && h.is_finite())) {
        return Err(CascadeError::Argument(format!("horizon {h} must be positive")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut marks = Budget { used: 0, limit: caps.max_marks, what: "cascade marks" };
    let mut nodes = Budget { used: 0, limit: caps.max_nodes, what: "theta recursion nodes" };
    let mut prefix = Vec::with_capacity(landscape.spec().levels());
    let first = (horizons[0] * plan.a(1)).floor() as u64;
    let roots = walk_level(landscape, plan, horizons, 1, first, &mut prefix, &mut rng, &mut marks, &mut nodes)?;
    Ok(CascadeMeasure { depth: lstar, roots })
}

#[allow(clippy::too_many_arguments)]
fn walk_level<R: Rng>(
    landscape: &TrapLandscape,
    plan: &ScalingPlan,
    horizons: &[f64],
    k: usize,
    count: u64,
    prefix: &mut Vec<u32>,
    rng: &mut R,
    marks: &mut Budget,
    nodes: &mut Budget,
) -> Result<Vec<Mark>, CascadeError> {
    let lstar = plan.lstar;
    let levels = plan.levels();
    let n = landscape.spec().branching();
    marks.take(count)?;
    let mut out = Vec::with_capacity(count as usize);
    for j in 1..=count {
        prefix.push(rng.gen_range(1..=n));
        let t = j as f64 / plan.a(k);
        let mark = if k < lstar {
            let xi = geometric(landscape.lambda(prefix), rng);
            let limit = (horizons[k] * plan.a(k + 1)).floor() as u64;
            let children = walk_level(landscape, plan, horizons, k + 1, xi.min(limit), prefix, rng, marks, nodes)?;
            Mark::new(t, xi as f64 / plan.c(k), children)
        } else if lstar < levels {
            let g = geometric(landscape.lambda(prefix), rng);
            let big = theta_rec(landscape, prefix, lstar + 1, g, rng, nodes)?;
            Mark::leaf(t, big / plan.c_n)
        } else {
            let e: f64 = rng.sample(Exp1);
            Mark::leaf(t, landscape.depth(prefix) * e / plan.c_n)
        };
        prefix.pop();
        // Zero-valued aggregates cannot occur (every count is >= 1), but guard
        // the positivity invariant anyway.
        if mark.x > 0.0 {
            out.push(mark);
        }
    }
    Ok(out)
}

/// Ruelle cascade sample: level-1 marks on `[0,T] x (gamma, inf)` with
/// intensity `dt D_1 beta_1 x^(-1-beta_1) dx`; each mark `(t, x)` at level k
/// gets Poisson children on `(0, x] x (gamma, inf)` with the level-(k+1) intensity.
pub fn sample_rpc(
    beta: &[f64],
    d: &[f64],
    window: f64,
    gamma: f64,
    seed: u64,
    caps: ResourceCaps,
) -> Result<CascadeMeasure, CascadeError> {
    let mut windows = vec![f64::INFINITY; beta.len()];
    windows[0] = window;
    sample_rpc_restricted(beta, d, &windows, gamma, seed, caps)
}

/// [`sample_rpc`] with level-k children drawn only on `(0, min(x, windows[k-1])]`.
/// Functionals of test functions supported inside the windows keep their law.
pub fn sample_rpc_restricted(
    beta: &[f64],
    d: &[f64],
    windows: &[f64],
    gamma: f64,
    seed: u64,
    caps: ResourceCaps,
) -> Result<CascadeMeasure, CascadeError> {
    check_rpc_params(beta, d, gamma)?;
    if windows.len() != beta.len() {
        return Err(CascadeError::Argument(format!("need {} windows, got {}", beta.len(), windows.len())));
    }
    if !(windows[0] > 0.0 && windows[0].is_finite()) || windows.iter().any(|w| !(*w > 0.0)) {
        return Err(CascadeError::Argument("windows must be positive and the first one finite".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut budget = Budget { used: 0, limit: caps.max_marks, what: "cascade marks" };
    let roots = rpc_level(beta, d, windows, 0, windows[0], gamma, &mut rng, &mut budget)?;
    Ok(CascadeMeasure { depth: beta.len(), roots })
}

fn check_rpc_params(beta: &[f64], d: &[f64], gamma: f64) -> Result<(), CascadeError> {
    if beta.is_empty() || beta.len() != d.len() {
        return Err(CascadeError::Argument("beta and D must be non-empty and of equal length".into()));
    }
    for (i, &b) in beta.iter().enumerate() {
        if !(b > 0.0 && b < 1.0) || (i > 0 && b <= beta[i - 1]) {
            return Err(CascadeError::Argument("betas must increase strictly inside (0,1)".into()));
        }
    }
    if d.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(CascadeError::Argument("D constants must be positive".into()));
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(CascadeError::Argument(format!("truncation {gamma} must be positive")));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn rpc_level<R: Rng>(
    beta: &[f64],
    d: &[f64],
    windows: &[f64],
    idx: usize,
    length: f64,
    gamma: f64,
    rng: &mut R,
    budget: &mut Budget,
) -> Result<Vec<Mark>, CascadeError> {
    let mean = length * d[idx] * gamma.powf(-beta[idx]);
    if mean > budget.limit as f64 {
        return Err(CascadeError::Resource { what: "cascade marks", limit: budget.limit, reached: mean as u64 });
    }
    let count = if mean > 0.0 {
        Poisson::new(mean).map_err(|e| CascadeError::Argument(e.to_string()))?.sample(rng) as u64
    } else {
        0
    };
    budget.take(count)?;
    let mut pts: Vec<(f64, f64)> = (0..count)
        .map(|_| {
            let t = length * (1.0 - rng.gen::<f64>());
            let u: f64 = 1.0 - rng.gen::<f64>();
            (t, gamma * u.powf(-1.0 / beta[idx]))
        })
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    pts.dedup_by(|a, b| a.0 == b.0);
    let mut out = Vec::with_capacity(pts.len());
    for (t, x) in pts {
        let children = if idx + 1 < beta.len() {
            rpc_level(beta, d, windows, idx + 1, x.min(windows[idx + 1]), gamma, rng, budget)?
        } else {
            Vec::new()
        };
        out.push(Mark::new(t, x, children));
    }
    Ok(out)
}

/// Axis-aligned box `(t_lo, t_hi] x (x_lo, x_hi]` carrying a nonnegative value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestBox {
    pub t_lo: f64,
    pub t_hi: f64,
    pub x_lo: f64,
    pub x_hi: f64,
    pub value: f64,
}

impl TestBox {
    fn contains(&self, t: f64, x: f64) -> bool {
        t > self.t_lo && t <= self.t_hi && x > self.x_lo && x <= self.x_hi
    }
}

/// Test function `f_k(t, x) = sum of box values containing (t, x)` per level.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepTestFunction {
    pub levels: Vec<Vec<TestBox>>,
}

impl StepTestFunction {
    pub fn value(&self, level: usize, t: f64, x: f64) -> f64 {
        self.levels.get(level - 1).map_or(0.0, |boxes| boxes.iter().filter(|b| b.contains(t, x)).map(|b| b.value).sum())
    }

    fn validate(&self) -> Result<(), CascadeError> {
        for b in self.levels.iter().flatten() {
            let ok = b.t_lo >= 0.0
                && b.t_hi > b.t_lo
                && b.x_lo >= 0.0
                && b.x_hi > b.x_lo
                && b.t_hi.is_finite()
                && b.x_hi.is_finite()
                && b.value >= 0.0
                && b.value.is_finite();
            if !ok {
                return Err(CascadeError::Argument(format!("invalid test box {b:?}")));
            }
        }
        Ok(())
    }
}

// Cells of (0, inf) cut at the t-boundaries of a level's boxes.
fn t_cells(boxes: &[TestBox]) -> Vec<(f64, f64)> {
    let mut cuts: Vec<f64> = boxes.iter().flat_map(|b| [b.t_lo, b.t_hi]).chain([0.0]).collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut cells: Vec<(f64, f64)> = cuts.windows(2).map(|w| (w[0], w[1])).collect();
    cells.push((*cuts.last().unwrap_or(&0.0), f64::INFINITY));
    cells
}

// Piecewise-linear psi(x) = sum_cells |(0,x] ∩ cell| * weight(cell).
struct LevelIntegral {
    cells: Vec<(f64, f64)>,
    weights: Vec<f64>,
}

impl LevelIntegral {
    fn eval(&self, x: f64) -> f64 {
        self.cells.iter().zip(&self.weights).map(|(&(a, b), w)| if x > a { (x.min(b) - a) * w } else { 0.0 }).sum()
    }

    fn kinks(&self) -> Vec<f64> {
        self.cells.iter().map(|c| c.0).filter(|v| *v > 0.0).collect()
    }
}

/// Laplace functional `E exp(-sum over marks of f_k(t, x))` of the truncated
/// Ruelle cascade sampled by [`sample_rpc`] with the same window and `gamma`.
/// Evaluated bottom-up: each level's contribution to its parent is
/// `psi(x) = int_0^x dt int_gamma^inf (1 - exp(-f - psi_below)) nu(dy)`,
/// integrated after the substitution `v = y^-beta`.
pub fn rpc_laplace(
    beta: &[f64],
    d: &[f64],
    f: &StepTestFunction,
    gamma: f64,
    window: f64,
) -> Result<f64, CascadeError> {
    check_rpc_params(beta, d, gamma)?;
    f.validate()?;
    if f.levels.len() > beta.len() {
        return Err(CascadeError::Argument("test function deeper than the cascade".into()));
    }
    let depth = beta.len();
    let empty: Vec<TestBox> = Vec::new();
    let mut below: Option<LevelIntegral> = None;
    let mut top = None;
    for k in (1..=depth).rev() {
        let boxes = f.levels.get(k - 1).unwrap_or(&empty);
        let cells = t_cells(boxes);
        let (b, dk) = (beta[k - 1], d[k - 1]);
        let mut weights = Vec::with_capacity(cells.len());
        for &(a, hi) in &cells {
            // Cells are cut at every t-boundary, so a box covers a cell fully or not at all.
            let active: Vec<TestBox> = boxes.iter().copied().filter(|bx| bx.t_lo <= a && bx.t_hi >= hi).collect();
            let fval = |y: f64| active.iter().filter(|bx| y > bx.x_lo && y <= bx.x_hi).map(|bx| bx.value).sum::<f64>();
            let mut ys: Vec<f64> = active.iter().flat_map(|bx| [bx.x_lo, bx.x_hi]).collect();
            if let Some(bl) = &below {
                ys.extend(bl.kinks());
            }
            ys.push(gamma);
            ys.retain(|y| *y >= gamma);
            ys.sort_by(f64::total_cmp);
            ys.dedup();
            // v = y^-beta maps (gamma, inf) to (0, gamma^-beta).
            let mut vs: Vec<f64> = ys.iter().map(|y| y.powf(-b)).collect();
            vs.push(0.0);
            vs.sort_by(f64::total_cmp);
            let integrand = |v: f64| {
                let y = v.powf(-1.0 / b);
                let g = fval(y) + below.as_ref().map_or(0.0, |bl| bl.eval(y));
                -(-g).exp_m1()
            };
            let mut total = 0.0;
            let mut residual = 0.0;
            for w in vs.windows(2) {
                let q = integrate(&integrand, w[0], w[1], 1e-13, 2000);
                total += q.value;
                residual += q.error;
            }
            if residual > 1e-9 {
                return Err(CascadeError::Numeric { residual });
            }
            weights.push(dk * total);
        }
        let li = LevelIntegral { cells, weights };
        if k == 1 {
            top = Some(li.eval(window));
        }
        below = Some(li);
    }
    Ok((-top.unwrap_or(0.0)).exp())
}
