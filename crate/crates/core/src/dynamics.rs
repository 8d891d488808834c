//! Exact simulation of the leaf dynamics and the overlap observables.
//!
//! A jump from leaf `mu` climbs from level L-1 towards the root, passing the
//! ancestor at level l with probability `lambda(mu|_l)`; it strands at the first
//! ancestor it fails to pass (the root always stops it) and resamples the
//! coordinates below uniformly. The current leaf may be drawn again.

use crate::analysis::{binomial_ci, Estimate};
use crate::environment::{TrapLandscape, VertexPath};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("paths have different levels ({0} vs {1})")]
    LevelMismatch(usize, usize),
    #[error("window [{t}, {end}] exceeds the horizon {horizon}")]
    WindowBeyondHorizon { t: f64, end: f64, horizon: f64 },
    #[error("invalid window: t = {t}, s = {s}")]
    Window { t: f64, s: f64 },
    #[error("event {index}: time must increase within the horizon and the stranding level stay below L")]
    Event { index: usize },
    #[error("level k = {k} outside 1..={levels}")]
    Level { k: usize, levels: usize },
    #[error("need at least two trajectories, got {0}")]
    TooFewTrajectories(usize),
    #[error("horizon must be positive, got {0}")]
    Horizon(f64),
    #[error("event budget of {0} exhausted before the stop rule was met")]
    EventBudget(usize),
    #[error("invalid q table: {0}")]
    QTable(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Generation of the last common ancestor.
pub fn glca(a: &[u32], b: &[u32]) -> Result<usize, DynamicsError> {
    if a.len() != b.len() {
        return Err(DynamicsError::LevelMismatch(a.len(), b.len()));
    }
    Ok(common_prefix(a, b))
}

#[inline]
fn common_prefix(a: &[u32], b: &[u32]) -> usize {
    a.iter().zip(b).take_while(|(x, y)| x == y).count()
}

/// One jump: the holding time spent before it, the cumulative time at which it
/// happens, the level it stranded at and the new leaf.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpEvent {
    pub time: f64,
    pub holding: f64,
    pub leaf_after: VertexPath,
    pub stranding_level: usize,
}

/// Borrowed view of an event stored in a [`Trajectory`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventView<'a> {
    pub time: f64,
    pub holding: f64,
    pub leaf_after: &'a [u32],
    pub stranding_level: usize,
}

/// Walker state with the escape probabilities of the current leaf's ancestors cached.
pub struct Walker<'a> {
    landscape: &'a TrapLandscape,
    leaf: Vec<u32>,
    lambdas: Vec<f64>,
    leaf_depth: f64,
}

impl<'a> Walker<'a> {
    pub fn new(landscape: &'a TrapLandscape, leaf: Vec<u32>) -> Self {
        let levels = landscape.spec().levels();
        debug_assert_eq!(leaf.len(), levels);
        let mut w = Walker { landscape, leaf, lambdas: vec![0.0; levels], leaf_depth: 1.0 };
        w.refresh_from(0);
        w
    }

    /// Uniform start leaf drawn from `rng`.
    pub fn uniform_start<R: Rng>(landscape: &'a TrapLandscape, rng: &mut R) -> Self {
        let spec = landscape.spec();
        let n = spec.branching();
        let leaf = (0..spec.levels()).map(|_| rng.gen_range(1..=n)).collect();
        Self::new(landscape, leaf)
    }

    fn refresh_from(&mut self, level: usize) {
        let levels = self.leaf.len();
        for k in (level + 1)..levels {
            self.lambdas[k - 1] = self.landscape.lambda(&self.leaf[..k]);
        }
        self.leaf_depth = self.landscape.depth(&self.leaf);
    }

    pub fn leaf(&self) -> &[u32] {
        &self.leaf
    }

    /// Depth of the current leaf, the mean holding time.
    pub fn leaf_depth(&self) -> f64 {
        self.leaf_depth
    }

    /// Performs one jump, returning the holding time and the stranding level.
    #[inline]
    pub fn step<R: Rng>(&mut self, rng: &mut R) -> (f64, usize) {
        let e: f64 = rng.sample(Exp1);
        let wait = self.leaf_depth * e;
        let levels = self.leaf.len();
        let mut level = levels - 1;
        while level > 0 && rng.gen::<f64>() < self.lambdas[level - 1] {
            level -= 1;
        }
        let n = self.landscape.spec().branching();
        for c in &mut self.leaf[level..] {
            *c = rng.gen_range(1..=n);
        }
        self.refresh_from(level);
        (wait, level)
    }
}

/// Single jump from `current_leaf`. The event's time is the holding time
/// itself, i.e. measured from the moment the walker entered the leaf.
pub fn step<R: Rng>(landscape: &TrapLandscape, current_leaf: &VertexPath, rng: &mut R) -> (f64, JumpEvent) {
    let mut w = Walker::new(landscape, current_leaf.coords().to_vec());
    let (wait, level) = w.step(rng);
    let event = JumpEvent {
        time: wait,
        holding: wait,
        leaf_after: VertexPath::from_raw(w.leaf.clone()),
        stranding_level: level,
    };
    (wait, event)
}

/// Random stream for a trajectory seed.
pub fn trajectory_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Seed of trajectory `index` in an ensemble with master seed `master`.
pub fn trajectory_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 33)).wrapping_mul(0xFF51_AFD7_ED55_8CCD);
    z = (z ^ (z >> 33)).wrapping_mul(0xC4CE_B9FE_1A85_EC53);
    z ^ (z >> 33)
}

/// When to stop a simulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StopRule {
    /// Stop once cumulative time would exceed the horizon.
    Horizon(f64),
    /// Stop at the `count`-th jump stranding at a level below `level`
    /// (a jump of the level-`level` clock); the horizon becomes its time.
    ClockCount { level: usize, count: usize },
}

/// Jump history of one walker. Events are stored column-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    levels: usize,
    start_leaf: Vec<u32>,
    times: Vec<f64>,
    holdings: Vec<f64>,
    stranding: Vec<u8>,
    leaves: Vec<u32>,
    horizon: f64,
}

impl Trajectory {
    /// Assembles a trajectory from explicit parts; holdings are the differences of `times`.
    pub fn from_events(
        start_leaf: Vec<u32>,
        events: &[(f64, usize, Vec<u32>)],
        horizon: f64,
    ) -> Result<Self, DynamicsError> {
        let levels = start_leaf.len();
        let mut t = Trajectory {
            levels,
            start_leaf,
            times: Vec::new(),
            holdings: Vec::new(),
            stranding: Vec::new(),
            leaves: Vec::new(),
            horizon,
        };
        let mut prev = 0.0;
        for (index, (time, level, leaf)) in events.iter().enumerate() {
            if leaf.len() != levels {
                return Err(DynamicsError::LevelMismatch(levels, leaf.len()));
            }
            if *time <= prev || *time > horizon || *level >= levels {
                return Err(DynamicsError::Event { index });
            }
            t.push(*time, time - prev, *level, leaf);
            prev = *time;
        }
        Ok(t)
    }

    fn push(&mut self, time: f64, holding: f64, level: usize, leaf: &[u32]) {
        self.times.push(time);
        self.holdings.push(holding);
        self.stranding.push(level as u8);
        self.leaves.extend_from_slice(leaf);
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn start_leaf(&self) -> &[u32] {
        &self.start_leaf
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn holdings(&self) -> &[f64] {
        &self.holdings
    }

    pub fn stranding_level(&self, i: usize) -> usize {
        self.stranding[i] as usize
    }

    pub fn leaf_after(&self, i: usize) -> &[u32] {
        &self.leaves[i * self.levels..(i + 1) * self.levels]
    }

    pub fn event(&self, i: usize) -> EventView<'_> {
        EventView {
            time: self.times[i],
            holding: self.holdings[i],
            leaf_after: self.leaf_after(i),
            stranding_level: self.stranding_level(i),
        }
    }

    pub fn events(&self) -> impl Iterator<Item = EventView<'_>> + '_ {
        (0..self.len()).map(|i| self.event(i))
    }

    /// Owned copy of event `i`.
    pub fn jump_event(&self, i: usize) -> JumpEvent {
        JumpEvent {
            time: self.times[i],
            holding: self.holdings[i],
            leaf_after: VertexPath::from_raw(self.leaf_after(i).to_vec()),
            stranding_level: self.stranding_level(i),
        }
    }

    /// Leaf occupied at time `t` (right-continuous).
    pub fn leaf_at(&self, t: f64) -> &[u32] {
        match self.times.partition_point(|&x| x <= t) {
            0 => &self.start_leaf,
            i => self.leaf_after(i - 1),
        }
    }
}

/// Simulates from a uniform start leaf until cumulative time exceeds `horizon`.
pub fn simulate(landscape: &TrapLandscape, horizon: f64, trajectory_seed: u64) -> Result<Trajectory, DynamicsError> {
    simulate_until(landscape, StopRule::Horizon(horizon), trajectory_seed, usize::MAX)
}

/// Simulates under a stop rule with a cap on the number of recorded events.
pub fn simulate_until(
    landscape: &TrapLandscape,
    rule: StopRule,
    trajectory_seed: u64,
    max_events: usize,
) -> Result<Trajectory, DynamicsError> {
    let levels = landscape.spec().levels();
    if let StopRule::Horizon(h) = rule {
        if !(h > 0.0) {
            return Err(DynamicsError::Horizon(h));
        }
    }
    if let StopRule::ClockCount { level, .. } = rule {
        if level == 0 || level > levels {
            return Err(DynamicsError::Level { k: level, levels });
        }
    }
    let mut rng = trajectory_rng(trajectory_seed);
    let mut walker = Walker::uniform_start(landscape, &mut rng);
    let mut traj = Trajectory {
        levels,
        start_leaf: walker.leaf().to_vec(),
        times: Vec::new(),
        holdings: Vec::new(),
        stranding: Vec::new(),
        leaves: Vec::new(),
        horizon: 0.0,
    };
    let mut time = 0.0;
    let mut clock = 0usize;
    loop {
        if let StopRule::ClockCount { count, .. } = rule {
            if clock >= count {
                traj.horizon = time;
                return Ok(traj);
            }
        }
        if traj.len() >= max_events {
            return Err(DynamicsError::EventBudget(max_events));
        }
        let (wait, level) = walker.step(&mut rng);
        let next = time + wait;
        if let StopRule::Horizon(h) = rule {
            if next > h {
                traj.horizon = h;
                return Ok(traj);
            }
        }
        time = next;
        traj.push(time, wait, level, walker.leaf());
        if let StopRule::ClockCount { level: k, .. } = rule {
            if level < k {
                clock += 1;
            }
        }
    }
}

fn check_window(t: f64, s: f64) -> Result<(), DynamicsError> {
    if !(t >= 0.0 && s > 0.0 && t.is_finite() && s.is_finite()) {
        return Err(DynamicsError::Window { t, s });
    }
    Ok(())
}

/// `min_{u in [0,s]} glca(X(t), X(t+u))`, scanning the events in `(t, t+s]`.
pub fn min_overlap_window(traj: &Trajectory, t: f64, s: f64) -> Result<usize, DynamicsError> {
    check_window(t, s)?;
    if t + s > traj.horizon {
        return Err(DynamicsError::WindowBeyondHorizon { t, end: t + s, horizon: traj.horizon });
    }
    let first = traj.times.partition_point(|&x| x <= t);
    let last = traj.times.partition_point(|&x| x <= t + s);
    let anchor = traj.leaf_at(t);
    let mut overlap = traj.levels;
    for i in first..last {
        overlap = overlap.min(common_prefix(anchor, traj.leaf_after(i)));
        if overlap == 0 {
            break;
        }
    }
    Ok(overlap)
}

/// Same value as `min_overlap_window(simulate(landscape, t + s, seed), t, s)`
/// without storing the path; stops as soon as the overlap hits 0.
pub fn window_overlap(landscape: &TrapLandscape, t: f64, s: f64, trajectory_seed: u64) -> Result<usize, DynamicsError> {
    check_window(t, s)?;
    let mut rng = trajectory_rng(trajectory_seed);
    let mut walker = Walker::uniform_start(landscape, &mut rng);
    let end = t + s;
    let mut time = 0.0;
    let mut anchor = walker.leaf().to_vec();
    let mut anchored = false;
    let mut overlap = landscape.spec().levels();
    loop {
        if !anchored {
            anchor.copy_from_slice(walker.leaf());
        }
        let (wait, _) = walker.step(&mut rng);
        let next = time + wait;
        // Crossing t while holding: the leaf just left is X(t).
        anchored |= next > t;
        if next > end {
            return Ok(overlap);
        }
        time = next;
        if anchored {
            overlap = overlap.min(common_prefix(&anchor, walker.leaf()));
            if overlap == 0 {
                return Ok(0);
            }
        }
    }
}

/// Number of trajectories reaching each overlap level; mergeable across threads.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OverlapTally {
    trials: u64,
    at_least: Vec<u64>,
}

impl OverlapTally {
    pub fn new(levels: usize) -> Self {
        OverlapTally { trials: 0, at_least: vec![0; levels] }
    }

    pub fn record(&mut self, overlap: usize) {
        self.trials += 1;
        for c in &mut self.at_least[..overlap] {
            *c += 1;
        }
    }

    pub fn merge(mut self, other: &OverlapTally) -> Self {
        self.trials += other.trials;
        for (a, b) in self.at_least.iter_mut().zip(&other.at_least) {
            *a += b;
        }
        self
    }

    pub fn trials(&self) -> u64 {
        self.trials
    }

    pub fn hits(&self, k: usize) -> u64 {
        self.at_least[k - 1]
    }

    pub fn levels(&self) -> usize {
        self.at_least.len()
    }

    /// Estimate of `Pi_k` with its binomial standard error.
    pub fn estimate(&self, k: usize) -> Result<Estimate, DynamicsError> {
        let levels = self.at_least.len();
        if k == 0 || k > levels {
            return Err(DynamicsError::Level { k, levels });
        }
        if self.trials < 2 {
            return Err(DynamicsError::TooFewTrajectories(self.trials as usize));
        }
        Ok(binomial_ci(self.at_least[k - 1], self.trials))
    }
}

/// Fraction of trajectories whose overlap over `[t, t+s]` stays at least `k`.
pub fn estimate_pi(trajectories: &[Trajectory], k: usize, t: f64, s: f64) -> Result<Estimate, DynamicsError> {
    let levels = trajectories.first().map_or(k.max(1), |tr| tr.levels);
    if k == 0 || k > levels {
        return Err(DynamicsError::Level { k, levels });
    }
    let mut tally = OverlapTally::new(levels);
    for tr in trajectories {
        tally.record(min_overlap_window(tr, t, s)?);
    }
    tally.estimate(k)
}

/// Overlap profile `q` tabulated at k/L.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable(Vec<f64>);

impl QTable {
    pub fn new(values: Vec<f64>) -> Result<Self, DynamicsError> {
        if values.len() < 2 {
            return Err(DynamicsError::QTable("need at least two entries".into()));
        }
        if values[0] != 0.0 || *values.last().unwrap_or(&0.0) != 1.0 {
            return Err(DynamicsError::QTable("q(0) must be 0 and q(1) must be 1".into()));
        }
        if let Some(i) = values.windows(2).position(|w| !(w[1] >= w[0])) {
            return Err(DynamicsError::QTable(format!("decreasing at index {}", i + 1)));
        }
        Ok(QTable(values))
    }

    /// `q(x) = x` on L levels.
    pub fn identity(levels: usize) -> Self {
        QTable((0..=levels).map(|k| k as f64 / levels as f64).collect())
    }

    pub fn levels(&self) -> usize {
        self.0.len() - 1
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    /// Weight `q(k/L) - q((k-1)/L)` of level k.
    pub fn weight(&self, k: usize) -> f64 {
        self.0[k] - self.0[k - 1]
    }

    /// `sum_k weight(k) * pis[k-1]`.
    pub fn combine(&self, pis: &[f64]) -> f64 {
        pis.iter().enumerate().map(|(i, p)| self.weight(i + 1) * p).sum()
    }
}

/// Correlation `C_L(t,s) = sum_k [q(k/L) - q((k-1)/L)] Pi_k(t,s)` from an ensemble.
pub fn estimate_correlation(trajectories: &[Trajectory], q: &QTable, t: f64, s: f64) -> Result<f64, DynamicsError> {
    let levels = trajectories.first().map_or(q.levels(), |tr| tr.levels);
    if q.levels() != levels {
        return Err(DynamicsError::QTable(format!("table has {} levels, tree has {levels}", q.levels())));
    }
    let pis =
        (1..=levels).map(|k| estimate_pi(trajectories, k, t, s).map(|e| e.value)).collect::<Result<Vec<_>, _>>()?;
    Ok(q.combine(&pis))
}

/// Writes `trajectory_id, event_index, time, stranding_level, mu_1..mu_L`.
pub fn write_ensemble_csv<W: Write>(trajectories: &[Trajectory], out: W) -> Result<(), DynamicsError> {
    let mut w = csv::Writer::from_writer(out);
    let levels = trajectories.first().map_or(0, |t| t.levels);
    let mut header = vec!["trajectory_id".to_string(), "event_index".into(), "time".into(), "stranding_level".into()];
    header.extend((1..=levels).map(|k| format!("mu_{k}")));
    w.write_record(&header)?;
    for (id, tr) in trajectories.iter().enumerate() {
        for (i, e) in tr.events().enumerate() {
            let mut row = vec![id.to_string(), i.to_string(), e.time.to_string(), e.stranding_level.to_string()];
            row.extend(e.leaf_after.iter().map(|c| c.to_string()));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}
