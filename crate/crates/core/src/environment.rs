//! Lazy trapping landscape. Each vertex's depth is a pure function of the
//! master seed and the vertex's canonical byte encoding, so nothing is stored
//! and concurrent readers need no coordination.
//!
//! Canonical encoding of a path `mu_1..mu_k`: one byte holding `k`, then each
//! coordinate as a little-endian `u32` (coordinates are 1-based). The bytes are
//! absorbed eight at a time (zero padded) by a keyed 64-bit mixer.

use crate::hierarchy::{HierarchySpec, ScalingPlan, MAX_LEVELS};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvironmentError {
    #[error("path has {got} coordinates but the tree has {levels} levels")]
    TooDeep { levels: usize, got: usize },
    #[error("coordinate {value} at level {level} outside 1..={n}")]
    Coordinate { level: usize, value: u32, n: u32 },
    #[error("tail measure needs 1 <= k <= l*-1, got k = {k} with l* = {lstar}")]
    TailLevel { k: usize, lstar: usize },
    #[error("u must be positive, got {0}")]
    TailArgument(f64),
}

/// A vertex of the tree given by its coordinates from the root.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VertexPath(Vec<u32>);

impl VertexPath {
    pub fn root() -> Self {
        VertexPath(Vec::new())
    }

    /// Checks every coordinate against the branch size and the depth against `L`.
    pub fn new(coords: Vec<u32>, spec: &HierarchySpec) -> Result<Self, EnvironmentError> {
        if coords.len() > spec.levels() {
            return Err(EnvironmentError::TooDeep { levels: spec.levels(), got: coords.len() });
        }
        let n = spec.branching();
        if let Some(i) = coords.iter().position(|&c| c == 0 || c > n) {
            return Err(EnvironmentError::Coordinate { level: i + 1, value: coords[i], n });
        }
        Ok(VertexPath(coords))
    }

    pub(crate) fn from_raw(coords: Vec<u32>) -> Self {
        VertexPath(coords)
    }

    pub fn level(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[u32] {
        &self.0
    }

    /// The ancestor at level `k`.
    pub fn prefix(&self, k: usize) -> VertexPath {
        VertexPath(self.0[..k].to_vec())
    }

    pub fn into_coords(self) -> Vec<u32> {
        self.0
    }
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Keyed hash of the canonical encoding of `coords`.
pub fn path_hash(seed: u64, coords: &[u32]) -> u64 {
    debug_assert!(coords.len() <= MAX_LEVELS);
    let mut state = mix64(seed ^ GOLDEN);
    let mut word: u64 = coords.len() as u64;
    let mut filled = 1usize;
    for &c in coords {
        for b in c.to_le_bytes() {
            word |= (b as u64) << (8 * filled);
            filled += 1;
            if filled == 8 {
                state = mix64(state.wrapping_add(GOLDEN) ^ word);
                word = 0;
                filled = 0;
            }
        }
    }
    if filled > 0 {
        state = mix64(state.wrapping_add(GOLDEN) ^ word);
    }
    mix64(state ^ (1 + 4 * coords.len() as u64))
}

/// Maps a 64-bit word to (0,1], never 0.
#[inline]
pub fn unit_from_bits(h: u64) -> f64 {
    ((h >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Inverse-CDF map of the Pareto law `P(depth >= u) = u^-alpha`.
#[inline]
pub fn depth_from_uniform(u: f64, alpha: f64) -> f64 {
    u.powf(-1.0 / alpha)
}

/// Deterministic landscape of trap depths over the whole tree.
#[derive(Debug, Clone, PartialEq)]
pub struct TrapLandscape {
    seed: u64,
    spec: HierarchySpec,
}

impl TrapLandscape {
    pub fn new(spec: HierarchySpec, seed: u64) -> Self {
        TrapLandscape { seed, spec }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn spec(&self) -> &HierarchySpec {
        &self.spec
    }

    /// Uniform variate attached to the vertex.
    pub fn uniform(&self, coords: &[u32]) -> f64 {
        unit_from_bits(path_hash(self.seed, coords))
    }

    /// Depth `lambda^-1 >= 1` of a vertex at level 1..=L; `None` at the root,
    /// which never traps.
    pub fn lambda_inv(&self, coords: &[u32]) -> Option<f64> {
        let k = coords.len();
        if k == 0 {
            return None;
        }
        Some(depth_from_uniform(self.uniform(coords), self.spec.alpha(k)))
    }

    /// Depth of a non-root vertex; callers guarantee `coords` is non-empty.
    #[inline]
    pub fn depth(&self, coords: &[u32]) -> f64 {
        depth_from_uniform(self.uniform(coords), self.spec.alpha(coords.len()))
    }

    /// Escape probability `lambda`, with `lambda(root) = 0`.
    #[inline]
    pub fn lambda(&self, coords: &[u32]) -> f64 {
        if coords.is_empty() {
            0.0
        } else {
            self.uniform(coords).powf(1.0 / self.spec.alpha(coords.len()))
        }
    }

    /// Quenched normalized tail of the geometric visit counts below
    /// `parent` (level k-1): `(a_n(k)/n) sum_j (1 - lambda(parent j))^floor(u c_n(k))`.
    pub fn empirical_tail_measure(&self, plan: &ScalingPlan, parent: &[u32], u: f64) -> Result<f64, EnvironmentError> {
        let k = parent.len() + 1;
        if k + 1 > plan.lstar {
            return Err(EnvironmentError::TailLevel { k, lstar: plan.lstar });
        }
        if !(u > 0.0) {
            return Err(EnvironmentError::TailArgument(u));
        }
        let n = self.spec.branching();
        let mut path = parent.to_vec();
        path.push(0);
        let lambdas = (1..=n).map(|j| {
            path[k - 1] = j;
            self.lambda(&path)
        });
        Ok(tail_measure(lambdas, n as f64, plan.a(k), plan.c(k), u))
    }
}

/// `(a/n) sum (1 - lambda)^floor(u c)` over the supplied escape probabilities.
pub fn tail_measure<I: IntoIterator<Item = f64>>(lambdas: I, n: f64, a: f64, c: f64, u: f64) -> f64 {
    let m = (u * c).floor();
    let sum: f64 = lambdas.into_iter().map(|l| (m * (-l).ln_1p()).exp()).sum();
    a / n * sum
}
