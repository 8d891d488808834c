//! Small numerical kernels shared by the oracles: adaptive Gauss-Kronrod
//! quadrature and Poisson weights for uniformization.

use statrs::function::gamma::ln_gamma;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] =
    [0.129_484_966_168_869_7, 0.279_705_391_489_276_7, 0.381_830_050_505_118_9, 0.417_959_183_673_469_4];

/// Result of an adaptive quadrature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadrature {
    pub value: f64,
    pub error: f64,
}

fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        kronrod += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

/// Adaptive G7-K15 quadrature on a finite interval. Subdivides the interval
/// with the largest error estimate until the total estimate is below `tol`
/// or `max_intervals` is reached. Nodes never touch the endpoints, so
/// integrable endpoint singularities are tolerated (slowly).
pub fn integrate<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, tol: f64, max_intervals: usize) -> Quadrature {
    if a == b {
        return Quadrature { value: 0.0, error: 0.0 };
    }
    let (v, e) = gk15(&mut f, a, b);
    let mut parts = vec![(a, b, v, e)];
    loop {
        let (total, err): (f64, f64) = parts.iter().fold((0.0, 0.0), |acc, p| (acc.0 + p.2, acc.1 + p.3));
        if err <= tol || parts.len() >= max_intervals {
            return Quadrature { value: total, error: err };
        }
        let worst = parts.iter().enumerate().max_by(|x, y| x.1 .3.total_cmp(&y.1 .3)).map(|(i, _)| i).unwrap_or(0);
        let (lo, hi, _, _) = parts.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            return Quadrature { value: total, error: err };
        }
        let (v1, e1) = gk15(&mut f, lo, mid);
        let (v2, e2) = gk15(&mut f, mid, hi);
        parts.push((lo, mid, v1, e1));
        parts.push((mid, hi, v2, e2));
    }
}

/// Poisson(mean) weights `(first_index, weights)` covering all but `tail`
/// of the mass. Computed in log space so large means do not underflow.
pub fn poisson_weights(mean: f64, tail: f64) -> (usize, Vec<f64>) {
    if mean <= 0.0 {
        return (0, vec![1.0]);
    }
    let log_pmf = |j: usize| -mean + j as f64 * mean.ln() - ln_gamma(j as f64 + 1.0);
    let mode = mean.floor() as usize;
    // Walk outward from the mode until both tails are negligible.
    let mut lo = mode;
    while lo > 0 && log_pmf(lo) > (tail * 1e-3).ln() {
        lo -= 1;
    }
    let mut hi = mode;
    let mut acc: f64 = (lo..=hi).map(|j| log_pmf(j).exp()).sum();
    while 1.0 - acc > tail && hi < mode + 100 + (40.0 * mean.sqrt()) as usize {
        hi += 1;
        acc += log_pmf(hi).exp();
    }
    (lo, (lo..=hi).map(|j| log_pmf(j).exp()).collect())
}
