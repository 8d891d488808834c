use gremlab::analysis::{chi_square_pvalue, ecdf_ks};
use gremlab::clocks::{clock_range_hit, extract_clocks};
use gremlab::dynamics::*;
use gremlab::environment::{TrapLandscape, VertexPath};
use gremlab::hierarchy::HierarchySpec;
use gremlab::limits::constants;
use proptest::prelude::*;
use rayon::prelude::*;
use statrs::function::gamma::gamma;

fn landscape(n: u32, alphas: &[f64], seed: u64) -> TrapLandscape {
    TrapLandscape::new(HierarchySpec::new(n, alphas.to_vec(), 1.1).unwrap(), seed)
}

#[test]
fn glca_examples() {
    assert_eq!(glca(&[1, 2, 3], &[1, 2, 1]).unwrap(), 2);
    assert_eq!(glca(&[4, 4], &[4, 4]).unwrap(), 2);
    assert_eq!(glca(&[1, 2], &[2, 2]).unwrap(), 0);
    assert!(glca(&[1, 2], &[1]).is_err());
}

#[test]
fn single_level_jumps_from_root() {
    let land = landscape(5, &[0.5], 2);
    let start = VertexPath::new(vec![3], land.spec()).unwrap();
    let mut rng = trajectory_rng(1);
    let mut counts = [0u64; 5];
    for _ in 0..50_000 {
        let (wait, e) = step(&land, &start, &mut rng);
        assert!(wait > 0.0);
        assert_eq!(e.stranding_level, 0);
        counts[e.leaf_after.coords()[0] as usize - 1] += 1;
    }
    assert!(chi_square_pvalue(&counts, &[0.2; 5]).unwrap() > 0.001);
}

fn stranding_law(land: &TrapLandscape, leaf: &[u32]) -> Vec<f64> {
    let levels = leaf.len();
    (0..levels)
        .map(|l| {
            let stay = 1.0 - land.lambda(&leaf[..l]);
            let climb: f64 = (l + 1..levels).map(|m| land.lambda(&leaf[..m])).product();
            stay * climb
        })
        .collect()
}

#[test]
fn stranding_frequencies_match_kernel() {
    for (n, alphas, leaf) in [(2, vec![0.4, 0.8], vec![1, 2]), (3, vec![0.2, 0.5, 0.9], vec![2, 1, 3])] {
        for seed in 1..=3 {
            let land = landscape(n, &alphas, seed);
            let probs = stranding_law(&land, &leaf);
            assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let start = VertexPath::new(leaf.clone(), land.spec()).unwrap();
            let mut rng = trajectory_rng(seed + 10);
            let mut counts = vec![0u64; leaf.len()];
            for _ in 0..100_000 {
                let (_, e) = step(&land, &start, &mut rng);
                assert_eq!(&e.leaf_after.coords()[..e.stranding_level], &leaf[..e.stranding_level]);
                counts[e.stranding_level] += 1;
            }
            // Merge cells with tiny expectations before the chi-square test.
            let (obs, p): (Vec<u64>, Vec<f64>) =
                counts.iter().zip(&probs).filter(|(_, p)| **p * 1e5 > 5.0).map(|(c, p)| (*c, *p)).unzip();
            if obs.len() >= 2 {
                let total: f64 = p.iter().sum();
                let scaled: Vec<f64> = p.iter().map(|x| x / total).collect();
                let pv = chi_square_pvalue(&obs, &scaled).unwrap();
                assert!(pv > 0.001, "n={n} seed={seed}: {counts:?} vs {probs:?}");
            }
        }
    }
}

#[test]
fn forced_escape_strands_at_root() {
    // alpha near 1 makes lambda = U^(1/alpha) close to U; pick the vertex with the largest lambda.
    let land = landscape(50, &[0.3, 0.99], 8);
    let parent = (1..=50).max_by(|a, b| land.lambda(&[*a]).total_cmp(&land.lambda(&[*b]))).unwrap();
    let lam = land.lambda(&[parent]);
    assert!(lam > 0.9);
    let start = VertexPath::new(vec![parent, 1], land.spec()).unwrap();
    let mut rng = trajectory_rng(4);
    let root = (0..20_000).filter(|_| step(&land, &start, &mut rng).1.stranding_level == 0).count();
    assert!((root as f64 / 20_000.0 - lam).abs() < 0.01);
}

#[test]
fn holding_times_are_exponential() {
    let land = landscape(4, &[0.5], 5);
    let leaf = VertexPath::new(vec![2], land.spec()).unwrap();
    let mean = land.lambda_inv(&[2]).unwrap();
    let mut rng = trajectory_rng(77);
    let waits: Vec<f64> = (0..200_000).map(|_| step(&land, &leaf, &mut rng).0).collect();
    let ks = ecdf_ks(&waits, |x| 1.0 - (-x / mean).exp()).unwrap();
    assert!(ks < 1.63 / (waits.len() as f64).sqrt(), "{ks}");
}

#[test]
fn simulate_contracts() {
    let land = landscape(10, &[0.4, 0.8], 3);
    let tiny = simulate(&land, 1e-12, 5).unwrap();
    assert!(tiny.is_empty());
    let a = simulate(&land, 500.0, 9).unwrap();
    let b = simulate(&land, 500.0, 9).unwrap();
    assert_eq!(a, b);
    assert!(a.times().windows(2).all(|w| w[0] < w[1]));
    assert!(a.times().last().is_none_or(|t| *t <= 500.0));
    assert!(simulate(&land, -1.0, 1).is_err());
}

#[test]
fn event_count_tracks_deepest_scale() {
    // The count of deepest-level jumps by time c_n is the inverse of the limit
    // clock, whose mean at 1 is a_n(L) / (b_L Gamma(1 + alpha_L)).
    let spec = HierarchySpec::new(1000, vec![0.4, 0.8], 1.1).unwrap();
    let plan = spec.scaling_plan().unwrap();
    let b = constants(&spec).unwrap().b[1];
    let land = TrapLandscape::new(spec, 11);
    let total: usize =
        (0..400u64).into_par_iter().map(|i| simulate(&land, plan.c_n, trajectory_seed(3, i)).unwrap().len()).sum();
    let mean = total as f64 / 400.0;
    let scale = plan.a(2) / (b * gamma(1.8));
    assert!(mean > scale / 3.0 && mean < 3.0 * scale, "{mean} vs {scale}");
    assert!(mean > plan.a(2) / 5.0 && mean < plan.a(2), "{mean} vs {}", plan.a(2));
}

#[test]
fn min_overlap_examples() {
    let start = vec![1, 1];
    let quiet = Trajectory::from_events(start.clone(), &[(1.0, 1, vec![1, 2])], 10.0).unwrap();
    assert_eq!(min_overlap_window(&quiet, 2.0, 3.0).unwrap(), 2);
    let root = Trajectory::from_events(start.clone(), &[(1.0, 0, vec![2, 1])], 10.0).unwrap();
    assert_eq!(min_overlap_window(&root, 0.5, 1.0).unwrap(), 0);

    let events = [(1.0, 1, vec![1, 2]), (2.0, 0, vec![1, 1]), (3.5, 0, vec![2, 2])];
    let traj = Trajectory::from_events(start, &events, 10.0).unwrap();
    for (t, s) in [(0.5, 0.4), (0.5, 1.0), (0.5, 2.0), (1.5, 1.0), (1.5, 3.0), (0.1, 9.0), (3.5, 1.0)] {
        // Exhaustive scan of the state at every event time in [t, t+s].
        let anchor = traj.leaf_at(t).to_vec();
        let brute = std::iter::once(t)
            .chain(traj.times().iter().copied().filter(|&x| x > t && x <= t + s))
            .map(|u| glca(&anchor, traj.leaf_at(u)).unwrap())
            .min()
            .unwrap();
        assert_eq!(min_overlap_window(&traj, t, s).unwrap(), brute, "t={t} s={s}");
    }
    assert!(min_overlap_window(&traj, 8.0, 5.0).is_err());
    assert!(Trajectory::from_events(vec![1, 1], &[(2.0, 0, vec![1, 1]), (1.0, 0, vec![1, 1])], 10.0).is_err());
}

#[test]
fn estimate_pi_contracts() {
    let trajs: Vec<Trajectory> = (0..4).map(|_| Trajectory::from_events(vec![1, 1], &[], 10.0).unwrap()).collect();
    let e = estimate_pi(&trajs, 2, 1.0, 2.0).unwrap();
    assert_eq!(e.value, 1.0);
    assert!(e.stderr > 0.0);
    assert!(estimate_pi(&trajs, 0, 1.0, 2.0).is_err());
    assert!(estimate_pi(&trajs[..1], 1, 1.0, 2.0).is_err());
}

#[test]
fn correlation_examples() {
    let land = landscape(3, &[0.4, 0.8], 6);
    let trajs: Vec<Trajectory> = (0..200).map(|i| simulate(&land, 40.0, trajectory_seed(2, i)).unwrap()).collect();
    let (t, s) = (10.0, 20.0);
    let p1 = estimate_pi(&trajs, 1, t, s).unwrap().value;
    let p2 = estimate_pi(&trajs, 2, t, s).unwrap().value;
    let lin = estimate_correlation(&trajs, &QTable::identity(2), t, s).unwrap();
    assert!((lin - (p1 + p2) / 2.0).abs() < 1e-12);
    let step_q = estimate_correlation(&trajs, &QTable::new(vec![0.0, 0.0, 1.0]).unwrap(), t, s).unwrap();
    assert!((step_q - p2).abs() < 1e-12);
    let sq = estimate_correlation(&trajs, &QTable::new(vec![0.0, 0.25, 1.0]).unwrap(), t, s).unwrap();
    assert!((sq - (0.25 * p1 + 0.75 * p2)).abs() < 1e-12);
    assert!(QTable::new(vec![0.0, 0.7, 0.5, 1.0]).is_err());
    assert!(QTable::new(vec![0.1, 1.0]).is_err());
}

#[test]
fn streaming_overlap_matches_recorded_trajectory() {
    let land = landscape(4, &[0.3, 0.6, 0.9], 12);
    for i in 0..300 {
        let seed = trajectory_seed(8, i);
        let (t, s) = (7.0, 11.0);
        let traj = simulate(&land, t + s, seed).unwrap();
        assert_eq!(window_overlap(&land, t, s, seed).unwrap(), min_overlap_window(&traj, t, s).unwrap());
    }
}

#[test]
fn tally_merge_is_order_independent() {
    let land = landscape(3, &[0.4, 0.8], 2);
    let overlaps: Vec<usize> =
        (0..500).map(|i| window_overlap(&land, 3.0, 4.0, trajectory_seed(5, i)).unwrap()).collect();
    let serial = overlaps.iter().fold(OverlapTally::new(2), |mut t, o| {
        t.record(*o);
        t
    });
    let parallel = overlaps
        .par_iter()
        .fold(
            || OverlapTally::new(2),
            |mut t, o| {
                t.record(*o);
                t
            },
        )
        .reduce(|| OverlapTally::new(2), |a, b| a.merge(&b));
    assert_eq!(serial, parallel);
}

#[test]
fn clock_route_agrees_with_overlap_route() {
    let spec = HierarchySpec::new(1000, vec![0.4, 0.8], 1.1).unwrap();
    let plan = spec.scaling_plan().unwrap();
    let land = TrapLandscape::new(spec, 21);
    let (t, s) = (plan.c_n, plan.c_n);
    let rows: Vec<[bool; 4]> = (0..4000u64)
        .into_par_iter()
        .map(|i| {
            let traj = simulate(&land, t + s, trajectory_seed(31, i)).unwrap();
            let o = min_overlap_window(&traj, t, s).unwrap();
            let clocks = extract_clocks(&traj);
            [o >= 1, o >= 2, !clock_range_hit(&clocks[0], t, s), !clock_range_hit(&clocks[1], t, s)]
        })
        .collect();
    for k in 0..2 {
        let direct = rows.iter().filter(|r| r[k]).count() as f64 / rows.len() as f64;
        let clock = rows.iter().filter(|r| r[k + 2]).count() as f64 / rows.len() as f64;
        assert!(clock <= direct);
        assert!((direct - clock).abs() < 0.01, "k={} {direct} vs {clock}", k + 1);
    }
}

#[test]
fn ensemble_csv_layout() {
    let traj = Trajectory::from_events(vec![1, 2], &[(0.5, 1, vec![1, 1]), (2.0, 0, vec![2, 2])], 3.0).unwrap();
    let mut buf = Vec::new();
    write_ensemble_csv(&[traj], &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text, "trajectory_id,event_index,time,stranding_level,mu_1,mu_2\n0,0,0.5,1,1,1\n0,1,2,0,2,2\n");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn overlap_nonincreasing_in_window(seed in 0u64..10_000, t in 0.0f64..20.0, s1 in 0.01f64..20.0, s2 in 0.01f64..20.0) {
        let land = landscape(3, &[0.3, 0.6, 0.9], seed % 7);
        let traj = simulate(&land, 41.0, seed).unwrap();
        let (a, b) = (s1.min(s2), s1.max(s2));
        let short = min_overlap_window(&traj, t, a).unwrap();
        let long = min_overlap_window(&traj, t, b).unwrap();
        prop_assert!(long <= short);
    }

    #[test]
    fn deeper_overlap_is_rarer(seed in 0u64..1000, t in 0.1f64..10.0, s in 0.1f64..10.0) {
        let land = landscape(3, &[0.3, 0.6, 0.9], seed);
        let trajs: Vec<Trajectory> = (0..20).map(|i| simulate(&land, t + s, trajectory_seed(seed, i)).unwrap()).collect();
        let pis: Vec<f64> = (1..=3).map(|k| estimate_pi(&trajs, k, t, s).unwrap().value).collect();
        prop_assert!(pis[1] <= pis[0] && pis[2] <= pis[1]);
    }
}
