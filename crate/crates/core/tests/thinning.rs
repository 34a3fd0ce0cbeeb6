use adhp::model::*;
use adhp::pde::{solve_pde, PdeOptions};
use adhp::rng::replica_seed;
use adhp::stats;
use adhp::thinning::*;
use proptest::prelude::*;

fn path(a: f64, ev: &[f64]) -> EventPath {
    EventPath { initial_age: a, events: ev.to_vec() }
}

#[test]
fn ages_on_both_sides_of_an_event() {
    let p = path(0.3, &[]);
    assert!((age_at(&p, 1.0, Side::Left) - 1.3).abs() < 1e-15);
    assert!((age_at(&p, 1.0, Side::Right) - 1.3).abs() < 1e-15);
    let p = path(0.0, &[0.5]);
    assert_eq!(age_at(&p, 0.5, Side::Left), 0.5);
    assert_eq!(age_at(&p, 0.5, Side::Right), 0.0);
    assert_eq!(age_at(&p, 0.75, Side::Left), 0.25);
    assert_eq!(age_at(&p, 0.75, Side::Right), 0.25);
}

#[test]
fn zero_intensity_has_no_events() {
    let p = ModelParams::new(20, 3.0, Intensity::Constant { rate: 0.0 }, Kernel::Exponential { weight: 1.0, rate: 1.0 }, InitialDensity::Uniform { lo: 0.0, hi: 1.0 }).unwrap();
    let paths = simulate_adhp(&p, &PoissonDriver::new(1, 1.0)).unwrap();
    assert!(paths.iter().all(|q| q.events.is_empty()));
}

#[test]
fn constant_rate_event_count() {
    let p = Preset::Constant.params(50, 2.0).unwrap();
    let counts: Vec<f64> = (0..10_000u64)
        .map(|r| {
            let paths = simulate_adhp(&p, &PoissonDriver::new(replica_seed(77, r), 0.5)).unwrap();
            paths.iter().map(|q| q.events.len()).sum::<usize>() as f64 / 50.0
        })
        .collect();
    let m = stats::mean(&counts);
    assert!((m - 1.0).abs() < 3.0 * stats::std_error(&counts), "{m}");
}

#[test]
fn tanh_event_count_matches_boundary_trace() {
    let p = Preset::Tanh.params(100, 2.0).unwrap();
    let grid = solve_pde(&p, PdeOptions::new(1e-3)).unwrap();
    let lam = &grid.lambda_bar.values;
    let expected: f64 = grid.dt * (lam.iter().sum::<f64>() - 0.5 * (lam[0] + lam[lam.len() - 1]));
    let counts: Vec<f64> = (0..4000u64)
        .map(|r| {
            let paths = simulate_adhp(&p, &PoissonDriver::new(replica_seed(3, r), 0.9)).unwrap();
            paths.iter().map(|q| q.events.len()).sum::<usize>() as f64 / 100.0
        })
        .collect();
    let m = stats::mean(&counts);
    assert!((m - expected).abs() < 3.0 * stats::std_error(&counts), "{m} vs {expected}");
}

#[test]
fn degenerate_couplings_are_exact() {
    let unif = InitialDensity::Uniform { lo: 0.0, hi: 1.0 };
    let cases = [
        ModelParams::new(200, 2.0, Intensity::Constant { rate: 0.5 }, Kernel::Exponential { weight: 1.0, rate: 1.0 }, unif.clone()).unwrap(),
        ModelParams::new(200, 2.0, Intensity::TanhSigmoid { base: 0.5, amp: 0.4 }, Kernel::Zero, unif).unwrap(),
    ];
    for p in cases {
        let grid = solve_pde(&p, PdeOptions::new(1e-3)).unwrap();
        for seed in 0..5 {
            let pairs = simulate_coupled(&p, &PoissonDriver::new(seed, p.intensity.sup_bound()), &grid.gamma_bar).unwrap();
            for c in &pairs {
                assert_eq!(c.finite, c.limit);
            }
        }
    }
}

#[test]
fn coupled_pairs_share_initial_ages_and_differ_for_tanh() {
    let p = Preset::Tanh.params(1000, 1.0).unwrap();
    let grid = solve_pde(&p, PdeOptions::new(1e-3)).unwrap();
    let pairs = simulate_coupled(&p, &PoissonDriver::new(5, 0.9), &grid.gamma_bar).unwrap();
    assert!(pairs.iter().all(|c| c.finite.initial_age == c.limit.initial_age));
    let differ = pairs.iter().filter(|c| symmetric_difference(&c.finite, &c.limit, 1.0) > 0).count();
    assert!(differ > 0 && differ < 200, "{differ}");
}

#[test]
fn larger_mark_bound_keeps_events() {
    let p = Preset::Tanh.params(50, 2.0).unwrap();
    let a = simulate_adhp(&p, &PoissonDriver::new(11, 0.9)).unwrap();
    let b = simulate_adhp(&p, &PoissonDriver::new(11, 2.5)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn too_small_bound_is_an_error() {
    let p = Preset::Tanh.params(50, 2.0).unwrap();
    assert!(simulate_adhp(&p, &PoissonDriver::new(11, 0.3)).is_err());
}

#[test]
fn causality_under_a_shorter_horizon() {
    let p = Preset::Tanh.params(40, 2.0).unwrap();
    let short = p.with_horizon(1.2).unwrap();
    let a = simulate_adhp(&p, &PoissonDriver::new(8, 0.9)).unwrap();
    let b = simulate_adhp(&short, &PoissonDriver::new(8, 0.9)).unwrap();
    for (x, y) in a.iter().zip(&b) {
        let cut: Vec<f64> = x.events.iter().copied().filter(|&e| e <= 1.2).collect();
        assert_eq!(cut, y.events);
    }
}

#[test]
fn permuting_streams_permutes_paths() {
    let p = Preset::Tanh.params(3, 3.0).unwrap();
    let a = simulate_adhp(&p, &PoissonDriver::new(21, 0.9)).unwrap();
    let b = simulate_adhp(&p, &PoissonDriver::new(21, 0.9).with_streams(vec![2, 0, 1])).unwrap();
    assert_eq!(b, vec![a[2].clone(), a[0].clone(), a[1].clone()]);
}

#[test]
fn direct_summation_gives_the_same_paths() {
    for preset in [Preset::Tanh, Preset::LogisticErlang] {
        let p = preset.params(100, 2.0).unwrap();
        let b = p.intensity.sup_bound();
        let fast = simulate_adhp(&p, &PoissonDriver::new(4, b)).unwrap();
        let slow = simulate_adhp_with(&p, &PoissonDriver::new(4, b), SimOptions { direct_sum: true }).unwrap();
        assert_eq!(fast, slow);
    }
}

#[test]
fn boxcar_kernel_simulates() {
    let p = Preset::Boxcar.params(100, 2.0).unwrap();
    let paths = simulate_adhp(&p, &PoissonDriver::new(4, 0.9)).unwrap();
    assert!(paths.iter().any(|q| !q.events.is_empty()));
    let g = gamma_n(&paths, &p.kernel, 2.0);
    let direct = paths.iter().flat_map(|q| q.events.iter()).filter(|&&e| 2.0 - e < 0.75).count() as f64 / 100.0;
    assert!((g - direct).abs() < 1e-12);
}

#[test]
fn paths_csv_and_run_file() {
    let p = Preset::Tanh.params(5, 1.0).unwrap();
    let paths = simulate_adhp(&p, &PoissonDriver::new(2, 0.9)).unwrap();
    let mut buf = Vec::new();
    write_paths_csv(&mut buf, &[(0, &paths)]).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("replica,particle,event_time,initial_age\n"));
    let rows = text.lines().count() - 1;
    assert_eq!(rows, paths.iter().map(|q| q.events.len().max(1)).sum::<usize>());
    let rf = RunFile { seed: 2, config_hash: [7; 32], replicas: vec![paths] };
    let mut bin = Vec::new();
    rf.write(&mut bin).unwrap();
    assert_eq!(RunFile::read(&mut bin.as_slice()).unwrap(), rf);
    assert!(RunFile::read(&mut &bin[..bin.len() - 3]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn paths_are_ordered_and_ages_bounded(seed in any::<u64>(), n in 1usize..30, t in 0.2f64..3.0) {
        for preset in [Preset::Tanh, Preset::LogisticErlang, Preset::Inhibitory] {
            let p = preset.params(n, t).unwrap();
            let paths = simulate_adhp(&p, &PoissonDriver::new(seed, p.intensity.sup_bound())).unwrap();
            for q in &paths {
                prop_assert!(q.events.windows(2).all(|w| w[0] < w[1]));
                prop_assert!(q.events.iter().all(|&e| e > 0.0 && e <= t));
                for k in 0..=10 {
                    let z = t * k as f64 / 10.0;
                    prop_assert!(age_at(q, z, Side::Left) <= p.max_age() + 1e-12);
                }
            }
        }
    }

    #[test]
    fn simulation_is_deterministic(seed in any::<u64>()) {
        let p = Preset::Tanh.params(20, 1.5).unwrap();
        let a = simulate_adhp(&p, &PoissonDriver::new(seed, 0.9)).unwrap();
        let b = simulate_adhp(&p, &PoissonDriver::new(seed, 0.9)).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn symmetric_difference_is_symmetric(a in proptest::collection::btree_set(0u32..100, 0..20), b in proptest::collection::btree_set(0u32..100, 0..20)) {
        let pa = path(0.0, &a.iter().map(|&x| x as f64 / 100.0).collect::<Vec<_>>());
        let pb = path(0.0, &b.iter().map(|&x| x as f64 / 100.0).collect::<Vec<_>>());
        let d = symmetric_difference(&pa, &pb, 2.0);
        prop_assert_eq!(d, symmetric_difference(&pb, &pa, 2.0));
        prop_assert_eq!(d, a.symmetric_difference(&b).count());
        prop_assert_eq!(symmetric_difference(&pa, &pa, 2.0), 0);
    }
}
