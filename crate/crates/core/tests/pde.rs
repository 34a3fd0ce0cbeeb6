use adhp::model::*;
use adhp::pde::*;
use adhp::quad::Composite;
use proptest::prelude::*;

fn constant_grid(dt: f64, t: f64) -> (ModelParams, DensityGrid) {
    let p = Preset::Constant.params(1, t).unwrap();
    let g = solve_pde(&p, PdeOptions::new(dt)).unwrap();
    (p, g)
}

/// Largest gap between solver cell averages and exact cell averages of the
/// closed form at the final time.
fn closed_form_error(p: &ModelParams, g: &DensityGrid) -> f64 {
    let k = g.snapshots.len() - 1;
    let t = g.snapshot_times[k];
    g.snapshots[k]
        .iter()
        .enumerate()
        .map(|(j, m)| {
            let (a, b) = (j as f64 * g.ds, (j + 1) as f64 * g.ds);
            let exact = Composite::new(a, b, 1, 8).integrate(|s| constant_rate_density(0.5, &p.initial, t, s)) / g.ds;
            (m / g.ds - exact).abs()
        })
        .fold(0.0, f64::max)
}

#[test]
fn constant_rate_closed_form() {
    let (p, g) = constant_grid(1e-3, 2.0);
    assert!(closed_form_error(&p, &g) <= 2e-3);
    assert!((g.density_at(2.0, 0.5).unwrap() - 0.5 * (-0.25f64).exp()).abs() < 2e-3);
    assert!((g.density_at(0.5, 1.2).unwrap() - (-0.25f64).exp()).abs() < 2e-3);
    assert!(g.lambda_bar.values.iter().all(|&l| (l - 0.5).abs() < 1e-3));
    assert!((g.gamma_bar.at(1.0) - 0.5 * (1.0 - (-1.0f64).exp())).abs() < 1e-4);
    assert_eq!(g.gamma_bar.at(0.0), 0.0);
}

#[test]
fn mass_is_conserved_for_every_preset() {
    for preset in Preset::ALL {
        let p = preset.params(1, 5.0).unwrap();
        let g = solve_pde(&p, PdeOptions::new(1e-3)).unwrap();
        let worst = g.mass.iter().map(|m| (m - 1.0).abs()).fold(0.0, f64::max);
        assert!(worst <= 1e-6, "{preset:?} {worst}");
        assert!(g.snapshots.iter().flatten().all(|&m| m >= 0.0));
    }
}

#[test]
fn self_convergence_is_second_order() {
    for preset in [Preset::Tanh, Preset::LogisticErlang] {
        let p = preset.params(1, 2.0).unwrap();
        let v: Vec<f64> = [2e-3, 1e-3, 5e-4].iter().map(|&dt| solve_pde(&p, PdeOptions::new(dt)).unwrap().gamma_bar.at(2.0)).collect();
        let ratio = (v[0] - v[1]) / (v[1] - v[2]);
        assert!((3.6..=4.4).contains(&ratio), "{preset:?} {ratio}");
    }
}

#[test]
fn boundary_is_the_pairing_with_psi() {
    for preset in [Preset::Tanh, Preset::LogisticErlang, Preset::Inhibitory] {
        let p = preset.params(1, 2.0).unwrap();
        let g = solve_pde(&p, PdeOptions::new(1e-3).every(1)).unwrap();
        for &t in &[0.0, 0.5, 1.0, 1.5, 2.0] {
            let y = g.gamma_bar(t).unwrap();
            let direct = g.pairing(t, |s| p.intensity.eval(s, y));
            assert!((direct - g.lambda_bar(t).unwrap()).abs() < 1e-9, "{preset:?} {t}");
        }
        let at0 = Composite::new(0.0, p.initial.support_bound(), 64, 8).integrate(|s| p.intensity.eval(s, 0.0) * p.initial.pdf(s));
        assert!((g.lambda_bar(0.0).unwrap() - at0).abs() < 1e-3);
    }
}

#[test]
fn snapshot_spacing_and_queries() {
    let (_, g) = constant_grid(1e-3, 1.0);
    assert_eq!(g.snapshot_times.len(), 101);
    assert!(g.snapshot_index(0.37).is_some());
    assert!(g.density_at(1.5, 0.1).is_err());
    assert!(g.density_at(0.5, -1.0).is_err());
    assert!(g.lambda_bar(2.0).is_err());
    let probs = g.bin_probabilities(1.0, 50, g.s_max()).unwrap();
    assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn csv_writers() {
    let (_, g) = constant_grid(1e-2, 0.5);
    let mut buf = Vec::new();
    g.write_trace_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("t,lambda_bar,gamma_bar,X\n"));
    assert_eq!(text.lines().count(), g.steps + 2);
    let mut buf = Vec::new();
    g.write_grid_csv(&mut buf, 5).unwrap();
    assert!(String::from_utf8(buf).unwrap().lines().count() > 1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn pairing_is_linear_and_normalised(a in -3.0f64..3.0, b in -3.0f64..3.0, t in 0.0f64..1.0) {
        let p = Preset::Tanh.params(1, 1.0).unwrap();
        let g = solve_pde(&p, PdeOptions::new(2e-3)).unwrap();
        let f = |s: f64| (-s).exp();
        let h = |s: f64| s.sin();
        let lhs = g.pairing(t, |s| a * f(s) + b * h(s));
        let rhs = a * g.pairing(t, f) + b * g.pairing(t, h);
        prop_assert!((lhs - rhs).abs() < 1e-12);
        prop_assert!((g.pairing(t, |_| 1.0) - 1.0).abs() < 1e-14);
    }
}
