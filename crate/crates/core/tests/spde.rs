use adhp::limit::{LimitOptions, LimitSystem};
use adhp::model::Preset;
use adhp::pde::{solve_pde, DensityGrid, PdeOptions};
use adhp::spde::*;
use adhp::testfn::ExpChebyshev;

fn base(preset: Preset) -> (DensityGrid, SpdeBase) {
    let p = preset.params(1, 1.0).unwrap();
    let grid = solve_pde(&p, PdeOptions::new(1e-3)).unwrap();
    let sys = LimitSystem::new(&grid, &p, &ExpChebyshev::new(10), 1e-2, 1.0).unwrap();
    let b = SpdeBase::new(&grid, &p, sys, 10).unwrap();
    (grid, b)
}

#[test]
fn discrete_gamma_bar_tracks_the_solver() {
    for preset in [Preset::Tanh, Preset::LogisticErlang] {
        let (grid, b) = base(preset);
        for (i, g) in b.gamma_bar.iter().enumerate() {
            assert!((g - grid.gamma_bar.at(i as f64 * b.dt)).abs() < 1e-3);
        }
    }
}

#[test]
fn constant_intensity_closed_form() {
    let (grid, b) = base(Preset::Constant);
    let reset = b.paired_reset(&grid, |s| (-s).exp()).unwrap();
    for tr in b.limit().simulate(10, 5, LimitOptions::default()) {
        for n in [10.0, 1e4] {
            let st = SecondOrderState::new(&b, &tr, n, 1e-12).unwrap();
            for i in 0..=b.steps {
                let closed = b.gamma_bar[i] + st.eps() * tr.v[i];
                assert!((st.gamma_hat[i] - closed).abs() < 1e-8);
            }
            assert_eq!(st.residual_r(b.steps, &reset), 0.0);
        }
    }
}

#[test]
fn noiseless_limit_reproduces_gamma_bar() {
    let (grid, b) = base(Preset::Tanh);
    let tr = b.limit().simulate_one(3, LimitOptions { noise_scale: 0.0, eta0_scale: 0.0, record_every: 1 });
    let st = SecondOrderState::new(&b, &tr, 100.0, 1e-13).unwrap();
    for (a, g) in st.gamma_hat.iter().zip(&b.gamma_bar) {
        assert!((a - g).abs() < 1e-12);
    }
    let reset = b.paired_reset(&grid, |s| (-2.0 * s).exp()).unwrap();
    assert!(st.residual_r(b.steps, &reset).abs() < 1e-12);
}

#[test]
fn mass_and_contraction() {
    let (_, b) = base(Preset::Tanh);
    for tr in b.limit().simulate(20, 8, LimitOptions::default()) {
        let st = SecondOrderState::new(&b, &tr, 50.0, 1e-12).unwrap();
        assert!((0..=b.steps).all(|i| st.mass(i) == 1.0));
        assert!(st.gamma_hat.iter().all(|g| g.is_finite()));
        assert!(st.picard.kappa <= 0.5 && st.picard.max_ratio <= st.picard.kappa);
    }
}

#[test]
fn trajectory_must_be_dense_and_functions_in_span() {
    let (grid, b) = base(Preset::Tanh);
    let tr = b.limit().simulate_one(1, LimitOptions { record_every: 5, ..LimitOptions::default() });
    assert!(SecondOrderState::new(&b, &tr, 10.0, 1e-12).is_err());
    assert!(b.paired(&grid, |s| 1.0 / (1.0 + s)).is_err());
    assert!(residual_study(&grid, &b, &[10.0], 5, 0, 0.505).is_err());
}

#[test]
fn residual_and_mismatch_rates() {
    let (grid, b) = base(Preset::Tanh);
    let study = residual_study(&grid, &b, &[100.0, 316.0, 1000.0, 3162.0, 10000.0], 2000, 12, 1.0).unwrap();
    for (label, want) in [(residual_label(1), -1.0), (residual_label(2), -1.0), (MISMATCH_LABEL.to_string(), -1.5), (GAP_LABEL.to_string(), -1.0)] {
        let fit = study.fit(&label).unwrap();
        assert!((fit.slope - want).abs() <= 0.3, "{label}: {}", fit.slope);
    }
    assert_eq!(study.bound.violations, 0);
    assert!(study.bound.c_needed <= study.bound.c_used);
    assert!(study.max_mass_error == 0.0);
    assert!(study.picard_max_ratio <= study.picard_kappa);
    let mut buf = Vec::new();
    study.write_csv(&mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1 + study.rows.len());
}
