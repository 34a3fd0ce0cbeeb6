use std::sync::OnceLock;

use adhp::fluctuation::{fluctuation_ensemble, Observable, SweepOptions};
use adhp::limit::*;
use adhp::model::{ModelParams, Preset};
use adhp::pde::{solve_pde, DensityGrid, PdeOptions};
use adhp::stats::{excess_kurtosis, mean, skewness, std_error, variance};
use adhp::testfn::{ExpChebyshev, ExpRates, TestFamily};
use nalgebra::DVector;

struct Setup {
    p: ModelParams,
    grid: DensityGrid,
    sys: LimitSystem,
}

fn build(preset: Preset, dt: f64) -> Setup {
    let p = preset.params(1, 1.0).unwrap();
    let grid = solve_pde(&p, PdeOptions::new(1e-3)).unwrap();
    let sys = LimitSystem::new(&grid, &p, &ExpChebyshev::new(10), dt, 1.0).unwrap();
    Setup { p, grid, sys }
}

fn tanh() -> &'static Setup {
    static S: OnceLock<Setup> = OnceLock::new();
    S.get_or_init(|| build(Preset::Tanh, 1e-2))
}

/// Rows mapping (c_0..c_K, Γ) to (⟨η, e^{−s}⟩, ⟨η, e^{−2s}⟩, ⟨η, e^{−3s}⟩, Γ).
fn observables(sys: &LimitSystem) -> Vec<DVector<f64>> {
    let d = sys.dim + 1;
    let mut rows = Vec::new();
    for q in 1..=3 {
        let (c, res) = sys.galerkin.coords(|s| (-(q as f64) * s).exp());
        assert!(res < 1e-8);
        rows.push(DVector::from_iterator(d, c.iter().copied().chain(std::iter::once(0.0))));
    }
    let mut g = DVector::zeros(d);
    g[d - 1] = 1.0;
    rows.push(g);
    rows
}

fn state(tr: &LimitTrajectory, i: usize) -> DVector<f64> {
    DVector::from_iterator(tr.coeffs[i].len() + 1, tr.coeffs[i].iter().copied().chain(std::iter::once(tr.gamma[i])))
}

/// Zero on the ages any particle can reach before T = 1.
struct FarAway;

impl TestFamily for FarAway {
    fn len(&self) -> usize {
        2
    }

    fn eval_into(&self, s: f64, _order: usize, out: &mut [f64]) {
        out[0] = if s > 5.0 { 1.0 } else { 0.0 };
        out[1] = if s > 6.0 { (s - 6.0).powi(2) } else { 0.0 };
    }
}

#[test]
fn noise_covariance() {
    let p = Preset::Constant.params(1, 1.0).unwrap();
    let g = solve_pde(&p, PdeOptions::new(1e-3)).unwrap();
    let noise = assemble_noise(&g, &p, &ExpChebyshev::new(4), 1e-2, 1.0).unwrap();
    for t in [0.1, 0.5, 1.0] {
        assert!((noise.cumulative(t)[(0, 0)] - 0.5 * t).abs() < 1e-9);
    }
    for (c, f) in noise.c_step.iter().zip(&noise.factors) {
        assert!((f * f.transpose() - c).abs().max() < 1e-14);
        assert!(c.clone().symmetric_eigenvalues().min() > -1e-14);
    }
    let far = assemble_noise(&g, &p, &FarAway, 1e-2, 1.0).unwrap();
    assert!(far.cumulative(1.0).iter().all(|&v| v == 0.0));
    assert!(assemble_noise(&g, &p, &FarAway, 1e-2, 2.0).is_err());
}

#[test]
fn family_must_start_with_the_constant() {
    assert!(GalerkinSystem::new(&ExpRates::new(vec![1.0, 0.0]), 3.0, 1.0).is_err());
    assert!(GalerkinSystem::new(&ExpRates::new(vec![0.0, 2.0]), 3.0, 1.0).is_err());
    let gs = GalerkinSystem::new(&ExpChebyshev::new(6), 3.0, 1.0).unwrap();
    let (c, res) = gs.coords(|s| (-s).exp());
    assert!(res < 1e-10 && (c - &gs.x_coef).abs().max() < 1e-12);
}

#[test]
fn homogeneous_system_stays_at_zero() {
    let s = tanh();
    let tr = s.sys.simulate_one(7, LimitOptions { noise_scale: 0.0, eta0_scale: 0.0, record_every: 10 });
    assert!(tr.coeffs.iter().flatten().chain(&tr.gamma).chain(&tr.v).all(|&v| v == 0.0));
    assert_eq!(*tr.times.last().unwrap(), 1.0);
}

#[test]
fn doubling_both_scales_doubles_every_coordinate() {
    let s = tanh();
    let one = s.sys.simulate_one(11, LimitOptions::default());
    let two = s.sys.simulate_one(11, LimitOptions { noise_scale: 2.0, eta0_scale: 2.0, record_every: 1 });
    for (a, b) in one.coeffs.iter().flatten().chain(&one.gamma).zip(two.coeffs.iter().flatten().chain(&two.gamma)) {
        assert_eq!(2.0 * a, *b);
    }
}

#[test]
fn total_mass_and_initial_covariance() {
    let s = tanh();
    assert!(s.sys.max_residual < 1e-2, "{}", s.sys.max_residual);
    for tr in s.sys.simulate(20, 3, LimitOptions::default()) {
        assert!(tr.coeffs.iter().all(|c| c[0] == 0.0));
        assert_eq!(tr.gamma[0], 0.0);
    }
    let cov = s.sys.covariance(LimitOptions::default());
    let d = s.sys.dim;
    // F Fᵀ of the clipped eigen-factor reproduces the matrix up to rounding
    assert!((cov.cov[0].view((0, 0), (d, d)) - &s.sys.eta0_cov).abs().max() < 1e-13);
    assert!(cov.cov[0].row(d).iter().all(|&v| v == 0.0));
    assert!(cov.cov.iter().all(|m| m.row(0).iter().all(|&v| v == 0.0)));
}

#[test]
fn constant_rate_gamma_variance_closed_form() {
    let s = build(Preset::Constant, 1e-3);
    let cov = s.sys.covariance(LimitOptions { record_every: 50, ..LimitOptions::default() });
    let d = s.sys.dim;
    for (t, m) in cov.times.iter().zip(&cov.cov) {
        let exact = 0.25 * (1.0 - (-2.0 * t).exp());
        assert!((m[(d, d)] - exact).abs() <= 1e-3 * exact.max(1e-3), "t={t}: {} {exact}", m[(d, d)]);
    }
    let trs = s.sys.simulate(10_000, 5, LimitOptions { record_every: 1000, ..LimitOptions::default() });
    let g1: Vec<f64> = trs.iter().map(|t| t.gamma.last().unwrap() * t.gamma.last().unwrap()).collect();
    assert!((mean(&g1) - 0.25 * (1.0 - (-2f64).exp())).abs() < 3.0 * std_error(&g1));
}

#[test]
fn sampled_covariance_matches_the_propagated_one() {
    let s = tanh();
    let obs = observables(&s.sys);
    let cov = s.sys.covariance(LimitOptions::default());
    let last = cov.cov.len() - 1;
    let trs = s.sys.simulate(10_000, 99, LimitOptions::default());
    let vals: Vec<Vec<f64>> = obs.iter().map(|o| trs.iter().map(|tr| o.dot(&state(tr, last))).collect()).collect();
    for a in 0..4 {
        for b in a..4 {
            let want = (obs[a].transpose() * &cov.cov[last] * &obs[b])[(0, 0)];
            let (ma, mb) = (mean(&vals[a]), mean(&vals[b]));
            let prods: Vec<f64> = vals[a].iter().zip(&vals[b]).map(|(x, y)| (x - ma) * (y - mb)).collect();
            assert!((mean(&prods) - want).abs() < 3.0 * std_error(&prods), "({a},{b}) {} {want}", mean(&prods));
        }
    }
    for v in &vals {
        assert!(skewness(v).abs() < 0.08 && excess_kurtosis(v).abs() < 0.15);
    }
}

#[test]
fn noise_matches_particle_w_at_n_2000() {
    let s = tanh();
    let fam = ExpRates::new(vec![1.0, 2.0]);
    let noise = assemble_noise(&s.grid, &s.p, &fam, 1e-2, 1.0).unwrap();
    let c = noise.cumulative(1.0);
    let p = s.p.with_n(2000).unwrap();
    let tab = fluctuation_ensemble(&p, &s.grid, &fam, &[1.0], 2000, 41, SweepOptions::default()).unwrap();
    let w = [tab.column(0, Observable::W(0)), tab.column(0, Observable::W(1))];
    for a in 0..2 {
        for b in a..2 {
            let prods: Vec<f64> = w[a].iter().zip(&w[b]).map(|(x, y)| x * y).collect();
            assert!((mean(&prods) - c[(a, b)]).abs() < 3.0 * std_error(&prods), "({a},{b}) {} {}", mean(&prods), c[(a, b)]);
        }
    }
}

#[test]
fn limit_variance_matches_particles_at_n_1000() {
    let s = tanh();
    let obs = observables(&s.sys);
    let cov = s.sys.covariance(LimitOptions::default());
    let m = cov.cov.last().unwrap();
    let p = s.p.with_n(1000).unwrap();
    let tab = fluctuation_ensemble(&p, &s.grid, &ExpRates::new(vec![1.0, 2.0]), &[1.0], 2000, 43, SweepOptions::default()).unwrap();
    for (j, o) in obs.iter().take(2).enumerate() {
        let limit = (o.transpose() * m * o)[(0, 0)];
        let particle = variance(&tab.column(0, Observable::Eta(j)));
        assert!((particle / limit - 1.0).abs() < 0.1, "{j}: {particle} {limit}");
    }
}

#[test]
fn csv_outputs() {
    let s = tanh();
    let trs = s.sys.simulate(2, 1, LimitOptions { record_every: 50, ..LimitOptions::default() });
    let mut buf = Vec::new();
    write_trajectories_csv(&mut buf, &trs).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), 1 + 2 * 3 * (s.sys.dim + 2));
    let cov = s.sys.covariance(LimitOptions { record_every: 100, ..LimitOptions::default() });
    let mut buf = Vec::new();
    write_covariance_csv(&mut buf, &cov).unwrap();
    let d = s.sys.dim + 1;
    assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1 + 2 * d * (d + 1) / 2);
}
