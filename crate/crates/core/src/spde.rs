//! The second-order approximation û^n = u + n^{-1/2} η and how far it is
//! from solving the noisy age equation.
//!
//! Ψ has rank two in e^{−s} (Ψ(s, y) = A(y) + B(y) e^{−s}), so every pairing
//! below reduces to ⟨·, g⟩ and ⟨·, e^{−s} g⟩ for a few fixed g. For η these
//! are exact linear forms in the Galerkin coefficients as long as g and
//! e^{−s} g lie in the span.

use std::io::Write;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{csv_line, fmt_f64};
use crate::limit::{LimitOptions, LimitSystem, LimitTrajectory};
use crate::model::{ModelParams, Section};
use crate::par;
use crate::pde::DensityGrid;
use crate::sobolev::{orthonormalize, SobolevSpec, TestBasis};
use crate::stats::{self, SlopeFit};
use crate::testfn::ExpChebyshev;

/// Embedding constant for ‖φ‖_{2,1} ≤ C ‖φ‖_{C²_b}: sqrt(3 ∫_0^∞ ds / (1 + s²)).
pub const EMBEDDING_C: f64 = 2.170_803_763_674_803;

/// A function g known through its u-pairings on the time grid and its
/// coordinates in the Galerkin span, together with e^{−s} g.
#[derive(Debug, Clone)]
pub struct Paired {
    pub u: Vec<f64>,
    pub u_x: Vec<f64>,
    pub eta: DVector<f64>,
    pub eta_x: DVector<f64>,
}

impl Paired {
    fn eta_pair(&self, c: &[f64]) -> (f64, f64) {
        let dot = |v: &DVector<f64>| v.iter().zip(c).map(|(a, b)| a * b).sum::<f64>();
        (dot(&self.eta), dot(&self.eta_x))
    }

    /// ⟨u_i + ε η, g Ψ(·, y)⟩ with ε = n^{-1/2}.
    fn hat(&self, i: usize, c: &[f64], eps: f64, sec: Section) -> f64 {
        let (e, ex) = self.eta_pair(c);
        let (a, b) = (sec.a0 + sec.a1, -sec.a1);
        a * (self.u[i] + eps * e) + b * (self.u_x[i] + eps * ex)
    }

    fn base(&self, i: usize, sec: Section) -> f64 {
        let (a, b) = (sec.a0 + sec.a1, -sec.a1);
        a * self.u[i] + b * self.u_x[i]
    }
}

/// Deterministic ingredients shared by every trajectory and every n.
#[derive(Debug, Clone)]
pub struct SpdeBase {
    pub dt: f64,
    pub steps: usize,
    p: ModelParams,
    sys: LimitSystem,
    /// ⟨u_{t_i}, e^{−s}⟩.
    ux: Vec<f64>,
    h: Vec<f64>,
    /// γ̄ from the discrete fixed point with η = W = 0.
    pub gamma_bar: Vec<f64>,
    /// sup_y |∂_yA| and sup_y |∂_yB| over the sampled range.
    lip: (f64, f64),
    h_sup: f64,
    dual: TestBasis<ExpChebyshev>,
}

impl SpdeBase {
    pub fn new(grid: &DensityGrid, p: &ModelParams, sys: LimitSystem, degree: usize) -> Result<Self> {
        let dt = sys.dt;
        let steps = sys.steps;
        let times: Vec<f64> = (0..=steps).map(|i| (i as f64 * dt).min(grid.horizon())).collect();
        let ux: Vec<f64> = times.iter().map(|&t| grid.pairings(t, 1, |s, o| o[0] = (-s).exp())[0]).collect();
        let h: Vec<f64> = (0..=steps).map(|i| p.kernel.eval(i as f64 * dt)).collect();
        let h_sup = (0..=10 * steps).map(|i| p.kernel.eval(i as f64 * dt / 10.0).abs()).fold(0.0, f64::max);
        let mut lip = (0.0f64, 0.0f64);
        for i in 0..=4000 {
            let d = p.intensity.section_dy(-20.0 + 0.01 * i as f64);
            lip.0 = lip.0.max((d.a0 + d.a1).abs());
            lip.1 = lip.1.max(d.a1.abs());
        }
        let spec = SobolevSpec::new(2, 1.0, 40.0)?.with_cells(800);
        let dual = orthonormalize(ExpChebyshev::new(degree), &spec)?;
        if dual.size() != sys.dim {
            return Err(Error::InvalidParameter { name: "degree", reason: format!("dual basis reduced to {} of {}", dual.size(), sys.dim) });
        }
        let mut base = SpdeBase { dt, steps, p: p.clone(), sys, ux, h, gamma_bar: Vec::new(), lip, h_sup, dual };
        let zero = vec![vec![0.0; base.sys.dim]; steps + 1];
        let (g, _) = base.fixed_point(&zero, &vec![0.0; steps + 1], 0.0, &base.initial_guess_zero(), 1e-13)?;
        base.gamma_bar = g;
        Ok(base)
    }

    pub fn limit(&self) -> &LimitSystem {
        &self.sys
    }

    fn initial_guess_zero(&self) -> Vec<f64> {
        vec![0.0; self.steps + 1]
    }

    /// Pairings of g on the time grid and its span coordinates (g and e^{−s} g
    /// must lie in the span).
    pub fn paired(&self, grid: &DensityGrid, g: impl Fn(f64) -> f64 + Sync) -> Result<Paired> {
        let mut u = Vec::with_capacity(self.steps + 1);
        let mut u_x = Vec::with_capacity(self.steps + 1);
        for i in 0..=self.steps {
            let t = (i as f64 * self.dt).min(grid.horizon());
            let v = grid.pairings(t, 2, |s, o| {
                o[0] = g(s);
                o[1] = g(s) * (-s).exp();
            });
            u.push(v[0]);
            u_x.push(v[1]);
        }
        let (eta, r1) = self.sys.galerkin.coords(&g);
        let (eta_x, r2) = self.sys.galerkin.coords(|s| g(s) * (-s).exp());
        if r1.max(r2) > 1e-8 {
            return Err(Error::InvalidParameter { name: "test function", reason: format!("not in the Galerkin span (residual {:e})", r1.max(r2)) });
        }
        Ok(Paired { u, u_x, eta, eta_x })
    }

    /// Rφ for a function given pointwise.
    pub fn paired_reset(&self, grid: &DensityGrid, phi: impl Fn(f64) -> f64 + Sync) -> Result<Paired> {
        let f0 = phi(0.0);
        self.paired(grid, move |s| f0 - phi(s))
    }

    /// F(i, y) = ⟨u_i + ε η_i, Ψ(·, y)⟩ = A(y) + B(y) X̂_i.
    fn xhat(&self, coeffs: &[Vec<f64>], eps: f64) -> Vec<f64> {
        let xc = &self.sys.galerkin.x_coef;
        (0..=self.steps).map(|i| self.ux[i] + eps * xc.iter().zip(&coeffs[i]).map(|(a, b)| a * b).sum::<f64>()).collect()
    }

    /// Picard iteration for
    /// γ_i = dt Σ'' h(t_i − t_j) F(j, γ_j) + ε V_i
    /// on blocks short enough that the map contracts by at most 1/2.
    fn fixed_point(&self, coeffs: &[Vec<f64>], v: &[f64], eps: f64, guess: &[f64], tol: f64) -> Result<(Vec<f64>, PicardReport)> {
        let n = self.steps;
        let dt = self.dt;
        let xh = self.xhat(coeffs, eps);
        let xmax = xh.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let lip_f = self.lip.0 + self.lip.1 * xmax;
        let f = |i: usize, y: f64| {
            let s = self.p.intensity.section(y);
            s.a0 + s.a1 - s.a1 * xh[i]
        };
        // κ(m) ≤ L_F ‖h‖_∞ dt (m + 1/2)
        let per = lip_f * self.h_sup * dt;
        let block = if per > 0.0 { ((0.5 / per) - 0.5).floor().max(1.0) as usize } else { n.max(1) };
        let kappa = per * (block as f64 + 0.5);
        let mut g = guess.to_vec();
        g[0] = 0.0;
        let mut fv: Vec<f64> = (0..=n).map(|i| f(i, g[i])).collect();
        let mut report = PicardReport { block, kappa, iterations: 0, max_ratio: 0.0 };
        let mut a = 1;
        while a <= n {
            let b = (a + block - 1).min(n);
            // history from j < a
            let hist: Vec<f64> = (a..=b)
                .map(|i| {
                    let mut s = 0.5 * self.h[i] * fv[0];
                    for j in 1..a {
                        s += self.h[i - j] * fv[j];
                    }
                    dt * s + eps * v[i]
                })
                .collect();
            let mut prev_diff = f64::INFINITY;
            let mut it = 0;
            loop {
                it += 1;
                let mut diff: f64 = 0.0;
                let new: Vec<f64> = (a..=b)
                    .map(|i| {
                        let mut s = 0.0;
                        for j in a..i {
                            s += self.h[i - j] * fv[j];
                        }
                        s += 0.5 * self.h[0] * fv[i];
                        hist[i - a] + dt * s
                    })
                    .collect();
                for (k, i) in (a..=b).enumerate() {
                    diff = diff.max((new[k] - g[i]).abs());
                    g[i] = new[k];
                    fv[i] = f(i, g[i]);
                }
                if prev_diff.is_finite() && prev_diff > 1e-13 && diff > 1e-14 {
                    report.max_ratio = report.max_ratio.max(diff / prev_diff);
                }
                if !diff.is_finite() {
                    return Err(Error::NonFinite { what: "gamma_hat", point: format!("t = {}", a as f64 * dt) });
                }
                if diff < tol {
                    break;
                }
                if it >= 500 {
                    return Err(Error::NoConvergence(format!("Picard on block starting at t = {}: last change {diff:e}, contraction estimate {kappa:.3}", a as f64 * dt)));
                }
                prev_diff = diff;
            }
            report.iterations += it;
            a = b + 1;
        }
        Ok((g, report))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PicardReport {
    pub block: usize,
    /// A priori contraction bound for one block.
    pub kappa: f64,
    pub iterations: usize,
    /// Largest observed ratio of successive sup-changes.
    pub max_ratio: f64,
}

/// û^n along one limit trajectory.
#[derive(Debug, Clone)]
pub struct SecondOrderState<'a> {
    pub base: &'a SpdeBase,
    pub traj: &'a LimitTrajectory,
    pub n: f64,
    pub gamma_hat: Vec<f64>,
    pub picard: PicardReport,
}

impl<'a> SecondOrderState<'a> {
    /// Solve for γ̂^n along the trajectory (recorded at every step).
    pub fn new(base: &'a SpdeBase, traj: &'a LimitTrajectory, n: f64, tol: f64) -> Result<Self> {
        if traj.coeffs.len() != base.steps + 1 {
            return Err(Error::InvalidParameter { name: "trajectory", reason: "must be recorded at every step".into() });
        }
        let eps = n.powf(-0.5);
        let guess: Vec<f64> = base.gamma_bar.iter().zip(&traj.gamma).map(|(g, x)| g + eps * x).collect();
        let (gamma_hat, picard) = base.fixed_point(&traj.coeffs, &traj.v, eps, &guess, tol)?;
        Ok(SecondOrderState { base, traj, n, gamma_hat, picard })
    }

    pub fn eps(&self) -> f64 {
        self.n.powf(-0.5)
    }

    /// ⟨û^n_{t_i}, 1⟩.
    pub fn mass(&self, i: usize) -> f64 {
        1.0 + self.eps() * self.traj.coeffs[i][0]
    }

    /// |γ̂ − (γ̄ + n^{-1/2} Γ)| at step i.
    pub fn linearization_gap(&self, i: usize) -> f64 {
        (self.gamma_hat[i] - self.base.gamma_bar[i] - self.eps() * self.traj.gamma[i]).abs()
    }

    /// r^n_{t_i}(φ) with `reset` = Rφ, by the trapezoid rule in time.
    pub fn residual_r(&self, i_end: usize, reset: &Paired) -> f64 {
        let eps = self.eps();
        let intensity = &self.base.p.intensity;
        let term = |i: usize| {
            let c = &self.traj.coeffs[i];
            let gb = self.base.gamma_bar[i];
            let sb = intensity.section(gb);
            let sh = intensity.section(self.gamma_hat[i]);
            let diff = Section { a0: sb.a0 - sh.a0, a1: sb.a1 - sh.a1 };
            reset.hat(i, c, eps, diff) + reset.base(i, intensity.section_dy(gb)) * eps * self.traj.gamma[i]
        };
        trapezoid(i_end, self.base.dt, term)
    }

    /// |DM_t(φ1, φ2) − D̂M_t(φ1, φ2)| with `prod` = φ1 φ2, both carrying 1/n.
    pub fn covariance_mismatch(&self, i_end: usize, prod: &Paired) -> f64 {
        let eps = self.eps();
        let intensity = &self.base.p.intensity;
        let term = |i: usize| {
            let c = &self.traj.coeffs[i];
            prod.base(i, intensity.section(self.base.gamma_bar[i])) - prod.hat(i, c, eps, intensity.section(self.gamma_hat[i]))
        };
        (trapezoid(i_end, self.base.dt, term) / self.n).abs()
    }

    /// ‖η_{t_i}‖_{−2,1} over the span.
    pub fn eta_dual_norm(&self, i: usize) -> f64 {
        self.base.dual.from_raw(&self.traj.coeffs[i]).norm()
    }

    /// ⟨û^n_{t_i}, φ⟩ for φ = Σ d_j B_j with `u_phi` = ⟨u_{t_i}, φ⟩.
    pub fn pair(&self, i: usize, u_phi: f64, d: &DVector<f64>) -> f64 {
        u_phi + self.eps() * d.iter().zip(&self.traj.coeffs[i]).map(|(a, b)| a * b).sum::<f64>()
    }
}

fn trapezoid(i_end: usize, dt: f64, f: impl Fn(usize) -> f64) -> f64 {
    if i_end == 0 {
        return 0.0;
    }
    let mut s = 0.5 * (f(0) + f(i_end));
    for i in 1..i_end {
        s += f(i);
    }
    s * dt
}

/// A test function for the bound |⟨û_t, φ⟩| ≤ (1 + C n^{-1/2} ‖η_t‖) ‖φ‖_{C²_b}.
#[derive(Debug, Clone)]
pub struct BoundProbe {
    pub u: Vec<f64>,
    pub coords: DVector<f64>,
    pub c2_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub checks: usize,
    pub violations: usize,
    /// Smallest C that would make every check hold.
    pub c_needed: f64,
    pub c_used: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub n: f64,
    pub t: f64,
    pub quantity: String,
    pub mean_abs: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyFit {
    pub quantity: String,
    pub fit: SlopeFit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpdeStudy {
    pub replicas: usize,
    pub seed: u64,
    pub rows: Vec<StudyRow>,
    pub fits: Vec<StudyFit>,
    pub bound: BoundReport,
    pub picard_max_ratio: f64,
    pub picard_kappa: f64,
    pub max_mass_error: f64,
}

impl SpdeStudy {
    pub fn fit(&self, quantity: &str) -> Option<&SlopeFit> {
        self.fits.iter().find(|f| f.quantity == quantity).map(|f| &f.fit)
    }

    /// Columns n, t, quantity, mean_abs, stderr.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "n,t,quantity,mean_abs,stderr")?;
        for r in &self.rows {
            write!(w, "{}", csv_line(&[fmt_f64(r.n), fmt_f64(r.t), r.quantity.clone(), fmt_f64(r.mean_abs), fmt_f64(r.stderr)]))?;
        }
        Ok(())
    }
}

/// E|r^n_t(φ)| for φ = e^{−qs}, E|DM − D̂M| for (e^{−s}, e^{−2s}) and the
/// γ̂ linearization gap over an n grid, with one η ensemble shared by every n.
pub fn residual_study(grid: &DensityGrid, base: &SpdeBase, n_grid: &[f64], replicas: usize, seed: u64, t: f64) -> Result<SpdeStudy> {
    let i_end = ((t / base.dt) + 1e-9).round() as usize;
    if i_end > base.steps || (i_end as f64 * base.dt - t).abs() > 1e-9 {
        return Err(Error::InvalidParameter { name: "t", reason: format!("{t} is not a step time") });
    }
    let qs = [1.0, 2.0];
    let resets: Vec<Paired> = qs.iter().map(|&q| base.paired_reset(grid, move |s| (-q * s).exp())).collect::<Result<_>>()?;
    let prod = base.paired(grid, |s| (-3.0 * s).exp())?;
    let probes: Vec<BoundProbe> = [0.0, 1.0, 2.0, 3.0]
        .iter()
        .map(|&q: &f64| {
            let pr = base.paired(grid, move |s| (-q * s).exp())?;
            Ok(BoundProbe { u: pr.u, coords: pr.eta, c2_norm: 1.0f64.max(q).max(q * q) })
        })
        .collect::<Result<_>>()?;
    let trajs = base.sys.simulate(replicas, seed, LimitOptions::default());
    let mut labels: Vec<String> = qs.iter().map(|q| format!("r:exp(-{q}s)")).collect();
    labels.push("mismatch:exp(-s),exp(-2s)".into());
    labels.push("gamma_gap".into());
    let per_n: Vec<Result<(Vec<Vec<f64>>, BoundReport, f64, f64, f64)>> = n_grid
        .iter()
        .map(|&n| {
            let out = par::map_indexed(replicas, |r| -> Result<(Vec<f64>, usize, usize, f64, f64, f64, f64)> {
                let st = SecondOrderState::new(base, &trajs[r], n, 1e-12)?;
                let mut vals: Vec<f64> = resets.iter().map(|rs| st.residual_r(i_end, rs).abs()).collect();
                vals.push(st.covariance_mismatch(i_end, &prod));
                vals.push(st.linearization_gap(i_end));
                let (mut checks, mut viol, mut c_need, mut mass_err) = (0, 0, 0.0f64, 0.0f64);
                for i in 0..=base.steps {
                    let norm = st.eta_dual_norm(i);
                    mass_err = mass_err.max((st.mass(i) - 1.0).abs());
                    for pb in &probes {
                        let v = st.pair(i, pb.u[i], &pb.coords).abs();
                        let bound = (1.0 + EMBEDDING_C * st.eps() * norm) * pb.c2_norm;
                        checks += 1;
                        if v > bound * (1.0 + 1e-12) {
                            viol += 1;
                        }
                        if norm > 0.0 {
                            c_need = c_need.max((v / pb.c2_norm - 1.0) / (st.eps() * norm));
                        }
                    }
                }
                Ok((vals, checks, viol, c_need, mass_err, st.picard.max_ratio, st.picard.kappa))
            });
            let mut cols = vec![Vec::with_capacity(replicas); labels.len()];
            let mut rep = BoundReport { checks: 0, violations: 0, c_needed: 0.0, c_used: EMBEDDING_C };
            let (mut mass, mut ratio, mut kappa) = (0.0f64, 0.0f64, 0.0f64);
            for o in out {
                let (vals, ch, vi, cn, me, mr, ka) = o?;
                for (c, v) in cols.iter_mut().zip(vals) {
                    c.push(v);
                }
                rep.checks += ch;
                rep.violations += vi;
                rep.c_needed = rep.c_needed.max(cn);
                mass = mass.max(me);
                ratio = ratio.max(mr);
                kappa = kappa.max(ka);
            }
            Ok((cols, rep, mass, ratio, kappa))
        })
        .collect();
    let mut rows = Vec::new();
    let mut bound = BoundReport { checks: 0, violations: 0, c_needed: 0.0, c_used: EMBEDDING_C };
    let (mut mass, mut ratio, mut kappa) = (0.0f64, 0.0f64, 0.0f64);
    let mut series: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = vec![(Vec::new(), Vec::new(), Vec::new()); labels.len()];
    for (&n, res) in n_grid.iter().zip(per_n) {
        let (cols, rep, me, mr, ka) = res?;
        bound.checks += rep.checks;
        bound.violations += rep.violations;
        bound.c_needed = bound.c_needed.max(rep.c_needed);
        mass = mass.max(me);
        ratio = ratio.max(mr);
        kappa = kappa.max(ka);
        for (k, col) in cols.iter().enumerate() {
            let m = stats::mean(col);
            let se = stats::std_error(col);
            rows.push(StudyRow { n, t, quantity: labels[k].clone(), mean_abs: m, stderr: se });
            if m > 0.0 {
                series[k].0.push(n.ln());
                series[k].1.push(m.ln());
                series[k].2.push((se / m).powi(2).max(1e-30));
            }
        }
    }
    let mut fits = Vec::new();
    for (k, (x, y, v)) in series.iter().enumerate() {
        if x.len() >= 3 {
            fits.push(StudyFit { quantity: labels[k].clone(), fit: stats::weighted_line(x, y, v) });
        }
    }
    Ok(SpdeStudy { replicas, seed, rows, fits, bound, picard_max_ratio: ratio, picard_kappa: kappa, max_mass_error: mass })
}

/// Label of the residual quantity for φ = e^{−qs}.
pub fn residual_label(q: u32) -> String {
    format!("r:exp(-{q}s)")
}

pub const MISMATCH_LABEL: &str = "mismatch:exp(-s),exp(-2s)";
pub const GAP_LABEL: &str = "gamma_gap";
