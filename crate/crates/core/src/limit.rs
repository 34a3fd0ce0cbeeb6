//! The Gaussian limit system for (η, Γ), closed on a finite Galerkin span.
//!
//! With coefficients c_k = ⟨η, B_k⟩ (B_0 = 1) the system is stepped by
//! Euler–Maruyama,
//!
//!   c_k ← c_k + dt (Σ_j P_kj(t) c_j + g_k(t) Γ) + B_k(0) ΔW_0 − ΔW_k,
//!
//! where Σ_j P_kj B_j is the weighted-L² projection of L_t B_k,
//! g_k = ⟨u_t, ∂_yΨ(·, γ̄(t)) R B_k⟩ and ΔW_j are increments of W(B_j). Γ
//! solves its Volterra equation by the trapezoid rule with the diagonal term
//! taken implicitly. Because the recursion is linear, the same step code run
//! on sensitivity vectors instead of numbers gives the exact covariance of
//! the discrete scheme.

use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{csv_line, fmt_f64};
use crate::model::ModelParams;
use crate::par;
use crate::pde::DensityGrid;
use crate::rng::{self, replica_seed};
use crate::testfn::{Projector, TestFamily};

/// Per-step covariances of the increments of W(φ_j) over a test family.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseCovariance {
    pub dt: f64,
    pub steps: usize,
    /// C_step[i][(j, l)] = ∫_{t_i}^{t_i + dt} ⟨u_z, φ_j φ_l Ψ(·, γ̄(z))⟩ dz.
    pub c_step: Vec<DMatrix<f64>>,
    /// F with F Fᵀ = C_step, eigenvalues clipped at zero.
    pub factors: Vec<DMatrix<f64>>,
}

impl NoiseCovariance {
    /// Σ_{i < steps(t)} C_step[i], the covariance of W_t.
    pub fn cumulative(&self, t: f64) -> DMatrix<f64> {
        let k = ((t / self.dt) + 1e-9).floor() as usize;
        let d = self.c_step.first().map_or(0, |c| c.nrows());
        self.c_step.iter().take(k.min(self.steps)).fold(DMatrix::zeros(d, d), |acc, c| acc + c)
    }
}

/// Linear interpolation between snapshot times.
fn snapshot_weights(grid: &DensityGrid, t: f64) -> (usize, usize, f64) {
    let ts = &grid.snapshot_times;
    let k = ts.partition_point(|&x| x <= t + 1e-12);
    let a = k.saturating_sub(1).min(ts.len() - 1);
    if a + 1 >= ts.len() {
        return (a, a, 0.0);
    }
    (a, a + 1, ((t - ts[a]) / (ts[a + 1] - ts[a])).clamp(0.0, 1.0))
}

fn interp<T>(vals: &[T], grid: &DensityGrid, t: f64, f: impl Fn(&T, &T, f64) -> T) -> T {
    let (a, b, w) = snapshot_weights(grid, t);
    f(&vals[a], &vals[b], w)
}

fn lerp_mat(a: &DMatrix<f64>, b: &DMatrix<f64>, w: f64) -> DMatrix<f64> {
    a * (1.0 - w) + b * w
}

/// PSD factor with eigenvalues clipped at 0; errors if the most negative
/// eigenvalue is below −1e-10·trace.
fn psd_factor(c: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let tr = c.trace().abs();
    let eig = SymmetricEigen::new(c.clone());
    let min = eig.eigenvalues.min();
    if min < -1e-10 * tr.max(1e-300) {
        return Err(Error::AssumptionFailed { name: "psd", detail: format!("{what}: eigenvalue {min:e} below floor, trace {tr:e}") });
    }
    let sq = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&sq))
}

/// Increment covariances on [0, horizon] by the trapezoid rule in time over
/// ⟨u_z, φ_j φ_l Ψ(·, γ̄(z))⟩, with u interpolated between snapshots.
pub fn assemble_noise(grid: &DensityGrid, p: &ModelParams, family: &dyn TestFamily, dt: f64, horizon: f64) -> Result<NoiseCovariance> {
    if !(dt > 0.0) || horizon > grid.horizon() * (1.0 + 1e-12) {
        return Err(Error::InvalidParameter { name: "dt", reason: format!("dt {dt} or horizon {horizon} outside the grid") });
    }
    let k = family.len();
    let per_snap: Vec<DMatrix<f64>> = grid
        .snapshot_times
        .iter()
        .map(|&z| {
            let sec = p.intensity.section(grid.gamma_bar.at(z));
            let v = grid.pairings(z, k * k, |s, out| {
                let b = family.values(s);
                let psi = sec.eval(s);
                for i in 0..k {
                    for j in 0..k {
                        out[i * k + j] = b[i] * b[j] * psi;
                    }
                }
            });
            DMatrix::from_row_slice(k, k, &v)
        })
        .collect();
    let steps = (horizon / dt - 1e-9).ceil() as usize;
    let g_at = |t: f64| interp(&per_snap, grid, t, lerp_mat);
    let mut c_step = Vec::with_capacity(steps);
    let mut factors = Vec::with_capacity(steps);
    let mut lo = g_at(0.0);
    for i in 0..steps {
        let hi = g_at((i + 1) as f64 * dt);
        let c = (&lo + &hi) * (0.5 * dt);
        let c = (&c + c.transpose()) * 0.5;
        factors.push(psd_factor(&c, &format!("noise step {i}"))?);
        c_step.push(c);
        lo = hi;
    }
    Ok(NoiseCovariance { dt, steps, c_step, factors })
}

/// z-independent projections of the pieces of L_z B_k = B_k' + A(z) R B_k + B(z) x R B_k,
/// where Ψ(s, y) = A(y) + B(y) e^{−s}.
#[derive(Debug, Clone)]
pub struct GalerkinSystem {
    pub dim: usize,
    pub at_zero: Vec<f64>,
    proj_d: DMatrix<f64>,
    proj_r: DMatrix<f64>,
    proj_x: DMatrix<f64>,
    /// Residual norms of the three projections, per k.
    res: Vec<[f64; 3]>,
    /// Gram of (D_k, R_k, X_k) per k, for the norm of L_z B_k.
    gram3: Vec<[[f64; 3]; 3]>,
    /// e^{−s} = Σ x_coef_j B_j.
    pub x_coef: DVector<f64>,
    projector: Projector,
}

impl GalerkinSystem {
    pub fn new(family: &dyn TestFamily, s_max: f64, alpha: f64) -> Result<Self> {
        let dim = family.len();
        for &s in &[0.0, 0.5, 2.0] {
            let v = family.values(s);
            let d = family.derivs(s, 1);
            if (v[0] - 1.0).abs() > 1e-14 || d[0].abs() > 1e-14 {
                return Err(Error::InvalidParameter { name: "family", reason: "member 0 must be the constant 1".into() });
            }
        }
        let pr = Projector::new(family, s_max, alpha, 256);
        let at_zero = family.values(0.0);
        let nodes = pr.l2.nodes.clone();
        let mut proj_d = DMatrix::zeros(dim, dim);
        let mut proj_r = DMatrix::zeros(dim, dim);
        let mut proj_x = DMatrix::zeros(dim, dim);
        let mut res = Vec::with_capacity(dim);
        let mut gram3 = Vec::with_capacity(dim);
        let vals: Vec<Vec<f64>> = nodes.iter().map(|&s| family.values(s)).collect();
        let ders: Vec<Vec<f64>> = nodes.iter().map(|&s| family.derivs(s, 1)).collect();
        for k in 0..dim {
            let d: Vec<f64> = ders.iter().map(|v| v[k]).collect();
            let r: Vec<f64> = vals.iter().map(|v| at_zero[k] - v[k]).collect();
            let x: Vec<f64> = r.iter().zip(&nodes).map(|(r, s)| r * (-s).exp()).collect();
            let mut rk = [0.0; 3];
            for (slot, (g, m)) in [(&d, &mut proj_d), (&r, &mut proj_r), (&x, &mut proj_x)].into_iter().enumerate() {
                let (c, rel) = pr.project(g);
                rk[slot] = rel * pr.l2.norm2(g).sqrt();
                m.row_mut(k).copy_from(&c.transpose());
            }
            let fs = [&d, &r, &x];
            let mut g3 = [[0.0; 3]; 3];
            for a in 0..3 {
                for b in 0..3 {
                    g3[a][b] = fs[a].iter().zip(fs[b]).zip(&pr.l2.weights).map(|((u, v), w)| u * v * w).sum();
                }
            }
            res.push(rk);
            gram3.push(g3);
        }
        let (x_coef, xres) = pr.project_fn(|s| (-s).exp());
        if xres > 1e-8 {
            return Err(Error::InvalidParameter { name: "family", reason: format!("e^{{-s}} not in the span (residual {xres:e})") });
        }
        Ok(GalerkinSystem { dim, at_zero, proj_d, proj_r, proj_x, res, gram3, x_coef, projector: pr })
    }

    /// P with ⟨η, L B_k⟩ = Σ_j P_kj c_j, for Ψ(·, y) = A + B e^{−s}.
    pub fn drift(&self, a: f64, b: f64) -> DMatrix<f64> {
        &self.proj_d + &self.proj_r * a + &self.proj_x * b
    }

    /// Largest relative projection residual ‖L B_k − Proj‖ / ‖L B_k‖ over k ≥ 1.
    pub fn residual(&self, a: f64, b: f64) -> f64 {
        let w = [1.0, a, b];
        (1..self.dim)
            .map(|k| {
                let r = self.res[k][0] + a.abs() * self.res[k][1] + b.abs() * self.res[k][2];
                let g = &self.gram3[k];
                let n2: f64 = (0..3).flat_map(|i| (0..3).map(move |j| (i, j))).map(|(i, j)| w[i] * w[j] * g[i][j]).sum();
                if n2 > 0.0 {
                    r / n2.sqrt()
                } else {
                    0.0
                }
            })
            .fold(0.0, f64::max)
    }

    /// Coordinates of f in the span and the relative residual.
    pub fn coords(&self, f: impl Fn(f64) -> f64) -> (DVector<f64>, f64) {
        self.projector.project_fn(f)
    }
}

/// Markov form of an exponential-polynomial kernel on a uniform step, or the
/// sampled kernel for direct sums.
#[derive(Debug, Clone)]
enum Memory {
    Markov { coef: Vec<f64>, shift: DMatrix<f64>, add_h: Vec<f64>, add_v: Vec<f64> },
    Direct { h_full: Vec<f64>, h_half: Vec<f64> },
}

impl Memory {
    fn new(p: &ModelParams, dt: f64, steps: usize) -> Self {
        match p.kernel.exp_poly() {
            Some((rate, coef)) => {
                let m = coef.len();
                let fact = |k: usize| (1..=k).fold(1.0, |a, i| a * i as f64);
                let mut shift = DMatrix::zeros(m, m);
                for i in 0..m {
                    for l in 0..=i {
                        shift[(i, l)] = (-rate * dt).exp() * dt.powi((i - l) as i32) / fact(i - l);
                    }
                }
                let add_h = (0..m).map(|i| dt * dt.powi(i as i32) / fact(i) * (-rate * dt).exp()).collect();
                let add_v = (0..m).map(|i| (0.5 * dt).powi(i as i32) / fact(i) * (-rate * 0.5 * dt).exp()).collect();
                Memory::Markov { coef, shift, add_h, add_v }
            }
            None => Memory::Direct {
                h_full: (0..=steps).map(|i| p.kernel.eval(i as f64 * dt)).collect(),
                h_half: (0..=steps).map(|i| p.kernel.eval((i as f64 - 0.5) * dt)).collect(),
            },
        }
    }
}

/// Numbers or sensitivity vectors: whatever the step map acts on linearly.
pub(crate) trait Lin: Clone {
    fn zero_like(&self) -> Self;
    fn axpy(&mut self, a: f64, x: &Self);
}

impl Lin for f64 {
    fn zero_like(&self) -> Self {
        0.0
    }
    fn axpy(&mut self, a: f64, x: &Self) {
        *self += a * x;
    }
}

impl Lin for Vec<f64> {
    fn zero_like(&self) -> Self {
        vec![0.0; self.len()]
    }
    fn axpy(&mut self, a: f64, x: &Self) {
        if a != 0.0 {
            for (s, v) in self.iter_mut().zip(x) {
                *s += a * v;
            }
        }
    }
}

fn scaled<T: Lin>(x: &T, a: f64) -> T {
    let mut z = x.zero_like();
    z.axpy(a, x);
    z
}

/// Source of the Gaussian inputs: η_0 = F0 ξ and ΔW_i = F_i ζ_i.
pub(crate) trait Drive<T> {
    fn combine(&mut self, f: &DMatrix<f64>, slot: usize) -> Vec<T>;
}

struct Sampler {
    rng: rand_chacha::ChaCha8Rng,
    scale_eta0: f64,
    scale_noise: f64,
}

impl Drive<f64> for Sampler {
    fn combine(&mut self, f: &DMatrix<f64>, slot: usize) -> Vec<f64> {
        let scale = if slot == 0 { self.scale_eta0 } else { self.scale_noise };
        let z: Vec<f64> = (0..f.ncols()).map(|_| self.rng.sample::<f64, _>(StandardNormal) * scale).collect();
        (0..f.nrows()).map(|r| (0..f.ncols()).map(|c| f[(r, c)] * z[c]).sum()).collect()
    }
}

/// Input slot s occupies coordinates [s·dim, (s+1)·dim).
struct Sensitivity {
    total: usize,
    scale_eta0: f64,
    scale_noise: f64,
}

impl Drive<Vec<f64>> for Sensitivity {
    fn combine(&mut self, f: &DMatrix<f64>, slot: usize) -> Vec<Vec<f64>> {
        let d = f.ncols();
        let scale = if slot == 0 { self.scale_eta0 } else { self.scale_noise };
        (0..f.nrows())
            .map(|r| {
                let mut v = vec![0.0; self.total];
                for c in 0..d {
                    v[slot * d + c] = f[(r, c)] * scale;
                }
                v
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitOptions {
    pub noise_scale: f64,
    pub eta0_scale: f64,
    /// Record every this many steps (the final step is always recorded).
    pub record_every: usize,
}

impl Default for LimitOptions {
    fn default() -> Self {
        LimitOptions { noise_scale: 1.0, eta0_scale: 1.0, record_every: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitTrajectory {
    pub times: Vec<f64>,
    /// ⟨η_t, B_k⟩ per recorded time.
    pub coeffs: Vec<Vec<f64>>,
    pub gamma: Vec<f64>,
    /// V_t = ∫_0^t h(t − z) dW_z(1).
    pub v: Vec<f64>,
    /// W_t(B_k) per recorded time.
    pub w: Vec<Vec<f64>>,
}

/// Covariance of (c_0..c_{K}, Γ) at recorded times.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceTrajectory {
    pub times: Vec<f64>,
    pub cov: Vec<DMatrix<f64>>,
}

/// Everything the stepper needs, evaluated on the time grid.
#[derive(Debug, Clone)]
pub struct LimitSystem {
    pub dt: f64,
    pub steps: usize,
    pub dim: usize,
    pub galerkin: GalerkinSystem,
    pub noise: NoiseCovariance,
    pub eta0_cov: DMatrix<f64>,
    eta0_factor: DMatrix<f64>,
    drift: Vec<DMatrix<f64>>,
    g: Vec<DVector<f64>>,
    gbar: Vec<f64>,
    psi_ab: Vec<(f64, f64)>,
    h0: f64,
    memory: Memory,
    /// Largest projection residual seen over the steps.
    pub max_residual: f64,
}

impl LimitSystem {
    pub fn new(grid: &DensityGrid, p: &ModelParams, family: &dyn TestFamily, dt: f64, horizon: f64) -> Result<Self> {
        let noise = assemble_noise(grid, p, family, dt, horizon)?;
        let steps = noise.steps;
        let dim = family.len();
        let galerkin = GalerkinSystem::new(family, grid.s_max(), 1.0)?;
        let at_zero = galerkin.at_zero.clone();
        // ⟨u_z, B_k⟩ and ⟨u_z, e^{−s} B_k⟩ at every snapshot
        let mom: Vec<(DVector<f64>, DVector<f64>)> = grid
            .snapshot_times
            .iter()
            .map(|&z| {
                let v = grid.pairings(z, 2 * dim, |s, out| {
                    let b = family.values(s);
                    let x = (-s).exp();
                    for k in 0..dim {
                        out[k] = b[k];
                        out[dim + k] = x * b[k];
                    }
                });
                (DVector::from_column_slice(&v[..dim]), DVector::from_column_slice(&v[dim..]))
            })
            .collect();
        let mut drift = Vec::with_capacity(steps + 1);
        let mut g = Vec::with_capacity(steps + 1);
        let mut gbar = Vec::with_capacity(steps + 1);
        let mut psi_ab = Vec::with_capacity(steps + 1);
        let mut max_residual: f64 = 0.0;
        for i in 0..=steps {
            let t = (i as f64 * dt).min(grid.horizon());
            let y = grid.gamma_bar.at(t);
            let sec = p.intensity.section(y);
            let (a, b) = (sec.a0 + sec.a1, -sec.a1);
            let dsec = p.intensity.section_dy(y);
            let (da, db) = (dsec.a0 + dsec.a1, -dsec.a1);
            let (ub, uxb) = interp(&mom, grid, t, |p, q, w| (&p.0 * (1.0 - w) + &q.0 * w, &p.1 * (1.0 - w) + &q.1 * w));
            // ⟨u, x⟩ is the coefficient of B_0 = 1 in x·B_0
            let ux = uxb[0];
            let gk = DVector::from_iterator(dim, (0..dim).map(|k| da * (at_zero[k] - ub[k]) + db * (at_zero[k] * ux - uxb[k])));
            g.push(gk);
            gbar.push(da + db * ux);
            drift.push(galerkin.drift(a, b));
            psi_ab.push((a, b));
            max_residual = max_residual.max(galerkin.residual(a, b));
        }
        // η_0 covariance Cov_{u0}(B_i, B_j) from the t = 0 snapshot
        let m0 = grid.pairings(0.0, dim * dim, |s, out| {
            let b = family.values(s);
            for i in 0..dim {
                for j in 0..dim {
                    out[i * dim + j] = b[i] * b[j];
                }
            }
        });
        let mean0 = &mom[0].0;
        let mut eta0_cov = DMatrix::from_row_slice(dim, dim, &m0) - mean0 * mean0.transpose();
        eta0_cov = (&eta0_cov + eta0_cov.transpose()) * 0.5;
        // the constant has no variance; keep its row exactly zero
        for j in 0..dim {
            eta0_cov[(0, j)] = 0.0;
            eta0_cov[(j, 0)] = 0.0;
        }
        let eta0_factor = psd_factor(&eta0_cov, "initial covariance")?;
        let memory = Memory::new(p, dt, steps);
        Ok(LimitSystem { dt, steps, dim, galerkin, noise, eta0_cov, eta0_factor, drift, g, gbar, psi_ab, h0: p.kernel.eval(0.0), memory, max_residual })
    }

    /// Run the scheme on any linear element type; `record` sees
    /// (step, c, Γ, V, cumulative W) at recorded steps.
    fn run<T: Lin>(&self, drive: &mut impl Drive<T>, zero: T, every: usize, mut record: impl FnMut(usize, &[T], &T, &T, &[T])) {
        let dim = self.dim;
        let dt = self.dt;
        let every = every.max(1);
        let mut c = drive.combine(&self.eta0_factor, 0);
        let mut w_cum: Vec<T> = vec![zero.zero_like(); dim];
        let (mut hs, mut vs, mut f_hist, mut dw0_hist) = match &self.memory {
            Memory::Markov { coef, .. } => (vec![zero.zero_like(); coef.len()], vec![zero.zero_like(); coef.len()], Vec::new(), Vec::new()),
            Memory::Direct { .. } => (Vec::new(), Vec::new(), Vec::with_capacity(self.steps + 1), Vec::with_capacity(self.steps + 1)),
        };
        for i in 0..=self.steps {
            let (a, b) = self.psi_ab[i];
            // e_i = ⟨η_i, Ψ(·, γ̄(t_i))⟩ = A c_0 + B Σ_j x_j c_j
            let mut e = scaled(&c[0], a);
            for j in 0..dim {
                e.axpy(b * self.galerkin.x_coef[j], &c[j]);
            }
            let (hist, v) = match &self.memory {
                Memory::Markov { coef, .. } => {
                    let mut h = zero.zero_like();
                    let mut v = zero.zero_like();
                    for m in 0..coef.len() {
                        h.axpy(coef[m], &hs[m]);
                        v.axpy(coef[m], &vs[m]);
                    }
                    (h, v)
                }
                Memory::Direct { h_full, h_half } => {
                    let mut h = zero.zero_like();
                    let mut v = zero.zero_like();
                    for j in 0..i {
                        let om = if j == 0 { 0.5 } else { 1.0 };
                        h.axpy(dt * om * h_full[i - j], &f_hist[j]);
                        v.axpy(h_half[i - j], &dw0_hist[j]);
                    }
                    (h, v)
                }
            };
            let gamma = if i == 0 {
                zero.zero_like()
            } else {
                let mut num = hist;
                num.axpy(1.0, &v);
                num.axpy(0.5 * dt * self.h0, &e);
                scaled(&num, 1.0 / (1.0 - 0.5 * dt * self.h0 * self.gbar[i]))
            };
            let mut f = e;
            f.axpy(self.gbar[i], &gamma);
            if i % every == 0 || i == self.steps {
                record(i, &c, &gamma, &v, &w_cum);
            }
            if i == self.steps {
                break;
            }
            let dw = drive.combine(&self.noise.factors[i], i + 1);
            let p = &self.drift[i];
            let mut next = c.clone();
            for k in 0..dim {
                for j in 0..dim {
                    next[k].axpy(dt * p[(k, j)], &c[j]);
                }
                next[k].axpy(dt * self.g[i][k], &gamma);
                next[k].axpy(self.galerkin.at_zero[k], &dw[0]);
                next[k].axpy(-1.0, &dw[k]);
            }
            for k in 0..dim {
                w_cum[k].axpy(1.0, &dw[k]);
            }
            c = next;
            let om = if i == 0 { 0.5 } else { 1.0 };
            match &self.memory {
                Memory::Markov { shift, add_h, add_v, .. } => {
                    let m = hs.len();
                    let mut nh = vec![zero.zero_like(); m];
                    let mut nv = vec![zero.zero_like(); m];
                    for r in 0..m {
                        for l in 0..=r {
                            nh[r].axpy(shift[(r, l)], &hs[l]);
                            nv[r].axpy(shift[(r, l)], &vs[l]);
                        }
                        nh[r].axpy(om * add_h[r], &f);
                        nv[r].axpy(add_v[r], &dw[0]);
                    }
                    hs = nh;
                    vs = nv;
                }
                Memory::Direct { .. } => {
                    f_hist.push(f);
                    dw0_hist.push(dw[0].clone());
                }
            }
        }
    }

    /// One trajectory; replica streams come from the seed.
    pub fn simulate_one(&self, seed: u64, opts: LimitOptions) -> LimitTrajectory {
        let mut drive = Sampler { rng: rng::stream(seed, 0), scale_eta0: opts.eta0_scale, scale_noise: opts.noise_scale };
        let mut tr = LimitTrajectory { times: Vec::new(), coeffs: Vec::new(), gamma: Vec::new(), v: Vec::new(), w: Vec::new() };
        let dt = self.dt;
        self.run(&mut drive, 0.0, opts.record_every, |i, c, g, v, w| {
            tr.times.push(i as f64 * dt);
            tr.coeffs.push(c.to_vec());
            tr.gamma.push(*g);
            tr.v.push(*v);
            tr.w.push(w.to_vec());
        });
        tr
    }

    pub fn simulate(&self, replicas: usize, seed: u64, opts: LimitOptions) -> Vec<LimitTrajectory> {
        par::map_indexed(replicas, |r| self.simulate_one(replica_seed(seed, r as u64), opts))
    }

    /// Exact covariance of (c, Γ) under the discrete scheme.
    pub fn covariance(&self, opts: LimitOptions) -> CovarianceTrajectory {
        let total = self.dim * (self.steps + 2);
        let mut drive = Sensitivity { total, scale_eta0: opts.eta0_scale, scale_noise: opts.noise_scale };
        let mut out = CovarianceTrajectory { times: Vec::new(), cov: Vec::new() };
        let dt = self.dt;
        let d = self.dim + 1;
        self.run(&mut drive, vec![0.0; total], opts.record_every, |i, c, g, _v, _w| {
            let rows: Vec<&Vec<f64>> = c.iter().chain(std::iter::once(g)).collect();
            let mut m = DMatrix::zeros(d, d);
            for a in 0..d {
                for b in a..d {
                    let v: f64 = rows[a].iter().zip(rows[b]).map(|(x, y)| x * y).sum();
                    m[(a, b)] = v;
                    m[(b, a)] = v;
                }
            }
            out.times.push(i as f64 * dt);
            out.cov.push(m);
        });
        out
    }
}

pub fn simulate_limit(sys: &LimitSystem, replicas: usize, seed: u64, opts: LimitOptions) -> Vec<LimitTrajectory> {
    sys.simulate(replicas, seed, opts)
}

pub fn limit_covariance_ode(sys: &LimitSystem, opts: LimitOptions) -> CovarianceTrajectory {
    sys.covariance(opts)
}

/// Columns replica, t, coordinate, value; coordinates are c0..cK, Gamma, V.
pub fn write_trajectories_csv<W: Write>(w: &mut W, trajs: &[LimitTrajectory]) -> std::io::Result<()> {
    writeln!(w, "replica,t,coordinate,value")?;
    for (r, tr) in trajs.iter().enumerate() {
        for (i, &t) in tr.times.iter().enumerate() {
            for (k, c) in tr.coeffs[i].iter().enumerate() {
                write!(w, "{}", csv_line(&[r.to_string(), fmt_f64(t), format!("c{k}"), fmt_f64(*c)]))?;
            }
            write!(w, "{}", csv_line(&[r.to_string(), fmt_f64(t), "Gamma".into(), fmt_f64(tr.gamma[i])]))?;
            write!(w, "{}", csv_line(&[r.to_string(), fmt_f64(t), "V".into(), fmt_f64(tr.v[i])]))?;
        }
    }
    Ok(())
}

/// Columns t, row, col, value over the upper triangle.
pub fn write_covariance_csv<W: Write>(w: &mut W, cov: &CovarianceTrajectory) -> std::io::Result<()> {
    writeln!(w, "t,row,col,value")?;
    for (t, m) in cov.times.iter().zip(&cov.cov) {
        for a in 0..m.nrows() {
            for b in a..m.ncols() {
                write!(w, "{}", csv_line(&[fmt_f64(*t), a.to_string(), b.to_string(), fmt_f64(m[(a, b)])]))?;
            }
        }
    }
    Ok(())
}
