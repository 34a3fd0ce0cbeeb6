//! Fluctuation observables of one n-particle replica against the mean-field
//! limit: η^n, Γ^n and its three-term split, W^n, M^n, A^n, brackets.
//!
//! One pass over the merged event stream handles every observation time.
//! Between events each age grows linearly, so the compensator integrals are
//! taken with 3-point Gauss on pieces no longer than `max_piece`. When the
//! test functions are polynomials in x = e^{−s}, every particle sum is a
//! combination of the power sums P_q = Σ_i x_i^q (Ψ is affine in e^{−s} for
//! every preset), which evolve as P_q e^{−qΔ} between events; the per-node
//! cost then drops from O(nK) to O(K²).

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{csv_line, fmt_f64};
use crate::model::{Kernel, ModelParams, Section};
use crate::par;
use crate::pde::DensityGrid;
use crate::rng::replica_seed;
use crate::testfn::TestFamily;
use crate::thinning::{simulate_adhp, EventPath, PoissonDriver, Tracker};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepOptions {
    /// Accumulate n⁻¹ Σ_i ∫ φ_k φ_l λ^i dz for every pair.
    pub bracket_matrix: bool,
    /// Accumulate n^{−1/2} Σ_i ∫ L_zφ(S^i_z) dz (needs first derivatives).
    pub generator: bool,
    pub max_piece: f64,
    /// Use the power-sum path when the family allows it.
    pub power_sums: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions { bracket_matrix: false, generator: false, max_piece: 1e-2, power_sums: true }
    }
}

/// Observables of one replica at one time t.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluctuationSample {
    pub t: f64,
    /// ⟨η^n_t, φ_k⟩.
    pub eta: Vec<f64>,
    pub gamma_n: f64,
    /// Γ^n_t = √n (γ^n_t − γ̄(t)).
    pub gamma_big: f64,
    /// Υ¹, Υ², Υ³ with Υ¹ + Υ² + Υ³ = Γ^n_t.
    pub upsilon: [f64; 3],
    pub w: Vec<f64>,
    /// W^n_t(1).
    pub w_one: f64,
    pub m: Vec<f64>,
    /// ⟨M^n(φ_k)⟩_t.
    pub bracket_m: Vec<f64>,
    /// A^n_t(φ_k).
    pub a: Vec<f64>,
    /// Leading term ⟨μ̄^n, ∂_yΨ(·, γ̄(t)) Rφ⟩ Γ^n_t of A^n_t; A − a_lead is the rest R^{n,(1)}.
    pub a_lead: Vec<f64>,
    pub int_a: Vec<f64>,
    /// n^{−1/2} Σ_i ∫_0^t L_zφ_k(S^i_z) dz, empty unless requested.
    pub int_l: Vec<f64>,
    /// Row-major K×K bracket of W^n, empty unless requested.
    pub w_bracket: Vec<f64>,
    pub events: usize,
}

impl FluctuationSample {
    /// Rest term R^{n,(1)}_t(φ_k).
    pub fn rest_a(&self) -> Vec<f64> {
        self.a.iter().zip(&self.a_lead).map(|(a, l)| a - l).collect()
    }
}

/// Polynomial data for the power-sum path.
struct Polys {
    phi: Vec<Vec<f64>>,
    r: Vec<Vec<f64>>,
    r2: Vec<Vec<f64>>,
    dphi: Vec<Vec<f64>>,
    prod: Vec<Vec<f64>>,
    top: usize,
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

impl Polys {
    fn new(rows: Vec<Vec<f64>>, bracket: bool) -> Self {
        let r: Vec<Vec<f64>> = rows
            .iter()
            .map(|row| {
                let mut v: Vec<f64> = row.iter().map(|c| -c).collect();
                v[0] += row.iter().sum::<f64>();
                v
            })
            .collect();
        let r2 = r.iter().map(|v| poly_mul(v, v)).collect::<Vec<_>>();
        let dphi = rows.iter().map(|row| row.iter().enumerate().map(|(q, c)| -(q as f64) * c).collect()).collect();
        let mut prod = Vec::new();
        if bracket {
            for a in &rows {
                for b in &rows {
                    prod.push(poly_mul(a, b));
                }
            }
        }
        let top = r2.iter().chain(prod.iter()).chain(rows.iter()).map(|v| v.len()).max().unwrap_or(1);
        Polys { phi: rows, r, r2, dphi, prod, top }
    }
}

#[inline]
fn dot(poly: &[f64], p: &[f64]) -> f64 {
    poly.iter().zip(p).map(|(c, x)| c * x).sum()
}

/// Σ_i poly(x_i) (A + B x_i).
#[inline]
fn psi_dot(poly: &[f64], p: &[f64], a: f64, b: f64) -> f64 {
    a * dot(poly, p) + b * dot(poly, &p[1..])
}

/// Ψ(s, y) = A + B e^{−s}.
#[inline]
fn affine(sec: &Section) -> (f64, f64) {
    (sec.a0 + sec.a1, -sec.a1)
}

struct Acc {
    comp_w: Vec<f64>,
    comp_m: Vec<f64>,
    br_m: Vec<f64>,
    int_a: Vec<f64>,
    int_l: Vec<f64>,
    wb: Vec<f64>,
    lam: f64,
    i_lam: Vec<f64>,
    i_psib: Vec<f64>,
    jump_w: Vec<f64>,
    jump_m: Vec<f64>,
    count: usize,
}

impl Acc {
    fn new(k: usize, times: usize, o: &SweepOptions) -> Self {
        Acc {
            comp_w: vec![0.0; k],
            comp_m: vec![0.0; k],
            br_m: vec![0.0; k],
            int_a: vec![0.0; k],
            int_l: vec![0.0; if o.generator { k } else { 0 }],
            wb: vec![0.0; if o.bracket_matrix { k * k } else { 0 }],
            lam: 0.0,
            i_lam: vec![0.0; times],
            i_psib: vec![0.0; times],
            jump_w: vec![0.0; k],
            jump_m: vec![0.0; k],
            count: 0,
        }
    }
}

struct Sweeper<'a> {
    p: &'a ModelParams,
    grid: &'a DensityGrid,
    family: &'a dyn TestFamily,
    opts: SweepOptions,
    times: &'a [f64],
    n: usize,
    k: usize,
    at_zero: Vec<f64>,
    last: Vec<f64>,
    tracker: Tracker,
    polys: Option<Polys>,
    /// Power sums at `seg_start`.
    pw: Vec<f64>,
    seg_start: f64,
    acc: Acc,
    buf: Vec<f64>,
    dbuf: Vec<f64>,
    /// ∫_0^t h(t − z) λ̄(z) dz at each observation time.
    centre: Vec<f64>,
}

const GL3: [(f64, f64); 3] = [(-0.774_596_669_241_483_4, 5.0 / 9.0), (0.0, 8.0 / 9.0), (0.774_596_669_241_483_4, 5.0 / 9.0)];

impl<'a> Sweeper<'a> {
    fn gamma_bar(&self, z: f64) -> f64 {
        self.grid.gamma_bar.at(z)
    }

    fn resync_powers(&mut self, t: f64) {
        if let Some(pl) = &self.polys {
            let top = pl.top + 1;
            let mut pw = vec![0.0; top];
            for &l in &self.last {
                let x = (-(t - l)).exp();
                let mut v = 1.0;
                for q in pw.iter_mut() {
                    *q += v;
                    v *= x;
                }
            }
            self.pw = pw;
        }
        self.seg_start = t;
    }

    fn advance_powers(&mut self, t: f64) {
        if self.polys.is_some() {
            let e = (-(t - self.seg_start)).exp();
            let mut f = 1.0;
            for q in self.pw.iter_mut() {
                *q *= f;
                f *= e;
            }
        }
        self.seg_start = t;
    }

    /// Add weight·(integrand at z) into the accumulators; `first_open` is the
    /// first observation time not yet recorded.
    fn node(&mut self, z: f64, weight: f64, first_open: usize) {
        let gn = self.tracker.value(z) / self.n as f64;
        let gb = self.gamma_bar(z);
        let psi = &self.p.intensity;
        let sn = psi.section(gn);
        let sb = psi.section(gb);
        let k = self.k;
        let (lam, psib);
        if let Some(pl) = &self.polys {
            let e = (-(z - self.seg_start)).exp();
            let mut p = self.pw.clone();
            let mut f = 1.0;
            for q in p.iter_mut() {
                *q *= f;
                f *= e;
            }
            let (an, bn) = affine(&sn);
            let (ab, bb) = affine(&sb);
            lam = an * p[0] + bn * p[1];
            psib = ab * p[0] + bb * p[1];
            let acc = &mut self.acc;
            for j in 0..k {
                acc.comp_w[j] += weight * psi_dot(&pl.phi[j], &p, an, bn);
                acc.comp_m[j] += weight * psi_dot(&pl.r[j], &p, an, bn);
                acc.br_m[j] += weight * psi_dot(&pl.r2[j], &p, an, bn);
                acc.int_a[j] += weight * psi_dot(&pl.r[j], &p, an - ab, bn - bb);
                if self.opts.generator {
                    acc.int_l[j] += weight * (dot(&pl.dphi[j], &p) + psi_dot(&pl.r[j], &p, ab, bb));
                }
            }
            if self.opts.bracket_matrix {
                for (o, poly) in acc.wb.iter_mut().zip(&pl.prod) {
                    *o += weight * psi_dot(poly, &p, an, bn);
                }
            }
        } else {
            let mut l_sum = 0.0;
            let mut b_sum = 0.0;
            for i in 0..self.n {
                let s = z - self.last[i];
                let emx = (-s).exp();
                self.family.values_emx(s, emx, &mut self.buf);
                let li = sn.eval_emx(emx);
                let bi = sb.eval_emx(emx);
                l_sum += li;
                b_sum += bi;
                let acc = &mut self.acc;
                for j in 0..k {
                    let v = self.buf[j];
                    let r = self.at_zero[j] - v;
                    acc.comp_w[j] += weight * v * li;
                    acc.comp_m[j] += weight * r * li;
                    acc.br_m[j] += weight * r * r * li;
                    acc.int_a[j] += weight * r * (li - bi);
                }
                if self.opts.generator {
                    self.family.eval_into(s, 1, &mut self.dbuf);
                    for j in 0..k {
                        let r = self.at_zero[j] - self.buf[j];
                        self.acc.int_l[j] += weight * (self.dbuf[j] + bi * r);
                    }
                }
                if self.opts.bracket_matrix {
                    for a in 0..k {
                        for b in 0..k {
                            self.acc.wb[a * k + b] += weight * self.buf[a] * self.buf[b] * li;
                        }
                    }
                }
            }
            lam = l_sum;
            psib = b_sum;
        }
        self.acc.lam += weight * lam;
        for m in first_open..self.times.len() {
            let h = self.p.kernel.eval(self.times[m] - z);
            self.acc.i_lam[m] += weight * h * lam;
            self.acc.i_psib[m] += weight * h * psib;
        }
    }

    fn integrate(&mut self, a: f64, b: f64, first_open: usize) {
        if b <= a {
            return;
        }
        let pieces = ((b - a) / self.opts.max_piece).ceil().max(1.0) as usize;
        let h = (b - a) / pieces as f64;
        for c in 0..pieces {
            let lo = a + c as f64 * h;
            for &(x, w) in &GL3 {
                self.node(lo + 0.5 * h * (x + 1.0), 0.5 * h * w, first_open);
            }
        }
    }

    fn jump(&mut self, t: f64, i: usize) {
        let s = t - self.last[i];
        self.family.eval_into(s, 0, &mut self.buf);
        for j in 0..self.k {
            self.acc.jump_w[j] += self.buf[j];
            self.acc.jump_m[j] += self.at_zero[j] - self.buf[j];
        }
        self.acc.count += 1;
        if self.polys.is_some() {
            let x = (-s).exp();
            let mut v = 1.0;
            for q in self.pw.iter_mut() {
                *q += 1.0 - v;
                v *= x;
            }
        }
        self.last[i] = t;
        self.tracker.add(t);
    }

    fn record(&mut self, m: usize, u_pair: &[f64]) -> FluctuationSample {
        let t = self.times[m];
        let n = self.n as f64;
        let rn = n.sqrt();
        let k = self.k;
        let j_sum = self.tracker.value(t);
        let gn = j_sum / n;
        let gb = self.gamma_bar(t);
        let gc = self.centre[m];
        let psi = &self.p.intensity;
        let (sn, sb, sd) = (psi.section(gn), psi.section(gb), psi.section_dy(gb));
        let mut eta = vec![0.0; k];
        let mut a = vec![0.0; k];
        let mut lead = vec![0.0; k];
        for i in 0..self.n {
            let s = t - self.last[i];
            let emx = (-s).exp();
            self.family.values_emx(s, emx, &mut self.buf);
            let (li, bi, di) = (sn.eval_emx(emx), sb.eval_emx(emx), sd.eval_emx(emx));
            for j in 0..k {
                let r = self.at_zero[j] - self.buf[j];
                eta[j] += self.buf[j];
                a[j] += r * (li - bi);
                lead[j] += di * r;
            }
        }
        let gamma_big = rn * (gn - gc);
        let acc = &self.acc;
        let u1 = rn * (j_sum - acc.i_lam[m]) / n;
        let u2 = (acc.i_lam[m] - acc.i_psib[m]) / rn;
        let u3 = (acc.i_psib[m] - n * gc) / rn;
        FluctuationSample {
            t,
            eta: eta.iter().zip(u_pair).map(|(e, u)| rn * (e / n - u)).collect(),
            gamma_n: gn,
            gamma_big,
            upsilon: [u1, u2, u3],
            w: acc.jump_w.iter().zip(&acc.comp_w).map(|(j, c)| (j - c) / rn).collect(),
            w_one: (acc.count as f64 - acc.lam) / rn,
            m: acc.jump_m.iter().zip(&acc.comp_m).map(|(j, c)| (j - c) / rn).collect(),
            bracket_m: acc.br_m.iter().map(|b| b / n).collect(),
            a: a.iter().map(|x| x / rn).collect(),
            a_lead: lead.iter().map(|x| x / n * gamma_big).collect(),
            int_a: acc.int_a.iter().map(|x| x / rn).collect(),
            int_l: acc.int_l.iter().map(|x| x / rn).collect(),
            w_bracket: acc.wb.iter().map(|x| x / n).collect(),
            events: acc.count,
        }
    }
}

/// ∫_0^t h(t − z) λ̄(z) dz with λ̄ linear between grid nodes, 3-point Gauss on
/// every grid cell (split where the kernel jumps).
///
/// This is the γ̄(t) that Γ^n is centred on. It differs from the solver's γ̄
/// by the solver's own convolution error, O(dt²), but it is integrated the
/// same way as Υ³, so Υ³ vanishes to rounding when Ψ does not depend on y.
fn lambda_convolution(grid: &DensityGrid, kernel: &Kernel, t: f64) -> f64 {
    let dt = grid.dt;
    let jump = match *kernel {
        Kernel::Boxcar { width, .. } if width < t => Some(t - width),
        _ => None,
    };
    let piece = |a: f64, b: f64| -> f64 {
        GL3.iter()
            .map(|&(x, w)| {
                let z = a + 0.5 * (b - a) * (x + 1.0);
                0.5 * (b - a) * w * kernel.eval(t - z) * grid.lambda_bar.at(z)
            })
            .sum()
    };
    let cells = (t / dt - 1e-9).ceil().max(0.0) as usize;
    let mut total = 0.0;
    for i in 0..cells {
        let (a, b) = (i as f64 * dt, ((i + 1) as f64 * dt).min(t));
        total += match jump {
            Some(j) if a < j && j < b => piece(a, j) + piece(j, b),
            _ => piece(a, b),
        };
    }
    total
}

/// Every observable at each of `times` (increasing, within the horizon)
/// for one replica of the n-particle system.
pub fn sweep(
    paths: &[EventPath],
    grid: &DensityGrid,
    p: &ModelParams,
    family: &dyn TestFamily,
    times: &[f64],
    opts: SweepOptions,
) -> Result<Vec<FluctuationSample>> {
    let n = paths.len();
    if n == 0 {
        return Err(Error::InvalidParameter { name: "paths", reason: "no particles".into() });
    }
    let hi = grid.horizon().min(p.horizon);
    for (i, &t) in times.iter().enumerate() {
        if !(t >= 0.0 && t <= hi * (1.0 + 1e-12)) {
            return Err(Error::OutOfRange { what: "observation time", value: t, lo: 0.0, hi });
        }
        if i > 0 && t <= times[i - 1] {
            return Err(Error::InvalidParameter { name: "times", reason: "must be strictly increasing".into() });
        }
    }
    if !(opts.max_piece > 0.0) {
        return Err(Error::InvalidParameter { name: "max_piece", reason: format!("got {}", opts.max_piece) });
    }
    let k = family.len();
    let mut merged: Vec<(f64, usize)> = paths.iter().enumerate().flat_map(|(i, p)| p.events.iter().map(move |&t| (t, i))).collect();
    merged.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let u_pairs: Vec<Vec<f64>> = times.iter().map(|&t| grid.pairings(t, k, |s, buf| family.eval_into(s, 0, buf))).collect();
    let polys = if opts.power_sums { family.x_polynomial().map(|rows| Polys::new(rows, opts.bracket_matrix)) } else { None };
    let mut at_zero = vec![0.0; k];
    family.eval_into(0.0, 0, &mut at_zero);
    let mut sw = Sweeper {
        p,
        grid,
        family,
        opts,
        times,
        n,
        k,
        at_zero,
        last: paths.iter().map(|q| -q.initial_age).collect(),
        tracker: Tracker::new(&p.kernel, false),
        polys,
        pw: Vec::new(),
        seg_start: 0.0,
        acc: Acc::new(k, times.len(), &opts),
        buf: vec![0.0; k],
        dbuf: vec![0.0; k],
        centre: times.iter().map(|&t| lambda_convolution(grid, &p.kernel, t)).collect(),
    };
    sw.resync_powers(0.0);
    let mut out = Vec::with_capacity(times.len());
    let mut e = 0;
    for (m, &t) in times.iter().enumerate() {
        loop {
            let ev = merged.get(e).filter(|ev| ev.0 <= t).copied();
            let end = ev.map_or(t, |ev| ev.0);
            let start = sw.seg_start;
            sw.integrate(start, end, m);
            sw.advance_powers(end);
            match ev {
                Some((te, i)) => {
                    sw.jump(te, i);
                    e += 1;
                }
                None => break,
            }
        }
        out.push(sw.record(m, &u_pairs[m]));
        sw.resync_powers(t);
    }
    Ok(out)
}

/// √n (⟨μ̄^n_{S_t}, φ_k⟩ − ⟨u_t, φ_k⟩).
pub fn eta_pairing(paths: &[EventPath], grid: &DensityGrid, p: &ModelParams, t: f64, family: &dyn TestFamily) -> Result<Vec<f64>> {
    Ok(sweep(paths, grid, p, family, &[t], SweepOptions::default())?.remove(0).eta)
}

/// Γ^n_t = √n (γ^n_t − γ̄(t)).
pub fn gamma_big(paths: &[EventPath], grid: &DensityGrid, p: &ModelParams, t: f64) -> Result<f64> {
    let one = crate::testfn::ExpRates::new(vec![0.0]);
    Ok(sweep(paths, grid, p, &one, &[t], SweepOptions::default())?[0].gamma_big)
}

/// (Υ¹_t, Υ²_t, Υ³_t).
pub fn big_gamma_decomposition(paths: &[EventPath], grid: &DensityGrid, p: &ModelParams, t: f64) -> Result<[f64; 3]> {
    let one = crate::testfn::ExpRates::new(vec![0.0]);
    Ok(sweep(paths, grid, p, &one, &[t], SweepOptions::default())?[0].upsilon)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MartingaleDrift {
    pub m: Vec<f64>,
    pub a: Vec<f64>,
    pub int_a: Vec<f64>,
    pub bracket: Vec<f64>,
}

pub fn martingale_and_drift(paths: &[EventPath], grid: &DensityGrid, p: &ModelParams, t: f64, family: &dyn TestFamily) -> Result<MartingaleDrift> {
    let s = sweep(paths, grid, p, family, &[t], SweepOptions::default())?.remove(0);
    Ok(MartingaleDrift { m: s.m, a: s.a, int_a: s.int_a, bracket: s.bracket_m })
}

/// W^n_t(φ_k).
pub fn w_process(paths: &[EventPath], grid: &DensityGrid, p: &ModelParams, t: f64, family: &dyn TestFamily) -> Result<Vec<f64>> {
    Ok(sweep(paths, grid, p, family, &[t], SweepOptions::default())?.remove(0).w)
}

/// V^n_t = ∫_0^t h(t − z) dW^n_z(1).
pub fn v_process(paths: &[EventPath], grid: &DensityGrid, p: &ModelParams, t: f64) -> Result<f64> {
    Ok(big_gamma_decomposition(paths, grid, p, t)?[0])
}

/// ∫_0^t ⟨u_z, L_zφ_k⟩ dz by the trapezoid rule over stored snapshots.
pub fn limit_generator_integral(grid: &DensityGrid, p: &ModelParams, family: &dyn TestFamily, t: f64) -> Result<Vec<f64>> {
    let k = family.len();
    let mut at_zero = vec![0.0; k];
    family.eval_into(0.0, 0, &mut at_zero);
    let idx: Vec<usize> = (0..grid.snapshot_times.len()).filter(|&i| grid.snapshot_times[i] <= t + 1e-9 * grid.dt).collect();
    let last = *idx.last().unwrap_or(&0);
    if (grid.snapshot_times[last] - t).abs() > 1e-9 * grid.dt {
        return Err(Error::OutOfRange { what: "snapshot time", value: t, lo: 0.0, hi: grid.horizon() });
    }
    let mut vals = Vec::with_capacity(idx.len());
    for &i in &idx {
        let z = grid.snapshot_times[i];
        let sec = p.intensity.section(grid.gamma_bar.at(z));
        let v = grid.pairings(z, k, |s, buf| {
            let mut d = vec![0.0; k];
            family.eval_into(s, 0, buf);
            family.eval_into(s, 1, &mut d);
            let psi = sec.eval(s);
            for j in 0..k {
                buf[j] = d[j] + psi * (at_zero[j] - buf[j]);
            }
        });
        vals.push((z, v));
    }
    let mut out = vec![0.0; k];
    for w in vals.windows(2) {
        let h = w[1].0 - w[0].0;
        for j in 0..k {
            out[j] += 0.5 * h * (w[0].1[j] + w[1].1[j]);
        }
    }
    Ok(out)
}

/// ⟨η_t,φ⟩ − ⟨η_0,φ⟩ − ∫(⟨η_z, L_zφ⟩ + A_z(φ))dz − M_t(φ), per test function.
/// `at_t` must come from a sweep with the generator enabled.
pub fn decomposition_residual(
    at_0: &FluctuationSample,
    at_t: &FluctuationSample,
    n: usize,
    grid: &DensityGrid,
    p: &ModelParams,
    family: &dyn TestFamily,
) -> Result<Vec<f64>> {
    if at_t.int_l.len() != family.len() {
        return Err(Error::InvalidParameter { name: "at_t", reason: "sweep ran without the generator term".into() });
    }
    let limit_0 = limit_generator_integral(grid, p, family, at_0.t)?;
    let limit_t = limit_generator_integral(grid, p, family, at_t.t)?;
    let rn = (n as f64).sqrt();
    Ok((0..family.len())
        .map(|j| {
            let gen = (at_t.int_l[j] - at_0.int_l.get(j).copied().unwrap_or(0.0)) - rn * (limit_t[j] - limit_0[j]);
            let drift = at_t.int_a[j] - at_0.int_a[j];
            let mart = at_t.m[j] - at_0.m[j];
            (at_t.eta[j] - at_0.eta[j]) - gen - drift - mart
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Observable {
    Eta(usize),
    W(usize),
    M(usize),
    BracketM(usize),
    A(usize),
    RestA(usize),
    IntA(usize),
    WBracket(usize, usize),
    WOne,
    Gamma,
    GammaN,
    Upsilon(usize),
    Events,
}

impl Observable {
    pub fn label(&self) -> String {
        match self {
            Observable::Eta(k) => format!("eta[{k}]"),
            Observable::W(k) => format!("W[{k}]"),
            Observable::M(k) => format!("M[{k}]"),
            Observable::BracketM(k) => format!("bracketM[{k}]"),
            Observable::A(k) => format!("A[{k}]"),
            Observable::RestA(k) => format!("restA[{k}]"),
            Observable::IntA(k) => format!("intA[{k}]"),
            Observable::WBracket(a, b) => format!("bracketW[{a},{b}]"),
            Observable::WOne => "W[1]".into(),
            Observable::Gamma => "Gamma".into(),
            Observable::GammaN => "gamma_n".into(),
            Observable::Upsilon(i) => format!("Upsilon{}", i + 1),
            Observable::Events => "events".into(),
        }
    }

    pub fn of(&self, s: &FluctuationSample) -> f64 {
        match *self {
            Observable::Eta(k) => s.eta[k],
            Observable::W(k) => s.w[k],
            Observable::M(k) => s.m[k],
            Observable::BracketM(k) => s.bracket_m[k],
            Observable::A(k) => s.a[k],
            Observable::RestA(k) => s.a[k] - s.a_lead[k],
            Observable::IntA(k) => s.int_a[k],
            Observable::WBracket(a, b) => s.w_bracket[a * s.w.len() + b],
            Observable::WOne => s.w_one,
            Observable::Gamma => s.gamma_big,
            Observable::GammaN => s.gamma_n,
            Observable::Upsilon(i) => s.upsilon[i],
            Observable::Events => s.events as f64,
        }
    }

    /// Everything a sample carries, in a stable order.
    pub fn all(s: &FluctuationSample) -> Vec<Observable> {
        let k = s.eta.len();
        let mut v = Vec::new();
        for j in 0..k {
            v.extend([Observable::Eta(j), Observable::W(j), Observable::M(j), Observable::BracketM(j), Observable::A(j), Observable::RestA(j), Observable::IntA(j)]);
        }
        if !s.w_bracket.is_empty() {
            for a in 0..k {
                for b in a..k {
                    v.push(Observable::WBracket(a, b));
                }
            }
        }
        v.extend([Observable::WOne, Observable::Gamma, Observable::GammaN, Observable::Upsilon(0), Observable::Upsilon(1), Observable::Upsilon(2), Observable::Events]);
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicaRecord {
    pub replica: usize,
    pub seed: u64,
    pub samples: Vec<FluctuationSample>,
}

/// Per-replica observables of an ensemble at fixed times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleTable {
    pub n: usize,
    pub seed: u64,
    pub times: Vec<f64>,
    pub rows: Vec<ReplicaRecord>,
}

impl EnsembleTable {
    pub const SCHEMA: &'static str = "adhp-ensemble/1";

    pub fn column(&self, time_index: usize, obs: Observable) -> Vec<f64> {
        self.rows.iter().map(|r| obs.of(&r.samples[time_index])).collect()
    }

    /// Columns replica, t, observable, value, seed.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "replica,t,observable,value,seed")?;
        for r in &self.rows {
            for s in &r.samples {
                for o in Observable::all(s) {
                    write!(w, "{}", csv_line(&[r.replica.to_string(), fmt_f64(s.t), o.label(), fmt_f64(o.of(s)), r.seed.to_string()]))?;
                }
            }
        }
        Ok(())
    }
}

/// Simulate `replicas` independent n-particle systems (replica r uses seed
/// replica_seed(seed, r)) and sweep each one.
pub fn fluctuation_ensemble(
    p: &ModelParams,
    grid: &DensityGrid,
    family: &dyn TestFamily,
    times: &[f64],
    replicas: usize,
    seed: u64,
    opts: SweepOptions,
) -> Result<EnsembleTable> {
    let bound = p.intensity.sup_bound();
    let rows: Vec<Result<ReplicaRecord>> = par::map_indexed(replicas, |r| {
        let rs = replica_seed(seed, r as u64);
        let paths = simulate_adhp(p, &PoissonDriver::new(rs, bound))?;
        let samples = sweep(&paths, grid, p, family, times, opts)?;
        Ok(ReplicaRecord { replica: r, seed: rs, samples })
    });
    Ok(EnsembleTable { n: p.n, seed, times: times.to_vec(), rows: rows.into_iter().collect::<Result<_>>()? })
}
