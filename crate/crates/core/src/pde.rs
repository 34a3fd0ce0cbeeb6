//! Mean-field age density u(t, s) by characteristics.
//!
//! The age grid uses cells of width ds = dt, so one time step moves every
//! cell exactly one cell to the right. Each cell loses the fraction
//! 1 − exp(−Ψ dt) of its mass, and the lost mass is reborn in cell 0. Total
//! mass is therefore conserved to rounding. The coupling X(t) = ∫h(t−z)λ̄(z)dz
//! is advanced with the trapezoid rule and one predictor–corrector pass.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{csv_line, fmt_f64};
use crate::model::{InitialDensity, Kernel, ModelParams};
use crate::series::TimeSeries;

pub const MAX_DT: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdeOptions {
    pub dt: f64,
    /// Store u every this many steps (0 picks a 0.01 time spacing).
    pub snapshot_every: usize,
    pub mass_tol: f64,
    /// Use O(step) direct summation for X even for exponential kernels.
    pub direct_sum: bool,
}

impl PdeOptions {
    pub fn new(dt: f64) -> Self {
        PdeOptions { dt, snapshot_every: 0, mass_tol: 1e-5, direct_sum: false }
    }

    pub fn every(mut self, k: usize) -> Self {
        self.snapshot_every = k;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityGrid {
    pub dt: f64,
    pub ds: f64,
    pub steps: usize,
    pub cells: usize,
    pub snapshot_every: usize,
    /// Cell masses at times k·snapshot_every·dt (plus the final time).
    pub snapshots: Vec<Vec<f64>>,
    pub snapshot_times: Vec<f64>,
    pub lambda_bar: TimeSeries,
    pub gamma_bar: TimeSeries,
    pub x: TimeSeries,
    pub mass: Vec<f64>,
}

/// Trapezoid convolution Σ'' h(t_i − t_j) λ_j dt, advanced one node at a time.
struct Convolution {
    dt: f64,
    h: Vec<f64>,
    exp_rate: Option<(f64, f64)>,
}

impl Convolution {
    fn new(kernel: &Kernel, dt: f64, steps: usize, direct: bool) -> Self {
        let exp_rate = match kernel {
            Kernel::Exponential { weight, rate } if !direct => Some((*weight, (-rate * dt).exp())),
            Kernel::Zero if !direct => Some((0.0, 1.0)),
            _ => None,
        };
        let h = if exp_rate.is_some() { Vec::new() } else { (0..=steps).map(|j| kernel.eval(j as f64 * dt)).collect() };
        Convolution { dt, h, exp_rate }
    }

    /// Value at node i+1 given λ_0..λ_i (in `lam`), X_i and a trial λ_{i+1}.
    fn next(&self, lam: &[f64], x_i: f64, lam_next: f64) -> f64 {
        let i = lam.len() - 1;
        let dt = self.dt;
        match self.exp_rate {
            Some((w, decay)) => decay * x_i + 0.5 * dt * w * (decay * lam[i] + lam_next),
            None => {
                let k = i + 1;
                let mut acc = 0.5 * self.h[k] * lam[0];
                for (j, l) in lam.iter().enumerate().skip(1) {
                    acc += self.h[k - j] * l;
                }
                dt * (acc + 0.5 * self.h[0] * lam_next)
            }
        }
    }
}

/// Cell masses of u0 on cells [j ds, (j+1) ds).
fn initial_masses(u0: &InitialDensity, ds: f64, cells: usize) -> Vec<f64> {
    (0..cells).map(|j| u0.cdf((j + 1) as f64 * ds) - u0.cdf(j as f64 * ds)).collect()
}

pub fn solve_pde(p: &ModelParams, opts: PdeOptions) -> Result<DensityGrid> {
    let dt = opts.dt;
    if !(dt > 0.0 && dt <= MAX_DT * (1.0 + 1e-12)) {
        return Err(Error::InvalidParameter { name: "dt", reason: format!("need 0 < dt <= {MAX_DT}, got {dt}") });
    }
    let steps = (p.horizon / dt - 1e-9).ceil() as usize;
    let ds = dt;
    let cells = (p.max_age() / ds - 1e-9).ceil() as usize + 1;
    let every = if opts.snapshot_every == 0 { ((0.01 / dt).round() as usize).max(1) } else { opts.snapshot_every };
    let psi = &p.intensity;
    let conv = Convolution::new(&p.kernel, dt, steps, opts.direct_sum);

    let centers: Vec<f64> = (0..cells).map(|j| (j as f64 + 0.5) * ds).collect();
    // characteristic midpoints: a cell centred at (j+½)ds ages to (j+1)ds half way
    let mids: Vec<f64> = (0..cells).map(|j| (j as f64 + 1.0) * ds).collect();
    let mut m = initial_masses(&p.initial, ds, cells);
    let lambda_of = |m: &[f64], x: f64| -> f64 {
        let sec = psi.section(x);
        m.iter().zip(&centers).map(|(mj, &s)| sec.eval(s) * mj).sum()
    };
    let mut lam = vec![lambda_of(&m, 0.0)];
    let mut xs = vec![0.0];
    let mut gamma = vec![0.0];
    let mut mass = vec![m.iter().sum::<f64>()];
    let mut snapshots = vec![m.clone()];
    let mut snapshot_times = vec![0.0];
    let mut next = vec![0.0; cells];

    let transport = |m: &[f64], next: &mut [f64], x_mid: f64| -> f64 {
        let sec = psi.section(x_mid);
        let mut born = 0.0;
        next[0] = 0.0;
        for j in 0..cells {
            let mj = m[j];
            if mj == 0.0 {
                if j + 1 < cells {
                    next[j + 1] = 0.0;
                }
                continue;
            }
            let killed = -mj * (-sec.eval(mids[j]) * dt).exp_m1();
            born += killed;
            if j + 1 < cells {
                next[j + 1] = mj - killed;
            }
        }
        next[0] = born;
        born
    };

    for i in 0..steps {
        let t_next = (i + 1) as f64 * dt;
        let lam_pred = if i >= 1 { 2.0 * lam[i] - lam[i - 1] } else { lam[i] };
        let x_pred = conv.next(&lam, gamma[i], lam_pred);
        transport(&m, &mut next, 0.5 * (xs[i] + x_pred));
        let lam1 = lambda_of(&next, x_pred);
        let x_corr = conv.next(&lam, gamma[i], lam1);
        let born = transport(&m, &mut next, 0.5 * (xs[i] + x_corr));
        if born < -1e-15 {
            return Err(Error::NegativeDensity { value: born / ds, t: t_next, s: 0.0 });
        }
        std::mem::swap(&mut m, &mut next);
        let lam_new = lambda_of(&m, x_corr);
        // γ̄ from the final λ̄ values; X_i keeps the corrected trial value
        gamma.push(conv.next(&lam, gamma[i], lam_new));
        lam.push(lam_new);
        xs.push(x_corr);
        let total: f64 = m.iter().sum();
        if (total - 1.0).abs() > opts.mass_tol {
            return Err(Error::MassViolation { mass: total, t: t_next, tol: opts.mass_tol });
        }
        mass.push(total);
        if (i + 1) % every == 0 || i + 1 == steps {
            snapshots.push(m.clone());
            snapshot_times.push(t_next);
        }
    }

    Ok(DensityGrid {
        dt,
        ds,
        steps,
        cells,
        snapshot_every: every,
        snapshots,
        snapshot_times,
        lambda_bar: TimeSeries::new(dt, lam),
        gamma_bar: TimeSeries::new(dt, gamma),
        x: TimeSeries::new(dt, xs),
        mass,
    })
}

impl DensityGrid {
    pub fn horizon(&self) -> f64 {
        self.steps as f64 * self.dt
    }

    pub fn s_max(&self) -> f64 {
        self.cells as f64 * self.ds
    }

    /// Cell centres.
    pub fn s_nodes(&self) -> Vec<f64> {
        (0..self.cells).map(|j| (j as f64 + 0.5) * self.ds).collect()
    }

    pub fn lambda_bar(&self, t: f64) -> Result<f64> {
        self.lambda_bar.try_at(t)
    }

    pub fn gamma_bar(&self, t: f64) -> Result<f64> {
        self.gamma_bar.try_at(t)
    }

    fn check_t(&self, t: f64) -> Result<()> {
        let hi = self.horizon();
        if !(t >= 0.0 && t <= hi * (1.0 + 1e-12)) {
            return Err(Error::OutOfRange { what: "time", value: t, lo: 0.0, hi });
        }
        Ok(())
    }

    /// Snapshot index bracketing t and the interpolation weight.
    fn bracket(&self, t: f64) -> (usize, usize, f64) {
        let k = self.snapshot_times.partition_point(|&x| x <= t + 1e-12 * self.dt);
        let a = k.saturating_sub(1).min(self.snapshot_times.len() - 1);
        if a + 1 >= self.snapshot_times.len() || (t - self.snapshot_times[a]).abs() <= 1e-9 * self.dt {
            return (a, a, 0.0);
        }
        let (ta, tb) = (self.snapshot_times[a], self.snapshot_times[a + 1]);
        (a, a + 1, (t - ta) / (tb - ta))
    }

    /// Index of the snapshot at time t, if one is stored.
    pub fn snapshot_index(&self, t: f64) -> Option<usize> {
        self.snapshot_times.iter().position(|&x| (x - t).abs() <= 1e-9 * self.dt)
    }

    fn density_in(&self, snap: usize, s: f64) -> f64 {
        let m = &self.snapshots[snap];
        let x = s / self.ds - 0.5;
        if x <= 0.0 {
            return m[0] / self.ds;
        }
        let j = x.floor() as usize;
        if j + 1 >= self.cells {
            return m[self.cells - 1] / self.ds;
        }
        let w = x - j as f64;
        ((1.0 - w) * m[j] + w * m[j + 1]) / self.ds
    }

    /// u(t, s): linear in s between cell centres, and between stored times
    /// linear along characteristics.
    pub fn density_at(&self, t: f64, s: f64) -> Result<f64> {
        self.check_t(t)?;
        if !(s >= 0.0 && s <= self.s_max()) {
            return Err(Error::OutOfRange { what: "age", value: s, lo: 0.0, hi: self.s_max() });
        }
        let (a, b, w) = self.bracket(t);
        if a == b {
            return Ok(self.density_in(a, s));
        }
        let (ta, tb) = (self.snapshot_times[a], self.snapshot_times[b]);
        let sb = (s + (tb - t)).min(self.s_max());
        let back = s - (t - ta);
        if back < 0.0 {
            return Ok(self.density_in(b, sb));
        }
        Ok((1.0 - w) * self.density_in(a, back) + w * self.density_in(b, sb))
    }

    /// ⟨u_t, f⟩ with u_t renormalised to unit mass (midpoint rule per cell).
    pub fn pairing(&self, t: f64, f: impl Fn(f64) -> f64) -> f64 {
        let (a, b, w) = self.bracket(t);
        let pa = self.pairing_at(a, &f);
        if a == b {
            return pa;
        }
        (1.0 - w) * pa + w * self.pairing_at(b, &f)
    }

    fn pairing_at(&self, snap: usize, f: &impl Fn(f64) -> f64) -> f64 {
        let m = &self.snapshots[snap];
        let mut num = 0.0;
        let mut den = 0.0;
        for (j, mj) in m.iter().enumerate() {
            if *mj != 0.0 {
                num += f((j as f64 + 0.5) * self.ds) * mj;
                den += mj;
            }
        }
        num / den
    }

    /// ⟨u_t, f_k⟩ for every k, via one pass over the cells.
    pub fn pairings(&self, t: f64, k: usize, f: impl Fn(f64, &mut [f64])) -> Vec<f64> {
        let (a, b, w) = self.bracket(t);
        let pa = self.pairings_at(a, k, &f);
        if a == b {
            return pa;
        }
        let pb = self.pairings_at(b, k, &f);
        pa.iter().zip(&pb).map(|(x, y)| (1.0 - w) * x + w * y).collect()
    }

    fn pairings_at(&self, snap: usize, k: usize, f: &impl Fn(f64, &mut [f64])) -> Vec<f64> {
        let m = &self.snapshots[snap];
        let mut out = vec![0.0; k];
        let mut buf = vec![0.0; k];
        let mut den = 0.0;
        for (j, mj) in m.iter().enumerate() {
            if *mj != 0.0 {
                f((j as f64 + 0.5) * self.ds, &mut buf);
                for (o, v) in out.iter_mut().zip(&buf) {
                    *o += v * mj;
                }
                den += mj;
            }
        }
        out.iter_mut().for_each(|o| *o /= den);
        out
    }

    /// Probabilities of equal-width age bins on [0, top] at a stored time.
    pub fn bin_probabilities(&self, t: f64, bins: usize, top: f64) -> Result<Vec<f64>> {
        let snap = self.snapshot_index(t).ok_or(Error::OutOfRange { what: "snapshot time", value: t, lo: 0.0, hi: self.horizon() })?;
        let m = &self.snapshots[snap];
        let width = top / bins as f64;
        let mut out = vec![0.0; bins];
        for (j, mj) in m.iter().enumerate() {
            if *mj == 0.0 {
                continue;
            }
            let (lo, hi) = (j as f64 * self.ds, (j + 1) as f64 * self.ds);
            let b0 = ((lo / width).floor() as usize).min(bins - 1);
            let b1 = ((hi / width).floor() as usize).min(bins - 1);
            for (b, o) in out.iter_mut().enumerate().take(b1 + 1).skip(b0) {
                let (bl, bh) = (b as f64 * width, (b + 1) as f64 * width);
                let overlap = (hi.min(bh) - lo.max(bl)).max(0.0);
                *o += mj * overlap / self.ds;
            }
        }
        Ok(out)
    }

    /// (t, s, u) rows for every stored time, every `stride`-th cell.
    pub fn write_grid_csv<W: Write>(&self, w: &mut W, stride: usize) -> std::io::Result<()> {
        w.write_all(b"t,s,u\n")?;
        for (k, m) in self.snapshots.iter().enumerate() {
            let t = fmt_f64(self.snapshot_times[k]);
            for j in (0..self.cells).step_by(stride.max(1)) {
                let s = (j as f64 + 0.5) * self.ds;
                w.write_all(csv_line([t.as_str(), &fmt_f64(s), &fmt_f64(m[j] / self.ds)]).as_bytes())?;
            }
        }
        Ok(())
    }

    /// (t, lambda_bar, gamma_bar, X) at every step.
    pub fn write_trace_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(b"t,lambda_bar,gamma_bar,X\n")?;
        for i in 0..=self.steps {
            w.write_all(
                csv_line([
                    fmt_f64(i as f64 * self.dt),
                    fmt_f64(self.lambda_bar.values[i]),
                    fmt_f64(self.gamma_bar.values[i]),
                    fmt_f64(self.x.values[i]),
                ])
                .as_bytes(),
            )?;
        }
        Ok(())
    }
}

/// u(t, s) for Ψ ≡ μ: newborn part μe^{−μs} for s < t, transported u0 beyond.
pub fn constant_rate_density(mu: f64, u0: &InitialDensity, t: f64, s: f64) -> f64 {
    if s < t {
        mu * (-mu * s).exp()
    } else {
        u0.pdf(s - t) * (-mu * t).exp()
    }
}
