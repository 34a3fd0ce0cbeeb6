//! Weighted Sobolev norms ‖f‖²_{k,α} = Σ_{k'≤k} ∫ |f^{(k')}|² / (1 + s^{2α}) ds,
//! orthonormal bases built from a hierarchical lattice of mollifier bumps, and
//! truncated dual norms by Parseval.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{csv_line, fmt_f64};
use crate::model::ModelParams;
use crate::pde::DensityGrid;
use crate::quad::Composite;
use crate::testfn::TestFamily;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SobolevSpec {
    pub k: usize,
    pub alpha: f64,
    pub s_max: f64,
    /// Gauss–Legendre cells on [0, s_max], 8 nodes each.
    pub cells: usize,
}

impl SobolevSpec {
    pub fn new(k: usize, alpha: f64, s_max: f64) -> Result<Self> {
        let spec = SobolevSpec { k, alpha, s_max, cells: 512 };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_cells(mut self, cells: usize) -> Self {
        self.cells = cells;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.k > 3 {
            return Err(Error::InvalidParameter { name: "k", reason: format!("order {} above 3", self.k) });
        }
        if !(self.alpha > 0.5 && self.alpha.is_finite()) {
            return Err(Error::InvalidParameter { name: "alpha", reason: format!("need alpha > 1/2, got {}", self.alpha) });
        }
        if !(self.s_max > 0.0 && self.s_max.is_finite()) {
            return Err(Error::InvalidParameter { name: "s_max", reason: format!("got {}", self.s_max) });
        }
        if self.cells == 0 {
            return Err(Error::InvalidParameter { name: "cells", reason: "need at least one cell".into() });
        }
        Ok(())
    }

    pub fn weight(&self, s: f64) -> f64 {
        1.0 / (1.0 + s.powf(2.0 * self.alpha))
    }

    /// Nodes and weights (weight function included) on [0, s_max].
    pub fn rule(&self) -> (Vec<f64>, Vec<f64>) {
        let q = Composite::new(0.0, self.s_max, self.cells, 8);
        let w = q.nodes.iter().zip(&q.weights).map(|(&s, &w)| w * self.weight(s)).collect();
        (q.nodes, w)
    }

    /// ∫_{s_max}^∞ (1 + s^{2α})⁻¹ ds.
    pub fn tail(&self) -> f64 {
        weight_tail(self.s_max, self.alpha)
    }
}

/// ∫_a^∞ (1 + s^{2α})⁻¹ ds: Gauss on [a, b] with b ≥ 2, then the alternating
/// series Σ (−1)^m b^{1−2α(m+1)} / (2α(m+1) − 1).
pub fn weight_tail(a: f64, alpha: f64) -> f64 {
    let b = a.max(2.0);
    let mut head = 0.0;
    if b > a {
        let q = Composite::new(a, b, 16, 8);
        head = q.integrate(|s| 1.0 / (1.0 + s.powf(2.0 * alpha)));
    }
    let mut sum = 0.0;
    for m in 0..400 {
        let p = 2.0 * alpha * (m + 1) as f64 - 1.0;
        let term = b.powf(-p) / p;
        sum += if m % 2 == 0 { term } else { -term };
        if term < 1e-17 * sum.abs() {
            break;
        }
    }
    head + sum
}

/// ‖f‖_{k,α} for f given as (s, derivative order) ↦ value. The tail past
/// s_max is f(s_max)² ∫_{s_max}^∞ w, exact when f is constant there.
pub fn norm_k_alpha(f: impl Fn(f64, usize) -> f64, spec: &SobolevSpec) -> Result<f64> {
    spec.validate()?;
    let (nodes, weights) = spec.rule();
    let mut acc = 0.0;
    for (&s, &w) in nodes.iter().zip(&weights) {
        for order in 0..=spec.k {
            let v = f(s, order);
            if !v.is_finite() {
                return Err(Error::NonFinite { what: "test function", point: format!("s={s}, derivative {order}") });
            }
            acc += v * v * w;
        }
    }
    let end = f(spec.s_max, 0);
    if !end.is_finite() {
        return Err(Error::NonFinite { what: "test function", point: format!("s={}", spec.s_max) });
    }
    acc += end * end * spec.tail();
    Ok(acc.sqrt())
}

/// Standard mollifier exp(−1/(1 − x²)) and its first three derivatives.
fn mollifier(x: f64, order: usize) -> f64 {
    if x.abs() >= 1.0 {
        return 0.0;
    }
    let q = 1.0 - x * x;
    let b = (-1.0 / q).exp();
    if order == 0 {
        return b;
    }
    let g1 = -2.0 * x / (q * q);
    if order == 1 {
        return g1 * b;
    }
    let q3 = q * q * q;
    let g2 = -2.0 / (q * q) - 8.0 * x * x / q3;
    if order == 2 {
        return (g2 + g1 * g1) * b;
    }
    let g3 = -24.0 * x / q3 - 48.0 * x * x * x / (q3 * q);
    (g3 + 3.0 * g1 * g2 + g1 * g1 * g1) * b
}

/// Bumps b((s − c)/r) ordered coarse to fine so that every prefix is itself
/// a lattice. Level 0 has n0 centres j·h0, j < n0, with h0 = s_max/(n0 + 1);
/// level ℓ ≥ 1 adds the odd multiples of h0/2^ℓ. Radius is twice the spacing,
/// so every support ends at or before s_max.
#[derive(Debug, Clone, PartialEq)]
pub struct BumpLattice {
    pub s_max: f64,
    pub centers: Vec<f64>,
    pub radii: Vec<f64>,
}

impl BumpLattice {
    pub const N0: usize = 8;

    pub fn new(s_max: f64, m: usize) -> Self {
        let n0 = Self::N0;
        let h0 = s_max / (n0 + 1) as f64;
        let mut centers = Vec::with_capacity(m);
        let mut radii = Vec::with_capacity(m);
        let mut level = 0u32;
        'outer: loop {
            if level == 0 {
                for j in 0..n0 {
                    if centers.len() == m {
                        break 'outer;
                    }
                    centers.push(j as f64 * h0);
                    radii.push(2.0 * h0);
                }
            } else {
                let h = h0 / f64::from(1u32 << level);
                for i in 0..n0 << (level - 1) {
                    if centers.len() == m {
                        break 'outer;
                    }
                    centers.push((2 * i + 1) as f64 * h);
                    radii.push(2.0 * h);
                }
            }
            level += 1;
        }
        BumpLattice { s_max, centers, radii }
    }

    pub fn finest_radius(&self) -> f64 {
        self.radii.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

impl TestFamily for BumpLattice {
    fn len(&self) -> usize {
        self.centers.len()
    }

    fn eval_into(&self, s: f64, order: usize, out: &mut [f64]) {
        for ((o, &c), &r) in out.iter_mut().zip(&self.centers).zip(&self.radii) {
            let x = (s - c) / r;
            *o = if x.abs() >= 1.0 { 0.0 } else { mollifier(x, order) / r.powi(order as i32) };
        }
    }
}

/// Raw Gram matrix in the (k, α) inner product, tail included.
pub fn raw_gram(raw: &dyn TestFamily, spec: &SobolevSpec) -> DMatrix<f64> {
    let (nodes, weights) = spec.rule();
    let m = raw.len();
    let mut g = DMatrix::zeros(m, m);
    let mut buf = vec![0.0; m];
    for order in 0..=spec.k {
        let mut tab = DMatrix::zeros(nodes.len(), m);
        for (i, &s) in nodes.iter().enumerate() {
            raw.eval_into(s, order, &mut buf);
            let w = weights[i].sqrt();
            for k in 0..m {
                tab[(i, k)] = buf[k] * w;
            }
        }
        g += tab.transpose() * &tab;
    }
    raw.eval_into(spec.s_max, 0, &mut buf);
    let end = DVector::from_column_slice(&buf);
    g += &end * end.transpose() * spec.tail();
    g
}

/// Orthonormal family φ_j = Σ_{i≤j} C_ji b_i obtained from the Cholesky factor
/// of the raw Gram matrix; the first m members only involve b_1..b_m, so
/// truncations are nested.
#[derive(Debug, Clone)]
pub struct TestBasis<F> {
    pub spec: SobolevSpec,
    pub raw: F,
    /// Lower-triangular C = L⁻¹.
    pub coef: DMatrix<f64>,
}

/// Orthonormalize a raw family, dropping trailing members once a Cholesky
/// pivot loses more than 10 digits relative to its diagonal.
pub fn orthonormalize<F: TestFamily>(raw: F, spec: &SobolevSpec) -> Result<TestBasis<F>> {
    spec.validate()?;
    let g = raw_gram(&raw, spec);
    let m = g.nrows();
    let mut l = DMatrix::<f64>::zeros(m, m);
    let mut keep = m;
    for j in 0..m {
        let mut d = g[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 1e-10 * g[(j, j)]) {
            keep = j;
            log::warn!("Gram matrix singular at member {j}; basis reduced from {m} to {j}");
            break;
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in j + 1..m {
            let mut v = g[(i, j)];
            for k in 0..j {
                v -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = v / d;
        }
    }
    if keep == 0 {
        return Err(Error::InvalidParameter { name: "m", reason: "no linearly independent members".into() });
    }
    let l = l.view((0, 0), (keep, keep)).into_owned();
    let coef = l.solve_lower_triangular(&DMatrix::identity(keep, keep)).ok_or_else(|| Error::NoConvergence("triangular inverse".into()))?;
    Ok(TestBasis { spec: *spec, raw, coef })
}

/// Orthonormal bump basis of size m.
pub fn build_basis(spec: &SobolevSpec, m: usize) -> Result<TestBasis<BumpLattice>> {
    if m == 0 {
        return Err(Error::InvalidParameter { name: "m", reason: "basis size must be positive".into() });
    }
    let raw = BumpLattice::new(spec.s_max, m);
    // resolve the finest bumps with at least four cells per radius
    let need = (4.0 * spec.s_max / raw.finest_radius()).ceil() as usize;
    let spec = spec.with_cells(spec.cells.max(need));
    orthonormalize(raw, &spec)
}

impl<F: TestFamily> TestBasis<F> {
    pub fn size(&self) -> usize {
        self.coef.nrows()
    }

    /// Dual vector from raw pairings ⟨w, b_i⟩.
    pub fn from_raw(&self, raw_pairings: &[f64]) -> DualVector {
        let m = self.size();
        let r = DVector::from_column_slice(&raw_pairings[..m]);
        DualVector { coeffs: (&self.coef * r).as_slice().to_vec() }
    }

    /// Max |⟨φ_i, φ_j⟩ − δ_ij| recomputed by quadrature.
    pub fn orthonormality_error(&self) -> f64 {
        let g = raw_gram(&self.raw, &self.spec);
        let m = self.size();
        let g = g.view((0, 0), (m, m));
        let e = &self.coef * g * self.coef.transpose() - DMatrix::identity(m, m);
        e.amax()
    }

    /// Basis diagnostics: j, raw centre (if known), norm, max off-diagonal product.
    pub fn write_diagnostics_csv<W: Write>(&self, w: &mut W, centers: Option<&[f64]>) -> Result<()> {
        let g = raw_gram(&self.raw, &self.spec);
        let m = self.size();
        let g = &self.coef * g.view((0, 0), (m, m)) * self.coef.transpose();
        writeln!(w, "j,center,norm,max_inner").map_err(io_err)?;
        for j in 0..m {
            let off = (0..m).filter(|&i| i != j).map(|i| g[(i, j)].abs()).fold(0.0, f64::max);
            let c = centers.map(|c| fmt_f64(c[j])).unwrap_or_default();
            write!(w, "{}", csv_line(&[j.to_string(), c, fmt_f64(g[(j, j)].sqrt()), fmt_f64(off)])).map_err(io_err)?;
        }
        Ok(())
    }
}

fn io_err(e: std::io::Error) -> Error {
    Error::Format(e.to_string())
}

impl<F: TestFamily> TestFamily for TestBasis<F> {
    fn len(&self) -> usize {
        self.size()
    }

    fn eval_into(&self, s: f64, order: usize, out: &mut [f64]) {
        let mut b = vec![0.0; self.raw.len()];
        self.raw.eval_into(s, order, &mut b);
        let m = self.size();
        for (j, o) in out.iter_mut().enumerate().take(m) {
            let mut acc = 0.0;
            for i in 0..=j {
                acc += self.coef[(j, i)] * b[i];
            }
            *o = acc;
        }
    }
}

/// Pairings ⟨w, φ_j⟩ against an orthonormal basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualVector {
    pub coeffs: Vec<f64>,
}

impl DualVector {
    pub fn norm(&self) -> f64 {
        dual_norm(self)
    }

    /// Norm using only the first m coefficients.
    pub fn truncated_norm(&self, m: usize) -> f64 {
        self.coeffs.iter().take(m).map(|c| c * c).sum::<f64>().sqrt()
    }

    /// Relative change of the norm from m/2 to m members; emitted as a
    /// stability diagnostic by callers.
    pub fn halving_change(&self) -> f64 {
        let m = self.coeffs.len();
        let full = self.norm();
        if full == 0.0 {
            return 0.0;
        }
        (full - self.truncated_norm(m / 2)) / full
    }
}

pub fn dual_norm(w: &DualVector) -> f64 {
    w.truncated_norm(w.coeffs.len())
}

pub fn pair_delta<F: TestFamily>(x: f64, basis: &TestBasis<F>) -> DualVector {
    DualVector { coeffs: basis.values(x) }
}

pub fn pair_d<F: TestFamily>(x: f64, y: f64, basis: &TestBasis<F>) -> DualVector {
    if x == y {
        return DualVector { coeffs: vec![0.0; basis.len()] };
    }
    let a = basis.values(x);
    let b = basis.values(y);
    DualVector { coeffs: a.iter().zip(&b).map(|(u, v)| u - v).collect() }
}

/// Rf = f(0) − f, as a (s, order) ↦ value function.
pub fn apply_r<'a>(f: impl Fn(f64, usize) -> f64 + 'a) -> impl Fn(f64, usize) -> f64 + 'a {
    let f0 = f(0.0, 0);
    move |s, order| if order == 0 { f0 - f(s, 0) } else { -f(s, order) }
}

/// L_z f = f′ + Ψ(·, γ̄(z)) Rf, derivatives up to order 2 (f needs order 3).
pub fn apply_l<'a>(f: impl Fn(f64, usize) -> f64 + 'a, z: f64, grid: &DensityGrid, p: &'a ModelParams) -> Result<impl Fn(f64, usize) -> f64 + 'a> {
    let y = grid.gamma_bar(z)?;
    let f0 = f(0.0, 0);
    let psi = &p.intensity;
    Ok(move |s: f64, order: usize| {
        let r = |o: usize| if o == 0 { f0 - f(s, 0) } else { -f(s, o) };
        match order {
            0 => f(s, 1) + psi.eval(s, y) * r(0),
            1 => f(s, 2) + psi.d_ds(s, y, 1) * r(0) + psi.eval(s, y) * r(1),
            2 => f(s, 3) + psi.d_ds(s, y, 2) * r(0) + 2.0 * psi.d_ds(s, y, 1) * r(1) + psi.eval(s, y) * r(2),
            _ => panic!("L_z derivatives above second order are not available"),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tail_matches_arctan() {
        for &a in &[0.5, 1.0, 3.0, 10.0] {
            let exact = std::f64::consts::FRAC_PI_2 - f64::atan(a);
            assert!((weight_tail(a, 1.0) - exact).abs() < 1e-12, "a={a}");
        }
    }

    #[test]
    fn mollifier_derivatives_match_differences() {
        let h = 1e-6;
        for &x in &[-0.7, -0.2, 0.0, 0.4, 0.85] {
            for o in 1..=3 {
                let fd = (mollifier(x + h, o - 1) - mollifier(x - h, o - 1)) / (2.0 * h);
                let an = mollifier(x, o);
                assert!((fd - an).abs() < 1e-5 * (1.0 + an.abs()), "x={x} o={o}");
            }
        }
    }

    #[test]
    fn lattice_prefixes_are_nested() {
        let a = BumpLattice::new(3.0, 40);
        let b = BumpLattice::new(3.0, 64);
        assert_eq!(a.centers[..], b.centers[..40]);
        assert!(b.centers.iter().zip(&b.radii).all(|(c, r)| c + r <= 3.0 + 1e-12));
    }

    #[test]
    fn degenerate_spec_rejected() {
        assert!(SobolevSpec::new(1, 0.5, 3.0).is_err());
        assert!(SobolevSpec::new(4, 1.0, 3.0).is_err());
        assert!(SobolevSpec::new(1, 1.0, 0.0).is_err());
    }
}
