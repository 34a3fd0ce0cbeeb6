//! Finite families of smooth test functions on ℝ₊ with their derivatives.

use nalgebra::{DMatrix, DVector};

use crate::quad::Composite;

pub trait TestFamily: Sync + Send {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Derivative of the given order of every member at s.
    fn eval_into(&self, s: f64, order: usize, out: &mut [f64]);

    /// Values at s when e^{−s} is already known; hot loops call this.
    fn values_emx(&self, s: f64, _emx: f64, out: &mut [f64]) {
        self.eval_into(s, 0, out)
    }

    /// Monomial coefficients in x = e^{−s} when every member is a polynomial
    /// in x; row k holds member k.
    fn x_polynomial(&self) -> Option<Vec<Vec<f64>>> {
        None
    }

    fn values(&self, s: f64) -> Vec<f64> {
        let mut v = vec![0.0; self.len()];
        self.eval_into(s, 0, &mut v);
        v
    }

    fn derivs(&self, s: f64, order: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.len()];
        self.eval_into(s, order, &mut v);
        v
    }
}

/// 1 followed by T_k(2e^{−s} − 1), k = 1..=degree.
///
/// Polynomials in e^{−s}: the span is closed under d/ds, under R, and under
/// multiplication by 1 − e^{−s} up to one degree, which makes it a natural
/// Galerkin space for the fluctuation equation.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpChebyshev {
    pub degree: usize,
}

impl ExpChebyshev {
    pub fn new(degree: usize) -> Self {
        ExpChebyshev { degree }
    }

    fn cheb(&self, xi: f64, order: usize, out: &mut [f64]) {
        // T_k and derivatives in ξ by the three-term recurrence
        let n = self.degree + 1;
        let mut t = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        t[0][0] = 1.0;
        if n > 1 {
            t[0][1] = xi;
            t[1][1] = 1.0;
        }
        for k in 1..n - 1 {
            t[0][k + 1] = 2.0 * xi * t[0][k] - t[0][k - 1];
            for d in 1..=order.min(3) {
                t[d][k + 1] = 2.0 * d as f64 * t[d - 1][k] + 2.0 * xi * t[d][k] - t[d][k - 1];
            }
        }
        for (k, o) in out.iter_mut().enumerate() {
            *o = match order {
                0 => t[0][k],
                1 => t[1][k],
                2 => t[2][k],
                _ => t[3][k],
            };
        }
    }
}

impl TestFamily for ExpChebyshev {
    fn len(&self) -> usize {
        self.degree + 1
    }

    fn eval_into(&self, s: f64, order: usize, out: &mut [f64]) {
        let x = (-s).exp();
        let xi = 2.0 * x - 1.0;
        if order == 0 {
            self.cheb(xi, 0, out);
            return;
        }
        // f = g(ξ(s)), ξ' = −2x, ξ'' = 2x, ξ''' = −2x
        let n = self.len();
        let mut g1 = vec![0.0; n];
        self.cheb(xi, 1, &mut g1);
        let (d1, d2, d3) = (-2.0 * x, 2.0 * x, -2.0 * x);
        match order {
            1 => out.iter_mut().zip(&g1).for_each(|(o, a)| *o = a * d1),
            2 => {
                let mut g2 = vec![0.0; n];
                self.cheb(xi, 2, &mut g2);
                for k in 0..n {
                    out[k] = g2[k] * d1 * d1 + g1[k] * d2;
                }
            }
            3 => {
                let mut g2 = vec![0.0; n];
                let mut g3 = vec![0.0; n];
                self.cheb(xi, 2, &mut g2);
                self.cheb(xi, 3, &mut g3);
                for k in 0..n {
                    out[k] = g3[k] * d1 * d1 * d1 + 3.0 * g2[k] * d1 * d2 + g1[k] * d3;
                }
            }
            _ => unimplemented!("derivatives above third order"),
        }
        out[0] = 0.0;
    }

    fn x_polynomial(&self) -> Option<Vec<Vec<f64>>> {
        // coefficients grow like 4^k, so stop before cancellation bites
        if self.degree > 8 {
            return None;
        }
        let mut rows: Vec<Vec<f64>> = vec![vec![1.0]];
        if self.degree >= 1 {
            rows.push(vec![-1.0, 2.0]);
        }
        for k in 1..self.degree {
            let mut next = vec![0.0; k + 2];
            for (q, c) in rows[k].iter().enumerate() {
                next[q + 1] += 4.0 * c;
                next[q] -= 2.0 * c;
            }
            for (q, c) in rows[k - 1].iter().enumerate() {
                next[q] -= c;
            }
            rows.push(next);
        }
        Some(rows)
    }

    fn values_emx(&self, _s: f64, emx: f64, out: &mut [f64]) {
        let xi = 2.0 * emx - 1.0;
        out[0] = 1.0;
        if out.len() > 1 {
            out[1] = xi;
        }
        for k in 1..out.len() - 1 {
            out[k + 1] = 2.0 * xi * out[k] - out[k - 1];
        }
    }
}

/// e^{−p s} for each rate p (p = 0 is the constant 1).
#[derive(Debug, Clone, PartialEq)]
pub struct ExpRates {
    pub rates: Vec<f64>,
}

impl ExpRates {
    pub fn new(rates: Vec<f64>) -> Self {
        ExpRates { rates }
    }
}

impl TestFamily for ExpRates {
    fn len(&self) -> usize {
        self.rates.len()
    }

    fn eval_into(&self, s: f64, order: usize, out: &mut [f64]) {
        for (o, &p) in out.iter_mut().zip(&self.rates) {
            *o = if p == 0.0 {
                if order == 0 {
                    1.0
                } else {
                    0.0
                }
            } else {
                (-p).powi(order as i32) * (-p * s).exp()
            };
        }
    }

    fn x_polynomial(&self) -> Option<Vec<Vec<f64>>> {
        if !self.rates.iter().all(|&p| p >= 0.0 && p.fract() == 0.0 && p <= 12.0) {
            return None;
        }
        Some(
            self.rates
                .iter()
                .map(|&p| {
                    let mut row = vec![0.0; p as usize + 1];
                    row[p as usize] = 1.0;
                    row
                })
                .collect(),
        )
    }

    fn values_emx(&self, s: f64, emx: f64, out: &mut [f64]) {
        for (o, &p) in out.iter_mut().zip(&self.rates) {
            *o = if p == 0.0 {
                1.0
            } else if p == 1.0 {
                emx
            } else if p.fract() == 0.0 && p > 0.0 && p <= 8.0 {
                emx.powi(p as i32)
            } else {
                (-p * s).exp()
            };
        }
    }
}

/// Rφ = φ(0) − φ applied to every member.
pub struct Reset<'a, F: TestFamily + ?Sized> {
    base: &'a F,
    at_zero: Vec<f64>,
}

impl<'a, F: TestFamily + ?Sized> Reset<'a, F> {
    pub fn new(base: &'a F) -> Self {
        let mut at_zero = vec![0.0; base.len()];
        base.eval_into(0.0, 0, &mut at_zero);
        Reset { base, at_zero }
    }
}

impl<F: TestFamily + ?Sized> TestFamily for Reset<'_, F> {
    fn len(&self) -> usize {
        self.base.len()
    }

    fn eval_into(&self, s: f64, order: usize, out: &mut [f64]) {
        self.base.eval_into(s, order, out);
        if order == 0 {
            for (o, z) in out.iter_mut().zip(&self.at_zero) {
                *o = z - *o;
            }
        } else {
            out.iter_mut().for_each(|o| *o = -*o);
        }
    }
}

/// Linear combinations Σ_j C_kj b_j of a base family.
#[derive(Debug, Clone)]
pub struct Combination<F> {
    pub base: F,
    pub coef: DMatrix<f64>,
}

impl<F: TestFamily> TestFamily for Combination<F> {
    fn len(&self) -> usize {
        self.coef.nrows()
    }

    fn eval_into(&self, s: f64, order: usize, out: &mut [f64]) {
        let mut b = vec![0.0; self.base.len()];
        self.base.eval_into(s, order, &mut b);
        let b = DVector::from_vec(b);
        let v = &self.coef * b;
        out.copy_from_slice(v.as_slice());
    }
}

/// Weighted L² on [0, s_max] with weight (1 + s^{2α})⁻¹, by composite Gauss.
#[derive(Debug, Clone)]
pub struct WeightedL2 {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl WeightedL2 {
    pub fn new(s_max: f64, alpha: f64, cells: usize) -> Self {
        let q = Composite::new(0.0, s_max, cells, 8);
        let weights = q.nodes.iter().zip(&q.weights).map(|(&s, &w)| w / (1.0 + s.powf(2.0 * alpha))).collect();
        WeightedL2 { nodes: q.nodes, weights }
    }

    /// Member values at the quadrature nodes, one row per node.
    pub fn tabulate(&self, f: &dyn TestFamily, order: usize) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nodes.len(), f.len());
        let mut buf = vec![0.0; f.len()];
        for (i, &s) in self.nodes.iter().enumerate() {
            f.eval_into(s, order, &mut buf);
            for (k, v) in buf.iter().enumerate() {
                m[(i, k)] = *v;
            }
        }
        m
    }

    /// Gram matrix ⟨b_k, b_l⟩ from tabulated values.
    pub fn gram(&self, tab: &DMatrix<f64>) -> DMatrix<f64> {
        let mut wt = tab.clone();
        for (mut row, w) in wt.row_iter_mut().zip(&self.weights) {
            row *= *w;
        }
        tab.transpose() * wt
    }

    /// ⟨b_k, g⟩ for g given by its values at the nodes.
    pub fn moments(&self, tab: &DMatrix<f64>, g: &[f64]) -> DVector<f64> {
        let wg: Vec<f64> = g.iter().zip(&self.weights).map(|(a, w)| a * w).collect();
        tab.transpose() * DVector::from_vec(wg)
    }

    pub fn norm2(&self, g: &[f64]) -> f64 {
        g.iter().zip(&self.weights).map(|(a, w)| a * a * w).sum()
    }
}

/// Orthogonal projection onto span{b_k} in a weighted L² space.
#[derive(Debug, Clone)]
pub struct Projector {
    pub l2: WeightedL2,
    pub tab: DMatrix<f64>,
    pub gram: DMatrix<f64>,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl Projector {
    pub fn new(family: &dyn TestFamily, s_max: f64, alpha: f64, cells: usize) -> Self {
        let l2 = WeightedL2::new(s_max, alpha, cells);
        let tab = l2.tabulate(family, 0);
        let gram = l2.gram(&tab);
        let chol = gram.clone().cholesky().expect("Galerkin family is linearly dependent");
        Projector { l2, tab, gram, chol }
    }

    /// Coefficients c with g ≈ Σ c_k b_k, and the relative residual norm.
    pub fn project(&self, g: &[f64]) -> (DVector<f64>, f64) {
        let rhs = self.l2.moments(&self.tab, g);
        let c = self.chol.solve(&rhs);
        let fit = &self.tab * &c;
        let res: Vec<f64> = g.iter().zip(fit.iter()).map(|(a, b)| a - b).collect();
        let total = self.l2.norm2(g);
        let rel = if total > 0.0 { (self.l2.norm2(&res) / total).sqrt() } else { 0.0 };
        (c, rel)
    }

    /// Project a function given pointwise.
    pub fn project_fn(&self, f: impl Fn(f64) -> f64) -> (DVector<f64>, f64) {
        let g: Vec<f64> = self.l2.nodes.iter().map(|&s| f(s)).collect();
        self.project(&g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_check(f: &dyn TestFamily) {
        let h = 1e-5;
        for &s in &[0.0, 0.3, 1.7, 4.0] {
            for order in 1..=3 {
                let lo = f.derivs(s + 1e-2 - h, order - 1);
                let hi = f.derivs(s + 1e-2 + h, order - 1);
                let an = f.derivs(s + 1e-2, order);
                for k in 0..f.len() {
                    let fd = (hi[k] - lo[k]) / (2.0 * h);
                    assert!((fd - an[k]).abs() < 1e-5 * (1.0 + an[k].abs()), "s={s} order={order} k={k}: {fd} vs {}", an[k]);
                }
            }
        }
    }

    #[test]
    fn exp_chebyshev_derivatives() {
        fd_check(&ExpChebyshev::new(7));
    }

    #[test]
    fn exp_rates_derivatives() {
        fd_check(&ExpRates::new(vec![0.0, 1.0, 2.5]));
    }

    #[test]
    fn emx_paths_agree() {
        let f = ExpChebyshev::new(6);
        let g = ExpRates::new(vec![0.0, 1.0, 2.0, 3.0, 0.5]);
        for &s in &[0.0, 0.4, 2.2] {
            let mut a = vec![0.0; 7];
            f.values_emx(s, (-s).exp(), &mut a);
            for (x, y) in a.iter().zip(f.values(s)) {
                assert!((x - y).abs() < 1e-14);
            }
            let mut b = vec![0.0; 5];
            g.values_emx(s, (-s).exp(), &mut b);
            for (x, y) in b.iter().zip(g.values(s)) {
                assert!((x - y).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn powers_of_emx_lie_in_the_span() {
        let f = ExpChebyshev::new(5);
        let pr = Projector::new(&f, 4.0, 1.0, 64);
        for p in 0..=5 {
            let (_, rel) = pr.project_fn(|s| (-(p as f64) * s).exp());
            assert!(rel < 1e-10, "p={p} rel={rel}");
        }
        let (_, rel) = pr.project_fn(|s| (-7.0 * s).exp());
        assert!(rel > 1e-6);
    }

    #[test]
    fn monomial_forms_match_values() {
        let fams: Vec<Box<dyn TestFamily>> = vec![Box::new(ExpChebyshev::new(6)), Box::new(ExpRates::new(vec![0.0, 2.0, 5.0]))];
        for f in &fams {
            let rows = f.x_polynomial().unwrap();
            for &s in &[0.0f64, 0.7, 3.1] {
                let x: f64 = (-s).exp();
                for (row, v) in rows.iter().zip(f.values(s)) {
                    let poly: f64 = row.iter().enumerate().map(|(q, c)| c * x.powi(q as i32)).sum();
                    assert!((poly - v).abs() < 1e-12);
                }
            }
        }
        assert!(ExpRates::new(vec![0.5]).x_polynomial().is_none());
    }

    #[test]
    fn reset_of_constant_vanishes() {
        let f = ExpChebyshev::new(3);
        let r = Reset::new(&f);
        assert_eq!(r.values(1.3)[0], 0.0);
        assert!((r.values(0.0)[2]).abs() < 1e-15);
    }
}
