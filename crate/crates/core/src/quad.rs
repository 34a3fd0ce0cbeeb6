//! Composite Gauss–Legendre rules on intervals.

use gauss_quad::legendre::GaussLegendre;

#[derive(Debug, Clone)]
pub struct Composite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Composite {
    /// `cells` equal cells on [a, b] with `order` nodes each.
    pub fn new(a: f64, b: f64, cells: usize, order: usize) -> Self {
        let gl = GaussLegendre::new(order.max(2)).expect("order >= 2");
        let pairs = gl.as_node_weight_pairs();
        let h = (b - a) / cells as f64;
        let mut nodes = Vec::with_capacity(cells * pairs.len());
        let mut weights = Vec::with_capacity(cells * pairs.len());
        for c in 0..cells {
            let lo = a + c as f64 * h;
            for &(x, w) in pairs {
                nodes.push(lo + 0.5 * h * (x + 1.0));
                weights.push(0.5 * h * w);
            }
        }
        Composite { nodes, weights }
    }

    pub fn integrate(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_smooth_functions() {
        let q = Composite::new(0.0, 3.0, 12, 8);
        let v = q.integrate(|s| (-s).exp());
        assert!((v - (1.0 - (-3.0f64).exp())).abs() < 1e-14);
        let p = q.integrate(|s| s.powi(7));
        assert!((p - 3f64.powi(8) / 8.0).abs() < 1e-10);
    }
}
