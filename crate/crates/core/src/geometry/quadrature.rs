//! Gauss rules for the zonal measure `(1-u^2)^((n-2)/2) du` on `[-1, 1]`.
//!
//! In the variable `u = cos(theta)` the round sphere's volume form reduces to
//! this Gegenbauer weight, so a Gauss rule for it integrates zonal
//! polynomials exactly, including for odd `n` where the weight is not itself
//! a polynomial.

use nalgebra::{DMatrix, SymmetricEigen};

use super::basis::recurrence_coeffs;

#[derive(Debug, Clone)]
pub struct Quadrature {
    /// Nodes in `u`, ascending.
    pub nodes: Vec<f64>,
    /// Weights summing to one.
    pub weights: Vec<f64>,
}

impl Quadrature {
    /// `count`-point rule exact for polynomials of degree `2*count - 1`.
    pub fn gegenbauer(dim: usize, count: usize) -> Self {
        assert!(count >= 1);
        let beta = recurrence_coeffs(dim, count);
        let mut jac = DMatrix::<f64>::zeros(count, count);
        for l in 1..count {
            jac[(l - 1, l)] = beta[l];
            jac[(l, l - 1)] = beta[l];
        }
        let eig = SymmetricEigen::new(jac);
        let mut nodes: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        nodes.sort_by(|a, b| a.partial_cmp(b).unwrap());

        // Newton polish on p_count, then Christoffel weights.
        let mut weights = Vec::with_capacity(count);
        for u in nodes.iter_mut() {
            for _ in 0..3 {
                let (p, dp, _) = eval_with_derivative(&beta, count, *u);
                if dp == 0.0 {
                    break;
                }
                *u -= p / dp;
            }
            let (_, _, sum_sq) = eval_with_derivative(&beta, count, *u);
            weights.push(1.0 / sum_sq);
        }
        let total: f64 = weights.iter().sum();
        for w in weights.iter_mut() {
            *w /= total;
        }
        Quadrature { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate(&self, values: &[f64]) -> f64 {
        self.weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }
}

/// Returns `(p_m, p_m', sum_{l<m} p_l^2)` at `u` for the orthonormal family.
fn eval_with_derivative(beta: &[f64], m: usize, u: f64) -> (f64, f64, f64) {
    let (mut p_prev, mut p) = (0.0, 1.0);
    let (mut d_prev, mut d) = (0.0, 0.0);
    let mut sum_sq = 0.0;
    for l in 0..m {
        sum_sq += p * p;
        let b_next = beta[l + 1];
        let b_cur = if l == 0 { 0.0 } else { beta[l] };
        let p_next = (u * p - b_cur * p_prev) / b_next;
        let d_next = (p + u * d - b_cur * d_prev) / b_next;
        p_prev = p;
        p = p_next;
        d_prev = d;
        d = d_next;
    }
    (p, d, sum_sq)
}
