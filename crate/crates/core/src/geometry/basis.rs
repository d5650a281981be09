//! Orthonormal zonal spherical harmonics as polynomials in `u = cos(theta)`.
//!
//! `p_l` are the Gegenbauer polynomials with index `(n-1)/2`, normalised so
//! that they are orthonormal for the probability measure of the quadrature
//! module (`p_0 = 1`). Derivatives in `u` come from differentiating the
//! three-term recurrence, which stays stable for all the degrees we use.

/// Off-diagonal Jacobi coefficients `beta_0 = 0, beta_1, ..., beta_m`.
pub fn recurrence_coeffs(dim: usize, m: usize) -> Vec<f64> {
    let n = dim as f64;
    let mut beta = vec![0.0; m + 1];
    for (l, b) in beta.iter_mut().enumerate().skip(1) {
        let lf = l as f64;
        *b = (lf * (lf + n - 2.0) / ((2.0 * lf + n - 1.0) * (2.0 * lf + n - 3.0))).sqrt();
    }
    beta
}

/// Number of `u`-derivatives tabulated (orders `0..=MAX_DERIV`).
pub const MAX_DERIV: usize = 4;

/// `p_l^{(k)}(u)` for every `l <= l_max` and `k <= MAX_DERIV` at one point.
pub fn eval_all(beta: &[f64], l_max: usize, u: f64) -> Vec<[f64; MAX_DERIV + 1]> {
    let mut out = vec![[0.0; MAX_DERIV + 1]; l_max + 1];
    out[0][0] = 1.0;
    for l in 1..=l_max {
        let b = beta[l];
        let b_prev = beta[l - 1];
        for k in 0..=MAX_DERIV {
            let lower = if k > 0 { k as f64 * out[l - 1][k - 1] } else { 0.0 };
            let back = if l >= 2 { b_prev * out[l - 2][k] } else { 0.0 };
            out[l][k] = (lower + u * out[l - 1][k] - back) / b;
        }
    }
    out
}

/// Eigenvalue of `-Laplacian` on degree-`l` zonal functions of the round
/// sphere of radius `sqrt(2(n-1))`.
pub fn laplace_eigenvalue(dim: usize, l: usize) -> f64 {
    let (n, lf) = (dim as f64, l as f64);
    lf * (lf + n - 1.0) / (2.0 * (n - 1.0))
}

/// Basis values and derivatives at a fixed set of nodes.
#[derive(Debug, Clone)]
pub struct BasisTable {
    /// `values[l][k][node]`.
    values: Vec<Vec<Vec<f64>>>,
}

impl BasisTable {
    pub fn new(beta: &[f64], l_max: usize, nodes: &[f64]) -> Self {
        let mut values = vec![vec![vec![0.0; nodes.len()]; MAX_DERIV + 1]; l_max + 1];
        for (j, &u) in nodes.iter().enumerate() {
            let all = eval_all(beta, l_max, u);
            for l in 0..=l_max {
                for k in 0..=MAX_DERIV {
                    values[l][k][j] = all[l][k];
                }
            }
        }
        BasisTable { values }
    }

    /// `p_l^{(k)}` at every node.
    pub fn get(&self, l: usize, k: usize) -> &[f64] {
        &self.values[l][k]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::quadrature::Quadrature;

    #[test]
    fn orthonormal_under_quadrature() {
        for dim in 2..=5 {
            let l_max = 10;
            let q = Quadrature::gegenbauer(dim, l_max + 2);
            let beta = recurrence_coeffs(dim, l_max + 1);
            let t = BasisTable::new(&beta, l_max, &q.nodes);
            for i in 0..=l_max {
                for j in 0..=l_max {
                    let v: Vec<f64> = (0..q.len()).map(|k| t.get(i, 0)[k] * t.get(j, 0)[k]).collect();
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((q.integrate(&v) - want).abs() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let beta = recurrence_coeffs(3, 9);
        let (u, h) = (0.3, 1e-5);
        let c = eval_all(&beta, 8, u);
        let p = eval_all(&beta, 8, u + h);
        let m = eval_all(&beta, 8, u - h);
        for l in 0..=8 {
            for k in 0..MAX_DERIV {
                let fd = (p[l][k] - m[l][k]) / (2.0 * h);
                assert!((fd - c[l][k + 1]).abs() < 1e-5 * (1.0 + fd.abs()), "l {l} k {k}");
            }
        }
    }

    #[test]
    fn satisfies_gegenbauer_equation() {
        for dim in 2..=5 {
            let beta = recurrence_coeffs(dim, 12);
            let n = dim as f64;
            for &u in &[-0.9, -0.2, 0.41, 0.77] {
                let all = eval_all(&beta, 11, u);
                for (l, d) in all.iter().enumerate() {
                    let lhs = (1.0 - u * u) * d[2] - n * u * d[1];
                    let rhs = -((l * (l + dim - 1)) as f64) * d[0];
                    assert!((lhs - rhs).abs() < 1e-9 * (1.0 + rhs.abs()));
                }
            }
        }
    }
}
