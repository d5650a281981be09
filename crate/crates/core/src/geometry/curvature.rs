//! Curvature of `g = g_bg + h` for zonal `h`.
//!
//! `g = r^2 (alpha dtheta^2 + beta sin^2(theta) g_S)` is a warped product
//! `ds^2 + F(s)^2 g_S`, so its Ricci tensor is explicit in `F`. All formulas
//! are arranged so that the background contribution cancels analytically:
//! we compute `Ric(g) - g_bg/2` directly from `h` and its derivatives, which
//! keeps the nonlinear remainder free of an absolute roundoff floor.

use super::operators::lie_of_metric;
use super::{AxisymTensor, Background, TensorGrid, TensorJet};
use crate::error::{Error, Result};

/// Curvature quantities of `g_bg + h` at the quadrature nodes.
#[derive(Debug, Clone)]
pub struct CurvatureData {
    /// `Ric(g) - g_bg/2` in background frame components.
    pub ric_delta: TensorGrid,
    /// Scalar curvature of `g`.
    pub scalar: Vec<f64>,
    /// Christoffel differences `Gamma(g) - Gamma(g_bg)` in coordinates:
    /// `G^theta_{theta theta}`, the coefficient of `g_S` in
    /// `G^theta_{ab}`, and the coefficient of `delta^a_b` in `G^a_{theta b}`.
    pub christoffel: [Vec<f64>; 3],
    /// `y` of the DeTurck vector `W = g^{ij}(Gamma(g) - Gamma(g_bg))_ij` and
    /// its `u`-derivative.
    pub deturck_y: Vec<f64>,
    pub deturck_y_u: Vec<f64>,
}

impl Background {
    fn check_metric(&self, j: &TensorJet) -> Result<()> {
        for k in 0..self.len() {
            if !(1.0 + j.a[k] > 0.0 && 1.0 + j.b[k] > 0.0) || !(j.a[k].is_finite() && j.b[k].is_finite()) {
                return Err(Error::DegenerateMetric(format!(
                    "g_bg + h is not positive at u = {:.4} (a = {:.3e}, b = {:.3e})",
                    self.nodes()[k],
                    j.a[k],
                    j.b[k]
                )));
            }
        }
        Ok(())
    }

    pub fn curvature(&self, h: &AxisymTensor) -> Result<CurvatureData> {
        let j = self.tensor_jet(h);
        self.check_metric(&j)?;
        Ok(self.curvature_from_jet(&j))
    }

    pub(crate) fn curvature_from_jet(&self, j: &TensorJet) -> CurvatureData {
        let len = self.len();
        let n = self.dim as f64;
        let (r, r2, u) = (self.radius, self.radius * self.radius, self.nodes());
        let mut out = CurvatureData {
            ric_delta: TensorGrid::zeros(len),
            scalar: vec![0.0; len],
            christoffel: [vec![0.0; len], vec![0.0; len], vec![0.0; len]],
            deturck_y: vec![0.0; len],
            deturck_y_u: vec![0.0; len],
        };
        for k in 0..len {
            let (x, s2) = (u[k], self.sin2[k]);
            let (a, a_u, a_uu) = (j.a[k], j.a_u[k], j.a_uu[k]);
            let (b, b_u, b_uu) = (j.b[k], j.b_u[k], j.b_uu[k]);
            let (q, q_u) = (j.q[k], j.q_u[k]);
            let (al, be) = (1.0 + a, 1.0 + b);

            // r^2 alpha F''/F = -1 + e, with F = r sin(theta) sqrt(beta).
            let e = -1.5 * x * b_u / be + s2 * b_uu / (2.0 * be) - s2 * b_u * b_u / (4.0 * be * be)
                + x * a_u / (2.0 * al)
                - s2 * a_u * b_u / (4.0 * al * be);
            // r^2 alpha beta (1 - F'^2)/F^2 = beta + dd.
            let dd = q + x * b_u - s2 * b_u * b_u / (4.0 * be);

            let ric_a = -0.5 * e;
            let ric_b = (b - e * be + (n - 2.0) * (b + dd) - (n - 1.0) * a) / (r2 * al);
            out.ric_delta.a[k] = ric_a;
            out.ric_delta.b[k] = ric_b;
            out.scalar[k] = (0.5 + ric_a) / al + (n - 1.0) * (0.5 + ric_b) / be;

            out.christoffel[0][k] = -s2.sqrt() * a_u / (2.0 * al);
            out.christoffel[1][k] = s2 * s2.sqrt() * (b_u / 2.0 + x * q) / al;
            out.christoffel[2][k] = -s2.sqrt() * b_u / (2.0 * be);

            let m = -a_u / (2.0 * al) + (n - 1.0) * (b_u / (2.0 * be) + x * q / be);
            let m_u = -a_uu / (2.0 * al) + a_u * a_u / (2.0 * al * al)
                + (n - 1.0) * (b_uu / (2.0 * be) - b_u * b_u / (2.0 * be * be))
                + (n - 1.0) * (q / be + x * q_u / be - x * q * b_u / (be * be));
            out.deturck_y[k] = m / (r * al);
            out.deturck_y_u[k] = m_u / (r * al) - m * a_u / (r * al * al);
        }
        out
    }

    /// Right-hand side `-2 Ric(g) + g + L_W g` of the rescaled Ricci-DeTurck
    /// flow, at the nodes.
    pub fn rdtf_rhs_grid(&self, h: &AxisymTensor) -> Result<TensorGrid> {
        let j = self.tensor_jet(h);
        self.check_metric(&j)?;
        let c = self.curvature_from_jet(&j);
        let mut out = lie_of_metric(self, &c.deturck_y, &c.deturck_y_u, &j.a, &j.a_u, &j.b, &j.b_u);
        for k in 0..self.len() {
            out.a[k] += -2.0 * c.ric_delta.a[k] + j.a[k];
            out.b[k] += -2.0 * c.ric_delta.b[k] + j.b[k];
        }
        Ok(out)
    }

    /// Galerkin projection of the rescaled Ricci-DeTurck right-hand side.
    pub fn rdtf_rhs(&self, h: &AxisymTensor) -> Result<AxisymTensor> {
        Ok(self.analyze_tensor(&self.rdtf_rhs_grid(h)?))
    }
}
