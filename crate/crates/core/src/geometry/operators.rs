//! Linear differential operators of the background, acting on zonal fields
//! and returning nodal values.

use super::{AxisymTensor, AxisymVector, Background, ScalarField, TensorGrid, VectorGrid};

impl Background {
    /// `tr h = a + (n-1) b`.
    pub fn trace_grid(&self, g: &TensorGrid) -> Vec<f64> {
        let n1 = (self.dim - 1) as f64;
        g.a.iter().zip(&g.b).map(|(a, b)| a + n1 * b).collect()
    }

    /// `L_X g` for the background metric.
    pub fn lie_derivative_bg(&self, x: &AxisymVector) -> TensorGrid {
        let j = self.vector_jet(x);
        let (u, r) = (self.nodes(), self.radius);
        let mut out = TensorGrid::zeros(self.len());
        for k in 0..self.len() {
            let uy = u[k] * j.y[k];
            out.a[k] = 2.0 * (uy - self.sin2[k] * j.y_u[k]) / r;
            out.b[k] = 2.0 * uy / r;
        }
        out
    }

    /// `L_X (g + h)`.
    pub fn lie_derivative(&self, x: &AxisymVector, h: &AxisymTensor) -> TensorGrid {
        let xj = self.vector_jet(x);
        let hj = self.tensor_jet(h);
        lie_of_metric(self, &xj.y, &xj.y_u, &hj.a, &hj.a_u, &hj.b, &hj.b_u)
    }

    /// `div* X = -L_X g / 2`, the `L^2_f` adjoint of `div_f`.
    pub fn div_star(&self, x: &AxisymVector) -> TensorGrid {
        let mut g = self.lie_derivative_bg(x);
        g.a.iter_mut().chain(g.b.iter_mut()).for_each(|v| *v *= -0.5);
        g
    }

    /// `div_f h = div h - h(grad f)`.
    pub fn divergence_f(&self, h: &AxisymTensor) -> VectorGrid {
        let j = self.tensor_jet(h);
        let n1 = (self.dim - 1) as f64;
        let (u, r, fu) = (self.nodes(), self.radius, self.f_u());
        VectorGrid {
            y: (0..self.len())
                .map(|k| (-j.a_u[k] + n1 * u[k] * j.q[k] + j.a[k] * fu[k]) / r)
                .collect(),
        }
    }

    /// Bianchi operator `div h - grad(tr h)/2`, with no weight.
    pub fn divergence_0(&self, h: &AxisymTensor) -> VectorGrid {
        let j = self.tensor_jet(h);
        let n1 = (self.dim - 1) as f64;
        let (u, r) = (self.nodes(), self.radius);
        VectorGrid {
            y: (0..self.len())
                .map(|k| (-0.5 * j.a_u[k] + 0.5 * n1 * j.b_u[k] + n1 * u[k] * j.q[k]) / r)
                .collect(),
        }
    }

    /// Weighted rough Laplacian `Delta h - nabla_{grad f} h`.
    pub fn rough_laplacian_f(&self, h: &AxisymTensor) -> TensorGrid {
        let j = self.tensor_jet(h);
        let n = self.dim as f64;
        let (u, r2, fu) = (self.nodes(), self.radius * self.radius, self.f_u());
        let mut out = TensorGrid::zeros(self.len());
        for k in 0..self.len() {
            let s2 = self.sin2[k];
            let lap = |v_u: f64, v_uu: f64| (s2 * v_uu - n * u[k] * v_u - s2 * fu[k] * v_u) / r2;
            // The frame rotates along the meridian; its curvature couples the
            // trace-free part a - b = (1 - u^2) q.
            let kc = u[k] * u[k] * j.q[k] / r2;
            out.a[k] = lap(j.a_u[k], j.a_uu[k]) - 2.0 * (n - 1.0) * kc;
            out.b[k] = lap(j.b_u[k], j.b_uu[k]) + 2.0 * kc;
        }
        out
    }

    /// Curvature action `(Rm * h)_ij = R_ipjq h^pq = K (tr h g - h)`.
    pub fn rm_action_grid(&self, g: &TensorGrid) -> TensorGrid {
        let kk = self.rm_sign() * self.sectional_curvature();
        let tr = self.trace_grid(g);
        TensorGrid {
            a: g.a.iter().zip(&tr).map(|(a, t)| kk * (t - a)).collect(),
            b: g.b.iter().zip(&tr).map(|(b, t)| kk * (t - b)).collect(),
        }
    }

    pub fn rm_action(&self, h: &AxisymTensor) -> TensorGrid {
        self.rm_action_grid(&self.synthesize_tensor(h))
    }

    /// Stability operator `L h = Delta_f h + 2 Rm * h`.
    pub fn stability_operator(&self, h: &AxisymTensor) -> TensorGrid {
        let mut out = self.rough_laplacian_f(h);
        out.axpy(2.0, &self.rm_action(h));
        out
    }

    /// `Delta_f v`.
    pub fn scalar_laplacian_f(&self, v: &ScalarField) -> Vec<f64> {
        let j = self.scalar_jet(v);
        let n = self.dim as f64;
        let (u, r2, fu) = (self.nodes(), self.radius * self.radius, self.f_u());
        (0..self.len())
            .map(|k| {
                let s2 = self.sin2[k];
                (s2 * j.v_uu[k] - n * u[k] * j.v_u[k] - s2 * fu[k] * j.v_u[k]) / r2
            })
            .collect()
    }

    /// `grad v`.
    pub fn gradient(&self, v: &ScalarField) -> VectorGrid {
        let j = self.scalar_jet(v);
        VectorGrid { y: j.v_u.iter().map(|d| -d / self.radius).collect() }
    }

    /// `Hess v`.
    pub fn hessian(&self, v: &ScalarField) -> TensorGrid {
        let j = self.scalar_jet(v);
        let (u, r2) = (self.nodes(), self.radius * self.radius);
        TensorGrid {
            a: (0..self.len()).map(|k| (self.sin2[k] * j.v_uu[k] - u[k] * j.v_u[k]) / r2).collect(),
            b: (0..self.len()).map(|k| -u[k] * j.v_u[k] / r2).collect(),
        }
    }

    /// Unweighted `div X`.
    pub fn divergence_vector(&self, x: &AxisymVector) -> Vec<f64> {
        let j = self.vector_jet(x);
        let n = self.dim as f64;
        let (u, r) = (self.nodes(), self.radius);
        (0..self.len()).map(|k| (n * u[k] * j.y[k] - self.sin2[k] * j.y_u[k]) / r).collect()
    }

    /// `div_f X = div X - <X, grad f>`.
    pub fn divergence_vector_f(&self, x: &AxisymVector) -> Vec<f64> {
        let j = self.vector_jet(x);
        let n = self.dim as f64;
        let (u, r, fu) = (self.nodes(), self.radius, self.f_u());
        (0..self.len())
            .map(|k| (n * u[k] * j.y[k] - self.sin2[k] * j.y_u[k] + self.sin2[k] * j.y[k] * fu[k]) / r)
            .collect()
    }

    /// Weighted rough Laplacian on vectors, `Delta X - nabla_{grad f} X`.
    pub fn vector_laplacian_f(&self, x: &AxisymVector) -> VectorGrid {
        let j = self.vector_jet(x);
        let n = self.dim as f64;
        let (u, r, fu) = (self.nodes(), self.radius, self.f_u());
        let y = (0..self.len())
            .map(|k| {
                let (s2, uk) = (self.sin2[k], u[k]);
                // Meridional fields are gradients, so Delta X = grad div X + Ric X.
                let ddiv = (n * j.y[k] + (n + 2.0) * uk * j.y_u[k] - s2 * j.y_uu[k]) / r;
                let weight = fu[k] * (uk * j.y[k] - s2 * j.y_u[k]) / (r * r);
                -ddiv / r + 0.5 * j.y[k] + weight
            })
            .collect();
        VectorGrid { y }
    }

    /// Gauge operator `Delta_f X + X/2`.
    pub fn vector_operator(&self, x: &AxisymVector) -> VectorGrid {
        let mut v = self.vector_laplacian_f(x);
        let y = self.synthesize_vector(x);
        v.axpy(0.5, &y);
        v
    }
}

/// `L_X (g + h)` from nodal data of `X = sin(theta) y e_theta` and of `h`.
pub(crate) fn lie_of_metric(
    bg: &Background,
    y: &[f64],
    y_u: &[f64],
    a: &[f64],
    a_u: &[f64],
    b: &[f64],
    b_u: &[f64],
) -> TensorGrid {
    let (u, r, s2) = (bg.nodes(), bg.radius(), bg.sin2());
    let mut out = TensorGrid::zeros(bg.len());
    for k in 0..bg.len() {
        let (alpha, beta) = (1.0 + a[k], 1.0 + b[k]);
        out.a[k] = (-s2[k] * y[k] * a_u[k] + 2.0 * alpha * (u[k] * y[k] - s2[k] * y_u[k])) / r;
        out.b[k] = (-s2[k] * y[k] * b_u[k] + 2.0 * beta * u[k] * y[k]) / r;
    }
    out
}
