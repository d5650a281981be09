use serde::{Deserialize, Serialize};

use super::Background;

/// Symmetric 2-tensor `h = a r^2 dtheta^2 + b r^2 sin^2(theta) g_S`, stored by
/// Galerkin coefficients:
///
/// `h = sum_l c[l] p_l g + sum_{l>=2} d[l] Hess p_l`.
///
/// `a` and `b` are the components in a background-orthonormal frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisymTensor {
    pub c: Vec<f64>,
    pub d: Vec<f64>,
}

/// Meridional vector field `X = x e_theta` with `x = sin(theta) y(cos theta)`,
/// stored as `X = sum_{l>=1} e[l] grad p_l`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisymVector {
    pub e: Vec<f64>,
}

/// Zonal function `sum_l coeffs[l] p_l`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarField {
    pub coeffs: Vec<f64>,
}

/// Frame components of a tensor at the quadrature nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorGrid {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

/// A meridional vector at the nodes, as `y = x / sin(theta)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorGrid {
    pub y: Vec<f64>,
}

/// Tensor components with `u`-derivatives. `q = (a - b)/(1 - u^2)` is smooth
/// up to the poles and carries the trace-free part.
#[derive(Debug, Clone)]
pub struct TensorJet {
    pub a: Vec<f64>,
    pub a_u: Vec<f64>,
    pub a_uu: Vec<f64>,
    pub b: Vec<f64>,
    pub b_u: Vec<f64>,
    pub b_uu: Vec<f64>,
    pub q: Vec<f64>,
    pub q_u: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct VectorJet {
    pub y: Vec<f64>,
    pub y_u: Vec<f64>,
    pub y_uu: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ScalarJet {
    pub v: Vec<f64>,
    pub v_u: Vec<f64>,
    pub v_uu: Vec<f64>,
}

impl AxisymTensor {
    pub fn zeros(l_max: usize) -> Self {
        AxisymTensor { c: vec![0.0; l_max + 1], d: vec![0.0; l_max + 1] }
    }

    pub fn l_max(&self) -> usize {
        self.c.len() - 1
    }

    /// Multiple of the background metric.
    pub fn conformal(l_max: usize, s: f64) -> Self {
        let mut h = Self::zeros(l_max);
        h.c[0] = s;
        h
    }

    /// Coordinates ordered `c0, c1, c2, d2, c3, d3, ...`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = vec![self.c[0], self.c[1]];
        for l in 2..self.c.len() {
            v.push(self.c[l]);
            v.push(self.d[l]);
        }
        v
    }

    pub fn from_flat(v: &[f64]) -> Self {
        let l_max = v.len() / 2;
        let mut h = Self::zeros(l_max);
        h.c[0] = v[0];
        h.c[1] = v[1];
        for l in 2..=l_max {
            h.c[l] = v[2 * l - 2];
            h.d[l] = v[2 * l - 1];
        }
        h
    }

    /// Coefficients of degree `l` (length 1 for `l < 2`).
    pub fn block(&self, l: usize) -> Vec<f64> {
        if l < 2 {
            vec![self.c[l]]
        } else {
            vec![self.c[l], self.d[l]]
        }
    }

    pub fn set_block(&mut self, l: usize, v: &[f64]) {
        self.c[l] = v[0];
        if l >= 2 {
            self.d[l] = v[1];
        }
    }

    pub fn axpy(&mut self, s: f64, other: &AxisymTensor) {
        for (x, y) in self.c.iter_mut().zip(&other.c) {
            *x += s * y;
        }
        for (x, y) in self.d.iter_mut().zip(&other.d) {
            *x += s * y;
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        AxisymTensor {
            c: self.c.iter().map(|x| s * x).collect(),
            d: self.d.iter().map(|x| s * x).collect(),
        }
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.c.iter().chain(&self.d).fold(0.0, |m, x| m.max(x.abs()))
    }
}

impl AxisymVector {
    pub fn zeros(l_max: usize) -> Self {
        AxisymVector { e: vec![0.0; l_max + 1] }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.e[1..].to_vec()
    }

    pub fn from_flat(v: &[f64]) -> Self {
        let mut e = vec![0.0];
        e.extend_from_slice(v);
        AxisymVector { e }
    }

    pub fn axpy(&mut self, s: f64, other: &AxisymVector) {
        for (x, y) in self.e.iter_mut().zip(&other.e) {
            *x += s * y;
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        AxisymVector { e: self.e.iter().map(|x| s * x).collect() }
    }
}

impl ScalarField {
    pub fn zeros(l_max: usize) -> Self {
        ScalarField { coeffs: vec![0.0; l_max + 1] }
    }
}

impl TensorGrid {
    pub fn zeros(len: usize) -> Self {
        TensorGrid { a: vec![0.0; len], b: vec![0.0; len] }
    }

    pub fn axpy(&mut self, s: f64, other: &TensorGrid) {
        for (x, y) in self.a.iter_mut().zip(&other.a) {
            *x += s * y;
        }
        for (x, y) in self.b.iter_mut().zip(&other.b) {
            *x += s * y;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.a.iter().chain(&self.b).fold(0.0, |m, x| m.max(x.abs()))
    }
}

impl VectorGrid {
    pub fn axpy(&mut self, s: f64, other: &VectorGrid) {
        for (x, y) in self.y.iter_mut().zip(&other.y) {
            *x += s * y;
        }
    }
}

impl Background {
    /// Frame components of the degree-`l` tensor basis elements.
    pub fn tensor_basis_grid(&self, l: usize) -> Vec<TensorGrid> {
        let mut out = vec![TensorGrid { a: self.table.get(l, 0).to_vec(), b: self.table.get(l, 0).to_vec() }];
        if l >= 2 {
            let r2 = self.radius * self.radius;
            let (p1, p2) = (self.table.get(l, 1), self.table.get(l, 2));
            let nodes = self.nodes();
            let a = (0..self.len()).map(|k| (self.sin2[k] * p2[k] - nodes[k] * p1[k]) / r2).collect();
            let b = (0..self.len()).map(|k| -nodes[k] * p1[k] / r2).collect();
            out.push(TensorGrid { a, b });
        }
        out
    }

    /// `y` of `grad p_l`.
    pub fn vector_basis_grid(&self, l: usize) -> VectorGrid {
        let p1 = self.table.get(l, 1);
        VectorGrid { y: p1.iter().map(|p| -p / self.radius).collect() }
    }

    pub fn tensor_jet(&self, h: &AxisymTensor) -> TensorJet {
        let len = self.len();
        let r2 = self.radius * self.radius;
        let u = self.nodes();
        let mut j = TensorJet {
            a: vec![0.0; len],
            a_u: vec![0.0; len],
            a_uu: vec![0.0; len],
            b: vec![0.0; len],
            b_u: vec![0.0; len],
            b_uu: vec![0.0; len],
            q: vec![0.0; len],
            q_u: vec![0.0; len],
        };
        for l in 0..=self.l_max.min(h.l_max()) {
            let c = h.c[l];
            let d = if l >= 2 { h.d[l] / r2 } else { 0.0 };
            if c == 0.0 && d == 0.0 {
                continue;
            }
            let t = &self.table;
            let (p0, p1, p2, p3, p4) = (t.get(l, 0), t.get(l, 1), t.get(l, 2), t.get(l, 3), t.get(l, 4));
            for k in 0..len {
                let (s2, x) = (self.sin2[k], u[k]);
                j.a[k] += c * p0[k] + d * (s2 * p2[k] - x * p1[k]);
                j.a_u[k] += c * p1[k] + d * (s2 * p3[k] - 3.0 * x * p2[k] - p1[k]);
                j.a_uu[k] += c * p2[k] + d * (s2 * p4[k] - 5.0 * x * p3[k] - 4.0 * p2[k]);
                j.b[k] += c * p0[k] - d * x * p1[k];
                j.b_u[k] += c * p1[k] - d * (p1[k] + x * p2[k]);
                j.b_uu[k] += c * p2[k] - d * (2.0 * p2[k] + x * p3[k]);
                j.q[k] += d * p2[k];
                j.q_u[k] += d * p3[k];
            }
        }
        j
    }

    pub fn synthesize_tensor(&self, h: &AxisymTensor) -> TensorGrid {
        let j = self.tensor_jet(h);
        TensorGrid { a: j.a, b: j.b }
    }

    pub fn vector_jet(&self, x: &AxisymVector) -> VectorJet {
        let len = self.len();
        let mut j = VectorJet { y: vec![0.0; len], y_u: vec![0.0; len], y_uu: vec![0.0; len] };
        for l in 1..=self.l_max.min(x.e.len() - 1) {
            let e = -x.e[l] / self.radius;
            if e == 0.0 {
                continue;
            }
            let t = &self.table;
            for k in 0..len {
                j.y[k] += e * t.get(l, 1)[k];
                j.y_u[k] += e * t.get(l, 2)[k];
                j.y_uu[k] += e * t.get(l, 3)[k];
            }
        }
        j
    }

    pub fn synthesize_vector(&self, x: &AxisymVector) -> VectorGrid {
        VectorGrid { y: self.vector_jet(x).y }
    }

    pub fn scalar_jet(&self, v: &ScalarField) -> ScalarJet {
        let len = self.len();
        let mut j = ScalarJet { v: vec![0.0; len], v_u: vec![0.0; len], v_uu: vec![0.0; len] };
        for (l, &c) in v.coeffs.iter().enumerate().take(self.l_max + 1) {
            if c == 0.0 {
                continue;
            }
            for k in 0..len {
                j.v[k] += c * self.table.get(l, 0)[k];
                j.v_u[k] += c * self.table.get(l, 1)[k];
                j.v_uu[k] += c * self.table.get(l, 2)[k];
            }
        }
        j
    }

    /// Orthogonal projection of nodal tensor values onto the Galerkin space.
    pub fn analyze_tensor(&self, g: &TensorGrid) -> AxisymTensor {
        let n1 = (self.dim - 1) as f64;
        let w = self.weights();
        let mut h = AxisymTensor::zeros(self.l_max);
        for l in 0..=self.l_max {
            let els = self.tensor_basis_grid(l);
            let rhs: Vec<f64> = els
                .iter()
                .map(|e| (0..self.len()).map(|k| w[k] * (g.a[k] * e.a[k] + n1 * g.b[k] * e.b[k])).sum())
                .collect();
            let sol = self.tensor_chol[l].solve(&nalgebra::DVector::from_vec(rhs));
            h.set_block(l, sol.as_slice());
        }
        h
    }

    pub fn analyze_vector(&self, g: &VectorGrid) -> AxisymVector {
        let w = self.weights();
        let mut x = AxisymVector::zeros(self.l_max);
        for l in 1..=self.l_max {
            let e = self.vector_basis_grid(l);
            let ip: f64 = (0..self.len()).map(|k| w[k] * self.sin2[k] * g.y[k] * e.y[k]).sum();
            x.e[l] = ip / self.vector_gram[l];
        }
        x
    }

    pub fn analyze_scalar(&self, v: &[f64]) -> ScalarField {
        let w = self.weights();
        ScalarField {
            coeffs: (0..=self.l_max)
                .map(|l| (0..self.len()).map(|k| w[k] * v[k] * self.table.get(l, 0)[k]).sum())
                .collect(),
        }
    }

    /// Frame components `(a, b)` of `h` at an arbitrary `u`.
    pub fn tensor_at(&self, h: &AxisymTensor, u: f64) -> (f64, f64) {
        let all = super::basis::eval_all(&self.beta, self.l_max, u);
        let r2 = self.radius * self.radius;
        let (mut a, mut b) = (0.0, 0.0);
        for l in 0..=self.l_max.min(h.l_max()) {
            let p = &all[l];
            a += h.c[l] * p[0];
            b += h.c[l] * p[0];
            if l >= 2 {
                a += h.d[l] * ((1.0 - u * u) * p[2] - u * p[1]) / r2;
                b -= h.d[l] * u * p[1] / r2;
            }
        }
        (a, b)
    }

    /// `(y, y_u)` of `X` at an arbitrary `u`.
    pub fn vector_at(&self, x: &AxisymVector, u: f64) -> (f64, f64) {
        let all = super::basis::eval_all(&self.beta, self.l_max, u);
        let (mut y, mut y_u) = (0.0, 0.0);
        for l in 1..=self.l_max.min(x.e.len() - 1) {
            y -= x.e[l] * all[l][1] / self.radius;
            y_u -= x.e[l] * all[l][2] / self.radius;
        }
        (y, y_u)
    }

    /// `L^2_f` inner product of tensors given at the nodes.
    pub fn inner_tensor_grid(&self, g1: &TensorGrid, g2: &TensorGrid) -> f64 {
        let n1 = (self.dim - 1) as f64;
        (0..self.len())
            .map(|k| self.weights_f[k] * (g1.a[k] * g2.a[k] + n1 * g1.b[k] * g2.b[k]))
            .sum()
    }

    pub fn inner_tensor(&self, h1: &AxisymTensor, h2: &AxisymTensor) -> f64 {
        self.inner_tensor_grid(&self.synthesize_tensor(h1), &self.synthesize_tensor(h2))
    }

    pub fn norm_tensor(&self, h: &AxisymTensor) -> f64 {
        self.inner_tensor(h, h).max(0.0).sqrt()
    }

    pub fn inner_vector_grid(&self, g1: &VectorGrid, g2: &VectorGrid) -> f64 {
        (0..self.len()).map(|k| self.weights_f[k] * self.sin2[k] * g1.y[k] * g2.y[k]).sum()
    }

    pub fn inner_scalar_grid(&self, v1: &[f64], v2: &[f64]) -> f64 {
        (0..self.len()).map(|k| self.weights_f[k] * v1[k] * v2[k]).sum()
    }

    /// Sup of the frame components and their first two arclength derivatives,
    /// sampled at the nodes: an estimate of the `C^2` norm.
    pub fn c2_estimate(&self, h: &AxisymTensor) -> f64 {
        let j = self.tensor_jet(h);
        let (r, u) = (self.radius, self.nodes());
        let mut m: f64 = 0.0;
        for k in 0..self.len() {
            let s2 = self.sin2[k];
            let s = s2.sqrt();
            for (f, fu, fuu) in [(j.a[k], j.a_u[k], j.a_uu[k]), (j.b[k], j.b_u[k], j.b_uu[k])] {
                let d1 = s * fu / r;
                let d2 = (s2 * fuu - u[k] * fu) / (r * r);
                m = m.max(f.abs()).max(d1.abs()).max(d2.abs());
            }
        }
        m
    }

    /// Sup of the frame components at the nodes.
    pub fn c0_estimate(&self, h: &AxisymTensor) -> f64 {
        self.synthesize_tensor(h).max_abs()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(l_max: usize, seed: u64) -> AxisymTensor {
        let mut h = AxisymTensor::zeros(l_max);
        let mut s = seed;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        for l in 0..=l_max {
            h.c[l] = next();
            if l >= 2 {
                h.d[l] = next();
            }
        }
        h
    }

    #[test]
    fn analysis_inverts_synthesis() {
        for dim in 2..=5 {
            let bg = Background::round_sphere(dim, 9).unwrap();
            let h = sample(9, dim as u64);
            let back = bg.analyze_tensor(&bg.synthesize_tensor(&h));
            for l in 0..=9 {
                assert!((back.c[l] - h.c[l]).abs() < 1e-11);
                assert!((back.d[l] - h.d[l]).abs() < 1e-11);
            }
            let x = AxisymVector { e: h.c.clone() };
            let xb = bg.analyze_vector(&bg.synthesize_vector(&x));
            for l in 1..=9 {
                assert!((xb.e[l] - x.e[l]).abs() < 1e-11);
            }
        }
    }

    #[test]
    fn point_evaluation_matches_grid() {
        let bg = Background::round_sphere(3, 8).unwrap();
        let h = sample(8, 11);
        let g = bg.synthesize_tensor(&h);
        for (k, &u) in bg.nodes().iter().enumerate() {
            let (a, b) = bg.tensor_at(&h, u);
            assert!((a - g.a[k]).abs() < 1e-12 && (b - g.b[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn flat_round_trip() {
        let h = sample(6, 3);
        let mut h0 = h.clone();
        h0.d[0] = 0.0;
        h0.d[1] = 0.0;
        assert_eq!(AxisymTensor::from_flat(&h.to_flat()), h0);
    }

    #[test]
    fn jet_derivatives_are_consistent() {
        // q really is (a - b)/(1 - u^2), and the u-derivatives agree with
        // differences of point evaluations.
        let bg = Background::round_sphere(4, 7).unwrap();
        let h = sample(7, 5);
        let j = bg.tensor_jet(&h);
        for k in 0..bg.len() {
            let u = bg.nodes()[k];
            assert!((j.q[k] * (1.0 - u * u) - (j.a[k] - j.b[k])).abs() < 1e-11);
            let e = 1e-5;
            let (ap, bp) = bg.tensor_at(&h, u + e);
            let (am, bm) = bg.tensor_at(&h, u - e);
            assert!(((ap - am) / (2.0 * e) - j.a_u[k]).abs() < 1e-5 * (1.0 + j.a_u[k].abs()));
            assert!(((bp - bm) / (2.0 * e) - j.b_u[k]).abs() < 1e-5 * (1.0 + j.b_u[k].abs()));
            let (a0, b0) = bg.tensor_at(&h, u);
            assert!(((ap - 2.0 * a0 + am) / (e * e) - j.a_uu[k]).abs() < 1e-3 * (1.0 + j.a_uu[k].abs()));
            assert!(((bp - 2.0 * b0 + bm) / (e * e) - j.b_uu[k]).abs() < 1e-3 * (1.0 + j.b_uu[k].abs()));
        }
    }
}
