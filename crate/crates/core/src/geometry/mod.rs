//! The round shrinking sphere and SO(n)-invariant fields on it.
//!
//! Everything is zonal: a field depends only on the polar angle `theta`, and
//! is stored either as Galerkin coefficients over the zonal harmonics or as
//! physical frame components at the Gauss nodes in `u = cos(theta)`.

pub mod basis;
mod curvature;
mod fields;
mod operators;
pub mod quadrature;

pub use curvature::CurvatureData;
pub use fields::{
    AxisymTensor, AxisymVector, ScalarField, ScalarJet, TensorGrid, TensorJet, VectorGrid,
    VectorJet,
};

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{Error, Result};
use basis::{recurrence_coeffs, BasisTable};
use quadrature::Quadrature;

/// Smallest node count that integrates cubic nonlinearities of degree-`l_max`
/// fields exactly.
pub fn min_nodes(l_max: usize) -> usize {
    (3 * l_max + 2) / 2
}

/// The round sphere `S^n` of radius `sqrt(2(n-1))` with constant potential,
/// i.e. the compact shrinker with `Ric = g/2`, together with its
/// discretisation.
#[derive(Debug, Clone)]
pub struct Background {
    dim: usize,
    l_max: usize,
    radius: f64,
    f_const: f64,
    quad: Quadrature,
    beta: Vec<f64>,
    table: BasisTable,
    /// `1 - u^2` at the nodes.
    sin2: Vec<f64>,
    /// Potential and its `u`-derivative at the nodes.
    f: Vec<f64>,
    f_u: Vec<f64>,
    /// Quadrature weights times `e^{-(f - f_const)}`.
    weights_f: Vec<f64>,
    /// Per-degree Gram matrices of the tensor and vector bases.
    tensor_gram: Vec<DMatrix<f64>>,
    tensor_chol: Vec<Cholesky<f64, Dyn>>,
    vector_gram: Vec<f64>,
    rm_sign: f64,
}

impl Background {
    /// Round sphere of dimension `dim` truncated at zonal degree `l_max`.
    pub fn round_sphere(dim: usize, l_max: usize) -> Result<Self> {
        Self::with_nodes(dim, l_max, min_nodes(l_max) + 2)
    }

    pub fn with_nodes(dim: usize, l_max: usize, nodes: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidParameter(format!("dimension must be >= 2, got {dim}")));
        }
        if l_max < 2 {
            return Err(Error::InvalidParameter(format!("l_max must be >= 2, got {l_max}")));
        }
        if nodes < min_nodes(l_max) {
            return Err(Error::InvalidParameter(format!(
                "{nodes} quadrature nodes cannot resolve degree {l_max}; need at least {}",
                min_nodes(l_max)
            )));
        }
        let n = dim as f64;
        let radius = (2.0 * (n - 1.0)).sqrt();
        let f_const = sphere_volume(dim, radius).ln() - 0.5 * n * (4.0 * std::f64::consts::PI).ln();
        let quad = Quadrature::gegenbauer(dim, nodes);
        let beta = recurrence_coeffs(dim, l_max.max(nodes) + 1);
        let table = BasisTable::new(&beta, l_max, &quad.nodes);
        let sin2 = quad.nodes.iter().map(|u| 1.0 - u * u).collect();
        let mut bg = Background {
            dim,
            l_max,
            radius,
            f_const,
            f: vec![f_const; nodes],
            f_u: vec![0.0; nodes],
            weights_f: quad.weights.clone(),
            quad,
            beta,
            table,
            sin2,
            tensor_gram: Vec::new(),
            tensor_chol: Vec::new(),
            vector_gram: Vec::new(),
            rm_sign: 1.0,
        };
        bg.build_grams()?;
        Ok(bg)
    }

    /// Replace the potential by `f_const + sum_l coeffs[l] p_l`.
    ///
    /// Only the weighted operators and inner products see the new potential;
    /// this exists to exercise them away from the shrinker.
    pub fn with_potential(mut self, coeffs: &[f64]) -> Self {
        let len = self.len();
        for k in 0..len {
            let (mut v, mut du) = (self.f_const, 0.0);
            for (l, c) in coeffs.iter().enumerate().take(self.l_max + 1) {
                v += c * self.table.get(l, 0)[k];
                du += c * self.table.get(l, 1)[k];
            }
            self.f[k] = v;
            self.f_u[k] = du;
            self.weights_f[k] = self.quad.weights[k] * (-(v - self.f_const)).exp();
        }
        self
    }

    /// Flip the sign of the curvature action. Exists so that the check
    /// reports can be shown to catch a broken convention.
    #[doc(hidden)]
    pub fn with_flipped_curvature_sign(mut self) -> Self {
        self.rm_sign = -self.rm_sign;
        self
    }

    pub fn is_shrinker(&self) -> bool {
        self.f.iter().all(|&v| v == self.f_const)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn l_max(&self) -> usize {
        self.l_max
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Sectional curvature `1/(2(n-1))`.
    pub fn sectional_curvature(&self) -> f64 {
        1.0 / (self.radius * self.radius)
    }

    pub fn f_const(&self) -> f64 {
        self.f_const
    }

    pub fn nodes(&self) -> &[f64] {
        &self.quad.nodes
    }

    /// Probability weights of the unweighted measure.
    pub fn weights(&self) -> &[f64] {
        &self.quad.weights
    }

    /// Weights of `(4 pi)^{-n/2} e^{-f} dvol`.
    pub fn weights_f(&self) -> &[f64] {
        &self.weights_f
    }

    pub fn len(&self) -> usize {
        self.quad.len()
    }

    pub fn is_empty(&self) -> bool {
        self.quad.is_empty()
    }

    pub(crate) fn sin2(&self) -> &[f64] {
        &self.sin2
    }

    pub(crate) fn f_u(&self) -> &[f64] {
        &self.f_u
    }

    pub(crate) fn rm_sign(&self) -> f64 {
        self.rm_sign
    }

    /// Eigenvalue of `-Laplacian` on degree-`l` zonal functions.
    pub fn laplace_eigenvalue(&self, l: usize) -> f64 {
        basis::laplace_eigenvalue(self.dim, l)
    }

    /// Number of tensor basis elements in degree `l`: `phi g` for all `l`,
    /// plus `Hess phi` once it is independent of `phi g` (from `l = 2`).
    pub fn tensor_block_dim(l: usize) -> usize {
        if l < 2 {
            1
        } else {
            2
        }
    }

    pub fn tensor_dim(&self) -> usize {
        (0..=self.l_max).map(Self::tensor_block_dim).sum()
    }

    /// Offset of degree `l` in the flattened tensor coordinates.
    pub fn tensor_offset(l: usize) -> usize {
        if l < 2 {
            l
        } else {
            2 * l - 2
        }
    }

    /// Vector coordinates are `e_1, ..., e_lmax`.
    pub fn vector_dim(&self) -> usize {
        self.l_max
    }

    pub fn tensor_gram(&self, l: usize) -> &DMatrix<f64> {
        &self.tensor_gram[l]
    }

    pub fn vector_gram(&self, l: usize) -> f64 {
        self.vector_gram[l]
    }

    fn build_grams(&mut self) -> Result<()> {
        let n1 = (self.dim - 1) as f64;
        let w = &self.quad.weights;
        for l in 0..=self.l_max {
            let els = self.tensor_basis_grid(l);
            let m = els.len();
            let mut g = DMatrix::zeros(m, m);
            for i in 0..m {
                for j in 0..m {
                    g[(i, j)] = (0..self.len())
                        .map(|k| w[k] * (els[i].a[k] * els[j].a[k] + n1 * els[i].b[k] * els[j].b[k]))
                        .sum();
                }
            }
            let chol = Cholesky::new(g.clone()).ok_or_else(|| {
                Error::Numerical(format!("tensor Gram matrix of degree {l} is not positive"))
            })?;
            self.tensor_gram.push(g);
            self.tensor_chol.push(chol);

            let vg = if l == 0 {
                0.0
            } else {
                let y = self.vector_basis_grid(l);
                (0..self.len()).map(|k| w[k] * self.sin2[k] * y.y[k] * y.y[k]).sum()
            };
            self.vector_gram.push(vg);
        }
        Ok(())
    }
}

/// Volume of the round `S^n` of the given radius.
pub fn sphere_volume(dim: usize, radius: f64) -> f64 {
    // |S^n| = 2 pi^{(n+1)/2} / Gamma((n+1)/2)
    let pi = std::f64::consts::PI;
    let half = |m: usize| -> f64 {
        // Gamma(m/2) for positive integer m
        if m % 2 == 0 {
            (1..m / 2).map(|k| k as f64).product()
        } else {
            let k = (m - 1) / 2;
            let mut g = pi.sqrt();
            for j in 0..k {
                g *= j as f64 + 0.5;
            }
            g
        }
    };
    2.0 * pi.powf((dim as f64 + 1.0) / 2.0) / half(dim + 1) * radius.powi(dim as i32)
}
