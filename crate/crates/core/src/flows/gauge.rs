//! Zonal diffeomorphisms `theta -> psi(theta)` generated by meridional vector
//! fields through the geodesic exponential, pullbacks, and gauge fixing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{AxisymTensor, AxisymVector, Background, TensorGrid, VectorGrid};
use crate::spectral::{LieProjector, ModeClass, Selector, Sign, SpectralDecomposition};

/// Upper bound on `|h|_C2` accepted by the gauge-fixing Newton iteration.
pub const GAUGE_SMALLNESS: f64 = 0.1;
const MAX_NEWTON: usize = 30;

/// The composition `phi_{X_1} o ... o phi_{X_k}` with
/// `phi_X(p) = exp_p(X(p))`. An empty chain is the identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaugeMap {
    pub generators: Vec<AxisymVector>,
}

impl GaugeMap {
    pub fn identity() -> Self {
        GaugeMap { generators: Vec::new() }
    }

    pub fn from_vector(x: AxisymVector) -> Self {
        GaugeMap { generators: vec![x] }
    }

    /// `self o other`.
    pub fn compose(&self, other: &GaugeMap) -> GaugeMap {
        let mut generators = self.generators.clone();
        generators.extend(other.generators.iter().cloned());
        GaugeMap { generators }
    }

    /// `(psi(theta), psi'(theta))`.
    pub fn eval(&self, bg: &Background, theta: f64) -> (f64, f64) {
        let r = bg.radius();
        let (mut t, mut d) = (theta, 1.0);
        for x in self.generators.iter().rev() {
            let (s, u) = t.sin_cos();
            let (y, y_u) = bg.vector_at(x, u);
            d *= 1.0 + (u * y - s * s * y_u) / r;
            t += s * y / r;
        }
        (t, d)
    }

    /// Smallest `psi'` over a fine grid; an error if the map folds.
    pub fn check_monotone(&self, bg: &Background) -> Result<f64> {
        if self.generators.is_empty() {
            return Ok(1.0);
        }
        let m = 4 * bg.len() + 1;
        let mut min_d = f64::INFINITY;
        let mut prev = 0.0;
        for i in 0..=m {
            let theta = std::f64::consts::PI * i as f64 / m as f64;
            let (p, d) = self.eval(bg, theta);
            if i > 0 && p <= prev || !d.is_finite() {
                return Err(Error::GaugeDegeneration(format!("psi is not increasing near theta = {theta:.4}")));
            }
            min_d = min_d.min(d);
            prev = p;
        }
        if min_d <= 0.0 {
            return Err(Error::GaugeDegeneration(format!("min psi' = {min_d:.3e}")));
        }
        Ok(min_d)
    }

    /// A single generator `X` with `phi_X` equal to this map, fitted at the nodes.
    pub fn generator(&self, bg: &Background) -> AxisymVector {
        if self.generators.len() == 1 {
            return self.generators[0].clone();
        }
        let r = bg.radius();
        let y = bg
            .nodes()
            .iter()
            .map(|&u| {
                let theta = u.acos();
                (self.eval(bg, theta).0 - theta) * r / theta.sin()
            })
            .collect();
        bg.analyze_vector(&VectorGrid { y })
    }
}

/// `phi^*(g_bg + h) - g_bg`, projected onto the Galerkin space.
pub fn gauge_pullback(bg: &Background, phi: &GaugeMap, h: &AxisymTensor) -> Result<AxisymTensor> {
    if phi.generators.is_empty() {
        return Ok(h.clone());
    }
    phi.check_monotone(bg)?;
    let mut g = TensorGrid::zeros(bg.len());
    for (k, &u) in bg.nodes().iter().enumerate() {
        let theta = u.acos();
        let (p, dp) = phi.eval(bg, theta);
        let (a, b) = bg.tensor_at(h, p.cos());
        let ratio = p.sin() / theta.sin();
        g.a[k] = (1.0 + a) * dp * dp - 1.0;
        g.b[k] = (1.0 + b) * ratio * ratio - 1.0;
    }
    Ok(bg.analyze_tensor(&g))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LieReduction {
    pub gauge: GaugeMap,
    pub reduced: AxisymTensor,
    pub iterations: usize,
    /// `L^2_f` norm of the remaining selected Lie projection.
    pub residual: f64,
}

/// Find `phi` with `P^{>=lambda}_Lie(phi^*(g + h) - g) = 0` by a chord
/// Newton iteration on the generator.
pub fn lie_reduction(
    bg: &Background,
    decomp: &SpectralDecomposition,
    h: &AxisymTensor,
    lambda: f64,
    tol: f64,
) -> Result<LieReduction> {
    let size = bg.c2_estimate(h);
    if size > GAUGE_SMALLNESS {
        return Err(Error::Smallness { what: "|h|_C2".into(), value: size, limit: GAUGE_SMALLNESS });
    }
    let lie = LieProjector::new(bg)?;
    let sel = Selector::of_class(ModeClass::Lie).at_least(lambda);
    let mut x = AxisymVector::zeros(bg.l_max());
    let mut residual = f64::INFINITY;
    for it in 0..=MAX_NEWTON {
        let phi = GaugeMap::from_vector(x.clone());
        let hp = if it == 0 { h.clone() } else { gauge_pullback(bg, &phi, h)? };
        let coords = decomp.modal_coords(bg, &hp);
        residual = decomp.projected_norm2(&coords, &sel).sqrt();
        if residual <= tol {
            let gauge = if it == 0 { GaugeMap::identity() } else { phi };
            return Ok(LieReduction { gauge, reduced: hp, iterations: it, residual });
        }
        if it == MAX_NEWTON {
            break;
        }
        let p = decomp.project(bg, &hp, &sel);
        let z = lie.potential(bg, &p);
        x.axpy(-1.0, &z);
    }
    Err(Error::NonConvergence(format!("Lie reduction stalled after {MAX_NEWTON} steps, residual {residual:.3e}")))
}

/// Put `g_bg + h` into the slice: remove every Lie component.
pub fn slice_projection(bg: &Background, decomp: &SpectralDecomposition, h: &AxisymTensor) -> Result<LieReduction> {
    let neutral = decomp.count(&Selector::of_class(ModeClass::Essential).with_sign(Sign::Neutral));
    if neutral > 0 {
        return Err(Error::Capability(format!(
            "{neutral} essential neutral modes; slices around moving shrinkers are not supported"
        )));
    }
    lie_reduction(bg, decomp, h, f64::NEG_INFINITY, 1e-10)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_pullback_is_exact() {
        let bg = Background::round_sphere(3, 6).unwrap();
        let mut h = AxisymTensor::zeros(6);
        h.c[2] = 1e-2;
        h.d[3] = 3e-3;
        assert_eq!(gauge_pullback(&bg, &GaugeMap::identity(), &h).unwrap(), h);
        let zero = GaugeMap::from_vector(AxisymVector::zeros(6));
        let p = gauge_pullback(&bg, &zero, &h).unwrap();
        assert!(p.to_flat().iter().zip(h.to_flat()).all(|(a, b)| (a - b).abs() < 1e-14));
    }

    #[test]
    fn folding_map_is_rejected() {
        let bg = Background::round_sphere(3, 6).unwrap();
        let mut x = AxisymVector::zeros(6);
        x.e[3] = 5.0;
        assert!(matches!(
            gauge_pullback(&bg, &GaugeMap::from_vector(x), &AxisymTensor::zeros(6)),
            Err(Error::GaugeDegeneration(_))
        ));
    }
}
