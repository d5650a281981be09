//! Perelman's `W`-functional and `mu`-entropy of zonal metrics near the
//! round shrinker, and the second variation of `mu` there.
//!
//! `mu` is minimised over `v = sqrt((4 pi tau)^{-n/2} e^{-f} dvol_g / dmu_bg)`,
//! which turns the normalisation into the quadratic constraint
//! `int v^2 J dmu_bg = 1` (`J` the volume ratio) and the functional into
//! `int [4 tau |dv|^2 + tau R v^2 - v^2 log v^2 + (f_c - n/2 log tau - n) v^2] J`.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{AxisymTensor, AxisymVector, Background, ScalarField, TensorGrid};
use crate::spectral::{ModeClass, Selector, SpectralDecomposition};

/// Largest `C^2` size of `h` for which `mu` is computed.
pub const SMALLNESS_LIMIT: f64 = 0.1;
const KKT_TOL: f64 = 1e-7;
const MAX_ITER: usize = 200;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EntropyResult {
    pub mu: f64,
    pub tau: f64,
    pub minimizer_f: ScalarField,
    /// Square root of the normalised density, in the scalar basis.
    pub minimizer_v: ScalarField,
    pub iterations: usize,
    pub kkt_residual: f64,
    /// Whether any iteration fell back to a gradient step.
    pub used_fallback: bool,
}

/// `mu(g_bg, tau)` when the constant potential is the minimiser, which holds
/// for `tau > (n-1)/n`.
pub fn mu_closed_form(dim: usize, tau: f64) -> f64 {
    let n = dim as f64;
    let r = (2.0 * (n - 1.0)).sqrt();
    let f_c = crate::geometry::sphere_volume(dim, r).ln() - 0.5 * n * (4.0 * std::f64::consts::PI).ln();
    0.5 * tau * n + f_c - 0.5 * n * tau.ln() - n
}

struct MetricData {
    /// Volume ratio `dvol_g / dvol_bg` at the nodes.
    jac: Vec<f64>,
    scalar: Vec<f64>,
    /// `(1 - u^2)/(r^2 alpha)`: `|dv|^2_g = grad_coef * v_u^2`.
    grad_coef: Vec<f64>,
}

fn metric_data(bg: &Background, h: &AxisymTensor) -> Result<MetricData> {
    let curv = bg.curvature(h)?;
    let g = bg.synthesize_tensor(h);
    let n1 = (bg.dim() - 1) as f64;
    let r2 = bg.radius() * bg.radius();
    let jac = (0..bg.len()).map(|k| ((1.0 + g.a[k]) * (1.0 + g.b[k]).powf(n1)).sqrt()).collect();
    let grad_coef = (0..bg.len())
        .map(|k| (1.0 - bg.nodes()[k].powi(2)) / (r2 * (1.0 + g.a[k])))
        .collect();
    Ok(MetricData { jac, scalar: curv.scalar, grad_coef })
}

/// `W(g_bg + h, f, tau)`; `f` must satisfy the normalisation to `1e-9`.
pub fn w_functional(bg: &Background, h: &AxisymTensor, f: &ScalarField, tau: f64) -> Result<f64> {
    if tau <= 0.0 {
        return Err(Error::InvalidParameter(format!("tau must be positive, got {tau}")));
    }
    let md = metric_data(bg, h)?;
    let fj = bg.scalar_jet(f);
    let n = bg.dim() as f64;
    let w = bg.weights();
    let pre = tau.powf(-0.5 * n);
    let (mut norm, mut val) = (0.0, 0.0);
    for k in 0..bg.len() {
        let dens = pre * (bg.f_const() - fj.v[k]).exp() * md.jac[k];
        norm += w[k] * dens;
        let grad2 = md.grad_coef[k] * fj.v_u[k] * fj.v_u[k];
        val += w[k] * dens * (tau * (grad2 + md.scalar[k]) + fj.v[k] - n);
    }
    if (norm - 1.0).abs() > 1e-9 {
        return Err(Error::Normalization(format!(
            "(4 pi tau)^(-n/2) int e^(-f) dvol = {norm:.12} instead of 1"
        )));
    }
    Ok(val)
}

/// `mu(g_bg + h, 1)`.
pub fn mu_entropy(bg: &Background, h: &AxisymTensor) -> Result<EntropyResult> {
    mu_entropy_at(bg, h, 1.0, None)
}

/// `mu(g_bg + h, tau)`, optionally warm-started from a previous minimiser.
pub fn mu_entropy_at(
    bg: &Background,
    h: &AxisymTensor,
    tau: f64,
    warm: Option<&ScalarField>,
) -> Result<EntropyResult> {
    if tau <= 0.0 {
        return Err(Error::InvalidParameter(format!("tau must be positive, got {tau}")));
    }
    let size = bg.c2_estimate(h);
    if size > SMALLNESS_LIMIT {
        return Err(Error::Smallness { what: "|h|_C2".into(), value: size, limit: SMALLNESS_LIMIT });
    }
    let md = metric_data(bg, h)?;
    let n = bg.dim() as f64;
    let kk = bg.f_const() - 0.5 * n * tau.ln();
    let len = bg.len();
    let m = bg.l_max() + 1;
    let w = bg.weights();
    let basis: Vec<(Vec<f64>, Vec<f64>)> = (0..m)
        .map(|l| {
            let mut e = ScalarField::zeros(bg.l_max());
            e.coeffs[l] = 1.0;
            let j = bg.scalar_jet(&e);
            (j.v, j.v_u)
        })
        .collect();
    // Weighted mass and stiffness of the scalar basis, fixed for the metric.
    let wj: Vec<f64> = (0..len).map(|k| w[k] * md.jac[k]).collect();
    let mass = DMatrix::from_fn(m, m, |i, j| (0..len).map(|k| wj[k] * basis[i].0[k] * basis[j].0[k]).sum());
    let stiff = DMatrix::from_fn(m, m, |i, j| {
        (0..len).map(|k| wj[k] * md.grad_coef[k] * basis[i].1[k] * basis[j].1[k]).sum()
    });

    let mut beta = DVector::zeros(m);
    match warm {
        Some(v) => {
            for l in 0..m.min(v.coeffs.len()) {
                beta[l] = v.coeffs[l];
            }
        }
        None => beta[0] = 1.0,
    }
    let values = |beta: &DVector<f64>| -> Vec<f64> {
        (0..len).map(|k| (0..m).map(|l| beta[l] * basis[l].0[k]).sum()).collect()
    };
    let renormalise = |beta: &mut DVector<f64>| {
        let c = beta.dot(&(&mass * &*beta));
        *beta /= c.sqrt();
    };
    renormalise(&mut beta);

    // Gradient of W and of the constraint, and the Lagrangian Hessian.
    let evaluate = |beta: &DVector<f64>| -> Option<(f64, DVector<f64>, DVector<f64>, DMatrix<f64>)> {
        let v = values(beta);
        if v.iter().any(|x| *x <= 0.0) {
            return None;
        }
        let pot: Vec<f64> = (0..len).map(|k| tau * md.scalar[k] + kk - n - (v[k] * v[k]).ln()).collect();
        let mut wval = 4.0 * tau * beta.dot(&(&stiff * beta));
        for k in 0..len {
            wval += wj[k] * v[k] * v[k] * pot[k];
        }
        let mut grad = 8.0 * tau * (&stiff * beta);
        for l in 0..m {
            grad[l] += (0..len).map(|k| 2.0 * wj[k] * v[k] * basis[l].0[k] * (pot[k] - 1.0)).sum::<f64>();
        }
        let cgrad = 2.0 * (&mass * beta);
        let mut hess = 8.0 * tau * &stiff;
        for i in 0..m {
            for j in 0..=i {
                let s: f64 = (0..len).map(|k| wj[k] * basis[i].0[k] * basis[j].0[k] * (2.0 * (pot[k] - 1.0) - 4.0)).sum();
                hess[(i, j)] += s;
                if i != j {
                    hess[(j, i)] += s;
                }
            }
        }
        Some((wval, grad, cgrad, hess))
    };

    let kkt = |grad: &DVector<f64>, cgrad: &DVector<f64>| -> (f64, DVector<f64>) {
        let nu = grad.dot(cgrad) / cgrad.dot(cgrad);
        let r = grad - cgrad * nu;
        (nu, r)
    };

    let mut used_fallback = false;
    let mut iterations = 0;
    let (mut wval, mut grad, mut cgrad, mut hess) =
        evaluate(&beta).ok_or_else(|| Error::Numerical("initial density not positive".into()))?;
    let (mut nu, mut res) = kkt(&grad, &cgrad);
    while res.amax() > 1e-13 && iterations < MAX_ITER {
        iterations += 1;
        let cons = beta.dot(&(&mass * &beta)) - 1.0;
        // Bordered Newton system for (d beta, -d nu).
        let mut kmat = DMatrix::zeros(m + 1, m + 1);
        kmat.view_mut((0, 0), (m, m)).copy_from(&(&hess - 2.0 * nu * &mass));
        for l in 0..m {
            kmat[(l, m)] = cgrad[l];
            kmat[(m, l)] = cgrad[l];
        }
        let mut rhs = DVector::zeros(m + 1);
        rhs.rows_mut(0, m).copy_from(&(-&res));
        rhs[m] = -cons;
        let step = kmat.lu().solve(&rhs).map(|s| s.rows(0, m).into_owned());
        let merit0 = res.norm_squared() + cons * cons;
        let mut accepted = false;
        if let Some(step) = step {
            let mut t = 1.0;
            while t > 1e-6 {
                let trial = &beta + &step * t;
                if let Some((wv, g, cg, hs)) = evaluate(&trial) {
                    let (nu_t, r_t) = kkt(&g, &cg);
                    let c_t = trial.dot(&(&mass * &trial)) - 1.0;
                    if r_t.norm_squared() + c_t * c_t < merit0 * (1.0 - 1e-4 * t) || merit0 < 1e-26 {
                        beta = trial;
                        (wval, grad, cgrad, hess, nu, res) = (wv, g, cg, hs, nu_t, r_t);
                        accepted = true;
                        break;
                    }
                }
                t *= 0.5;
            }
        }
        if !accepted {
            // Damped descent along the constrained gradient, then project
            // back onto the constraint by rescaling.
            used_fallback = true;
            let mut t = 1.0 / (1.0 + hess.amax());
            loop {
                let mut trial = &beta - &res * t;
                renormalise(&mut trial);
                if let Some((wv, g, cg, hs)) = evaluate(&trial) {
                    if wv < wval || t < 1e-12 {
                        beta = trial;
                        let (nu_t, r_t) = kkt(&g, &cg);
                        (wval, grad, cgrad, hess, nu, res) = (wv, g, cg, hs, nu_t, r_t);
                        break;
                    }
                }
                t *= 0.5;
                if t < 1e-14 {
                    return Err(Error::NonConvergence(format!(
                        "entropy minimisation stalled, KKT residual {:.3e}",
                        res.amax()
                    )));
                }
            }
        }
    }
    let kkt_residual = res.amax();
    if kkt_residual > KKT_TOL {
        return Err(Error::NonConvergence(format!(
            "entropy minimisation reached {iterations} iterations with KKT residual {kkt_residual:.3e}"
        )));
    }
    let _ = grad;
    let v = values(&beta);
    let f_nodes: Vec<f64> = v.iter().map(|x| kk - (x * x).ln()).collect();
    Ok(EntropyResult {
        mu: wval,
        tau,
        minimizer_f: bg.analyze_scalar(&f_nodes),
        minimizer_v: ScalarField { coeffs: beta.iter().copied().collect() },
        iterations,
        kkt_residual,
        used_fallback,
    })
}

/// Both evaluations of the second variation of `mu(., 1)` at the shrinker.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SecondVariation {
    /// `<P_ess h, L P_ess h>/2` from the spectral decomposition.
    pub spectral: f64,
    /// `<h, N h>/2` with `N h = L h + 2 div* div_f h - 2 Hess v_h`.
    pub operator: f64,
}

/// Solve `(Delta_f + 1/2) v = -div_f div_f h / 2` in the scalar basis.
pub fn v_h_solve(bg: &Background, h: &AxisymTensor) -> Result<ScalarField> {
    let x: AxisymVector = bg.analyze_vector(&bg.divergence_f(h));
    let rhs: Vec<f64> = bg.divergence_vector_f(&x).iter().map(|v| -0.5 * v).collect();
    let m = bg.l_max() + 1;
    let basis: Vec<ScalarField> = (0..m)
        .map(|l| {
            let mut e = ScalarField::zeros(bg.l_max());
            e.coeffs[l] = 1.0;
            e
        })
        .collect();
    let vals: Vec<Vec<f64>> = basis.iter().map(|e| bg.scalar_jet(e).v).collect();
    let ops: Vec<Vec<f64>> = basis
        .iter()
        .zip(&vals)
        .map(|(e, v)| bg.scalar_laplacian_f(e).iter().zip(v).map(|(a, b)| a + 0.5 * b).collect())
        .collect();
    let a = DMatrix::from_fn(m, m, |i, j| bg.inner_scalar_grid(&vals[i], &ops[j]));
    let a = (&a + a.transpose()) * 0.5;
    let mass = DMatrix::from_fn(m, m, |i, j| bg.inner_scalar_grid(&vals[i], &vals[j]));
    let chol = Cholesky::new(mass).ok_or_else(|| Error::Numerical("scalar mass matrix singular".into()))?;
    let li = chol.l().try_inverse().ok_or_else(|| Error::Numerical("scalar mass factor singular".into()))?;
    let sym = &li * &a * li.transpose();
    let eig = SymmetricEigen::new(sym);
    let clearance = eig.eigenvalues.iter().fold(f64::INFINITY, |m, x| m.min(x.abs()));
    if clearance < 1e-6 {
        return Err(Error::Resonance(format!(
            "1/2 lies within {clearance:.2e} of a scalar eigenvalue of -Delta_f"
        )));
    }
    let b = DVector::from_fn(m, |i, _| bg.inner_scalar_grid(&vals[i], &rhs));
    let sol = a.lu().solve(&b).ok_or_else(|| Error::Numerical("v_h system singular".into()))?;
    Ok(ScalarField { coeffs: sol.iter().copied().collect() })
}

/// `N h = Delta_f h + 2 Rm*h + 2 div* div_f h - 2 Hess v_h`.
pub fn n_operator(bg: &Background, h: &AxisymTensor) -> Result<TensorGrid> {
    let mut out = bg.stability_operator(h);
    let x = bg.analyze_vector(&bg.divergence_f(h));
    out.axpy(2.0, &bg.div_star(&x));
    let v = v_h_solve(bg, h)?;
    out.axpy(-2.0, &bg.hessian(&v));
    Ok(out)
}

pub fn second_variation(
    bg: &Background,
    decomp: &SpectralDecomposition,
    h: &AxisymTensor,
) -> Result<SecondVariation> {
    let coords = decomp.modal_coords(bg, h);
    let ess = Selector::of_class(ModeClass::Essential);
    let spectral = 0.5
        * decomp
            .modes
            .iter()
            .zip(&coords)
            .filter(|(m, _)| ess.matches(m))
            .map(|(m, a)| m.eigenvalue * a * a)
            .sum::<f64>();
    let nh = n_operator(bg, h)?;
    let operator = 0.5 * bg.inner_tensor_grid(&bg.synthesize_tensor(h), &nh);
    Ok(SecondVariation { spectral, operator })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FdSecondVariation {
    /// `(s, (mu(s) - 2 mu(0) + mu(-s))/s^2)`.
    pub samples: Vec<(f64, f64)>,
    /// Richardson extrapolation in `s^2` of the two smallest steps, or the
    /// single sample.
    pub estimate: f64,
}

/// Central-difference second derivative of `s -> mu(g_bg + s h, 1)` at 0.
pub fn fd_second_variation(bg: &Background, h: &AxisymTensor, steps: &[f64]) -> Result<FdSecondVariation> {
    if steps.is_empty() {
        return Err(Error::InvalidParameter("no step sizes".into()));
    }
    for &s in steps {
        if !(1e-4..=1e-2).contains(&s) {
            return Err(Error::InvalidParameter(format!("step {s} outside [1e-4, 1e-2]")));
        }
    }
    let zero = AxisymTensor::zeros(bg.l_max());
    let base = mu_entropy(bg, &zero)?;
    let mut samples = Vec::new();
    for &s in steps {
        let p = mu_entropy_at(bg, &h.scaled(s), 1.0, Some(&base.minimizer_v))?.mu;
        let m = mu_entropy_at(bg, &h.scaled(-s), 1.0, Some(&base.minimizer_v))?.mu;
        samples.push((s, (p - 2.0 * base.mu + m) / (s * s)));
    }
    let mut sorted = samples.clone();
    sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let estimate = if sorted.len() >= 2 {
        let ((s1, v1), (s2, v2)) = (sorted[0], sorted[1]);
        v1 - (v2 - v1) * s1 * s1 / (s2 * s2 - s1 * s1)
    } else {
        sorted[0].1
    };
    Ok(FdSecondVariation { samples, estimate })
}
