//! Harmonic map heat flow of zonal maps from `(S^n, g_bg + h_tau)` to
//! `(S^n, g_bg)`, written for the generator `X` of `psi = exp(X)`.

use serde::{Deserialize, Serialize};

use super::gauge::GaugeMap;
use super::imex::{integrate, BlockLinear, Observe, StepControl, StepStats};
use super::{sample_grid, FlowTrace};
use crate::error::{Error, Result};
use crate::geometry::{AxisymTensor, AxisymVector, Background, VectorGrid};
use crate::spectral::{assemble_operator, OperatorKind};

/// The domain metric `g_bg + h_tau` along the flow.
pub enum MetricPath<'a> {
    Static(AxisymTensor),
    /// Linear interpolation between trace samples, constant past the end.
    Trace(&'a FlowTrace),
    Func(&'a dyn Fn(f64) -> AxisymTensor),
}

impl MetricPath<'_> {
    pub fn at(&self, tau: f64) -> AxisymTensor {
        match self {
            MetricPath::Static(h) => h.clone(),
            MetricPath::Func(f) => f(tau),
            MetricPath::Trace(t) => {
                let s = &t.samples;
                let i = s.partition_point(|x| x.tau <= tau);
                if i == 0 {
                    return s[0].h.clone();
                }
                if i >= s.len() {
                    return s[s.len() - 1].h.clone();
                }
                let (a, b) = (&s[i - 1], &s[i]);
                let w = (tau - a.tau) / (b.tau - a.tau);
                let mut h = a.h.scaled(1.0 - w);
                h.axpy(w, &b.h);
                h
            }
        }
    }

    fn is_zero(&self) -> bool {
        matches!(self, MetricPath::Static(h) if h.max_abs_coeff() == 0.0)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HmhfOptions {
    pub tau_end: f64,
    pub sample_every: f64,
    pub control: StepControl,
}

impl Default for HmhfOptions {
    fn default() -> Self {
        HmhfOptions {
            tau_end: 1.0,
            sample_every: 0.05,
            control: StepControl::Adaptive { rtol: 1e-10, atol: 1e-16, dt_init: 1e-3, dt_min: 1e-12, dt_max: 0.02 },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HmhfSample {
    pub tau: f64,
    pub x: AxisymVector,
    pub min_dpsi: f64,
    /// `|X_tau - e^{tau Lg} X_0|` in `L^2_f`; only meaningful when `h = 0`.
    pub linear_defect: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HmhfTrace {
    pub samples: Vec<HmhfSample>,
    pub stats: StepStats,
}

impl HmhfTrace {
    pub fn gauge(&self, i: usize) -> GaugeMap {
        GaugeMap::from_vector(self.samples[i].x.clone())
    }
}

/// `r tau(psi) / sin(theta)` at the nodes, with `tau(psi)` the tension field of
/// `psi = theta + sin(theta) y / r` from `g_bg + h` to `g_bg`.
pub(crate) fn tension_grid(bg: &Background, h: &AxisymTensor, x: &AxisymVector) -> Result<VectorGrid> {
    let n1 = (bg.dim() - 1) as f64;
    let r = bg.radius();
    let j = bg.tensor_jet(h);
    let v = bg.vector_jet(x);
    let mut out = vec![0.0; bg.len()];
    for (k, &u) in bg.nodes().iter().enumerate() {
        let s2 = 1.0 - u * u;
        let s = s2.sqrt();
        let (y, y_u, y_uu) = (v.y[k], v.y_u[k], v.y_uu[k]);
        let (al, be) = (1.0 + j.a[k], 1.0 + j.b[k]);
        if !(al > 0.0 && be > 0.0) {
            return Err(Error::DegenerateMetric(format!("domain metric not positive at u = {u:.4}")));
        }
        let dpsi = 1.0 + (u * y - s2 * y_u) / r;
        if !(dpsi > 0.0) {
            return Err(Error::GaugeDegeneration(format!("psi' = {dpsi:.3e} at u = {u:.4}")));
        }
        let ddpsi_over_s = -(y + 3.0 * u * y_u - s2 * y_uu) / r;
        // psi = theta + delta; sin(psi)/s and cos(psi) without cancellation.
        let delta = s * y / r;
        let sinc = if delta.abs() < 1e-8 { 1.0 - delta * delta / 6.0 } else { delta.sin() / delta };
        let sin_over_s = delta.cos() + u * (y / r) * sinc;
        let cos_psi = u * delta.cos() - s * delta.sin();
        out[k] = (ddpsi_over_s + j.a_u[k] * dpsi / (2.0 * al)) / (r * al) - n1 * j.b_u[k] * dpsi / (2.0 * r * al * be)
            + n1 * (u * dpsi / al - sin_over_s * cos_psi / be) / (r * s2);
    }
    Ok(VectorGrid { y: out })
}

/// Evolve the generator of the gauge map under the harmonic map heat flow
/// with domain metric `path`.
pub fn evolve_hmhf(bg: &Background, path: &MetricPath, u0: &GaugeMap, opts: &HmhfOptions) -> Result<HmhfTrace> {
    u0.check_monotone(bg)?;
    let x0 = u0.generator(bg);
    let op = assemble_operator(bg, OperatorKind::Gauge)?;
    let mut linear = BlockLinear::new();
    for b in &op.blocks {
        linear.push(&b.action);
    }
    // Vector coordinates start at degree 1.
    let flat0 = x0.e[1..].to_vec();
    let unflat = |y: &[f64]| {
        let mut e = vec![0.0];
        e.extend_from_slice(y);
        AxisymVector { e }
    };
    let nonlinear = |t: f64, y: &[f64]| -> Result<Vec<f64>> {
        let x = unflat(y);
        let full = bg.analyze_vector(&tension_grid(bg, &path.at(t), &x)?);
        let lin = linear.apply(y);
        Ok((0..y.len()).map(|i| full.e[i + 1] - lin[i]).collect())
    };
    let track_defect = path.is_zero();
    let mut samples = Vec::new();
    let observe = |tau: f64, y: &[f64], _dt: f64| -> Result<Observe> {
        let x = unflat(y);
        let min_dpsi = GaugeMap::from_vector(x.clone()).check_monotone(bg)?;
        let linear_defect = track_defect.then(|| {
            let lin = unflat(&linear.exp_apply(tau, &flat0));
            let mut d = x.clone();
            d.axpy(-1.0, &lin);
            let g = bg.synthesize_vector(&d);
            bg.inner_vector_grid(&g, &g).sqrt()
        });
        samples.push(HmhfSample { tau, x, min_dpsi, linear_defect });
        Ok(Observe::Continue)
    };
    let times = sample_grid(0.0, opts.tau_end, opts.sample_every)?;
    let stats = integrate(&linear, nonlinear, flat0.clone(), 0.0, &times, opts.control, observe)?;
    Ok(HmhfTrace { samples, stats })
}
