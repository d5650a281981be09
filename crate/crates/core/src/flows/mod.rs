//! Rescaled Ricci-DeTurck flow and harmonic map heat flow near the shrinker,
//! gauge maps, decay-rate fits and the dynamics diagnostics.

mod dynamics;
mod gauge;
mod hmhf;
pub mod imex;

pub use dynamics::{dynamics_report, hw_quadratic_form, DynamicsCheck, DynamicsOptions, DynamicsReport, Subspace, Verdict};
pub use gauge::{gauge_pullback, lie_reduction, slice_projection, GaugeMap, LieReduction};
pub use hmhf::{evolve_hmhf, HmhfOptions, HmhfSample, HmhfTrace, MetricPath};
pub use imex::{StepControl, StepStats};

use serde::{Deserialize, Serialize};

use crate::entropy::mu_entropy_at;
use crate::error::{Error, Result};
use crate::geometry::{AxisymTensor, Background, ScalarField};
use crate::spectral::{assemble_operator, DiscreteOperator, OperatorKind, Selector, Sign, SpectralDecomposition};
use imex::{integrate, BlockLinear, Observe};

/// Beyond this `C^2` size the perturbative picture is no longer trusted and
/// a flow halts.
pub const VALIDITY_THRESHOLD: f64 = 0.2;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowOptions {
    pub tau_end: f64,
    /// Sampling cadence in `tau`.
    pub sample_every: f64,
    pub control: StepControl,
    /// `false` integrates the linearised flow `h' = L h`.
    pub nonlinear: bool,
    /// Evaluate `mu(g, 1)` at every sample.
    pub entropy: bool,
    pub c2_threshold: f64,
}

impl Default for FlowOptions {
    fn default() -> Self {
        FlowOptions {
            tau_end: 1.0,
            sample_every: 0.1,
            control: StepControl::default(),
            nonlinear: true,
            entropy: true,
            c2_threshold: VALIDITY_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowSample {
    pub tau: f64,
    pub h: AxisymTensor,
    /// Coordinates against the stability eigenmodes.
    pub modal: Vec<f64>,
    pub l2f_norm: f64,
    pub hw_norm: f64,
    pub c0_est: f64,
    pub c2_est: f64,
    pub mu: Option<f64>,
    /// Step size in use when the sample was taken.
    pub dt: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowTrace {
    pub dim: usize,
    pub l_max: usize,
    pub nonlinear: bool,
    pub samples: Vec<FlowSample>,
    /// Why integration stopped early, if it did.
    pub halted: Option<String>,
    pub stats: StepStats,
}

impl FlowTrace {
    pub fn taus(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.tau).collect()
    }

    pub fn last(&self) -> &FlowSample {
        self.samples.last().expect("a trace always holds its initial sample")
    }

    /// Largest accepted step.
    pub fn dt_max(&self) -> f64 {
        self.stats.dt_max.max(self.samples.iter().map(|s| s.dt).fold(0.0, f64::max))
    }
}

/// The linear operator and modal data a flow run needs.
#[derive(Debug, Clone)]
pub struct FlowContext {
    pub op: DiscreteOperator,
    pub decomp: SpectralDecomposition,
    linear: BlockLinear,
}

impl FlowContext {
    pub fn new(bg: &Background) -> Result<Self> {
        let op = assemble_operator(bg, OperatorKind::Stability)?;
        let decomp = SpectralDecomposition::new(bg, &op)?;
        let mut linear = BlockLinear::new();
        for b in &op.blocks {
            linear.push(&b.action);
        }
        Ok(FlowContext { op, decomp, linear })
    }

    /// `e^{tau L} h`.
    pub fn linear_evolution(&self, tau: f64, h: &AxisymTensor) -> AxisymTensor {
        AxisymTensor::from_flat(&self.linear.exp_apply(tau, &h.to_flat()))
    }

    pub fn sample(&self, bg: &Background, tau: f64, h: AxisymTensor, dt: f64, mu: Option<f64>) -> FlowSample {
        let modal = self.decomp.modal_coords(bg, &h);
        FlowSample {
            tau,
            l2f_norm: bg.norm_tensor(&h),
            hw_norm: self.decomp.hw_norm2(&modal).sqrt(),
            c0_est: bg.c0_estimate(&h),
            c2_est: bg.c2_estimate(&h),
            modal,
            h,
            mu,
            dt,
        }
    }
}

/// Sample times `t0, t0 + step, ...` ending exactly at `t1`.
pub fn sample_grid(t0: f64, t1: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(t1 >= t0) {
        return Err(Error::InvalidParameter(format!("bad sampling: [{t0}, {t1}] every {step}")));
    }
    let n = ((t1 - t0) / step - 1e-9).ceil().max(0.0) as usize;
    let mut v: Vec<f64> = (0..=n).map(|i| t0 + i as f64 * step).collect();
    if let Some(last) = v.last_mut() {
        *last = last.min(t1);
    }
    if n > 0 && v[n] < t1 {
        v.push(t1);
    }
    Ok(v)
}

/// Integrate the rescaled Ricci-DeTurck flow `h' = L h + Q(h)` from `h0`.
pub fn evolve_rdtf(bg: &Background, h0: &AxisymTensor, opts: &FlowOptions) -> Result<FlowTrace> {
    let ctx = FlowContext::new(bg)?;
    evolve_rdtf_with(bg, &ctx, h0, opts)
}

pub fn evolve_rdtf_with(bg: &Background, ctx: &FlowContext, h0: &AxisymTensor, opts: &FlowOptions) -> Result<FlowTrace> {
    if h0.l_max() != bg.l_max() {
        return Err(Error::InvalidParameter(format!(
            "initial data has degree {} but the background has {}",
            h0.l_max(),
            bg.l_max()
        )));
    }
    let c2 = bg.c2_estimate(h0);
    if c2 > opts.c2_threshold {
        return Err(Error::Smallness { what: "|h0|_C2".into(), value: c2, limit: opts.c2_threshold });
    }
    let times = sample_grid(0.0, opts.tau_end, opts.sample_every)?;
    let linear = &ctx.linear;
    let nonlinear = |_t: f64, y: &[f64]| -> Result<Vec<f64>> {
        if !opts.nonlinear {
            return Ok(vec![0.0; y.len()]);
        }
        let h = AxisymTensor::from_flat(y);
        let full = bg.rdtf_rhs(&h)?.to_flat();
        let lin = linear.apply(y);
        Ok(full.iter().zip(&lin).map(|(f, l)| f - l).collect())
    };

    let mut samples = Vec::new();
    let mut halted = None;
    let mut warm: Option<ScalarField> = None;
    let observe = |tau: f64, y: &[f64], dt: f64| -> Result<Observe> {
        let h = AxisymTensor::from_flat(y);
        let mu = if opts.entropy {
            match mu_entropy_at(bg, &h, 1.0, warm.as_ref()) {
                Ok(r) => {
                    warm = Some(r.minimizer_v.clone());
                    Some(r.mu)
                }
                Err(_) => None,
            }
        } else {
            None
        };
        let s = ctx.sample(bg, tau, h, dt, mu);
        let stop = s.c2_est > opts.c2_threshold;
        if stop {
            halted = Some(format!(
                "C2 estimate {:.3e} exceeded the validity threshold {:.3e} at tau = {tau:.4}",
                s.c2_est, opts.c2_threshold
            ));
        }
        samples.push(s);
        Ok(if stop { Observe::Halt } else { Observe::Continue })
    };
    let stats = integrate(linear, nonlinear, h0.to_flat(), 0.0, &times, opts.control, observe)?;
    Ok(FlowTrace { dim: bg.dim(), l_max: bg.l_max(), nonlinear: opts.nonlinear, samples, halted, stats })
}

/// Initial data on the stable manifold, and the flow from it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StableShot {
    pub h0: AxisymTensor,
    /// Coefficients added to the unstable modes, in mode order.
    pub correction: Vec<(usize, f64)>,
    pub iterations: usize,
    pub trace: FlowTrace,
}

/// Correct the unstable-mode coefficients of `h0` so that the flow does not
/// leave along them before `opts.tau_end`.
///
/// Quadratic interactions feed the unstable modes at `O(|h0|^2)` and they then
/// grow like `e^{lambda tau}`; the flows that actually converge to the shrinker
/// are those whose data carry the compensating correction. A chord iteration
/// with Jacobian `diag(e^{lambda T})` finds it.
pub fn shoot_stable(bg: &Background, ctx: &FlowContext, h0: &AxisymTensor, opts: &FlowOptions) -> Result<StableShot> {
    let unstable: Vec<usize> = (0..ctx.decomp.modes.len()).filter(|&i| ctx.decomp.modes[i].sign == Sign::Unstable).collect();
    let probe = FlowOptions { entropy: false, ..opts.clone() };
    let scale = bg.norm_tensor(h0).max(f64::MIN_POSITIVE);
    let mut h = h0.clone();
    let mut correction: Vec<(usize, f64)> = unstable.iter().map(|&i| (i, 0.0)).collect();
    for it in 1..=12 {
        let trace = evolve_rdtf_with(bg, ctx, &h, &probe)?;
        if let Some(why) = &trace.halted {
            return Err(Error::NonConvergence(format!("shooting run halted: {why}")));
        }
        let last = trace.last();
        let mut step: f64 = 0.0;
        for (k, &i) in unstable.iter().enumerate() {
            let m = &ctx.decomp.modes[i];
            let a = -last.modal[i] * (-m.eigenvalue * last.tau).exp();
            correction[k].1 += a;
            h.axpy(a, &ctx.decomp.mode_tensor(i));
            step = step.max(a.abs());
        }
        if step <= 1e-13 * scale {
            let trace = evolve_rdtf_with(bg, ctx, &h, opts)?;
            return Ok(StableShot { h0: h, correction, iterations: it, trace });
        }
    }
    Err(Error::NonConvergence("stable-manifold shooting did not settle in 12 runs".into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub exponent: f64,
    pub intercept: f64,
    pub r2: f64,
    pub samples: usize,
}

/// Least-squares slope of `ln(values)` against `taus`.
pub fn rate_fit(taus: &[f64], values: &[f64]) -> Result<RateFit> {
    if taus.len() != values.len() || taus.len() < 10 {
        return Err(Error::InsufficientSamples(format!("{} samples, need at least 10", taus.len().min(values.len()))));
    }
    if let Some(v) = values.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::InvalidParameter(format!("rate fit needs positive values, found {v:e}")));
    }
    let m = taus.len() as f64;
    let ys: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let (tx, ty) = (taus.iter().sum::<f64>() / m, ys.iter().sum::<f64>() / m);
    let sxx: f64 = taus.iter().map(|t| (t - tx).powi(2)).sum();
    let sxy: f64 = taus.iter().zip(&ys).map(|(t, y)| (t - tx) * (y - ty)).sum();
    let syy: f64 = ys.iter().map(|y| (y - ty).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InsufficientSamples("all samples share one time".into()));
    }
    let slope = sxy / sxx;
    let intercept = ty - slope * tx;
    let ss_res: f64 = taus.iter().zip(&ys).map(|(t, y)| (y - intercept - slope * t).powi(2)).sum();
    let r2 = if syy <= 1e-30 * m { 1.0 } else { 1.0 - ss_res / syy };
    Ok(RateFit { exponent: slope, intercept, r2, samples: taus.len() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceQuantity {
    L2f,
    Hw,
    C0,
    C2,
    /// `H_W` norm of the projection onto stable modes.
    StableHw,
    /// Absolute value of one modal coordinate.
    Mode(usize),
}

impl TraceQuantity {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "l2f" => TraceQuantity::L2f,
            "hw" => TraceQuantity::Hw,
            "c0" => TraceQuantity::C0,
            "c2" => TraceQuantity::C2,
            "stable_hw" => TraceQuantity::StableHw,
            other => match other.strip_prefix("mode:").and_then(|i| i.parse().ok()) {
                Some(i) => TraceQuantity::Mode(i),
                None => return Err(Error::InvalidParameter(format!("unknown trace quantity `{other}`"))),
            },
        })
    }

    pub fn eval(self, decomp: &SpectralDecomposition, s: &FlowSample) -> f64 {
        match self {
            TraceQuantity::L2f => s.l2f_norm,
            TraceQuantity::Hw => s.hw_norm,
            TraceQuantity::C0 => s.c0_est,
            TraceQuantity::C2 => s.c2_est,
            TraceQuantity::StableHw => {
                let sel = Selector::ALL.with_sign(Sign::Stable);
                decomp
                    .modes
                    .iter()
                    .zip(&s.modal)
                    .filter(|(m, _)| sel.matches(m))
                    .map(|(m, a)| (1.0 - m.eigenvalue) * a * a)
                    .sum::<f64>()
                    .sqrt()
            }
            TraceQuantity::Mode(i) => s.modal.get(i).map_or(f64::NAN, |a| a.abs()),
        }
    }
}

/// Fit the decay exponent of a trace quantity over `window`.
pub fn rate_fit_trace(
    decomp: &SpectralDecomposition,
    trace: &FlowTrace,
    window: (f64, f64),
    quantity: TraceQuantity,
) -> Result<RateFit> {
    let eps = 1e-9;
    let (t, v): (Vec<f64>, Vec<f64>) = trace
        .samples
        .iter()
        .filter(|s| s.tau >= window.0 - eps && s.tau <= window.1 + eps)
        .map(|s| (s.tau, quantity.eval(decomp, s)))
        .unzip();
    rate_fit(&t, &v)
}
