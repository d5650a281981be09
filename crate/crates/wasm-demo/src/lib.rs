//! Browser demo: the stability ladder, a flow decay curve and an entropy
//! curve, each returned to JavaScript as a JSON string.

use serde::Serialize;
use shrinker_core::entropy::{mu_entropy, second_variation};
use shrinker_core::flows::{evolve_rdtf_with, rate_fit_trace, shoot_stable, FlowContext, FlowOptions, TraceQuantity};
use shrinker_core::geometry::{AxisymTensor, Background};
use shrinker_core::spectral::{assemble_operator, ModeClass, OperatorKind, SpectralDecomposition};
use wasm_bindgen::prelude::*;

/// Keeps a browser tab responsive.
pub const MAX_L: usize = 16;

#[derive(Debug, Clone, Serialize)]
pub struct LadderRow {
    pub degree: usize,
    pub eigenvalue: f64,
    pub class: &'static str,
}

#[derive(Debug, Clone, Serialize)]
pub struct DecayCurve {
    pub tau: Vec<f64>,
    pub l2f: Vec<f64>,
    pub hw: Vec<f64>,
    pub exponent: f64,
    pub eigenvalue: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EntropyCurve {
    pub s: Vec<f64>,
    pub mu: Vec<f64>,
    /// `mu(0) + s^2 D2mu/2`, the quadratic model at the shrinker.
    pub quadratic: Vec<f64>,
}

fn background(l_max: usize) -> Result<Background, String> {
    if !(2..=MAX_L).contains(&l_max) {
        return Err(format!("l_max must lie in 2..={MAX_L}"));
    }
    Background::round_sphere(3, l_max).map_err(|e| e.to_string())
}

fn parse_class(class: &str) -> Result<ModeClass, String> {
    match class {
        "ess" => Ok(ModeClass::Essential),
        "lie" => Ok(ModeClass::Lie),
        other => Err(format!("unknown mode class `{other}`")),
    }
}

fn mode(d: &SpectralDecomposition, class: &str, eigenvalue: f64) -> Result<usize, String> {
    let c = parse_class(class)?;
    d.modes
        .iter()
        .position(|m| m.class == Some(c) && (m.eigenvalue - eigenvalue).abs() < 1e-6)
        .ok_or_else(|| format!("no {class} mode with eigenvalue {eigenvalue}"))
}

pub fn spectrum_ladder(l_max: usize) -> Result<Vec<LadderRow>, String> {
    let bg = background(l_max)?;
    let op = assemble_operator(&bg, OperatorKind::Stability).map_err(|e| e.to_string())?;
    let d = SpectralDecomposition::new(&bg, &op).map_err(|e| e.to_string())?;
    Ok(d.modes
        .iter()
        .map(|m| LadderRow {
            degree: m.degree,
            eigenvalue: m.eigenvalue,
            class: if m.class == Some(ModeClass::Essential) { "essential" } else { "lie" },
        })
        .collect())
}

/// Rescaled flow from `coeff` times one eigenmode. With `shoot`, the
/// unstable coefficients are corrected so the run stays near the shrinker.
pub fn flow_decay_curve(class: &str, eigenvalue: f64, coeff: f64, tau_end: f64, l_max: usize, shoot: bool) -> Result<DecayCurve, String> {
    if !(tau_end > 0.0 && tau_end <= 10.0) {
        return Err("tau_end must lie in (0, 10]".into());
    }
    let bg = background(l_max)?;
    let ctx = FlowContext::new(&bg).map_err(|e| e.to_string())?;
    let h0 = ctx.decomp.mode_tensor(mode(&ctx.decomp, class, eigenvalue)?).scaled(coeff);
    let opts = FlowOptions { tau_end, entropy: false, ..Default::default() };
    let trace = if shoot {
        shoot_stable(&bg, &ctx, &h0, &opts).map_err(|e| e.to_string())?.trace
    } else {
        evolve_rdtf_with(&bg, &ctx, &h0, &opts).map_err(|e| e.to_string())?
    };
    let exponent = rate_fit_trace(&ctx.decomp, &trace, (0.0, tau_end), TraceQuantity::L2f).map_or(f64::NAN, |f| f.exponent);
    Ok(DecayCurve {
        tau: trace.samples.iter().map(|s| s.tau).collect(),
        l2f: trace.samples.iter().map(|s| s.l2f_norm).collect(),
        hw: trace.samples.iter().map(|s| s.hw_norm).collect(),
        exponent,
        eigenvalue,
    })
}

/// `s -> mu(g + s h, 1)` for a unit eigenmode `h` on `[-s_max, s_max]`.
pub fn entropy_curve(class: &str, eigenvalue: f64, s_max: f64, points: usize, l_max: usize) -> Result<EntropyCurve, String> {
    if !(s_max > 0.0 && s_max <= 0.05) || !(3..=101).contains(&points) {
        return Err("need 0 < s_max <= 0.05 and 3 to 101 points".into());
    }
    let bg = background(l_max)?;
    let op = assemble_operator(&bg, OperatorKind::Stability).map_err(|e| e.to_string())?;
    let d = SpectralDecomposition::new(&bg, &op).map_err(|e| e.to_string())?;
    let h = d.mode_tensor(mode(&d, class, eigenvalue)?);
    let d2 = second_variation(&bg, &d, &h).map_err(|e| e.to_string())?.spectral;
    let mu0 = mu_entropy(&bg, &AxisymTensor::zeros(l_max)).map_err(|e| e.to_string())?.mu;
    let mut out = EntropyCurve { s: Vec::new(), mu: Vec::new(), quadratic: Vec::new() };
    for k in 0..points {
        let s = -s_max + 2.0 * s_max * k as f64 / (points - 1) as f64;
        out.mu.push(mu_entropy(&bg, &h.scaled(s)).map_err(|e| e.to_string())?.mu);
        out.quadratic.push(mu0 + 0.5 * d2 * s * s);
        out.s.push(s);
    }
    Ok(out)
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = spectrumLadder)]
pub fn spectrum_ladder_js(l_max: usize) -> Result<String, JsError> {
    to_js(spectrum_ladder(l_max))
}

#[wasm_bindgen(js_name = flowDecayCurve)]
pub fn flow_decay_curve_js(class: &str, eigenvalue: f64, coeff: f64, tau_end: f64, l_max: usize, shoot: bool) -> Result<String, JsError> {
    to_js(flow_decay_curve(class, eigenvalue, coeff, tau_end, l_max, shoot))
}

#[wasm_bindgen(js_name = entropyCurve)]
pub fn entropy_curve_js(class: &str, eigenvalue: f64, s_max: f64, points: usize, l_max: usize) -> Result<String, JsError> {
    to_js(entropy_curve(class, eigenvalue, s_max, points, l_max))
}
