//! Diagnostics evaluated along a flow trace: norm consistency, entropy
//! monotonicity, the weighted-growth and ratio inequalities for invariant
//! subspaces, and the entropy dominance lemmas.

use serde::{Deserialize, Serialize};

use super::{FlowContext, FlowSample, FlowTrace};
use crate::entropy::mu_closed_form;
use crate::geometry::{AxisymTensor, Background};
use crate::spectral::{Mode, ModeClass, Selector, Sign, SpectralDecomposition, NEUTRAL_TOL};

/// A union of eigenspaces: modes of `class` (any if `None`) with eigenvalue
/// in `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Subspace {
    #[serde(default)]
    pub class: Option<ModeClass>,
    pub min: f64,
    pub max: f64,
}

impl Subspace {
    pub fn eigenvalue(lambda: f64) -> Self {
        Subspace { class: None, min: lambda, max: lambda }
    }

    pub fn matches(&self, m: &Mode) -> bool {
        self.class.is_none_or(|c| m.class == Some(c))
            && m.eigenvalue >= self.min - NEUTRAL_TOL
            && m.eigenvalue <= self.max + NEUTRAL_TOL
    }

    /// Extreme eigenvalues actually present.
    fn range(&self, decomp: &SpectralDecomposition) -> Option<(f64, f64)> {
        let v: Vec<f64> = decomp.modes.iter().filter(|m| self.matches(m)).map(|m| m.eigenvalue).collect();
        if v.is_empty() {
            return None;
        }
        Some((v.iter().cloned().fold(f64::INFINITY, f64::min), v.iter().cloned().fold(f64::NEG_INFINITY, f64::max)))
    }

    fn label(&self) -> String {
        let c = match self.class {
            Some(ModeClass::Lie) => "lie",
            Some(ModeClass::Essential) => "ess",
            None => "all",
        };
        format!("{c}[{},{}]", self.min, self.max)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DynamicsOptions {
    /// The `delta` of the weighted-growth lemma.
    pub delta: f64,
    /// Largest acceptable fitted constant.
    pub c_bound: f64,
    /// The smallness parameter of the entropy lemmas.
    pub lemma_eps: f64,
    /// Subspaces for the weighted-growth check; empty means one per distinct
    /// eigenvalue carried by the initial data, plus everything above and below.
    pub subspaces: Vec<Subspace>,
    /// `(V1, V2)` pairs for the ratio check; empty means derived from the
    /// dominant initial eigenvalue.
    pub pairs: Vec<(Subspace, Subspace)>,
    /// Lower bound on the ratio constant `A`.
    pub ratio_floor: f64,
}

impl Default for DynamicsOptions {
    fn default() -> Self {
        DynamicsOptions {
            delta: 0.25,
            c_bound: 100.0,
            lemma_eps: 0.05,
            subspaces: Vec::new(),
            pairs: Vec::new(),
            ratio_floor: 1e-2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    /// The statement's hypotheses do not hold anywhere on the trace.
    HypothesisUnmet,
    Skipped,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DynamicsCheck {
    pub name: String,
    pub verdict: Verdict,
    pub measured: f64,
    pub tolerance: f64,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DynamicsReport {
    pub checks: Vec<DynamicsCheck>,
}

impl DynamicsReport {
    pub fn violations(&self) -> Vec<&DynamicsCheck> {
        self.checks.iter().filter(|c| c.verdict == Verdict::Fail).collect()
    }

    pub fn get(&self, prefix: &str) -> Vec<&DynamicsCheck> {
        self.checks.iter().filter(|c| c.name.starts_with(prefix)).collect()
    }
}

fn check(name: impl Into<String>, passed: bool, measured: f64, tolerance: f64, detail: impl Into<String>) -> DynamicsCheck {
    DynamicsCheck {
        name: name.into(),
        verdict: if passed { Verdict::Pass } else { Verdict::Fail },
        measured,
        tolerance,
        detail: detail.into(),
    }
}

fn hw_weight(m: &Mode) -> f64 {
    1.0 + (-m.eigenvalue).max(0.0)
}

/// Weight of an `H^1`-equivalent norm.
fn h1_weight(m: &Mode) -> f64 {
    1.0 + m.eigenvalue.abs()
}

fn weighted(decomp: &SpectralDecomposition, s: &FlowSample, keep: impl Fn(&Mode) -> bool, w: impl Fn(&Mode) -> f64) -> f64 {
    decomp.modes.iter().zip(&s.modal).filter(|(m, _)| keep(m)).map(|(m, a)| w(m) * a * a).sum()
}

/// Evaluate every diagnostic on `trace`.
pub fn dynamics_report(bg: &Background, ctx: &FlowContext, trace: &FlowTrace, opts: &DynamicsOptions) -> DynamicsReport {
    let decomp = &ctx.decomp;
    let mut checks = vec![hw_consistency(bg, ctx, trace), entropy_monotone(trace)];
    let subspaces = if opts.subspaces.is_empty() { default_subspaces(decomp, trace) } else { opts.subspaces.clone() };
    for v in &subspaces {
        checks.push(weighted_growth(decomp, trace, v, opts));
    }
    let pairs = if opts.pairs.is_empty() { default_pairs(decomp, trace) } else { opts.pairs.clone() };
    for (v1, v2) in &pairs {
        checks.push(ratio_preservation(decomp, trace, v1, v2, opts));
    }
    checks.push(error_estimate(bg, ctx, trace, opts));
    checks.extend(entropy_lemmas(bg, decomp, trace, opts));
    DynamicsReport { checks }
}

fn hw_consistency(bg: &Background, ctx: &FlowContext, trace: &FlowTrace) -> DynamicsCheck {
    let stable = Selector::ALL.with_sign(Sign::Stable);
    let mut worst: f64 = 0.0;
    for s in &trace.samples {
        let pm = ctx.decomp.project(bg, &s.h, &stable);
        let lpm = bg.stability_operator(&pm);
        let quad = bg.inner_tensor(&s.h, &s.h) - bg.inner_tensor_grid(&bg.synthesize_tensor(&pm), &lpm);
        let modal = s.hw_norm * s.hw_norm;
        if modal > 0.0 || quad != 0.0 {
            worst = worst.max((quad - modal).abs() / modal.max(f64::MIN_POSITIVE));
        }
    }
    check(
        "hw_consistency",
        worst <= 1e-9,
        worst,
        1e-9,
        "relative gap between the modal H_W norm and |h|^2 - <P-h, L P-h>",
    )
}

fn entropy_monotone(trace: &FlowTrace) -> DynamicsCheck {
    let mus: Vec<(f64, f64)> = trace.samples.iter().filter_map(|s| s.mu.map(|m| (s.tau, m))).collect();
    if mus.len() < 2 {
        return DynamicsCheck {
            name: "entropy_monotone".into(),
            verdict: Verdict::Skipped,
            measured: 0.0,
            tolerance: 0.0,
            detail: "fewer than two entropy samples".into(),
        };
    }
    let lo = mus.iter().map(|m| m.1).fold(f64::INFINITY, f64::min);
    let hi = mus.iter().map(|m| m.1).fold(f64::NEG_INFINITY, f64::max);
    let dt = trace.dt_max();
    let tol = 1e-11 + dt * dt * (hi - lo);
    let mut worst: f64 = 0.0;
    let mut at = 0.0;
    for w in mus.windows(2) {
        let drop = w[0].1 - w[1].1;
        if drop > worst {
            worst = drop;
            at = w[1].0;
        }
    }
    check(
        "entropy_monotone",
        worst <= tol,
        worst,
        tol,
        format!("largest decrease of mu(g,1) between samples (at tau = {at:.3}); tolerance 1e-11 + dt_max^2 * range"),
    )
}

fn dominant_eigenvalue(decomp: &SpectralDecomposition, s: &FlowSample) -> Option<f64> {
    decomp
        .modes
        .iter()
        .zip(&s.modal)
        .filter(|(_, a)| a.abs() > 0.0)
        .max_by(|x, y| x.1.abs().partial_cmp(&y.1.abs()).unwrap())
        .map(|(m, _)| m.eigenvalue)
}

fn default_subspaces(decomp: &SpectralDecomposition, trace: &FlowTrace) -> Vec<Subspace> {
    let s0 = &trace.samples[0];
    let mut out: Vec<Subspace> = Vec::new();
    for (m, a) in decomp.modes.iter().zip(&s0.modal) {
        if a.abs() > 1e-12 * s0.l2f_norm && !out.iter().any(|v| (v.min - m.eigenvalue).abs() < 1e-8) {
            out.push(Subspace::eigenvalue(m.eigenvalue));
        }
    }
    if let Some(l) = dominant_eigenvalue(decomp, s0) {
        out.push(Subspace { class: None, min: l + 1e-6, max: f64::INFINITY });
        out.push(Subspace { class: None, min: -f64::INFINITY, max: l - 1e-6 });
    }
    out
}

fn default_pairs(decomp: &SpectralDecomposition, trace: &FlowTrace) -> Vec<(Subspace, Subspace)> {
    match dominant_eigenvalue(decomp, &trace.samples[0]) {
        Some(l) => vec![
            (Subspace { class: None, min: l + 1e-6, max: f64::INFINITY }, Subspace::eigenvalue(l)),
            (Subspace { class: None, min: -f64::INFINITY, max: l - 1e-6 }, Subspace::eigenvalue(l)),
        ],
        None => Vec::new(),
    }
}

/// Integrated form of the two weighted-growth inequalities between
/// consecutive samples; the fitted constant is the smallest `C` that makes
/// every interval hold.
fn weighted_growth(decomp: &SpectralDecomposition, trace: &FlowTrace, v: &Subspace, opts: &DynamicsOptions) -> DynamicsCheck {
    let name = format!("weighted_growth {}", v.label());
    let Some((lmin, lmax)) = v.range(decomp) else {
        return DynamicsCheck { name, verdict: Verdict::Skipped, measured: 0.0, tolerance: 0.0, detail: "empty subspace".into() };
    };
    let d = opts.delta;
    let k_lo = (1.0 + d) * lmin - d * lmin.max(0.0);
    let k_hi = (1.0 - d) * lmax + d * lmax.max(0.0);
    let eps = trace.samples.iter().map(|s| s.c2_est).fold(0.0, f64::max);
    let pv: Vec<f64> = trace.samples.iter().map(|s| weighted(decomp, s, |m| v.matches(m), hw_weight)).collect();
    let all: Vec<f64> = trace.samples.iter().map(|s| s.hw_norm * s.hw_norm).collect();
    let mut c_fit: f64 = 0.0;
    let mut bad_at = None;
    for i in 0..trace.samples.len().saturating_sub(1) {
        let dtau = trace.samples[i + 1].tau - trace.samples[i].tau;
        for (k, sign) in [(k_lo, 1.0), (k_hi, -1.0)] {
            // Everything is scaled by e^{2 k tau_i}.
            let w1 = (-2.0 * k * dtau).exp();
            let change = sign * (w1 * pv[i + 1] - pv[i]);
            let slack = 1e-8 * (w1 * pv[i + 1]).max(pv[i]);
            if change >= -slack {
                continue;
            }
            let rhs = 0.5 * dtau * (all[i] + w1 * all[i + 1]);
            let c = if eps * rhs > 0.0 { -change / (eps * rhs) } else { f64::INFINITY };
            if c > c_fit {
                c_fit = c;
                bad_at = Some(trace.samples[i + 1].tau);
            }
        }
    }
    check(
        name,
        c_fit <= opts.c_bound,
        c_fit,
        opts.c_bound,
        format!(
            "fitted C with eps = sup C2 = {eps:.3e}, rates {k_lo:.4}/{k_hi:.4}{}",
            bad_at.map_or(String::new(), |t| format!(", binding at tau = {t:.3}"))
        ),
    )
}

fn ratio_preservation(
    decomp: &SpectralDecomposition,
    trace: &FlowTrace,
    v1: &Subspace,
    v2: &Subspace,
    opts: &DynamicsOptions,
) -> DynamicsCheck {
    let name = format!("ratio {} / {}", v1.label(), v2.label());
    let (Some((_, l1max)), Some((l2min, _))) = (v1.range(decomp), v2.range(decomp)) else {
        return DynamicsCheck { name, verdict: Verdict::Skipped, measured: 0.0, tolerance: 0.0, detail: "empty subspace".into() };
    };
    let p1 = |s: &FlowSample| weighted(decomp, s, |m| v1.matches(m), hw_weight);
    let p2 = |s: &FlowSample| weighted(decomp, s, |m| v2.matches(m), hw_weight);
    let s0 = &trace.samples[0];
    if p2(s0) <= 0.0 {
        return DynamicsCheck {
            name,
            verdict: Verdict::HypothesisUnmet,
            measured: 0.0,
            tolerance: 0.0,
            detail: "P_V2 h0 = 0".into(),
        };
    }
    let a = (p1(s0) / p2(s0)).max(opts.ratio_floor);
    let d = opts.delta;
    let rate = 2.0 * ((1.0 - d) * l1max + d * l1max.max(0.0) - (1.0 + d) * l2min + d * l2min.max(0.0) + d);
    let mut worst: f64 = 0.0;
    for s in &trace.samples {
        let bound = a * (rate * s.tau).exp() * p2(s);
        let r = if bound > 0.0 { p1(s) / bound } else if p1(s) > 0.0 { f64::INFINITY } else { 0.0 };
        worst = worst.max(r);
    }
    check(name, worst <= 1.0 + 1e-8, worst, 1.0, format!("max of |P1 h|^2 / (A e^(rate tau) |P2 h|^2) with A = {a:.3e}"))
}

fn error_estimate(bg: &Background, ctx: &FlowContext, trace: &FlowTrace, opts: &DynamicsOptions) -> DynamicsCheck {
    let mut c_fit: f64 = 0.0;
    for s in &trace.samples {
        if s.hw_norm == 0.0 {
            continue;
        }
        let Ok(full) = bg.rdtf_rhs(&s.h) else { continue };
        let mut q = full;
        q.axpy(-1.0, &ctx.op.apply_tensor(&s.h));
        c_fit = c_fit.max(bg.norm_tensor(&q) / (s.c2_est * s.hw_norm));
    }
    check(
        "error_estimate",
        c_fit <= opts.c_bound,
        c_fit,
        opts.c_bound,
        "fitted C in |Q(h)| <= C |h|_C2 |h|_HW",
    )
}

fn entropy_lemmas(bg: &Background, decomp: &SpectralDecomposition, trace: &FlowTrace, opts: &DynamicsOptions) -> Vec<DynamicsCheck> {
    let mu0 = mu_closed_form(bg.dim(), 1.0);
    let eps = opts.lemma_eps;
    let lie = |m: &Mode| m.class == Some(ModeClass::Lie);
    let ess = |m: &Mode| m.class == Some(ModeClass::Essential);
    let one = |_: &Mode| 1.0;
    let lneg = |m: &Mode| (-m.eigenvalue).max(0.0);

    let mut stats = [(0usize, 0.0f64, String::new()), (0, 0.0, String::new()), (0, 0.0, String::new())];
    let mut unmet = [String::new(), String::new(), String::new()];
    for s in &trace.samples {
        let (Some(mu), true) = (s.mu, s.l2f_norm > 0.0) else { continue };
        if s.c2_est > eps {
            for u in unmet.iter_mut() {
                *u = "|h|_C2 above the lemma epsilon".into();
            }
            continue;
        }
        let dmu = mu - mu0;
        let h1 = weighted(decomp, s, |_| true, h1_weight);
        let l2 = s.l2f_norm * s.l2f_norm;
        let lie_h1 = weighted(decomp, s, lie, h1_weight);
        let lie_l2 = weighted(decomp, s, lie, one);
        let lie_plus = weighted(decomp, s, |m| lie(m) && m.sign == Sign::Unstable, one);
        let ess0 = weighted(decomp, s, |m| ess(m) && m.sign == Sign::Neutral, one);
        let all0 = weighted(decomp, s, |m| m.sign == Sign::Neutral, one);
        let ess_plus = weighted(decomp, s, |m| ess(m) && m.sign == Sign::Unstable, one);
        let minus_h1 = weighted(decomp, s, |m| m.sign == Sign::Stable, h1_weight);
        let minus_form = weighted(decomp, s, |m| m.sign == Sign::Stable, lneg);

        // Dominance of the essential unstable mode.
        if lie_h1 + ess0 > eps * h1 {
            unmet[0] = "hypothesis (1) unmet".into();
        } else if dmu < 0.0 {
            unmet[0] = "hypothesis (2) unmet".into();
        } else {
            let lhs = (lie_h1 + ess0) / eps + minus_h1;
            let c = if ess_plus > 0.0 { lhs / ess_plus } else if lhs > 0.0 { f64::INFINITY } else { 0.0 };
            record(&mut stats[0], c, s.tau);
        }
        // Dominance of the stable modes.
        if all0 + lie_plus > eps * h1 {
            unmet[1] = "hypothesis (1) unmet".into();
        } else if dmu > 0.0 {
            unmet[1] = "hypothesis (2) unmet".into();
        } else {
            let lhs = (all0 + lie_plus) / eps + ess_plus;
            let c = if minus_form > 0.0 { lhs / minus_form } else if lhs > 0.0 { f64::INFINITY } else { 0.0 };
            record(&mut stats[1], c, s.tau);
        }
        // Upper bound by the entropy.
        if lie_l2 + minus_form + ess0 > eps * l2 {
            unmet[2] = "hypothesis unmet: |P_Lie h|^2 + |<h, L P- h>| + |P0_ess h|^2 > eps |h|^2".into();
        } else {
            let c = if dmu > 0.0 { l2 / dmu } else { f64::INFINITY };
            record(&mut stats[2], c, s.tau);
        }
    }
    let names = ["dominance_essential_unstable", "dominance_stable", "entropy_upper_bound"];
    let what = [
        "fitted C in eps^-1(|P_Lie h|^2_H1 + |P0_ess h|^2) + |P- h|^2_H1 <= C |P+_ess h|^2",
        "fitted C in eps^-1(|P0 h|^2 + |P+_Lie h|^2) + |P+_ess h|^2 <= C |<h, L P- h>|",
        "fitted C in |h|^2 <= C (mu(g+h,1) - mu(g,1))",
    ];
    (0..3)
        .map(|i| {
            let (count, c, at) = &stats[i];
            if *count == 0 {
                let why = if unmet[i].is_empty() { "no samples with entropy".to_string() } else { unmet[i].clone() };
                return DynamicsCheck {
                    name: names[i].into(),
                    verdict: if unmet[i].is_empty() { Verdict::Skipped } else { Verdict::HypothesisUnmet },
                    measured: 0.0,
                    tolerance: opts.c_bound,
                    detail: why,
                };
            }
            check(names[i], *c <= opts.c_bound, *c, opts.c_bound, format!("{}; {count} samples{at}", what[i]))
        })
        .collect()
}

fn record(stat: &mut (usize, f64, String), c: f64, tau: f64) {
    stat.0 += 1;
    if c > stat.1 {
        stat.1 = c;
        stat.2 = format!(", binding at tau = {tau:.3}");
    }
}

/// The `H_W` quadratic form `|h|^2 - <P-h, L P-h>` computed on the grid.
pub fn hw_quadratic_form(bg: &Background, decomp: &SpectralDecomposition, h: &AxisymTensor) -> f64 {
    let pm = decomp.project(bg, h, &Selector::ALL.with_sign(Sign::Stable));
    bg.inner_tensor(h, h) - bg.inner_tensor_grid(&bg.synthesize_tensor(&pm), &bg.stability_operator(&pm))
}
