//! One function per experiment kind, each writing its artifacts into a run
//! directory and returning the invariant checks it evaluated.

use std::path::Path;
use std::time::Instant;

use shrinker_core::construction::{
    build_s_general, dominant_mode_extract, strata_verify, BuildOptions, ConstructedSolution, Direction, RdtfNonlinearity,
};
use shrinker_core::entropy::{fd_second_variation, mu_closed_form, mu_entropy, second_variation};
use shrinker_core::flows::{
    dynamics_report, evolve_rdtf_with, rate_fit_trace, shoot_stable, DynamicsReport, FlowContext, FlowTrace, TraceQuantity,
};
use shrinker_core::geometry::{AxisymTensor, Background};
use shrinker_core::spectral::{
    analytic_stability_spectrum, assemble_operator, commutator_report, index_report, ModeClass, OperatorKind, Sign,
    SpectralDecomposition,
};

use crate::artifacts::{num, svg_plot, Check, Manifest, RunDir, Series, CHECKS_FILE, DIAGNOSTIC_FILE, MANIFEST_FILE};
use crate::config::{Coefficient, ExperimentConfig, Fault, Kind};
use crate::LabError;

/// What a finished run left behind.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub name: String,
    pub dir: std::path::PathBuf,
    pub checks: Vec<Check>,
    pub manifest: Manifest,
}

pub fn background(cfg: &ExperimentConfig) -> Result<Background, LabError> {
    let b = &cfg.background;
    let bg = Background::round_sphere(b.n, b.l_max)?;
    Ok(match b.inject_fault {
        Some(Fault::RmSign) => bg.with_flipped_curvature_sign(),
        None => bg,
    })
}

fn combine(d: &SpectralDecomposition, coeffs: &[Coefficient], l_max: usize) -> Result<AxisymTensor, LabError> {
    let mut h = AxisymTensor::zeros(l_max);
    for c in coeffs {
        h.axpy(c.coeff, &d.mode_tensor(c.mode.resolve(d)?));
    }
    Ok(h)
}

/// A flow run as configured, before any artifacts are written.
pub struct FlowRun {
    pub bg: Background,
    pub ctx: FlowContext,
    pub trace: FlowTrace,
    /// Unstable-mode corrections applied by shooting.
    pub correction: Option<Vec<(usize, f64)>>,
    pub dynamics: DynamicsReport,
}

pub fn flow_run(cfg: &ExperimentConfig) -> Result<FlowRun, LabError> {
    let spec = cfg.flow.as_ref().ok_or_else(|| LabError::Config("missing [flow] section".into()))?;
    let bg = background(cfg)?;
    let ctx = FlowContext::new(&bg)?;
    let h0 = combine(&ctx.decomp, &spec.initial, bg.l_max())?;
    let opts = spec.options();
    let (trace, correction) = if spec.shoot {
        let shot = shoot_stable(&bg, &ctx, &h0, &opts)?;
        (shot.trace, Some(shot.correction))
    } else {
        (evolve_rdtf_with(&bg, &ctx, &h0, &opts)?, None)
    };
    let dynamics = dynamics_report(&bg, &ctx, &trace, &cfg.dynamics.clone().unwrap_or_default());
    Ok(FlowRun { bg, ctx, trace, correction, dynamics })
}

/// Run one experiment into `out_root/<name>`. Failures leave a diagnostic
/// file behind.
pub fn run_experiment(cfg: &ExperimentConfig, out_root: &Path) -> Result<RunOutcome, LabError> {
    cfg.validate()?;
    let mut dir = RunDir::create(out_root.join(cfg.name()))?;
    let start = Instant::now();
    let result = match cfg.kind {
        Kind::Spectrum => spectrum(cfg, &mut dir),
        Kind::Commutators => commutators(cfg, &mut dir),
        Kind::Entropy => entropy(cfg, &mut dir),
        Kind::Flow | Kind::Rates | Kind::Dynamics => flow(cfg, &mut dir),
        Kind::Construct => construct(cfg, &mut dir),
    };
    let checks = match result {
        Ok(c) => c,
        Err(e) => {
            let text = format!("run `{}` ({}) failed\n{e}\n\nconfig:\n{}\n", cfg.name(), cfg.kind.name(), config_toml(cfg));
            let _ = std::fs::write(dir.path.join(DIAGNOSTIC_FILE), text);
            return Err(e);
        }
    };
    dir.write_json(CHECKS_FILE, &checks)?;
    let config = serde_json::to_value(cfg).map_err(|e| LabError::Io(e.to_string()))?;
    let manifest = Manifest {
        name: cfg.name().to_string(),
        kind: cfg.kind.name().to_string(),
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        config_sha256: crate::artifacts::sha256_hex(config_toml(cfg).as_bytes()),
        config,
        wall_time_s: start.elapsed().as_secs_f64(),
        content_hash: dir.content_hash(),
        files: dir.files.clone(),
    };
    let mut data = serde_json::to_vec_pretty(&manifest).map_err(|e| LabError::Io(e.to_string()))?;
    data.push(b'\n');
    let mpath = dir.path.join(MANIFEST_FILE);
    std::fs::write(&mpath, data).map_err(|e| LabError::Io(format!("{}: {e}", mpath.display())))?;
    Ok(RunOutcome { name: cfg.name().to_string(), dir: dir.path, checks, manifest })
}

fn config_toml(cfg: &ExperimentConfig) -> String {
    toml::to_string(cfg).unwrap_or_default()
}

fn class_name(c: Option<ModeClass>) -> &'static str {
    match c {
        Some(ModeClass::Essential) => "essential",
        Some(ModeClass::Lie) => "lie",
        None => "",
    }
}

fn spectrum(cfg: &ExperimentConfig, dir: &mut RunDir) -> Result<Vec<Check>, LabError> {
    let bg = background(cfg)?;
    let stability = cfg.spectrum.as_ref().is_none_or(|s| s.operator == "stability");
    let kind = if stability { OperatorKind::Stability } else { OperatorKind::Gauge };
    let d = SpectralDecomposition::new(&bg, &assemble_operator(&bg, kind)?)?;
    let rows: Vec<Vec<String>> = d
        .modes
        .iter()
        .enumerate()
        .map(|(i, m)| {
            vec![i.to_string(), m.degree.to_string(), num(m.eigenvalue), class_name(m.class).into(), m.sign.symbol().into(), num(m.residual)]
        })
        .collect();
    dir.write_csv("spectrum.csv", &["index", "degree", "eigenvalue", "class", "sign", "residual"], &rows)?;
    let mut series = Vec::new();
    for (label, c) in [("essential", Some(ModeClass::Essential)), ("lie", Some(ModeClass::Lie)), ("gauge", None)] {
        let pts: Vec<(f64, f64)> = d.modes.iter().filter(|m| m.class == c).map(|m| (m.degree as f64, m.eigenvalue)).collect();
        if !pts.is_empty() {
            series.push(Series { label, points: pts });
        }
    }
    dir.write("spectrum.svg", svg_plot("spectrum", "degree l", "eigenvalue", &series, false, true).as_bytes())?;

    let mut checks = Vec::new();
    let worst_residual = d.modes.iter().map(|m| m.residual).fold(0.0, f64::max);
    checks.push(Check::at_most("mode_residual", worst_residual, 1e-8, "max |A e - lambda e| over modes"));
    if !stability {
        return Ok(checks);
    }
    let n = bg.dim() as f64;
    let nearest = |lam: f64, class: ModeClass| {
        d.modes.iter().filter(|m| m.class == Some(class)).map(|m| (m.eigenvalue - lam).abs()).fold(f64::INFINITY, f64::min)
    };
    checks.push(Check::at_most("eigenvalue_ricci", nearest(1.0, ModeClass::Essential), 1e-8, "essential eigenvalue 1"));
    let generic = 1.0 - n / (2.0 * (n - 1.0));
    checks.push(Check::at_most("eigenvalue_generic", nearest(generic, ModeClass::Lie), 1e-8, format!("Lie eigenvalue {generic}")));
    let stable = -2.0 / (n - 1.0);
    let top_negative = d
        .modes
        .iter()
        .filter(|m| m.class == Some(ModeClass::Essential) && m.sign == Sign::Stable)
        .map(|m| m.eigenvalue)
        .fold(f64::NEG_INFINITY, f64::max);
    checks.push(Check::at_most(
        "eigenvalue_stable_essential",
        (top_negative - stable).abs(),
        1e-8,
        format!("largest negative essential eigenvalue {top_negative} vs {stable}"),
    ));
    let want = analytic_stability_spectrum(bg.dim(), bg.l_max());
    let err = if want.len() == d.modes.len() {
        d.modes.iter().zip(&want).map(|(m, w)| (m.eigenvalue - w.0).abs()).fold(0.0, f64::max)
    } else {
        f64::INFINITY
    };
    checks.push(Check::at_most("analytic_spectrum", err, 1e-8, format!("{} modes against the closed-form ladder", want.len())));
    if bg.is_shrinker() {
        let r = index_report(&bg)?;
        checks.push(Check::new(
            "index_agreement",
            r.gen_index == r.gauge_index,
            r.gen_index as f64,
            r.gauge_index as f64,
            format!("generic index {} vs gauge index {}; essential index {}", r.gen_index, r.gauge_index, r.ess_index),
        ));
    }
    Ok(checks)
}

fn commutators(cfg: &ExperimentConfig, dir: &mut RunDir) -> Result<Vec<Check>, LabError> {
    let bg = background(cfg)?;
    let samples = cfg.commutators.as_ref().map_or(100, |c| c.samples);
    let r = commutator_report(&bg, samples, cfg.seed)?;
    let rows: Vec<Vec<String>> = r
        .checks
        .iter()
        .map(|c| vec![c.name.clone(), num(c.max_residual), num(c.tolerance), c.samples.to_string(), c.passed.to_string()])
        .collect();
    dir.write_csv("commutators.csv", &["identity", "max_residual", "tolerance", "samples", "passed"], &rows)?;
    Ok(r.checks
        .iter()
        .map(|c| Check::new(&c.name, c.passed, c.max_residual, c.tolerance, format!("{} random samples", c.samples)))
        .collect())
}

fn entropy(cfg: &ExperimentConfig, dir: &mut RunDir) -> Result<Vec<Check>, LabError> {
    let spec = cfg.entropy.clone().unwrap_or_default();
    let bg = background(cfg)?;
    let zero = AxisymTensor::zeros(bg.l_max());
    let mu0 = mu_entropy(&bg, &zero)?.mu;
    let closed = mu_closed_form(bg.dim(), 1.0);
    let mut checks = vec![Check::at_most("mu_shrinker", (mu0 - closed).abs(), 1e-8, format!("mu = {mu0} vs closed form {closed}"))];
    let d = SpectralDecomposition::new(&bg, &assemble_operator(&bg, OperatorKind::Stability)?)?;
    let mut rows = Vec::new();
    for m in &spec.modes {
        let i = m.resolve(&d)?;
        let h = d.mode_tensor(i);
        let sv = second_variation(&bg, &d, &h)?;
        let fd = fd_second_variation(&bg, &h, &spec.fd_steps)?;
        let label = String::from(m.clone());
        rows.push(vec![label.clone(), i.to_string(), num(d.modes[i].eigenvalue), num(sv.spectral), num(sv.operator), num(fd.estimate)]);
        let name = format!("second_variation {label}");
        checks.push(if sv.spectral.abs() > 1e-12 {
            let rel = (fd.estimate - sv.spectral).abs() / sv.spectral.abs();
            Check::at_most(&name, rel, 1e-2, format!("relative gap of finite differences {} to spectral form {}", fd.estimate, sv.spectral))
        } else {
            Check::at_most(&name, fd.estimate.abs(), 1e-4, "finite differences on a mode outside the essential sector")
        });
    }
    dir.write_csv("entropy.csv", &["mode", "index", "eigenvalue", "spectral", "operator", "finite_difference"], &rows)?;
    if let (Some(first), false) = (spec.modes.first(), spec.curve.is_empty()) {
        let h = d.mode_tensor(first.resolve(&d)?);
        let mut pts = Vec::new();
        for &s in &spec.curve {
            pts.push((s, mu_entropy(&bg, &h.scaled(s))?.mu));
        }
        let rows: Vec<Vec<String>> = pts.iter().map(|(s, m)| vec![num(*s), num(*m)]).collect();
        dir.write_csv("entropy_curve.csv", &["s", "mu"], &rows)?;
        let title = format!("mu(g + s h, 1) along {}", String::from(first.clone()));
        dir.write("entropy_curve.svg", svg_plot(&title, "s", "mu", &[Series { label: "mu", points: pts }], false, false).as_bytes())?;
    }
    Ok(checks)
}

fn flow(cfg: &ExperimentConfig, dir: &mut RunDir) -> Result<Vec<Check>, LabError> {
    let run = flow_run(cfg)?;
    let d = &run.ctx.decomp;
    let mut header: Vec<String> = ["tau", "l2f", "hw", "c0", "c2", "mu", "dt"].iter().map(|s| s.to_string()).collect();
    header.extend((0..d.modes.len()).map(|i| format!("a{i}")));
    let rows: Vec<Vec<String>> = run
        .trace
        .samples
        .iter()
        .map(|s| {
            let mut r = vec![num(s.tau), num(s.l2f_norm), num(s.hw_norm), num(s.c0_est), num(s.c2_est), s.mu.map_or(String::new(), num), num(s.dt)];
            r.extend(s.modal.iter().map(|a| num(*a)));
            r
        })
        .collect();
    let hdr: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    dir.write_csv("trace.csv", &hdr, &rows)?;
    let pts = |f: &dyn Fn(&shrinker_core::flows::FlowSample) -> f64| run.trace.samples.iter().map(|s| (s.tau, f(s))).collect();
    let series = [Series { label: "L2_f norm", points: pts(&|s| s.l2f_norm) }, Series { label: "H_W norm", points: pts(&|s| s.hw_norm) }];
    dir.write("trace.svg", svg_plot(&format!("{} decay", cfg.name()), "tau", "norm", &series, true, false).as_bytes())?;

    let mut checks = vec![Check::new(
        "flow_completed",
        run.trace.halted.is_none(),
        run.trace.last().tau,
        cfg.flow.as_ref().map_or(0.0, |f| f.tau_end),
        run.trace.halted.clone().unwrap_or_else(|| format!("{} accepted steps", run.trace.stats.accepted)),
    )];
    checks.extend(run.dynamics.checks.iter().map(Check::from));

    if let Some(corr) = &run.correction {
        let rows: Vec<Vec<String>> = corr.iter().map(|(i, c)| vec![i.to_string(), num(d.modes[*i].eigenvalue), num(*c)]).collect();
        dir.write_csv("shoot.csv", &["mode", "eigenvalue", "correction"], &rows)?;
    }
    if let Some(fits) = &cfg.fit {
        let mut rows = Vec::new();
        for f in fits {
            let q = TraceQuantity::parse(&f.quantity)?;
            let fit = rate_fit_trace(d, &run.trace, f.window, q)?;
            rows.push(vec![f.quantity.clone(), num(f.window.0), num(f.window.1), num(fit.exponent), num(fit.intercept), num(fit.r2), fit.samples.to_string()]);
            if let Some((lo, hi)) = f.expect {
                let inside = (lo..=hi).contains(&fit.exponent);
                let gap = if inside { 0.0 } else { (fit.exponent - lo).abs().min((fit.exponent - hi).abs()) };
                checks.push(Check::new(
                    &format!("rate {}", f.quantity),
                    inside,
                    fit.exponent,
                    if fit.exponent < lo { lo } else { hi },
                    format!("exponent over [{}, {}] expected in [{lo}, {hi}]; distance {gap:e}", f.window.0, f.window.1),
                ));
            }
        }
        dir.write_csv("rates.csv", &["quantity", "window_start", "window_end", "exponent", "intercept", "r2", "samples"], &rows)?;
    }
    if matches!(cfg.kind, Kind::Dynamics) {
        let rows: Vec<Vec<String>> = run
            .dynamics
            .checks
            .iter()
            .map(|c| vec![c.name.clone(), format!("{:?}", c.verdict).to_lowercase(), num(c.measured), num(c.tolerance), c.detail.clone()])
            .collect();
        dir.write_csv("dynamics.csv", &["check", "verdict", "measured", "tolerance", "detail"], &rows)?;
    }
    Ok(checks)
}

/// The constructed solution and, when configured, its strata partner.
pub struct ConstructRun {
    pub decomp: SpectralDecomposition,
    pub solution: ConstructedSolution,
    pub prescribed: Vec<(usize, f64)>,
    pub partner: Option<ConstructedSolution>,
}

pub fn construct_run(cfg: &ExperimentConfig) -> Result<ConstructRun, LabError> {
    let spec = cfg.construct.as_ref().ok_or_else(|| LabError::Config("missing [construct] section".into()))?;
    let bg = background(cfg)?;
    let ctx = FlowContext::new(&bg)?;
    let nl = RdtfNonlinearity::new(&bg, &ctx, spec.radius, spec.c0_samples, cfg.seed)?;
    let mut prescribed = Vec::new();
    for c in &spec.prescribed {
        prescribed.push((c.mode.resolve(&ctx.decomp)?, c.coeff));
    }
    let opts = BuildOptions { anchor: spec.anchor, step: spec.step, horizon: spec.horizon };
    let solution = build_s_general(&ctx.decomp, Some(&nl), spec.direction, &prescribed, &opts)?;
    let partner = match spec.compare_scale {
        Some(s) => {
            let scaled: Vec<(usize, f64)> = prescribed.iter().map(|&(i, a)| (i, s * a)).collect();
            Some(build_s_general(&ctx.decomp, Some(&nl), spec.direction, &scaled, &opts)?)
        }
        None => None,
    };
    Ok(ConstructRun { decomp: ctx.decomp, solution, prescribed, partner })
}

fn construct(cfg: &ExperimentConfig, dir: &mut RunDir) -> Result<Vec<Check>, LabError> {
    let run = construct_run(cfg)?;
    let (d, s) = (&run.decomp, &run.solution);
    let t = &s.trajectory;
    let mut header = vec!["tau".to_string(), "norm".to_string()];
    header.extend(run.prescribed.iter().map(|(i, _)| format!("a{i}")));
    let rows: Vec<Vec<String>> = (0..t.len())
        .map(|k| {
            let mut r = vec![num(t.taus[k]), num(t.norm_at(k))];
            r.extend(run.prescribed.iter().map(|(i, _)| num(t.coords[k][*i])));
            r
        })
        .collect();
    let hdr: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    dir.write_csv("construct.csv", &hdr, &rows)?;
    let rows: Vec<Vec<String>> = s
        .increments
        .iter()
        .enumerate()
        .map(|(k, inc)| vec![(k + 1).to_string(), num(*inc), k.checked_sub(1).and_then(|j| s.contraction.get(j)).map_or(String::new(), |c| num(*c))])
        .collect();
    dir.write_csv("contraction.csv", &["iteration", "increment", "factor"], &rows)?;
    let pts = (0..t.len()).map(|k| (t.taus[k], t.norm_at(k))).collect();
    dir.write("construct.svg", svg_plot("constructed solution", "tau", "|X|", &[Series { label: "|X|", points: pts }], true, false).as_bytes())?;

    let worst = s.contraction.iter().skip(1).cloned().fold(0.0, f64::max);
    let mut checks = vec![
        Check::at_most("contraction", worst, 0.5, format!("largest increment ratio from iteration 2 on; {} iterations", s.iterations)),
        Check::at_most("duhamel_residual", s.residual, 1e-8, "Simpson residual of the final trajectory"),
        Check::at_most("gate", s.gate, 0.25, format!("smallness gate at anchor {}", s.anchor)),
        Check::at_most("tail_bound", s.tail_bound, 1e-10, "truncated Duhamel tails"),
    ];
    // A single Ricci prescription is the conformal family a e^tau g / sqrt(n).
    if let [(i, a)] = run.prescribed[..] {
        let m = &d.modes[i];
        if m.degree == 0 && m.class == Some(ModeClass::Essential) && s.direction == Direction::Ancient {
            let mut err: f64 = 0.0;
            for k in 0..t.len() {
                for (j, v) in t.coords[k].iter().enumerate() {
                    let want = if j == i { a * (m.eigenvalue * t.taus[k]).exp() } else { 0.0 };
                    err = err.max((v - want).abs());
                }
            }
            checks.push(Check::at_most("conformal_family_error", err, 1e-8, "sup over grid and modes"));
        }
    }
    if let Some(p) = &run.partner {
        let (j, a) = run.prescribed[0];
        let scale = cfg.construct.as_ref().and_then(|c| c.compare_scale).unwrap_or(0.0);
        let expected = a * (1.0 - scale);
        let st = strata_verify(d, s, p, j, expected)?;
        let rows: Vec<Vec<String>> = st.taus.iter().zip(&st.residuals).map(|(t, r)| vec![num(*t), num(*r)]).collect();
        dir.write_csv("strata.csv", &["tau", "residual"], &rows)?;
        let pts = st.taus.iter().cloned().zip(st.residuals.iter().cloned()).collect();
        dir.write("strata.svg", svg_plot("strata residual", "tau", "residual", &[Series { label: "residual", points: pts }], true, false).as_bytes())?;
        checks.push(Check::at_most(
            "strata_limit",
            (st.limit_coefficient - expected).abs(),
            1e-6,
            format!("limit coefficient {} vs {expected}", st.limit_coefficient),
        ));
        let positive_side = s.direction == Direction::Ancient;
        let ok = if positive_side { st.delta_prime > 0.0 } else { st.delta_prime < 0.0 };
        checks.push(Check::new(
            "strata_delta_prime",
            ok,
            st.delta_prime,
            0.0,
            if st.floor_limited { "residual at round-off: no decay left to fit".to_string() } else { "fitted residual exponent".to_string() },
        ));
        let dm = dominant_mode_extract(d, &s.trajectory, &p.trajectory, s.direction)?;
        let lam = d.modes[j].eigenvalue;
        checks.push(Check::at_most(
            "dominant_mode_rate",
            (dm.lambda - lam).abs(),
            0.02 * lam.abs().max(1e-2),
            format!("difference decays at {} on mode {} (eigenvalue {})", dm.lambda, dm.mode, dm.eigenvalue),
        ));
    }
    Ok(checks)
}
