//! Experiment configuration files.
//!
//! One TOML file describes one experiment. The schema is strict: unknown keys
//! and out-of-range values are rejected before anything is computed.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use shrinker_core::construction::Direction;
use shrinker_core::flows::{DynamicsOptions, FlowOptions, StepControl, TraceQuantity, VALIDITY_THRESHOLD};
use shrinker_core::spectral::{ModeClass, SpectralDecomposition};

use crate::LabError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Spectrum,
    Commutators,
    Entropy,
    Flow,
    Construct,
    Rates,
    Dynamics,
}

impl Kind {
    pub const ALL: [Kind; 7] =
        [Kind::Spectrum, Kind::Commutators, Kind::Entropy, Kind::Flow, Kind::Construct, Kind::Rates, Kind::Dynamics];

    pub fn name(&self) -> &'static str {
        match self {
            Kind::Spectrum => "spectrum",
            Kind::Commutators => "commutators",
            Kind::Entropy => "entropy",
            Kind::Flow => "flow",
            Kind::Construct => "construct",
            Kind::Rates => "rates",
            Kind::Dynamics => "dynamics",
        }
    }

    /// The configuration used when a verb is invoked without `--config`.
    pub fn default_config(&self) -> &'static str {
        match self {
            Kind::Spectrum => include_str!("../../../configs/spectrum.toml"),
            Kind::Commutators => include_str!("../../../configs/commutators.toml"),
            Kind::Entropy => include_str!("../../../configs/entropy.toml"),
            Kind::Flow => include_str!("../../../configs/flow_ricci.toml"),
            Kind::Construct => include_str!("../../../configs/construct_ricci.toml"),
            Kind::Rates => include_str!("../../../configs/rates_stable.toml"),
            Kind::Dynamics => include_str!("../../../configs/dynamics_mixed.toml"),
        }
    }

    /// Whether the pipeline integrates a flow.
    pub fn has_flow(&self) -> bool {
        matches!(self, Kind::Flow | Kind::Rates | Kind::Dynamics)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fault {
    /// Flip the sign of the curvature term in every operator.
    RmSign,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackgroundSpec {
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_l_max")]
    pub l_max: usize,
    #[serde(default)]
    pub inject_fault: Option<Fault>,
}

fn default_n() -> usize {
    3
}

fn default_l_max() -> usize {
    16
}

impl Default for BackgroundSpec {
    fn default() -> Self {
        BackgroundSpec { n: default_n(), l_max: default_l_max(), inject_fault: None }
    }
}

/// A mode named by class and eigenvalue, e.g. `ess:-1` or `lie:0.25`, or by
/// position, e.g. `index:4`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ModeRef {
    pub class: Option<ModeClass>,
    pub eigenvalue: Option<f64>,
    pub index: Option<usize>,
}

impl TryFrom<String> for ModeRef {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        let (head, tail) = s.split_once(':').ok_or_else(|| format!("mode `{s}` must look like ess:-1, lie:0.25 or index:3"))?;
        let num = |t: &str| t.trim().parse::<f64>().map_err(|_| format!("bad eigenvalue in mode `{s}`"));
        match head.trim() {
            "ess" => Ok(ModeRef { class: Some(ModeClass::Essential), eigenvalue: Some(num(tail)?), index: None }),
            "lie" => Ok(ModeRef { class: Some(ModeClass::Lie), eigenvalue: Some(num(tail)?), index: None }),
            "any" => Ok(ModeRef { class: None, eigenvalue: Some(num(tail)?), index: None }),
            "index" => {
                let i = tail.trim().parse().map_err(|_| format!("bad index in mode `{s}`"))?;
                Ok(ModeRef { class: None, eigenvalue: None, index: Some(i) })
            }
            other => Err(format!("unknown mode class `{other}` in `{s}`")),
        }
    }
}

impl From<ModeRef> for String {
    fn from(m: ModeRef) -> String {
        if let Some(i) = m.index {
            return format!("index:{i}");
        }
        let c = match m.class {
            Some(ModeClass::Essential) => "ess",
            Some(ModeClass::Lie) => "lie",
            None => "any",
        };
        format!("{c}:{}", m.eigenvalue.unwrap_or(f64::NAN))
    }
}

impl ModeRef {
    /// First matching mode in the decomposition.
    pub fn resolve(&self, d: &SpectralDecomposition) -> Result<usize, LabError> {
        if let Some(i) = self.index {
            return if i < d.modes.len() {
                Ok(i)
            } else {
                Err(LabError::Config(format!("mode index {i} out of range (have {})", d.modes.len())))
            };
        }
        let lam = self.eigenvalue.unwrap_or(f64::NAN);
        d.modes
            .iter()
            .position(|m| (m.eigenvalue - lam).abs() < 1e-6 && (self.class.is_none() || m.class == self.class))
            .ok_or_else(|| LabError::Config(format!("no mode {} in the spectrum", String::from(self.clone()))))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Coefficient {
    pub mode: ModeRef,
    pub coeff: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumSpec {
    /// `stability` or `gauge`.
    pub operator: String,
}

impl Default for SpectrumSpec {
    fn default() -> Self {
        SpectrumSpec { operator: "stability".into() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CommutatorSpec {
    pub samples: usize,
}

impl Default for CommutatorSpec {
    fn default() -> Self {
        CommutatorSpec { samples: 100 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EntropySpec {
    pub modes: Vec<ModeRef>,
    pub fd_steps: Vec<f64>,
    /// Scales `s` at which `mu(g + s h, 1)` is tabulated along the first mode.
    pub curve: Vec<f64>,
}

impl Default for EntropySpec {
    fn default() -> Self {
        EntropySpec { modes: Vec::new(), fd_steps: vec![1e-3], curve: Vec::new() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowSpec {
    pub initial: Vec<Coefficient>,
    pub tau_end: f64,
    pub sample_every: f64,
    pub nonlinear: bool,
    pub entropy: bool,
    /// Correct the unstable coefficients so the run stays near the shrinker.
    pub shoot: bool,
    pub control: StepControl,
    pub c2_threshold: f64,
}

impl Default for FlowSpec {
    fn default() -> Self {
        let o = FlowOptions::default();
        FlowSpec {
            initial: Vec::new(),
            tau_end: o.tau_end,
            sample_every: o.sample_every,
            nonlinear: true,
            entropy: false,
            shoot: false,
            control: o.control,
            c2_threshold: VALIDITY_THRESHOLD,
        }
    }
}

impl FlowSpec {
    pub fn options(&self) -> FlowOptions {
        FlowOptions {
            tau_end: self.tau_end,
            sample_every: self.sample_every,
            control: self.control,
            nonlinear: self.nonlinear,
            entropy: self.entropy,
            c2_threshold: self.c2_threshold,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSpec {
    /// `l2f`, `hw`, `c0`, `c2`, `stable_hw` or `mode:<i>`.
    #[serde(default = "default_quantity")]
    pub quantity: String,
    pub window: (f64, f64),
    /// Accepted exponent range, checked when present.
    #[serde(default)]
    pub expect: Option<(f64, f64)>,
}

fn default_quantity() -> String {
    "l2f".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstructSpec {
    pub direction: Direction,
    pub prescribed: Vec<Coefficient>,
    #[serde(default)]
    pub anchor: f64,
    #[serde(default = "default_step")]
    pub step: f64,
    #[serde(default)]
    pub horizon: Option<f64>,
    /// Radius of the ball on which the quadratic constant is measured.
    #[serde(default = "default_radius")]
    pub radius: f64,
    #[serde(default = "default_c0_samples")]
    pub c0_samples: usize,
    /// Second solution for the strata comparison, with the prescribed
    /// coefficients scaled by this factor.
    #[serde(default)]
    pub compare_scale: Option<f64>,
}

fn default_step() -> f64 {
    0.01
}

fn default_radius() -> f64 {
    1e-2
}

fn default_c0_samples() -> usize {
    16
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Run name; also the output subdirectory. Defaults to the file stem.
    #[serde(default)]
    pub name: Option<String>,
    pub kind: Kind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub background: BackgroundSpec,
    #[serde(default)]
    pub spectrum: Option<SpectrumSpec>,
    #[serde(default)]
    pub commutators: Option<CommutatorSpec>,
    #[serde(default)]
    pub entropy: Option<EntropySpec>,
    #[serde(default)]
    pub flow: Option<FlowSpec>,
    #[serde(default)]
    pub fit: Option<Vec<FitSpec>>,
    #[serde(default)]
    pub dynamics: Option<DynamicsOptions>,
    #[serde(default)]
    pub construct: Option<ConstructSpec>,
}

fn bad(msg: impl Into<String>) -> LabError {
    LabError::Config(msg.into())
}

impl ExperimentConfig {
    pub fn parse(text: &str, fallback_name: &str) -> Result<Self, LabError> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| bad(e.to_string()))?;
        if cfg.name.is_none() {
            cfg.name = Some(fallback_name.to_string());
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, LabError> {
        let text = std::fs::read_to_string(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
        Self::parse(&text, stem).map_err(|e| match e {
            LabError::Config(m) => bad(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn name(&self) -> &str {
        self.name.as_deref().unwrap_or(self.kind.name())
    }

    /// Schema checks beyond what the types enforce.
    pub fn validate(&self) -> Result<(), LabError> {
        let name = self.name();
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
            return Err(bad(format!("run name `{name}` must be non-empty ASCII letters, digits, `_` or `-`")));
        }
        let b = &self.background;
        if !(2..=8).contains(&b.n) {
            return Err(bad(format!("background.n = {} outside 2..=8", b.n)));
        }
        if !(2..=64).contains(&b.l_max) {
            return Err(bad(format!("background.l_max = {} outside 2..=64", b.l_max)));
        }
        let sections = [
            ("spectrum", self.spectrum.is_some(), matches!(self.kind, Kind::Spectrum)),
            ("commutators", self.commutators.is_some(), matches!(self.kind, Kind::Commutators)),
            ("entropy", self.entropy.is_some(), matches!(self.kind, Kind::Entropy)),
            ("flow", self.flow.is_some(), self.kind.has_flow()),
            ("fit", self.fit.is_some(), self.kind.has_flow()),
            ("dynamics", self.dynamics.is_some(), self.kind.has_flow()),
            ("construct", self.construct.is_some(), matches!(self.kind, Kind::Construct)),
        ];
        for (section, present, allowed) in sections {
            if present && !allowed {
                return Err(bad(format!("section [{section}] does not apply to kind `{}`", self.kind.name())));
            }
        }
        if let Some(s) = &self.spectrum {
            if s.operator != "stability" && s.operator != "gauge" {
                return Err(bad(format!("spectrum.operator `{}` must be `stability` or `gauge`", s.operator)));
            }
        }
        if let Some(e) = &self.entropy {
            if e.fd_steps.iter().any(|s| !(*s > 0.0 && *s <= 0.1)) {
                return Err(bad("entropy.fd_steps must lie in (0, 0.1]"));
            }
        }
        if self.kind.has_flow() {
            let f = self.flow.as_ref().ok_or_else(|| bad(format!("kind `{}` needs a [flow] section", self.kind.name())))?;
            if !(f.tau_end > 0.0 && f.tau_end <= 100.0) {
                return Err(bad("flow.tau_end must lie in (0, 100]"));
            }
            if !(f.sample_every > 0.0) {
                return Err(bad("flow.sample_every must be positive"));
            }
        }
        if matches!(self.kind, Kind::Rates) && self.fit.as_ref().is_none_or(|f| f.is_empty()) {
            return Err(bad("kind `rates` needs at least one [[fit]] entry"));
        }
        for f in self.fit.iter().flatten() {
            TraceQuantity::parse(&f.quantity).map_err(|e| bad(e.to_string()))?;
            if !(f.window.1 > f.window.0) {
                return Err(bad("fit.window must be increasing"));
            }
        }
        if matches!(self.kind, Kind::Construct) {
            let c = self.construct.as_ref().ok_or_else(|| bad("kind `construct` needs a [construct] section"))?;
            if !(c.step > 0.0 && c.step <= 0.5) {
                return Err(bad("construct.step must lie in (0, 0.5]"));
            }
            if !(c.radius > 0.0) || c.c0_samples == 0 {
                return Err(bad("construct.radius and construct.c0_samples must be positive"));
            }
        }
        Ok(())
    }
}

/// Expand `--config` arguments: files are taken as-is, directories
/// contribute their `*.toml` files in name order.
pub fn collect_paths(args: &[PathBuf]) -> Result<Vec<PathBuf>, LabError> {
    let mut out = Vec::new();
    for p in args {
        if p.is_dir() {
            let mut v: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(|e| bad(format!("{}: {e}", p.display())))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|q| q.extension().is_some_and(|x| x == "toml"))
                .collect();
            v.sort();
            out.extend(v);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}
