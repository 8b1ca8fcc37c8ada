//! Flat `key = value` experiment configuration files.
//!
//! Lines hold one assignment each; `#` starts a comment. Every field has an
//! experiment-specific default, so a minimal file is just
//! `experiment = elliptic_inversion`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    EllipticInversion,
    DebPareto,
    CollapseRate,
    MomentConsistency,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 4] = [
        ExperimentKind::EllipticInversion,
        ExperimentKind::DebPareto,
        ExperimentKind::CollapseRate,
        ExperimentKind::MomentConsistency,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::EllipticInversion => "elliptic_inversion",
            ExperimentKind::DebPareto => "deb_pareto",
            ExperimentKind::CollapseRate => "collapse_rate",
            ExperimentKind::MomentConsistency => "moment_consistency",
        }
    }

    /// One-line description shown by `enki list-experiments`.
    pub fn describe(&self) -> &'static str {
        match self {
            ExperimentKind::EllipticInversion => {
                "1D elliptic source identification: flow variants, traces, reconstruction"
            }
            ExperimentKind::DebPareto => {
                "two-bump Pareto tracing: adaptive vs uniform λ grids with coverage metrics"
            }
            ExperimentKind::CollapseRate => {
                "scalar linear flow: large-time ensemble collapse rates"
            }
            ExperimentKind::MomentConsistency => {
                "large-ensemble scalar flow vs the moment ODE system"
            }
        }
    }
}

impl FromStr for ExperimentKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ExperimentKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown experiment {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Discrete,
    VanillaFlow,
    StabilizedFlow,
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::Discrete => "discrete",
            Variant::VanillaFlow => "vanilla_flow",
            Variant::StabilizedFlow => "stabilized_flow",
        }
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "discrete" => Ok(Variant::Discrete),
            "vanilla_flow" => Ok(Variant::VanillaFlow),
            "stabilized_flow" => Ok(Variant::StabilizedFlow),
            other => Err(format!("unknown variant {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitKind {
    Normal,
    Uniform,
}

impl InitKind {
    pub fn name(&self) -> &'static str {
        match self {
            InitKind::Normal => "normal",
            InitKind::Uniform => "uniform",
        }
    }
}

impl FromStr for InitKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "normal" => Ok(InitKind::Normal),
            "uniform" => Ok(InitKind::Uniform),
            other => Err(format!("unknown init {other:?}")),
        }
    }
}

/// Fully resolved experiment parameters.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    /// Which solver variant an elliptic run uses; None runs both flows.
    pub variant: Option<Variant>,
    pub ensemble_size: usize,
    pub dim: usize,
    pub gamma: f64,
    pub dt: f64,
    pub max_iter: usize,
    pub step: f64,
    pub t_final: f64,
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
    pub n_points: usize,
    pub seed: u64,
    pub init: InitKind,
    /// Std deviation (normal) or half-width (uniform) of the initial draw.
    pub init_spread: f64,
    pub trace_stride: usize,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    /// Experiment defaults; field overrides come from the config file.
    pub fn defaults(experiment: ExperimentKind) -> Self {
        let base = Self {
            experiment,
            variant: None,
            ensemble_size: 20,
            dim: 256,
            gamma: 0.01,
            dt: 1.0,
            max_iter: 50,
            step: 2e-4,
            t_final: 10.0,
            alpha: 0.0,
            beta: 0.0,
            delta: 5e-3,
            n_points: 22,
            seed: 1,
            init: InitKind::Normal,
            init_spread: 1.0,
            trace_stride: 100,
            output_dir: PathBuf::from("enki_output"),
        };
        match experiment {
            ExperimentKind::EllipticInversion => base,
            ExperimentKind::DebPareto => Self {
                ensemble_size: 25,
                dim: 2,
                gamma: 0.0,
                step: 5e-3,
                init: InitKind::Uniform,
                init_spread: 2.0,
                seed: 2024,
                ..base
            },
            ExperimentKind::CollapseRate => Self {
                dim: 1,
                gamma: 0.0,
                step: 1e-3,
                t_final: 100.0,
                init_spread: 2.0,
                trace_stride: 500,
                seed: 20,
                ..base
            },
            ExperimentKind::MomentConsistency => Self {
                ensemble_size: 10_000,
                dim: 1,
                gamma: 0.0,
                step: 1e-3,
                t_final: 2.0,
                trace_stride: 500,
                seed: 99,
                ..base
            },
        }
    }

    /// Range checks; collects every offending field.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut problems = Vec::new();
        if self.ensemble_size == 0 {
            problems.push("j: ensemble size must be at least 1".to_string());
        }
        if self.dim == 0 {
            problems.push("d: dimension must be at least 1".to_string());
        }
        if self.experiment == ExperimentKind::EllipticInversion && self.dim < 2 {
            problems.push("d: the elliptic grid needs at least 2 points".to_string());
        }
        if self.gamma < 0.0 || !self.gamma.is_finite() {
            problems.push(format!("gamma: must be nonnegative, got {}", self.gamma));
        }
        if self.dt <= 0.0 || !self.dt.is_finite() {
            problems.push(format!("dt: must be positive, got {}", self.dt));
        }
        if self.max_iter == 0 {
            problems.push("max_iter: must be at least 1".to_string());
        }
        if self.step <= 0.0 || !self.step.is_finite() {
            problems.push(format!("step: must be positive, got {}", self.step));
        }
        if self.t_final <= 0.0 || !self.t_final.is_finite() {
            problems.push(format!("t_final: must be positive, got {}", self.t_final));
        }
        if !self.alpha.is_finite() || !self.beta.is_finite() {
            problems.push("alpha/beta: must be finite".to_string());
        }
        if self.delta <= 0.0 || !self.delta.is_finite() {
            problems.push(format!("delta: must be positive, got {}", self.delta));
        }
        if self.n_points < 2 {
            problems.push(format!("n_points: must be at least 2, got {}", self.n_points));
        }
        if self.init_spread <= 0.0 || !self.init_spread.is_finite() {
            problems.push(format!("init_spread: must be positive, got {}", self.init_spread));
        }
        if self.trace_stride == 0 {
            problems.push("trace_stride: must be at least 1".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(ConfigError { problems })
        }
    }

    /// Key/value echo of every field, in fixed order.
    pub fn echo(&self) -> Vec<(String, String)> {
        vec![
            ("experiment".into(), self.experiment.name().into()),
            (
                "variant".into(),
                self.variant.map_or("both_flows".into(), |v| v.name().to_string()),
            ),
            ("j".into(), self.ensemble_size.to_string()),
            ("d".into(), self.dim.to_string()),
            ("gamma".into(), enki_core::io::format_float(self.gamma)),
            ("dt".into(), enki_core::io::format_float(self.dt)),
            ("max_iter".into(), self.max_iter.to_string()),
            ("step".into(), enki_core::io::format_float(self.step)),
            ("t_final".into(), enki_core::io::format_float(self.t_final)),
            ("alpha".into(), enki_core::io::format_float(self.alpha)),
            ("beta".into(), enki_core::io::format_float(self.beta)),
            ("delta".into(), enki_core::io::format_float(self.delta)),
            ("n_points".into(), self.n_points.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("init".into(), self.init.name().into()),
            ("init_spread".into(), enki_core::io::format_float(self.init_spread)),
            ("trace_stride".into(), self.trace_stride.to_string()),
        ]
    }
}

/// Validation failure listing every offending field.
#[derive(Debug, Clone)]
pub struct ConfigError {
    pub problems: Vec<String>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "invalid configuration:")?;
        for p in &self.problems {
            writeln!(f, "  - {p}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

/// Parses and validates a config file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
        problems: vec![format!("cannot read {}: {e}", path.display())],
    })?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut pairs = BTreeMap::new();
    let mut problems = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            problems.push(format!("line {}: expected `key = value`, got {raw:?}", lineno + 1));
            continue;
        };
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if pairs.insert(key.clone(), value).is_some() {
            problems.push(format!("line {}: duplicate key {key:?}", lineno + 1));
        }
    }

    let experiment = match pairs.remove("experiment") {
        Some(v) => match v.parse::<ExperimentKind>() {
            Ok(k) => Some(k),
            Err(e) => {
                problems.push(format!("experiment: {e}"));
                None
            }
        },
        None => {
            problems.push("experiment: missing (required)".to_string());
            None
        }
    };
    let Some(experiment) = experiment else {
        return Err(ConfigError { problems });
    };

    let mut cfg = ExperimentConfig::defaults(experiment);

    macro_rules! take {
        ($key:literal, $slot:expr) => {
            if let Some(v) = pairs.remove($key) {
                match v.parse() {
                    Ok(parsed) => $slot = parsed,
                    Err(e) => problems.push(format!("{}: {e:?} ({v:?})", $key)),
                }
            }
        };
    }

    if let Some(v) = pairs.remove("variant") {
        match v.parse::<Variant>() {
            Ok(var) => cfg.variant = Some(var),
            Err(e) => problems.push(format!("variant: {e}")),
        }
    }
    take!("j", cfg.ensemble_size);
    take!("d", cfg.dim);
    take!("gamma", cfg.gamma);
    take!("dt", cfg.dt);
    take!("max_iter", cfg.max_iter);
    take!("step", cfg.step);
    take!("t_final", cfg.t_final);
    take!("alpha", cfg.alpha);
    take!("beta", cfg.beta);
    take!("delta", cfg.delta);
    take!("n_points", cfg.n_points);
    take!("seed", cfg.seed);
    take!("init_spread", cfg.init_spread);
    take!("trace_stride", cfg.trace_stride);
    if let Some(v) = pairs.remove("init") {
        match v.parse::<InitKind>() {
            Ok(init) => cfg.init = init,
            Err(e) => problems.push(format!("init: {e}")),
        }
    }
    if let Some(v) = pairs.remove("output_dir") {
        cfg.output_dir = PathBuf::from(v);
    }

    for key in pairs.keys() {
        problems.push(format!("{key}: unknown key"));
    }
    if let Err(e) = cfg.validate() {
        problems.extend(e.problems);
    }
    if !problems.is_empty() {
        return Err(ConfigError { problems });
    }
    Ok(cfg)
}
