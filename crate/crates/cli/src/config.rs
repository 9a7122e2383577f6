//! Flat `key = value` run configuration.
//!
//! One key per line, `#` starts a comment. Every key is optional; defaults
//! are listed in [`KEYS`]. Unknown and repeated keys are rejected.

use std::fmt;
use std::path::{Path, PathBuf};

use dtc_core::environment::{DEFAULT_CTM_MAX_ITER, DEFAULT_CTM_TOL};
use dtc_core::evolve::Cadence;
use dtc_core::model::{ModelError, ModelParams};
use dtc_core::observables::DEFAULT_DELTA_THRESHOLD;
use dtc_core::oracle::{Boundary, LatticeSpec};
use dtc_core::state::Pattern;
use dtc_core::tensor::DEFAULT_SVD_CUTOFF;
use thiserror::Error;

/// Recognized keys and their defaults, as they would appear in a file.
pub const KEYS: [(&str, &str); 21] = [
    ("mode", "ipeps"),
    ("J", "1"),
    ("h", "0"),
    ("d_a", "1"),
    ("T", "0.1"),
    ("epsilon", "0"),
    ("dt", "0.005"),
    ("D_max", "2"),
    ("chi", "D_max^2"),
    ("svd_cutoff", "1e-14"),
    ("ctm_tol", "1e-8"),
    ("ctm_max_iter", "200"),
    ("n_cycles", "40"),
    ("initial_state", "neel"),
    ("measure_every", "stroboscopic"),
    ("flip_slices", "1"),
    ("delta_threshold", "0.01"),
    ("output", "out"),
    ("checkpoint_interval", "10"),
    ("lattice", "2x2"),
    ("boundary", "periodic"),
];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid value for `{field}`: {message}")]
    Invalid { field: String, message: String },
}

impl From<ModelError> for ConfigError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Invalid { field, reason } => ConfigError::Invalid { field: field.to_string(), message: reason },
            other => ConfigError::Invalid { field: "model".into(), message: other.to_string() },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub mode: String,
    pub model: ModelParams,
    pub max_bond: usize,
    /// `None` means `D²` of the run's bond dimension.
    pub chi: Option<usize>,
    pub svd_cutoff: f64,
    pub ctm_tol: f64,
    pub ctm_max_iter: usize,
    pub n_cycles: usize,
    pub initial_state: Pattern,
    pub cadence: Cadence,
    pub flip_slices: usize,
    pub delta_threshold: f64,
    pub output: PathBuf,
    /// Cycles between checkpoints; 0 writes only the final one.
    pub checkpoint_interval: usize,
    pub lattice: LatticeSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: "ipeps".into(),
            model: ModelParams::default(),
            max_bond: 2,
            chi: None,
            svd_cutoff: DEFAULT_SVD_CUTOFF,
            ctm_tol: DEFAULT_CTM_TOL,
            ctm_max_iter: DEFAULT_CTM_MAX_ITER,
            n_cycles: 40,
            initial_state: Pattern::Neel,
            cadence: Cadence::Stroboscopic,
            flip_slices: 1,
            delta_threshold: DEFAULT_DELTA_THRESHOLD,
            output: PathBuf::from("out"),
            checkpoint_interval: 10,
            lattice: LatticeSpec { lx: 2, ly: 2, boundary: Boundary::Periodic },
        }
    }
}

fn number<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String>
where
    T::Err: fmt::Display,
{
    value.parse::<T>().map_err(|e| format!("`{key}` = `{value}`: {e}"))
}

fn parse_lattice(value: &str) -> Result<(usize, usize), String> {
    let (x, y) = value
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("lattice `{value}` is not of the form <Lx>x<Ly>"))?;
    Ok((number("lattice", x.trim())?, number("lattice", y.trim())?))
}

fn parse_cadence(value: &str) -> Result<Cadence, String> {
    match value {
        "stroboscopic" => Ok(Cadence::Stroboscopic),
        "per-trotter-step" => Ok(Cadence::PerTrotterStep),
        other => Err(format!("measure_every `{other}` (expected stroboscopic or per-trotter-step)")),
    }
}

impl RunConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        match key {
            "mode" => self.mode = value.to_string(),
            "J" => self.model.coupling = number(key, value)?,
            "h" => self.model.disorder = number(key, value)?,
            "d_a" => self.model.levels = number(key, value)?,
            "T" => self.model.period = number(key, value)?,
            "epsilon" => self.model.epsilon = number(key, value)?,
            "dt" => self.model.dt = number(key, value)?,
            "D_max" => self.max_bond = number(key, value)?,
            "chi" => self.chi = Some(number(key, value)?),
            "svd_cutoff" => self.svd_cutoff = number(key, value)?,
            "ctm_tol" => self.ctm_tol = number(key, value)?,
            "ctm_max_iter" => self.ctm_max_iter = number(key, value)?,
            "n_cycles" => self.n_cycles = number(key, value)?,
            "initial_state" => self.initial_state = value.parse().map_err(|e| format!("{e}"))?,
            "measure_every" => self.cadence = parse_cadence(value)?,
            "flip_slices" => self.flip_slices = number(key, value)?,
            "delta_threshold" => self.delta_threshold = number(key, value)?,
            "output" => self.output = PathBuf::from(value),
            "checkpoint_interval" => self.checkpoint_interval = number(key, value)?,
            "lattice" => {
                let (lx, ly) = parse_lattice(value)?;
                self.lattice.lx = lx;
                self.lattice.ly = ly;
            }
            "boundary" => self.lattice.boundary = value.parse()?,
            other => return Err(format!("unknown key `{other}`")),
        }
        Ok(())
    }

    /// Applies a `key=value` override from the command line.
    pub fn apply_override(&mut self, text: &str) -> Result<(), ConfigError> {
        let (k, v) = text.split_once('=').ok_or_else(|| ConfigError::Parse {
            line: 0,
            message: format!("override `{text}` is not key=value"),
        })?;
        self.set(k.trim(), v.trim()).map_err(|message| ConfigError::Parse { line: 0, message })
    }

    /// Environment dimension for a run at bond dimension `bond`.
    pub fn chi_for(&self, bond: usize) -> usize {
        self.chi.unwrap_or(bond * bond)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |field: &str, message: &str| Err(ConfigError::Invalid { field: field.into(), message: message.into() });
        self.model.validate()?;
        if self.max_bond < 1 {
            return bad("D_max", "must be at least 1");
        }
        if self.chi == Some(0) {
            return bad("chi", "must be at least 1");
        }
        if !(self.svd_cutoff >= 0.0 && self.svd_cutoff < 1.0) {
            return bad("svd_cutoff", "must lie in [0, 1)");
        }
        if !(self.ctm_tol > 0.0) {
            return bad("ctm_tol", "must be positive");
        }
        if self.ctm_max_iter < 1 {
            return bad("ctm_max_iter", "must be at least 1");
        }
        if self.flip_slices < 1 {
            return bad("flip_slices", "must be at least 1");
        }
        if !(self.delta_threshold >= 0.0) {
            return bad("delta_threshold", "must be nonnegative");
        }
        LatticeSpec::new(self.lattice.lx, self.lattice.ly, self.lattice.boundary)
            .map_err(|e| ConfigError::Invalid { field: "lattice".into(), message: e.to_string() })?;
        Ok(())
    }
}

/// Parses configuration text; line numbers in errors are 1-based.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let cfg = parse_entries(text)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Parses and applies overrides, validating only the final result.
pub fn parse_with_overrides(text: &str, overrides: &[String]) -> Result<RunConfig, ConfigError> {
    let mut cfg = parse_entries(text)?;
    for o in overrides {
        cfg.apply_override(o)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_entries(text: &str) -> Result<RunConfig, ConfigError> {
    let mut cfg = RunConfig::default();
    let mut seen: Vec<String> = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| ConfigError::Parse {
            line,
            message: format!("expected key = value, found `{content}`"),
        })?;
        let (key, value) = (key.trim(), value.trim());
        if seen.iter().any(|s| s == key) {
            return Err(ConfigError::Parse { line, message: format!("key `{key}` given twice") });
        }
        cfg.set(key, value).map_err(|message| ConfigError::Parse { line, message })?;
        seen.push(key.to_string());
    }
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    load_config_with_overrides(path, &[])
}

pub fn load_config_with_overrides(path: &Path, overrides: &[String]) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    parse_with_overrides(&text, overrides)
}

/// Shipped scenario files, by name.
pub const PRESETS: [(&str, &str); 7] = [
    ("case-i", include_str!("../../../presets/case-i.cfg")),
    ("case-ii-neel", include_str!("../../../presets/case-ii-neel.cfg")),
    ("case-ii-polarized", include_str!("../../../presets/case-ii-polarized.cfg")),
    ("case-iii-da2", include_str!("../../../presets/case-iii-da2.cfg")),
    ("case-iii-da5", include_str!("../../../presets/case-iii-da5.cfg")),
    ("robustness-h50", include_str!("../../../presets/robustness-h50.cfg")),
    ("robustness-eps1", include_str!("../../../presets/robustness-eps1.cfg")),
];

pub fn preset(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}
