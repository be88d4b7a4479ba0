//! Experiment configuration files.
//!
//! The format is INI-style: `[section]` headers, `key = value` pairs, `#`
//! comments, blank lines. Parsing is strict; unknown sections or keys are
//! rejected so typos cannot silently fall back to defaults.
//!
//! ```text
//! [case]
//! bundle = fixtures/case9
//!
//! [scenario]
//! tripped_line = 8-9
//! record_lines = 4-9, 7-8
//! ```

use crate::case::LineId;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: expected `key = value` or `[section]`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("line {line}: unknown section `{0}`", .section)]
    UnknownSection { line: usize, section: String },
    #[error("line {line}: unknown key `{key}` in section `{section}`")]
    UnknownKey {
        line: usize,
        section: String,
        key: String,
    },
    #[error("line {line}: key `{key}` set twice")]
    DuplicateKey { line: usize, key: String },
    #[error("line {line}: key before any `[section]` header")]
    KeyOutsideSection { line: usize },
    #[error("line {line}: cannot parse `{value}` for `{key}`: {reason}")]
    BadValue {
        line: usize,
        key: String,
        value: String,
        reason: String,
    },
    #[error("missing required key `{0}`")]
    MissingKey(&'static str),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Regression family used for the closure coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClosureMethod {
    GlobalLinear,
    LocalLinear,
    Lowess,
}

impl FromStr for ClosureMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "global" => Ok(ClosureMethod::GlobalLinear),
            "local" => Ok(ClosureMethod::LocalLinear),
            "lowess" => Ok(ClosureMethod::Lowess),
            other => Err(format!(
                "unknown closure method `{other}` (expected global, local, or lowess)"
            )),
        }
    }
}

/// Fully resolved experiment description.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub bundle: PathBuf,
    pub theta: f64,
    pub alpha: f64,
    pub r: f64,
    pub dt: f64,
    pub burn_in_t: f64,
    pub post_t: f64,
    pub tripped_line: Option<LineId>,
    pub record_lines: Vec<LineId>,
    pub record_stride: usize,
    pub m_r: usize,
    pub m_kde: usize,
    pub seed: u64,
    pub n_cells: usize,
    pub padding_stds: f64,
    pub closure_method: ClosureMethod,
    pub span: f64,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            bundle: PathBuf::new(),
            theta: 1.0,
            alpha: 0.05,
            r: 0.0,
            dt: 1e-2,
            burn_in_t: 50.0,
            post_t: 10.0,
            tripped_line: None,
            record_lines: Vec::new(),
            record_stride: 1,
            m_r: 5000,
            m_kde: 10_000,
            seed: 0,
            n_cells: 400,
            padding_stds: 0.75,
            closure_method: ClosureMethod::GlobalLinear,
            span: 0.3,
            output_dir: PathBuf::from("out"),
        }
    }
}

const KNOWN: &[(&str, &[&str])] = &[
    ("case", &["bundle"]),
    ("noise", &["theta", "alpha", "r"]),
    (
        "scenario",
        &[
            "dt",
            "burn_in_t",
            "post_t",
            "tripped_line",
            "record_lines",
            "record_stride",
        ],
    ),
    ("sampling", &["m_r", "m_kde", "seed"]),
    ("grid", &["n_cells", "padding_stds"]),
    ("closure", &["method", "span"]),
    ("output", &["dir"]),
];

fn parse_value<T>(line: usize, key: &str, value: &str) -> Result<T, ConfigError>
where
    T: FromStr,
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::BadValue {
        line,
        key: key.to_string(),
        value: value.to_string(),
        reason: e.to_string(),
    })
}

fn parse_line_id(line: usize, key: &str, value: &str) -> Result<LineId, ConfigError> {
    value.parse().map_err(|e: String| ConfigError::BadValue {
        line,
        key: key.to_string(),
        value: value.to_string(),
        reason: e,
    })
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = ExperimentConfig::default();
        let mut section: Option<&str> = None;
        let mut seen: Vec<(String, String)> = Vec::new();
        let mut have_bundle = false;
        let mut have_lines = false;
        for (idx, raw) in text.lines().enumerate() {
            let lno = idx + 1;
            let trimmed = raw.split('#').next().unwrap_or("").trim();
            if trimmed.is_empty() {
                continue;
            }
            if let Some(name) = trimmed.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| ConfigError::Syntax {
                        line: lno,
                        text: trimmed.to_string(),
                    })?
                    .trim();
                section = Some(
                    KNOWN
                        .iter()
                        .map(|(s, _)| *s)
                        .find(|s| *s == name)
                        .ok_or_else(|| ConfigError::UnknownSection {
                            line: lno,
                            section: name.to_string(),
                        })?,
                );
                continue;
            }
            let (key, value) = trimmed.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: lno,
                text: trimmed.to_string(),
            })?;
            let (key, value) = (key.trim(), value.trim());
            let sec = section.ok_or(ConfigError::KeyOutsideSection { line: lno })?;
            let allowed = KNOWN.iter().find(|(s, _)| *s == sec).unwrap().1;
            if !allowed.contains(&key) {
                return Err(ConfigError::UnknownKey {
                    line: lno,
                    section: sec.to_string(),
                    key: key.to_string(),
                });
            }
            if seen.iter().any(|(s, k)| s == sec && k == key) {
                return Err(ConfigError::DuplicateKey {
                    line: lno,
                    key: key.to_string(),
                });
            }
            seen.push((sec.to_string(), key.to_string()));
            match (sec, key) {
                ("case", "bundle") => {
                    cfg.bundle = PathBuf::from(value);
                    have_bundle = true;
                }
                ("noise", "theta") => cfg.theta = parse_value(lno, key, value)?,
                ("noise", "alpha") => cfg.alpha = parse_value(lno, key, value)?,
                ("noise", "r") => cfg.r = parse_value(lno, key, value)?,
                ("scenario", "dt") => cfg.dt = parse_value(lno, key, value)?,
                ("scenario", "burn_in_t") => cfg.burn_in_t = parse_value(lno, key, value)?,
                ("scenario", "post_t") => cfg.post_t = parse_value(lno, key, value)?,
                ("scenario", "tripped_line") => {
                    cfg.tripped_line = Some(parse_line_id(lno, key, value)?)
                }
                ("scenario", "record_lines") => {
                    cfg.record_lines = value
                        .split(',')
                        .map(|s| parse_line_id(lno, key, s.trim()))
                        .collect::<Result<_, _>>()?;
                    have_lines = true;
                }
                ("scenario", "record_stride") => cfg.record_stride = parse_value(lno, key, value)?,
                ("sampling", "m_r") => cfg.m_r = parse_value(lno, key, value)?,
                ("sampling", "m_kde") => cfg.m_kde = parse_value(lno, key, value)?,
                ("sampling", "seed") => cfg.seed = parse_value(lno, key, value)?,
                ("grid", "n_cells") => cfg.n_cells = parse_value(lno, key, value)?,
                ("grid", "padding_stds") => cfg.padding_stds = parse_value(lno, key, value)?,
                ("closure", "method") => cfg.closure_method = parse_value(lno, key, value)?,
                ("closure", "span") => cfg.span = parse_value(lno, key, value)?,
                ("output", "dir") => cfg.output_dir = PathBuf::from(value),
                _ => unreachable!(),
            }
        }
        if !have_bundle {
            return Err(ConfigError::MissingKey("case.bundle"));
        }
        if !have_lines {
            return Err(ConfigError::MissingKey("scenario.record_lines"));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("noise.theta", self.theta),
            ("scenario.dt", self.dt),
            ("closure.span", self.span),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ConfigError::Invalid(format!("{name} must be positive, got {v}")));
            }
        }
        // alpha = 0 is allowed; the run then fails later with a degenerate
        // sample spread once a grid or bandwidth is requested.
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(ConfigError::Invalid(format!(
                "noise.alpha must be nonnegative, got {}",
                self.alpha
            )));
        }
        if !(0.0..1.0).contains(&self.r) {
            return Err(ConfigError::Invalid(format!(
                "noise.r must lie in [0, 1), got {}",
                self.r
            )));
        }
        if self.burn_in_t < 0.0 || self.post_t < 0.0 {
            return Err(ConfigError::Invalid(
                "scenario times must be nonnegative".to_string(),
            ));
        }
        if self.record_lines.is_empty() {
            return Err(ConfigError::Invalid("no lines to record".to_string()));
        }
        if self.record_stride == 0 {
            return Err(ConfigError::Invalid("record_stride must be positive".to_string()));
        }
        if self.m_r < 2 || self.m_kde < 2 {
            return Err(ConfigError::Invalid("ensemble sizes must be at least 2".to_string()));
        }
        if self.n_cells < 2 {
            return Err(ConfigError::Invalid("grid needs at least 2 cells".to_string()));
        }
        if !(0.5..=1.0).contains(&self.padding_stds) {
            return Err(ConfigError::Invalid(format!(
                "grid.padding_stds must lie in [0.5, 1.0], got {}",
                self.padding_stds
            )));
        }
        if self.m_kde < self.m_r {
            log::warn!(
                "benchmark ensemble ({}) is smaller than the solver ensemble ({}); \
                 the reference densities will be noisier than the method under test",
                self.m_kde,
                self.m_r
            );
        }
        Ok(())
    }
}
