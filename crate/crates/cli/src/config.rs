//! Run configuration: `key = value` lines under `[section]` headers.
//!
//! ```text
//! [coupling]
//! e = 0.2
//! lambda_uv = 1.0
//! spin = false
//!
//! [grid]
//! radial_scheme = linear
//! shells = 2
//! angular_scheme = axes6
//!
//! [task]
//! xi = 0.3, 0, 0
//! xi_list = 0.1,0,0; 0.2,0,0
//! ```
//!
//! Vectors are comma triples; lists of vectors are separated by `;`, lists
//! of scalars by `,`. `#` starts a comment. Unknown keys are rejected.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;

use fiberspec::field::{norm3, polarization_frame};
use fiberspec::format::float;
use fiberspec::quadrature::{directions, is_antipodal};
use fiberspec::spectral::SolverOptions;
use fiberspec::{AngularScheme, CouplingParams, FieldDiscretization, RadialScheme, Vec3};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: unknown key `{key}` in [{section}]")]
    UnknownKey { line: usize, section: String, key: String },

    #[error("{key}: {message}")]
    Range { key: String, message: String },
}

type Result<T> = std::result::Result<T, ConfigError>;

/// Recognized keys per section.
const SCHEMA: &[(&str, &[&str])] = &[
    ("coupling", &["e", "lambda_uv", "sigma_ir", "spin"]),
    ("grid", &["radial_scheme", "shells", "angular_scheme", "antipodal"]),
    ("truncation", &["n_max", "c_max"]),
    ("solver", &["tol", "max_iter", "seed", "dense_threshold"]),
    (
        "task",
        &["xi", "xi_list", "sigma_list", "shells_per_decade", "probe_directions", "kmags", "eps", "fd_step"],
    ),
    ("output", &["directory", "formats"]),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskConfig {
    /// Total momentum for `ground` and `check`.
    pub xi: Vec3,
    /// Momenta for `dispersion`; `check` probes concavity on it when it holds ≥ 3 points.
    pub xi_list: Vec<Vec3>,
    /// Strictly decreasing IR cutoffs for `ir-sweep`.
    pub sigma_list: Vec<f64>,
    pub shells_per_decade: f64,
    /// Directions ω for the resolvent-limit probe.
    pub probe_directions: Vec<Vec3>,
    /// Strictly decreasing |k| sequence for the resolvent-limit probe.
    pub kmags: Vec<f64>,
    pub eps: f64,
    pub fd_step: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputConfig {
    pub directory: PathBuf,
    pub formats: Vec<Format>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub coupling: CouplingParams,
    pub grid: FieldDiscretization,
    pub n_max: usize,
    pub c_max: Option<u8>,
    pub solver: SolverOptions,
    pub task: TaskConfig,
    pub output: OutputConfig,
    /// Human-readable notes for every default that was filled in.
    pub defaults_applied: Vec<String>,
    /// SHA-256 over the sorted canonical `section.key=value` pairs.
    pub hash: String,
}

struct Raw {
    values: BTreeMap<(String, String), (String, usize)>,
    defaults: Vec<String>,
}

impl Raw {
    fn take(&self, section: &str, key: &str) -> Option<&(String, usize)> {
        self.values.get(&(section.to_string(), key.to_string()))
    }

    fn get<T>(&mut self, section: &str, key: &str, default: T, parse: impl Fn(&str) -> Option<T>) -> Result<T>
    where
        T: std::fmt::Debug,
    {
        match self.take(section, key) {
            Some((v, line)) => parse(v).ok_or_else(|| ConfigError::Parse {
                line: *line,
                message: format!("cannot parse `{v}` for {section}.{key}"),
            }),
            None => {
                self.defaults.push(format!("{section}.{key} = {default:?}"));
                Ok(default)
            }
        }
    }

    fn opt<T>(&self, section: &str, key: &str, parse: impl Fn(&str) -> Option<T>) -> Result<Option<T>> {
        match self.take(section, key) {
            Some((v, line)) => parse(v).map(Some).ok_or_else(|| ConfigError::Parse {
                line: *line,
                message: format!("cannot parse `{v}` for {section}.{key}"),
            }),
            None => Ok(None),
        }
    }
}

fn parse_f64(s: &str) -> Option<f64> {
    s.trim().parse().ok().filter(|x: &f64| x.is_finite())
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.trim() {
        "true" => Some(true),
        "false" => Some(false),
        _ => None,
    }
}

fn parse_vec3(s: &str) -> Option<Vec3> {
    let parts: Vec<f64> = s.split(',').map(parse_f64).collect::<Option<_>>()?;
    <[f64; 3]>::try_from(parts).ok()
}

fn parse_vec3_list(s: &str) -> Option<Vec<Vec3>> {
    if s.trim().is_empty() {
        return Some(Vec::new());
    }
    s.split(';').map(parse_vec3).collect()
}

fn parse_f64_list(s: &str) -> Option<Vec<f64>> {
    if s.trim().is_empty() {
        return Some(Vec::new());
    }
    s.split(',').map(parse_f64).collect()
}

fn parse_formats(s: &str) -> Option<Vec<Format>> {
    s.split(',')
        .map(|f| match f.trim() {
            "csv" => Some(Format::Csv),
            "json" => Some(Format::Json),
            _ => None,
        })
        .collect()
}

fn unquote(s: &str) -> &str {
    s.strip_prefix('"').and_then(|r| r.strip_suffix('"')).unwrap_or(s)
}

fn range(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Range { key: key.into(), message: message.into() }
}

fn lex(text: &str) -> Result<Raw> {
    let mut values = BTreeMap::new();
    let mut section: Option<String> = None;
    for (n, raw_line) in text.lines().enumerate() {
        let line = n + 1;
        let content = raw_line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(name) = content.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| ConfigError::Parse { line, message: format!("malformed section header `{content}`") })?
                .trim();
            if !SCHEMA.iter().any(|(s, _)| *s == name) {
                return Err(ConfigError::Parse { line, message: format!("unknown section [{name}]") });
            }
            section = Some(name.to_string());
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| ConfigError::Parse { line, message: format!("expected `key = value`, got `{content}`") })?;
        let key = key.trim();
        let value = unquote(value.trim()).to_string();
        let sec = section
            .clone()
            .ok_or_else(|| ConfigError::Parse { line, message: format!("key `{key}` outside any section") })?;
        let known = SCHEMA.iter().find(|(s, _)| *s == sec).map(|(_, k)| *k).unwrap_or(&[]);
        if !known.contains(&key) {
            return Err(ConfigError::UnknownKey { line, section: sec, key: key.to_string() });
        }
        if values.insert((sec.clone(), key.to_string()), (value, line)).is_some() {
            return Err(ConfigError::Parse { line, message: format!("duplicate key {sec}.{key}") });
        }
    }
    Ok(Raw { values, defaults: Vec::new() })
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut raw = lex(text)?;

        let e = raw.get("coupling", "e", 0.0, parse_f64)?;
        let lambda_uv = raw.get("coupling", "lambda_uv", 1.0, parse_f64)?;
        if !(lambda_uv > 0.0) {
            return Err(range("coupling.lambda_uv", format!("must be positive, got {lambda_uv}")));
        }
        let sigma_ir = match raw.opt("coupling", "sigma_ir", parse_f64)? {
            Some(s) => s,
            None => {
                let s = 0.05 * lambda_uv;
                raw.defaults.push(format!("coupling.sigma_ir = {s} (0.05·lambda_uv)"));
                s
            }
        };
        if !(sigma_ir > 0.0) {
            return Err(range("coupling.sigma_ir", format!("must be positive, got {sigma_ir}")));
        }
        if sigma_ir >= lambda_uv {
            return Err(range(
                "coupling.sigma_ir, coupling.lambda_uv",
                format!("sigma_ir ({sigma_ir}) must be smaller than lambda_uv ({lambda_uv})"),
            ));
        }
        let spin = raw.get("coupling", "spin", false, parse_bool)?;
        let coupling = CouplingParams { e, lambda_uv, sigma_ir, spin };

        let radial = raw.get("grid", "radial_scheme", RadialScheme::Linear, |s| s.parse().ok())?;
        let shells = raw.get("grid", "shells", 2usize, |s| s.trim().parse().ok())?;
        if shells == 0 {
            return Err(range("grid.shells", "must be ≥ 1"));
        }
        let angular = raw.get("grid", "angular_scheme", AngularScheme::Axes6, |s| s.parse().ok())?;
        let closed = is_antipodal(&directions(angular), 1e-12);
        let antipodal_symmetric = raw.get("grid", "antipodal", closed, parse_bool)?;
        if antipodal_symmetric && !closed {
            return Err(range("grid.antipodal", format!("angular scheme {angular} is not closed under ω → −ω")));
        }
        let grid = FieldDiscretization { radial, shells, angular, antipodal_symmetric };

        let n_max = raw.get("truncation", "n_max", 2usize, |s| s.trim().parse().ok())?;
        if n_max > 255 {
            return Err(range("truncation.n_max", format!("must be ≤ 255, got {n_max}")));
        }
        let c_max = raw.opt("truncation", "c_max", |s| s.trim().parse::<u8>().ok())?;
        if c_max == Some(0) {
            return Err(range("truncation.c_max", "must be ≥ 1"));
        }

        let defaults = SolverOptions::default();
        let tol = raw.get("solver", "tol", defaults.tol, parse_f64)?;
        if !(tol > 0.0) {
            return Err(range("solver.tol", format!("must be positive, got {tol}")));
        }
        let max_iter = raw.get("solver", "max_iter", defaults.max_iter, |s| s.trim().parse().ok())?;
        if max_iter == 0 {
            return Err(range("solver.max_iter", "must be ≥ 1"));
        }
        let seed = raw.get("solver", "seed", defaults.seed, |s| s.trim().parse().ok())?;
        let dense_threshold = raw.get("solver", "dense_threshold", defaults.dense_threshold, |s| s.trim().parse().ok())?;
        let solver = SolverOptions { tol, max_iter, seed, dense_threshold, ..defaults };

        let xi = raw.get("task", "xi", [0.0; 3], parse_vec3)?;
        let xi_list = raw.get("task", "xi_list", Vec::new(), parse_vec3_list)?;
        let sigma_list = raw.get("task", "sigma_list", Vec::new(), parse_f64_list)?;
        if sigma_list.iter().any(|s| !(*s > 0.0) || *s >= lambda_uv) {
            return Err(range("task.sigma_list", "every σ must lie in (0, lambda_uv)"));
        }
        if sigma_list.windows(2).any(|w| w[1] >= w[0]) {
            return Err(range("task.sigma_list", "must be strictly decreasing"));
        }
        let shells_per_decade = raw.get("task", "shells_per_decade", 4.0, parse_f64)?;
        if !(shells_per_decade > 0.0) {
            return Err(range("task.shells_per_decade", "must be positive"));
        }
        let default_probe = if norm3(xi) > 0.0 {
            let n = norm3(xi);
            polarization_frame([xi[0] / n, xi[1] / n, xi[2] / n]).map(|(e1, _)| e1).unwrap_or([0.0, 1.0, 0.0])
        } else {
            [0.0, 1.0, 0.0]
        };
        let probe_directions = raw.get("task", "probe_directions", vec![default_probe], parse_vec3_list)?;
        if probe_directions.iter().any(|w| (norm3(*w) - 1.0).abs() > 1e-10) {
            return Err(range("task.probe_directions", "directions must be unit vectors"));
        }
        let kmags = raw.get("task", "kmags", vec![0.2, 0.1, 0.05], parse_f64_list)?;
        if kmags.is_empty() || kmags.iter().any(|k| !(*k > 0.0)) || kmags.windows(2).any(|w| w[1] >= w[0]) {
            return Err(range("task.kmags", "must be positive and strictly decreasing"));
        }
        let eps = raw.get("task", "eps", 0.5, parse_f64)?;
        if !(eps > 0.0 && eps < 1.0) {
            return Err(range("task.eps", format!("must lie in (0,1), got {eps}")));
        }
        let fd_step = raw.opt("task", "fd_step", parse_f64)?;
        if fd_step.is_some_and(|h| !(h > 0.0)) {
            return Err(range("task.fd_step", "must be positive"));
        }
        let task = TaskConfig { xi, xi_list, sigma_list, shells_per_decade, probe_directions, kmags, eps, fd_step };

        let directory = raw.get("output", "directory", PathBuf::from("fiberspec-out"), |s| Some(PathBuf::from(s)))?;
        let formats = raw.get("output", "formats", vec![Format::Csv, Format::Json], parse_formats)?;
        let output = OutputConfig { directory, formats };

        let mut cfg = RunConfig {
            coupling,
            grid,
            n_max,
            c_max,
            solver,
            task,
            output,
            defaults_applied: raw.defaults,
            hash: String::new(),
        };
        cfg.hash = cfg.canonical_hash();
        Ok(cfg)
    }

    /// Sorted `section.key=value` pairs of the resolved configuration.
    /// `output.directory` is excluded: it does not change any artifact.
    pub fn canonical_pairs(&self) -> Vec<(String, String)> {
        let v3 = |v: &Vec3| v.iter().map(|x| float(*x)).collect::<Vec<_>>().join(",");
        let v3s = |vs: &[Vec3]| vs.iter().map(v3).collect::<Vec<_>>().join(";");
        let fs = |xs: &[f64]| xs.iter().map(|x| float(*x)).collect::<Vec<_>>().join(",");
        let c = &self.coupling;
        let t = &self.task;
        let mut pairs: Vec<(String, String)> = [
            ("coupling.e", float(c.e)),
            ("coupling.lambda_uv", float(c.lambda_uv)),
            ("coupling.sigma_ir", float(c.sigma_ir)),
            ("coupling.spin", c.spin.to_string()),
            ("grid.radial_scheme", self.grid.radial.to_string()),
            ("grid.shells", self.grid.shells.to_string()),
            ("grid.angular_scheme", self.grid.angular.to_string()),
            ("grid.antipodal", self.grid.antipodal_symmetric.to_string()),
            ("truncation.n_max", self.n_max.to_string()),
            ("truncation.c_max", self.c_max.map_or("none".into(), |c| c.to_string())),
            ("solver.tol", float(self.solver.tol)),
            ("solver.max_iter", self.solver.max_iter.to_string()),
            ("solver.seed", self.solver.seed.to_string()),
            ("solver.dense_threshold", self.solver.dense_threshold.to_string()),
            ("task.xi", v3(&t.xi)),
            ("task.xi_list", v3s(&t.xi_list)),
            ("task.sigma_list", fs(&t.sigma_list)),
            ("task.shells_per_decade", float(t.shells_per_decade)),
            ("task.probe_directions", v3s(&t.probe_directions)),
            ("task.kmags", fs(&t.kmags)),
            ("task.eps", float(t.eps)),
            ("task.fd_step", t.fd_step.map_or("none".into(), float)),
            (
                "output.formats",
                self.output
                    .formats
                    .iter()
                    .map(|f| match f {
                        Format::Csv => "csv",
                        Format::Json => "json",
                    })
                    .collect::<Vec<_>>()
                    .join(","),
            ),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        pairs.sort();
        pairs
    }

    fn canonical_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for (k, v) in self.canonical_pairs() {
            hasher.update(k.as_bytes());
            hasher.update(b"=");
            hasher.update(v.as_bytes());
            hasher.update(b"\n");
        }
        hex::encode(hasher.finalize())
    }

    pub fn wants(&self, format: Format) -> bool {
        self.output.formats.contains(&format)
    }
}
