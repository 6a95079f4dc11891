//! Flat `key = value` configuration with dotted section keys. `#` starts a
//! comment; blank lines are ignored.

use std::collections::HashSet;
use std::path::PathBuf;

use emcouple::stepper::BoundaryMode;
use serde::Serialize;

pub const KEYS: &[&str] = &[
    "material.epsilon",
    "material.mu",
    "time.dt",
    "time.n_steps",
    "time.cfl_safety",
    "cq.contour_points",
    "stabilization.alpha",
    "mesh.path",
    "mesh.builtin",
    "mesh.divisions",
    "boundary.mode",
    "source.kind",
    "source.center",
    "source.radius",
    "source.polarization",
    "source.omega",
    "source.t0",
    "source.width",
    "outputs.dir",
    "runtime.threads",
    "runtime.seed",
    "runtime.memory_cap_mb",
    "unsafe",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum MeshSpec {
    Path(PathBuf),
    Cube { divisions: usize },
    LShape { divisions: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    /// No initial field and no load.
    Zero,
    /// Initial `E = p bump(x)`, no load.
    Pulse,
    /// Zero initial data, current `J = p bump(x) a(t)`.
    Current,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SourceSpec {
    pub kind: SourceKind,
    pub center: [f64; 3],
    pub radius: f64,
    pub polarization: [f64; 3],
    pub omega: f64,
    pub t0: f64,
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub epsilon: f64,
    pub mu: f64,
    /// `None`: `cfl_safety * dt_max`.
    pub dt: Option<f64>,
    pub n_steps: usize,
    pub cfl_safety: f64,
    /// `None`: `2 n_steps`.
    pub contour_points: Option<usize>,
    pub alpha: f64,
    pub mesh: MeshSpec,
    pub boundary: BoundaryMode,
    pub source: SourceSpec,
    pub outputs_dir: PathBuf,
    pub threads: Option<usize>,
    pub seed: u64,
    pub memory_cap_mb: usize,
    pub allow_unstable: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            epsilon: 1.0,
            mu: 1.0,
            dt: None,
            n_steps: 100,
            cfl_safety: 0.9,
            contour_points: None,
            alpha: 1.0,
            mesh: MeshSpec::Cube { divisions: 2 },
            boundary: BoundaryMode::Coupled,
            source: SourceSpec {
                kind: SourceKind::Zero,
                center: [0.5; 3],
                radius: 0.5,
                polarization: [0.0, 0.0, 1.0],
                omega: 6.0,
                t0: 0.5,
                width: 0.2,
            },
            outputs_dir: PathBuf::from("out"),
            threads: None,
            seed: 0,
            memory_cap_mb: 3072,
            allow_unstable: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

/// Closest known key by edit distance, if reasonably close.
pub fn suggest(key: &str) -> Option<&'static str> {
    KEYS.iter()
        .map(|k| (strsim::levenshtein(key, k), *k))
        .min()
        .filter(|(d, _)| *d <= key.len().max(4) / 2)
        .map(|(_, k)| k)
}

fn value_err(line: usize, key: &str, want: &str, got: &str) -> ConfigError {
    ConfigError(format!("line {line}: {key} expects {want}, got {got:?}"))
}

fn real(line: usize, key: &str, v: &str) -> Result<f64, ConfigError> {
    v.parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| value_err(line, key, "a real number", v))
}

fn count(line: usize, key: &str, v: &str) -> Result<usize, ConfigError> {
    v.parse().map_err(|_| value_err(line, key, "a non-negative integer", v))
}

fn triple(line: usize, key: &str, v: &str) -> Result<[f64; 3], ConfigError> {
    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(value_err(line, key, "three comma-separated reals", v));
    }
    let mut out = [0.0; 3];
    for (o, p) in out.iter_mut().zip(&parts) {
        *o = real(line, key, p)?;
    }
    Ok(out)
}

fn boolean(line: usize, key: &str, v: &str) -> Result<bool, ConfigError> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(value_err(line, key, "true or false", v)),
    }
}

pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let mut cfg = RunConfig::default();
    let mut seen = HashSet::new();
    let (mut path, mut builtin, mut divisions) = (None, None, 2usize);
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, v) = content
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| ConfigError(format!("line {line}: expected 'key = value', got {content:?}")))?;
        if !KEYS.contains(&key) {
            let hint = suggest(key).map(|k| format!("; did you mean '{k}'?")).unwrap_or_default();
            return Err(ConfigError(format!("line {line}: unknown key '{key}'{hint}")));
        }
        if !seen.insert(key.to_string()) {
            return Err(ConfigError(format!("line {line}: duplicate key '{key}'")));
        }
        match key {
            "material.epsilon" => cfg.epsilon = real(line, key, v)?,
            "material.mu" => cfg.mu = real(line, key, v)?,
            "time.dt" => cfg.dt = Some(real(line, key, v)?),
            "time.n_steps" => cfg.n_steps = count(line, key, v)?,
            "time.cfl_safety" => cfg.cfl_safety = real(line, key, v)?,
            "cq.contour_points" => cfg.contour_points = Some(count(line, key, v)?),
            "stabilization.alpha" => cfg.alpha = real(line, key, v)?,
            "mesh.path" => path = Some(PathBuf::from(v)),
            "mesh.builtin" => builtin = Some(v.to_string()),
            "mesh.divisions" => divisions = count(line, key, v)?,
            "boundary.mode" => {
                cfg.boundary = match v {
                    "coupled" => BoundaryMode::Coupled,
                    "reflective" => BoundaryMode::Reflective,
                    _ => return Err(value_err(line, key, "coupled or reflective", v)),
                }
            }
            "source.kind" => {
                cfg.source.kind = match v {
                    "zero" => SourceKind::Zero,
                    "pulse" => SourceKind::Pulse,
                    "current" => SourceKind::Current,
                    _ => return Err(value_err(line, key, "zero, pulse or current", v)),
                }
            }
            "source.center" => cfg.source.center = triple(line, key, v)?,
            "source.radius" => cfg.source.radius = real(line, key, v)?,
            "source.polarization" => cfg.source.polarization = triple(line, key, v)?,
            "source.omega" => cfg.source.omega = real(line, key, v)?,
            "source.t0" => cfg.source.t0 = real(line, key, v)?,
            "source.width" => cfg.source.width = real(line, key, v)?,
            "outputs.dir" => cfg.outputs_dir = PathBuf::from(v),
            "runtime.threads" => cfg.threads = Some(count(line, key, v)?),
            "runtime.seed" => cfg.seed = v.parse().map_err(|_| value_err(line, key, "an integer", v))?,
            "runtime.memory_cap_mb" => cfg.memory_cap_mb = count(line, key, v)?,
            "unsafe" => cfg.allow_unstable = boolean(line, key, v)?,
            _ => unreachable!("key list and match arms agree"),
        }
    }
    if divisions == 0 {
        return Err(ConfigError("mesh.divisions must be positive".into()));
    }
    cfg.mesh = match (path, builtin.as_deref()) {
        (Some(_), Some(_)) => return Err(ConfigError("mesh.path and mesh.builtin are mutually exclusive".into())),
        (Some(p), None) => MeshSpec::Path(p),
        (None, None) | (None, Some("cube")) => MeshSpec::Cube { divisions },
        (None, Some("lshape")) => MeshSpec::LShape { divisions },
        (None, Some(other)) => return Err(ConfigError(format!("mesh.builtin expects cube or lshape, got {other:?}"))),
    };
    if !(cfg.epsilon > 0.0 && cfg.mu > 0.0) {
        return Err(ConfigError("material.epsilon and material.mu must be positive".into()));
    }
    if cfg.threads == Some(0) {
        return Err(ConfigError("runtime.threads must be positive".into()));
    }
    if cfg.source.kind != SourceKind::Zero && !(cfg.source.radius > 0.0) {
        return Err(ConfigError("source.radius must be positive".into()));
    }
    Ok(cfg)
}
