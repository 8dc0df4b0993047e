//! Run configuration: a TOML document, optionally patched by `key=value` overrides.
//!
//! Units follow the dimer convention `J = 1`: energies in units of `J`, times
//! in units of `1/J`.

use std::path::{Path, PathBuf};

use bbgky::bbgky::HierarchyState;
use bbgky::hamiltonian::{Gauge, ModelSpec};
use bbgky::numerics::IntegratorOptions;
use bbgky::oracle::CIState;
use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// A configuration problem, reported with the offending key.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub key: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(key: &str, message: impl Into<String>) -> Self {
        Self { key: key.into(), message: message.into().trim_end().to_string() }
    }
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.key.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.key, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub initial_state: InitialState,
    pub truncation_order: usize,
    #[serde(default)]
    pub correction: CorrectionConfig,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    pub t_final: f64,
    #[serde(default = "default_output_dt")]
    pub output_dt: f64,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub compare_to_exact: bool,
}

fn default_output_dt() -> f64 {
    0.1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GaugeConfig {
    #[default]
    Zero,
    OneBody,
}

impl From<GaugeConfig> for Gauge {
    fn from(g: GaugeConfig) -> Self {
        match g {
            GaugeConfig::Zero => Gauge::Zero,
            GaugeConfig::OneBody => Gauge::OneBody,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DimerBasis {
    /// Left and right wells.
    #[default]
    Site,
    /// Even and odd combinations, with the site-exchange symmetry enabled.
    Parity,
}

/// Complex numbers are written as `[re, im]`.
pub type ComplexPair = [f64; 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    /// Two-site Bose-Hubbard model; give exactly one of `lambda` and `u`.
    Dimer {
        n_particles: usize,
        #[serde(default = "one")]
        j: f64,
        /// `U (N - 1) / (2 J)`.
        lambda: Option<f64>,
        u: Option<f64>,
        #[serde(default)]
        basis: DimerBasis,
        #[serde(default)]
        gauge: GaugeConfig,
    },
    /// Explicit integrals: `h` is `m x m`, `v` is flattened as `((i m + j) m + q) m + p`.
    Inline {
        n_particles: usize,
        h: Vec<Vec<ComplexPair>>,
        v: Vec<ComplexPair>,
        #[serde(default)]
        gauge: GaugeConfig,
    },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialState {
    Fock { occupations: Vec<u32> },
    /// Every particle in one orbital.
    Bec { orbital: Vec<ComplexPair> },
    Noon {
        #[serde(default)]
        theta: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrectionMode {
    #[default]
    None,
    /// Restore the conditions after every write-out step.
    Purify,
    /// Damp negative eigenvalues inside the equations of motion.
    Eom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrectionConfig {
    #[serde(default)]
    pub mode: CorrectionMode,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Damping rate in units of `J`.
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

fn default_epsilon() -> f64 {
    -1e-10
}

fn default_eta() -> f64 {
    10.0
}

fn default_max_iter() -> usize {
    500
}

impl Default for CorrectionConfig {
    fn default() -> Self {
        Self { mode: CorrectionMode::None, epsilon: default_epsilon(), eta: default_eta(), max_iter: default_max_iter() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    #[serde(default = "default_rtol")]
    pub rtol: f64,
    #[serde(default = "default_atol")]
    pub atol: f64,
    pub h0: Option<f64>,
    #[serde(default = "default_h_min")]
    pub h_min: f64,
    pub h_max: Option<f64>,
    pub max_steps: Option<usize>,
}

fn default_rtol() -> f64 {
    1e-8
}

fn default_atol() -> f64 {
    1e-10
}

fn default_h_min() -> f64 {
    1e-12
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self { rtol: default_rtol(), atol: default_atol(), h0: None, h_min: default_h_min(), h_max: None, max_steps: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    /// Write the final state for `check`.
    #[serde(default = "yes")]
    pub checkpoint: bool,
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

fn yes() -> bool {
    true
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: default_dir(), checkpoint: true }
    }
}

/// Parses the override value as a TOML literal, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("x = {raw}");
    match toml::from_str::<toml::Table>(&doc) {
        Ok(mut t) => t.remove("x").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

/// Sets `a.b.c = value` in a table, creating intermediate tables.
pub fn set_key(table: &mut toml::Table, key: &str, raw: &str) -> Result<(), ConfigError> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::new(key, "malformed key"));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| ConfigError::new(key, format!("`{p}` is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), parse_value(raw));
    Ok(())
}

/// Splits `key=value`.
pub fn parse_override(s: &str) -> Result<(String, String), ConfigError> {
    let (k, v) = s.split_once('=').ok_or_else(|| ConfigError::new("", format!("override `{s}` is not key=value")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

impl RunConfig {
    /// Parses a document; parse errors carry line and column.
    pub fn from_toml(text: &str, overrides: &[(String, String)]) -> Result<Self, ConfigError> {
        let cfg: Self = if overrides.is_empty() {
            toml::from_str(text).map_err(|e| ConfigError::new("", e.to_string()))?
        } else {
            let base: toml::Table = toml::from_str(text).map_err(|e| ConfigError::new("", e.to_string()))?;
            match Self::with_overrides(&base, overrides) {
                Ok(c) => c,
                // Blame the first override after which the document stops parsing.
                Err(e) => {
                    for k in 1..=overrides.len() {
                        if let Err(ek) = Self::with_overrides(&base, &overrides[..k]) {
                            return Err(ConfigError::new(&overrides[k - 1].0, ek.message));
                        }
                    }
                    return Err(e);
                }
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn with_overrides(base: &toml::Table, overrides: &[(String, String)]) -> Result<Self, ConfigError> {
        let mut table = base.clone();
        for (k, v) in overrides {
            set_key(&mut table, k, v)?;
        }
        toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| ConfigError::new("", e.to_string()))
    }

    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new("", format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text, overrides).map_err(|e| ConfigError { message: format!("{} ({})", e.message, path.display()), ..e })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn n_particles(&self) -> usize {
        match &self.model {
            ModelConfig::Dimer { n_particles, .. } | ModelConfig::Inline { n_particles, .. } => *n_particles,
        }
    }

    fn modes(&self) -> usize {
        match &self.model {
            ModelConfig::Dimer { .. } => 2,
            ModelConfig::Inline { h, .. } => h.len(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let n = self.n_particles();
        if n == 0 {
            return Err(ConfigError::new("model.n_particles", "must be positive"));
        }
        let m = self.modes();
        match &self.model {
            ModelConfig::Dimer { j, lambda, u, .. } => {
                if !j.is_finite() {
                    return Err(ConfigError::new("model.j", "must be finite"));
                }
                match (lambda, u) {
                    (Some(_), Some(_)) | (None, None) => {
                        return Err(ConfigError::new("model.lambda", "give exactly one of `lambda` and `u`"))
                    }
                    (Some(_), None) if n < 2 => {
                        return Err(ConfigError::new("model.lambda", "needs at least two particles; give `u` instead"))
                    }
                    _ => {}
                }
            }
            ModelConfig::Inline { h, v, .. } => {
                if m == 0 || h.iter().any(|row| row.len() != m) {
                    return Err(ConfigError::new("model.h", "must be a non-empty square matrix"));
                }
                if v.len() != m.pow(4) {
                    return Err(ConfigError::new("model.v", format!("needs m^4 = {} entries, got {}", m.pow(4), v.len())));
                }
            }
        }
        let order = self.truncation_order;
        if order == 0 || order > n {
            return Err(ConfigError::new("truncation_order", format!("{order} outside 1..={n}")));
        }
        match &self.initial_state {
            InitialState::Fock { occupations } => {
                if occupations.len() != m {
                    return Err(ConfigError::new("initial_state.occupations", format!("needs {m} entries")));
                }
                if occupations.iter().map(|&k| k as usize).sum::<usize>() != n {
                    return Err(ConfigError::new("initial_state.occupations", format!("must sum to {n}")));
                }
            }
            InitialState::Bec { orbital } => {
                if orbital.len() != m {
                    return Err(ConfigError::new("initial_state.orbital", format!("needs {m} entries")));
                }
                let norm: f64 = orbital.iter().map(|z| z[0] * z[0] + z[1] * z[1]).sum();
                if (norm - 1.0).abs() > 1e-10 {
                    return Err(ConfigError::new("initial_state.orbital", format!("norm squared is {norm}, not 1")));
                }
            }
            InitialState::Noon { theta } => {
                if m != 2 {
                    return Err(ConfigError::new("initial_state.kind", "a NOON state needs two modes"));
                }
                if !theta.is_finite() {
                    return Err(ConfigError::new("initial_state.theta", "must be finite"));
                }
            }
        }
        let c = &self.correction;
        if c.mode == CorrectionMode::Eom && !(c.eta > 0.0) {
            return Err(ConfigError::new("correction.eta", "must be positive in eom mode"));
        }
        if c.mode != CorrectionMode::None {
            if order < 2 {
                return Err(ConfigError::new("correction.mode", "corrections need truncation_order >= 2"));
            }
            if self.gauge() != GaugeConfig::Zero {
                return Err(ConfigError::new("model.gauge", "corrections need the zero gauge"));
            }
            if c.mode == CorrectionMode::Purify && c.max_iter == 0 {
                return Err(ConfigError::new("correction.max_iter", "must be positive"));
            }
        }
        if !(self.t_final > 0.0) {
            return Err(ConfigError::new("t_final", "must be positive"));
        }
        if !(self.output_dt > 0.0) {
            return Err(ConfigError::new("output_dt", "must be positive"));
        }
        let i = &self.integrator;
        for (key, x) in [("integrator.rtol", i.rtol), ("integrator.atol", i.atol), ("integrator.h_min", i.h_min)] {
            if !(x > 0.0) {
                return Err(ConfigError::new(key, "must be positive"));
            }
        }
        for (key, x) in [("integrator.h0", i.h0), ("integrator.h_max", i.h_max)] {
            if x.is_some_and(|x| !(x > 0.0)) {
                return Err(ConfigError::new(key, "must be positive"));
            }
        }
        Ok(())
    }

    fn gauge(&self) -> GaugeConfig {
        match &self.model {
            ModelConfig::Dimer { gauge, .. } | ModelConfig::Inline { gauge, .. } => *gauge,
        }
    }

    pub fn model_spec(&self) -> Result<ModelSpec, ConfigError> {
        let err = |e: bbgky::Error| ConfigError::new("model", e.to_string());
        let spec = match &self.model {
            ModelConfig::Dimer { n_particles, j, lambda, u, basis, gauge } => {
                let site = match (lambda, u) {
                    (Some(l), None) => ModelSpec::dimer_from_lambda(*j, *l, *n_particles),
                    (None, Some(u)) => ModelSpec::bose_hubbard_dimer(*j, *u, *n_particles),
                    _ => unreachable!("validated"),
                }
                .map_err(err)?;
                let spec = match basis {
                    DimerBasis::Site => site,
                    DimerBasis::Parity => {
                        let d = site.dimer.expect("dimer parameters");
                        ModelSpec::dimer_parity_basis(d.j, d.lambda, *n_particles).map_err(err)?
                    }
                };
                spec.with_gauge((*gauge).into())
            }
            ModelConfig::Inline { n_particles, h, v, gauge } => {
                let h = matrix_from_rows(h);
                let v = v.iter().map(|z| Complex64::new(z[0], z[1])).collect();
                ModelSpec::new(*n_particles, h, v, (*gauge).into()).map_err(err)?
            }
        };
        Ok(spec)
    }

    pub fn initial_wavefunction(&self) -> Result<CIState, ConfigError> {
        let err = |e: bbgky::Error| ConfigError::new("initial_state", e.to_string());
        match &self.initial_state {
            InitialState::Fock { occupations } => CIState::fock(occupations).map_err(err),
            InitialState::Bec { orbital } => {
                let phi: Vec<Complex64> = orbital.iter().map(|z| Complex64::new(z[0], z[1])).collect();
                CIState::bec(&phi, self.n_particles()).map_err(err)
            }
            InitialState::Noon { theta } => CIState::noon(self.n_particles(), *theta).map_err(err),
        }
    }

    pub fn initial_state(&self) -> Result<HierarchyState, ConfigError> {
        HierarchyState::from_ci(&self.initial_wavefunction()?, self.truncation_order)
            .map_err(|e| ConfigError::new("initial_state", e.to_string()))
    }

    pub fn integrator_options(&self) -> IntegratorOptions {
        let i = &self.integrator;
        IntegratorOptions {
            rtol: i.rtol,
            atol: i.atol,
            h0: i.h0,
            h_min: i.h_min,
            h_max: i.h_max,
            output_dt: self.output_dt,
            max_steps: i.max_steps,
        }
    }
}

fn matrix_from_rows(rows: &[Vec<ComplexPair>]) -> Array2<Complex64> {
    let m = rows.len();
    Array2::from_shape_fn((m, m), |(i, j)| Complex64::new(rows[i][j][0], rows[i][j][1]))
}
