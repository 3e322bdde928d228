//! Run configuration: strict JSON, fields as truncated Fourier series.
//!
//! The schema is documented in `schema/run-config.schema.json`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use clap::ValueEnum;
use dcf_core::grid::{Grid, GridRef, GridSpec, ScalarField, SymTensorField, VectorField};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    SolveScalar,
    SolveMomentum,
    SolveCoupled,
    CheckHypotheses,
    Eigen,
    Verify,
    MapPhysical,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::SolveScalar => "solve-scalar",
            Mode::SolveMomentum => "solve-momentum",
            Mode::SolveCoupled => "solve-coupled",
            Mode::CheckHypotheses => "check-hypotheses",
            Mode::Eigen => "eigen",
            Mode::Verify => "verify",
            Mode::MapPhysical => "map-physical",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n: usize,
    #[serde(rename = "N")]
    pub points: usize,
    #[serde(rename = "L", default, skip_serializing_if = "Option::is_none")]
    pub period: Option<f64>,
}

/// One Fourier mode `cos_amp cos(2π k·x/L) + sin_amp sin(2π k·x/L)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FourierMode {
    pub wavevector: Vec<i64>,
    #[serde(default)]
    pub cos_amp: f64,
    #[serde(default)]
    pub sin_amp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Series {
    #[serde(default)]
    pub constant: f64,
    #[serde(default)]
    pub modes: Vec<FourierMode>,
}

/// A bare number is shorthand for `{"constant": number}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FieldSpec {
    Constant(f64),
    Series(Series),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub i: usize,
    pub j: usize,
    pub field: FieldSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RhsConfig {
    Zero,
    Drift,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scalar: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub momentum: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupled_phi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupled_residual: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eigen: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_outer: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_coupled: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dumps: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<f64>,
    #[serde(rename = "C_n_config", default, skip_serializing_if = "Option::is_none")]
    pub c_n_config: Option<f64>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub fields: BTreeMap<String, FieldSpec>,
    #[serde(default)]
    pub vectors: BTreeMap<String, Vec<FieldSpec>>,
    #[serde(default)]
    pub tensors: BTreeMap<String, Vec<TensorEntry>>,
    #[serde(default)]
    pub constants: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub potential: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rhs: Option<RhsConfig>,
}

/// A configuration error with the location it refers to.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub location: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(location: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            location: location.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.location, self.message)
    }
}

impl std::error::Error for ConfigError {}

/// Parses a config, reporting the line, column and field path of the first
/// problem.
pub fn parse(text: &str) -> Result<RunConfig, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let config: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let inner = e.inner();
        let path = e.path().to_string();
        let path = if path == "." { "config".to_string() } else { path };
        ConfigError::new(
            format!("line {} column {} ({path})", inner.line(), inner.column()),
            inner.to_string(),
        )
    })?;
    Ok(config)
}

/// Names a mode reads from each section of the config.
#[derive(Debug, Clone, Copy, Default)]
pub struct Requirements {
    pub fields: &'static [&'static str],
    pub optional_fields: &'static [&'static str],
    pub vectors: &'static [&'static str],
    pub optional_vectors: &'static [&'static str],
    pub optional_tensors: &'static [&'static str],
    pub constants: &'static [&'static str],
    pub optional_constants: &'static [&'static str],
    pub potential: bool,
    pub rhs: bool,
}

pub fn requirements(mode: Mode) -> Requirements {
    match mode {
        Mode::SolveScalar => Requirements {
            fields: &["h", "f", "a"],
            optional_fields: &["b", "c", "d", "psi"],
            optional_vectors: &["Y"],
            ..Default::default()
        },
        Mode::SolveMomentum => Requirements {
            optional_fields: &["rho3"],
            vectors: &["X"],
            ..Default::default()
        },
        Mode::SolveCoupled | Mode::CheckHypotheses => Requirements {
            fields: &["h", "f", "rho1"],
            optional_fields: &[
                "b", "c", "d", "rho2", "rho3", "a_tilde", "lapse", "pi", "matter_psi",
            ],
            optional_vectors: &["Y", "V"],
            optional_tensors: &["Psi"],
            rhs: true,
            ..Default::default()
        },
        Mode::Eigen => Requirements {
            fields: &["h"],
            optional_fields: &["f", "a", "b", "c", "d", "u"],
            optional_vectors: &["Y"],
            ..Default::default()
        },
        Mode::Verify => Requirements {
            optional_fields: &["h", "f", "a", "c", "d", "u_star"],
            optional_vectors: &["Y"],
            optional_constants: &["f0", "r_max"],
            ..Default::default()
        },
        Mode::MapPhysical => Requirements {
            fields: &["pi", "matter_psi"],
            optional_fields: &["lapse", "h_override", "a_tilde"],
            optional_vectors: &["V"],
            optional_tensors: &["U"],
            constants: &["tau_star"],
            potential: true,
            ..Default::default()
        },
    }
}

fn check_names<'a>(
    section: &str,
    present: impl Iterator<Item = &'a String>,
    required: &[&str],
    optional: &[&str],
    mode: Mode,
) -> Result<(), ConfigError> {
    let present: Vec<&String> = present.collect();
    for name in &present {
        if !required.contains(&name.as_str()) && !optional.contains(&name.as_str()) {
            return Err(ConfigError::new(
                format!("{section}.{name}"),
                format!("not used by mode {mode}"),
            ));
        }
    }
    for name in required {
        if !present.iter().any(|p| p.as_str() == *name) {
            return Err(ConfigError::new(
                format!("{section}.{name}"),
                format!("required by mode {mode}"),
            ));
        }
    }
    Ok(())
}

/// A config checked against one mode, with the grid built.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: RunConfig,
    pub mode: Mode,
    pub grid: GridRef,
}

pub fn resolve(config: RunConfig, mode: Mode) -> Result<Resolved, ConfigError> {
    if let Some(declared) = config.mode {
        if declared != mode {
            return Err(ConfigError::new(
                "mode",
                format!("config declares {declared} but the command line asks for {mode}"),
            ));
        }
    }
    let g = &config.grid;
    let spec = GridSpec::new(g.n, g.points, g.period.unwrap_or(2.0 * std::f64::consts::PI))
        .map_err(|e| ConfigError::new("grid", e.to_string()))?;
    let req = requirements(mode);
    check_names("fields", config.fields.keys(), req.fields, req.optional_fields, mode)?;
    check_names("vectors", config.vectors.keys(), req.vectors, req.optional_vectors, mode)?;
    check_names("tensors", config.tensors.keys(), &[], req.optional_tensors, mode)?;
    check_names(
        "constants",
        config.constants.keys(),
        req.constants,
        req.optional_constants,
        mode,
    )?;
    match (req.potential, &config.potential) {
        (true, None) => return Err(ConfigError::new("potential", format!("required by mode {mode}"))),
        (false, Some(_)) => return Err(ConfigError::new("potential", format!("not used by mode {mode}"))),
        _ => {}
    }
    if !req.rhs && config.rhs.is_some() {
        return Err(ConfigError::new("rhs", format!("not used by mode {mode}")));
    }
    for (name, value) in &config.constants {
        if !value.is_finite() {
            return Err(ConfigError::new(format!("constants.{name}"), "must be finite"));
        }
    }
    for (key, value) in [("omega", config.omega), ("C_n_config", config.c_n_config)] {
        if value.is_some_and(|v| !v.is_finite()) {
            return Err(ConfigError::new(key, "must be finite"));
        }
    }
    let grid = Grid::new(spec);
    // Build every field once so that errors surface before any solve.
    for (name, f) in &config.fields {
        build_scalar(&grid, f, &format!("fields.{name}"))?;
    }
    for (name, v) in &config.vectors {
        build_vector(&grid, v, &format!("vectors.{name}"))?;
    }
    for (name, t) in &config.tensors {
        build_tensor(&grid, t, &format!("tensors.{name}"))?;
    }
    Ok(Resolved { config, mode, grid })
}

/// Samples a field spec on the grid. Wavevector entries must satisfy
/// `|k_i| < N/2`.
pub fn build_scalar(grid: &GridRef, spec: &FieldSpec, location: &str) -> Result<ScalarField, ConfigError> {
    let gs = grid.spec();
    let series = match spec {
        FieldSpec::Constant(c) => Series {
            constant: *c,
            modes: Vec::new(),
        },
        FieldSpec::Series(s) => s.clone(),
    };
    if !series.constant.is_finite() {
        return Err(ConfigError::new(location, "constant must be finite"));
    }
    let nyquist = (gs.points / 2) as i64;
    for (m, mode) in series.modes.iter().enumerate() {
        let loc = format!("{location}.modes[{m}]");
        if mode.wavevector.len() != gs.dim {
            return Err(ConfigError::new(
                loc,
                format!("wavevector has {} entries, grid dimension is {}", mode.wavevector.len(), gs.dim),
            ));
        }
        if let Some(k) = mode.wavevector.iter().find(|k| k.abs() >= nyquist) {
            return Err(ConfigError::new(
                loc,
                format!("wavevector entry {k} is not below the Nyquist bound {nyquist}"),
            ));
        }
        if !(mode.cos_amp.is_finite() && mode.sin_amp.is_finite()) {
            return Err(ConfigError::new(loc, "amplitudes must be finite"));
        }
    }
    let scale = 2.0 * std::f64::consts::PI / gs.period;
    Ok(ScalarField::from_fn(grid, |x| {
        series.modes.iter().fold(series.constant, |acc, mode| {
            let phase: f64 = mode
                .wavevector
                .iter()
                .zip(x)
                .map(|(&k, &xi)| k as f64 * xi)
                .sum::<f64>()
                * scale;
            acc + mode.cos_amp * phase.cos() + mode.sin_amp * phase.sin()
        })
    }))
}

pub fn build_vector(grid: &GridRef, specs: &[FieldSpec], location: &str) -> Result<VectorField, ConfigError> {
    let dim = grid.spec().dim;
    if specs.len() != dim {
        return Err(ConfigError::new(
            location,
            format!("expected {dim} components, got {}", specs.len()),
        ));
    }
    let comps = specs
        .iter()
        .enumerate()
        .map(|(i, s)| build_scalar(grid, s, &format!("{location}[{i}]")))
        .collect::<Result<Vec<_>, _>>()?;
    VectorField::new(comps).map_err(|e| ConfigError::new(location, e.to_string()))
}

/// Entries not listed are zero; `(i, j)` and `(j, i)` name the same entry.
pub fn build_tensor(grid: &GridRef, entries: &[TensorEntry], location: &str) -> Result<SymTensorField, ConfigError> {
    let dim = grid.spec().dim;
    let mut table: BTreeMap<(usize, usize), ScalarField> = BTreeMap::new();
    for (e, entry) in entries.iter().enumerate() {
        let loc = format!("{location}[{e}]");
        if entry.i >= dim || entry.j >= dim {
            return Err(ConfigError::new(loc, format!("index out of range for dimension {dim}")));
        }
        let key = (entry.i.min(entry.j), entry.i.max(entry.j));
        if table.contains_key(&key) {
            return Err(ConfigError::new(loc, format!("entry ({}, {}) given twice", key.0, key.1)));
        }
        table.insert(key, build_scalar(grid, &entry.field, &format!("{loc}.field"))?);
    }
    Ok(SymTensorField::from_entries(dim, |i, j| {
        table
            .get(&(i.min(j), i.max(j)))
            .cloned()
            .unwrap_or_else(|| ScalarField::zeros(grid))
    }))
}

impl Resolved {
    pub fn seed(&self, cli_seed: Option<u64>) -> u64 {
        cli_seed.or(self.config.seed).unwrap_or(0)
    }

    pub fn has_field(&self, name: &str) -> bool {
        self.config.fields.contains_key(name)
    }

    pub fn scalar(&self, name: &str) -> Option<ScalarField> {
        self.config.fields.get(name).map(|s| {
            build_scalar(&self.grid, s, name).expect("fields are validated in resolve")
        })
    }

    pub fn scalar_or(&self, name: &str, default: f64) -> ScalarField {
        self.scalar(name)
            .unwrap_or_else(|| ScalarField::constant(&self.grid, default))
    }

    pub fn vector(&self, name: &str) -> Option<VectorField> {
        self.config.vectors.get(name).map(|s| {
            build_vector(&self.grid, s, name).expect("vectors are validated in resolve")
        })
    }

    pub fn vector_or_zero(&self, name: &str) -> VectorField {
        self.vector(name)
            .unwrap_or_else(|| VectorField::zeros(&self.grid))
    }

    pub fn tensor_or_zero(&self, name: &str) -> SymTensorField {
        self.config
            .tensors
            .get(name)
            .map(|t| build_tensor(&self.grid, t, name).expect("tensors are validated in resolve"))
            .unwrap_or_else(|| SymTensorField::zeros(&self.grid))
    }

    pub fn constant(&self, name: &str) -> Option<f64> {
        self.config.constants.get(name).copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"{"grid": {"n": 3, "N": 8}, "fields": {"h": 1, "f": 0.5, "a": {"constant": 0.5}}}"#;

    #[test]
    fn parses_constant_shorthand() {
        let c = parse(BASE).unwrap();
        assert_eq!(c.fields["h"], FieldSpec::Constant(1.0));
        let r = resolve(c, Mode::SolveScalar).unwrap();
        assert_eq!(r.scalar("a").unwrap().max(), 0.5);
    }

    #[test]
    fn unknown_key_is_located() {
        let err = parse(r#"{"grid": {"n": 3, "N": 8, "M": 2}}"#).unwrap_err();
        assert!(err.location.contains("line 1"), "{err}");
        assert!(err.location.contains("grid"), "{err}");
        assert!(err.message.contains("unknown field"), "{err}");
    }

    #[test]
    fn truncated_config_rejected() {
        let err = parse(&BASE[..BASE.len() - 10]).unwrap_err();
        assert!(err.message.contains("EOF"), "{err}");
    }

    #[test]
    fn fourier_series_sampled() {
        let text = r#"{"grid": {"n": 3, "N": 8}, "fields": {"h": {"constant": 1, "modes": [{"wavevector": [1, 0, 0], "sin_amp": 0.5}, {"wavevector": [0, 2, -1], "cos_amp": 0.25}]}, "f": 1, "a": 1}}"#;
        let r = resolve(parse(text).unwrap(), Mode::SolveScalar).unwrap();
        let expect = ScalarField::from_fn(&r.grid, |x| {
            1.0 + 0.5 * x[0].sin() + 0.25 * (2.0 * x[1] - x[2]).cos()
        });
        assert!((&r.scalar("h").unwrap() - &expect).sup_norm() < 1e-14);
    }

    #[test]
    fn period_scales_wavevectors() {
        let text = r#"{"grid": {"n": 3, "N": 8, "L": 1.0}, "fields": {"h": {"modes": [{"wavevector": [1, 0, 0], "cos_amp": 1}]}, "f": 1, "a": 1}}"#;
        let r = resolve(parse(text).unwrap(), Mode::SolveScalar).unwrap();
        let expect = ScalarField::from_fn(&r.grid, |x| (2.0 * std::f64::consts::PI * x[0]).cos());
        assert!((&r.scalar("h").unwrap() - &expect).sup_norm() < 1e-14);
    }

    #[test]
    fn nyquist_and_shape_checks() {
        let text = r#"{"grid": {"n": 3, "N": 8}, "fields": {"h": {"modes": [{"wavevector": [4, 0, 0], "cos_amp": 1}]}, "f": 1, "a": 1}}"#;
        let err = resolve(parse(text).unwrap(), Mode::SolveScalar).unwrap_err();
        assert!(err.location.contains("fields.h.modes[0]"), "{err}");
        let text = r#"{"grid": {"n": 3, "N": 8}, "fields": {"h": {"modes": [{"wavevector": [1, 0], "cos_amp": 1}]}, "f": 1, "a": 1}}"#;
        assert!(resolve(parse(text).unwrap(), Mode::SolveScalar).is_err());
        let text = r#"{"grid": {"n": 3, "N": 8}, "vectors": {"X": [1, 0]}}"#;
        assert!(resolve(parse(text).unwrap(), Mode::SolveMomentum).is_err());
    }

    #[test]
    fn names_checked_against_mode() {
        let err = resolve(parse(BASE).unwrap(), Mode::SolveMomentum).unwrap_err();
        assert_eq!(err.location, "fields.a");
        let text = r#"{"grid": {"n": 3, "N": 8}, "fields": {"h": 1, "f": 0.5}}"#;
        let err = resolve(parse(text).unwrap(), Mode::SolveScalar).unwrap_err();
        assert_eq!(err.location, "fields.a");
        assert!(err.message.contains("required"));
        let text = r#"{"grid": {"n": 3, "N": 8}, "mode": "eigen", "fields": {"h": 1, "f": 0.5, "a": 1}}"#;
        assert!(resolve(parse(text).unwrap(), Mode::SolveScalar).is_err());
    }

    #[test]
    fn tensor_entries_symmetric() {
        let text = r#"{"grid": {"n": 3, "N": 8}, "fields": {"h": 1, "f": 1, "rho1": 1}, "tensors": {"Psi": [{"i": 1, "j": 0, "field": 0.5}]}}"#;
        let r = resolve(parse(text).unwrap(), Mode::SolveCoupled).unwrap();
        let t = r.tensor_or_zero("Psi");
        assert_eq!(t.get(0, 1).max(), 0.5);
        assert_eq!(t.get(1, 0).max(), 0.5);
        assert_eq!(t.get(0, 0).sup_norm(), 0.0);
        let dup = r#"{"grid": {"n": 3, "N": 8}, "fields": {"h": 1, "f": 1, "rho1": 1}, "tensors": {"Psi": [{"i": 1, "j": 0, "field": 0.5}, {"i": 0, "j": 1, "field": 0.5}]}}"#;
        assert!(resolve(parse(dup).unwrap(), Mode::SolveCoupled).is_err());
    }
}
