//! Experiment configuration: one JSON schema shared by every subcommand.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use twoscale_core::analysis::Subdomain;
use twoscale_core::cell::{CellOptions, ParameterGrid};
use twoscale_core::coefficients::{CoefficientFamily, CoefficientModel, MatrixParam, Profile, SourceModel};
use twoscale_core::fem::SolverOptions;
use twoscale_core::macro_solver::{InitialGuess, MacroOptions, PicardOptions};
use twoscale_core::two_scale::{periods, FineOptions};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProblemConfig {
    pub dim: usize,
    pub coefficient: CoefficientFamily,
    pub source: SourceModel,
    pub u_range: [f64; 2],
}

impl Default for ProblemConfig {
    fn default() -> Self {
        Self {
            dim: 1,
            coefficient: CoefficientFamily::SmoothPeriodic {
                profile: Profile::sine(2.0, 1.0),
                matrix: MatrixParam::Scalar(1.0),
            },
            source: SourceModel::constant(1.0),
            u_range: [0.0, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscretizationConfig {
    /// Macro cells per side.
    pub m_x: usize,
    /// Cell-problem cells per side.
    pub m_c: usize,
    /// Fine cells per period.
    pub cells_per_period: usize,
    /// Gauss points per axis; null picks 2, or 3 for cubic-in-u models.
    pub quadrature: Option<usize>,
    /// Parameter-grid samples in u; null picks 5 for u-dependent models.
    pub u_samples: Option<usize>,
    /// Parameter-grid samples per x axis; null picks 1 or 5.
    pub x_samples: Option<usize>,
    /// Refuse fine grids with more unknowns than this.
    pub dof_cap: usize,
}

impl Default for DiscretizationConfig {
    fn default() -> Self {
        Self {
            m_x: 64,
            m_c: 256,
            cells_per_period: 16,
            quadrature: None,
            u_samples: None,
            x_samples: None,
            dof_cap: 4_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NonlinearConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub damping: f64,
    pub initial: InitialGuess,
}

impl Default for NonlinearConfig {
    fn default() -> Self {
        let p = PicardOptions::default();
        Self {
            tol: p.tol,
            max_iter: p.max_iter,
            damping: p.damping,
            initial: p.initial,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    /// Values `1/k`, sorted decreasing.
    pub eps: Vec<f64>,
    pub subdomain: Subdomain,
    /// Holder exponent.
    pub beta: f64,
    /// Truncation orders whose sup-norm errors are reported.
    pub orders: Vec<usize>,
    /// Write nodal fields for every eps.
    pub fields: bool,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            eps: vec![1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0],
            subdomain: Subdomain::default(),
            beta: 0.5,
            orders: vec![0, 1, 2],
            fields: true,
        }
    }
}

/// `g(x, y) = amplitude (1 + x_quadratic x^2) sin(2 pi frequency y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LemmaConfig {
    pub amplitude: f64,
    pub x_quadratic: f64,
    pub frequency: u32,
    /// Lebesgue exponent; null is the sup norm.
    pub p: Option<f64>,
    pub eps: Vec<f64>,
    pub cells_per_period: usize,
}

impl Default for LemmaConfig {
    fn default() -> Self {
        Self {
            amplitude: 1.0,
            x_quadratic: 0.0,
            frequency: 1,
            p: None,
            eps: vec![1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0],
            cells_per_period: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InvarianceConfig {
    /// Parameter value; null is the middle of the u range.
    pub u: Option<f64>,
    pub x: [f64; 2],
    pub shifts: Vec<[f64; 2]>,
}

impl Default for InvarianceConfig {
    fn default() -> Self {
        Self {
            u: None,
            x: [0.5, 0.5],
            shifts: vec![[0.0, 0.0], [1.0, 0.0], [0.25, 0.5], [0.3, 0.1]],
        }
    }
}

/// Thresholds enforced with `--check`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CheckConfig {
    /// Minimum fitted slope per error column.
    pub min_slopes: BTreeMap<String, f64>,
    /// Accepted interval of the lemma slope.
    pub lemma_slope: [f64; 2],
    pub max_rhs_relative_mean: f64,
    pub max_corrector_mean: f64,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            min_slopes: BTreeMap::new(),
            lemma_slope: [0.95, 1.05],
            max_rhs_relative_mean: 1e-8,
            max_corrector_mean: 1e-12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputConfig {
    pub directory: PathBuf,
    pub formats: Vec<Format>,
    /// Seed of the random pair sample of the 2-D Holder seminorm.
    pub seed: u64,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            directory: PathBuf::from("out"),
            formats: vec![Format::Csv, Format::Json],
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    pub discretization: DiscretizationConfig,
    pub nonlinear: NonlinearConfig,
    pub solver: SolverOptions,
    pub study: StudyConfig,
    pub lemma: LemmaConfig,
    pub invariance: InvarianceConfig,
    pub checks: CheckConfig,
    pub output: OutputConfig,
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

/// Sets `path` (dotted) in `doc` to `raw`, parsed as JSON or kept as a string.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| config_err(format!("override `{assignment}` is not of the form key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(config_err(format!("override key `{path}` has an empty segment")));
    }
    let mut node = doc;
    for key in &keys[..keys.len() - 1] {
        if !node.is_object() {
            return Err(config_err(format!("override `{path}` descends into a non-object")));
        }
        node = node
            .as_object_mut()
            .expect("checked object")
            .entry(key.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    match node.as_object_mut() {
        Some(map) => {
            map.insert(keys[keys.len() - 1].to_string(), value);
            Ok(())
        }
        None => Err(config_err(format!("override `{path}` descends into a non-object"))),
    }
}

/// Key paths present in `input` but absent from `effective`.
pub fn unknown_keys(input: &Value, effective: &Value) -> Vec<String> {
    let mut out = Vec::new();
    collect_unknown(input, effective, String::new(), &mut out);
    out
}

fn collect_unknown(input: &Value, effective: &Value, prefix: String, out: &mut Vec<String>) {
    match (input, effective) {
        (Value::Object(a), Value::Object(b)) => {
            for (k, v) in a {
                let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                match b.get(k) {
                    Some(w) => collect_unknown(v, w, path, out),
                    None => out.push(path),
                }
            }
        }
        (Value::Array(a), Value::Array(b)) => {
            for (i, (v, w)) in a.iter().zip(b).enumerate() {
                collect_unknown(v, w, format!("{prefix}[{i}]"), out);
            }
        }
        _ => {}
    }
}

impl ExperimentConfig {
    /// Parses a config document after applying overrides, rejecting
    /// unknown keys and invalid combinations.
    pub fn from_value(mut doc: Value, overrides: &[String]) -> Result<Self, CliError> {
        if !doc.is_object() {
            return Err(config_err("configuration must be a JSON object"));
        }
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: ExperimentConfig = serde_json::from_value(doc.clone()).map_err(|e| config_err(e.to_string()))?;
        let effective = serde_json::to_value(&cfg).map_err(|e| config_err(e.to_string()))?;
        let unknown = unknown_keys(&doc, &effective);
        if !unknown.is_empty() {
            return Err(config_err(format!("unknown configuration keys: {}", unknown.join(", "))));
        }
        cfg.validate()?;
        Ok(cfg.with_defaults_filled())
    }

    pub fn from_str(text: &str, overrides: &[String]) -> Result<Self, CliError> {
        let doc: Value = serde_json::from_str(text).map_err(|e| config_err(format!("invalid JSON: {e}")))?;
        Self::from_value(doc, overrides)
    }

    /// Fills the layered ramp width with two cell spacings.
    fn with_defaults_filled(mut self) -> Self {
        if let CoefficientFamily::Layered { width, .. } = &mut self.problem.coefficient {
            if width.is_none() {
                *width = Some(2.0 / self.discretization.m_c as f64);
            }
        }
        self
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let p = &self.problem;
        if !(p.dim == 1 || p.dim == 2) {
            return Err(config_err(format!("problem.dim = {} must be 1 or 2", p.dim)));
        }
        let d = &self.discretization;
        for (name, v) in [("m_x", d.m_x), ("m_c", d.m_c), ("cells_per_period", d.cells_per_period)] {
            if !v.is_power_of_two() || v < 2 {
                return Err(config_err(format!("discretization.{name} = {v} must be a power of two")));
            }
        }
        if d.cells_per_period < 8 {
            return Err(config_err("discretization.cells_per_period must be at least 8"));
        }
        if d.m_c < d.cells_per_period {
            return Err(config_err(
                "discretization.m_c must be a multiple of cells_per_period so fine nodes land on cell nodes",
            ));
        }
        check_eps_list("study.eps", &self.study.eps)?;
        let eps_min = self.study.eps.iter().copied().fold(f64::INFINITY, f64::min);
        let hx = 1.0 / d.m_x as f64;
        if hx * hx > eps_min / 10.0 {
            return Err(config_err(format!(
                "macro spacing 1/{} is too coarse for eps = {eps_min}: need h^2 <= eps_min / 10",
                d.m_x
            )));
        }
        if !(self.study.beta > 0.0 && self.study.beta < 1.0) {
            return Err(config_err("study.beta must lie in (0, 1)"));
        }
        if self.study.orders.iter().any(|&o| o > 2) {
            return Err(config_err("study.orders must be a subset of {0, 1, 2}"));
        }
        check_eps_list("lemma.eps", &self.lemma.eps)?;
        if let Some(q) = self.lemma.p {
            if !(q >= 1.0) {
                return Err(config_err("lemma.p must be at least 1, or null for the sup norm"));
            }
        }
        if self.lemma.cells_per_period < 8 {
            return Err(config_err("lemma.cells_per_period must be at least 8"));
        }
        if self.output.formats.is_empty() {
            return Err(config_err("output.formats must not be empty"));
        }
        Ok(())
    }

    pub fn model(&self) -> Result<CoefficientModel, CliError> {
        let p = &self.problem;
        Ok(CoefficientModel::new(p.dim, p.coefficient.clone(), p.source, p.u_range)?)
    }

    pub fn picard(&self) -> PicardOptions {
        PicardOptions {
            tol: self.nonlinear.tol,
            max_iter: self.nonlinear.max_iter,
            damping: self.nonlinear.damping,
            initial: self.nonlinear.initial.clone(),
        }
    }

    pub fn cell_options(&self) -> CellOptions {
        CellOptions {
            quadrature: self.discretization.quadrature,
            solver: self.solver,
            ..CellOptions::default()
        }
    }

    pub fn parameter_grid(&self, model: &CoefficientModel) -> Result<ParameterGrid, CliError> {
        let d = &self.discretization;
        Ok(ParameterGrid::for_model(model, d.u_samples, d.x_samples)?)
    }

    pub fn macro_options(&self) -> MacroOptions {
        MacroOptions {
            picard: self.picard(),
            solver: self.solver,
            quadrature: self.discretization.quadrature,
        }
    }

    pub fn fine_options(&self) -> FineOptions {
        FineOptions {
            picard: self.picard(),
            solver: self.solver,
            quadrature: self.discretization.quadrature,
            dof_cap: self.discretization.dof_cap,
        }
    }

    pub fn wants(&self, f: Format) -> bool {
        self.output.formats.contains(&f)
    }
}

fn check_eps_list(name: &str, eps: &[f64]) -> Result<(), CliError> {
    if eps.is_empty() {
        return Err(config_err(format!("{name} must not be empty")));
    }
    for &e in eps {
        periods(e).map_err(|e| config_err(format!("{name}: {e}")))?;
    }
    if eps.windows(2).any(|w| w[0] <= w[1]) {
        return Err(config_err(format!("{name} must be sorted in decreasing order")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = ExperimentConfig::from_str("{}", &[]).unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
    }

    #[test]
    fn unknown_keys_are_all_listed() {
        let err = ExperimentConfig::from_str(
            r#"{"problem": {"dimm": 2, "source": {"constnt": 1}}, "studdy": {}}"#,
            &[],
        )
        .unwrap_err()
        .to_string();
        for k in ["problem.dimm", "problem.source.constnt", "studdy"] {
            assert!(err.contains(k), "{err}");
        }
    }

    #[test]
    fn unknown_family_field_is_reported() {
        let err = ExperimentConfig::from_str(
            r#"{"problem": {"coefficient": {"family": "CONSTANT", "matrix": 2.0, "matirx": 3.0}}}"#,
            &[],
        )
        .unwrap_err()
        .to_string();
        assert!(err.contains("problem.coefficient.matirx"), "{err}");
    }

    #[test]
    fn overrides_use_dotted_paths() {
        let cfg = ExperimentConfig::from_str(
            "{}",
            &["study.beta=0.25".into(), "output.directory=runs/a".into(), "problem.u_range=[0,2]".into()],
        )
        .unwrap();
        assert_eq!(cfg.study.beta, 0.25);
        assert_eq!(cfg.output.directory, PathBuf::from("runs/a"));
        assert_eq!(cfg.problem.u_range, [0.0, 2.0]);
        assert!(ExperimentConfig::from_str("{}", &["study.bta=1".into()]).is_err());
        assert!(ExperimentConfig::from_str("{}", &["nonsense".into()]).is_err());
    }

    #[test]
    fn family_tags_parse() {
        let cfg = ExperimentConfig::from_str(
            r#"{"problem": {"dim": 2, "coefficient": {"family": "LAYERED", "low": 1, "high": 4, "width": 0}}}"#,
            &["discretization.m_x=32".into()],
        )
        .unwrap();
        assert!(matches!(cfg.problem.coefficient, CoefficientFamily::Layered { width: Some(w), .. } if w == 0.0));
        let cfg = ExperimentConfig::from_str(
            r#"{"problem": {"coefficient": {"family": "LAYERED", "low": 1, "high": 4}}}"#,
            &[],
        )
        .unwrap();
        assert!(matches!(cfg.problem.coefficient, CoefficientFamily::Layered { width: Some(w), .. } if w == 2.0 / 256.0));
        let cfg = ExperimentConfig::from_str(
            r#"{"problem": {"coefficient": {"family": "ROSSELAND", "k": {"base": 2, "amplitude": 1}, "b": 0.1}}}"#,
            &[],
        )
        .unwrap();
        assert!(twoscale_core::coefficients::Coefficient::is_cubic_in_u(&cfg.model().unwrap()));
    }

    #[test]
    fn invalid_combinations() {
        let bad = [
            r#"{"discretization": {"m_x": 48}}"#,
            r#"{"discretization": {"cells_per_period": 4}}"#,
            r#"{"study": {"eps": [0.125, 0.25]}}"#,
            r#"{"study": {"eps": [0.3]}}"#,
            r#"{"study": {"beta": 1.0}}"#,
            r#"{"discretization": {"m_x": 8}}"#,
            r#"{"problem": {"dim": 3}}"#,
            r#"{"output": {"formats": []}}"#,
        ];
        for text in bad {
            assert!(matches!(ExperimentConfig::from_str(text, &[]), Err(CliError::Config(_))), "{text}");
        }
    }

    #[test]
    fn effective_config_reproduces_itself() {
        let cfg = ExperimentConfig::from_str(r#"{"study": {"beta": 0.3}}"#, &[]).unwrap();
        let again = ExperimentConfig::from_value(serde_json::to_value(&cfg).unwrap(), &[]).unwrap();
        assert_eq!(cfg, again);
    }
}
