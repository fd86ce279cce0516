//! Experiment configuration files and their validation.

use super::presets::{self, PresetSpec};
use crate::expansion::Verdict;
use crate::exact::{RMat, Scalar};
use crate::fractal::{Gdifs, GdifsSpec, Precision, TrajectoryOptions};
use crate::lattice::WalkObservables;
use crate::linalg::{self, Mat, Representation};
use crate::markov::ChainSpec;
use serde::{Deserialize, Serialize};
use std::fmt;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Lyapunov,
    ExpansionCheck,
    WalkEquidistribution,
    FractalDioph,
    MagicFormula,
    RenewalIdentity,
}

impl Kind {
    pub fn needs_chain(self) -> bool {
        !matches!(self, Kind::FractalDioph | Kind::MagicFormula)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixList {
    pub matrices: Vec<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
}

/// Where the chain or fractal comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpecSource {
    Preset(String),
    Chain(ChainSpec),
    Gdifs(GdifsSpec),
    MatrixList(MatrixList),
}

/// Kind-specific parameters; unused fields are ignored by other kinds.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub representation: Option<Representation>,
    /// Vectors whose growth rate is reported (lyapunov).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vectors: Option<Vec<Vec<f64>>>,
    /// Wedge grades (expansion_check).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ks: Option<Vec<usize>>,
    /// Wedges, excursions, points or path pairs, depending on the kind.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc_block: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc_samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batches: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observables: Option<WalkObservables>,
    /// Basis (columns) of the starting lattice; identity by default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_lattice: Option<Vec<Vec<f64>>>,
    /// First replica stream index.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replica_offset: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub digits: Option<usize>,
    /// Explicit `M x N` matrices for trajectory reports (fractal_dioph).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alphas: Option<Vec<Vec<Vec<Scalar>>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<TrajectoryOptions>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub precision: Option<Precision>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_dim: Option<usize>,
}

/// Pass criteria; `None` means the kind's default, where one exists.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exponents: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exponent_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect_verdict: Option<Verdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub siegel_rel_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub escape_eps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub escape_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub independence_level: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub digit_one_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gauss_level: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dimension: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dimension_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub word_level: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub kind: Kind,
    pub spec: SpecSource,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replicas: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(default)]
    pub params: Params,
    #[serde(default)]
    pub thresholds: Thresholds,
}

/// One validation problem, located by a field path such as
/// `spec.chain.trans`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigIssue {
    pub field: String,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

fn issue(field: impl Into<String>, message: impl Into<String>) -> ConfigIssue {
    ConfigIssue { field: field.into(), message: message.into() }
}

#[derive(Debug, Clone)]
pub enum Resolved {
    Chain(ChainSpec),
    Gdifs(Box<Gdifs>),
}

/// A validated configuration with its chain or fractal resolved.
#[derive(Debug, Clone)]
pub struct NormalizedConfig {
    pub config: ExperimentConfig,
    pub resolved: Resolved,
}

impl NormalizedConfig {
    pub fn chain(&self) -> Option<&ChainSpec> {
        match &self.resolved {
            Resolved::Chain(c) => Some(c),
            Resolved::Gdifs(_) => None,
        }
    }

    pub fn gdifs(&self) -> Option<&Gdifs> {
        match &self.resolved {
            Resolved::Gdifs(g) => Some(g),
            Resolved::Chain(_) => None,
        }
    }

    /// The configuration with the spec replaced by its resolved form.
    pub fn to_json(&self) -> serde_json::Value {
        let mut cfg = self.config.clone();
        cfg.spec = match &self.resolved {
            Resolved::Chain(c) => SpecSource::Chain(c.clone()),
            Resolved::Gdifs(g) => SpecSource::Gdifs(g.spec().clone()),
        };
        serde_json::to_value(cfg).expect("config serializes")
    }
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig, Vec<ConfigIssue>> {
    serde_json::from_str(text).map_err(|e| {
        vec![issue(format!("line {}, column {}", e.line(), e.column()), format!("parse error: {e}"))]
    })
}

/// Reads, parses and validates a configuration file.
pub fn validate_config(path: &std::path::Path) -> Result<NormalizedConfig, Vec<ConfigIssue>> {
    let text = std::fs::read_to_string(path).map_err(|e| vec![issue(path.display().to_string(), e.to_string())])?;
    normalize(parse_config(&text)?)
}

fn check_matrix(field: &str, m: &Mat, issues: &mut Vec<ConfigIssue>) {
    if m.nrows() != m.ncols() || m.nrows() == 0 {
        issues.push(issue(field, "matrix must be square and nonempty"));
        return;
    }
    if m.iter().any(|x| !x.is_finite()) {
        issues.push(issue(field, "non-finite entry"));
        return;
    }
    let det = linalg::det(m);
    if (det - 1.0).abs() > 1e-8 {
        issues.push(issue(field, format!("determinant {det} is not 1")));
    }
}

fn check_chain(prefix: &str, c: &ChainSpec, issues: &mut Vec<ConfigIssue>) {
    let before = issues.len();
    let n = c.len();
    if n == 0 {
        issues.push(issue(format!("{prefix}.states"), "no states"));
        return;
    }
    if c.trans.len() != n || c.trans.iter().any(|r| r.len() != n) {
        issues.push(issue(format!("{prefix}.trans"), format!("must be {n}x{n}")));
        return;
    }
    if c.coding.len() != n {
        issues.push(issue(format!("{prefix}.coding"), format!("{} matrices for {n} states", c.coding.len())));
    }
    if c.start.len() != n {
        issues.push(issue(format!("{prefix}.start"), format!("length {} for {n} states", c.start.len())));
    }
    let d = c.coding.first().map_or(0, |g| g.nrows());
    for (i, g) in c.coding.iter().enumerate() {
        if g.shape() != (d, d) {
            issues.push(issue(format!("{prefix}.coding[{i}]"), "shape differs from coding[0]"));
        } else {
            check_matrix(&format!("{prefix}.coding[{i}]"), g, issues);
        }
    }
    for from in 0..n {
        let mut ok = true;
        for to in 0..n {
            let v = c.trans[to][from];
            if !v.is_finite() || v < 0.0 {
                issues.push(issue(format!("{prefix}.trans[{to}][{from}]"), format!("invalid probability {v}")));
                ok = false;
            }
        }
        let sum: f64 = (0..n).map(|to| c.trans[to][from]).sum();
        if ok && (sum - 1.0).abs() > crate::markov::STOCHASTIC_TOL {
            issues.push(issue(
                format!("{prefix}.trans"),
                format!("transitions out of state {from} ('{}') sum to {sum}, not 1", c.states[from]),
            ));
        }
    }
    if c.start.len() == n {
        let s: f64 = c.start.iter().sum();
        if c.start.iter().any(|&x| !x.is_finite() || x < 0.0) || (s - 1.0).abs() > 1e-9 {
            issues.push(issue(format!("{prefix}.start"), format!("not a probability vector (sum {s})")));
        }
    }
    if issues.len() == before && !c.is_irreducible() {
        issues.push(issue(prefix, "chain is reducible"));
    }
}

fn rows_to_mat(rows: &[Vec<f64>]) -> Result<Mat, String> {
    linalg::mat_rows::from_rows(rows)
}

fn require<T>(field: &str, v: &Option<T>, kind: Kind, issues: &mut Vec<ConfigIssue>) {
    if v.is_none() {
        issues.push(issue(field, format!("required for kind {kind:?}")));
    }
}

fn positive(field: &str, v: Option<f64>, issues: &mut Vec<ConfigIssue>) {
    if let Some(x) = v {
        if !(x > 0.0 && x.is_finite()) {
            issues.push(issue(field, format!("must be positive, got {x}")));
        }
    }
}

/// Semantic validation; all problems are collected.
pub fn normalize(cfg: ExperimentConfig) -> Result<NormalizedConfig, Vec<ConfigIssue>> {
    let mut issues = Vec::new();
    if cfg.schema_version != SCHEMA_VERSION {
        issues.push(issue("schema_version", format!("unsupported version {}, expected {SCHEMA_VERSION}", cfg.schema_version)));
    }
    let resolved = match &cfg.spec {
        SpecSource::Preset(name) => match presets::preset(name) {
            Some(PresetSpec::Chain(c)) => Some(Resolved::Chain(c)),
            Some(PresetSpec::Gdifs(g)) => Gdifs::from_spec(g).ok().map(|g| Resolved::Gdifs(Box::new(g))),
            None => {
                issues.push(issue("spec.preset", format!("unknown preset {name:?}")));
                None
            }
        },
        SpecSource::Chain(c) => {
            let before = issues.len();
            check_chain("spec.chain", c, &mut issues);
            (issues.len() == before).then(|| Resolved::Chain(c.clone()))
        }
        SpecSource::MatrixList(ml) => {
            let before = issues.len();
            let mut mats = Vec::new();
            for (i, rows) in ml.matrices.iter().enumerate() {
                match rows_to_mat(rows) {
                    Ok(m) => {
                        check_matrix(&format!("spec.matrix_list.matrices[{i}]"), &m, &mut issues);
                        mats.push(m);
                    }
                    Err(e) => issues.push(issue(format!("spec.matrix_list.matrices[{i}]"), e)),
                }
            }
            if mats.is_empty() {
                issues.push(issue("spec.matrix_list.matrices", "empty list"));
            }
            if mats.iter().any(|m| m.shape() != mats[0].shape()) {
                issues.push(issue("spec.matrix_list.matrices", "matrices differ in shape"));
            }
            let weights = ml.weights.clone().unwrap_or_else(|| vec![1.0; mats.len()]);
            if weights.len() != mats.len() || weights.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
                issues.push(issue("spec.matrix_list.weights", "need one positive weight per matrix"));
            }
            (issues.len() == before).then(|| Resolved::Chain(ChainSpec::iid(mats, &weights)))
        }
        SpecSource::Gdifs(g) => match Gdifs::from_spec(g.clone()) {
            Ok(g) => Some(Resolved::Gdifs(Box::new(g))),
            Err(e) => {
                issues.push(issue("spec.gdifs", e.to_string()));
                None
            }
        },
    };
    let kind = cfg.kind;
    match (&resolved, kind.needs_chain()) {
        (Some(Resolved::Gdifs(_)), true) => issues.push(issue("spec", format!("kind {kind:?} needs a chain"))),
        (Some(Resolved::Chain(_)), false) => issues.push(issue("spec", format!("kind {kind:?} needs a GDIFS"))),
        _ => {}
    }
    let p = &cfg.params;
    let t = &cfg.thresholds;
    match kind {
        Kind::Lyapunov => {
            require("steps", &cfg.steps, kind, &mut issues);
            require("replicas", &cfg.replicas, kind, &mut issues);
            if let (Some(e), Some(Resolved::Chain(c))) = (&t.exponents, &resolved) {
                let rep = p.representation.unwrap_or(Representation::Standard);
                if e.len() != rep.dim(c.dim()) {
                    issues.push(issue("thresholds.exponents", format!("expected {} values", rep.dim(c.dim()))));
                }
            }
        }
        Kind::ExpansionCheck => {
            require("steps", &cfg.steps, kind, &mut issues);
            require("params.samples", &p.samples, kind, &mut issues);
        }
        Kind::WalkEquidistribution => {
            require("steps", &cfg.steps, kind, &mut issues);
            require("replicas", &cfg.replicas, kind, &mut issues);
            if let Some(rows) = &p.start_lattice {
                match rows_to_mat(rows) {
                    Ok(m) => check_matrix("params.start_lattice", &m, &mut issues),
                    Err(e) => issues.push(issue("params.start_lattice", e)),
                }
            }
        }
        Kind::FractalDioph => {
            require("params.samples", &p.samples, kind, &mut issues);
            if let Some(alphas) = &p.alphas {
                for (i, a) in alphas.iter().enumerate() {
                    if let Err(e) = RMat::from_scalars(a) {
                        issues.push(issue(format!("params.alphas[{i}]"), e));
                    }
                }
            }
        }
        Kind::MagicFormula => {
            require("params.samples", &p.samples, kind, &mut issues);
        }
        Kind::RenewalIdentity => {
            require("params.samples", &p.samples, kind, &mut issues);
            if let (Some(a), Some(Resolved::Chain(c))) = (&p.anchor, &resolved) {
                if c.state_index(a).is_none() {
                    issues.push(issue("params.anchor", format!("no state named {a:?}")));
                }
            }
        }
    }
    if cfg.replicas == Some(0) {
        issues.push(issue("replicas", "must be positive"));
    }
    if cfg.steps == Some(0) {
        issues.push(issue("steps", "must be positive"));
    }
    for (name, v) in [
        ("thresholds.exponent_tol", t.exponent_tol),
        ("thresholds.siegel_rel_tol", t.siegel_rel_tol),
        ("thresholds.escape_eps", t.escape_eps),
        ("thresholds.independence_level", t.independence_level),
        ("thresholds.digit_one_tol", t.digit_one_tol),
        ("thresholds.gauss_level", t.gauss_level),
        ("thresholds.dimension_tol", t.dimension_tol),
        ("thresholds.residual_max", t.residual_max),
        ("thresholds.z_max", t.z_max),
        ("thresholds.word_level", t.word_level),
    ] {
        positive(name, v, &mut issues);
    }
    match (issues.is_empty(), resolved) {
        (true, Some(resolved)) => Ok(NormalizedConfig { config: cfg, resolved }),
        (_, _) if !issues.is_empty() => Err(issues),
        _ => Err(vec![issue("spec", "could not be resolved")]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain_config(trans: &str) -> String {
        format!(
            r#"{{"schema_version":1,"kind":"walk_equidistribution","seed":1,"steps":10,"replicas":1,
            "spec":{{"chain":{{"states":["a","b"],"trans":{trans},
            "coding":[[[1,0],[0,1]],[[2,0],[0,0.5]]],"start":[0.5,0.5]}}}}}}"#
        )
    }

    #[test]
    fn row_sum_error_names_the_state() {
        let cfg = parse_config(&chain_config("[[0.5,0.5],[0.49,0.5]]")).unwrap();
        let errs = normalize(cfg).unwrap_err();
        assert_eq!(errs.len(), 1);
        assert!(errs[0].message.contains("'a'") && errs[0].message.contains("0.99"), "{}", errs[0]);
    }

    #[test]
    fn errors_are_aggregated() {
        let text = r#"{"schema_version":2,"kind":"lyapunov","seed":1,
            "spec":{"matrix_list":{"matrices":[[[2,0],[0,2]]]}}}"#;
        let errs = normalize(parse_config(text).unwrap()).unwrap_err();
        let fields: Vec<&str> = errs.iter().map(|e| e.field.as_str()).collect();
        assert!(fields.contains(&"schema_version"));
        assert!(fields.contains(&"spec.matrix_list.matrices[0]"));
        assert!(fields.contains(&"steps"));
        assert!(fields.contains(&"replicas"));
    }

    #[test]
    fn parse_errors_carry_position() {
        let errs = parse_config("{\n  \"schema_version\": 1,\n  \"kind\": }").unwrap_err();
        assert!(errs[0].field.starts_with("line 3"), "{}", errs[0]);
        let errs = parse_config(r#"{"schema_version":1,"kind":"lyapunov","spec":{"preset":"x"}}"#).unwrap_err();
        assert!(errs[0].message.contains("seed"));
    }

    #[test]
    fn presets_resolve() {
        let text = r#"{"schema_version":1,"kind":"lyapunov","seed":1,"steps":5,"replicas":1,
            "spec":{"preset":"sl3-example"}}"#;
        let n = normalize(parse_config(text).unwrap()).unwrap();
        let c = n.chain().unwrap();
        assert_eq!(c.len(), 3);
        assert!(c.start.iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-15));
        let text = r#"{"schema_version":1,"kind":"fractal_dioph","seed":1,"params":{"samples":100},
            "spec":{"preset":"cantor-middle-thirds"}}"#;
        let n = normalize(parse_config(text).unwrap()).unwrap();
        let g = n.gdifs().unwrap();
        assert_eq!(g.edges.len(), 2);
        assert!(g.edges.iter().all(|e| e.exact.ratio == crate::exact::parse_rational("1/3").unwrap()));
    }

    #[test]
    fn kind_and_spec_must_match() {
        let text = r#"{"schema_version":1,"kind":"magic_formula","seed":1,"params":{"samples":3},
            "spec":{"preset":"sl3-example"}}"#;
        assert!(normalize(parse_config(text).unwrap()).is_err());
    }
}
