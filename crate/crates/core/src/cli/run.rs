//! Experiment execution and result files.

use super::config::{Kind, NormalizedConfig};
use crate::exact::RMat;
use crate::expansion::{self, ExpansionOptions};
use crate::fractal::{self, Precision};
use crate::lattice::{self, EmpiricalAccumulator, LatticePoint, WalkObservables};
use crate::linalg::{self, Representation};
use crate::markov::{self, replica_rng, ChainSampler, ChainSpec};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
#[error("{kind}: {message}")]
pub struct RunError {
    pub kind: String,
    pub message: String,
}

impl RunError {
    fn new(kind: &str, e: impl std::fmt::Display) -> Self {
        Self { kind: kind.to_string(), message: e.to_string() }
    }

    pub fn record(&self) -> Value {
        json!({ "error": { "type": self.kind, "message": self.message } })
    }
}

macro_rules! alarm {
    ($kind:expr) => {
        |e| RunError::new($kind, e)
    };
}

/// One pass/fail criterion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    /// `"<="` or `">="`.
    pub relation: String,
    pub passed: bool,
}

fn at_most(name: impl Into<String>, value: f64, bound: f64) -> Check {
    Check { name: name.into(), value, bound, relation: "<=".into(), passed: value <= bound }
}

fn at_least(name: impl Into<String>, value: f64, bound: f64) -> Check {
    Check { name: name.into(), value, bound, relation: ">=".into(), passed: value >= bound }
}

/// A `(step, value)` series written as CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(u64, f64)>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub checks: Vec<Check>,
    pub result: Value,
    pub series: Vec<Series>,
}

impl RunOutcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Runtime overrides from the command line.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub replicas: Option<usize>,
}

pub fn run_experiment(cfg: &NormalizedConfig, ov: Overrides) -> Result<RunOutcome, RunError> {
    let seed = ov.seed.unwrap_or(cfg.config.seed);
    let replicas = ov.replicas.or(cfg.config.replicas);
    match cfg.config.kind {
        Kind::Lyapunov => run_lyapunov(cfg, seed, replicas.unwrap_or(1)),
        Kind::ExpansionCheck => run_expansion(cfg, seed),
        Kind::WalkEquidistribution => run_walk(cfg, seed, replicas.unwrap_or(1)),
        Kind::FractalDioph => run_fractal(cfg, seed),
        Kind::MagicFormula => run_magic(cfg, seed),
        Kind::RenewalIdentity => run_renewal(cfg, seed),
    }
}

fn chain(cfg: &NormalizedConfig) -> Result<&ChainSpec, RunError> {
    cfg.chain().ok_or_else(|| RunError::new("spec", "kind needs a chain"))
}

fn gdifs(cfg: &NormalizedConfig) -> Result<&fractal::Gdifs, RunError> {
    cfg.gdifs().ok_or_else(|| RunError::new("spec", "kind needs a GDIFS"))
}

fn to_value<T: Serialize>(x: &T) -> Value {
    serde_json::to_value(x).expect("result serializes")
}

fn run_lyapunov(cfg: &NormalizedConfig, seed: u64, replicas: usize) -> Result<RunOutcome, RunError> {
    let c = chain(cfg)?;
    let p = &cfg.config.params;
    let t = &cfg.config.thresholds;
    let rep = p.representation.unwrap_or(Representation::Standard);
    let steps = cfg.config.steps.unwrap_or(1);
    let offset = p.replica_offset.unwrap_or(0);
    let report = expansion::lyapunov_spectrum_replicas(c, rep, steps, offset..offset + replicas as u64, seed)
        .map_err(alarm!("lyapunov"))?;
    let mut checks = Vec::new();
    if let Some(expected) = &t.exponents {
        let tol = t.exponent_tol.unwrap_or(1e-9);
        for (i, ((e, se), x)) in report.exponent_estimates.iter().zip(&report.std_errors).zip(expected).enumerate() {
            checks.push(at_most(format!("exponent[{i}] error"), (e - x).abs(), tol + 3.0 * se));
        }
    }
    let mut rates = Vec::new();
    for v in p.vectors.iter().flatten() {
        let r = expansion::vector_growth_rate(c, rep, v, steps, replicas, seed).map_err(alarm!("lyapunov"))?;
        rates.push(json!({ "vector": v, "rate": r.rate, "std_error": r.std_error }));
    }
    let result = json!({ "spectrum": to_value(&report), "vector_rates": rates });
    Ok(RunOutcome { checks, result, series: Vec::new() })
}

fn run_expansion(cfg: &NormalizedConfig, seed: u64) -> Result<RunOutcome, RunError> {
    let c = chain(cfg)?;
    let p = &cfg.config.params;
    let t = &cfg.config.thresholds;
    let base = ExpansionOptions::default();
    let ks = p.ks.clone().unwrap_or_else(|| vec![1]);
    let mut checks = Vec::new();
    let mut verdicts = Vec::new();
    for &k in &ks {
        let opts = ExpansionOptions {
            representation: p.representation.unwrap_or(base.representation),
            k,
            n_steps: cfg.config.steps.unwrap_or(base.n_steps),
            n_samples: p.samples.unwrap_or(base.n_samples),
            mc_block: p.mc_block.unwrap_or(base.mc_block),
            mc_samples: p.mc_samples.unwrap_or(base.mc_samples),
            batches: p.batches.unwrap_or(base.batches),
        };
        let v = expansion::grassmannian_expansion_check(c, &opts, seed).map_err(alarm!("expansion"))?;
        if let Some(expect) = t.expect_verdict {
            checks.push(Check {
                name: format!("k={k} verdict"),
                value: f64::from(u8::from(v.verdict == expect)),
                bound: 1.0,
                relation: ">=".into(),
                passed: v.verdict == expect,
            });
        }
        if let Some(m) = t.min_rate {
            checks.push(at_least(format!("k={k} min sampled rate"), v.min_sampled_rate, m));
        }
        verdicts.push(to_value(&v));
    }
    Ok(RunOutcome { checks, result: json!({ "verdicts": verdicts }), series: Vec::new() })
}

/// Runs replicas `offset..offset + replicas` of the lattice walk and merges
/// their accumulators in replica order.
pub fn walk_replicas(
    chain: &ChainSpec,
    x0: &LatticePoint,
    steps: u64,
    obs: &WalkObservables,
    seed: u64,
    replicas: std::ops::Range<u64>,
) -> Result<(EmpiricalAccumulator, Vec<lattice::WalkOutcome>), lattice::LatticeError> {
    let outcomes = replicas
        .into_par_iter()
        .map(|r| {
            let mut rng = replica_rng(seed, r);
            lattice::run_walk(chain, x0, steps, obs, &mut rng)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut acc = outcomes[0].acc.empty_like();
    for o in &outcomes {
        acc.merge(&o.acc)?;
    }
    Ok((acc, outcomes))
}

fn run_walk(cfg: &NormalizedConfig, seed: u64, replicas: usize) -> Result<RunOutcome, RunError> {
    let c = chain(cfg)?;
    let p = &cfg.config.params;
    let t = &cfg.config.thresholds;
    let d = c.dim();
    let x0 = match &p.start_lattice {
        Some(rows) => {
            let m = linalg::mat_rows::from_rows(rows).map_err(alarm!("lattice"))?;
            LatticePoint::new(m).map_err(alarm!("lattice"))?
        }
        None => LatticePoint::standard(d),
    };
    let obs = p.observables.clone().unwrap_or_default();
    let offset = p.replica_offset.unwrap_or(0);
    let steps = cfg.config.steps.unwrap_or(1) as u64;
    let (acc, outcomes) =
        walk_replicas(c, &x0, steps, &obs, seed, offset..offset + replicas as u64).map_err(alarm!("lattice"))?;
    let report = lattice::equidistribution_report(&acc, c).map_err(alarm!("lattice"))?;
    let mut checks = Vec::new();
    let tol = t.siegel_rel_tol.unwrap_or(0.05);
    for s in &report.siegel {
        checks.push(at_most(format!("siegel R={} relative error", s.radius), s.relative_error, tol));
    }
    let eps = t.escape_eps.unwrap_or(0.05);
    if let Some(f) = acc.escape_fraction(eps) {
        checks.push(at_most(format!("escape fraction eps={eps}"), f, t.escape_max.unwrap_or(0.01)));
    }
    checks.push(at_least(
        "independence p-value",
        report.independence.p_value,
        t.independence_level.unwrap_or(1e-3),
    ));
    let series = match outcomes.first() {
        Some(o) if !o.trace.is_empty() => vec![Series { name: "shortest_sup".into(), points: o.trace.clone() }],
        _ => Vec::new(),
    };
    let result = json!({
        "report": to_value(&report),
        "accumulator": to_value(&acc),
        "final_states": outcomes.iter().map(|o| o.final_state).collect::<Vec<_>>(),
    });
    Ok(RunOutcome { checks, result, series })
}

fn run_fractal(cfg: &NormalizedConfig, seed: u64) -> Result<RunOutcome, RunError> {
    let g = gdifs(cfg)?;
    let p = &cfg.config.params;
    let t = &cfg.config.thresholds;
    let points = p.samples.unwrap_or(fractal::MIN_GAUSS_POINTS);
    let digits = p.digits.unwrap_or(200);
    let mut checks = Vec::new();
    let mut series = Vec::new();
    let dimension = fractal::hausdorff_dimension(g).map_err(alarm!("fractal"))?;
    if let Some(s) = t.dimension {
        checks.push(at_most("dimension error", (dimension - s).abs(), t.dimension_tol.unwrap_or(1e-9)));
    }
    let mut gauss = Value::Null;
    if g.m_dim == 1 && g.n_dim == 1 && points > 0 {
        let pts = fractal::wang_cf_digits(g, points, digits, seed).map_err(alarm!("fractal"))?;
        let seqs: Vec<Vec<u64>> = pts.iter().map(|p| p.1.clone()).collect();
        let st = fractal::gauss_statistics(&seqs, digits).map_err(alarm!("fractal"))?;
        let target = fractal::gauss_probability(1);
        checks.push(at_most(
            "digit-1 frequency error",
            (st.digit_one_frequency - target).abs(),
            t.digit_one_tol.unwrap_or(0.02),
        ));
        checks.push(at_least("gauss chi-square p-value", st.chi_square.p_value, t.gauss_level.unwrap_or(1e-3)));
        series.push(Series {
            name: "digit_frequencies".into(),
            points: st.table.iter().map(|l| (l.digit, l.frequency)).collect(),
        });
        gauss = json!({ "statistics": to_value(&st), "points": pts.iter().map(|p| p.0).collect::<Vec<_>>() });
    }
    let opts = p.trajectory.clone().unwrap_or_default();
    let mut reports = Vec::new();
    for (i, a) in p.alphas.iter().flatten().enumerate() {
        let alpha = RMat::from_scalars(a).map_err(alarm!("fractal"))?;
        let r = fractal::trajectory_report(&alpha, &opts).map_err(alarm!("fractal"))?;
        if let Some(curve) = &r.direct_search_curve {
            series.push(Series { name: format!("direct_search_{i}"), points: curve.iter().map(|c| (c.q, c.cumulative)).collect() });
        }
        reports.push(to_value(&r));
    }
    let result = json!({ "dimension": dimension, "gauss": gauss, "trajectories": reports });
    Ok(RunOutcome { checks, result, series })
}

/// Path length guaranteeing [`fractal::MAGIC_PI_TOL`] after `n` edges.
fn magic_path_len(g: &fractal::Gdifs, n: usize) -> usize {
    let need = (fractal::MAGIC_PI_TOL / g.radius_bound().max(1e-300)).ln() / g.max_ratio().ln();
    n + need.max(0.0).ceil() as usize + 2
}

/// `count` random `(ω, n)` pairs with `n ≤ max_n`; pair `i` uses stream
/// `(seed, i)`.
pub fn magic_formula_pairs(
    g: &fractal::Gdifs,
    count: usize,
    max_n: usize,
    precision: Precision,
    seed: u64,
) -> Result<Vec<fractal::MagicReport>, fractal::FractalError> {
    let chain = fractal::wang_measure(g)?;
    let sampler = ChainSampler::new(&chain)?;
    let len = magic_path_len(g, max_n);
    (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = replica_rng(seed, i as u64);
            let n = rng.random_range(0..=max_n);
            let path = fractal::sample_path(&sampler, len, &mut rng);
            fractal::magic_formula_check(g, &path, n, precision)
        })
        .collect()
}

fn run_magic(cfg: &NormalizedConfig, seed: u64) -> Result<RunOutcome, RunError> {
    let g = gdifs(cfg)?;
    let p = &cfg.config.params;
    let t = &cfg.config.thresholds;
    let reports = magic_formula_pairs(
        g,
        p.samples.unwrap_or(1),
        p.max_n.unwrap_or(50),
        p.precision.unwrap_or(Precision::Double),
        seed,
    )
    .map_err(alarm!("fractal"))?;
    let worst = reports.iter().map(|r| r.residual).fold(0.0, f64::max);
    let unimodular = reports.iter().all(|r| r.unimodular);
    let checks = vec![
        at_most("max residual", worst, t.residual_max.unwrap_or(1e-6)),
        at_least("unimodular change of basis", f64::from(u8::from(unimodular)), 1.0),
    ];
    let series = vec![Series {
        name: "residual".into(),
        points: reports.iter().enumerate().map(|(i, r)| (i as u64, r.residual)).collect(),
    }];
    Ok(RunOutcome { checks, result: json!({ "max_residual": worst, "pairs": to_value(&reports) }), series })
}

fn run_renewal(cfg: &NormalizedConfig, seed: u64) -> Result<RunOutcome, RunError> {
    let c = chain(cfg)?;
    let p = &cfg.config.params;
    let t = &cfg.config.thresholds;
    let anchor = match &p.anchor {
        Some(a) => c.state_index(a).ok_or_else(|| RunError::new("spec", format!("no state {a:?}")))?,
        None => 0,
    };
    let d = c.dim();
    let m = p.m_dim.unwrap_or(1);
    if m == 0 || m >= d {
        return Err(RunError::new("spec", format!("m_dim must lie in 1..{d}")));
    }
    let n = p.samples.unwrap_or(1);
    let id = markov::renewal_t_identity(c, anchor, m, d - m, n, &mut replica_rng(seed, 0)).map_err(alarm!("markov"))?;
    let words = markov::excursion_word_test(c, anchor, n, &mut replica_rng(seed, 1)).map_err(alarm!("markov"))?;
    let checks = vec![
        at_most("renewal identity |z|", id.z_score.abs(), t.z_max.unwrap_or(3.0)),
        at_least("excursion word p-value", words.p_value, t.word_level.unwrap_or(1e-3)),
    ];
    Ok(RunOutcome { checks, result: json!({ "identity": to_value(&id), "word_test": to_value(&words) }), series: Vec::new() })
}

// ---------------------------------------------------------------------------
// output

/// Rounds every float in `v` to 12 significant digits.
pub fn round_floats(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().unwrap_or(0.0);
            let r: f64 = format!("{x:.11e}").parse().unwrap_or(x);
            *v = serde_json::Number::from_f64(r).map_or(Value::Null, Value::Number);
        }
        Value::Array(a) => a.iter_mut().for_each(round_floats),
        Value::Object(o) => o.values_mut().for_each(round_floats),
        _ => {}
    }
}

/// The `results.json` document.
pub fn results_document(cfg: &NormalizedConfig, ov: Overrides, outcome: &RunOutcome) -> Value {
    let c = &cfg.config;
    let mut doc = json!({
        "schema_version": super::config::SCHEMA_VERSION,
        "name": c.name,
        "kind": c.kind,
        "seed": ov.seed.unwrap_or(c.seed),
        "replicas": ov.replicas.or(c.replicas),
        "steps": c.steps,
        "passed": outcome.passed(),
        "checks": to_value(&outcome.checks),
        "result": outcome.result,
    });
    round_floats(&mut doc);
    doc
}

fn fmt12(x: f64) -> String {
    if x.is_finite() {
        let r: f64 = format!("{x:.11e}").parse().unwrap_or(x);
        format!("{r}")
    } else {
        format!("{x}")
    }
}

pub fn series_csv(s: &Series) -> String {
    let mut out = String::from("step,value\n");
    for &(step, value) in &s.points {
        let _ = writeln!(out, "{step},{}", fmt12(value));
    }
    out
}

/// Writes `results.json` and one CSV per series into `dir`.
pub fn write_outputs(dir: &Path, doc: &Value, series: &[Series]) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut text = serde_json::to_string_pretty(doc).expect("json");
    text.push('\n');
    std::fs::write(dir.join("results.json"), text)?;
    for s in series {
        std::fs::write(dir.join(format!("{}.csv", s.name)), series_csv(s))?;
    }
    Ok(())
}

/// Plain-text summary of `results.json` and every CSV in `dir`.
pub fn render_report(dir: &Path) -> std::io::Result<String> {
    let mut out = String::new();
    let results = dir.join("results.json");
    if let Ok(text) = std::fs::read_to_string(&results) {
        let doc: Value = serde_json::from_str(&text).map_err(std::io::Error::other)?;
        let _ = writeln!(out, "kind: {}  seed: {}  passed: {}", doc["kind"], doc["seed"], doc["passed"]);
        if let Some(err) = doc.get("error") {
            let _ = writeln!(out, "error: {err}");
        }
        for c in doc["checks"].as_array().into_iter().flatten() {
            let _ = writeln!(
                out,
                "  [{}] {} = {} {} {}",
                if c["passed"].as_bool() == Some(true) { "pass" } else { "FAIL" },
                c["name"].as_str().unwrap_or(""),
                c["value"],
                c["relation"].as_str().unwrap_or(""),
                c["bound"]
            );
        }
    }
    let mut csvs: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    csvs.sort();
    if !csvs.is_empty() {
        let _ = writeln!(out, "{:<24} {:>8} {:>14} {:>14} {:>14} {:>14}", "series", "rows", "min", "max", "mean", "last");
    }
    for path in csvs {
        let text = std::fs::read_to_string(&path)?;
        let values: Vec<f64> = text.lines().skip(1).filter_map(|l| l.split(',').nth(1)?.parse().ok()).collect();
        let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("?");
        if values.is_empty() {
            let _ = writeln!(out, "{name:<24} {:>8}", 0);
            continue;
        }
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let last = values[values.len() - 1];
        let _ = writeln!(
            out,
            "{name:<24} {:>8} {:>14.6e} {:>14.6e} {:>14.6e} {:>14.6e}",
            values.len(),
            min,
            max,
            mean,
            last
        );
    }
    Ok(out)
}

/// Compares a results document with an expected-results file; returns one
/// message per mismatch.
pub fn compare_expected(doc: &Value, expected: &Value) -> Vec<String> {
    let mut out = Vec::new();
    if let Some(p) = expected.get("passed") {
        if doc.get("passed") != Some(p) {
            out.push(format!("passed: expected {p}, got {}", doc["passed"]));
        }
    }
    let names: Vec<&str> = doc["checks"].as_array().into_iter().flatten().filter_map(|c| c["name"].as_str()).collect();
    for name in expected["checks"].as_array().into_iter().flatten().filter_map(Value::as_str) {
        if !names.contains(&name) {
            out.push(format!("missing check {name:?}"));
        }
    }
    for v in expected["values"].as_array().into_iter().flatten() {
        let ptr = v["pointer"].as_str().unwrap_or("");
        let Some(got) = doc.pointer(ptr) else {
            out.push(format!("{ptr}: absent"));
            continue;
        };
        if let Some(want) = v.get("equals") {
            if got != want {
                out.push(format!("{ptr}: expected {want}, got {got}"));
            }
        } else {
            let (want, tol) = (v["expected"].as_f64().unwrap_or(f64::NAN), v["tol"].as_f64().unwrap_or(0.0));
            match got.as_f64() {
                Some(x) if (x - want).abs() <= tol => {}
                _ => out.push(format!("{ptr}: expected {want} ± {tol}, got {got}")),
            }
        }
    }
    out
}

/// Directory holding the shipped experiment configs and expected results.
pub fn presets_dir() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("presets")
}
