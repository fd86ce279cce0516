//! Python bindings: chains, lattices, fractals and the experiment runner.
//!
//! Structured results cross the boundary as plain dicts and lists.

use hdwalk::cli::config::{normalize, parse_config};
use hdwalk::cli::presets::{self, PresetSpec};
use hdwalk::cli::run::{self as runner, Overrides};
use hdwalk::exact::{RMat, Scalar};
use hdwalk::expansion::{self, ExpansionOptions};
use hdwalk::fractal::{self, Precision, TrajectoryOptions};
use hdwalk::groups::{self, PElement};
use hdwalk::lattice::{self, LatticePoint as CoreLattice, Norm, WalkObservables};
use hdwalk::linalg::{self, mat_rows, Mat, Representation};
use hdwalk::markov::{self, ChainSpec};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

/// Serializes through JSON into Python objects.
fn to_py<T: Serialize>(py: Python<'_>, x: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(x).map_err(runtime_err)?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn mat(rows: Vec<Vec<f64>>) -> PyResult<Mat> {
    mat_rows::from_rows(&rows).map_err(value_err)
}

/// `"standard"`, `"adjoint"`, `"wedge:k"` or `"adjoint_wedge:k"`.
fn representation(s: &str) -> PyResult<Representation> {
    let bad = || value_err(format!("unknown representation {s:?}"));
    match s.split_once(':') {
        None => match s {
            "standard" => Ok(Representation::Standard),
            "adjoint" => Ok(Representation::Adjoint),
            _ => Err(bad()),
        },
        Some((kind, k)) => {
            let k: usize = k.parse().map_err(|_| bad())?;
            match kind {
                "wedge" => Ok(Representation::Wedge(k)),
                "adjoint_wedge" => Ok(Representation::AdjointWedge(k)),
                _ => Err(bad()),
            }
        }
    }
}

fn scalar(x: &Bound<'_, PyAny>) -> PyResult<Scalar> {
    if let Ok(s) = x.extract::<String>() {
        Ok(Scalar::Text(s))
    } else {
        Ok(Scalar::Number(x.extract::<f64>()?))
    }
}

fn rational_matrix(rows: &Bound<'_, PyAny>) -> PyResult<RMat> {
    let mut parsed = Vec::new();
    for row in rows.try_iter()? {
        let row = row?;
        let mut r = Vec::new();
        for x in row.try_iter()? {
            r.push(scalar(&x?)?);
        }
        parsed.push(r);
    }
    RMat::from_scalars(&parsed).map_err(value_err)
}

/// A finite Markov chain with a coding map into `SL_d(R)`.
#[pyclass(name = "Chain", module = "pyhdwalk", from_py_object)]
#[derive(Clone)]
struct Chain {
    inner: ChainSpec,
}

#[pymethods]
impl Chain {
    /// Chain from JSON text with fields `states`, `trans`, `coding`, `start`.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: ChainSpec = serde_json::from_str(text).map_err(value_err)?;
        inner.check().map_err(value_err)?;
        Ok(Self { inner })
    }

    /// The i.i.d. walk with the given law; uniform when `weights` is omitted.
    #[staticmethod]
    #[pyo3(signature = (matrices, weights=None))]
    fn iid(matrices: Vec<Vec<Vec<f64>>>, weights: Option<Vec<f64>>) -> PyResult<Self> {
        let mats = matrices.into_iter().map(mat).collect::<PyResult<Vec<_>>>()?;
        let w = weights.unwrap_or_else(|| vec![1.0; mats.len()]);
        if w.len() != mats.len() {
            return Err(value_err("one weight per matrix"));
        }
        let inner = ChainSpec::iid(mats, &w);
        inner.check().map_err(value_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn preset(name: &str) -> PyResult<Self> {
        match presets::preset(name) {
            Some(PresetSpec::Chain(inner)) => Ok(Self { inner }),
            _ => Err(value_err(format!("no chain preset {name:?}"))),
        }
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(runtime_err)
    }

    #[getter]
    fn states(&self) -> Vec<String> {
        self.inner.states.clone()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn is_irreducible(&self) -> bool {
        self.inner.is_irreducible()
    }

    fn stationary_distribution(&self) -> PyResult<Vec<f64>> {
        markov::stationary_distribution(&self.inner).map_err(value_err)
    }

    fn __repr__(&self) -> String {
        format!("Chain(states={:?}, dim={})", self.inner.states, self.inner.dim())
    }
}

/// A unimodular lattice, given by a basis in the columns.
#[pyclass(name = "Lattice", module = "pyhdwalk", from_py_object)]
#[derive(Clone)]
struct Lattice {
    inner: CoreLattice,
}

#[pymethods]
impl Lattice {
    #[new]
    fn new(basis: Vec<Vec<f64>>) -> PyResult<Self> {
        Ok(Self { inner: CoreLattice::new(mat(basis)?).map_err(value_err)? })
    }

    #[staticmethod]
    fn standard(d: usize) -> Self {
        Self { inner: CoreLattice::standard(d) }
    }

    #[getter]
    fn basis(&self) -> Vec<Vec<f64>> {
        mat_rows::to_rows(&self.inner.basis)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    /// `g x`.
    fn act(&self, g: Vec<Vec<f64>>) -> PyResult<Self> {
        let g = mat(g)?;
        if g.shape() != self.inner.basis.shape() {
            return Err(value_err("shape mismatch"));
        }
        Ok(Self { inner: self.inner.act(&g) })
    }

    /// LLL-reduced basis of the same lattice.
    fn reduced(&self) -> PyResult<Self> {
        Ok(Self { inner: lattice::reduce_basis(&self.inner).map_err(runtime_err)? })
    }

    /// `(vector, length)` of a shortest nonzero vector; `norm` is `"sup"` or
    /// `"euclidean"`.
    #[pyo3(signature = (norm="sup"))]
    fn shortest_vector(&self, norm: &str) -> PyResult<(Vec<f64>, f64)> {
        let norm = match norm {
            "sup" => Norm::Sup,
            "euclidean" => Norm::Euclidean,
            _ => return Err(value_err(format!("unknown norm {norm:?}"))),
        };
        let sv = lattice::shortest_vector(&self.inner, norm).map_err(runtime_err)?;
        Ok((sv.vector, sv.length))
    }

    fn siegel_counts(&self, radii: Vec<f64>) -> PyResult<Vec<u64>> {
        lattice::siegel_counts(&self.inner, &radii).map_err(runtime_err)
    }

    /// Whether both bases span the same lattice.
    #[pyo3(signature = (other, tol=1e-9))]
    fn same_lattice(&self, other: &Lattice, tol: f64) -> PyResult<bool> {
        lattice::lattice_equal(&self.inner, &other.inner, tol).map_err(runtime_err)
    }

    fn __repr__(&self) -> String {
        format!("Lattice({:?})", mat_rows::to_rows(&self.inner.basis))
    }
}

/// A graph-directed iterated function system of similarities.
#[pyclass(name = "Gdifs", module = "pyhdwalk", from_py_object)]
#[derive(Clone)]
struct Gdifs {
    inner: fractal::Gdifs,
}

#[pymethods]
impl Gdifs {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self { inner: fractal::Gdifs::from_json(text).map_err(value_err)? })
    }

    #[staticmethod]
    fn preset(name: &str) -> PyResult<Self> {
        match presets::preset(name) {
            Some(PresetSpec::Gdifs(spec)) => Ok(Self { inner: fractal::Gdifs::from_spec(spec).map_err(value_err)? }),
            _ => Err(value_err(format!("no fractal preset {name:?}"))),
        }
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(self.inner.spec()).map_err(runtime_err)
    }

    #[getter]
    fn vertices(&self) -> Vec<String> {
        self.inner.vertices.clone()
    }

    #[getter]
    fn edges(&self) -> Vec<String> {
        self.inner.edges.iter().map(|e| e.id.clone()).collect()
    }

    fn hausdorff_dimension(&self) -> PyResult<f64> {
        fractal::hausdorff_dimension(&self.inner).map_err(runtime_err)
    }

    /// The Wang measure as a chain on edges.
    fn wang_measure(&self) -> PyResult<Chain> {
        Ok(Chain { inner: fractal::wang_measure(&self.inner).map_err(runtime_err)? })
    }

    /// `(point, digits)` for `n_points` Wang-random points; every digit is
    /// certified by exact interval arithmetic.
    fn wang_cf_digits(&self, n_points: usize, n_digits: usize, seed: u64) -> PyResult<Vec<(f64, Vec<u64>)>> {
        fractal::wang_cf_digits(&self.inner, n_points, n_digits, seed).map_err(runtime_err)
    }

    /// Natural projection of an edge path to within `tol`, with its error
    /// bound.
    #[pyo3(signature = (path, tol=1e-12))]
    fn natural_projection(&self, path: Vec<usize>, tol: f64) -> PyResult<(Vec<Vec<f64>>, f64)> {
        let p = fractal::natural_project(&self.inner, &path, tol).map_err(value_err)?;
        Ok((mat_rows::to_rows(&p.point), p.error_bound))
    }

    /// Residuals of the change-of-basis identity for random `(ω, n)` pairs.
    #[pyo3(signature = (pairs, max_n, seed, extended=false))]
    fn magic_formula(&self, py: Python<'_>, pairs: usize, max_n: usize, seed: u64, extended: bool) -> PyResult<Py<PyAny>> {
        let precision = if extended { Precision::Extended } else { Precision::Double };
        let r = runner::magic_formula_pairs(&self.inner, pairs, max_n, precision, seed).map_err(runtime_err)?;
        to_py(py, &r)
    }

    fn __repr__(&self) -> String {
        format!("Gdifs(vertices={:?}, edges={})", self.inner.vertices, self.inner.edges.len())
    }
}

/// Lyapunov spectrum by QR re-orthogonalization.
#[pyfunction]
#[pyo3(signature = (chain, steps, replicas, seed, representation="standard"))]
fn lyapunov_spectrum(
    py: Python<'_>,
    chain: &Chain,
    steps: usize,
    replicas: usize,
    seed: u64,
    representation: &str,
) -> PyResult<Py<PyAny>> {
    let rep = self::representation(representation)?;
    let r = expansion::lyapunov_spectrum(&chain.inner, rep, steps, replicas, seed).map_err(runtime_err)?;
    to_py(py, &r)
}

/// `(rate, std_error)` of `(1/n) log ∥g_{ω|n} v∥`.
#[pyfunction]
#[pyo3(signature = (chain, vector, steps, replicas, seed, representation="standard"))]
fn vector_growth_rate(
    chain: &Chain,
    vector: Vec<f64>,
    steps: usize,
    replicas: usize,
    seed: u64,
    representation: &str,
) -> PyResult<(f64, f64)> {
    let rep = self::representation(representation)?;
    let g = expansion::vector_growth_rate(&chain.inner, rep, &vector, steps, replicas, seed).map_err(runtime_err)?;
    Ok((g.rate, g.std_error))
}

/// Grassmannian expansion falsifier for grade `k`.
#[pyfunction]
#[pyo3(signature = (chain, k, steps, samples, seed, representation="standard"))]
fn expansion_check(
    py: Python<'_>,
    chain: &Chain,
    k: usize,
    steps: usize,
    samples: usize,
    seed: u64,
    representation: &str,
) -> PyResult<Py<PyAny>> {
    let opts = ExpansionOptions {
        representation: self::representation(representation)?,
        k,
        n_steps: steps,
        n_samples: samples,
        ..Default::default()
    };
    let v = expansion::grassmannian_expansion_check(&chain.inner, &opts, seed).map_err(runtime_err)?;
    to_py(py, &v)
}

/// Runs replicas of the lattice walk; returns the merged accumulator and
/// its equidistribution report.
#[pyfunction]
#[pyo3(signature = (chain, steps, replicas, seed, start=None))]
fn walk(
    py: Python<'_>,
    chain: &Chain,
    steps: u64,
    replicas: u64,
    seed: u64,
    start: Option<&Lattice>,
) -> PyResult<Py<PyAny>> {
    if replicas == 0 {
        return Err(value_err("replicas must be positive"));
    }
    let x0 = start.map_or_else(|| CoreLattice::standard(chain.inner.dim()), |l| l.inner.clone());
    let (acc, _) = runner::walk_replicas(&chain.inner, &x0, steps, &WalkObservables::default(), seed, 0..replicas)
        .map_err(runtime_err)?;
    let report = lattice::equidistribution_report(&acc, &chain.inner).map_err(runtime_err)?;
    to_py(py, &serde_json::json!({ "accumulator": acc, "report": report }))
}

/// Trajectory of `a_t u_α Z^d`; entries of `alpha` may be floats or exact
/// fraction strings such as `"1/3"`.
#[pyfunction]
#[pyo3(signature = (alpha, t_max=30.0, dt=0.1, q_max=None))]
fn trajectory_report(py: Python<'_>, alpha: &Bound<'_, PyAny>, t_max: f64, dt: f64, q_max: Option<u64>) -> PyResult<Py<PyAny>> {
    let a = rational_matrix(alpha)?;
    let opts = TrajectoryOptions { t_max, dt, q_max, ..Default::default() };
    let r = fractal::trajectory_report(&a, &opts).map_err(runtime_err)?;
    to_py(py, &r)
}

/// `[(Q, cumulative, shell)]` minima of `∥q∥^{N/M} ∥qα - p∥` by enumeration.
#[pyfunction]
fn direct_dioph_search(alpha: &Bound<'_, PyAny>, q_max: u64) -> PyResult<Vec<(u64, f64, f64)>> {
    let a = rational_matrix(alpha)?;
    let curve = fractal::direct_dioph_search(&a, q_max).map_err(runtime_err)?;
    Ok(curve.into_iter().map(|c| (c.q, c.cumulative, c.shell)).collect())
}

/// Continued fraction digits of `x` in `(0, 1)`.
#[pyfunction]
fn cf_digits(x: &Bound<'_, PyAny>, n: usize) -> PyResult<Vec<u64>> {
    let q = scalar(x)?.to_rational().map_err(value_err)?;
    Ok(hdwalk::exact::cf_digits_rational(&q, n).0)
}

/// `Λ^k m`.
#[pyfunction]
fn wedge_power(m: Vec<Vec<f64>>, k: usize) -> PyResult<Vec<Vec<f64>>> {
    let w = linalg::wedge_power(&mat(m)?, k).map_err(value_err)?;
    Ok(mat_rows::to_rows(&w.entries))
}

/// `Ad(g)` on trace-zero matrices.
#[pyfunction]
fn adjoint_matrix(g: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    Ok(mat_rows::to_rows(&linalg::adjoint_matrix(&mat(g)?).map_err(value_err)?))
}

/// `a_t k u_α` from its parameters.
#[pyfunction]
fn aku_compose(t: f64, o1: Vec<Vec<f64>>, o2: Vec<Vec<f64>>, alpha: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    let (o1, o2, alpha) = (mat(o1)?, mat(o2)?, mat(alpha)?);
    let p = PElement { m_dim: o1.nrows(), n_dim: o2.nrows(), t, o1, o2, alpha };
    p.validate().map_err(value_err)?;
    Ok(mat_rows::to_rows(&groups::aku_compose(&p)))
}

/// Splits `g ∈ P` into a dict with `t`, `o1`, `o2`, `alpha`.
#[pyfunction]
fn aku_decompose(py: Python<'_>, g: Vec<Vec<f64>>, m_dim: usize, n_dim: usize) -> PyResult<Py<PyAny>> {
    let p = groups::aku_decompose(&mat(g)?, m_dim, n_dim).map_err(value_err)?;
    to_py(py, &p)
}

/// Validates and runs a config given as JSON text; returns the
/// `results.json` document.
#[pyfunction]
#[pyo3(signature = (config, seed=None, replicas=None))]
fn run_config(py: Python<'_>, config: &str, seed: Option<u64>, replicas: Option<usize>) -> PyResult<Py<PyAny>> {
    let flatten = |issues: Vec<hdwalk::cli::config::ConfigIssue>| {
        value_err(issues.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))
    };
    let cfg = normalize(parse_config(config).map_err(flatten)?).map_err(flatten)?;
    let ov = Overrides { seed, replicas };
    let outcome = runner::run_experiment(&cfg, ov).map_err(runtime_err)?;
    to_py(py, &runner::results_document(&cfg, ov, &outcome))
}

/// Names of the built-in presets.
#[pyfunction]
fn preset_names() -> Vec<&'static str> {
    presets::PRESETS.iter().map(|p| p.name).collect()
}

#[pymodule]
fn pyhdwalk(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Chain>()?;
    m.add_class::<Lattice>()?;
    m.add_class::<Gdifs>()?;
    m.add_function(wrap_pyfunction!(lyapunov_spectrum, m)?)?;
    m.add_function(wrap_pyfunction!(vector_growth_rate, m)?)?;
    m.add_function(wrap_pyfunction!(expansion_check, m)?)?;
    m.add_function(wrap_pyfunction!(walk, m)?)?;
    m.add_function(wrap_pyfunction!(trajectory_report, m)?)?;
    m.add_function(wrap_pyfunction!(direct_dioph_search, m)?)?;
    m.add_function(wrap_pyfunction!(cf_digits, m)?)?;
    m.add_function(wrap_pyfunction!(wedge_power, m)?)?;
    m.add_function(wrap_pyfunction!(adjoint_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(aku_compose, m)?)?;
    m.add_function(wrap_pyfunction!(aku_decompose, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    m.add_function(wrap_pyfunction!(preset_names, m)?)?;
    Ok(())
}
