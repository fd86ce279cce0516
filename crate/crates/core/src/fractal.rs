//! Graph-directed similarity IFS on `R^{M x N}` and the Diophantine test
//! battery along the diagonal flow.
//!
//! Edge `e` runs from `i(e)` (field `from`) to `t(e)` (field `to`); its
//! similarity `φ_e` maps the copy of the attractor at `t(e)` into the copy
//! at `i(e)`. A path `ω_0 ω_1 …` satisfies `t(ω_j) = i(ω_{j+1})`, and
//! `Π(ω) = lim φ_{ω_0} ∘ ⋯ ∘ φ_{ω_{n-1}}(x)`.

use crate::exact::{self, ExactSimilarity, RMat, Scalar, Q};
use crate::groups::{self, GroupError, PElement, Similarity};
use crate::lattice::{self, LatticeError, LatticePoint, Norm};
use crate::linalg::{self, Mat};
use crate::markov::{self, ChainSampler, ChainSpec, MarkovError};
use crate::stats::{self, ChiSquareTest};
use num_bigint::BigInt;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap, HashSet};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FractalError {
    #[error("cannot parse GDIFS: {0}")]
    Parse(String),
    #[error("invalid GDIFS: {0}")]
    Invalid(String),
    #[error("edge {edge} is not contracting (ratio {ratio})")]
    NotContracting { edge: String, ratio: f64 },
    #[error("graph is not strongly connected: no path from {from} to {to}")]
    NotConnected { from: String, to: String },
    #[error("not a path: edge {index} does not start where edge {} ends", .index - 1)]
    Path { index: usize },
    #[error("path of {len} edges too short to reach tolerance {tol:e}")]
    PathTooShort { len: usize, tol: f64 },
    #[error("ratio product did not fall below tolerance within {0} terms")]
    Divergence(usize),
    #[error("dimension: {0}")]
    Dimension(String),
    #[error("need at least {need} points, got {got}")]
    Insufficient { need: usize, got: usize },
    #[error("enumeration infeasible: {0}")]
    Infeasible(String),
    #[error(transparent)]
    Group(#[from] GroupError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Markov(#[from] MarkovError),
}

pub type Result<T> = std::result::Result<T, FractalError>;

/// Hard cap on terms used by the natural projection.
pub const MAX_PROJECTION_TERMS: usize = 1_000_000;
/// Largest flow time accepted by [`trajectory_report`].
/// Per-sample cap on Siegel enumeration work along a trajectory.
pub const MAX_TRAJECTORY_SIEGEL_WORK: f64 = 1e7;
pub const MAX_FLOW_TIME: f64 = 200.0;
/// Largest number of integer vectors enumerated by [`direct_dioph_search`].
pub const MAX_ENUMERATION: f64 = 2.0e8;

// ---------------------------------------------------------------------------
// loading

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeSpec {
    pub id: String,
    pub from: String,
    pub to: String,
    pub ratio: Scalar,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub o1: Option<Vec<Vec<Scalar>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub o2: Option<Vec<Vec<Scalar>>>,
    pub translation: Vec<Vec<Scalar>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

/// JSON form of a graph-directed IFS.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GdifsSpec {
    #[serde(default = "one")]
    pub m_dim: usize,
    #[serde(default = "one")]
    pub n_dim: usize,
    pub vertices: Vec<String>,
    pub edges: Vec<EdgeSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boxes: Option<BTreeMap<String, BoxSpec>>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone)]
pub struct Edge {
    pub id: String,
    pub from: usize,
    pub to: usize,
    pub exact: ExactSimilarity,
    pub sim: Similarity,
}

/// A validated graph-directed similarity IFS.
#[derive(Debug, Clone)]
pub struct Gdifs {
    pub m_dim: usize,
    pub n_dim: usize,
    pub vertices: Vec<String>,
    pub edges: Vec<Edge>,
    /// Per-vertex boxes in row-major coordinates of `R^{M x N}`.
    pub boxes: Option<Vec<(Vec<f64>, Vec<f64>)>>,
    spec: GdifsSpec,
}

impl Gdifs {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: GdifsSpec = serde_json::from_str(text).map_err(|e| FractalError::Parse(e.to_string()))?;
        Self::from_spec(spec)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| FractalError::Parse(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn spec(&self) -> &GdifsSpec {
        &self.spec
    }

    pub fn from_spec(spec: GdifsSpec) -> Result<Self> {
        let (m, n) = (spec.m_dim, spec.n_dim);
        if m == 0 || n == 0 || m + n > linalg::MAX_DIM {
            return Err(FractalError::Dimension(format!("unsupported (M, N) = ({m}, {n})")));
        }
        if spec.vertices.is_empty() {
            return Err(FractalError::Invalid("no vertices".into()));
        }
        let mut index = HashMap::new();
        for (i, v) in spec.vertices.iter().enumerate() {
            if index.insert(v.clone(), i).is_some() {
                return Err(FractalError::Invalid(format!("duplicate vertex {v:?}")));
            }
        }
        let mut seen = HashSet::new();
        let mut edges = Vec::with_capacity(spec.edges.len());
        for e in &spec.edges {
            if !seen.insert(e.id.clone()) {
                return Err(FractalError::Invalid(format!("duplicate edge id {:?}", e.id)));
            }
            let vertex = |name: &str| {
                index.get(name).copied().ok_or_else(|| FractalError::Invalid(format!("edge {:?}: unknown vertex {name:?}", e.id)))
            };
            let from = vertex(&e.from)?;
            let to = vertex(&e.to)?;
            let ctx = |msg: String| FractalError::Invalid(format!("edge {:?}: {msg}", e.id));
            let ratio = e.ratio.to_rational().map_err(ctx)?;
            if !ratio.is_positive() {
                return Err(ctx(format!("ratio must be positive, got {ratio}")));
            }
            let o1 = match &e.o1 {
                Some(rows) => RMat::from_scalars(rows).map_err(ctx)?,
                None => RMat::identity(m),
            };
            let o2 = match &e.o2 {
                Some(rows) => RMat::from_scalars(rows).map_err(ctx)?,
                None => RMat::identity(n),
            };
            let translation = RMat::from_scalars(&e.translation).map_err(ctx)?;
            if o1.shape() != (m, m) || o2.shape() != (n, n) || translation.shape() != (m, n) {
                return Err(ctx("block shapes do not match (M, N)".into()));
            }
            let sim = Similarity {
                m_dim: m,
                n_dim: n,
                ratio: exact::to_f64(&ratio),
                o1: o1.to_mat(),
                o2: o2.to_mat(),
                translation: translation.to_mat(),
            };
            sim.validate().map_err(|err| ctx(err.to_string()))?;
            edges.push(Edge { id: e.id.clone(), from, to, exact: ExactSimilarity { ratio, o1, o2, translation }, sim });
        }
        for (v, name) in spec.vertices.iter().enumerate() {
            if !edges.iter().any(|e| e.from == v) {
                return Err(FractalError::Invalid(format!("vertex {name:?} has no outgoing edge")));
            }
        }
        let boxes = match &spec.boxes {
            None => None,
            Some(map) => {
                let mut out = Vec::new();
                for name in &spec.vertices {
                    let b = map.get(name).ok_or_else(|| FractalError::Invalid(format!("no box for vertex {name:?}")))?;
                    if b.lo.len() != m * n || b.hi.len() != m * n || b.lo.iter().zip(&b.hi).any(|(l, h)| !(l < h)) {
                        return Err(FractalError::Invalid(format!("malformed box for vertex {name:?}")));
                    }
                    out.push((b.lo.clone(), b.hi.clone()));
                }
                Some(out)
            }
        };
        let g = Self { m_dim: m, n_dim: n, vertices: spec.vertices.clone(), edges, boxes, spec };
        g.check_connected()?;
        Ok(g)
    }

    fn check_connected(&self) -> Result<()> {
        let nv = self.vertices.len();
        for s in 0..nv {
            let mut seen = vec![false; nv];
            seen[s] = true;
            let mut stack = vec![s];
            while let Some(v) = stack.pop() {
                for e in self.edges.iter().filter(|e| e.from == v) {
                    if !seen[e.to] {
                        seen[e.to] = true;
                        stack.push(e.to);
                    }
                }
            }
            if let Some(t) = seen.iter().position(|&x| !x) {
                return Err(FractalError::NotConnected { from: self.vertices[s].clone(), to: self.vertices[t].clone() });
            }
        }
        Ok(())
    }

    pub fn max_ratio(&self) -> f64 {
        self.edges.iter().map(|e| e.sim.ratio).fold(0.0, f64::max)
    }

    pub fn is_strictly_contracting(&self) -> bool {
        self.edges.iter().all(|e| e.exact.ratio < Q::one())
    }

    fn require_contracting(&self) -> Result<()> {
        match self.edges.iter().find(|e| e.exact.ratio >= Q::one()) {
            Some(e) => Err(FractalError::NotContracting { edge: e.id.clone(), ratio: e.sim.ratio }),
            None => Ok(()),
        }
    }

    pub fn edge_index(&self, id: &str) -> Option<usize> {
        self.edges.iter().position(|e| e.id == id)
    }

    /// Checks `t(ω_{j-1}) = i(ω_j)` along the path.
    pub fn check_path(&self, path: &[usize]) -> Result<()> {
        for (j, w) in path.windows(2).enumerate() {
            if w[0] >= self.edges.len() || w[1] >= self.edges.len() || self.edges[w[0]].to != self.edges[w[1]].from {
                return Err(FractalError::Path { index: j + 1 });
            }
        }
        if path.first().is_some_and(|&e| e >= self.edges.len()) {
            return Err(FractalError::Path { index: 0 });
        }
        Ok(())
    }

    /// Bound on `∥x∥_F` over all attractor points, from
    /// `∥φ_e(x)∥ ≤ r ∥x∥ + ∥b_e∥`.
    pub fn radius_bound(&self) -> f64 {
        let b = self.edges.iter().map(|e| e.sim.translation.norm()).fold(0.0, f64::max);
        b / (1.0 - self.max_ratio())
    }

    /// Rational upper bound for [`Gdifs::radius_bound`] using entrywise
    /// absolute sums.
    fn radius_bound_exact(&self) -> Q {
        let b = self
            .edges
            .iter()
            .map(|e| e.exact.translation.data.iter().map(|x| x.abs()).fold(Q::zero(), |a, x| a + x))
            .max()
            .unwrap_or_else(Q::zero);
        let rmax = self.edges.iter().map(|e| e.exact.ratio.clone()).max().unwrap_or_else(Q::zero);
        b / (Q::one() - rmax)
    }

    /// The coded group elements `g_e = φ_e^{-1} ∈ P`.
    pub fn group_elements(&self) -> Result<Vec<PElement>> {
        self.edges.iter().map(|e| Ok(groups::similarity_to_group(&e.sim)?.inverse())).collect()
    }

    /// The GDIFS obtained by adding one edge.
    pub fn with_edge(&self, edge: EdgeSpec) -> Result<Self> {
        let mut spec = self.spec.clone();
        spec.edges.push(edge);
        Self::from_spec(spec)
    }
}

/// Cantor middle-thirds set: one vertex, `x/3` and `x/3 + 2/3`.
pub fn cantor_middle_thirds() -> Gdifs {
    let edge = |id: &str, b: &str| EdgeSpec {
        id: id.into(),
        from: "v".into(),
        to: "v".into(),
        ratio: "1/3".into(),
        o1: None,
        o2: None,
        translation: vec![vec![b.into()]],
    };
    let mut boxes = BTreeMap::new();
    boxes.insert("v".to_string(), BoxSpec { lo: vec![0.0], hi: vec![1.0] });
    Gdifs::from_spec(GdifsSpec {
        m_dim: 1,
        n_dim: 1,
        vertices: vec!["v".into()],
        edges: vec![edge("0", "0"), edge("1", "2/3")],
        boxes: Some(boxes),
    })
    .expect("preset is valid")
}

/// Two vertices with edges `u→v`, `v→u`, `v→v`, all of ratio 1/2.
pub fn two_vertex_golden() -> Gdifs {
    let edge = |id: &str, from: &str, to: &str, b: &str| EdgeSpec {
        id: id.into(),
        from: from.into(),
        to: to.into(),
        ratio: "1/2".into(),
        o1: None,
        o2: None,
        translation: vec![vec![b.into()]],
    };
    let mut boxes = BTreeMap::new();
    boxes.insert("u".to_string(), BoxSpec { lo: vec![0.0], hi: vec![0.5] });
    boxes.insert("v".to_string(), BoxSpec { lo: vec![0.0], hi: vec![1.0] });
    Gdifs::from_spec(GdifsSpec {
        m_dim: 1,
        n_dim: 1,
        vertices: vec!["u".into(), "v".into()],
        edges: vec![edge("uv", "u", "v", "0"), edge("vu", "v", "u", "0"), edge("vv", "v", "v", "1/2")],
        boxes: Some(boxes),
    })
    .expect("preset is valid")
}

// ---------------------------------------------------------------------------
// dimension and Wang measure

/// `A(s)_{u,v} = Σ_{i(e)=u, t(e)=v} r_e^s`.
pub fn spectral_matrix(g: &Gdifs, s: f64) -> Vec<Vec<f64>> {
    let nv = g.vertices.len();
    let mut a = vec![vec![0.0; nv]; nv];
    for e in &g.edges {
        a[e.from][e.to] += e.sim.ratio.powf(s);
    }
    a
}

/// Perron root and positive right eigenvector (unit sum) of a nonnegative
/// irreducible matrix, by power iteration on `A + 1` with Collatz-Wielandt
/// bounds. Returns `(lower, upper, h)`.
pub fn perron(a: &[Vec<f64>]) -> (f64, f64, Vec<f64>) {
    let n = a.len();
    let mut h = vec![1.0 / n as f64; n];
    let (mut lo, mut hi) = (0.0, f64::INFINITY);
    for _ in 0..100_000 {
        let next: Vec<f64> = (0..n).map(|i| h[i] + (0..n).map(|j| a[i][j] * h[j]).sum::<f64>()).collect();
        let ratios = next.iter().zip(&h).map(|(y, x)| y / x);
        lo = ratios.clone().fold(f64::INFINITY, f64::min) - 1.0;
        hi = ratios.fold(0.0, f64::max) - 1.0;
        let total: f64 = next.iter().sum();
        h = next.into_iter().map(|x| x / total).collect();
        if hi - lo <= 1e-15 * hi.max(1.0) {
            break;
        }
    }
    (lo, hi, h)
}

pub fn spectral_radius(g: &Gdifs, s: f64) -> f64 {
    let (lo, hi, _) = perron(&spectral_matrix(g, s));
    0.5 * (lo + hi)
}

/// The root `s` of `ρ(A(s)) = 1`.
pub fn hausdorff_dimension(g: &Gdifs) -> Result<f64> {
    g.require_contracting()?;
    let above = |s: f64| {
        let (lo, hi, _) = perron(&spectral_matrix(g, s));
        if lo > 1.0 {
            Some(true)
        } else if hi < 1.0 {
            Some(false)
        } else {
            None
        }
    };
    if above(0.0) != Some(true) {
        // ρ(A(0)) = 1: a single cycle
        return Ok(0.0);
    }
    let mut hi = 1.0;
    while above(hi) != Some(false) {
        hi *= 2.0;
        if hi > 1e6 {
            return Err(FractalError::Invalid("dimension equation has no root".into()));
        }
    }
    let mut lo = 0.0;
    while hi - lo > 1e-14 {
        let mid = 0.5 * (lo + hi);
        match above(mid) {
            Some(true) => lo = mid,
            Some(false) => hi = mid,
            None => return Ok(mid),
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Dimension with the Perron vector `h` of `A(s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerronData {
    pub dimension: f64,
    pub spectral_radius: f64,
    pub h: Vec<f64>,
}

pub fn perron_data(g: &Gdifs) -> Result<PerronData> {
    let s = hausdorff_dimension(g)?;
    let (lo, hi, h) = perron(&spectral_matrix(g, s));
    Ok(PerronData { dimension: s, spectral_radius: 0.5 * (lo + hi), h })
}

/// The adapted edge-shift chain `p_{e',e} = r_{e'}^s h_{t(e')} / h_{i(e')}`
/// for `t(e) = i(e')`, started from its stationary law. States are edge
/// ids, coded by `g_e = φ_e^{-1}`.
pub fn wang_measure(g: &Gdifs) -> Result<ChainSpec> {
    let pd = perron_data(g)?;
    let s = pd.dimension;
    let h = &pd.h;
    let ne = g.edges.len();
    let mut trans = vec![vec![0.0; ne]; ne];
    for (from, e) in g.edges.iter().enumerate() {
        for (to, f) in g.edges.iter().enumerate() {
            if e.to == f.from {
                trans[to][from] = f.sim.ratio.powf(s) * h[f.to] / h[f.from];
            }
        }
        let total: f64 = (0..ne).map(|to| trans[to][from]).sum();
        for row in trans.iter_mut() {
            row[from] /= total;
        }
    }
    let coding = g.group_elements()?.iter().map(groups::aku_compose).collect();
    let mut chain = ChainSpec {
        states: g.edges.iter().map(|e| e.id.clone()).collect(),
        trans,
        coding,
        start: vec![1.0 / ne as f64; ne],
    };
    chain.start = markov::stationary_distribution(&chain)?;
    Ok(chain)
}

/// A random path of `len` edges from the chain (states are edge indices).
pub fn sample_path<R: Rng + ?Sized>(sampler: &ChainSampler, len: usize, rng: &mut R) -> Vec<usize> {
    let mut path = Vec::with_capacity(len);
    if len == 0 {
        return path;
    }
    let mut e = sampler.initial(rng);
    path.push(e);
    while path.len() < len {
        e = sampler.next(e, rng);
        path.push(e);
    }
    path
}

fn extend_path<R: Rng + ?Sized>(sampler: &ChainSampler, path: &mut Vec<usize>, len: usize, rng: &mut R) {
    if path.is_empty() {
        path.extend(sample_path(sampler, len, rng));
        return;
    }
    let mut e = *path.last().unwrap();
    while path.len() < len {
        e = sampler.next(e, rng);
        path.push(e);
    }
}

/// `pattern` repeated to length `len`.
pub fn periodic_path(pattern: &[usize], len: usize) -> Vec<usize> {
    (0..len).map(|j| pattern[j % pattern.len()]).collect()
}

// ---------------------------------------------------------------------------
// natural projection

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    #[serde(with = "crate::linalg::mat_rows")]
    pub point: Mat,
    /// Frobenius-norm bound on the distance to `Π(ω)`.
    pub error_bound: f64,
    pub terms: usize,
}

/// `Π(ω)` from seed `0`, using the shortest prefix whose error bound is at
/// most `tol`.
pub fn natural_project(g: &Gdifs, path: &[usize], tol: f64) -> Result<Projection> {
    natural_project_from(g, path, tol, &Mat::zeros(g.m_dim, g.n_dim))
}

/// As [`natural_project`] with an explicit seed point.
pub fn natural_project_from(g: &Gdifs, path: &[usize], tol: f64, seed: &Mat) -> Result<Projection> {
    g.require_contracting()?;
    g.check_path(path)?;
    if seed.shape() != (g.m_dim, g.n_dim) {
        return Err(FractalError::Dimension("seed point has the wrong shape".into()));
    }
    let diameter = g.radius_bound() + seed.norm();
    let mut f = Similarity::identity(g.m_dim, g.n_dim);
    let mut terms = 0;
    while f.ratio * diameter > tol {
        if terms == path.len() {
            if terms >= MAX_PROJECTION_TERMS {
                return Err(FractalError::Divergence(terms));
            }
            return Err(FractalError::PathTooShort { len: path.len(), tol });
        }
        if terms >= MAX_PROJECTION_TERMS {
            return Err(FractalError::Divergence(terms));
        }
        f = f.compose(&g.edges[path[terms]].sim);
        terms += 1;
    }
    Ok(Projection { point: f.apply(seed), error_bound: f.ratio * diameter, terms })
}

/// `φ_{ω_0} ∘ ⋯ ∘ φ_{ω_{n-1}}(0)` in exact arithmetic over the whole prefix,
/// with a rational bound on the entrywise distance to `Π(ω)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactProjection {
    pub center: RMat,
    pub radius: Q,
    pub terms: usize,
}

impl ExactProjection {
    pub fn to_mat(&self) -> Mat {
        self.center.to_mat()
    }
}

pub fn natural_project_exact(g: &Gdifs, path: &[usize]) -> Result<ExactProjection> {
    g.require_contracting()?;
    g.check_path(path)?;
    let mut f = ExactSimilarity::identity(g.m_dim, g.n_dim);
    for &e in path {
        f = f.compose(&g.edges[e].exact);
    }
    let radius = &f.ratio * g.radius_bound_exact();
    Ok(ExactProjection { center: f.translation, radius, terms: path.len() })
}

/// Exact projection of a random chain path, extended until the error
/// radius is below `tol`.
pub fn random_point_exact<R: Rng + ?Sized>(
    g: &Gdifs,
    sampler: &ChainSampler,
    tol: &Q,
    rng: &mut R,
) -> Result<(Vec<usize>, ExactProjection)> {
    g.require_contracting()?;
    let rmax = g.max_ratio();
    let bound = exact::to_f64(&g.radius_bound_exact()).max(1e-300);
    let need = (exact::to_f64(tol).max(1e-300).ln() - bound.ln()) / rmax.ln();
    let mut len = need.ceil().max(1.0) as usize + 1;
    let mut path = Vec::new();
    loop {
        if len > MAX_PROJECTION_TERMS {
            return Err(FractalError::Divergence(len));
        }
        extend_path(sampler, &mut path, len, rng);
        let p = natural_project_exact(g, &path)?;
        if &p.radius <= tol {
            return Ok((path, p));
        }
        len += len / 2 + 1;
    }
}

// ---------------------------------------------------------------------------
// continued fractions

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CfStatus {
    /// All requested digits were produced.
    Complete,
    /// The input is rational within working precision.
    Terminated,
    /// Accumulated rounding error no longer determines the next digit.
    PrecisionExhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfExpansion {
    pub digits: Vec<u64>,
    pub status: CfStatus,
}

/// Digits `a_1, a_2, …` of `x ∈ (0, 1)` in double precision with a running
/// error bound.
pub fn cf_digits(x: f64, n: usize) -> CfExpansion {
    let mut digits = Vec::new();
    let mut y = x.fract();
    let mut err = f64::EPSILON * x.abs().max(f64::MIN_POSITIVE);
    while digits.len() < n {
        if y <= err {
            return CfExpansion { digits, status: CfStatus::Terminated };
        }
        if err > 1e-3 {
            return CfExpansion { digits, status: CfStatus::PrecisionExhausted };
        }
        let inv = 1.0 / y;
        let inv_err = err / (y * (y - err)) + f64::EPSILON * inv;
        let a = inv.floor();
        let f = inv - a;
        if f <= inv_err {
            digits.push(a as u64);
            return CfExpansion { digits, status: CfStatus::Terminated };
        }
        if 1.0 - f <= inv_err {
            digits.push(a as u64 + 1);
            return CfExpansion { digits, status: CfStatus::Terminated };
        }
        if (f - inv_err).floor() != (f + inv_err).floor() || (inv - inv_err).floor() != a {
            return CfExpansion { digits, status: CfStatus::PrecisionExhausted };
        }
        digits.push(a as u64);
        y = f;
        err = inv_err;
    }
    CfExpansion { digits, status: CfStatus::Complete }
}

/// Convergents `p_k / q_k` of `[0; a_1, a_2, …]`.
pub fn convergents(digits: &[u64]) -> Vec<(BigInt, BigInt)> {
    let (mut p2, mut q2) = (BigInt::one(), BigInt::zero());
    let (mut p1, mut q1) = (BigInt::zero(), BigInt::one());
    let mut out = Vec::with_capacity(digits.len());
    for &a in digits {
        let a = BigInt::from(a);
        let p = &a * &p1 + &p2;
        let q = &a * &q1 + &q2;
        p2 = std::mem::replace(&mut p1, p.clone());
        q2 = std::mem::replace(&mut q1, q.clone());
        out.push((p, q));
    }
    out
}

/// `(F_{k-1}/F_k)` with error below `tol`, a rational stand-in for the
/// inverse golden ratio.
pub fn golden_ratio_rational(tol: f64) -> Q {
    let (mut a, mut b) = (BigInt::one(), BigInt::one());
    loop {
        let c = &a + &b;
        a = b;
        b = c;
        // |F_{k-1}/F_k - 1/φ| < 1/F_k²
        let bf = b.to_f64().unwrap_or(f64::INFINITY);
        if bf.is_infinite() || 1.0 / (bf * bf) < tol {
            return Q::new(a, b);
        }
    }
}

/// Digits of `Π(ω)` for a random chain path, settled by interval
/// arithmetic; the path grows until `n` digits are certain. Requires
/// `M = N = 1` and an attractor inside `[0, 1]`.
pub fn random_point_cf_digits<R: Rng + ?Sized>(
    g: &Gdifs,
    sampler: &ChainSampler,
    n: usize,
    rng: &mut R,
) -> Result<(f64, Vec<u64>)> {
    if g.m_dim != 1 || g.n_dim != 1 {
        return Err(FractalError::Dimension("continued fractions need M = N = 1".into()));
    }
    g.require_contracting()?;
    let rmax = g.max_ratio();
    // q_n grows like e^{1.19 n}; Π must be known to about q_n^{-2}
    let mut len = ((2.4 * n as f64 + 10.0) / -rmax.ln()).ceil() as usize;
    let mut path = Vec::new();
    loop {
        if len > MAX_PROJECTION_TERMS {
            return Err(FractalError::Divergence(len));
        }
        extend_path(sampler, &mut path, len, rng);
        let p = natural_project_exact(g, &path)?;
        let c = p.center.at(0, 0);
        let lo = c - &p.radius;
        let hi = c + &p.radius;
        if lo.is_positive() && hi < Q::one() {
            let digits = exact::cf_digits_interval(&lo, &hi, n);
            if digits.len() >= n {
                return Ok((exact::to_f64(c), digits));
            }
        }
        len += len / 2 + 8;
    }
}

/// `P(a = k) = log₂(1 + 1/(k(k+2)))`.
pub fn gauss_probability(k: u64) -> f64 {
    let k = k as f64;
    (1.0 + 1.0 / (k * (k + 2.0))).log2()
}

/// Largest digit with its own bin; larger digits share one tail bin.
pub const GAUSS_BINS: u64 = 30;
/// Minimum number of points for [`gauss_statistics`].
pub const MIN_GAUSS_POINTS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DigitLine {
    /// Digit value; `GAUSS_BINS + 1` stands for the tail.
    pub digit: u64,
    pub count: u64,
    pub frequency: f64,
    pub predicted: f64,
    pub deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussStatistics {
    pub n_points: usize,
    pub n_digits: u64,
    pub table: Vec<DigitLine>,
    pub digit_one_frequency: f64,
    pub chi_square: ChiSquareTest,
    /// One digit value makes up every digit.
    pub degenerate: bool,
    pub consistent_with_gauss: bool,
}

/// Significance level below which digits are declared non-generic.
pub const GAUSS_LEVEL: f64 = 1e-3;

/// Pooled digit frequencies of the first `digits_per_point` digits of each
/// sequence against the Gauss law.
pub fn gauss_statistics(sequences: &[Vec<u64>], digits_per_point: usize) -> Result<GaussStatistics> {
    if sequences.len() < MIN_GAUSS_POINTS {
        return Err(FractalError::Insufficient { need: MIN_GAUSS_POINTS, got: sequences.len() });
    }
    let nb = GAUSS_BINS as usize + 1;
    let mut counts = vec![0u64; nb];
    let mut distinct = HashSet::new();
    for seq in sequences {
        for &a in seq.iter().take(digits_per_point) {
            if a == 0 {
                continue;
            }
            distinct.insert(a);
            counts[(a.min(GAUSS_BINS + 1) - 1) as usize] += 1;
        }
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(FractalError::Insufficient { need: 1, got: 0 });
    }
    let mut probs: Vec<f64> = (1..=GAUSS_BINS).map(gauss_probability).collect();
    probs.push((1.0 + 1.0 / (GAUSS_BINS as f64 + 1.0)).log2());
    let table: Vec<DigitLine> = counts
        .iter()
        .zip(&probs)
        .enumerate()
        .map(|(i, (&c, &p))| {
            let f = c as f64 / total as f64;
            DigitLine { digit: i as u64 + 1, count: c, frequency: f, predicted: p, deviation: f - p }
        })
        .collect();
    let chi_square = stats::chi_square_gof(&counts, &probs);
    let degenerate = distinct.len() <= 1;
    Ok(GaussStatistics {
        n_points: sequences.len(),
        n_digits: total,
        digit_one_frequency: table[0].frequency,
        consistent_with_gauss: !degenerate && chi_square.p_value >= GAUSS_LEVEL,
        table,
        chi_square,
        degenerate,
    })
}

/// [`gauss_statistics`] on double-precision points (at most about 35
/// reliable digits each).
pub fn gauss_statistics_from_points(points: &[f64], digits_per_point: usize) -> Result<GaussStatistics> {
    let seqs: Vec<Vec<u64>> = points.iter().map(|&x| cf_digits(x, digits_per_point).digits).collect();
    gauss_statistics(&seqs, digits_per_point)
}

/// Digits of `n_points` independent Wang-measure points, replica `i` drawing
/// from stream `(seed, i)`.
pub fn wang_cf_digits(g: &Gdifs, n_points: usize, n_digits: usize, seed: u64) -> Result<Vec<(f64, Vec<u64>)>> {
    let chain = wang_measure(g)?;
    let sampler = ChainSampler::new(&chain)?;
    (0..n_points)
        .into_par_iter()
        .map(|i| {
            let mut rng = markov::replica_rng(seed, i as u64);
            random_point_cf_digits(g, &sampler, n_digits, &mut rng)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// trajectories

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrajectoryOptions {
    pub t_max: f64,
    pub dt: f64,
    /// Levels `λ` of the Mahler sets `K_λ` to track.
    pub lambdas: Vec<f64>,
    pub radii: Vec<f64>,
    pub badly_threshold: f64,
    pub dirichlet_lambda: f64,
    pub generic_tolerance: f64,
    /// Run [`direct_dioph_search`] up to this bound as well.
    pub q_max: Option<u64>,
}

impl Default for TrajectoryOptions {
    fn default() -> Self {
        Self {
            t_max: 30.0,
            dt: 0.1,
            lambdas: vec![0.1, 0.5, 0.95],
            radii: vec![1.0, 1.5, 2.0],
            badly_threshold: 0.1,
            dirichlet_lambda: 0.95,
            generic_tolerance: 0.10,
            q_max: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MahlerRecord {
    pub lambda: f64,
    /// Last sampled time at which the lattice lay in `K_λ`.
    pub last_time_in: Option<f64>,
    /// The trajectory stayed outside `K_λ` on `(T/2, T]`.
    pub escaped: bool,
    pub fraction_outside: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiegelAverage {
    pub radius: f64,
    pub average: f64,
    pub target: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub q: u64,
    /// Minimum over `0 < ∥q∥ ≤ Q`.
    pub cumulative: f64,
    /// Minimum over `Q/2 < ∥q∥ ≤ Q`.
    pub shell: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiophReport {
    pub alpha: Vec<Vec<f64>>,
    pub m_dim: usize,
    pub n_dim: usize,
    pub t_max: f64,
    pub dt: f64,
    pub samples: usize,
    /// Smallest sup-norm shortest vector over the sampled times.
    pub trajectory_min_shortest: f64,
    pub min_shortest_time: f64,
    pub mahler: Vec<MahlerRecord>,
    pub direct_search_curve: Option<Vec<CurvePoint>>,
    pub siegel_time_average: Vec<SiegelAverage>,
    pub badly_approx_evidence: bool,
    pub dirichlet_improvable_evidence: bool,
    pub generic_type_evidence: bool,
}

/// Follows `a_t u_α Z^d` for `t = 0, dt, …, T`.
///
/// An exact integer basis change `U` is maintained so that the sampled
/// basis `a_t u_α U` stays reduced; its entries are formed from
/// `U_top - α U_bot` in rational arithmetic and only then rounded, so the
/// trajectory is accurate as long as `α` is given to about `e^{-2T}`.
pub fn trajectory_report(alpha: &RMat, opts: &TrajectoryOptions) -> Result<DiophReport> {
    let (m, n) = alpha.shape();
    let d = m + n;
    if m == 0 || n == 0 || d > lattice::MAX_ENUM_DIM {
        return Err(FractalError::Dimension(format!("M + N = {d} exceeds {}", lattice::MAX_ENUM_DIM)));
    }
    if !(opts.t_max > 0.0 && opts.t_max <= MAX_FLOW_TIME) {
        return Err(FractalError::Invalid(format!("T must lie in (0, {MAX_FLOW_TIME}]")));
    }
    if !(opts.dt > 0.0 && opts.dt <= 0.1) {
        return Err(FractalError::Invalid("dt must lie in (0, 0.1]".into()));
    }
    let steps = (opts.t_max / opts.dt).round() as usize;
    let mut u: Vec<Vec<BigInt>> = (0..d).map(|i| (0..d).map(|j| BigInt::from(i64::from(i == j))).collect()).collect();
    let mut min_short = f64::INFINITY;
    let mut min_time = 0.0;
    let mut last_in: Vec<Option<f64>> = vec![None; opts.lambdas.len()];
    let mut outside = vec![0usize; opts.lambdas.len()];
    let mut siegel_sum = vec![0u64; opts.radii.len()];
    for step in 0..=steps {
        let t = step as f64 * opts.dt;
        let up = (t / m as f64).exp();
        let down = (-t / n as f64).exp();
        let mut basis = Mat::zeros(d, d);
        for j in 0..d {
            for i in 0..m {
                let mut v = Q::from_integer(u[i][j].clone());
                for k in 0..n {
                    v -= alpha.at(i, k) * &u[m + k][j];
                }
                basis[(i, j)] = up * exact::to_f64(&v);
            }
            for k in 0..n {
                basis[(m + k, j)] = down * u[m + k][j].to_f64().unwrap_or(f64::NAN);
            }
        }
        let (reduced, v) = lattice::reduce_with_transform(&LatticePoint { basis, reduced: false })?;
        u = (0..d)
            .map(|i| (0..d).map(|j| (0..d).map(|k| &u[i][k] * v[j][k]).sum()).collect())
            .collect();
        let sv = lattice::shortest_vector(&reduced, Norm::Sup)?;
        if sv.length < min_short {
            min_short = sv.length;
            min_time = t;
        }
        for (l, &lam) in opts.lambdas.iter().enumerate() {
            if sv.length >= lam {
                last_in[l] = Some(t);
            } else {
                outside[l] += 1;
            }
        }
        if let Some(rmax) = opts.radii.iter().copied().reduce(f64::max) {
            let work = lattice::siegel_work_estimate(&reduced, rmax)?;
            if work > MAX_TRAJECTORY_SIEGEL_WORK {
                return Err(FractalError::Infeasible(format!(
                    "trajectory entered the cusp at t = {t:.2}: about {work:.3e} lattice points per Siegel count"
                )));
            }
            for (s, c) in siegel_sum.iter_mut().zip(lattice::siegel_counts(&reduced, &opts.radii)?) {
                *s += c;
            }
        }
    }
    let samples = steps + 1;
    let half = 0.5 * opts.t_max;
    let mahler: Vec<MahlerRecord> = opts
        .lambdas
        .iter()
        .zip(&last_in)
        .zip(&outside)
        .map(|((&lambda, &last), &out)| MahlerRecord {
            lambda,
            last_time_in: last,
            escaped: last.is_none_or(|t| t <= half),
            fraction_outside: out as f64 / samples as f64,
        })
        .collect();
    let siegel_time_average: Vec<SiegelAverage> = opts
        .radii
        .iter()
        .zip(&siegel_sum)
        .map(|(&radius, &sum)| {
            let average = sum as f64 / samples as f64;
            let target = lattice::ball_volume(d, radius);
            SiegelAverage { radius, average, target, relative_error: (average - target).abs() / target }
        })
        .collect();
    let dirichlet = opts
        .lambdas
        .iter()
        .position(|&l| (l - opts.dirichlet_lambda).abs() < 1e-12)
        .map(|i| mahler[i].escaped)
        .unwrap_or_else(|| {
            // the configured level was not tracked separately
            false
        });
    let direct_search_curve = match opts.q_max {
        Some(q) => Some(direct_dioph_search(alpha, q)?),
        None => None,
    };
    Ok(DiophReport {
        alpha: (0..m).map(|i| alpha.row(i).iter().map(exact::to_f64).collect()).collect(),
        m_dim: m,
        n_dim: n,
        t_max: opts.t_max,
        dt: opts.dt,
        samples,
        trajectory_min_shortest: min_short,
        min_shortest_time: min_time,
        mahler,
        direct_search_curve,
        badly_approx_evidence: min_short >= opts.badly_threshold,
        dirichlet_improvable_evidence: dirichlet,
        generic_type_evidence: !siegel_time_average.is_empty()
            && siegel_time_average.iter().all(|s| s.relative_error <= opts.generic_tolerance),
        siegel_time_average,
    })
}

/// `1, 2, 4, …` below `q_max`, then `q_max`.
pub fn doubling_schedule(q_max: u64) -> Vec<u64> {
    let mut out = Vec::new();
    let mut q = 1u64;
    while q < q_max {
        out.push(q);
        q *= 2;
    }
    out.push(q_max);
    out
}

const FIXED_BITS: u32 = 90;

/// `min ∥q∥_∞^{N/M} · ∥αq − p∥_∞` over integer `q ≠ 0` and `p`, on a doubling
/// schedule of bounds `Q`. Fractional parts of `α` are held in fixed point
/// with 90 bits.
pub fn direct_dioph_search(alpha: &RMat, q_max: u64) -> Result<Vec<CurvePoint>> {
    let (m, n) = alpha.shape();
    if q_max == 0 {
        return Err(FractalError::Infeasible("Q must be positive".into()));
    }
    let nats = n as f64 * (q_max as f64).ln();
    let count = (2.0 * q_max as f64 + 1.0).powi(n as i32) / 2.0;
    if nats > 30.0 || count > MAX_ENUMERATION {
        return Err(FractalError::Infeasible(format!(
            "{count:.3e} vectors for N = {n}, Q = {q_max} (N log Q = {nats:.1})"
        )));
    }
    let modulus: i128 = 1i128 << FIXED_BITS;
    let scale = Q::from_integer(BigInt::from(modulus));
    let fixed: Vec<Vec<i128>> = (0..m)
        .map(|i| {
            (0..n)
                .map(|k| {
                    let x = alpha.at(i, k);
                    let frac = x - x.floor();
                    (frac * &scale).floor().to_integer().to_i128().unwrap_or(0)
                })
                .collect()
        })
        .collect();
    let schedule = doubling_schedule(q_max);
    let mut bucket_min = vec![f64::INFINITY; schedule.len()];
    let mut shell = vec![f64::INFINITY; schedule.len()];
    let exponent = n as f64 / m as f64;
    let mut q = vec![-(q_max as i64); n];
    loop {
        let lead = q.iter().find(|&&v| v != 0).copied().unwrap_or(0);
        if lead > 0 {
            let norm = q.iter().map(|v| v.unsigned_abs()).max().unwrap_or(0);
            let mut dist: f64 = 0.0;
            for row in &fixed {
                let s: i128 = row.iter().zip(&q).map(|(&a, &c)| a * c as i128).sum();
                let r = s.rem_euclid(modulus);
                let r = r.min(modulus - r);
                dist = dist.max(r as f64 / modulus as f64);
            }
            let value = (norm as f64).powf(exponent) * dist;
            let b = schedule.partition_point(|&qq| qq < norm);
            bucket_min[b] = bucket_min[b].min(value);
            for (i, &qq) in schedule.iter().enumerate().skip(b) {
                if 2 * norm <= qq {
                    break;
                }
                shell[i] = shell[i].min(value);
            }
        }
        let mut k = n;
        loop {
            if k == 0 {
                let mut run = f64::INFINITY;
                return Ok(schedule
                    .iter()
                    .zip(bucket_min.iter().zip(&shell))
                    .map(|(&q, (&b, &s))| {
                        run = run.min(b);
                        CurvePoint { q, cumulative: run, shell: s }
                    })
                    .collect());
            }
            k -= 1;
            if q[k] < q_max as i64 {
                q[k] += 1;
                break;
            }
            q[k] = -(q_max as i64);
        }
    }
}

// ---------------------------------------------------------------------------
// magic formula

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    /// `Π` in double precision.
    Double,
    /// `Π` in exact rational arithmetic, rounded once.
    Extended,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MagicReport {
    pub n: usize,
    pub t_n: f64,
    /// Max distance of the change of basis between the two lattices from
    /// the nearest integer matrix.
    pub residual: f64,
    pub unimodular: bool,
}

/// Tolerance for evaluating `Π` in [`magic_formula_check`].
pub const MAGIC_PI_TOL: f64 = 1e-10;

fn project_at(g: &Gdifs, path: &[usize], precision: Precision) -> Result<Mat> {
    match precision {
        Precision::Double => Ok(natural_project(g, path, MAGIC_PI_TOL)?.point),
        Precision::Extended => {
            let p = natural_project(g, path, MAGIC_PI_TOL)?;
            Ok(natural_project_exact(g, &path[..p.terms])?.to_mat())
        }
    }
}

/// Compares `a_{t_n} u_{Π(ω)} Z^d` with
/// `k(g_{ω|n})^{-1} u_{Π(T^n ω)} g_{ω|n} Z^d`, where
/// `g_{ω|n} = g_{ω_{n-1}} ⋯ g_{ω_0}` and `t_n = t(g_{ω|n})`.
///
/// Both sides are assembled as elements of `P` and compared through the
/// change of basis `(a_{t_n} u_{Π(ω)})^{-1} k^{-1} u_{Π(T^n ω)} g_{ω|n}`,
/// which avoids inverting matrices with entries of size `e^{t_n}`.
pub fn magic_formula_check(g: &Gdifs, path: &[usize], n: usize, precision: Precision) -> Result<MagicReport> {
    g.check_path(path)?;
    if n > path.len() {
        return Err(FractalError::PathTooShort { len: path.len(), tol: MAGIC_PI_TOL });
    }
    let elems = g.group_elements()?;
    let (m, nn) = (g.m_dim, g.n_dim);
    let mut gw = PElement::identity(m, nn);
    for &e in &path[..n] {
        gw = elems[e].mul(&gw);
    }
    gw.validate()?;
    let alpha = project_at(g, path, precision)?;
    let beta = project_at(g, &path[n..], precision)?;
    let lhs = PElement { t: gw.t, alpha, ..PElement::identity(m, nn) };
    let kinv = PElement { o1: gw.o1.transpose(), o2: gw.o2.transpose(), ..PElement::identity(m, nn) };
    let u = PElement { alpha: beta, ..PElement::identity(m, nn) };
    let rhs = kinv.mul(&u).mul(&gw);
    let change = groups::aku_compose(&lhs.inverse().mul(&rhs));
    let rounded = change.map(f64::round);
    let residual = (&change - &rounded).iter().fold(0.0, |a: f64, &b| a.max(b.abs()));
    let unimodular = (linalg::det(&rounded).abs() - 1.0).abs() < 0.5;
    Ok(MagicReport { n, t_n: gw.t, residual, unimodular })
}

/// Lattice bases of both sides, for direct comparison when `t_n` is small.
pub fn magic_formula_bases(g: &Gdifs, path: &[usize], n: usize) -> Result<(Mat, Mat)> {
    let elems = g.group_elements()?;
    let (m, nn) = (g.m_dim, g.n_dim);
    let mut gw = PElement::identity(m, nn);
    for &e in &path[..n.min(path.len())] {
        gw = elems[e].mul(&gw);
    }
    let alpha = natural_project(g, path, MAGIC_PI_TOL)?.point;
    let beta = natural_project(g, &path[n..], MAGIC_PI_TOL)?.point;
    let lhs = groups::a_t(m, nn, gw.t) * groups::u_alpha(&alpha);
    let kinv = groups::k_block(&gw.o1.transpose(), &gw.o2.transpose());
    let rhs = kinv * groups::u_alpha(&beta) * groups::aku_compose(&gw);
    Ok((lhs, rhs))
}

// ---------------------------------------------------------------------------
// structural spot checks

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrreducibilityReport {
    /// Dimension of the affine hull of the candidate fixed points, per
    /// vertex.
    pub hull_dims: Vec<usize>,
    /// A family of proper affine subspaces with `φ_e(L_{t(e)}) = L_{i(e)}`
    /// was found, so the system is reducible.
    pub reducible_witness: bool,
}

fn flatten(x: &Mat) -> Vec<f64> {
    let (m, n) = x.shape();
    (0..m * n).map(|k| x[(k / n, k % n)]).collect()
}

fn fixed_point(s: &Similarity) -> Option<Vec<f64>> {
    let (m, n) = (s.m_dim, s.n_dim);
    let dim = m * n;
    // vec(r O1 X O2) in row-major coordinates
    let op = Mat::from_fn(dim, dim, |row, col| {
        let (i, j) = (row / n, row % n);
        let (k, l) = (col / n, col % n);
        s.ratio * s.o1[(i, k)] * s.o2[(l, j)]
    });
    let lhs = Mat::identity(dim, dim) - op;
    let b = nalgebra::DVector::from_vec(flatten(&s.translation));
    lhs.lu().solve(&b).map(|x| x.iter().copied().collect())
}

struct AffineHull {
    origin: Vec<f64>,
    basis: Vec<Vec<f64>>,
}

impl AffineHull {
    fn new(points: &[Vec<f64>]) -> Self {
        let origin = points[0].clone();
        let mut basis: Vec<Vec<f64>> = Vec::new();
        for p in &points[1..] {
            let mut v: Vec<f64> = p.iter().zip(&origin).map(|(a, b)| a - b).collect();
            for b in &basis {
                let c: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                for (x, y) in v.iter_mut().zip(b) {
                    *x -= c * y;
                }
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-9 {
                basis.push(v.into_iter().map(|x| x / norm).collect());
            }
        }
        Self { origin, basis }
    }

    fn dim(&self) -> usize {
        self.basis.len()
    }

    fn distance(&self, p: &[f64]) -> f64 {
        let mut v: Vec<f64> = p.iter().zip(&self.origin).map(|(a, b)| a - b).collect();
        for b in &self.basis {
            let c: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            for (x, y) in v.iter_mut().zip(b) {
                *x -= c * y;
            }
        }
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    fn spanning_points(&self) -> Vec<Vec<f64>> {
        let mut out = vec![self.origin.clone()];
        for b in &self.basis {
            out.push(self.origin.iter().zip(b).map(|(o, x)| o + x).collect());
        }
        out
    }
}

/// Longest cycle length used by [`irreducibility_falsifier`].
pub const FALSIFIER_CYCLE_LEN: usize = 4;

/// Searches for invariant proper affine subspaces spanned by the fixed
/// points of cycles of length at most four. Finding none is not a proof of
/// irreducibility.
pub fn irreducibility_falsifier(g: &Gdifs) -> Result<IrreducibilityReport> {
    g.require_contracting()?;
    let nv = g.vertices.len();
    let full = g.m_dim * g.n_dim;
    let mut points: Vec<Vec<Vec<f64>>> = vec![Vec::new(); nv];
    // paths as (start vertex, composed similarity, current end vertex)
    let mut frontier: Vec<(usize, Similarity, usize)> = g.edges.iter().map(|e| (e.from, e.sim.clone(), e.to)).collect();
    for _ in 0..FALSIFIER_CYCLE_LEN {
        let mut next = Vec::new();
        for (start, f, end) in &frontier {
            if start == end {
                if let Some(p) = fixed_point(f) {
                    points[*start].push(p);
                }
            }
            for e in g.edges.iter().filter(|e| e.from == *end) {
                next.push((*start, f.compose(&e.sim), e.to));
            }
        }
        frontier = next;
    }
    let hulls: Vec<Option<AffineHull>> =
        points.iter().map(|p| if p.is_empty() { None } else { Some(AffineHull::new(p)) }).collect();
    let hull_dims = hulls.iter().map(|h| h.as_ref().map_or(full, AffineHull::dim)).collect::<Vec<_>>();
    let proper = hulls.iter().all(|h| h.as_ref().is_some_and(|h| h.dim() < full));
    let mut reducible_witness = proper;
    if proper {
        'edges: for e in &g.edges {
            let src = hulls[e.to].as_ref().unwrap();
            let dst = hulls[e.from].as_ref().unwrap();
            if src.dim() != dst.dim() {
                reducible_witness = false;
                break;
            }
            for p in src.spanning_points() {
                let x = Mat::from_row_slice(g.m_dim, g.n_dim, &p);
                let y = flatten(&e.sim.apply(&x));
                if dst.distance(&y) > 1e-8 * (1.0 + g.radius_bound()) {
                    reducible_witness = false;
                    break 'edges;
                }
            }
        }
    }
    Ok(IrreducibilityReport { hull_dims, reducible_witness })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenSetReport {
    pub samples: usize,
    /// Sampled points of `box_{t(e)}` mapped outside `box_{i(e)}`.
    pub containment_violations: usize,
    /// Sampled points of `φ_e(box_{t(e)})` inside another image
    /// `φ_{e'}(box_{t(e')})` with `i(e) = i(e')`.
    pub overlap_violations: usize,
}

fn in_box(p: &[f64], b: &(Vec<f64>, Vec<f64>), strict: bool) -> bool {
    p.iter().zip(b.0.iter().zip(&b.1)).all(|(&x, (&lo, &hi))| if strict { lo < x && x < hi } else { lo <= x && x <= hi })
}

/// Heuristic open-set-condition check on the configured boxes.
pub fn open_set_spot_check<R: Rng + ?Sized>(g: &Gdifs, samples: usize, rng: &mut R) -> Result<OpenSetReport> {
    let boxes = g.boxes.as_ref().ok_or_else(|| FractalError::Invalid("no boxes configured".into()))?;
    let inverses: Vec<Similarity> = g.edges.iter().map(|e| e.sim.inverse()).collect();
    let mut containment_violations = 0;
    let mut overlap_violations = 0;
    let mut total = 0;
    for (k, e) in g.edges.iter().enumerate() {
        let b = &boxes[e.to];
        for _ in 0..samples {
            let p: Vec<f64> = b.0.iter().zip(&b.1).map(|(&lo, &hi)| lo + (hi - lo) * rng.random::<f64>()).collect();
            let y = e.sim.apply(&Mat::from_row_slice(g.m_dim, g.n_dim, &p));
            let yf = flatten(&y);
            total += 1;
            if !in_box(&yf, &boxes[e.from], false) {
                containment_violations += 1;
            }
            for (k2, f) in g.edges.iter().enumerate() {
                if k2 == k || f.from != e.from {
                    continue;
                }
                let back = flatten(&inverses[k2].apply(&y));
                if in_box(&back, &boxes[f.to], true) {
                    overlap_violations += 1;
                    break;
                }
            }
        }
    }
    Ok(OpenSetReport { samples: total, containment_violations, overlap_violations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markov::replica_rng;

    fn q(p: i64, d: i64) -> Q {
        Q::new(p.into(), d.into())
    }

    fn single_edge(r: &str) -> Gdifs {
        Gdifs::from_spec(GdifsSpec {
            m_dim: 1,
            n_dim: 1,
            vertices: vec!["v".into()],
            edges: vec![EdgeSpec {
                id: "0".into(),
                from: "v".into(),
                to: "v".into(),
                ratio: r.into(),
                o1: None,
                o2: None,
                translation: vec![vec![0.25.into()]],
            }],
            boxes: None,
        })
        .unwrap()
    }

    #[test]
    fn loads_json_and_rejects_bad_graphs() {
        let text = r#"{"vertices":["a","b"],"edges":[
            {"id":"x","from":"a","to":"b","ratio":"1/2","translation":[[0]]},
            {"id":"y","from":"b","to":"a","ratio":0.5,"translation":[["1/2"]]}]}"#;
        let g = Gdifs::from_json(text).unwrap();
        assert_eq!(g.edges.len(), 2);
        assert_eq!(g.edges[1].exact.ratio, q(1, 2));
        let disconnected = r#"{"vertices":["a","b"],"edges":[
            {"id":"x","from":"a","to":"a","ratio":"1/2","translation":[[0]]},
            {"id":"y","from":"b","to":"b","ratio":"1/2","translation":[[0]]}]}"#;
        assert!(matches!(Gdifs::from_json(disconnected), Err(FractalError::NotConnected { .. })));
        let unknown = r#"{"vertices":["a"],"edges":[{"id":"x","from":"a","to":"z","ratio":"1/2","translation":[[0]]}]}"#;
        assert!(matches!(Gdifs::from_json(unknown), Err(FractalError::Invalid(_))));
    }

    #[test]
    fn dimension_examples() {
        assert_eq!(hausdorff_dimension(&single_edge("1/3")).unwrap(), 0.0);
        let s = hausdorff_dimension(&cantor_middle_thirds()).unwrap();
        assert!((s - 2f64.ln() / 3f64.ln()).abs() < 1e-10);
        let s = hausdorff_dimension(&two_vertex_golden()).unwrap();
        let golden = (1.0 + 5f64.sqrt()) / 2.0;
        assert!((s - golden.log2()).abs() < 1e-10);
        assert!((spectral_radius(&two_vertex_golden(), s) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn non_contracting_edge_is_a_domain_error() {
        assert!(matches!(hausdorff_dimension(&single_edge("2")), Err(FractalError::NotContracting { .. })));
    }

    #[test]
    fn cantor_wang_chain_is_fair_coin() {
        let c = wang_measure(&cantor_middle_thirds()).unwrap();
        for row in &c.trans {
            for &p in row {
                assert!((p - 0.5).abs() < 1e-12);
            }
        }
        assert!((c.start[0] - 0.5).abs() < 1e-12);
        let loop_chain = wang_measure(&single_edge("1/2")).unwrap();
        assert_eq!(loop_chain.trans, vec![vec![1.0]]);
    }

    #[test]
    fn two_vertex_wang_chain_is_adapted_and_stochastic() {
        let g = two_vertex_golden();
        let c = wang_measure(&g).unwrap();
        for (from, e) in g.edges.iter().enumerate() {
            let sum: f64 = (0..c.len()).map(|to| c.trans[to][from]).sum();
            assert!((sum - 1.0).abs() < 1e-10);
            for (to, f) in g.edges.iter().enumerate() {
                assert_eq!(c.trans[to][from] > 0.0, e.to == f.from);
            }
        }
    }

    #[test]
    fn projection_fixed_points() {
        let g = cantor_middle_thirds();
        let p = natural_project(&g, &periodic_path(&[0], 100), 1e-12).unwrap();
        assert!(p.point[(0, 0)].abs() <= 1e-12 && p.error_bound <= 1e-12);
        let p = natural_project(&g, &periodic_path(&[1], 100), 1e-12).unwrap();
        assert!((p.point[(0, 0)] - 1.0).abs() <= 1e-12);
        let p = natural_project(&g, &periodic_path(&[0, 1], 100), 1e-12).unwrap();
        assert!((p.point[(0, 0)] - 0.25).abs() <= 1e-12);
        let e = natural_project_exact(&g, &periodic_path(&[0, 1], 60)).unwrap();
        assert!((e.center.at(0, 0) - q(1, 4)).abs() <= e.radius);
    }

    #[test]
    fn projection_errors() {
        let g = two_vertex_golden();
        // uv must be followed by an edge leaving v
        assert!(matches!(natural_project(&g, &[0, 0, 0], 1e-3), Err(FractalError::Path { index: 1 })));
        let g = cantor_middle_thirds();
        assert!(matches!(natural_project(&g, &[0, 0], 1e-9), Err(FractalError::PathTooShort { .. })));
    }

    #[test]
    fn projection_is_seed_independent_within_bound() {
        let g = cantor_middle_thirds();
        let path = periodic_path(&[1, 0, 0, 1, 1], 200);
        let a = natural_project(&g, &path, 1e-9).unwrap();
        let b = natural_project_from(&g, &path, 1e-9, &Mat::from_element(1, 1, 0.7)).unwrap();
        assert!((a.point[(0, 0)] - b.point[(0, 0)]).abs() <= a.error_bound.max(b.error_bound));
    }

    #[test]
    fn cf_examples() {
        let golden = (5f64.sqrt() - 1.0) / 2.0;
        let cf = cf_digits(golden, 30);
        assert_eq!(cf.status, CfStatus::Complete);
        assert!(cf.digits.iter().all(|&a| a == 1));
        assert_eq!(cf_digits(0.5, 10), CfExpansion { digits: vec![2], status: CfStatus::Terminated });
        assert_eq!(cf_digits(2.0 / 7.0, 10), CfExpansion { digits: vec![3, 2], status: CfStatus::Terminated });
        let long = cf_digits(golden, 60);
        assert_eq!(long.status, CfStatus::PrecisionExhausted);
        assert!(long.digits.len() >= 30);
    }

    #[test]
    fn convergents_reconstruct_within_inverse_square() {
        let x = std::f64::consts::PI - 3.0;
        let cf = cf_digits(x, 10);
        assert_eq!(&cf.digits[..4], &[7, 15, 1, 292]);
        for (p, qd) in convergents(&cf.digits) {
            let (pf, qf) = (p.to_f64().unwrap(), qd.to_f64().unwrap());
            assert!((x - pf / qf).abs() <= 1.0 / (qf * qf) + 1e-15);
        }
    }

    #[test]
    fn gauss_law_and_degenerate_input() {
        assert!((gauss_probability(1) - (4f64 / 3.0).log2()).abs() < 1e-15);
        let total: f64 = (1..=GAUSS_BINS).map(gauss_probability).sum::<f64>() + (1.0 + 1.0 / 31.0f64).log2();
        assert!((total - 1.0).abs() < 1e-12);
        let golden = vec![vec![1u64; 30]; 100];
        let st = gauss_statistics(&golden, 30).unwrap();
        assert_eq!(st.digit_one_frequency, 1.0);
        assert!(st.degenerate && !st.consistent_with_gauss);
        assert!(matches!(gauss_statistics(&golden[..10], 30), Err(FractalError::Insufficient { .. })));
    }

    #[test]
    fn rational_alpha_collapses() {
        let r = trajectory_report(&RMat::scalar(q(1, 2)), &TrajectoryOptions { t_max: 10.0, ..Default::default() }).unwrap();
        assert!(r.trajectory_min_shortest < 2.0 * (-10f64).exp() * 1.01);
        assert!(r.dirichlet_improvable_evidence && !r.badly_approx_evidence);
        let curve = direct_dioph_search(&RMat::scalar(q(1, 2)), 16).unwrap();
        assert!(curve[0].cumulative > 0.0);
        assert!(curve.iter().filter(|c| c.q >= 2).all(|c| c.cumulative == 0.0));
    }

    #[test]
    fn golden_alpha_stays_bounded() {
        let alpha = RMat::scalar(golden_ratio_rational((-80f64).exp()));
        let r = trajectory_report(&alpha, &TrajectoryOptions { t_max: 30.0, q_max: Some(1000), ..Default::default() }).unwrap();
        assert!(r.trajectory_min_shortest >= 0.3, "{}", r.trajectory_min_shortest);
        assert!(r.badly_approx_evidence);
        let curve = r.direct_search_curve.unwrap();
        assert!(curve.windows(2).all(|w| w[1].cumulative <= w[0].cumulative));
        let last = curve.last().unwrap();
        assert_eq!(last.q, 1000);
        assert!((last.shell - 1.0 / 5f64.sqrt()).abs() < 1e-3, "{}", last.shell);
    }

    #[test]
    fn dirichlet_search_infeasible_cases() {
        let alpha = RMat::from_rows(&[vec![q(1, 3), q(1, 5), q(1, 7)]]).unwrap();
        assert!(matches!(direct_dioph_search(&alpha, 100_000), Err(FractalError::Infeasible(_))));
        let curve = direct_dioph_search(&alpha, 8).unwrap();
        assert!(curve.iter().all(|c| c.cumulative.is_finite()));
    }

    #[test]
    fn magic_formula_small_cases() {
        let g = cantor_middle_thirds();
        let path = periodic_path(&[0, 1, 1], 120);
        let r = magic_formula_check(&g, &path, 0, Precision::Double).unwrap();
        assert_eq!(r.residual, 0.0);
        let mut rng = replica_rng(5, 0);
        let chain = wang_measure(&g).unwrap();
        let sampler = ChainSampler::new(&chain).unwrap();
        let path = sample_path(&sampler, 200, &mut rng);
        for n in [1, 5, 20] {
            let r = magic_formula_check(&g, &path, n, Precision::Double).unwrap();
            assert!(r.residual <= 1e-6 && r.unimodular, "n={n}: {r:?}");
        }
        let r = magic_formula_check(&g, &path, 50, Precision::Extended).unwrap();
        assert!(r.residual <= 1e-6, "{r:?}");
        // small t: compare raw bases as lattices
        let (a, b) = magic_formula_bases(&g, &path, 4).unwrap();
        let (res, uni) = lattice::lattice_residual(
            &LatticePoint { basis: a, reduced: false },
            &LatticePoint { basis: b, reduced: false },
        )
        .unwrap();
        assert!(res <= 1e-8 && uni);
    }

    #[test]
    fn t_n_gaps_are_bounded() {
        let g = two_vertex_golden();
        let chain = wang_measure(&g).unwrap();
        let sampler = ChainSampler::new(&chain).unwrap();
        let mut rng = replica_rng(9, 0);
        let path = sample_path(&sampler, 200, &mut rng);
        let elems = g.group_elements().unwrap();
        let gap = elems.iter().map(|p| p.t.abs()).fold(0.0, f64::max);
        let mut prev = 0.0;
        for n in 1..60 {
            let t = magic_formula_check(&g, &path, n, Precision::Double).unwrap().t_n;
            assert!((t - prev).abs() <= gap + 1e-9);
            prev = t;
        }
    }

    #[test]
    fn falsifier_detects_single_map_and_passes_cantor() {
        let r = irreducibility_falsifier(&single_edge("1/2")).unwrap();
        assert!(r.reducible_witness);
        let r = irreducibility_falsifier(&cantor_middle_thirds()).unwrap();
        assert!(!r.reducible_witness);
        assert_eq!(r.hull_dims, vec![1]);
    }

    #[test]
    fn open_set_boxes() {
        let mut rng = replica_rng(1, 0);
        let r = open_set_spot_check(&cantor_middle_thirds(), 200, &mut rng).unwrap();
        assert_eq!((r.containment_violations, r.overlap_violations), (0, 0));
        let r = open_set_spot_check(&two_vertex_golden(), 200, &mut rng).unwrap();
        assert_eq!((r.containment_violations, r.overlap_violations), (0, 0));
        let overlapping = cantor_middle_thirds()
            .with_edge(EdgeSpec {
                id: "2".into(),
                from: "v".into(),
                to: "v".into(),
                ratio: "1/2".into(),
                o1: None,
                o2: None,
                translation: vec![vec!["1/4".into()]],
            })
            .unwrap();
        let r = open_set_spot_check(&overlapping, 200, &mut rng).unwrap();
        assert!(r.overlap_violations > 0);
    }

    #[test]
    fn adding_an_edge_does_not_lower_dimension() {
        let g = cantor_middle_thirds();
        let s0 = hausdorff_dimension(&g).unwrap();
        let g2 = g
            .with_edge(EdgeSpec {
                id: "m".into(),
                from: "v".into(),
                to: "v".into(),
                ratio: "1/5".into(),
                o1: None,
                o2: None,
                translation: vec![vec!["2/5".into()]],
            })
            .unwrap();
        assert!(hausdorff_dimension(&g2).unwrap() >= s0);
    }

    #[test]
    fn wang_points_have_settled_digits() {
        let g = cantor_middle_thirds();
        let pts = wang_cf_digits(&g, 4, 50, 3).unwrap();
        for (x, digits) in pts {
            assert_eq!(digits.len(), 50);
            let fl = cf_digits(x, 10);
            let k = fl.digits.len().min(8);
            assert_eq!(&fl.digits[..k], &digits[..k]);
        }
    }
}
