//! Unimodular lattices `g Z^d`, their reduction and geometry, and the walk
//! driver `x_{n+1} = g_{e_n} x_n` with mergeable empirical statistics.

use crate::linalg::{self, Mat};
use crate::markov::{ChainSampler, ChainSpec, MarkovError};
use crate::stats::{self, ChiSquareTest};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LatticeError {
    #[error("basis determinant {0} is not 1")]
    NotUnimodular(f64),
    #[error("basis is numerically singular")]
    Singular,
    #[error("dimension {d} exceeds the enumeration cap {cap}")]
    TooLarge { d: usize, cap: usize },
    #[error("radius {0} outside (0, 10]")]
    Radius(f64),
    #[error("basis entry {0:e} exceeds the overflow bound")]
    Overflow(f64),
    #[error("integer change of basis overflowed")]
    IntegerOverflow,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("accumulator is empty")]
    Empty,
    #[error("about {0:.3e} lattice points in the ball exceed the enumeration cap")]
    TooManyPoints(f64),
    #[error(transparent)]
    Markov(#[from] MarkovError),
}

pub type Result<T> = std::result::Result<T, LatticeError>;

pub const LLL_DELTA: f64 = 0.99;
pub const MAX_ENUM_DIM: usize = 6;
pub const MAX_RADIUS: f64 = 10.0;
pub const OVERFLOW_BOUND: f64 = 1e12;
/// Cap on [`siegel_work_estimate`] inside [`siegel_counts`].
pub const MAX_SIEGEL_POINTS: f64 = 1e9;
pub const RENORMALIZE_EVERY: u64 = 64;
pub const DET_TOL: f64 = 1e-8;

/// A point of `SL_d(R)/SL_d(Z)` given by a basis in the columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticePoint {
    #[serde(with = "linalg::mat_rows")]
    pub basis: Mat,
    pub reduced: bool,
}

impl LatticePoint {
    pub fn new(basis: Mat) -> Result<Self> {
        if basis.nrows() != basis.ncols() || basis.nrows() == 0 {
            return Err(LatticeError::Dimension("basis must be square".into()));
        }
        if basis.iter().any(|x| !x.is_finite()) {
            return Err(LatticeError::Singular);
        }
        let dt = linalg::det(&basis);
        if (dt - 1.0).abs() > DET_TOL {
            return Err(LatticeError::NotUnimodular(dt));
        }
        Ok(Self { basis, reduced: false })
    }

    pub fn standard(d: usize) -> Self {
        Self { basis: Mat::identity(d, d), reduced: true }
    }

    pub fn dim(&self) -> usize {
        self.basis.nrows()
    }

    /// `g x` for `g ∈ SL_d(R)`.
    pub fn act(&self, g: &Mat) -> Self {
        Self { basis: g * &self.basis, reduced: false }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Gso {
    mu: Vec<Vec<f64>>,
    norms: Vec<f64>,
}

fn gram_schmidt(cols: &[Vec<f64>]) -> Result<Gso> {
    let n = cols.len();
    let mut star: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut mu = vec![vec![0.0; n]; n];
    let mut norms = vec![0.0; n];
    for i in 0..n {
        let mut v = cols[i].clone();
        for j in 0..i {
            mu[i][j] = dot(&cols[i], &star[j]) / norms[j];
            for (x, s) in v.iter_mut().zip(&star[j]) {
                *x -= mu[i][j] * s;
            }
        }
        norms[i] = dot(&v, &v);
        if !(norms[i] > 0.0) || !norms[i].is_finite() {
            return Err(LatticeError::Singular);
        }
        mu[i][i] = 1.0;
        star.push(v);
    }
    Ok(Gso { mu, norms })
}

fn to_cols(m: &Mat) -> Vec<Vec<f64>> {
    m.column_iter().map(|c| c.iter().copied().collect()).collect()
}

fn from_cols(cols: &[Vec<f64>]) -> Mat {
    let d = cols[0].len();
    Mat::from_fn(d, cols.len(), |i, j| cols[j][i])
}

/// Integer change of basis, column `j` holding the coordinates of new basis
/// vector `j` in the old basis.
pub type Unimodular = Vec<Vec<i64>>;

fn int_identity(n: usize) -> Unimodular {
    (0..n).map(|j| (0..n).map(|i| i64::from(i == j)).collect()).collect()
}

fn axpy_int(u: &mut Unimodular, k: usize, j: usize, q: i64) -> Result<()> {
    for i in 0..u.len() {
        let v = u[j][i].checked_mul(q).and_then(|x| u[k][i].checked_sub(x)).ok_or(LatticeError::IntegerOverflow)?;
        u[k][i] = v;
    }
    Ok(())
}

fn size_reduce(cols: &mut [Vec<f64>], u: &mut Unimodular, k: usize, j: usize, mu_kj: f64) -> Result<bool> {
    let q = mu_kj.round();
    if q == 0.0 {
        return Ok(false);
    }
    if q.abs() > 9.0e15 {
        return Err(LatticeError::IntegerOverflow);
    }
    let (head, tail) = cols.split_at_mut(k);
    for (x, y) in tail[0].iter_mut().zip(&head[j]) {
        *x -= q * y;
    }
    axpy_int(u, k, j, q as i64)?;
    Ok(true)
}

/// LLL reduction of the columns with parameter `delta`; returns the
/// transform.
pub fn lll(cols: &mut [Vec<f64>], delta: f64) -> Result<Unimodular> {
    let n = cols.len();
    let mut u = int_identity(n);
    let mut k = 1;
    let mut guard = 0usize;
    while k < n {
        guard += 1;
        if guard > 1_000_000 {
            return Err(LatticeError::Singular);
        }
        for j in (0..k).rev() {
            let g = gram_schmidt(cols)?;
            size_reduce(cols, &mut u, k, j, g.mu[k][j])?;
        }
        let g = gram_schmidt(cols)?;
        let m = g.mu[k][k - 1];
        if g.norms[k] >= (delta - m * m) * g.norms[k - 1] {
            k += 1;
        } else {
            cols.swap(k, k - 1);
            u.swap(k, k - 1);
            k = (k - 1).max(1);
        }
    }
    Ok(u)
}

/// Lagrange-Gauss reduction of a planar basis: `|b1| ≤ |b2|` and
/// `|<b1,b2>| ≤ |b1|²/2`.
fn gauss_reduce(cols: &mut [Vec<f64>], u: &mut Unimodular) -> Result<()> {
    for _ in 0..10_000 {
        if dot(&cols[1], &cols[1]) < dot(&cols[0], &cols[0]) {
            cols.swap(0, 1);
            u.swap(0, 1);
        }
        let mu = dot(&cols[0], &cols[1]) / dot(&cols[0], &cols[0]);
        if mu.abs() <= 0.5 + 1e-12 || !size_reduce(cols, u, 1, 0, mu)? {
            return Ok(());
        }
    }
    Err(LatticeError::Singular)
}

/// Canonical reduced basis: LLL with `δ = 0.99` (Gauss reduction in the
/// plane), first nonzero coordinate of each column positive, then the last
/// column negated if needed to restore determinant `+1`.
pub fn reduce_with_transform(x: &LatticePoint) -> Result<(LatticePoint, Unimodular)> {
    let mut cols = to_cols(&x.basis);
    let mut u = lll(&mut cols, LLL_DELTA)?;
    if cols.len() == 2 {
        gauss_reduce(&mut cols, &mut u)?;
    }
    for j in 0..cols.len() {
        let scale = cols[j].iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        let lead = cols[j].iter().find(|v| v.abs() > 1e-9 * scale).copied().unwrap_or(0.0);
        if lead < 0.0 {
            negate(&mut cols, &mut u, j);
        }
    }
    let basis = from_cols(&cols);
    if linalg::det(&basis) < 0.0 {
        let last = cols.len() - 1;
        negate(&mut cols, &mut u, last);
    }
    Ok((LatticePoint { basis: from_cols(&cols), reduced: true }, u))
}

fn negate(cols: &mut [Vec<f64>], u: &mut Unimodular, j: usize) {
    for v in cols[j].iter_mut() {
        *v = -*v;
    }
    for v in u[j].iter_mut() {
        *v = -*v;
    }
}

pub fn reduce_basis(x: &LatticePoint) -> Result<LatticePoint> {
    Ok(reduce_with_transform(x)?.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Norm {
    Euclidean,
    Sup,
}

fn vec_norm(v: &[f64], norm: Norm) -> f64 {
    match norm {
        Norm::Euclidean => dot(v, v).sqrt(),
        Norm::Sup => v.iter().fold(0.0, |a, &b| a.max(b.abs())),
    }
}

/// Upper-triangular `R` with `B = Q R` for the columns of `B`.
fn r_factor(cols: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = cols.len();
    let g = gram_schmidt(cols)?;
    let mut r = vec![vec![0.0; n]; n];
    for i in 0..n {
        let s = g.norms[i].sqrt();
        for j in i..n {
            r[i][j] = g.mu[j][i] * s;
        }
    }
    Ok(r)
}

/// Visits every coefficient vector `c` with `∥Bc∥₂² ≤ bound()` (the bound
/// may shrink during the search). Coefficients are visited from the last
/// coordinate down.
fn enumerate<F>(r: &[Vec<f64>], bound: &mut dyn FnMut() -> f64, visit: &mut F)
where
    F: FnMut(&[i64], f64),
{
    let n = r.len();
    let mut c = vec![0i64; n];
    fn rec<F: FnMut(&[i64], f64)>(
        i: usize,
        partial: f64,
        r: &[Vec<f64>],
        c: &mut Vec<i64>,
        bound: &mut dyn FnMut() -> f64,
        visit: &mut F,
    ) {
        let n = r.len();
        let shift: f64 = (i + 1..n).map(|j| r[i][j] * c[j] as f64).sum();
        let center = -shift / r[i][i];
        let rem = bound() - partial;
        if rem < 0.0 {
            return;
        }
        let w = rem.sqrt() / r[i][i].abs();
        let lo = (center - w).ceil() as i64;
        let hi = (center + w).floor() as i64;
        for ci in lo..=hi {
            c[i] = ci;
            let y = r[i][i] * ci as f64 + shift;
            let p = partial + y * y;
            if p > bound() {
                continue;
            }
            if i == 0 {
                visit(c, p);
            } else {
                rec(i - 1, p, r, c, bound, visit);
            }
        }
        c[i] = 0;
    }
    rec(n - 1, 0.0, r, &mut c, bound, visit);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShortestVector {
    pub vector: Vec<f64>,
    pub length: f64,
    /// Coefficients in the reduced basis.
    pub coefficients: Vec<i64>,
}

fn check_enum_dim(d: usize) -> Result<()> {
    if d > MAX_ENUM_DIM {
        return Err(LatticeError::TooLarge { d, cap: MAX_ENUM_DIM });
    }
    Ok(())
}

fn reduced(x: &LatticePoint) -> Result<LatticePoint> {
    if x.reduced {
        Ok(x.clone())
    } else {
        reduce_basis(x)
    }
}

fn positive_half(c: &[i64]) -> bool {
    c.iter().find(|&&v| v != 0).is_some_and(|&v| v > 0)
}

/// Exact shortest nonzero vector by enumeration on the reduced basis.
/// Among equal lengths the lexicographically smallest coefficient vector
/// with positive leading coefficient wins.
pub fn shortest_vector(x: &LatticePoint, norm: Norm) -> Result<ShortestVector> {
    check_enum_dim(x.dim())?;
    let y = reduced(x)?;
    let cols = to_cols(&y.basis);
    let d = cols.len();
    let r = r_factor(&cols)?;
    let first_len = cols.iter().map(|v| vec_norm(v, norm)).fold(f64::INFINITY, f64::min);
    let factor = match norm {
        Norm::Euclidean => 1.0,
        Norm::Sup => d as f64,
    };
    let slack = 1.0 + 1e-9;
    let best = std::cell::Cell::new(first_len);
    let mut found: Option<(f64, Vec<i64>)> = None;
    let mut bound = || {
        let b = best.get();
        factor * b * b * slack
    };
    enumerate(&r, &mut bound, &mut |c, _| {
        if !positive_half(c) {
            return;
        }
        let v: Vec<f64> = (0..d).map(|i| (0..d).map(|j| cols[j][i] * c[j] as f64).sum()).collect();
        let len = vec_norm(&v, norm);
        let better = match &found {
            None => true,
            Some((bl, bc)) => {
                let tol = 1e-12 * bl.max(1e-300);
                len < bl - tol || ((len - bl).abs() <= tol && c < bc.as_slice())
            }
        };
        if better {
            found = Some((len, c.to_vec()));
            best.set(len.min(first_len));
        }
    });
    let (length, coefficients) = found.ok_or(LatticeError::Singular)?;
    let vector = (0..d).map(|i| (0..d).map(|j| cols[j][i] * coefficients[j] as f64).sum()).collect();
    Ok(ShortestVector { vector, length, coefficients })
}

/// `#{v ∈ x ∖ 0 : ∥v∥₂ ≤ R}` for each radius.
pub fn siegel_counts(x: &LatticePoint, radii: &[f64]) -> Result<Vec<u64>> {
    check_enum_dim(x.dim())?;
    for &r in radii {
        if !(r > 0.0 && r <= MAX_RADIUS) {
            return Err(LatticeError::Radius(r));
        }
    }
    let Some(rmax) = radii.iter().copied().reduce(f64::max) else {
        return Ok(Vec::new());
    };
    let y = reduced(x)?;
    let r = r_factor(&to_cols(&y.basis))?;
    let estimate = box_estimate(&r, rmax);
    if !(estimate <= MAX_SIEGEL_POINTS) {
        return Err(LatticeError::TooManyPoints(estimate));
    }
    let tol = 1.0 + 1e-12;
    let sq: Vec<f64> = radii.iter().map(|r| r * r * tol).collect();
    Ok(count_ball(&r, &sq))
}

/// Nodes visited by [`count_ball`]: the innermost level is counted in
/// closed form.
fn box_estimate(r: &[Vec<f64>], rmax: f64) -> f64 {
    (1..r.len()).map(|i| 2.0 * rmax / r[i][i].abs() + 1.0).product()
}

/// `#{c ≠ 0 : ∥Rc∥₂² ≤ s}` for each `s` in `sq`. Levels `n-1..1` are
/// enumerated; the integers of level 0 are counted per interval.
fn count_ball(r: &[Vec<f64>], sq: &[f64]) -> Vec<u64> {
    fn rec(i: usize, partial: f64, r: &[Vec<f64>], c: &mut Vec<i64>, sq: &[f64], smax: f64, counts: &mut [u64]) {
        let n = r.len();
        let shift: f64 = (i + 1..n).map(|j| r[i][j] * c[j] as f64).sum();
        let center = -shift / r[i][i];
        let rii = r[i][i].abs();
        if i == 0 {
            let origin = c[1..].iter().all(|&v| v == 0);
            for (k, &s) in counts.iter_mut().zip(sq) {
                let rem = s - partial;
                if rem < 0.0 {
                    continue;
                }
                let w = rem.sqrt() / rii;
                let m = ((center + w).floor() - (center - w).ceil() + 1.0).max(0.0) as u64;
                *k += m - u64::from(origin && m > 0);
            }
            return;
        }
        let rem = smax - partial;
        if rem < 0.0 {
            return;
        }
        let w = rem.sqrt() / rii;
        for ci in (center - w).ceil() as i64..=(center + w).floor() as i64 {
            c[i] = ci;
            let y = r[i][i] * ci as f64 + shift;
            let p = partial + y * y;
            if p <= smax {
                rec(i - 1, p, r, c, sq, smax, counts);
            }
        }
        c[i] = 0;
    }
    let n = r.len();
    let mut counts = vec![0u64; sq.len()];
    let smax = sq.iter().copied().fold(0.0, f64::max);
    rec(n - 1, 0.0, r, &mut vec![0i64; n], sq, smax, &mut counts);
    counts
}

/// Upper estimate of the enumeration work for a ball of radius `rmax`.
pub fn siegel_work_estimate(x: &LatticePoint, rmax: f64) -> Result<f64> {
    let y = reduced(x)?;
    Ok(box_estimate(&r_factor(&to_cols(&y.basis))?, rmax))
}

pub fn siegel_transform(x: &LatticePoint, radius: f64) -> Result<u64> {
    Ok(siegel_counts(x, &[radius])?[0])
}

/// Volume of the Euclidean ball of radius `r` in `R^d`, the Haar mean of
/// the Siegel transform of its indicator.
pub fn ball_volume(d: usize, r: f64) -> f64 {
    let half = d as f64 / 2.0;
    PI.powf(half) / statrs::function::gamma::gamma(half + 1.0) * r.powi(d as i32)
}

/// Largest distance of `basis(x)^{-1} basis(y)` from an integer matrix, and
/// whether the nearest integer matrix has determinant `±1`.
pub fn lattice_residual(x: &LatticePoint, y: &LatticePoint) -> Result<(f64, bool)> {
    if x.dim() != y.dim() {
        return Err(LatticeError::Dimension("lattices of different dimension".into()));
    }
    let inv = linalg::invert(&x.basis).map_err(|_| LatticeError::Singular)?;
    linalg::invert(&y.basis).map_err(|_| LatticeError::Singular)?;
    let m = inv * &y.basis;
    let rounded = m.map(f64::round);
    let residual = (&m - &rounded).iter().fold(0.0, |a: f64, &b| a.max(b.abs()));
    let unimodular = (linalg::det(&rounded).abs() - 1.0).abs() < 0.5;
    Ok((residual, unimodular))
}

pub fn lattice_equal(x: &LatticePoint, y: &LatticePoint, tol: f64) -> Result<bool> {
    let (res, unimodular) = lattice_residual(x, y)?;
    Ok(res <= tol && unimodular)
}

pub const JOINT_BINS: usize = 16;
pub const JOINT_LOG_LO: f64 = -2.995732273553991; // ln 0.05
pub const JOINT_LOG_HI: f64 = 0.1823215567939546; // ln 1.2

/// Bin of `ln(shortest Euclidean length)` on a uniform grid, clamped.
pub fn length_bin(len: f64) -> usize {
    let t = (len.ln() - JOINT_LOG_LO) / (JOINT_LOG_HI - JOINT_LOG_LO);
    ((t * JOINT_BINS as f64).floor().max(0.0) as usize).min(JOINT_BINS - 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsCount {
    pub eps: f64,
    pub count: u64,
}

impl Eq for EpsCount {}
impl Eq for SiegelSum {}

/// Integer sums of the Siegel count at one radius, with completed batches
/// for a batch-means standard error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiegelSum {
    pub radius: f64,
    pub sum: u64,
    pub sum_sq: u128,
    pub batch_len: u64,
    pub batch_count: u64,
    pub batch_sum: u64,
    pub batch_sum_sq: u128,
}

impl SiegelSum {
    pub fn mean(&self, n: u64) -> f64 {
        self.sum as f64 / n as f64
    }

    /// Batch-means standard error of the time average.
    pub fn std_error(&self) -> f64 {
        let b = self.batch_count as f64;
        if self.batch_count < 2 {
            return f64::NAN;
        }
        let l = self.batch_len as f64;
        let m = self.batch_sum as f64 / (b * l);
        let ss = self.batch_sum_sq as f64 / (l * l);
        let var = ((ss - b * m * m) / (b - 1.0)).max(0.0);
        (var / b).sqrt()
    }
}

/// Mergeable walk statistics. All fields are integer counts, so merging is
/// exact, associative and commutative.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmpiricalAccumulator {
    pub dim: usize,
    pub step_count: u64,
    pub keps_counts: Vec<EpsCount>,
    pub siegel_sums: Vec<SiegelSum>,
    /// `joint_counts[state][bin]`.
    pub joint_counts: Vec<Vec<u64>>,
}

impl EmpiricalAccumulator {
    pub fn new(dim: usize, eps: &[f64], radii: &[f64], batch_len: u64, n_states: usize) -> Self {
        let mut eps = eps.to_vec();
        eps.sort_by(f64::total_cmp);
        Self {
            dim,
            step_count: 0,
            keps_counts: eps.into_iter().map(|eps| EpsCount { eps, count: 0 }).collect(),
            siegel_sums: radii
                .iter()
                .map(|&radius| SiegelSum {
                    radius,
                    sum: 0,
                    sum_sq: 0,
                    batch_len: batch_len.max(1),
                    batch_count: 0,
                    batch_sum: 0,
                    batch_sum_sq: 0,
                })
                .collect(),
            joint_counts: vec![vec![0; JOINT_BINS]; n_states],
        }
    }

    /// Empty accumulator with the same layout.
    pub fn empty_like(&self) -> Self {
        let radii: Vec<f64> = self.siegel_sums.iter().map(|s| s.radius).collect();
        let eps: Vec<f64> = self.keps_counts.iter().map(|k| k.eps).collect();
        let bl = self.siegel_sums.first().map_or(1, |s| s.batch_len);
        Self::new(self.dim, &eps, &radii, bl, self.joint_counts.len())
    }

    fn same_layout(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.keps_counts.len() == other.keps_counts.len()
            && self.keps_counts.iter().zip(&other.keps_counts).all(|(a, b)| a.eps == b.eps)
            && self.siegel_sums.len() == other.siegel_sums.len()
            && self
                .siegel_sums
                .iter()
                .zip(&other.siegel_sums)
                .all(|(a, b)| a.radius == b.radius && a.batch_len == b.batch_len)
            && self.joint_counts.len() == other.joint_counts.len()
    }

    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if !self.same_layout(other) {
            return Err(LatticeError::Dimension("accumulators have different layouts".into()));
        }
        self.step_count += other.step_count;
        for (a, b) in self.keps_counts.iter_mut().zip(&other.keps_counts) {
            a.count += b.count;
        }
        for (a, b) in self.siegel_sums.iter_mut().zip(&other.siegel_sums) {
            a.sum += b.sum;
            a.sum_sq += b.sum_sq;
            a.batch_count += b.batch_count;
            a.batch_sum += b.batch_sum;
            a.batch_sum_sq += b.batch_sum_sq;
        }
        for (ra, rb) in self.joint_counts.iter_mut().zip(&other.joint_counts) {
            for (a, b) in ra.iter_mut().zip(rb) {
                *a += b;
            }
        }
        Ok(())
    }

    pub fn escape_fraction(&self, eps: f64) -> Option<f64> {
        self.keps_counts
            .iter()
            .find(|k| k.eps == eps)
            .map(|k| k.count as f64 / self.step_count.max(1) as f64)
    }

    pub fn siegel_average(&self, radius: f64) -> Option<(f64, f64)> {
        self.siegel_sums
            .iter()
            .find(|s| s.radius == radius)
            .map(|s| (s.mean(self.step_count), s.std_error()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WalkObservables {
    pub eps: Vec<f64>,
    pub radii: Vec<f64>,
    /// Observe the lattice every this many steps.
    pub observe_every: u64,
    /// Batch length (in observations) for Siegel standard errors.
    pub batch_len: u64,
    /// Record a joint (state, bin) count every this many observations.
    pub joint_stride: u64,
    /// Record `(step, shortest sup length)` every this many steps; 0 = off.
    pub trace_every: u64,
}

impl Default for WalkObservables {
    fn default() -> Self {
        Self {
            eps: vec![0.05, 0.1, 0.2, 0.5],
            radii: vec![1.0, 1.5, 2.0],
            observe_every: 1,
            batch_len: 1000,
            joint_stride: 1,
            trace_every: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkOutcome {
    pub acc: EmpiricalAccumulator,
    pub final_point: LatticePoint,
    pub final_state: usize,
    pub trace: Vec<(u64, f64)>,
}

/// Simulates `(e_n, x_n)` with `x_{n+1} = g_{e_n} x_n`. Observations use the
/// reduced lattice `x_n` and the state `e_n` about to act. The basis is
/// rescaled to determinant one every 64 steps and reduced at least as
/// often.
pub fn run_walk<R: Rng + ?Sized>(
    chain: &ChainSpec,
    x0: &LatticePoint,
    n_steps: u64,
    obs: &WalkObservables,
    rng: &mut R,
) -> Result<WalkOutcome> {
    let d = x0.dim();
    check_enum_dim(d)?;
    if chain.dim() != d {
        return Err(LatticeError::Dimension(format!("chain acts on R^{}, lattice is in R^{d}", chain.dim())));
    }
    let sampler = ChainSampler::new(chain)?;
    let mut acc = EmpiricalAccumulator::new(d, &obs.eps, &obs.radii, obs.batch_len, chain.len());
    let mut batch_partial = vec![0u64; obs.radii.len()];
    let mut batch_fill = 0u64;
    let mut x = reduce_basis(x0)?;
    let mut state = sampler.initial(rng);
    let mut trace = Vec::new();
    let observe_every = obs.observe_every.max(1);
    let joint_stride = obs.joint_stride.max(1);
    for n in 1..=n_steps {
        x.basis = &chain.coding[state] * &x.basis;
        x.reduced = false;
        state = sampler.next(state, rng);
        let observe = n % observe_every == 0;
        let tracing = obs.trace_every > 0 && n % obs.trace_every == 0;
        if n % RENORMALIZE_EVERY == 0 {
            linalg::renormalize_det(&mut x.basis);
        }
        if observe || tracing || n % RENORMALIZE_EVERY == 0 {
            x = reduce_basis(&x)?;
            let big = x.basis.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
            if !(big <= OVERFLOW_BOUND) {
                return Err(LatticeError::Overflow(big));
            }
        }
        if observe {
            let sup = shortest_vector(&x, Norm::Sup)?.length;
            acc.step_count += 1;
            for k in acc.keps_counts.iter_mut() {
                if sup < k.eps {
                    k.count += 1;
                }
            }
            let counts = siegel_counts(&x, &obs.radii)?;
            for ((s, &c), part) in acc.siegel_sums.iter_mut().zip(&counts).zip(batch_partial.iter_mut()) {
                s.sum += c;
                s.sum_sq += u128::from(c) * u128::from(c);
                *part += c;
            }
            batch_fill += 1;
            if batch_fill == obs.batch_len.max(1) {
                for (s, part) in acc.siegel_sums.iter_mut().zip(batch_partial.iter_mut()) {
                    s.batch_count += 1;
                    s.batch_sum += *part;
                    s.batch_sum_sq += u128::from(*part) * u128::from(*part);
                    *part = 0;
                }
                batch_fill = 0;
            }
            if acc.step_count % joint_stride == 0 {
                let euc = shortest_vector(&x, Norm::Euclidean)?.length;
                acc.joint_counts[state][length_bin(euc)] += 1;
            }
        }
        if tracing {
            trace.push((n, shortest_vector(&x, Norm::Sup)?.length));
        }
    }
    Ok(WalkOutcome { acc, final_point: x, final_state: state, trace })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiegelLine {
    pub radius: f64,
    pub average: f64,
    pub std_error: f64,
    pub target: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquidistributionReport {
    pub step_count: u64,
    pub escape_fractions: Vec<(f64, f64)>,
    pub siegel: Vec<SiegelLine>,
    pub independence: ChiSquareTest,
    /// Marginal state frequencies of the joint counts.
    pub state_frequencies: Vec<f64>,
}

/// Minimum number of observations for a report.
pub const MIN_REPORT_STEPS: u64 = 10_000;

pub fn equidistribution_report(acc: &EmpiricalAccumulator, chain: &ChainSpec) -> Result<EquidistributionReport> {
    if acc.step_count == 0 {
        return Err(LatticeError::Empty);
    }
    if acc.joint_counts.len() != chain.len() {
        return Err(LatticeError::Dimension("accumulator and chain have different state counts".into()));
    }
    let n = acc.step_count;
    let siegel = acc
        .siegel_sums
        .iter()
        .map(|s| {
            let average = s.mean(n);
            let target = ball_volume(acc.dim, s.radius);
            SiegelLine {
                radius: s.radius,
                average,
                std_error: s.std_error(),
                target,
                relative_error: (average - target).abs() / target,
            }
        })
        .collect();
    let total: u64 = acc.joint_counts.iter().flatten().sum();
    let state_frequencies = acc
        .joint_counts
        .iter()
        .map(|r| r.iter().sum::<u64>() as f64 / total.max(1) as f64)
        .collect();
    Ok(EquidistributionReport {
        step_count: n,
        escape_fractions: acc.keps_counts.iter().map(|k| (k.eps, k.count as f64 / n as f64)).collect(),
        siegel,
        independence: stats::chi_square_independence(&acc.joint_counts),
        state_frequencies,
    })
}

/// Haar-random point of `SL_2(R)/SL_2(Z)`: `z = x + iy` drawn from the
/// hyperbolic measure on the standard fundamental domain, lattice
/// `y^{-1/2}(Z + zZ)`, rotated by a uniform angle.
pub fn haar_sl2<R: Rng + ?Sized>(rng: &mut R) -> LatticePoint {
    let h = 3f64.sqrt() / 2.0;
    loop {
        let x: f64 = rng.random_range(-0.5..0.5);
        let u: f64 = 1.0 - rng.random::<f64>();
        let y = h / u;
        if x * x + y * y >= 1.0 {
            let s = y.sqrt();
            let b = Mat::from_row_slice(2, 2, &[1.0 / s, x / s, 0.0, s]);
            let th: f64 = rng.random_range(0.0..2.0 * PI);
            let rot = Mat::from_row_slice(2, 2, &[th.cos(), -th.sin(), th.sin(), th.cos()]);
            return LatticePoint { basis: rot * b, reduced: false };
        }
    }
}

/// Random integer matrix of determinant one, as a product of elementary
/// moves.
pub fn random_unimodular<R: Rng + ?Sized>(d: usize, moves: usize, rng: &mut R) -> Mat {
    let mut u = Mat::identity(d, d);
    for _ in 0..moves {
        let i = rng.random_range(0..d);
        let mut j = rng.random_range(0..d - 1);
        if j >= i {
            j += 1;
        }
        let q = rng.random_range(-2i32..=2) as f64;
        let col = u.column(j) * q;
        let mut ci = u.column_mut(i);
        ci += col;
    }
    u
}
