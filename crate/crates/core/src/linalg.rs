//! Dense real matrix kernels.
//!
//! Matrices are `nalgebra::DMatrix<f64>`. Exterior powers use the
//! lexicographic order on k-subsets of `{0, .., d-1}` for their basis, so the
//! basis of `∧²R³` is `e0∧e1, e0∧e2, e1∧e2`. The adjoint representation acts
//! on traceless matrices in the basis `E_ij` (`i != j`, lexicographic)
//! followed by `H_i = E_ii - E_{i+1,i+1}`.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Mat = DMatrix<f64>;

/// Largest base dimension supported by the kernels.
pub const MAX_DIM: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("grade {grade} out of range 1..={max} for dimension {dim}")]
    GradeOutOfRange { grade: usize, dim: usize, max: usize },
    #[error("matrix is singular or numerically not invertible")]
    Singular,
    #[error("frame became rank deficient at column {column}")]
    RankDeficient { column: usize },
    #[error("matrix has non-finite entries")]
    NonFinite,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("representation dimension {dim} exceeds the cap {cap}")]
    TooLarge { dim: usize, cap: usize },
}

pub type Result<T> = std::result::Result<T, LinalgError>;

fn check_square(m: &Mat) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(LinalgError::NotSquare { rows: m.nrows(), cols: m.ncols() });
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(LinalgError::NonFinite);
    }
    Ok(m.nrows())
}

/// All k-subsets of `{0, .., d-1}` in lexicographic order.
pub fn k_subsets(d: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k > d {
        return out;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        // advance to the next combination
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if idx[i] != i + d - k {
                break;
            }
            if i == 0 {
                return out;
            }
        }
        if idx[i] == i + d - k {
            return out;
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc as usize
}

/// Determinant by Gaussian elimination with partial pivoting.
pub fn det(m: &Mat) -> f64 {
    let n = m.nrows();
    let mut a = m.clone();
    let mut d = 1.0;
    for c in 0..n {
        let mut p = c;
        for r in c + 1..n {
            if a[(r, c)].abs() > a[(p, c)].abs() {
                p = r;
            }
        }
        if a[(p, c)] == 0.0 {
            return 0.0;
        }
        if p != c {
            a.swap_rows(p, c);
            d = -d;
        }
        let piv = a[(c, c)];
        d *= piv;
        for r in c + 1..n {
            let f = a[(r, c)] / piv;
            if f != 0.0 {
                for cc in c + 1..n {
                    a[(r, cc)] -= f * a[(c, cc)];
                }
            }
        }
    }
    d
}

fn minor(m: &Mat, rows: &[usize], cols: &[usize]) -> f64 {
    let k = rows.len();
    match k {
        1 => m[(rows[0], cols[0])],
        2 => {
            m[(rows[0], cols[0])] * m[(rows[1], cols[1])]
                - m[(rows[0], cols[1])] * m[(rows[1], cols[0])]
        }
        _ => det(&Mat::from_fn(k, k, |i, j| m[(rows[i], cols[j])])),
    }
}

/// The k-th exterior power of a square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct WedgeMat {
    pub base_dim: usize,
    pub grade: usize,
    pub entries: Mat,
}

impl WedgeMat {
    pub fn operator_norm(&self) -> f64 {
        operator_norm(&self.entries)
    }
}

/// Entry `(I, J)` is the minor of `m` on rows `I` and columns `J`.
pub fn wedge_power(m: &Mat, k: usize) -> Result<WedgeMat> {
    let d = check_square(m)?;
    if k == 0 || k >= d.max(2) || d < 2 {
        return Err(LinalgError::GradeOutOfRange { grade: k, dim: d, max: d.saturating_sub(1) });
    }
    let subsets = k_subsets(d, k);
    let n = subsets.len();
    let entries = Mat::from_fn(n, n, |i, j| minor(m, &subsets[i], &subsets[j]));
    Ok(WedgeMat { base_dim: d, grade: k, entries })
}

/// Index pairs `(i, j)`, `i != j`, of the off-diagonal adjoint basis vectors.
pub fn adjoint_offdiag_basis(d: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(d * d - d);
    for i in 0..d {
        for j in 0..d {
            if i != j {
                out.push((i, j));
            }
        }
    }
    out
}

/// Position of `E_ij` in the adjoint basis.
pub fn adjoint_index(d: usize, i: usize, j: usize) -> Option<usize> {
    adjoint_offdiag_basis(d).iter().position(|&p| p == (i, j))
}

fn adjoint_basis_matrix(d: usize, idx: usize) -> Mat {
    let off = adjoint_offdiag_basis(d);
    let mut x = Mat::zeros(d, d);
    if idx < off.len() {
        let (i, j) = off[idx];
        x[(i, j)] = 1.0;
    } else {
        let h = idx - off.len();
        x[(h, h)] = 1.0;
        x[(h + 1, h + 1)] = -1.0;
    }
    x
}

fn adjoint_coords(x: &Mat) -> Vec<f64> {
    let d = x.nrows();
    let mut out: Vec<f64> = adjoint_offdiag_basis(d).iter().map(|&(i, j)| x[(i, j)]).collect();
    // traceless diagonal = sum c_h H_h  =>  c_h = x_00 + .. + x_hh
    let mut run = 0.0;
    for h in 0..d - 1 {
        run += x[(h, h)];
        out.push(run);
    }
    out
}

/// Matrix of `X -> g X g^{-1}` on traceless `d x d` matrices.
pub fn adjoint_matrix(g: &Mat) -> Result<Mat> {
    let d = check_square(g)?;
    let ginv = invert(g)?;
    let n = d * d - 1;
    let mut out = Mat::zeros(n, n);
    for b in 0..n {
        let x = adjoint_basis_matrix(d, b);
        let y = g * x * &ginv;
        for (r, v) in adjoint_coords(&y).into_iter().enumerate() {
            out[(r, b)] = v;
        }
    }
    Ok(out)
}

pub fn invert(m: &Mat) -> Result<Mat> {
    check_square(m)?;
    let dt = det(m);
    if dt == 0.0 || !dt.is_finite() {
        return Err(LinalgError::Singular);
    }
    let inv = m.clone().try_inverse().ok_or(LinalgError::Singular)?;
    if inv.iter().any(|x| !x.is_finite()) {
        return Err(LinalgError::Singular);
    }
    Ok(inv)
}

/// Singular values in descending order, by one-sided Jacobi rotations.
pub fn singular_values(m: &Mat) -> Vec<f64> {
    let (rows, cols) = m.shape();
    // work on the wider orientation so columns are the short side
    let mut a = if rows >= cols { m.clone() } else { m.transpose() };
    let n = a.ncols();
    let r = a.nrows();
    for _sweep in 0..80 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let mut alpha = 0.0;
                let mut beta = 0.0;
                let mut gamma = 0.0;
                for i in 0..r {
                    let ap = a[(i, p)];
                    let aq = a[(i, q)];
                    alpha += ap * ap;
                    beta += aq * aq;
                    gamma += ap * aq;
                }
                if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..r {
                    let ap = a[(i, p)];
                    let aq = a[(i, q)];
                    a[(i, p)] = c * ap - s * aq;
                    a[(i, q)] = s * ap + c * aq;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sv: Vec<f64> = (0..n).map(|j| a.column(j).norm()).collect();
    sv.sort_by(|x, y| y.partial_cmp(x).unwrap());
    sv
}

/// Largest singular value.
pub fn operator_norm(m: &Mat) -> f64 {
    singular_values(m).first().copied().unwrap_or(0.0)
}

/// `max(|m|, |m^{-1}|)` in operator norm.
pub fn norm_gauge(m: &Mat) -> Result<f64> {
    check_square(m)?;
    invert(m)?;
    let sv = singular_values(m);
    let top = sv[0];
    let bottom = *sv.last().unwrap();
    Ok(top.max(1.0 / bottom))
}

/// One QR re-orthonormalization step: `g q = q' R` with `R` upper triangular
/// and positive diagonal. Returns `q'` and `log diag(R)`.
///
/// `q` may be rectangular (`d x k`) with orthonormal columns.
pub fn ortho_product_step(q: &Mat, g: &Mat) -> Result<(Mat, Vec<f64>)> {
    let d = check_square(g)?;
    if q.nrows() != d {
        return Err(LinalgError::DimensionMismatch { expected: d, got: q.nrows() });
    }
    let mut frame = OrthoFrame::from_mat(q);
    let logs = frame.step(g)?.to_vec();
    Ok((frame.to_mat(), logs))
}

/// A `d x k` orthonormal frame carried along a matrix product.
///
/// Each step multiplies by a matrix and re-orthonormalizes by twice-applied
/// modified Gram-Schmidt; column-major storage, no per-step allocation.
#[derive(Debug, Clone)]
pub struct OrthoFrame {
    dim: usize,
    k: usize,
    q: Vec<f64>,
    y: Vec<f64>,
    logs: Vec<f64>,
}

impl OrthoFrame {
    /// The first `k` standard basis vectors.
    pub fn identity(dim: usize, k: usize) -> Self {
        let mut q = vec![0.0; dim * k];
        for j in 0..k {
            q[j * dim + j] = 1.0;
        }
        Self { dim, k, q, y: vec![0.0; dim * k], logs: vec![0.0; k] }
    }

    pub fn from_mat(q: &Mat) -> Self {
        let (dim, k) = q.shape();
        let mut data = vec![0.0; dim * k];
        for j in 0..k {
            for i in 0..dim {
                data[j * dim + i] = q[(i, j)];
            }
        }
        Self { dim, k, q: data, y: vec![0.0; dim * k], logs: vec![0.0; k] }
    }

    /// Orthonormalizes arbitrary columns; returns the log-volume of the input
    /// (the log-norm of the pure wedge of its columns).
    pub fn from_columns(cols: &Mat) -> Result<(Self, f64)> {
        let (dim, k) = cols.shape();
        let mut frame = Self::identity(dim, k);
        for j in 0..k {
            for i in 0..dim {
                frame.y[j * dim + i] = cols[(i, j)];
            }
        }
        frame.orthonormalize()?;
        let vol = frame.logs.iter().sum();
        Ok((frame, vol))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rank(&self) -> usize {
        self.k
    }

    pub fn to_mat(&self) -> Mat {
        Mat::from_fn(self.dim, self.k, |i, j| self.q[j * self.dim + i])
    }

    /// Multiplies by `g` and re-orthonormalizes. Returns `log diag(R)`.
    pub fn step(&mut self, g: &Mat) -> Result<&[f64]> {
        let d = self.dim;
        for j in 0..self.k {
            let col = &self.q[j * d..(j + 1) * d];
            let out = &mut self.y[j * d..(j + 1) * d];
            for (i, o) in out.iter_mut().enumerate() {
                let mut s = 0.0;
                for (l, c) in col.iter().enumerate() {
                    s += g[(i, l)] * c;
                }
                *o = s;
            }
        }
        self.orthonormalize()?;
        Ok(&self.logs)
    }

    fn orthonormalize(&mut self) -> Result<()> {
        let d = self.dim;
        for j in 0..self.k {
            let (done, rest) = self.y.split_at_mut(j * d);
            let yj = &mut rest[..d];
            let before: f64 = yj.iter().map(|x| x * x).sum::<f64>().sqrt();
            for _pass in 0..2 {
                for i in 0..j {
                    let qi = &done[i * d..(i + 1) * d];
                    let r: f64 = qi.iter().zip(yj.iter()).map(|(a, b)| a * b).sum();
                    for (y, q) in yj.iter_mut().zip(qi) {
                        *y -= r * q;
                    }
                }
            }
            let nrm: f64 = yj.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !(nrm.is_finite()) || nrm == 0.0 || nrm <= 1e-15 * before {
                return Err(LinalgError::RankDeficient { column: j });
            }
            for y in yj.iter_mut() {
                *y /= nrm;
            }
            self.logs[j] = nrm.ln();
        }
        std::mem::swap(&mut self.q, &mut self.y);
        Ok(())
    }
}

/// Linear representation used to turn group elements into operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    Standard,
    Adjoint,
    /// k-th exterior power of the standard representation.
    Wedge(usize),
    /// k-th exterior power of the adjoint representation.
    AdjointWedge(usize),
}

/// Representation matrices larger than this are refused.
pub const MAX_REP_DIM: usize = 1000;

impl Representation {
    pub fn dim(&self, d: usize) -> usize {
        match *self {
            Representation::Standard => d,
            Representation::Adjoint => d * d - 1,
            Representation::Wedge(k) => binomial(d, k),
            Representation::AdjointWedge(k) => binomial(d * d - 1, k),
        }
    }

    pub fn apply(&self, g: &Mat) -> Result<Mat> {
        let d = check_square(g)?;
        let dim = self.dim(d);
        if dim > MAX_REP_DIM {
            return Err(LinalgError::TooLarge { dim, cap: MAX_REP_DIM });
        }
        match *self {
            Representation::Standard => Ok(g.clone()),
            Representation::Adjoint => adjoint_matrix(g),
            Representation::Wedge(k) => Ok(wedge_power(g, k)?.entries),
            Representation::AdjointWedge(k) => Ok(wedge_power(&adjoint_matrix(g)?, k)?.entries),
        }
    }
}

pub fn is_orthogonal(m: &Mat, tol: f64) -> bool {
    if m.nrows() != m.ncols() {
        return false;
    }
    let n = m.nrows();
    let p = m.transpose() * m;
    (p - Mat::identity(n, n)).iter().all(|x| x.abs() <= tol)
}

/// Rescales `m` in place so that `|det m| = 1`; returns the determinant
/// before rescaling.
pub fn renormalize_det(m: &mut Mat) -> f64 {
    let d = m.nrows();
    let dt = det(m);
    if dt != 0.0 && dt.is_finite() {
        let s = dt.abs().powf(-1.0 / d as f64);
        *m *= s;
    }
    dt
}

/// Neumaier compensated summation.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Haar-random orthogonal matrix (QR of a Gaussian matrix with sign fix).
pub fn random_orthogonal<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Mat {
    let g = Mat::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let (frame, _) = OrthoFrame::from_columns(&g).expect("gaussian matrix is invertible");
    frame.to_mat()
}

/// Haar-random special orthogonal matrix.
pub fn random_special_orthogonal<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Mat {
    let mut o = random_orthogonal(d, rng);
    if det(&o) < 0.0 {
        for i in 0..d {
            o[(i, 0)] = -o[(i, 0)];
        }
    }
    o
}

/// Random element of `SL_d(R)`: Gaussian matrix rescaled to determinant 1,
/// with a column sign flip when needed.
pub fn random_sl<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Mat {
    loop {
        let mut g = Mat::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let dt = det(&g);
        if dt.abs() < 1e-3 {
            continue;
        }
        if dt < 0.0 {
            for i in 0..d {
                g[(i, 0)] = -g[(i, 0)];
            }
        }
        renormalize_det(&mut g);
        return g;
    }
}

/// Serde adapter writing matrices as arrays of rows.
pub mod mat_rows {
    use super::Mat;
    use serde::{de::Error, Deserialize, Deserializer, Serialize, Serializer};

    pub fn to_rows(m: &Mat) -> Vec<Vec<f64>> {
        (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Mat, String> {
        let r = rows.len();
        if r == 0 {
            return Err("matrix has no rows".into());
        }
        let c = rows[0].len();
        if c == 0 || rows.iter().any(|row| row.len() != c) {
            return Err("matrix rows are empty or ragged".into());
        }
        Ok(Mat::from_fn(r, c, |i, j| rows[i][j]))
    }

    pub fn serialize<S: Serializer>(m: &Mat, s: S) -> Result<S::Ok, S::Error> {
        to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Mat, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        from_rows(&rows).map_err(D::Error::custom)
    }
}

/// Serde adapter for lists of matrices.
pub mod mat_rows_vec {
    use super::{mat_rows, Mat};
    use serde::{de::Error, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(ms: &[Mat], s: S) -> Result<S::Ok, S::Error> {
        ms.iter().map(mat_rows::to_rows).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Mat>, D::Error> {
        let all = Vec::<Vec<Vec<f64>>>::deserialize(d)?;
        all.iter().map(|rows| mat_rows::from_rows(rows).map_err(D::Error::custom)).collect()
    }
}
