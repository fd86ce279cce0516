//! The block upper-triangular group `P = A K U` inside `SL_{M+N}(R)` and its
//! action on `M x N` matrices by algebraic similarities.
//!
//! With `d = M + N`:
//!
//! * `a_t = diag(e^{t/M} 1_M, e^{-t/N} 1_N)`
//! * `k = O1 ⊕ O2` with `O1 ∈ O(M)`, `O2 ∈ O(N)` and `det O1 = det O2`
//! * `u_α = [[1_M, -α], [0, 1_N]]`
//!
//! Every `g ∈ P` factors uniquely as `a_t k u_α`. Identifying `β` with the
//! coset `u_{-β} A K`, the left action reads
//! `g·β = e^{t(1/M + 1/N)} O1 (β - α) O2ᵀ`.

use crate::linalg::{self, is_orthogonal, Mat};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GroupError {
    #[error("element is not in P: {0}")]
    NotInP(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("similarity has no determinant-one realization in P (needs the projective group)")]
    NotRealizableInSl,
}

pub type Result<T> = std::result::Result<T, GroupError>;

/// Orthogonality tolerance for stored blocks.
pub const ORTHO_TOL: f64 = 1e-10;
/// Tolerance for recognizing an assembled matrix as an element of `P`.
pub const DECOMPOSE_TOL: f64 = 1e-8;
/// Largest admissible magnitude of the lower-left block.
pub const LOWER_LEFT_TOL: f64 = 1e-9;

/// An element `a_t k u_α` of `P`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PElement {
    pub m_dim: usize,
    pub n_dim: usize,
    pub t: f64,
    #[serde(with = "crate::linalg::mat_rows")]
    pub o1: Mat,
    #[serde(with = "crate::linalg::mat_rows")]
    pub o2: Mat,
    #[serde(with = "crate::linalg::mat_rows")]
    pub alpha: Mat,
}

impl PElement {
    pub fn identity(m_dim: usize, n_dim: usize) -> Self {
        Self {
            m_dim,
            n_dim,
            t: 0.0,
            o1: Mat::identity(m_dim, m_dim),
            o2: Mat::identity(n_dim, n_dim),
            alpha: Mat::zeros(m_dim, n_dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.m_dim + self.n_dim
    }

    /// Scale factor `e^{t(1/M + 1/N)}` of the action on `M x N` matrices.
    pub fn action_scale(&self) -> f64 {
        (self.t * (1.0 / self.m_dim as f64 + 1.0 / self.n_dim as f64)).exp()
    }

    pub fn validate(&self) -> Result<()> {
        if self.o1.shape() != (self.m_dim, self.m_dim)
            || self.o2.shape() != (self.n_dim, self.n_dim)
            || self.alpha.shape() != (self.m_dim, self.n_dim)
        {
            return Err(GroupError::Dimension("block shapes do not match (M, N)".into()));
        }
        if !is_orthogonal(&self.o1, ORTHO_TOL) || !is_orthogonal(&self.o2, ORTHO_TOL) {
            return Err(GroupError::NotInP("K-blocks are not orthogonal".into()));
        }
        if (linalg::det(&self.o1) - linalg::det(&self.o2)).abs() > 1e-8 {
            return Err(GroupError::NotInP("det O1 != det O2, determinant would be -1".into()));
        }
        if !self.t.is_finite() || self.alpha.iter().any(|x| !x.is_finite()) {
            return Err(GroupError::Domain("non-finite component".into()));
        }
        Ok(())
    }

    /// The inverse `u_{-α} k^{-1} a_{-t}`, rewritten in `A K U` order.
    pub fn inverse(&self) -> Self {
        // (a k u_α)^{-1} = u_{-α} k^{-1} a_{-t} = a_{-t} k^{-1} u_{-β}
        // with β = e^{t(1/M+1/N)} O1 α O2ᵀ
        let beta = self.action_scale() * &self.o1 * &self.alpha * self.o2.transpose();
        Self {
            m_dim: self.m_dim,
            n_dim: self.n_dim,
            t: -self.t,
            o1: self.o1.transpose(),
            o2: self.o2.transpose(),
            alpha: -beta,
        }
    }

    /// Group product `self · other`, computed in closed form.
    pub fn mul(&self, other: &Self) -> Self {
        // a_s k u_α a_t l u_β = a_{s+t} (k l) u_{γ},  γ = β + c^{-1} L1ᵀ α L2
        // where c = e^{t(1/M+1/N)} and l = L1 ⊕ L2
        let c = other.action_scale();
        let gamma = &other.alpha + (1.0 / c) * other.o1.transpose() * &self.alpha * &other.o2;
        Self {
            m_dim: self.m_dim,
            n_dim: self.n_dim,
            t: self.t + other.t,
            o1: &self.o1 * &other.o1,
            o2: &self.o2 * &other.o2,
            alpha: gamma,
        }
    }

    /// PGL representative with `O1 = +1` when `M = 1` (resp. `O2 = +1` when
    /// `N = 1` and `M > 1`), obtained by multiplying with `-1_d`. Only
    /// available in even dimension, where `-1_d` has determinant one.
    pub fn sign_normalized(&self) -> Self {
        let d = self.dim();
        let flip = if self.m_dim == 1 {
            self.o1[(0, 0)] < 0.0
        } else if self.n_dim == 1 {
            self.o2[(0, 0)] < 0.0
        } else {
            false
        };
        if flip && d % 2 == 0 {
            Self { o1: -&self.o1, o2: -&self.o2, ..self.clone() }
        } else {
            self.clone()
        }
    }
}

pub fn a_t(m_dim: usize, n_dim: usize, t: f64) -> Mat {
    let d = m_dim + n_dim;
    let up = (t / m_dim as f64).exp();
    let down = (-t / n_dim as f64).exp();
    Mat::from_fn(d, d, |i, j| {
        if i != j {
            0.0
        } else if i < m_dim {
            up
        } else {
            down
        }
    })
}

pub fn u_alpha(alpha: &Mat) -> Mat {
    let (m, n) = alpha.shape();
    let mut g = Mat::identity(m + n, m + n);
    for i in 0..m {
        for j in 0..n {
            g[(i, m + j)] = -alpha[(i, j)];
        }
    }
    g
}

pub fn k_block(o1: &Mat, o2: &Mat) -> Mat {
    let (m, n) = (o1.nrows(), o2.nrows());
    let mut g = Mat::zeros(m + n, m + n);
    g.view_mut((0, 0), (m, m)).copy_from(o1);
    g.view_mut((m, m), (n, n)).copy_from(o2);
    g
}

/// `a_t k u_α` as a `d x d` matrix.
pub fn aku_compose(p: &PElement) -> Mat {
    let (m, n) = (p.m_dim, p.n_dim);
    let up = (p.t / m as f64).exp();
    let down = (-p.t / n as f64).exp();
    let d = m + n;
    let mut g = Mat::zeros(d, d);
    let top_left = up * &p.o1;
    let top_right = -up * &p.o1 * &p.alpha;
    let bottom = down * &p.o2;
    g.view_mut((0, 0), (m, m)).copy_from(&top_left);
    g.view_mut((0, m), (m, n)).copy_from(&top_right);
    g.view_mut((m, m), (n, n)).copy_from(&bottom);
    g
}

/// Splits `g ∈ P` into `(t, O1, O2, α)`.
///
/// `t = log|det A|` for the top-left block `A`; the blocks `e^{-t/M} A` and
/// `e^{t/N} D` must be orthogonal to `1e-8`.
pub fn aku_decompose(g: &Mat, m_dim: usize, n_dim: usize) -> Result<PElement> {
    let d = m_dim + n_dim;
    if m_dim == 0 || n_dim == 0 {
        return Err(GroupError::Dimension("M and N must be positive".into()));
    }
    if g.shape() != (d, d) {
        return Err(GroupError::Dimension(format!(
            "expected {d}x{d} matrix, got {}x{}",
            g.nrows(),
            g.ncols()
        )));
    }
    if g.iter().any(|x| !x.is_finite()) {
        return Err(GroupError::NotInP("non-finite entries".into()));
    }
    let lower = g.view((m_dim, 0), (n_dim, m_dim));
    if lower.iter().any(|x| x.abs() > LOWER_LEFT_TOL) {
        return Err(GroupError::NotInP("lower-left block is nonzero".into()));
    }
    let a = g.view((0, 0), (m_dim, m_dim)).into_owned();
    let b = g.view((0, m_dim), (m_dim, n_dim)).into_owned();
    let dblk = g.view((m_dim, m_dim), (n_dim, n_dim)).into_owned();
    let det_a = linalg::det(&a);
    if det_a == 0.0 || !det_a.is_finite() {
        return Err(GroupError::NotInP("singular top-left block".into()));
    }
    let t = det_a.abs().ln();
    let o1 = (-t / m_dim as f64).exp() * &a;
    let o2 = (t / n_dim as f64).exp() * &dblk;
    if !is_orthogonal(&o1, DECOMPOSE_TOL) {
        return Err(GroupError::NotInP("top-left block is not a multiple of an orthogonal matrix".into()));
    }
    if !is_orthogonal(&o2, DECOMPOSE_TOL) {
        return Err(GroupError::NotInP(
            "bottom-right block is not a multiple of an orthogonal matrix".into(),
        ));
    }
    let alpha = -(-t / m_dim as f64).exp() * o1.transpose() * b;
    Ok(PElement { m_dim, n_dim, t, o1, o2, alpha })
}

/// `p · β = e^{t(1/M+1/N)} O1 (β - α) O2ᵀ`.
pub fn similarity_action(p: &PElement, beta: &Mat) -> Result<Mat> {
    if beta.shape() != (p.m_dim, p.n_dim) {
        return Err(GroupError::Dimension(format!(
            "β must be {}x{}, got {}x{}",
            p.m_dim,
            p.n_dim,
            beta.nrows(),
            beta.ncols()
        )));
    }
    Ok(p.action_scale() * &p.o1 * (beta - &p.alpha) * p.o2.transpose())
}

/// An algebraic similarity `β ↦ r O1 β O2 + b` of `R^{M x N}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Similarity {
    pub m_dim: usize,
    pub n_dim: usize,
    pub ratio: f64,
    #[serde(with = "crate::linalg::mat_rows")]
    pub o1: Mat,
    #[serde(with = "crate::linalg::mat_rows")]
    pub o2: Mat,
    #[serde(with = "crate::linalg::mat_rows")]
    pub translation: Mat,
}

impl Similarity {
    /// `x ↦ r x + b` on the real line.
    pub fn scalar(ratio: f64, translation: f64) -> Self {
        Self {
            m_dim: 1,
            n_dim: 1,
            ratio,
            o1: Mat::identity(1, 1),
            o2: Mat::identity(1, 1),
            translation: Mat::from_element(1, 1, translation),
        }
    }

    pub fn identity(m_dim: usize, n_dim: usize) -> Self {
        Self {
            m_dim,
            n_dim,
            ratio: 1.0,
            o1: Mat::identity(m_dim, m_dim),
            o2: Mat::identity(n_dim, n_dim),
            translation: Mat::zeros(m_dim, n_dim),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ratio > 0.0) || !self.ratio.is_finite() {
            return Err(GroupError::Domain(format!("ratio must be positive, got {}", self.ratio)));
        }
        if self.o1.shape() != (self.m_dim, self.m_dim)
            || self.o2.shape() != (self.n_dim, self.n_dim)
            || self.translation.shape() != (self.m_dim, self.n_dim)
        {
            return Err(GroupError::Dimension("similarity blocks do not match (M, N)".into()));
        }
        if !is_orthogonal(&self.o1, ORTHO_TOL) || !is_orthogonal(&self.o2, ORTHO_TOL) {
            return Err(GroupError::Domain("similarity blocks are not orthogonal".into()));
        }
        Ok(())
    }

    pub fn is_contracting(&self) -> bool {
        self.ratio < 1.0
    }

    pub fn apply(&self, beta: &Mat) -> Mat {
        self.ratio * &self.o1 * beta * &self.o2 + &self.translation
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            m_dim: self.m_dim,
            n_dim: self.n_dim,
            ratio: self.ratio * other.ratio,
            o1: &self.o1 * &other.o1,
            o2: &other.o2 * &self.o2,
            translation: self.apply(&other.translation),
        }
    }

    pub fn inverse(&self) -> Self {
        let r = 1.0 / self.ratio;
        let o1 = self.o1.transpose();
        let o2 = self.o2.transpose();
        let translation = -r * &o1 * &self.translation * &o2;
        Self { m_dim: self.m_dim, n_dim: self.n_dim, ratio: r, o1, o2, translation }
    }
}

/// The element of `P` acting on `R^{M x N}` as the given similarity.
///
/// The K-blocks are `(O1, O2ᵀ)` or `(-O1, -O2ᵀ)`, whichever has matching
/// determinants; when `M = 1` the representative with `O1 = +1` is preferred.
pub fn similarity_to_group(s: &Similarity) -> Result<PElement> {
    s.validate()?;
    let (m, n) = (s.m_dim, s.n_dim);
    let t = s.ratio.ln() / (1.0 / m as f64 + 1.0 / n as f64);
    let o2t = s.o2.transpose();
    let candidates = [(s.o1.clone(), o2t.clone()), (-&s.o1, -&o2t)];
    let matching = |(a, b): &(Mat, Mat)| (linalg::det(a) - linalg::det(b)).abs() < 1e-8;
    let mut ok: Vec<&(Mat, Mat)> = candidates.iter().filter(|c| matching(c)).collect();
    if ok.is_empty() {
        return Err(GroupError::NotRealizableInSl);
    }
    if m == 1 {
        ok.sort_by_key(|(a, _)| a[(0, 0)] < 0.0);
    } else if n == 1 {
        ok.sort_by_key(|(_, b)| b[(0, 0)] < 0.0);
    }
    let (o1, o2) = ok[0].clone();
    // p·β = r o1 (β - α) o2ᵀ must equal r O1 β O2 + b
    let alpha = -(1.0 / s.ratio) * o1.transpose() * &s.translation * &o2;
    Ok(PElement { m_dim: m, n_dim: n, t, o1, o2, alpha })
}

/// The similarity by which `p` acts.
pub fn group_to_similarity(p: &PElement) -> Similarity {
    let r = p.action_scale();
    Similarity {
        m_dim: p.m_dim,
        n_dim: p.n_dim,
        ratio: r,
        o1: p.o1.clone(),
        o2: p.o2.transpose(),
        translation: -r * &p.o1 * &p.alpha * p.o2.transpose(),
    }
}

/// `[[c O, y], [0, c^{-d}]]` in `SL_{d+1}(R)`.
pub fn make_block_element(c: f64, o: &Mat, y: &[f64]) -> Result<Mat> {
    if !(c > 1.0) || !c.is_finite() {
        return Err(GroupError::Domain(format!("scale c must exceed 1, got {c}")));
    }
    let d = o.nrows();
    if o.ncols() != d || y.len() != d {
        return Err(GroupError::Dimension(format!(
            "rotation is {}x{}, translation has length {}",
            o.nrows(),
            o.ncols(),
            y.len()
        )));
    }
    if !is_orthogonal(o, ORTHO_TOL) || linalg::det(o) < 0.0 {
        return Err(GroupError::Domain("rotation block must be special orthogonal".into()));
    }
    let mut g = Mat::zeros(d + 1, d + 1);
    g.view_mut((0, 0), (d, d)).copy_from(&(c * o));
    for (i, yi) in y.iter().enumerate() {
        g[(i, d)] = *yi;
    }
    g[(d, d)] = c.powi(-(d as i32));
    Ok(g)
}

/// The three generators of the `SL_3` example: `diag(3, 2, 1/6)` and its
/// two unipotent perturbations in positions (1,3) and (2,3).
pub fn sl3_example() -> (Mat, Mat, Mat) {
    let g1 = Mat::from_row_slice(3, 3, &[3.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 1.0 / 6.0]);
    let mut g2 = g1.clone();
    g2[(0, 2)] = 1.0;
    let mut g3 = g1.clone();
    g3[(1, 2)] = 1.0;
    (g1, g2, g3)
}

/// Random element of `P` with `t ∈ [-t_max, t_max]` and Gaussian `α`.
pub fn random_p_element<R: Rng + ?Sized>(m_dim: usize, n_dim: usize, t_max: f64, rng: &mut R) -> PElement {
    let t = rng.random_range(-t_max..=t_max);
    let o1 = linalg::random_orthogonal(m_dim, rng);
    let mut o2 = linalg::random_orthogonal(n_dim, rng);
    if (linalg::det(&o1) - linalg::det(&o2)).abs() > 0.5 {
        for i in 0..n_dim {
            o2[(i, 0)] = -o2[(i, 0)];
        }
    }
    let alpha = Mat::from_fn(m_dim, n_dim, |_, _| rng.random_range(-2.0..2.0));
    PElement { m_dim, n_dim, t, o1, o2, alpha }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn m1(x: f64) -> Mat {
        Mat::from_element(1, 1, x)
    }

    #[test]
    fn decompose_identity() {
        let p = aku_decompose(&Mat::identity(2, 2), 1, 1).unwrap();
        assert_eq!(p, PElement::identity(1, 1));
        assert_eq!(aku_compose(&PElement::identity(2, 1)), Mat::identity(3, 3));
    }

    #[test]
    fn decompose_two_by_two_example() {
        let g = Mat::from_row_slice(2, 2, &[2.0, -1.0, 0.0, 0.5]);
        let p = aku_decompose(&g, 1, 1).unwrap();
        assert_abs_diff_eq!(p.t, 2f64.ln(), epsilon = 1e-15);
        assert_eq!(p.o1, m1(1.0));
        assert_eq!(p.o2, m1(1.0));
        assert_abs_diff_eq!(p.alpha[(0, 0)], 0.5, epsilon = 1e-15);

        let q = PElement { m_dim: 1, n_dim: 1, t: 2f64.ln(), o1: m1(1.0), o2: m1(1.0), alpha: m1(0.5) };
        assert!((aku_compose(&q) - g).abs().max() < 1e-15);
    }

    #[test]
    fn decompose_block_element() {
        let g = make_block_element(2.0, &Mat::identity(1, 1), &[0.7]).unwrap();
        let p = aku_decompose(&g, 1, 1).unwrap();
        assert_abs_diff_eq!(p.t, 2f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(p.alpha[(0, 0)], -0.35, epsilon = 1e-15);
        assert!((aku_compose(&p) - g).abs().max() < 1e-12);
    }

    #[test]
    fn decompose_rejects_non_members() {
        let g = Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.5, 1.0]);
        assert!(matches!(aku_decompose(&g, 1, 1), Err(GroupError::NotInP(_))));
        // top-left block not a multiple of an orthogonal matrix
        let g = Mat::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.5]);
        assert!(matches!(aku_decompose(&g, 2, 1), Err(GroupError::NotInP(_))));
        let g = Mat::zeros(2, 2);
        assert!(matches!(aku_decompose(&g, 1, 1), Err(GroupError::NotInP(_))));
    }

    #[test]
    fn action_examples() {
        let p = PElement { t: 2f64.ln(), ..PElement::identity(1, 1) };
        let out = similarity_action(&p, &m1(3.0)).unwrap();
        assert_abs_diff_eq!(out[(0, 0)], 12.0, epsilon = 1e-14);

        let p = PElement { alpha: m1(0.5), ..PElement::identity(1, 1) };
        assert_abs_diff_eq!(similarity_action(&p, &m1(3.0)).unwrap()[(0, 0)], 2.5);

        let p = PElement { o1: m1(-1.0), o2: m1(-1.0), ..PElement::identity(1, 1) };
        assert_eq!(similarity_action(&p, &m1(3.0)).unwrap(), m1(3.0));

        assert!(matches!(similarity_action(&p, &Mat::zeros(2, 1)), Err(GroupError::Dimension(_))));
    }

    #[test]
    fn similarity_to_group_examples() {
        let p = similarity_to_group(&Similarity::identity(1, 1)).unwrap();
        assert_eq!(p, PElement::identity(1, 1));

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let third = Similarity::scalar(1.0 / 3.0, 0.0);
        let p = similarity_to_group(&third).unwrap();
        assert_abs_diff_eq!(p.t, (1.0f64 / 3.0).ln() / 2.0, epsilon = 1e-15);
        assert_eq!(p.alpha, m1(0.0));

        let shifted = Similarity::scalar(1.0 / 3.0, 2.0 / 3.0);
        let p = similarity_to_group(&shifted).unwrap();
        for s in [&third, &shifted] {
            let p = similarity_to_group(s).unwrap();
            for _ in 0..100 {
                let b = m1(rng.random_range(-5.0..5.0));
                let lhs = similarity_action(&p, &b).unwrap();
                assert!((lhs - s.apply(&b)).abs().max() < 1e-12);
            }
        }
        assert_abs_diff_eq!(p.inverse().t, 3f64.ln() / 2.0, epsilon = 1e-15);
        assert!(p.inverse().t > 0.0);

        let bad = Similarity { ratio: 0.0, ..Similarity::identity(1, 1) };
        assert!(matches!(similarity_to_group(&bad), Err(GroupError::Domain(_))));
        let flip = Similarity { o1: m1(-1.0), ..Similarity::scalar(0.5, 0.0) };
        assert_eq!(similarity_to_group(&flip), Err(GroupError::NotRealizableInSl));
    }

    #[test]
    fn block_element_examples() {
        let g = make_block_element(2.0, &Mat::identity(1, 1), &[0.0]).unwrap();
        assert_eq!(g, Mat::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.5]));
        let g = make_block_element(2.0, &Mat::identity(2, 2), &[1.0, 0.0]).unwrap();
        let expect = Mat::from_row_slice(3, 3, &[2.0, 0.0, 1.0, 0.0, 2.0, 0.0, 0.0, 0.0, 0.25]);
        assert_eq!(g, expect);
        let p = aku_decompose(&g, 2, 1).unwrap();
        assert_abs_diff_eq!(p.t, 2.0 * 2f64.ln(), epsilon = 1e-14);
        assert!(matches!(
            make_block_element(1.0, &Mat::identity(1, 1), &[0.0]),
            Err(GroupError::Domain(_))
        ));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for d in 1..4 {
            let o = linalg::random_special_orthogonal(d, &mut rng);
            let y: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let g = make_block_element(rng.random_range(1.01..4.0), &o, &y).unwrap();
            assert_abs_diff_eq!(linalg::det(&g), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn example_generators() {
        let (g1, g2, g3) = sl3_example();
        assert_eq!(g1[(0, 0)], 3.0);
        assert_eq!(g1[(1, 1)], 2.0);
        assert_eq!(g1[(2, 2)], 1.0 / 6.0);
        assert_eq!(g2[(0, 2)], 1.0);
        assert_eq!(g3[(1, 2)], 1.0);
        for g in [g1, g2, g3] {
            assert_abs_diff_eq!(linalg::det(&g), 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn closed_form_product_matches_matrix_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for &(m, n) in &[(1, 1), (2, 1), (1, 2), (2, 2)] {
            for _ in 0..50 {
                let p = random_p_element(m, n, 1.0, &mut rng);
                let q = random_p_element(m, n, 1.0, &mut rng);
                let prod = aku_compose(&p) * aku_compose(&q);
                assert!((aku_compose(&p.mul(&q)) - &prod).abs().max() < 1e-10);
                let inv = aku_compose(&p.inverse()) * aku_compose(&p);
                assert!((inv - Mat::identity(m + n, m + n)).abs().max() < 1e-10);
            }
        }
    }

    #[test]
    fn group_to_similarity_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for &(m, n) in &[(1, 1), (2, 1), (2, 2)] {
            for _ in 0..20 {
                let p = random_p_element(m, n, 1.0, &mut rng);
                let s = group_to_similarity(&p);
                let beta = Mat::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
                let lhs = similarity_action(&p, &beta).unwrap();
                assert!((lhs - s.apply(&beta)).abs().max() < 1e-10);
            }
        }
    }

    #[test]
    fn sign_normalization_keeps_action() {
        let p = PElement { o1: m1(-1.0), o2: m1(-1.0), alpha: m1(0.3), ..PElement::identity(1, 1) };
        let q = p.sign_normalized();
        assert_eq!(q.o1, m1(1.0));
        let b = m1(0.7);
        assert_eq!(similarity_action(&p, &b).unwrap(), similarity_action(&q, &b).unwrap());
    }
}
