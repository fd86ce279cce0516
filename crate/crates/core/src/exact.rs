//! Exact rational scalars and small dense matrices.
//!
//! Every finite `f64` is a dyadic rational and converts without loss; text
//! such as `"1/3"` or `"-2"` parses to the exact fraction.

use crate::linalg::Mat;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use std::fmt;

pub type Q = BigRational;

/// A scalar as written in JSON: a number or a fraction string.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Number(f64),
    Text(String),
}

impl Scalar {
    pub fn to_rational(&self) -> Result<Q, String> {
        match self {
            Scalar::Number(x) => from_f64(*x),
            Scalar::Text(s) => parse_rational(s),
        }
    }
}

impl From<f64> for Scalar {
    fn from(x: f64) -> Self {
        Scalar::Number(x)
    }
}

impl From<&str> for Scalar {
    fn from(s: &str) -> Self {
        Scalar::Text(s.to_string())
    }
}

pub fn from_f64(x: f64) -> Result<Q, String> {
    Q::from_float(x).ok_or_else(|| format!("non-finite value {x}"))
}

/// Parses `"p"`, `"p/q"` or a decimal literal.
pub fn parse_rational(s: &str) -> Result<Q, String> {
    let s = s.trim();
    if let Some((p, q)) = s.split_once('/') {
        let p: BigInt = p.trim().parse().map_err(|_| format!("bad numerator in {s:?}"))?;
        let q: BigInt = q.trim().parse().map_err(|_| format!("bad denominator in {s:?}"))?;
        if q.is_zero() {
            return Err(format!("zero denominator in {s:?}"));
        }
        return Ok(Q::new(p, q));
    }
    if let Ok(p) = s.parse::<BigInt>() {
        return Ok(Q::from_integer(p));
    }
    let x: f64 = s.parse().map_err(|_| format!("not a number: {s:?}"))?;
    from_f64(x)
}

pub fn to_f64(x: &Q) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

pub fn int(n: i64) -> Q {
    Q::from_integer(BigInt::from(n))
}

/// Dense row-major matrix of rationals.
#[derive(Clone, PartialEq, Eq)]
pub struct RMat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<Q>,
}

impl fmt::Debug for RMat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries((0..self.rows).map(|i| self.row(i).iter().map(|x| x.to_string()).collect::<Vec<_>>())).finish()
    }
}

impl RMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![Q::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = Q::one();
        }
        m
    }

    pub fn scalar(x: Q) -> Self {
        Self { rows: 1, cols: 1, data: vec![x] }
    }

    pub fn from_rows(rows: &[Vec<Q>]) -> Result<Self, String> {
        let r = rows.len();
        let c = rows.first().map_or(0, |x| x.len());
        if r == 0 || c == 0 || rows.iter().any(|x| x.len() != c) {
            return Err("ragged or empty matrix".into());
        }
        Ok(Self { rows: r, cols: c, data: rows.iter().flatten().cloned().collect() })
    }

    pub fn from_scalars(rows: &[Vec<Scalar>]) -> Result<Self, String> {
        let parsed: Result<Vec<Vec<Q>>, String> =
            rows.iter().map(|r| r.iter().map(Scalar::to_rational).collect()).collect();
        Self::from_rows(&parsed?)
    }

    pub fn from_mat(m: &Mat) -> Result<Self, String> {
        let mut out = Self::zeros(m.nrows(), m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                *out.at_mut(i, j) = from_f64(m[(i, j)])?;
            }
        }
        Ok(out)
    }

    pub fn to_mat(&self) -> Mat {
        Mat::from_fn(self.rows, self.cols, |i, j| to_f64(self.at(i, j)))
    }

    pub fn at(&self, i: usize, j: usize) -> &Q {
        &self.data[i * self.cols + j]
    }

    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut Q {
        &mut self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[Q] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                *out.at_mut(j, i) = self.at(i, j).clone();
            }
        }
        out
    }

    pub fn mul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "shape mismatch in product");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.at(i, k);
                if a.is_zero() {
                    continue;
                }
                for j in 0..other.cols {
                    let b = other.at(k, j);
                    if !b.is_zero() {
                        *out.at_mut(i, j) += a * b;
                    }
                }
            }
        }
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.shape(), other.shape());
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect() }
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!(self.shape(), other.shape());
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect() }
    }

    pub fn scale(&self, c: &Q) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|a| a * c).collect() }
    }

    /// Largest absolute entry.
    pub fn sup_norm(&self) -> Q {
        self.data.iter().map(|x| x.abs()).max().unwrap_or_else(Q::zero)
    }
}

/// Exact similarity `β ↦ r O1 β O2 + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactSimilarity {
    pub ratio: Q,
    pub o1: RMat,
    pub o2: RMat,
    pub translation: RMat,
}

impl ExactSimilarity {
    pub fn identity(m: usize, n: usize) -> Self {
        Self { ratio: Q::one(), o1: RMat::identity(m), o2: RMat::identity(n), translation: RMat::zeros(m, n) }
    }

    pub fn apply(&self, beta: &RMat) -> RMat {
        self.o1.mul(beta).mul(&self.o2).scale(&self.ratio).add(&self.translation)
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            ratio: &self.ratio * &other.ratio,
            o1: self.o1.mul(&other.o1),
            o2: other.o2.mul(&self.o2),
            translation: self.apply(&other.translation),
        }
    }
}

/// Continued fraction digits `a_1, a_2, ..` of a rational in `(0, 1)`;
/// stops at `n` digits or when the expansion terminates.
pub fn cf_digits_rational(x: &Q, n: usize) -> (Vec<u64>, bool) {
    let mut digits = Vec::new();
    let (mut p, mut q) = (x.numer().clone(), x.denom().clone());
    if p.is_negative() || p >= q {
        let fl = num_integer::Integer::div_floor(&p, &q);
        p -= &fl * &q;
    }
    while digits.len() < n {
        if p.is_zero() {
            return (digits, true);
        }
        let a = &q / &p;
        let r = &q - &a * &p;
        digits.push(a.to_u64().unwrap_or(u64::MAX));
        q = p;
        p = r;
    }
    (digits, p.is_zero())
}

/// Longest common prefix of the digit sequences of all points in
/// `[lo, hi]`, given both endpoints lie in `(0, 1)`.
pub fn cf_digits_interval(lo: &Q, hi: &Q, n: usize) -> Vec<u64> {
    let (a, a_done) = cf_digits_rational(lo, n + 1);
    let (b, b_done) = cf_digits_rational(hi, n + 1);
    let mut out = Vec::new();
    for (i, (x, y)) in a.iter().zip(&b).enumerate() {
        // a digit is settled only if both endpoints continue past it
        let a_more = i + 1 < a.len() || !a_done;
        let b_more = i + 1 < b.len() || !b_done;
        if x != y || !a_more || !b_more || out.len() == n {
            break;
        }
        out.push(*x);
    }
    out
}
