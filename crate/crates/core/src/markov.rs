//! Finite-state Markov chains coded into group elements.
//!
//! Transition probabilities are stored column-stochastically:
//! `trans[to][from]` is the probability of the move `from -> to`, so that
//! every column sums to one. An i.i.d. walk with law `μ` is the chain whose
//! every column equals `μ`.

use crate::groups::{self, GroupError};
use crate::linalg::{self, Mat};
use crate::stats::{self, ChiSquareTest, Moments};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MarkovError {
    #[error("column of state {state} ('{name}') sums to {sum}, not 1")]
    NotStochastic { state: usize, name: String, sum: f64 },
    #[error("negative or non-finite transition probability {value} from state {from} to state {to}")]
    BadEntry { from: usize, to: usize, value: f64 },
    #[error("start distribution is invalid: {0}")]
    BadStart(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("chain is reducible")]
    Reducible,
    #[error("no return to state {anchor} within {cap} steps")]
    NonRecurrence { anchor: usize, cap: u64 },
    #[error("state index {0} out of range")]
    NoSuchState(usize),
    #[error(transparent)]
    Group(#[from] GroupError),
}

pub type Result<T> = std::result::Result<T, MarkovError>;

/// Hard cap on excursion length.
pub const EXCURSION_CAP: u64 = 10_000_000;
/// Tolerance for column sums.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// A finite chain with a coding map into `SL_d(R)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSpec {
    pub states: Vec<String>,
    /// `trans[to][from]`.
    pub trans: Vec<Vec<f64>>,
    #[serde(with = "linalg::mat_rows_vec")]
    pub coding: Vec<Mat>,
    pub start: Vec<f64>,
}

impl ChainSpec {
    /// The i.i.d. walk with law `Σ weights[i] δ_{mats[i]}`; weights are
    /// normalized. Starts from the law itself.
    pub fn iid(mats: Vec<Mat>, weights: &[f64]) -> Self {
        let total: f64 = weights.iter().sum();
        let mu: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let n = mats.len();
        Self {
            states: (0..n).map(|i| format!("g{i}")).collect(),
            trans: (0..n).map(|to| vec![mu[to]; n]).collect(),
            coding: mats,
            start: mu,
        }
    }

    pub fn iid_uniform(mats: Vec<Mat>) -> Self {
        let w = vec![1.0; mats.len()];
        Self::iid(mats, &w)
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Dimension `d` of the coded matrices.
    pub fn dim(&self) -> usize {
        self.coding.first().map_or(0, |g| g.nrows())
    }

    /// `p_{to,from}`.
    pub fn p(&self, to: usize, from: usize) -> f64 {
        self.trans[to][from]
    }

    pub fn state_index(&self, name: &str) -> Option<usize> {
        self.states.iter().position(|s| s == name)
    }

    fn check_shape(&self) -> Result<()> {
        let n = self.len();
        if n == 0 {
            return Err(MarkovError::Shape("chain has no states".into()));
        }
        if self.trans.len() != n || self.trans.iter().any(|r| r.len() != n) {
            return Err(MarkovError::Shape(format!("transition matrix must be {n}x{n}")));
        }
        if self.coding.len() != n {
            return Err(MarkovError::Shape(format!("coding has {} elements for {n} states", self.coding.len())));
        }
        let d = self.dim();
        if self.coding.iter().any(|g| g.shape() != (d, d)) {
            return Err(MarkovError::Shape("coded matrices must share one square shape".into()));
        }
        if self.start.len() != n {
            return Err(MarkovError::Shape("start distribution length differs from state count".into()));
        }
        Ok(())
    }

    /// Column residuals `|Σ_{to} p_{to,from} - 1|`.
    pub fn column_residuals(&self) -> Vec<f64> {
        (0..self.len())
            .map(|from| ((0..self.len()).map(|to| self.trans[to][from]).sum::<f64>() - 1.0).abs())
            .collect()
    }

    /// Structural and stochastic checks; the first offending state is named.
    pub fn check(&self) -> Result<()> {
        self.check_shape()?;
        let n = self.len();
        for from in 0..n {
            for to in 0..n {
                let v = self.trans[to][from];
                if !v.is_finite() || v < 0.0 {
                    return Err(MarkovError::BadEntry { from, to, value: v });
                }
            }
        }
        for (from, r) in self.column_residuals().into_iter().enumerate() {
            if r > STOCHASTIC_TOL {
                let sum = (0..n).map(|to| self.trans[to][from]).sum();
                return Err(MarkovError::NotStochastic { state: from, name: self.states[from].clone(), sum });
            }
        }
        if self.start.iter().any(|&x| !x.is_finite() || x < 0.0) {
            return Err(MarkovError::BadStart("negative or non-finite entry".into()));
        }
        let s: f64 = self.start.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(MarkovError::BadStart(format!("sums to {s}")));
        }
        Ok(())
    }

    fn reachable(&self, from: usize, forward: bool) -> Vec<bool> {
        let n = self.len();
        let mut seen = vec![false; n];
        let mut stack = vec![from];
        seen[from] = true;
        while let Some(u) = stack.pop() {
            for v in 0..n {
                let w = if forward { self.trans[v][u] } else { self.trans[u][v] };
                if w > 0.0 && !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen
    }

    /// Strong connectivity of the positive-entry digraph.
    pub fn is_irreducible(&self) -> bool {
        if self.is_empty() {
            return false;
        }
        self.reachable(0, true).iter().all(|&b| b) && self.reachable(0, false).iter().all(|&b| b)
    }

    /// States reachable in one step from every state.
    pub fn universally_accessible_states(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&s| (0..self.len()).all(|from| self.trans[s][from] > 0.0))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainReport {
    pub n_states: usize,
    pub max_column_residual: f64,
    pub irreducible: bool,
    /// For finite irreducible chains recurrence is positive and exponential.
    pub exponentially_recurrent: bool,
    pub universally_accessible: Vec<String>,
    pub max_det_residual: f64,
}

impl ChainReport {
    pub fn has_universally_accessible_state(&self) -> bool {
        !self.universally_accessible.is_empty()
    }
}

pub fn validate_chain(c: &ChainSpec) -> Result<ChainReport> {
    c.check()?;
    let irreducible = c.is_irreducible();
    let max_det_residual = c.coding.iter().map(|g| (linalg::det(g) - 1.0).abs()).fold(0.0, f64::max);
    Ok(ChainReport {
        n_states: c.len(),
        max_column_residual: c.column_residuals().into_iter().fold(0.0, f64::max),
        irreducible,
        exponentially_recurrent: irreducible,
        universally_accessible: c.universally_accessible_states().into_iter().map(|i| c.states[i].clone()).collect(),
        max_det_residual,
    })
}

/// Solves `P π = π`, `Σ π = 1` by a dense linear solve.
pub fn stationary_distribution(c: &ChainSpec) -> Result<Vec<f64>> {
    c.check()?;
    if !c.is_irreducible() {
        return Err(MarkovError::Reducible);
    }
    let n = c.len();
    let mut a = Mat::from_fn(n, n, |i, j| c.trans[i][j] - if i == j { 1.0 } else { 0.0 });
    let mut b = nalgebra::DVector::zeros(n);
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    b[n - 1] = 1.0;
    let pi = a.lu().solve(&b).ok_or(MarkovError::Reducible)?;
    Ok(pi.iter().copied().collect())
}

/// Spectral radius of the transition matrix with `anchor` removed; the tail
/// `P(τ > ℓ)` decays like its `ℓ`-th power.
pub fn taboo_spectral_radius(c: &ChainSpec, anchor: usize) -> f64 {
    let idx: Vec<usize> = (0..c.len()).filter(|&i| i != anchor).collect();
    if idx.is_empty() {
        return 0.0;
    }
    let q = Mat::from_fn(idx.len(), idx.len(), |i, j| c.trans[idx[i]][idx[j]]);
    q.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Generator for replica `replica` of a run seeded with `seed`.
pub fn replica_rng(seed: u64, replica: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replica);
    rng
}

/// Precomputed samplers for the start law and each column.
#[derive(Debug, Clone)]
pub struct ChainSampler {
    start: WeightedIndex<f64>,
    columns: Vec<WeightedIndex<f64>>,
}

impl ChainSampler {
    pub fn new(c: &ChainSpec) -> Result<Self> {
        c.check()?;
        let start = WeightedIndex::new(&c.start).map_err(|e| MarkovError::BadStart(e.to_string()))?;
        let columns = (0..c.len())
            .map(|from| {
                let col: Vec<f64> = (0..c.len()).map(|to| c.trans[to][from]).collect();
                WeightedIndex::new(&col).map_err(|e| MarkovError::Shape(e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { start, columns })
    }

    pub fn initial<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.start.sample(rng)
    }

    pub fn next<R: Rng + ?Sized>(&self, from: usize, rng: &mut R) -> usize {
        self.columns[from].sample(rng)
    }

    /// One excursion from `anchor` back to `anchor`.
    pub fn excursion<R: Rng + ?Sized>(&self, c: &ChainSpec, anchor: usize, rng: &mut R) -> Result<Excursion> {
        if anchor >= c.len() {
            return Err(MarkovError::NoSuchState(anchor));
        }
        let mut path = vec![anchor];
        let mut weight = 1.0;
        let mut element = c.coding[anchor].clone();
        let mut cur = anchor;
        loop {
            let nxt = self.next(cur, rng);
            weight *= c.trans[nxt][cur];
            if nxt == anchor {
                break;
            }
            if path.len() as u64 >= EXCURSION_CAP {
                return Err(MarkovError::NonRecurrence { anchor, cap: EXCURSION_CAP });
            }
            element = &c.coding[nxt] * &element;
            path.push(nxt);
            cur = nxt;
        }
        path.reverse();
        Ok(Excursion { word: path, weight, element })
    }
}

/// One excursion `e_0 = anchor, e_1, …, e_{n-1}` followed by a return.
#[derive(Debug, Clone, PartialEq)]
pub struct Excursion {
    /// `e_{n-1}, …, e_0`; the last entry is the anchor.
    pub word: Vec<usize>,
    /// `p_{e,e_{n-1}} p_{e_{n-1},e_{n-2}} ⋯ p_{e_1,e_0}`.
    pub weight: f64,
    /// `g_{e_{n-1}} ⋯ g_{e_0}`.
    pub element: Mat,
}

impl Excursion {
    pub fn len(&self) -> usize {
        self.word.len()
    }

    pub fn is_empty(&self) -> bool {
        self.word.is_empty()
    }

    pub fn label(&self, c: &ChainSpec) -> String {
        self.word.iter().map(|&i| c.states[i].as_str()).collect::<Vec<_>>().join("")
    }
}

pub fn sample_excursion<R: Rng + ?Sized>(c: &ChainSpec, anchor: usize, rng: &mut R) -> Result<Excursion> {
    ChainSampler::new(c)?.excursion(c, anchor, rng)
}

/// Exponents `δ` at which `E[N(g)^δ]` is estimated.
pub const DELTA_GRID: [f64; 6] = [0.0, 0.05, 0.1, 0.25, 0.5, 1.0];

/// Mergeable excursion statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcursionStats {
    pub anchor: usize,
    pub lengths: Moments,
    /// Per state: visits during one excursion (the anchor counts once).
    pub visits: Vec<Moments>,
    /// Per state: `Σ visits · length`.
    pub visits_len_cross: Vec<f64>,
    pub log_gauge: Moments,
    pub delta_moments: Vec<Moments>,
    /// `Σ τ_i τ_{i+1}` over consecutive excursions and the number of pairs.
    pub lag1_sum: f64,
    pub lag1_pairs: u64,
    /// `tail[ℓ] = #{τ > ℓ}`.
    pub tail: Vec<u64>,
    #[serde(skip)]
    last_len: Option<f64>,
}

impl ExcursionStats {
    pub fn new(n_states: usize, anchor: usize) -> Self {
        Self {
            anchor,
            lengths: Moments::default(),
            visits: vec![Moments::default(); n_states],
            visits_len_cross: vec![0.0; n_states],
            log_gauge: Moments::default(),
            delta_moments: vec![Moments::default(); DELTA_GRID.len()],
            lag1_sum: 0.0,
            lag1_pairs: 0,
            tail: Vec::new(),
            last_len: None,
        }
    }

    pub fn push(&mut self, ex: &Excursion) -> Result<()> {
        let tau = ex.len() as f64;
        self.lengths.push(tau);
        let mut counts = vec![0u64; self.visits.len()];
        for &s in &ex.word {
            counts[s] += 1;
        }
        for (i, &k) in counts.iter().enumerate() {
            self.visits[i].push(k as f64);
            self.visits_len_cross[i] += k as f64 * tau;
        }
        let gauge = linalg::norm_gauge(&ex.element).map_err(|e| MarkovError::Shape(e.to_string()))?;
        let lg = gauge.ln();
        self.log_gauge.push(lg);
        for (m, &d) in self.delta_moments.iter_mut().zip(DELTA_GRID.iter()) {
            m.push((d * lg).exp());
        }
        if let Some(prev) = self.last_len {
            self.lag1_sum += prev * tau;
            self.lag1_pairs += 1;
        }
        self.last_len = Some(tau);
        let n = ex.len();
        if self.tail.len() < n {
            self.tail.resize(n, 0);
        }
        for t in self.tail.iter_mut().take(n) {
            *t += 1;
        }
        Ok(())
    }

    /// Pools another accumulator; consecutive-pair sums do not straddle the
    /// boundary.
    pub fn merge(&mut self, other: &Self) {
        self.lengths.merge(&other.lengths);
        for (a, b) in self.visits.iter_mut().zip(&other.visits) {
            a.merge(b);
        }
        for (a, b) in self.visits_len_cross.iter_mut().zip(&other.visits_len_cross) {
            *a += b;
        }
        self.log_gauge.merge(&other.log_gauge);
        for (a, b) in self.delta_moments.iter_mut().zip(&other.delta_moments) {
            a.merge(b);
        }
        self.lag1_sum += other.lag1_sum;
        self.lag1_pairs += other.lag1_pairs;
        if self.tail.len() < other.tail.len() {
            self.tail.resize(other.tail.len(), 0);
        }
        for (a, b) in self.tail.iter_mut().zip(&other.tail) {
            *a += b;
        }
        self.last_len = None;
    }

    pub fn mean_return_time(&self) -> (f64, f64) {
        (self.lengths.mean(), self.lengths.std_error())
    }

    /// Occupation estimate of `π` with delta-method standard errors.
    pub fn stationary_estimate(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.lengths.n as f64;
        let ybar = self.lengths.mean();
        let vy = self.lengths.variance();
        let mut est = Vec::with_capacity(self.visits.len());
        let mut se = Vec::with_capacity(self.visits.len());
        for (x, &cross) in self.visits.iter().zip(&self.visits_len_cross) {
            let r = x.sum / self.lengths.sum;
            let xbar = x.mean();
            let cov = (cross - n * xbar * ybar) / (n - 1.0);
            let var = (x.variance() - 2.0 * r * cov + r * r * vy).max(0.0) / (ybar * ybar);
            est.push(r);
            se.push((var / n).sqrt());
        }
        (est, se)
    }

    /// `E[log N(g)]` over one excursion.
    pub fn log_moment(&self) -> (f64, f64) {
        (self.log_gauge.mean(), self.log_gauge.std_error())
    }

    /// `(δ, E[N(g)^δ])` on [`DELTA_GRID`].
    pub fn delta_curve(&self) -> Vec<(f64, f64)> {
        DELTA_GRID.iter().zip(&self.delta_moments).map(|(&d, m)| (d, m.mean())).collect()
    }

    /// Lag-one sample autocorrelation of consecutive lengths and its null
    /// standard error `1/√pairs`.
    pub fn length_autocorrelation(&self) -> (f64, f64) {
        let m = self.lengths.mean();
        let v = self.lengths.variance();
        if self.lag1_pairs == 0 || v == 0.0 {
            return (0.0, 0.0);
        }
        let r = (self.lag1_sum / self.lag1_pairs as f64 - m * m) / v;
        (r, 1.0 / (self.lag1_pairs as f64).sqrt())
    }

    /// Least-squares geometric rate of `P(τ > ℓ)` over `ℓ ≥ 1` with at
    /// least 30 exceedances; zero when the tail is finitely supported.
    pub fn tail_decay_rate(&self) -> f64 {
        let pts: Vec<(f64, f64)> = self
            .tail
            .iter()
            .enumerate()
            .skip(1)
            .filter(|(_, &c)| c >= 30)
            .map(|(l, &c)| (l as f64, (c as f64).ln()))
            .collect();
        if pts.len() < 2 {
            return 0.0;
        }
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
        (sxy / sxx).exp()
    }
}

pub fn excursion_stats<R: Rng + ?Sized>(
    c: &ChainSpec,
    anchor: usize,
    n_samples: usize,
    rng: &mut R,
) -> Result<ExcursionStats> {
    if !c.is_irreducible() {
        return Err(MarkovError::Reducible);
    }
    let sampler = ChainSampler::new(c)?;
    let mut st = ExcursionStats::new(c.len(), anchor);
    for _ in 0..n_samples {
        let ex = sampler.excursion(c, anchor, rng)?;
        st.push(&ex)?;
    }
    Ok(st)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenewalIdentity {
    pub lhs: f64,
    pub lhs_se: f64,
    pub rhs: f64,
    pub z_score: f64,
    pub mean_return_time: f64,
    pub n_samples: usize,
}

/// Monte-Carlo `E_e[t(g_{ω|τ_e})]` against `(1/π(e)) Σ t(g_{e'}) π(e')`.
pub fn renewal_t_identity<R: Rng + ?Sized>(
    c: &ChainSpec,
    anchor: usize,
    m_dim: usize,
    n_dim: usize,
    n_samples: usize,
    rng: &mut R,
) -> Result<RenewalIdentity> {
    let pi = stationary_distribution(c)?;
    let ts: Vec<f64> = c
        .coding
        .iter()
        .map(|g| groups::aku_decompose(g, m_dim, n_dim).map(|p| p.t))
        .collect::<std::result::Result<_, _>>()?;
    let mean_tau = 1.0 / pi[anchor];
    let rhs = mean_tau * ts.iter().zip(&pi).map(|(t, p)| t * p).sum::<f64>();
    let sampler = ChainSampler::new(c)?;
    let mut acc = Moments::default();
    for _ in 0..n_samples {
        let ex = sampler.excursion(c, anchor, rng)?;
        acc.push(groups::aku_decompose(&ex.element, m_dim, n_dim)?.t);
    }
    let lhs = acc.mean();
    let lhs_se = acc.std_error();
    let z_score = if lhs_se > 0.0 {
        (lhs - rhs) / lhs_se
    } else if (lhs - rhs).abs() <= 1e-12 * rhs.abs().max(1.0) {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(RenewalIdentity { lhs, lhs_se, rhs, z_score, mean_return_time: mean_tau, n_samples })
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Partial {
    weight: f64,
    id: usize,
}

impl Eq for Partial {}

impl PartialOrd for Partial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Partial {
    fn cmp(&self, other: &Self) -> Ordering {
        self.weight.total_cmp(&other.weight).then(other.id.cmp(&self.id))
    }
}

/// Renewal words with their weights, heaviest first, until the collected
/// mass reaches `min_mass` or `max_words` words are listed. Words are in
/// the `e_{n-1} … e_0` order of [`Excursion::word`].
pub fn renewal_words(c: &ChainSpec, anchor: usize, min_mass: f64, max_words: usize) -> Vec<(Vec<usize>, f64)> {
    let mut out = Vec::new();
    let mut mass = 0.0;
    let mut paths: Vec<Vec<usize>> = vec![vec![anchor]];
    let mut heap = BinaryHeap::new();
    heap.push(Partial { weight: 1.0, id: 0 });
    while let Some(Partial { weight, id }) = heap.pop() {
        if mass >= min_mass || out.len() >= max_words {
            break;
        }
        let path = paths[id].clone();
        let cur = *path.last().expect("nonempty");
        let ret = weight * c.trans[anchor][cur];
        if ret > 0.0 {
            let mut w = path.clone();
            w.reverse();
            out.push((w, ret));
            mass += ret;
        }
        for nxt in 0..c.len() {
            let p = c.trans[nxt][cur];
            if nxt != anchor && p > 0.0 {
                let mut np = path.clone();
                np.push(nxt);
                paths.push(np);
                heap.push(Partial { weight: weight * p, id: paths.len() - 1 });
            }
        }
    }
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    out
}

/// Chi-square goodness of fit of sampled excursion words against the
/// renewal weights (listed words plus one bin for the rest).
pub fn excursion_word_test<R: Rng + ?Sized>(
    c: &ChainSpec,
    anchor: usize,
    n_samples: usize,
    rng: &mut R,
) -> Result<ChiSquareTest> {
    let words = renewal_words(c, anchor, 0.999, 100_000);
    let index: HashMap<&[usize], usize> = words.iter().enumerate().map(|(i, (w, _))| (w.as_slice(), i)).collect();
    let mut observed = vec![0u64; words.len() + 1];
    let sampler = ChainSampler::new(c)?;
    for _ in 0..n_samples {
        let ex = sampler.excursion(c, anchor, rng)?;
        match index.get(ex.word.as_slice()) {
            Some(&i) => observed[i] += 1,
            None => observed[words.len()] += 1,
        }
    }
    let mut probs: Vec<f64> = words.iter().map(|w| w.1).collect();
    let listed: f64 = probs.iter().sum();
    probs.push((1.0 - listed).max(0.0));
    Ok(stats::chi_square_gof(&observed, &probs))
}
