//! Lyapunov spectra of Markov-driven matrix products and a Monte-Carlo
//! falsifier for uniform expansion on Grassmannians.
//!
//! A `NoCounterexampleFound` verdict is statistical evidence only. It is not
//! a proof of expansion.

use crate::linalg::{self, CompensatedSum, LinalgError, Mat, OrthoFrame, Representation};
use crate::markov::{self, ChainSampler, ChainSpec, MarkovError};
use crate::stats::{self, Moments};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExpansionError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Markov(#[from] MarkovError),
    #[error("grade {k} out of range 1..={max}")]
    Grade { k: usize, max: usize },
    #[error("zero vector")]
    ZeroVector,
    #[error("vector has length {got}, representation has dimension {expected}")]
    VectorLength { expected: usize, got: usize },
    #[error("chain is reducible")]
    Reducible,
    #[error("need at least one step and one replica")]
    Empty,
}

pub type Result<T> = std::result::Result<T, ExpansionError>;

/// Wedges with log-volume below this are resampled.
pub const DEGENERATE_LOG_VOLUME: f64 = -18.420680743952367; // ln 1e-8

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovReport {
    pub representation: Representation,
    pub exponent_estimates: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub steps: usize,
    pub replicas: usize,
    pub per_replica: Vec<Vec<f64>>,
}

impl LyapunovReport {
    fn from_replicas(representation: Representation, steps: usize, per_replica: Vec<Vec<f64>>) -> Self {
        let dim = per_replica.first().map_or(0, |r| r.len());
        let mut exponent_estimates = Vec::with_capacity(dim);
        let mut std_errors = Vec::with_capacity(dim);
        for i in 0..dim {
            let xs: Vec<f64> = per_replica.iter().map(|r| r[i]).collect();
            let (m, se) = stats::mean_se(&xs);
            exponent_estimates.push(m);
            std_errors.push(se);
        }
        Self { representation, exponent_estimates, std_errors, steps, replicas: per_replica.len(), per_replica }
    }

    /// Pools replicas of two reports with equal step counts.
    pub fn merge(&self, other: &Self) -> Self {
        let mut all = self.per_replica.clone();
        all.extend(other.per_replica.iter().cloned());
        Self::from_replicas(self.representation, self.steps, all)
    }

    /// `Σ_{i<k} λ_i` with the standard error of the per-replica partial sums.
    pub fn partial_sum(&self, k: usize) -> (f64, f64) {
        let xs: Vec<f64> = self.per_replica.iter().map(|r| r[..k].iter().sum()).collect();
        stats::mean_se(&xs)
    }

    /// Sum of all exponents with its standard error.
    pub fn total(&self) -> (f64, f64) {
        self.partial_sum(self.exponent_estimates.len())
    }
}

fn coded_reps(chain: &ChainSpec, rep: Representation) -> Result<Vec<Mat>> {
    Ok(chain.coding.iter().map(|g| rep.apply(g)).collect::<std::result::Result<_, _>>()?)
}

fn check_run(chain: &ChainSpec, n_steps: usize, n_replicas: usize) -> Result<ChainSampler> {
    if n_steps == 0 || n_replicas == 0 {
        return Err(ExpansionError::Empty);
    }
    if !chain.is_irreducible() {
        return Err(ExpansionError::Reducible);
    }
    Ok(ChainSampler::new(chain)?)
}

/// Lyapunov exponents of the coded product in representation `rep`, from
/// `n_replicas` independent streams `(seed, r)`. Each replica carries a full
/// orthonormal frame started at the identity; per-replica estimates are
/// sorted in decreasing order before averaging.
pub fn lyapunov_spectrum(
    chain: &ChainSpec,
    rep: Representation,
    n_steps: usize,
    n_replicas: usize,
    seed: u64,
) -> Result<LyapunovReport> {
    lyapunov_spectrum_replicas(chain, rep, n_steps, 0..n_replicas as u64, seed)
}

/// [`lyapunov_spectrum`] over the replica streams `replicas`, so that runs
/// over disjoint ranges can be merged.
pub fn lyapunov_spectrum_replicas(
    chain: &ChainSpec,
    rep: Representation,
    n_steps: usize,
    replicas: std::ops::Range<u64>,
    seed: u64,
) -> Result<LyapunovReport> {
    let sampler = check_run(chain, n_steps, replicas.clone().count())?;
    let mats = coded_reps(chain, rep)?;
    let dim = mats[0].nrows();
    let per_replica = replicas
        .into_par_iter()
        .map(|r| {
            let mut rng = markov::replica_rng(seed, r);
            let mut frame = OrthoFrame::identity(dim, dim);
            let mut sums = vec![CompensatedSum::default(); dim];
            let mut state = sampler.initial(&mut rng);
            for _ in 0..n_steps {
                let logs = frame.step(&mats[state])?;
                for (s, &l) in sums.iter_mut().zip(logs) {
                    s.add(l);
                }
                state = sampler.next(state, &mut rng);
            }
            let mut est: Vec<f64> = sums.iter().map(|s| s.value() / n_steps as f64).collect();
            est.sort_by(|a, b| b.total_cmp(a));
            Ok(est)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LyapunovReport::from_replicas(rep, n_steps, per_replica))
}

/// Growth rate `(1/n) log ∥∧^k(g_{ω|n})∥` from the directly multiplied
/// wedge-power matrices, renormalized every step. Uses the same streams as
/// [`lyapunov_spectrum`]; returns mean and standard error over replicas.
pub fn wedge_norm_growth(chain: &ChainSpec, k: usize, n_steps: usize, n_replicas: usize, seed: u64) -> Result<(f64, f64)> {
    let sampler = check_run(chain, n_steps, n_replicas)?;
    let mats = coded_reps(chain, Representation::Wedge(k))?;
    let dim = mats[0].nrows();
    let rates = (0..n_replicas)
        .into_par_iter()
        .map(|r| {
            let mut rng = markov::replica_rng(seed, r as u64);
            let mut w = Mat::identity(dim, dim);
            let mut logs = CompensatedSum::default();
            let mut state = sampler.initial(&mut rng);
            for _ in 0..n_steps {
                w = &mats[state] * &w;
                let nrm = w.norm();
                w /= nrm;
                logs.add(nrm.ln());
                state = sampler.next(state, &mut rng);
            }
            logs.add(linalg::operator_norm(&w).ln());
            logs.value() / n_steps as f64
        })
        .collect::<Vec<f64>>();
    Ok(stats::mean_se(&rates))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthRate {
    pub rate: f64,
    pub std_error: f64,
    pub per_replica: Vec<f64>,
}

/// `(1/n) log(∥g_{ω|n} v∥ / ∥v∥)` averaged over replicas.
pub fn vector_growth_rate(
    chain: &ChainSpec,
    rep: Representation,
    v: &[f64],
    n_steps: usize,
    n_replicas: usize,
    seed: u64,
) -> Result<GrowthRate> {
    let sampler = check_run(chain, n_steps, n_replicas)?;
    let mats = coded_reps(chain, rep)?;
    let dim = mats[0].nrows();
    if v.len() != dim {
        return Err(ExpansionError::VectorLength { expected: dim, got: v.len() });
    }
    let v0 = nalgebra::DVector::from_column_slice(v);
    let n0 = v0.norm();
    if n0 == 0.0 || !n0.is_finite() {
        return Err(ExpansionError::ZeroVector);
    }
    let per_replica = (0..n_replicas)
        .into_par_iter()
        .map(|r| {
            let mut rng = markov::replica_rng(seed, r as u64);
            let mut x = &v0 / n0;
            let mut logs = CompensatedSum::default();
            let mut state = sampler.initial(&mut rng);
            for _ in 0..n_steps {
                x = &mats[state] * x;
                let nrm = x.norm();
                if nrm == 0.0 || !nrm.is_finite() {
                    return Err(ExpansionError::Linalg(LinalgError::NonFinite));
                }
                x /= nrm;
                logs.add(nrm.ln());
                state = sampler.next(state, &mut rng);
            }
            Ok(logs.value() / n_steps as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    let (rate, std_error) = stats::mean_se(&per_replica);
    Ok(GrowthRate { rate, std_error, per_replica })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionOptions {
    /// `Standard` or `Adjoint`; the wedge is taken inside this space.
    pub representation: Representation,
    pub k: usize,
    pub n_steps: usize,
    pub n_samples: usize,
    /// Block length `N` of the integral criterion.
    pub mc_block: usize,
    pub mc_samples: usize,
    /// Batches for the standard error of one trajectory's rate.
    pub batches: usize,
}

impl Default for ExpansionOptions {
    fn default() -> Self {
        Self {
            representation: Representation::Adjoint,
            k: 1,
            n_steps: 10_000,
            n_samples: 200,
            mc_block: 10,
            mc_samples: 2000,
            batches: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    NoCounterexampleFound,
    Counterexample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionVerdict {
    pub k: usize,
    pub representation: Representation,
    pub min_sampled_rate: f64,
    pub min_rate_std_error: f64,
    /// Factor vectors `v_1, …, v_k` of the minimizing pure wedge.
    pub witness: Vec<Vec<f64>>,
    pub mc_criterion_value: f64,
    pub mc_std_error: f64,
    pub verdict: Verdict,
}

impl ExpansionVerdict {
    pub fn is_counterexample(&self) -> bool {
        self.verdict == Verdict::Counterexample
    }
}

fn random_wedge<R: Rng + ?Sized>(dim: usize, k: usize, rng: &mut R) -> Mat {
    loop {
        let cols = Mat::from_fn(dim, k, |_, _| rng.sample::<f64, _>(StandardNormal));
        // normalized columns are uniform on the sphere
        let cols = Mat::from_columns(&cols.column_iter().map(|c| c / c.norm()).collect::<Vec<_>>());
        if let Ok((_, vol)) = OrthoFrame::from_columns(&cols) {
            if vol >= DEGENERATE_LOG_VOLUME {
                return cols;
            }
        }
    }
}

/// Log-volume growth of a `k`-frame over `n_steps`, with a batch-means
/// standard error.
fn wedge_rate<R: Rng + ?Sized>(
    sampler: &ChainSampler,
    mats: &[Mat],
    cols: &Mat,
    n_steps: usize,
    batches: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    let (mut frame, _) = OrthoFrame::from_columns(cols)?;
    let mut incs = Vec::with_capacity(n_steps);
    let mut state = sampler.initial(rng);
    for _ in 0..n_steps {
        let logs = frame.step(&mats[state])?;
        incs.push(logs.iter().sum::<f64>());
        state = sampler.next(state, rng);
    }
    let mut total = CompensatedSum::default();
    for &x in &incs {
        total.add(x);
    }
    let se = stats::batch_means_se(&incs, batches);
    Ok((total.value() / n_steps as f64, if se.is_finite() { se } else { 0.0 }))
}

/// Samples `n_samples` random pure wedges, estimates the growth rate of each
/// along an independent trajectory, and evaluates the `N`-step integral
/// `E log(∥g v∥/∥v∥)` at the slowest one. The verdict is a counterexample
/// when either quantity fails to exceed zero by three standard errors.
pub fn grassmannian_expansion_check(chain: &ChainSpec, opts: &ExpansionOptions, seed: u64) -> Result<ExpansionVerdict> {
    let sampler = check_run(chain, opts.n_steps, opts.n_samples.max(1))?;
    let mats = coded_reps(chain, opts.representation)?;
    let dim = mats[0].nrows();
    if opts.k == 0 || opts.k >= dim {
        return Err(ExpansionError::Grade { k: opts.k, max: dim.saturating_sub(1) });
    }
    let results = (0..opts.n_samples)
        .into_par_iter()
        .map(|s| {
            let mut rng = markov::replica_rng(seed, s as u64);
            let cols = random_wedge(dim, opts.k, &mut rng);
            let (rate, se) = wedge_rate(&sampler, &mats, &cols, opts.n_steps, opts.batches, &mut rng)?;
            Ok((rate, se, cols))
        })
        .collect::<Result<Vec<_>>>()?;
    let (min_rate, min_se, witness) = results
        .into_iter()
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .expect("at least one sample");

    let pi = markov::stationary_distribution(chain)?;
    let start = rand::distr::weighted::WeightedIndex::new(&pi).map_err(|e| MarkovError::BadStart(e.to_string()))?;
    let mut rng = markov::replica_rng(seed, opts.n_samples as u64);
    let mut mc = Moments::default();
    for _ in 0..opts.mc_samples {
        let mut frame = OrthoFrame::from_columns(&witness)?.0;
        let mut state = rand::distr::Distribution::sample(&start, &mut rng);
        let mut growth = 0.0;
        for _ in 0..opts.mc_block {
            growth += frame.step(&mats[state])?.iter().sum::<f64>();
            state = sampler.next(state, &mut rng);
        }
        mc.push(growth);
    }
    let mc_value = mc.mean();
    let mc_se = mc.std_error();
    let failed = min_rate - 3.0 * min_se <= 0.0 || mc_value - 3.0 * mc_se <= 0.0;
    Ok(ExpansionVerdict {
        k: opts.k,
        representation: opts.representation,
        min_sampled_rate: min_rate,
        min_rate_std_error: min_se,
        witness: witness.column_iter().map(|c| c.iter().copied().collect()).collect(),
        mc_criterion_value: mc_value,
        mc_std_error: mc_se,
        verdict: if failed { Verdict::Counterexample } else { Verdict::NoCounterexampleFound },
    })
}
