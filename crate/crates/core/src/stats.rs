//! Small statistical helpers shared by the simulation modules.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Count, sum and sum of squares of a scalar sample.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub n: u64,
    pub sum: f64,
    pub sum_sq: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        self.sum += x;
        self.sum_sq += x * x;
    }

    pub fn merge(&mut self, other: &Self) {
        self.n += other.n;
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
    }

    pub fn mean(&self) -> f64 {
        if self.n == 0 {
            return f64::NAN;
        }
        self.sum / self.n as f64
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        let n = self.n as f64;
        let m = self.sum / n;
        ((self.sum_sq - n * m * m) / (n - 1.0)).max(0.0)
    }

    pub fn std_error(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        (self.variance() / self.n as f64).sqrt()
    }
}

/// Mean and standard error of independent replica values.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let mut m = Moments::default();
    for &x in xs {
        m.push(x);
    }
    (m.mean(), m.std_error())
}

/// Standard error of the mean of a serially correlated series by the method
/// of batch means (`batches` equal batches, remainder dropped).
pub fn batch_means_se(xs: &[f64], batches: usize) -> f64 {
    let b = batches.max(2);
    let len = xs.len() / b;
    if len == 0 {
        return f64::NAN;
    }
    let means: Vec<f64> = (0..b)
        .map(|i| xs[i * len..(i + 1) * len].iter().sum::<f64>() / len as f64)
        .collect();
    mean_se(&means).1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareTest {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    pub bins: usize,
}

/// Minimum expected count per bin; smaller bins are pooled.
pub const MIN_EXPECTED: f64 = 5.0;

fn chi_sq_p(stat: f64, dof: usize) -> f64 {
    if dof == 0 {
        return 1.0;
    }
    let dist = ChiSquared::new(dof as f64).expect("positive degrees of freedom");
    1.0 - dist.cdf(stat)
}

/// Goodness of fit of `observed` counts against cell probabilities `probs`
/// (same length, summing to one). Cells with expected count below
/// [`MIN_EXPECTED`] are pooled into one cell.
pub fn chi_square_gof(observed: &[u64], probs: &[f64]) -> ChiSquareTest {
    assert_eq!(observed.len(), probs.len());
    let total: u64 = observed.iter().sum();
    let n = total as f64;
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let mut pool = (0.0, 0.0);
    for (&o, &p) in observed.iter().zip(probs) {
        let e = p * n;
        if e >= MIN_EXPECTED {
            cells.push((o as f64, e));
        } else {
            pool.0 += o as f64;
            pool.1 += e;
        }
    }
    if pool.1 > 0.0 || pool.0 > 0.0 {
        if pool.1 >= MIN_EXPECTED || cells.is_empty() {
            cells.push(pool);
        } else {
            let idx = cells
                .iter()
                .enumerate()
                .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
                .map(|(i, _)| i)
                .unwrap_or(0);
            cells[idx].0 += pool.0;
            cells[idx].1 += pool.1;
        }
    }
    let statistic: f64 = cells
        .iter()
        .map(|&(o, e)| if e > 0.0 { (o - e) * (o - e) / e } else if o > 0.0 { f64::INFINITY } else { 0.0 })
        .sum();
    let dof = cells.len().saturating_sub(1);
    ChiSquareTest { statistic, dof, p_value: chi_sq_p(statistic, dof), bins: cells.len() }
}

/// Pearson test of independence on a contingency table. Empty rows and
/// columns are dropped.
pub fn chi_square_independence(table: &[Vec<u64>]) -> ChiSquareTest {
    let rows: Vec<&Vec<u64>> = table.iter().filter(|r| r.iter().any(|&c| c > 0)).collect();
    let ncols = table.first().map_or(0, |r| r.len());
    let cols: Vec<usize> = (0..ncols).filter(|&j| rows.iter().any(|r| r[j] > 0)).collect();
    let total: f64 = rows.iter().map(|r| r.iter().sum::<u64>() as f64).sum();
    if rows.len() < 2 || cols.len() < 2 {
        return ChiSquareTest { statistic: 0.0, dof: 0, p_value: 1.0, bins: rows.len() * cols.len() };
    }
    let row_sums: Vec<f64> = rows.iter().map(|r| r.iter().sum::<u64>() as f64).collect();
    let col_sums: Vec<f64> = cols.iter().map(|&j| rows.iter().map(|r| r[j] as f64).sum()).collect();
    let mut statistic = 0.0;
    for (i, r) in rows.iter().enumerate() {
        for (jj, &j) in cols.iter().enumerate() {
            let e = row_sums[i] * col_sums[jj] / total;
            let o = r[j] as f64;
            statistic += (o - e) * (o - e) / e;
        }
    }
    let dof = (rows.len() - 1) * (cols.len() - 1);
    ChiSquareTest { statistic, dof, p_value: chi_sq_p(statistic, dof), bins: rows.len() * cols.len() }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moments_merge_matches_pooled() {
        let xs = [1.0, 2.0, 4.0, 8.0, 16.0];
        let mut a = Moments::default();
        let mut b = Moments::default();
        let mut all = Moments::default();
        for (i, &x) in xs.iter().enumerate() {
            all.push(x);
            if i < 2 { a.push(x) } else { b.push(x) }
        }
        a.merge(&b);
        assert_eq!(a, all);
        assert!((all.mean() - 6.2).abs() < 1e-12);
        assert!((all.variance() - 37.2).abs() < 1e-12);
    }

    #[test]
    fn gof_exact_fit_has_zero_statistic() {
        let t = chi_square_gof(&[50, 30, 20], &[0.5, 0.3, 0.2]);
        assert_eq!(t.statistic, 0.0);
        assert_eq!(t.dof, 2);
        assert!((t.p_value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gof_pools_small_cells() {
        let t = chi_square_gof(&[90, 8, 1, 1], &[0.9, 0.08, 0.01, 0.01]);
        assert_eq!(t.bins, 2);
    }

    #[test]
    fn gof_detects_gross_misfit() {
        let t = chi_square_gof(&[900, 100], &[0.5, 0.5]);
        assert!(t.p_value < 1e-10);
    }

    #[test]
    fn chi_square_tail_matches_known_quantile() {
        // 0.999 quantile of chi-square with 1 dof is 10.8276
        assert!((chi_sq_p(10.8276, 1) - 0.001).abs() < 1e-5);
    }

    #[test]
    fn independence_of_product_table() {
        let t = chi_square_independence(&[vec![10, 20, 30], vec![20, 40, 60]]);
        assert!(t.statistic.abs() < 1e-12);
        let single = chi_square_independence(&[vec![0, 7, 0]]);
        assert_eq!(single.p_value, 1.0);
    }
}
