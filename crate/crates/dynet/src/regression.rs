//! AR regression building blocks: lagged regressor matrices, per-node least
//! squares, and residual whiteness validation.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::dataset::TimeSeriesDataset;
use crate::error::{Error, Result};

/// Singular values below `max_sv * RANK_EPS` count as zero when solving.
const RANK_EPS: f64 = 1e-10;

/// Fitted vector AR model: per-edge coefficient vectors plus residuals.
#[derive(Debug, Clone)]
pub struct VarModel {
    order: usize,
    /// Coefficient vector for each (target, source) pair that was included.
    coefficients: BTreeMap<(usize, usize), DVector<f64>>,
    noise_variances: Vec<f64>,
    parent_sets: Vec<Vec<usize>>,
    residuals: DMatrix<f64>,
    residual_ss: Vec<f64>,
    rank_deficient: Vec<bool>,
}

impl VarModel {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn coefficients(&self, target: usize, source: usize) -> Option<&DVector<f64>> {
        self.coefficients.get(&(target, source))
    }

    /// Residual variances, normalized by `N - regressor count` (unbiased).
    pub fn noise_variances(&self) -> &[f64] {
        &self.noise_variances
    }

    pub fn parent_sets(&self) -> &[Vec<usize>] {
        &self.parent_sets
    }

    /// L x N residual matrix.
    pub fn residuals(&self) -> &DMatrix<f64> {
        &self.residuals
    }

    /// Per-node sum of squared residuals.
    pub fn residual_ss(&self) -> &[f64] {
        &self.residual_ss
    }

    /// True for nodes whose regressor matrix was rank deficient; the
    /// least-norm solution was used there.
    pub fn rank_deficient(&self) -> &[bool] {
        &self.rank_deficient
    }
}

/// Lagged regressor matrix for one source node.
///
/// Row `t` (0-based) holds `[w_i(t-1), ..., w_i(t-m)]`, with zeros standing
/// in for samples before the start of the record.
pub fn build_regressors(
    dataset: &TimeSeriesDataset,
    source_node: usize,
    order: usize,
) -> Result<DMatrix<f64>> {
    let n = dataset.sample_count();
    if order == 0 || order > n {
        return Err(Error::OrderTooLarge {
            order,
            samples: n,
        });
    }
    let w = dataset.node_signal(source_node);
    Ok(DMatrix::from_fn(n, order, |t, k| {
        if t > k {
            w[t - k - 1]
        } else {
            0.0
        }
    }))
}

/// Per-node ordinary least squares fit of the AR model with the given
/// parent sets (sources whose lags enter node `j`'s regression).
pub fn ols_fit(
    dataset: &TimeSeriesDataset,
    order: usize,
    parent_sets: &[Vec<usize>],
) -> Result<VarModel> {
    let l = dataset.node_count();
    let n = dataset.sample_count();
    if parent_sets.len() != l {
        return Err(Error::InvalidArgument(format!(
            "{} parent sets for {l} nodes",
            parent_sets.len()
        )));
    }
    // All parents draw from the same lag matrices; build each once.
    let mut lagged: Vec<Option<DMatrix<f64>>> = vec![None; l];
    let mut coefficients = BTreeMap::new();
    let mut noise_variances = vec![0.0; l];
    let mut residual_ss = vec![0.0; l];
    let mut rank_deficient = vec![false; l];
    let mut residuals = DMatrix::zeros(l, n);

    for j in 0..l {
        let parents = &parent_sets[j];
        let k = parents.len() * order;
        if k >= n {
            return Err(Error::InsufficientData(format!(
                "node {j}: {k} regressors for {n} samples"
            )));
        }
        let y = DVector::from_fn(n, |t, _| dataset.node_signal(j)[t]);
        let resid = if parents.is_empty() {
            y.clone()
        } else {
            let mut x = DMatrix::zeros(n, k);
            for (p, &src) in parents.iter().enumerate() {
                if lagged[src].is_none() {
                    lagged[src] = Some(build_regressors(dataset, src, order)?);
                }
                x.view_mut((0, p * order), (n, order))
                    .copy_from(lagged[src].as_ref().unwrap());
            }
            let svd = x.clone().svd(true, true);
            let max_sv = svd.singular_values.max();
            let rank = svd
                .singular_values
                .iter()
                .filter(|&&s| s > max_sv * RANK_EPS)
                .count();
            if rank < k {
                rank_deficient[j] = true;
            }
            let theta = svd
                .solve(&y, max_sv * RANK_EPS)
                .map_err(|e| Error::NumericalFailure(format!("node {j} SVD solve: {e}")))?;
            for (p, &src) in parents.iter().enumerate() {
                let coef = DVector::from_fn(order, |r, _| theta[p * order + r]);
                coefficients.insert((j, src), coef);
            }
            &y - &x * &theta
        };
        let ss: f64 = resid.iter().map(|r| r * r).sum();
        residual_ss[j] = ss;
        noise_variances[j] = ss / (n - k) as f64;
        residuals.row_mut(j).copy_from(&resid.transpose());
    }

    Ok(VarModel {
        order,
        coefficients,
        noise_variances,
        parent_sets: parent_sets.to_vec(),
        residuals,
        residual_ss,
        rank_deficient,
    })
}

/// Outcome of a portmanteau whiteness test on one residual series.
#[derive(Debug, Clone, Copy)]
pub struct WhitenessResult {
    pub statistic: f64,
    pub p_value: f64,
    pub pass: bool,
}

/// Ljung-Box portmanteau test over lags `1..=max_lag` against the
/// chi-squared reference with `max_lag` degrees of freedom.
pub fn whiteness_test(residuals: &[f64], max_lag: usize, alpha: f64) -> Result<WhitenessResult> {
    let n = residuals.len();
    if max_lag == 0 || n <= max_lag {
        return Err(Error::InvalidArgument(format!(
            "need residual length > max_lag >= 1, got {n} and {max_lag}"
        )));
    }
    let mean = residuals.iter().sum::<f64>() / n as f64;
    let c0: f64 = residuals.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n as f64;
    if c0 <= 0.0 {
        return Err(Error::DegenerateInput(
            "constant residual has no autocorrelation".into(),
        ));
    }
    let nf = n as f64;
    let mut q = 0.0;
    for k in 1..=max_lag {
        let ck: f64 = (k..n)
            .map(|t| (residuals[t] - mean) * (residuals[t - k] - mean))
            .sum::<f64>()
            / nf;
        let rk = ck / c0;
        q += rk * rk / (nf - k as f64);
    }
    q *= nf * (nf + 2.0);
    let chi = ChiSquared::new(max_lag as f64).expect("max_lag >= 1");
    let p_value = 1.0 - chi.cdf(q);
    Ok(WhitenessResult {
        statistic: q,
        p_value,
        pass: p_value > alpha,
    })
}

/// Default portmanteau lag count.
pub const DEFAULT_WHITENESS_LAGS: usize = 20;
/// Default whiteness significance level.
pub const DEFAULT_WHITENESS_ALPHA: f64 = 0.05;

/// Whiteness validation of all per-node residuals of a fitted model.
#[derive(Debug, Clone)]
pub struct ResidualReport {
    pub tests: Vec<WhitenessResult>,
    pub alpha: f64,
    pub max_lag: usize,
}

impl ResidualReport {
    pub fn pass_fraction(&self) -> f64 {
        let passed = self.tests.iter().filter(|t| t.pass).count();
        passed as f64 / self.tests.len() as f64
    }
}

/// Runs the whiteness test on every node residual of `model`.
pub fn validate_residuals(model: &VarModel, max_lag: usize, alpha: f64) -> Result<ResidualReport> {
    let tests = model
        .residuals()
        .row_iter()
        .map(|row| {
            let series: Vec<f64> = row.iter().copied().collect();
            whiteness_test(&series, max_lag, alpha)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ResidualReport {
        tests,
        alpha,
        max_lag,
    })
}
