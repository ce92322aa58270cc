//! Conditional Granger-causality analysis.
//!
//! For every ordered pair `(target j, source i)` the full regression uses all
//! `L` node histories and the reduced regression drops the source's lags; the
//! Granger value is the log ratio of the residual variances. Significance
//! comes from a finite-sample F-test by default, with an asymptotic
//! chi-squared variant behind a flag. Graph estimates apply raw or
//! Benjamini-Hochberg FDR thresholding over all `L * (L - 1)` p-values.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, FisherSnedecor, StudentsT};

use crate::dataset::TimeSeriesDataset;
use crate::error::{Error, Result};
use crate::graph::DirectedGraph;
use crate::regression::build_regressors;

/// Which reference distribution converts Granger values into p-values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum SignificanceTest {
    /// Finite-sample F-test with `(m, N - L m)` degrees of freedom.
    #[default]
    FTest,
    /// Asymptotic chi-squared test on `N * F_ji` with `m` degrees of freedom.
    ChiSquared,
}

/// Granger values and p-values for all ordered node pairs; diagonal entries
/// are undefined and stored as NaN.
#[derive(Debug, Clone)]
pub struct GrangerResult {
    pub order: usize,
    pub granger_values: DMatrix<f64>,
    pub p_values: DMatrix<f64>,
    pub test: SignificanceTest,
    /// Populated once a threshold has been applied.
    pub alpha: Option<f64>,
    pub fdr: Option<bool>,
    pub estimate: Option<DirectedGraph>,
}

impl GrangerResult {
    pub fn node_count(&self) -> usize {
        self.granger_values.nrows()
    }

    /// Applies a threshold and records it together with the resulting graph.
    pub fn thresholded(mut self, alpha: f64, fdr: bool) -> Self {
        let graph = threshold_graph(&self, alpha, fdr);
        self.alpha = Some(alpha);
        self.fdr = Some(fdr);
        self.estimate = Some(graph);
        self
    }
}

/// Serialized layout: matrices row-major with `null` on the diagonal.
#[derive(Serialize, Deserialize)]
struct GrangerResultRepr {
    order: usize,
    node_count: usize,
    granger_values: Vec<Option<f64>>,
    p_values: Vec<Option<f64>>,
    test: SignificanceTest,
    alpha: Option<f64>,
    fdr: Option<bool>,
    estimate: Option<DirectedGraph>,
}

impl Serialize for GrangerResult {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let pack = |m: &DMatrix<f64>| {
            let l = m.nrows();
            (0..l)
                .flat_map(|j| (0..l).map(move |i| (j, i)))
                .map(|(j, i)| if j == i { None } else { Some(m[(j, i)]) })
                .collect()
        };
        GrangerResultRepr {
            order: self.order,
            node_count: self.node_count(),
            granger_values: pack(&self.granger_values),
            p_values: pack(&self.p_values),
            test: self.test,
            alpha: self.alpha,
            fdr: self.fdr,
            estimate: self.estimate.clone(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for GrangerResult {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let repr = GrangerResultRepr::deserialize(deserializer)?;
        let l = repr.node_count;
        let unpack = |cells: &[Option<f64>]| {
            DMatrix::from_fn(l, l, |j, i| cells[j * l + i].unwrap_or(f64::NAN))
        };
        Ok(GrangerResult {
            order: repr.order,
            granger_values: unpack(&repr.granger_values),
            p_values: unpack(&repr.p_values),
            test: repr.test,
            alpha: repr.alpha,
            fdr: repr.fdr,
            estimate: repr.estimate,
        })
    }
}

/// Least-squares fit of one node on the given parents; returns the residual
/// sum of squares. Rank-deficient regressors fall back to the least-norm
/// solution.
fn node_ssr(
    dataset: &TimeSeriesDataset,
    target: usize,
    parents: &[usize],
    order: usize,
) -> Result<f64> {
    let n = dataset.sample_count();
    let k = parents.len() * order;
    if k >= n {
        return Err(Error::InsufficientData(format!(
            "node {target}: {k} regressors for {n} samples"
        )));
    }
    let y = DVector::from_fn(n, |t, _| dataset.node_signal(target)[t]);
    if parents.is_empty() {
        return Ok(y.iter().map(|v| v * v).sum());
    }
    let mut x = DMatrix::zeros(n, k);
    for (p, &src) in parents.iter().enumerate() {
        let block = build_regressors(dataset, src, order)?;
        x.view_mut((0, p * order), (n, order)).copy_from(&block);
    }
    let svd = x.clone().svd(true, true);
    let max_sv = svd.singular_values.max();
    let theta = svd
        .solve(&y, max_sv * 1e-10)
        .map_err(|e| Error::NumericalFailure(format!("node {target} SVD solve: {e}")))?;
    let resid = &y - &x * theta;
    Ok(resid.iter().map(|v| v * v).sum())
}

/// Joint-VAR order selection by AIC over `1..=max_order`; ties break toward
/// the smaller order.
pub fn select_order_aic(dataset: &TimeSeriesDataset, max_order: usize) -> Result<usize> {
    let l = dataset.node_count();
    let n = dataset.sample_count();
    if max_order == 0 || max_order * l >= n {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= max_order * L < N, got max_order {max_order}, L {l}, N {n}"
        )));
    }
    let full: Vec<usize> = (0..l).collect();
    let mut best: Option<(f64, usize)> = None;
    for m in 1..=max_order {
        let model = crate::regression::ols_fit(dataset, m, &vec![full.clone(); l])?;
        let e = model.residuals();
        let sigma = e * e.transpose() / n as f64;
        let det = sigma.determinant();
        if !(det.is_finite() && det > 0.0) {
            continue;
        }
        let aic = n as f64 * det.ln() + 2.0 * (m * l * l) as f64;
        match best {
            Some((b, _)) if aic >= b => {}
            _ => best = Some((aic, m)),
        }
    }
    best.map(|(_, m)| m).ok_or_else(|| {
        Error::InsufficientData("all candidate orders gave singular residual covariance".into())
    })
}

/// Granger value `F_ji = log(var[eta'_j] / var[eta_j])` for one ordered pair,
/// from the full (all parents) and reduced (source excluded) regressions.
pub fn granger_value(
    dataset: &TimeSeriesDataset,
    target: usize,
    source: usize,
    order: usize,
) -> Result<f64> {
    if target == source {
        return Err(Error::InvalidArgument("target equals source".into()));
    }
    let l = dataset.node_count();
    let full: Vec<usize> = (0..l).collect();
    let reduced: Vec<usize> = (0..l).filter(|&i| i != source).collect();
    let ssr_full = node_ssr(dataset, target, &full, order)?;
    let ssr_reduced = node_ssr(dataset, target, &reduced, order)?;
    granger_value_from_ssr(ssr_full, ssr_reduced, target, source)
}

fn granger_value_from_ssr(
    ssr_full: f64,
    ssr_reduced: f64,
    target: usize,
    source: usize,
) -> Result<f64> {
    // Relative check: an exact interpolation leaves only rounding noise in
    // the full-model residual.
    if ssr_full <= 1e-12 * ssr_reduced.max(f64::MIN_POSITIVE) {
        return Err(Error::DegenerateFit(format!(
            "zero full-model residual variance for edge ({target}, {source})"
        )));
    }
    // Same normalization in both variances, so the sample size cancels.
    Ok((ssr_reduced / ssr_full).ln())
}

fn p_value_for(value: f64, n: usize, l: usize, m: usize, test: SignificanceTest) -> f64 {
    match test {
        SignificanceTest::FTest => {
            let df2 = (n - l * m) as f64;
            // var ratio exp(F_ji) = 1 + m/df2 * F-statistic
            let f_stat = (value.exp() - 1.0) * df2 / m as f64;
            if f_stat <= 0.0 {
                return 1.0;
            }
            let dist = FisherSnedecor::new(m as f64, df2).expect("positive dof");
            1.0 - dist.cdf(f_stat)
        }
        SignificanceTest::ChiSquared => {
            let stat = n as f64 * value;
            if stat <= 0.0 {
                return 1.0;
            }
            let dist = ChiSquared::new(m as f64).expect("positive dof");
            1.0 - dist.cdf(stat)
        }
    }
}

/// Granger values and p-values for every ordered pair, without thresholding.
pub fn granger_matrix(
    dataset: &TimeSeriesDataset,
    order: usize,
    test: SignificanceTest,
) -> Result<GrangerResult> {
    let l = dataset.node_count();
    let n = dataset.sample_count();
    if order * l >= n {
        return Err(Error::InsufficientData(format!(
            "order {order} with {l} nodes needs more than {n} samples"
        )));
    }
    let full: Vec<usize> = (0..l).collect();
    let mut values = DMatrix::from_element(l, l, f64::NAN);
    let mut p_values = DMatrix::from_element(l, l, f64::NAN);
    for target in 0..l {
        let ssr_full = node_ssr(dataset, target, &full, order)?;
        for source in 0..l {
            if source == target {
                continue;
            }
            let reduced: Vec<usize> = (0..l).filter(|&i| i != source).collect();
            let ssr_reduced = node_ssr(dataset, target, &reduced, order)?;
            let value = granger_value_from_ssr(ssr_full, ssr_reduced, target, source)?;
            values[(target, source)] = value;
            p_values[(target, source)] = p_value_for(value, n, l, order, test);
        }
    }
    Ok(GrangerResult {
        order,
        granger_values: values,
        p_values,
        test,
        alpha: None,
        fdr: None,
        estimate: None,
    })
}

/// Benjamini-Hochberg step-up rejection flags at level `alpha`.
pub fn benjamini_hochberg(p_values: &[f64], alpha: f64) -> Vec<bool> {
    let m = p_values.len();
    if m == 0 || alpha <= 0.0 {
        return vec![false; m];
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]));
    let mut cutoff_rank = 0;
    for (rank, &idx) in order.iter().enumerate() {
        if p_values[idx] <= (rank + 1) as f64 * alpha / m as f64 {
            cutoff_rank = rank + 1;
        }
    }
    let mut reject = vec![false; m];
    for &idx in &order[..cutoff_rank] {
        reject[idx] = true;
    }
    reject
}

/// Graph of edges surviving the significance threshold, optionally corrected
/// for multiple comparisons across all candidate edges.
pub fn threshold_graph(result: &GrangerResult, alpha: f64, fdr: bool) -> DirectedGraph {
    let l = result.node_count();
    let pairs: Vec<(usize, usize)> = (0..l)
        .flat_map(|j| (0..l).map(move |i| (j, i)))
        .filter(|&(j, i)| j != i)
        .collect();
    let p_values: Vec<f64> = pairs.iter().map(|&(j, i)| result.p_values[(j, i)]).collect();
    let reject = if fdr {
        benjamini_hochberg(&p_values, alpha)
    } else if alpha <= 0.0 {
        vec![false; p_values.len()]
    } else {
        p_values.iter().map(|&p| p <= alpha).collect()
    };
    let mut graph = DirectedGraph::empty(l);
    for (&(j, i), &r) in pairs.iter().zip(&reject) {
        if r {
            graph.add_edge(j, i).expect("off-diagonal pair");
        }
    }
    graph
}

/// Two-sided paired t-test on per-subject value pairs.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PairedTTest {
    pub t_statistic: f64,
    pub p_value: f64,
    /// Set when the differences have zero sample variance.
    pub degenerate: bool,
}

pub fn paired_ttest(values_a: &[f64], values_b: &[f64]) -> Result<PairedTTest> {
    let n = values_a.len();
    if n != values_b.len() || n < 2 {
        return Err(Error::InvalidArgument(
            "paired t-test needs two equal-length samples with n >= 2".into(),
        ));
    }
    let diffs: Vec<f64> = values_a.iter().zip(values_b).map(|(a, b)| a - b).collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if var == 0.0 {
        return Ok(if mean == 0.0 {
            PairedTTest {
                t_statistic: 0.0,
                p_value: 1.0,
                degenerate: true,
            }
        } else {
            PairedTTest {
                t_statistic: f64::INFINITY * mean.signum(),
                p_value: 0.0,
                degenerate: true,
            }
        });
    }
    let t = mean / (var / n as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("n >= 2");
    let p_value = 2.0 * (1.0 - dist.cdf(t.abs()));
    Ok(PairedTTest {
        t_statistic: t,
        p_value,
        degenerate: false,
    })
}
