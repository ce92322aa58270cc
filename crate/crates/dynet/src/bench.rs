//! TPR/FPR benchmark harness comparing the Bayesian and Granger estimators
//! over grids of data lengths, network sizes, and significance levels.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bayes::{default_order, greedy_search};
use crate::error::{Error, Result};
use crate::granger::{granger_matrix, threshold_graph, SignificanceTest};
use crate::graph::DirectedGraph;
use crate::simgen::{random_network_model, SimConfig};

/// Significance grid from the simulation study: 0.005, then 0.05 to 0.95.
pub fn default_alpha_grid() -> Vec<f64> {
    let mut grid = vec![0.005];
    for k in 0..10 {
        grid.push(0.05 + 0.1 * k as f64);
    }
    grid
}

/// Cells with more than this failure fraction are flagged invalid.
pub const MAX_FAILURE_FRACTION: f64 = 0.2;

/// Edge-detection rates of an estimate against ground truth, over the
/// `L(L-1)` candidate directed edges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeRates {
    pub tpr: f64,
    pub fpr: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub positives: usize,
    pub negatives: usize,
}

/// `TPR = TP/P`, `FPR = FP/F` with `F = L(L-1) - P`; truths with no edges
/// or no non-edges are rejected because one of the rates is undefined.
pub fn evaluate_estimate(estimate: &DirectedGraph, truth: &DirectedGraph) -> Result<EdgeRates> {
    if estimate.node_count() != truth.node_count() {
        return Err(Error::InvalidArgument(format!(
            "estimate has {} nodes, truth has {}",
            estimate.node_count(),
            truth.node_count()
        )));
    }
    let positives = truth.edge_count();
    let negatives = truth.candidate_edge_count() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::DegenerateTruth(format!(
            "{} true edges and {} true non-edges; rates undefined",
            positives, negatives
        )));
    }
    let true_positives = estimate.intersection_count(truth);
    let false_positives = estimate.edge_count() - true_positives;
    Ok(EdgeRates {
        tpr: true_positives as f64 / positives as f64,
        fpr: false_positives as f64 / negatives as f64,
        true_positives,
        false_positives,
        positives,
        negatives,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchConfig {
    pub data_lengths: Vec<usize>,
    pub node_counts: Vec<usize>,
    pub model_count: usize,
    #[serde(default = "default_alpha_grid")]
    pub alpha_grid: Vec<f64>,
    /// Template for random models; `node_count` and `seed` are overridden
    /// per cell and per model.
    pub sim: SimConfig,
    /// Bayesian model order per data length (parallel to `data_lengths`);
    /// defaults to [`default_order`] per length.
    #[serde(default)]
    pub orders: Option<Vec<usize>>,
    /// Cap on the AIC-selected Granger order; defaults to what the data
    /// length supports.
    #[serde(default)]
    pub granger_max_order: Option<usize>,
    pub master_seed: u64,
}

impl BenchConfig {
    /// Desk-scale defaults: the full grid with 20 models per cell.
    pub fn desk(master_seed: u64) -> Self {
        Self {
            data_lengths: vec![50, 300, 2000],
            node_counts: vec![6],
            model_count: 20,
            alpha_grid: default_alpha_grid(),
            sim: SimConfig::new(6, 0),
            orders: None,
            granger_max_order: None,
            master_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.data_lengths.is_empty()
            || self.node_counts.is_empty()
            || self.alpha_grid.is_empty()
        {
            return Err(Error::InvalidArgument(
                "data lengths, node counts, and alpha grid must be nonempty".into(),
            ));
        }
        if self.model_count == 0 {
            return Err(Error::InvalidArgument("model_count must be >= 1".into()));
        }
        if self.alpha_grid.iter().any(|&a| !(0.0..1.0).contains(&a) || a <= 0.0) {
            return Err(Error::InvalidArgument("alphas must lie in (0, 1)".into()));
        }
        if let Some(orders) = &self.orders {
            if orders.len() != self.data_lengths.len() {
                return Err(Error::InvalidArgument(format!(
                    "{} orders for {} data lengths",
                    orders.len(),
                    self.data_lengths.len()
                )));
            }
        }
        Ok(())
    }

    fn order_for(&self, length_index: usize) -> usize {
        match &self.orders {
            Some(orders) => orders[length_index],
            None => default_order(self.data_lengths[length_index]),
        }
    }
}

/// One ROC point: a method within a cell, at one alpha for Granger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocRecord {
    pub method: String,
    pub node_count: usize,
    pub data_length: usize,
    pub alpha: Option<f64>,
    pub mean_tpr: f64,
    pub mean_fpr: f64,
    pub tprs: Vec<f64>,
    pub fprs: Vec<f64>,
    pub seeds: Vec<u64>,
    pub n_models: usize,
    pub n_failed: usize,
    /// More than 20% of the cell's models failed.
    pub invalid: bool,
}

/// SplitMix64 finalizer: the documented counter-based seed split. Model `k`
/// of cell `c` draws stream `2c * 2^32 + 2k` for the network and `+1` for
/// the noise realization.
fn derive_seed(master: u64, counter: u64) -> u64 {
    let mut z = master
        .wrapping_add(counter.wrapping_mul(0x9e3779b97f4a7c15))
        .wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

struct ModelOutcome {
    seed: u64,
    result: Result<ModelRates>,
}

struct ModelRates {
    bayes: EdgeRates,
    granger: Vec<EdgeRates>,
}

fn run_model(
    config: &BenchConfig,
    l: usize,
    n: usize,
    order: usize,
    model_seed: u64,
    data_seed: u64,
) -> Result<ModelRates> {
    let mut sim = config.sim.clone();
    sim.node_count = l;
    sim.seed = model_seed;
    let model = random_network_model(&sim)?;
    let truth = model.network.ground_truth();
    // Degenerate truths fail the whole model up front.
    let probe = DirectedGraph::empty(l);
    evaluate_estimate(&probe, truth)?;
    let data = model.network.simulate(n, data_seed)?;

    let estimate = greedy_search(&data, order)?;
    let bayes = evaluate_estimate(&estimate.estimate, truth)?;

    let granger_order = config
        .granger_max_order
        .unwrap_or_else(|| (n / (2 * l)).clamp(1, 10));
    let granger_order = crate::granger::select_order_aic(&data, granger_order)?;
    let result = granger_matrix(&data, granger_order, SignificanceTest::FTest)?;
    let granger = config
        .alpha_grid
        .iter()
        .map(|&alpha| evaluate_estimate(&threshold_graph(&result, alpha, true), truth))
        .collect::<Result<Vec<_>>>()?;
    Ok(ModelRates { bayes, granger })
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Runs the full sweep. Each (node count, data length) cell simulates
/// `model_count` random networks, estimated once by greedy Bayesian search
/// and by FDR-thresholded Granger tests at every alpha. Failed models are
/// excluded from the means and counted. Fully deterministic in the master
/// seed; models run in parallel but aggregation is index-ordered.
pub fn run_benchmark(config: &BenchConfig) -> Result<Vec<RocRecord>> {
    config.validate()?;
    let mut records = Vec::new();
    let mut cell = 0u64;
    for &l in &config.node_counts {
        for (length_index, &n) in config.data_lengths.iter().enumerate() {
            let order = config.order_for(length_index);
            let outcomes: Vec<ModelOutcome> = (0..config.model_count as u64)
                .into_par_iter()
                .map(|k| {
                    let model_seed = derive_seed(config.master_seed, (cell << 32) | (2 * k));
                    let data_seed =
                        derive_seed(config.master_seed, (cell << 32) | (2 * k + 1));
                    ModelOutcome {
                        seed: model_seed,
                        result: run_model(config, l, n, order, model_seed, data_seed),
                    }
                })
                .collect();
            let seeds: Vec<u64> = outcomes.iter().map(|o| o.seed).collect();
            let ok: Vec<&ModelRates> =
                outcomes.iter().filter_map(|o| o.result.as_ref().ok()).collect();
            let n_failed = outcomes.len() - ok.len();
            let invalid =
                (n_failed as f64) > MAX_FAILURE_FRACTION * config.model_count as f64;

            let make = |method: &str, alpha: Option<f64>, rates: Vec<EdgeRates>| RocRecord {
                method: method.into(),
                node_count: l,
                data_length: n,
                alpha,
                mean_tpr: mean(&rates.iter().map(|r| r.tpr).collect::<Vec<_>>()),
                mean_fpr: mean(&rates.iter().map(|r| r.fpr).collect::<Vec<_>>()),
                tprs: rates.iter().map(|r| r.tpr).collect(),
                fprs: rates.iter().map(|r| r.fpr).collect(),
                seeds: seeds.clone(),
                n_models: ok.len(),
                n_failed,
                invalid,
            };
            records.push(make(
                "bayes",
                None,
                ok.iter().map(|m| m.bayes).collect(),
            ));
            for (a_idx, &alpha) in config.alpha_grid.iter().enumerate() {
                records.push(make(
                    "granger",
                    Some(alpha),
                    ok.iter().map(|m| m.granger[a_idx]).collect(),
                ));
            }
            cell += 1;
        }
    }
    Ok(records)
}

/// Plot-ready CSV table.
pub fn records_to_csv_writer<W: std::io::Write>(
    records: &[RocRecord],
    writer: W,
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["method", "L", "N", "alpha", "mean_tpr", "mean_fpr", "n_models", "n_failed"])?;
    for r in records {
        wtr.write_record(&[
            r.method.clone(),
            r.node_count.to_string(),
            r.data_length.to_string(),
            r.alpha.map_or(String::new(), |a| a.to_string()),
            format!("{:.6}", r.mean_tpr),
            format!("{:.6}", r.mean_fpr),
            r.n_models.to_string(),
            r.n_failed.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> BenchConfig {
        BenchConfig {
            data_lengths: vec![150],
            node_counts: vec![3],
            model_count: 3,
            alpha_grid: vec![0.05, 0.25, 0.75],
            sim: SimConfig::new(3, 0),
            orders: Some(vec![5]),
            granger_max_order: Some(4),
            master_seed: 42,
        }
    }

    #[test]
    fn evaluate_estimate_definitions() {
        let truth = DirectedGraph::from_edges(6, [(1, 0), (2, 1), (3, 2), (4, 3), (5, 4), (0, 5)])
            .unwrap();
        let rates = evaluate_estimate(&truth, &truth).unwrap();
        assert_eq!((rates.tpr, rates.fpr), (1.0, 0.0));

        let rates = evaluate_estimate(&DirectedGraph::empty(6), &truth).unwrap();
        assert_eq!((rates.tpr, rates.fpr), (0.0, 0.0));

        // 3 of 6 true edges plus 6 spurious ones: TPR 0.5, FPR 6/24.
        let estimate = DirectedGraph::from_edges(
            6,
            [(1, 0), (2, 1), (3, 2), (0, 1), (0, 2), (0, 3), (0, 4), (1, 2), (1, 3)],
        )
        .unwrap();
        let rates = evaluate_estimate(&estimate, &truth).unwrap();
        assert_eq!(rates.true_positives, 3);
        assert_eq!(rates.false_positives, 6);
        assert_eq!(rates.positives, 6);
        assert_eq!(rates.negatives, 24);
        assert_eq!((rates.tpr, rates.fpr), (0.5, 0.25));
    }

    #[test]
    fn degenerate_truths_are_rejected() {
        let empty = DirectedGraph::empty(3);
        let full = DirectedGraph::complete(3);
        assert!(matches!(
            evaluate_estimate(&empty, &empty),
            Err(Error::DegenerateTruth(_))
        ));
        assert!(matches!(
            evaluate_estimate(&empty, &full),
            Err(Error::DegenerateTruth(_))
        ));
        assert!(evaluate_estimate(&full, &empty.clone()).is_err());
        let err = evaluate_estimate(&DirectedGraph::empty(2), &DirectedGraph::empty(3));
        assert!(matches!(err, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn record_count_and_means() {
        let records = run_benchmark(&small_config()).unwrap();
        // 1 Bayesian + |alpha grid| Granger records per cell.
        assert_eq!(records.len(), 1 + 3);
        assert_eq!(records[0].method, "bayes");
        assert!(records[1..].iter().all(|r| r.method == "granger"));
        for r in &records {
            assert_eq!(r.tprs.len(), r.n_models);
            assert!((r.mean_tpr - mean(&r.tprs)).abs() < 1e-15);
            assert!((r.mean_fpr - mean(&r.fprs)).abs() < 1e-15);
            assert!(r.tprs.iter().chain(&r.fprs).all(|v| (0.0..=1.0).contains(v)));
            assert_eq!(r.seeds.len(), 3);
        }
    }

    #[test]
    fn benchmark_is_deterministic() {
        let a = run_benchmark(&small_config()).unwrap();
        let b = run_benchmark(&small_config()).unwrap();
        assert_eq!(
            serde_json::to_vec(&a).unwrap(),
            serde_json::to_vec(&b).unwrap()
        );
    }

    #[test]
    fn granger_roc_is_monotone_in_alpha() {
        // Fixed p-values: growing alpha can only add edges.
        let sim = SimConfig::new(4, 9);
        let model = random_network_model(&sim).unwrap();
        let data = model.network.simulate(300, 10).unwrap();
        let result = granger_matrix(&data, 3, SignificanceTest::FTest).unwrap();
        let alphas = default_alpha_grid();
        let mut prev: Option<DirectedGraph> = None;
        for &alpha in &alphas {
            let graph = threshold_graph(&result, alpha, true);
            if let Some(p) = &prev {
                for (j, i) in p.edges() {
                    assert!(graph.contains(j, i), "edge lost as alpha grew");
                }
                assert!(graph.edge_count() >= p.edge_count());
            }
            prev = Some(graph);
        }
    }

    #[test]
    fn edge_free_models_flag_the_cell() {
        let mut config = small_config();
        config.sim.edge_probability = 0.0;
        let records = run_benchmark(&config).unwrap();
        for r in &records {
            assert_eq!(r.n_models, 0);
            assert_eq!(r.n_failed, 3);
            assert!(r.invalid);
            assert!(r.mean_tpr.is_nan());
        }
    }

    #[test]
    fn csv_table_layout() {
        let records = run_benchmark(&small_config()).unwrap();
        let mut buffer = Vec::new();
        records_to_csv_writer(&records, &mut buffer).unwrap();
        let text = String::from_utf8(buffer).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "method,L,N,alpha,mean_tpr,mean_fpr,n_models,n_failed"
        );
        assert_eq!(lines.count(), records.len());
        assert!(text.contains("bayes,3,150,,"));
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let mut c = small_config();
        c.model_count = 0;
        assert!(run_benchmark(&c).is_err());
        let mut c = small_config();
        c.alpha_grid = vec![1.5];
        assert!(run_benchmark(&c).is_err());
        let mut c = small_config();
        c.orders = Some(vec![5, 6]);
        assert!(run_benchmark(&c).is_err());
    }

    #[test]
    fn alpha_grid_matches_protocol() {
        let grid = default_alpha_grid();
        assert_eq!(grid.len(), 11);
        assert_eq!(grid[0], 0.005);
        assert_eq!(grid[1], 0.05);
        assert!((grid[10] - 0.95).abs() < 1e-12);
    }
}
