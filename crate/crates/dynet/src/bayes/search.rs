//! Graph search over parent sets by maximum marginal likelihood.
//!
//! The marginal likelihood factorizes over target nodes, so the search runs
//! per node: greedily (forward additions, then backward removals) or
//! exhaustively over all parent subsets. With a flat prior over graphs the
//! maximum-marginal-likelihood graph is also the posterior mode.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bayes::em::{em_estimate, EmOptions, NodeBayesState};
use crate::bayes::evidence::{log_marginal_likelihood, NodeProblem};
use crate::bayes::kernel::EdgeKernelParams;
use crate::dataset::TimeSeriesDataset;
use crate::error::{Error, Result};
use crate::graph::DirectedGraph;
use crate::regression::build_regressors;

/// A move must beat the incumbent by more than this to be accepted.
const IMPROVEMENT_TOL: f64 = 1e-9;

/// Default AR order for a record of length `n`: the reference schedule for
/// the lengths used in the simulation study, a third of the record
/// (capped at 100) otherwise.
pub fn default_order(n: usize) -> usize {
    match n {
        50 => 50,
        300 | 2000 => 100,
        _ => (n / 3).clamp(1, 100),
    }
}

/// Graph estimate with the fitted per-node models that produced it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BayesGraphEstimate {
    pub estimate: DirectedGraph,
    /// One state per node, indexed by target.
    pub nodes: Vec<NodeBayesState>,
    /// Sum of the per-node log marginal likelihoods.
    pub total_log_marginal: f64,
}

struct TargetData {
    y: DVector<f64>,
    /// Stacked `A_i' y` over all sources, in source order.
    aty: DVector<f64>,
    yty: f64,
}

/// Regressors, their full Gram matrix and per-target products for one
/// dataset and order, shared across all parent subsets. Fitted subset
/// models are memoized by `(target, parents)`.
pub struct EvidenceCache {
    blocks: Vec<DMatrix<f64>>,
    gram: DMatrix<f64>,
    targets: Vec<TargetData>,
    order: usize,
    memo: HashMap<(usize, Vec<usize>), NodeBayesState>,
}

impl EvidenceCache {
    pub fn new(dataset: &TimeSeriesDataset, order: usize) -> Result<Self> {
        let l = dataset.node_count();
        let n = dataset.sample_count();
        if order == 0 || order > n {
            return Err(Error::InvalidArgument(format!(
                "order must lie in 1..={n}, got {order}"
            )));
        }
        let blocks: Vec<DMatrix<f64>> = (0..l)
            .map(|src| build_regressors(dataset, src, order))
            .collect::<Result<_>>()?;
        let mut gram = DMatrix::zeros(l * order, l * order);
        for i in 0..l {
            for j in i..l {
                let prod = blocks[i].transpose() * &blocks[j];
                gram.view_mut((i * order, j * order), (order, order))
                    .copy_from(&prod);
                if j > i {
                    gram.view_mut((j * order, i * order), (order, order))
                        .copy_from(&prod.transpose());
                }
            }
        }
        let targets = (0..l)
            .map(|t| {
                let y = dataset.node_signal(t);
                let mut aty = DVector::zeros(l * order);
                for (i, block) in blocks.iter().enumerate() {
                    aty.rows_mut(i * order, order)
                        .copy_from(&(block.transpose() * &y));
                }
                let yty = y.norm_squared();
                TargetData { y, aty, yty }
            })
            .collect();
        Ok(Self {
            blocks,
            gram,
            targets,
            order,
            memo: HashMap::new(),
        })
    }

    pub fn node_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn order(&self) -> usize {
        self.order
    }

    fn problem<'a>(&'a self, target: usize, parents: &[usize]) -> NodeProblem<'a> {
        let m = self.order;
        let d = parents.len() * m;
        let mut gram = DMatrix::zeros(d, d);
        let mut aty = DVector::zeros(d);
        let data = &self.targets[target];
        for (a, &pa) in parents.iter().enumerate() {
            aty.rows_mut(a * m, m).copy_from(&data.aty.rows(pa * m, m));
            for (b, &pb) in parents.iter().enumerate() {
                gram.view_mut((a * m, b * m), (m, m))
                    .copy_from(&self.gram.view((pa * m, pb * m), (m, m)));
            }
        }
        let blocks = parents.iter().map(|&p| &self.blocks[p]).collect();
        NodeProblem::from_parts(&data.y, blocks, gram, aty, data.yty, m)
    }

    /// EM-fitted state for one target and parent set, memoized. `parents`
    /// is canonicalized to ascending order.
    pub fn fit(
        &mut self,
        target: usize,
        parents: &[usize],
        options: &EmOptions,
    ) -> Result<NodeBayesState> {
        self.check(target, parents)?;
        let mut key_parents = parents.to_vec();
        key_parents.sort_unstable();
        let key = (target, key_parents);
        if let Some(state) = self.memo.get(&key) {
            return Ok(state.clone());
        }
        let problem = self.problem(target, &key.1);
        let state = em_estimate(&problem, target, &key.1, options)
            .map_err(|e| annotate(e, target, &key.1))?;
        self.memo.insert(key, state.clone());
        Ok(state)
    }

    /// Log marginal likelihood under fixed hyperparameters (no EM).
    pub fn log_marginal_fixed(
        &self,
        target: usize,
        parents: &[usize],
        params: &[EdgeKernelParams],
        sigma_sq: f64,
    ) -> Result<f64> {
        self.check(target, parents)?;
        let problem = self.problem(target, parents);
        log_marginal_likelihood(&problem, params, sigma_sq)
            .map_err(|e| annotate(e, target, parents))
    }

    fn check(&self, target: usize, parents: &[usize]) -> Result<()> {
        let l = self.node_count();
        if target >= l {
            return Err(Error::InvalidArgument(format!(
                "target {target} out of range for {l} nodes"
            )));
        }
        for &p in parents {
            if p >= l {
                return Err(Error::InvalidArgument(format!(
                    "parent {p} out of range for {l} nodes"
                )));
            }
            if p == target {
                return Err(Error::InvalidArgument(format!(
                    "node {target} cannot be its own parent"
                )));
            }
        }
        Ok(())
    }
}

fn annotate(err: Error, target: usize, parents: &[usize]) -> Error {
    let ctx = format!("target {target}, parents {parents:?}");
    match err {
        Error::NumericalFailure(m) => Error::NumericalFailure(format!("{ctx}: {m}")),
        Error::InternalConsistency(m) => Error::InternalConsistency(format!("{ctx}: {m}")),
        Error::DegenerateFit(m) => Error::DegenerateFit(format!("{ctx}: {m}")),
        other => other,
    }
}

/// Forward-then-backward greedy maximization of one node's marginal
/// likelihood over parent sets. Candidates are scanned in ascending source
/// order, so ties go to the lowest index.
fn greedy_node(
    cache: &mut EvidenceCache,
    target: usize,
    options: &EmOptions,
) -> Result<NodeBayesState> {
    let l = cache.node_count();
    let mut current: Vec<usize> = Vec::new();
    let mut state = cache.fit(target, &current, options)?;

    loop {
        let mut best: Option<(usize, NodeBayesState)> = None;
        for c in (0..l).filter(|&c| c != target && !current.contains(&c)) {
            let mut cand = current.clone();
            cand.push(c);
            let s = cache.fit(target, &cand, options)?;
            if best
                .as_ref()
                .is_none_or(|(_, b)| s.log_marginal > b.log_marginal)
            {
                best = Some((c, s));
            }
        }
        match best {
            Some((c, s)) if s.log_marginal > state.log_marginal + IMPROVEMENT_TOL => {
                current.push(c);
                current.sort_unstable();
                state = s;
            }
            _ => break,
        }
    }

    loop {
        let mut best: Option<(usize, NodeBayesState)> = None;
        for &r in &current {
            let cand: Vec<usize> = current.iter().copied().filter(|&p| p != r).collect();
            let s = cache.fit(target, &cand, options)?;
            if best
                .as_ref()
                .is_none_or(|(_, b)| s.log_marginal > b.log_marginal)
            {
                best = Some((r, s));
            }
        }
        match best {
            Some((r, s)) if s.log_marginal > state.log_marginal + IMPROVEMENT_TOL => {
                current.retain(|&p| p != r);
                state = s;
            }
            _ => break,
        }
    }
    Ok(state)
}

fn assemble(nodes: Vec<NodeBayesState>, node_count: usize) -> Result<BayesGraphEstimate> {
    let mut estimate = DirectedGraph::empty(node_count);
    let mut total = 0.0;
    for state in &nodes {
        for &p in &state.parents {
            estimate.add_edge(state.target, p)?;
        }
        total += state.log_marginal;
    }
    Ok(BayesGraphEstimate {
        estimate,
        nodes,
        total_log_marginal: total,
    })
}

pub fn greedy_search_with_options(
    dataset: &TimeSeriesDataset,
    order: usize,
    options: &EmOptions,
) -> Result<BayesGraphEstimate> {
    let mut cache = EvidenceCache::new(dataset, order)?;
    let nodes = (0..cache.node_count())
        .map(|t| greedy_node(&mut cache, t, options))
        .collect::<Result<Vec<_>>>()?;
    assemble(nodes, dataset.node_count())
}

/// Greedy maximum-marginal-likelihood graph estimate.
pub fn greedy_search(dataset: &TimeSeriesDataset, order: usize) -> Result<BayesGraphEstimate> {
    greedy_search_with_options(dataset, order, &EmOptions::default())
}

pub fn exhaustive_search_with_options(
    dataset: &TimeSeriesDataset,
    order: usize,
    options: &EmOptions,
) -> Result<BayesGraphEstimate> {
    let mut cache = EvidenceCache::new(dataset, order)?;
    let l = cache.node_count();
    let mut nodes = Vec::with_capacity(l);
    for target in 0..l {
        let others: Vec<usize> = (0..l).filter(|&i| i != target).collect();
        let mut best: Option<NodeBayesState> = None;
        for mask in 0u64..(1 << others.len()) {
            let parents: Vec<usize> = others
                .iter()
                .enumerate()
                .filter(|(bit, _)| mask & (1 << bit) != 0)
                .map(|(_, &p)| p)
                .collect();
            let s = cache.fit(target, &parents, options)?;
            if best
                .as_ref()
                .is_none_or(|b| s.log_marginal > b.log_marginal)
            {
                best = Some(s);
            }
        }
        nodes.push(best.expect("subset enumeration is nonempty"));
    }
    assemble(nodes, l)
}

/// Brute-force enumeration of every per-node parent subset; the global
/// optimum for the given order. Cost grows as `L * 2^(L-1)` EM fits.
pub fn exhaustive_search(dataset: &TimeSeriesDataset, order: usize) -> Result<BayesGraphEstimate> {
    exhaustive_search_with_options(dataset, order, &EmOptions::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{TransferFunction, TransferNetwork};
    use crate::simgen::{random_network_model, SimConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn white_noise(l: usize, n: usize, seed: u64) -> TimeSeriesDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = (0..l)
            .map(|_| (0..n).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        TimeSeriesDataset::from_rows(rows).unwrap()
    }

    #[test]
    fn default_order_schedule() {
        assert_eq!(default_order(50), 50);
        assert_eq!(default_order(300), 100);
        assert_eq!(default_order(2000), 100);
        assert_eq!(default_order(500), 100);
        assert_eq!(default_order(90), 30);
        assert_eq!(default_order(4), 1);
    }

    #[test]
    fn white_noise_spurious_edges_are_bounded() {
        // Empirical-Bayes model comparison accepts a spurious parent
        // whenever the fitted kernel scale finds an interior optimum, which
        // happens for roughly a third of null candidates; the per-candidate
        // false-positive rate stays well below half but not near zero.
        let mut fp = 0;
        let mut empty = 0;
        let runs = 20;
        for seed in 0..runs {
            let data = white_noise(3, 500, seed);
            let est = greedy_search(&data, 10).unwrap();
            let edges = est.estimate.edges().count();
            fp += edges;
            if edges == 0 {
                empty += 1;
            }
        }
        let candidates = runs as usize * 6;
        assert!(fp * 2 < candidates, "{fp} spurious edges in {candidates} candidates");
        assert!(empty >= 1, "no run produced an empty graph");
    }

    #[test]
    fn strong_single_edge_is_recovered() {
        let mut found = 0;
        let mut extras = 0;
        let runs = 20;
        for seed in 0..runs {
            let mut graph = DirectedGraph::empty(3);
            graph.add_edge(1, 0).unwrap();
            let tf = TransferFunction::new(vec![1.0, 0.5], vec![]).unwrap();
            let network = TransferNetwork::new(
                3,
                [((1, 0), tf.clone())].into(),
                vec![1.0, 0.05, 1.0],
                graph.clone(),
            )
            .unwrap();
            let data = network.simulate_with_burn_in(400, 500, seed).unwrap();
            let est = greedy_search(&data, 8).unwrap();
            if est.estimate.contains(1, 0) {
                found += 1;
                extras += est.estimate.edges().count() - 1;
            }
        }
        assert!(found * 20 >= runs * 19, "true edge found in {found}/{runs} runs");
        assert!(extras <= 2 * runs as usize, "{extras} spurious edges over {runs} runs");
    }

    #[test]
    fn total_is_sum_of_node_likelihoods() {
        let config = SimConfig::new(4, 9);
        let generated = random_network_model(&config).unwrap();
        let data = generated.network.simulate_with_burn_in(200, 500, 9).unwrap();
        let est = greedy_search(&data, 10).unwrap();
        let sum: f64 = est.nodes.iter().map(|s| s.log_marginal).sum();
        assert_eq!(est.total_log_marginal, sum);
        for (t, state) in est.nodes.iter().enumerate() {
            assert_eq!(state.target, t);
            assert_eq!(est.estimate.parents(t), state.parents);
        }
    }

    #[test]
    fn greedy_never_below_empty_graph() {
        let config = SimConfig::new(3, 21);
        let generated = random_network_model(&config).unwrap();
        let data = generated.network.simulate_with_burn_in(150, 500, 21).unwrap();
        let mut cache = EvidenceCache::new(&data, 8).unwrap();
        let options = EmOptions::default();
        for t in 0..3 {
            let empty = cache.fit(t, &[], &options).unwrap();
            let state = greedy_node(&mut cache, t, &options).unwrap();
            assert!(state.log_marginal >= empty.log_marginal);
        }
    }

    #[test]
    fn greedy_matches_exhaustive_on_small_instances() {
        let mut agree = 0;
        for seed in 0..5 {
            let config = SimConfig::new(3, 40 + seed);
            let generated = random_network_model(&config).unwrap();
            let data = generated.network.simulate_with_burn_in(200, 500, seed).unwrap();
            let greedy = greedy_search(&data, 10).unwrap();
            let exhaustive = exhaustive_search(&data, 10).unwrap();
            assert!(greedy.total_log_marginal <= exhaustive.total_log_marginal + 1e-9);
            if (greedy.total_log_marginal - exhaustive.total_log_marginal).abs() < 1e-6 {
                agree += 1;
            }
        }
        assert!(agree >= 4, "greedy matched exhaustive on {agree}/5 instances");
    }

    #[test]
    fn search_is_deterministic() {
        let data = white_noise(3, 300, 77);
        let a = greedy_search(&data, 10).unwrap();
        let b = greedy_search(&data, 10).unwrap();
        assert_eq!(a.estimate, b.estimate);
        assert_eq!(a.total_log_marginal, b.total_log_marginal);
    }

    #[test]
    fn estimate_serializes_to_json() {
        let data = white_noise(2, 100, 5);
        let est = greedy_search(&data, 5).unwrap();
        let json = serde_json::to_string(&est).unwrap();
        let back: BayesGraphEstimate = serde_json::from_str(&json).unwrap();
        assert_eq!(back.estimate, est.estimate);
        assert_eq!(back.total_log_marginal, est.total_log_marginal);
    }

    #[test]
    fn rejects_bad_order() {
        let data = white_noise(2, 50, 1);
        assert!(greedy_search(&data, 0).is_err());
        assert!(greedy_search(&data, 51).is_err());
    }
}
