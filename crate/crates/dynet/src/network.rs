//! Ground-truth network models: rational transfer functions in the delay
//! operator, interconnected through a directed graph, driven by per-node
//! Gaussian noise.
//!
//! A transfer `G(q) = (b_1 q^-1 + ... + b_z q^-z) / (1 + a_1 q^-1 + ... + a_p q^-p)`
//! is strictly delayed: the numerator has no constant term, so every path
//! through the network carries at least one sample of delay and the closed
//! loop is well posed.

use std::collections::BTreeMap;

use nalgebra::{Complex, DMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::TimeSeriesDataset;
use crate::error::{Error, Result};
use crate::graph::DirectedGraph;

/// Default number of start-up samples discarded before recording.
pub const DEFAULT_BURN_IN: usize = 500;
/// Stability margin: spectral radius must stay below `1 - STABILITY_TOL`.
pub const STABILITY_TOL: f64 = 1e-9;

/// Strictly delayed rational transfer function in `q^-1`.
///
/// `numerator[k]` is the coefficient of `q^-(k+1)`; `denominator[k]` is the
/// coefficient of `q^-(k+1)` in the monic denominator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferFunction {
    numerator: Vec<f64>,
    denominator: Vec<f64>,
}

impl TransferFunction {
    pub fn new(numerator: Vec<f64>, denominator: Vec<f64>) -> Result<Self> {
        if numerator.iter().chain(&denominator).any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument(
                "non-finite transfer coefficient".into(),
            ));
        }
        Ok(Self {
            numerator,
            denominator,
        })
    }

    /// FIR transfer with the given delayed numerator coefficients.
    pub fn fir(numerator: Vec<f64>) -> Result<Self> {
        Self::new(numerator, Vec::new())
    }

    pub fn numerator(&self) -> &[f64] {
        &self.numerator
    }

    pub fn denominator(&self) -> &[f64] {
        &self.denominator
    }

    pub fn is_zero(&self) -> bool {
        self.numerator.iter().all(|&b| b == 0.0)
    }

    /// State dimension of the companion realization.
    pub fn state_dim(&self) -> usize {
        self.numerator.len().max(self.denominator.len())
    }

    /// Magnitudes of the denominator roots (poles).
    pub fn pole_magnitudes(&self) -> Vec<f64> {
        let p = self.denominator.len();
        if p == 0 {
            return Vec::new();
        }
        let mut companion = DMatrix::zeros(p, p);
        for (k, &a) in self.denominator.iter().enumerate() {
            companion[(0, k)] = -a;
        }
        for k in 1..p {
            companion[(k, k - 1)] = 1.0;
        }
        companion
            .complex_eigenvalues()
            .iter()
            .map(|c| c.norm())
            .collect()
    }

    /// All poles strictly inside the unit circle.
    pub fn is_stable(&self) -> bool {
        self.pole_magnitudes()
            .iter()
            .all(|&m| m < 1.0 - STABILITY_TOL)
    }

    /// Frequency response at normalized angular frequency `omega` in [0, pi].
    pub fn frequency_response(&self, omega: f64) -> Complex<f64> {
        let z_inv = Complex::new(0.0, -omega).exp();
        let mut num = Complex::new(0.0, 0.0);
        let mut zk = z_inv;
        for &b in &self.numerator {
            num += zk * b;
            zk *= z_inv;
        }
        let mut den = Complex::new(1.0, 0.0);
        let mut zk = z_inv;
        for &a in &self.denominator {
            den += zk * a;
            zk *= z_inv;
        }
        num / den
    }

    /// Largest response magnitude over a uniform frequency grid on [0, pi].
    pub fn peak_gain(&self, grid_points: usize) -> f64 {
        (0..grid_points)
            .map(|k| {
                let omega = std::f64::consts::PI * k as f64 / (grid_points - 1) as f64;
                self.frequency_response(omega).norm()
            })
            .fold(0.0, f64::max)
    }

    /// Companion (controller canonical) realization `(A, B, C)` with `D = 0`.
    fn state_space(&self) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let n = self.state_dim();
        let mut a = DMatrix::zeros(n, n);
        for k in 0..self.denominator.len() {
            a[(0, k)] = -self.denominator[k];
        }
        for k in 1..n {
            a[(k, k - 1)] = 1.0;
        }
        let mut b = DMatrix::zeros(n, 1);
        b[(0, 0)] = 1.0;
        let mut c = DMatrix::zeros(1, n);
        for k in 0..self.numerator.len() {
            c[(0, k)] = self.numerator[k];
        }
        (a, b, c)
    }

    /// Scales the numerator in place.
    pub fn scale_numerator(&mut self, factor: f64) {
        for b in &mut self.numerator {
            *b *= factor;
        }
    }
}

/// A ground-truth simulation model: per-edge transfers plus per-node noise.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferNetwork {
    node_count: usize,
    transfers: BTreeMap<(usize, usize), TransferFunction>,
    noise_variances: Vec<f64>,
    ground_truth: DirectedGraph,
}

impl TransferNetwork {
    /// Builds a network. The transfer map keys must match the ground-truth
    /// edge set exactly, every transfer must be individually stable and
    /// nonzero, and noise variances must be finite and nonnegative.
    pub fn new(
        node_count: usize,
        transfers: BTreeMap<(usize, usize), TransferFunction>,
        noise_variances: Vec<f64>,
        ground_truth: DirectedGraph,
    ) -> Result<Self> {
        if ground_truth.node_count() != node_count {
            return Err(Error::InvalidArgument(format!(
                "ground truth has {} nodes, expected {node_count}",
                ground_truth.node_count()
            )));
        }
        if noise_variances.len() != node_count {
            return Err(Error::InvalidArgument(format!(
                "{} noise variances for {node_count} nodes",
                noise_variances.len()
            )));
        }
        if noise_variances.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument(
                "noise variances must be finite and nonnegative".into(),
            ));
        }
        for (&(j, i), tf) in &transfers {
            if !ground_truth.contains(j, i) {
                return Err(Error::InvalidArgument(format!(
                    "transfer ({j}, {i}) has no matching ground-truth edge"
                )));
            }
            if tf.is_zero() {
                return Err(Error::InvalidArgument(format!(
                    "transfer ({j}, {i}) is identically zero but its edge is present"
                )));
            }
            if !tf.is_stable() {
                return Err(Error::UnstableModel(format!(
                    "transfer ({j}, {i}) has a pole on or outside the unit circle"
                )));
            }
        }
        for (j, i) in ground_truth.edges() {
            if !transfers.contains_key(&(j, i)) {
                return Err(Error::InvalidArgument(format!(
                    "ground-truth edge ({j}, {i}) has no transfer"
                )));
            }
        }
        Ok(Self {
            node_count,
            transfers,
            noise_variances,
            ground_truth,
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn ground_truth(&self) -> &DirectedGraph {
        &self.ground_truth
    }

    pub fn noise_variances(&self) -> &[f64] {
        &self.noise_variances
    }

    pub fn transfer(&self, target: usize, source: usize) -> Option<&TransferFunction> {
        self.transfers.get(&(target, source))
    }

    /// State matrix of the interconnected system.
    ///
    /// Each edge transfer contributes a companion block; the feedback
    /// `w = G(q) w + eta` couples the blocks through the edge outputs feeding
    /// the source signals of downstream edges.
    pub fn closed_loop_state_matrix(&self) -> DMatrix<f64> {
        let edges: Vec<_> = self.transfers.iter().collect();
        let dims: Vec<usize> = edges.iter().map(|(_, tf)| tf.state_dim()).collect();
        let offsets: Vec<usize> = dims
            .iter()
            .scan(0, |acc, &d| {
                let o = *acc;
                *acc += d;
                Some(o)
            })
            .collect();
        let total: usize = dims.iter().sum();
        let mut a_cl = DMatrix::zeros(total, total);
        let realizations: Vec<_> = edges.iter().map(|(_, tf)| tf.state_space()).collect();
        for (e, (&(_, _), _)) in edges.iter().enumerate() {
            let (a, _, _) = &realizations[e];
            a_cl.view_mut((offsets[e], offsets[e]), (dims[e], dims[e]))
                .copy_from(a);
        }
        // x_e(t+1) += B_e * w_src(e)(t), where w_i(t) = sum over edges into i
        // of C_e' x_e'(t) (noise enters additively and does not affect A).
        for (e, (&(_, src), _)) in edges.iter().enumerate() {
            let (_, b, _) = &realizations[e];
            for (e2, (&(tgt2, _), _)) in edges.iter().enumerate() {
                if tgt2 == src {
                    let (_, _, c2) = &realizations[e2];
                    let coupling = b * c2;
                    let mut view = a_cl.view_mut((offsets[e], offsets[e2]), (dims[e], dims[e2]));
                    view += coupling;
                }
            }
        }
        a_cl
    }

    /// Spectral radius of the closed-loop state matrix.
    pub fn spectral_radius(&self) -> f64 {
        let a = self.closed_loop_state_matrix();
        if a.nrows() == 0 {
            return 0.0;
        }
        a.complex_eigenvalues()
            .iter()
            .map(|c| c.norm())
            .fold(0.0, f64::max)
    }

    /// True iff all closed-loop eigenvalues lie strictly inside the unit
    /// circle with margin `STABILITY_TOL`.
    pub fn is_stable(&self) -> bool {
        self.spectral_radius() < 1.0 - STABILITY_TOL
    }

    /// Simulates `n_samples` of the network with the default burn-in.
    pub fn simulate(&self, n_samples: usize, seed: u64) -> Result<TimeSeriesDataset> {
        self.simulate_with_burn_in(n_samples, DEFAULT_BURN_IN, seed)
    }

    /// Iterates the network equations from zero initial conditions, drawing
    /// i.i.d. Gaussian noise per node, discarding `burn_in` start-up samples.
    /// Identical `(model, n_samples, burn_in, seed)` give bit-identical data.
    pub fn simulate_with_burn_in(
        &self,
        n_samples: usize,
        burn_in: usize,
        seed: u64,
    ) -> Result<TimeSeriesDataset> {
        if n_samples == 0 {
            return Err(Error::InvalidArgument("n_samples must be positive".into()));
        }
        if !self.is_stable() {
            return Err(Error::UnstableModel(format!(
                "closed-loop spectral radius {:.6} >= 1",
                self.spectral_radius()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sigmas: Vec<f64> = self.noise_variances.iter().map(|v| v.sqrt()).collect();

        let edges: Vec<(&(usize, usize), &TransferFunction)> = self.transfers.iter().collect();
        let realizations: Vec<_> = edges.iter().map(|(_, tf)| tf.state_space()).collect();
        let mut states: Vec<DMatrix<f64>> = realizations
            .iter()
            .map(|(a, _, _)| DMatrix::zeros(a.nrows(), 1))
            .collect();

        let l = self.node_count;
        let mut data = DMatrix::zeros(l, n_samples);
        let mut w = vec![0.0f64; l];
        for t in 0..burn_in + n_samples {
            for value in w.iter_mut() {
                *value = 0.0;
            }
            for (e, (&(tgt, _), _)) in edges.iter().enumerate() {
                let (_, _, c) = &realizations[e];
                w[tgt] += (c * &states[e])[(0, 0)];
            }
            for (j, value) in w.iter_mut().enumerate() {
                let noise: f64 = rng.sample(StandardNormal);
                *value += sigmas[j] * noise;
                if !value.is_finite() || value.abs() > 1e12 {
                    return Err(Error::SimulationDiverged { sample: t });
                }
            }
            for (e, (&(_, src), _)) in edges.iter().enumerate() {
                let (a, b, _) = &realizations[e];
                states[e] = a * &states[e] + b * w[src];
            }
            if t >= burn_in {
                for j in 0..l {
                    data[(j, t - burn_in)] = w[j];
                }
            }
        }
        let labels = (1..=l).map(|j| format!("w{j}")).collect();
        TimeSeriesDataset::new(labels, data)
    }
}

/// Serializable form of [`TransferNetwork`]; edge keys become explicit fields
/// so the JSON stays readable.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct NetworkRepr {
    node_count: usize,
    noise_variances: Vec<f64>,
    edges: Vec<EdgeRepr>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EdgeRepr {
    target: usize,
    source: usize,
    transfer: TransferFunction,
}

impl Serialize for TransferNetwork {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let repr = NetworkRepr {
            node_count: self.node_count,
            noise_variances: self.noise_variances.clone(),
            edges: self
                .transfers
                .iter()
                .map(|(&(target, source), transfer)| EdgeRepr {
                    target,
                    source,
                    transfer: transfer.clone(),
                })
                .collect(),
        };
        repr.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for TransferNetwork {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let repr = NetworkRepr::deserialize(deserializer)?;
        let mut graph = DirectedGraph::empty(repr.node_count);
        let mut transfers = BTreeMap::new();
        for edge in repr.edges {
            graph
                .add_edge(edge.target, edge.source)
                .map_err(serde::de::Error::custom)?;
            transfers.insert((edge.target, edge.source), edge.transfer);
        }
        TransferNetwork::new(repr.node_count, transfers, repr.noise_variances, graph)
            .map_err(serde::de::Error::custom)
    }
}
