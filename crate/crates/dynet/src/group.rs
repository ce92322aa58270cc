//! Group-level Bayesian hypothesis test for the presence of a connection.
//!
//! For one subject, the evidence for edge `e_ji` marginalizes the node-j
//! marginal likelihood over subsets of the other candidate parents — the
//! per-node decomposition means all other nodes' terms are a shared constant
//! that cancels in the evidence ratio. Subject evidences multiply into a
//! group Bayes factor; repeated sessions feed a change-detection protocol.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bayes::{
    default_order, greedy_search_with_options, BayesGraphEstimate, EdgeKernelParams, EmOptions,
    EvidenceCache,
};
use crate::dataset::TimeSeriesDataset;
use crate::error::{Error, Result};

/// Default candidate-pool cap: 2^8 subsets per hypothesis.
pub const DEFAULT_POOL_SIZE: usize = 8;
/// Exact enumeration refuses pools larger than this.
pub const EXACT_POOL_LIMIT: usize = 20;
/// Default selection-frequency delta for screening candidate edges.
pub const DEFAULT_SCREENING_THRESHOLD: usize = 2;

/// How the subgraph marginalization is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EvidenceMode {
    /// Enumerate every subset of all other parents, refitting
    /// hyperparameters per subset.
    Exact,
    /// Restrict the pool to the top-`pool_size` other parents ranked by
    /// single-parent marginal likelihood. With `reuse_hyperparameters`,
    /// hyperparameters are fitted once under the full candidate pool and
    /// subsets are scored without refitting — much faster, less faithful.
    Capped {
        pool_size: usize,
        reuse_hyperparameters: bool,
    },
}

impl Default for EvidenceMode {
    fn default() -> Self {
        EvidenceMode::Capped {
            pool_size: DEFAULT_POOL_SIZE,
            reuse_hyperparameters: false,
        }
    }
}

/// One subject's conditional evidences for an edge.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubjectEvidence {
    pub subject: String,
    /// (target, source).
    pub edge: (usize, usize),
    /// `log p(D | e present)`, up to the shared per-subject constant.
    pub log_with: f64,
    /// `log p(D | e absent)`, up to the same constant.
    pub log_without: f64,
    /// Total subgraphs marginalized over (both hypotheses).
    pub subgraph_count: usize,
    pub exact: bool,
}

impl SubjectEvidence {
    pub fn log_ratio(&self) -> f64 {
        self.log_with - self.log_without
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Hypothesis {
    /// Connection absent in the group.
    H0,
    /// Connection present in the group.
    H1,
}

impl std::fmt::Display for Hypothesis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Hypothesis::H0 => write!(f, "H0"),
            Hypothesis::H1 => write!(f, "H1"),
        }
    }
}

/// Kass–Raftery interpretation of `|BF|`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EvidenceStrength {
    Weak,
    Positive,
    Strong,
    VeryStrong,
}

impl EvidenceStrength {
    pub fn from_bayes_factor(bf: f64) -> Self {
        let b = bf.abs();
        if b <= 2.0 {
            EvidenceStrength::Weak
        } else if b <= 6.0 {
            EvidenceStrength::Positive
        } else if b <= 10.0 {
            EvidenceStrength::Strong
        } else {
            EvidenceStrength::VeryStrong
        }
    }
}

/// Group-level result for one edge in one session.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupEvidence {
    pub edge: (usize, usize),
    pub session: Option<String>,
    /// `BF = 2 log p(D|H1)/p(D|H0)`; positive favors presence.
    pub bayes_factor: f64,
    pub optimal: Hypothesis,
    /// Posterior probability of the optimal hypothesis (equal priors).
    pub posterior: f64,
    pub strength: EvidenceStrength,
    pub subjects: Vec<SubjectEvidence>,
}

impl GroupEvidence {
    /// Posterior probability of H1 (presence), `1 / (1 + exp(-BF/2))`.
    pub fn posterior_h1(&self) -> f64 {
        logistic(self.bayes_factor / 2.0)
    }
}

fn logistic(x: f64) -> f64 {
    // Computed from the negative branch so large |x| cannot overflow.
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Per-dataset evidence engine: shares EM fits and fixed-parameter subset
/// scores across all edges of the same recording.
pub struct SubjectAnalysis {
    subject: String,
    cache: EvidenceCache,
    options: EmOptions,
    /// Subset scores under reused hyperparameters, keyed by
    /// (target, fitted pool, subset) — the pool identifies the parameters.
    fixed_memo: HashMap<(usize, Vec<usize>, Vec<usize>), f64>,
}

impl SubjectAnalysis {
    pub fn new(
        subject: impl Into<String>,
        dataset: &TimeSeriesDataset,
        order: usize,
        options: EmOptions,
    ) -> Result<Self> {
        Ok(Self {
            subject: subject.into(),
            cache: EvidenceCache::new(dataset, order)?,
            options,
            fixed_memo: HashMap::new(),
        })
    }

    /// Candidate parent pool for edge `(target, source)` under `mode`.
    fn pool(&mut self, target: usize, source: usize, mode: EvidenceMode) -> Result<Vec<usize>> {
        let l = self.cache.node_count();
        let others: Vec<usize> = (0..l).filter(|&c| c != target && c != source).collect();
        match mode {
            EvidenceMode::Exact => {
                if others.len() > EXACT_POOL_LIMIT {
                    return Err(Error::InvalidArgument(format!(
                        "exact marginalization over {} parents is intractable; \
                         use the capped mode",
                        others.len()
                    )));
                }
                Ok(others)
            }
            EvidenceMode::Capped { pool_size, .. } => {
                if others.len() <= pool_size {
                    return Ok(others);
                }
                let mut ranked: Vec<(usize, f64)> = others
                    .iter()
                    .map(|&c| {
                        self.cache
                            .fit(target, &[c], &self.options)
                            .map(|s| (c, s.log_marginal))
                    })
                    .collect::<Result<_>>()?;
                ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
                let mut pool: Vec<usize> = ranked[..pool_size].iter().map(|r| r.0).collect();
                pool.sort_unstable();
                Ok(pool)
            }
        }
    }

    fn score(
        &mut self,
        target: usize,
        parents: &[usize],
        fixed: Option<&(Vec<usize>, HashMap<usize, EdgeKernelParams>, f64)>,
    ) -> Result<f64> {
        match fixed {
            None => Ok(self.cache.fit(target, parents, &self.options)?.log_marginal),
            Some((full, map, sigma_sq)) => {
                let key = (target, full.clone(), parents.to_vec());
                if let Some(&ll) = self.fixed_memo.get(&key) {
                    return Ok(ll);
                }
                let params: Vec<EdgeKernelParams> =
                    parents.iter().map(|p| map[p]).collect();
                let ll = self
                    .cache
                    .log_marginal_fixed(target, parents, &params, *sigma_sq)?;
                self.fixed_memo.insert(key, ll);
                Ok(ll)
            }
        }
    }

    /// Conditional evidences `log p(D|e)` and `log p(D|not e)` for one edge,
    /// marginalizing over parent subsets with a uniform subgraph prior.
    pub fn edge_evidence(
        &mut self,
        edge: (usize, usize),
        mode: EvidenceMode,
    ) -> Result<SubjectEvidence> {
        let (target, source) = edge;
        let l = self.cache.node_count();
        if target == source || target >= l || source >= l {
            return Err(Error::InvalidArgument(format!(
                "invalid edge ({target}, {source}) for {l} nodes"
            )));
        }
        let pool = self.pool(target, source, mode)?;
        let reuse = matches!(
            mode,
            EvidenceMode::Capped {
                reuse_hyperparameters: true,
                ..
            }
        );
        let fixed = if reuse {
            let mut full: Vec<usize> = pool.clone();
            full.push(source);
            full.sort_unstable();
            let state = self.cache.fit(target, &full, &self.options)?;
            let map: HashMap<usize, EdgeKernelParams> = state
                .parents
                .iter()
                .copied()
                .zip(state.params.iter().copied())
                .collect();
            Some((full, map, state.noise_variance))
        } else {
            None
        };

        // Uniform prior over the 2^(L-1) parent sets of the target node.
        let log_prior = -((l as f64 - 1.0) * std::f64::consts::LN_2);
        let mut with = Vec::with_capacity(1 << pool.len());
        let mut without = Vec::with_capacity(1 << pool.len());
        for mask in 0u64..(1 << pool.len()) {
            let subset: Vec<usize> = pool
                .iter()
                .enumerate()
                .filter(|(bit, _)| mask & (1 << bit) != 0)
                .map(|(_, &p)| p)
                .collect();
            without.push(self.score(target, &subset, fixed.as_ref())? + log_prior);
            let mut with_edge = subset;
            with_edge.push(source);
            with_edge.sort_unstable();
            with.push(self.score(target, &with_edge, fixed.as_ref())? + log_prior);
        }
        Ok(SubjectEvidence {
            subject: self.subject.clone(),
            edge,
            log_with: log_sum_exp(&with),
            log_without: log_sum_exp(&without),
            subgraph_count: 2 << pool.len(),
            exact: matches!(mode, EvidenceMode::Exact),
        })
    }
}

/// One-shot evidence for a single edge of a single recording.
pub fn subject_edge_evidence(
    dataset: &TimeSeriesDataset,
    edge: (usize, usize),
    order: usize,
    mode: EvidenceMode,
) -> Result<SubjectEvidence> {
    SubjectAnalysis::new("", dataset, order, EmOptions::default())?.edge_evidence(edge, mode)
}

/// Combines per-subject evidences into the group Bayes factor
/// `BF = 2 (sum_k log p(D^k|e) - sum_k log p(D^k|not e))`.
pub fn group_bayes_factor(evidences: &[SubjectEvidence]) -> Result<GroupEvidence> {
    let first = evidences
        .first()
        .ok_or_else(|| Error::InvalidArgument("no subject evidences".into()))?;
    if evidences.iter().any(|e| e.edge != first.edge) {
        return Err(Error::InvalidArgument(
            "subject evidences refer to different edges".into(),
        ));
    }
    let bf = 2.0 * evidences.iter().map(SubjectEvidence::log_ratio).sum::<f64>();
    if !bf.is_finite() {
        return Err(Error::NumericalFailure("non-finite Bayes factor".into()));
    }
    let optimal = if bf >= 0.0 { Hypothesis::H1 } else { Hypothesis::H0 };
    Ok(GroupEvidence {
        edge: first.edge,
        session: None,
        bayes_factor: bf,
        optimal,
        posterior: logistic(bf.abs() / 2.0),
        strength: EvidenceStrength::from_bayes_factor(bf),
        subjects: evidences.to_vec(),
    })
}

/// Number of graph estimates containing the edge.
pub fn selection_frequency(estimates: &[BayesGraphEstimate], edge: (usize, usize)) -> usize {
    estimates
        .iter()
        .filter(|e| e.estimate.contains(edge.0, edge.1))
        .count()
}

/// Verdict of the longitudinal change-detection protocol.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChangeVerdict {
    pub edge: (usize, usize),
    pub sequence: Vec<Hypothesis>,
    /// Sessions 1 and 2 agree and session 3 flips.
    pub change_detected: bool,
    /// Session 4 (when present) retains session 3's hypothesis.
    pub persistent: Option<bool>,
    pub rationale: String,
}

/// Applies the change protocol to chronologically ordered sessions of one
/// edge: a change requires a stable baseline (sessions 1 and 2 agree)
/// followed by the opposite hypothesis in session 3.
pub fn change_protocol(sessions: &[GroupEvidence]) -> Result<ChangeVerdict> {
    if sessions.len() < 3 {
        return Err(Error::Protocol(format!(
            "change protocol needs at least 3 sessions, got {}",
            sessions.len()
        )));
    }
    let edge = sessions[0].edge;
    if sessions.iter().any(|s| s.edge != edge) {
        return Err(Error::Protocol(
            "sessions refer to different edges".into(),
        ));
    }
    let sequence: Vec<Hypothesis> = sessions.iter().map(|s| s.optimal).collect();
    let change_detected = sequence[0] == sequence[1] && sequence[2] != sequence[0];
    let persistent = sequence.get(3).map(|h| *h == sequence[2]);
    let seq_text = sequence
        .iter()
        .map(|h| h.to_string())
        .collect::<Vec<_>>()
        .join(" -> ");
    let rationale = if change_detected {
        match persistent {
            Some(true) => format!("{seq_text}: stable baseline, flip in session 3, persists"),
            Some(false) => format!("{seq_text}: stable baseline, flip in session 3, reverts"),
            None => format!("{seq_text}: stable baseline, flip in session 3"),
        }
    } else if sequence[0] != sequence[1] {
        format!("{seq_text}: baseline unstable, no change attributed")
    } else {
        format!("{seq_text}: no change")
    };
    Ok(ChangeVerdict {
        edge,
        sequence,
        change_detected,
        persistent,
        rationale,
    })
}

/// Median-rank split of subjects by a numeric covariate, descending; ties
/// break by position. Returns (high group, low group) as index lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupSplit {
    pub high: Vec<usize>,
    pub low: Vec<usize>,
    /// All covariates equal: the split is positional only.
    pub degenerate: bool,
}

pub fn subgroup_split(covariates: &[f64]) -> Result<SubgroupSplit> {
    let n = covariates.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "subgroup split needs at least 2 subjects, got {n}"
        )));
    }
    if covariates.iter().any(|c| !c.is_finite()) {
        return Err(Error::InvalidArgument("non-finite covariate".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        covariates[b]
            .partial_cmp(&covariates[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let cut = n.div_ceil(2);
    let degenerate = covariates.iter().all(|&c| c == covariates[0]);
    Ok(SubgroupSplit {
        high: order[..cut].to_vec(),
        low: order[cut..].to_vec(),
        degenerate,
    })
}

/// Study manifest: subjects with per-session recordings and an optional
/// covariate, plus optional explicit candidate edges.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyManifest {
    pub subjects: Vec<StudySubject>,
    #[serde(default)]
    pub session_labels: Option<Vec<String>>,
    /// (target, source) pairs; when absent, candidates are screened by
    /// selection-frequency deltas between consecutive sessions.
    #[serde(default)]
    pub candidate_edges: Option<Vec<(usize, usize)>>,
    #[serde(default)]
    pub order: Option<usize>,
    #[serde(default = "default_screening")]
    pub screening_threshold: usize,
}

fn default_screening() -> usize {
    DEFAULT_SCREENING_THRESHOLD
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudySubject {
    pub id: String,
    /// One CSV path per session, chronological.
    pub sessions: Vec<String>,
    #[serde(default)]
    pub covariate: Option<f64>,
}

impl StudyManifest {
    pub fn from_json_path<P: AsRef<Path>>(path: P) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Per-edge results across sessions, in Table-2-like layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EdgeReport {
    pub edge: (usize, usize),
    pub sessions: Vec<SessionSummary>,
    pub change: Option<ChangeVerdict>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionSummary {
    pub label: String,
    pub optimal: Hypothesis,
    pub bayes_factor: f64,
    pub posterior: f64,
    pub strength: EvidenceStrength,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyReport {
    pub order: usize,
    pub mode: EvidenceMode,
    pub session_labels: Vec<String>,
    pub edges: Vec<EdgeReport>,
}

impl StudyReport {
    /// Wide CSV: one row per edge, H_opt/BF/posterior columns per session.
    pub fn to_csv_writer<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec!["edge".to_string()];
        for label in &self.session_labels {
            header.push(format!("{label}_h_opt"));
            header.push(format!("{label}_bf"));
            header.push(format!("{label}_posterior"));
        }
        header.push("change_detected".into());
        wtr.write_record(&header)?;
        for report in &self.edges {
            let mut row = vec![format!("{}<-{}", report.edge.0, report.edge.1)];
            for s in &report.sessions {
                row.push(s.optimal.to_string());
                row.push(format!("{:.4}", s.bayes_factor));
                row.push(format!("{:.4}", s.posterior));
            }
            row.push(
                report
                    .change
                    .as_ref()
                    .map_or("n/a".into(), |c| c.change_detected.to_string()),
            );
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Runs the full group study: loads every recording, screens or accepts
/// candidate edges, computes per-session group evidences and the change
/// protocol per edge. `base` resolves relative CSV paths.
pub fn run_study(
    manifest: &StudyManifest,
    base: &Path,
    mode: EvidenceMode,
    options: &EmOptions,
) -> Result<StudyReport> {
    if manifest.subjects.is_empty() {
        return Err(Error::InvalidArgument("study has no subjects".into()));
    }
    let n_sessions = manifest.subjects[0].sessions.len();
    if n_sessions == 0 {
        return Err(Error::InvalidArgument("study has no sessions".into()));
    }
    if manifest
        .subjects
        .iter()
        .any(|s| s.sessions.len() != n_sessions)
    {
        return Err(Error::InvalidArgument(
            "all subjects need the same number of sessions".into(),
        ));
    }
    let labels: Vec<String> = match &manifest.session_labels {
        Some(l) if l.len() == n_sessions => l.clone(),
        Some(l) => {
            return Err(Error::InvalidArgument(format!(
                "{} session labels for {} sessions",
                l.len(),
                n_sessions
            )))
        }
        None => (1..=n_sessions).map(|s| format!("session{s}")).collect(),
    };

    // datasets[subject][session]
    let mut datasets: Vec<Vec<TimeSeriesDataset>> = Vec::new();
    for subject in &manifest.subjects {
        let mut per_session = Vec::new();
        for rel in &subject.sessions {
            per_session.push(TimeSeriesDataset::from_csv_path(base.join(rel))?);
        }
        datasets.push(per_session);
    }
    let l = datasets[0][0].node_count();
    let n = datasets[0][0].sample_count();
    if datasets
        .iter()
        .flatten()
        .any(|d| d.node_count() != l)
    {
        return Err(Error::InvalidArgument(
            "all recordings need the same node count".into(),
        ));
    }
    let order = manifest.order.unwrap_or_else(|| default_order(n));

    let edges: Vec<(usize, usize)> = match &manifest.candidate_edges {
        Some(e) => {
            for &(j, i) in e {
                if j == i || j >= l || i >= l {
                    return Err(Error::InvalidArgument(format!(
                        "invalid candidate edge ({j}, {i}) for {l} nodes"
                    )));
                }
            }
            e.clone()
        }
        None => screen_candidates(&datasets, order, manifest.screening_threshold, options)?,
    };

    // One evidence pass per (subject, session), covering all edges.
    let mut per_session: Vec<Vec<GroupEvidence>> = Vec::with_capacity(n_sessions);
    for s in 0..n_sessions {
        let mut per_edge: Vec<Vec<SubjectEvidence>> = vec![Vec::new(); edges.len()];
        for (subject, data) in manifest.subjects.iter().zip(&datasets) {
            let mut analysis =
                SubjectAnalysis::new(subject.id.clone(), &data[s], order, *options)?;
            for (k, &edge) in edges.iter().enumerate() {
                per_edge[k].push(analysis.edge_evidence(edge, mode)?);
            }
        }
        let mut session_results = Vec::with_capacity(edges.len());
        for evidences in &per_edge {
            let mut group = group_bayes_factor(evidences)?;
            group.session = Some(labels[s].clone());
            session_results.push(group);
        }
        per_session.push(session_results);
    }

    let mut reports = Vec::with_capacity(edges.len());
    for (k, &edge) in edges.iter().enumerate() {
        let sessions: Vec<GroupEvidence> =
            per_session.iter().map(|s| s[k].clone()).collect();
        let summaries = sessions
            .iter()
            .zip(&labels)
            .map(|(g, label)| SessionSummary {
                label: label.clone(),
                optimal: g.optimal,
                bayes_factor: g.bayes_factor,
                posterior: g.posterior,
                strength: g.strength,
            })
            .collect();
        let change = if n_sessions >= 3 {
            Some(change_protocol(&sessions)?)
        } else {
            None
        };
        reports.push(EdgeReport {
            edge,
            sessions: summaries,
            change,
        });
    }
    Ok(StudyReport {
        order,
        mode,
        session_labels: labels,
        edges: reports,
    })
}

/// Candidate screening: edges whose selection frequency changes by at least
/// `threshold` between some pair of consecutive sessions.
fn screen_candidates(
    datasets: &[Vec<TimeSeriesDataset>],
    order: usize,
    threshold: usize,
    options: &EmOptions,
) -> Result<Vec<(usize, usize)>> {
    let n_sessions = datasets[0].len();
    let l = datasets[0][0].node_count();
    let mut per_session: Vec<Vec<BayesGraphEstimate>> = Vec::with_capacity(n_sessions);
    for s in 0..n_sessions {
        let estimates = datasets
            .iter()
            .map(|d| greedy_search_with_options(&d[s], order, options))
            .collect::<Result<Vec<_>>>()?;
        per_session.push(estimates);
    }
    let mut edges = Vec::new();
    for j in 0..l {
        for i in 0..l {
            if i == j {
                continue;
            }
            let freqs: Vec<usize> = per_session
                .iter()
                .map(|e| selection_frequency(e, (j, i)))
                .collect();
            if freqs
                .windows(2)
                .any(|w| w[0].abs_diff(w[1]) >= threshold)
            {
                edges.push((j, i));
            }
        }
    }
    Ok(edges)
}
