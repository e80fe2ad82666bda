//! Synthetic benchmark factory.
//!
//! Builds random DAG models in three mechanism regimes, injects root-cause
//! faults by grid search over the culprit exogenous values, and produces the
//! four-variable toy models used by the estimator error studies.
//!
//! On-disk bundle layout:
//!
//! ```text
//! bundle/
//!   graph.json       node names + edges
//!   oracle.json      generative model
//!   train.csv        historical sample matrix
//!   manifest.json    config, seeds, per-case bookkeeping
//!   cases/case_0.json …
//! ```

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anomaly::{AnomalyDetectorSet, AnomalyError, Thresholds};
use crate::estimate::{FixAssignment, Instance, Provenance};
use crate::fitting::SampleMatrix;
use crate::floats;
use crate::graph::{Dag, DEFAULT_PATH_LIMIT};
use crate::mlp::{Activation, Mlp};
use crate::scm::{ExogenousSpec, Mechanism, OracleScm, ScmError};
use crate::seeding;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("no root cause requested (empty ground-truth set)")]
    NoRootCauseRequested,
    #[error("root cause {node} is not an ancestor of target {target}")]
    NotAnAncestor { node: usize, target: usize },
    #[error("root causes {a} and {b} share a simple path to the target")]
    Assumption1Violated { a: usize, b: usize },
    #[error("sweep exceeded ceiling {ceiling} without tripping the detectors")]
    SweepCeiling { ceiling: f64 },
    #[error(
        "could not generate {wanted} cases after {attempts} attempts ({failures} sweep failures)"
    )]
    TooManyFailures {
        wanted: usize,
        attempts: usize,
        failures: usize,
    },
    #[error("config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Scm(#[from] ScmError),
    #[error(transparent)]
    Anomaly(#[from] AnomalyError),
    #[error("io: {0}")]
    Io(String),
    #[error("parse: {0}")]
    Parse(String),
}

/// Structural-equation family for generated models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    Linear,
    MlpAdd,
    MlpExog,
}

impl Regime {
    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::Linear => "linear",
            Regime::MlpAdd => "mlp-add",
            Regime::MlpExog => "mlp-exog",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "linear" => Some(Regime::Linear),
            "mlp-add" => Some(Regime::MlpAdd),
            "mlp-exog" => Some(Regime::MlpExog),
            _ => None,
        }
    }
}

/// How many ground-truth root causes each case carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Multiplicity {
    Unique,
    /// Two to `max` root causes per case.
    Multiple { max: usize },
}

/// Benchmark generation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub node_count: usize,
    pub root_count: usize,
    pub regime: Regime,
    /// Exogenous noise is U[0, b].
    #[serde(with = "floats::f64_dec")]
    pub exogenous_hi: f64,
    /// Linear mechanism weights are U[lo, hi].
    #[serde(with = "floats::f64_dec")]
    pub weight_lo: f64,
    #[serde(with = "floats::f64_dec")]
    pub weight_hi: f64,
    pub min_target_depth: usize,
    /// Minimum directed-path length from any chosen root cause to the
    /// target (0 = no constraint).
    pub min_rc_distance: usize,
    pub multiplicity: Multiplicity,
    pub respect_assumption1: bool,
    pub irrelevant_anomaly_count: usize,
    pub seed: u64,
    /// Rows in the exported training matrix.
    pub train_rows: usize,
    /// Z-score the grid search must trip at the target and every root cause.
    #[serde(with = "floats::f64_dec")]
    pub generation_tau: f64,
    #[serde(with = "floats::f64_dec")]
    pub sweep_step: f64,
    #[serde(with = "floats::f64_dec")]
    pub sweep_ceiling: f64,
    /// Hidden width of oracle MLP mechanisms.
    pub mlp_hidden: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            node_count: 40,
            root_count: 5,
            regime: Regime::Linear,
            exogenous_hi: 1.0,
            weight_lo: 0.5,
            weight_hi: 2.0,
            min_target_depth: 10,
            min_rc_distance: 0,
            multiplicity: Multiplicity::Unique,
            respect_assumption1: true,
            irrelevant_anomaly_count: 1,
            seed: 0,
            train_rows: 1000,
            generation_tau: 3.0,
            sweep_step: 0.25,
            sweep_ceiling: 25.0,
            mlp_hidden: 4,
        }
    }
}

impl BenchConfig {
    fn validate(&self) -> Result<(), BenchError> {
        if self.root_count == 0 || self.root_count >= self.node_count {
            return Err(BenchError::BadConfig(format!(
                "root_count {} must lie in 1..node_count {}",
                self.root_count, self.node_count
            )));
        }
        if self.exogenous_hi <= 0.0 {
            return Err(BenchError::BadConfig("exogenous_hi must be > 0".into()));
        }
        if !(self.weight_lo < self.weight_hi) {
            return Err(BenchError::BadConfig("weight range must be non-empty".into()));
        }
        if self.sweep_step <= 0.0 || self.sweep_ceiling <= 0.0 {
            return Err(BenchError::BadConfig("sweep parameters must be > 0".into()));
        }
        if let Multiplicity::Multiple { max } = self.multiplicity {
            if max < 2 {
                return Err(BenchError::BadConfig(
                    "multiple-root-cause max must be >= 2".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Per-case metadata carried through bundle files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseMetadata {
    pub regime: String,
    pub seed: u64,
    pub assumption1_satisfied: bool,
}

/// One injected fault: the observed instance, where the anomaly surfaced, and
/// which nodes truly caused it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestCase {
    pub instance: Instance,
    pub target: usize,
    pub ground_truth: BTreeSet<usize>,
    /// Exogenous vector that generated the instance (injections included).
    #[serde(with = "floats::vec_f64_dec")]
    pub exogenous: Vec<f64>,
    /// Magnitude the grid search settled on for the ground-truth noises.
    #[serde(with = "floats::f64_dec")]
    pub sweep_magnitude: f64,
    /// Weak-influence nodes that carry injected irrelevant anomalies.
    pub irrelevant: Vec<usize>,
    pub metadata: CaseMetadata,
}

/// Result of graph generation.
#[derive(Debug, Clone)]
pub struct GeneratedGraph {
    pub dag: Dag,
    pub target: usize,
    pub target_depth: usize,
    /// Set when no node reached the configured depth and the deepest
    /// available node was used instead.
    pub depth_warning: Option<String>,
}

/// Longest root-to-node path lengths.
fn depths(dag: &Dag) -> Vec<usize> {
    let mut depth = vec![0usize; dag.node_count()];
    for &i in dag.topological_order() {
        depth[i] = dag
            .parents(i)
            .expect("index in range")
            .iter()
            .map(|&p| depth[p] + 1)
            .max()
            .unwrap_or(0);
    }
    depth
}

/// Weighted predecessor draw, quadratically biased towards recent nodes so
/// chains stay long enough for deep targets.
fn draw_predecessor(k: usize, rng: &mut impl Rng) -> usize {
    let total: u64 = (1..=k as u64).map(|i| i * i).sum();
    let mut pick = rng.gen_range(0..total);
    for p in 0..k {
        let w = ((p + 1) as u64).pow(2);
        if pick < w {
            return p;
        }
        pick -= w;
    }
    k - 1
}

fn sample_graph_once(cfg: &BenchConfig, rng: &mut impl Rng) -> Dag {
    let n = cfg.node_count;
    let mut edges = Vec::new();
    for k in cfg.root_count..n {
        // Biased towards a single parent; occasionally two or three.
        let roll: f64 = rng.gen_range(0.0..1.0);
        let want = if roll < 0.7 {
            1
        } else if roll < 0.9 {
            2
        } else {
            3
        };
        let count = want.min(k);
        let mut parents = BTreeSet::new();
        while parents.len() < count {
            parents.insert(draw_predecessor(k, rng));
        }
        for p in parents {
            edges.push((p, k));
        }
    }
    Dag::new(n, &edges).expect("forward edges cannot cycle")
}

fn pick_target(dag: &Dag, min_depth: usize) -> (usize, usize, bool) {
    let depth = depths(dag);
    let ancestor_count = |i: usize| dag.ancestors(i).expect("index in range").len();
    let qualifying: Vec<usize> = (0..dag.node_count())
        .filter(|&i| depth[i] >= min_depth)
        .collect();
    if !qualifying.is_empty() {
        let best = *qualifying
            .iter()
            .max_by_key(|&&i| (ancestor_count(i), depth[i], i))
            .expect("non-empty");
        return (best, depth[best], true);
    }
    let best = (0..dag.node_count())
        .max_by_key(|&i| (depth[i], ancestor_count(i), i))
        .expect("non-empty graph");
    (best, depth[best], false)
}

/// Samples random DAGs until one offers a target at the configured depth
/// (bounded retries; the deepest graph seen is kept as fallback).
pub fn generate_graph(cfg: &BenchConfig) -> Result<GeneratedGraph, BenchError> {
    cfg.validate()?;
    const RETRIES: u64 = 64;
    let mut best: Option<GeneratedGraph> = None;
    for attempt in 0..RETRIES {
        let mut rng = seeding::stream(cfg.seed, &[0x61, attempt]);
        let dag = sample_graph_once(cfg, &mut rng);
        let (target, depth, ok) = pick_target(&dag, cfg.min_target_depth);
        let candidate = GeneratedGraph {
            dag,
            target,
            target_depth: depth,
            depth_warning: None,
        };
        if ok {
            return Ok(candidate);
        }
        if best
            .as_ref()
            .map(|b| candidate.target_depth > b.target_depth)
            .unwrap_or(true)
        {
            best = Some(candidate);
        }
    }
    let mut fallback = best.expect("at least one attempt ran");
    fallback.depth_warning = Some(format!(
        "no node reached depth {} after {RETRIES} graph draws; using depth {}",
        cfg.min_target_depth, fallback.target_depth
    ));
    Ok(fallback)
}

/// Instantiates the oracle model for a generated graph under the configured
/// regime.
///
/// Exog-input mechanisms are calibrated against a simulated batch of their
/// own parents: first-layer weights are standardised to the parent scale so
/// pre-activations straddle the ELU knee at every depth. That keeps node
/// values bounded, makes the parent–noise interaction genuine (the noise is
/// folded, not additive), and still lets upstream deviations propagate.
pub fn generate_oracle(cfg: &BenchConfig, dag: &Dag) -> Result<OracleScm, BenchError> {
    let mut rng = seeding::stream(cfg.seed, &[0x6f]);
    let n = dag.node_count();
    let exogenous = vec![
        ExogenousSpec::Uniform {
            lo: 0.0,
            hi: cfg.exogenous_hi,
        };
        n
    ];

    // Calibration batch, filled column by column as mechanisms are built
    // (generated graphs order parents before children).
    const BATCH: usize = 256;
    let mut batch_rng = seeding::stream(cfg.seed, &[0x62]);
    let batch_exog: Vec<Vec<f64>> = (0..BATCH)
        .map(|_| exogenous.iter().map(|s| s.sample(&mut batch_rng)).collect())
        .collect();
    let mut batch_values = vec![vec![0.0f64; n]; BATCH];

    let mut mechanisms: Vec<Mechanism> = Vec::with_capacity(n);
    for &i in dag.topological_order() {
        debug_assert_eq!(mechanisms.len(), i, "generated graphs are index-ordered");
        let parents = dag.parents(i).expect("index in range").to_vec();
        let mech = if parents.is_empty() {
            Mechanism::Root
        } else {
            match cfg.regime {
                Regime::Linear => Mechanism::LinearAdditive {
                    weights: (0..parents.len())
                        .map(|_| rng.gen_range(cfg.weight_lo..cfg.weight_hi))
                        .collect(),
                },
                // Positive weights keep additive-MLP KPIs positive.
                Regime::MlpAdd => Mechanism::MlpAdditive {
                    mlp: Mlp::random_uniform(
                        parents.len(),
                        cfg.mlp_hidden,
                        Activation::Elu,
                        (0.0, 1.0),
                        (0.0, 0.0),
                        &mut rng,
                    ),
                },
                Regime::MlpExog => {
                    // Parent statistics from the calibration batch.
                    let stats: Vec<(f64, f64)> = parents
                        .iter()
                        .map(|&p| {
                            let mean = batch_values.iter().map(|r| r[p]).sum::<f64>()
                                / BATCH as f64;
                            let var = batch_values
                                .iter()
                                .map(|r| (r[p] - mean) * (r[p] - mean))
                                .sum::<f64>()
                                / BATCH as f64;
                            (mean, var.sqrt().max(1e-6))
                        })
                        .collect();
                    let hidden = cfg.mlp_hidden.max(8);
                    let mut mlp = Mlp::random_uniform(
                        parents.len() + 1,
                        hidden,
                        Activation::Elu,
                        (-1.0, 1.0),
                        (-0.5, 0.5),
                        &mut rng,
                    );
                    let in_dim = parents.len() + 1;
                    for o in 0..hidden {
                        let mut shift = 0.0;
                        for (k, &(mean, std)) in stats.iter().enumerate() {
                            let w = &mut mlp.layers[0].weights[o * in_dim + k];
                            *w /= std;
                            shift += *w * mean;
                        }
                        // Amplified noise column: ε ∈ U[0,1] swings the unit
                        // across the activation knee.
                        mlp.layers[0].weights[o * in_dim + parents.len()] =
                            rng.gen_range(-3.0..3.0);
                        // Knees spread both inside and beyond the usual data
                        // range, so the mechanism keeps bending where a model
                        // fitted on usual samples has never seen inputs.
                        mlp.layers[0].biases[o] = rng.gen_range(-4.0..2.0) - shift;
                    }
                    Mechanism::MlpExogInput { mlp }
                }
            }
        };
        // Extend the calibration batch with this node's values.
        let mut pa_buf = Vec::with_capacity(parents.len());
        for (row, exog_row) in batch_values.iter_mut().zip(&batch_exog) {
            pa_buf.clear();
            pa_buf.extend(parents.iter().map(|&p| row[p]));
            row[i] = mech.evaluate(&pa_buf, exog_row[i]);
        }
        mechanisms.push(mech);
    }
    Ok(OracleScm::new(dag.clone(), mechanisms, exogenous)?)
}

/// Checks that no simple path to the target carries two ground-truth nodes.
pub fn assumption1_satisfied(
    dag: &Dag,
    target: usize,
    alpha: &BTreeSet<usize>,
) -> Result<bool, BenchError> {
    Ok(first_violating_pair(dag, target, alpha)?.is_none())
}

fn first_violating_pair(
    dag: &Dag,
    target: usize,
    alpha: &BTreeSet<usize>,
) -> Result<Option<(usize, usize)>, BenchError> {
    for &a in alpha {
        let paths = dag
            .simple_paths(a, target, DEFAULT_PATH_LIMIT)
            .map_err(|e| BenchError::BadConfig(e.to_string()))?;
        for path in &paths.paths {
            for &other in alpha {
                if other != a && path.contains(&other) {
                    return Ok(Some((a, other)));
                }
            }
        }
    }
    Ok(None)
}

/// Draws a ground-truth root-cause set for one case.
pub fn choose_root_causes(
    dag: &Dag,
    target: usize,
    cfg: &BenchConfig,
    rng: &mut impl Rng,
) -> Result<BTreeSet<usize>, BenchError> {
    let all_ancestors = dag
        .ancestors(target)
        .map_err(|e| BenchError::BadConfig(e.to_string()))?;
    // Shortest directed distance to the target, for the distance floor.
    let mut dist = vec![usize::MAX; dag.node_count()];
    dist[target] = 0;
    for &v in dag.topological_order().iter().rev() {
        if v == target || !all_ancestors.contains(&v) {
            continue;
        }
        let best = dag
            .children(v)
            .expect("index in range")
            .iter()
            .filter(|&&c| dist[c] != usize::MAX)
            .map(|&c| dist[c] + 1)
            .min();
        if let Some(d) = best {
            dist[v] = d;
        }
    }
    let mut ancestors: Vec<usize> = all_ancestors
        .iter()
        .copied()
        .filter(|&a| dist[a] != usize::MAX && dist[a] >= cfg.min_rc_distance)
        .collect();
    if ancestors.is_empty() {
        // Distance floor unreachable on this graph; fall back to all.
        ancestors = all_ancestors.into_iter().collect();
    }
    if ancestors.is_empty() {
        return Err(BenchError::NoRootCauseRequested);
    }
    let max_size = match cfg.multiplicity {
        Multiplicity::Unique => 1,
        Multiplicity::Multiple { max } => max.min(ancestors.len()),
    };
    if max_size <= 1 {
        let pick = ancestors[rng.gen_range(0..ancestors.len())];
        return Ok(BTreeSet::from([pick]));
    }
    const DRAWS: usize = 400;
    for _ in 0..DRAWS {
        // Favour the largest admissible set; fall back to smaller ones.
        let size = if max_size > 2 && rng.gen_range(0.0..1.0) < 2.0 / 3.0 {
            max_size
        } else {
            rng.gen_range(2..=max_size)
        };
        let mut alpha = BTreeSet::new();
        while alpha.len() < size {
            alpha.insert(ancestors[rng.gen_range(0..ancestors.len())]);
        }
        if !cfg.respect_assumption1 || assumption1_satisfied(dag, target, &alpha)? {
            return Ok(alpha);
        }
    }
    Err(BenchError::BadConfig(format!(
        "could not draw {max_size} path-disjoint root causes for target {target}"
    )))
}

/// Grid search: sweeps the ground-truth exogenous values jointly upward from
/// zero until the target and every ground-truth node are anomalous.
///
/// The non-culprit exogenous values are frozen per case; a ceiling breach is
/// a generation failure for this case seed.
pub fn generate_test_case(
    oracle: &OracleScm,
    det: &AnomalyDetectorSet,
    target: usize,
    alpha_star: &BTreeSet<usize>,
    cfg: &BenchConfig,
    case_seed: u64,
) -> Result<TestCase, BenchError> {
    if alpha_star.is_empty() {
        return Err(BenchError::NoRootCauseRequested);
    }
    let dag = &oracle.dag;
    let ancestors = dag
        .ancestors(target)
        .map_err(|e| BenchError::BadConfig(e.to_string()))?;
    for &node in alpha_star {
        if !ancestors.contains(&node) {
            return Err(BenchError::NotAnAncestor { node, target });
        }
    }
    let a1 = assumption1_satisfied(dag, target, alpha_star)?;
    if cfg.respect_assumption1 && !a1 {
        let (a, b) =
            first_violating_pair(dag, target, alpha_star)?.expect("violation implies a pair");
        return Err(BenchError::Assumption1Violated { a, b });
    }

    let mut rng = seeding::rng(case_seed);
    let mut exog: Vec<f64> = oracle
        .exogenous
        .iter()
        .map(|spec| spec.sample(&mut rng))
        .collect();

    // A valid case keeps every ground-truth node identifiable as a root
    // cause: anomalous itself, usual parents (the parent condition is waived
    // in the assumption-violation mode, where upstream root causes are
    // allowed to contaminate downstream parents).
    let anomalous_everywhere = |values: &[f64]| {
        det.is_anomalous(target, values[target])
            && alpha_star.iter().all(|&j| {
                det.is_anomalous(j, values[j])
                    && (!cfg.respect_assumption1
                        || dag
                            .parents(j)
                            .expect("index in range")
                            .iter()
                            .all(|&p| !det.is_anomalous(p, values[p])))
            })
    };

    let mut magnitude = 0.0;
    let (instance_values, sweep_magnitude) = loop {
        for &j in alpha_star {
            exog[j] = magnitude;
        }
        let values = oracle.evaluate_from_exog(&exog);
        if anomalous_everywhere(&values) {
            break (values, magnitude);
        }
        magnitude += cfg.sweep_step;
        if magnitude > cfg.sweep_ceiling {
            return Err(BenchError::SweepCeiling {
                ceiling: cfg.sweep_ceiling,
            });
        }
    };

    // Irrelevant anomalies on weak-influence ancestors. A node qualifies
    // when, *after* its noise is swept to an anomalous level, clamping it
    // back to its training mean moves the target by less than 5% of the
    // target's spread — the injected anomaly is real but irrelevant to the
    // target. Injections that would break any ground-truth node's own
    // anomaly condition are reverted.
    let mut instance_values = instance_values;
    let mut irrelevant = Vec::new();
    if cfg.irrelevant_anomaly_count > 0 {
        let sigma_target = det.detectors[target].std;
        let mut candidates: Vec<usize> = ancestors
            .iter()
            .copied()
            .filter(|a| !alpha_star.contains(a))
            .collect();
        // Decoys vary across cases but stay deterministic per case seed.
        for i in (1..candidates.len()).rev() {
            let j = rng.gen_range(0..=i);
            candidates.swap(i, j);
        }
        for node in candidates {
            if irrelevant.len() >= cfg.irrelevant_anomaly_count {
                break;
            }
            let saved = exog[node];
            let mut level = cfg.sweep_step;
            let mut injected = None;
            while level <= cfg.sweep_ceiling {
                exog[node] = level;
                let values = oracle.evaluate_from_exog(&exog);
                if det.is_anomalous(node, values[node]) && anomalous_everywhere(&values) {
                    injected = Some(values);
                    break;
                }
                level += cfg.sweep_step;
            }
            let accepted = match injected {
                Some(values) => {
                    let x = Instance::new(values.clone(), Provenance::Observed);
                    let fixes = FixAssignment::single(node, det.detectors[node].mean);
                    let cf = oracle.oracle_counterfactual(&x, &exog, &fixes)?;
                    let influence = (cf.values[target] - x.values[target]).abs();
                    if influence < 0.05 * sigma_target {
                        instance_values = values;
                        irrelevant.push(node);
                        true
                    } else {
                        false
                    }
                }
                None => false,
            };
            if !accepted {
                exog[node] = saved;
            }
        }
    }

    Ok(TestCase {
        instance: Instance::observed(instance_values),
        target,
        ground_truth: alpha_star.clone(),
        exogenous: exog,
        sweep_magnitude,
        irrelevant,
        metadata: CaseMetadata {
            regime: cfg.regime.as_str().to_string(),
            seed: case_seed,
            assumption1_satisfied: a1,
        },
    })
}

/// Everything a benchmark run needs, in memory.
#[derive(Debug, Clone)]
pub struct Bundle {
    pub config: BenchConfig,
    pub dag: Dag,
    pub oracle: OracleScm,
    pub train: SampleMatrix,
    pub target: usize,
    pub cases: Vec<TestCase>,
    pub manifest: Manifest,
}

/// Bundle bookkeeping persisted as `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: BenchConfig,
    pub target: usize,
    pub target_depth: usize,
    pub case_count: usize,
    pub case_seeds: Vec<u64>,
    pub attempts: usize,
    pub sweep_failures: usize,
    /// Whole graph+oracle re-draws after case generation stalled.
    pub graph_redraws: usize,
    pub warnings: Vec<String>,
}

/// Generates a complete benchmark bundle: graph, oracle, training data,
/// detectors for injection, and `cases` fault cases.
///
/// Case seeds that breach the sweep ceiling are skipped and counted; if a
/// graph cannot yield enough cases at all (every injection saturates before
/// reaching the target) the graph and oracle are re-drawn from a derived
/// seed, a bounded number of times.
pub fn generate_bundle(cfg: &BenchConfig, cases: usize) -> Result<Bundle, BenchError> {
    cfg.validate()?;
    const GRAPH_REDRAWS: u64 = 8;
    let mut attempts_total = 0usize;
    let mut failures_total = 0usize;
    for redraw in 0..GRAPH_REDRAWS {
        let sub = if redraw == 0 {
            cfg.clone()
        } else {
            BenchConfig {
                seed: seeding::derive(cfg.seed, &[0x67, redraw]),
                ..cfg.clone()
            }
        };
        let graph = generate_graph(&sub)?;
        let oracle = generate_oracle(&sub, &graph.dag)?;
        let train = oracle.sample(sub.train_rows, seeding::derive(sub.seed, &[0x74]));
        let det = AnomalyDetectorSet::train(&train, &Thresholds::Scalar(sub.generation_tau))?;

        let mut out_cases = Vec::with_capacity(cases);
        let mut case_seeds = Vec::with_capacity(cases);
        let mut attempts = 0usize;
        let mut failures = 0usize;
        let max_attempts = (cases.max(1) * 20).max(60);
        while out_cases.len() < cases && attempts < max_attempts {
            let case_seed = seeding::derive(sub.seed, &[0x63, attempts as u64]);
            attempts += 1;
            let mut rng = seeding::rng(seeding::derive(case_seed, &[0x72]));
            let alpha = match choose_root_causes(&graph.dag, graph.target, &sub, &mut rng) {
                Ok(alpha) => alpha,
                Err(_) => {
                    failures += 1;
                    continue;
                }
            };
            match generate_test_case(&oracle, &det, graph.target, &alpha, &sub, case_seed) {
                Ok(case) => {
                    out_cases.push(case);
                    case_seeds.push(case_seed);
                }
                Err(BenchError::SweepCeiling { .. }) => failures += 1,
                Err(e) => return Err(e),
            }
        }
        attempts_total += attempts;
        failures_total += failures;
        if out_cases.len() < cases {
            continue;
        }
        let mut warnings = Vec::new();
        if let Some(w) = graph.depth_warning.clone() {
            warnings.push(w);
        }
        if redraw > 0 {
            warnings.push(format!(
                "graph redrawn {redraw} time(s); cases could not be injected in earlier draws"
            ));
        }
        let manifest = Manifest {
            config: cfg.clone(),
            target: graph.target,
            target_depth: graph.target_depth,
            case_count: out_cases.len(),
            case_seeds,
            attempts: attempts_total,
            sweep_failures: failures_total,
            graph_redraws: redraw as usize,
            warnings,
        };
        return Ok(Bundle {
            config: cfg.clone(),
            dag: graph.dag,
            oracle,
            train,
            target: graph.target,
            cases: out_cases,
            manifest,
        });
    }
    Err(BenchError::TooManyFailures {
        wanted: cases,
        attempts: attempts_total,
        failures: failures_total,
    })
}

impl Bundle {
    /// Writes the bundle directory layout.
    pub fn write(&self, dir: &Path) -> Result<(), BenchError> {
        let io = |e: std::io::Error| BenchError::Io(e.to_string());
        fs::create_dir_all(dir.join("cases")).map_err(io)?;
        fs::write(dir.join("graph.json"), self.dag.to_json()).map_err(io)?;
        fs::write(dir.join("oracle.json"), self.oracle.to_json()).map_err(io)?;
        fs::write(dir.join("train.csv"), self.train.to_csv(self.dag.names())).map_err(io)?;
        fs::write(
            dir.join("manifest.json"),
            serde_json::to_string_pretty(&self.manifest).expect("manifest serializes"),
        )
        .map_err(io)?;
        for (k, case) in self.cases.iter().enumerate() {
            fs::write(
                dir.join("cases").join(format!("case_{k}.json")),
                serde_json::to_string_pretty(case).expect("case serializes"),
            )
            .map_err(io)?;
        }
        Ok(())
    }

    /// Reads a bundle directory written by [`Bundle::write`].
    pub fn read(dir: &Path) -> Result<Self, BenchError> {
        let io = |e: std::io::Error| BenchError::Io(e.to_string());
        let manifest: Manifest =
            serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).map_err(io)?)
                .map_err(|e| BenchError::Parse(e.to_string()))?;
        let dag = Dag::from_json(&fs::read_to_string(dir.join("graph.json")).map_err(io)?)
            .map_err(BenchError::Parse)?;
        let oracle =
            OracleScm::from_json(&fs::read_to_string(dir.join("oracle.json")).map_err(io)?)
                .map_err(BenchError::Parse)?;
        let (_, train) =
            SampleMatrix::from_csv(&fs::read_to_string(dir.join("train.csv")).map_err(io)?)
                .map_err(|e| BenchError::Parse(e.to_string()))?;
        let mut cases = Vec::with_capacity(manifest.case_count);
        for k in 0..manifest.case_count {
            let case: TestCase = serde_json::from_str(
                &fs::read_to_string(dir.join("cases").join(format!("case_{k}.json")))
                    .map_err(io)?,
            )
            .map_err(|e| BenchError::Parse(e.to_string()))?;
            cases.push(case);
        }
        Ok(Bundle {
            config: manifest.config.clone(),
            target: manifest.target,
            dag,
            oracle,
            train,
            cases,
            manifest,
        })
    }
}

/// Toy four-variable study bundle: three standard-normal roots feeding one
/// child node through a linear or blended-nonlinear mechanism.
#[derive(Debug, Clone)]
pub struct ToyBundle {
    pub oracle: OracleScm,
    pub train: SampleMatrix,
    pub validation: SampleMatrix,
    pub test: SampleMatrix,
    pub cases: Vec<TestCase>,
}

/// Toy mechanism family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ToyKind {
    Linear,
    Nonlinear,
}

impl ToyKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ToyKind::Linear => "linear",
            ToyKind::Nonlinear => "nonlinear",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "linear" => Some(ToyKind::Linear),
            "nonlinear" => Some(ToyKind::Nonlinear),
            _ => None,
        }
    }
}

/// Builds the toy model and its three sample splits plus 100 unique
/// root-cause test cases (`ε_rc ~ U[3,10]`).
pub fn generate_toy(
    kind: ToyKind,
    noise_var: f64,
    train_n: usize,
    seed: u64,
) -> Result<ToyBundle, BenchError> {
    if noise_var <= 0.0 {
        return Err(BenchError::BadConfig("noise variance must be > 0".into()));
    }
    let dag = Dag::new(4, &[(0, 3), (1, 3), (2, 3)]).expect("static toy graph");
    let mut rng = seeding::stream(seed, &[0x77]);
    let child = match kind {
        ToyKind::Linear => Mechanism::LinearAdditive {
            weights: (0..3).map(|_| rand_normal(&mut rng)).collect(),
        },
        ToyKind::Nonlinear => Mechanism::BlendedNonlinear,
    };
    let oracle = OracleScm::new(
        dag,
        vec![Mechanism::Root, Mechanism::Root, Mechanism::Root, child],
        vec![
            ExogenousSpec::Gaussian { mean: 0.0, var: 1.0 },
            ExogenousSpec::Gaussian { mean: 0.0, var: 1.0 },
            ExogenousSpec::Gaussian { mean: 0.0, var: 1.0 },
            ExogenousSpec::Gaussian {
                mean: 0.0,
                var: noise_var,
            },
        ],
    )?;

    let train = oracle.sample(train_n, seeding::derive(seed, &[1]));
    let validation = oracle.sample(100, seeding::derive(seed, &[2]));

    const CASES: usize = 100;
    let mut case_rng = seeding::stream(seed, &[3]);
    let mut cases = Vec::with_capacity(CASES);
    let mut test_rows = Vec::with_capacity(CASES);
    for k in 0..CASES {
        let culprit = k % 3;
        let mut exog = vec![
            rand_normal(&mut case_rng),
            rand_normal(&mut case_rng),
            rand_normal(&mut case_rng),
            rand_normal(&mut case_rng) * noise_var.sqrt(),
        ];
        exog[culprit] = case_rng.gen_range(3.0..10.0);
        let values = oracle.evaluate_from_exog(&exog);
        test_rows.push(values.clone());
        cases.push(TestCase {
            instance: Instance::observed(values),
            target: 3,
            ground_truth: BTreeSet::from([culprit]),
            exogenous: exog,
            sweep_magnitude: 0.0,
            irrelevant: Vec::new(),
            metadata: CaseMetadata {
                regime: format!("toy-{}", kind.as_str()),
                seed,
                assumption1_satisfied: true,
            },
        });
    }
    Ok(ToyBundle {
        oracle,
        train,
        validation,
        test: SampleMatrix::from_rows(test_rows).expect("toy rows rectangular"),
        cases,
    })
}

/// Standard normal via Box-Muller on the caller's stream.
fn rand_normal(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
