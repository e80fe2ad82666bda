//! Metrics and experiment orchestration.
//!
//! Computes Recall\@k over ranked diagnoses, runs every requested method over
//! a benchmark bundle with shared detectors and fitted model, and produces
//! the toy estimator-error decomposition. Report files are deterministic
//! given seeds; wall-clock timing goes to a separate opt-in file so re-runs
//! stay byte-identical.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anomaly::{AnomalyDetectorSet, Thresholds};
use crate::benchgen::{Bundle, Regime, TestCase, ToyBundle, ToyKind};
use crate::diagnose::{
    baseline_cf_attribution, baseline_circa, baseline_random_walk, baseline_ranked_correlation,
    baseline_smooth_traversal, baseline_traversal, diagnose_idi, diagnose_idi_cf, DiagnoseConfig,
    Diagnosis,
};
use crate::estimate::{estimate_counterfactual, estimate_intervention, FixAssignment};
use crate::fitting::{FitError, FittedScm, RegressorSpec};
use crate::floats;
use crate::scm::{ExogenousSpec, OracleScm};
use crate::seeding;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("ground-truth set is empty")]
    EmptyTruth,
    #[error("k must be >= 1")]
    BadK,
    #[error("unknown method {0:?}")]
    UnknownMethod(String),
    #[error("method {0} is reserved for an external adapter and not implemented here")]
    ReservedMethod(String),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error("anomaly: {0}")]
    Anomaly(String),
    #[error("bench: {0}")]
    Bench(String),
    #[error("io: {0}")]
    Io(String),
}

/// Fraction of ground-truth nodes inside the first `|truth| + k − 1` ranked
/// predictions. Rankings shorter than the window are evaluated as-is.
pub fn recall_at_k(ranking: &[usize], truth: &BTreeSet<usize>, k: usize) -> Result<f64, EvalError> {
    if truth.is_empty() {
        return Err(EvalError::EmptyTruth);
    }
    if k == 0 {
        return Err(EvalError::BadK);
    }
    let window = truth.len() + k - 1;
    let hits = ranking
        .iter()
        .take(window)
        .filter(|n| truth.contains(n))
        .count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Diagnosis methods the harness can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Idi,
    IdiCf,
    Traversal,
    Smooth,
    Circa,
    Corr,
    Walk,
    CfAttr,
}

/// Method names reserved for published third-party systems; accepted by the
/// parser but rejected with a dedicated error.
pub const RESERVED_METHODS: [&str; 4] = ["hrcd", "toca", "epsilon", "sage"];

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Idi,
        Method::IdiCf,
        Method::Traversal,
        Method::Smooth,
        Method::Circa,
        Method::Corr,
        Method::Walk,
        Method::CfAttr,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Idi => "idi",
            Method::IdiCf => "idi-cf",
            Method::Traversal => "traversal",
            Method::Smooth => "smooth",
            Method::Circa => "circa",
            Method::Corr => "corr",
            Method::Walk => "walk",
            Method::CfAttr => "cfattr",
        }
    }

    pub fn parse(s: &str) -> Result<Method, EvalError> {
        match s {
            "idi" => Ok(Method::Idi),
            "idi-cf" => Ok(Method::IdiCf),
            "traversal" => Ok(Method::Traversal),
            "smooth" => Ok(Method::Smooth),
            "circa" => Ok(Method::Circa),
            "corr" => Ok(Method::Corr),
            "walk" => Ok(Method::Walk),
            "cfattr" => Ok(Method::CfAttr),
            other if RESERVED_METHODS.contains(&other) => {
                Err(EvalError::ReservedMethod(other.to_string()))
            }
            other => Err(EvalError::UnknownMethod(other.to_string())),
        }
    }
}

/// Harness configuration for one bundle run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Diagnosis-time detector threshold.
    #[serde(with = "floats::f64_dec")]
    pub tau: f64,
    /// Overrides the regime-implied regressor family when set.
    pub regressor: Option<RegressorSpec>,
    #[serde(with = "floats::f64_dec")]
    pub validation_fraction: f64,
    pub fit_seed: u64,
    pub diagnose: DiagnoseConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            tau: 3.0,
            regressor: None,
            validation_fraction: 0.25,
            fit_seed: 0,
            diagnose: DiagnoseConfig::default(),
        }
    }
}

/// One method's outcome on one case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseOutcome {
    pub case: usize,
    pub method: String,
    #[serde(with = "floats::f64_dec")]
    pub recall_at_1: f64,
    #[serde(with = "floats::f64_dec")]
    pub recall_at_3: f64,
    pub ranked: Vec<usize>,
    pub degraded: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Aggregated per-method metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    #[serde(with = "floats::f64_dec")]
    pub recall_at_1: f64,
    #[serde(with = "floats::f64_dec")]
    pub recall_at_3: f64,
    pub cases: usize,
    pub failures: usize,
}

/// Wall-clock statistics, kept apart from the deterministic report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodTiming {
    pub method: String,
    pub mean_secs: f64,
    pub std_secs: f64,
    pub diagnoses: usize,
}

/// Full experiment result for one bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub label: String,
    pub tau: String,
    pub summaries: Vec<MethodSummary>,
    pub outcomes: Vec<CaseOutcome>,
    /// Not serialized into report.json; exported via `timings.csv` on demand.
    #[serde(skip)]
    pub timings: Vec<MethodTiming>,
}

fn run_method(
    method: Method,
    bundle: &Bundle,
    fitted: &FittedScm,
    det: &AnomalyDetectorSet,
    case: &TestCase,
    diag_cfg: &DiagnoseConfig,
) -> Result<Diagnosis, String> {
    let x = &case.instance;
    let t = case.target;
    let run = match method {
        Method::Idi => diagnose_idi(fitted, det, x, t, diag_cfg),
        Method::IdiCf => diagnose_idi_cf(fitted, det, x, t, diag_cfg),
        Method::Traversal => baseline_traversal(&bundle.dag, det, x, t),
        Method::Smooth => baseline_smooth_traversal(&bundle.dag, det, x, t),
        Method::Circa => baseline_circa(&bundle.dag, det, x, t),
        Method::Corr => baseline_ranked_correlation(&bundle.train, &bundle.dag, det, x, t),
        Method::Walk => baseline_random_walk(&bundle.dag, det, x, t, diag_cfg),
        Method::CfAttr => baseline_cf_attribution(fitted, det, x, t, diag_cfg),
    };
    run.map_err(|e| e.to_string())
}

/// The regressor family a bundle's regime calls for.
pub fn regressor_for_regime(regime: Regime) -> RegressorSpec {
    match regime {
        Regime::Linear => RegressorSpec::LinearClosedForm,
        Regime::MlpAdd | Regime::MlpExog => RegressorSpec::default_mlp(),
    }
}

/// Fits the bundle's model and detectors, then runs every method over every
/// case. A method failure on a case is recorded as recall 0 with an error
/// note and the run continues.
pub fn run_experiment(
    bundle: &Bundle,
    methods: &[Method],
    cfg: &RunConfig,
) -> Result<ExperimentReport, EvalError> {
    let spec = cfg
        .regressor
        .clone()
        .unwrap_or_else(|| regressor_for_regime(bundle.config.regime));
    let fitted = FittedScm::fit(
        &bundle.train,
        &bundle.dag,
        &spec,
        cfg.validation_fraction,
        cfg.fit_seed,
    )?;
    let det = AnomalyDetectorSet::train(&bundle.train, &Thresholds::Scalar(cfg.tau))
        .map_err(|e| EvalError::Anomaly(e.to_string()))?;

    let mut outcomes = Vec::new();
    let mut walltimes: Vec<(Method, f64)> = Vec::new();
    for (case_idx, case) in bundle.cases.iter().enumerate() {
        for &method in methods {
            let diag_cfg = DiagnoseConfig {
                seed: seeding::derive(cfg.diagnose.seed, &[case_idx as u64]),
                ..cfg.diagnose.clone()
            };
            let started = Instant::now();
            let result = run_method(method, bundle, &fitted, &det, case, &diag_cfg);
            let elapsed = started.elapsed().as_secs_f64();
            walltimes.push((method, elapsed));
            let outcome = match result {
                Ok(diagnosis) => {
                    let ranking = diagnosis.ranking();
                    CaseOutcome {
                        case: case_idx,
                        method: method.as_str().to_string(),
                        recall_at_1: recall_at_k(&ranking, &case.ground_truth, 1)?,
                        recall_at_3: recall_at_k(&ranking, &case.ground_truth, 3)?,
                        ranked: ranking,
                        degraded: diagnosis.degraded,
                        error: None,
                    }
                }
                Err(message) => CaseOutcome {
                    case: case_idx,
                    method: method.as_str().to_string(),
                    recall_at_1: 0.0,
                    recall_at_3: 0.0,
                    ranked: Vec::new(),
                    degraded: true,
                    error: Some(message),
                },
            };
            outcomes.push(outcome);
        }
    }

    let mut summaries = Vec::new();
    let mut timings = Vec::new();
    for &method in methods {
        let name = method.as_str();
        let rows: Vec<&CaseOutcome> = outcomes.iter().filter(|o| o.method == name).collect();
        let n = rows.len().max(1) as f64;
        summaries.push(MethodSummary {
            method: name.to_string(),
            recall_at_1: rows.iter().map(|o| o.recall_at_1).sum::<f64>() / n,
            recall_at_3: rows.iter().map(|o| o.recall_at_3).sum::<f64>() / n,
            cases: rows.len(),
            failures: rows.iter().filter(|o| o.error.is_some()).count(),
        });
        let times: Vec<f64> = walltimes
            .iter()
            .filter(|(m, _)| *m == method)
            .map(|&(_, t)| t)
            .collect();
        let mean = times.iter().sum::<f64>() / times.len().max(1) as f64;
        let var =
            times.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / times.len().max(1) as f64;
        timings.push(MethodTiming {
            method: name.to_string(),
            mean_secs: mean,
            std_secs: var.sqrt(),
            diagnoses: times.len(),
        });
    }

    Ok(ExperimentReport {
        label: format!(
            "{}-{}",
            bundle.config.regime.as_str(),
            match bundle.config.multiplicity {
                crate::benchgen::Multiplicity::Unique => "unique",
                crate::benchgen::Multiplicity::Multiple { .. } => "multiple",
            }
        ),
        tau: floats::to_decimal(cfg.tau),
        summaries,
        outcomes,
        timings,
    })
}

impl ExperimentReport {
    /// `method,config,k,recall` rows.
    pub fn recall_csv(&self) -> String {
        let mut out = String::from("method,config,k,recall\n");
        for s in &self.summaries {
            out.push_str(&format!(
                "{},{},1,{}\n",
                s.method,
                self.label,
                floats::to_decimal(s.recall_at_1)
            ));
            out.push_str(&format!(
                "{},{},3,{}\n",
                s.method,
                self.label,
                floats::to_decimal(s.recall_at_3)
            ));
        }
        out
    }

    /// `method,mean_secs,std_secs,diagnoses` rows (non-deterministic).
    pub fn timings_csv(&self) -> String {
        let mut out = String::from("method,mean_secs,std_secs,diagnoses\n");
        for t in &self.timings {
            out.push_str(&format!(
                "{},{:.6},{:.6},{}\n",
                t.method, t.mean_secs, t.std_secs, t.diagnoses
            ));
        }
        out
    }

    /// Writes `report.json` and `recall.csv`; adds `timings.csv` on request.
    pub fn write_files(&self, dir: &Path, include_timings: bool) -> Result<(), EvalError> {
        let io = |e: std::io::Error| EvalError::Io(e.to_string());
        fs::create_dir_all(dir).map_err(io)?;
        fs::write(
            dir.join("report.json"),
            serde_json::to_string_pretty(self).expect("report serializes"),
        )
        .map_err(io)?;
        fs::write(dir.join("recall.csv"), self.recall_csv()).map_err(io)?;
        if include_timings {
            fs::write(dir.join("timings.csv"), self.timings_csv()).map_err(io)?;
        }
        Ok(())
    }
}

/// Estimator error decomposition on one toy bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyErrors {
    pub train_n: usize,
    #[serde(with = "floats::f64_dec")]
    pub noise_var: f64,
    /// `|f − f̂|²` on in-distribution validation inputs.
    #[serde(with = "floats::f64_dec")]
    pub validation_mse: f64,
    /// `|f − f̂|²` on root-cause (out-of-distribution) inputs.
    #[serde(with = "floats::f64_dec")]
    pub test_rc_mse: f64,
    /// `|x^CF − x̂^CF|²` at the target.
    #[serde(with = "floats::f64_dec")]
    pub cf_mse: f64,
    /// `|x^CF − x̂^int|²` at the target, averaged over the sample budget.
    #[serde(with = "floats::f64_dec")]
    pub int_mse: f64,
}

/// Compares fitted-model counterfactual and interventional estimates against
/// the oracle counterfactual on the toy bundle. One fix per case, drawn from
/// `fix_spec`.
pub fn toy_errors(
    oracle: &OracleScm,
    fitted: &FittedScm,
    bundle: &ToyBundle,
    fix_spec: &ExogenousSpec,
    int_samples: usize,
    seed: u64,
) -> Result<ToyErrors, EvalError> {
    let target = 3usize;
    let noise_free = |values: &[f64]| {
        let pa = [values[0], values[1], values[2]];
        oracle.mechanisms[target].evaluate(&pa, 0.0)
    };

    let prediction_mse = |rows: &crate::fitting::SampleMatrix| {
        let mut acc = 0.0;
        for r in 0..rows.rows() {
            let row = rows.row(r);
            let truth = noise_free(row);
            let predicted = fitted
                .predict(target, &row[..3])
                .expect("toy regressor arity");
            acc += (truth - predicted) * (truth - predicted);
        }
        acc / rows.rows().max(1) as f64
    };
    let validation_mse = prediction_mse(&bundle.validation);
    let test_rc_mse = prediction_mse(&bundle.test);

    let mut rng = seeding::stream(seed, &[0x66]);
    let mut cf_acc = 0.0;
    let mut int_acc = 0.0;
    for case in &bundle.cases {
        let &culprit = case.ground_truth.iter().next().expect("unique root cause");
        let fix = fix_spec.sample(&mut rng);
        let fixes = FixAssignment::single(culprit, fix);
        let truth = oracle
            .oracle_counterfactual(&case.instance, &case.exogenous, &fixes)
            .map_err(|e| EvalError::Bench(e.to_string()))?
            .values[target];
        let cf_hat = estimate_counterfactual(fitted, &case.instance, &fixes).values[target];
        cf_acc += (truth - cf_hat) * (truth - cf_hat);
        let draws = estimate_intervention(fitted, &case.instance, &fixes, int_samples, &mut rng);
        let mean_sq = draws
            .iter()
            .map(|d| (truth - d.values[target]) * (truth - d.values[target]))
            .sum::<f64>()
            / draws.len() as f64;
        int_acc += mean_sq;
    }
    let n = bundle.cases.len().max(1) as f64;
    Ok(ToyErrors {
        train_n: bundle.train.rows(),
        noise_var: match oracle.exogenous[target] {
            ExogenousSpec::Gaussian { var, .. } => var,
            _ => f64::NAN,
        },
        validation_mse,
        test_rc_mse,
        cf_mse: cf_acc / n,
        int_mse: int_acc / n,
    })
}

/// Grid driver over toy train sizes and noise variances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyStudyConfig {
    pub kind: ToyKind,
    pub variances: Vec<f64>,
    pub sizes: Vec<usize>,
    pub seed: u64,
    pub intervention_samples: usize,
    /// Use the oracle's own structural function instead of fitting (isolates
    /// estimator error from fit error).
    pub inject_oracle_regressor: bool,
    /// Overrides the kind-implied regressor family when set.
    pub regressor: Option<RegressorSpec>,
}

impl Default for ToyStudyConfig {
    fn default() -> Self {
        Self {
            kind: ToyKind::Nonlinear,
            variances: vec![0.5, 1.0, 2.0, 5.0],
            sizes: vec![25, 50, 100, 1000],
            seed: 0,
            intervention_samples: 10,
            inject_oracle_regressor: false,
            regressor: None,
        }
    }
}

/// Full toy study: one [`ToyErrors`] cell per (size, variance) pair.
pub fn run_toy_study(cfg: &ToyStudyConfig) -> Result<Vec<ToyErrors>, EvalError> {
    let mut cells = Vec::new();
    for (vi, &var) in cfg.variances.iter().enumerate() {
        for (si, &size) in cfg.sizes.iter().enumerate() {
            let seed = seeding::derive(cfg.seed, &[vi as u64, si as u64]);
            let bundle = crate::benchgen::generate_toy(cfg.kind, var, size, seed)
                .map_err(|e| EvalError::Bench(e.to_string()))?;
            let fitted = if cfg.inject_oracle_regressor {
                FittedScm::from_oracle(&bundle.oracle, 100, seeding::derive(seed, &[9]))?
            } else {
                let spec = cfg.regressor.clone().unwrap_or(match cfg.kind {
                    ToyKind::Linear => RegressorSpec::LinearClosedForm,
                    ToyKind::Nonlinear => RegressorSpec::default_mlp(),
                });
                FittedScm::fit_split(
                    &bundle.train,
                    &bundle.validation,
                    &bundle.oracle.dag,
                    &spec,
                    seeding::derive(seed, &[8]),
                )?
            };
            cells.push(toy_errors(
                &bundle.oracle,
                &fitted,
                &bundle,
                &ExogenousSpec::Gaussian { mean: 0.0, var: 1.0 },
                cfg.intervention_samples,
                seeding::derive(seed, &[7]),
            )?);
        }
    }
    Ok(cells)
}

/// `train_n,noise_var,validation_mse,test_rc_mse,cf_mse,int_mse` rows.
pub fn toy_errors_csv(cells: &[ToyErrors]) -> String {
    let mut out = String::from("train_n,noise_var,validation_mse,test_rc_mse,cf_mse,int_mse\n");
    for c in cells {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            c.train_n,
            floats::to_decimal(c.noise_var),
            floats::to_decimal(c.validation_mse),
            floats::to_decimal(c.test_rc_mse),
            floats::to_decimal(c.cf_mse),
            floats::to_decimal(c.int_mse),
        ));
    }
    out
}

/// Writes `toy_errors.csv` plus one plot-data series file per variance
/// (x = train size, one column per error kind).
pub fn write_toy_files(cells: &[ToyErrors], dir: &Path) -> Result<(), EvalError> {
    let io = |e: std::io::Error| EvalError::Io(e.to_string());
    fs::create_dir_all(dir.join("plotdata")).map_err(io)?;
    fs::write(dir.join("toy_errors.csv"), toy_errors_csv(cells)).map_err(io)?;
    let mut variances: Vec<f64> = cells.iter().map(|c| c.noise_var).collect();
    variances.sort_by(f64::total_cmp);
    variances.dedup();
    for var in variances {
        let mut rows: Vec<&ToyErrors> = cells.iter().filter(|c| c.noise_var == var).collect();
        rows.sort_by_key(|c| c.train_n);
        let mut out = String::from("train_n,validation,test_rc,cf,interventional\n");
        for c in rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                c.train_n,
                floats::to_decimal(c.validation_mse),
                floats::to_decimal(c.test_rc_mse),
                floats::to_decimal(c.cf_mse),
                floats::to_decimal(c.int_mse),
            ));
        }
        fs::write(
            dir.join("plotdata")
                .join(format!("toy_errors_var{}.csv", floats::to_decimal(var))),
            out,
        )
        .map_err(io)?;
    }
    Ok(())
}
