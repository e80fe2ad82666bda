//! Learning an additive-noise model from historical samples and a known DAG.
//!
//! Each node gets a regressor `f̂_i : pa(i) → x_i` (closed-form least squares
//! or a small MLP) plus an empirical residual bank `x_i − f̂_i(pa_i)` computed
//! on held-out validation rows. Root nodes get a constant (mean) predictor so
//! every node owns a bank representing its marginal.
//!
//! The train/validation split is content-based: rows are placed in a
//! canonical order (lexicographic by value) before the seeded shuffle, so the
//! fit is invariant to the order rows arrive in.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anomaly::AnomalyDetectorSet;
use crate::floats;
use crate::graph::Dag;
use crate::mlp::{Activation, Mlp, MlpError, TrainConfig};
use crate::scm::{Mechanism, OracleScm};
use crate::seeding;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("need at least 4 rows to fit, got {got}")]
    NotEnoughRows { got: usize },
    #[error("validation fraction must lie in (0,1), got {got}")]
    BadValidationFraction { got: f64 },
    #[error("validation split leaves no rows on one side ({train} train / {val} validation)")]
    DegenerateSplit { train: usize, val: usize },
    #[error("row {row} has {got} columns, expected {expected}")]
    RaggedRow {
        row: usize,
        expected: usize,
        got: usize,
    },
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("data has {got} columns but the graph has {expected} nodes")]
    ColumnCountMismatch { expected: usize, got: usize },
    #[error("node {node}: expected {expected} parent values, got {got}")]
    ArityMismatch {
        node: usize,
        expected: usize,
        got: usize,
    },
    #[error("invalid regressor spec: {0}")]
    BadSpec(String),
    #[error("node {node}: {source}")]
    Training { node: usize, source: MlpError },
    #[error("cannot parse cell at row {row}, column {col} ({name}): {value:?}")]
    CsvCell {
        row: usize,
        col: usize,
        name: String,
        value: String,
    },
    #[error("csv: {0}")]
    Csv(String),
    #[error("oracle mechanism at node {node} has no additive regressor form")]
    UnsupportedOracleMechanism { node: usize },
}

/// Row-major matrix of observations; column `i` holds node `i`'s KPI values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMatrix {
    rows: usize,
    cols: usize,
    #[serde(with = "floats::vec_f64_dec")]
    values: Vec<f64>,
}

impl SampleMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self, FitError> {
        if values.len() != rows * cols {
            return Err(FitError::RaggedRow {
                row: rows,
                expected: rows * cols,
                got: values.len(),
            });
        }
        for (k, v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(FitError::NonFinite {
                    row: k / cols,
                    col: k % cols,
                });
            }
        }
        Ok(Self { rows, cols, values })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, FitError> {
        let n = rows.len();
        let cols = rows.first().map(Vec::len).unwrap_or(0);
        let mut values = Vec::with_capacity(n * cols);
        for (r, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(FitError::RaggedRow {
                    row: r,
                    expected: cols,
                    got: row.len(),
                });
            }
            values.extend_from_slice(row);
        }
        Self::new(n, cols, values)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.values[r * self.cols + c]).collect()
    }

    /// CSV with a header row of column names; floats in shortest round-trip
    /// decimal form.
    pub fn to_csv(&self, names: &[String]) -> String {
        let mut out = names.join(",");
        out.push('\n');
        for r in 0..self.rows {
            let line: Vec<String> = self.row(r).iter().map(|v| floats::to_decimal(*v)).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    /// Parses CSV with a header row; bad cells are reported with their
    /// row/column coordinates and column name.
    pub fn from_csv(text: &str) -> Result<(Vec<String>, Self), FitError> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let names: Vec<String> = reader
            .headers()
            .map_err(|e| FitError::Csv(e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for (r, record) in reader.records().enumerate() {
            let record = record.map_err(|e| FitError::Csv(e.to_string()))?;
            let mut row = Vec::with_capacity(names.len());
            for (c, cell) in record.iter().enumerate() {
                let v = floats::from_decimal(cell).map_err(|_| FitError::CsvCell {
                    row: r,
                    col: c,
                    name: names.get(c).cloned().unwrap_or_default(),
                    value: cell.to_string(),
                })?;
                row.push(v);
            }
            if row.len() != names.len() {
                return Err(FitError::RaggedRow {
                    row: r,
                    expected: names.len(),
                    got: row.len(),
                });
            }
            rows.push(row);
        }
        Ok((names, Self::from_rows(rows)?))
    }
}

/// Which regressor family to fit per node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegressorSpec {
    /// Ordinary least squares with an intercept, solved in closed form.
    LinearClosedForm,
    /// Small MLP trained by full-batch gradient descent on squared error.
    Mlp {
        hidden_width: usize,
        epochs: usize,
        #[serde(with = "floats::f64_dec")]
        learning_rate: f64,
        activation: Activation,
    },
}

impl RegressorSpec {
    /// The architecture used for learned models unless configured otherwise.
    pub fn default_mlp() -> Self {
        RegressorSpec::Mlp {
            hidden_width: 10,
            epochs: 2000,
            learning_rate: 1e-2,
            activation: Activation::Relu,
        }
    }

    fn validate(&self) -> Result<(), FitError> {
        if let RegressorSpec::Mlp {
            hidden_width,
            epochs,
            learning_rate,
            ..
        } = self
        {
            if *hidden_width < 1 {
                return Err(FitError::BadSpec("hidden_width must be >= 1".into()));
            }
            if *epochs < 1 {
                return Err(FitError::BadSpec("epochs must be >= 1".into()));
            }
            if *learning_rate <= 0.0 {
                return Err(FitError::BadSpec("learning_rate must be > 0".into()));
            }
        }
        Ok(())
    }
}

/// A learned per-node function of the node's parents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Regressor {
    /// Parentless nodes predict their training mean.
    Constant {
        #[serde(with = "floats::f64_dec")]
        mean: f64,
    },
    Linear {
        #[serde(with = "floats::vec_f64_dec")]
        weights: Vec<f64>,
        #[serde(with = "floats::f64_dec")]
        intercept: f64,
        /// Set when the normal equations were singular and the minimum-norm
        /// solution was used instead.
        min_norm_fallback: bool,
    },
    /// MLP over standardised inputs; prediction is de-standardised.
    Mlp {
        mlp: Mlp,
        #[serde(with = "floats::vec_f64_dec")]
        input_mean: Vec<f64>,
        #[serde(with = "floats::vec_f64_dec")]
        input_std: Vec<f64>,
        #[serde(with = "floats::f64_dec")]
        target_mean: f64,
        #[serde(with = "floats::f64_dec")]
        target_std: f64,
    },
    /// Closed-form `(sin pa₀ + √|pa₁| + exp(−pa₂)) / 3`, for oracle-injected
    /// regressors in error studies.
    Blended,
}

impl Regressor {
    fn arity(&self) -> Option<usize> {
        match self {
            Regressor::Constant { .. } => Some(0),
            Regressor::Linear { weights, .. } => Some(weights.len()),
            Regressor::Mlp { mlp, .. } => Some(mlp.input_dim()),
            Regressor::Blended => Some(3),
        }
    }

    fn evaluate(&self, pa: &[f64]) -> f64 {
        match self {
            Regressor::Constant { mean } => *mean,
            Regressor::Linear {
                weights, intercept, ..
            } => {
                let mut acc = *intercept;
                for (w, p) in weights.iter().zip(pa) {
                    acc += w * p;
                }
                acc
            }
            Regressor::Mlp {
                mlp,
                input_mean,
                input_std,
                target_mean,
                target_std,
            } => {
                let std_input: Vec<f64> = pa
                    .iter()
                    .zip(input_mean.iter().zip(input_std))
                    .map(|(v, (m, s))| (v - m) / s)
                    .collect();
                mlp.forward(&std_input).expect("arity checked") * target_std + target_mean
            }
            Regressor::Blended => (pa[0].sin() + pa[1].abs().sqrt() + (-pa[2]).exp()) / 3.0,
        }
    }
}

/// Per-node fit diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeFitReport {
    pub node: usize,
    #[serde(with = "floats::f64_dec")]
    pub train_mse: f64,
    #[serde(with = "floats::f64_dec")]
    pub val_mse: f64,
    pub bank_size: usize,
    pub min_norm_fallback: bool,
}

/// Learned additive-noise model: per-node regressor plus residual bank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedScm {
    pub dag: Dag,
    pub regressors: Vec<Regressor>,
    #[serde(with = "floats::mat_f64_dec")]
    pub residual_banks: Vec<Vec<f64>>,
    pub fit_report: Vec<NodeFitReport>,
}

/// Fitted model plus its anomaly detectors, as stored in `model.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub fitted: FittedScm,
    pub detectors: AnomalyDetectorSet,
}

impl ModelBundle {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        serde_json::from_str(text).map_err(|e| e.to_string())
    }
}

/// Canonical row order: lexicographic by value (total order on floats), so
/// the split and every accumulated sum are independent of input row order.
fn canonical_row_order(data: &SampleMatrix) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..data.rows()).collect();
    idx.sort_by(|&a, &b| {
        for (x, y) in data.row(a).iter().zip(data.row(b)) {
            match x.total_cmp(y) {
                Ordering::Equal => continue,
                other => return other,
            }
        }
        Ordering::Equal
    });
    idx
}

fn mean_squared_error(pred: &[f64], truth: &[f64]) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    pred.iter()
        .zip(truth)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / pred.len() as f64
}

/// Fits one node's regressor on the training rows.
fn fit_node(
    node: usize,
    parents: &[usize],
    data: &SampleMatrix,
    train_rows: &[usize],
    spec: &RegressorSpec,
    seed: u64,
) -> Result<Regressor, FitError> {
    if parents.is_empty() {
        let mean =
            train_rows.iter().map(|&r| data.row(r)[node]).sum::<f64>() / train_rows.len() as f64;
        return Ok(Regressor::Constant { mean });
    }
    match spec {
        RegressorSpec::LinearClosedForm => {
            fit_linear(node, parents, data, train_rows)
        }
        RegressorSpec::Mlp {
            hidden_width,
            epochs,
            learning_rate,
            activation,
        } => fit_mlp(
            node,
            parents,
            data,
            train_rows,
            *hidden_width,
            *epochs,
            *learning_rate,
            *activation,
            seed,
        ),
    }
}

/// Normal equations with an intercept. Entries are accumulated in canonical
/// row order so identical row multisets give identical sums. Singular systems
/// fall back to the minimum-norm (pseudo-inverse) solution.
fn fit_linear(
    node: usize,
    parents: &[usize],
    data: &SampleMatrix,
    train_rows: &[usize],
) -> Result<Regressor, FitError> {
    let _ = node;
    let p = parents.len();
    let dim = p + 1; // intercept last
    let mut gram = DMatrix::<f64>::zeros(dim, dim);
    let mut moment = DVector::<f64>::zeros(dim);
    let mut feat = vec![0.0; dim];
    for &r in train_rows {
        let row = data.row(r);
        for (k, &pa) in parents.iter().enumerate() {
            feat[k] = row[pa];
        }
        feat[p] = 1.0;
        for a in 0..dim {
            for b in a..dim {
                gram[(a, b)] += feat[a] * feat[b];
            }
            moment[a] += feat[a] * row[node];
        }
    }
    for a in 0..dim {
        for b in 0..a {
            gram[(a, b)] = gram[(b, a)];
        }
    }

    // Rank-revealing solve: singular values below the relative cutoff are
    // dropped, which yields the minimum-norm solution on rank deficiency.
    let svd = gram.svd(true, true);
    let sigma_max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let eps = 1e-10 * sigma_max.max(1e-300);
    let fallback = svd.singular_values.iter().any(|&s| s <= eps);
    let solution = svd
        .solve(&moment, eps)
        .map_err(|e| FitError::BadSpec(e.to_string()))?;
    Ok(Regressor::Linear {
        weights: solution.as_slice()[..p].to_vec(),
        intercept: solution[p],
        min_norm_fallback: fallback,
    })
}

#[allow(clippy::too_many_arguments)]
fn fit_mlp(
    node: usize,
    parents: &[usize],
    data: &SampleMatrix,
    train_rows: &[usize],
    hidden: usize,
    epochs: usize,
    learning_rate: f64,
    activation: Activation,
    seed: u64,
) -> Result<Regressor, FitError> {
    let p = parents.len();
    let n = train_rows.len() as f64;
    let mut input_mean = vec![0.0; p];
    let mut target_mean = 0.0;
    for &r in train_rows {
        let row = data.row(r);
        for (k, &pa) in parents.iter().enumerate() {
            input_mean[k] += row[pa] / n;
        }
        target_mean += row[node] / n;
    }
    let mut input_std = vec![0.0; p];
    let mut target_std = 0.0;
    for &r in train_rows {
        let row = data.row(r);
        for (k, &pa) in parents.iter().enumerate() {
            let d = row[pa] - input_mean[k];
            input_std[k] += d * d / n;
        }
        let d = row[node] - target_mean;
        target_std += d * d / n;
    }
    for s in input_std.iter_mut() {
        *s = s.sqrt().max(1e-12);
    }
    let target_std = target_std.sqrt().max(1e-12);

    let inputs: Vec<Vec<f64>> = train_rows
        .iter()
        .map(|&r| {
            let row = data.row(r);
            parents
                .iter()
                .enumerate()
                .map(|(k, &pa)| (row[pa] - input_mean[k]) / input_std[k])
                .collect()
        })
        .collect();
    let targets: Vec<f64> = train_rows
        .iter()
        .map(|&r| (data.row(r)[node] - target_mean) / target_std)
        .collect();

    let mut rng = seeding::rng(seed);
    let mut mlp = Mlp::xavier(p, hidden, activation, &mut rng);
    mlp.train(
        &inputs,
        &targets,
        &TrainConfig {
            epochs,
            learning_rate,
            plateau_patience: 100,
        },
    )
    .map_err(|source| FitError::Training { node, source })?;

    Ok(Regressor::Mlp {
        mlp,
        input_mean,
        input_std,
        target_mean,
        target_std,
    })
}

impl FittedScm {
    /// Fits every node's regressor and residual bank.
    ///
    /// Rows are split into train/validation by a seeded shuffle of the
    /// canonical row order; banks and validation errors come from the
    /// held-out rows only.
    pub fn fit(
        data: &SampleMatrix,
        dag: &Dag,
        spec: &RegressorSpec,
        validation_fraction: f64,
        seed: u64,
    ) -> Result<Self, FitError> {
        if data.rows() < 4 {
            return Err(FitError::NotEnoughRows { got: data.rows() });
        }
        if !(validation_fraction > 0.0 && validation_fraction < 1.0) {
            return Err(FitError::BadValidationFraction {
                got: validation_fraction,
            });
        }
        let mut order = canonical_row_order(data);
        let mut rng = seeding::stream(seed, &[0]);
        // Fisher-Yates over canonical positions.
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let n_val = ((data.rows() as f64 * validation_fraction).round() as usize)
            .clamp(1, data.rows() - 1);
        let (val_rows, train_rows) = order.split_at(n_val);
        Self::fit_rows(data, dag, spec, train_rows, val_rows, seed)
    }

    /// Fits on an explicit pair of datasets: regressors from `train`, banks
    /// and validation errors from `validation`.
    pub fn fit_split(
        train: &SampleMatrix,
        validation: &SampleMatrix,
        dag: &Dag,
        spec: &RegressorSpec,
        seed: u64,
    ) -> Result<Self, FitError> {
        if train.cols() != validation.cols() {
            return Err(FitError::ColumnCountMismatch {
                expected: train.cols(),
                got: validation.cols(),
            });
        }
        let mut rows: Vec<Vec<f64>> = (0..train.rows()).map(|r| train.row(r).to_vec()).collect();
        rows.extend((0..validation.rows()).map(|r| validation.row(r).to_vec()));
        let combined = SampleMatrix::from_rows(rows)?;
        let train_rows: Vec<usize> = (0..train.rows()).collect();
        let val_rows: Vec<usize> =
            (train.rows()..train.rows() + validation.rows()).collect();
        Self::fit_rows(&combined, dag, spec, &train_rows, &val_rows, seed)
    }

    fn fit_rows(
        data: &SampleMatrix,
        dag: &Dag,
        spec: &RegressorSpec,
        train_rows: &[usize],
        val_rows: &[usize],
        seed: u64,
    ) -> Result<Self, FitError> {
        spec.validate()?;
        if data.cols() != dag.node_count() {
            return Err(FitError::ColumnCountMismatch {
                expected: dag.node_count(),
                got: data.cols(),
            });
        }
        if train_rows.is_empty() || val_rows.is_empty() {
            return Err(FitError::DegenerateSplit {
                train: train_rows.len(),
                val: val_rows.len(),
            });
        }
        let mut train_rows = train_rows.to_vec();
        let mut val_rows = val_rows.to_vec();
        // Canonical evaluation order inside each side.
        train_rows.sort_by(|&a, &b| compare_rows(data, a, b));
        val_rows.sort_by(|&a, &b| compare_rows(data, a, b));

        let mut regressors = Vec::with_capacity(dag.node_count());
        let mut residual_banks = Vec::with_capacity(dag.node_count());
        let mut fit_report = Vec::with_capacity(dag.node_count());
        for node in 0..dag.node_count() {
            let parents = dag.parents(node).expect("index in range");
            let node_seed = seeding::derive(seed, &[1, node as u64]);
            let regressor = fit_node(node, parents, data, &train_rows, spec, node_seed)?;

            let residuals_on = |rows: &[usize]| -> (Vec<f64>, Vec<f64>) {
                let mut pred = Vec::with_capacity(rows.len());
                let mut truth = Vec::with_capacity(rows.len());
                let mut buf = Vec::with_capacity(parents.len());
                for &r in rows {
                    let row = data.row(r);
                    buf.clear();
                    buf.extend(parents.iter().map(|&p| row[p]));
                    pred.push(regressor.evaluate(&buf));
                    truth.push(row[node]);
                }
                (pred, truth)
            };
            let (train_pred, train_truth) = residuals_on(&train_rows);
            let (val_pred, val_truth) = residuals_on(&val_rows);
            let bank: Vec<f64> = val_pred
                .iter()
                .zip(&val_truth)
                .map(|(p, t)| t - p)
                .collect();
            let min_norm_fallback =
                matches!(regressor, Regressor::Linear { min_norm_fallback: true, .. });
            fit_report.push(NodeFitReport {
                node,
                train_mse: mean_squared_error(&train_pred, &train_truth),
                val_mse: mean_squared_error(&val_pred, &val_truth),
                bank_size: bank.len(),
                min_norm_fallback,
            });
            residual_banks.push(bank);
            regressors.push(regressor);
        }
        Ok(Self {
            dag: dag.clone(),
            regressors,
            residual_banks,
            fit_report,
        })
    }

    /// Builds a fitted model whose regressors are the oracle's own structural
    /// functions and whose banks are fresh draws from the true exogenous
    /// distributions (centred for root nodes). Used by error studies that
    /// isolate estimator error from fit error.
    pub fn from_oracle(oracle: &OracleScm, bank_size: usize, seed: u64) -> Result<Self, FitError> {
        let n = oracle.node_count();
        let mut regressors = Vec::with_capacity(n);
        let mut residual_banks = Vec::with_capacity(n);
        let mut fit_report = Vec::with_capacity(n);
        for node in 0..n {
            let spec = &oracle.exogenous[node];
            let regressor = match &oracle.mechanisms[node] {
                Mechanism::Root => Regressor::Constant { mean: spec.mean() },
                Mechanism::LinearAdditive { weights } => Regressor::Linear {
                    weights: weights.clone(),
                    intercept: 0.0,
                    min_norm_fallback: false,
                },
                Mechanism::MlpAdditive { mlp } => Regressor::Mlp {
                    mlp: mlp.clone(),
                    input_mean: vec![0.0; mlp.input_dim()],
                    input_std: vec![1.0; mlp.input_dim()],
                    target_mean: 0.0,
                    target_std: 1.0,
                },
                Mechanism::BlendedNonlinear => Regressor::Blended,
                Mechanism::MlpExogInput { .. } => {
                    return Err(FitError::UnsupportedOracleMechanism { node })
                }
            };
            let centre = if matches!(regressor, Regressor::Constant { .. }) {
                spec.mean()
            } else {
                0.0
            };
            let mut rng = seeding::stream(seed, &[2, node as u64]);
            let bank: Vec<f64> = (0..bank_size.max(1))
                .map(|_| spec.sample(&mut rng) - centre)
                .collect();
            fit_report.push(NodeFitReport {
                node,
                train_mse: 0.0,
                val_mse: 0.0,
                bank_size: bank.len(),
                min_norm_fallback: false,
            });
            residual_banks.push(bank);
            regressors.push(regressor);
        }
        Ok(Self {
            dag: oracle.dag.clone(),
            regressors,
            residual_banks,
            fit_report,
        })
    }

    pub fn node_count(&self) -> usize {
        self.dag.node_count()
    }

    /// Evaluates `f̂_i` at the given parent values.
    pub fn predict(&self, node: usize, pa_values: &[f64]) -> Result<f64, FitError> {
        let expected = self.regressors[node].arity().unwrap_or(pa_values.len());
        if pa_values.len() != expected {
            return Err(FitError::ArityMismatch {
                node,
                expected,
                got: pa_values.len(),
            });
        }
        Ok(self.regressors[node].evaluate(pa_values))
    }

    /// Evaluates `f̂_i` gathering parent values from a full instance vector.
    pub fn predict_from(&self, node: usize, values: &[f64]) -> f64 {
        let parents = self.dag.parents(node).expect("index in range");
        let pa: Vec<f64> = parents.iter().map(|&p| values[p]).collect();
        self.regressors[node].evaluate(&pa)
    }

    /// Uniform draw from node `i`'s residual bank.
    pub fn sample_residual<R: Rng>(&self, node: usize, rng: &mut R) -> f64 {
        let bank = &self.residual_banks[node];
        debug_assert!(!bank.is_empty(), "residual banks are never empty");
        bank[rng.gen_range(0..bank.len())]
    }

    /// `node,train_mse,val_mse,bank_size` CSV of the fit report.
    pub fn fit_report_csv(&self) -> String {
        let mut out = String::from("node,train_mse,val_mse,bank_size\n");
        for r in &self.fit_report {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.node,
                floats::to_decimal(r.train_mse),
                floats::to_decimal(r.val_mse),
                r.bank_size
            ));
        }
        out
    }
}

fn compare_rows(data: &SampleMatrix, a: usize, b: usize) -> Ordering {
    for (x, y) in data.row(a).iter().zip(data.row(b)) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            other => return other,
        }
    }
    Ordering::Equal
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scm::ExogenousSpec;

    fn line_data(n: usize, slope: f64, noise: impl Fn(usize) -> f64) -> SampleMatrix {
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let x = i as f64 / n as f64 * 4.0 - 2.0;
                vec![x, slope * x + noise(i)]
            })
            .collect();
        SampleMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn noiseless_ols_recovers_weights() {
        let data = line_data(64, 2.0, |_| 0.0);
        let dag = Dag::new(2, &[(0, 1)]).unwrap();
        let fitted =
            FittedScm::fit(&data, &dag, &RegressorSpec::LinearClosedForm, 0.25, 1).unwrap();
        match &fitted.regressors[1] {
            Regressor::Linear {
                weights, intercept, ..
            } => {
                assert!((weights[0] - 2.0).abs() < 1e-9, "weight {}", weights[0]);
                assert!(intercept.abs() < 1e-9);
            }
            other => panic!("unexpected regressor {other:?}"),
        }
        assert!(fitted.residual_banks[1].iter().all(|r| r.abs() < 1e-9));
    }

    #[test]
    fn constant_parent_column_takes_min_norm_path() {
        let rows: Vec<Vec<f64>> = (0..16).map(|i| vec![3.0, 1.0 + i as f64]).collect();
        let data = SampleMatrix::from_rows(rows).unwrap();
        let dag = Dag::new(2, &[(0, 1)]).unwrap();
        let fitted =
            FittedScm::fit(&data, &dag, &RegressorSpec::LinearClosedForm, 0.25, 3).unwrap();
        assert!(fitted.fit_report[1].min_norm_fallback);
        // Prediction is still finite and sensible at the training input.
        let pred = fitted.predict(1, &[3.0]).unwrap();
        assert!(pred.is_finite());
    }

    #[test]
    fn predict_checks_arity_and_roots_ignore_nothing() {
        let data = line_data(32, 1.0, |i| (i % 3) as f64 * 0.1);
        let dag = Dag::new(2, &[(0, 1)]).unwrap();
        let fitted =
            FittedScm::fit(&data, &dag, &RegressorSpec::LinearClosedForm, 0.25, 5).unwrap();
        // Root node predicts its training mean on an empty parent slice.
        let mean = fitted.predict(0, &[]).unwrap();
        assert!(mean.is_finite());
        assert!(fitted.predict(1, &[1.0, 2.0]).is_err());
        // Linear fit w=2, b=0 evaluated at 3 gives 6.
        let manual = Regressor::Linear {
            weights: vec![2.0],
            intercept: 0.0,
            min_norm_fallback: false,
        };
        assert_eq!(manual.evaluate(&[3.0]), 6.0);
    }

    #[test]
    fn row_permutation_leaves_linear_fit_identical() {
        let data = line_data(40, -0.75, |i| ((i * 7 % 11) as f64 - 5.0) * 0.05);
        let mut rows: Vec<Vec<f64>> = (0..data.rows()).map(|r| data.row(r).to_vec()).collect();
        rows.reverse();
        rows.swap(0, 17);
        let permuted = SampleMatrix::from_rows(rows).unwrap();
        let dag = Dag::new(2, &[(0, 1)]).unwrap();
        let a = FittedScm::fit(&data, &dag, &RegressorSpec::LinearClosedForm, 0.25, 9).unwrap();
        let b = FittedScm::fit(&permuted, &dag, &RegressorSpec::LinearClosedForm, 0.25, 9).unwrap();
        assert_eq!(a.regressors, b.regressors);
        assert_eq!(a.residual_banks, b.residual_banks);
    }

    #[test]
    fn residual_bank_draws_follow_bank_statistics() {
        let fitted = FittedScm {
            dag: Dag::new(1, &[]).unwrap(),
            regressors: vec![Regressor::Constant { mean: 0.0 }],
            residual_banks: vec![vec![0.5]],
            fit_report: vec![],
        };
        let mut rng = seeding::rng(0);
        for _ in 0..10 {
            assert_eq!(fitted.sample_residual(0, &mut rng), 0.5);
        }

        // Law of large numbers on a U[0,1]-derived bank.
        let mut rng = seeding::rng(4);
        let bank: Vec<f64> = (0..512).map(|_| rng.gen_range(0.0..1.0)).collect();
        let bank_mean = bank.iter().sum::<f64>() / bank.len() as f64;
        let fitted = FittedScm {
            dag: Dag::new(1, &[]).unwrap(),
            regressors: vec![Regressor::Constant { mean: 0.0 }],
            residual_banks: vec![bank],
            fit_report: vec![],
        };
        let draws = 10_000;
        let mut acc = 0.0;
        for _ in 0..draws {
            acc += fitted.sample_residual(0, &mut rng);
        }
        let sample_mean = acc / draws as f64;
        assert!(
            (sample_mean - bank_mean).abs() < 0.03,
            "sample mean {sample_mean} vs bank mean {bank_mean}"
        );
    }

    #[test]
    fn mlp_fit_evaluates_near_training_targets() {
        let data = line_data(128, 1.5, |i| ((i % 5) as f64 - 2.0) * 0.02);
        let dag = Dag::new(2, &[(0, 1)]).unwrap();
        let fitted = FittedScm::fit(
            &data,
            &dag,
            &RegressorSpec::Mlp {
                hidden_width: 10,
                epochs: 1500,
                learning_rate: 1e-2,
                activation: Activation::Relu,
            },
            0.25,
            2,
        )
        .unwrap();
        let report = &fitted.fit_report[1];
        // Training rows re-evaluated through predict fall within the reported
        // train error band.
        let mut worst: f64 = 0.0;
        for r in 0..data.rows() {
            let row = data.row(r);
            let pred = fitted.predict(1, &row[..1]).unwrap();
            worst = worst.max((pred - row[1]).abs());
        }
        assert!(
            worst * worst < report.train_mse.max(report.val_mse) * 50.0 + 1e-2,
            "worst {worst}, report {report:?}"
        );
    }

    #[test]
    fn from_oracle_uses_exact_linear_weights() {
        let dag = Dag::new(2, &[(0, 1)]).unwrap();
        let oracle = OracleScm::new(
            dag,
            vec![
                Mechanism::Root,
                Mechanism::LinearAdditive {
                    weights: vec![2.5],
                },
            ],
            vec![
                ExogenousSpec::Gaussian { mean: 0.0, var: 1.0 },
                ExogenousSpec::Gaussian { mean: 0.0, var: 0.25 },
            ],
        )
        .unwrap();
        let fitted = FittedScm::from_oracle(&oracle, 256, 8).unwrap();
        assert_eq!(fitted.predict(1, &[2.0]).unwrap(), 5.0);
        let bank = &fitted.residual_banks[1];
        let mean = bank.iter().sum::<f64>() / bank.len() as f64;
        let var = bank.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / bank.len() as f64;
        assert!((var - 0.25).abs() < 0.08, "bank var {var}");
    }

    #[test]
    fn csv_round_trip_and_cell_errors() {
        let data = line_data(8, 1.0, |_| 0.25);
        let names = vec!["a".to_string(), "b".to_string()];
        let text = data.to_csv(&names);
        let (back_names, back) = SampleMatrix::from_csv(&text).unwrap();
        assert_eq!(back_names, names);
        assert_eq!(back, data);

        let bad = "a,b\n1.0,oops\n";
        match SampleMatrix::from_csv(bad) {
            Err(FitError::CsvCell { row: 0, col: 1, .. }) => {}
            other => panic!("expected cell error, got {other:?}"),
        }
    }

    #[test]
    fn too_few_rows_rejected() {
        let data = SampleMatrix::from_rows(vec![vec![0.0, 0.0]; 3]).unwrap();
        let dag = Dag::new(2, &[(0, 1)]).unwrap();
        assert!(matches!(
            FittedScm::fit(&data, &dag, &RegressorSpec::LinearClosedForm, 0.25, 0),
            Err(FitError::NotEnoughRows { got: 3 })
        ));
    }
}
