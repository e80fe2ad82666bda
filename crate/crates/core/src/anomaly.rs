//! Per-node Z-score anomaly detectors.
//!
//! Each node carries its training-sample mean and standard deviation plus a
//! threshold τ. The score is `|x − μ| / σ`; a node is anomalous when the
//! score strictly exceeds τ.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fitting::SampleMatrix;
use crate::floats;

/// Default threshold for synthetic experiments.
pub const TAU_SYNTHETIC: f64 = 3.0;
/// Default threshold for ingested real-system data.
pub const TAU_INGESTED: f64 = 5.0;

/// Floor applied to zero-variance columns so scores stay finite.
const SIGMA_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum AnomalyError {
    #[error("need at least 2 rows to train detectors, got {got}")]
    NotEnoughRows { got: usize },
    #[error("threshold for node {node} must be > 0, got {got}")]
    BadThreshold { node: usize, got: f64 },
    #[error("expected {expected} thresholds, got {got}")]
    ThresholdCount { expected: usize, got: usize },
}

/// Per-node threshold configuration: one scalar broadcast to all nodes, or an
/// explicit per-node vector.
#[derive(Debug, Clone, PartialEq)]
pub enum Thresholds {
    Scalar(f64),
    PerNode(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeDetector {
    #[serde(with = "floats::f64_dec")]
    pub mean: f64,
    #[serde(with = "floats::f64_dec")]
    pub std: f64,
    #[serde(with = "floats::f64_dec")]
    pub tau: f64,
    /// Set when the training column had zero variance and the floor applied.
    pub floored: bool,
}

/// One Z-score detector per graph node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyDetectorSet {
    pub detectors: Vec<NodeDetector>,
}

impl AnomalyDetectorSet {
    /// Column statistics with the N−1 denominator; zero-variance columns are
    /// floored and flagged.
    pub fn train(data: &SampleMatrix, thresholds: &Thresholds) -> Result<Self, AnomalyError> {
        if data.rows() < 2 {
            return Err(AnomalyError::NotEnoughRows { got: data.rows() });
        }
        let taus: Vec<f64> = match thresholds {
            Thresholds::Scalar(t) => vec![*t; data.cols()],
            Thresholds::PerNode(v) => {
                if v.len() != data.cols() {
                    return Err(AnomalyError::ThresholdCount {
                        expected: data.cols(),
                        got: v.len(),
                    });
                }
                v.clone()
            }
        };
        for (node, &tau) in taus.iter().enumerate() {
            if !(tau > 0.0) {
                return Err(AnomalyError::BadThreshold { node, got: tau });
            }
        }
        let n = data.rows() as f64;
        let detectors = (0..data.cols())
            .map(|c| {
                let col = data.column(c);
                let mean = col.iter().sum::<f64>() / n;
                let ss = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
                let std = (ss / (n - 1.0)).sqrt();
                let floored = std < SIGMA_FLOOR;
                NodeDetector {
                    mean,
                    std: if floored { SIGMA_FLOOR } else { std },
                    tau: taus[c],
                    floored,
                }
            })
            .collect();
        Ok(Self { detectors })
    }

    pub fn node_count(&self) -> usize {
        self.detectors.len()
    }

    /// Returns a copy with every threshold replaced by `tau`.
    pub fn with_tau(&self, tau: f64) -> Self {
        let mut out = self.clone();
        for d in out.detectors.iter_mut() {
            d.tau = tau;
        }
        out
    }

    /// `|x_i − μ_i| / σ_i`.
    pub fn score(&self, node: usize, value: f64) -> f64 {
        let d = &self.detectors[node];
        (value - d.mean).abs() / d.std
    }

    /// Strict comparison: the boundary score equal to τ is not anomalous.
    pub fn is_anomalous(&self, node: usize, value: f64) -> bool {
        self.score(node, value) > self.detectors[node].tau
    }

    /// Scores a full instance vector.
    pub fn scores(&self, values: &[f64]) -> Vec<f64> {
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| self.score(i, v))
            .collect()
    }

    /// Binary flags for a full instance vector.
    pub fn flags(&self, values: &[f64]) -> Vec<bool> {
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| self.is_anomalous(i, v))
            .collect()
    }
}
