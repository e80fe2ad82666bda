//! Oracle (ground-truth) structural causal models.
//!
//! An [`OracleScm`] owns, per node, a generative [`Mechanism`] and an
//! [`ExogenousSpec`]. It can forward-sample datasets, and — because the true
//! exogenous values are known at generation time — compute exact
//! counterfactuals and interventions that serve as the reference in toy and
//! synthetic experiments.
//!
//! The model is immutable after construction; sampling takes explicit seeds.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimate::{FixAssignment, Instance, Provenance};
use crate::fitting::SampleMatrix;
use crate::floats;
use crate::graph::Dag;
use crate::mlp::Mlp;
use crate::seeding;

#[derive(Debug, Error)]
pub enum ScmError {
    #[error("node {node}: uniform exogenous spec requires lo < hi (got [{lo}, {hi}])")]
    BadUniform { node: usize, lo: f64, hi: f64 },
    #[error("node {node}: gaussian exogenous spec requires var >= 0 (got {var})")]
    BadGaussian { node: usize, var: f64 },
    #[error("expected {expected} {what}, got {got}")]
    CountMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("node {node}: mechanism expects {expected} inputs but the node has {got} parents")]
    MechanismArity {
        node: usize,
        expected: usize,
        got: usize,
    },
    #[error("fix on node {node} out of range")]
    FixOutOfRange { node: usize },
}

/// Per-node exogenous noise distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExogenousSpec {
    Uniform {
        #[serde(with = "floats::f64_dec")]
        lo: f64,
        #[serde(with = "floats::f64_dec")]
        hi: f64,
    },
    Gaussian {
        #[serde(with = "floats::f64_dec")]
        mean: f64,
        #[serde(with = "floats::f64_dec")]
        var: f64,
    },
    Point {
        #[serde(with = "floats::f64_dec")]
        value: f64,
    },
}

impl ExogenousSpec {
    fn validate(&self, node: usize) -> Result<(), ScmError> {
        match *self {
            ExogenousSpec::Uniform { lo, hi } if lo >= hi => {
                Err(ScmError::BadUniform { node, lo, hi })
            }
            ExogenousSpec::Gaussian { var, .. } if var < 0.0 => {
                Err(ScmError::BadGaussian { node, var })
            }
            _ => Ok(()),
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            ExogenousSpec::Uniform { lo, hi } => rng.gen_range(lo..hi),
            ExogenousSpec::Gaussian { mean, var } => {
                if var == 0.0 {
                    mean
                } else {
                    Normal::new(mean, var.sqrt())
                        .expect("validated variance")
                        .sample(rng)
                }
            }
            ExogenousSpec::Point { value } => value,
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            ExogenousSpec::Uniform { lo, hi } => 0.5 * (lo + hi),
            ExogenousSpec::Gaussian { mean, .. } => mean,
            ExogenousSpec::Point { value } => value,
        }
    }

    pub fn std(&self) -> f64 {
        match *self {
            ExogenousSpec::Uniform { lo, hi } => (hi - lo) / 12f64.sqrt(),
            ExogenousSpec::Gaussian { var, .. } => var.sqrt(),
            ExogenousSpec::Point { .. } => 0.0,
        }
    }
}

/// Per-node structural equation.
///
/// `MlpExogInput` feeds the noise through the network alongside the parents,
/// so no inversion with respect to the noise exists anywhere in this module —
/// non-invertibility is structural.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Mechanism {
    /// `x_i = ε_i`.
    Root,
    /// `x_i = wᵀ·pa + ε_i`.
    LinearAdditive {
        #[serde(with = "floats::vec_f64_dec")]
        weights: Vec<f64>,
    },
    /// `x_i = mlp(pa) + ε_i`.
    MlpAdditive { mlp: Mlp },
    /// `x_i = mlp(pa, ε_i)`.
    MlpExogInput { mlp: Mlp },
    /// `x_i = (sin pa₀ + √|pa₁| + exp(−pa₂)) / 3 + ε_i`; exactly 3 parents.
    BlendedNonlinear,
}

impl Mechanism {
    fn expected_inputs(&self, parent_count: usize) -> Option<usize> {
        match self {
            Mechanism::Root => Some(0),
            Mechanism::LinearAdditive { weights } => Some(weights.len()),
            Mechanism::MlpAdditive { mlp } => Some(mlp.input_dim()),
            Mechanism::MlpExogInput { mlp } => Some(mlp.input_dim().saturating_sub(1)),
            Mechanism::BlendedNonlinear => {
                let _ = parent_count;
                Some(3)
            }
        }
    }

    /// Evaluates the structural equation at the given parent values and noise.
    pub fn evaluate(&self, parents: &[f64], eps: f64) -> f64 {
        match self {
            Mechanism::Root => eps,
            Mechanism::LinearAdditive { weights } => {
                let mut acc = eps;
                for (w, p) in weights.iter().zip(parents) {
                    acc += w * p;
                }
                acc
            }
            Mechanism::MlpAdditive { mlp } => {
                mlp.forward(parents).expect("validated arity") + eps
            }
            Mechanism::MlpExogInput { mlp } => {
                let mut input = parents.to_vec();
                input.push(eps);
                mlp.forward(&input).expect("validated arity")
            }
            Mechanism::BlendedNonlinear => {
                (parents[0].sin() + parents[1].abs().sqrt() + (-parents[2]).exp()) / 3.0 + eps
            }
        }
    }

    /// Whether the noise enters additively (so `x - f(pa)` recovers it).
    pub fn is_additive(&self) -> bool {
        !matches!(self, Mechanism::MlpExogInput { .. })
    }
}

/// Ground-truth generative model over a DAG.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleScm {
    pub dag: Dag,
    pub mechanisms: Vec<Mechanism>,
    pub exogenous: Vec<ExogenousSpec>,
}

impl OracleScm {
    pub fn new(
        dag: Dag,
        mechanisms: Vec<Mechanism>,
        exogenous: Vec<ExogenousSpec>,
    ) -> Result<Self, ScmError> {
        let n = dag.node_count();
        if mechanisms.len() != n {
            return Err(ScmError::CountMismatch {
                what: "mechanisms",
                expected: n,
                got: mechanisms.len(),
            });
        }
        if exogenous.len() != n {
            return Err(ScmError::CountMismatch {
                what: "exogenous specs",
                expected: n,
                got: exogenous.len(),
            });
        }
        for (i, spec) in exogenous.iter().enumerate() {
            spec.validate(i)?;
        }
        for (i, mech) in mechanisms.iter().enumerate() {
            let parents = dag.parents(i).expect("index in range").len();
            if let Some(expected) = mech.expected_inputs(parents) {
                if expected != parents {
                    return Err(ScmError::MechanismArity {
                        node: i,
                        expected,
                        got: parents,
                    });
                }
            }
        }
        Ok(Self {
            dag,
            mechanisms,
            exogenous,
        })
    }

    pub fn node_count(&self) -> usize {
        self.dag.node_count()
    }

    fn gather(&self, values: &[f64], node: usize, buf: &mut Vec<f64>) {
        buf.clear();
        for &p in self.dag.parents(node).expect("index in range") {
            buf.push(values[p]);
        }
    }

    /// Applies the structural equations to a full exogenous vector, in
    /// topological order.
    pub fn evaluate_from_exog(&self, exog: &[f64]) -> Vec<f64> {
        debug_assert_eq!(exog.len(), self.node_count());
        let mut values = vec![0.0; self.node_count()];
        let mut buf = Vec::new();
        for &i in self.dag.topological_order() {
            self.gather(&values, i, &mut buf);
            values[i] = self.mechanisms[i].evaluate(&buf, exog[i]);
        }
        values
    }

    fn draw_exog_row<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        self.exogenous.iter().map(|s| s.sample(rng)).collect()
    }

    /// Draws `count` i.i.d. instances; deterministic given `seed`.
    pub fn sample(&self, count: usize, seed: u64) -> SampleMatrix {
        self.sample_with_exog(count, seed).0
    }

    /// As [`OracleScm::sample`], additionally returning the exogenous vectors
    /// that generated each row (kept for exact counterfactuals; dropped when
    /// datasets are exported).
    pub fn sample_with_exog(&self, count: usize, seed: u64) -> (SampleMatrix, Vec<Vec<f64>>) {
        let mut rng = seeding::rng(seed);
        let mut rows = Vec::with_capacity(count);
        let mut exogs = Vec::with_capacity(count);
        for _ in 0..count {
            let exog = self.draw_exog_row(&mut rng);
            rows.push(self.evaluate_from_exog(&exog));
            exogs.push(exog);
        }
        (
            SampleMatrix::from_rows(rows).expect("generated rows are rectangular and finite"),
            exogs,
        )
    }

    /// Nodes downstream of any fixed node (fixed nodes excluded).
    fn affected_by(&self, fixes: &FixAssignment) -> Result<Vec<bool>, ScmError> {
        let n = self.node_count();
        let mut affected = vec![false; n];
        for (&node, _) in fixes.iter() {
            if node >= n {
                return Err(ScmError::FixOutOfRange { node });
            }
            for d in self.dag.descendants(node).expect("index in range") {
                affected[d] = true;
            }
        }
        Ok(affected)
    }

    /// Exact counterfactual under `fixes`, given the exogenous vector `exog`
    /// that generated `x`. Non-descendants of fixed nodes are copied from
    /// `x`; fixed nodes are clamped (a clamp wins over any propagated
    /// influence); descendants are recomputed with the supplied noise.
    pub fn oracle_counterfactual(
        &self,
        x: &Instance,
        exog: &[f64],
        fixes: &FixAssignment,
    ) -> Result<Instance, ScmError> {
        let affected = self.affected_by(fixes)?;
        let mut values = x.values.clone();
        let mut buf = Vec::new();
        for &i in self.dag.topological_order() {
            if let Some(v) = fixes.get(i) {
                values[i] = v;
            } else if affected[i] {
                self.gather(&values, i, &mut buf);
                values[i] = self.mechanisms[i].evaluate(&buf, exog[i]);
            }
        }
        Ok(Instance::new(values, Provenance::OracleCf))
    }

    /// Interventional samples under `fixes`: descendants of fixed nodes are
    /// recomputed with freshly drawn noise, everything else is copied.
    pub fn oracle_intervention(
        &self,
        x: &Instance,
        fixes: &FixAssignment,
        samples: usize,
        seed: u64,
    ) -> Result<Vec<Instance>, ScmError> {
        let affected = self.affected_by(fixes)?;
        let mut rng = seeding::rng(seed);
        let mut out = Vec::with_capacity(samples);
        let mut buf = Vec::new();
        for _ in 0..samples {
            let mut values = x.values.clone();
            for &i in self.dag.topological_order() {
                if let Some(v) = fixes.get(i) {
                    values[i] = v;
                } else if affected[i] {
                    self.gather(&values, i, &mut buf);
                    let eps = self.exogenous[i].sample(&mut rng);
                    values[i] = self.mechanisms[i].evaluate(&buf, eps);
                }
            }
            out.push(Instance::new(values, Provenance::OracleInt));
        }
        Ok(out)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("oracle serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        let scm: OracleScm = serde_json::from_str(text).map_err(|e| e.to_string())?;
        // Re-validate invariants that serde cannot express.
        OracleScm::new(scm.dag, scm.mechanisms, scm.exogenous).map_err(|e| e.to_string())
    }
}
