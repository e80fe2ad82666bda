//! Fix propagation on a fitted model.
//!
//! Two engines estimate what happens at the target after clamping a set of
//! nodes to fix values:
//!
//! * [`estimate_counterfactual`] — abduction/action/prediction. Residuals are
//!   abducted against the *original* observed parents (that choice is exactly
//!   where out-of-distribution inputs enter), then descendants of fixed nodes
//!   are recomputed with those residuals.
//! * [`estimate_intervention`] — descendants of fixed nodes are recomputed
//!   with residuals freshly drawn from each node's bank, so the regressors
//!   are only ever queried at in-distribution inputs.
//!
//! Fixed nodes stay clamped even when an upstream fix would move them, and
//! non-descendants of all fixed nodes are copied from the observation
//! bit-for-bit.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::fitting::FittedScm;
use crate::floats;

/// Where an instance's values came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Observed,
    CounterfactualEst,
    InterventionEst,
    OracleCf,
    OracleInt,
}

impl Provenance {
    pub fn as_str(&self) -> &'static str {
        match self {
            Provenance::Observed => "observed",
            Provenance::CounterfactualEst => "counterfactual-est",
            Provenance::InterventionEst => "intervention-est",
            Provenance::OracleCf => "oracle-cf",
            Provenance::OracleInt => "oracle-int",
        }
    }
}

/// A full assignment of node values, tagged with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    #[serde(with = "floats::vec_f64_dec")]
    pub values: Vec<f64>,
    pub provenance: Provenance,
}

impl Instance {
    pub fn new(values: Vec<f64>, provenance: Provenance) -> Self {
        Self { values, provenance }
    }

    pub fn observed(values: Vec<f64>) -> Self {
        Self::new(values, Provenance::Observed)
    }

    /// One CSV line: values then the provenance tag.
    pub fn csv_row(&self) -> String {
        let mut cells: Vec<String> = self.values.iter().map(|v| floats::to_decimal(*v)).collect();
        cells.push(self.provenance.as_str().to_string());
        cells.join(",")
    }
}

/// Writes instances as CSV rows with a trailing provenance column.
pub fn instances_to_csv(names: &[String], instances: &[Instance]) -> String {
    let mut out = names.join(",");
    out.push_str(",provenance\n");
    for inst in instances {
        out.push_str(&inst.csv_row());
        out.push('\n');
    }
    out
}

/// Node → fix value. Keys are distinct by construction; application order is
/// always topological regardless of insertion order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FixAssignment {
    fixes: BTreeMap<usize, f64>,
}

impl FixAssignment {
    pub fn single(node: usize, value: f64) -> Self {
        let mut fixes = BTreeMap::new();
        fixes.insert(node, value);
        Self { fixes }
    }

    pub fn insert(&mut self, node: usize, value: f64) {
        self.fixes.insert(node, value);
    }

    pub fn get(&self, node: usize) -> Option<f64> {
        self.fixes.get(&node).copied()
    }

    pub fn contains(&self, node: usize) -> bool {
        self.fixes.contains_key(&node)
    }

    pub fn is_empty(&self) -> bool {
        self.fixes.is_empty()
    }

    pub fn len(&self) -> usize {
        self.fixes.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&usize, &f64)> {
        self.fixes.iter()
    }

    pub fn nodes(&self) -> Vec<usize> {
        self.fixes.keys().copied().collect()
    }
}

/// Marks every strict descendant of a fixed node.
fn affected_mask(fscm: &FittedScm, fixes: &FixAssignment) -> Vec<bool> {
    let mut affected = vec![false; fscm.node_count()];
    for (&node, _) in fixes.iter() {
        for d in fscm.dag.descendants(node).expect("fix node in range") {
            affected[d] = true;
        }
    }
    affected
}

/// Core propagation loop shared by both estimators. `residual` supplies the
/// noise term for each recomputed node; `observer` sees the parent values
/// every regressor evaluation receives (used by in-distribution probes).
fn propagate(
    fscm: &FittedScm,
    x: &Instance,
    fixes: &FixAssignment,
    provenance: Provenance,
    mut residual: impl FnMut(usize) -> f64,
    observer: &mut impl FnMut(usize, &[f64]),
) -> Instance {
    let affected = affected_mask(fscm, fixes);
    let mut values = x.values.clone();
    let mut pa = Vec::new();
    for &i in fscm.dag.topological_order() {
        if let Some(v) = fixes.get(i) {
            values[i] = v;
            continue;
        }
        if !affected[i] {
            continue;
        }
        let parents = fscm.dag.parents(i).expect("index in range");
        pa.clear();
        pa.extend(parents.iter().map(|&p| values[p]));
        // When no parent moved, the additive recomputation is algebraically
        // the observed value; copying keeps the identity bit-exact.
        let unchanged = parents
            .iter()
            .zip(&pa)
            .all(|(&p, v)| v.to_bits() == x.values[p].to_bits());
        observer(i, &pa);
        if unchanged && provenance == Provenance::CounterfactualEst {
            continue;
        }
        let predicted = fscm.predict(i, &pa).expect("arity matches dag");
        values[i] = predicted + residual(i);
    }
    Instance::new(values, provenance)
}

/// Abduction/action/prediction counterfactual estimate.
pub fn estimate_counterfactual(fscm: &FittedScm, x: &Instance, fixes: &FixAssignment) -> Instance {
    // Abduct every node's residual against the original observed parents.
    let abducted: Vec<f64> = (0..fscm.node_count())
        .map(|i| x.values[i] - fscm.predict_from(i, &x.values))
        .collect();
    propagate(
        fscm,
        x,
        fixes,
        Provenance::CounterfactualEst,
        |i| abducted[i],
        &mut |_, _| {},
    )
}

/// In-distribution interventional samples: each sample redraws descendants'
/// residuals from their banks.
pub fn estimate_intervention<R: Rng>(
    fscm: &FittedScm,
    x: &Instance,
    fixes: &FixAssignment,
    samples: usize,
    rng: &mut R,
) -> Vec<Instance> {
    (0..samples.max(1))
        .map(|_| {
            propagate(
                fscm,
                x,
                fixes,
                Provenance::InterventionEst,
                |i| fscm.sample_residual(i, rng),
                &mut |_, _| {},
            )
        })
        .collect()
}

/// As [`estimate_intervention`] but reporting every parent-value vector the
/// regressors were evaluated at, for in-distribution instrumentation.
pub fn estimate_intervention_probed<R: Rng>(
    fscm: &FittedScm,
    x: &Instance,
    fixes: &FixAssignment,
    samples: usize,
    rng: &mut R,
    probes: &mut Vec<(usize, Vec<f64>)>,
) -> Vec<Instance> {
    (0..samples.max(1))
        .map(|_| {
            propagate(
                fscm,
                x,
                fixes,
                Provenance::InterventionEst,
                |i| fscm.sample_residual(i, rng),
                &mut |node, pa| probes.push((node, pa.to_vec())),
            )
        })
        .collect()
}

/// Draws a fix value for node `j` from its learned conditional
/// `f̂_j(pa_j from x) + residual-bank draw`. For root nodes this is the
/// training mean plus a marginal residual, i.e. an empirical marginal draw.
pub fn sample_fix<R: Rng>(fscm: &FittedScm, x: &Instance, node: usize, rng: &mut R) -> f64 {
    fscm.predict_from(node, &x.values) + fscm.sample_residual(node, rng)
}
