//! Kullback-Leibler and Jensen-Shannon divergences in bits.

use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::model::{OutputLabel, Task};

const SUM_TOLERANCE: f64 = 1e-12;

/// Non-negative entries summing to one, indexed by a task's canonical label
/// order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ProbabilityVector(Vec<f64>);

impl ProbabilityVector {
    pub fn new(entries: Vec<f64>) -> Result<Self, MetricsError> {
        if entries.is_empty() {
            return Err(MetricsError::InvalidDistribution("empty vector".into()));
        }
        if let Some(bad) = entries.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(MetricsError::InvalidDistribution(format!("entry {bad} is not a probability")));
        }
        let sum: f64 = entries.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(MetricsError::InvalidDistribution(format!("entries sum to {sum}")));
        }
        Ok(ProbabilityVector(entries))
    }

    /// Indicator vector of `label` over `task`'s labels.
    pub fn one_hot(task: Task, label: OutputLabel) -> Result<Self, MetricsError> {
        let idx = task
            .label_index(label)
            .ok_or(MetricsError::InvalidLabelForTask { task, label })?;
        let mut v = vec![0.0; task.n_labels()];
        v[idx] = 1.0;
        Ok(ProbabilityVector(v))
    }

    /// Empirical distribution of `labels` over `task`'s label set.
    pub fn from_labels<'a, I>(task: Task, labels: I) -> Result<Self, MetricsError>
    where
        I: IntoIterator<Item = &'a OutputLabel>,
    {
        let mut counts = vec![0u64; task.n_labels()];
        for &label in labels {
            let idx = task
                .label_index(label)
                .ok_or(MetricsError::InvalidLabelForTask { task, label })?;
            counts[idx] += 1;
        }
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(MetricsError::InvalidDistribution("no labels".into()));
        }
        ProbabilityVector::new(counts.iter().map(|&c| c as f64 / total as f64).collect())
    }

    pub fn entries(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<f64>> for ProbabilityVector {
    type Error = MetricsError;

    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        ProbabilityVector::new(v)
    }
}

impl From<ProbabilityVector> for Vec<f64> {
    fn from(p: ProbabilityVector) -> Self {
        p.0
    }
}

fn same_dimension(p: &ProbabilityVector, q: &ProbabilityVector) -> Result<(), MetricsError> {
    if p.len() == q.len() {
        Ok(())
    } else {
        Err(MetricsError::DimensionMismatch {
            left: p.len(),
            right: q.len(),
        })
    }
}

fn kl_bits(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(pj, _)| **pj > 0.0)
        .map(|(pj, qj)| if *qj > 0.0 { pj * (pj / qj).log2() } else { f64::INFINITY })
        .sum()
}

/// `KL(P‖Q) = Σ_j P(j) log2(P(j)/Q(j))` with `0·log(0/x) = 0`. Infinite when
/// `Q` misses mass that `P` has.
pub fn kl_divergence(p: &ProbabilityVector, q: &ProbabilityVector) -> Result<f64, MetricsError> {
    same_dimension(p, q)?;
    Ok(kl_bits(&p.0, &q.0))
}

/// `JS(P‖Q) = ½[KL(P‖M) + KL(Q‖M)]`, `M = (P+Q)/2`, in bits, so the result
/// lies in `[0, 1]`. Rounding residue outside that interval is clamped.
pub fn js_divergence(p: &ProbabilityVector, q: &ProbabilityVector) -> Result<f64, MetricsError> {
    same_dimension(p, q)?;
    let mid: Vec<f64> = p.0.iter().zip(&q.0).map(|(a, b)| (a + b) / 2.0).collect();
    let js = 0.5 * (kl_bits(&p.0, &mid) + kl_bits(&q.0, &mid));
    Ok(js.clamp(0.0, 1.0))
}
