//! Bias and alignment metrics over streaming counts.

pub mod alignment;
pub mod bias;
pub mod counts;
pub mod divergence;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ground_truth::ScoreScale;
use crate::model::{Identity, IdentityCategory, OutputLabel, Task};

pub use alignment::{
    alignment_delta, similarity_table, AlignmentDelta, AlignmentMode, IdentityAlignment, ModelLabels,
    SimilarityAggregation, SimilarityOptions, SimilarityTable,
};
pub use bias::{
    conditional_shares, conditional_shares_over, ifd, nrd, output_set, proportions, proportions_over,
    CategoryProportions, CellShares, ConditionalShareTensor, NrdValue, ProportionTable, Strictness,
};
pub use counts::{accumulate, AdmissionStats, CellKey, CountTensor, ImageTypes, ParsePolicy};
pub use divergence::{js_divergence, kl_divergence, ProbabilityVector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("{task}: identity {identity} has no admitted responses")]
    EmptyIdentity { task: Task, identity: Identity },
    #[error("{0}: no admitted responses")]
    NoResponses(Task),
    #[error("{task}/{category}: every (label, image type) cell is empty")]
    AllCellsEmpty { task: Task, category: IdentityCategory },
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("label `{label}` is not in the {task} label set")]
    InvalidLabelForTask { task: Task, label: OutputLabel },
    #[error("{0}: empty output set")]
    EmptyOutputSet(Task),
    #[error("identity {0} shares no images with the ground truth")]
    NoOverlap(Identity),
    #[error("identity {0} missing from similarity table")]
    MissingIdentity(Identity),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IfdEntry {
    pub task: Task,
    pub value: f64,
    pub n_phi: usize,
    pub n_o: usize,
    /// Identities per participating category after lenient drops.
    pub n_g: BTreeMap<IdentityCategory, usize>,
    pub labels: Vec<OutputLabel>,
    #[serde(default)]
    pub dropped: Vec<Identity>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NrdEntry {
    pub task: Task,
    pub category: IdentityCategory,
    pub value: f64,
    pub n_g: usize,
    pub n_o: usize,
    pub valid_cells: usize,
    pub excluded_cells: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportProvenance {
    pub tool_version: String,
    #[serde(default)]
    pub template_versions: BTreeSet<String>,
    #[serde(default)]
    pub responses: Option<String>,
    /// Companion counts file from which IFD/NRD can be recomputed.
    #[serde(default)]
    pub counts_file: Option<String>,
    #[serde(default)]
    pub ground_truth: Option<String>,
    #[serde(default)]
    pub scale: Option<ScoreScale>,
}

/// All metrics for one model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub model_id: String,
    pub parse_policy: ParsePolicy,
    pub strictness: Strictness,
    #[serde(default)]
    pub admission: AdmissionStats,
    #[serde(default)]
    pub ifd: Vec<IfdEntry>,
    #[serde(default)]
    pub nrd: Vec<NrdEntry>,
    #[serde(default)]
    pub similarity: Vec<SimilarityTable>,
    #[serde(default)]
    pub provenance: ReportProvenance,
}

impl MetricReport {
    pub fn new(model_id: &str, parse_policy: ParsePolicy, strictness: Strictness) -> Self {
        MetricReport {
            model_id: model_id.to_string(),
            parse_policy,
            strictness,
            admission: AdmissionStats::default(),
            ifd: Vec::new(),
            nrd: Vec::new(),
            similarity: Vec::new(),
            provenance: ReportProvenance {
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                ..Default::default()
            },
        }
    }

    pub fn ifd_for(&self, task: Task) -> Option<f64> {
        self.ifd.iter().find(|e| e.task == task).map(|e| e.value)
    }

    pub fn nrd_for(&self, task: Task, category: IdentityCategory) -> Option<f64> {
        self.nrd
            .iter()
            .find(|e| e.task == task && e.category == category)
            .map(|e| e.value)
    }

    pub fn similarity_for(
        &self,
        task: Task,
        category: IdentityCategory,
        mode: AlignmentMode,
    ) -> Option<&SimilarityTable> {
        self.similarity
            .iter()
            .find(|t| t.task == task && t.category == category && t.mode == mode)
    }

    /// Inserts or replaces the table for the same task, category and mode.
    pub fn upsert_similarity(&mut self, table: SimilarityTable) {
        self.similarity
            .retain(|t| !(t.task == table.task && t.category == table.category && t.mode == table.mode));
        self.similarity.push(table);
        self.similarity.sort_by_key(|t| (t.mode, t.task, t.category));
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BiasConfig {
    pub strictness: Strictness,
    /// Per-task output set overrides; tasks not listed use their full set.
    pub output_sets: BTreeMap<Task, Vec<OutputLabel>>,
}

impl BiasConfig {
    fn labels(&self, task: Task) -> &[OutputLabel] {
        self.output_sets.get(&task).map(Vec::as_slice).unwrap_or(task.labels())
    }
}

/// IFD per task and NRD per (task, category) for every task and category
/// present in `tensor`.
pub fn bias_metrics(tensor: &CountTensor, config: &BiasConfig) -> Result<(Vec<IfdEntry>, Vec<NrdEntry>), MetricsError> {
    let mut ifds = Vec::new();
    let mut nrds = Vec::new();
    for task in tensor.tasks() {
        let labels = config.labels(task);
        let table = match proportions_over(tensor, task, labels, config.strictness) {
            Ok(t) => t,
            Err(MetricsError::NoResponses(_)) if config.strictness == Strictness::Lenient => continue,
            Err(e) => return Err(e),
        };
        ifds.push(IfdEntry {
            task,
            value: ifd(&table),
            n_phi: table.n_phi(),
            n_o: table.n_o(),
            n_g: table
                .categories
                .iter()
                .map(|(c, p)| (*c, p.identities.len()))
                .collect(),
            labels: table.labels.clone(),
            dropped: table.dropped.clone(),
        });
        for &category in table.categories.keys() {
            let shares = conditional_shares_over(tensor, task, category, labels)?;
            let v = nrd(&shares)?;
            nrds.push(NrdEntry {
                task,
                category,
                value: v.value,
                n_g: v.n_g,
                n_o: v.n_o,
                valid_cells: v.valid_cells,
                excluded_cells: v.excluded_cells,
            });
        }
    }
    Ok((ifds, nrds))
}

/// Bias metrics for one model's records. `records` may hold several models;
/// only `model_id`'s are used.
///
/// Every task that has identity-conditioned records must yield metrics. A
/// task whose records are all rejected (for example every reply
/// unparseable) fails with [`MetricsError::NoResponses`] in strict mode and
/// is skipped with a warning in lenient mode.
pub fn compute_report(
    model_id: &str,
    records: &[crate::model::ResponseRecord],
    images: &ImageTypes,
    policy: ParsePolicy,
    config: &BiasConfig,
) -> Result<(MetricReport, CountTensor), MetricsError> {
    let mine: Vec<&crate::model::ResponseRecord> = records.iter().filter(|r| r.model_id == model_id).collect();
    let (tensor, admission) = accumulate(mine.iter().copied(), images, policy);
    let wanted: BTreeSet<Task> = mine.iter().filter(|r| r.identity.is_some()).map(|r| r.task).collect();
    for &task in &wanted {
        if !tensor.tasks().contains(&task) {
            match config.strictness {
                Strictness::Strict => return Err(MetricsError::NoResponses(task)),
                Strictness::Lenient => log::warn!("{model_id}: no admitted responses for {task}; skipped"),
            }
        }
    }
    let (ifd, nrd) = bias_metrics(&tensor, config)?;
    let mut report = MetricReport::new(model_id, policy, config.strictness);
    report.admission = admission;
    report.ifd = ifd;
    report.nrd = nrd;
    report.provenance.template_versions = mine.iter().filter_map(|r| r.template_version.clone()).collect();
    Ok((report, tensor))
}
