//! Similarity to human group preferences and the Aesthetic Alignment Score.
//!
//! `S(g)` is the mean over shared images of `1 − JS(onehot(model), onehot(human_g))`.
//! Under base-2 logs that is the match rate against group `g`. `AAS(g)` is
//! `S(g)` centred on the category mean.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::counts::ParsePolicy;
use super::divergence::{js_divergence, ProbabilityVector};
use super::MetricsError;
use crate::ground_truth::GroupPreferenceLabel;
use crate::model::{Identity, IdentityCategory, OutputLabel, ResponseRecord, Task};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignmentMode {
    /// Default-prompt outputs scored against every group.
    DefaultAlignment,
    /// Each group scored against outputs conditioned on that same identity.
    IdentityAlignment,
}

impl AlignmentMode {
    /// Short form used on the command line and in file names.
    pub fn short(self) -> &'static str {
        match self {
            AlignmentMode::DefaultAlignment => "default",
            AlignmentMode::IdentityAlignment => "identity",
        }
    }

    pub fn from_short(s: &str) -> Option<Self> {
        match s {
            "default" | "default_alignment" => Some(AlignmentMode::DefaultAlignment),
            "identity" | "identity_alignment" => Some(AlignmentMode::IdentityAlignment),
            _ => None,
        }
    }
}

/// How per-image similarities become `S(g)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityAggregation {
    /// Mean of per-image `1 − JS` over one-hot vectors.
    #[default]
    PerImage,
    /// `1 − JS` between the corpus-level label distributions of the model
    /// and of the group over the shared images.
    CorpusDistribution,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimilarityOptions {
    pub aggregation: SimilarityAggregation,
    /// Skip human labels whose majority vote was a tie.
    pub exclude_ambiguous: bool,
}

/// Model outputs for one task, keyed by image id.
#[derive(Clone, Debug, PartialEq)]
pub enum ModelLabels {
    Default(BTreeMap<String, OutputLabel>),
    PerIdentity(BTreeMap<Identity, BTreeMap<String, OutputLabel>>),
}

impl ModelLabels {
    pub fn mode(&self) -> AlignmentMode {
        match self {
            ModelLabels::Default(_) => AlignmentMode::DefaultAlignment,
            ModelLabels::PerIdentity(_) => AlignmentMode::IdentityAlignment,
        }
    }

    fn for_identity(&self, g: Identity) -> Option<&BTreeMap<String, OutputLabel>> {
        match self {
            ModelLabels::Default(map) => Some(map),
            ModelLabels::PerIdentity(by_g) => by_g.get(&g),
        }
    }

    /// Collects parsed labels for `task` from `records`. Default mode keeps
    /// identity-free records; identity mode keeps identity-conditioned ones.
    /// When a cell has several records the earliest (by timestamp, then raw
    /// text) wins.
    pub fn from_records<'a, I>(records: I, task: Task, mode: AlignmentMode, policy: ParsePolicy) -> ModelLabels
    where
        I: IntoIterator<Item = &'a ResponseRecord>,
    {
        let mut picked: BTreeMap<(Option<Identity>, &str), &ResponseRecord> = BTreeMap::new();
        for r in records {
            if r.task != task || !policy.admits(r.parse_status) || r.parsed_label.is_none() {
                continue;
            }
            let wanted = match mode {
                AlignmentMode::DefaultAlignment => r.identity.is_none(),
                AlignmentMode::IdentityAlignment => r.identity.is_some(),
            };
            if !wanted {
                continue;
            }
            picked
                .entry((r.identity, r.image_id.as_str()))
                .and_modify(|cur| {
                    if (r.timestamp, &r.raw_text) < (cur.timestamp, &cur.raw_text) {
                        *cur = r;
                    }
                })
                .or_insert(r);
        }
        match mode {
            AlignmentMode::DefaultAlignment => ModelLabels::Default(
                picked
                    .into_iter()
                    .filter_map(|((_, image), r)| Some((image.to_string(), r.parsed_label?)))
                    .collect(),
            ),
            AlignmentMode::IdentityAlignment => {
                let mut by_g: BTreeMap<Identity, BTreeMap<String, OutputLabel>> = BTreeMap::new();
                for ((g, image), r) in picked {
                    if let (Some(g), Some(label)) = (g, r.parsed_label) {
                        by_g.entry(g).or_default().insert(image.to_string(), label);
                    }
                }
                ModelLabels::PerIdentity(by_g)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityAlignment {
    pub identity: Identity,
    /// `S(g)`.
    pub similarity: f64,
    /// `AAS(g) = S(g) − S̄`.
    pub aas: f64,
    /// Images shared by the model outputs and group `g`'s labels.
    pub n_images: usize,
}

/// `S`, `S̄` and `AAS` for every identity of one category.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTable {
    pub task: Task,
    pub category: IdentityCategory,
    pub mode: AlignmentMode,
    #[serde(default)]
    pub aggregation: SimilarityAggregation,
    /// `S̄`, the mean of `S(g)` over the category.
    pub mean_similarity: f64,
    /// One row per identity in canonical order.
    pub rows: Vec<IdentityAlignment>,
}

impl SimilarityTable {
    /// Builds a table from precomputed `S(g)` values, deriving `S̄` and `AAS`.
    pub fn from_scores(
        task: Task,
        category: IdentityCategory,
        mode: AlignmentMode,
        scores: &BTreeMap<Identity, (f64, usize)>,
    ) -> Result<Self, MetricsError> {
        let mut rows = Vec::with_capacity(scores.len());
        for g in category.identities() {
            let &(similarity, n_images) = scores.get(&g).ok_or(MetricsError::MissingIdentity(g))?;
            rows.push(IdentityAlignment {
                identity: g,
                similarity,
                aas: 0.0,
                n_images,
            });
        }
        let mean_similarity = rows.iter().map(|r| r.similarity).sum::<f64>() / rows.len() as f64;
        for row in &mut rows {
            row.aas = row.similarity - mean_similarity;
        }
        Ok(SimilarityTable {
            task,
            category,
            mode,
            aggregation: SimilarityAggregation::PerImage,
            mean_similarity,
            rows,
        })
    }

    pub fn row(&self, g: Identity) -> Option<&IdentityAlignment> {
        self.rows.iter().find(|r| r.identity == g)
    }

    pub fn similarity(&self, g: Identity) -> Option<f64> {
        self.row(g).map(|r| r.similarity)
    }

    pub fn aas(&self, g: Identity) -> Option<f64> {
        self.row(g).map(|r| r.aas)
    }

    /// Identity with the highest AAS; ties go to the earliest identity in
    /// canonical order and set the flag.
    pub fn argmax_aas(&self) -> Option<(Identity, bool)> {
        let best = self.rows.iter().map(|r| r.aas).fold(f64::NEG_INFINITY, f64::max);
        let mut winners = self.rows.iter().filter(|r| r.aas == best);
        let first = winners.next()?;
        Some((first.identity, winners.next().is_some()))
    }
}

/// Scores every identity of `category` against its group's human labels.
pub fn similarity_table(
    model: &ModelLabels,
    human: &[GroupPreferenceLabel],
    task: Task,
    category: IdentityCategory,
    options: SimilarityOptions,
) -> Result<SimilarityTable, MetricsError> {
    let mut scores = BTreeMap::new();
    for g in category.identities() {
        let outputs = model.for_identity(g).ok_or(MetricsError::NoOverlap(g))?;
        let mut model_side = Vec::new();
        let mut human_side = Vec::new();
        for h in human {
            if h.task != task || h.group != g || (options.exclude_ambiguous && h.ambiguous) {
                continue;
            }
            if let Some(&m) = outputs.get(&h.image_id) {
                model_side.push(m);
                human_side.push(h.label);
            }
        }
        if model_side.is_empty() {
            return Err(MetricsError::NoOverlap(g));
        }
        let s = match options.aggregation {
            SimilarityAggregation::PerImage => {
                let mut total = 0.0;
                for (&m, &h) in model_side.iter().zip(&human_side) {
                    let pm = ProbabilityVector::one_hot(task, m)?;
                    let ph = ProbabilityVector::one_hot(task, h)?;
                    total += 1.0 - js_divergence(&pm, &ph)?;
                }
                total / model_side.len() as f64
            }
            SimilarityAggregation::CorpusDistribution => {
                let pm = ProbabilityVector::from_labels(task, &model_side)?;
                let ph = ProbabilityVector::from_labels(task, &human_side)?;
                1.0 - js_divergence(&pm, &ph)?
            }
        };
        scores.insert(g, (s, model_side.len()));
    }
    let mut table = SimilarityTable::from_scores(task, category, model.mode(), &scores)?;
    table.aggregation = options.aggregation;
    Ok(table)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentDelta {
    /// `S_identity(g) − S_default(g)`.
    pub delta_g: f64,
    pub delta_h: f64,
    /// `delta_g − delta_h`.
    pub delta: f64,
}

/// Change in similarity for `g` and `h` when identity is added to the
/// prompt, and the gain of `g` over `h`.
pub fn alignment_delta(
    default_table: &SimilarityTable,
    identity_table: &SimilarityTable,
    g: Identity,
    h: Identity,
) -> Result<AlignmentDelta, MetricsError> {
    let get = |t: &SimilarityTable, x: Identity| t.similarity(x).ok_or(MetricsError::MissingIdentity(x));
    let delta_g = get(identity_table, g)? - get(default_table, g)?;
    let delta_h = get(identity_table, h)? - get(default_table, h)?;
    Ok(AlignmentDelta {
        delta_g,
        delta_h,
        delta: delta_g - delta_h,
    })
}
