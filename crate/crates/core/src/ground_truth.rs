//! Human annotations to per-image, per-group preference labels.
//!
//! Numeric tasks are averaged within a group and the mean is mapped onto the
//! three quality labels by equal-width intervals over the dataset scale.
//! Empathy uses a majority vote over emotions.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::{io_error, read_jsonl, JsonlError};
use crate::model::{
    AgeBin, AnnotationRecord, Identity, IdentityCategory, OutputLabel, Task,
};

const BUILTIN_ALIASES: &str = include_str!("../data/aliases.toml");

#[derive(Debug, Error)]
pub enum GroundTruthError {
    #[error("invalid scale: r={r} must be below R={big_r}")]
    InvalidScale { r: f64, big_r: f64 },
    #[error("score {score} outside [{r}, {big_r}]")]
    ScoreOutOfRange { score: f64, r: f64, big_r: f64 },
    #[error("no annotator in {group} rated image {image_id} for {task}")]
    NoAnnotatorsInGroup {
        image_id: String,
        group: Identity,
        task: Task,
    },
    #[error("annotation {annotator_id}/{image_id}: {reason}")]
    InvalidAnnotation {
        image_id: String,
        annotator_id: String,
        reason: String,
    },
    #[error("alias table: {0}")]
    Aliases(String),
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error("{path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
}

/// Score range `[r, R]` of a dataset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreScale {
    pub r: f64,
    #[serde(rename = "R")]
    pub big_r: f64,
}

impl ScoreScale {
    pub const PARA: ScoreScale = ScoreScale { r: 1.0, big_r: 5.0 };
    pub const LAPIS: ScoreScale = ScoreScale { r: 0.0, big_r: 100.0 };

    pub fn new(r: f64, big_r: f64) -> Result<Self, GroundTruthError> {
        if r.is_finite() && big_r.is_finite() && r < big_r {
            Ok(ScoreScale { r, big_r })
        } else {
            Err(GroundTruthError::InvalidScale { r, big_r })
        }
    }

    pub fn contains(&self, s: f64) -> bool {
        self.r <= s && s <= self.big_r
    }

    /// Upper edges of the negative and normal intervals.
    pub fn cut_points(&self) -> (f64, f64) {
        let width = self.big_r - self.r;
        (self.r + width / 3.0, self.r + 2.0 * width / 3.0)
    }

    fn check(&self, s: f64) -> Result<(), GroundTruthError> {
        if self.contains(s) {
            Ok(())
        } else {
            Err(GroundTruthError::ScoreOutOfRange {
                score: s,
                r: self.r,
                big_r: self.big_r,
            })
        }
    }
}

/// Equal-width three-level discretization. Intervals are open on the left
/// and closed on the right, except that `s = r` also maps to negative.
pub fn discretize(s: f64, scale: ScoreScale) -> Result<OutputLabel, GroundTruthError> {
    scale.check(s)?;
    let (low, high) = scale.cut_points();
    Ok(if s <= low {
        OutputLabel::Negative
    } else if s <= high {
        OutputLabel::Normal
    } else {
        OutputLabel::Positive
    })
}

/// Versioned alias table mapping raw export values to taxonomy bins.
#[derive(Clone, Debug)]
pub struct AliasTable {
    pub version: String,
    entries: BTreeMap<IdentityCategory, BTreeMap<String, String>>,
}

#[derive(Deserialize)]
struct AliasFile {
    version: String,
    #[serde(default)]
    age: BTreeMap<String, String>,
    #[serde(default)]
    gender: BTreeMap<String, String>,
    #[serde(default)]
    education: BTreeMap<String, String>,
}

impl AliasTable {
    pub fn parse(text: &str) -> Result<Self, GroundTruthError> {
        let file: AliasFile = toml::from_str(text).map_err(|e| GroundTruthError::Aliases(e.to_string()))?;
        let mut entries = BTreeMap::new();
        for (category, map) in [
            (IdentityCategory::Age, file.age),
            (IdentityCategory::Gender, file.gender),
            (IdentityCategory::Education, file.education),
        ] {
            let mut normalized = BTreeMap::new();
            for (raw, bin) in map {
                Identity::from_parts(category, &bin)
                    .map_err(|e| GroundTruthError::Aliases(format!("{raw}: {e}")))?;
                normalized.insert(raw.trim().to_lowercase(), bin);
            }
            entries.insert(category, normalized);
        }
        Ok(AliasTable {
            version: file.version,
            entries,
        })
    }

    pub fn builtin() -> &'static AliasTable {
        static TABLE: OnceLock<AliasTable> = OnceLock::new();
        TABLE.get_or_init(|| AliasTable::parse(BUILTIN_ALIASES).expect("builtin alias table"))
    }

    /// Maps one raw value of `category` to an identity, if possible.
    pub fn resolve(&self, category: IdentityCategory, raw: &str) -> Option<Identity> {
        let key = raw.trim().to_lowercase();
        if key.is_empty() {
            return None;
        }
        if category == IdentityCategory::Age {
            if let Ok(years) = key.parse::<f64>() {
                if years.is_finite() && years >= 0.0 && years.fract() == 0.0 {
                    return AgeBin::containing(years as u32).map(Identity::Age);
                }
                return None;
            }
        }
        if let Ok(identity) = Identity::from_parts(category, &key) {
            return Some(identity);
        }
        let bin = self.entries.get(&category)?.get(&key)?;
        Identity::from_parts(category, bin).ok()
    }
}

/// Per-category tally of raw values that fell outside the taxonomy.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExclusionCounter {
    pub excluded: BTreeMap<IdentityCategory, usize>,
}

impl ExclusionCounter {
    pub fn get(&self, category: IdentityCategory) -> usize {
        self.excluded.get(&category).copied().unwrap_or(0)
    }

    pub fn total(&self) -> usize {
        self.excluded.values().sum()
    }
}

fn demographic_value(demographics: &BTreeMap<String, String>, category: IdentityCategory) -> Option<&str> {
    demographics
        .iter()
        .find(|(k, _)| k.trim().eq_ignore_ascii_case(category.as_str()))
        .map(|(_, v)| v.as_str())
}

/// Bins an annotator into at most one identity per category. Values that are
/// present but unmapped are counted in `exclusions`; absent keys are not.
pub fn bin_annotator_with(
    demographics: &BTreeMap<String, String>,
    aliases: &AliasTable,
    exclusions: &mut ExclusionCounter,
) -> Vec<Identity> {
    let mut out = Vec::with_capacity(3);
    for category in IdentityCategory::ALL {
        let Some(raw) = demographic_value(demographics, category) else {
            continue;
        };
        match aliases.resolve(category, raw) {
            Some(identity) => out.push(identity),
            None => *exclusions.excluded.entry(category).or_default() += 1,
        }
    }
    out
}

pub fn bin_annotator(
    demographics: &BTreeMap<String, String>,
    exclusions: &mut ExclusionCounter,
) -> Vec<Identity> {
    bin_annotator_with(demographics, AliasTable::builtin(), exclusions)
}

/// How numeric scores of one group are turned into a label.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationRule {
    #[default]
    MeanThenDiscretize,
    DiscretizeThenVote,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupPreferenceLabel {
    pub image_id: String,
    pub group: Identity,
    pub task: Task,
    pub label: OutputLabel,
    pub support: u32,
    pub ambiguous: bool,
}

/// Mean that does not depend on input order and returns `s` exactly for a
/// constant list.
fn stable_mean(scores: &mut [f64]) -> f64 {
    scores.sort_by(f64::total_cmp);
    let base = scores[0];
    let excess: f64 = scores.iter().map(|s| s - base).sum();
    base + excess / scores.len() as f64
}

/// Plurality over `task`'s labels; ties go to the earliest label in
/// canonical order and are flagged.
fn majority_vote(task: Task, votes: &[OutputLabel]) -> (OutputLabel, bool) {
    let labels = task.labels();
    let mut counts = vec![0usize; labels.len()];
    for v in votes {
        if let Some(i) = task.label_index(*v) {
            counts[i] += 1;
        }
    }
    let best = *counts.iter().max().unwrap_or(&0);
    let winner = counts.iter().position(|&c| c == best).unwrap_or(0);
    let tied = counts.iter().filter(|&&c| c == best).count() > 1;
    (labels[winner], tied)
}

fn label_from_scores(
    task: Task,
    mut scores: Vec<f64>,
    scale: ScoreScale,
    rule: AggregationRule,
) -> Result<(OutputLabel, bool), GroundTruthError> {
    match rule {
        AggregationRule::MeanThenDiscretize => {
            for &s in &scores {
                scale.check(s)?;
            }
            Ok((discretize(stable_mean(&mut scores), scale)?, false))
        }
        AggregationRule::DiscretizeThenVote => {
            let votes = scores
                .iter()
                .map(|&s| discretize(s, scale))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(majority_vote(task, &votes))
        }
    }
}

/// Aggregates the annotations of `group` for one image and task.
///
/// `annotations` may contain records for other images and annotators outside
/// the group; they are filtered out.
pub fn group_label(
    image_id: &str,
    group: Identity,
    task: Task,
    annotations: &[AnnotationRecord],
    scale: ScoreScale,
    rule: AggregationRule,
) -> Result<GroupPreferenceLabel, GroundTruthError> {
    let aliases = AliasTable::builtin();
    let mut scratch = ExclusionCounter::default();
    let members: Vec<&AnnotationRecord> = annotations
        .iter()
        .filter(|a| a.image_id == image_id && a.has_task(task))
        .filter(|a| bin_annotator_with(&a.demographics, aliases, &mut scratch).contains(&group))
        .collect();
    label_members(image_id, group, task, &members, scale, rule)
}

fn label_members(
    image_id: &str,
    group: Identity,
    task: Task,
    members: &[&AnnotationRecord],
    scale: ScoreScale,
    rule: AggregationRule,
) -> Result<GroupPreferenceLabel, GroundTruthError> {
    if members.is_empty() {
        return Err(GroundTruthError::NoAnnotatorsInGroup {
            image_id: image_id.to_string(),
            group,
            task,
        });
    }
    let (label, ambiguous) = match task {
        Task::Empathy => {
            let votes: Vec<OutputLabel> = members.iter().filter_map(|a| a.emotion).collect();
            majority_vote(task, &votes)
        }
        _ => {
            let scores = members.iter().filter_map(|a| a.score(task)).collect();
            label_from_scores(task, scores, scale, rule)?
        }
    };
    Ok(GroupPreferenceLabel {
        image_id: image_id.to_string(),
        group,
        task,
        label,
        support: members.len() as u32,
        ambiguous,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthOptions {
    pub rule: AggregationRule,
    /// Groups with fewer annotators on an image get no label for it.
    pub min_support: u32,
}

impl Default for GroundTruthOptions {
    fn default() -> Self {
        GroundTruthOptions {
            rule: AggregationRule::MeanThenDiscretize,
            min_support: 1,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub labels: Vec<GroupPreferenceLabel>,
    pub exclusions: ExclusionCounter,
    pub n_annotations: usize,
    pub n_annotators: usize,
    pub n_images: usize,
    pub below_min_support: usize,
}

/// Rejects records with no task field or a score outside the scale.
pub fn validate_annotation(a: &AnnotationRecord, scale: ScoreScale) -> Result<(), GroundTruthError> {
    let invalid = |reason: String| GroundTruthError::InvalidAnnotation {
        image_id: a.image_id.clone(),
        annotator_id: a.annotator_id.clone(),
        reason,
    };
    if !Task::ALL.iter().any(|&t| a.has_task(t)) {
        return Err(invalid("no perception_score, assessment_score or emotion".into()));
    }
    for task in [Task::Perception, Task::Assessment] {
        if let Some(s) = a.score(task) {
            if !scale.contains(s) {
                return Err(invalid(format!(
                    "{task} score {s} outside [{}, {}]",
                    scale.r, scale.big_r
                )));
            }
        }
    }
    if let Some(e) = a.emotion {
        if !e.belongs_to(Task::Empathy) {
            return Err(invalid(format!("`{e}` is not an emotion label")));
        }
    }
    Ok(())
}

/// Builds every `(image, identity, task)` label the annotations support, in
/// image-id, identity, task order.
pub fn build_ground_truth(
    annotations: &[AnnotationRecord],
    scale: ScoreScale,
    options: GroundTruthOptions,
    aliases: &AliasTable,
) -> Result<GroundTruth, GroundTruthError> {
    let mut exclusions = ExclusionCounter::default();
    let mut by_image: BTreeMap<&str, Vec<(&AnnotationRecord, Vec<Identity>)>> = BTreeMap::new();
    // Demographics belong to the annotator: bin once, on first sight.
    let mut binned: BTreeMap<&str, Vec<Identity>> = BTreeMap::new();

    for a in annotations {
        validate_annotation(a, scale)?;
        let identities = binned
            .entry(a.annotator_id.as_str())
            .or_insert_with(|| bin_annotator_with(&a.demographics, aliases, &mut exclusions))
            .clone();
        by_image.entry(a.image_id.as_str()).or_default().push((a, identities));
    }

    let mut labels = Vec::new();
    let mut below_min_support = 0;
    for (image_id, rows) in &by_image {
        for group in crate::model::identity_grid() {
            for task in Task::ALL {
                let members: Vec<&AnnotationRecord> = rows
                    .iter()
                    .filter(|(a, ids)| ids.contains(&group) && a.has_task(task))
                    .map(|(a, _)| *a)
                    .collect();
                if members.is_empty() {
                    continue;
                }
                if (members.len() as u32) < options.min_support {
                    below_min_support += 1;
                    continue;
                }
                labels.push(label_members(image_id, group, task, &members, scale, options.rule)?);
            }
        }
    }

    Ok(GroundTruth {
        labels,
        exclusions,
        n_annotations: annotations.len(),
        n_annotators: binned.len(),
        n_images: by_image.len(),
        below_min_support,
    })
}

#[derive(Deserialize)]
struct CsvAnnotation {
    image_id: String,
    annotator_id: String,
    #[serde(default)]
    age: Option<String>,
    #[serde(default)]
    gender: Option<String>,
    #[serde(default)]
    education: Option<String>,
    #[serde(default)]
    perception_score: Option<f64>,
    #[serde(default)]
    assessment_score: Option<f64>,
    #[serde(default)]
    emotion: Option<String>,
}

/// Reads annotations from `.csv` (flat demographic columns) or JSON Lines.
pub fn read_annotations(path: &Path) -> Result<Vec<AnnotationRecord>, GroundTruthError> {
    let is_csv = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if !is_csv {
        return Ok(read_jsonl(path)?);
    }
    let csv_err = |source| GroundTruthError::Csv {
        path: path.display().to_string(),
        source,
    };
    let file = std::fs::File::open(path).map_err(|e| GroundTruthError::Jsonl(io_error(path, e)))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let mut out = Vec::new();
    for row in reader.deserialize::<CsvAnnotation>() {
        let row = row.map_err(csv_err)?;
        let mut demographics = BTreeMap::new();
        for (key, value) in [("age", row.age), ("gender", row.gender), ("education", row.education)] {
            if let Some(v) = value.filter(|v| !v.is_empty()) {
                demographics.insert(key.to_string(), v);
            }
        }
        let emotion = match row.emotion.filter(|e| !e.is_empty()) {
            Some(e) => Some(e.parse::<OutputLabel>().map_err(|err| GroundTruthError::InvalidAnnotation {
                image_id: row.image_id.clone(),
                annotator_id: row.annotator_id.clone(),
                reason: err.to_string(),
            })?),
            None => None,
        };
        out.push(AnnotationRecord {
            image_id: row.image_id,
            annotator_id: row.annotator_id,
            demographics,
            perception_score: row.perception_score,
            assessment_score: row.assessment_score,
            emotion,
        });
    }
    Ok(out)
}
