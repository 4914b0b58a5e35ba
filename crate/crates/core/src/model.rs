//! Closed vocabularies and the record types that flow through the pipeline.
//!
//! Every enumeration here has a fixed canonical order. That order is the
//! index basis for label vectors, identity loops and report rows, so it must
//! never be reshuffled.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("label `{label}` is not in the {task} label set")]
    InvalidLabelForTask { task: Task, label: OutputLabel },
    #[error("missing field `{0}`")]
    MissingField(&'static str),
    #[error("parse_status is unparseable but a parsed_label is present")]
    UnexpectedLabel,
    #[error("unknown {kind} `{value}`")]
    UnknownValue { kind: &'static str, value: String },
}

fn unknown(kind: &'static str, value: &str) -> ModelError {
    ModelError::UnknownValue {
        kind,
        value: value.to_string(),
    }
}

/// Implements lowercase string serde for a fieldless enum with a
/// case-insensitive `FromStr`.
macro_rules! string_serde {
    ($ty:ty) => {
        impl Serialize for $ty {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(self.as_str())
            }
        }

        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let raw = String::deserialize(d)?;
                raw.parse().map_err(serde::de::Error::custom)
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

/// Normalizes free text for enumeration lookup: trims, lowercases and folds
/// `_` and en/em dashes into their canonical forms.
fn normalize_token(raw: &str) -> String {
    raw.trim()
        .to_lowercase()
        .replace(['\u{2013}', '\u{2014}'], "-")
        .replace('_', " ")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Task {
    Perception,
    Assessment,
    Empathy,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Perception, Task::Assessment, Task::Empathy];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Perception => "perception",
            Task::Assessment => "assessment",
            Task::Empathy => "empathy",
        }
    }

    /// Canonical output vocabulary for this task.
    pub fn labels(self) -> &'static [OutputLabel] {
        label_set(self)
    }

    pub fn n_labels(self) -> usize {
        self.labels().len()
    }

    /// Position of `label` in the canonical order, or `None` for a label of
    /// another task.
    pub fn label_index(self, label: OutputLabel) -> Option<usize> {
        self.labels().iter().position(|&l| l == label)
    }

    /// Key the model is asked to echo in its reply (`perception: ...`).
    pub fn response_key(self) -> &'static str {
        match self {
            Task::Perception => "perception",
            Task::Assessment => "aesthetic",
            Task::Empathy => "empathy",
        }
    }
}

impl FromStr for Task {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match normalize_token(s).as_str() {
            "perception" | "aesthetic perception" => Ok(Task::Perception),
            "assessment" | "aesthetic assessment" | "aesthetic" => Ok(Task::Assessment),
            "empathy" | "aesthetic empathy" => Ok(Task::Empathy),
            _ => Err(unknown("task", s)),
        }
    }
}

string_serde!(Task);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OutputLabel {
    Positive,
    Normal,
    Negative,
    Amusement,
    Excitement,
    Contentment,
    Awe,
    Disgust,
    Sadness,
    Fear,
    Neutral,
}

const QUALITY_LABELS: [OutputLabel; 3] = [
    OutputLabel::Positive,
    OutputLabel::Normal,
    OutputLabel::Negative,
];

const EMOTION_LABELS: [OutputLabel; 8] = [
    OutputLabel::Amusement,
    OutputLabel::Excitement,
    OutputLabel::Contentment,
    OutputLabel::Awe,
    OutputLabel::Disgust,
    OutputLabel::Sadness,
    OutputLabel::Fear,
    OutputLabel::Neutral,
];

/// The closed label set of a task in canonical order.
pub fn label_set(task: Task) -> &'static [OutputLabel] {
    match task {
        Task::Perception | Task::Assessment => &QUALITY_LABELS,
        Task::Empathy => &EMOTION_LABELS,
    }
}

impl OutputLabel {
    pub const ALL: [OutputLabel; 11] = [
        OutputLabel::Positive,
        OutputLabel::Normal,
        OutputLabel::Negative,
        OutputLabel::Amusement,
        OutputLabel::Excitement,
        OutputLabel::Contentment,
        OutputLabel::Awe,
        OutputLabel::Disgust,
        OutputLabel::Sadness,
        OutputLabel::Fear,
        OutputLabel::Neutral,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            OutputLabel::Positive => "positive",
            OutputLabel::Normal => "normal",
            OutputLabel::Negative => "negative",
            OutputLabel::Amusement => "amusement",
            OutputLabel::Excitement => "excitement",
            OutputLabel::Contentment => "contentment",
            OutputLabel::Awe => "awe",
            OutputLabel::Disgust => "disgust",
            OutputLabel::Sadness => "sadness",
            OutputLabel::Fear => "fear",
            OutputLabel::Neutral => "neutral",
        }
    }

    pub fn belongs_to(self, task: Task) -> bool {
        task.label_index(self).is_some()
    }
}

impl FromStr for OutputLabel {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = normalize_token(s);
        OutputLabel::ALL
            .into_iter()
            .find(|l| l.as_str() == norm)
            .ok_or_else(|| unknown("label", s))
    }
}

string_serde!(OutputLabel);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum IdentityCategory {
    Age,
    Gender,
    Education,
}

impl IdentityCategory {
    pub const ALL: [IdentityCategory; 3] = [
        IdentityCategory::Age,
        IdentityCategory::Gender,
        IdentityCategory::Education,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            IdentityCategory::Age => "age",
            IdentityCategory::Gender => "gender",
            IdentityCategory::Education => "education",
        }
    }

    /// All identities of this category in canonical order.
    pub fn identities(self) -> Vec<Identity> {
        match self {
            IdentityCategory::Age => AgeBin::ALL.iter().map(|&b| Identity::Age(b)).collect(),
            IdentityCategory::Gender => Gender::ALL.iter().map(|&b| Identity::Gender(b)).collect(),
            IdentityCategory::Education => Education::ALL
                .iter()
                .map(|&b| Identity::Education(b))
                .collect(),
        }
    }

    pub fn size(self) -> usize {
        match self {
            IdentityCategory::Age => AgeBin::ALL.len(),
            IdentityCategory::Gender => Gender::ALL.len(),
            IdentityCategory::Education => Education::ALL.len(),
        }
    }
}

impl FromStr for IdentityCategory {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match normalize_token(s).as_str() {
            "age" => Ok(IdentityCategory::Age),
            "gender" => Ok(IdentityCategory::Gender),
            "education" => Ok(IdentityCategory::Education),
            _ => Err(unknown("identity category", s)),
        }
    }
}

string_serde!(IdentityCategory);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AgeBin {
    From18To21,
    From22To25,
    From26To29,
    From30To34,
    From35To40,
}

impl AgeBin {
    pub const ALL: [AgeBin; 5] = [
        AgeBin::From18To21,
        AgeBin::From22To25,
        AgeBin::From26To29,
        AgeBin::From30To34,
        AgeBin::From35To40,
    ];

    /// Inclusive year bounds.
    pub fn bounds(self) -> (u32, u32) {
        match self {
            AgeBin::From18To21 => (18, 21),
            AgeBin::From22To25 => (22, 25),
            AgeBin::From26To29 => (26, 29),
            AgeBin::From30To34 => (30, 34),
            AgeBin::From35To40 => (35, 40),
        }
    }

    pub fn containing(years: u32) -> Option<AgeBin> {
        AgeBin::ALL.into_iter().find(|b| {
            let (lo, hi) = b.bounds();
            (lo..=hi).contains(&years)
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AgeBin::From18To21 => "18-21",
            AgeBin::From22To25 => "22-25",
            AgeBin::From26To29 => "26-29",
            AgeBin::From30To34 => "30-34",
            AgeBin::From35To40 => "35-40",
        }
    }
}

impl FromStr for AgeBin {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = normalize_token(s).replace(' ', "-");
        AgeBin::ALL
            .into_iter()
            .find(|b| b.as_str() == norm)
            .ok_or_else(|| unknown("age bin", s))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Gender {
    Male,
    Female,
}

impl Gender {
    pub const ALL: [Gender; 2] = [Gender::Male, Gender::Female];

    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Male => "male",
            Gender::Female => "female",
        }
    }
}

impl FromStr for Gender {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match normalize_token(s).as_str() {
            "male" => Ok(Gender::Male),
            "female" => Ok(Gender::Female),
            _ => Err(unknown("gender", s)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Education {
    JuniorHighSchool,
    TechnicalSecondarySchool,
    SeniorHighSchool,
    University,
    JuniorCollege,
}

impl Education {
    pub const ALL: [Education; 5] = [
        Education::JuniorHighSchool,
        Education::TechnicalSecondarySchool,
        Education::SeniorHighSchool,
        Education::University,
        Education::JuniorCollege,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Education::JuniorHighSchool => "junior high school",
            Education::TechnicalSecondarySchool => "technical secondary school",
            Education::SeniorHighSchool => "senior high school",
            Education::University => "university",
            Education::JuniorCollege => "junior college",
        }
    }
}

impl FromStr for Education {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = normalize_token(s);
        Education::ALL
            .into_iter()
            .find(|e| e.as_str() == norm)
            .ok_or_else(|| unknown("education level", s))
    }
}

/// One demographic identity `g`, always tied to its category.
///
/// The derived ordering is the canonical identity order: all age bins, then
/// gender, then education, each in taxonomy order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Identity {
    Age(AgeBin),
    Gender(Gender),
    Education(Education),
}

impl Identity {
    pub fn category(self) -> IdentityCategory {
        match self {
            Identity::Age(_) => IdentityCategory::Age,
            Identity::Gender(_) => IdentityCategory::Gender,
            Identity::Education(_) => IdentityCategory::Education,
        }
    }

    pub fn bin(self) -> &'static str {
        match self {
            Identity::Age(b) => b.as_str(),
            Identity::Gender(b) => b.as_str(),
            Identity::Education(b) => b.as_str(),
        }
    }

    pub fn from_parts(category: IdentityCategory, bin: &str) -> Result<Identity, ModelError> {
        Ok(match category {
            IdentityCategory::Age => Identity::Age(bin.parse()?),
            IdentityCategory::Gender => Identity::Gender(bin.parse()?),
            IdentityCategory::Education => Identity::Education(bin.parse()?),
        })
    }
}

/// `category/bin`, e.g. `gender/female` or `age/22-25`.
impl fmt::Display for Identity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.category(), self.bin())
    }
}

impl FromStr for Identity {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (cat, bin) = s.split_once('/').ok_or_else(|| unknown("identity", s))?;
        Identity::from_parts(cat.parse()?, bin)
    }
}

#[derive(Serialize, Deserialize)]
struct IdentityRepr {
    category: IdentityCategory,
    bin: String,
}

impl Serialize for Identity {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        IdentityRepr {
            category: self.category(),
            bin: self.bin().to_string(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Identity {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let repr = IdentityRepr::deserialize(d)?;
        Identity::from_parts(repr.category, &repr.bin).map_err(serde::de::Error::custom)
    }
}

/// All 12 identities in canonical order (5 age, 2 gender, 5 education).
pub fn identity_grid() -> Vec<Identity> {
    IdentityCategory::ALL
        .into_iter()
        .flat_map(IdentityCategory::identities)
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ImageType {
    Portrait,
    Animal,
    Plant,
    Scene,
    Building,
    StillLife,
    NightScene,
    Indoor,
    Others,
}

impl ImageType {
    pub const ALL: [ImageType; 9] = [
        ImageType::Portrait,
        ImageType::Animal,
        ImageType::Plant,
        ImageType::Scene,
        ImageType::Building,
        ImageType::StillLife,
        ImageType::NightScene,
        ImageType::Indoor,
        ImageType::Others,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ImageType::Portrait => "portrait",
            ImageType::Animal => "animal",
            ImageType::Plant => "plant",
            ImageType::Scene => "scene",
            ImageType::Building => "building",
            ImageType::StillLife => "still life",
            ImageType::NightScene => "night scene",
            ImageType::Indoor => "indoor",
            ImageType::Others => "others",
        }
    }

    /// Maps unknown strings to [`ImageType::Others`]; the flag reports
    /// whether that fallback was taken.
    pub fn parse_lossy(raw: &str) -> (ImageType, bool) {
        match raw.parse() {
            Ok(t) => (t, false),
            Err(_) => (ImageType::Others, true),
        }
    }
}

impl FromStr for ImageType {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = normalize_token(s);
        ImageType::ALL
            .into_iter()
            .find(|t| t.as_str() == norm)
            .ok_or_else(|| unknown("image type", s))
    }
}

string_serde!(ImageType);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Dataset {
    Para,
    Lapis,
    Custom,
}

impl Dataset {
    pub fn as_str(self) -> &'static str {
        match self {
            Dataset::Para => "para",
            Dataset::Lapis => "lapis",
            Dataset::Custom => "custom",
        }
    }
}

impl FromStr for Dataset {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match normalize_token(s).as_str() {
            "para" => Ok(Dataset::Para),
            "lapis" => Ok(Dataset::Lapis),
            "custom" => Ok(Dataset::Custom),
            _ => Err(unknown("dataset", s)),
        }
    }
}

string_serde!(Dataset);

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub path_or_uri: String,
    pub image_type: ImageType,
    pub dataset: Dataset,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParseStatus {
    Ok,
    Fuzzy,
    Unparseable,
}

impl ParseStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ParseStatus::Ok => "ok",
            ParseStatus::Fuzzy => "fuzzy",
            ParseStatus::Unparseable => "unparseable",
        }
    }
}

impl FromStr for ParseStatus {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match normalize_token(s).as_str() {
            "ok" => Ok(ParseStatus::Ok),
            "fuzzy" => Ok(ParseStatus::Fuzzy),
            "unparseable" => Ok(ParseStatus::Unparseable),
            _ => Err(unknown("parse status", s)),
        }
    }
}

string_serde!(ParseStatus);

/// One model reply for one `(image, task, condition)` cell. `identity` is
/// `None` for the default (identity-free) prompt.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub model_id: String,
    pub image_id: String,
    pub task: Task,
    pub identity: Option<Identity>,
    pub raw_text: String,
    pub parsed_label: Option<OutputLabel>,
    pub parse_status: ParseStatus,
    pub timestamp: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_version: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_key: Option<String>,
}

/// Enforces the record invariants: a label is present exactly when the
/// reply parsed, and it belongs to the record's task.
pub fn validate_response(record: ResponseRecord) -> Result<ResponseRecord, ModelError> {
    if record.model_id.trim().is_empty() {
        return Err(ModelError::MissingField("model_id"));
    }
    if record.image_id.trim().is_empty() {
        return Err(ModelError::MissingField("image_id"));
    }
    match (record.parse_status, record.parsed_label) {
        (ParseStatus::Ok | ParseStatus::Fuzzy, None) => Err(ModelError::MissingField("parsed_label")),
        (ParseStatus::Unparseable, Some(_)) => Err(ModelError::UnexpectedLabel),
        (_, Some(label)) if !label.belongs_to(record.task) => Err(ModelError::InvalidLabelForTask {
            task: record.task,
            label,
        }),
        _ => Ok(record),
    }
}

/// One annotator's ratings of one image. `demographics` holds the raw
/// export values keyed by category name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub image_id: String,
    pub annotator_id: String,
    #[serde(default)]
    pub demographics: BTreeMap<String, String>,
    #[serde(default)]
    pub perception_score: Option<f64>,
    #[serde(default)]
    pub assessment_score: Option<f64>,
    #[serde(default)]
    pub emotion: Option<OutputLabel>,
}

impl AnnotationRecord {
    pub fn score(&self, task: Task) -> Option<f64> {
        match task {
            Task::Perception => self.perception_score,
            Task::Assessment => self.assessment_score,
            Task::Empathy => None,
        }
    }

    pub fn has_task(&self, task: Task) -> bool {
        match task {
            Task::Empathy => self.emotion.is_some(),
            _ => self.score(task).is_some(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(task: Task, label: Option<OutputLabel>, status: ParseStatus) -> ResponseRecord {
        ResponseRecord {
            model_id: "m".into(),
            image_id: "i".into(),
            task,
            identity: None,
            raw_text: String::new(),
            parsed_label: label,
            parse_status: status,
            timestamp: DateTime::<Utc>::UNIX_EPOCH,
            template_version: None,
            cache_key: None,
        }
    }

    #[test]
    fn label_sets_follow_listing_order() {
        assert_eq!(
            label_set(Task::Perception),
            &[OutputLabel::Positive, OutputLabel::Normal, OutputLabel::Negative]
        );
        assert_eq!(label_set(Task::Assessment), label_set(Task::Perception));
        let empathy = label_set(Task::Empathy);
        assert_eq!(empathy.len(), 8);
        assert_eq!(empathy[0], OutputLabel::Amusement);
        assert_eq!(*empathy.last().unwrap(), OutputLabel::Neutral);
    }

    #[test]
    fn identity_grid_partition() {
        let grid = identity_grid();
        assert_eq!(grid.len(), 12);
        let count = |c| grid.iter().filter(|g| g.category() == c).count();
        assert_eq!(count(IdentityCategory::Age), 5);
        assert_eq!(count(IdentityCategory::Gender), 2);
        assert_eq!(count(IdentityCategory::Education), 5);
        let mut sorted = grid.clone();
        sorted.sort();
        assert_eq!(sorted, grid);
    }

    #[test]
    fn validate_examples() {
        assert!(validate_response(record(Task::Empathy, Some(OutputLabel::Awe), ParseStatus::Ok)).is_ok());
        assert_eq!(
            validate_response(record(Task::Perception, Some(OutputLabel::Awe), ParseStatus::Ok)),
            Err(ModelError::InvalidLabelForTask {
                task: Task::Perception,
                label: OutputLabel::Awe
            })
        );
        assert_eq!(
            validate_response(record(Task::Perception, None, ParseStatus::Ok)),
            Err(ModelError::MissingField("parsed_label"))
        );
        assert_eq!(
            validate_response(record(Task::Perception, Some(OutputLabel::Normal), ParseStatus::Unparseable)),
            Err(ModelError::UnexpectedLabel)
        );
    }

    #[test]
    fn labels_deserialize_case_insensitively() {
        let l: OutputLabel = serde_json::from_str("\"Awe\"").unwrap();
        assert_eq!(l, OutputLabel::Awe);
        assert_eq!(serde_json::to_string(&l).unwrap(), "\"awe\"");
    }

    #[test]
    fn enumerations_serialize_with_spaces() {
        let g = Identity::Education(Education::JuniorHighSchool);
        assert_eq!(
            serde_json::to_string(&g).unwrap(),
            r#"{"category":"education","bin":"junior high school"}"#
        );
        assert_eq!(serde_json::to_string(&ImageType::NightScene).unwrap(), "\"night scene\"");
        let age: Identity = serde_json::from_str(r#"{"category":"age","bin":"22–25"}"#).unwrap();
        assert_eq!(age, Identity::Age(AgeBin::From22To25));
    }

    #[test]
    fn unknown_image_type_maps_to_others() {
        assert_eq!(ImageType::parse_lossy("still_life"), (ImageType::StillLife, false));
        assert_eq!(ImageType::parse_lossy("vehicle"), (ImageType::Others, true));
    }

    fn any_task() -> impl Strategy<Value = Task> {
        prop::sample::select(Task::ALL.to_vec())
    }

    fn any_label() -> impl Strategy<Value = Option<OutputLabel>> {
        prop::option::of(prop::sample::select(OutputLabel::ALL.to_vec()))
    }

    fn any_status() -> impl Strategy<Value = ParseStatus> {
        prop::sample::select(vec![ParseStatus::Ok, ParseStatus::Fuzzy, ParseStatus::Unparseable])
    }

    fn any_identity() -> impl Strategy<Value = Option<Identity>> {
        prop::option::of(prop::sample::select(identity_grid()))
    }

    proptest! {
        #[test]
        fn accepted_records_satisfy_invariants(
            task in any_task(), label in any_label(), status in any_status(), identity in any_identity()
        ) {
            let mut r = record(task, label, status);
            r.identity = identity;
            if let Ok(v) = validate_response(r) {
                prop_assert_eq!(v.parsed_label.is_some(), v.parse_status != ParseStatus::Unparseable);
                if let Some(l) = v.parsed_label {
                    prop_assert!(l.belongs_to(v.task));
                }
            }
        }

        #[test]
        fn record_json_round_trip(
            task in any_task(), label in any_label(), status in any_status(), identity in any_identity()
        ) {
            let mut r = record(task, label, status);
            r.identity = identity;
            let line = serde_json::to_string(&r).unwrap();
            let back: ResponseRecord = serde_json::from_str(&line).unwrap();
            prop_assert_eq!(back, r);
        }
    }
}
