use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::model::{Identity, IdentityCategory, ImageType, OutputLabel, ParseStatus, ResponseRecord, Task};

/// Which parse outcomes are admitted into the counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParsePolicy {
    /// `ok` only.
    Strict,
    /// `ok` and `fuzzy`.
    #[default]
    Lenient,
}

impl ParsePolicy {
    pub fn admits(self, status: ParseStatus) -> bool {
        match status {
            ParseStatus::Ok => true,
            ParseStatus::Fuzzy => self == ParsePolicy::Lenient,
            ParseStatus::Unparseable => false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellKey {
    pub task: Task,
    pub identity: Identity,
    pub label: OutputLabel,
    pub image_type: ImageType,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdmissionStats {
    pub total: u64,
    pub ok: u64,
    pub fuzzy: u64,
    pub unparseable: u64,
    /// Records that entered the counts.
    pub admitted: u64,
    /// Parsed records rejected by a strict policy.
    pub rejected_fuzzy: u64,
    /// Default-prompt records; they carry no identity and are not counted.
    pub default_prompt: u64,
    /// Records whose image had no known type and were filed under `others`.
    pub unknown_image_type: u64,
    /// Records whose label does not belong to their task.
    pub invalid_label: u64,
}

impl AdmissionStats {
    pub fn merge(&mut self, other: &AdmissionStats) {
        self.total += other.total;
        self.ok += other.ok;
        self.fuzzy += other.fuzzy;
        self.unparseable += other.unparseable;
        self.admitted += other.admitted;
        self.rejected_fuzzy += other.rejected_fuzzy;
        self.default_prompt += other.default_prompt;
        self.unknown_image_type += other.unknown_image_type;
        self.invalid_label += other.invalid_label;
    }
}

/// Counts `n(M(i,t,g)=k | m)` with cached marginals over image type and
/// label.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CountTensor {
    cells: BTreeMap<CellKey, u64>,
    by_label: BTreeMap<(Task, Identity, OutputLabel), u64>,
    by_identity: BTreeMap<(Task, Identity), u64>,
}

impl CountTensor {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `n` to a cell.
    ///
    /// # Panics
    /// If the label is not in the task's label set.
    pub fn add(&mut self, key: CellKey, n: u64) {
        assert!(
            key.label.belongs_to(key.task),
            "label {} does not belong to {}",
            key.label,
            key.task
        );
        if n == 0 {
            return;
        }
        *self.cells.entry(key).or_default() += n;
        *self.by_label.entry((key.task, key.identity, key.label)).or_default() += n;
        *self.by_identity.entry((key.task, key.identity)).or_default() += n;
    }

    pub fn get(&self, key: &CellKey) -> u64 {
        self.cells.get(key).copied().unwrap_or(0)
    }

    /// `n(g, k)` summed over image types.
    pub fn label_count(&self, task: Task, identity: Identity, label: OutputLabel) -> u64 {
        self.by_label.get(&(task, identity, label)).copied().unwrap_or(0)
    }

    pub fn identity_total(&self, task: Task, identity: Identity) -> u64 {
        self.by_identity.get(&(task, identity)).copied().unwrap_or(0)
    }

    pub fn cells(&self) -> impl Iterator<Item = (&CellKey, &u64)> {
        self.cells.iter()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.cells.values().sum()
    }

    pub fn tasks(&self) -> BTreeSet<Task> {
        self.by_identity.keys().map(|(t, _)| *t).collect()
    }

    /// Categories with at least one counted response for `task`.
    pub fn categories(&self, task: Task) -> BTreeSet<IdentityCategory> {
        self.by_identity
            .keys()
            .filter(|(t, _)| *t == task)
            .map(|(_, g)| g.category())
            .collect()
    }

    /// Cellwise addition. Associative and commutative, so partial tensors
    /// built concurrently can be combined in any order.
    pub fn merge(&mut self, other: &CountTensor) {
        for (key, n) in &other.cells {
            self.add(*key, *n);
        }
    }

    /// Multiplies every count by `factor`.
    pub fn scaled(&self, factor: u64) -> CountTensor {
        let mut out = CountTensor::new();
        for (key, n) in &self.cells {
            out.add(*key, n * factor);
        }
        out
    }

    /// Recomputes both marginals from the cells and compares.
    pub fn marginals_consistent(&self) -> bool {
        let mut rebuilt = CountTensor::new();
        for (key, n) in &self.cells {
            rebuilt.add(*key, *n);
        }
        rebuilt.by_label == self.by_label && rebuilt.by_identity == self.by_identity
    }
}

#[derive(Serialize, Deserialize)]
struct CellRow {
    task: Task,
    identity: Identity,
    label: OutputLabel,
    image_type: ImageType,
    count: u64,
}

#[derive(Serialize, Deserialize)]
struct CountFile {
    cells: Vec<CellRow>,
}

impl Serialize for CountTensor {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        CountFile {
            cells: self
                .cells
                .iter()
                .map(|(k, &count)| CellRow {
                    task: k.task,
                    identity: k.identity,
                    label: k.label,
                    image_type: k.image_type,
                    count,
                })
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for CountTensor {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let file = CountFile::deserialize(d)?;
        let mut tensor = CountTensor::new();
        for row in file.cells {
            if !row.label.belongs_to(row.task) {
                return Err(serde::de::Error::custom(format!(
                    "label {} does not belong to {}",
                    row.label, row.task
                )));
            }
            tensor.add(
                CellKey {
                    task: row.task,
                    identity: row.identity,
                    label: row.label,
                    image_type: row.image_type,
                },
                row.count,
            );
        }
        Ok(tensor)
    }
}

/// Image id to image type. Ids missing from the map count as `others`.
pub type ImageTypes = HashMap<String, ImageType>;

/// Tallies identity-conditioned records admitted by `policy`. Record order
/// does not matter.
pub fn accumulate<'a, I>(records: I, images: &ImageTypes, policy: ParsePolicy) -> (CountTensor, AdmissionStats)
where
    I: IntoIterator<Item = &'a ResponseRecord>,
{
    let mut tensor = CountTensor::new();
    let mut stats = AdmissionStats::default();
    for r in records {
        stats.total += 1;
        match r.parse_status {
            ParseStatus::Ok => stats.ok += 1,
            ParseStatus::Fuzzy => stats.fuzzy += 1,
            ParseStatus::Unparseable => stats.unparseable += 1,
        }
        let Some(identity) = r.identity else {
            stats.default_prompt += 1;
            continue;
        };
        let Some(label) = r.parsed_label else {
            continue;
        };
        if r.parse_status == ParseStatus::Unparseable {
            continue;
        }
        if !policy.admits(r.parse_status) {
            stats.rejected_fuzzy += 1;
            continue;
        }
        if !label.belongs_to(r.task) {
            stats.invalid_label += 1;
            continue;
        }
        let image_type = match images.get(&r.image_id) {
            Some(t) => *t,
            None => {
                stats.unknown_image_type += 1;
                ImageType::Others
            }
        };
        tensor.add(
            CellKey {
                task: r.task,
                identity,
                label,
                image_type,
            },
            1,
        );
        stats.admitted += 1;
    }
    (tensor, stats)
}
