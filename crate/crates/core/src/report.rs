//! Report tables and plot data over per-model metric reports.
//!
//! A bundle directory holds one `reports/<model>.json` ([`MetricReport`]) per
//! model and the count files those reports name in their provenance.
//! [`write_report`] turns it into CSV tables and JSON plot data.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{
    alignment_delta, bias_metrics, AlignmentMode, BiasConfig, CountTensor, MetricReport, MetricsError,
    SimilarityTable,
};
use crate::model::{Gender, Identity, IdentityCategory, Task};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{model}: similarity table incomplete: {reason}")]
    IncompleteTable { model: String, reason: String },
    #[error("{model}: no {mode} similarity table for {task}")]
    MissingMode {
        model: String,
        mode: &'static str,
        task: Task,
    },
    #[error("no metric reports in {0}")]
    EmptyBundle(String),
    #[error("recompute audit failed: {0}")]
    Audit(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> ReportError {
    ReportError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// How often each identity of a category is the top-AAS identity across
/// models.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopAlignedCount {
    pub task: Task,
    pub category: IdentityCategory,
    /// Every identity of the category, including those with zero wins.
    pub winner_counts: BTreeMap<Identity, usize>,
    /// Models whose maximum AAS was shared by more than one identity.
    pub tied_models: Vec<String>,
}

impl TopAlignedCount {
    pub fn n_models(&self) -> usize {
        self.winner_counts.values().sum()
    }
}

fn check_complete(model: &str, table: &SimilarityTable, task: Task, category: IdentityCategory) -> Result<(), ReportError> {
    let incomplete = |reason: String| ReportError::IncompleteTable {
        model: model.to_string(),
        reason,
    };
    if table.task != task || table.category != category {
        return Err(incomplete(format!(
            "table is for {}/{}, expected {task}/{category}",
            table.task, table.category
        )));
    }
    for g in category.identities() {
        if table.row(g).is_none() {
            return Err(incomplete(format!("no row for {g}")));
        }
    }
    Ok(())
}

/// Counts argmax-AAS identities over models. Ties go to the first identity
/// in canonical order and the model is listed in `tied_models`.
pub fn top_aligned_counts<'a, I>(tables: I, task: Task, category: IdentityCategory) -> Result<TopAlignedCount, ReportError>
where
    I: IntoIterator<Item = (&'a str, &'a SimilarityTable)>,
{
    let mut winner_counts: BTreeMap<Identity, usize> = category.identities().into_iter().map(|g| (g, 0)).collect();
    let mut tied_models = Vec::new();
    for (model, table) in tables {
        check_complete(model, table, task, category)?;
        let (winner, tied) = table.argmax_aas().expect("complete table has rows");
        *winner_counts.get_mut(&winner).unwrap() += 1;
        if tied {
            tied_models.push(model.to_string());
        }
    }
    Ok(TopAlignedCount {
        task,
        category,
        winner_counts,
        tied_models,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenderDeltaRow {
    pub model: String,
    pub task: Task,
    /// `S_identity(male) − S_default(male)`.
    pub delta_s_male: f64,
    pub delta_s_female: f64,
    /// `delta_s_male − delta_s_female`.
    pub delta: f64,
    /// Among the three largest `delta` values.
    pub top3: bool,
    /// Among the three smallest `delta` values.
    pub bottom3: bool,
}

const MALE: Identity = Identity::Gender(Gender::Male);
const FEMALE: Identity = Identity::Gender(Gender::Female);

/// Rank positions (0 = best) of `values` in descending order, ties broken by
/// input position.
fn descending_ranks(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let mut rank = vec![0; values.len()];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r;
    }
    rank
}

/// Change in male and female gender similarity when identity enters the
/// prompt, one row per model in input order, with top-3 / bottom-3 flags on
/// `delta`.
pub fn gender_delta_table<'a, I>(
    task: Task,
    models: I,
    default_tables: &BTreeMap<String, SimilarityTable>,
    identity_tables: &BTreeMap<String, SimilarityTable>,
) -> Result<Vec<GenderDeltaRow>, ReportError>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut rows = Vec::new();
    for model in models {
        let missing = |mode: AlignmentMode| ReportError::MissingMode {
            model: model.to_string(),
            mode: mode.short(),
            task,
        };
        let d = default_tables
            .get(model)
            .ok_or_else(|| missing(AlignmentMode::DefaultAlignment))?;
        let i = identity_tables
            .get(model)
            .ok_or_else(|| missing(AlignmentMode::IdentityAlignment))?;
        let delta = alignment_delta(d, i, MALE, FEMALE)?;
        rows.push(GenderDeltaRow {
            model: model.to_string(),
            task,
            delta_s_male: delta.delta_g,
            delta_s_female: delta.delta_h,
            delta: delta.delta,
            top3: false,
            bottom3: false,
        });
    }
    let deltas: Vec<f64> = rows.iter().map(|r| r.delta).collect();
    let desc = descending_ranks(&deltas);
    let n = rows.len();
    for (row, &rank) in rows.iter_mut().zip(&desc) {
        row.top3 = rank < 3;
        row.bottom3 = rank + 3 >= n;
    }
    Ok(rows)
}

/// Model × task IFD matrix. `None` where a model has no value for a task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub models: Vec<String>,
    pub tasks: Vec<Task>,
    pub values: Vec<Vec<Option<f64>>>,
}

/// Rows keep the input order; columns follow [`Task::ALL`].
pub fn export_heatmap_data(reports: &[MetricReport]) -> Heatmap {
    Heatmap {
        models: reports.iter().map(|r| r.model_id.clone()).collect(),
        tasks: Task::ALL.to_vec(),
        values: reports
            .iter()
            .map(|r| Task::ALL.iter().map(|&t| r.ifd_for(t)).collect())
            .collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadarSeries {
    pub model: String,
    /// Raw AAS per identity, in canonical identity order.
    pub aas: Vec<(Identity, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadarChart {
    pub task: Task,
    pub category: IdentityCategory,
    pub mode: AlignmentMode,
    pub axes: Vec<Identity>,
    pub series: Vec<RadarSeries>,
}

/// One chart per (task, category, mode) found in the reports.
pub fn export_radar_data(reports: &[MetricReport]) -> Vec<RadarChart> {
    let mut keys = BTreeSet::new();
    for r in reports {
        for t in &r.similarity {
            keys.insert((t.mode, t.task, t.category));
        }
    }
    keys.into_iter()
        .map(|(mode, task, category)| RadarChart {
            task,
            category,
            mode,
            axes: category.identities(),
            series: reports
                .iter()
                .filter_map(|r| {
                    let t = r.similarity_for(task, category, mode)?;
                    Some(RadarSeries {
                        model: r.model_id.clone(),
                        aas: t.rows.iter().map(|row| (row.identity, row.aas)).collect(),
                    })
                })
                .collect(),
        })
        .collect()
}

/// Reports loaded from `<bundle>/reports/*.json`, sorted by file name.
pub fn load_reports(bundle: &Path) -> Result<Vec<MetricReport>, ReportError> {
    let dir = bundle.join("reports");
    let mut paths: Vec<PathBuf> = fs::read_dir(&dir)
        .map_err(|e| io_err(&dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(ReportError::EmptyBundle(bundle.display().to_string()));
    }
    paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).map_err(|e| io_err(p, e))?;
            serde_json::from_str(&text).map_err(|e| io_err(p, e))
        })
        .collect()
}

/// File name for a model's report or counts file.
pub fn model_file_stem(model_id: &str) -> String {
    model_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect()
}

pub fn save_report(bundle: &Path, report: &MetricReport) -> Result<PathBuf, ReportError> {
    let dir = bundle.join("reports");
    fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    let path = dir.join(format!("{}.json", model_file_stem(&report.model_id)));
    let text = serde_json::to_string_pretty(report).expect("report serializes");
    fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))?;
    Ok(path)
}

/// Recomputes IFD and NRD from each report's counts file and requires the
/// stored values to match bit for bit. Similarity rows must satisfy
/// `AAS = S − S̄`. Returns the number of values checked.
pub fn audit_bundle(bundle: &Path, reports: &[MetricReport]) -> Result<usize, ReportError> {
    let mut checked = 0;
    for report in reports {
        if !report.ifd.is_empty() || !report.nrd.is_empty() {
            let rel = report.provenance.counts_file.as_ref().ok_or_else(|| {
                ReportError::Audit(format!("{}: bias metrics without a counts file", report.model_id))
            })?;
            let path = bundle.join(rel);
            let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
            let tensor: CountTensor = serde_json::from_str(&text).map_err(|e| io_err(&path, e))?;
            let config = BiasConfig {
                strictness: report.strictness,
                output_sets: report.ifd.iter().map(|e| (e.task, e.labels.clone())).collect(),
            };
            let (ifds, nrds) = bias_metrics(&tensor, &config)?;
            for e in &report.ifd {
                let again = ifds.iter().find(|x| x.task == e.task).map(|x| x.value);
                if again != Some(e.value) {
                    return Err(ReportError::Audit(format!(
                        "{} IFD {}: stored {} recomputed {again:?}",
                        report.model_id, e.task, e.value
                    )));
                }
                checked += 1;
            }
            for e in &report.nrd {
                let again = nrds
                    .iter()
                    .find(|x| x.task == e.task && x.category == e.category)
                    .map(|x| x.value);
                if again != Some(e.value) {
                    return Err(ReportError::Audit(format!(
                        "{} NRD {}/{}: stored {} recomputed {again:?}",
                        report.model_id, e.task, e.category, e.value
                    )));
                }
                checked += 1;
            }
        }
        for t in &report.similarity {
            let rebuilt = SimilarityTable::from_scores(
                t.task,
                t.category,
                t.mode,
                &t.rows.iter().map(|r| (r.identity, (r.similarity, r.n_images))).collect(),
            )?;
            if rebuilt.rows.iter().zip(&t.rows).any(|(a, b)| a.aas != b.aas) || rebuilt.mean_similarity != t.mean_similarity
            {
                return Err(ReportError::Audit(format!(
                    "{} AAS {}/{}/{} inconsistent with S",
                    report.model_id,
                    t.mode.short(),
                    t.task,
                    t.category
                )));
            }
            checked += t.rows.len();
        }
    }
    Ok(checked)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>, ReportError> {
    csv::Writer::from_path(path).map_err(|e| io_err(path, e))
}

fn write_rows<I, R>(path: &Path, header: &[&str], rows: I) -> Result<(), ReportError>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(|e| io_err(path, e))?;
    for row in rows {
        w.write_record(row).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ReportError> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelProvenance {
    pub model_id: String,
    pub parse_policy: crate::metrics::ParsePolicy,
    pub strictness: crate::metrics::Strictness,
    #[serde(flatten)]
    pub provenance: crate::metrics::ReportProvenance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleProvenance {
    pub tool_version: String,
    pub models: Vec<ModelProvenance>,
    pub files: Vec<String>,
    pub audited_values: usize,
}

/// Paths of everything [`write_report`] produced.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportOutput {
    pub files: Vec<PathBuf>,
    pub audited_values: usize,
}

fn tables_by_model(
    reports: &[MetricReport],
    task: Task,
    category: IdentityCategory,
    mode: AlignmentMode,
) -> BTreeMap<String, SimilarityTable> {
    reports
        .iter()
        .filter_map(|r| Some((r.model_id.clone(), r.similarity_for(task, category, mode)?.clone())))
        .collect()
}

/// Writes every table and plot file for `reports` into `out`. Output bytes
/// depend only on the reports.
pub fn write_report(bundle: &Path, reports: &[MetricReport], out: &Path) -> Result<ReportOutput, ReportError> {
    if reports.is_empty() {
        return Err(ReportError::EmptyBundle(bundle.display().to_string()));
    }
    let audited_values = audit_bundle(bundle, reports)?;
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let mut files = Vec::new();
    let mut emit = |name: &str| {
        let p = out.join(name);
        files.push(p.clone());
        p
    };

    write_rows(
        &emit("ifd.csv"),
        &["model", "task", "ifd", "n_phi", "n_o"],
        reports.iter().flat_map(|r| {
            r.ifd.iter().map(move |e| {
                vec![
                    r.model_id.clone(),
                    e.task.to_string(),
                    e.value.to_string(),
                    e.n_phi.to_string(),
                    e.n_o.to_string(),
                ]
            })
        }),
    )?;

    write_rows(
        &emit("nrd.csv"),
        &["model", "task", "category", "nrd", "n_g", "n_o", "valid_cells", "excluded_cells"],
        reports.iter().flat_map(|r| {
            r.nrd.iter().map(move |e| {
                vec![
                    r.model_id.clone(),
                    e.task.to_string(),
                    e.category.to_string(),
                    e.value.to_string(),
                    e.n_g.to_string(),
                    e.n_o.to_string(),
                    e.valid_cells.to_string(),
                    e.excluded_cells.to_string(),
                ]
            })
        }),
    )?;

    for mode in [AlignmentMode::DefaultAlignment, AlignmentMode::IdentityAlignment] {
        write_rows(
            &emit(&format!("aas_{}.csv", mode.short())),
            &["model", "task", "category", "identity", "similarity", "aas", "n_images"],
            reports.iter().flat_map(|r| {
                r.similarity.iter().filter(move |t| t.mode == mode).flat_map(move |t| {
                    t.rows.iter().map(move |row| {
                        vec![
                            r.model_id.clone(),
                            t.task.to_string(),
                            t.category.to_string(),
                            row.identity.bin().to_string(),
                            row.similarity.to_string(),
                            row.aas.to_string(),
                            row.n_images.to_string(),
                        ]
                    })
                })
            }),
        )?;
    }

    let mut top_rows = Vec::new();
    for mode in [AlignmentMode::DefaultAlignment, AlignmentMode::IdentityAlignment] {
        for task in Task::ALL {
            for category in IdentityCategory::ALL {
                let tables = tables_by_model(reports, task, category, mode);
                if tables.is_empty() {
                    continue;
                }
                // Keep report order rather than map order.
                let ordered = reports
                    .iter()
                    .filter_map(|r| tables.get(&r.model_id).map(|t| (r.model_id.as_str(), t)));
                let counts = top_aligned_counts(ordered, task, category)?;
                let n_models = counts.n_models();
                for (g, c) in &counts.winner_counts {
                    top_rows.push(vec![
                        mode.short().to_string(),
                        task.to_string(),
                        category.to_string(),
                        g.bin().to_string(),
                        c.to_string(),
                        n_models.to_string(),
                        counts.tied_models.join(";"),
                    ]);
                }
            }
        }
    }
    write_rows(
        &emit("top_aligned.csv"),
        &["mode", "task", "category", "identity", "count", "n_models", "tied_models"],
        top_rows,
    )?;

    let mut delta_rows = Vec::new();
    for task in Task::ALL {
        let d = tables_by_model(reports, task, IdentityCategory::Gender, AlignmentMode::DefaultAlignment);
        let i = tables_by_model(reports, task, IdentityCategory::Gender, AlignmentMode::IdentityAlignment);
        let models: Vec<&str> = reports
            .iter()
            .map(|r| r.model_id.as_str())
            .filter(|m| d.contains_key(*m) && i.contains_key(*m))
            .collect();
        if models.is_empty() {
            continue;
        }
        delta_rows.extend(gender_delta_table(task, models, &d, &i)?);
    }
    write_rows(
        &emit("gender_delta.csv"),
        &["model", "task", "delta_s_male", "delta_s_female", "delta", "top3", "bottom3"],
        delta_rows.iter().map(|r| {
            vec![
                r.model.clone(),
                r.task.to_string(),
                r.delta_s_male.to_string(),
                r.delta_s_female.to_string(),
                r.delta.to_string(),
                r.top3.to_string(),
                r.bottom3.to_string(),
            ]
        }),
    )?;

    write_json(&emit("heatmap.json"), &export_heatmap_data(reports))?;
    write_json(&emit("radar.json"), &export_radar_data(reports))?;

    let provenance_path = emit("provenance.json");
    let provenance = BundleProvenance {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        models: reports
            .iter()
            .map(|r| ModelProvenance {
                model_id: r.model_id.clone(),
                parse_policy: r.parse_policy,
                strictness: r.strictness,
                provenance: r.provenance.clone(),
            })
            .collect(),
        files: files
            .iter()
            .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .collect(),
        audited_values,
    };
    write_json(&provenance_path, &provenance)?;
    Ok(ReportOutput { files, audited_values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::AgeBin;

    fn table(category: IdentityCategory, mode: AlignmentMode, s: &[f64]) -> SimilarityTable {
        let scores = category.identities().into_iter().zip(s).map(|(g, &v)| (g, (v, 10))).collect();
        SimilarityTable::from_scores(Task::Empathy, category, mode, &scores).unwrap()
    }

    #[test]
    fn female_seventeen_of_nineteen() {
        let mut tables = Vec::new();
        for i in 0..19 {
            let s = if i < 17 { [0.4, 0.6] } else { [0.7, 0.3] };
            tables.push((format!("m{i}"), table(IdentityCategory::Gender, AlignmentMode::DefaultAlignment, &s)));
        }
        let counts = top_aligned_counts(
            tables.iter().map(|(m, t)| (m.as_str(), t)),
            Task::Empathy,
            IdentityCategory::Gender,
        )
        .unwrap();
        assert_eq!(counts.winner_counts[&FEMALE], 17);
        assert_eq!(counts.winner_counts[&MALE], 2);
        assert_eq!(counts.n_models(), 19);
    }

    #[test]
    fn ties_go_to_canonical_first() {
        let t = table(IdentityCategory::Age, AlignmentMode::DefaultAlignment, &[0.2, 0.5, 0.5, 0.1, 0.3]);
        let counts = top_aligned_counts([("m", &t)], Task::Empathy, IdentityCategory::Age).unwrap();
        assert_eq!(counts.winner_counts[&Identity::Age(AgeBin::From22To25)], 1);
        assert_eq!(counts.tied_models, vec!["m".to_string()]);
    }

    #[test]
    fn incomplete_table_rejected() {
        let mut t = table(IdentityCategory::Gender, AlignmentMode::DefaultAlignment, &[0.5, 0.5]);
        t.rows.pop();
        let err = top_aligned_counts([("m", &t)], Task::Empathy, IdentityCategory::Gender).unwrap_err();
        assert!(matches!(err, ReportError::IncompleteTable { .. }));
        let t = table(IdentityCategory::Gender, AlignmentMode::DefaultAlignment, &[0.5, 0.5]);
        assert!(top_aligned_counts([("m", &t)], Task::Perception, IdentityCategory::Gender).is_err());
    }

    #[test]
    fn identical_modes_give_zero_delta() {
        let d = table(IdentityCategory::Gender, AlignmentMode::DefaultAlignment, &[0.3, 0.6]);
        let mut i = d.clone();
        i.mode = AlignmentMode::IdentityAlignment;
        let dm = BTreeMap::from([("m".to_string(), d)]);
        let im = BTreeMap::from([("m".to_string(), i)]);
        let rows = gender_delta_table(Task::Empathy, ["m"], &dm, &im).unwrap();
        assert_eq!((rows[0].delta_s_male, rows[0].delta_s_female, rows[0].delta), (0.0, 0.0, 0.0));
        let err = gender_delta_table(Task::Empathy, ["m"], &dm, &BTreeMap::new()).unwrap_err();
        assert!(matches!(err, ReportError::MissingMode { mode: "identity", .. }));
    }

    #[test]
    fn top_and_bottom_flags() {
        let deltas = [0.5, 0.1, 0.9, 0.3, 0.7, 0.2];
        let mut d = BTreeMap::new();
        let mut i = BTreeMap::new();
        let names: Vec<String> = (0..deltas.len()).map(|k| format!("m{k}")).collect();
        for (name, &delta) in names.iter().zip(&deltas) {
            d.insert(name.clone(), table(IdentityCategory::Gender, AlignmentMode::DefaultAlignment, &[0.5, 0.5]));
            i.insert(
                name.clone(),
                table(IdentityCategory::Gender, AlignmentMode::IdentityAlignment, &[0.5 + delta, 0.5]),
            );
        }
        let rows = gender_delta_table(Task::Empathy, names.iter().map(String::as_str), &d, &i).unwrap();
        let top: Vec<&str> = rows.iter().filter(|r| r.top3).map(|r| r.model.as_str()).collect();
        let bottom: Vec<&str> = rows.iter().filter(|r| r.bottom3).map(|r| r.model.as_str()).collect();
        assert_eq!(top, ["m0", "m2", "m4"]);
        assert_eq!(bottom, ["m1", "m3", "m5"]);
    }

    #[test]
    fn heatmap_round_trip_and_order() {
        let mut reports = Vec::new();
        for (name, v) in [("b", 0.4651), ("a", 0.2020)] {
            let mut r = MetricReport::new(name, Default::default(), Default::default());
            r.ifd.push(crate::metrics::IfdEntry {
                task: Task::Perception,
                value: v,
                n_phi: 3,
                n_o: 3,
                n_g: BTreeMap::new(),
                labels: Task::Perception.labels().to_vec(),
                dropped: vec![],
            });
            reports.push(r);
        }
        let h = export_heatmap_data(&reports);
        assert_eq!(h.models, ["b", "a"]);
        assert_eq!(h.values[0], vec![Some(0.4651), None, None]);
        let back: Heatmap = serde_json::from_str(&serde_json::to_string(&h).unwrap()).unwrap();
        assert_eq!(back, h);
    }

    #[test]
    fn radar_uses_raw_aas() {
        let mut r = MetricReport::new("m", Default::default(), Default::default());
        r.upsert_similarity(table(IdentityCategory::Gender, AlignmentMode::IdentityAlignment, &[0.2, 0.6]));
        let charts = export_radar_data(&[r]);
        assert_eq!(charts.len(), 1);
        let series = &charts[0].series[0].aas;
        assert_eq!(series[0].0, MALE);
        assert!((series[0].1 + 0.2).abs() < 1e-12 && (series[1].1 - 0.2).abs() < 1e-12);
    }
}
