//! The `aesbias` command line.
//!
//! Exit status is 0 on success, 1 for data errors and 2 for usage errors.
//! Errors are written to stderr as one JSON object
//! `{"error": <kind>, "message": <text>}`.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::ground_truth::{
    build_ground_truth, read_annotations, AggregationRule, AliasTable, GroundTruth, GroundTruthOptions,
    GroupPreferenceLabel, ScoreScale,
};
use crate::harness::{run_evaluation_blocking, RunManifest};
use crate::io::{read_jsonl, write_jsonl};
use crate::metrics::{
    compute_report, similarity_table, AlignmentMode, BiasConfig, ImageTypes, MetricReport, MetricsError, ModelLabels,
    ParsePolicy, SimilarityAggregation, SimilarityOptions, Strictness,
};
use crate::model::{validate_response, IdentityCategory, ImageRecord, OutputLabel, ResponseRecord, Task};
use crate::report::{load_reports, model_file_stem, save_report, write_report};
use crate::synthetic::{generate_responses, uniform_types, BiasSpec, TypeDistribution};

#[derive(Parser, Debug)]
#[command(name = "aesbias", version, about = "Stereotype-bias and alignment audit for aesthetic assessment replies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Query the manifest's endpoint over the full image × task × condition grid.
    Evaluate {
        manifest: PathBuf,
        #[arg(long)]
        template_dir: Option<PathBuf>,
        /// Response cache path; overrides the manifest's `cache`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build per-group ground-truth labels from annotations (.csv or .jsonl).
    Ingest {
        annotations: PathBuf,
        /// Rating endpoints `r,R`.
        #[arg(long, value_parser = parse_scale)]
        scale: ScoreScale,
        #[arg(long, value_enum, default_value_t = Rule::Mean)]
        rule: Rule,
        #[arg(long, default_value_t = 1)]
        min_support: u32,
        /// Alias table replacing the builtin one.
        #[arg(long)]
        aliases: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute IFD and NRD per model into a bundle directory.
    Metrics {
        responses: PathBuf,
        /// Admit only strictly parsed replies and fail on empty identities.
        #[arg(long)]
        strict: bool,
        /// Run manifest supplying image types.
        #[arg(long, conflicts_with = "images")]
        manifest: Option<PathBuf>,
        /// Image records (JSON Lines) supplying image types.
        #[arg(long)]
        images: Option<PathBuf>,
        /// Output set override, e.g. `perception=positive,negative`. Repeatable.
        #[arg(long = "labels", value_parser = parse_label_override)]
        labels: Vec<(Task, Vec<OutputLabel>)>,
        #[arg(long)]
        out: PathBuf,
        /// Read responses even if an evaluation on them is still marked running.
        #[arg(long)]
        allow_incomplete: bool,
    },
    /// Compute similarity and AAS against ground truth into a bundle directory.
    Align {
        responses: PathBuf,
        ground_truth: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long)]
        strict: bool,
        #[arg(long, value_enum, default_value_t = Aggregation::PerImage)]
        aggregation: Aggregation,
        #[arg(long)]
        exclude_ambiguous: bool,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        allow_incomplete: bool,
    },
    /// Write tables and plot data for a bundle directory.
    Report {
        bundle: PathBuf,
        /// Output directory; defaults to the bundle directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic corpus with known bias.
    Simulate {
        spec: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n_images: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check streaming metrics against the brute-force oracles.
    Selftest {
        #[arg(long, default_value_t = 200)]
        corpora: u64,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Rule {
    Mean,
    Vote,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Mode {
    Default,
    Identity,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Aggregation {
    PerImage,
    Corpus,
}

fn parse_scale(s: &str) -> Result<ScoreScale, String> {
    let (r, big_r) = s.split_once(',').ok_or("expected `r,R`")?;
    let r: f64 = r.trim().parse().map_err(|e| format!("r: {e}"))?;
    let big_r: f64 = big_r.trim().parse().map_err(|e| format!("R: {e}"))?;
    ScoreScale::new(r, big_r).map_err(|e| e.to_string())
}

fn parse_label_override(s: &str) -> Result<(Task, Vec<OutputLabel>), String> {
    let (task, labels) = s.split_once('=').ok_or("expected `task=label,label`")?;
    let task = Task::from_str(task).map_err(|e| e.to_string())?;
    let labels = labels
        .split(',')
        .map(|l| OutputLabel::from_str(l).map_err(|e| e.to_string()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((task, labels))
}

struct CliError {
    kind: &'static str,
    message: String,
    code: i32,
}

impl CliError {
    fn data(kind: &'static str, message: impl ToString) -> Self {
        CliError {
            kind,
            message: message.to_string(),
            code: 1,
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::data("metrics", e)
    }
}

type CliResult = Result<(), CliError>;

fn emit_error(e: &CliError) {
    let line = json!({"error": e.kind, "message": e.message});
    let _ = writeln!(std::io::stderr(), "{line}");
}

/// Runs the CLI on `args` (including the program name) and returns the exit
/// status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            emit_error(&CliError {
                kind: "usage",
                message: e.render().to_string(),
                code: 2,
            });
            return 2;
        }
    };
    let result = match cli.command {
        Command::Evaluate {
            manifest,
            template_dir,
            out,
        } => evaluate(&manifest, template_dir, out),
        Command::Ingest {
            annotations,
            scale,
            rule,
            min_support,
            aliases,
            out,
        } => ingest(&annotations, scale, rule, min_support, aliases.as_deref(), &out),
        Command::Metrics {
            responses,
            strict,
            manifest,
            images,
            labels,
            out,
            allow_incomplete,
        } => metrics(
            &responses,
            strict,
            manifest.as_deref(),
            images.as_deref(),
            labels,
            &out,
            allow_incomplete,
        ),
        Command::Align {
            responses,
            ground_truth,
            mode,
            strict,
            aggregation,
            exclude_ambiguous,
            out,
            allow_incomplete,
        } => align(
            &responses,
            &ground_truth,
            mode,
            strict,
            aggregation,
            exclude_ambiguous,
            &out,
            allow_incomplete,
        ),
        Command::Report { bundle, out } => report(&bundle, out.as_deref()),
        Command::Simulate {
            spec,
            seed,
            n_images,
            out,
        } => simulate(&spec, seed, n_images, &out),
        Command::Selftest { corpora } => selftest(corpora),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            emit_error(&e);
            e.code
        }
    }
}

fn marker(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn evaluate(manifest_path: &Path, template_dir: Option<PathBuf>, out: Option<PathBuf>) -> CliResult {
    let mut manifest = RunManifest::load(manifest_path).map_err(|e| CliError::data("manifest", e))?;
    if template_dir.is_some() {
        manifest.template_dir = template_dir;
    }
    if out.is_some() {
        manifest.cache = out;
    }
    let cache = manifest.cache_path();
    let running = marker(&cache, ".running");
    let complete = marker(&cache, ".complete");
    if let Some(parent) = cache.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::data("io", format!("{}: {e}", parent.display())))?;
    }
    let _ = fs::remove_file(&complete);
    fs::write(&running, &manifest.run_id).map_err(|e| CliError::data("io", format!("{}: {e}", running.display())))?;

    let outcome = run_evaluation_blocking(&manifest).map_err(|e| CliError::data("harness", e))?;
    let summary = json!({
        "run_id": manifest.run_id,
        "responses": cache.display().to_string(),
        "stats": outcome.stats,
    });
    println!("{summary}");
    for f in &outcome.failures {
        log::error!("{} {} {:?}: {}", f.image_id, f.task, f.identity, f.error);
    }
    if !outcome.failures.is_empty() {
        return Err(CliError::data(
            "incomplete_run",
            format!(
                "{} of {} cells failed; rerun to retry them",
                outcome.failures.len(),
                outcome.stats.cells
            ),
        ));
    }
    fs::remove_file(&running).map_err(|e| CliError::data("io", e))?;
    fs::write(&complete, summary.to_string() + "\n").map_err(|e| CliError::data("io", e))?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct GroundTruthMeta {
    scale: ScoreScale,
    options: GroundTruthOptions,
    annotations: String,
    n_labels: usize,
    n_annotations: usize,
    n_annotators: usize,
    n_images: usize,
    below_min_support: usize,
    exclusions: crate::ground_truth::ExclusionCounter,
}

fn ingest(
    annotations: &Path,
    scale: ScoreScale,
    rule: Rule,
    min_support: u32,
    aliases: Option<&Path>,
    out: &Path,
) -> CliResult {
    let records = read_annotations(annotations).map_err(|e| CliError::data("annotations", e))?;
    let table = match aliases {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::data("io", format!("{}: {e}", p.display())))?;
            AliasTable::parse(&text).map_err(|e| CliError::data("aliases", e))?
        }
        None => AliasTable::builtin().clone(),
    };
    let options = GroundTruthOptions {
        rule: match rule {
            Rule::Mean => AggregationRule::MeanThenDiscretize,
            Rule::Vote => AggregationRule::DiscretizeThenVote,
        },
        min_support,
    };
    let gt: GroundTruth =
        build_ground_truth(&records, scale, options, &table).map_err(|e| CliError::data("ground_truth", e))?;
    write_jsonl(out, &gt.labels).map_err(|e| CliError::data("io", e))?;
    let meta = GroundTruthMeta {
        scale,
        options,
        annotations: annotations.display().to_string(),
        n_labels: gt.labels.len(),
        n_annotations: gt.n_annotations,
        n_annotators: gt.n_annotators,
        n_images: gt.n_images,
        below_min_support: gt.below_min_support,
        exclusions: gt.exclusions,
    };
    let meta_path = marker(out, ".meta.json");
    let text = serde_json::to_string_pretty(&meta).expect("meta serializes");
    fs::write(&meta_path, text + "\n").map_err(|e| CliError::data("io", e))?;
    println!(
        "{}",
        json!({"labels": meta.n_labels, "annotators": meta.n_annotators, "images": meta.n_images,
               "excluded": meta.exclusions.total(), "out": out.display().to_string()})
    );
    Ok(())
}

fn read_responses(path: &Path, allow_incomplete: bool) -> Result<Vec<ResponseRecord>, CliError> {
    if !allow_incomplete && marker(path, ".running").exists() {
        return Err(CliError::data(
            "incomplete_run",
            format!(
                "{} is still marked running; finish `evaluate` or pass --allow-incomplete",
                path.display()
            ),
        ));
    }
    let records: Vec<ResponseRecord> = read_jsonl(path).map_err(|e| CliError::data("responses", e))?;
    records
        .into_iter()
        .map(|r| validate_response(r).map_err(|e| CliError::data("responses", e)))
        .collect()
}

fn model_ids(records: &[ResponseRecord]) -> Vec<String> {
    records
        .iter()
        .map(|r| r.model_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

fn load_or_new(bundle: &Path, model: &str, policy: ParsePolicy, strictness: Strictness) -> MetricReport {
    let path = bundle.join("reports").join(format!("{}.json", model_file_stem(model)));
    fs::read_to_string(&path)
        .ok()
        .and_then(|t| serde_json::from_str(&t).ok())
        .unwrap_or_else(|| MetricReport::new(model, policy, strictness))
}

fn image_types(manifest: Option<&Path>, images: Option<&Path>) -> Result<ImageTypes, CliError> {
    let records: Vec<ImageRecord> = match (manifest, images) {
        (Some(m), _) => RunManifest::load(m).map_err(|e| CliError::data("manifest", e))?.images,
        (None, Some(i)) => read_jsonl(i).map_err(|e| CliError::data("images", e))?,
        (None, None) => {
            log::warn!("no --manifest or --images given; every image counts as `others`");
            Vec::new()
        }
    };
    Ok(records.into_iter().map(|i| (i.image_id, i.image_type)).collect())
}

fn policies(strict: bool) -> (ParsePolicy, Strictness) {
    if strict {
        (ParsePolicy::Strict, Strictness::Strict)
    } else {
        (ParsePolicy::Lenient, Strictness::Lenient)
    }
}

fn metrics(
    responses: &Path,
    strict: bool,
    manifest: Option<&Path>,
    images: Option<&Path>,
    labels: Vec<(Task, Vec<OutputLabel>)>,
    out: &Path,
    allow_incomplete: bool,
) -> CliResult {
    let records = read_responses(responses, allow_incomplete)?;
    let types = image_types(manifest, images)?;
    let (policy, strictness) = policies(strict);
    let config = BiasConfig {
        strictness,
        output_sets: labels.into_iter().collect::<BTreeMap<_, _>>(),
    };
    let models = model_ids(&records);
    if models.is_empty() {
        return Err(CliError::data("responses", format!("{} holds no records", responses.display())));
    }
    let counts_dir = out.join("counts");
    fs::create_dir_all(&counts_dir).map_err(|e| CliError::data("io", e))?;
    for model in models {
        let (fresh, tensor) = compute_report(&model, &records, &types, policy, &config)?;
        let counts_rel = format!("counts/{}.json", model_file_stem(&model));
        let counts_text = serde_json::to_string(&tensor).expect("counts serialize");
        fs::write(out.join(&counts_rel), counts_text + "\n").map_err(|e| CliError::data("io", e))?;

        let mut report = load_or_new(out, &model, policy, strictness);
        report.parse_policy = policy;
        report.strictness = strictness;
        report.admission = fresh.admission;
        report.ifd = fresh.ifd;
        report.nrd = fresh.nrd;
        report.provenance.template_versions = fresh.provenance.template_versions;
        report.provenance.responses = Some(responses.display().to_string());
        report.provenance.counts_file = Some(counts_rel);
        report.provenance.tool_version = env!("CARGO_PKG_VERSION").to_string();
        save_report(out, &report).map_err(|e| CliError::data("io", e))?;

        for e in &report.ifd {
            println!("ifd\t{model}\t{}\t{}", e.task, e.value);
        }
        for e in &report.nrd {
            println!("nrd\t{model}\t{}\t{}\t{}", e.task, e.category, e.value);
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn align(
    responses: &Path,
    ground_truth: &Path,
    mode: Mode,
    strict: bool,
    aggregation: Aggregation,
    exclude_ambiguous: bool,
    out: &Path,
    allow_incomplete: bool,
) -> CliResult {
    let records = read_responses(responses, allow_incomplete)?;
    let human: Vec<GroupPreferenceLabel> = read_jsonl(ground_truth).map_err(|e| CliError::data("ground_truth", e))?;
    let (policy, strictness) = policies(strict);
    let mode = match mode {
        Mode::Default => AlignmentMode::DefaultAlignment,
        Mode::Identity => AlignmentMode::IdentityAlignment,
    };
    let options = SimilarityOptions {
        aggregation: match aggregation {
            Aggregation::PerImage => SimilarityAggregation::PerImage,
            Aggregation::Corpus => SimilarityAggregation::CorpusDistribution,
        },
        exclude_ambiguous,
    };
    let human_tasks: BTreeSet<Task> = human.iter().map(|h| h.task).collect();
    let models = model_ids(&records);
    if models.is_empty() {
        return Err(CliError::data("responses", format!("{} holds no records", responses.display())));
    }
    for model in models {
        let mine: Vec<&ResponseRecord> = records.iter().filter(|r| r.model_id == model).collect();
        let mut report = load_or_new(out, &model, policy, strictness);
        for &task in &human_tasks {
            if !mine.iter().any(|r| r.task == task) {
                continue;
            }
            let labels = ModelLabels::from_records(mine.iter().copied(), task, mode, policy);
            for category in IdentityCategory::ALL {
                match similarity_table(&labels, &human, task, category, options) {
                    Ok(table) => {
                        for row in &table.rows {
                            println!(
                                "aas\t{model}\t{}\t{task}\t{category}\t{}\t{}\t{}",
                                mode.short(),
                                row.identity.bin(),
                                row.similarity,
                                row.aas
                            );
                        }
                        report.upsert_similarity(table);
                    }
                    Err(e @ MetricsError::NoOverlap(_)) if !strict => {
                        log::warn!("{model} {task}/{category}: {e}; skipped");
                    }
                    Err(e) => return Err(e.into()),
                }
            }
        }
        report.provenance.ground_truth = Some(ground_truth.display().to_string());
        if report.provenance.responses.is_none() {
            report.provenance.responses = Some(responses.display().to_string());
        }
        save_report(out, &report).map_err(|e| CliError::data("io", e))?;
    }
    Ok(())
}

fn report(bundle: &Path, out: Option<&Path>) -> CliResult {
    let reports = load_reports(bundle).map_err(|e| CliError::data("report", e))?;
    let out = out.unwrap_or(bundle);
    let written = write_report(bundle, &reports, out).map_err(|e| CliError::data("report", e))?;
    for f in &written.files {
        println!("{}", f.display());
    }
    log::info!("audited {} values against count files", written.audited_values);
    Ok(())
}

/// Contents of a `simulate` spec file (TOML, or JSON by `.json` extension).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimulationFile {
    #[serde(default = "default_sim_images")]
    pub n_images: usize,
    #[serde(default)]
    pub type_distribution: Option<TypeDistribution>,
    pub bias: BiasSpec,
}

fn default_sim_images() -> usize {
    1000
}

fn simulate(spec_path: &Path, seed: Option<u64>, n_images: Option<usize>, out: &Path) -> CliResult {
    let text = fs::read_to_string(spec_path).map_err(|e| CliError::data("io", format!("{}: {e}", spec_path.display())))?;
    let mut spec: SimulationFile = if spec_path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| CliError::data("bias_spec", e))?
    } else {
        toml::from_str(&text).map_err(|e| CliError::data("bias_spec", e))?
    };
    if let Some(s) = seed {
        spec.bias.seed = s;
    }
    if let Some(n) = n_images {
        spec.n_images = n;
    }
    let types = spec.type_distribution.clone().unwrap_or_else(uniform_types);
    let corpus = generate_responses(&spec.bias, spec.n_images, &types)?;
    fs::create_dir_all(out).map_err(|e| CliError::data("io", e))?;
    write_jsonl(&out.join("responses.jsonl"), &corpus.records).map_err(|e| CliError::data("io", e))?;
    write_jsonl(&out.join("images.jsonl"), &corpus.images).map_err(|e| CliError::data("io", e))?;
    println!(
        "{}",
        json!({"records": corpus.records.len(), "images": corpus.images.len(), "seed": spec.bias.seed,
               "out": out.display().to_string()})
    );
    Ok(())
}

fn selftest(corpora: u64) -> CliResult {
    // Random corpora drop identities on purpose; those warnings are noise here.
    log::set_max_level(log::LevelFilter::Error);
    let checks = crate::selftest::run_all(corpora);
    let mut failed = Vec::new();
    for c in &checks {
        println!("{}\t{}\t{}", if c.passed { "pass" } else { "FAIL" }, c.name, c.detail);
        if !c.passed {
            failed.push(c.name.clone());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::data("selftest", format!("failed: {}", failed.join(", "))))
    }
}
