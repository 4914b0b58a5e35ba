//! Acceptance criteria. Runs without the libtest harness so that every
//! criterion prints exactly one pass/fail line; exits nonzero if any fails.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use aesbias::ground_truth::{discretize, ScoreScale};
use aesbias::harness::mock::MockServer;
use aesbias::metrics::{
    accumulate, bias_metrics, conditional_shares, conditional_shares_over, ifd, js_divergence, nrd, proportions,
    proportions_over, similarity_table, AlignmentMode, BiasConfig, MetricReport, ModelLabels, ParsePolicy,
    ProbabilityVector, SimilarityOptions, SimilarityTable, Strictness,
};
use aesbias::model::{Gender, Identity, IdentityCategory, OutputLabel, Task};
use aesbias::report::save_report;
use aesbias::synthetic::{
    analytic_parity_tensor, calibration_curve, generate_responses, naive_ifd, naive_nrd, random_corpus,
    random_ground_truth, uniform_types, worked_gender_corpus, BiasSpec,
};
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn unit(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn pick<T: Copy>(rng: &mut ChaCha8Rng, xs: &[T]) -> T {
    xs[(rng.next_u64() % xs.len() as u64) as usize]
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn aesbias(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aesbias"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn run_ok(args: &[&str]) -> Result<String, String> {
    let out = aesbias(args);
    if out.status.success() {
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    } else {
        Err(format!("`aesbias {}` failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr).trim()))
    }
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const MALE: Identity = Identity::Gender(Gender::Male);
const FEMALE: Identity = Identity::Gender(Gender::Female);

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let corpora = 1000u64;
    let mut worst: f64 = 0.0;
    let mut compared = 0usize;
    for seed in 0..corpora {
        let corpus = random_corpus(seed);
        let n_images = corpus.images.len();
        ensure(n_images <= 50, || format!("seed {seed}: {n_images} images"))?;
        let types = corpus.image_types();
        let (tensor, _) = accumulate(&corpus.records, &types, ParsePolicy::Lenient);
        let (ifds, nrds) = bias_metrics(&tensor, &BiasConfig::default()).map_err(|e| format!("seed {seed}: {e}"))?;
        for task in Task::ALL {
            ensure(corpus.records.iter().any(|r| r.task == task), || format!("seed {seed}: no {task} records"))?;
            let slow = naive_ifd(&corpus.records, task, task.labels(), ParsePolicy::Lenient).ok();
            let fast = ifds.iter().find(|e| e.task == task).map(|e| e.value);
            match (slow, fast) {
                (Some(a), Some(b)) => {
                    worst = worst.max((a - b).abs());
                    compared += 1;
                }
                (None, None) => {}
                (a, b) => return Err(format!("seed {seed} {task}: naive {a:?}, streaming {b:?}")),
            }
            for category in IdentityCategory::ALL {
                let slow = naive_nrd(&corpus.records, &types, task, category, task.labels(), ParsePolicy::Lenient).ok();
                let fast = nrds.iter().find(|e| e.task == task && e.category == category).map(|e| e.value);
                match (slow, fast) {
                    (Some(a), Some(b)) => {
                        worst = worst.max((a - b).abs());
                        compared += 1;
                    }
                    (_, None) => {}
                    (None, Some(b)) => return Err(format!("seed {seed} {task}/{category}: naive failed, streaming {b}")),
                }
            }
        }
    }
    let elapsed = start.elapsed();
    ensure(worst <= 1e-12, || format!("max difference {worst:e}"))?;
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!("{corpora} corpora, {compared} values, max |diff| {worst:e}, {:.1}s", elapsed.as_secs_f64()))
}

fn parity_nulls() -> Outcome {
    let mut detail = String::new();
    for task in Task::ALL {
        let n = task.n_labels();
        // A skewed base so parity is not trivially uniform.
        let weights: Vec<f64> = (1..=n).map(|i| i as f64).collect();
        let total: f64 = weights.iter().sum();
        let mut base: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let residue = 1.0 - base.iter().sum::<f64>();
        base[n - 1] += residue;
        let base = ProbabilityVector::new(base).map_err(|e| e.to_string())?;
        let tensor = analytic_parity_tensor(task, &base, &uniform_types(), 720_720).map_err(|e| e.to_string())?;
        let v = ifd(&proportions(&tensor, task, Strictness::Strict).map_err(|e| e.to_string())?);
        ensure(v == 0.0, || format!("analytic {task}: IFD {v}"))?;
        for c in IdentityCategory::ALL {
            let v = nrd(&conditional_shares(&tensor, task, c)).map_err(|e| e.to_string())?.value;
            ensure(v == 0.0, || format!("analytic {task}/{c}: NRD {v}"))?;
        }
    }
    for task in Task::ALL {
        let favored = task.labels()[0];
        let spec = BiasSpec::uniform(task, FEMALE, favored, 0.0, 2024).map_err(|e| e.to_string())?;
        let corpus = generate_responses(&spec, 10_000, &uniform_types()).map_err(|e| e.to_string())?;
        let (tensor, _) = accumulate(&corpus.records, &corpus.image_types(), ParsePolicy::Strict);
        let v = ifd(&proportions(&tensor, task, Strictness::Strict).map_err(|e| e.to_string())?);
        ensure(v < 0.02, || format!("sampled {task}: IFD {v}"))?;
        let _ = write!(detail, " {task} {v:.4}");
    }
    Ok(format!("analytic IFD = NRD = 0; sampled n=10000 IFD:{detail}"))
}

fn calibration() -> Outcome {
    let grid = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5];
    let specs: Vec<BiasSpec> = grid
        .iter()
        .map(|&e| BiasSpec::uniform(Task::Perception, FEMALE, OutputLabel::Positive, e, 17))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let curve = calibration_curve(&specs, 10_000, &uniform_types()).map_err(|e| e.to_string())?;
    let show = |f: fn(&aesbias::synthetic::CalibrationPoint) -> f64| {
        curve.iter().map(|c| format!("{:.4}", f(c))).collect::<Vec<_>>().join(" ")
    };
    for w in curve.windows(2) {
        ensure(w[1].ifd > w[0].ifd, || format!("IFD not increasing at eps {}: {}", w[1].epsilon, show(|c| c.ifd)))?;
        ensure(w[1].nrd >= w[0].nrd, || format!("NRD decreases at eps {}: {}", w[1].epsilon, show(|c| c.nrd)))?;
    }
    Ok(format!("IFD [{}], NRD [{}]", show(|c| c.ifd), show(|c| c.nrd)))
}

fn hand_examples() -> Outcome {
    let corpus = worked_gender_corpus();
    let (tensor, _) = accumulate(&corpus.records, &corpus.image_types(), ParsePolicy::Strict);
    let pn = [OutputLabel::Positive, OutputLabel::Negative];
    let table = proportions_over(&tensor, Task::Perception, &pn, Strictness::Strict).map_err(|e| e.to_string())?;
    let ifd_v = ifd(&table);
    let shares = conditional_shares_over(&tensor, Task::Perception, IdentityCategory::Gender, &[OutputLabel::Positive])
        .map_err(|e| e.to_string())?;
    let nrd_v = nrd(&shares).map_err(|e| e.to_string())?.value;
    let js = js_divergence(
        &ProbabilityVector::new(vec![0.5, 0.5]).unwrap(),
        &ProbabilityVector::new(vec![1.0, 0.0]).unwrap(),
    )
    .map_err(|e| e.to_string())?;
    ensure(ifd_v == 0.5, || format!("IFD {ifd_v}"))?;
    ensure(nrd_v == 0.25, || format!("NRD {nrd_v}"))?;
    ensure((js - 0.31128).abs() <= 1e-5, || format!("JS {js}"))?;
    Ok(format!("IFD {ifd_v}, NRD {nrd_v}, JS {js:.6}"))
}

fn gender_delta_reproduction() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let bundle = dir.path();
    let mut rdr = csv::Reader::from_path(fixture("gender_delta_empathy.csv")).map_err(|e| e.to_string())?;
    let mut published = BTreeMap::new();
    for row in rdr.records() {
        let row = row.map_err(|e| e.to_string())?;
        let (model, dm, df, delta) = (&row[0], &row[1], &row[2], &row[3]);
        let dm: f64 = dm.parse().map_err(|_| format!("bad ΔS(M) {dm}"))?;
        let df: f64 = df.parse().map_err(|_| format!("bad ΔS(F) {df}"))?;
        let table = |mode, m: f64, f: f64| {
            let scores = BTreeMap::from([(MALE, (m, 1)), (FEMALE, (f, 1))]);
            SimilarityTable::from_scores(Task::Empathy, IdentityCategory::Gender, mode, &scores)
        };
        let mut report = MetricReport::new(model, ParsePolicy::Lenient, Strictness::Lenient);
        report.upsert_similarity(table(AlignmentMode::DefaultAlignment, 0.5, 0.5).map_err(|e| e.to_string())?);
        report.upsert_similarity(
            table(AlignmentMode::IdentityAlignment, 0.5 + dm, 0.5 + df).map_err(|e| e.to_string())?,
        );
        save_report(bundle, &report).map_err(|e| e.to_string())?;
        published.insert(model.to_string(), delta.to_string());
    }
    ensure(published.len() == 15, || format!("{} fixture rows", published.len()))?;
    run_ok(&["report", p(bundle)])?;
    let mut rdr = csv::Reader::from_path(bundle.join("gender_delta.csv")).map_err(|e| e.to_string())?;
    let mut matched = 0;
    for row in rdr.records() {
        let row = row.map_err(|e| e.to_string())?;
        let delta: f64 = row[4].parse().map_err(|_| format!("bad delta {}", &row[4]))?;
        let ours = format!("{delta:.4}");
        let want = published.get(&row[0]).ok_or_else(|| format!("unexpected model {}", &row[0]))?;
        ensure(&ours == want, || format!("{}: computed {ours}, published {want}", &row[0]))?;
        matched += 1;
    }
    ensure(matched == 15, || format!("{matched} rows in gender_delta.csv"))?;
    Ok("15/15 Δ values match to 4 decimals (GPT-4o 0.1143, Claude-3.5-Sonnet 0.2346, Gemini-2.0-Flash 0.4054)".into())
}

fn aas_zero_sum() -> Outcome {
    let mut tables = 0;
    let mut worst: f64 = 0.0;
    let mut check = |t: &SimilarityTable| {
        let s: f64 = t.rows.iter().map(|r| r.aas).sum();
        worst = worst.max(s.abs());
        tables += 1;
    };
    for seed in 0..200 {
        let corpus = random_corpus(seed);
        let human = random_ground_truth(&corpus, seed + 1_000_000);
        for task in Task::ALL {
            for mode in [AlignmentMode::DefaultAlignment, AlignmentMode::IdentityAlignment] {
                let labels = ModelLabels::from_records(&corpus.records, task, mode, ParsePolicy::Lenient);
                for category in IdentityCategory::ALL {
                    if let Ok(t) = similarity_table(&labels, &human, task, category, SimilarityOptions::default()) {
                        check(&t);
                    }
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..10_000 {
        let category = pick(&mut rng, &IdentityCategory::ALL);
        let mode = pick(&mut rng, &[AlignmentMode::DefaultAlignment, AlignmentMode::IdentityAlignment]);
        let scores: BTreeMap<Identity, (f64, usize)> =
            category.identities().into_iter().map(|g| (g, (unit(&mut rng), 1))).collect();
        let t = SimilarityTable::from_scores(Task::Empathy, category, mode, &scores).map_err(|e| e.to_string())?;
        check(&t);
    }
    ensure(worst <= 1e-9, || format!("|Σ AAS| reached {worst:e}"))?;

    let mut pairs = 0;
    for _ in 0..10_000 {
        let task = pick(&mut rng, &Task::ALL);
        let a = pick(&mut rng, task.labels());
        let b = pick(&mut rng, task.labels());
        let pa = ProbabilityVector::one_hot(task, a).map_err(|e| e.to_string())?;
        let pb = ProbabilityVector::one_hot(task, b).map_err(|e| e.to_string())?;
        let s = 1.0 - js_divergence(&pa, &pb).map_err(|e| e.to_string())?;
        let indicator = if a == b { 1.0 } else { 0.0 };
        ensure(s == indicator, || format!("{task}: 1 - JS({a}, {b}) = {s}"))?;
        pairs += 1;
    }
    Ok(format!("{tables} tables, max |Σ AAS| {worst:e}; {pairs} one-hot pairs exact"))
}

/// Direct interval evaluation: negative on [r, r+(R-r)/3], normal on
/// (r+(R-r)/3, r+2(R-r)/3], positive above.
fn interval_label(s: f64, r: f64, big_r: f64) -> OutputLabel {
    let width = big_r - r;
    if s <= r + width / 3.0 {
        OutputLabel::Negative
    } else if s <= r + 2.0 * width / 3.0 {
        OutputLabel::Normal
    } else {
        OutputLabel::Positive
    }
}

fn discretize_mapping() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for scale in [ScoreScale::PARA, ScoreScale::LAPIS] {
        let (r, big_r) = (scale.r, scale.big_r);
        for _ in 0..100_000 {
            let s = r + unit(&mut rng) * (big_r - r);
            let got = discretize(s, scale).map_err(|e| e.to_string())?;
            let want = interval_label(s, r, big_r);
            ensure(got == want, || format!("[{r}, {big_r}] s={s}: {got} vs {want}"))?;
        }
        let w = big_r - r;
        let cases = [
            (r, OutputLabel::Negative),
            (r + w / 3.0, OutputLabel::Negative),
            (r + 2.0 * w / 3.0, OutputLabel::Normal),
            (big_r, OutputLabel::Positive),
        ];
        for (s, want) in cases {
            let got = discretize(s, scale).map_err(|e| e.to_string())?;
            ensure(got == want, || format!("[{r}, {big_r}] boundary {s}: {got}, expected {want}"))?;
        }
    }
    Ok("2 × 10^5 random scores and 8 boundary cases".into())
}

const AGES: [&str; 5] = ["18-21", "22-25", "26-29", "30-34", "35-40"];
const EDUCATION: [&str; 5] = [
    "junior high school",
    "technical secondary school",
    "senior high school",
    "university",
    "junior college",
];
const EMOTIONS: [&str; 8] = [
    "amusement",
    "awe",
    "contentment",
    "excitement",
    "disgust",
    "fear",
    "sadness",
    "neutral",
];
const TYPES: [&str; 5] = ["portrait", "animal", "scene", "building", "night scene"];

fn end_to_end() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = dir.path();
    let mock = MockServer::start_canned().map_err(|e| e.to_string())?;

    let mut manifest = format!(
        "run_id = \"dry-run\"\nscale = [1.0, 5.0]\ntasks = [\"perception\", \"assessment\", \"empathy\"]\n\
         identity_mode = \"both\"\ncache = \"out/responses.jsonl\"\n\n[endpoint]\nmodel_id = \"mock-vlm\"\n\
         base_url = \"{}\"\nmax_parallel = 4\nmax_retries = 1\nbackoff_ms = 10\n",
        mock.base_url()
    );
    std::fs::create_dir_all(root.join("img")).map_err(|e| e.to_string())?;
    for (i, ty) in TYPES.iter().enumerate() {
        let id = format!("im{i}");
        let img = image::RgbImage::from_fn(8, 8, |x, y| image::Rgb([(x * 30) as u8, (y * 30) as u8, (i * 50) as u8]));
        img.save(root.join("img").join(format!("{id}.png"))).map_err(|e| e.to_string())?;
        let _ = write!(
            manifest,
            "\n[[images]]\nimage_id = \"{id}\"\npath_or_uri = \"img/{id}.png\"\nimage_type = \"{ty}\"\ndataset = \"para\"\n"
        );
    }
    let manifest_path = root.join("manifest.toml");
    std::fs::write(&manifest_path, manifest).map_err(|e| e.to_string())?;

    let summary = run_ok(&["evaluate", p(&manifest_path)])?;
    let stats: serde_json::Value = serde_json::from_str(summary.trim()).map_err(|e| format!("{e}: {summary}"))?;
    let stat = |k: &str| stats["stats"][k].as_u64().unwrap_or(u64::MAX);
    ensure(stat("cells") == 195 && stat("ok") == 195, || format!("first run stats {}", stats["stats"]))?;
    ensure(stat("unparseable") == 0 && stat("fuzzy") == 0, || format!("parse stats {}", stats["stats"]))?;
    let responses = root.join("out/responses.jsonl");
    let lines = std::fs::read_to_string(&responses).map_err(|e| e.to_string())?.lines().count();
    ensure(lines == 195, || format!("{lines} records on disk"))?;
    ensure(root.join("out/responses.jsonl.complete").exists(), || "no completion marker".into())?;
    let requests = mock.requests();

    // Annotators cover every identity bin across the five images.
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut csv_text = String::from("image_id,annotator_id,age,gender,education,perception_score,assessment_score,emotion\n");
    for i in 0..TYPES.len() {
        for a in 0..10 {
            let _ = writeln!(
                csv_text,
                "im{i},u{a},{},{},{},{:.2},{:.2},{}",
                AGES[a % 5],
                if a % 2 == 0 { "male" } else { "female" },
                EDUCATION[(a / 2) % 5],
                1.0 + 4.0 * unit(&mut rng),
                1.0 + 4.0 * unit(&mut rng),
                pick(&mut rng, &EMOTIONS)
            );
        }
    }
    let annotations = root.join("annotations.csv");
    std::fs::write(&annotations, csv_text).map_err(|e| e.to_string())?;
    let gt = root.join("out/ground_truth.jsonl");
    run_ok(&["ingest", p(&annotations), "--scale", "1,5", "--out", p(&gt)])?;

    let bundle = root.join("bundle");
    run_ok(&["metrics", p(&responses), "--manifest", p(&manifest_path), "--out", p(&bundle)])?;
    for mode in ["default", "identity"] {
        run_ok(&["align", p(&responses), p(&gt), "--mode", mode, "--out", p(&bundle)])?;
    }
    run_ok(&["report", p(&bundle)])?;

    let report_path = bundle.join("reports/mock-vlm.json");
    let report: MetricReport =
        serde_json::from_str(&std::fs::read_to_string(&report_path).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    ensure(report.ifd.len() == 3, || format!("{} IFD entries", report.ifd.len()))?;
    ensure(report.nrd.len() == 9, || format!("{} NRD entries", report.nrd.len()))?;
    ensure(report.similarity.len() == 18, || format!("{} similarity tables", report.similarity.len()))?;
    for f in [
        "ifd.csv",
        "nrd.csv",
        "aas_default.csv",
        "aas_identity.csv",
        "top_aligned.csv",
        "gender_delta.csv",
        "heatmap.json",
        "radar.json",
        "provenance.json",
    ] {
        let len = std::fs::metadata(bundle.join(f)).map(|m| m.len()).unwrap_or(0);
        ensure(len > 0, || format!("{f} missing or empty"))?;
    }

    let again = run_ok(&["evaluate", p(&manifest_path)])?;
    let again: serde_json::Value = serde_json::from_str(again.trim()).map_err(|e| e.to_string())?;
    ensure(
        again["stats"]["cache_hits"] == 195 && again["stats"]["dispatched"] == 0,
        || format!("resume stats {}", again["stats"]),
    )?;
    ensure(mock.requests() == requests, || format!("resume sent {} requests", mock.requests() - requests))?;

    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(120), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "195 records, 0 unparseable, {requests} requests, resume 195 cache hits, {:.1}s",
        elapsed.as_secs_f64()
    ))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("oracle equivalence", oracle_equivalence),
        ("parity nulls", parity_nulls),
        ("calibration monotonicity", calibration),
        ("worked hand examples", hand_examples),
        ("gender delta table reproduction", gender_delta_reproduction),
        ("AAS zero-sum and one-hot reduction", aas_zero_sum),
        ("score discretization", discretize_mapping),
        ("end-to-end dry run", end_to_end),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|x| name.contains(x.as_str())) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("criterion {}: PASS  {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {}: FAIL  {name}: {detail}", i + 1);
            }
        }
        std::io::stdout().flush().ok();
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
