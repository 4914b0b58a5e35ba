//! Assembles a report bundle for two simulated models and writes every
//! table and plot file.

use aesbias::metrics::{
    compute_report, similarity_table, AlignmentMode, BiasConfig, ModelLabels, ParsePolicy, SimilarityOptions,
};
use aesbias::model::{Gender, Identity, IdentityCategory, OutputLabel, Task};
use aesbias::report::{save_report, write_report};
use aesbias::synthetic::{generate_responses, random_ground_truth, uniform_types, BiasSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let bundle = dir.path();
    let female = Identity::Gender(Gender::Female);

    let mut reports = Vec::new();
    for (model, epsilon) in [("fair-model", 0.0), ("skewed-model", 0.3)] {
        let spec = BiasSpec::uniform(Task::Empathy, female, OutputLabel::Awe, epsilon, 9)?;
        let mut corpus = generate_responses(&spec, 300, &uniform_types())?;
        // Default-prompt replies come from the unbiased distribution.
        let neutral = generate_responses(&BiasSpec { epsilon: 0.0, seed: 11, ..spec.clone() }, 300, &uniform_types())?;
        corpus.records.extend(neutral.records.iter().step_by(12).map(|r| {
            let mut r = r.clone();
            r.identity = None;
            r
        }));
        for r in &mut corpus.records {
            r.model_id = model.into();
        }
        let human = random_ground_truth(&corpus, 10);

        let (mut report, tensor) =
            compute_report(model, &corpus.records, &corpus.image_types(), ParsePolicy::Lenient, &BiasConfig::default())?;
        let counts = format!("counts/{model}.json");
        std::fs::create_dir_all(bundle.join("counts"))?;
        std::fs::write(bundle.join(&counts), serde_json::to_string(&tensor)?)?;
        report.provenance.counts_file = Some(counts);

        for mode in [AlignmentMode::DefaultAlignment, AlignmentMode::IdentityAlignment] {
            let labels = ModelLabels::from_records(&corpus.records, Task::Empathy, mode, ParsePolicy::Lenient);
            for category in IdentityCategory::ALL {
                let table = similarity_table(&labels, &human, Task::Empathy, category, SimilarityOptions::default())?;
                report.upsert_similarity(table);
            }
        }
        save_report(bundle, &report)?;
        reports.push(report);
    }

    let out = write_report(bundle, &reports, bundle)?;
    println!("audited {} stored values", out.audited_values);
    for f in &out.files {
        println!("wrote {}", f.file_name().unwrap().to_string_lossy());
    }
    println!("\n{}", std::fs::read_to_string(bundle.join("ifd.csv"))?);
    print!("{}", std::fs::read_to_string(bundle.join("gender_delta.csv"))?);
    Ok(())
}
