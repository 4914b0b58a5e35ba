//! Similarity and AAS of model replies against group preferences.

use aesbias::metrics::{alignment_delta, similarity_table, AlignmentMode, ModelLabels, ParsePolicy, SimilarityOptions};
use aesbias::model::{Gender, Identity, IdentityCategory, Task};
use aesbias::synthetic::{random_corpus, random_ground_truth};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = random_corpus(3);
    let human = random_ground_truth(&corpus, 4);
    let task = Task::Empathy;

    let mut tables = Vec::new();
    for mode in [AlignmentMode::DefaultAlignment, AlignmentMode::IdentityAlignment] {
        let labels = ModelLabels::from_records(&corpus.records, task, mode, ParsePolicy::Lenient);
        let table = similarity_table(&labels, &human, task, IdentityCategory::Gender, SimilarityOptions::default())?;
        println!("{} alignment, mean S {:.4}", mode.short(), table.mean_similarity);
        for row in &table.rows {
            println!("  {:<14} S {:.4}  AAS {:+.4}  ({} images)", row.identity.to_string(), row.similarity, row.aas, row.n_images);
        }
        tables.push(table);
    }

    let d = alignment_delta(
        &tables[0],
        &tables[1],
        Identity::Gender(Gender::Male),
        Identity::Gender(Gender::Female),
    )?;
    println!(
        "\nΔS(male) {:+.4}, ΔS(female) {:+.4}, Δ {:+.4}",
        d.delta_g, d.delta_h, d.delta
    );
    Ok(())
}
