//! Builds per-group labels from a small annotation export.

use std::path::Path;

use aesbias::ground_truth::{build_ground_truth, read_annotations, AliasTable, GroundTruthOptions, ScoreScale};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/annotations.csv");
    let annotations = read_annotations(&path)?;
    let gt = build_ground_truth(
        &annotations,
        ScoreScale::PARA,
        GroundTruthOptions::default(),
        AliasTable::builtin(),
    )?;
    println!(
        "{} annotations from {} annotators on {} images -> {} group labels",
        gt.n_annotations,
        gt.n_annotators,
        gt.n_images,
        gt.labels.len()
    );
    for l in gt.labels.iter().filter(|l| l.image_id == "img-a").take(9) {
        println!("{:6} {:32} {:10} {}", l.image_id, l.group.to_string(), l.task.to_string(), l.label);
    }
    Ok(())
}
