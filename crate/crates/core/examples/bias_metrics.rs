//! IFD and NRD on a hand-sized corpus and on a simulated biased one.

use aesbias::metrics::{
    accumulate, bias_metrics, conditional_shares_over, ifd, nrd, proportions_over, BiasConfig, ParsePolicy,
    Strictness,
};
use aesbias::model::{Gender, Identity, IdentityCategory, OutputLabel, Task};
use aesbias::synthetic::{generate_responses, uniform_types, worked_gender_corpus, BiasSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Eight portrait replies: men lean positive, women lean negative.
    let corpus = worked_gender_corpus();
    let (tensor, _) = accumulate(&corpus.records, &corpus.image_types(), ParsePolicy::Strict);
    let pn = [OutputLabel::Positive, OutputLabel::Negative];
    let table = proportions_over(&tensor, Task::Perception, &pn, Strictness::Strict)?;
    let shares = conditional_shares_over(&tensor, Task::Perception, IdentityCategory::Gender, &[OutputLabel::Positive])?;
    println!("worked corpus: IFD {} over {{positive, negative}}", ifd(&table));
    println!("worked corpus: NRD {} over {{positive}}", nrd(&shares)?.value);

    // 2000 images where female viewers get "positive" 15 points more often.
    let female = Identity::Gender(Gender::Female);
    let spec = BiasSpec::uniform(Task::Perception, female, OutputLabel::Positive, 0.15, 1)?;
    let corpus = generate_responses(&spec, 2000, &uniform_types())?;
    let (tensor, admission) = accumulate(&corpus.records, &corpus.image_types(), ParsePolicy::Lenient);
    let (ifds, nrds) = bias_metrics(&tensor, &BiasConfig::default())?;
    println!("\nsimulated corpus: {} admitted replies", admission.admitted);
    for e in &ifds {
        println!("IFD {:<11} {:.4}", e.task.to_string(), e.value);
    }
    for e in &nrds {
        println!("NRD {:<11} {:<10} {:.4}", e.task.to_string(), e.category.to_string(), e.value);
    }
    Ok(())
}
