//! Built-in consistency checks run by `aesbias selftest`.

use crate::ground_truth::{discretize, ScoreScale};
use crate::metrics::{
    accumulate, bias_metrics, conditional_shares, conditional_shares_over, ifd, js_divergence, nrd, proportions,
    proportions_over, similarity_table, AlignmentMode, BiasConfig, ModelLabels, ParsePolicy, ProbabilityVector,
    SimilarityOptions, Strictness,
};
use crate::model::{IdentityCategory, OutputLabel, Task};
use crate::synthetic::{
    analytic_parity_tensor, naive_ifd, naive_nrd, naive_similarity, random_corpus, random_ground_truth,
    uniform_types, worked_gender_corpus,
};

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &str, result: Result<String, String>) -> Check {
    match result {
        Ok(detail) => Check {
            name: name.into(),
            passed: true,
            detail,
        },
        Err(detail) => Check {
            name: name.into(),
            passed: false,
            detail,
        },
    }
}

/// Streaming IFD, NRD and similarity against the brute-force oracles on
/// `corpora` random corpora. Returns the largest absolute difference seen.
pub fn oracle_equivalence(corpora: u64, tolerance: f64) -> Result<f64, String> {
    let mut worst: f64 = 0.0;
    for seed in 0..corpora {
        let corpus = random_corpus(seed);
        let types = corpus.image_types();
        let (tensor, _) = accumulate(&corpus.records, &types, ParsePolicy::Lenient);
        let (ifds, nrds) = bias_metrics(&tensor, &BiasConfig::default()).map_err(|e| format!("seed {seed}: {e}"))?;
        for task in Task::ALL {
            let naive = naive_ifd(&corpus.records, task, task.labels(), ParsePolicy::Lenient).ok();
            let streaming = ifds.iter().find(|e| e.task == task).map(|e| e.value);
            match (naive, streaming) {
                (Some(a), Some(b)) => worst = worst.max((a - b).abs()),
                (None, None) => {}
                (a, b) => return Err(format!("seed {seed} {task}: naive {a:?} streaming {b:?}")),
            }
        }
        for e in &nrds {
            let naive = naive_nrd(&corpus.records, &types, e.task, e.category, e.task.labels(), ParsePolicy::Lenient)
                .map_err(|err| format!("seed {seed}: {err}"))?;
            worst = worst.max((naive - e.value).abs());
        }
        let human = random_ground_truth(&corpus, seed ^ 0xA5A5);
        for task in Task::ALL {
            for mode in [AlignmentMode::DefaultAlignment, AlignmentMode::IdentityAlignment] {
                let labels = ModelLabels::from_records(&corpus.records, task, mode, ParsePolicy::Lenient);
                for category in IdentityCategory::ALL {
                    let fast = similarity_table(&labels, &human, task, category, SimilarityOptions::default()).ok();
                    let slow =
                        naive_similarity(&corpus.records, &human, task, category, mode, ParsePolicy::Lenient).ok();
                    match (fast, slow) {
                        (Some(a), Some(b)) => {
                            for (x, y) in a.rows.iter().zip(&b.rows) {
                                if x.n_images != y.n_images {
                                    return Err(format!("seed {seed}: overlap differs for {}", x.identity));
                                }
                                worst = worst.max((x.similarity - y.similarity).abs()).max((x.aas - y.aas).abs());
                            }
                        }
                        (None, None) => {}
                        (a, b) => {
                            return Err(format!(
                                "seed {seed} {task}/{category}: streaming ok={} naive ok={}",
                                a.is_some(),
                                b.is_some()
                            ))
                        }
                    }
                }
            }
        }
        if worst > tolerance {
            return Err(format!("seed {seed}: difference {worst:e} exceeds {tolerance:e}"));
        }
    }
    Ok(worst)
}

pub fn parity_null() -> Result<String, String> {
    for task in Task::ALL {
        let n = task.n_labels();
        let base: Vec<f64> = (1..=n).map(|i| i as f64).collect();
        let total: f64 = base.iter().sum();
        let mut base: Vec<f64> = base.iter().map(|x| x / total).collect();
        let residue = 1.0 - base.iter().sum::<f64>();
        base[n - 1] += residue;
        let base = ProbabilityVector::new(base).map_err(|e| e.to_string())?;
        let tensor = analytic_parity_tensor(task, &base, &uniform_types(), 360_000).map_err(|e| e.to_string())?;
        let v = ifd(&proportions(&tensor, task, Strictness::Strict).map_err(|e| e.to_string())?);
        if v != 0.0 {
            return Err(format!("{task}: IFD {v}"));
        }
        for c in IdentityCategory::ALL {
            let v = nrd(&conditional_shares(&tensor, task, c)).map_err(|e| e.to_string())?.value;
            if v != 0.0 {
                return Err(format!("{task}/{c}: NRD {v}"));
            }
        }
    }
    Ok("IFD = NRD = 0 on analytic parity counts".into())
}

/// The three worked examples: (IFD, NRD, JS).
pub fn hand_values() -> Result<(f64, f64, f64), String> {
    let corpus = worked_gender_corpus();
    let (tensor, _) = accumulate(&corpus.records, &corpus.image_types(), ParsePolicy::Strict);
    let pn = [OutputLabel::Positive, OutputLabel::Negative];
    let table = proportions_over(&tensor, Task::Perception, &pn, Strictness::Strict).map_err(|e| e.to_string())?;
    let shares = conditional_shares_over(&tensor, Task::Perception, IdentityCategory::Gender, &[OutputLabel::Positive])
        .map_err(|e| e.to_string())?;
    let p = ProbabilityVector::new(vec![0.5, 0.5]).unwrap();
    let q = ProbabilityVector::new(vec![1.0, 0.0]).unwrap();
    Ok((
        ifd(&table),
        nrd(&shares).map_err(|e| e.to_string())?.value,
        js_divergence(&p, &q).map_err(|e| e.to_string())?,
    ))
}

pub fn discretize_boundaries() -> Result<String, String> {
    use OutputLabel::*;
    for scale in [ScoreScale::PARA, ScoreScale::LAPIS] {
        let third = (scale.big_r - scale.r) / 3.0;
        let cases = [
            (scale.r, Negative),
            (scale.r + third, Negative),
            (scale.r + 2.0 * third, Normal),
            (scale.big_r, Positive),
        ];
        for (s, want) in cases {
            let got = discretize(s, scale).map_err(|e| e.to_string())?;
            if got != want {
                return Err(format!("[{}, {}]: {s} -> {got}, expected {want}", scale.r, scale.big_r));
            }
        }
    }
    Ok("boundaries on both scales".into())
}

pub fn one_hot_reduction() -> Result<String, String> {
    let mut pairs = 0;
    for task in Task::ALL {
        for &a in task.labels() {
            for &b in task.labels() {
                let pa = ProbabilityVector::one_hot(task, a).unwrap();
                let pb = ProbabilityVector::one_hot(task, b).unwrap();
                let s = 1.0 - js_divergence(&pa, &pb).unwrap();
                if s != f64::from(u8::from(a == b)) {
                    return Err(format!("{task}: 1 - JS({a}, {b}) = {s}"));
                }
                pairs += 1;
            }
        }
    }
    Ok(format!("{pairs} label pairs"))
}

/// Every check, in a fixed order.
pub fn run_all(corpora: u64) -> Vec<Check> {
    vec![
        check(
            "oracle-equivalence",
            oracle_equivalence(corpora, 1e-12).map(|w| format!("{corpora} corpora, max difference {w:e}")),
        ),
        check("parity-null", parity_null()),
        check(
            "hand-values",
            hand_values().and_then(|(i, n, j)| {
                if i == 0.5 && n == 0.25 && (j - 0.31128).abs() <= 1e-5 {
                    Ok(format!("IFD {i}, NRD {n}, JS {j:.5}"))
                } else {
                    Err(format!("IFD {i}, NRD {n}, JS {j}"))
                }
            }),
        ),
        check("discretize-boundaries", discretize_boundaries()),
        check("one-hot-reduction", one_hot_reduction()),
    ]
}
