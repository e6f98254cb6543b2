//! Agreement with human highlights: IOU between the top-k explained tokens and
//! an annotated rationale, with k set from the dataset's mean rationale length.
//!
//! cargo run --example plausibility_iou

use std::collections::BTreeSet;

use xeval::corpus;
use xeval::lime::{derive_seed, explain, LimeConfig};
use xeval::metrics::{iou, plausibility_iou, plausibility_k, select_top_tokens};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = corpus::mini_esnli();
    let ratio = data.manifest.dataset_mean_human_ratio;
    let backend = corpus::keyword_classifier();
    let base = LimeConfig::default();

    let mut total = 0.0;
    for inst in data.instances.iter().take(6) {
        let input = inst.tokenized();
        let human = inst.highlights.clone().unwrap_or_default();
        let config = base.clone().with_seed(derive_seed(7, &inst.id));
        let gold = input_class(&backend, &inst.gold_label);
        let expl = explain(&input, &backend, gold, &config)?;
        let (score, k) = plausibility_iou(&expl, &human, ratio)?;
        let words = input.words();
        let top: Vec<&str> = select_top_tokens(&expl, k)?.iter().map(|&i| words[i]).collect();
        let marked: Vec<&str> = human.iter().map(|&i| words[i]).collect();
        println!("{} k={k} iou={score:.2} top={top:?} human={marked:?}", inst.id);
        total += score;
    }
    println!("mean IOU {:.3}", total / 6.0);

    // k depends only on input length and the dataset ratio
    for n in [5, 12, 20, 40] {
        println!("n={n:<3} k={}", plausibility_k(n, ratio));
    }
    let a: BTreeSet<usize> = [1, 2, 3].into();
    let b: BTreeSet<usize> = [2, 3, 4, 5].into();
    println!("iou({a:?}, {b:?}) = {:.2}", iou(&a, &b)?);
    Ok(())
}

fn input_class(backend: &xeval::model::SyntheticKeywordClassifier, label: &str) -> Option<usize> {
    backend.class_index(label)
}
