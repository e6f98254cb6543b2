//! Zero-shot classification over free-form candidates, explained token by token.
//!
//! cargo run --example explain_zsc

use xeval::corpus;
use xeval::lime::{explain, LimeConfig};
use xeval::model::{predict_one, ZeroShotClassifier, DEFAULT_TEMPLATE};
use xeval::text::tokenize;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let question = "Where would you find a courtyard in the homes of the country of spain?";
    let candidates: Vec<String> = ["spain", "castle", "office", "lawn", "airport"]
        .iter()
        .map(|s| s.to_string())
        .collect();

    // every candidate becomes an NLI hypothesis built from the template
    let clf = ZeroShotClassifier::new(corpus::keyword_classifier(), candidates, DEFAULT_TEMPLATE)?;
    let input = tokenize(&[question])?;
    let dist = predict_one(&clf, input.raw_segments())?;
    for (c, p) in dist.class_names().iter().zip(dist.probs()) {
        println!("{c:>8} {p:.3}");
    }

    let expl = explain(&input, &clf, None, &LimeConfig::default())?;
    println!("\npredicted {:?}; token scores:", expl.target_name);
    for (word, s) in input.words().iter().zip(&expl.scores) {
        println!("  {word:<10} {s:+.4}");
    }

    let custom = ZeroShotClassifier::new(
        corpus::keyword_classifier(),
        clf.candidates().to_vec(),
        "You would find it in {}.",
    )?;
    let alt = predict_one(&custom, input.raw_segments())?;
    println!("\nwith a different template: {}", alt.predicted_name());
    Ok(())
}
