//! Faithfulness by deletion: drop the top-ranked tokens and watch the
//! predicted probability fall.
//!
//! cargo run --example comprehensiveness

use xeval::corpus;
use xeval::lime::{explain, LimeConfig};
use xeval::metrics::{aggregated_comprehensiveness, comprehensiveness, select_top_tokens, top_k_for_fraction, BinSet};
use xeval::model::{ConstantClassifier, PredictionDist, TaskKind, NLI_CLASSES};
use xeval::text::{tokenize, Mask};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let backend = corpus::keyword_classifier();
    let input = tokenize(&[
        "Nobody is in the empty room and the lights are off.",
        "A crowd is dancing in the room.",
    ])?;
    let expl = explain(&input, &backend, None, &LimeConfig::default())?;
    println!("target {:?}, p = {:.3}", expl.target_name, expl.full_probability);

    let n = input.n_tokens();
    for fraction in [0.1, 0.2, 0.3, 0.5, 0.8] {
        let k = top_k_for_fraction(fraction, n);
        let top = select_top_tokens(&expl, k)?;
        let reduced = input.reconstruct(&Mask::removing(n, &top))?;
        let comp = comprehensiveness(&input, &backend, expl.target_class, &expl, fraction)?;
        println!("{fraction:.1}: k={k:<2} comp={comp:+.3}  kept: {reduced:?}");
    }

    let bins: BinSet = "0.1,0.3,0.5".parse()?;
    let agg = aggregated_comprehensiveness(&input, &backend, expl.target_class, &expl, &bins)?;
    println!("aggregated over {bins}: {:.3}", agg.comp_agg);

    let uniform = PredictionDist::new(vec![1.0 / 3.0; 3], NLI_CLASSES.iter().map(|s| s.to_string()).collect())?;
    let flat = ConstantClassifier::new(TaskKind::NliPair, uniform);
    let flat_expl = explain(&input, &flat, None, &LimeConfig::default())?;
    let zero = aggregated_comprehensiveness(&input, &flat, 0, &flat_expl, &bins)?;
    println!("a classifier that ignores its input scores {:.3}", zero.comp_agg);
    Ok(())
}
