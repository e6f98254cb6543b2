//! Explain one premise/hypothesis prediction and print the token scores.
//!
//! cargo run --example explain_nli

use xeval::corpus;
use xeval::lime::{explain, LimeConfig};
use xeval::model::{predict_one, ClassifierBackend};
use xeval::report::{heat_parts, render_token_heat_ansi, TokenHeat};
use xeval::text::tokenize;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let backend = corpus::demo_classifier();
    let input = tokenize(&[
        "Two kids are smiling together on a bench in the park.",
        "The children are outdoors.",
    ])?;

    let dist = predict_one(&backend, input.raw_segments())?;
    for (name, p) in dist.class_names().iter().zip(dist.probs()) {
        println!("{name:>14}: {p:.3}");
    }

    let config = LimeConfig {
        n_samples: 2000,
        ..LimeConfig::default()
    };
    let expl = explain(&input, &backend, None, &config)?;
    println!(
        "\n{} explained for {:?} ({} evaluations, r2 {:.3})",
        backend.name(),
        expl.target_name,
        expl.n_evaluations,
        expl.local_fidelity_r2
    );

    let (tokens, segments, scores) = heat_parts(&input, &expl);
    print!(
        "{}",
        render_token_heat_ansi(&TokenHeat {
            tokens: &tokens,
            segments: &segments,
            scores: &scores,
        })
    );

    let mut ranked: Vec<usize> = (0..tokens.len()).collect();
    ranked.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    for &i in ranked.iter().take(5) {
        println!("{:<10} segment {} {:+.4}", tokens[i], segments[i], scores[i]);
    }

    // explanations for a class other than the prediction
    let contra = dist.class_index("contradiction").unwrap();
    let other = explain(&input, &backend, Some(contra), &config)?;
    let best = (0..tokens.len()).max_by(|&a, &b| other.scores[a].total_cmp(&other.scores[b])).unwrap();
    println!("\nstrongest evidence for contradiction: {:?} ({:+.4})", tokens[best], other.scores[best]);
    Ok(())
}
