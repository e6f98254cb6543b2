//! Brute-force cross-checks of the surrogate fit and the deletion metric, and
//! what a deliberately broken implementation looks like.
//!
//! cargo run --release --example oracle_self_check

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use xeval::lime::{fit_surrogate, kernel_weight, LimeConfig};
use xeval::oracle::{exact_wls, random_problem, self_check};
use xeval::text::Mask;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for r in self_check(200, 0, 0.0) {
        println!("{:<28} max err {:.2e} {}", r.quantity, r.max_abs_error, if r.passed { "ok" } else { "FAIL" });
    }
    println!("\nwith an injected error of 1e-3:");
    for r in self_check(50, 0, 1e-3) {
        println!("{:<28} max err {:.2e} {}", r.quantity, r.max_abs_error, if r.passed { "ok" } else { "FAIL" });
    }

    // one problem by hand: every mask of a 6-token input
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (clf, input) = random_problem(&mut rng, 6);
    let n = input.n_tokens();
    let masks: Vec<Mask> = (0..1u32 << n)
        .map(|bits| Mask::from_bits((0..n).map(|i| bits >> i & 1 == 1).collect()))
        .collect();
    let config = LimeConfig::default();
    let weights: Vec<f64> = masks.iter().map(|m| kernel_weight(m, &config)).collect();
    let targets: Vec<f64> = masks
        .iter()
        .map(|m| {
            let kept = input.reconstruct(m).unwrap();
            xeval::model::predict_one(&clf, &kept).unwrap().prob(0)
        })
        .collect();
    let fit = fit_surrogate(&masks, &targets, &weights, 1.0)?;
    let (exact, intercept) = exact_wls(&masks, &targets, &weights, 1.0)?;
    let err = fit
        .coefficients
        .iter()
        .zip(&exact)
        .map(|(a, b)| (a - b).abs())
        .fold((fit.intercept - intercept).abs(), f64::max);
    println!("\n{:?}\ncoefficients {:.4?}\nmax difference from the normal equations {err:.1e}", input.words(), fit.coefficients);
    Ok(())
}
