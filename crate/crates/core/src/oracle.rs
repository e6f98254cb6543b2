//! Slow, size-capped reference computations used to cross-check the main
//! implementation.
//!
//! Nothing in here shares a code path with [`crate::lime`] or the synthetic
//! backend's prediction routine: least squares is solved from the raw
//! augmented normal equations by Gaussian elimination, and classifier
//! probabilities are recomputed from the coefficient tables.

use std::collections::{BTreeSet, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::lime::{self, fit_surrogate, kernel_weight, sample_masks, LimeConfig};
use crate::metrics::{self, BinSet};
use crate::model::{ClassifierBackend, SyntheticKeywordClassifier, TaskKind};
use crate::text::{tokenize, Mask, TokenizedInput};

/// Largest token count the dense oracle accepts.
pub const MAX_ORACLE_TOKENS: usize = 12;

/// Agreement tolerance used by the self-check suite.
pub const ORACLE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("normal equations are singular")]
    SingularSystem,
    #[error("oracle is capped at {MAX_ORACLE_TOKENS} tokens, got {0}")]
    TooLarge(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleResult {
    pub quantity: String,
    pub trials: usize,
    pub max_abs_error: f64,
    pub passed: bool,
}

/// Weighted ridge regression with an unpenalized intercept, solved from the
/// (n+1)x(n+1) normal equations `(X'WX + diag(0, lambda, ..)) beta = X'Wy`
/// where `X = [1 | z]`. Returns `(coefficients, intercept)`.
pub fn exact_wls(
    masks: &[Mask],
    targets: &[f64],
    weights: &[f64],
    lambda: f64,
) -> Result<(Vec<f64>, f64), OracleError> {
    let m = masks.len();
    if m == 0 || targets.len() != m || weights.len() != m {
        return Err(OracleError::DimensionMismatch(format!(
            "{m} masks, {} targets, {} weights",
            targets.len(),
            weights.len()
        )));
    }
    let n = masks[0].len();
    if n > MAX_ORACLE_TOKENS {
        return Err(OracleError::TooLarge(n));
    }
    let dim = n + 1;
    let row = |mask: &Mask| -> Vec<f64> {
        std::iter::once(1.0)
            .chain(mask.bits().iter().map(|&b| if b { 1.0 } else { 0.0 }))
            .collect()
    };
    // augmented matrix [A | b]
    let mut aug = vec![vec![0.0; dim + 1]; dim];
    for ((mask, &y), &w) in masks.iter().zip(targets).zip(weights) {
        if mask.len() != n {
            return Err(OracleError::DimensionMismatch("masks differ in length".into()));
        }
        let x = row(mask);
        for r in 0..dim {
            for c in 0..dim {
                aug[r][c] += w * x[r] * x[c];
            }
            aug[r][dim] += w * x[r] * y;
        }
    }
    for (d, r) in aug.iter_mut().enumerate().skip(1) {
        r[d] += lambda;
    }

    let scale = aug.iter().flat_map(|r| r[..dim].iter()).fold(0.0f64, |a, v| a.max(v.abs()));
    for col in 0..dim {
        let pivot = (col..dim)
            .max_by(|&a, &b| aug[a][col].abs().total_cmp(&aug[b][col].abs()))
            .expect("non-empty range");
        if aug[pivot][col].abs() <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
            return Err(OracleError::SingularSystem);
        }
        aug.swap(col, pivot);
        for r in col + 1..dim {
            let f = aug[r][col] / aug[col][col];
            if f != 0.0 {
                let (upper, lower) = aug.split_at_mut(r);
                for (x, p) in lower[0][col..].iter_mut().zip(&upper[col][col..]) {
                    *x -= f * p;
                }
            }
        }
    }
    let mut beta = vec![0.0; dim];
    for r in (0..dim).rev() {
        let s: f64 = (r + 1..dim).map(|c| aug[r][c] * beta[c]).sum();
        beta[r] = (aug[r][dim] - s) / aug[r][r];
    }
    let intercept = beta[0];
    Ok((beta[1..].to_vec(), intercept))
}

fn oracle_probability(clf: &SyntheticKeywordClassifier, segments: &[BTreeSet<String>], class: usize) -> f64 {
    let any: BTreeSet<&String> = segments.iter().flatten().collect();
    let logits: Vec<f64> = (0..clf.n_classes())
        .map(|c| {
            let unary: f64 = clf
                .coefficients(c)
                .iter()
                .filter(|(w, _)| any.contains(w))
                .map(|(_, v)| v)
                .sum();
            let pair: f64 = if segments.len() == 2 {
                clf.pair_coefficients(c)
                    .iter()
                    .filter(|((a, b), _)| segments[0].contains(a) && segments[1].contains(b))
                    .map(|(_, v)| v)
                    .sum()
            } else {
                0.0
            };
            clf.intercepts()[c] + unary + pair
        })
        .collect();
    let denom: f64 = logits.iter().map(|l| (l - logits[class]).exp()).sum();
    1.0 / denom
}

fn present_words(input: &TokenizedInput, removed: &BTreeSet<usize>) -> Vec<BTreeSet<String>> {
    (0..input.n_segments())
        .map(|s| {
            input
                .segment_range(s)
                .filter(|i| !removed.contains(i))
                .map(|i| input.token(i).expect("index in range").text.to_lowercase())
                .collect()
        })
        .collect()
}

/// Closed-form `p(class | x) - p(class | x without removed)` for the
/// synthetic linear classifier.
pub fn exact_softmax_drop(
    classifier: &SyntheticKeywordClassifier,
    input: &TokenizedInput,
    removed: &BTreeSet<usize>,
    class: usize,
) -> f64 {
    let full = oracle_probability(classifier, &present_words(input, &BTreeSet::new()), class);
    let reduced = oracle_probability(classifier, &present_words(input, removed), class);
    full - reduced
}

/// Draws a random synthetic problem: an input of `n` distinct words and a
/// three-class classifier with random coefficients on some of them.
pub fn random_problem(rng: &mut ChaCha8Rng, n: usize) -> (SyntheticKeywordClassifier, TokenizedInput) {
    let words: Vec<String> = (0..n).map(|i| format!("tok{i}")).collect();
    let mut clf = SyntheticKeywordClassifier::new(
        TaskKind::SingleText,
        vec!["a".into(), "b".into(), "c".into()],
    );
    for c in 0..3 {
        clf = clf.with_intercept(c, rng.random_range(-1.0..1.0));
        for w in &words {
            if rng.random_bool(0.4) {
                clf = clf.with_coefficient(c, w, rng.random_range(-3.0..3.0));
            }
        }
    }
    let input = tokenize(&[words.join(" ")]).expect("non-empty input");
    (clf, input)
}

fn targets_for(clf: &SyntheticKeywordClassifier, input: &TokenizedInput, masks: &[Mask], class: usize) -> Vec<f64> {
    let texts: Vec<Vec<String>> = masks.iter().map(|m| input.reconstruct(m).expect("mask fits")).collect();
    clf.predict_batch(&texts)
        .expect("synthetic backend never fails")
        .iter()
        .map(|d| d.prob(class))
        .collect()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Cross-checks the surrogate fit against [`exact_wls`] on `trials` random
/// problems with `n_tokens` in 3..=10 and exhaustive masks.
///
/// `uniform` selects unit weights with `lambda = 0`; otherwise kernel weights
/// and `lambda = 1` are used. `inject` is added to every main-path value and
/// exists to prove the check can fail.
pub fn surrogate_check(trials: usize, seed: u64, uniform: bool, inject: f64) -> OracleResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = LimeConfig::default();
    let lambda = if uniform { 0.0 } else { 1.0 };
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let n = rng.random_range(3..=10);
        let (clf, input) = random_problem(&mut rng, n);
        let class = rng.random_range(0..3);
        let masks = sample_masks(n, &cfg, &mut rng);
        let y = targets_for(&clf, &input, &masks, class);
        let w: Vec<f64> = if uniform {
            vec![1.0; masks.len()]
        } else {
            masks.iter().map(|m| kernel_weight(m, &cfg)).collect()
        };
        let fit = match fit_surrogate(&masks, &y, &w, lambda) {
            Ok(f) => f,
            Err(_) => return failed_result(uniform, trials),
        };
        let (coef, b0) = match exact_wls(&masks, &y, &w, lambda) {
            Ok(r) => r,
            Err(_) => return failed_result(uniform, trials),
        };
        let main: Vec<f64> = fit.coefficients.iter().map(|v| v + inject).collect();
        worst = worst
            .max(max_diff(&main, &coef))
            .max((fit.intercept + inject - b0).abs());
    }
    OracleResult {
        quantity: surrogate_name(uniform).into(),
        trials,
        max_abs_error: worst,
        passed: worst < ORACLE_TOLERANCE,
    }
}

fn surrogate_name(uniform: bool) -> &'static str {
    if uniform {
        "surrogate_wls_uniform_lambda0"
    } else {
        "surrogate_ridge_kernel_lambda1"
    }
}

fn failed_result(uniform: bool, trials: usize) -> OracleResult {
    OracleResult {
        quantity: surrogate_name(uniform).into(),
        trials,
        max_abs_error: f64::INFINITY,
        passed: false,
    }
}

/// Cross-checks per-bin comprehensiveness against [`exact_softmax_drop`].
pub fn comprehensiveness_check(trials: usize, seed: u64, inject: f64) -> OracleResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bins = BinSet::default();
    let mut worst: f64 = 0.0;
    for t in 0..trials {
        let n = rng.random_range(3..=10);
        let (clf, input) = random_problem(&mut rng, n);
        let cfg = LimeConfig::default().with_seed(lime::derive_seed(seed, &t.to_string()));
        let expl = match lime::explain(&input, &clf, None, &cfg) {
            Ok(e) => e,
            Err(_) => {
                worst = f64::INFINITY;
                break;
            }
        };
        for &fraction in bins.fractions() {
            let k = metrics::top_k_for_fraction(fraction, n);
            let top: BTreeSet<usize> = metrics::select_top_tokens(&expl, k)
                .expect("k within range")
                .into_iter()
                .collect();
            let main = metrics::comprehensiveness(&input, &clf, expl.target_class, &expl, fraction)
                .map(|v| v + inject)
                .unwrap_or(f64::INFINITY);
            let oracle = exact_softmax_drop(&clf, &input, &top, expl.target_class);
            worst = worst.max((main - oracle).abs());
        }
    }
    OracleResult {
        quantity: "comprehensiveness_vs_closed_form".into(),
        trials,
        max_abs_error: worst,
        passed: worst < ORACLE_TOLERANCE,
    }
}

/// Cross-checks the proximity kernel against a direct evaluation of its
/// definition over every mask of up to 10 tokens.
pub fn kernel_check(inject: f64) -> OracleResult {
    let cfg = LimeConfig::default();
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for n in 1..=10usize {
        let mut seen = HashSet::new();
        for code in 0u32..1 << n {
            let bits: Vec<bool> = (0..n).map(|i| code >> i & 1 == 1).collect();
            let kept = bits.iter().filter(|&&b| b).count();
            if !seen.insert(kept) {
                continue;
            }
            let dot = kept as f64;
            let cos = if kept == 0 { 0.0 } else { dot / ((kept as f64).sqrt() * (n as f64).sqrt()) };
            let d = (1.0 - cos) * cfg.distance_scale;
            let expected = (-(d * d) / cfg.kernel_width.powi(2)).exp();
            let got = kernel_weight(&Mask::from_bits(bits), &cfg) + inject;
            worst = worst.max((got - expected).abs());
            count += 1;
        }
    }
    OracleResult {
        quantity: "kernel_weight_definition".into(),
        trials: count,
        max_abs_error: worst,
        passed: worst < ORACLE_TOLERANCE,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecoveryResult {
    pub trials: usize,
    pub recovered: usize,
    pub n_tokens: usize,
    pub n_samples: usize,
}

impl RecoveryResult {
    pub fn rate(&self) -> f64 {
        self.recovered as f64 / self.trials as f64
    }
}

/// Plants `m` in 1..=3 positive coefficients (each in [1, 3]) on the target
/// class of a three-class classifier over `n_tokens` distinct words, every
/// other coefficient zero, and counts the trials where the top-`m` explained
/// tokens are exactly the planted ones.
pub fn planted_recovery(trials: usize, seed: u64, n_tokens: usize, n_samples: usize) -> RecoveryResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let words: Vec<String> = (0..n_tokens).map(|i| format!("w{i}")).collect();
    let input = tokenize(&[words.join(" ")]).expect("non-empty input");
    let mut recovered = 0;
    for trial in 0..trials {
        let m = rng.random_range(1..=3usize).min(n_tokens);
        let planted: BTreeSet<usize> = rand::seq::index::sample(&mut rng, n_tokens, m).into_iter().collect();
        let mut clf = SyntheticKeywordClassifier::new(
            TaskKind::SingleText,
            vec!["target".into(), "other".into(), "rest".into()],
        );
        for &i in &planted {
            clf = clf.with_coefficient(0, &words[i], rng.random_range(1.0..=3.0));
        }
        let cfg = LimeConfig {
            n_samples,
            seed: seed ^ (trial as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15),
            ..LimeConfig::default()
        };
        let Ok(expl) = lime::explain(&input, &clf, Some(0), &cfg) else {
            continue;
        };
        let top: BTreeSet<usize> = metrics::select_top_tokens(&expl, m)
            .map(|v| v.into_iter().collect())
            .unwrap_or_default();
        if top == planted {
            recovered += 1;
        }
    }
    RecoveryResult {
        trials,
        recovered,
        n_tokens,
        n_samples,
    }
}

/// The default self-check suite run by `xeval oracle`.
pub fn self_check(trials: usize, seed: u64, inject: f64) -> Vec<OracleResult> {
    vec![
        surrogate_check(trials, seed, true, inject),
        surrogate_check(trials.div_ceil(4), seed.wrapping_add(1), false, inject),
        comprehensiveness_check(trials.div_ceil(10), seed.wrapping_add(2), inject),
        kernel_check(inject),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::NLI_CLASSES;

    fn exhaustive(n: usize) -> Vec<Mask> {
        let cfg = LimeConfig { enumerate_exhaustive_below: n + 1, ..Default::default() };
        sample_masks(n, &cfg, &mut ChaCha8Rng::seed_from_u64(0))
    }

    #[test]
    fn recovers_planted_linear_system() {
        let masks = exhaustive(5);
        let truth = [0.3, -1.2, 0.0, 2.5, 0.7];
        let y: Vec<f64> = masks
            .iter()
            .map(|m| -0.4 + (0..5).filter(|&j| m.is_kept(j)).map(|j| truth[j]).sum::<f64>())
            .collect();
        let w: Vec<f64> = (0..masks.len()).map(|i| 0.5 + (i % 3) as f64).collect();
        let (coef, b0) = exact_wls(&masks, &y, &w, 0.0).unwrap();
        assert!((b0 + 0.4).abs() < 1e-9);
        for (c, t) in coef.iter().zip(truth) {
            assert!((c - t).abs() < 1e-9);
        }
    }

    #[test]
    fn huge_ridge_shrinks_to_weighted_mean() {
        let masks = exhaustive(4);
        let y: Vec<f64> = (0..masks.len()).map(|i| (i as f64 * 0.37).sin()).collect();
        let w: Vec<f64> = (0..masks.len()).map(|i| 1.0 + (i % 4) as f64).collect();
        let mean = y.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / w.iter().sum::<f64>();
        let (coef, b0) = exact_wls(&masks, &y, &w, 1e12).unwrap();
        assert!(coef.iter().all(|c| c.abs() < 1e-9));
        assert!((b0 - mean).abs() < 1e-9);
    }

    #[test]
    fn singular_and_oversized() {
        let masks = vec![Mask::all_keep(3); 5];
        assert_eq!(exact_wls(&masks, &[1.0; 5], &[1.0; 5], 0.0).unwrap_err(), OracleError::SingularSystem);
        let big = vec![Mask::all_keep(13); 2];
        assert_eq!(exact_wls(&big, &[1.0; 2], &[1.0; 2], 0.0).unwrap_err(), OracleError::TooLarge(13));
    }

    #[test]
    fn random_eight_token_agreement() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let (clf, input) = random_problem(&mut rng, 8);
        let masks = exhaustive(8);
        let y = targets_for(&clf, &input, &masks, 1);
        let cfg = LimeConfig::default();
        let w: Vec<f64> = masks.iter().map(|m| kernel_weight(m, &cfg)).collect();
        let fit = fit_surrogate(&masks, &y, &w, 1.0).unwrap();
        let (coef, b0) = exact_wls(&masks, &y, &w, 1.0).unwrap();
        assert!(max_diff(&fit.coefficients, &coef) < 1e-6);
        assert!((fit.intercept - b0).abs() < 1e-6);
    }

    #[test]
    fn softmax_drop_cases() {
        let clf = SyntheticKeywordClassifier::nli().with_coefficient(0, "touching", 2.0);
        let input = tokenize(&["A man leans.", "A man is touching a truck."]).unwrap();
        let idx = input.words().iter().position(|w| *w == "touching").unwrap();
        let drop = exact_softmax_drop(&clf, &input, &BTreeSet::from([idx]), 0);
        // e^2/(e^2+2) - 1/3 from an independent script
        assert!((drop - 0.453_652_708_828_265_2).abs() < 1e-12, "{drop}");
        assert_eq!(exact_softmax_drop(&clf, &input, &BTreeSet::from([0]), 0), 0.0);
        assert_eq!(exact_softmax_drop(&clf, &input, &BTreeSet::new(), 0), 0.0);
        assert_eq!(NLI_CLASSES[0], "entailment");
    }

    #[test]
    fn self_check_passes_and_injection_fails() {
        let results = self_check(40, 1, 0.0);
        assert!(results.iter().all(|r| r.passed), "{results:?}");
        let results = self_check(8, 1, 1e-3);
        assert!(results.iter().all(|r| !r.passed));
    }
}
