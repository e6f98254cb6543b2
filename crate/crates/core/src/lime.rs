//! Perturbation-based local surrogate explanations.
//!
//! For one input the engine samples keep/remove masks over its tokens, queries
//! the classifier on every reconstructed text, weights each sample by its
//! proximity to the unperturbed input and fits a weighted ridge regression of
//! the target-class probability on the binary mask vectors. The fitted
//! coefficients are the per-token importance scores.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{BackendError, ClassifierBackend, PredictionDist};
use crate::text::{Mask, TextError, TokenizedInput};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LimeError {
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("target class {target} out of range for {n_classes} classes")]
    TargetOutOfRange { target: usize, n_classes: usize },
    #[error("invalid surrogate data: {0}")]
    InvalidData(String),
    #[error("surrogate normal equations are singular")]
    SingularSystem,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LimeConfig {
    pub n_samples: usize,
    pub kernel_width: f64,
    pub distance_scale: f64,
    pub ridge_lambda: f64,
    pub seed: u64,
    /// Inputs with fewer tokens than this are explained over all 2^n masks.
    pub enumerate_exhaustive_below: usize,
    /// Items per backend call.
    pub batch_size: usize,
}

impl Default for LimeConfig {
    fn default() -> Self {
        LimeConfig {
            n_samples: 1000,
            kernel_width: 25.0,
            distance_scale: 100.0,
            ridge_lambda: 1.0,
            seed: 0,
            enumerate_exhaustive_below: 12,
            batch_size: 256,
        }
    }
}

impl LimeConfig {
    pub fn validate(&self) -> Result<(), LimeError> {
        let bad = |m: &str| Err(LimeError::InvalidConfig(m.to_string()));
        if self.n_samples < 2 {
            return bad("n_samples must be at least 2");
        }
        if !(self.kernel_width > 0.0 && self.kernel_width.is_finite()) {
            return bad("kernel_width must be positive");
        }
        if !(self.distance_scale > 0.0 && self.distance_scale.is_finite()) {
            return bad("distance_scale must be positive");
        }
        if !(self.ridge_lambda >= 0.0 && self.ridge_lambda.is_finite()) {
            return bad("ridge_lambda must be non-negative");
        }
        if self.enumerate_exhaustive_below > 24 {
            return bad("enumerate_exhaustive_below above 24 would enumerate too many masks");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Mixes a per-item key into a base seed (FNV-1a followed by a SplitMix64 finalizer).
pub fn derive_seed(seed: u64, key: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in key.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = seed ^ h;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Perturbation masks for an input of `n_tokens` tokens. The first mask always
/// keeps everything.
///
/// Below `enumerate_exhaustive_below` tokens every one of the 2^n masks is
/// returned exactly once. Otherwise `n_samples - 1` random masks follow, each
/// removing a uniformly drawn number of tokens (1..=n) at uniformly drawn
/// positions.
pub fn sample_masks<R: Rng + ?Sized>(n_tokens: usize, config: &LimeConfig, rng: &mut R) -> Vec<Mask> {
    assert!(n_tokens >= 1, "cannot perturb an empty input");
    if n_tokens < config.enumerate_exhaustive_below {
        return (0u64..1 << n_tokens)
            .map(|code| Mask::from_bits((0..n_tokens).map(|i| code >> i & 1 == 0).collect()))
            .collect();
    }
    let mut masks = Vec::with_capacity(config.n_samples);
    masks.push(Mask::all_keep(n_tokens));
    for _ in 1..config.n_samples {
        let n_remove = rng.random_range(1..=n_tokens);
        let removed = index::sample(rng, n_tokens, n_remove);
        let mut bits = vec![true; n_tokens];
        for i in removed {
            bits[i] = false;
        }
        masks.push(Mask::from_bits(bits));
    }
    masks
}

/// Proximity of a mask to the unperturbed input: `exp(-d^2 / width^2)` where
/// `d` is the cosine distance to the all-ones vector times `distance_scale`.
/// A mask that removes everything is treated as cosine distance 1.
pub fn kernel_weight(mask: &Mask, config: &LimeConfig) -> f64 {
    let n = mask.len() as f64;
    let kept = mask.kept_count() as f64;
    let cosine_distance = if kept == 0.0 { 1.0 } else { 1.0 - (kept / n).sqrt() };
    let d = cosine_distance * config.distance_scale;
    (-(d * d) / (config.kernel_width * config.kernel_width)).exp()
}

/// Result of a weighted ridge fit.
#[derive(Debug, Clone, PartialEq)]
pub struct Surrogate {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    /// Weighted coefficient of determination; 1 when the targets are constant.
    pub r2: f64,
}

/// Weighted ridge regression of `targets` on binary mask vectors with an
/// unpenalized intercept:
///
/// `min sum_i w_i (y_i - b0 - b . z_i)^2 + lambda |b|^2`
///
/// Solved in centred form with a Cholesky factorization. Columns that never
/// vary under the weights carry no information and get coefficient zero, so
/// a set of identical masks yields all-zero coefficients and the weighted mean
/// as intercept.
pub fn fit_surrogate(
    masks: &[Mask],
    targets: &[f64],
    weights: &[f64],
    ridge_lambda: f64,
) -> Result<Surrogate, LimeError> {
    let m = masks.len();
    if m < 2 {
        return Err(LimeError::InvalidData(format!("need at least 2 samples, got {m}")));
    }
    if targets.len() != m || weights.len() != m {
        return Err(LimeError::InvalidData(format!(
            "{m} masks, {} targets, {} weights",
            targets.len(),
            weights.len()
        )));
    }
    let n = masks[0].len();
    if masks.iter().any(|mk| mk.len() != n) {
        return Err(LimeError::InvalidData("masks differ in length".into()));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) || targets.iter().any(|y| !y.is_finite()) {
        return Err(LimeError::InvalidData("weights must be finite and non-negative, targets finite".into()));
    }
    if !(ridge_lambda >= 0.0 && ridge_lambda.is_finite()) {
        return Err(LimeError::InvalidData("ridge_lambda must be non-negative".into()));
    }
    let total_w: f64 = weights.iter().sum();
    if total_w <= 0.0 {
        return Err(LimeError::InvalidData("all weights are zero".into()));
    }

    let z = |i: usize, j: usize| if masks[i].is_kept(j) { 1.0 } else { 0.0 };
    let mut x_mean = vec![0.0; n];
    let mut y_mean = 0.0;
    for (i, (&w, &y)) in weights.iter().zip(targets).enumerate() {
        y_mean += w * y;
        for (j, xm) in x_mean.iter_mut().enumerate() {
            *xm += w * z(i, j);
        }
    }
    y_mean /= total_w;
    x_mean.iter_mut().for_each(|x| *x /= total_w);

    let mut gram = vec![0.0; n * n];
    let mut rhs = vec![0.0; n];
    let mut centred = vec![0.0; n];
    for i in 0..m {
        let w = weights[i];
        if w == 0.0 {
            continue;
        }
        for (j, c) in centred.iter_mut().enumerate() {
            *c = z(i, j) - x_mean[j];
        }
        let dy = targets[i] - y_mean;
        for j in 0..n {
            let wc = w * centred[j];
            rhs[j] += wc * dy;
            for k in j..n {
                gram[j * n + k] += wc * centred[k];
            }
        }
    }

    let active: Vec<usize> = (0..n).filter(|&j| gram[j * n + j] > 1e-12 * total_w).collect();
    let p = active.len();
    let mut coefficients = vec![0.0; n];
    if p > 0 {
        let mut a = vec![0.0; p * p];
        let mut b = vec![0.0; p];
        for (r, &j) in active.iter().enumerate() {
            b[r] = rhs[j];
            for (c, &k) in active.iter().enumerate() {
                let (lo, hi) = if j <= k { (j, k) } else { (k, j) };
                a[r * p + c] = gram[lo * n + hi];
            }
            a[r * p + r] += ridge_lambda;
        }
        let beta = cholesky_solve(&mut a, &mut b, p).ok_or(LimeError::SingularSystem)?;
        for (&j, &v) in active.iter().zip(&beta) {
            coefficients[j] = v;
        }
    }
    let intercept = y_mean - coefficients.iter().zip(&x_mean).map(|(b, x)| b * x).sum::<f64>();

    let mut sse = 0.0;
    let mut sst = 0.0;
    for i in 0..m {
        let fitted = intercept + (0..n).map(|j| coefficients[j] * z(i, j)).sum::<f64>();
        sse += weights[i] * (targets[i] - fitted).powi(2);
        sst += weights[i] * (targets[i] - y_mean).powi(2);
    }
    let r2 = if sst <= 1e-300 { 1.0 } else { 1.0 - sse / sst };

    Ok(Surrogate {
        coefficients,
        intercept,
        r2,
    })
}

/// Solves `a x = b` for symmetric positive definite `a` (row-major, `p` x `p`).
/// Returns `None` when `a` is not numerically positive definite.
fn cholesky_solve(a: &mut [f64], b: &mut [f64], p: usize) -> Option<Vec<f64>> {
    let scale = (0..p).map(|i| a[i * p + i]).fold(0.0, f64::max);
    for j in 0..p {
        let mut d = a[j * p + j];
        for k in 0..j {
            d -= a[j * p + k] * a[j * p + k];
        }
        if d <= 1e-13 * scale || !d.is_finite() {
            return None;
        }
        let d = d.sqrt();
        a[j * p + j] = d;
        for i in j + 1..p {
            let mut s = a[i * p + j];
            for k in 0..j {
                s -= a[i * p + k] * a[j * p + k];
            }
            a[i * p + j] = s / d;
        }
    }
    // forward: L y = b
    for i in 0..p {
        let mut s = b[i];
        for k in 0..i {
            s -= a[i * p + k] * b[k];
        }
        b[i] = s / a[i * p + i];
    }
    // backward: L^T x = y
    for i in (0..p).rev() {
        let mut s = b[i];
        for k in i + 1..p {
            s -= a[k * p + i] * b[k];
        }
        b[i] = s / a[i * p + i];
    }
    Some(b.to_vec())
}

/// Per-token importance scores for one target class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub target_class: usize,
    pub target_name: String,
    /// One score per global token index.
    pub scores: Vec<f64>,
    pub intercept: f64,
    pub local_fidelity_r2: f64,
    /// Target-class probability on the unperturbed input.
    pub full_probability: f64,
    /// Number of perturbed inputs the classifier was queried on.
    pub n_evaluations: usize,
}

impl Explanation {
    pub fn n_tokens(&self) -> usize {
        self.scores.len()
    }
}

/// Runs `predict_batch` over `items` in chunks, possibly concurrently, and
/// reassembles the results in item order.
pub fn predict_chunked<B: ClassifierBackend + ?Sized>(
    backend: &B,
    items: &[Vec<String>],
    batch_size: usize,
) -> Result<Vec<PredictionDist>, BackendError> {
    let chunks: Vec<Result<Vec<PredictionDist>, BackendError>> = items
        .par_chunks(batch_size.max(1))
        .map(|chunk| {
            let out = backend.predict_batch(chunk)?;
            if out.len() != chunk.len() {
                return Err(BackendError::ProtocolViolation(format!(
                    "{} items sent, {} distributions returned",
                    chunk.len(),
                    out.len()
                )));
            }
            Ok(out)
        })
        .collect();
    let mut all = Vec::with_capacity(items.len());
    for c in chunks {
        all.extend(c?);
    }
    Ok(all)
}

/// Explains `backend`'s prediction on `input` for `target_class`, or for the
/// predicted class (argmax on the full input, ties to the lowest index) when
/// no target is given.
pub fn explain<B: ClassifierBackend + ?Sized>(
    input: &TokenizedInput,
    backend: &B,
    target_class: Option<usize>,
    config: &LimeConfig,
) -> Result<Explanation, LimeError> {
    config.validate()?;
    let n = input.n_tokens();
    if n == 0 {
        return Err(TextError::EmptyInput.into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let masks = sample_masks(n, config, &mut rng);
    let texts = masks
        .iter()
        .map(|m| input.reconstruct(m))
        .collect::<Result<Vec<_>, _>>()?;
    let dists = predict_chunked(backend, &texts, config.batch_size)?;

    let full = &dists[0];
    let n_classes = full.probs().len();
    let target = target_class.unwrap_or_else(|| full.argmax());
    if target >= n_classes {
        return Err(LimeError::TargetOutOfRange { target, n_classes });
    }
    if let Some(d) = dists.iter().find(|d| d.probs().len() != n_classes) {
        return Err(BackendError::ProtocolViolation(format!(
            "class count changed from {n_classes} to {}",
            d.probs().len()
        ))
        .into());
    }
    let targets: Vec<f64> = dists.iter().map(|d| d.prob(target)).collect();
    let weights: Vec<f64> = masks.iter().map(|m| kernel_weight(m, config)).collect();
    let fit = fit_surrogate(&masks, &targets, &weights, config.ridge_lambda)?;

    Ok(Explanation {
        target_class: target,
        target_name: full.class_names()[target].clone(),
        scores: fit.coefficients,
        intercept: fit.intercept,
        local_fidelity_r2: fit.r2,
        full_probability: targets[0],
        n_evaluations: masks.len(),
    })
}
