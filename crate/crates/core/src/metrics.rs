//! Faithfulness (comprehensiveness) and plausibility (IOU) of token-level
//! explanations.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lime::Explanation;
use crate::model::{BackendError, ClassifierBackend};
use crate::text::{Mask, TextError, TokenizedInput};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("k = {k} outside 1..={n_tokens}")]
    KOutOfRange { k: usize, n_tokens: usize },
    #[error("human rationale is empty")]
    EmptyHumanRationale,
    #[error("invalid bins: {0}")]
    InvalidBins(String),
    #[error("fraction {0} outside (0, 1]")]
    InvalidFraction(f64),
    #[error("explanation has {scores} scores for {n_tokens} tokens")]
    LengthMismatch { scores: usize, n_tokens: usize },
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Explanation-length fractions over which comprehensiveness is averaged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct BinSet(Vec<f64>);

impl BinSet {
    pub fn new(bins: Vec<f64>) -> Result<Self, MetricError> {
        if bins.is_empty() {
            return Err(MetricError::InvalidBins("no bins".into()));
        }
        if let Some(b) = bins.iter().find(|b| !(**b > 0.0 && **b <= 1.0)) {
            return Err(MetricError::InvalidBins(format!("{b} outside (0, 1]")));
        }
        if bins.windows(2).any(|w| w[0] >= w[1]) {
            return Err(MetricError::InvalidBins("bins must be strictly increasing".into()));
        }
        Ok(BinSet(bins))
    }

    pub fn fractions(&self) -> &[f64] {
        &self.0
    }
}

impl Default for BinSet {
    fn default() -> Self {
        BinSet(vec![0.10, 0.30, 0.50])
    }
}

impl TryFrom<Vec<f64>> for BinSet {
    type Error = MetricError;
    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        BinSet::new(v)
    }
}

impl From<BinSet> for Vec<f64> {
    fn from(b: BinSet) -> Self {
        b.0
    }
}

impl FromStr for BinSet {
    type Err = MetricError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bins = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| MetricError::InvalidBins(format!("{s:?}: {e}")))?;
        BinSet::new(bins)
    }
}

impl fmt::Display for BinSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|b| b.to_string()).collect();
        f.write_str(&parts.join(","))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinScore {
    pub fraction: f64,
    pub k: usize,
    pub comp: f64,
}

/// Metric values for one explained instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub comp_per_bin: Vec<BinScore>,
    pub comp_agg: f64,
    pub iou: Option<f64>,
    pub target_class: usize,
    /// Number of tokens compared against the human rationale, when IOU was computed.
    pub k_used: Option<usize>,
}

fn round_count(x: f64) -> usize {
    // f64::round rounds half away from zero
    x.round().max(0.0) as usize
}

/// `max(1, round(fraction * n))`, capped at `n`.
pub fn top_k_for_fraction(fraction: f64, n_tokens: usize) -> usize {
    round_count(fraction * n_tokens as f64).clamp(1, n_tokens.max(1))
}

/// Number of tokens to compare against a human rationale, from the dataset's
/// mean rationale-to-input length ratio.
pub fn plausibility_k(n_tokens: usize, dataset_ratio: f64) -> usize {
    top_k_for_fraction(dataset_ratio, n_tokens)
}

/// Indices of the `k` highest-scoring tokens, best first. Ties go to the
/// lower index.
pub fn select_top_tokens(explanation: &Explanation, k: usize) -> Result<Vec<usize>, MetricError> {
    let n = explanation.scores.len();
    if k == 0 || k > n {
        return Err(MetricError::KOutOfRange { k, n_tokens: n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        explanation.scores[b]
            .total_cmp(&explanation.scores[a])
            .then(a.cmp(&b))
    });
    order.truncate(k);
    Ok(order)
}

fn check_fraction(fraction: f64) -> Result<(), MetricError> {
    if fraction > 0.0 && fraction <= 1.0 {
        Ok(())
    } else {
        Err(MetricError::InvalidFraction(fraction))
    }
}

fn check_lengths(input: &TokenizedInput, explanation: &Explanation) -> Result<(), MetricError> {
    if explanation.scores.len() != input.n_tokens() {
        return Err(MetricError::LengthMismatch {
            scores: explanation.scores.len(),
            n_tokens: input.n_tokens(),
        });
    }
    Ok(())
}

/// Target-class probabilities for the full input followed by one entry per
/// fraction with the top tokens removed.
fn probabilities_after_removal<B: ClassifierBackend + ?Sized>(
    input: &TokenizedInput,
    backend: &B,
    target_class: usize,
    explanation: &Explanation,
    fractions: &[f64],
) -> Result<(f64, Vec<(usize, f64)>), MetricError> {
    check_lengths(input, explanation)?;
    let n = input.n_tokens();
    let mut items = vec![input.reconstruct(&Mask::all_keep(n))?];
    let mut ks = Vec::with_capacity(fractions.len());
    for &f in fractions {
        check_fraction(f)?;
        let k = top_k_for_fraction(f, n);
        let top = select_top_tokens(explanation, k)?;
        items.push(input.reconstruct(&Mask::removing(n, &top))?);
        ks.push(k);
    }
    let dists = backend.predict_batch(&items)?;
    if dists.len() != items.len() {
        return Err(BackendError::ProtocolViolation(format!(
            "{} items sent, {} distributions returned",
            items.len(),
            dists.len()
        ))
        .into());
    }
    let n_classes = dists[0].probs().len();
    if target_class >= n_classes {
        return Err(BackendError::InvalidRequest(format!(
            "target class {target_class} out of range for {n_classes} classes"
        ))
        .into());
    }
    let full = dists[0].prob(target_class);
    let reduced = ks
        .into_iter()
        .zip(&dists[1..])
        .map(|(k, d)| (k, d.prob(target_class)))
        .collect();
    Ok((full, reduced))
}

/// `p(c | x) - p(c | x without its top-k tokens)` with
/// `k = max(1, round(fraction * n))`. Can be negative.
pub fn comprehensiveness<B: ClassifierBackend + ?Sized>(
    input: &TokenizedInput,
    backend: &B,
    target_class: usize,
    explanation: &Explanation,
    fraction: f64,
) -> Result<f64, MetricError> {
    let (full, reduced) = probabilities_after_removal(input, backend, target_class, explanation, &[fraction])?;
    Ok(full - reduced[0].1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatedComprehensiveness {
    /// Mean of the per-bin values.
    pub comp_agg: f64,
    pub comp_per_bin: Vec<BinScore>,
}

/// Comprehensiveness at every bin plus their arithmetic mean.
pub fn aggregated_comprehensiveness<B: ClassifierBackend + ?Sized>(
    input: &TokenizedInput,
    backend: &B,
    target_class: usize,
    explanation: &Explanation,
    bins: &BinSet,
) -> Result<AggregatedComprehensiveness, MetricError> {
    let (full, reduced) =
        probabilities_after_removal(input, backend, target_class, explanation, bins.fractions())?;
    let comp_per_bin: Vec<BinScore> = bins
        .fractions()
        .iter()
        .zip(reduced)
        .map(|(&fraction, (k, p))| BinScore {
            fraction,
            k,
            comp: full - p,
        })
        .collect();
    Ok(AggregatedComprehensiveness {
        comp_agg: mean_comp(&comp_per_bin),
        comp_per_bin,
    })
}

/// Arithmetic mean of per-bin comprehensiveness.
pub fn mean_comp(per_bin: &[BinScore]) -> f64 {
    per_bin.iter().map(|b| b.comp).sum::<f64>() / per_bin.len() as f64
}

/// Intersection over union of two token index sets.
pub fn iou(predicted: &BTreeSet<usize>, human: &BTreeSet<usize>) -> Result<f64, MetricError> {
    if human.is_empty() {
        return Err(MetricError::EmptyHumanRationale);
    }
    let inter = predicted.intersection(human).count();
    let union = predicted.union(human).count();
    Ok(inter as f64 / union as f64)
}

/// IOU between the top `plausibility_k` tokens and the human rationale.
/// Returns the IOU and the `k` used.
pub fn plausibility_iou(
    explanation: &Explanation,
    human: &BTreeSet<usize>,
    dataset_ratio: f64,
) -> Result<(f64, usize), MetricError> {
    check_fraction(dataset_ratio)?;
    let k = plausibility_k(explanation.n_tokens(), dataset_ratio);
    let top: BTreeSet<usize> = select_top_tokens(explanation, k)?.into_iter().collect();
    Ok((iou(&top, human)?, k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lime::{explain, LimeConfig};
    use crate::model::{ConstantClassifier, PredictionDist, SyntheticKeywordClassifier, TaskKind};
    use crate::oracle::exact_softmax_drop;
    use crate::text::tokenize;
    use proptest::prelude::*;

    fn expl(scores: Vec<f64>) -> Explanation {
        Explanation {
            target_class: 0,
            target_name: "c".into(),
            scores,
            intercept: 0.0,
            local_fidelity_r2: 1.0,
            full_probability: 1.0,
            n_evaluations: 0,
        }
    }

    fn set(xs: &[usize]) -> BTreeSet<usize> {
        xs.iter().copied().collect()
    }

    #[test]
    fn top_tokens() {
        assert_eq!(select_top_tokens(&expl(vec![0.5, 0.1, 0.9]), 2).unwrap(), [2, 0]);
        assert_eq!(select_top_tokens(&expl(vec![0.3, 0.3, 0.1]), 1).unwrap(), [0]);
        let mut all = select_top_tokens(&expl(vec![0.3, -0.3, 0.1]), 3).unwrap();
        all.sort();
        assert_eq!(all, [0, 1, 2]);
        assert!(matches!(
            select_top_tokens(&expl(vec![0.3]), 0),
            Err(MetricError::KOutOfRange { k: 0, n_tokens: 1 })
        ));
        assert!(select_top_tokens(&expl(vec![0.3]), 2).is_err());
    }

    #[test]
    fn k_rounding() {
        assert_eq!(plausibility_k(20, 0.19), 4);
        assert_eq!(plausibility_k(10, 0.26), 3);
        assert_eq!(plausibility_k(2, 0.19), 1);
        assert_eq!(top_k_for_fraction(0.5, 5), 3); // 2.5 rounds away from zero
        assert_eq!(top_k_for_fraction(0.1, 3), 1);
        assert_eq!(top_k_for_fraction(1.0, 7), 7);
    }

    #[test]
    fn iou_cases() {
        assert_eq!(iou(&set(&[1, 2, 3]), &set(&[1, 2, 3])).unwrap(), 1.0);
        assert_eq!(iou(&set(&[1, 2]), &set(&[3, 4])).unwrap(), 0.0);
        assert_eq!(iou(&set(&[1, 2, 3]), &set(&[2, 3, 4])).unwrap(), 0.5);
        assert_eq!(iou(&set(&[1]), &set(&[])).unwrap_err(), MetricError::EmptyHumanRationale);
    }

    #[test]
    fn bins() {
        assert_eq!(BinSet::default().fractions(), [0.1, 0.3, 0.5]);
        assert_eq!("0.1, 0.3,0.5".parse::<BinSet>().unwrap(), BinSet::default());
        assert!("0.3,0.1".parse::<BinSet>().is_err());
        assert!("0,0.5".parse::<BinSet>().is_err());
        assert!("0.5,1.5".parse::<BinSet>().is_err());
        assert!("x".parse::<BinSet>().is_err());
        assert_eq!(BinSet::default().to_string(), "0.1,0.3,0.5");
        let json = serde_json::to_string(&BinSet::default()).unwrap();
        assert_eq!(json, "[0.1,0.3,0.5]");
        assert!(serde_json::from_str::<BinSet>("[0.5,0.2]").is_err());
    }

    #[test]
    fn mean_of_bins() {
        let per = [0.6, 0.8, 1.0].map(|c| BinScore { fraction: 0.1, k: 1, comp: c });
        assert!((mean_comp(&per) - 0.8).abs() < 1e-15);
    }

    /// Two-class stub: p(class 0) = 0.9 on the full two-token input, 0.2 otherwise.
    struct Stub;
    impl ClassifierBackend for Stub {
        fn task(&self) -> TaskKind {
            TaskKind::SingleText
        }
        fn class_names(&self) -> Option<Vec<String>> {
            None
        }
        fn predict_batch(&self, inputs: &[Vec<String>]) -> Result<Vec<PredictionDist>, BackendError> {
            inputs
                .iter()
                .map(|i| {
                    let p = if i[0] == "good movie" { 0.9 } else { 0.2 };
                    PredictionDist::new(vec![p, 1.0 - p], vec!["pos".into(), "neg".into()])
                })
                .collect()
        }
    }

    #[test]
    fn comprehensiveness_arithmetic() {
        let input = tokenize(&["good movie"]).unwrap();
        let c = comprehensiveness(&input, &Stub, 0, &expl(vec![0.4, 0.1]), 0.5).unwrap();
        assert!((c - 0.7).abs() < 1e-12);
        assert!(matches!(
            comprehensiveness(&input, &Stub, 0, &expl(vec![0.4]), 0.5),
            Err(MetricError::LengthMismatch { .. })
        ));
        assert!(matches!(
            comprehensiveness(&input, &Stub, 0, &expl(vec![0.4, 0.1]), 0.0),
            Err(MetricError::InvalidFraction(_))
        ));
    }

    #[test]
    fn constant_backend_is_zero() {
        let dist = PredictionDist::new(vec![0.25, 0.75], vec!["a".into(), "b".into()]).unwrap();
        let clf = ConstantClassifier::new(TaskKind::SingleText, dist);
        let input = tokenize(&["one two three four five six seven"]).unwrap();
        let e = expl(vec![0.1, -0.2, 0.3, 0.0, 0.5, 0.05, -0.4]);
        let agg = aggregated_comprehensiveness(&input, &clf, 1, &e, &BinSet::default()).unwrap();
        assert_eq!(agg.comp_agg, 0.0);
        assert!(agg.comp_per_bin.iter().all(|b| b.comp == 0.0));
        assert_eq!(agg.comp_per_bin.iter().map(|b| b.k).collect::<Vec<_>>(), [1, 2, 4]);
    }

    #[test]
    fn keyword_drop_matches_closed_form() {
        let clf = SyntheticKeywordClassifier::nli()
            .with_coefficient(0, "touching", 2.0)
            .with_coefficient(0, "leans", 1.0);
        let input = tokenize(&["A man in an orange vest leans over a pickup truck.", "A man is touching a truck."]).unwrap();
        let e = explain(&input, &clf, None, &LimeConfig::default()).unwrap();
        let agg = aggregated_comprehensiveness(&input, &clf, e.target_class, &e, &BinSet::default()).unwrap();
        for bin in &agg.comp_per_bin {
            let top: BTreeSet<usize> = select_top_tokens(&e, bin.k).unwrap().into_iter().collect();
            let oracle = exact_softmax_drop(&clf, &input, &top, e.target_class);
            assert!((bin.comp - oracle).abs() < 1e-12);
        }
        // the 30% bin covers both keywords: drop to the uniform distribution
        let full = e.full_probability;
        assert!((agg.comp_per_bin[1].comp - (full - 1.0 / 3.0)).abs() < 1e-12);
        assert!((agg.comp_agg - mean_comp(&agg.comp_per_bin)).abs() == 0.0);
    }

    #[test]
    fn plausibility_uses_ratio() {
        let e = expl(vec![0.9, 0.1, 0.8, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let (v, k) = plausibility_iou(&e, &set(&[0, 2, 5]), 0.26).unwrap();
        assert_eq!(k, 3);
        assert!((v - 0.5).abs() < 1e-15); // top {0, 2, 1} vs {0, 2, 5}
    }

    proptest! {
        #[test]
        fn iou_properties(a in proptest::collection::btree_set(0usize..30, 0..15),
                          b in proptest::collection::btree_set(0usize..30, 1..15)) {
            let ab = iou(&a, &b).unwrap();
            prop_assert!((0.0..=1.0).contains(&ab));
            if !a.is_empty() {
                prop_assert_eq!(ab, iou(&b, &a).unwrap());
                prop_assert_eq!(iou(&a, &a).unwrap(), 1.0);
            }
        }

        #[test]
        fn top_k_shift_invariant(scores in proptest::collection::vec(-1.0f64..1.0, 1..25), shift in -5.0f64..5.0, kf in 0.0f64..1.0) {
            let k = ((kf * scores.len() as f64) as usize).clamp(1, scores.len());
            let a = select_top_tokens(&expl(scores.clone()), k).unwrap();
            prop_assert_eq!(a.len(), k);
            let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
            let b = select_top_tokens(&expl(shifted), k).unwrap();
            // shifting can merge nearly-equal scores in floating point, so compare scores not indices
            let sa: Vec<f64> = a.iter().map(|&i| scores[i]).collect();
            let sb: Vec<f64> = b.iter().map(|&i| scores[i]).collect();
            for (x, y) in sa.iter().zip(&sb) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
