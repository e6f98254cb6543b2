//! Reference results for fine-tuned DeBERTaV3 checkpoints (xsmall to large) on
//! MNLI, e-SNLI and CoS-e: 100 explained instances per dataset, accuracy on the
//! full validation sets.
//!
//! These need the fine-tuned checkpoints and GPU inference. They are kept here
//! for side-by-side comparison in rendered tables and are not reproduced by any
//! test. Sems are standard errors of the mean.

use crate::report::{LabelRow, SummaryRow};

pub const SIZES: [&str; 4] = ["xsmall", "small", "base", "large"];

/// (dataset, size, comp, comp sem, iou, iou sem, accuracy, ci lo, ci hi)
type SummaryEntry = (&'static str, &'static str, f64, f64, Option<(f64, f64)>, f64, f64, f64);

const SUMMARY: [SummaryEntry; 12] = [
    ("MNLI", "xsmall", 0.785, 0.022, None, 0.878, 0.871, 0.885),
    ("MNLI", "small", 0.817, 0.022, None, 0.878, 0.872, 0.884),
    ("MNLI", "base", 0.796, 0.027, None, 0.900, 0.894, 0.906),
    ("MNLI", "large", 0.823, 0.027, None, 0.902, 0.896, 0.908),
    ("e-SNLI", "xsmall", 0.726, 0.022, Some((0.282, 0.017)), 0.920, 0.915, 0.925),
    ("e-SNLI", "small", 0.724, 0.026, Some((0.259, 0.016)), 0.922, 0.917, 0.927),
    ("e-SNLI", "base", 0.764, 0.025, Some((0.254, 0.016)), 0.931, 0.926, 0.936),
    ("e-SNLI", "large", 0.778, 0.025, Some((0.256, 0.017)), 0.932, 0.927, 0.937),
    ("CoS-e", "xsmall", 0.304, 0.018, Some((0.233, 0.013)), 0.331, 0.305, 0.355),
    ("CoS-e", "small", 0.316, 0.019, Some((0.231, 0.014)), 0.336, 0.306, 0.362),
    ("CoS-e", "base", 0.356, 0.020, Some((0.235, 0.012)), 0.359, 0.330, 0.383),
    ("CoS-e", "large", 0.391, 0.022, Some((0.230, 0.012)), 0.378, 0.349, 0.406),
];

type LabelEntry = (&'static str, &'static str, &'static str, f64, f64, Option<(f64, f64)>);

const BY_LABEL: [LabelEntry; 24] = [
    ("MNLI", "xsmall", "contradiction", 0.810, 0.038, None),
    ("MNLI", "xsmall", "entailment", 0.759, 0.042, None),
    ("MNLI", "xsmall", "neutral", 0.788, 0.034, None),
    ("MNLI", "small", "contradiction", 0.853, 0.041, None),
    ("MNLI", "small", "entailment", 0.805, 0.039, None),
    ("MNLI", "small", "neutral", 0.794, 0.035, None),
    ("MNLI", "base", "contradiction", 0.895, 0.034, None),
    ("MNLI", "base", "entailment", 0.768, 0.050, None),
    ("MNLI", "base", "neutral", 0.728, 0.049, None),
    ("MNLI", "large", "contradiction", 0.939, 0.018, None),
    ("MNLI", "large", "entailment", 0.750, 0.057, None),
    ("MNLI", "large", "neutral", 0.789, 0.046, None),
    ("e-SNLI", "xsmall", "contradiction", 0.805, 0.034, Some((0.289, 0.031))),
    ("e-SNLI", "xsmall", "entailment", 0.713, 0.039, Some((0.315, 0.025))),
    ("e-SNLI", "xsmall", "neutral", 0.663, 0.035, Some((0.244, 0.028))),
    ("e-SNLI", "small", "contradiction", 0.744, 0.042, Some((0.286, 0.029))),
    ("e-SNLI", "small", "entailment", 0.783, 0.051, Some((0.249, 0.025))),
    ("e-SNLI", "small", "neutral", 0.652, 0.040, Some((0.242, 0.030))),
    ("e-SNLI", "base", "contradiction", 0.808, 0.038, Some((0.264, 0.027))),
    ("e-SNLI", "base", "entailment", 0.786, 0.043, Some((0.291, 0.025))),
    ("e-SNLI", "base", "neutral", 0.701, 0.045, Some((0.211, 0.028))),
    ("e-SNLI", "large", "contradiction", 0.759, 0.046, Some((0.259, 0.024))),
    ("e-SNLI", "large", "entailment", 0.809, 0.038, Some((0.292, 0.026))),
    ("e-SNLI", "large", "neutral", 0.768, 0.042, Some((0.220, 0.036))),
];

/// Explained instances per dataset and checkpoint.
pub const EXPLAINED_PER_DATASET: usize = 100;

/// MNLI matched validation size, for recomputing the accuracy intervals.
pub const MNLI_MATCHED_VALIDATION: usize = 9815;

/// Main results, grouped by dataset in size order.
pub fn summary_rows() -> Vec<SummaryRow> {
    SUMMARY
        .iter()
        .map(|&(dataset, size, comp, comp_sem, iou, accuracy, lo, hi)| SummaryRow {
            dataset: dataset.to_string(),
            backend: size.to_string(),
            comprehensiveness: (comp, comp_sem),
            iou,
            accuracy,
            ci: (lo, hi),
        })
        .collect()
}

/// Per-gold-label results for the two NLI datasets.
pub fn label_rows() -> Vec<LabelRow> {
    BY_LABEL
        .iter()
        .map(|&(dataset, size, label, comp, comp_sem, iou)| LabelRow {
            dataset: dataset.to_string(),
            backend: size.to_string(),
            label: label.to_string(),
            n: None,
            comprehensiveness: (comp, comp_sem),
            iou,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape() {
        let rows = summary_rows();
        assert_eq!(rows.len(), 12);
        assert!(rows.iter().filter(|r| r.dataset == "MNLI").all(|r| r.iou.is_none()));
        assert!(rows.iter().filter(|r| r.dataset != "MNLI").all(|r| r.iou.is_some()));
        for r in &rows {
            assert!(r.ci.0 < r.accuracy && r.accuracy < r.ci.1, "{r:?}");
        }
        let large = rows.iter().find(|r| r.dataset == "e-SNLI" && r.backend == "large").unwrap();
        assert_eq!(large.comprehensiveness, (0.778, 0.025));
        assert_eq!(large.iou, Some((0.256, 0.017)));
        assert_eq!(label_rows().len(), 24);
    }
}
