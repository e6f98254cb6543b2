use std::collections::{BTreeMap, BTreeSet};

use super::{check_arity, BackendError, ClassifierBackend, PredictionDist, TaskKind};
use crate::text::split_words;

/// Linear classifier over binary word-presence features.
///
/// The logit of class `c` is `intercept[c] + sum(coeff[c][w] for each present word w)`,
/// plus optional interaction terms that fire when one word is present in the
/// first segment and another in the second. Probabilities are the softmax of
/// the logits. Words are matched case-insensitively against the word tokens
/// of each segment, and repeated occurrences count once.
#[derive(Debug, Clone)]
pub struct SyntheticKeywordClassifier {
    name: String,
    task: TaskKind,
    class_names: Vec<String>,
    intercepts: Vec<f64>,
    coefficients: Vec<BTreeMap<String, f64>>,
    pair_coefficients: Vec<BTreeMap<(String, String), f64>>,
}

impl SyntheticKeywordClassifier {
    pub fn new(task: TaskKind, class_names: Vec<String>) -> Self {
        let k = class_names.len();
        assert!(k >= 2, "a classifier needs at least two classes");
        SyntheticKeywordClassifier {
            name: "synthetic".to_string(),
            task,
            class_names,
            intercepts: vec![0.0; k],
            coefficients: vec![BTreeMap::new(); k],
            pair_coefficients: vec![BTreeMap::new(); k],
        }
    }

    /// Three-class NLI classifier (entailment, neutral, contradiction).
    pub fn nli() -> Self {
        Self::new(
            TaskKind::NliPair,
            super::NLI_CLASSES.iter().map(|s| s.to_string()).collect(),
        )
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn with_intercept(mut self, class: usize, value: f64) -> Self {
        self.intercepts[class] = value;
        self
    }

    pub fn with_coefficient(mut self, class: usize, word: &str, value: f64) -> Self {
        self.coefficients[class].insert(word.to_lowercase(), value);
        self
    }

    /// Interaction term: fires when `first` occurs in segment 0 and `second` in segment 1.
    pub fn with_pair_coefficient(mut self, class: usize, first: &str, second: &str, value: f64) -> Self {
        self.pair_coefficients[class].insert((first.to_lowercase(), second.to_lowercase()), value);
        self
    }

    /// Multiplies every coefficient, intercept and interaction term by `factor`.
    pub fn scaled(mut self, factor: f64) -> Self {
        for v in &mut self.intercepts {
            *v *= factor;
        }
        for map in &mut self.coefficients {
            map.values_mut().for_each(|v| *v *= factor);
        }
        for map in &mut self.pair_coefficients {
            map.values_mut().for_each(|v| *v *= factor);
        }
        self
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|c| c == name)
    }

    pub fn intercepts(&self) -> &[f64] {
        &self.intercepts
    }

    pub fn coefficients(&self, class: usize) -> &BTreeMap<String, f64> {
        &self.coefficients[class]
    }

    pub fn pair_coefficients(&self, class: usize) -> &BTreeMap<(String, String), f64> {
        &self.pair_coefficients[class]
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    fn logits(&self, item: &[String]) -> Vec<f64> {
        let per_segment: Vec<BTreeSet<String>> = item
            .iter()
            .map(|s| split_words(s).into_iter().map(|t| t.text.to_lowercase()).collect())
            .collect();
        let any: BTreeSet<&String> = per_segment.iter().flatten().collect();
        (0..self.class_names.len())
            .map(|c| {
                let mut z = self.intercepts[c];
                for (w, v) in &self.coefficients[c] {
                    if any.contains(w) {
                        z += v;
                    }
                }
                if per_segment.len() == 2 {
                    for ((a, b), v) in &self.pair_coefficients[c] {
                        if per_segment[0].contains(a) && per_segment[1].contains(b) {
                            z += v;
                        }
                    }
                }
                z
            })
            .collect()
    }
}

impl ClassifierBackend for SyntheticKeywordClassifier {
    fn task(&self) -> TaskKind {
        self.task
    }

    fn class_names(&self) -> Option<Vec<String>> {
        Some(self.class_names.clone())
    }

    fn predict_batch(&self, inputs: &[Vec<String>]) -> Result<Vec<PredictionDist>, BackendError> {
        check_arity(self.task, inputs)?;
        inputs
            .iter()
            .map(|item| PredictionDist::from_logits(&self.logits(item), self.class_names.clone()))
            .collect()
    }

    fn name(&self) -> String {
        self.name.clone()
    }
}

/// Returns the same distribution whatever the input.
#[derive(Debug, Clone)]
pub struct ConstantClassifier {
    task: TaskKind,
    dist: PredictionDist,
}

impl ConstantClassifier {
    pub fn new(task: TaskKind, dist: PredictionDist) -> Self {
        ConstantClassifier { task, dist }
    }
}

impl ClassifierBackend for ConstantClassifier {
    fn task(&self) -> TaskKind {
        self.task
    }

    fn class_names(&self) -> Option<Vec<String>> {
        Some(self.dist.class_names().to_vec())
    }

    fn predict_batch(&self, inputs: &[Vec<String>]) -> Result<Vec<PredictionDist>, BackendError> {
        check_arity(self.task, inputs)?;
        Ok(vec![self.dist.clone(); inputs.len()])
    }

    fn name(&self) -> String {
        "constant".to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::softmax;
    use proptest::prelude::*;

    fn pair(p: &str, h: &str) -> Vec<String> {
        vec![p.to_string(), h.to_string()]
    }

    #[test]
    fn single_keyword_softmax() {
        let clf = SyntheticKeywordClassifier::nli().with_coefficient(0, "touching", 2.0);
        let out = clf
            .predict_batch(&[pair("A man leans.", "A man is touching a truck.")])
            .unwrap();
        // softmax([2, 0, 0]) = [e^2, 1, 1] / (e^2 + 2), evaluated separately
        let expected = [0.786_986_042_161_598_5, 0.106_506_978_919_200_75, 0.106_506_978_919_200_75];
        for (p, e) in out[0].probs().iter().zip(expected) {
            assert!((p - e).abs() < 1e-12, "{p} vs {e}");
        }
    }

    #[test]
    fn no_keyword_is_uniform() {
        let clf = SyntheticKeywordClassifier::nli().with_coefficient(0, "touching", 2.0);
        let out = clf.predict_batch(&[pair("A man leans.", "A truck.")]).unwrap();
        for p in out[0].probs() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn batch_order_preserved() {
        let clf = SyntheticKeywordClassifier::nli()
            .with_coefficient(0, "yes", 3.0)
            .with_coefficient(2, "no", 3.0);
        let out = clf
            .predict_batch(&[pair("yes", "x"), pair("maybe", "x"), pair("no", "x")])
            .unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!(out[0].argmax(), 0);
        assert_eq!(out[1].argmax(), 0); // uniform, tie goes low
        assert_eq!(out[2].argmax(), 2);
    }

    #[test]
    fn case_insensitive_and_presence_counts_once() {
        let clf = SyntheticKeywordClassifier::nli().with_coefficient(1, "Dog", 1.0);
        let a = clf.predict_batch(&[pair("dog dog DOG", "")]).unwrap();
        let b = clf.predict_batch(&[pair("", "a dog")]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pair_terms_need_both_sides() {
        let clf = SyntheticKeywordClassifier::nli().with_pair_coefficient(0, "saw", "hardware", 2.0);
        let hit = clf.predict_batch(&[pair("a new saw", "hardware store")]).unwrap();
        let miss = clf.predict_batch(&[pair("hardware store", "a new saw")]).unwrap();
        assert!(hit[0].prob(0) > 0.7);
        assert!((miss[0].prob(0) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn wrong_arity_rejected() {
        let clf = SyntheticKeywordClassifier::nli();
        assert!(matches!(
            clf.predict_batch(&[vec!["only one".into()]]),
            Err(BackendError::ArityMismatch { .. })
        ));
    }

    #[test]
    fn constant_ignores_input() {
        let dist = PredictionDist::new(vec![0.2, 0.8], vec!["a".into(), "b".into()]).unwrap();
        let clf = ConstantClassifier::new(TaskKind::SingleText, dist.clone());
        let out = clf
            .predict_batch(&[vec!["x".into()], vec!["".into()]])
            .unwrap();
        assert_eq!(out, vec![dist.clone(), dist]);
    }

    proptest! {
        #[test]
        fn matches_closed_form(
            coeffs in proptest::collection::vec((0usize..3, 0usize..8, -3.0f64..3.0), 0..12),
            intercepts in proptest::collection::vec(-1.0f64..1.0, 3),
            present in proptest::collection::vec(any::<bool>(), 8),
        ) {
            let vocab = ["alpha", "beta", "gamma", "delta", "eps", "zeta", "eta", "theta"];
            let mut clf = SyntheticKeywordClassifier::new(
                TaskKind::SingleText,
                vec!["a".into(), "b".into(), "c".into()],
            );
            for (c, &b) in intercepts.iter().enumerate() {
                clf = clf.with_intercept(c, b);
            }
            let mut table = [[0.0f64; 8]; 3];
            for &(c, w, v) in &coeffs {
                clf = clf.with_coefficient(c, vocab[w], v);
                table[c][w] = v;
            }
            let text: Vec<&str> = vocab.iter().zip(&present).filter(|(_, &p)| p).map(|(w, _)| *w).collect();
            let text = format!("the {}", text.join(" "));
            let logits: Vec<f64> = (0..3)
                .map(|c| intercepts[c] + (0..8).filter(|&w| present[w]).map(|w| table[c][w]).sum::<f64>())
                .collect();
            let expected = softmax(&logits);
            let got = clf.predict_batch(&[vec![text.clone()]]).unwrap();
            for (g, e) in got[0].probs().iter().zip(&expected) {
                prop_assert!((g - e).abs() < 1e-12);
            }
            // deterministic on repeat
            let again = clf.predict_batch(&[vec![text]]).unwrap();
            prop_assert_eq!(got, again);
        }
    }
}
