//! Zero-shot classification expressed as a batch of NLI queries.

use super::{BackendError, ClassifierBackend, PredictionDist, TaskKind};

pub const DEFAULT_TEMPLATE: &str = "The answer is {}.";

const PLACEHOLDER: &str = "{}";

fn check_template(template: &str) -> Result<(), BackendError> {
    match template.matches(PLACEHOLDER).count() {
        1 => Ok(()),
        n => Err(BackendError::TemplateInvalid(format!(
            "expected exactly one {PLACEHOLDER} placeholder, found {n} in {template:?}"
        ))),
    }
}

fn check_candidates(candidates: &[String]) -> Result<(), BackendError> {
    if candidates.len() < 2 {
        return Err(BackendError::InvalidRequest(format!(
            "zero-shot classification needs at least 2 candidates, got {}",
            candidates.len()
        )));
    }
    Ok(())
}

fn hypothesis(template: &str, candidate: &str) -> String {
    template.replacen(PLACEHOLDER, candidate, 1)
}

/// Scores every candidate by the entailment probability of
/// `(question, template(candidate))` and renormalizes over candidates.
/// If every entailment score is zero the result is uniform.
pub fn zsc_predict<B: ClassifierBackend + ?Sized>(
    backend: &B,
    question: &str,
    candidates: &[String],
    template: &str,
) -> Result<PredictionDist, BackendError> {
    let mut out = zsc_predict_many(backend, &[question], candidates, template)?;
    Ok(out.remove(0))
}

fn zsc_predict_many<B: ClassifierBackend + ?Sized>(
    backend: &B,
    questions: &[&str],
    candidates: &[String],
    template: &str,
) -> Result<Vec<PredictionDist>, BackendError> {
    check_template(template)?;
    check_candidates(candidates)?;
    if backend.task() != TaskKind::NliPair {
        return Err(BackendError::InvalidRequest(
            "zero-shot classification needs an nli-pair backend".into(),
        ));
    }
    let hypotheses: Vec<String> = candidates.iter().map(|c| hypothesis(template, c)).collect();
    let items: Vec<Vec<String>> = questions
        .iter()
        .flat_map(|q| hypotheses.iter().map(move |h| vec![q.to_string(), h.clone()]))
        .collect();
    let dists = backend.predict_batch(&items)?;
    if dists.len() != items.len() {
        return Err(BackendError::ProtocolViolation(format!(
            "{} items sent, {} distributions returned",
            items.len(),
            dists.len()
        )));
    }
    dists
        .chunks(candidates.len())
        .map(|chunk| {
            let scores = chunk
                .iter()
                .map(|d| {
                    d.class_index("entailment").map(|i| d.prob(i)).ok_or_else(|| {
                        BackendError::ProtocolViolation("backend has no entailment class".into())
                    })
                })
                .collect::<Result<Vec<f64>, _>>()?;
            let total: f64 = scores.iter().sum();
            let probs = if total > 0.0 {
                scores.iter().map(|s| s / total).collect()
            } else {
                vec![1.0 / candidates.len() as f64; candidates.len()]
            };
            PredictionDist::new(probs, candidates.to_vec())
        })
        .collect()
}

/// Wraps an NLI backend as a single-text classifier over a fixed candidate list.
pub struct ZeroShotClassifier<B> {
    backend: B,
    candidates: Vec<String>,
    template: String,
}

impl<B: ClassifierBackend> ZeroShotClassifier<B> {
    pub fn new(backend: B, candidates: Vec<String>, template: impl Into<String>) -> Result<Self, BackendError> {
        let template = template.into();
        check_template(&template)?;
        check_candidates(&candidates)?;
        if backend.task() != TaskKind::NliPair {
            return Err(BackendError::InvalidRequest(
                "zero-shot classification needs an nli-pair backend".into(),
            ));
        }
        Ok(ZeroShotClassifier {
            backend,
            candidates,
            template,
        })
    }

    pub fn candidates(&self) -> &[String] {
        &self.candidates
    }
}

impl<B: ClassifierBackend> ClassifierBackend for ZeroShotClassifier<B> {
    fn task(&self) -> TaskKind {
        TaskKind::SingleText
    }

    fn class_names(&self) -> Option<Vec<String>> {
        Some(self.candidates.clone())
    }

    fn predict_batch(&self, inputs: &[Vec<String>]) -> Result<Vec<PredictionDist>, BackendError> {
        super::check_arity(TaskKind::SingleText, inputs)?;
        let questions: Vec<&str> = inputs.iter().map(|i| i[0].as_str()).collect();
        zsc_predict_many(&self.backend, &questions, &self.candidates, &self.template)
    }

    fn name(&self) -> String {
        format!("zsc({})", self.backend.name())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SyntheticKeywordClassifier;
    use std::collections::HashMap;

    /// NLI stub whose entailment probability is looked up by hypothesis text.
    struct TableBackend(HashMap<String, f64>);

    impl ClassifierBackend for TableBackend {
        fn task(&self) -> TaskKind {
            TaskKind::NliPair
        }
        fn class_names(&self) -> Option<Vec<String>> {
            None
        }
        fn predict_batch(&self, inputs: &[Vec<String>]) -> Result<Vec<PredictionDist>, BackendError> {
            inputs
                .iter()
                .map(|i| {
                    let e = self.0.get(&i[1]).copied().unwrap_or(0.0);
                    PredictionDist::new(
                        vec![e, 1.0 - e, 0.0],
                        vec!["entailment".into(), "neutral".into(), "contradiction".into()],
                    )
                })
                .collect()
        }
    }

    fn cands(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn renormalizes_entailment() {
        let mut table = HashMap::new();
        table.insert("The answer is table.".to_string(), 0.8);
        table.insert("The answer is desk.".to_string(), 0.2);
        let c = cands(&["sailboat", "desk", "closet", "table", "apartment"]);
        let d = zsc_predict(&TableBackend(table), "where?", &c, DEFAULT_TEMPLATE).unwrap();
        assert_eq!(d.predicted_name(), "table");
        let expected = [0.0, 0.2, 0.0, 0.8, 0.0];
        for (p, e) in d.probs().iter().zip(expected) {
            assert!((p - e).abs() < 1e-12);
        }
    }

    #[test]
    fn equal_or_zero_scores_are_uniform() {
        let c = cands(&["a", "b", "c"]);
        let d = zsc_predict(&TableBackend(HashMap::new()), "q", &c, DEFAULT_TEMPLATE).unwrap();
        assert!(d.probs().iter().all(|p| (p - 1.0 / 3.0).abs() < 1e-15));
        let table = c.iter().map(|x| (format!("The answer is {x}."), 0.4)).collect();
        let d = zsc_predict(&TableBackend(table), "q", &c, DEFAULT_TEMPLATE).unwrap();
        assert!(d.probs().iter().all(|p| (p - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn template_and_candidates_validated() {
        let b = TableBackend(HashMap::new());
        let c = cands(&["a", "b"]);
        assert!(matches!(
            zsc_predict(&b, "q", &c, "no placeholder"),
            Err(BackendError::TemplateInvalid(_))
        ));
        assert!(matches!(
            zsc_predict(&b, "q", &c, "{} and {}"),
            Err(BackendError::TemplateInvalid(_))
        ));
        assert!(matches!(
            zsc_predict(&b, "q", &cands(&["a"]), DEFAULT_TEMPLATE),
            Err(BackendError::InvalidRequest(_))
        ));
    }

    #[test]
    fn permutation_equivariant() {
        let clf = SyntheticKeywordClassifier::nli()
            .with_pair_coefficient(0, "saw", "hardware", 2.0)
            .with_pair_coefficient(0, "saw", "toolbox", 1.0)
            .with_coefficient(2, "auger", 0.5);
        let q = "Where can someone get a new saw?";
        let c = cands(&["hardware store", "toolbox", "logging camp", "tool kit", "auger"]);
        let d = zsc_predict(&clf, q, &c, DEFAULT_TEMPLATE).unwrap();
        assert_eq!(d.predicted_name(), "hardware store");
        let perm = [4, 2, 0, 3, 1];
        let pc: Vec<String> = perm.iter().map(|&i| c[i].clone()).collect();
        let pd = zsc_predict(&clf, q, &pc, DEFAULT_TEMPLATE).unwrap();
        for (j, &i) in perm.iter().enumerate() {
            assert!((pd.prob(j) - d.prob(i)).abs() < 1e-15);
        }
    }

    #[test]
    fn wrapper_batches_questions() {
        let clf = SyntheticKeywordClassifier::nli().with_pair_coefficient(0, "sloppy", "table", 3.0);
        let zsc = ZeroShotClassifier::new(&clf, cands(&["desk", "table"]), DEFAULT_TEMPLATE).unwrap();
        let out = zsc
            .predict_batch(&[vec!["a sloppy eater".into()], vec!["a neat eater".into()]])
            .unwrap();
        assert_eq!(out[0].predicted_name(), "table");
        assert!((out[1].prob(0) - 0.5).abs() < 1e-15);
        assert_eq!(zsc.task(), TaskKind::SingleText);
    }
}
