//! Converters from the public e-SNLI CSV and CoS-e/CommonsenseQA JSONL dumps.

use std::collections::BTreeSet;
use std::io::{BufRead, Read};

use serde::Deserialize;

use super::{AnnotatedInstance, DatasetError, DatasetManifest, DatasetTask, HighlightRef, Reject};
use crate::model::NLI_CLASSES;
use crate::text::split_words;

/// How to combine highlights when several annotators marked an e-SNLI pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AnnotatorPolicy {
    #[default]
    First,
    Union,
    Intersection,
}

impl AnnotatorPolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            AnnotatorPolicy::First => "first",
            AnnotatorPolicy::Union => "union",
            AnnotatorPolicy::Intersection => "intersection",
        }
    }
}

impl std::str::FromStr for AnnotatorPolicy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "first" => Ok(AnnotatorPolicy::First),
            "union" => Ok(AnnotatorPolicy::Union),
            "intersection" => Ok(AnnotatorPolicy::Intersection),
            other => Err(format!("unknown annotator policy {other:?}")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Conversion {
    /// Manifest describing the converted instances.
    pub manifest: DatasetManifest,
    pub instances: Vec<AnnotatedInstance>,
    pub skipped: Vec<Reject>,
    /// Instances kept without highlights because none could be aligned.
    pub without_highlights: usize,
}

/// Strips `*word*` markers, returning the plain text and the lowercased words
/// that were inside markers, each with its occurrence ordinal in the plain text.
fn parse_marked(marked: &str) -> (String, Vec<(String, usize)>) {
    let mut plain = String::with_capacity(marked.len());
    let mut flags = Vec::with_capacity(marked.len());
    let mut inside = false;
    for c in marked.chars() {
        if c == '*' {
            inside = !inside;
            continue;
        }
        plain.push(c);
        flags.extend(std::iter::repeat_n(inside, c.len_utf8()));
    }
    let mut seen: Vec<String> = Vec::new();
    let mut out = Vec::new();
    for tok in split_words(&plain) {
        let lower = tok.text.to_lowercase();
        let occ = seen.iter().filter(|w| **w == lower).count();
        if flags[tok.span.clone()].iter().any(|&f| f) {
            out.push((lower.clone(), occ));
        }
        seen.push(lower);
    }
    (plain, out)
}

/// Maps per-segment (word, occurrence) pairs onto instance-wide highlight refs.
fn segment_refs(segments: &[&str], marked: &[Vec<(String, usize)>]) -> Option<BTreeSet<(String, usize)>> {
    let mut out = BTreeSet::new();
    let mut earlier: Vec<String> = Vec::new();
    for (seg, marks) in segments.iter().zip(marked) {
        let words: Vec<String> = split_words(seg).iter().map(|t| t.text.to_lowercase()).collect();
        for (w, occ) in marks {
            if words.iter().filter(|x| *x == w).count() <= *occ {
                return None;
            }
            let before = earlier.iter().filter(|x| *x == w).count();
            out.insert((w.clone(), before + occ));
        }
        earlier.extend(words);
    }
    Some(out)
}

fn esnli_manifest() -> DatasetManifest {
    DatasetManifest {
        name: "e-snli".into(),
        task: DatasetTask::Nli,
        dataset_mean_human_ratio: 0.19,
        class_names: NLI_CLASSES.iter().map(|s| s.to_string()).collect(),
        instance_count: 0,
        annotator_policy: None,
    }
}

/// Converts an e-SNLI CSV (train or dev/test layout) into annotated NLI instances.
pub fn convert_esnli<R: Read>(reader: R, policy: AnnotatorPolicy) -> Result<Conversion, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| DatasetError::Schema {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let required = ["pairID", "gold_label", "Sentence1", "Sentence2"];
    let mut idx = Vec::new();
    for name in required {
        idx.push(col(name).ok_or_else(|| DatasetError::Schema {
            line: 1,
            message: format!("missing column {name}"),
        })?);
    }
    let annotators: Vec<(usize, usize)> = (1..=3)
        .filter_map(|k| Some((col(&format!("Sentence1_marked_{k}"))?, col(&format!("Sentence2_marked_{k}"))?)))
        .collect();

    let mut manifest = esnli_manifest();
    manifest.annotator_policy = Some(policy.as_str().to_string());
    let mut conv = Conversion {
        manifest: manifest.clone(),
        instances: Vec::new(),
        skipped: Vec::new(),
        without_highlights: 0,
    };
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                conv.skipped.push(Reject {
                    line,
                    id: None,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let get = |j: usize| rec.get(j).unwrap_or("").trim();
        let (id, label, premise, hypothesis) = (get(idx[0]), get(idx[1]), get(idx[2]), get(idx[3]));
        let segments = [premise, hypothesis];

        let mut sets: Vec<BTreeSet<(String, usize)>> = Vec::new();
        for &(c1, c2) in &annotators {
            let (m1, m2) = (get(c1), get(c2));
            if m1.is_empty() && m2.is_empty() {
                continue;
            }
            let marks = [parse_marked(m1).1, parse_marked(m2).1];
            if let Some(s) = segment_refs(&segments, &marks).filter(|s| !s.is_empty()) {
                sets.push(s);
            }
        }
        let combined = match policy {
            AnnotatorPolicy::First => sets.into_iter().next(),
            AnnotatorPolicy::Union => sets.into_iter().reduce(|a, b| a.union(&b).cloned().collect()),
            AnnotatorPolicy::Intersection => {
                sets.into_iter().reduce(|a, b| a.intersection(&b).cloned().collect())
            }
        };
        let refs = combined.filter(|s| !s.is_empty()).map(|s| {
            let mut v: Vec<(String, usize)> = s.into_iter().collect();
            v.sort_by_key(|(w, o)| (position_of(&segments, w, *o), w.clone()));
            v.into_iter().map(|(w, o)| HighlightRef::word(&w, o)).collect::<Vec<_>>()
        });
        if refs.is_none() {
            conv.without_highlights += 1;
        }
        match AnnotatedInstance::new(
            &manifest,
            id,
            vec![premise.to_string(), hypothesis.to_string()],
            label,
            Vec::new(),
            refs,
        ) {
            Ok(inst) => conv.instances.push(inst),
            Err(reason) => conv.skipped.push(Reject {
                line,
                id: Some(id.to_string()),
                reason,
            }),
        }
    }
    conv.manifest.instance_count = conv.instances.len();
    Ok(conv)
}

fn position_of(segments: &[&str], word: &str, occurrence: usize) -> usize {
    segments
        .iter()
        .flat_map(|s| split_words(s))
        .enumerate()
        .filter(|(_, t)| t.text.to_lowercase() == word)
        .nth(occurrence)
        .map_or(usize::MAX, |(i, _)| i)
}

#[derive(Deserialize)]
struct CqaChoice {
    label: String,
    text: String,
}

#[derive(Deserialize)]
struct CqaQuestion {
    stem: String,
    choices: Vec<CqaChoice>,
}

#[derive(Deserialize)]
struct CoseExplanation {
    #[serde(default)]
    selected: String,
}

#[derive(Deserialize)]
struct CoseRecord {
    id: String,
    question: CqaQuestion,
    #[serde(rename = "answerKey")]
    answer_key: String,
    #[serde(default)]
    explanation: Option<CoseExplanation>,
}

/// Finds the first contiguous run of question tokens matching the selected span.
fn span_refs(question: &str, selected: &str) -> Option<Vec<HighlightRef>> {
    let q: Vec<String> = split_words(question).iter().map(|t| t.text.to_lowercase()).collect();
    let s: Vec<String> = split_words(selected).iter().map(|t| t.text.to_lowercase()).collect();
    if s.is_empty() || s.len() > q.len() {
        return None;
    }
    let start = (0..=q.len() - s.len()).find(|&i| q[i..i + s.len()] == s[..])?;
    Some(
        (start..start + s.len())
            .map(|i| HighlightRef::word(&q[i], q[..i].iter().filter(|w| **w == q[i]).count()))
            .collect(),
    )
}

/// Converts CoS-e JSONL (CommonsenseQA records with an `explanation.selected`
/// span) into zero-shot instances whose candidates are the answer choices.
pub fn convert_cose<R: BufRead>(reader: R) -> Result<Conversion, DatasetError> {
    let manifest = DatasetManifest {
        name: "cos-e".into(),
        task: DatasetTask::Zsc,
        dataset_mean_human_ratio: 0.26,
        class_names: Vec::new(),
        instance_count: 0,
        annotator_policy: None,
    };
    let mut conv = Conversion {
        manifest: manifest.clone(),
        instances: Vec::new(),
        skipped: Vec::new(),
        without_highlights: 0,
    };
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| DatasetError::Io {
            path: "<cos-e>".into(),
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CoseRecord = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                conv.skipped.push(Reject {
                    line: line_no,
                    id: None,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let Some(answer) = rec.question.choices.iter().find(|c| c.label == rec.answer_key) else {
            conv.skipped.push(Reject {
                line: line_no,
                id: Some(rec.id),
                reason: format!("answerKey {:?} matches no choice", rec.answer_key),
            });
            continue;
        };
        let refs = rec
            .explanation
            .as_ref()
            .and_then(|e| span_refs(&rec.question.stem, &e.selected));
        if refs.is_none() {
            conv.without_highlights += 1;
        }
        let candidates = rec.question.choices.iter().map(|c| c.text.clone()).collect();
        match AnnotatedInstance::new(
            &manifest,
            &rec.id,
            vec![rec.question.stem.clone()],
            &answer.text,
            candidates,
            refs,
        ) {
            Ok(inst) => conv.instances.push(inst),
            Err(reason) => conv.skipped.push(Reject {
                line: line_no,
                id: Some(rec.id),
                reason,
            }),
        }
    }
    conv.manifest.instance_count = conv.instances.len();
    Ok(conv)
}

#[cfg(test)]
mod tests {
    use super::*;

    const CSV: &str = "\
pairID,gold_label,Sentence1,Sentence2,Explanation_1,Sentence1_marked_1,Sentence2_marked_1,Sentence1_marked_2,Sentence2_marked_2
p1,entailment,A man in an orange vest leans over a pickup truck.,A man is touching a truck.,x,A *man* in an orange vest *leans* *over* a *pickup* *truck*.,A man is *touching* a truck.,A man in an *orange* vest leans over a pickup *truck*.,A man is touching a *truck*.
p2,-,a b,c d,x,,,,
p3,neutral,The dog runs.,The dog is happy.,x,,,,
";

    fn hl_words(inst: &AnnotatedInstance) -> Vec<String> {
        let t = inst.tokenized();
        inst.highlights
            .as_ref()
            .unwrap()
            .iter()
            .map(|&i| t.token(i).unwrap().text.clone())
            .collect()
    }

    #[test]
    fn esnli_policies() {
        let first = convert_esnli(CSV.as_bytes(), AnnotatorPolicy::First).unwrap();
        assert_eq!(first.instances.len(), 2);
        assert_eq!(first.skipped.len(), 1);
        assert_eq!(first.skipped[0].line, 3);
        assert_eq!(first.without_highlights, 2);
        assert_eq!(hl_words(&first.instances[0]), ["man", "leans", "over", "pickup", "truck", "touching"]);
        assert!(first.instances[1].highlights.is_none());

        let union = convert_esnli(CSV.as_bytes(), AnnotatorPolicy::Union).unwrap();
        assert_eq!(
            hl_words(&union.instances[0]),
            ["man", "orange", "leans", "over", "pickup", "truck", "touching", "truck"]
        );
        let inter = convert_esnli(CSV.as_bytes(), AnnotatorPolicy::Intersection).unwrap();
        assert_eq!(hl_words(&inter.instances[0]), ["truck"]);
    }

    #[test]
    fn marked_parsing() {
        let (plain, marks) = parse_marked("*A* dog and *a* cat, *two words*.");
        assert_eq!(plain, "A dog and a cat, two words.");
        assert_eq!(
            marks,
            [("a".to_string(), 0), ("a".to_string(), 1), ("two".to_string(), 0), ("words".to_string(), 0)]
        );
    }

    #[test]
    fn cose_conversion() {
        let text = r#"{"id":"q1","question":{"stem":"Many homes in this country are built around a courtyard. Where is it?","choices":[{"label":"A","text":"hospital"},{"label":"B","text":"park"},{"label":"C","text":"spain"}]},"answerKey":"C","explanation":{"selected":"in this country","open-ended":"x"}}
{"id":"q2","question":{"stem":"What is blue?","choices":[{"label":"A","text":"sky"},{"label":"B","text":"grass"}]},"answerKey":"A","explanation":{"selected":"nothing like this"}}
{"id":"q3","question":{"stem":"What?","choices":[{"label":"A","text":"x"},{"label":"B","text":"y"}]},"answerKey":"E"}
"#;
        let conv = convert_cose(text.as_bytes()).unwrap();
        assert_eq!(conv.instances.len(), 2);
        assert_eq!(conv.skipped.len(), 1);
        assert_eq!(conv.without_highlights, 1);
        let q1 = &conv.instances[0];
        assert_eq!(q1.gold_label, "spain");
        assert_eq!(q1.candidates, ["hospital", "park", "spain"]);
        assert_eq!(hl_words(q1), ["in", "this", "country"]);
    }
}
