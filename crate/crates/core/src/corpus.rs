//! Bundled mini-corpora and the lexicon classifier they were planted for.
//!
//! `mini_esnli` holds 20 NLI pairs and `mini_cose` 10 multiple-choice
//! questions. Each instance's highlights are exactly the words that drive the
//! lexicon classifier towards the gold label, and their number equals the
//! plausibility `k` for the dataset ratio, so a faithful explainer should
//! reach IOU close to 1.

use crate::dataset::{parse_dataset, DatasetManifest, LoadedDataset};
use crate::model::SyntheticKeywordClassifier;

pub const MINI_ESNLI_JSONL: &str = include_str!("../data/mini_esnli.jsonl");
pub const MINI_ESNLI_MANIFEST: &str = include_str!("../data/mini_esnli.manifest.json");
pub const MINI_COSE_JSONL: &str = include_str!("../data/mini_cose.jsonl");
pub const MINI_COSE_MANIFEST: &str = include_str!("../data/mini_cose.manifest.json");

const KEYWORD_WEIGHT: f64 = 3.0;
const DISTRACTOR_WEIGHT: f64 = 1.5;

const NLI_KEYWORDS: [(&str, [&str; 8]); 3] = [
    (
        "entailment",
        ["touching", "outdoors", "smiling", "together", "someone", "holding", "wearing", "moving"],
    ),
    (
        "neutral",
        ["because", "probably", "tall", "favorite", "first", "wants", "tired", "winning"],
    ),
    (
        "contradiction",
        ["never", "nobody", "sleeping", "empty", "alone", "indoors", "silent", "sitting"],
    ),
];

const NLI_DISTRACTORS: [(&str, &str); 3] = [("near", "entailment"), ("some", "neutral"), ("no", "contradiction")];

/// (question word, answer word, weight) interactions on the entailment class.
const ANSWER_PAIRS: [(&str, &str, f64); 26] = [
    ("airplanes", "airport", KEYWORD_WEIGHT),
    ("bees", "honey", KEYWORD_WEIGHT),
    ("books", "library", KEYWORD_WEIGHT),
    ("borrow", "library", KEYWORD_WEIGHT),
    ("chef", "kitchen", KEYWORD_WEIGHT),
    ("clouds", "water", KEYWORD_WEIGHT),
    ("cold", "refrigerator", KEYWORD_WEIGHT),
    ("country", "spain", KEYWORD_WEIGHT),
    ("courtyard", "spain", KEYWORD_WEIGHT),
    ("falls", "leaves", DISTRACTOR_WEIGHT),
    ("feet", "boots", KEYWORD_WEIGHT),
    ("flight", "airport", KEYWORD_WEIGHT),
    ("free", "beach", DISTRACTOR_WEIGHT),
    ("fresh", "garage", DISTRACTOR_WEIGHT),
    ("homes", "spain", KEYWORD_WEIGHT),
    ("land", "farm", DISTRACTOR_WEIGHT),
    ("meals", "kitchen", KEYWORD_WEIGHT),
    ("milk", "refrigerator", KEYWORD_WEIGHT),
    ("nail", "hammer", KEYWORD_WEIGHT),
    ("nectar", "honey", KEYWORD_WEIGHT),
    ("rainy", "water", KEYWORD_WEIGHT),
    ("sweaters", "sheep", KEYWORD_WEIGHT),
    ("winter", "boots", KEYWORD_WEIGHT),
    ("winter", "gloves", DISTRACTOR_WEIGHT),
    ("wood", "hammer", KEYWORD_WEIGHT),
    ("wool", "sheep", KEYWORD_WEIGHT),
];

/// NLI classifier over the corpus lexicon. Also answers the zero-shot corpus
/// when wrapped in a [`crate::model::ZeroShotClassifier`].
pub fn keyword_classifier() -> SyntheticKeywordClassifier {
    let mut clf = SyntheticKeywordClassifier::nli().with_name("synthetic:keywords");
    for (label, words) in NLI_KEYWORDS {
        let c = clf.class_index(label).expect("nli label");
        for w in words {
            clf = clf.with_coefficient(c, w, KEYWORD_WEIGHT);
        }
    }
    for (w, label) in NLI_DISTRACTORS {
        let c = clf.class_index(label).expect("nli label");
        clf = clf.with_coefficient(c, w, DISTRACTOR_WEIGHT);
    }
    let entail = clf.class_index("entailment").expect("nli label");
    for (q, a, v) in ANSWER_PAIRS {
        clf = clf.with_pair_coefficient(entail, q, a, v);
    }
    clf
}

/// The lexicon classifier at half strength: less confident, same rankings.
pub fn demo_classifier() -> SyntheticKeywordClassifier {
    keyword_classifier().scaled(0.5).with_name("synthetic:demo")
}

fn bundled(jsonl: &str, manifest: &str) -> LoadedDataset {
    let manifest = DatasetManifest::from_json(manifest).expect("bundled manifest is valid");
    parse_dataset(jsonl, &manifest).expect("bundled corpus is valid")
}

pub fn mini_esnli() -> LoadedDataset {
    bundled(MINI_ESNLI_JSONL, MINI_ESNLI_MANIFEST)
}

pub fn mini_cose() -> LoadedDataset {
    bundled(MINI_COSE_JSONL, MINI_COSE_MANIFEST)
}

/// Looks a bundled corpus up by name (`mini_esnli` or `mini_cose`).
pub fn by_name(name: &str) -> Option<LoadedDataset> {
    match name {
        "mini_esnli" | "mini-esnli" => Some(mini_esnli()),
        "mini_cose" | "mini-cose" => Some(mini_cose()),
        _ => None,
    }
}
