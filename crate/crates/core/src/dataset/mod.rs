//! Annotated NLI and zero-shot instances: JSONL ingestion, validation,
//! highlight resolution and seeded subsampling.
//!
//! Source files store human highlights as words plus occurrence ordinals (or
//! raw token indices); they are resolved to global token indices at load time
//! so IOU can be computed over index sets.

pub mod convert;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::{tokenize, TokenizedInput};

pub use convert::{convert_cose, convert_esnli, AnnotatorPolicy, Conversion};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error("no valid instances ({rejected} line(s) rejected)")]
    NoValidInstances { rejected: usize },
    #[error("requested {requested} instances from a pool of {available}")]
    NTooLarge { requested: usize, available: usize },
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetTask {
    Nli,
    Zsc,
}

/// Reference to one highlighted token in a source file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HighlightRef {
    /// The `occurrence`-th (0-based) token equal to `word`, case-insensitively, in reading order.
    Word { word: String, occurrence: usize },
    /// A global token index.
    Index { index: usize },
}

impl HighlightRef {
    pub fn word(word: &str, occurrence: usize) -> Self {
        HighlightRef::Word {
            word: word.to_string(),
            occurrence,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "lowercase")]
enum RawRecord {
    Nli {
        id: String,
        premise: String,
        hypothesis: String,
        label: String,
        #[serde(default)]
        highlights: Option<Vec<HighlightRef>>,
    },
    Zsc {
        id: String,
        question: String,
        candidates: Vec<String>,
        label: String,
        #[serde(default)]
        highlights: Option<Vec<HighlightRef>>,
    },
}

/// One validated instance.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedInstance {
    pub id: String,
    pub task: DatasetTask,
    /// Premise and hypothesis for NLI, the question for zero-shot.
    pub segments: Vec<String>,
    pub gold_label: String,
    /// Candidate labels (zero-shot only).
    pub candidates: Vec<String>,
    /// Highlights as written in the source file.
    pub highlight_refs: Option<Vec<HighlightRef>>,
    /// Highlights resolved to global token indices.
    pub highlights: Option<BTreeSet<usize>>,
}

impl AnnotatedInstance {
    pub fn tokenized(&self) -> TokenizedInput {
        tokenize(&self.segments).expect("validated at load")
    }

    fn to_raw(&self) -> RawRecord {
        match self.task {
            DatasetTask::Nli => RawRecord::Nli {
                id: self.id.clone(),
                premise: self.segments[0].clone(),
                hypothesis: self.segments[1].clone(),
                label: self.gold_label.clone(),
                highlights: self.highlight_refs.clone(),
            },
            DatasetTask::Zsc => RawRecord::Zsc {
                id: self.id.clone(),
                question: self.segments[0].clone(),
                candidates: self.candidates.clone(),
                label: self.gold_label.clone(),
                highlights: self.highlight_refs.clone(),
            },
        }
    }

    /// Builds and validates an instance from raw parts against `manifest`.
    pub fn new(
        manifest: &DatasetManifest,
        id: &str,
        segments: Vec<String>,
        gold_label: &str,
        candidates: Vec<String>,
        highlight_refs: Option<Vec<HighlightRef>>,
    ) -> Result<Self, String> {
        let task = manifest.task;
        let raw = match task {
            DatasetTask::Nli => {
                if segments.len() != 2 {
                    return Err(format!("nli instance needs 2 segments, got {}", segments.len()));
                }
                RawRecord::Nli {
                    id: id.into(),
                    premise: segments[0].clone(),
                    hypothesis: segments[1].clone(),
                    label: gold_label.into(),
                    highlights: highlight_refs,
                }
            }
            DatasetTask::Zsc => {
                if segments.len() != 1 {
                    return Err(format!("zsc instance needs 1 segment, got {}", segments.len()));
                }
                RawRecord::Zsc {
                    id: id.into(),
                    question: segments[0].clone(),
                    candidates,
                    label: gold_label.into(),
                    highlights: highlight_refs,
                }
            }
        };
        validate(raw, manifest)
    }
}

/// Dataset-level metadata stored next to a JSONL file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub task: DatasetTask,
    /// Mean ratio of human rationale length to input length.
    pub dataset_mean_human_ratio: f64,
    /// Allowed gold labels for NLI; may be empty for zero-shot data.
    pub class_names: Vec<String>,
    pub instance_count: usize,
    /// How multi-annotator highlights were combined, when converted from a public dump.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotator_policy: Option<String>,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let r = self.dataset_mean_human_ratio;
        if !(r > 0.0 && r <= 1.0) {
            return Err(DatasetError::Manifest(format!(
                "dataset_mean_human_ratio {r} outside (0, 1]"
            )));
        }
        if self.task == DatasetTask::Nli && self.class_names.len() < 2 {
            return Err(DatasetError::Manifest("nli manifest needs at least 2 class names".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, DatasetError> {
        let m: DatasetManifest =
            serde_json::from_str(text).map_err(|e| DatasetError::Manifest(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        Self::from_json(&read(path)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Reject {
    pub line: usize,
    pub id: Option<String>,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub manifest: DatasetManifest,
    pub instances: Vec<AnnotatedInstance>,
    pub rejects: Vec<Reject>,
}

fn read(path: &Path) -> Result<String, DatasetError> {
    fs::read_to_string(path).map_err(|e| DatasetError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

fn resolve_highlights(input: &TokenizedInput, refs: &[HighlightRef]) -> Result<BTreeSet<usize>, String> {
    let lower: Vec<String> = input.tokens().map(|t| t.text.to_lowercase()).collect();
    let mut out = BTreeSet::new();
    for r in refs {
        match r {
            HighlightRef::Index { index } => {
                if *index >= lower.len() {
                    return Err(format!(
                        "highlight index {index} out of range for {} tokens",
                        lower.len()
                    ));
                }
                out.insert(*index);
            }
            HighlightRef::Word { word, occurrence } => {
                let needle = word.to_lowercase();
                let hit = lower
                    .iter()
                    .enumerate()
                    .filter(|(_, t)| **t == needle)
                    .nth(*occurrence)
                    .map(|(i, _)| i)
                    .ok_or_else(|| format!("highlight word {word:?} occurrence {occurrence} not found"))?;
                out.insert(hit);
            }
        }
    }
    Ok(out)
}

fn validate(raw: RawRecord, manifest: &DatasetManifest) -> Result<AnnotatedInstance, String> {
    let (id, task, segments, label, candidates, refs) = match raw {
        RawRecord::Nli {
            id,
            premise,
            hypothesis,
            label,
            highlights,
        } => (id, DatasetTask::Nli, vec![premise, hypothesis], label, Vec::new(), highlights),
        RawRecord::Zsc {
            id,
            question,
            candidates,
            label,
            highlights,
        } => (id, DatasetTask::Zsc, vec![question], label, candidates, highlights),
    };
    if id.trim().is_empty() {
        return Err("empty id".into());
    }
    if task != manifest.task {
        return Err(format!("task {task:?} does not match manifest task {:?}", manifest.task));
    }
    match task {
        DatasetTask::Nli => {
            if !manifest.class_names.contains(&label) {
                return Err(format!("label {label:?} not in {:?}", manifest.class_names));
            }
        }
        DatasetTask::Zsc => {
            if candidates.len() < 2 {
                return Err(format!("need at least 2 candidates, got {}", candidates.len()));
            }
            let distinct: HashSet<&String> = candidates.iter().collect();
            if distinct.len() != candidates.len() {
                return Err("duplicate candidates".into());
            }
            if !candidates.contains(&label) {
                return Err(format!("label {label:?} not among candidates"));
            }
        }
    }
    let input = tokenize(&segments).map_err(|e| e.to_string())?;
    let highlights = refs
        .as_deref()
        .map(|r| resolve_highlights(&input, r))
        .transpose()?;
    Ok(AnnotatedInstance {
        id,
        task,
        segments,
        gold_label: label,
        candidates,
        highlight_refs: refs,
        highlights,
    })
}

/// Parses JSONL text. Invalid lines are collected as rejects; the load fails
/// only when nothing valid remains.
pub fn parse_dataset(text: &str, manifest: &DatasetManifest) -> Result<LoadedDataset, DatasetError> {
    manifest.validate()?;
    let mut instances = Vec::new();
    let mut rejects = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = match serde_json::from_str(line) {
            Ok(r) => r,
            Err(e) => {
                rejects.push(Reject {
                    line: line_no,
                    id: None,
                    reason: DatasetError::Schema {
                        line: line_no,
                        message: e.to_string(),
                    }
                    .to_string(),
                });
                continue;
            }
        };
        let raw_id = match &raw {
            RawRecord::Nli { id, .. } | RawRecord::Zsc { id, .. } => id.clone(),
        };
        match validate(raw, manifest) {
            Ok(inst) if !seen.insert(inst.id.clone()) => rejects.push(Reject {
                line: line_no,
                id: Some(inst.id),
                reason: "duplicate id".into(),
            }),
            Ok(inst) => instances.push(inst),
            Err(reason) => rejects.push(Reject {
                line: line_no,
                id: Some(raw_id),
                reason,
            }),
        }
    }
    if instances.is_empty() {
        return Err(DatasetError::NoValidInstances {
            rejected: rejects.len(),
        });
    }
    Ok(LoadedDataset {
        manifest: manifest.clone(),
        instances,
        rejects,
    })
}

pub fn load_dataset(path: &Path, manifest: &DatasetManifest) -> Result<LoadedDataset, DatasetError> {
    parse_dataset(&read(path)?, manifest)
}

/// Serializes instances in the JSONL source format.
pub fn to_jsonl(instances: &[AnnotatedInstance]) -> String {
    let mut out = String::new();
    for inst in instances {
        out.push_str(&serde_json::to_string(&inst.to_raw()).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn save_dataset(path: &Path, instances: &[AnnotatedInstance]) -> Result<(), DatasetError> {
    let io_err = |e: std::io::Error| DatasetError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let mut f = fs::File::create(path).map_err(io_err)?;
    f.write_all(to_jsonl(instances).as_bytes()).map_err(io_err)
}

/// Gold-label counts.
pub fn label_counts<'a>(instances: impl IntoIterator<Item = &'a AnnotatedInstance>) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for inst in instances {
        *counts.entry(inst.gold_label.clone()).or_insert(0) += 1;
    }
    counts
}

/// Mean ratio of highlighted tokens to input tokens over instances that have highlights.
pub fn mean_human_ratio(instances: &[AnnotatedInstance]) -> Option<f64> {
    let ratios: Vec<f64> = instances
        .iter()
        .filter_map(|i| {
            let h = i.highlights.as_ref()?;
            Some(h.len() as f64 / i.tokenized().n_tokens() as f64)
        })
        .collect();
    if ratios.is_empty() {
        None
    } else {
        Some(ratios.iter().sum::<f64>() / ratios.len() as f64)
    }
}

#[derive(Debug, Clone)]
pub struct Subset {
    pub instances: Vec<AnnotatedInstance>,
    pub label_counts: BTreeMap<String, usize>,
}

/// Draws `n` instances without replacement, deterministically under `seed`.
/// With `stratify_by_label` each gold label receives a share proportional to
/// its pool frequency (largest remainder). Selected instances keep pool order.
pub fn sample_subset(
    instances: &[AnnotatedInstance],
    n: usize,
    seed: u64,
    stratify_by_label: bool,
) -> Result<Subset, DatasetError> {
    if n > instances.len() {
        return Err(DatasetError::NTooLarge {
            requested: n,
            available: instances.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<usize> = if stratify_by_label {
        let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, inst) in instances.iter().enumerate() {
            groups.entry(inst.gold_label.as_str()).or_default().push(i);
        }
        let total = instances.len();
        let mut quotas: Vec<(usize, f64, &str)> = groups
            .iter()
            .map(|(label, members)| {
                let exact = n as f64 * members.len() as f64 / total as f64;
                (exact.floor() as usize, exact - exact.floor(), *label)
            })
            .collect();
        let assigned: usize = quotas.iter().map(|q| q.0).sum();
        let mut order: Vec<usize> = (0..quotas.len()).collect();
        order.sort_by(|&a, &b| quotas[b].1.total_cmp(&quotas[a].1).then(a.cmp(&b)));
        for &g in order.iter().take(n - assigned) {
            quotas[g].0 += 1;
        }
        let mut picked = Vec::with_capacity(n);
        for (quota, _, label) in quotas {
            let members = &groups[label];
            picked.extend(index::sample(&mut rng, members.len(), quota).into_iter().map(|j| members[j]));
        }
        picked
    } else {
        index::sample(&mut rng, instances.len(), n).into_vec()
    };
    chosen.sort_unstable();
    let picked: Vec<AnnotatedInstance> = chosen.into_iter().map(|i| instances[i].clone()).collect();
    Ok(Subset {
        label_counts: label_counts(&picked),
        instances: picked,
    })
}
