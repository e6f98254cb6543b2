mod common;

use proptest::prelude::*;

use xeval::corpus;
use xeval::dataset::{
    load_dataset, parse_dataset, sample_subset, save_dataset, AnnotatedInstance, DatasetManifest, HighlightRef,
};

#[test]
fn bundled_corpus_round_trips_through_disk() {
    let data = corpus::mini_esnli();
    let dir = common::tmp();
    let path = dir.path().join("copy.jsonl");
    save_dataset(&path, &data.instances).unwrap();
    let back = load_dataset(&path, &data.manifest).unwrap();
    assert!(back.rejects.is_empty());
    assert_eq!(back.instances, data.instances);

    let cose = corpus::mini_cose();
    let path = dir.path().join("cose.jsonl");
    save_dataset(&path, &cose.instances).unwrap();
    assert_eq!(load_dataset(&path, &cose.manifest).unwrap().instances, cose.instances);
}

#[test]
fn manifest_file_round_trip() {
    let dir = common::tmp();
    let path = dir.path().join("m.json");
    std::fs::write(&path, corpus::MINI_COSE_MANIFEST).unwrap();
    let m = DatasetManifest::load(&path).unwrap();
    assert_eq!(m.name, "mini-cose");
    assert!(DatasetManifest::load(&dir.path().join("missing.json")).is_err());
}

fn manifest() -> DatasetManifest {
    corpus::mini_esnli().manifest
}

const WORDS: [&str; 8] = ["a", "dog", "runs", "near", "the", "red", "barn", "fast"];

fn instance() -> impl Strategy<Value = AnnotatedInstance> {
    (
        prop::collection::vec(0..WORDS.len(), 1..8),
        prop::collection::vec(0..WORDS.len(), 1..6),
        0..3usize,
        prop::collection::vec(any::<prop::sample::Index>(), 0..4),
    )
        .prop_map(|(p, h, label, picks)| {
            let premise: Vec<&str> = p.iter().map(|&i| WORDS[i]).collect();
            let hypothesis: Vec<&str> = h.iter().map(|&i| WORDS[i]).collect();
            let n = premise.len() + hypothesis.len();
            let refs: Vec<HighlightRef> = picks
                .iter()
                .map(|ix| HighlightRef::Index { index: ix.index(n) })
                .collect();
            let m = manifest();
            AnnotatedInstance::new(
                &m,
                "x",
                vec![premise.join(" "), hypothesis.join(" ") + "."],
                &m.class_names[label],
                Vec::new(),
                (!refs.is_empty()).then_some(refs),
            )
            .unwrap()
        })
}

proptest! {
    #[test]
    fn jsonl_round_trip(insts in prop::collection::vec(instance(), 1..6)) {
        let insts: Vec<AnnotatedInstance> = insts
            .into_iter()
            .enumerate()
            .map(|(i, mut x)| { x.id = format!("id{i}"); x })
            .collect();
        let text = xeval::dataset::to_jsonl(&insts);
        let back = parse_dataset(&text, &manifest()).unwrap();
        prop_assert!(back.rejects.is_empty());
        prop_assert_eq!(
            back.instances.iter().map(|i| i.highlights.clone()).collect::<Vec<_>>(),
            insts.iter().map(|i| i.highlights.clone()).collect::<Vec<_>>()
        );
        prop_assert_eq!(
            back.instances.iter().map(|i| (&i.segments, &i.gold_label)).collect::<Vec<_>>(),
            insts.iter().map(|i| (&i.segments, &i.gold_label)).collect::<Vec<_>>()
        );
    }

    #[test]
    fn subsets_are_seeded_and_distinct(n in 1usize..=20, seed in any::<u64>(), stratify in any::<bool>()) {
        let data = corpus::mini_esnli();
        let a = sample_subset(&data.instances, n, seed, stratify).unwrap();
        let b = sample_subset(&data.instances, n, seed, stratify).unwrap();
        prop_assert_eq!(&a.instances, &b.instances);
        prop_assert_eq!(a.instances.len(), n);
        let ids: std::collections::BTreeSet<_> = a.instances.iter().map(|i| &i.id).collect();
        prop_assert_eq!(ids.len(), n);
        if stratify {
            for (label, &count) in &a.label_counts {
                let pool = data.instances.iter().filter(|i| &i.gold_label == label).count() as f64;
                let exact = pool * n as f64 / 20.0;
                prop_assert!((count as f64 - exact).abs() < 1.0 + 1e-9, "{label}: {count} vs {exact}");
            }
        }
    }
}
