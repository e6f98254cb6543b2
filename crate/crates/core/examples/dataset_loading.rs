//! Load, validate, subsample and round-trip annotated datasets, and convert
//! raw e-SNLI CSV and CoS-e JSONL into the JSONL format.
//!
//! cargo run --example dataset_loading

use xeval::corpus;
use xeval::dataset::{
    convert::{convert_cose, convert_esnli, AnnotatorPolicy},
    label_counts, mean_human_ratio, parse_dataset, sample_subset, to_jsonl, DatasetManifest,
};

const ESNLI_CSV: &str = "\
pairID,gold_label,Sentence1,Sentence2,Sentence1_marked_1,Sentence2_marked_1,Sentence1_marked_2,Sentence2_marked_2
p1,contradiction,A dog runs on the beach.,The dog is sleeping.,A dog *runs* on the beach.,The dog is *sleeping*.,A *dog* runs on the beach.,The dog is *sleeping*.
p2,entailment,Two men play guitar.,People make music.,Two men *play* *guitar*.,People *make* *music*.,Two men play *guitar*.,People make *music*.
p3,neutral,A woman reads a book.,The book is a novel.,A woman reads a book.,The book is a novel.,,
";

const COSE_JSONL: &str = r#"{"id":"q1","question":{"stem":"Where do you keep milk cold?","choices":[{"label":"A","text":"fridge"},{"label":"B","text":"oven"},{"label":"C","text":"shelf"}]},"answerKey":"A","explanation":{"selected":"keep milk cold"}}
"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = corpus::mini_esnli();
    println!("{}: {} instances, labels {:?}", data.manifest.name, data.instances.len(), label_counts(&data.instances));
    println!("mean highlight ratio {:.3}", mean_human_ratio(&data.instances).unwrap_or(0.0));

    let subset = sample_subset(&data.instances, 9, 42, true)?;
    let ids: Vec<&str> = subset.instances.iter().map(|i| i.id.as_str()).collect();
    println!("stratified 9: {ids:?} {:?}", subset.label_counts);

    // malformed lines are reported and skipped, not fatal
    let manifest = data.manifest.clone();
    let text = format!(
        "{}{}\n{}\n",
        to_jsonl(&data.instances[..2]),
        r#"{"task":"nli","id":"bad","premise":"A cat.","hypothesis":"A dog.","label":"maybe"}"#,
        "not json"
    );
    let loaded = parse_dataset(&text, &manifest)?;
    println!("\nparsed {} instances, rejected:", loaded.instances.len());
    for r in &loaded.rejects {
        println!("  line {} {:?}: {}", r.line, r.id, r.reason);
    }

    for policy in [AnnotatorPolicy::First, AnnotatorPolicy::Union, AnnotatorPolicy::Intersection] {
        let conv = convert_esnli(ESNLI_CSV.as_bytes(), policy)?;
        let hl: Vec<_> = conv.instances.iter().map(|i| i.highlights.clone().unwrap_or_default()).collect();
        println!(
            "\ne-SNLI ({}): {} instances, {} without highlights, ratio {:.3}, highlights {hl:?}",
            policy.as_str(),
            conv.instances.len(),
            conv.without_highlights,
            conv.manifest.dataset_mean_human_ratio
        );
    }

    let conv = convert_cose(COSE_JSONL.as_bytes())?;
    print!("\nCoS-e manifest {}\n{}", manifest_json(&conv.manifest), to_jsonl(&conv.instances));
    Ok(())
}

fn manifest_json(m: &DatasetManifest) -> String {
    serde_json::to_string(m).expect("manifest serializes")
}
