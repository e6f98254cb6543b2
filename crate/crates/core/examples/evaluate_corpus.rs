//! Full evaluation of the bundled e-SNLI-style corpus: accuracy with a
//! confidence interval, comprehensiveness and IOU overall and per gold label,
//! plus tables and figures written to a directory.
//!
//! cargo run --example evaluate_corpus -- [out_dir]

use std::path::PathBuf;

use xeval::corpus;
use xeval::eval::{CiMethod, EvalConfig, Experiment};
use xeval::lime::LimeConfig;
use xeval::report::{self, label_rows, SummaryRow};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out: PathBuf = std::env::args().nth(1).unwrap_or_else(|| "xeval-out/example".into()).into();
    let data = corpus::mini_esnli();
    let backend = corpus::keyword_classifier();

    let experiment = Experiment {
        dataset: &data.manifest.name,
        annotator_policy: None,
        labels: data.manifest.class_names.clone(),
        config: EvalConfig {
            lime: LimeConfig {
                seed: 7,
                ..LimeConfig::default()
            },
            plausibility_ratio: Some(data.manifest.dataset_mean_human_ratio),
            ci_method: CiMethod::Wilson,
            ..EvalConfig::default()
        },
        parallelism: 4,
    };
    let run = experiment.run(&data.instances, &data.instances, &backend)?;

    print!("{}", report::summary_markdown(&[SummaryRow::from_report(&run)]));
    println!();
    print!("{}", report::by_label_markdown(&label_rows(&run)));

    let worst = run
        .records
        .iter()
        .min_by(|a, b| a.metrics.comp_agg.total_cmp(&b.metrics.comp_agg))
        .expect("records");
    println!("\nlowest comprehensiveness: {} ({:.3})", worst.id, worst.metrics.comp_agg);

    std::fs::create_dir_all(&out)?;
    std::fs::write(out.join("report.json"), run.to_canonical_json())?;
    for path in report::write_outputs(&out, std::slice::from_ref(&run))? {
        println!("wrote {}", path.display());
    }
    Ok(())
}
