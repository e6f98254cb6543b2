//! Compare several backends on the same data in one table and one grouped bar
//! chart, next to the reference results for full-size checkpoints.
//!
//! cargo run --example multi_backend_report -- [out_dir]

use std::path::PathBuf;

use xeval::corpus;
use xeval::eval::{EvalConfig, Experiment, RunReport};
use xeval::lime::LimeConfig;
use xeval::reference;
use xeval::report::{self, render_grouped_bars, BarChart, Metric, SummaryRow};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out: PathBuf = std::env::args().nth(1).unwrap_or_else(|| "xeval-out/multi".into()).into();
    let data = corpus::mini_esnli();
    // weaker logits give softer probabilities and smaller deletion effects
    let backends = [
        corpus::keyword_classifier().scaled(0.25).with_name("keywords@0.25"),
        corpus::demo_classifier(),
        corpus::keyword_classifier(),
    ];

    let mut reports: Vec<RunReport> = Vec::new();
    for backend in &backends {
        let experiment = Experiment {
            dataset: &data.manifest.name,
            annotator_policy: None,
            labels: data.manifest.class_names.clone(),
            config: EvalConfig {
                lime: LimeConfig {
                    seed: 7,
                    n_samples: 500,
                    ..LimeConfig::default()
                },
                plausibility_ratio: Some(data.manifest.dataset_mean_human_ratio),
                ..EvalConfig::default()
            },
            parallelism: 4,
        };
        reports.push(experiment.run(&data.instances, &data.instances, backend)?);
    }

    let rows: Vec<SummaryRow> = reports.iter().map(SummaryRow::from_report).collect();
    print!("{}", report::summary_markdown(&rows));
    println!("\nreference (DeBERTaV3, 100 explained instances):");
    print!("{}", report::summary_markdown(&reference::summary_rows()));

    let chart = BarChart::by_label(&reports, Metric::Comprehensiveness);
    println!("\n{} bars in the comprehensiveness chart", chart.bar_count());
    std::fs::create_dir_all(&out)?;
    std::fs::write(out.join("comp.svg"), render_grouped_bars(&chart))?;
    report::write_outputs(&out, &reports)?;
    println!("wrote {}", out.display());
    Ok(())
}
