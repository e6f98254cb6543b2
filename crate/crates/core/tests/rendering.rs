mod common;

use std::collections::BTreeSet;

use xeval::corpus;
use xeval::eval::{EvalConfig, Experiment, RunReport};
use xeval::lime::LimeConfig;
use xeval::report::{self, render_grouped_bars, render_token_heat_html, BarChart, Metric, TokenHeat};

fn run(backend: &xeval::model::SyntheticKeywordClassifier) -> RunReport {
    let data = corpus::mini_esnli();
    Experiment {
        dataset: &data.manifest.name,
        annotator_policy: None,
        labels: data.manifest.class_names.clone(),
        config: EvalConfig {
            lime: LimeConfig {
                n_samples: 200,
                seed: 7,
                ..LimeConfig::default()
            },
            plausibility_ratio: Some(data.manifest.dataset_mean_human_ratio),
            ..EvalConfig::default()
        },
        parallelism: 2,
    }
    .run(&data.instances, &data.instances, backend)
    .unwrap()
}

fn reports() -> Vec<RunReport> {
    vec![
        run(&corpus::keyword_classifier()),
        run(&corpus::demo_classifier()),
        run(&corpus::keyword_classifier().scaled(0.2).with_name("weak")),
    ]
}

#[test]
fn heat_map_matches_golden() {
    let tokens: Vec<String> = ["Tom's", "dog", "ran", "&", "won", "A", "<dog>", "ran"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let heat = TokenHeat {
        tokens: &tokens,
        segments: &[0, 0, 0, 0, 0, 1, 1, 1],
        scores: &[0.5, -0.25, 0.0, 2.0, -2.0, 0.1, 0.2, -0.05],
    };
    let html = render_token_heat_html(&heat, "case <1> | target \"entailment\"");
    assert_eq!(html, include_str!("golden/heat.html"));
}

#[test]
fn grouped_bars_are_backend_by_label() {
    let reports = reports();
    for metric in [Metric::Comprehensiveness, Metric::Iou] {
        let chart = BarChart::by_label(&reports, metric);
        let svg = render_grouped_bars(&chart);
        let doc = roxmltree::Document::parse(&svg).expect("valid XML");
        assert_eq!(doc.root_element().tag_name().name(), "svg");
        let class = |n: &roxmltree::Node, c: &str| n.attribute("class") == Some(c);
        let bars: Vec<_> = doc.descendants().filter(|n| class(n, "bar")).collect();
        assert_eq!(bars.len(), 3 * 3);
        let cells: BTreeSet<(&str, &str)> = bars
            .iter()
            .map(|b| (b.attribute("data-series").unwrap(), b.attribute("data-category").unwrap()))
            .collect();
        assert_eq!(cells.len(), 9);
        let labels: BTreeSet<&str> = cells.iter().map(|c| c.1).collect();
        assert_eq!(labels, BTreeSet::from(["contradiction", "entailment", "neutral"]));
        assert_eq!(doc.descendants().filter(|n| class(n, "whisker")).count(), 9);
        let legend = doc.descendants().find(|n| class(n, "legend")).unwrap();
        let legend_text: String = legend.descendants().filter_map(|n| n.text()).collect();
        for name in ["synthetic:keywords", "synthetic:demo", "weak"] {
            assert!(legend_text.contains(name));
        }
        for b in &bars {
            let h: f64 = b.attribute("height").unwrap().parse().unwrap();
            assert!(h >= 0.0 && h.is_finite());
        }
    }
}

#[test]
fn summary_table_columns() {
    let reports = reports();
    let rows: Vec<_> = reports.iter().map(report::SummaryRow::from_report).collect();
    let md = report::summary_markdown(&rows);
    let lines: Vec<&str> = md.lines().collect();
    assert_eq!(
        lines[0],
        "| Dataset | Model/Backend | Comprehensiveness | IOU | Accuracy | 95% C.I. |"
    );
    assert_eq!(lines.len(), 2 + 3);
    assert!(lines[2].starts_with("| mini-esnli | synthetic:keywords |"));
    assert!(lines[3].starts_with("|  | synthetic:demo |"));
    let csv = report::summary_csv(&rows);
    let mut rdr = csv::Reader::from_reader(csv.as_bytes());
    assert_eq!(rdr.headers().unwrap().len(), 6);
    assert_eq!(rdr.records().count(), 3);
}

#[test]
fn by_label_table_groups() {
    let reports = reports();
    let rows: Vec<_> = reports.iter().flat_map(report::label_rows).collect();
    assert_eq!(rows.len(), 9);
    let md = report::by_label_markdown(&rows);
    let body: Vec<Vec<&str>> = md
        .lines()
        .skip(2)
        .map(|l| l.trim_matches('|').split('|').map(str::trim).collect())
        .collect();
    assert_eq!(body.len(), 9);
    // dataset once, backend once per block of three labels
    assert_eq!(body.iter().filter(|c| !c[0].is_empty()).count(), 1);
    assert_eq!(body.iter().filter(|c| !c[1].is_empty()).count(), 3);
    for block in body.chunks(3) {
        let labels: Vec<&str> = block.iter().map(|c| c[2]).collect();
        assert_eq!(labels, ["contradiction", "entailment", "neutral"]);
    }
}

#[test]
fn write_outputs_is_deterministic() {
    let reports = reports();
    let a = common::tmp();
    let b = common::tmp();
    let fa = report::write_outputs(a.path(), &reports).unwrap();
    let fb = report::write_outputs(b.path(), &reports).unwrap();
    assert_eq!(fa.len(), fb.len());
    for (x, y) in fa.iter().zip(&fb) {
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap(), "{}", x.display());
    }
    for f in &fa {
        if f.extension().is_some_and(|e| e == "svg") {
            roxmltree::Document::parse(&std::fs::read_to_string(f).unwrap()).unwrap();
        }
    }
}
