//! Tables, token heat maps and grouped bar charts rendered from run reports.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use crate::eval::{AggregateStat, InstanceRecord, RunReport};
use crate::lime::Explanation;
use crate::text::TokenizedInput;

/// One row of the main results table.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub dataset: String,
    pub backend: String,
    /// (mean, sem)
    pub comprehensiveness: (f64, f64),
    pub iou: Option<(f64, f64)>,
    pub accuracy: f64,
    pub ci: (f64, f64),
}

impl SummaryRow {
    pub fn from_report(r: &RunReport) -> Self {
        SummaryRow {
            dataset: r.dataset.clone(),
            backend: r.backend.clone(),
            comprehensiveness: (r.overall.comp_agg.mean, r.overall.comp_agg.sem),
            iou: r.overall.iou.map(|s| (s.mean, s.sem)),
            accuracy: r.accuracy.accuracy,
            ci: (r.accuracy.ci_lo, r.accuracy.ci_hi),
        }
    }

    fn cells(&self) -> [String; 6] {
        [
            self.dataset.clone(),
            self.backend.clone(),
            mean_sem(self.comprehensiveness),
            self.iou.map_or_else(|| "--".to_string(), mean_sem),
            format!("{:.3}", self.accuracy),
            format!("({:.3}, {:.3})", self.ci.0, self.ci.1),
        ]
    }
}

/// One row of the per-label table.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelRow {
    pub dataset: String,
    pub backend: String,
    pub label: String,
    pub n: Option<usize>,
    pub comprehensiveness: (f64, f64),
    pub iou: Option<(f64, f64)>,
}

pub const SUMMARY_HEADER: [&str; 6] = [
    "Dataset",
    "Model/Backend",
    "Comprehensiveness",
    "IOU",
    "Accuracy",
    "95% C.I.",
];

pub const LABEL_HEADER: [&str; 6] = ["Dataset", "Model/Backend", "Label", "n", "Comprehensiveness", "IOU"];

/// `0.785 (± 0.022)`
pub fn mean_sem((mean, sem): (f64, f64)) -> String {
    format!("{mean:.3} (± {sem:.3})")
}

pub fn label_rows(r: &RunReport) -> Vec<LabelRow> {
    r.by_label
        .iter()
        .map(|(label, agg)| LabelRow {
            dataset: r.dataset.clone(),
            backend: r.backend.clone(),
            label: label.clone(),
            n: Some(agg.comp_agg.n),
            comprehensiveness: (agg.comp_agg.mean, agg.comp_agg.sem),
            iou: agg.iou.map(|s| (s.mean, s.sem)),
        })
        .collect()
}

fn md_row(out: &mut String, cells: &[String]) {
    out.push_str("| ");
    out.push_str(&cells.join(" | "));
    out.push_str(" |\n");
}

fn md_header(out: &mut String, header: &[&str]) {
    md_row(out, &header.iter().map(|h| h.to_string()).collect::<Vec<_>>());
    md_row(out, &vec!["---".to_string(); header.len()]);
}

/// Markdown table; the dataset name is printed once per block of rows.
pub fn summary_markdown(rows: &[SummaryRow]) -> String {
    let mut out = String::new();
    md_header(&mut out, &SUMMARY_HEADER);
    let mut prev: Option<&str> = None;
    for row in rows {
        let mut cells = row.cells();
        if prev == Some(row.dataset.as_str()) {
            cells[0].clear();
        }
        prev = Some(&row.dataset);
        md_row(&mut out, &cells);
    }
    out
}

fn csv_string(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    csv_string(&SUMMARY_HEADER, rows.iter().map(|r| r.cells().to_vec()))
}

fn label_cells(row: &LabelRow) -> Vec<String> {
    vec![
        row.dataset.clone(),
        row.backend.clone(),
        row.label.clone(),
        row.n.map_or_else(|| "-".to_string(), |n| n.to_string()),
        mean_sem(row.comprehensiveness),
        row.iou.map_or_else(|| "-".to_string(), mean_sem),
    ]
}

/// Per-label markdown table: dataset once per dataset block, backend once per
/// backend block, one row per gold label.
pub fn by_label_markdown(rows: &[LabelRow]) -> String {
    let mut out = String::new();
    md_header(&mut out, &LABEL_HEADER);
    let mut prev: Option<(&str, &str)> = None;
    for row in rows {
        let mut cells = label_cells(row);
        match prev {
            Some((d, b)) if d == row.dataset && b == row.backend => {
                cells[0].clear();
                cells[1].clear();
            }
            Some((d, _)) if d == row.dataset => cells[0].clear(),
            _ => {}
        }
        prev = Some((&row.dataset, &row.backend));
        md_row(&mut out, &cells);
    }
    out
}

pub fn by_label_csv(rows: &[LabelRow]) -> String {
    csv_string(&LABEL_HEADER, rows.iter().map(label_cells))
}

/// Tokens with signed scores, ready to render.
#[derive(Debug, Clone, Copy)]
pub struct TokenHeat<'a> {
    pub tokens: &'a [String],
    pub segments: &'a [usize],
    pub scores: &'a [f64],
}

impl<'a> TokenHeat<'a> {
    pub fn from_record(r: &'a InstanceRecord) -> Self {
        TokenHeat {
            tokens: &r.tokens,
            segments: &r.token_segments,
            scores: &r.scores,
        }
    }

    fn scale(&self) -> f64 {
        self.scores.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    /// Scores divided by the largest magnitude, in [-1, 1]; all zero when every score is zero.
    pub fn normalized(&self) -> Vec<f64> {
        let m = self.scale();
        self.scores
            .iter()
            .map(|s| if m > 0.0 { s / m } else { 0.0 })
            .collect()
    }
}

/// Owned tokens for rendering a fresh explanation.
pub fn heat_parts(input: &TokenizedInput, explanation: &Explanation) -> (Vec<String>, Vec<usize>, Vec<f64>) {
    let tokens: Vec<String> = input.tokens().map(|t| t.text.clone()).collect();
    let segments = (0..tokens.len()).map(|i| input.segment_of(i).unwrap_or(0)).collect();
    (tokens, segments, explanation.scores.clone())
}

const POSITIVE: (f64, f64, f64) = (214.0, 39.0, 40.0);
const NEGATIVE: (f64, f64, f64) = (31.0, 119.0, 180.0);

/// Diverging colour: white at 0, red towards +1, blue towards -1.
pub fn diverging_rgb(v: f64) -> (u8, u8, u8) {
    let v = v.clamp(-1.0, 1.0);
    let (r, g, b) = if v >= 0.0 { POSITIVE } else { NEGATIVE };
    let a = v.abs();
    let mix = |c: f64| (255.0 + (c - 255.0) * a).round() as u8;
    (mix(r), mix(g), mix(b))
}

fn escape_html(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

/// Standalone HTML fragment; segments are separated by ` || `.
pub fn render_token_heat_html(heat: &TokenHeat, caption: &str) -> String {
    let norm = heat.normalized();
    let mut out = String::new();
    let _ = writeln!(out, "<div class=\"xeval-heat\">");
    let _ = writeln!(out, "<p class=\"caption\">{}</p>", escape_html(caption));
    out.push_str("<p class=\"tokens\">");
    for (i, tok) in heat.tokens.iter().enumerate() {
        if i > 0 {
            if heat.segments.get(i) != heat.segments.get(i - 1) {
                out.push_str(" <span class=\"sep\">||</span>");
            }
            out.push(' ');
        }
        let (r, g, b) = diverging_rgb(norm[i]);
        let _ = write!(
            out,
            "<span style=\"background-color:rgb({r},{g},{b})\" title=\"{:.4}\">{}</span>",
            heat.scores[i],
            escape_html(tok)
        );
    }
    out.push_str("</p>\n</div>\n");
    out
}

/// Terminal rendering with 24-bit background colours.
pub fn render_token_heat_ansi(heat: &TokenHeat) -> String {
    let norm = heat.normalized();
    let mut out = String::new();
    for (i, tok) in heat.tokens.iter().enumerate() {
        if i > 0 {
            if heat.segments.get(i) != heat.segments.get(i - 1) {
                out.push_str(" ||");
            }
            out.push(' ');
        }
        let (r, g, b) = diverging_rgb(norm[i]);
        let _ = write!(out, "\x1b[48;2;{r};{g};{b}m\x1b[38;2;0;0;0m{tok}\x1b[0m");
    }
    out.push('\n');
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct BarSeries {
    pub name: String,
    /// One entry per category; `None` draws no bar.
    pub values: Vec<Option<AggregateStat>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BarChart {
    pub title: String,
    pub y_label: String,
    pub categories: Vec<String>,
    pub series: Vec<BarSeries>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Comprehensiveness,
    Iou,
}

impl BarChart {
    /// Bars grouped by gold label, one bar per report.
    pub fn by_label(reports: &[RunReport], metric: Metric) -> Self {
        let categories: Vec<String> = reports
            .iter()
            .flat_map(|r| r.by_label.keys().cloned())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let series = reports
            .iter()
            .map(|r| BarSeries {
                name: r.backend.clone(),
                values: categories
                    .iter()
                    .map(|c| {
                        let agg = r.by_label.get(c)?;
                        match metric {
                            Metric::Comprehensiveness => Some(agg.comp_agg),
                            Metric::Iou => agg.iou,
                        }
                    })
                    .collect(),
            })
            .collect();
        let (what, y) = match metric {
            Metric::Comprehensiveness => ("comprehensiveness", "Mean comprehensiveness"),
            Metric::Iou => ("IOU", "Mean IOU"),
        };
        let datasets: BTreeSet<&str> = reports.iter().map(|r| r.dataset.as_str()).collect();
        BarChart {
            title: format!(
                "Mean {what} by gold label ({})",
                datasets.into_iter().collect::<Vec<_>>().join(", ")
            ),
            y_label: y.to_string(),
            categories,
            series,
        }
    }

    pub fn bar_count(&self) -> usize {
        self.series.iter().flat_map(|s| &s.values).filter(|v| v.is_some()).count()
    }
}

const PALETTE: [&str; 8] = [
    "#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860", "#da8bc3", "#8c8c8c",
];

fn nice_step(range: f64) -> f64 {
    let raw = range / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let f = raw / mag;
    let nice = if f <= 1.0 {
        1.0
    } else if f <= 2.0 {
        2.0
    } else if f <= 5.0 {
        5.0
    } else {
        10.0
    };
    nice * mag
}

/// Grouped bars with standard-error whiskers, as a self-contained SVG document.
pub fn render_grouped_bars(chart: &BarChart) -> String {
    const W: f64 = 720.0;
    const H: f64 = 420.0;
    const LEFT: f64 = 70.0;
    const RIGHT: f64 = 190.0;
    const TOP: f64 = 50.0;
    const BOTTOM: f64 = 60.0;
    let plot_w = W - LEFT - RIGHT;
    let plot_h = H - TOP - BOTTOM;

    let stats = chart.series.iter().flat_map(|s| s.values.iter().flatten());
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for s in stats {
        lo = lo.min(s.mean - s.sem);
        hi = hi.max(s.mean + s.sem);
    }
    let step = nice_step(hi - lo);
    let lo = (lo / step).floor() * step;
    let hi = (hi / step).ceil() * step;
    let y = |v: f64| TOP + plot_h * (hi - v) / (hi - lo);

    let mut out = String::new();
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"12\">"
    );
    let _ = writeln!(out, "<title>{}</title>", escape_html(&chart.title));
    let _ = writeln!(out, "<rect x=\"0\" y=\"0\" width=\"{W}\" height=\"{H}\" fill=\"#ffffff\"/>");
    let _ = writeln!(
        out,
        "<text class=\"title\" x=\"{:.2}\" y=\"24\" text-anchor=\"middle\" font-size=\"14\">{}</text>",
        LEFT + plot_w / 2.0,
        escape_html(&chart.title)
    );

    // y axis, grid and ticks
    let _ = writeln!(out, "<g class=\"y-axis\">");
    let n_ticks = ((hi - lo) / step).round() as i64;
    for t in 0..=n_ticks {
        let v = lo + t as f64 * step;
        let yy = y(v);
        let _ = writeln!(
            out,
            "<line x1=\"{LEFT:.2}\" y1=\"{yy:.2}\" x2=\"{:.2}\" y2=\"{yy:.2}\" stroke=\"#e0e0e0\"/>",
            LEFT + plot_w
        );
        let _ = writeln!(
            out,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{}</text>",
            LEFT - 6.0,
            yy + 4.0,
            format_tick(v, step)
        );
    }
    let _ = writeln!(
        out,
        "<line x1=\"{LEFT:.2}\" y1=\"{TOP:.2}\" x2=\"{LEFT:.2}\" y2=\"{:.2}\" stroke=\"#000000\"/>",
        TOP + plot_h
    );
    let _ = writeln!(
        out,
        "<text class=\"axis-label\" transform=\"translate(18,{:.2}) rotate(-90)\" text-anchor=\"middle\">{}</text>",
        TOP + plot_h / 2.0,
        escape_html(&chart.y_label)
    );
    let _ = writeln!(out, "</g>");

    // x axis at zero
    let _ = writeln!(
        out,
        "<line class=\"x-axis\" x1=\"{LEFT:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"#000000\"/>",
        y(0.0),
        LEFT + plot_w,
        y(0.0)
    );

    let n_cat = chart.categories.len().max(1);
    let n_series = chart.series.len().max(1);
    let group_w = plot_w / n_cat as f64;
    let bar_w = group_w * 0.8 / n_series as f64;
    let _ = writeln!(out, "<g class=\"bars\">");
    for (ci, cat) in chart.categories.iter().enumerate() {
        let gx = LEFT + group_w * ci as f64 + group_w * 0.1;
        for (si, series) in chart.series.iter().enumerate() {
            let Some(stat) = series.values.get(ci).copied().flatten() else {
                continue;
            };
            let x = gx + bar_w * si as f64;
            let (top, bottom) = if stat.mean >= 0.0 {
                (y(stat.mean), y(0.0))
            } else {
                (y(0.0), y(stat.mean))
            };
            let _ = writeln!(
                out,
                "<rect class=\"bar\" data-series=\"{}\" data-category=\"{}\" x=\"{x:.2}\" y=\"{top:.2}\" width=\"{bar_w:.2}\" height=\"{:.2}\" fill=\"{}\"><title>{}: {}</title></rect>",
                escape_html(&series.name),
                escape_html(cat),
                bottom - top,
                PALETTE[si % PALETTE.len()],
                escape_html(&series.name),
                escape_html(&mean_sem((stat.mean, stat.sem)))
            );
            let cx = x + bar_w / 2.0;
            let (w_lo, w_hi) = (y(stat.mean - stat.sem), y(stat.mean + stat.sem));
            let cap = bar_w / 4.0;
            let _ = writeln!(
                out,
                "<g class=\"whisker\" stroke=\"#000000\"><line x1=\"{cx:.2}\" y1=\"{w_hi:.2}\" x2=\"{cx:.2}\" y2=\"{w_lo:.2}\"/><line x1=\"{:.2}\" y1=\"{w_hi:.2}\" x2=\"{:.2}\" y2=\"{w_hi:.2}\"/><line x1=\"{:.2}\" y1=\"{w_lo:.2}\" x2=\"{:.2}\" y2=\"{w_lo:.2}\"/></g>",
                cx - cap,
                cx + cap,
                cx - cap,
                cx + cap
            );
        }
        let _ = writeln!(
            out,
            "<text class=\"category\" x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>",
            LEFT + group_w * (ci as f64 + 0.5),
            TOP + plot_h + 20.0,
            escape_html(cat)
        );
    }
    let _ = writeln!(out, "</g>");
    let _ = writeln!(
        out,
        "<text class=\"axis-label\" x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">Gold label</text>",
        LEFT + plot_w / 2.0,
        H - 14.0
    );

    let _ = writeln!(out, "<g class=\"legend\">");
    for (si, series) in chart.series.iter().enumerate() {
        let ly = TOP + 18.0 * si as f64;
        let lx = LEFT + plot_w + 16.0;
        let _ = writeln!(
            out,
            "<rect x=\"{lx:.2}\" y=\"{ly:.2}\" width=\"12\" height=\"12\" fill=\"{}\"/><text x=\"{:.2}\" y=\"{:.2}\">{}</text>",
            PALETTE[si % PALETTE.len()],
            lx + 18.0,
            ly + 10.0,
            escape_html(&series.name)
        );
    }
    let _ = writeln!(out, "</g>");
    out.push_str("</svg>\n");
    out
}

fn format_tick(v: f64, step: f64) -> String {
    let decimals = if step >= 1.0 { 0 } else { (-step.log10().floor()) as usize };
    let s = format!("{v:.decimals$}");
    if s.starts_with('-') && s.trim_start_matches(['-', '0', '.']).is_empty() {
        s[1..].to_string()
    } else {
        s
    }
}

/// File-name-safe form of a backend or instance name.
pub fn slug(name: &str) -> String {
    let mut out = String::new();
    for c in name.chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c.to_ascii_lowercase());
        } else if !out.ends_with('-') {
            out.push('-');
        }
    }
    out.trim_matches('-').to_string()
}

/// Markdown document combining both tables, figure links and run notes.
pub fn render_markdown(reports: &[RunReport], figures: &[String]) -> String {
    let summary: Vec<SummaryRow> = reports.iter().map(SummaryRow::from_report).collect();
    let labels: Vec<LabelRow> = reports.iter().flat_map(label_rows).collect();
    let mut out = String::from("# Evaluation report\n\n");
    out.push_str("Comprehensiveness and IOU are means over explained instances with standard errors in parentheses. ");
    out.push_str("Accuracy is computed on the full instance set with a 95% confidence interval.\n\n");
    out.push_str(&summary_markdown(&summary));
    out.push_str("\n## By gold label\n\nRows are grouped by the gold (dataset) label, not the predicted label.\n\n");
    out.push_str(&by_label_markdown(&labels));
    if !figures.is_empty() {
        out.push_str("\n## Figures\n\n");
        for f in figures {
            let _ = writeln!(out, "![{f}]({f})");
        }
    }
    out.push_str("\n## Runs\n\n");
    for r in reports {
        let _ = writeln!(
            out,
            "- {} / {}: {} explained, {} failed, accuracy {}/{} ({} CI); bins {}; plausibility ratio {}; seed {}; annotator policy {}",
            r.dataset,
            r.backend,
            r.records.len(),
            r.failures.len(),
            r.accuracy.correct,
            r.accuracy.n,
            match r.accuracy.method {
                crate::eval::CiMethod::Normal => "normal",
                crate::eval::CiMethod::Wilson => "wilson",
            },
            r.config.bins,
            r.config.plausibility_ratio.map_or_else(|| "none".to_string(), |v| v.to_string()),
            r.config.lime.seed,
            r.annotator_policy.as_deref().unwrap_or("n/a"),
        );
        for f in &r.failures {
            let _ = writeln!(out, "  - failed {}: {}", f.id, f.error);
        }
        for n in &r.notices {
            let _ = writeln!(out, "  - note: {n}");
        }
    }
    out
}

fn write(path: &Path, contents: &str, written: &mut Vec<PathBuf>) -> io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, contents)?;
    written.push(path.to_path_buf());
    Ok(())
}

/// Writes report.md, report.csv, by_label.csv, figures/*.svg and heat/*.html
/// under `dir`. Returns the written paths in write order.
pub fn write_outputs(dir: &Path, reports: &[RunReport]) -> io::Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let mut figures = Vec::new();
    let comp = BarChart::by_label(reports, Metric::Comprehensiveness);
    if comp.bar_count() > 0 {
        write(&dir.join("figures/comprehensiveness_by_label.svg"), &render_grouped_bars(&comp), &mut written)?;
        figures.push("figures/comprehensiveness_by_label.svg".to_string());
    }
    let iou = BarChart::by_label(reports, Metric::Iou);
    if iou.bar_count() > 0 {
        write(&dir.join("figures/iou_by_label.svg"), &render_grouped_bars(&iou), &mut written)?;
        figures.push("figures/iou_by_label.svg".to_string());
    }
    let summary: Vec<SummaryRow> = reports.iter().map(SummaryRow::from_report).collect();
    let labels: Vec<LabelRow> = reports.iter().flat_map(label_rows).collect();
    write(&dir.join("report.md"), &render_markdown(reports, &figures), &mut written)?;
    write(&dir.join("report.csv"), &summary_csv(&summary), &mut written)?;
    write(&dir.join("by_label.csv"), &by_label_csv(&labels), &mut written)?;
    for r in reports {
        let backend = slug(&r.backend);
        for rec in &r.records {
            let caption = format!(
                "{} | gold {} | predicted {} (p = {:.3}) | {}",
                rec.id, rec.gold_label, rec.predicted_label, rec.full_probability, r.backend
            );
            let html = render_token_heat_html(&TokenHeat::from_record(rec), &caption);
            write(&dir.join(format!("heat/{backend}/{}.html", slug(&rec.id))), &html, &mut written)?;
        }
    }
    Ok(written)
}
