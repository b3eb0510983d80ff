//! Summary statistics over per-language DevSet/DevLang results, fixture
//! ingestion, and report rendering.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Header of the CSV fixture and of `report.csv`.
pub const CSV_HEADER: &str = "language,devset_acc,devset_epoch,devlang_acc,devlang_epoch";
const PCT_HEADER: &str = "language,devset_pct,devset_epoch,devlang_pct,devlang_epoch";

pub const ROW_LABELS: [&str; 7] = [
    "DevLang>DevSet",
    "DevLang=DevSet",
    "DevLang<DevSet",
    "DevSet",
    "DevLang",
    "Δ",
    "max Δ",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageResult {
    pub language: String,
    pub devset_acc: f64,
    pub devset_epoch: f64,
    pub devlang_acc: f64,
    pub devlang_epoch: f64,
}

impl LanguageResult {
    pub fn delta(&self) -> f64 {
        self.devlang_acc - self.devset_acc
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeCounts {
    pub devlang_better: usize,
    pub equal: usize,
    pub devlang_worse: usize,
}

impl OutcomeCounts {
    pub fn total(&self) -> usize {
        self.devlang_better + self.equal + self.devlang_worse
    }

    pub fn as_tuple(&self) -> (usize, usize, usize) {
        (self.devlang_better, self.equal, self.devlang_worse)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub languages: usize,
    pub counts: OutcomeCounts,
    pub mean_devset: f64,
    pub mean_devlang: f64,
    pub mean_delta: f64,
    /// Signed delta of largest magnitude.
    pub max_delta: f64,
    pub max_delta_language: String,
}

impl SummaryTable {
    /// The four accuracy rows in percent, one decimal, signed deltas.
    pub fn display_values(&self) -> [String; 4] {
        [
            format!("{:.1}", 100.0 * self.mean_devset),
            format!("{:.1}", 100.0 * self.mean_devlang),
            signed(100.0 * self.mean_delta),
            signed(100.0 * self.max_delta),
        ]
    }
}

fn signed(x: f64) -> String {
    let s = format!("{x:.1}");
    if let Some(magnitude) = s.strip_prefix('-') {
        if magnitude.chars().all(|c| c == '0' || c == '.') {
            magnitude.to_string()
        } else {
            s
        }
    } else if s.chars().all(|c| c == '0' || c == '.') {
        s
    } else {
        format!("+{s}")
    }
}

/// Exact-equality comparison per language.
pub fn count_outcomes(results: &[LanguageResult]) -> OutcomeCounts {
    let mut counts = OutcomeCounts::default();
    for r in results {
        match r.devlang_acc.partial_cmp(&r.devset_acc) {
            Some(Ordering::Greater) => counts.devlang_better += 1,
            Some(Ordering::Less) => counts.devlang_worse += 1,
            _ => counts.equal += 1,
        }
    }
    counts
}

fn canonical_order(results: &[LanguageResult]) -> Vec<&LanguageResult> {
    let mut sorted: Vec<&LanguageResult> = results.iter().collect();
    sorted.sort_by(|a, b| {
        a.language
            .cmp(&b.language)
            .then(a.devset_acc.total_cmp(&b.devset_acc))
            .then(a.devlang_acc.total_cmp(&b.devlang_acc))
    });
    sorted
}

/// Means over languages, in a fixed order so the result does not depend
/// on input order.
pub fn summarize(results: &[LanguageResult]) -> Result<SummaryTable> {
    if results.is_empty() {
        return Err(Error::data("summary", "no results to summarize"));
    }
    let sorted = canonical_order(results);
    let n = sorted.len() as f64;
    let mean_devset = sorted.iter().map(|r| r.devset_acc).sum::<f64>() / n;
    let mean_devlang = sorted.iter().map(|r| r.devlang_acc).sum::<f64>() / n;
    let mut max = sorted[0];
    for r in &sorted[1..] {
        if r.delta().abs() > max.delta().abs() {
            max = r;
        }
    }
    Ok(SummaryTable {
        languages: sorted.len(),
        counts: count_outcomes(results),
        mean_devset,
        mean_devlang,
        mean_delta: mean_devlang - mean_devset,
        max_delta: max.delta(),
        max_delta_language: max.language.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScatterPoint {
    pub language: String,
    pub epoch_delta: f64,
    pub accuracy_delta: f64,
}

/// Per language: (DevLang epoch − DevSet epoch, DevLang acc − DevSet acc).
pub fn scatter_points(results: &[LanguageResult]) -> Vec<ScatterPoint> {
    results
        .iter()
        .map(|r| ScatterPoint {
            language: r.language.clone(),
            epoch_delta: r.devlang_epoch - r.devset_epoch,
            accuracy_delta: r.delta(),
        })
        .collect()
}

/// Reads a per-language results CSV. Accuracies are fractions, or percent
/// when the header names `_pct` columns.
pub fn ingest_fixture(path: &Path) -> Result<Vec<LanguageResult>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_fixture(&text, &path.display().to_string())
}

pub fn parse_fixture(text: &str, origin: &str) -> Result<Vec<LanguageResult>> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::data(origin, "empty fixture"))?;
    let scale = match header.trim() {
        CSV_HEADER => 1.0,
        PCT_HEADER => 0.01,
        other => return Err(Error::data(format!("{origin}:1"), format!("unexpected header `{other}`"))),
    };
    let mut results = Vec::new();
    for (i, line) in lines {
        let at = format!("{origin}:{}", i + 1);
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 5 {
            return Err(Error::data(at, format!("expected 5 fields, found {}", fields.len())));
        }
        let num = |k: usize| -> Result<f64> {
            fields[k]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::data(at.clone(), format!("bad number `{}`", fields[k])))
        };
        let result = LanguageResult {
            language: fields[0].to_string(),
            devset_acc: num(1)? * scale,
            devset_epoch: num(2)?,
            devlang_acc: num(3)? * scale,
            devlang_epoch: num(4)?,
        };
        if !(0.0..=1.0).contains(&result.devset_acc) || !(0.0..=1.0).contains(&result.devlang_acc) {
            return Err(Error::data(at, "accuracy outside [0, 1]"));
        }
        results.push(result);
    }
    if results.is_empty() {
        return Err(Error::data(origin, "fixture has no rows"));
    }
    Ok(results)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
    Markdown,
}

impl ReportFormat {
    pub fn file_name(self) -> &'static str {
        match self {
            ReportFormat::Csv => "report.csv",
            ReportFormat::Json => "report.json",
            ReportFormat::Markdown => "report.md",
        }
    }
}

#[derive(Serialize)]
struct JsonReport<'a> {
    summary: &'a SummaryTable,
    results: &'a [LanguageResult],
}

pub fn render(summary: &SummaryTable, results: &[LanguageResult], format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Csv => {
            let mut out = format!("{CSV_HEADER}\n");
            for r in results {
                writeln!(
                    out,
                    "{},{},{},{},{}",
                    r.language, r.devset_acc, r.devset_epoch, r.devlang_acc, r.devlang_epoch
                )
                .unwrap();
            }
            Ok(out)
        }
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(&JsonReport { summary, results })
                .map_err(|e| Error::data("report", e.to_string()))?;
            s.push('\n');
            Ok(s)
        }
        ReportFormat::Markdown => Ok(render_table(&[("", summary)], true)),
    }
}

pub fn render_scatter(results: &[LanguageResult]) -> String {
    let mut out = String::from("language,epoch_delta,accuracy_delta\n");
    for p in scatter_points(results) {
        writeln!(out, "{},{},{}", p.language, p.epoch_delta, p.accuracy_delta).unwrap();
    }
    out
}

/// Writes report.csv, report.json, report.md and scatter.csv into `dir`.
pub fn write_reports(dir: &Path, summary: &SummaryTable, results: &[LanguageResult]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for format in [ReportFormat::Csv, ReportFormat::Json, ReportFormat::Markdown] {
        let path = dir.join(format.file_name());
        std::fs::write(&path, render(summary, results, format)?).map_err(|e| Error::io(&path, e))?;
        files.push(path);
    }
    let path = dir.join("scatter.csv");
    std::fs::write(&path, render_scatter(results)).map_err(|e| Error::io(&path, e))?;
    files.push(path);
    Ok(files)
}

/// Table with one column per summary, rows labelled as in the published
/// summary tables. `markdown` selects a pipe table over aligned text.
pub fn render_table(columns: &[(&str, &SummaryTable)], markdown: bool) -> String {
    let mut rows: Vec<Vec<String>> = vec![std::iter::once(String::new())
        .chain(columns.iter().map(|(name, _)| name.to_string()))
        .collect()];
    for (i, label) in ROW_LABELS.iter().enumerate() {
        let mut row = vec![label.to_string()];
        for (_, s) in columns {
            let (better, equal, worse) = s.counts.as_tuple();
            let values = s.display_values();
            row.push(match i {
                0 => better.to_string(),
                1 => equal.to_string(),
                2 => worse.to_string(),
                _ => values[i - 3].clone(),
            });
        }
        rows.push(row);
    }
    let mut out = String::new();
    if markdown {
        for (i, row) in rows.iter().enumerate() {
            writeln!(out, "| {} |", row.join(" | ")).unwrap();
            if i == 0 {
                writeln!(out, "|{}", "---|".repeat(row.len())).unwrap();
            }
        }
    } else {
        let width = |c: usize| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0);
        let widths: Vec<usize> = (0..rows[0].len()).map(width).collect();
        for row in &rows {
            let cells: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (cell, &w))| {
                    let pad = w - cell.chars().count();
                    if c == 0 {
                        format!("{cell}{}", " ".repeat(pad))
                    } else {
                        format!("{}{cell}", " ".repeat(pad))
                    }
                })
                .collect();
            writeln!(out, "{}", cells.join("  ").trim_end()).unwrap();
        }
    }
    out
}

/// A published summary column, at display precision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PublishedColumn {
    pub task: &'static str,
    pub counts: (usize, usize, usize),
    pub devset: &'static str,
    pub devlang: &'static str,
    pub delta: &'static str,
    pub max_delta: &'static str,
    pub max_delta_language: &'static str,
    pub rows: usize,
}

pub const PUBLISHED_MORPH: PublishedColumn = PublishedColumn {
    task: "MORPH",
    counts: (23, 8, 72),
    devset: "51.3",
    devlang: "50.0",
    delta: "-1.4",
    max_delta: "-18.0",
    max_delta_language: "azeri",
    rows: 103,
};

pub const PUBLISHED_NORM: PublishedColumn = PublishedColumn {
    task: "NORM",
    counts: (0, 2, 8),
    devset: "74.9",
    devlang: "74.2",
    delta: "-0.7",
    max_delta: "-2.4",
    max_delta_language: "german-2",
    rows: 10,
};

pub const PUBLISHED_TRANSL: PublishedColumn = PublishedColumn {
    task: "TRANSL",
    counts: (2, 3, 0),
    devset: "21.8",
    devlang: "22.3",
    delta: "+0.5",
    max_delta: "+1.3",
    max_delta_language: "bengali",
    rows: 5,
};

/// Differences between a summary and a published column, one line each.
/// Means are compared within `mean_tolerance` percentage points (0 means
/// exact at display precision); everything else exactly.
pub fn compare_with_published(
    summary: &SummaryTable,
    published: &PublishedColumn,
    mean_tolerance: f64,
) -> Vec<String> {
    let mut issues = Vec::new();
    if summary.counts.as_tuple() != published.counts {
        issues.push(format!(
            "counts {:?} != published {:?}",
            summary.counts.as_tuple(),
            published.counts
        ));
    }
    let [devset, devlang, delta, max_delta] = summary.display_values();
    let mut mean = |label: &str, ours: &str, value: f64, theirs: &str| {
        let ok = if mean_tolerance > 0.0 {
            let target: f64 = theirs.parse().unwrap_or(f64::NAN);
            (100.0 * value - target).abs() <= mean_tolerance + 1e-9
        } else {
            ours == theirs
        };
        if !ok {
            issues.push(format!("{label} {ours} != published {theirs}"));
        }
    };
    mean("DevSet", &devset, summary.mean_devset, published.devset);
    mean("DevLang", &devlang, summary.mean_devlang, published.devlang);
    mean("Δ", &delta, summary.mean_delta, published.delta);
    if max_delta != published.max_delta {
        issues.push(format!("max Δ {max_delta} != published {}", published.max_delta));
    }
    if summary.max_delta_language != published.max_delta_language {
        issues.push(format!(
            "max Δ language {} != published {}",
            summary.max_delta_language, published.max_delta_language
        ));
    }
    issues
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(lang: &str, ds: f64, de: f64, ls: f64, le: f64) -> LanguageResult {
        LanguageResult {
            language: lang.into(),
            devset_acc: ds,
            devset_epoch: de,
            devlang_acc: ls,
            devlang_epoch: le,
        }
    }

    #[test]
    fn counts_use_exact_equality() {
        let rs = vec![
            result("a", 0.5, 1.0, 0.5, 2.0),
            result("b", 0.5, 1.0, 0.6, 2.0),
            result("c", 0.5, 1.0, 0.4, 2.0),
            result("d", 0.5, 1.0, 0.5 + 1e-15, 2.0),
        ];
        assert_eq!(count_outcomes(&rs).as_tuple(), (2, 1, 1));
        let eq: Vec<_> = (0..4).map(|i| result(&i.to_string(), 0.3, 1.0, 0.3, 1.0)).collect();
        assert_eq!(count_outcomes(&eq).as_tuple(), (0, 4, 0));
    }

    #[test]
    fn single_language_summary() {
        let s = summarize(&[result("x", 0.6, 3.0, 0.55, 4.0)]).unwrap();
        assert_eq!(s.mean_devset, 0.6);
        assert_eq!(s.mean_devlang, 0.55);
        assert_eq!(s.max_delta_language, "x");
        assert!(summarize(&[]).is_err());
    }

    #[test]
    fn max_delta_keeps_sign() {
        let rs = vec![result("a", 0.5, 1.0, 0.52, 1.0), result("b", 0.5, 1.0, 0.47, 1.0)];
        let s = summarize(&rs).unwrap();
        assert_eq!(s.max_delta_language, "b");
        assert!(s.max_delta < 0.0);
    }

    #[test]
    fn signed_display() {
        assert_eq!(signed(0.52), "+0.5");
        assert_eq!(signed(-0.68), "-0.7");
        assert_eq!(signed(-0.01), "0.0");
        assert_eq!(signed(0.0), "0.0");
    }

    #[test]
    fn scatter_basics() {
        let rs = vec![result("a", 0.5, 10.0, 0.5, 10.0), result("b", 0.4, 3.0, 0.3, 7.0)];
        let pts = scatter_points(&rs);
        assert_eq!(pts.len(), 2);
        assert_eq!(pts[0].epoch_delta, 0.0);
        assert_eq!(pts[1].epoch_delta, 4.0);
    }

    #[test]
    fn fixture_rows_parse_and_errors_name_rows() {
        let text = format!("{CSV_HEADER}\nenglish,0.7705,26,0.7682,43.44\n");
        let rs = parse_fixture(&text, "f.csv").unwrap();
        assert_eq!(rs[0], result("english", 0.7705, 26.0, 0.7682, 43.44));
        let pct = format!("{PCT_HEADER}\nazeri,64,217,46,324\n");
        let rs = parse_fixture(&pct, "m.csv").unwrap();
        assert_eq!(rs[0].devset_acc, 0.64);
        assert_eq!(rs[0].devlang_acc, 0.46);
        let bad = format!("{CSV_HEADER}\nenglish,0.7,26,0.7,1\nspanish,0.x,1,0.2,2\n");
        let err = parse_fixture(&bad, "f.csv").unwrap_err().to_string();
        assert!(err.contains("f.csv:3"), "{err}");
        assert!(matches!(parse_fixture("", "e.csv"), Err(Error::Data { .. })));
        assert!(parse_fixture(CSV_HEADER, "h.csv").is_err());
    }

    #[test]
    fn renders_are_deterministic_and_shaped() {
        let rs = vec![result("a", 0.5, 1.0, 0.52, 2.0), result("b", 0.5, 1.0, 0.47, 1.0)];
        let s = summarize(&rs).unwrap();
        let csv = render(&s, &rs, ReportFormat::Csv).unwrap();
        assert!(csv.starts_with(&format!("{CSV_HEADER}\n")));
        assert_eq!(csv, render(&s, &rs, ReportFormat::Csv).unwrap());
        let json: serde_json::Value =
            serde_json::from_str(&render(&s, &rs, ReportFormat::Json).unwrap()).unwrap();
        assert_eq!(json["summary"]["counts"]["devlang_better"], 1);
        assert_eq!(json["summary"]["max_delta_language"], "b");
        let md = render(&s, &rs, ReportFormat::Markdown).unwrap();
        for label in ROW_LABELS {
            assert!(md.contains(&format!("| {label} |")), "{md}");
        }
    }
}
