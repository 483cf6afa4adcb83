//! Per-node SVG diagnostics from the anomaly and severity CSVs: the
//! anomaly score trace, the calibrated threshold, flagged points, and
//! the `μ_t` / `μ_t + mσ_t` severity curves.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlotError {
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path} line {line}: {what}")]
    Parse {
        path: PathBuf,
        line: u64,
        what: String,
    },
    #[error("{path}: missing column `{column}`")]
    MissingColumn { path: PathBuf, column: String },
    #[error("{path} has no data rows")]
    Empty { path: PathBuf },
}

#[derive(Debug, Clone, Copy)]
struct AnomalyRow {
    t: usize,
    node: usize,
    score: f64,
    threshold: f64,
    flag: bool,
}

#[derive(Debug, Clone, Copy)]
struct SeverityRow {
    t: usize,
    node: usize,
    mu: f64,
    index: f64,
}

struct ColumnMap {
    indices: Vec<usize>,
}

impl ColumnMap {
    fn resolve(
        path: &Path,
        headers: &csv::StringRecord,
        wanted: &[&str],
    ) -> Result<Self, PlotError> {
        let mut indices = Vec::with_capacity(wanted.len());
        for name in wanted {
            let idx = headers.iter().position(|h| h == *name).ok_or_else(|| {
                PlotError::MissingColumn {
                    path: path.to_path_buf(),
                    column: name.to_string(),
                }
            })?;
            indices.push(idx);
        }
        Ok(ColumnMap { indices })
    }

    fn field<'r>(&self, record: &'r csv::StringRecord, slot: usize) -> &'r str {
        record.get(self.indices[slot]).unwrap_or("")
    }
}

fn parse_field<T: std::str::FromStr>(
    path: &Path,
    record: &csv::StringRecord,
    value: &str,
    column: &str,
) -> Result<T, PlotError> {
    value.parse().map_err(|_| PlotError::Parse {
        path: path.to_path_buf(),
        line: record.position().map_or(0, |p| p.line()),
        what: format!("cannot parse `{value}` in column `{column}`"),
    })
}

fn parse_anomaly_csv(path: &Path) -> Result<Vec<AnomalyRow>, PlotError> {
    let mut reader = csv::Reader::from_path(path).map_err(|source| PlotError::Csv {
        path: path.to_path_buf(),
        source,
    })?;
    let headers = reader
        .headers()
        .map_err(|source| PlotError::Csv {
            path: path.to_path_buf(),
            source,
        })?
        .clone();
    let cols = ColumnMap::resolve(path, &headers, &["t", "node", "score", "threshold", "flag"])?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|source| PlotError::Csv {
            path: path.to_path_buf(),
            source,
        })?;
        rows.push(AnomalyRow {
            t: parse_field(path, &record, cols.field(&record, 0), "t")?,
            node: parse_field(path, &record, cols.field(&record, 1), "node")?,
            score: parse_field(path, &record, cols.field(&record, 2), "score")?,
            threshold: parse_field(path, &record, cols.field(&record, 3), "threshold")?,
            flag: parse_field::<u8>(path, &record, cols.field(&record, 4), "flag")? != 0,
        });
    }
    if rows.is_empty() {
        return Err(PlotError::Empty {
            path: path.to_path_buf(),
        });
    }
    Ok(rows)
}

fn parse_severity_csv(path: &Path) -> Result<Vec<SeverityRow>, PlotError> {
    let mut reader = csv::Reader::from_path(path).map_err(|source| PlotError::Csv {
        path: path.to_path_buf(),
        source,
    })?;
    let headers = reader
        .headers()
        .map_err(|source| PlotError::Csv {
            path: path.to_path_buf(),
            source,
        })?
        .clone();
    let cols = ColumnMap::resolve(path, &headers, &["t", "node", "mu", "index"])?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|source| PlotError::Csv {
            path: path.to_path_buf(),
            source,
        })?;
        rows.push(SeverityRow {
            t: parse_field(path, &record, cols.field(&record, 0), "t")?,
            node: parse_field(path, &record, cols.field(&record, 1), "node")?,
            mu: parse_field(path, &record, cols.field(&record, 2), "mu")?,
            index: parse_field(path, &record, cols.field(&record, 3), "index")?,
        });
    }
    Ok(rows)
}

const WIDTH: f64 = 880.0;
const HEIGHT: f64 = 440.0;
const MARGIN_L: f64 = 64.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 34.0;
const MARGIN_B: f64 = 44.0;

struct Scales {
    t_min: f64,
    t_max: f64,
    y_max: f64,
}

impl Scales {
    fn x(&self, t: f64) -> f64 {
        let span = (self.t_max - self.t_min).max(1.0);
        MARGIN_L + (t - self.t_min) / span * (WIDTH - MARGIN_L - MARGIN_R)
    }

    fn y(&self, v: f64) -> f64 {
        HEIGHT - MARGIN_B - v / self.y_max * (HEIGHT - MARGIN_T - MARGIN_B)
    }
}

fn polyline(points: impl Iterator<Item = (f64, f64)>, scales: &Scales) -> String {
    let mut out = String::new();
    for (t, v) in points {
        let _ = write!(out, "{:.2},{:.2} ", scales.x(t), scales.y(v));
    }
    out.trim_end().to_string()
}

/// Renders one SVG per node found in the anomaly CSV. Severity rows
/// are optional; with none present the plot carries only the score
/// trace and the threshold. Returns the written paths, node-ordered.
pub fn render_plots(
    anomaly_csv: &Path,
    severity_csv: &Path,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, PlotError> {
    let anomaly = parse_anomaly_csv(anomaly_csv)?;
    let severity = if severity_csv.exists() {
        parse_severity_csv(severity_csv)?
    } else {
        Vec::new()
    };

    let mut by_node: BTreeMap<usize, Vec<AnomalyRow>> = BTreeMap::new();
    for row in anomaly {
        by_node.entry(row.node).or_default().push(row);
    }
    let mut severity_by_node: BTreeMap<usize, Vec<SeverityRow>> = BTreeMap::new();
    for row in severity {
        severity_by_node.entry(row.node).or_default().push(row);
    }

    fs::create_dir_all(out_dir).map_err(|source| PlotError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;

    let mut written = Vec::with_capacity(by_node.len());
    for (node, mut rows) in by_node {
        rows.sort_by_key(|r| r.t);
        let sev = severity_by_node.remove(&node).unwrap_or_default();
        let svg = render_node(node, &rows, &sev);
        let path = out_dir.join(format!("node_{node}.svg"));
        fs::write(&path, svg).map_err(|source| PlotError::Io {
            path: path.clone(),
            source,
        })?;
        written.push(path);
    }
    Ok(written)
}

fn render_node(node: usize, rows: &[AnomalyRow], severity: &[SeverityRow]) -> String {
    let threshold = rows[0].threshold;
    let t_min = rows.first().map_or(0.0, |r| r.t as f64);
    let t_max = rows.last().map_or(1.0, |r| r.t as f64);
    let mut y_max = threshold;
    for r in rows {
        y_max = y_max.max(r.score);
    }
    for s in severity {
        y_max = y_max.max(s.index).max(s.mu);
    }
    let scales = Scales {
        t_min,
        t_max,
        y_max: if y_max > 0.0 { y_max * 1.05 } else { 1.0 },
    };

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(
        svg,
        r#"  <rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        svg,
        r#"  <text x="{:.2}" y="20" font-family="sans-serif" font-size="14">node {} anomaly score and severity index</text>"#,
        MARGIN_L, node
    );

    // Axes.
    let x0 = MARGIN_L;
    let x1 = WIDTH - MARGIN_R;
    let y0 = HEIGHT - MARGIN_B;
    let _ = writeln!(
        svg,
        r##"  <line x1="{x0:.2}" y1="{y0:.2}" x2="{x1:.2}" y2="{y0:.2}" stroke="#444" stroke-width="1"/>"##
    );
    let _ = writeln!(
        svg,
        r##"  <line x1="{x0:.2}" y1="{:.2}" x2="{x0:.2}" y2="{y0:.2}" stroke="#444" stroke-width="1"/>"##,
        MARGIN_T
    );
    for frac in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let v = scales.y_max * frac;
        let y = scales.y(v);
        let _ = writeln!(
            svg,
            r#"  <text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="10" text-anchor="end">{:.3e}</text>"#,
            x0 - 6.0,
            y + 3.0,
            v
        );
    }
    for (t, anchor) in [(t_min, "start"), (t_max, "end")] {
        let _ = writeln!(
            svg,
            r#"  <text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="10" text-anchor="{anchor}">t={t}</text>"#,
            scales.x(t),
            y0 + 16.0,
        );
    }

    // Score trace.
    let _ = writeln!(
        svg,
        r#"  <polyline fill="none" stroke="black" stroke-width="1" points="{}"/>"#,
        polyline(rows.iter().map(|r| (r.t as f64, r.score)), &scales)
    );

    // Threshold, with the raw value attached for machine checks.
    let ty = scales.y(threshold);
    let _ = writeln!(
        svg,
        r##"  <line x1="{x0:.2}" y1="{ty:.2}" x2="{x1:.2}" y2="{ty:.2}" stroke="#2ca02c" stroke-width="1.5" data-threshold="{threshold}"/>"##
    );

    // Flagged points.
    for r in rows.iter().filter(|r| r.flag) {
        let _ = writeln!(
            svg,
            r##"  <circle cx="{:.2}" cy="{:.2}" r="2.5" fill="#d62728"/>"##,
            scales.x(r.t as f64),
            scales.y(r.score)
        );
    }

    // Severity curves.
    if !severity.is_empty() {
        let _ = writeln!(
            svg,
            r##"  <polyline fill="none" stroke="#1f77b4" stroke-width="1.5" points="{}"/>"##,
            polyline(severity.iter().map(|s| (s.t as f64, s.mu)), &scales)
        );
        let _ = writeln!(
            svg,
            r##"  <polyline fill="none" stroke="#1f77b4" stroke-width="1.5" stroke-dasharray="6 3" points="{}"/>"##,
            polyline(severity.iter().map(|s| (s.t as f64, s.index)), &scales)
        );
    }

    let _ = writeln!(svg, "</svg>");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_file(dir: &Path, name: &str, contents: &str) -> PathBuf {
        let path = dir.join(name);
        let mut f = fs::File::create(&path).unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        path
    }

    const ANOMALY: &str = "t,node,score,threshold,flag\n\
        5,0,0.1,0.25,0\n5,1,0.3,0.5,0\n\
        6,0,0.4,0.25,1\n6,1,0.2,0.5,0\n\
        7,0,0.2,0.25,0\n7,1,0.9,0.5,1\n";

    const SEVERITY: &str = "t,node,score,threshold,flag,mu,sigma,index\n\
        5,0,0.1,0.25,0,0,0,0\n5,1,0.3,0.5,0,0,0,0\n\
        6,0,0.4,0.25,1,0.15,0,0.15\n6,1,0.2,0.5,0,0,0,0\n\
        7,0,0.2,0.25,0,0.15,0,0.15\n7,1,0.9,0.5,1,0.4,0,0.4\n";

    #[test]
    fn renders_one_svg_per_node() {
        let dir = tempfile::tempdir().unwrap();
        let anomaly = write_file(dir.path(), "anomaly.csv", ANOMALY);
        let severity = write_file(dir.path(), "severity.csv", SEVERITY);
        let out = dir.path().join("plots");
        let paths = render_plots(&anomaly, &severity, &out).unwrap();
        assert_eq!(paths.len(), 2);
        assert!(paths[0].ends_with("node_0.svg"));
        assert!(paths[1].ends_with("node_1.svg"));
    }

    #[test]
    fn threshold_attribute_matches_csv() {
        let dir = tempfile::tempdir().unwrap();
        let anomaly = write_file(dir.path(), "anomaly.csv", ANOMALY);
        let severity = write_file(dir.path(), "severity.csv", SEVERITY);
        let out = dir.path().join("plots");
        let paths = render_plots(&anomaly, &severity, &out).unwrap();
        let svg = fs::read_to_string(&paths[1]).unwrap();
        assert!(svg.contains(r#"data-threshold="0.5""#), "svg: {svg}");
    }

    #[test]
    fn empty_severity_rows_still_plot_score_and_threshold() {
        let dir = tempfile::tempdir().unwrap();
        let anomaly = write_file(dir.path(), "anomaly.csv", ANOMALY);
        let severity = write_file(
            dir.path(),
            "severity.csv",
            "t,node,score,threshold,flag,mu,sigma,index\n",
        );
        let out = dir.path().join("plots");
        let paths = render_plots(&anomaly, &severity, &out).unwrap();
        let svg = fs::read_to_string(&paths[0]).unwrap();
        assert!(svg.contains("polyline"));
        assert!(svg.contains("data-threshold"));
        assert!(!svg.contains("stroke-dasharray"));
    }

    #[test]
    fn malformed_csv_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let anomaly = write_file(
            dir.path(),
            "anomaly.csv",
            "t,node,score,threshold,flag\n1,0,abc,0.5,0\n",
        );
        let severity = dir.path().join("absent.csv");
        let err = render_plots(&anomaly, &severity, dir.path()).unwrap_err();
        match err {
            PlotError::Parse { line, what, .. } => {
                assert_eq!(line, 2);
                assert!(what.contains("abc"));
            }
            other => panic!("unexpected error {other}"),
        }
    }
}
