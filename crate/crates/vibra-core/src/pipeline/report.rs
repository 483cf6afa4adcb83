//! CSV artifact writers. All outputs use `.` decimals, a mandatory
//! header row, and newline-terminated rows; floats print in shortest
//! round-trip form so reruns are byte-identical.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use crate::detection::{AnomalySeries, DetectError};
use crate::numerics::Matrix;
use crate::severity::SeveritySeries;
use crate::training::EpochStats;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error("severity has {got} node series, anomaly has {nodes} nodes")]
    SeverityLength { got: usize, nodes: usize },
    #[error("{path}: {source}")]
    Csv {
        path: std::path::PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path} line {line}: {what}")]
    Malformed {
        path: std::path::PathBuf,
        line: u64,
        what: String,
    },
}

/// Feature matrix as a time-major CSV: header of channel names, one
/// row per time step.
pub fn write_features_csv(
    path: &Path,
    features: &Matrix,
    labels: &[String],
) -> Result<(), ReportError> {
    assert_eq!(labels.len(), features.rows(), "one label per channel");
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", labels.join(","))?;
    for t in 0..features.cols() {
        let row: Vec<String> = (0..features.rows())
            .map(|n| features.get(n, t).to_string())
            .collect();
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// `epoch,train_mse,val_mse`, one row per epoch.
pub fn write_loss_csv(path: &Path, history: &[EpochStats]) -> Result<(), ReportError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "epoch,train_mse,val_mse")?;
    for e in history {
        writeln!(w, "{},{},{}", e.epoch, e.train_mse, e.val_mse)?;
    }
    w.flush()?;
    Ok(())
}

/// `t,node,score,threshold,flag`, time-major then node. Requires a
/// calibrated threshold.
pub fn write_anomaly_csv(path: &Path, series: &AnomalySeries) -> Result<(), ReportError> {
    let flags = series.flag()?;
    let tau = series.threshold().expect("flag() checked the threshold");
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "t,node,score,threshold,flag")?;
    for (col, &t) in series.timestamps().iter().enumerate() {
        for node in 0..series.n_nodes() {
            writeln!(
                w,
                "{},{},{},{},{}",
                t,
                node,
                series.scores().get(node, col),
                tau[node],
                u8::from(flags[node][col]),
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `t,node,score,threshold,flag,mu,sigma,index`, time-major then node.
/// `severity[node]` must hold one point per score column.
pub fn write_severity_csv(
    path: &Path,
    series: &AnomalySeries,
    severity: &[SeveritySeries],
) -> Result<(), ReportError> {
    if severity.len() != series.n_nodes() {
        return Err(ReportError::SeverityLength {
            got: severity.len(),
            nodes: series.n_nodes(),
        });
    }
    let flags = series.flag()?;
    let tau = series.threshold().expect("flag() checked the threshold");
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "t,node,score,threshold,flag,mu,sigma,index")?;
    for (col, &t) in series.timestamps().iter().enumerate() {
        for node in 0..series.n_nodes() {
            let p = severity[node].points[col];
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                t,
                node,
                series.scores().get(node, col),
                tau[node],
                u8::from(flags[node][col]),
                p.mu,
                p.sigma,
                p.index,
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reconstructs an [`AnomalySeries`] (scores, timestamps, threshold)
/// from an anomaly CSV written by [`write_anomaly_csv`].
pub fn read_anomaly_csv(path: &Path) -> Result<AnomalySeries, ReportError> {
    let mut reader = csv::Reader::from_path(path).map_err(|source| ReportError::Csv {
        path: path.to_path_buf(),
        source,
    })?;
    let mut rows: Vec<(usize, usize, f64, f64)> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|source| ReportError::Csv {
            path: path.to_path_buf(),
            source,
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let malformed = |what: String| ReportError::Malformed {
            path: path.to_path_buf(),
            line,
            what,
        };
        if record.len() < 4 {
            return Err(malformed(format!(
                "expected at least 4 fields, got {}",
                record.len()
            )));
        }
        let parse = |idx: usize, name: &str| -> Result<f64, ReportError> {
            record[idx]
                .parse()
                .map_err(|_| malformed(format!("cannot parse `{}` as {name}", &record[idx])))
        };
        let t = parse(0, "t")? as usize;
        let node = parse(1, "node")? as usize;
        let score = parse(2, "score")?;
        let threshold = parse(3, "threshold")?;
        rows.push((t, node, score, threshold));
    }
    if rows.is_empty() {
        return Err(ReportError::Malformed {
            path: path.to_path_buf(),
            line: 1,
            what: "no data rows".into(),
        });
    }

    let n_nodes = rows.iter().map(|r| r.1).max().unwrap() + 1;
    let mut timestamps: Vec<usize> = rows.iter().map(|r| r.0).collect();
    timestamps.sort_unstable();
    timestamps.dedup();
    let col_of = |t: usize| timestamps.binary_search(&t).expect("t from rows");

    let mut scores = Matrix::zeros(n_nodes, timestamps.len());
    let mut tau = vec![0.0; n_nodes];
    for (t, node, score, threshold) in rows {
        scores.set(node, col_of(t), score);
        tau[node] = threshold;
    }
    let mut series = AnomalySeries::new(scores, timestamps);
    series.set_threshold(tau)?;
    Ok(series)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::severity::batch_severity;

    fn write_and_read(f: impl FnOnce(&Path)) -> String {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.csv");
        f(&path);
        std::fs::read_to_string(&path).unwrap()
    }

    #[test]
    fn loss_csv_layout() {
        let text = write_and_read(|p| {
            write_loss_csv(
                p,
                &[
                    EpochStats {
                        epoch: 0,
                        train_mse: 0.5,
                        val_mse: 0.25,
                    },
                    EpochStats {
                        epoch: 1,
                        train_mse: 0.1,
                        val_mse: 0.2,
                    },
                ],
            )
            .unwrap();
        });
        assert_eq!(text, "epoch,train_mse,val_mse\n0,0.5,0.25\n1,0.1,0.2\n");
    }

    #[test]
    fn features_csv_is_time_major() {
        let text = write_and_read(|p| {
            let x = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
            write_features_csv(p, &x, &["a".into(), "b".into()]).unwrap();
        });
        assert_eq!(text, "a,b\n1,3\n2,4\n");
    }

    #[test]
    fn anomaly_csv_roundtrips_through_reader() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("anomaly.csv");
        let mut series = AnomalySeries::new(
            Matrix::from_rows(&[vec![0.25, 1.75, 0.5], vec![0.1, 0.2, 0.3]]),
            vec![7, 8, 9],
        );
        series.set_threshold(vec![1.0, 0.25]).unwrap();
        write_anomaly_csv(&path, &series).unwrap();
        let back = read_anomaly_csv(&path).unwrap();
        assert_eq!(back, series);
    }

    #[test]
    fn severity_csv_has_all_columns() {
        let mut series = AnomalySeries::new(Matrix::from_rows(&[vec![0.5, 1.5]]), vec![10, 11]);
        series.set_threshold(vec![1.0]).unwrap();
        let sev = vec![batch_severity(&[0.5, 1.5], 1.0, 2.0).unwrap()];
        let text = write_and_read(|p| write_severity_csv(p, &series, &sev).unwrap());
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "t,node,score,threshold,flag,mu,sigma,index"
        );
        assert_eq!(lines.next().unwrap(), "10,0,0.5,1,0,0,0,0");
        assert_eq!(lines.next().unwrap(), "11,0,1.5,1,1,0.5,0,0.5");
    }
}
