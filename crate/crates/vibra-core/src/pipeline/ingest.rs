//! Data ingestion: IMS-style raw snapshot directories and generic CSV.
//!
//! The IMS layout is one whitespace-separated numeric text file per
//! snapshot, channels as columns, with the chronological order encoded
//! in the zero-padded timestamp filenames (e.g. `2004.02.12.10.32.39`),
//! so sorting by filename is sorting by time. Each snapshot collapses
//! to one RMS value per channel, producing one column of the feature
//! matrix per file.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::numerics::Matrix;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} is empty")]
    EmptyFile { path: PathBuf },
    #[error("no snapshot files in {dir}")]
    EmptyDir { dir: PathBuf },
    #[error("{path}: expected {expected} channels, found {got} columns")]
    WrongChannelCount {
        path: PathBuf,
        expected: usize,
        got: usize,
    },
    #[error("{path} line {line}: ragged row has {got} columns, expected {expected}")]
    RaggedRow {
        path: PathBuf,
        line: usize,
        expected: usize,
        got: usize,
    },
    #[error("{path} line {line}: non-numeric cell `{token}`")]
    NonNumeric {
        path: PathBuf,
        line: usize,
        token: String,
    },
    #[error("{path} row {row}: missing value in column `{column}`")]
    MissingValue {
        path: PathBuf,
        row: usize,
        column: String,
    },
    #[error("{path} has a header but no data rows")]
    EmptyData { path: PathBuf },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("data has {data_nodes} channels but the graph has {graph_nodes} nodes")]
    NodeMismatch {
        data_nodes: usize,
        graph_nodes: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceKind {
    ImsRaw,
    Csv,
    Synthetic,
}

/// What was read and in which order; one entry per snapshot file.
#[derive(Debug, Clone)]
pub struct IngestManifest {
    pub kind: SourceKind,
    pub files: Vec<PathBuf>,
    pub channels: usize,
    /// Sample count of the first snapshot.
    pub samples_per_snapshot: usize,
}

/// Reads an IMS-style snapshot directory into an `N x T` feature
/// matrix of per-channel RMS values, one column per file in timestamp
/// order.
pub fn ingest_ims(dir: &Path, channels: usize) -> Result<(Matrix, IngestManifest), IngestError> {
    let entries = fs::read_dir(dir).map_err(|source| IngestError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut files: Vec<PathBuf> = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|source| IngestError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let path = entry.path();
        if path.is_file() {
            files.push(path);
        }
    }
    if files.is_empty() {
        return Err(IngestError::EmptyDir {
            dir: dir.to_path_buf(),
        });
    }
    // Zero-padded timestamp filenames: lexicographic order is
    // chronological order, regardless of directory listing order.
    files.sort_by(|a, b| a.file_name().cmp(&b.file_name()));

    let mut features = Matrix::zeros(channels, files.len());
    let mut samples_per_snapshot = 0;
    for (col, path) in files.iter().enumerate() {
        let rms = snapshot_rms(path, channels, &mut samples_per_snapshot, col == 0)?;
        for (ch, v) in rms.iter().enumerate() {
            features.set(ch, col, *v);
        }
    }
    let manifest = IngestManifest {
        kind: SourceKind::ImsRaw,
        files,
        channels,
        samples_per_snapshot,
    };
    Ok((features, manifest))
}

fn snapshot_rms(
    path: &Path,
    channels: usize,
    samples_per_snapshot: &mut usize,
    first_file: bool,
) -> Result<Vec<f64>, IngestError> {
    let text = fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut sum_sq = vec![0.0f64; channels];
    let mut rows = 0usize;
    for (line_idx, line) in text.lines().enumerate() {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        if rows == 0 && tokens.len() != channels {
            return Err(IngestError::WrongChannelCount {
                path: path.to_path_buf(),
                expected: channels,
                got: tokens.len(),
            });
        }
        if tokens.len() != channels {
            return Err(IngestError::RaggedRow {
                path: path.to_path_buf(),
                line: line_idx + 1,
                expected: channels,
                got: tokens.len(),
            });
        }
        for (ch, token) in tokens.iter().enumerate() {
            let v: f64 = token.parse().map_err(|_| IngestError::NonNumeric {
                path: path.to_path_buf(),
                line: line_idx + 1,
                token: token.to_string(),
            })?;
            sum_sq[ch] += v * v;
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(IngestError::EmptyFile {
            path: path.to_path_buf(),
        });
    }
    if first_file {
        *samples_per_snapshot = rows;
    }
    Ok(sum_sq.iter().map(|ss| (ss / rows as f64).sqrt()).collect())
}

/// Reads a generic feature CSV: a header row naming the channels, one
/// row per time step. Returns the `N x T` matrix and the channel names.
pub fn ingest_csv(path: &Path) -> Result<(Matrix, Vec<String>), IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|source| IngestError::Csv {
            path: path.to_path_buf(),
            source,
        })?;
    let labels: Vec<String> = reader
        .headers()
        .map_err(|source| IngestError::Csv {
            path: path.to_path_buf(),
            source,
        })?
        .iter()
        .map(str::to_string)
        .collect();

    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record = record.map_err(|source| IngestError::Csv {
            path: path.to_path_buf(),
            source,
        })?;
        let mut row = Vec::with_capacity(labels.len());
        for (col, field) in record.iter().enumerate() {
            if field.is_empty() {
                return Err(IngestError::MissingValue {
                    path: path.to_path_buf(),
                    row: row_idx + 1,
                    column: labels.get(col).cloned().unwrap_or_else(|| col.to_string()),
                });
            }
            let v: f64 = field.parse().map_err(|_| IngestError::NonNumeric {
                path: path.to_path_buf(),
                line: row_idx + 2, // header occupies line 1
                token: field.to_string(),
            })?;
            row.push(v);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(IngestError::EmptyData {
            path: path.to_path_buf(),
        });
    }

    let n = labels.len();
    let t = rows.len();
    let mut features = Matrix::zeros(n, t);
    for (time, row) in rows.iter().enumerate() {
        for (node, v) in row.iter().enumerate() {
            features.set(node, time, *v);
        }
    }
    Ok((features, labels))
}
