//! End-to-end orchestration: config and presets, ingestion, training,
//! detection, severity, and artifact emission, in the fixed stage order
//! acquisition → preprocessing → training → prediction → detection →
//! severity. A stage failure aborts with the stage name; artifacts
//! written by earlier stages are left in place for debugging.

pub mod ingest;
pub mod plot;
pub mod report;
pub mod synthetic;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::{calibrate_threshold, score, DetectError};
use crate::graph::{Graph, GraphError, GraphSpec};
use crate::model::{ModelDims, TgcnModel};
use crate::severity::{SeverityError, SeveritySeries, SeverityState};
use crate::training::{
    make_windows, normalize_dataset, train, AdamConfig, Segment, SplitSpec, TrainError,
    TrainOptions,
};
use ingest::{ingest_csv, ingest_ims, IngestError};
use plot::PlotError;
use report::{write_anomaly_csv, write_loss_csv, write_severity_csv, ReportError};
use synthetic::{generate_synthetic, SynthError, SyntheticSpec};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config field `{field}`: {problem}")]
    Field {
        field: &'static str,
        problem: String,
    },
    #[error("unknown preset `{0}`; expected `bearing`, `fanjet`, or `synthetic`")]
    UnknownPreset(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config {path} is not valid JSON: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Debug, Error)]
pub enum StageError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error(transparent)]
    Severity(#[from] SeverityError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error(transparent)]
    Plot(#[from] PlotError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A pipeline failure, tagged with the stage that raised it.
#[derive(Debug, Error)]
#[error("stage `{stage}` failed: {source}")]
pub struct PipelineError {
    pub stage: &'static str,
    #[source]
    pub source: StageError,
}

impl PipelineError {
    /// Process exit code: 1 config error, 2 data error, 3 training
    /// divergence.
    pub fn exit_code(&self) -> u8 {
        match &self.source {
            StageError::Config(_) | StageError::Synth(_) => 1,
            StageError::Train(TrainError::Diverged { .. }) => 3,
            StageError::Train(TrainError::ZeroEpochs | TrainError::ZeroBatchSize) => 1,
            _ => 2,
        }
    }
}

fn stage<T, E: Into<StageError>>(
    name: &'static str,
    result: Result<T, E>,
) -> Result<T, PipelineError> {
    result.map_err(|e| PipelineError {
        stage: name,
        source: e.into(),
    })
}

/// Where the feature matrix comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InputConfig {
    /// Directory of whitespace-separated snapshot files with timestamp
    /// filenames; one RMS column per file.
    ImsRaw { path: PathBuf, channels: usize },
    /// Header-labelled CSV, one row per time step.
    Csv { path: PathBuf },
    /// Seeded synthetic scenario with known fault onset.
    Synthetic {
        t: usize,
        onset: f64,
        fault_nodes: Vec<usize>,
        gain: f64,
    },
}

/// Full run description; the single JSON document the CLI consumes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub graph: GraphSpec,
    pub window: usize,
    pub hidden: usize,
    pub layers: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub split: SplitSpec,
    pub m: f64,
    pub seed: u64,
    #[serde(default)]
    pub grad_clip: Option<f64>,
    pub input: InputConfig,
    pub output_dir: PathBuf,
}

/// Bundled hyperparameter sets: `bearing` for the four-bearing
/// run-to-failure layout, `fanjet` for the two-channel propulsion
/// layout, `synthetic` for the self-contained demo scenario.
pub fn preset(name: &str) -> Result<RunConfig, ConfigError> {
    let preset = |graph: GraphSpec,
                  hidden: usize,
                  layers: usize,
                  batch_size: usize,
                  learning_rate: f64,
                  split: SplitSpec,
                  input: InputConfig,
                  output_dir: &str| RunConfig {
        graph,
        window: 4,
        hidden,
        layers,
        batch_size,
        learning_rate,
        epochs: 50,
        split,
        m: 2.0,
        seed: 7,
        grad_clip: None,
        input,
        output_dir: PathBuf::from(output_dir),
    };
    match name {
        "bearing" => Ok(preset(
            GraphSpec::Preset {
                preset: "path4".into(),
            },
            128,
            2,
            32,
            0.001,
            SplitSpec {
                train_frac: 0.4,
                val_frac_of_train: 0.2,
                test_frac: 0.6,
            },
            InputConfig::ImsRaw {
                path: PathBuf::from("data/ims"),
                channels: 4,
            },
            "out/bearing",
        )),
        "fanjet" => Ok(preset(
            GraphSpec::Preset {
                preset: "pair2".into(),
            },
            256,
            2,
            4,
            0.001,
            SplitSpec {
                train_frac: 0.6,
                val_frac_of_train: 0.3,
                test_frac: 0.4,
            },
            InputConfig::Csv {
                path: PathBuf::from("data/fanjet.csv"),
            },
            "out/fanjet",
        )),
        "synthetic" => Ok(preset(
            GraphSpec::Preset {
                preset: "path4".into(),
            },
            16,
            1,
            32,
            0.01,
            SplitSpec {
                train_frac: 0.4,
                val_frac_of_train: 0.2,
                test_frac: 0.6,
            },
            InputConfig::Synthetic {
                t: 1000,
                onset: 0.5,
                fault_nodes: vec![0],
                gain: 1.5,
            },
            "out/synthetic",
        )),
        other => Err(ConfigError::UnknownPreset(other.to_string())),
    }
}

impl RunConfig {
    pub fn from_json_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| ConfigError::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Rejects every out-of-range field with a message naming it.
    pub fn validate(&self) -> Result<(), ConfigError> {
        fn positive(field: &'static str, v: usize) -> Result<(), ConfigError> {
            if v == 0 {
                return Err(ConfigError::Field {
                    field,
                    problem: "must be at least 1".into(),
                });
            }
            Ok(())
        }
        positive("window", self.window)?;
        positive("hidden", self.hidden)?;
        positive("layers", self.layers)?;
        positive("batch_size", self.batch_size)?;
        positive("epochs", self.epochs)?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ConfigError::Field {
                field: "learning_rate",
                problem: format!("{} must be positive and finite", self.learning_rate),
            });
        }
        if !(self.m >= 0.0 && self.m.is_finite()) {
            return Err(ConfigError::Field {
                field: "m",
                problem: format!("{} must be nonnegative and finite", self.m),
            });
        }
        if let Some(clip) = self.grad_clip {
            if !(clip > 0.0 && clip.is_finite()) {
                return Err(ConfigError::Field {
                    field: "grad_clip",
                    problem: format!("{clip} must be positive and finite"),
                });
            }
        }
        self.split.validate().map_err(|e| ConfigError::Field {
            field: "split",
            problem: e.to_string(),
        })?;
        match &self.input {
            InputConfig::ImsRaw { channels, .. } => positive("input.channels", *channels)?,
            InputConfig::Csv { .. } => {}
            InputConfig::Synthetic { t, onset, gain, .. } => {
                positive("input.t", *t)?;
                if !(*onset > 0.0 && *onset < 1.0) {
                    return Err(ConfigError::Field {
                        field: "input.onset",
                        problem: format!("{onset} must lie strictly between 0 and 1"),
                    });
                }
                if !(*gain >= 0.0 && gain.is_finite()) {
                    return Err(ConfigError::Field {
                        field: "input.gain",
                        problem: format!("{gain} must be nonnegative and finite"),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Ground-truth evaluation block, present for synthetic runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSummary {
    pub onset_index: usize,
    pub pre_onset_flag_rate: Vec<f64>,
    pub post_onset_flag_rate: Vec<f64>,
}

/// Everything the summary JSON records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config: RunConfig,
    pub node_labels: Vec<String>,
    pub threshold: Vec<f64>,
    pub fault_counts: Vec<u64>,
    pub final_severity: Vec<f64>,
    pub final_train_mse: f64,
    pub final_val_mse: f64,
    pub converged: bool,
    pub rel_loss_change: f64,
    pub synthetic: Option<SyntheticSummary>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArtifactPaths {
    pub checkpoint: PathBuf,
    pub loss_csv: PathBuf,
    pub anomaly_csv: PathBuf,
    pub severity_csv: PathBuf,
    pub summary_json: PathBuf,
    pub plots: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifacts {
    pub summary: RunSummary,
    pub paths: ArtifactPaths,
}

/// Output of the acquisition and preprocessing stages, consumed by
/// every later stage.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub graph: Graph,
    pub normalized: crate::graph::NormalizedGraph,
    pub dataset: crate::training::Dataset,
    /// Ground-truth fault onset for synthetic input.
    pub onset_index: Option<usize>,
}

/// Validates the config, builds the graph, ingests the features, and
/// z-scores them.
pub fn prepare(cfg: &RunConfig) -> Result<Prepared, PipelineError> {
    stage("config", cfg.validate())?;
    let mut graph = stage(
        "config",
        Graph::from_spec(&cfg.graph).map_err(ConfigError::from),
    )?;
    let (features, labels, onset_index) = stage("ingest", load_features(cfg, &graph))?;
    if features.rows() != graph.n_nodes() {
        return Err(PipelineError {
            stage: "ingest",
            source: IngestError::NodeMismatch {
                data_nodes: features.rows(),
                graph_nodes: graph.n_nodes(),
            }
            .into(),
        });
    }
    graph.set_node_labels(labels);
    let normalized = graph.normalize();
    let dataset = stage(
        "normalize",
        normalize_dataset(&features, &cfg.split, cfg.window),
    )?;
    Ok(Prepared {
        graph,
        normalized,
        dataset,
        onset_index,
    })
}

/// Trains from scratch and writes `loss.csv` and `checkpoint.json`
/// under the output directory.
pub fn train_stage(
    cfg: &RunConfig,
    prepared: &Prepared,
) -> Result<(TgcnModel, crate::training::TrainReport), PipelineError> {
    stage("setup", std::fs::create_dir_all(&cfg.output_dir))?;
    let dims = ModelDims {
        n_nodes: prepared.graph.n_nodes(),
        window: cfg.window,
        hidden: cfg.hidden,
        layers: cfg.layers,
    };
    let mut model = TgcnModel::init(cfg.seed, dims);
    let opts = TrainOptions {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        seed: cfg.seed,
        adam: AdamConfig::with_learning_rate(cfg.learning_rate),
        grad_clip: cfg.grad_clip,
    };
    let report = stage(
        "train",
        train(&mut model, &prepared.normalized, &prepared.dataset, &opts),
    )?;
    stage(
        "train",
        write_loss_csv(&cfg.output_dir.join("loss.csv"), &report.history),
    )?;
    stage("train", model.save(&cfg.output_dir.join("checkpoint.json")))?;
    Ok((model, report))
}

/// Calibrates the per-node threshold on the train segment, scores the
/// test segment, and writes `anomaly.csv`.
pub fn detect_stage(
    cfg: &RunConfig,
    prepared: &Prepared,
    model: &TgcnModel,
) -> Result<crate::detection::AnomalySeries, PipelineError> {
    stage("setup", std::fs::create_dir_all(&cfg.output_dir))?;
    let train_windows = stage("calibrate", make_windows(&prepared.dataset, Segment::Train))?;
    let tau = stage(
        "calibrate",
        calibrate_threshold(model, &prepared.normalized, &train_windows),
    )?;
    let test_windows = stage("score", make_windows(&prepared.dataset, Segment::Test))?;
    let mut series = stage("score", score(model, &prepared.normalized, &test_windows))?;
    stage("score", series.set_threshold(tau))?;
    stage(
        "report",
        write_anomaly_csv(&cfg.output_dir.join("anomaly.csv"), &series),
    )?;
    Ok(series)
}

/// Folds the per-node severity index over the scored series and writes
/// `severity.csv`. Returns the per-node series and fault counts.
pub fn severity_stage(
    cfg: &RunConfig,
    series: &crate::detection::AnomalySeries,
) -> Result<(Vec<SeveritySeries>, Vec<u64>), PipelineError> {
    let tau = series
        .threshold()
        .expect("detect stage sets the threshold")
        .to_vec();
    let (severity, counts) = stage("severity", fold_severity(series, &tau, cfg.m))?;
    stage(
        "report",
        write_severity_csv(&cfg.output_dir.join("severity.csv"), series, &severity),
    )?;
    Ok((severity, counts))
}

/// Runs the whole pipeline and writes every artifact under
/// `config.output_dir`.
pub fn run_pipeline(cfg: &RunConfig) -> Result<RunArtifacts, PipelineError> {
    let prepared = prepare(cfg)?;
    let (model, train_report) = train_stage(cfg, &prepared)?;
    let series = detect_stage(cfg, &prepared, &model)?;
    let (severity, fault_counts) = severity_stage(cfg, &series)?;

    let tau = series.threshold().expect("set by detect stage").to_vec();
    let final_severity: Vec<f64> = severity
        .iter()
        .map(|s| s.points.last().map_or(0.0, |p| p.index))
        .collect();
    let synthetic = prepared.onset_index.map(|onset| {
        let flags = series.flag().expect("threshold set above");
        let rates = |pred: &dyn Fn(usize) -> bool| -> Vec<f64> {
            flags
                .iter()
                .map(|node_flags| {
                    let mut hits = 0usize;
                    let mut eligible = 0usize;
                    for (col, &t) in series.timestamps().iter().enumerate() {
                        if pred(t) {
                            eligible += 1;
                            hits += usize::from(node_flags[col]);
                        }
                    }
                    if eligible == 0 {
                        0.0
                    } else {
                        hits as f64 / eligible as f64
                    }
                })
                .collect()
        };
        SyntheticSummary {
            onset_index: onset,
            pre_onset_flag_rate: rates(&|t| t < onset),
            post_onset_flag_rate: rates(&|t| t >= onset),
        }
    });

    let last = train_report.history.last().expect("epochs >= 1");
    let summary = RunSummary {
        config: cfg.clone(),
        node_labels: prepared.graph.node_labels().to_vec(),
        threshold: tau,
        fault_counts,
        final_severity,
        final_train_mse: last.train_mse,
        final_val_mse: last.val_mse,
        converged: train_report.converged,
        rel_loss_change: train_report.final_rel_change,
        synthetic,
    };
    let summary_json = cfg.output_dir.join("summary.json");
    stage("report", write_summary(&summary_json, &summary))?;

    let anomaly_csv = cfg.output_dir.join("anomaly.csv");
    let severity_csv = cfg.output_dir.join("severity.csv");
    let plots = stage(
        "plot",
        plot::render_plots(&anomaly_csv, &severity_csv, &cfg.output_dir.join("plots")),
    )?;

    Ok(RunArtifacts {
        summary,
        paths: ArtifactPaths {
            checkpoint: cfg.output_dir.join("checkpoint.json"),
            loss_csv: cfg.output_dir.join("loss.csv"),
            anomaly_csv,
            severity_csv,
            summary_json,
            plots,
        },
    })
}

type LoadedFeatures = (crate::numerics::Matrix, Vec<String>, Option<usize>);

fn load_features(cfg: &RunConfig, graph: &Graph) -> Result<LoadedFeatures, StageError> {
    match &cfg.input {
        InputConfig::ImsRaw { path, channels } => {
            let (features, _manifest) = ingest_ims(path, *channels)?;
            let labels = (0..*channels).map(|i| format!("ch_{i}")).collect();
            Ok((features, labels, None))
        }
        InputConfig::Csv { path } => {
            let (features, labels) = ingest_csv(path)?;
            Ok((features, labels, None))
        }
        InputConfig::Synthetic {
            t,
            onset,
            fault_nodes,
            gain,
        } => {
            let spec = SyntheticSpec {
                seed: cfg.seed,
                n_nodes: graph.n_nodes(),
                t: *t,
                onset_frac: *onset,
                fault_nodes: fault_nodes.clone(),
                gain: *gain,
            };
            let data = generate_synthetic(&spec)?;
            let labels = graph.node_labels().to_vec();
            Ok((data.features, labels, Some(data.onset_index)))
        }
    }
}

fn fold_severity(
    series: &crate::detection::AnomalySeries,
    tau: &[f64],
    m: f64,
) -> Result<(Vec<SeveritySeries>, Vec<u64>), SeverityError> {
    let mut all = Vec::with_capacity(series.n_nodes());
    let mut counts = Vec::with_capacity(series.n_nodes());
    for (node, &tau_node) in tau.iter().enumerate() {
        let mut state = SeverityState::new(tau_node, m)?;
        let mut out = SeveritySeries::default();
        for col in 0..series.scores().cols() {
            out.points
                .push(state.update(series.scores().get(node, col))?);
        }
        counts.push(state.fault_count());
        all.push(out);
    }
    Ok((all, counts))
}

fn write_summary(path: &Path, summary: &RunSummary) -> Result<(), ReportError> {
    let mut text = serde_json::to_string_pretty(summary).expect("summary serializes");
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}
