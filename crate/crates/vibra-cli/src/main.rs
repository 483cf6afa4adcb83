//! `vibra` — fault detection and severity indexing for multivariate
//! vibration time series.
//!
//! Exit codes: 0 success, 1 config error, 2 data error, 3 training
//! divergence.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use vibra_core::model::TgcnModel;
use vibra_core::pipeline::ingest::{ingest_csv, ingest_ims};
use vibra_core::pipeline::plot::render_plots;
use vibra_core::pipeline::report::{read_anomaly_csv, write_features_csv, write_severity_csv};
use vibra_core::pipeline::synthetic::{generate_synthetic, SyntheticSpec};
use vibra_core::pipeline::{
    detect_stage, prepare, preset, run_pipeline, train_stage, ConfigError, InputConfig,
    PipelineError, RunConfig, StageError,
};
use vibra_core::severity::{SeveritySeries, SeverityState};

#[derive(Parser)]
#[command(
    name = "vibra",
    version,
    about = "Temporal-graph fault diagnosis for vibration data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scenario CSV with a known fault onset
    Synth(SynthArgs),
    /// Convert raw input (IMS snapshot directory or CSV) to a feature CSV
    Ingest(IngestArgs),
    /// Train the forecaster; writes checkpoint.json and loss.csv
    Train(ConfigArgs),
    /// Calibrate the threshold and score the test segment; writes anomaly.csv
    Detect(DetectArgs),
    /// Fold an anomaly CSV into the severity index; writes a severity CSV
    Severity(SeverityArgs),
    /// Run the full pipeline end to end
    Run(ConfigArgs),
    /// Render per-node SVG plots from anomaly and severity CSVs
    Plot(PlotArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output feature CSV path; onset metadata lands beside it as
    /// <out>.meta.json
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    nodes: usize,
    #[arg(long, default_value_t = 1000)]
    t: usize,
    /// Fault onset as a fraction of the series length
    #[arg(long, default_value_t = 0.5, allow_negative_numbers = true)]
    onset: f64,
    /// Comma-separated faulted node indices
    #[arg(long, default_value = "0", value_delimiter = ',')]
    fault_nodes: Vec<usize>,
    /// Post-onset amplitude gain; 1.0 means no fault
    #[arg(long, default_value_t = 1.5, allow_negative_numbers = true)]
    gain: f64,
}

#[derive(Args)]
struct IngestArgs {
    /// Input kind: ims-raw or csv
    #[arg(long)]
    kind: String,
    /// Snapshot directory (ims-raw) or CSV file (csv)
    #[arg(long)]
    input: PathBuf,
    /// Channel count for ims-raw input
    #[arg(long, default_value_t = 4)]
    channels: usize,
    /// Output feature CSV path
    #[arg(long)]
    out: PathBuf,
}

/// Config resolution shared by `train`, `detect`, and `run`: start from
/// `--config` or `--preset`, then apply any override flag.
#[derive(Args)]
struct ConfigArgs {
    /// JSON config file
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Named preset: bearing, fanjet, or synthetic
    #[arg(long)]
    preset: Option<String>,
    /// Graph override: a preset name (path4, pair2) or an edge-list JSON
    /// document like {"n":4,"edges":[[0,1],[1,2],[2,3]]}
    #[arg(long)]
    graph: Option<String>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    learning_rate: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Severity variability weight
    #[arg(long, allow_negative_numbers = true)]
    m: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    train_frac: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    val_frac: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    test_frac: Option<f64>,
    /// Opt-in global gradient-norm clip
    #[arg(long, allow_negative_numbers = true)]
    grad_clip: Option<f64>,
    /// Input path override (CSV file or IMS directory, per the config's kind)
    #[arg(long)]
    input: Option<PathBuf>,
    /// Channel count override for ims-raw input
    #[arg(long)]
    channels: Option<usize>,
    /// Series length override for synthetic input
    #[arg(long)]
    t: Option<usize>,
    /// Onset fraction override for synthetic input
    #[arg(long, allow_negative_numbers = true)]
    onset: Option<f64>,
    /// Faulted node override for synthetic input, comma-separated
    #[arg(long, value_delimiter = ',')]
    fault_nodes: Option<Vec<usize>>,
    /// Gain override for synthetic input
    #[arg(long, allow_negative_numbers = true)]
    gain: Option<f64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct DetectArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Trained model checkpoint; defaults to <out_dir>/checkpoint.json
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct SeverityArgs {
    /// Anomaly CSV produced by `detect` or `run`
    #[arg(long)]
    anomaly: PathBuf,
    /// Variability weight in the index mu + m*sigma
    #[arg(long, default_value_t = 2.0, allow_negative_numbers = true)]
    m: f64,
    /// Output severity CSV path
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long)]
    anomaly: PathBuf,
    #[arg(long)]
    severity: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig, PipelineError> {
        let base = match (&self.config, &self.preset) {
            (Some(path), _) => RunConfig::from_json_file(path),
            (None, Some(name)) => preset(name),
            (None, None) => Err(ConfigError::Field {
                field: "config",
                problem: "pass --config FILE or --preset NAME".into(),
            }),
        };
        let mut cfg = base.map_err(|e| PipelineError {
            stage: "config",
            source: StageError::Config(e),
        })?;

        macro_rules! apply {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field.clone() { cfg.$field = v; })*
            };
        }
        apply!(
            window,
            hidden,
            layers,
            batch_size,
            learning_rate,
            epochs,
            seed,
            m
        );
        if let Some(spec) = &self.graph {
            cfg.graph = parse_graph_flag(spec).map_err(|e| PipelineError {
                stage: "config",
                source: StageError::Config(e),
            })?;
        }
        if let Some(v) = self.grad_clip {
            cfg.grad_clip = Some(v);
        }
        if let Some(v) = self.train_frac {
            cfg.split.train_frac = v;
        }
        if let Some(v) = self.val_frac {
            cfg.split.val_frac_of_train = v;
        }
        if let Some(v) = self.test_frac {
            cfg.split.test_frac = v;
        }
        if let Some(v) = &self.out_dir {
            cfg.output_dir = v.clone();
        }
        match &mut cfg.input {
            InputConfig::ImsRaw { path, channels } => {
                if let Some(v) = &self.input {
                    *path = v.clone();
                }
                if let Some(v) = self.channels {
                    *channels = v;
                }
            }
            InputConfig::Csv { path } => {
                if let Some(v) = &self.input {
                    *path = v.clone();
                }
            }
            InputConfig::Synthetic {
                t,
                onset,
                fault_nodes,
                gain,
            } => {
                if let Some(v) = self.t {
                    *t = v;
                }
                if let Some(v) = self.onset {
                    *onset = v;
                }
                if let Some(v) = &self.fault_nodes {
                    *fault_nodes = v.clone();
                }
                if let Some(v) = self.gain {
                    *gain = v;
                }
            }
        }
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return ExitCode::from(if err.use_stderr() { 1 } else { 0 });
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            // Transparent wrappers repeat their inner message; only print
            // causes that add information.
            let mut printed = err.to_string();
            eprintln!("error: {printed}");
            let mut source = std::error::Error::source(&err);
            while let Some(cause) = source {
                let text = cause.to_string();
                if !printed.contains(&text) {
                    eprintln!("  caused by: {text}");
                    printed = text;
                }
                source = cause.source();
            }
            ExitCode::from(err.exit_code())
        }
    }
}

fn dispatch(command: Command) -> Result<(), PipelineError> {
    match command {
        Command::Synth(args) => synth(args),
        Command::Ingest(args) => ingest(args),
        Command::Train(args) => {
            let cfg = args.resolve()?;
            let prepared = prepare(&cfg)?;
            let (_, report) = train_stage(&cfg, &prepared)?;
            let last = report.history.last().expect("epochs >= 1");
            println!(
                "trained {} epochs: train_mse {:.6}, val_mse {:.6}, converged {}",
                report.history.len(),
                last.train_mse,
                last.val_mse,
                report.converged
            );
            println!("wrote {}", cfg.output_dir.join("checkpoint.json").display());
            Ok(())
        }
        Command::Detect(args) => {
            let cfg = args.config.resolve()?;
            let checkpoint = args
                .checkpoint
                .unwrap_or_else(|| cfg.output_dir.join("checkpoint.json"));
            let model = stage_io(
                "detect",
                TgcnModel::load(&checkpoint).map_err(|e| {
                    std::io::Error::new(
                        e.kind(),
                        format!("cannot load checkpoint {}: {e}", checkpoint.display()),
                    )
                }),
            )?;
            let prepared = prepare(&cfg)?;
            let series = detect_stage(&cfg, &prepared, &model)?;
            let flags: usize = series
                .flag()
                .expect("threshold set")
                .iter()
                .map(|nf| nf.iter().filter(|f| **f).count())
                .sum();
            println!(
                "scored {} windows over {} nodes: {} flags; wrote {}",
                series.timestamps().len(),
                series.n_nodes(),
                flags,
                cfg.output_dir.join("anomaly.csv").display()
            );
            Ok(())
        }
        Command::Severity(args) => severity(args),
        Command::Run(args) => {
            let cfg = args.resolve()?;
            let artifacts = run_pipeline(&cfg)?;
            let s = &artifacts.summary;
            println!(
                "run complete: train_mse {:.6}, val_mse {:.6}",
                s.final_train_mse, s.final_val_mse
            );
            for (i, label) in s.node_labels.iter().enumerate() {
                println!(
                    "  {label}: threshold {:.6}, faults {}, final severity {:.6}",
                    s.threshold[i], s.fault_counts[i], s.final_severity[i]
                );
            }
            println!("artifacts under {}", cfg.output_dir.display());
            Ok(())
        }
        Command::Plot(args) => {
            let written =
                render_plots(&args.anomaly, &args.severity, &args.out_dir).map_err(|e| {
                    PipelineError {
                        stage: "plot",
                        source: e.into(),
                    }
                })?;
            println!(
                "wrote {} plots under {}",
                written.len(),
                args.out_dir.display()
            );
            Ok(())
        }
    }
}

fn stage_io<T>(name: &'static str, r: std::io::Result<T>) -> Result<T, PipelineError> {
    r.map_err(|e| PipelineError {
        stage: name,
        source: StageError::Io(e),
    })
}

fn parse_graph_flag(spec: &str) -> Result<vibra_core::GraphSpec, ConfigError> {
    if spec.trim_start().starts_with('{') {
        serde_json::from_str(spec).map_err(|e| ConfigError::Field {
            field: "graph",
            problem: format!("not a valid graph document: {e}"),
        })
    } else {
        Ok(vibra_core::GraphSpec::Preset {
            preset: spec.to_string(),
        })
    }
}

fn synth(args: SynthArgs) -> Result<(), PipelineError> {
    let spec = SyntheticSpec {
        seed: args.seed,
        n_nodes: args.nodes,
        t: args.t,
        onset_frac: args.onset,
        fault_nodes: args.fault_nodes,
        gain: args.gain,
    };
    let data = generate_synthetic(&spec).map_err(|e| PipelineError {
        stage: "synth",
        source: e.into(),
    })?;
    let labels: Vec<String> = (0..args.nodes).map(|i| format!("node_{i}")).collect();
    write_features_csv(&args.out, &data.features, &labels).map_err(|e| PipelineError {
        stage: "synth",
        source: e.into(),
    })?;
    let meta_path = args.out.with_extension("meta.json");
    let meta = serde_json::json!({
        "onset_index": data.onset_index,
        "seed": spec.seed,
        "gain": spec.gain,
    });
    stage_io("synth", std::fs::write(&meta_path, format!("{meta:#}\n")))?;
    println!(
        "wrote {} ({} nodes x {} steps), onset at {}",
        args.out.display(),
        args.nodes,
        args.t,
        data.onset_index
    );
    Ok(())
}

fn ingest(args: IngestArgs) -> Result<(), PipelineError> {
    let wrap = |e: vibra_core::pipeline::ingest::IngestError| PipelineError {
        stage: "ingest",
        source: e.into(),
    };
    let (features, labels) = match args.kind.as_str() {
        "ims-raw" => {
            let (features, manifest) = ingest_ims(&args.input, args.channels).map_err(wrap)?;
            let labels = (0..manifest.channels).map(|i| format!("ch_{i}")).collect();
            (features, labels)
        }
        "csv" => ingest_csv(&args.input).map_err(wrap)?,
        other => {
            return Err(PipelineError {
                stage: "config",
                source: StageError::Config(ConfigError::Field {
                    field: "kind",
                    problem: format!("unknown input kind `{other}`; expected ims-raw or csv"),
                }),
            })
        }
    };
    write_features_csv(&args.out, &features, &labels).map_err(|e| PipelineError {
        stage: "ingest",
        source: e.into(),
    })?;
    println!(
        "wrote {} ({} channels x {} steps)",
        args.out.display(),
        features.rows(),
        features.cols()
    );
    Ok(())
}

fn severity(args: SeverityArgs) -> Result<(), PipelineError> {
    let wrap_report = |e: vibra_core::pipeline::report::ReportError| PipelineError {
        stage: "severity",
        source: e.into(),
    };
    let series = read_anomaly_csv(&args.anomaly).map_err(wrap_report)?;
    let tau = series.threshold().expect("reader sets the threshold");
    let mut all = Vec::with_capacity(series.n_nodes());
    for (node, &tau_node) in tau.iter().enumerate() {
        let mut state = SeverityState::new(tau_node, args.m).map_err(|e| PipelineError {
            stage: "severity",
            source: e.into(),
        })?;
        let mut out = SeveritySeries::default();
        for col in 0..series.scores().cols() {
            let point =
                state
                    .update(series.scores().get(node, col))
                    .map_err(|e| PipelineError {
                        stage: "severity",
                        source: e.into(),
                    })?;
            out.points.push(point);
        }
        all.push(out);
    }
    write_severity_csv(&args.out, &series, &all).map_err(wrap_report)?;
    println!("wrote {}", args.out.display());
    Ok(())
}
