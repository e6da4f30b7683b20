//! Command-line driver for the open-world recognition engine.
//!
//! Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric
//! failure.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use owr::checkpoint;
use owr::config::{OracleKind, RunConfig};
use owr::dataset::{split_open_world, ClassId, Dataset, OpenWorldSplit};
use owr::error::{Error, Result};
use owr::metrics::{MetricsSink, MetricsWriter, NullSink};
use owr::oracle::{GroundTruthOracle, HumanVerifiedOracle, LabelOracle, NoisyWebOracle};
use owr::protocol::{evaluate, run_nno_baseline, run_scripted, OwrState};
use owr::synthetic::generate_synthetic;

#[derive(Parser)]
#[command(name = "owr", about = "Open-world recognition engine", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON configuration file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic Gaussian-cluster dataset as CSV.
    GenSynthetic {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        num_classes: Option<usize>,
        #[arg(long)]
        samples_per_class: Option<usize>,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        cluster_sigma: Option<f64>,
        #[arg(long)]
        min_center_separation: Option<f64>,
    },
    /// Partition a dataset into initial / incremental / never-known classes
    /// with per-class train/test splits.
    Split {
        #[command(flatten)]
        config: ConfigArgs,
        /// Input CSV dataset.
        #[arg(long)]
        data: PathBuf,
        /// Output directory for the split CSVs and manifest.
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        num_known_initial: Option<usize>,
        #[arg(long)]
        num_known_total: Option<usize>,
    },
    /// Train the initial model on a CSV dataset and write a checkpoint.
    TrainInitial {
        #[command(flatten)]
        config: ConfigArgs,
        /// Initial training set (its labels define the initial classes).
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint output path.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Metrics log (JSON lines, appended).
        #[arg(long)]
        metrics: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Run the full incremental protocol on a split directory.
    RunOwr {
        #[command(flatten)]
        config: ConfigArgs,
        /// Split directory produced by `split`; omitted, the config's
        /// synthetic benchmark runs end to end.
        #[arg(long)]
        splits: Option<PathBuf>,
        /// Final checkpoint output path.
        #[arg(long)]
        checkpoint_out: Option<PathBuf>,
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Ask for human confirmation of every oracle label on stdin.
        #[arg(long)]
        interactive: bool,
    },
    /// Evaluate a checkpoint on a CSV test set (labels outside the
    /// checkpoint's known classes count as unknown).
    Evaluate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Run the frozen-representation NNO baseline over a split directory.
    BaselineNno {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        splits: Option<PathBuf>,
        /// Baseline checkpoint output path.
        #[arg(long)]
        checkpoint_out: Option<PathBuf>,
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Closed-world NCM baseline: train the backbone, compute offline
    /// means, report closed-world accuracy (no rejection).
    BaselineNcm {
        #[command(flatten)]
        config: ConfigArgs,
        /// Training CSV.
        #[arg(long)]
        train: PathBuf,
        /// Test CSV.
        #[arg(long)]
        test: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

fn open_metrics(path: &Option<PathBuf>) -> Result<Box<dyn MetricsSink>> {
    Ok(match path {
        Some(p) => Box::new(MetricsWriter::append_to(p)?),
        None => Box::new(NullSink),
    })
}

#[derive(serde::Serialize, serde::Deserialize)]
struct SplitManifest {
    initial_classes: Vec<ClassId>,
    incremental_classes: Vec<ClassId>,
    never_known_classes: Vec<ClassId>,
}

fn load_split_dir(dir: &std::path::Path) -> Result<OpenWorldSplit> {
    let manifest_path = dir.join("manifest.json");
    let manifest: SplitManifest = serde_json::from_str(&std::fs::read_to_string(manifest_path)?)?;
    let mut train_by_class = BTreeMap::new();
    let mut test_by_class = BTreeMap::new();
    let mut dim = None;
    for class in manifest
        .initial_classes
        .iter()
        .chain(&manifest.incremental_classes)
        .chain(&manifest.never_known_classes)
    {
        let test = Dataset::load_csv(dir.join(format!("test_{class}.csv")))?;
        dim.get_or_insert(test.dim());
        let train_path = dir.join(format!("train_{class}.csv"));
        let train = if train_path.exists() {
            Dataset::load_csv(train_path)?.into_samples()
        } else {
            Vec::new()
        };
        train_by_class.insert(class.clone(), train);
        test_by_class.insert(class.clone(), test.into_samples());
    }
    let dim = dim.ok_or_else(|| Error::EmptyData("split directory has no classes".into()))?;
    Ok(OpenWorldSplit {
        initial_classes: manifest.initial_classes,
        incremental_classes: manifest.incremental_classes,
        never_known_classes: manifest.never_known_classes,
        train_by_class,
        test_by_class,
        dim,
    })
}

fn synthetic_from_cfg(cfg: &RunConfig) -> Result<Dataset> {
    let s = &cfg.synthetic;
    generate_synthetic(
        s.num_classes,
        s.samples_per_class,
        s.dim,
        s.cluster_sigma,
        s.min_center_separation,
        cfg.seed,
    )
}

fn split_from_cfg(cfg: &RunConfig, dataset: &Dataset) -> Result<OpenWorldSplit> {
    split_open_world(
        dataset,
        cfg.split.num_known_initial,
        cfg.split.num_known_total,
        cfg.split.test_fraction,
        cfg.seed,
    )
}

/// Oracle pool: training samples of the incremental classes, which is what
/// a discovery query can legitimately ask about.
fn oracle_pool(split: &OpenWorldSplit) -> Result<Dataset> {
    let samples: Vec<_> = split
        .incremental_classes
        .iter()
        .flat_map(|c| split.train_by_class[c].iter().cloned())
        .collect();
    Dataset::new(samples)
}

fn build_oracle(cfg: &RunConfig, pool: &Dataset) -> Result<Box<dyn LabelOracle>> {
    Ok(match cfg.oracle.kind {
        OracleKind::GroundTruth => Box::new(GroundTruthOracle::new(pool, cfg.oracle.n_query)),
        OracleKind::NoisyWeb => Box::new(NoisyWebOracle::new(
            pool,
            cfg.oracle.n_query,
            cfg.oracle.label_noise_rate,
            cfg.oracle.feature_shift,
            cfg.seed ^ 0x6f72_6163_6c65, // decorrelate from the training stream
        )?),
    })
}

fn print_report(label: &str, report: &owr::EvalReport) -> Result<()> {
    let mut out = std::io::stdout().lock();
    writeln!(out, "{label}: {}", serde_json::to_string(report)?)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenSynthetic {
            config,
            out,
            num_classes,
            samples_per_class,
            dim,
            cluster_sigma,
            min_center_separation,
        } => {
            let mut cfg = config.load()?;
            if let Some(v) = num_classes {
                cfg.synthetic.num_classes = v;
            }
            if let Some(v) = samples_per_class {
                cfg.synthetic.samples_per_class = v;
            }
            if let Some(v) = dim {
                cfg.synthetic.dim = v;
            }
            if let Some(v) = cluster_sigma {
                cfg.synthetic.cluster_sigma = v;
            }
            if let Some(v) = min_center_separation {
                cfg.synthetic.min_center_separation = v;
            }
            let dataset = synthetic_from_cfg(&cfg)?;
            dataset.write_csv(&out)?;
            println!(
                "wrote {} samples ({} classes, dim {}) to {}",
                dataset.len(),
                dataset.class_ids().len(),
                dataset.dim(),
                out.display()
            );
            Ok(())
        }
        Command::Split {
            config,
            data,
            out_dir,
            num_known_initial,
            num_known_total,
        } => {
            let mut cfg = config.load()?;
            if let Some(v) = num_known_initial {
                cfg.split.num_known_initial = v;
            }
            if let Some(v) = num_known_total {
                cfg.split.num_known_total = v;
            }
            let dataset = Dataset::load_csv(&data)?;
            let split = split_from_cfg(&cfg, &dataset)?;
            std::fs::create_dir_all(&out_dir)?;
            for (class, samples) in &split.train_by_class {
                if !samples.is_empty() {
                    Dataset::new(samples.clone())?
                        .write_csv(out_dir.join(format!("train_{class}.csv")))?;
                }
            }
            for (class, samples) in &split.test_by_class {
                if !samples.is_empty() {
                    Dataset::new(samples.clone())?
                        .write_csv(out_dir.join(format!("test_{class}.csv")))?;
                }
            }
            let manifest = SplitManifest {
                initial_classes: split.initial_classes.clone(),
                incremental_classes: split.incremental_classes.clone(),
                never_known_classes: split.never_known_classes.clone(),
            };
            std::fs::write(
                out_dir.join("manifest.json"),
                serde_json::to_string_pretty(&manifest)?,
            )?;
            println!(
                "split written to {} ({} initial, {} incremental, {} never-known classes)",
                out_dir.display(),
                split.initial_classes.len(),
                split.incremental_classes.len(),
                split.never_known_classes.len()
            );
            Ok(())
        }
        Command::TrainInitial {
            config,
            data,
            checkpoint: ckpt_path,
            metrics,
            epochs,
        } => {
            let mut cfg = config.load()?;
            if let Some(v) = epochs {
                cfg.epochs_initial = v;
            }
            let dataset = Dataset::load_csv(&data)?;
            let mut sink = open_metrics(&metrics)?;
            let mut rng = owr::rng::SplitMix64::new(cfg.seed);
            let network = owr::embedding::EmbeddingNetwork::new(
                dataset.dim(),
                &cfg.hidden_layers,
                cfg.embedding_dim,
                &mut rng,
            )?;
            let mut state = OwrState::new(network, dataset.class_ids(), cfg.memory_capacity)?;
            owr::protocol::train_initial(&mut state, &dataset, &cfg, &mut rng, sink.as_mut())?;
            checkpoint::save_checkpoint(&ckpt_path, &state)?;
            println!(
                "trained on {} samples over {} classes; checkpoint at {}",
                dataset.len(),
                state.known_classes.len(),
                ckpt_path.display()
            );
            Ok(())
        }
        Command::RunOwr {
            config,
            splits,
            checkpoint_out,
            metrics,
            interactive,
        } => {
            let cfg = config.load()?;
            let split = match &splits {
                Some(dir) => load_split_dir(dir)?,
                None => split_from_cfg(&cfg, &synthetic_from_cfg(&cfg)?)?,
            };
            let pool = oracle_pool(&split)?;
            let mut sink = open_metrics(&metrics)?;
            let inner = build_oracle(&cfg, &pool)?;
            let outcome = if interactive {
                let stdin = std::io::stdin();
                let mut oracle = HumanVerifiedOracle::new(inner, stdin.lock(), std::io::stderr());
                run_scripted(&split, &cfg, &mut oracle, sink.as_mut())?
            } else {
                let mut oracle = inner;
                run_scripted(&split, &cfg, oracle.as_mut(), sink.as_mut())?
            };
            for (i, report) in outcome.reports.iter().enumerate() {
                let label = if i == 0 {
                    "after-initial".to_string()
                } else {
                    format!("after-step-{i}")
                };
                print_report(&label, report)?;
            }
            if let Some(path) = checkpoint_out {
                checkpoint::save_checkpoint(&path, &outcome.state)?;
                println!("final checkpoint at {}", path.display());
            }
            Ok(())
        }
        Command::Evaluate {
            config: _,
            checkpoint: ckpt_path,
            data,
            metrics,
        } => {
            let state = checkpoint::load_checkpoint(&ckpt_path)?;
            let dataset = Dataset::load_csv(&data)?;
            let report = evaluate(&state, dataset.samples())?;
            let mut sink = open_metrics(&metrics)?;
            sink.emit(&owr::metrics::MetricsRecord {
                phase: "evaluate".into(),
                step: state.incremental_step,
                epoch: None,
                loss: None,
                theta: state.threshold.theta,
                accuracies: Some(report.clone()),
            })?;
            print_report("evaluate", &report)?;
            Ok(())
        }
        Command::BaselineNno {
            config,
            splits,
            checkpoint_out,
            metrics,
        } => {
            let cfg = config.load()?;
            let split = match &splits {
                Some(dir) => load_split_dir(dir)?,
                None => split_from_cfg(&cfg, &synthetic_from_cfg(&cfg)?)?,
            };
            let pool = oracle_pool(&split)?;
            let mut oracle = build_oracle(&cfg, &pool)?;
            let mut sink = open_metrics(&metrics)?;
            let outcome = run_nno_baseline(&split, &cfg, oracle.as_mut(), sink.as_mut())?;
            println!("selected tau: {}", outcome.tau);
            for (i, report) in outcome.reports.iter().enumerate() {
                let label = if i == 0 {
                    "after-initial".to_string()
                } else {
                    format!("after-step-{i}")
                };
                print_report(&label, report)?;
            }
            if let Some(path) = checkpoint_out {
                checkpoint::save_baseline(&path, &outcome.baseline)?;
                println!("baseline checkpoint at {}", path.display());
            }
            Ok(())
        }
        Command::BaselineNcm {
            config,
            train,
            test,
        } => {
            let cfg = config.load()?;
            let train_set = Dataset::load_csv(&train)?;
            let test_set = Dataset::load_csv(&test)?;
            let mut rng = owr::rng::SplitMix64::new(cfg.seed);
            let network = owr::embedding::EmbeddingNetwork::new(
                train_set.dim(),
                &cfg.hidden_layers,
                cfg.embedding_dim,
                &mut rng,
            )?;
            let mut state = OwrState::new(network, train_set.class_ids(), cfg.memory_capacity)?;
            owr::protocol::train_initial(&mut state, &train_set, &cfg, &mut rng, &mut NullSink)?;

            // closed-world nearest-mean prediction on the trained embedding
            let metric = owr::baselines::LinearMetric::identity(
                cfg.embedding_dim,
                cfg.nno.metric_dim.unwrap_or(cfg.embedding_dim),
            )?;
            let mut correct = 0usize;
            for sample in test_set.samples() {
                let feature = state.network.forward(&sample.input)?;
                let predicted = owr::baselines::ncm_predict(&metric, &state.prototypes, &feature)?;
                if predicted == sample.label {
                    correct += 1;
                }
            }
            println!(
                "ncm closed-world accuracy: {:.4} ({correct}/{})",
                correct as f64 / test_set.len() as f64,
                test_set.len()
            );
            Ok(())
        }
    }
}
