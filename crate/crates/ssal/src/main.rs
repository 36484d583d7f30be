use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ssal::checkpoint::Checkpoint;
use ssal::config::{DatasetKind, RunConfig};
use ssal::embeddings::export_embeddings;
use ssal::labeler::{serve, HumanOracle, LabelQueue};
use ssal::metrics::{MetricsWriter, RunSummary, SeedResult};
use ssal::recorder::RunRecorder;
use ssal_core::datasets::{Dataset, SplitState};
use ssal_core::oracle::{Oracle, SimulatedOracle};
use ssal_core::trainer::{evaluate, Trainer};

#[derive(Parser)]
#[command(name = "ssal", version, about = "Semi-supervised contrastive training with active label queries")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Dataset: cifar10, cifar100 or blobs. SVHN is not supported.
    #[arg(long)]
    dataset: Option<DatasetKind>,
    /// Directory with the CIFAR binary batch files.
    #[arg(long)]
    data_dir: Option<PathBuf>,
}

impl DataArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(d) = self.dataset {
            cfg.data.dataset = d;
        }
        if let Some(dir) = &self.data_dir {
            cfg.data.dir = Some(dir.clone());
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum OracleKind {
    Sim,
    Human,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run, or one run per seed with a summary.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "sim")]
        oracle: OracleKind,
        /// Label service address for `--oracle human`.
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
        /// Static files (the labeling UI) served next to the API.
        #[arg(long)]
        static_dir: Option<PathBuf>,
        /// Continue from a checkpoint; its saved configuration is used.
        #[arg(long, conflicts_with_all = ["config", "seeds"])]
        resume: Option<PathBuf>,
        #[arg(long, default_value = "runs/latest")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Comma-separated seeds; writes summary.json with mean and standard deviation.
        #[arg(long, value_delimiter = ',', conflicts_with = "seed")]
        seeds: Vec<u64>,
        /// Also write a metrics line every N steps.
        #[arg(long, default_value_t = 0)]
        log_steps: u64,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Test accuracy of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Write projection-space embeddings as CSV.
    ExportEmbeddings {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Serve the label API with a scripted set of queries and print each answer.
    ServeLabeler {
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
        #[arg(long)]
        static_dir: Option<PathBuf>,
        /// Number of training images to queue, in index order.
        #[arg(long, default_value_t = 5)]
        queries: usize,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        data: DataArgs,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

fn load_config(path: Option<&Path>, data: &DataArgs) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    data.apply(&mut cfg);
    Ok(cfg)
}

fn load_data(cfg: &RunConfig) -> Result<(Dataset, Dataset)> {
    let (train, test) = cfg.data.load()?;
    log::info!(
        "{:?}: {} train / {} test images, {} classes",
        cfg.data.dataset,
        train.len(),
        test.len(),
        train.num_classes()
    );
    Ok((train, test))
}

struct TrainOpts {
    oracle: OracleKind,
    bind: String,
    static_dir: Option<PathBuf>,
    log_steps: u64,
}

fn train_one(cfg: &RunConfig, out: &Path, resume: Option<Checkpoint>, opts: &TrainOpts) -> Result<SeedResult> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("config.toml"), cfg.to_toml())?;
    let (train, test) = load_data(cfg)?;
    let trainer = Trainer::new(cfg.train.clone(), &train, &test)?;
    let reachable = cfg.train.reachable_labels();
    if reachable < cfg.train.active.budget {
        log::warn!(
            "the query schedule reaches only {reachable} of {} labels within {} steps",
            cfg.train.active.budget,
            cfg.train.steps
        );
    }
    let metrics = MetricsWriter::append(&out.join("metrics.jsonl"))?;
    let mut recorder = RunRecorder::new(cfg.clone(), metrics, out.join("checkpoint.json"));
    recorder.step_log_every = opts.log_steps;

    let mut sim;
    let mut human;
    let _server;
    let oracle: &mut dyn Oracle = match opts.oracle {
        OracleKind::Sim => {
            sim = SimulatedOracle::new(&train);
            &mut sim
        }
        OracleKind::Human => {
            let queue = LabelQueue::new(16);
            let server = serve(&opts.bind, queue.clone(), opts.static_dir.clone())?;
            log::info!("label service on http://{}", server.local_addr());
            recorder = recorder.with_status(queue.clone());
            _server = server;
            human = HumanOracle::new(queue);
            &mut human
        }
    };
    let state = match resume {
        Some(ck) => ck.restore()?,
        None => trainer.initial_state(oracle)?,
    };
    let outcome = trainer.run(state, oracle, &mut recorder)?;
    let labels = outcome.state.split.labeled_count();
    log::info!("final accuracy {:.4} with {labels} labels", outcome.final_accuracy);
    Ok(SeedResult {
        seed: cfg.train.seed,
        final_accuracy: outcome.final_accuracy,
        labels,
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            config,
            oracle,
            bind,
            static_dir,
            resume,
            out,
            seed,
            seeds,
            log_steps,
            data,
        } => {
            let opts = TrainOpts {
                oracle,
                bind,
                static_dir,
                log_steps,
            };
            if let Some(path) = resume {
                let ck = Checkpoint::load(&path)?;
                let mut cfg = ck.config.clone();
                data.apply(&mut cfg);
                let result = train_one(&cfg, &out, Some(ck), &opts)?;
                RunSummary::new(vec![result]).save(&out.join("summary.json"))?;
                return Ok(());
            }
            let mut cfg = load_config(config.as_deref(), &data)?;
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            let results = if seeds.is_empty() {
                vec![train_one(&cfg, &out, None, &opts)?]
            } else {
                let mut results = Vec::new();
                for s in &seeds {
                    let mut c = cfg.clone();
                    c.train.seed = *s;
                    results.push(train_one(&c, &out.join(format!("seed-{s}")), None, &opts)?);
                }
                results
            };
            let summary = RunSummary::new(results);
            summary.save(&out.join("summary.json"))?;
            println!("{}", serde_json::to_string(&summary)?);
        }
        Command::Eval { checkpoint, data } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let mut cfg = ck.config.clone();
            data.apply(&mut cfg);
            let (_, test) = load_data(&cfg)?;
            let net = ck.network()?;
            let accuracy = evaluate(&net, &test)?;
            println!(
                "{}",
                serde_json::json!({
                    "accuracy": accuracy,
                    "test_images": test.len(),
                    "step": ck.progress.steps_done,
                    "labels": ck.split.labeled_count(),
                })
            );
        }
        Command::ExportEmbeddings {
            checkpoint,
            out,
            split,
            data,
        } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let mut cfg = ck.config.clone();
            data.apply(&mut cfg);
            let (train, test) = load_data(&cfg)?;
            let ds = match split {
                SplitArg::Train => &train,
                SplitArg::Test => &test,
            };
            let rows = export_embeddings(&ck.network()?, ds, &out)?;
            log::info!("wrote {rows} rows to {}", out.display());
        }
        Command::ServeLabeler {
            bind,
            static_dir,
            queries,
            config,
            data,
        } => {
            let cfg = load_config(config.as_deref(), &data)?;
            let (train, _) = load_data(&cfg)?;
            if queries > train.len() {
                bail!("--queries {queries} exceeds the {} training images", train.len());
            }
            let queue = LabelQueue::new(16);
            queue.update_status(|s| s.budget = queries);
            let server = serve(&bind, queue.clone(), static_dir)?;
            eprintln!("label service on http://{}", server.local_addr());
            let mut oracle = HumanOracle::new(queue.clone());
            let mut split = SplitState::unlabeled(train.len());
            for index in 0..queries {
                let query = split.issue_query(&train, index)?;
                let answer = oracle.ask(&query, None)?;
                split.record_answer(&query, &answer)?;
                queue.update_status(|s| s.labels_collected = split.labeled_count());
                println!(
                    "{}",
                    serde_json::json!({ "query_id": answer.query_id, "dataset_index": index, "label": answer.label })
                );
            }
            queue.update_status(|s| s.finished = true);
            // Let a polling client see the final status before exiting.
            std::thread::sleep(Duration::from_millis(200));
            server.shutdown();
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
