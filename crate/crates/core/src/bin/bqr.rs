use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use sha2::{Digest, Sha256};

use bqr::data::{self, CsvOptions};
use bqr::experiment::{self, LrSetting, RunConfig};
use bqr::quantiles::DEFAULT_BANDWIDTH;
use bqr::{BqrError, LossKind, QuantileNet, Result};

#[derive(Parser)]
#[command(name = "bqr", version, about = "Binary quantile regression for ReLU networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a simulated dataset and write it as CSV.
    Simulate {
        #[command(flatten)]
        run: RunArgs,
        /// Output file (default `<out-dir>/dataset.csv`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a network; writes `checkpoint.json` and `trace.csv`.
    Train {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Score a checkpoint on the test split; writes coverage, delta and summary files.
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Cross-entropy vs quantile accuracy under flipped training labels.
    NoiseSweep {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.2,0.3,0.4")]
        fractions: Vec<f64>,
        #[arg(long, default_value_t = 5)]
        noise_seed: u64,
    },
    /// Epochs to a training-accuracy target for fixed and adaptive step sizes.
    LalrBench {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 0.99)]
        target: f64,
    },
    /// Smoothed quantile summaries for feature rows read from CSV.
    Smooth {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Headed CSV whose columns are exactly the model features.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = DEFAULT_BANDWIDTH)]
        h: f64,
        #[arg(long, default_value_t = 101)]
        points: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Config file plus overrides; flags win.
#[derive(Args, Default)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Generator id: D1..D6 or blobs.
    #[arg(long)]
    id: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// `median`, `pNN` or a number.
    #[arg(long)]
    threshold: Option<String>,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    label_column: Option<String>,
    #[arg(long)]
    csv_threshold: Option<f64>,
    #[arg(long)]
    split_seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    trunk: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<f64>>,
    #[arg(long)]
    lambda: Option<f64>,
    /// `bqr` or `bce`.
    #[arg(long)]
    loss: Option<String>,
    /// `lalr` or a fixed step size.
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    train_seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        let ds = &mut cfg.dataset;
        if let Some(id) = &self.id {
            ds.generator = Some(id.clone());
            ds.csv = None;
        }
        set(&mut ds.n, self.n);
        set(&mut ds.seed, self.seed);
        set(&mut ds.threshold, self.threshold.clone());
        if self.csv.is_some() {
            ds.csv = self.csv.clone();
        }
        set(&mut ds.label_column, self.label_column.clone());
        if self.csv_threshold.is_some() {
            ds.csv_threshold = self.csv_threshold;
        }
        set(&mut ds.split_seed, self.split_seed);
        let model = &mut cfg.model;
        set(&mut model.trunk, self.trunk.clone());
        set(&mut model.grid, self.grid.clone());
        set(&mut model.lambda, self.lambda);
        if let Some(loss) = &self.loss {
            model.loss = match loss.to_ascii_lowercase().as_str() {
                "bqr" => LossKind::Bqr,
                "bce" => LossKind::BceBaseline,
                other => return Err(BqrError::Config(format!("loss must be `bqr` or `bce`, got `{other}`"))),
            };
        }
        let train = &mut cfg.train;
        set(&mut train.lr, self.lr.clone().map(LrSetting::Named));
        set(&mut train.epochs, self.epochs);
        set(&mut train.batch_size, self.batch_size);
        set(&mut train.seed, self.train_seed);
        set(&mut cfg.output.dir, self.out_dir.clone());
        cfg.validate()?;
        Ok(cfg)
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.output.dir.clone();
    fs::create_dir_all(&dir).map_err(|e| BqrError::io(&dir, e))?;
    Ok(dir)
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| BqrError::io(path, e))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { run, out } => {
            let cfg = run.resolve()?;
            if cfg.dataset.csv.is_some() {
                return Err(BqrError::Config("simulate needs a generator, not a CSV file".into()));
            }
            let ds = cfg.load_dataset()?;
            let path = match out {
                Some(p) => p,
                None => out_dir(&cfg)?.join("dataset.csv"),
            };
            experiment::write_with_hash(&path, &cfg.hash(), |buf| ds.write_csv(buf, None))?;
            println!("wrote {} rows to {}", ds.n(), path.display());
        }
        Command::Train { run } => {
            let cfg = run.resolve()?;
            let dir = out_dir(&cfg)?;
            let (train, _) = cfg.split_dataset()?;
            let trace_path = dir.join("trace.csv");
            let hash = cfg.hash();
            let (net, trace) = match experiment::fit(&cfg, &train) {
                Ok(done) => done,
                Err(BqrError::Diverged { epoch, trace }) => {
                    experiment::write_with_hash(&trace_path, &hash, |buf| trace.write_csv(buf))?;
                    return Err(BqrError::Diverged { epoch, trace });
                }
                Err(e) => return Err(e),
            };
            experiment::write_with_hash(&trace_path, &hash, |buf| trace.write_csv(buf))?;
            net.save(dir.join("checkpoint.json"))?;
            fs::write(dir.join("config.toml"), cfg.to_toml_string()?)
                .map_err(|e| BqrError::io(dir.join("config.toml"), e))?;
            if let Some(last) = trace.records.last() {
                println!(
                    "epoch {}: loss {:.5}, train accuracy {:.4}, eta {:.3e}",
                    last.epoch, last.loss, last.accuracy, last.eta
                );
            }
            println!("wrote {}", dir.display());
        }
        Command::Evaluate { run, checkpoint } => {
            let cfg = run.resolve()?;
            let dir = out_dir(&cfg)?;
            let net = QuantileNet::load(&checkpoint)?;
            let (_, test) = cfg.split_dataset()?;
            let ev = experiment::evaluate(&net, &test)?;
            let hash = cfg.hash();
            if let Some(cov) = &ev.coverage {
                experiment::write_with_hash(&dir.join("coverage.csv"), &hash, |buf| {
                    cov.write_csv(buf, &ev.dataset)
                })?;
            }
            experiment::write_with_hash(&dir.join("delta.csv"), &hash, |buf| ev.delta.write_csv(buf))?;
            write_json(
                &dir.join("summary.json"),
                &json!({
                    "config_hash": hash,
                    "config": cfg,
                    "checkpoint": checkpoint,
                    "evaluation": ev,
                }),
            )?;
            for note in &ev.notes {
                println!("note: {note}");
            }
            println!("accuracy {:.4}, mean delta {:.3}", ev.accuracy, ev.mean_delta);
            println!("wrote {}", dir.display());
        }
        Command::NoiseSweep { run, fractions, noise_seed } => {
            let cfg = run.resolve()?;
            let dir = out_dir(&cfg)?;
            let sweep = experiment::noise_sweep(&cfg, &fractions, noise_seed)?;
            let path = dir.join("noise_sweep.csv");
            experiment::write_with_hash(&path, &cfg.hash(), |buf| sweep.write_csv(buf))?;
            println!("bce {:?}\nbqr {:?}", sweep.bce, sweep.bqr);
            println!("wrote {}", path.display());
        }
        Command::LalrBench { run, target } => {
            let cfg = run.resolve()?;
            let dir = out_dir(&cfg)?;
            let bench = experiment::lalr_bench(&cfg, target)?;
            let path = dir.join("lalr_bench.csv");
            experiment::write_with_hash(&path, &cfg.hash(), |buf| bench.write_csv(buf))?;
            println!("{bench}");
            println!("wrote {}", path.display());
        }
        Command::Smooth { checkpoint, input, h, points, out } => {
            let bytes = fs::read(&checkpoint).map_err(|e| BqrError::io(&checkpoint, e))?;
            let net = QuantileNet::load(&checkpoint)?;
            let mut opts = CsvOptions::new("");
            opts.scale = false;
            opts.ignore_columns = vec!["label".into(), "latent".into()];
            let rows = data::read_feature_csv(
                fs::File::open(&input).map_err(|e| BqrError::io(&input, e))?,
                &opts,
            )?;
            let smoothed = experiment::smooth_rows(&net, rows.features().view(), h, points)?;
            let mut hasher = Sha256::new();
            hasher.update(&bytes);
            hasher.update(h.to_le_bytes());
            hasher.update((points as u64).to_le_bytes());
            let hash = hex::encode(hasher.finalize());
            experiment::write_with_hash(&out, &hash, |buf| {
                experiment::write_smooth_csv(&smoothed, net.grid(), rows.feature_names(), buf)
            })?;
            println!("wrote {} rows to {}", smoothed.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}
