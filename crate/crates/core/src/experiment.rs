//! Run configuration and the end-to-end pipelines behind the `bqr` binary:
//! simulate, train, evaluate, label-noise sweeps, learning-rate benchmarks
//! and smoothing exports.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{self, CsvOptions, DatasetId, LabeledDataset, NoiseSpec, Threshold};
use crate::error::{BqrError, Result};
use crate::eval::{self, CoverageTable, DeltaBinReport};
use crate::loss::{LossKind, LossSpec};
use crate::net::{LatentPrediction, QuantileNet, TauGrid};
use crate::optim::{self, EpochsToTarget, LrMode, TrainConfig, TrainTrace};
use crate::quantiles::{self, ConfidenceReport, Functional};

/// Confidence thresholds reported in delta tables.
pub const DELTA_THRESHOLDS: [f64; 6] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5];

/// Source of simulated data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Generator {
    Latent(DatasetId),
    Blobs,
}

impl FromStr for Generator {
    type Err = BqrError;

    fn from_str(s: &str) -> Result<Self> {
        if s.trim().eq_ignore_ascii_case("blobs") {
            Ok(Generator::Blobs)
        } else {
            s.parse().map(Generator::Latent).map_err(|_| {
                BqrError::Config(format!(
                    "unknown dataset `{s}` (valid ids: D1, D2, D3, D4, D5, D6, blobs)"
                ))
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    /// `D1`..`D6`, or `blobs` for the two-blob task. Ignored when `csv` is set.
    pub generator: Option<String>,
    pub n: usize,
    pub seed: u64,
    /// `median`, `pNN` or a number.
    pub threshold: String,
    pub csv: Option<PathBuf>,
    pub label_column: String,
    pub delimiter: char,
    pub scale: bool,
    /// For CSV data with a real-valued target.
    pub csv_threshold: Option<f64>,
    /// CSV columns that are neither features nor the label.
    pub ignore_columns: Vec<String>,
    /// Two-blob task: class centres and per-coordinate standard deviation.
    pub blob_centers: [[f64; 2]; 2],
    pub blob_sd: f64,
    pub test_fraction: f64,
    pub split_seed: u64,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            generator: Some("D1".into()),
            n: 7000,
            seed: 7,
            threshold: "median".into(),
            csv: None,
            label_column: "label".into(),
            delimiter: ',',
            scale: true,
            csv_threshold: None,
            ignore_columns: vec!["latent".into()],
            blob_centers: [[0.2, 0.2], [0.6, 0.6]],
            blob_sd: 0.1,
            test_fraction: 0.3,
            split_seed: 11,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub trunk: Vec<usize>,
    pub grid: Vec<f64>,
    pub lambda: f64,
    pub loss: LossKind,
    pub init_seed: u64,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            trunk: vec![64, 64],
            grid: TauGrid::default().levels().to_vec(),
            lambda: 1.0,
            loss: LossKind::Bqr,
            init_seed: 1,
        }
    }
}

/// `lr = "lalr"` or `lr = 0.1` in the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LrSetting {
    Fixed(f64),
    Named(String),
}

impl LrSetting {
    pub fn to_mode(&self) -> Result<LrMode> {
        match self {
            LrSetting::Fixed(eta) => Ok(LrMode::Fixed(*eta)),
            LrSetting::Named(s) if s.eq_ignore_ascii_case("lalr") => Ok(LrMode::Lalr),
            LrSetting::Named(s) => s
                .parse::<f64>()
                .map(LrMode::Fixed)
                .map_err(|_| BqrError::Config(format!("lr must be `lalr` or a number, got `{s}`"))),
        }
    }
}

impl From<LrMode> for LrSetting {
    fn from(mode: LrMode) -> Self {
        match mode {
            LrMode::Fixed(eta) => LrSetting::Fixed(eta),
            LrMode::Lalr => LrSetting::Named("lalr".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub lr: LrSetting,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub kz_floor: f64,
    pub eta_cap: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            lr: LrSetting::Named("lalr".into()),
            epochs: 300,
            batch_size: 128,
            seed: 3,
            kz_floor: optim::DEFAULT_KZ_FLOOR,
            eta_cap: optim::DEFAULT_ETA_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: PathBuf::from("bqr-out"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub output: OutputSection,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| BqrError::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| BqrError::io(path, e))?;
        RunConfig::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| BqrError::Config(e.to_string()))
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serialises");
        hex::encode(Sha256::digest(json))
    }

    pub fn generator(&self) -> Result<Option<Generator>> {
        if self.dataset.csv.is_some() {
            return Ok(None);
        }
        match &self.dataset.generator {
            Some(id) => id.parse().map(Some),
            None => Err(BqrError::Config("dataset needs `generator` or `csv`".into())),
        }
    }

    pub fn grid(&self) -> Result<TauGrid> {
        TauGrid::new(self.model.grid.clone())
    }

    pub fn loss_spec(&self) -> Result<LossSpec> {
        match self.model.loss {
            LossKind::Bqr => LossSpec::bqr(self.grid()?, self.model.lambda),
            LossKind::BceBaseline => Ok(LossSpec::bce()),
        }
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let t = &self.train;
        if t.epochs == 0 {
            return Err(BqrError::Config("epochs must be positive".into()));
        }
        let cfg = TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr_mode: t.lr.to_mode()?,
            seed: t.seed,
            kz_floor: t.kz_floor,
            eta_cap: t.eta_cap,
            shuffle: true,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Check every precondition that can be checked without touching data.
    pub fn validate(&self) -> Result<()> {
        let ds = &self.dataset;
        self.generator()?;
        if ds.csv.is_none() {
            if ds.n < 2 {
                return Err(BqrError::Config("dataset.n must be at least 2".into()));
            }
            ds.threshold.parse::<Threshold>()?;
            if !(ds.blob_sd > 0.0 && ds.blob_sd.is_finite()) {
                return Err(BqrError::Config("blob_sd must be positive".into()));
            }
        }
        if !ds.delimiter.is_ascii() {
            return Err(BqrError::Config("delimiter must be a single ASCII character".into()));
        }
        if !(ds.test_fraction > 0.0 && ds.test_fraction < 1.0) {
            return Err(BqrError::Config("test_fraction must be in (0, 1)".into()));
        }
        if self.model.trunk.is_empty() || self.model.trunk.contains(&0) {
            return Err(BqrError::Config("trunk widths must be a non-empty list of positive sizes".into()));
        }
        let grid = self.grid()?;
        if self.model.loss == LossKind::Bqr {
            grid.require_median()?;
        }
        self.loss_spec()?;
        self.train_config()?;
        Ok(())
    }

    /// The full dataset with labels, before splitting.
    pub fn load_dataset(&self) -> Result<LabeledDataset> {
        let ds = &self.dataset;
        match (&ds.csv, self.generator()?) {
            (Some(path), _) => {
                let opts = CsvOptions {
                    label_column: ds.label_column.clone(),
                    delimiter: ds.delimiter as u8,
                    scale: ds.scale,
                    threshold: ds.csv_threshold,
                    ignore_columns: ds.ignore_columns.clone(),
                };
                data::load_csv(path, &opts)
            }
            (None, Some(Generator::Latent(id))) => {
                let threshold: Threshold = ds.threshold.parse()?;
                data::gen_dataset(id, ds.n, ds.seed)?.with_threshold(threshold)
            }
            (None, Some(Generator::Blobs)) => data::two_blobs(ds.n, ds.blob_centers, ds.blob_sd, ds.seed),
            (None, None) => Err(BqrError::Config("dataset needs `generator` or `csv`".into())),
        }
    }

    /// Train/test split of [`RunConfig::load_dataset`].
    pub fn split_dataset(&self) -> Result<(LabeledDataset, LabeledDataset)> {
        self.load_dataset()?
            .split(self.dataset.test_fraction, self.dataset.split_seed)
    }

    pub fn init_net(&self, input_dim: usize) -> Result<QuantileNet> {
        let grid = self.loss_spec()?.grid().clone();
        QuantileNet::init(input_dim, &self.model.trunk, grid, self.model.init_seed)
    }
}

/// Train a fresh net on `train` under `cfg`.
pub fn fit(cfg: &RunConfig, train: &LabeledDataset) -> Result<(QuantileNet, TrainTrace)> {
    let spec = cfg.loss_spec()?;
    let net = cfg.init_net(train.dim())?;
    optim::train(net, train, &spec, &cfg.train_config()?)
}

/// Test-set summary of a trained net.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub dataset: String,
    pub n: usize,
    pub accuracy: f64,
    pub auc: Option<f64>,
    /// AUC restricted to rows with `delta >= 0.3`.
    pub auc_confident: Option<f64>,
    pub mean_delta: f64,
    /// Fraction of rows whose quantile vector is non-decreasing.
    pub monotone_fraction: f64,
    pub delta: DeltaBinReport,
    /// Present only when the data carry a latent response.
    pub coverage: Option<CoverageTable>,
    /// Pearson correlation of the median estimate with the latent.
    pub latent_correlation: Option<f64>,
    /// Share of normalised latents inside the interpolated `[Q(0.25), Q(0.75)]`.
    pub pi50_coverage: Option<f64>,
    pub notes: Vec<String>,
}

pub fn confidence_reports(net: &QuantileNet, preds: ArrayView2<'_, f64>) -> Result<Vec<ConfidenceReport>> {
    preds
        .rows()
        .into_iter()
        .map(|r| quantiles::delta_score(&LatentPrediction::new(r.to_vec())?, net.grid()))
        .collect()
}

pub fn evaluate(net: &QuantileNet, test: &LabeledDataset) -> Result<Evaluation> {
    let labels = test.labels()?;
    let grid = net.grid();
    let med = grid.require_median()?;
    let preds = net.forward_batch(test.features().view())?;
    let median: Vec<f64> = preds.column(med).to_vec();
    let reports = confidence_reports(net, preds.view())?;
    let monotone = preds
        .rows()
        .into_iter()
        .filter(|r| r.windows(2).into_iter().all(|w| w[0] <= w[1]))
        .count();
    let mut notes = Vec::new();
    let (coverage, latent_correlation, pi50_coverage) = if test.has_latent() && test.threshold().is_some() {
        let (z, q) = data::normalize_for_coverage(test, preds.view(), grid)?;
        let cov = eval::coverage(&z, q.view(), grid)?;
        let corr = eval::pearson(&median, &z);
        let pi = match q
            .rows()
            .into_iter()
            .zip(&z)
            .map(|(row, &zi)| {
                let p = LatentPrediction::new(row.to_vec())?;
                let (lo, hi) = quantiles::prediction_interval(&p, grid, 0.5)?;
                Ok(lo <= zi && zi <= hi)
            })
            .collect::<Result<Vec<bool>>>()
        {
            Ok(inside) => Some(inside.iter().filter(|&&b| b).count() as f64 / inside.len() as f64),
            Err(BqrError::OutOfGrid { .. }) => {
                notes.push("grid does not span [0.25, 0.75]; 50% interval skipped".into());
                None
            }
            Err(e) => return Err(e),
        };
        (Some(cov), corr, pi)
    } else {
        notes.push("no latent response in test data; coverage skipped".into());
        (None, None, None)
    };
    Ok(Evaluation {
        dataset: test.name().to_string(),
        n: test.n(),
        accuracy: eval::accuracy_from_scores(&median, labels)?,
        auc: eval::roc_auc(&median, labels)?,
        auc_confident: eval::roc_auc_at_delta(&median, labels, &reports, 0.3)?,
        mean_delta: reports.iter().map(|r| r.delta).sum::<f64>() / reports.len() as f64,
        monotone_fraction: monotone as f64 / test.n() as f64,
        delta: eval::delta_report(&reports, labels, &DELTA_THRESHOLDS)?,
        coverage,
        latent_correlation,
        pi50_coverage,
        notes,
    })
}

/// Accuracy of the quantile model and the cross-entropy baseline per flip fraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSweep {
    pub dataset: String,
    pub fractions: Vec<f64>,
    pub bce: Vec<f64>,
    pub bqr: Vec<f64>,
}

impl NoiseSweep {
    /// Two rows (`bce`, `bqr`), one accuracy column per flip percentage.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["dataset".to_string(), "loss".to_string()];
        header.extend(self.fractions.iter().map(|f| format!("{:.0}%", f * 100.0)));
        w.write_record(&header)?;
        for (name, row) in [("bce", &self.bce), ("bqr", &self.bqr)] {
            let mut rec = vec![self.dataset.clone(), name.to_string()];
            rec.extend(row.iter().map(|a| format!("{a:.4}")));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| BqrError::io("<csv>", e))?;
        Ok(())
    }
}

/// Train both arms on label-flipped copies of the training split and score
/// them on the clean test split.
pub fn noise_sweep(cfg: &RunConfig, fractions: &[f64], noise_seed: u64) -> Result<NoiseSweep> {
    let specs: Vec<NoiseSpec> = fractions
        .iter()
        .map(|&f| NoiseSpec::new(f, noise_seed))
        .collect::<Result<_>>()?;
    cfg.validate()?;
    let (train, test) = cfg.split_dataset()?;
    let labels = test.labels()?;
    let mut bqr_cfg = cfg.clone();
    bqr_cfg.model.loss = LossKind::Bqr;
    let mut bce_cfg = cfg.clone();
    bce_cfg.model.loss = LossKind::BceBaseline;
    let mut bce = Vec::new();
    let mut bqr = Vec::new();
    for spec in &specs {
        let noisy = data::flip_labels(&train, spec)?;
        for (arm, out) in [(&bce_cfg, &mut bce), (&bqr_cfg, &mut bqr)] {
            let (net, _) = fit(arm, &noisy)?;
            let med = net.grid().require_median()?;
            let preds = net.forward_batch(test.features().view())?;
            out.push(eval::accuracy_from_scores(&preds.column(med).to_vec(), labels)?);
        }
    }
    Ok(NoiseSweep {
        dataset: train.name().to_string(),
        fractions: fractions.to_vec(),
        bce,
        bqr,
    })
}

/// Epochs to reach a training-accuracy target under three step-size rules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LalrBench {
    pub dataset: String,
    pub target: f64,
    pub fixed_001: EpochsToTarget,
    pub fixed_01: EpochsToTarget,
    pub lalr: EpochsToTarget,
}

impl LalrBench {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["dataset", "target", "N_0.01", "N_0.1", "N_1/L"])?;
        w.write_record([
            self.dataset.clone(),
            format!("{:.3}", self.target),
            self.fixed_001.to_string(),
            self.fixed_01.to_string(),
            self.lalr.to_string(),
        ])?;
        w.flush().map_err(|e| BqrError::io("<csv>", e))?;
        Ok(())
    }
}

impl fmt::Display for LalrBench {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} target {:.3}: eta=0.01 -> {}, eta=0.1 -> {}, eta=1/(k_z L) -> {}",
            self.dataset, self.target, self.fixed_001, self.fixed_01, self.lalr
        )
    }
}

/// Train the same initial net on the training split with fixed steps 0.01
/// and 0.1 and with the adaptive step; `cfg.train.epochs` bounds each arm.
pub fn lalr_bench(cfg: &RunConfig, target: f64) -> Result<LalrBench> {
    if !(target > 0.0 && target <= 1.0) {
        return Err(BqrError::Config(format!("target accuracy must be in (0, 1], got {target}")));
    }
    cfg.validate()?;
    let (train, _) = cfg.split_dataset()?;
    let run = |mode: LrMode| -> Result<EpochsToTarget> {
        let mut c = cfg.clone();
        c.train.lr = mode.into();
        let trace = match fit(&c, &train) {
            Ok((_, trace)) => trace,
            Err(BqrError::Diverged { trace, .. }) => *trace,
            Err(e) => return Err(e),
        };
        Ok(optim::epochs_to_target(&trace, target))
    };
    Ok(LalrBench {
        dataset: train.name().to_string(),
        target,
        fixed_001: run(LrMode::Fixed(0.01))?,
        fixed_01: run(LrMode::Fixed(0.1))?,
        lalr: run(LrMode::Lalr)?,
    })
}

/// Smoothed summaries of one input row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothRow {
    pub features: Vec<f64>,
    pub quantiles: Vec<f64>,
    pub smoothed: Vec<(f64, f64)>,
    pub mean: f64,
    pub variance: f64,
    pub delta: f64,
    pub label: u8,
    /// 80% interval `[Q(0.1), Q(0.9)]` on the default grid.
    pub interval: Option<(f64, f64)>,
}

/// Evaluate the net on each row and post-process with bandwidth `h`.
pub fn smooth_rows(net: &QuantileNet, rows: ArrayView2<'_, f64>, h: f64, points: usize) -> Result<Vec<SmoothRow>> {
    let grid = net.grid();
    net.predict(rows)?
        .into_iter()
        .zip(rows.rows())
        .map(|(pred, x)| {
            let sq = quantiles::smooth(&pred, grid, h)?;
            let conf = quantiles::delta_score(&pred, grid)?;
            let interval = match quantiles::prediction_interval(&pred, grid, 0.2) {
                Ok(iv) => Some(iv),
                Err(BqrError::OutOfGrid { .. }) => None,
                Err(e) => return Err(e),
            };
            Ok(SmoothRow {
                features: x.to_vec(),
                quantiles: pred.values().to_vec(),
                smoothed: sq.sample(points),
                mean: quantiles::conditional_mean(&sq),
                variance: quantiles::conditional_stat(&sq, Functional::Variance),
                delta: conf.delta,
                label: conf.predicted_label,
                interval,
            })
        })
        .collect()
}

/// Wide CSV: features, `q_*`, `qs_<tau>` samples, mean, variance, delta, label, PI.
pub fn write_smooth_csv<W: Write>(rows: &[SmoothRow], grid: &TauGrid, feature_names: &[String], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let Some(first) = rows.first() else {
        return Ok(());
    };
    let mut header: Vec<String> = feature_names.to_vec();
    header.extend(grid.levels().iter().map(|&t| data::quantile_column(t)));
    header.extend(first.smoothed.iter().map(|(t, _)| format!("qs_{t:.4}")));
    header.extend(["mean", "variance", "delta", "label", "pi_low", "pi_high"].map(String::from));
    w.write_record(&header)?;
    for r in rows {
        let mut rec: Vec<String> = r.features.iter().map(|v| v.to_string()).collect();
        rec.extend(r.quantiles.iter().map(|v| v.to_string()));
        rec.extend(r.smoothed.iter().map(|(_, q)| q.to_string()));
        rec.push(r.mean.to_string());
        rec.push(r.variance.to_string());
        rec.push(r.delta.to_string());
        rec.push(r.label.to_string());
        let (lo, hi) = r
            .interval
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .unwrap_or_else(|| ("NA".into(), "NA".into()));
        rec.push(lo);
        rec.push(hi);
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| BqrError::io("<csv>", e))?;
    Ok(())
}

/// Writes `# config-hash: <hex>` then the body produced by `body`.
pub fn write_with_hash<F>(path: &Path, hash: &str, body: F) -> Result<()>
where
    F: FnOnce(&mut Vec<u8>) -> Result<()>,
{
    let mut buf = format!("# config-hash: {hash}\n").into_bytes();
    body(&mut buf)?;
    std::fs::write(path, buf).map_err(|e| BqrError::io(path, e))
}
