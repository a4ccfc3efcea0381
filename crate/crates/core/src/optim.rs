//! Minibatch SGD with either a fixed step or the Lipschitz-adaptive step
//! `eta = 1 / (k_z * L)`.

use std::fmt;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{BqrError, Result};
use crate::loss::{lipschitz_const, LossSpec};
use crate::net::{Batch, QuantileNet};

pub const DEFAULT_KZ_FLOOR: f64 = 1e-3;
pub const DEFAULT_ETA_CAP: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrMode {
    Fixed(f64),
    Lalr,
}

impl fmt::Display for LrMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LrMode::Fixed(eta) => write!(f, "{eta}"),
            LrMode::Lalr => f.write_str("lalr"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_mode: LrMode,
    pub seed: u64,
    pub kz_floor: f64,
    pub eta_cap: f64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 128,
            lr_mode: LrMode::Lalr,
            seed: 0,
            kz_floor: DEFAULT_KZ_FLOOR,
            eta_cap: DEFAULT_ETA_CAP,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(BqrError::Config("batch_size must be positive".into()));
        }
        if let LrMode::Fixed(eta) = self.lr_mode {
            if !(eta > 0.0 && eta.is_finite()) {
                return Err(BqrError::Config(format!("fixed learning rate must be > 0, got {eta}")));
            }
        }
        if !(self.kz_floor > 0.0) {
            return Err(BqrError::Config("kz_floor must be > 0".into()));
        }
        if !(self.eta_cap > 0.0) {
            return Err(BqrError::Config("eta_cap must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
    pub eta: f64,
    pub kz: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub records: Vec<EpochRecord>,
}

impl TrainTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["epoch", "loss", "accuracy", "eta", "kz"])?;
        for r in &self.records {
            w.serialize((r.epoch, r.loss, r.accuracy, r.eta, r.kz))?;
        }
        w.flush().map_err(|e| BqrError::io("<trace>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| BqrError::io(path, e))?;
        self.write_csv(file)
    }
}

/// Largest output-to-weight gradient over the batch, floored at `floor`.
pub fn estimate_kz(net: &QuantileNet, features: ArrayView2<'_, f64>, floor: f64) -> Result<f64> {
    Ok(net.max_output_weight_gradient(features)?.max(floor))
}

/// `1 / (kz * lip)`, uncapped.
pub fn lalr_eta(kz: f64, lip: f64) -> Result<f64> {
    if !(kz > 0.0 && lip > 0.0) {
        return Err(BqrError::Domain(format!(
            "k_z and the Lipschitz constant must be positive (got {kz}, {lip})"
        )));
    }
    Ok(1.0 / (kz * lip))
}

/// Fraction of rows whose median head is positive exactly when the label is 1.
pub fn train_accuracy(net: &QuantileNet, data: &LabeledDataset) -> Result<f64> {
    let labels = data.labels()?;
    let median = net.grid().require_median()?;
    let out = net.forward_batch(data.features().view())?;
    let hits = out
        .column(median)
        .iter()
        .zip(labels)
        .filter(|(&z, &y)| u8::from(z > 0.0) == y)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Run SGD for `cfg.epochs` epochs. Under `LrMode::Lalr` the step is
/// recomputed at the start of each epoch from the epoch's first minibatch.
pub fn train(
    mut net: QuantileNet,
    data: &LabeledDataset,
    spec: &LossSpec,
    cfg: &TrainConfig,
) -> Result<(QuantileNet, TrainTrace)> {
    cfg.validate()?;
    let labels = data.labels()?;
    if labels.is_empty() {
        return Err(BqrError::EmptyBatch);
    }
    if data.dim() != net.input_dim() {
        return Err(BqrError::Shape {
            expected: net.input_dim(),
            got: data.dim(),
        });
    }
    if spec.grid() != net.grid() {
        return Err(BqrError::InvalidGrid("loss grid differs from network grid".into()));
    }
    let lip = lipschitz_const(spec);
    let features = data.features();
    let n = labels.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut trace = TrainTrace::default();
    let mut xb = Array2::zeros((cfg.batch_size.min(n), data.dim()));
    let mut yb = Vec::with_capacity(cfg.batch_size);

    for epoch in 1..=cfg.epochs {
        if cfg.shuffle {
            order.sort_unstable();
            let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed(cfg.seed, epoch));
            order.shuffle(&mut rng);
        }
        let mut eta = 0.0;
        let mut kz = 0.0;
        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            if xb.nrows() != chunk.len() {
                xb = Array2::zeros((chunk.len(), data.dim()));
            }
            yb.clear();
            for (row, &i) in chunk.iter().enumerate() {
                xb.row_mut(row).assign(&features.row(i));
                yb.push(labels[i]);
            }
            if b == 0 {
                kz = estimate_kz(&net, xb.view(), cfg.kz_floor)?;
                eta = match cfg.lr_mode {
                    LrMode::Fixed(eta) => eta,
                    LrMode::Lalr => lalr_eta(kz, lip)?.min(cfg.eta_cap),
                };
            }
            let step = match net.backward(Batch::new(xb.view(), &yb)?, spec) {
                Ok((grad, loss)) if loss.is_finite() && grad.max_abs().is_finite() => {
                    Some((grad, loss))
                }
                Ok(_) | Err(BqrError::Domain(_)) => None,
                Err(e) => return Err(e),
            };
            let Some((grad, loss)) = step else {
                return Err(BqrError::Diverged {
                    epoch,
                    trace: Box::new(trace),
                });
            };
            loss_sum += loss * chunk.len() as f64;
            net.apply_gradient(&grad, eta);
        }
        let accuracy = match net.grid().median_index() {
            Some(_) => train_accuracy(&net, data)?,
            None => f64::NAN,
        };
        trace.records.push(EpochRecord {
            epoch,
            loss: loss_sum / n as f64,
            accuracy,
            eta,
            kz,
        });
    }
    Ok((net, trace))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum EpochsToTarget {
    Reached(usize),
    NotReached { max_accuracy: f64 },
}

impl EpochsToTarget {
    pub fn epochs(&self) -> Option<usize> {
        match self {
            EpochsToTarget::Reached(n) => Some(*n),
            EpochsToTarget::NotReached { .. } => None,
        }
    }
}

impl fmt::Display for EpochsToTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EpochsToTarget::Reached(n) => write!(f, "{n}"),
            EpochsToTarget::NotReached { max_accuracy } => write!(f, "N/A ({max_accuracy:.3})"),
        }
    }
}

/// First epoch whose accuracy reaches `target`.
pub fn epochs_to_target(trace: &TrainTrace, target: f64) -> EpochsToTarget {
    trace
        .records
        .iter()
        .find(|r| r.accuracy >= target)
        .map(|r| EpochsToTarget::Reached(r.epoch))
        .unwrap_or_else(|| EpochsToTarget::NotReached {
            max_accuracy: trace
                .records
                .iter()
                .map(|r| r.accuracy)
                .filter(|a| a.is_finite())
                .fold(0.0, f64::max),
        })
}

/// Mean loss over the whole dataset without updating the net.
pub fn dataset_loss(net: &QuantileNet, data: &LabeledDataset, spec: &LossSpec) -> Result<f64> {
    let labels = data.labels()?;
    let (_, loss) = net.backward(Batch::new(data.features().view(), labels)?, spec)?;
    Ok(loss)
}
