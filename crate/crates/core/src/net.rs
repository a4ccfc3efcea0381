//! Shared-trunk ReLU network with one linear head per quantile level.
//!
//! The trunk `g_c` is a stack of dense ReLU layers shared by every quantile.
//! The heads are stored as a single `(m, width)` matrix whose row `j` is the
//! scalar linear head for `grid.levels()[j]`.
//!
//! Parameters flatten in a fixed order: for each trunk layer its weights
//! (row-major, `out x in`) then its bias, followed by the head weights
//! (row-major, `m x width`) and the head biases. Checkpoints and gradients
//! use the same order.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{BqrError, Result};
use crate::loss::{self, LossSpec};

/// Tolerance used when matching a level against 0.5 or testing symmetry.
pub const GRID_TOL: f64 = 1e-12;

/// Ordered quantile levels, each strictly inside (0, 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TauGrid {
    levels: Vec<f64>,
}

impl TauGrid {
    pub fn new(levels: Vec<f64>) -> Result<Self> {
        if levels.is_empty() {
            return Err(BqrError::InvalidGrid("grid has no levels".into()));
        }
        for &t in &levels {
            if !(t > 0.0 && t < 1.0) {
                return Err(BqrError::InvalidGrid(format!(
                    "level {t} is not strictly inside (0, 1)"
                )));
            }
        }
        if levels.windows(2).any(|w| w[1] <= w[0]) {
            return Err(BqrError::InvalidGrid(
                "levels must be strictly increasing".into(),
            ));
        }
        Ok(TauGrid { levels })
    }

    /// Evenly spaced levels `k / (m + 1)` for `k = 1..=m`.
    pub fn uniform(m: usize) -> Result<Self> {
        let denom = (m + 1) as f64;
        TauGrid::new((1..=m).map(|k| k as f64 / denom).collect())
    }

    /// A grid with the median as its only level.
    pub fn median_only() -> Self {
        TauGrid { levels: vec![0.5] }
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn position(&self, tau: f64) -> Option<usize> {
        self.levels.iter().position(|&t| (t - tau).abs() <= GRID_TOL)
    }

    pub fn median_index(&self) -> Option<usize> {
        self.position(0.5)
    }

    pub fn require_median(&self) -> Result<usize> {
        self.median_index()
            .ok_or_else(|| BqrError::InvalidGrid("grid does not contain 0.5".into()))
    }

    pub fn is_symmetric(&self) -> bool {
        let n = self.levels.len();
        (0..n).all(|i| (self.levels[i] + self.levels[n - 1 - i] - 1.0).abs() <= GRID_TOL)
    }
}

impl Default for TauGrid {
    /// The nine deciles `0.1, 0.2, ..., 0.9`.
    fn default() -> Self {
        TauGrid::uniform(9).expect("decile grid is valid")
    }
}

impl TryFrom<Vec<f64>> for TauGrid {
    type Error = BqrError;

    fn try_from(levels: Vec<f64>) -> Result<Self> {
        TauGrid::new(levels)
    }
}

impl From<TauGrid> for Vec<f64> {
    fn from(grid: TauGrid) -> Self {
        grid.levels
    }
}

/// Latent quantile estimates for one sample, one value per grid level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentPrediction {
    values: Vec<f64>,
}

impl LatentPrediction {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(BqrError::Domain(format!("non-finite latent value {v}")));
        }
        Ok(LatentPrediction { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Number of adjacent pairs where the estimate decreases.
    pub fn crossings(&self) -> usize {
        self.values.windows(2).filter(|w| w[1] < w[0]).count()
    }

    pub fn is_monotone(&self) -> bool {
        self.crossings() == 0
    }

    pub(crate) fn check_len(&self, grid: &TauGrid) -> Result<()> {
        if self.values.len() != grid.len() {
            return Err(BqrError::Shape {
                expected: grid.len(),
                got: self.values.len(),
            });
        }
        Ok(())
    }
}

/// Dense affine layer with weights of shape `(out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Dense {
            weights: Array2::zeros((out_dim, in_dim)),
            bias: Array1::zeros(out_dim),
        }
    }

    fn random(out_dim: usize, in_dim: usize, variance: f64, rng: &mut ChaCha8Rng) -> Self {
        let normal = Normal::new(0.0, variance.sqrt()).expect("positive variance");
        let weights = Array2::from_shape_fn((out_dim, in_dim), |_| normal.sample(rng));
        Dense {
            weights,
            bias: Array1::zeros(out_dim),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// `x W^T + b` for a row-major batch.
    fn affine(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = x.dot(&self.weights.t());
        out += &self.bias;
        if out.is_standard_layout() {
            out
        } else {
            out.as_standard_layout().into_owned()
        }
    }
}

/// Minibatch of row-major features with binary labels.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub features: ArrayView2<'a, f64>,
    pub labels: &'a [u8],
}

impl<'a> Batch<'a> {
    pub fn new(features: ArrayView2<'a, f64>, labels: &'a [u8]) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(BqrError::Shape {
                expected: features.nrows(),
                got: labels.len(),
            });
        }
        Ok(Batch { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Gradient with the same layer layout as [`QuantileNet`]: trunk layers
/// first, head bank last.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub layers: Vec<Dense>,
}

impl Gradient {
    pub fn flatten(&self) -> Vec<f64> {
        flatten_layers(self.layers.iter())
    }

    /// Largest absolute coordinate.
    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()))
            .fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantileNet {
    input_dim: usize,
    trunk: Vec<Dense>,
    heads: Dense,
    grid: TauGrid,
}

struct Activations {
    /// `inputs[l]` is the input of trunk layer `l`; the last entry feeds the heads.
    inputs: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl QuantileNet {
    /// He-scaled trunk weights (variance `2 / fan_in`), head weights with
    /// variance `1 / fan_in`, zero biases.
    pub fn init(input_dim: usize, trunk_widths: &[usize], grid: TauGrid, seed: u64) -> Result<Self> {
        if input_dim == 0 {
            return Err(BqrError::InvalidArchitecture("input_dim must be positive".into()));
        }
        if trunk_widths.is_empty() {
            return Err(BqrError::InvalidArchitecture(
                "trunk needs at least one layer".into(),
            ));
        }
        if let Some(i) = trunk_widths.iter().position(|&w| w == 0) {
            return Err(BqrError::InvalidArchitecture(format!(
                "trunk layer {i} has zero width"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut trunk = Vec::with_capacity(trunk_widths.len());
        let mut fan_in = input_dim;
        for &width in trunk_widths {
            trunk.push(Dense::random(width, fan_in, 2.0 / fan_in as f64, &mut rng));
            fan_in = width;
        }
        let heads = Dense::random(grid.len(), fan_in, 1.0 / fan_in as f64, &mut rng);
        Ok(QuantileNet {
            input_dim,
            trunk,
            heads,
            grid,
        })
    }

    /// Build a net from explicit layers. The last trunk width must match the
    /// head input width and the head count must match the grid.
    pub fn from_layers(trunk: Vec<Dense>, heads: Dense, grid: TauGrid) -> Result<Self> {
        let input_dim = trunk
            .first()
            .map(Dense::in_dim)
            .ok_or_else(|| BqrError::InvalidArchitecture("trunk needs at least one layer".into()))?;
        let mut fan_in = input_dim;
        for (i, layer) in trunk.iter().enumerate() {
            if layer.in_dim() != fan_in || layer.bias.len() != layer.out_dim() {
                return Err(BqrError::InvalidArchitecture(format!(
                    "trunk layer {i} does not chain from width {fan_in}"
                )));
            }
            if layer.out_dim() == 0 {
                return Err(BqrError::InvalidArchitecture(format!(
                    "trunk layer {i} has zero width"
                )));
            }
            fan_in = layer.out_dim();
        }
        if heads.in_dim() != fan_in || heads.out_dim() != grid.len() || heads.bias.len() != grid.len() {
            return Err(BqrError::InvalidArchitecture(format!(
                "head bank must be {} x {fan_in}",
                grid.len()
            )));
        }
        let net = QuantileNet {
            input_dim,
            trunk,
            heads,
            grid,
        };
        if net.params().iter().any(|v| !v.is_finite()) {
            return Err(BqrError::InvalidArchitecture("non-finite parameter".into()));
        }
        Ok(net)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn grid(&self) -> &TauGrid {
        &self.grid
    }

    pub fn trunk(&self) -> &[Dense] {
        &self.trunk
    }

    pub fn heads(&self) -> &Dense {
        &self.heads
    }

    pub fn trunk_widths(&self) -> Vec<usize> {
        self.trunk.iter().map(Dense::out_dim).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers().map(Dense::param_count).sum()
    }

    fn layers(&self) -> impl Iterator<Item = &Dense> {
        self.trunk.iter().chain(std::iter::once(&self.heads))
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut Dense> {
        self.trunk.iter_mut().chain(std::iter::once(&mut self.heads))
    }

    pub fn params(&self) -> Vec<f64> {
        flatten_layers(self.layers())
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        let expected = self.param_count();
        if flat.len() != expected {
            return Err(BqrError::Shape {
                expected,
                got: flat.len(),
            });
        }
        let mut offset = 0;
        for layer in self.layers_mut() {
            for w in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                *w = flat[offset];
                offset += 1;
            }
        }
        Ok(())
    }

    /// In-place SGD step `w <- w - eta * grad`.
    pub fn apply_gradient(&mut self, grad: &Gradient, eta: f64) {
        for (layer, g) in self.layers_mut().zip(&grad.layers) {
            layer.weights.scaled_add(-eta, &g.weights);
            layer.bias.scaled_add(-eta, &g.bias);
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<LatentPrediction> {
        if x.len() != self.input_dim {
            return Err(BqrError::Shape {
                expected: self.input_dim,
                got: x.len(),
            });
        }
        let row = ArrayView2::from_shape((1, x.len()), x).expect("contiguous row");
        let out = self.forward_batch(row)?;
        LatentPrediction::new(out.row(0).to_vec())
    }

    /// Latent quantiles for every row; output shape `(rows, m)`.
    pub fn forward_batch(&self, features: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_features(features)?;
        Ok(self.activations(features).output)
    }

    /// Per-row predictions as [`LatentPrediction`] values.
    pub fn predict(&self, features: ArrayView2<'_, f64>) -> Result<Vec<LatentPrediction>> {
        let out = self.forward_batch(features)?;
        out.rows()
            .into_iter()
            .map(|r| LatentPrediction::new(r.to_vec()))
            .collect()
    }

    fn check_features(&self, features: ArrayView2<'_, f64>) -> Result<()> {
        if features.ncols() != self.input_dim {
            return Err(BqrError::Shape {
                expected: self.input_dim,
                got: features.ncols(),
            });
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(BqrError::Domain("non-finite feature value".into()));
        }
        Ok(())
    }

    fn activations(&self, features: ArrayView2<'_, f64>) -> Activations {
        let mut inputs = Vec::with_capacity(self.trunk.len() + 1);
        inputs.push(features.to_owned());
        for layer in &self.trunk {
            let mut h = layer.affine(inputs.last().expect("non-empty").view());
            h.mapv_inplace(|v| v.max(0.0));
            inputs.push(h);
        }
        let output = self.heads.affine(inputs.last().expect("non-empty").view());
        Activations { inputs, output }
    }

    /// Gradient of the batch-mean loss with respect to every parameter,
    /// together with the batch-mean loss itself.
    ///
    /// ReLU units with zero pre-activation pass no gradient.
    pub fn backward(&self, batch: Batch<'_>, spec: &LossSpec) -> Result<(Gradient, f64)> {
        if batch.is_empty() {
            return Err(BqrError::EmptyBatch);
        }
        self.check_features(batch.features)?;
        if spec.grid().len() != self.grid.len() {
            return Err(BqrError::Shape {
                expected: self.grid.len(),
                got: spec.grid().len(),
            });
        }
        let acts = self.activations(batch.features);
        let n = batch.len() as f64;
        let mut d_out = Array2::zeros(acts.output.raw_dim());
        let mut total = 0.0;
        for ((z, mut dz), &y) in acts
            .output
            .rows()
            .into_iter()
            .zip(d_out.rows_mut())
            .zip(batch.labels)
        {
            let z = z.as_slice().expect("standard layout");
            let dz = dz.as_slice_mut().expect("standard layout");
            total += loss::row_loss_and_grad(y, z, spec, dz)?;
        }
        d_out /= n;
        Ok((self.backprop(&acts, d_out), total / n))
    }

    fn backprop(&self, acts: &Activations, d_out: Array2<f64>) -> Gradient {
        let mut layers = Vec::with_capacity(self.trunk.len() + 1);
        let last_in = acts.inputs.last().expect("non-empty");
        layers.push(Dense {
            weights: d_out.t().dot(last_in),
            bias: d_out.sum_axis(Axis(0)),
        });
        let mut d_act = d_out.dot(&self.heads.weights);
        for (l, layer) in self.trunk.iter().enumerate().rev() {
            let post = &acts.inputs[l + 1];
            ndarray::Zip::from(&mut d_act)
                .and(post)
                .for_each(|d, &h| {
                    if h <= 0.0 {
                        *d = 0.0;
                    }
                });
            layers.push(Dense {
                weights: d_act.t().dot(&acts.inputs[l]),
                bias: d_act.sum_axis(Axis(0)),
            });
            if l > 0 {
                d_act = d_act.dot(&layer.weights);
            }
        }
        layers.reverse();
        Gradient { layers }
    }

    /// Largest absolute partial derivative of any network output with respect
    /// to any weight (biases excluded), over the rows of `features`.
    ///
    /// For a dense layer the per-sample weight gradient is an outer product,
    /// so its max-norm is `max|delta| * max|input|`.
    pub fn max_output_weight_gradient(&self, features: ArrayView2<'_, f64>) -> Result<f64> {
        if features.nrows() == 0 {
            return Err(BqrError::EmptyBatch);
        }
        self.check_features(features)?;
        let acts = self.activations(features);
        let row_max: Vec<Vec<f64>> = acts
            .inputs
            .iter()
            .map(|a| {
                a.rows()
                    .into_iter()
                    .map(|r| r.iter().fold(0.0_f64, |m, v| m.max(v.abs())))
                    .collect()
            })
            .collect();
        let rows = features.nrows();
        let head_in = row_max.last().expect("non-empty");
        let mut best = head_in.iter().copied().fold(0.0_f64, f64::max);
        for j in 0..self.grid.len() {
            let head_row = self.heads.weights.row(j);
            let mut d_act = Array2::from_shape_fn((rows, head_row.len()), |(_, k)| head_row[k]);
            for (l, layer) in self.trunk.iter().enumerate().rev() {
                let post = &acts.inputs[l + 1];
                ndarray::Zip::from(&mut d_act).and(post).for_each(|d, &h| {
                    if h <= 0.0 {
                        *d = 0.0;
                    }
                });
                for (b, delta) in d_act.rows().into_iter().enumerate() {
                    let dmax = delta.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
                    best = best.max(dmax * row_max[l][b]);
                }
                if l > 0 {
                    d_act = d_act.dot(&layer.weights);
                }
            }
        }
        Ok(best)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(&Checkpoint::from_net(self))?;
        std::fs::write(path, json).map_err(|e| BqrError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| BqrError::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        ckpt.into_net()
    }
}

fn flatten_layers<'a>(layers: impl Iterator<Item = &'a Dense>) -> Vec<f64> {
    let mut out = Vec::new();
    for l in layers {
        out.extend(l.weights.iter());
        out.extend(l.bias.iter());
    }
    out
}

pub const CHECKPOINT_FORMAT: &str = "bqr-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// On-disk form of a [`QuantileNet`]. `params` uses the flattening order
/// described at the top of this module.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub input_dim: usize,
    pub trunk_widths: Vec<usize>,
    pub grid: Vec<f64>,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn from_net(net: &QuantileNet) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            input_dim: net.input_dim,
            trunk_widths: net.trunk_widths(),
            grid: net.grid.levels().to_vec(),
            params: net.params(),
        }
    }

    pub fn into_net(self) -> Result<QuantileNet> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(BqrError::Checkpoint(format!("unknown format `{}`", self.format)));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(BqrError::Checkpoint(format!(
                "unsupported version {}",
                self.version
            )));
        }
        let grid = TauGrid::new(self.grid)?;
        let mut trunk = Vec::with_capacity(self.trunk_widths.len());
        let mut fan_in = self.input_dim;
        for &w in &self.trunk_widths {
            trunk.push(Dense::zeros(w, fan_in));
            fan_in = w;
        }
        let heads = Dense::zeros(grid.len(), fan_in);
        let mut net = QuantileNet::from_layers(trunk, heads, grid)?;
        if net.input_dim != self.input_dim {
            return Err(BqrError::Checkpoint("input_dim disagrees with layers".into()));
        }
        net.set_params(&self.params)
            .map_err(|e| BqrError::Checkpoint(e.to_string()))?;
        if self.params.iter().any(|v| !v.is_finite()) {
            return Err(BqrError::Checkpoint("non-finite parameter".into()));
        }
        Ok(net)
    }
}
