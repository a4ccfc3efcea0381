//! Datasets: simulated latent-response generators, thresholding into binary
//! labels, label-noise injection, CSV ingestion and export.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{BqrError, Result};
use crate::net::TauGrid;

/// Simulated regression problems on `x ~ U(-1, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DatasetId {
    D1,
    D2,
    D3,
    D4,
    D5,
    D6,
}

impl DatasetId {
    pub const ALL: [DatasetId; 6] = [
        DatasetId::D1,
        DatasetId::D2,
        DatasetId::D3,
        DatasetId::D4,
        DatasetId::D5,
        DatasetId::D6,
    ];

    /// Noise-free part of the latent response.
    pub fn signal(self, x: f64) -> f64 {
        match self {
            DatasetId::D1 => 5.0 * (8.0 * x).sin(),
            DatasetId::D2 => (4.0 * x).powi(2) / 2.0,
            DatasetId::D3 => ((4.0 * x).powi(2) + 5.0).sqrt() - 2.5,
            DatasetId::D4 => {
                if x == 0.0 {
                    0.0
                } else {
                    2.0 * x * (1.0 / (2.0 * x)).sin()
                }
            }
            DatasetId::D5 | DatasetId::D6 => {
                let u = 3.0 * x;
                2.0 * ((1.0 - u + 2.0 * u * u) * (-0.5 * u * u).exp() - 1.5)
            }
        }
    }

    /// Additive noise `zeta`. Normal noise parameters are standard deviations.
    pub fn sample_noise<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        let normal = |sd: f64, rng: &mut R| Normal::new(0.0, sd).expect("sd > 0").sample(rng);
        match self {
            DatasetId::D1 => normal(1.0, rng),
            DatasetId::D2 | DatasetId::D4 => normal(0.5, rng),
            DatasetId::D3 => rng.random_range(-0.3..0.3),
            DatasetId::D5 => normal(0.25, rng),
            // chi-square(2) by inverse CDF, scaled by 1/4
            DatasetId::D6 => {
                let u: f64 = 1.0 - rng.random::<f64>();
                -2.0 * u.ln() / 4.0
            }
        }
    }
}

impl fmt::Display for DatasetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for DatasetId {
    type Err = BqrError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "D1" => Ok(DatasetId::D1),
            "D2" => Ok(DatasetId::D2),
            "D3" => Ok(DatasetId::D3),
            "D4" => Ok(DatasetId::D4),
            "D5" => Ok(DatasetId::D5),
            "D6" => Ok(DatasetId::D6),
            _ => Err(BqrError::UnknownDataset(s.to_string())),
        }
    }
}

/// How to pick the cut point `mu` that turns a latent into labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Threshold {
    Value(f64),
    /// Latent median: a balanced task.
    Median,
    /// Empirical quantile of the latent, e.g. `0.8` for an imbalanced task.
    Quantile(f64),
}

impl Threshold {
    pub fn resolve(self, latent: &[f64]) -> Result<f64> {
        match self {
            Threshold::Value(v) if v.is_finite() => Ok(v),
            Threshold::Value(v) => Err(BqrError::Domain(format!("threshold must be finite, got {v}"))),
            Threshold::Median => empirical_quantile(latent, 0.5),
            Threshold::Quantile(q) => empirical_quantile(latent, q),
        }
    }
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Threshold::Value(v) => write!(f, "{v}"),
            Threshold::Median => f.write_str("median"),
            Threshold::Quantile(q) => write!(f, "p{}", q * 100.0),
        }
    }
}

impl FromStr for Threshold {
    type Err = BqrError;

    /// `median`, `pNN` (percentile) or a literal number.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("median") {
            return Ok(Threshold::Median);
        }
        if let Some(p) = s.strip_prefix('p').or_else(|| s.strip_prefix('P')) {
            let pct: f64 = p
                .parse()
                .map_err(|_| BqrError::Config(format!("bad percentile threshold `{s}`")))?;
            if !(pct > 0.0 && pct < 100.0) {
                return Err(BqrError::Config(format!("percentile must be in (0, 100), got {pct}")));
            }
            return Ok(Threshold::Quantile(pct / 100.0));
        }
        s.parse()
            .map(Threshold::Value)
            .map_err(|_| BqrError::Config(format!("bad threshold `{s}`")))
    }
}

/// Linear-interpolation sample quantile.
pub fn empirical_quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(BqrError::EmptyBatch);
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(BqrError::Domain(format!("quantile level {q} outside [0, 1]")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Ok(sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64))
}

/// Per-column affine map from the observed `[min, max]` onto `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaling {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl FeatureScaling {
    pub fn fit(features: ArrayView2<'_, f64>) -> Self {
        let mut min = vec![f64::INFINITY; features.ncols()];
        let mut max = vec![f64::NEG_INFINITY; features.ncols()];
        for row in features.rows() {
            for (j, &v) in row.iter().enumerate() {
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
        FeatureScaling { min, max }
    }

    /// Constant columns map to 0; values outside the fitted range are clamped.
    pub fn apply(&self, features: &mut Array2<f64>) -> Result<()> {
        if features.ncols() != self.min.len() {
            return Err(BqrError::Shape {
                expected: self.min.len(),
                got: features.ncols(),
            });
        }
        for mut row in features.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                let span = self.max[j] - self.min[j];
                *v = if span > 0.0 {
                    (2.0 * (*v - self.min[j]) / span - 1.0).clamp(-1.0, 1.0)
                } else {
                    0.0
                };
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    name: String,
    feature_names: Vec<String>,
    features: Array2<f64>,
    labels: Option<Vec<u8>>,
    latent: Option<Vec<f64>>,
    threshold: Option<f64>,
    scaling: Option<FeatureScaling>,
}

fn default_feature_names(d: usize) -> Vec<String> {
    if d == 1 {
        vec!["x".to_string()]
    } else {
        (0..d).map(|j| format!("x{j}")).collect()
    }
}

impl LabeledDataset {
    pub fn from_parts(features: Array2<f64>, labels: Vec<u8>) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(BqrError::Shape {
                expected: features.nrows(),
                got: labels.len(),
            });
        }
        if features.nrows() == 0 {
            return Err(BqrError::EmptyBatch);
        }
        if let Some(&bad) = labels.iter().find(|&&y| y > 1) {
            return Err(BqrError::Schema(format!("label {bad} is not binary")));
        }
        Ok(LabeledDataset {
            name: "custom".into(),
            feature_names: default_feature_names(features.ncols()),
            features,
            labels: Some(labels),
            latent: None,
            threshold: None,
            scaling: None,
        })
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn labels(&self) -> Result<&[u8]> {
        self.labels.as_deref().ok_or(BqrError::MissingLabels)
    }

    pub fn latent(&self) -> Result<&[f64]> {
        self.latent.as_deref().ok_or(BqrError::MissingLatent)
    }

    pub fn has_latent(&self) -> bool {
        self.latent.is_some()
    }

    pub fn threshold(&self) -> Option<f64> {
        self.threshold
    }

    pub fn scaling(&self) -> Option<&FeatureScaling> {
        self.scaling.as_ref()
    }

    /// Resolve `threshold` against the latent and label the rows.
    pub fn with_threshold(self, threshold: Threshold) -> Result<Self> {
        let mu = threshold.resolve(self.latent()?)?;
        threshold_labels(&self, mu)
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        LabeledDataset {
            name: self.name.clone(),
            feature_names: self.feature_names.clone(),
            features: self.features.select(Axis(0), indices),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
            latent: self
                .latent
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
            threshold: self.threshold,
            scaling: self.scaling.clone(),
        }
    }

    /// Seeded shuffle, then the first `1 - test_fraction` of rows train.
    pub fn split(&self, test_fraction: f64, seed: u64) -> Result<(Self, Self)> {
        if !(test_fraction > 0.0 && test_fraction < 1.0) {
            return Err(BqrError::Domain(format!(
                "test fraction must be in (0, 1), got {test_fraction}"
            )));
        }
        let n = self.n();
        let n_test = ((n as f64) * test_fraction).round() as usize;
        if n_test == 0 || n_test == n {
            return Err(BqrError::Domain(format!("cannot split {n} rows at {test_fraction}")));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let (train, test) = order.split_at(n - n_test);
        Ok((self.subset(train), self.subset(test)))
    }

    /// CSV with feature columns, `latent` when present, `label`, and one
    /// `q_<tau>` column per level when predictions are given.
    pub fn write_csv<W: Write>(
        &self,
        out: W,
        quantiles: Option<(&TauGrid, ArrayView2<'_, f64>)>,
    ) -> Result<()> {
        if let Some((grid, q)) = quantiles {
            if q.nrows() != self.n() || q.ncols() != grid.len() {
                return Err(BqrError::Shape {
                    expected: self.n(),
                    got: q.nrows(),
                });
            }
        }
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = self.feature_names.clone();
        if self.latent.is_some() {
            header.push("latent".into());
        }
        if self.labels.is_some() {
            header.push("label".into());
        }
        if let Some((grid, _)) = quantiles {
            header.extend(grid.levels().iter().map(|t| quantile_column(*t)));
        }
        w.write_record(&header)?;
        for i in 0..self.n() {
            let mut rec: Vec<String> = self.features.row(i).iter().map(|v| v.to_string()).collect();
            if let Some(z) = &self.latent {
                rec.push(z[i].to_string());
            }
            if let Some(l) = &self.labels {
                rec.push(l[i].to_string());
            }
            if let Some((_, q)) = quantiles {
                rec.extend(q.row(i).iter().map(|v| v.to_string()));
            }
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| BqrError::io("<csv>", e))?;
        Ok(())
    }
}

/// Column name for a quantile level: `q_0.10`.
pub fn quantile_column(tau: f64) -> String {
    format!("q_{tau:.2}")
}

/// Draw `n` rows of dataset `id`. Labels are left empty until a threshold is applied.
pub fn gen_dataset(id: DatasetId, n: usize, seed: u64) -> Result<LabeledDataset> {
    if n == 0 {
        return Err(BqrError::Domain("n must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xs = Vec::with_capacity(n);
    let mut latent = Vec::with_capacity(n);
    for _ in 0..n {
        let x: f64 = rng.random_range(-1.0..1.0);
        let z = id.signal(x) + id.sample_noise(&mut rng);
        xs.push(x);
        latent.push(z);
    }
    Ok(LabeledDataset {
        name: id.to_string(),
        feature_names: default_feature_names(1),
        features: Array2::from_shape_vec((n, 1), xs).expect("n x 1"),
        labels: None,
        latent: Some(latent),
        threshold: None,
        scaling: None,
    })
}

/// Two isotropic Gaussian blobs in the plane, class 0 around `centers[0]`
/// and class 1 around `centers[1]`, clipped to the unit box. Classes
/// alternate row by row.
pub fn two_blobs(n: usize, centers: [[f64; 2]; 2], sd: f64, seed: u64) -> Result<LabeledDataset> {
    if n == 0 {
        return Err(BqrError::Domain("n must be at least 1".into()));
    }
    let noise = Normal::new(0.0, sd).map_err(|e| BqrError::Domain(format!("blob sd: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xs = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = i % 2;
        for c in centers[y] {
            xs.push((c + noise.sample(&mut rng)).clamp(-1.0, 1.0));
        }
        labels.push(y as u8);
    }
    let features = Array2::from_shape_vec((n, 2), xs).expect("n x 2");
    Ok(LabeledDataset::from_parts(features, labels)?.named("blobs"))
}

/// Class 0 where `latent <= mu`, class 1 otherwise.
pub fn threshold_labels(ds: &LabeledDataset, mu: f64) -> Result<LabeledDataset> {
    let latent = ds.latent()?;
    let labels = latent.iter().map(|&z| u8::from(z > mu)).collect();
    Ok(LabeledDataset {
        labels: Some(labels),
        threshold: Some(mu),
        ..ds.clone()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub flip_fraction: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(flip_fraction: f64, seed: u64) -> Result<Self> {
        if !(0.0..=0.5).contains(&flip_fraction) {
            return Err(BqrError::Domain(format!(
                "flip fraction must be in [0, 0.5], got {flip_fraction}"
            )));
        }
        Ok(NoiseSpec { flip_fraction, seed })
    }

    /// Indices flipped for a dataset of `n` rows, sorted.
    pub fn flip_indices(&self, n: usize) -> Vec<usize> {
        let k = (self.flip_fraction * n as f64).round() as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut idx = rand::seq::index::sample(&mut rng, n, k.min(n)).into_vec();
        idx.sort_unstable();
        idx
    }
}

/// Copy of `ds` with `round(fraction * n)` seeded, distinct labels inverted.
pub fn flip_labels(ds: &LabeledDataset, spec: &NoiseSpec) -> Result<LabeledDataset> {
    let spec = NoiseSpec::new(spec.flip_fraction, spec.seed)?;
    let mut labels = ds.labels()?.to_vec();
    for i in spec.flip_indices(labels.len()) {
        labels[i] = 1 - labels[i];
    }
    Ok(LabeledDataset {
        labels: Some(labels),
        ..ds.clone()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvOptions {
    pub label_column: String,
    pub delimiter: u8,
    pub scale: bool,
    /// Labels a real-valued target column as `value > threshold`; the raw
    /// target is kept as the latent.
    pub threshold: Option<f64>,
    /// Columns to drop from the features (besides the label column).
    pub ignore_columns: Vec<String>,
}

impl CsvOptions {
    pub fn new(label_column: impl Into<String>) -> Self {
        CsvOptions {
            label_column: label_column.into(),
            delimiter: b',',
            scale: true,
            threshold: None,
            ignore_columns: Vec::new(),
        }
    }
}

/// Load a headed CSV file. Lines starting with `#` are comments.
pub fn load_csv(path: impl AsRef<Path>, opts: &CsvOptions) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| BqrError::io(path, e))?;
    let mut ds = read_csv(file, opts)?;
    ds.name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "csv".into());
    Ok(ds)
}

struct Table {
    names: Vec<String>,
    features: Array2<f64>,
    target: Vec<f64>,
    scaling: Option<FeatureScaling>,
}

/// Parse a headed numeric CSV, splitting off `target_column` when given.
fn read_table<R: std::io::Read>(input: R, opts: &CsvOptions, target_column: Option<&str>) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(opts.delimiter)
        .comment(Some(b'#'))
        .has_headers(true)
        .from_reader(input);
    let headers = reader.headers()?.clone();
    let target_idx = match target_column {
        Some(name) => Some(
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| BqrError::Schema(format!("no column named `{name}`")))?,
        ),
        None => None,
    };
    let feature_idx: Vec<usize> = (0..headers.len())
        .filter(|&j| Some(j) != target_idx && !opts.ignore_columns.iter().any(|c| c == &headers[j]))
        .collect();
    if feature_idx.is_empty() {
        return Err(BqrError::Schema("no feature columns".into()));
    }
    let mut feats = Vec::new();
    let mut target = Vec::new();
    let mut n = 0;
    for (r, rec) in reader.records().enumerate() {
        // header is line 1
        let row = r + 2;
        let rec = rec.map_err(|e| BqrError::Parse {
            row,
            message: e.to_string(),
        })?;
        let parse = |j: usize| -> Result<f64> {
            let cell = rec.get(j).unwrap_or("").trim();
            let v: f64 = cell.parse().map_err(|_| BqrError::Parse {
                row,
                message: format!("column `{}`: cannot parse `{cell}`", &headers[j]),
            })?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(BqrError::Parse {
                    row,
                    message: format!("column `{}`: non-finite value", &headers[j]),
                })
            }
        };
        for &j in &feature_idx {
            feats.push(parse(j)?);
        }
        if let Some(t) = target_idx {
            target.push(parse(t)?);
        }
        n += 1;
    }
    if n == 0 {
        return Err(BqrError::Schema("file has no data rows".into()));
    }
    let mut features =
        Array2::from_shape_vec((n, feature_idx.len()), feats).expect("rows x features");
    let scaling = if opts.scale {
        let s = FeatureScaling::fit(features.view());
        s.apply(&mut features)?;
        Some(s)
    } else {
        None
    };
    Ok(Table {
        names: feature_idx.iter().map(|&j| headers[j].to_string()).collect(),
        features,
        target,
        scaling,
    })
}

pub fn read_csv<R: std::io::Read>(input: R, opts: &CsvOptions) -> Result<LabeledDataset> {
    let Table {
        names,
        features,
        target,
        scaling,
    } = read_table(input, opts, Some(&opts.label_column))?;
    let (labels, latent, threshold) = match opts.threshold {
        Some(mu) => {
            let labels = target.iter().map(|&v| u8::from(v > mu)).collect();
            (labels, Some(target), Some(mu))
        }
        None => {
            if let Some(bad) = target.iter().find(|&&v| v != 0.0 && v != 1.0) {
                return Err(BqrError::Schema(format!(
                    "label column `{}` has non-binary value {bad}; pass a threshold",
                    opts.label_column
                )));
            }
            (target.iter().map(|&v| v as u8).collect(), None, None)
        }
    };
    Ok(LabeledDataset {
        name: "csv".into(),
        feature_names: names,
        features,
        labels: Some(labels),
        latent,
        threshold,
        scaling,
    })
}

/// Unlabelled rows: every column not in `opts.ignore_columns` is a feature.
/// `opts.label_column` is not consulted.
pub fn read_feature_csv<R: std::io::Read>(input: R, opts: &CsvOptions) -> Result<LabeledDataset> {
    let table = read_table(input, opts, None)?;
    Ok(LabeledDataset {
        name: "csv".into(),
        feature_names: table.names,
        features: table.features,
        labels: None,
        latent: None,
        threshold: None,
        scaling: table.scaling,
    })
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Put latent and predicted quantiles on a common scale for coverage checks.
///
/// The latent is centred at the threshold and standardised. Every quantile
/// column is standardised with the mean and standard deviation of the median
/// column.
pub fn normalize_for_coverage(
    ds: &LabeledDataset,
    preds: ArrayView2<'_, f64>,
    grid: &TauGrid,
) -> Result<(Vec<f64>, Array2<f64>)> {
    let latent = ds.latent()?;
    let mu = ds.threshold.ok_or(BqrError::MissingLatent)?;
    if preds.nrows() != latent.len() {
        return Err(BqrError::Shape {
            expected: latent.len(),
            got: preds.nrows(),
        });
    }
    if preds.ncols() != grid.len() {
        return Err(BqrError::Shape {
            expected: grid.len(),
            got: preds.ncols(),
        });
    }
    let med = grid.require_median()?;
    let centred = latent.iter().map(|&z| z - mu);
    let (lm, ls) = mean_std(centred.clone());
    if !(ls > 0.0) {
        return Err(BqrError::DegenerateDistribution("latent has zero spread".into()));
    }
    let norm_latent = centred.map(|v| (v - lm) / ls).collect();
    let (qm, qs) = mean_std(preds.column(med).iter().copied());
    if !(qs > 0.0) {
        return Err(BqrError::DegenerateDistribution(
            "median predictions have zero spread".into(),
        ));
    }
    let norm_preds = preds.mapv(|v| (v - qm) / qs);
    Ok((norm_latent, norm_preds))
}
