//! Dataset-level metrics: coverage, confidence-binned misclassification and
//! retention, rank AUC and accuracy.

use std::io::Write;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::data::quantile_column;
use crate::error::{BqrError, Result};
use crate::net::TauGrid;
use crate::quantiles::ConfidenceReport;

/// Centres of the confidence bins used for the calibration fit.
pub const DELTA_BIN_CENTERS: [f64; 5] = [0.1, 0.2, 0.3, 0.4, 0.5];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageTable {
    pub levels: Vec<f64>,
    pub coverage: Vec<f64>,
}

impl CoverageTable {
    /// Largest `|coverage - tau|`.
    pub fn max_abs_error(&self) -> f64 {
        self.levels
            .iter()
            .zip(&self.coverage)
            .map(|(t, c)| (t - c).abs())
            .fold(0.0, f64::max)
    }

    /// One header row and one data row labelled `dataset`.
    pub fn write_csv<W: Write>(&self, out: W, dataset: &str) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["dataset".to_string()];
        header.extend(self.levels.iter().map(|&t| quantile_column(t)));
        w.write_record(&header)?;
        let mut row = vec![dataset.to_string()];
        row.extend(self.coverage.iter().map(|c| format!("{c:.4}")));
        w.write_record(&row)?;
        w.flush().map_err(|e| BqrError::io("<csv>", e))?;
        Ok(())
    }
}

/// Fraction of rows whose latent lies strictly below each predicted quantile.
pub fn coverage(latent: &[f64], preds: ArrayView2<'_, f64>, grid: &TauGrid) -> Result<CoverageTable> {
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
    if latent.is_empty() {
        return Err(BqrError::EmptyBatch);
    }
    let n = latent.len() as f64;
    let coverage = (0..grid.len())
        .map(|j| {
            let col = preds.column(j);
            latent.iter().zip(col).filter(|(&z, &q)| z < q).count() as f64 / n
        })
        .collect();
    Ok(CoverageTable {
        levels: grid.levels().to_vec(),
        coverage,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub threshold: f64,
    /// Misclassification among retained rows; `None` when nothing is retained.
    pub misclassification: Option<f64>,
    pub retention: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaBin {
    pub center: f64,
    pub count: usize,
    pub mean_delta: Option<f64>,
    pub misclassification: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaBinReport {
    pub thresholds: Vec<ThresholdRow>,
    pub bins: Vec<DeltaBin>,
    /// Coefficient of determination of observed bin misclassification
    /// against `0.5 - mean delta`; `None` with fewer than two filled bins
    /// or zero variance in the observations.
    pub r_squared: Option<f64>,
}

impl DeltaBinReport {
    /// Rows `threshold,m_r,r_r`; undefined rates are written as `NA`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["threshold", "m_r", "r_r"])?;
        for row in &self.thresholds {
            w.write_record([
                format!("{:.2}", row.threshold),
                fmt_opt(row.misclassification),
                format!("{:.4}", row.retention),
            ])?;
        }
        w.flush().map_err(|e| BqrError::io("<csv>", e))?;
        Ok(())
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.4}")).unwrap_or_else(|| "NA".into())
}

/// `1 - SS_res / SS_tot` of `predicted` against `observed`.
pub fn r_squared(observed: &[f64], predicted: &[f64]) -> Option<f64> {
    if observed.len() != predicted.len() || observed.len() < 2 {
        return None;
    }
    let mean = observed.iter().sum::<f64>() / observed.len() as f64;
    let ss_tot: f64 = observed.iter().map(|o| (o - mean).powi(2)).sum();
    let ss_res: f64 = observed
        .iter()
        .zip(predicted)
        .map(|(o, p)| (o - p).powi(2))
        .sum();
    (ss_tot > 0.0).then(|| 1.0 - ss_res / ss_tot)
}

pub fn delta_report(
    reports: &[ConfidenceReport],
    labels: &[u8],
    thresholds: &[f64],
) -> Result<DeltaBinReport> {
    if reports.len() != labels.len() {
        return Err(BqrError::Shape {
            expected: reports.len(),
            got: labels.len(),
        });
    }
    if let Some(t) = thresholds.iter().find(|t| !(0.0..=0.5).contains(*t)) {
        return Err(BqrError::Domain(format!("confidence threshold {t} outside [0, 0.5]")));
    }
    let n = reports.len();
    let wrong = |i: usize| reports[i].predicted_label != labels[i];

    let rows = thresholds
        .iter()
        .map(|&t| {
            let kept: Vec<usize> = (0..n).filter(|&i| reports[i].delta >= t).collect();
            let misclassification = (!kept.is_empty())
                .then(|| kept.iter().filter(|&&i| wrong(i)).count() as f64 / kept.len() as f64);
            ThresholdRow {
                threshold: t,
                misclassification,
                retention: if n == 0 { 0.0 } else { kept.len() as f64 / n as f64 },
            }
        })
        .collect();

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); DELTA_BIN_CENTERS.len()];
    for (i, r) in reports.iter().enumerate() {
        let nearest = DELTA_BIN_CENTERS
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - r.delta).abs().total_cmp(&(b.1 - r.delta).abs()))
            .map(|(k, _)| k)
            .expect("non-empty centres");
        members[nearest].push(i);
    }
    let bins: Vec<DeltaBin> = DELTA_BIN_CENTERS
        .iter()
        .zip(&members)
        .map(|(&center, idx)| {
            let count = idx.len();
            let (mean_delta, misclassification) = if count == 0 {
                (None, None)
            } else {
                let c = count as f64;
                (
                    Some(idx.iter().map(|&i| reports[i].delta).sum::<f64>() / c),
                    Some(idx.iter().filter(|&&i| wrong(i)).count() as f64 / c),
                )
            };
            DeltaBin {
                center,
                count,
                mean_delta,
                misclassification,
            }
        })
        .collect();
    let (observed, predicted): (Vec<f64>, Vec<f64>) = bins
        .iter()
        .filter_map(|b| Some((b.misclassification?, 0.5 - b.mean_delta?)))
        .unzip();
    Ok(DeltaBinReport {
        thresholds: rows,
        bins,
        r_squared: r_squared(&observed, &predicted),
    })
}

/// Mann-Whitney AUC with mid-ranks for ties. `None` unless both classes occur.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<Option<f64>> {
    if scores.len() != labels.len() {
        return Err(BqrError::Shape {
            expected: scores.len(),
            got: labels.len(),
        });
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Ok(None);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // ranks are 1-based: positions start+1 ..= end
        let mid_rank = (start + 1 + end) as f64 / 2.0;
        let pos_in_tie = order[start..end].iter().filter(|&&i| labels[i] == 1).count();
        rank_sum_pos += mid_rank * pos_in_tie as f64;
        start = end;
    }
    let (p, q) = (n_pos as f64, n_neg as f64);
    let u = rank_sum_pos - p * (p + 1.0) / 2.0;
    Ok(Some(u / (p * q)))
}

/// AUC over the rows whose confidence is at least `delta_min`.
pub fn roc_auc_at_delta(
    scores: &[f64],
    labels: &[u8],
    reports: &[ConfidenceReport],
    delta_min: f64,
) -> Result<Option<f64>> {
    if scores.len() != labels.len() || reports.len() != labels.len() {
        return Err(BqrError::Shape {
            expected: labels.len(),
            got: scores.len().min(reports.len()),
        });
    }
    if !(0.0..=0.5).contains(&delta_min) {
        return Err(BqrError::Domain(format!("delta_min {delta_min} outside [0, 0.5]")));
    }
    let (s, l): (Vec<f64>, Vec<u8>) = (0..labels.len())
        .filter(|&i| reports[i].delta >= delta_min)
        .map(|i| (scores[i], labels[i]))
        .unzip();
    roc_auc(&s, &l)
}

pub fn accuracy(predicted: &[u8], truth: &[u8]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(BqrError::Shape {
            expected: truth.len(),
            got: predicted.len(),
        });
    }
    if truth.is_empty() {
        return Err(BqrError::Domain("accuracy of an empty set".into()));
    }
    let hits = predicted.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Accuracy of the rule `label = 1 iff median latent > 0`.
pub fn accuracy_from_scores(median_latent: &[f64], truth: &[u8]) -> Result<f64> {
    let predicted: Vec<u8> = median_latent.iter().map(|&z| u8::from(z > 0.0)).collect();
    accuracy(&predicted, truth)
}

/// Pearson correlation coefficient.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    (saa > 0.0 && sbb > 0.0).then(|| sab / (saa * sbb).sqrt())
}
