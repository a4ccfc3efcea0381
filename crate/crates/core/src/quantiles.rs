//! Post-processing of discrete quantile predictions: kernel smoothing,
//! conditional moments, prediction intervals and the confidence score.

use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{BqrError, Result};
use crate::net::{LatentPrediction, TauGrid, GRID_TOL};

/// Left anchor of the smoothing partition.
pub const TAU_LOWER: f64 = 0.0;
/// Right anchor of the smoothing partition.
pub const TAU_UPPER: f64 = 1.0;
pub const DEFAULT_BANDWIDTH: f64 = 0.1;

/// Simpson nodes used for every integral over the quantile level.
pub const QUADRATURE_POINTS: usize = 1001;
pub const QUADRATURE_LO: f64 = 1e-6;
pub const QUADRATURE_HI: f64 = 1.0 - 1e-6;

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// `int_a^b (1/h) K((tau - p) / h) dp` for the Gaussian kernel `K`.
pub fn kernel_mass(tau: f64, a: f64, b: f64, h: f64) -> f64 {
    normal_mass((tau - b) / h, (tau - a) / h)
}

/// `P(lo < Z < hi)` for a standard normal, accurate in both tails.
fn normal_mass(lo: f64, hi: f64) -> f64 {
    if lo >= 0.0 {
        std_normal_cdf(-lo) - std_normal_cdf(-hi)
    } else {
        std_normal_cdf(hi) - std_normal_cdf(lo)
    }
}

/// Gaussian-kernel smoothing of a step quantile function.
///
/// The step function takes the value `Q(tau_i)` on the cell of levels
/// nearest to `tau_i`: cells are split at midpoints between neighbouring
/// levels and the outer cells extend to the anchors 0 and 1, so the first
/// and last estimates stand in for `Q(0)` and `Q(1)`. Smoothing at `tau`
/// weights each cell by the Gaussian kernel mass it covers; the weights are
/// renormalised to sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothedQuantileFn {
    grid: TauGrid,
    values: LatentPrediction,
    bandwidth: f64,
}

pub fn smooth(pred: &LatentPrediction, grid: &TauGrid, h: f64) -> Result<SmoothedQuantileFn> {
    pred.check_len(grid)?;
    if !(h > 0.0 && h.is_finite()) {
        return Err(BqrError::Domain(format!("bandwidth must be > 0, got {h}")));
    }
    Ok(SmoothedQuantileFn {
        grid: grid.clone(),
        values: pred.clone(),
        bandwidth: h,
    })
}

impl SmoothedQuantileFn {
    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn grid(&self) -> &TauGrid {
        &self.grid
    }

    pub fn values(&self) -> &LatentPrediction {
        &self.values
    }

    /// Cell boundaries: `0`, midpoints between neighbouring levels, `1`.
    pub fn cell_boundaries(&self) -> Vec<f64> {
        let levels = self.grid.levels();
        let mut b = Vec::with_capacity(levels.len() + 1);
        b.push(TAU_LOWER);
        b.extend(levels.windows(2).map(|w| 0.5 * (w[0] + w[1])));
        b.push(TAU_UPPER);
        b
    }

    /// Raw, unnormalised kernel weight of each cell at `tau`.
    pub fn raw_weights(&self, tau: f64) -> Vec<f64> {
        let h = self.bandwidth;
        self.cell_boundaries()
            .windows(2)
            .map(|w| kernel_mass(tau, w[0], w[1], h))
            .collect()
    }

    pub fn eval(&self, tau: f64) -> f64 {
        let w = self.raw_weights(tau);
        let total: f64 = w.iter().sum();
        w.iter()
            .zip(self.values.values())
            .map(|(wi, q)| wi * q)
            .sum::<f64>()
            / total
    }

    /// Average of `g(Q^s(tau))` over the quantile level.
    pub fn integrate<F: Fn(f64) -> f64>(&self, g: F) -> f64 {
        simpson(|t| g(self.eval(t)), QUADRATURE_LO, QUADRATURE_HI, QUADRATURE_POINTS)
            / (QUADRATURE_HI - QUADRATURE_LO)
    }

    /// `(tau, Q^s(tau))` on `points` evenly spaced levels across the quadrature domain.
    pub fn sample(&self, points: usize) -> Vec<(f64, f64)> {
        let step = (QUADRATURE_HI - QUADRATURE_LO) / (points.max(2) - 1) as f64;
        (0..points.max(2))
            .map(|k| {
                let t = QUADRATURE_LO + step * k as f64;
                (t, self.eval(t))
            })
            .collect()
    }

    /// CSV of `tau,q_smooth` on a 101-point grid.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["tau", "q_smooth"])?;
        for (t, q) in self.sample(101) {
            w.serialize((t, q))?;
        }
        w.flush().map_err(|e| BqrError::io("<csv>", e))?;
        Ok(())
    }
}

/// Composite Simpson rule on `points` (odd) evenly spaced nodes.
fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, points: usize) -> f64 {
    debug_assert!(points >= 3 && points % 2 == 1);
    let n = points - 1;
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + h * k as f64);
    }
    acc * h / 3.0
}

pub fn conditional_mean(sq: &SmoothedQuantileFn) -> f64 {
    sq.integrate(|q| q)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Functional {
    Variance,
    /// Raw moment `E[f^k]`.
    Moment(u32),
}

pub fn conditional_stat(sq: &SmoothedQuantileFn, functional: Functional) -> f64 {
    match functional {
        Functional::Variance => {
            let mean = conditional_mean(sq);
            (sq.integrate(|q| q * q) - mean * mean).max(0.0)
        }
        Functional::Moment(k) => sq.integrate(|q| q.powi(k as i32)),
    }
}

/// Piecewise-linear interpolation of the quantile estimates at `tau`.
pub fn interpolate(pred: &LatentPrediction, grid: &TauGrid, tau: f64) -> Result<f64> {
    pred.check_len(grid)?;
    let levels = grid.levels();
    let values = pred.values();
    let (min, max) = (levels[0], levels[levels.len() - 1]);
    if !(tau >= min - GRID_TOL && tau <= max + GRID_TOL) {
        return Err(BqrError::OutOfGrid { level: tau, min, max });
    }
    if let Some(i) = grid.position(tau) {
        return Ok(values[i]);
    }
    let hi = levels.partition_point(|&t| t < tau);
    let lo = hi - 1;
    let frac = (tau - levels[lo]) / (levels[hi] - levels[lo]);
    Ok(values[lo] + frac * (values[hi] - values[lo]))
}

/// `[Q(level / 2), Q(1 - level / 2)]`, a `100 (1 - level)`% interval.
pub fn prediction_interval(pred: &LatentPrediction, grid: &TauGrid, level: f64) -> Result<(f64, f64)> {
    if !(level > 0.0 && level < 1.0) {
        return Err(BqrError::Domain(format!("interval level must be in (0, 1), got {level}")));
    }
    let low = interpolate(pred, grid, 0.5 * level)?;
    let high = interpolate(pred, grid, 1.0 - 0.5 * level)?;
    Ok((low, high))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceReport {
    pub delta: f64,
    pub predicted_label: u8,
    pub expected_misclassification: f64,
}

impl ConfidenceReport {
    fn new(delta: f64, predicted_label: u8) -> Self {
        ConfidenceReport {
            delta,
            predicted_label,
            expected_misclassification: 0.5 - delta,
        }
    }
}

/// Distance in quantile level from the median to the nearest sign change of
/// the interpolated quantile function.
///
/// When the median is positive the crossing is searched below 0.5, when
/// negative above it. No crossing inside the grid gives `delta = 0.5`.
pub fn delta_score(pred: &LatentPrediction, grid: &TauGrid) -> Result<ConfidenceReport> {
    pred.check_len(grid)?;
    let med = grid.require_median()?;
    let levels = grid.levels();
    let q = pred.values();
    let qm = q[med];
    if qm == 0.0 {
        return Ok(ConfidenceReport::new(0.0, 0));
    }
    let root = |a: usize, b: usize| {
        let frac = (0.0 - q[a]) / (q[b] - q[a]);
        levels[a] + frac * (levels[b] - levels[a])
    };
    let delta = if qm > 0.0 {
        (0..med)
            .rev()
            .find(|&j| q[j] <= 0.0)
            .map(|j| 0.5 - root(j, j + 1))
            .unwrap_or(0.5)
    } else {
        (med + 1..q.len())
            .find(|&j| q[j] >= 0.0)
            .map(|j| root(j - 1, j) - 0.5)
            .unwrap_or(0.5)
    };
    Ok(ConfidenceReport::new(delta.clamp(0.0, 0.5), u8::from(qm > 0.0)))
}
