//! Binary quantile loss.
//!
//! A binary label is modelled as `y = 1{z >= 0}` with `z = f_tau(x) + eps`
//! and `eps` asymmetric-Laplace with location 0, scale 1 and skew `tau`.
//! Integrating the density gives the class probability
//!
//! ```text
//! P(y = 1 | f) = 1 - tau * exp((tau - 1) f)   if f > 0
//!              = (1 - tau) * exp(tau f)       if f <= 0
//! ```
//!
//! and the loss is its negative log-likelihood. Logs are evaluated per branch
//! in closed form, so the loss stays finite and exactly piecewise linear in
//! the tails instead of saturating.

use serde::{Deserialize, Serialize};

use crate::error::{BqrError, Result};
use crate::net::{LatentPrediction, TauGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// Sum of per-level quantile losses plus the crossing penalty.
    Bqr,
    /// Sigmoid cross-entropy on a single head; the comparison arm for
    /// label-noise experiments.
    #[serde(rename = "bce")]
    BceBaseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    grid: TauGrid,
    lambda: f64,
    kind: LossKind,
}

impl LossSpec {
    pub fn new(grid: TauGrid, lambda: f64, kind: LossKind) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(BqrError::Domain(format!(
                "crossing weight must be finite and >= 0, got {lambda}"
            )));
        }
        Ok(LossSpec { grid, lambda, kind })
    }

    pub fn bqr(grid: TauGrid, lambda: f64) -> Result<Self> {
        LossSpec::new(grid, lambda, LossKind::Bqr)
    }

    /// Cross-entropy baseline on a single median-position head.
    pub fn bce() -> Self {
        LossSpec {
            grid: TauGrid::median_only(),
            lambda: 0.0,
            kind: LossKind::BceBaseline,
        }
    }

    pub fn grid(&self) -> &TauGrid {
        &self.grid
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn kind(&self) -> LossKind {
        self.kind
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(BqrError::Domain(format!("tau must lie in (0, 1), got {tau}")))
    }
}

fn check_z(z: f64) -> Result<()> {
    if z.is_finite() {
        Ok(())
    } else {
        Err(BqrError::Domain(format!("latent value must be finite, got {z}")))
    }
}

fn check_label(y: u8) -> Result<()> {
    if y <= 1 {
        Ok(())
    } else {
        Err(BqrError::Domain(format!("label must be 0 or 1, got {y}")))
    }
}

/// `P(y = 1 | z)` under the asymmetric-Laplace latent model.
pub fn prob_pos(z: f64, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    check_z(z)?;
    Ok(prob_pos_raw(z, tau))
}

fn prob_pos_raw(z: f64, tau: f64) -> f64 {
    if z > 0.0 {
        1.0 - tau * ((tau - 1.0) * z).exp()
    } else {
        (1.0 - tau) * (tau * z).exp()
    }
}

/// `(ln p, ln(1 - p))` with `p = prob_pos(z, tau)`.
fn log_probs(z: f64, tau: f64) -> (f64, f64) {
    if z > 0.0 {
        let tail = (tau.ln()) + (tau - 1.0) * z;
        ((-tail.exp()).ln_1p(), tail)
    } else {
        let head = (1.0 - tau).ln() + tau * z;
        (head, (-head.exp()).ln_1p())
    }
}

/// Negative log-likelihood of label `y` given latent `z`.
pub fn bqr_loss(y: u8, z: f64, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    check_z(z)?;
    check_label(y)?;
    Ok(bqr_loss_raw(y, z, tau))
}

fn bqr_loss_raw(y: u8, z: f64, tau: f64) -> f64 {
    let (lp, lq) = log_probs(z, tau);
    if y == 1 {
        -lp
    } else {
        -lq
    }
}

/// `dL/dz` of [`bqr_loss`]; `z = 0` takes the `z <= 0` branch.
pub fn bqr_grad_z(y: u8, z: f64, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    check_z(z)?;
    check_label(y)?;
    Ok(bqr_grad_z_raw(y, z, tau))
}

fn bqr_grad_z_raw(y: u8, z: f64, tau: f64) -> f64 {
    match (y == 1, z > 0.0) {
        (true, true) => {
            let u = tau * ((tau - 1.0) * z).exp();
            -(1.0 - tau) * u / (1.0 - u)
        }
        (true, false) => -tau,
        (false, true) => 1.0 - tau,
        (false, false) => {
            let u = (1.0 - tau) * (tau * z).exp();
            tau * u / (1.0 - u)
        }
    }
}

/// Hinge penalty on adjacent decreasing pairs and its subgradient.
///
/// Ties get zero subgradient.
pub fn crossing_penalty(pred: &LatentPrediction) -> Result<(f64, Vec<f64>)> {
    let values = pred.values();
    if values.len() < 2 {
        return Err(BqrError::DegenerateGrid(values.len()));
    }
    let mut grad = vec![0.0; values.len()];
    let penalty = accumulate_crossing(values, 1.0, &mut grad);
    Ok((penalty, grad))
}

fn accumulate_crossing(values: &[f64], weight: f64, grad: &mut [f64]) -> f64 {
    let mut penalty = 0.0;
    for p in 0..values.len().saturating_sub(1) {
        let gap = values[p] - values[p + 1];
        if gap > 0.0 {
            penalty += gap;
            grad[p] += weight;
            grad[p + 1] -= weight;
        }
    }
    penalty
}

/// Per-sample loss: summed quantile losses plus `lambda` times the crossing
/// penalty, or sigmoid cross-entropy for the baseline kind.
pub fn total_loss(y: u8, pred: &LatentPrediction, spec: &LossSpec) -> Result<f64> {
    let mut scratch = vec![0.0; pred.len()];
    row_loss_and_grad(y, pred.values(), spec, &mut scratch)
}

/// Loss of one row and its gradient w.r.t. the latent outputs, written into `grad`.
pub(crate) fn row_loss_and_grad(y: u8, z: &[f64], spec: &LossSpec, grad: &mut [f64]) -> Result<f64> {
    check_label(y)?;
    let m = spec.grid.len();
    if z.len() != m || grad.len() != m {
        return Err(BqrError::Shape {
            expected: m,
            got: z.len(),
        });
    }
    if let Some(&bad) = z.iter().find(|v| !v.is_finite()) {
        return Err(BqrError::Domain(format!("non-finite latent output {bad}")));
    }
    match spec.kind {
        LossKind::Bqr => {
            let mut total = 0.0;
            for ((&zj, &tau), g) in z.iter().zip(spec.grid.levels()).zip(grad.iter_mut()) {
                total += bqr_loss_raw(y, zj, tau);
                *g = bqr_grad_z_raw(y, zj, tau);
            }
            if spec.lambda > 0.0 && m >= 2 {
                total += spec.lambda * accumulate_crossing(z, spec.lambda, grad);
            }
            Ok(total)
        }
        LossKind::BceBaseline => {
            if m != 1 {
                return Err(BqrError::Shape { expected: 1, got: m });
            }
            let logit = z[0];
            // -ln sigmoid(s) = softplus(-s)
            let softplus = |s: f64| s.max(0.0) + (-s.abs()).exp().ln_1p();
            let loss = if y == 1 { softplus(-logit) } else { softplus(logit) };
            let sigmoid = 1.0 / (1.0 + (-logit).exp());
            grad[0] = sigmoid - f64::from(y);
            Ok(loss)
        }
    }
}

/// Lipschitz constant of the per-sample loss in the latent outputs.
///
/// One level gives `max(tau, 1 - tau)`. For several levels the per-level
/// constants add, and every output enters at most two hinge terms, adding
/// `2 * lambda * (m - 1)`. The cross-entropy baseline is 1-Lipschitz.
pub fn lipschitz_const(spec: &LossSpec) -> f64 {
    match spec.kind {
        LossKind::Bqr => {
            let per_level: f64 = spec.grid.levels().iter().map(|&t| t.max(1.0 - t)).sum();
            let m = spec.grid.len() as f64;
            per_level + 2.0 * spec.lambda * (m - 1.0)
        }
        LossKind::BceBaseline => 1.0,
    }
}

/// Curvature constants of the expected excess loss for latents bounded by `m_bound`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvatureBounds {
    pub c1: f64,
    pub c2: f64,
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub a4: f64,
    pub m_bound: f64,
    pub tau: f64,
}

pub fn curvature_bounds(tau: f64, m_bound: f64) -> Result<CurvatureBounds> {
    check_tau(tau)?;
    if !(m_bound > 0.0 && m_bound.is_finite()) {
        return Err(BqrError::Domain(format!(
            "latent bound must be positive and finite, got {m_bound}"
        )));
    }
    let t = tau;
    let s = 1.0 - t;
    let m = m_bound;
    let e_s = (-s * m).exp();
    let e_t = (-t * m).exp();
    let e_m = (-m).exp();
    let a1 = t * s * s * e_s / (1.0 - t * e_s);
    let a2 = t * t * s * e_t / (1.0 - s * e_t);
    let a3 = t * s.powi(3) * e_m / (1.0 - t * e_s).powi(2);
    let a4 = t.powi(3) * s * e_m / (1.0 - s * e_m).powi(2);
    Ok(CurvatureBounds {
        c1: 0.5 * a1.min(a2).min(a3).min(a4),
        c2: 0.5 * t * s,
        a1,
        a2,
        a3,
        a4,
        m_bound,
        tau,
    })
}
