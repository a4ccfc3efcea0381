//! Independent oracles shared by the integration suites.
#![allow(dead_code)]

use bqr::loss::{self, LossSpec};
use bqr::net::{Batch, Dense, LatentPrediction, QuantileNet, TauGrid};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Adaptive Simpson quadrature.
pub fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn step<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
                + step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
        }
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    step(f, a, b, fa, fm, fb, whole, tol, 50)
}

/// Simpson over consecutive breakpoints.
pub fn simpson_pieces<F: Fn(f64) -> f64>(f: &F, breaks: &[f64], tol: f64) -> f64 {
    breaks
        .windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| simpson(f, w[0], w[1], tol))
        .sum()
}

/// Asymmetric Laplace density with unit scale.
pub fn ald_density(u: f64, tau: f64) -> f64 {
    let rho = u * (tau - if u < 0.0 { 1.0 } else { 0.0 });
    tau * (1.0 - tau) * (-rho).exp()
}

/// ALD CDF by quadrature from a far-left truncation point.
pub fn ald_cdf(x: f64, tau: f64) -> f64 {
    let lo = -40.0 / (1.0 - tau);
    let f = |u: f64| ald_density(u, tau);
    if x <= 0.0 {
        simpson(&f, lo, x, 1e-13)
    } else {
        simpson(&f, lo, 0.0, 1e-13) + simpson(&f, 0.0, x, 1e-13)
    }
}

/// Gaussian-kernel mass of `[a, b]` around `tau` by quadrature.
pub fn kernel_mass_quadrature(tau: f64, a: f64, b: f64, h: f64) -> f64 {
    let k = |p: f64| {
        let u = (tau - p) / h;
        (-0.5 * u * u).exp() / (h * (2.0 * std::f64::consts::PI).sqrt())
    };
    let mut breaks = vec![a, b];
    for j in -12..=12 {
        let p = tau + j as f64 * h;
        if p > a && p < b {
            breaks.push(p);
        }
    }
    breaks.sort_by(f64::total_cmp);
    simpson_pieces(&k, &breaks, 1e-14)
}

/// Pairwise AUC with half credit for ties.
pub fn brute_auc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let mut num = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] != 0 {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                num += 1.0;
            } else if si == sj {
                num += 0.5;
            }
        }
    }
    (pairs > 0.0).then(|| num / pairs)
}

/// Random strictly increasing grid of `m` levels in `(0.02, 0.98)`.
pub fn random_grid<R: Rng>(rng: &mut R, m: usize) -> TauGrid {
    loop {
        let mut levels: Vec<f64> = (0..m).map(|_| rng.random_range(0.02..0.98)).collect();
        levels.sort_by(f64::total_cmp);
        if levels.windows(2).all(|w| w[1] - w[0] > 1e-3) {
            return TauGrid::new(levels).expect("valid grid");
        }
    }
}

/// Small net with jittered biases so no unit starts exactly at zero.
pub fn random_net<R: Rng>(rng: &mut R, grid: TauGrid) -> QuantileNet {
    let d = rng.random_range(1..=3);
    let depth = rng.random_range(1..=2);
    let widths: Vec<usize> = (0..depth).map(|_| rng.random_range(2..=5)).collect();
    let mut net = QuantileNet::init(d, &widths, grid, rng.random()).expect("valid architecture");
    let params: Vec<f64> = net
        .params()
        .iter()
        .map(|p| p + rng.random_range(-0.3..0.3))
        .collect();
    net.set_params(&params).expect("same length");
    net
}

pub fn random_features<R: Rng>(rng: &mut R, rows: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, d), |_| rng.random_range(-1.0..1.0))
}

/// Pre-activations of every trunk unit for one input row.
pub fn trunk_preactivations(net: &QuantileNet, x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    let mut all = Vec::new();
    for layer in net.trunk() {
        let pre: Vec<f64> = (0..layer.out_dim())
            .map(|i| layer.bias[i] + layer.weights.row(i).iter().zip(&h).map(|(w, v)| w * v).sum::<f64>())
            .collect();
        all.extend(&pre);
        h = pre.iter().map(|v| v.max(0.0)).collect();
    }
    all
}

/// True when every kink of the loss surface is at least `margin` away.
pub fn away_from_kinks(net: &QuantileNet, features: &Array2<f64>, margin: f64) -> bool {
    features.rows().into_iter().all(|row| {
        let x = row.to_vec();
        let z = net.forward(&x).expect("finite").values().to_vec();
        trunk_preactivations(net, &x).iter().all(|p| p.abs() > margin)
            && z.iter().all(|v| v.abs() > margin)
            && z.windows(2).all(|w| (w[0] - w[1]).abs() > margin)
    })
}

/// Batch-mean objective computed through `total_loss` only.
pub fn mean_objective(net: &QuantileNet, features: &Array2<f64>, labels: &[u8], spec: &LossSpec) -> f64 {
    let rows = features.nrows() as f64;
    features
        .rows()
        .into_iter()
        .zip(labels)
        .map(|(row, &y)| {
            let pred = net.forward(&row.to_vec()).expect("finite");
            loss::total_loss(y, &pred, spec).expect("finite loss")
        })
        .sum::<f64>()
        / rows
}

pub fn close(analytic: f64, numeric: f64, rel: f64, abs_floor: f64) -> bool {
    let diff = (analytic - numeric).abs();
    diff <= abs_floor || diff <= rel * analytic.abs().max(numeric.abs())
}

/// Flat indices of weight entries (biases excluded).
pub fn weight_indices(net: &QuantileNet) -> Vec<usize> {
    let mut out = Vec::new();
    let mut offset = 0;
    let layers: Vec<&Dense> = net.trunk().iter().chain(std::iter::once(net.heads())).collect();
    for layer in layers {
        out.extend(offset..offset + layer.weights.len());
        offset += layer.weights.len() + layer.bias.len();
    }
    out
}

/// Worst relative error of analytic vs central-difference gradients over
/// `draws` random nets and batches away from every kink.
pub struct GradientCheck {
    pub draws: usize,
    pub rejected: usize,
    pub compared: usize,
    pub failures: usize,
    pub worst_rel: f64,
    pub worst_abs: f64,
}

pub fn gradient_check(draws: usize, seed: u64) -> GradientCheck {
    let mut rng = rng(seed);
    let mut report = GradientCheck {
        draws,
        rejected: 0,
        compared: 0,
        failures: 0,
        worst_rel: 0.0,
        worst_abs: 0.0,
    };
    let h = 1e-5;
    let mut done = 0;
    while done < draws {
        let m = rng.random_range(1..=4);
        let grid = random_grid(&mut rng, m);
        let lambda = rng.random_range(0.0..2.0);
        let spec = LossSpec::bqr(grid.clone(), lambda).expect("valid spec");
        let net = random_net(&mut rng, grid);
        let rows = rng.random_range(1..=4);
        let features = random_features(&mut rng, rows, net.input_dim());
        let labels: Vec<u8> = (0..rows).map(|_| rng.random_range(0..=1)).collect();
        if !away_from_kinks(&net, &features, 1e-3) {
            report.rejected += 1;
            continue;
        }
        done += 1;
        let (grad, _) = net
            .backward(Batch::new(features.view(), &labels).expect("aligned"), &spec)
            .expect("gradient");
        let analytic = grad.flatten();
        let base = net.params();
        let mut probe = net.clone();
        for (i, &a) in analytic.iter().enumerate() {
            let mut p = base.clone();
            p[i] = base[i] + h;
            probe.set_params(&p).expect("same length");
            let up = mean_objective(&probe, &features, &labels, &spec);
            p[i] = base[i] - h;
            probe.set_params(&p).expect("same length");
            let down = mean_objective(&probe, &features, &labels, &spec);
            let numeric = (up - down) / (2.0 * h);
            report.compared += 1;
            if !close(a, numeric, 1e-6, 1e-9) {
                report.failures += 1;
            }
            report.worst_abs = report.worst_abs.max((a - numeric).abs());
            let scale = a.abs().max(numeric.abs());
            if (a - numeric).abs() > 1e-9 && scale > 0.0 {
                report.worst_rel = report.worst_rel.max((a - numeric).abs() / scale);
            }
        }
    }
    report
}

/// Largest `|L(y, z2) - L(y, z1)| / |z2 - z1| - max(tau, 1 - tau)` over random draws.
pub fn lipschitz_excess(draws: usize, seed: u64) -> f64 {
    let mut rng = rng(seed);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..draws {
        let y = rng.random_range(0..=1u8);
        let tau: f64 = rng.random_range(1e-6..1.0);
        let z1: f64 = rng.random_range(-10.0..10.0);
        let z2: f64 = rng.random_range(-10.0..10.0);
        if z1 == z2 {
            continue;
        }
        let l1 = loss::bqr_loss(y, z1, tau).expect("finite");
        let l2 = loss::bqr_loss(y, z2, tau).expect("finite");
        let ratio = (l2 - l1).abs() / (z2 - z1).abs();
        worst = worst.max(ratio - tau.max(1.0 - tau));
    }
    worst
}

/// Count of draws violating `c1 d^2 <= E[L(y,f) - L(y,f*)] <= c2 d^2 + 1e-9`
/// with `y ~ Bernoulli(P(y=1 | f*))`.
pub fn curvature_violations(draws: usize, seed: u64) -> usize {
    let mut rng = rng(seed);
    let mut bad = 0;
    for _ in 0..draws {
        let tau: f64 = rng.random_range(0.01..0.99);
        let m: f64 = rng.random_range(0.1..10.0);
        let f: f64 = rng.random_range(-m..=m);
        let fs: f64 = rng.random_range(-m..=m);
        let bounds = loss::curvature_bounds(tau, m).expect("valid bounds");
        let p = loss::prob_pos(fs, tau).expect("finite");
        let l = |y: u8, z: f64| loss::bqr_loss(y, z, tau).expect("finite");
        let excess = p * (l(1, f) - l(1, fs)) + (1.0 - p) * (l(0, f) - l(0, fs));
        let d2 = (f - fs).powi(2);
        if excess < bounds.c1 * d2 || excess > bounds.c2 * d2 + 1e-9 {
            bad += 1;
        }
    }
    bad
}

/// Largest `|prob_pos(z, tau) - (1 - ALD_CDF(-z))|` over a `(z, tau)` grid.
pub fn prob_pos_max_error() -> f64 {
    let mut worst: f64 = 0.0;
    for zi in -40..=40 {
        let z = zi as f64 * 0.25;
        for ti in 1..20 {
            let tau = ti as f64 * 0.05;
            let oracle = 1.0 - ald_cdf(-z, tau);
            let got = loss::prob_pos(z, tau).expect("finite");
            worst = worst.max((got - oracle).abs());
        }
    }
    worst
}

/// Largest `|kernel_mass - quadrature|` over random `(tau, a, b, h)`.
pub fn kernel_mass_max_error(draws: usize, seed: u64) -> f64 {
    let mut rng = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..draws {
        let tau: f64 = rng.random_range(0.0..1.0);
        let mut a: f64 = rng.random_range(0.0..1.0);
        let mut b: f64 = rng.random_range(0.0..1.0);
        if a > b {
            std::mem::swap(&mut a, &mut b);
        }
        let h = 10f64.powf(rng.random_range(-3.0..0.0));
        let got = bqr::quantiles::kernel_mass(tau, a, b, h);
        worst = worst.max((got - kernel_mass_quadrature(tau, a, b, h)).abs());
    }
    worst
}

/// Draws where rank AUC and pairwise AUC differ.
pub fn auc_mismatches(draws: usize, seed: u64) -> usize {
    let mut rng = rng(seed);
    let mut bad = 0;
    for _ in 0..draws {
        let n = rng.random_range(1..=200);
        let levels = rng.random_range(1..=20);
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 * 0.1).collect();
        let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..=1)).collect();
        let got = bqr::eval::roc_auc(&scores, &labels).expect("aligned");
        if got != brute_auc(&scores, &labels) {
            bad += 1;
        }
    }
    bad
}

pub fn prediction(values: &[f64]) -> LatentPrediction {
    LatentPrediction::new(values.to_vec()).expect("finite")
}
