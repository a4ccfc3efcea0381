mod common;

use bqr::data::{self, CsvOptions, DatasetId, LabeledDataset, NoiseSpec};
use bqr::eval;
use bqr::loss::{self, LossSpec};
use bqr::net::{Dense, QuantileNet, TauGrid};
use bqr::optim::{self, LrMode, TrainConfig};
use bqr::quantiles::{self, ConfidenceReport};
use common::*;
use ndarray::{array, Array1, Array2};
use proptest::prelude::*;
use rand::Rng;
use statrs::distribution::{ContinuousCDF, Normal};

fn grid_strategy() -> impl Strategy<Value = TauGrid> {
    (1usize..8, any::<u64>()).prop_map(|(m, seed)| random_grid(&mut rng(seed), m))
}

/// Odd-sized symmetric grid, so the median is always present.
fn median_grid_strategy() -> impl Strategy<Value = TauGrid> {
    prop::collection::btree_set(1u32..49, 0..5).prop_map(|half| {
        let mut levels: Vec<f64> = half.iter().map(|&k| k as f64 / 100.0).collect();
        levels.extend(half.iter().map(|&k| 1.0 - k as f64 / 100.0));
        levels.push(0.5);
        levels.sort_by(f64::total_cmp);
        TauGrid::new(levels).unwrap()
    })
}

fn sorted_values(m: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-20.0f64..20.0, m).prop_map(|mut v| {
        v.sort_by(f64::total_cmp);
        v
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn forward_is_bit_identical_on_repeat(seed in any::<u64>(), rows in 1usize..20) {
        let mut r = rng(seed);
        let net = random_net(&mut r, TauGrid::default());
        let x = random_features(&mut r, rows, net.input_dim());
        let a = net.forward_batch(x.view()).unwrap();
        let b = net.forward_batch(x.view()).unwrap();
        prop_assert!(a.iter().zip(&b).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn flatten_round_trips(seed in any::<u64>()) {
        let mut r = rng(seed);
        let mut net = random_net(&mut r, TauGrid::default());
        let flat: Vec<f64> = (0..net.param_count()).map(|_| r.random_range(-3.0..3.0)).collect();
        net.set_params(&flat).unwrap();
        prop_assert_eq!(net.params(), flat);
    }

    #[test]
    fn total_loss_is_finite_and_non_negative(
        grid in grid_strategy(),
        seed in any::<u64>(),
        y in 0u8..=1,
        lambda in 0.0f64..5.0,
    ) {
        let mut r = rng(seed);
        let z: Vec<f64> = (0..grid.len()).map(|_| r.random_range(-1e3..1e3)).collect();
        let spec = LossSpec::bqr(grid, lambda).unwrap();
        let l = loss::total_loss(y, &prediction(&z), &spec).unwrap();
        prop_assert!(l.is_finite() && l >= 0.0);
    }

    #[test]
    fn delta_is_bounded_and_matches_expected_misclassification(
        grid in median_grid_strategy(),
        seed in any::<u64>(),
    ) {
        let mut r = rng(seed);
        let z: Vec<f64> = (0..grid.len()).map(|_| r.random_range(-5.0..5.0)).collect();
        let rep = quantiles::delta_score(&prediction(&z), &grid).unwrap();
        prop_assert!((0.0..=0.5).contains(&rep.delta));
        prop_assert_eq!(rep.expected_misclassification, 0.5 - rep.delta);
    }

    #[test]
    fn delta_is_scale_invariant(
        grid in median_grid_strategy(),
        seed in any::<u64>(),
        scale in 1e-3f64..1e3,
    ) {
        let mut r = rng(seed);
        let z: Vec<f64> = (0..grid.len()).map(|_| r.random_range(-5.0..5.0)).collect();
        let scaled: Vec<f64> = z.iter().map(|v| v * scale).collect();
        let a = quantiles::delta_score(&prediction(&z), &grid).unwrap();
        let b = quantiles::delta_score(&prediction(&scaled), &grid).unwrap();
        prop_assert!((a.delta - b.delta).abs() < 1e-12);
        prop_assert_eq!(a.predicted_label, b.predicted_label);
    }

    #[test]
    fn monotone_values_give_monotone_smoothing_and_ordered_intervals(
        values in sorted_values(9),
        h in 0.01f64..0.5,
        level in 0.2f64..0.9,
    ) {
        let grid = TauGrid::default();
        let pred = prediction(&values);
        let sq = quantiles::smooth(&pred, &grid, h).unwrap();
        let samples = sq.sample(201);
        prop_assert!(samples.windows(2).all(|w| w[1].1 >= w[0].1 - 1e-12));
        let (lo, hi) = quantiles::prediction_interval(&pred, &grid, level).unwrap();
        prop_assert!(lo <= hi);
    }

    #[test]
    fn tiny_bandwidth_recovers_grid_values(grid in grid_strategy(), seed in any::<u64>()) {
        let mut r = rng(seed);
        let z: Vec<f64> = (0..grid.len()).map(|_| r.random_range(-5.0..5.0)).collect();
        let sq = quantiles::smooth(&prediction(&z), &grid, 1e-4).unwrap();
        for (&tau, &q) in grid.levels().iter().zip(&z) {
            prop_assert!((sq.eval(tau) - q).abs() < 1e-3);
        }
    }

    #[test]
    fn retention_never_increases(seed in any::<u64>(), n in 1usize..300) {
        let mut r = rng(seed);
        let reports: Vec<ConfidenceReport> = (0..n)
            .map(|_| {
                let d = r.random_range(0.0..=0.5);
                ConfidenceReport { delta: d, predicted_label: r.random_range(0..=1), expected_misclassification: 0.5 - d }
            })
            .collect();
        let labels: Vec<u8> = (0..n).map(|_| r.random_range(0..=1)).collect();
        let thresholds: Vec<f64> = (0..=10).map(|k| k as f64 * 0.05).collect();
        let rep = eval::delta_report(&reports, &labels, &thresholds).unwrap();
        prop_assert!(rep.thresholds.windows(2).all(|w| w[1].retention <= w[0].retention));
    }

    #[test]
    fn flipping_twice_restores_labels(seed in any::<u64>(), n in 1usize..200, frac in 0.0f64..=0.5) {
        let mut r = rng(seed);
        let labels: Vec<u8> = (0..n).map(|_| r.random_range(0..=1)).collect();
        let ds = LabeledDataset::from_parts(random_features(&mut r, n, 2), labels.clone()).unwrap();
        let spec = NoiseSpec::new(frac, seed).unwrap();
        let once = data::flip_labels(&ds, &spec).unwrap();
        let twice = data::flip_labels(&once, &spec).unwrap();
        prop_assert_eq!(twice.labels().unwrap(), &labels[..]);
        let changed = once.labels().unwrap().iter().zip(&labels).filter(|(a, b)| a != b).count();
        prop_assert_eq!(changed, (frac * n as f64).round() as usize);
    }

    #[test]
    fn csv_round_trip(seed in any::<u64>(), n in 1usize..50, d in 1usize..4) {
        let mut r = rng(seed);
        let labels: Vec<u8> = (0..n).map(|_| r.random_range(0..=1)).collect();
        let ds = LabeledDataset::from_parts(random_features(&mut r, n, d), labels.clone()).unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf, None).unwrap();
        let mut opts = CsvOptions::new("label");
        opts.scale = false;
        let back = data::read_csv(&buf[..], &opts).unwrap();
        prop_assert_eq!(back.labels().unwrap(), &labels[..]);
        prop_assert!(back.features().iter().zip(ds.features()).all(|(a, b)| (a - b).abs() <= 1e-12));
    }

    #[test]
    fn lalr_eta_stays_positive_and_capped(seed in any::<u64>(), cap in 0.01f64..20.0) {
        let mut r = rng(seed);
        let grid = TauGrid::new(vec![0.25, 0.5, 0.75]).unwrap();
        let net = random_net(&mut r, grid.clone());
        let n = 40;
        let labels: Vec<u8> = (0..n).map(|_| r.random_range(0..=1)).collect();
        let ds = LabeledDataset::from_parts(random_features(&mut r, n, net.input_dim()), labels).unwrap();
        let cfg = TrainConfig { epochs: 5, batch_size: 8, lr_mode: LrMode::Lalr, seed, eta_cap: cap, ..TrainConfig::default() };
        let spec = LossSpec::bqr(grid, 1.0).unwrap();
        let (_, trace) = optim::train(net, &ds, &spec, &cfg).unwrap();
        prop_assert!(trace.records.iter().all(|e| e.eta > 0.0 && e.eta <= cap));
    }
}

#[test]
fn kz_matches_finite_difference_jacobian() {
    let mut r = rng(41);
    let h = 1e-6;
    let mut checked = 0;
    while checked < 200 {
        let m = r.random_range(1..=3);
        let grid = random_grid(&mut r, m);
        let net = random_net(&mut r, grid);
        let rows = r.random_range(1..=5);
        let x = random_features(&mut r, rows, net.input_dim());
        if !away_from_kinks(&net, &x, 1e-3) {
            continue;
        }
        checked += 1;
        let base = net.params();
        let mut probe = net.clone();
        let mut best: f64 = 0.0;
        for i in weight_indices(&net) {
            let mut p = base.clone();
            p[i] += h;
            probe.set_params(&p).unwrap();
            let up = probe.forward_batch(x.view()).unwrap();
            p[i] -= 2.0 * h;
            probe.set_params(&p).unwrap();
            let down = probe.forward_batch(x.view()).unwrap();
            for (a, b) in up.iter().zip(&down) {
                best = best.max(((a - b) / (2.0 * h)).abs());
            }
        }
        let kz = net.max_output_weight_gradient(x.view()).unwrap();
        assert!(close(kz, best, 1e-6, 1e-9), "kz {kz} vs finite difference {best}");
    }
}

#[test]
fn lalr_descends_on_a_convex_toy() {
    // one positive feature through an identity-like unit: the output is affine in x
    let n = 64;
    let mut r = rng(5);
    let xs: Vec<f64> = (0..n).map(|_| r.random_range(0.05..1.0)).collect();
    let labels: Vec<u8> = xs.iter().map(|&x| u8::from(x + r.random_range(-0.2..0.2) > 0.5)).collect();
    let ds = LabeledDataset::from_parts(Array2::from_shape_vec((n, 1), xs).unwrap(), labels).unwrap();
    let grid = TauGrid::median_only();
    let trunk = vec![Dense { weights: array![[1.0]], bias: Array1::zeros(1) }];
    let heads = Dense { weights: array![[0.1]], bias: Array1::zeros(1) };
    let net = QuantileNet::from_layers(trunk, heads, grid.clone()).unwrap();
    let cfg = TrainConfig { epochs: 200, batch_size: n, lr_mode: LrMode::Lalr, seed: 1, shuffle: false, ..TrainConfig::default() };
    let spec = LossSpec::bqr(grid, 1.0).unwrap();
    let (net, trace) = optim::train(net, &ds, &spec, &cfg).unwrap();
    let losses: Vec<f64> = trace.records.iter().map(|e| e.loss).collect();
    for (k, w) in losses.windows(2).enumerate() {
        assert!(w[1] <= w[0] + 1e-12, "loss rose at epoch {}: {} -> {}", k + 2, w[0], w[1]);
    }
    assert!(net.trunk()[0].weights[[0, 0]] > 0.0);
}

#[test]
fn generators_are_reproducible() {
    for id in DatasetId::ALL {
        let a = data::gen_dataset(id, 500, 9).unwrap();
        let b = data::gen_dataset(id, 500, 9).unwrap();
        assert_eq!(a.features(), b.features());
        let same = a.latent().unwrap().iter().zip(b.latent().unwrap()).all(|(p, q)| p.to_bits() == q.to_bits());
        assert!(same, "{id}");
    }
}

/// `(mean, variance)` of the additive noise.
fn noise_moments(id: DatasetId) -> (f64, f64) {
    match id {
        DatasetId::D1 => (0.0, 1.0),
        DatasetId::D2 | DatasetId::D4 => (0.0, 0.25),
        DatasetId::D3 => (0.0, 0.6 * 0.6 / 12.0),
        DatasetId::D5 => (0.0, 0.0625),
        // chi-square(2) has mean 2 and variance 4
        DatasetId::D6 => (0.5, 0.25),
    }
}

#[test]
fn generator_moments_match_quadrature() {
    let n = 100_000;
    for id in DatasetId::ALL {
        let breaks: Vec<f64> = (0..=200).map(|k| -1.0 + k as f64 * 0.01).collect();
        let m1 = simpson_pieces(&|x| id.signal(x) / 2.0, &breaks, 1e-12);
        let m2 = simpson_pieces(&|x| id.signal(x).powi(2) / 2.0, &breaks, 1e-12);
        let (nm, nv) = noise_moments(id);
        let mean = m1 + nm;
        let var = m2 - m1 * m1 + nv;
        let z = data::gen_dataset(id, n, 2024).unwrap().latent().unwrap().to_vec();
        let nf = n as f64;
        let sm = z.iter().sum::<f64>() / nf;
        let sv = z.iter().map(|v| (v - sm).powi(2)).sum::<f64>() / (nf - 1.0);
        let m4 = z.iter().map(|v| (v - sm).powi(4)).sum::<f64>() / nf;
        let se_mean = (var / nf).sqrt();
        let se_var = ((m4 - sv * sv) / nf).sqrt();
        assert!((sm - mean).abs() <= 3.0 * se_mean, "{id} mean {sm} vs {mean} (se {se_mean})");
        assert!((sv - var).abs() <= 3.0 * se_var, "{id} variance {sv} vs {var} (se {se_var})");
    }
}

fn noise_quantile(id: DatasetId, tau: f64) -> f64 {
    let normal = |sd: f64| Normal::new(0.0, sd).unwrap().inverse_cdf(tau);
    match id {
        DatasetId::D1 => normal(1.0),
        DatasetId::D2 | DatasetId::D4 => normal(0.5),
        DatasetId::D3 => -0.3 + 0.6 * tau,
        DatasetId::D5 => normal(0.25),
        DatasetId::D6 => -2.0 * (1.0 - tau).ln() / 4.0,
    }
}

#[test]
fn oracle_quantiles_have_nominal_coverage() {
    let grid = TauGrid::default();
    let n = 20_000;
    for id in DatasetId::ALL {
        let ds = data::gen_dataset(id, n, 77).unwrap();
        let x = ds.features().column(0).to_vec();
        let preds = Array2::from_shape_fn((n, grid.len()), |(i, j)| {
            id.signal(x[i]) + noise_quantile(id, grid.levels()[j])
        });
        let cov = eval::coverage(ds.latent().unwrap(), preds.view(), &grid).unwrap();
        for (&tau, &c) in cov.levels.iter().zip(&cov.coverage) {
            let se = (tau * (1.0 - tau) / n as f64).sqrt();
            assert!((c - tau).abs() <= 3.0 * se, "{id} tau {tau}: coverage {c}");
        }
    }
}
