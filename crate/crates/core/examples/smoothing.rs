//! Kernel-smoothed quantile function, conditional mean/variance and a 50% interval.

use bqr::net::LatentPrediction;
use bqr::quantiles::{self, Functional};
use bqr::TauGrid;

fn main() -> bqr::Result<()> {
    let grid = TauGrid::uniform(9)?;
    // N(0.4, 1) quantiles at 0.1..0.9.
    let z = [-1.2816, -0.8416, -0.5244, -0.2533, 0.0, 0.2533, 0.5244, 0.8416, 1.2816];
    let pred = LatentPrediction::new(z.iter().map(|v| v + 0.4).collect())?;

    for h in [0.02, 0.1, 0.3] {
        let sq = quantiles::smooth(&pred, &grid, h)?;
        println!(
            "h {h:<4}  mean {:+.4}  variance {:.4}  Q(0.25) {:+.4}",
            quantiles::conditional_mean(&sq),
            quantiles::conditional_stat(&sq, Functional::Variance),
            sq.eval(0.25),
        );
    }

    let (lo, hi) = quantiles::prediction_interval(&pred, &grid, 0.5)?;
    println!("50% interval [{lo:+.4}, {hi:+.4}]");
    let conf = quantiles::delta_score(&pred, &grid)?;
    println!("delta {:.3}, label {}", conf.delta, conf.predicted_label);
    Ok(())
}
