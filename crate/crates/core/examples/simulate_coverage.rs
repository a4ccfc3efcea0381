//! Train on a simulated dataset and print normalised coverage per level.
//!
//! `cargo run --release --example simulate_coverage -- d2`

use bqr::experiment::{self, RunConfig};

fn main() -> bqr::Result<()> {
    let name = std::env::args().nth(1).unwrap_or_else(|| "d1".into()).to_lowercase();
    let path = format!("{}/configs/{name}.toml", env!("CARGO_MANIFEST_DIR"));
    let cfg = RunConfig::load(&path)?;

    let (train, test) = cfg.split_dataset()?;
    let (net, _) = experiment::fit(&cfg, &train)?;
    let ev = experiment::evaluate(&net, &test)?;
    let cov = ev.coverage.expect("simulated data carry a latent");
    println!("{} ({} test rows)", ev.dataset, ev.n);
    for (tau, c) in cov.levels.iter().zip(&cov.coverage) {
        println!("  tau {tau:.1}  coverage {c:.3}");
    }
    println!("max |coverage - tau| = {:.3}", cov.max_abs_error());
    println!("corr(median, latent) = {:.3}", ev.latent_correlation.unwrap_or(f64::NAN));
    Ok(())
}
