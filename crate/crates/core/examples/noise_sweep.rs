//! Test accuracy of cross-entropy and quantile training as training labels are flipped.

use bqr::experiment::{self, RunConfig};

fn main() -> bqr::Result<()> {
    let cfg = RunConfig::load(concat!(env!("CARGO_MANIFEST_DIR"), "/configs/d2.toml"))?;
    let sweep = experiment::noise_sweep(&cfg, &[0.0, 0.4], 5)?;
    println!("{:>6} {:>8} {:>8}", "flip", "bce", "bqr");
    for ((f, a), b) in sweep.fractions.iter().zip(&sweep.bce).zip(&sweep.bqr) {
        println!("{:>5.0}% {a:8.4} {b:8.4}", f * 100.0);
    }
    sweep.write_csv(std::io::stdout())
}
