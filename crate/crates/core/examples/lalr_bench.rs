//! Epochs to 99% training accuracy on the bundled two-blob config.

use bqr::experiment::{self, RunConfig};

fn main() -> bqr::Result<()> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/configs/smoke.toml");
    let cfg = RunConfig::load(path)?;
    let bench = experiment::lalr_bench(&cfg, 0.99)?;
    println!("{bench}");
    Ok(())
}
