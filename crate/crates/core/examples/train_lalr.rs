//! Low-level training loop with the adaptive step size.

use bqr::data::{self, DatasetId, Threshold};
use bqr::optim::{self, LrMode, TrainConfig};
use bqr::{LossSpec, QuantileNet, TauGrid};

fn main() -> bqr::Result<()> {
    let raw = data::gen_dataset(DatasetId::D3, 2000, 7)?;
    let ds = raw.with_threshold(Threshold::Median)?;
    let grid = TauGrid::uniform(9)?;
    let spec = LossSpec::bqr(grid.clone(), 1.0)?;
    let net = QuantileNet::init(ds.dim(), &[32, 32], grid, 1)?;

    let cfg = TrainConfig {
        epochs: 60,
        batch_size: 128,
        lr_mode: LrMode::Lalr,
        seed: 3,
        ..TrainConfig::default()
    };
    let (net, trace) = optim::train(net, &ds, &spec, &cfg)?;
    println!("L = {:.1}", bqr::loss::lipschitz_const(&spec));
    println!("epoch      loss  accuracy       k_z       eta");
    for r in trace.records.iter().step_by(10).chain(trace.records.last()) {
        println!("{:5} {:9.4} {:9.4} {:9.3} {:9.4}", r.epoch, r.loss, r.accuracy, r.kz, r.eta);
    }
    println!("params: {}", net.param_count());
    Ok(())
}
