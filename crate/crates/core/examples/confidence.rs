//! Per-sample confidence scores and the misclassification they predict.

use bqr::experiment::{self, RunConfig};

fn main() -> bqr::Result<()> {
    let cfg = RunConfig::load(concat!(env!("CARGO_MANIFEST_DIR"), "/configs/d3.toml"))?;

    let (train, test) = cfg.split_dataset()?;
    let (net, _) = experiment::fit(&cfg, &train)?;
    let preds = net.forward_batch(test.features().view())?;
    let reports = experiment::confidence_reports(&net, preds.view())?;
    for (i, r) in reports.iter().take(5).enumerate() {
        println!(
            "row {i}: x {:+.3}  label {}  delta {:.2}  expected error {:.2}",
            test.features()[[i, 0]],
            r.predicted_label,
            r.delta,
            r.expected_misclassification
        );
    }

    let ev = experiment::evaluate(&net, &test)?;
    println!("\nthreshold  misclassification  retention");
    for t in &ev.delta.thresholds {
        let m = t.misclassification.map_or("-".into(), |m| format!("{m:.4}"));
        println!("  >= {:.1}  {m:>17}  {:9.3}", t.threshold, t.retention);
    }
    println!("\nbin  mean delta  observed  expected");
    for b in &ev.delta.bins {
        if let (Some(d), Some(m)) = (b.mean_delta, b.misclassification) {
            println!("{:.1}  {d:10.3}  {m:8.3}  {:8.3}", b.center, 0.5 - d);
        }
    }
    println!("R^2 = {:?}", ev.delta.r_squared);
    println!("AUC {:?} -> {:?} on delta >= 0.3", ev.auc, ev.auc_confident);
    Ok(())
}
