//! Load a headed CSV with a real-valued target, threshold it and train.

use std::io::Cursor;

use bqr::data::{self, CsvOptions};
use bqr::experiment::{self, RunConfig};

fn main() -> bqr::Result<()> {
    let mut text = String::from("# synthetic regression table\nsize,age,price\n");
    for i in 0..600 {
        let size = 40.0 + (i as f64 * 7.3) % 160.0;
        let age = (i as f64 * 3.1) % 50.0;
        let price = 2.0 * size - 1.5 * age + 15.0 * (i as f64 * 0.7).sin();
        text.push_str(&format!("{size},{age},{price}\n"));
    }

    let mut opts = CsvOptions::new("price");
    opts.threshold = Some(200.0);
    let ds = data::read_csv(Cursor::new(text), &opts)?;
    let labels = ds.labels()?;
    println!(
        "{} rows, features {:?}, {} positive",
        ds.n(),
        ds.feature_names(),
        labels.iter().filter(|&&y| y == 1).count()
    );

    let mut cfg = RunConfig::default();
    cfg.model.trunk = vec![16];
    cfg.train.epochs = 100;
    cfg.train.batch_size = 32;
    let (train, test) = ds.split(0.3, 11)?;
    let (net, _) = experiment::fit(&cfg, &train)?;
    let ev = experiment::evaluate(&net, &test)?;
    println!("test accuracy {:.3}, AUC {:?}", ev.accuracy, ev.auc);
    if let Some(cov) = ev.coverage {
        println!("coverage against the thresholded target: {:?}", cov.coverage);
    }
    Ok(())
}
