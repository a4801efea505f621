//! Desk-scale run on the UCI credit-card default dataset (vertical feature
//! split, transfer vs source-only). Falls back to the synthetic stand-in
//! when the CSV is not on disk.
//!
//! Get the data: the "default of credit card clients" CSV (30,000 rows,
//! 23 features plus ID and label), with the header row intact, e.g. at
//! data/uci_credit_card.csv.
//!
//! Run with: cargo run --release --example uci_credit -- [path/to/credit.csv]

use smmd::harness::{self, RunConfig, RunMode};

fn main() -> smmd::Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "data/uci_credit_card.csv".into());
    let mut cfg = RunConfig {
        subset_rows: 5000,
        epochs: 30,
        batch_size: 256,
        l1_widths: vec![128],
        l2_widths: vec![64],
        kernel: "gaussian".into(),
        sigma: 1.0,
        ..Default::default()
    };
    if std::path::Path::new(&path).exists() {
        cfg.dataset = Some(path.clone().into());
        cfg.schema = "credit".into();
        println!("using {path}");
    } else {
        cfg.schema = "synthetic".into();
        println!("{path} not found; falling back to the credit-like synthetic stand-in");
    }
    println!("# {}", cfg.echo());

    let prepared = harness::prepare_data(&cfg)?;
    println!(
        "train {} rows ({} co-occurrence), test {} rows",
        prepared.train.n_samples(),
        prepared.train.n_co_occurrence(),
        prepared.test.n_samples()
    );

    let transfer = harness::train_on(&cfg, &prepared)?;
    let m = transfer.metrics.as_ref().unwrap();
    println!("\ntransfer:    fscore {:.3}  auc {:.3}  precision {:.3}", m.fscore, m.auc, m.precision);

    cfg.mode = RunMode::SourceOnly;
    let baseline = harness::train_on(&cfg, &prepared)?;
    let b = baseline.metrics.as_ref().unwrap();
    println!("source-only: fscore {:.3}  auc {:.3}  precision {:.3}", b.fscore, b.auc, b.precision);
    println!("\ntransfer beats source-only on AUC by {:+.3}", m.auc - b.auc);
    Ok(())
}
