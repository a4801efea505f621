//! A small kernel-grid experiment: encrypted / plaintext / source-only rows
//! over several seeds, with mean and std per cell, as a text table and CSV.
//!
//! Run with: cargo run --release --example table_experiment

use smmd::harness::{RunConfig, RunMode, run_table_experiment};
use smmd::kernels::KernelSpec;

fn main() -> smmd::Result<()> {
    let base = RunConfig {
        schema: "synthetic".into(),
        subset_rows: 240,
        epochs: 12,
        l1_widths: vec![6],
        l2_widths: vec![4],
        overlap_fraction: 0.6,
        key_bits: 512,
        ..Default::default()
    };
    let kernels = vec![
        ("linear".to_string(), KernelSpec::linear()),
        ("poly2".to_string(), KernelSpec::polynomial(0.0, 2)),
        ("gauss1".to_string(), KernelSpec::gaussian(1.0)),
    ];
    let modes = [RunMode::Encrypted, RunMode::Plaintext, RunMode::SourceOnly];
    let report = run_table_experiment(&base, &kernels, &modes, 2)?;
    print!("{}", report.to_text());
    println!("\nCSV rows:\n{}", report.to_csv());
    Ok(())
}
