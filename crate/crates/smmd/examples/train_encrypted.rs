//! Encrypted two-party training over the loopback transport, side by side
//! with the plaintext reference: per-epoch losses agree to fixed-point
//! precision, and the recorded transcript passes the privacy scanner.
//!
//! Run with: cargo run --release --example train_encrypted

use smmd::harness::{self, RunConfig, RunMode};
use smmd::protocol::{self, new_frame_log};

fn main() -> smmd::Result<()> {
    let cfg = RunConfig {
        schema: "synthetic".into(),
        subset_rows: 80,
        mode: RunMode::Encrypted,
        kernel: "linear".into(),
        epochs: 5,
        l1_widths: vec![5],
        l2_widths: vec![4],
        overlap_fraction: 0.6,
        key_bits: 512,
        ..Default::default()
    };
    println!("# {}", cfg.echo());
    let prepared = harness::prepare_data(&cfg)?;

    // encrypted run with the transcript recorded
    let log = new_frame_log();
    let (source_out, target_out) = harness::run_encrypted_in_process(&cfg, &prepared, Some(log.clone()))?;

    // plaintext twin: same seeds, same batch schedule, same objective
    let mut plain_cfg = cfg.clone();
    plain_cfg.mode = RunMode::Plaintext;
    plain_cfg.batch_size = cfg.effective_batch_size();
    let plain = harness::train_on(&plain_cfg, &prepared)?;

    println!("\nepoch   encrypted loss    plaintext loss    |diff|");
    for (i, (e, p)) in source_out.epoch_losses.iter().zip(&plain.epoch_losses).enumerate() {
        println!("{i:>5}   {e:<17.12} {p:<17.12} {:.2e}", (e - p).abs());
    }

    let m_enc = harness::evaluate(
        &source_out.net,
        &target_out.net,
        &prepared.train,
        &prepared.test,
        cfg.threshold,
    )?;
    let m_plain = plain.metrics.as_ref().unwrap();
    println!("\nencrypted: auc {:.3}   plaintext: auc {:.3}", m_enc.auc, m_plain.auc);

    let frames = log.lock().expect("frame log").clone();
    let report = protocol::assert_clean_transcript(&frames)?;
    println!(
        "transcript: {} frames, {} ciphertext/masked hex fields, 0 privacy violations",
        report.frames, report.hex_fields
    );
    Ok(())
}
