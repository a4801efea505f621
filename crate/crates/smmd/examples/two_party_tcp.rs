//! Two parties over a real TCP connection (one thread each), checked to be
//! byte-for-byte equivalent to the loopback transport under identical seeds.
//!
//! Run with: cargo run --release --example two_party_tcp

use smmd::harness::{self, RunConfig, RunMode, TransportKind};

fn main() -> smmd::Result<()> {
    let cfg = RunConfig {
        schema: "synthetic".into(),
        subset_rows: 60,
        mode: RunMode::Encrypted,
        kernel: "poly".into(),
        poly_degree: 2,
        epochs: 3,
        l1_widths: vec![4],
        l2_widths: vec![3],
        overlap_fraction: 0.6,
        key_bits: 512,
        ..Default::default()
    };
    println!("# {}", cfg.echo());
    let prepared = harness::prepare_data(&cfg)?;

    let (s_loop, t_loop) = harness::run_encrypted_in_process(&cfg, &prepared, None)?;
    println!("loopback run: {} rounds, final loss {:.9}", s_loop.rounds_run, s_loop.round_losses.last().unwrap());

    let mut tcp = cfg.clone();
    tcp.transport = TransportKind::Tcp;
    let (s_tcp, t_tcp) = harness::run_encrypted_in_process(&tcp, &prepared, None)?;
    println!("tcp run:      {} rounds, final loss {:.9}", s_tcp.rounds_run, s_tcp.round_losses.last().unwrap());

    println!("\nfinal source parameters identical: {}", s_loop.net == s_tcp.net);
    println!("final target parameters identical: {}", t_loop.net == t_tcp.net);
    println!("loss histories identical:          {}", s_loop.round_losses == s_tcp.round_losses);

    println!(
        "\nfor two separate processes, run on each machine:\n  \
         smmd train --mode encrypted --role source --listen 0.0.0.0:7001 ...\n  \
         smmd train --mode encrypted --role target --connect HOST:7001 ..."
    );
    Ok(())
}
