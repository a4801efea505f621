//! End-to-end protocol tests: the encrypted two-party run against the
//! plaintext reference, transports, handshake failure modes, and the
//! transcript privacy scanner.

use smmd::harness::{
    self, RunConfig, RunMode, TransportKind, build_parties, prepare_data, run_encrypted_in_process,
};
use smmd::kernels::{KernelMode, KernelSpec};
use smmd::protocol::{self, MessageBody, Role, Transport, loopback_pair, new_frame_log};

fn small_config(kernel: &str) -> RunConfig {
    RunConfig {
        schema: "synthetic".into(),
        subset_rows: 60,
        mode: RunMode::Encrypted,
        kernel: kernel.into(),
        epochs: 3,
        l1_widths: vec![4],
        l2_widths: vec![3],
        overlap_fraction: 0.6,
        key_bits: 512,
        ..Default::default()
    }
}

fn plaintext_twin(cfg: &RunConfig) -> RunConfig {
    let mut plain = cfg.clone();
    plain.mode = RunMode::Plaintext;
    // keep the encrypted batch cap so the schedules agree
    plain.batch_size = cfg.effective_batch_size();
    // compare like for like: the twin runs the kernel the encrypted mode
    // resolved to (taylor2 for gaussian)
    if cfg.kernel_spec().unwrap().mode == KernelMode::Taylor2 {
        plain.kernel_mode = "taylor2".into();
    }
    plain
}

#[test]
fn encrypted_loopback_matches_plaintext_reference() {
    for kernel in ["linear", "poly", "gaussian"] {
        let cfg = small_config(kernel);
        let prepared = prepare_data(&cfg).unwrap();
        let enc = harness::train_on(&cfg, &prepared).unwrap();
        let plain = harness::train_on(&plaintext_twin(&cfg), &prepared).unwrap();

        assert_eq!(enc.epoch_losses.len(), plain.epoch_losses.len(), "kernel {kernel}");
        for (e, p) in enc.epoch_losses.iter().zip(&plain.epoch_losses) {
            assert!(
                (e - p).abs() <= 1e-3,
                "kernel {kernel}: encrypted loss {e} vs plaintext {p}"
            );
        }
        let me = enc.metrics.unwrap();
        let mp = plain.metrics.unwrap();
        assert!(
            (me.auc - mp.auc).abs() <= 0.02,
            "kernel {kernel}: encrypted auc {} vs plaintext {}",
            me.auc,
            mp.auc
        );
    }
}

#[test]
fn encrypted_gaussian_uses_taylor2_and_plaintext_twin_matches() {
    let cfg = small_config("gaussian");
    assert_eq!(cfg.kernel_spec().unwrap().mode, KernelMode::Taylor2);
    // the plaintext twin must run the same (taylor2) kernel for comparability
    let mut twin = plaintext_twin(&cfg);
    twin.kernel_mode = "taylor2".into();
    assert_eq!(twin.kernel_spec().unwrap().mode, KernelMode::Taylor2);
}

#[test]
fn transcript_is_clean_and_masks_are_fresh() {
    let cfg = small_config("linear");
    let prepared = prepare_data(&cfg).unwrap();
    let log = new_frame_log();
    let (source_out, target_out) =
        run_encrypted_in_process(&cfg, &prepared, Some(log.clone())).unwrap();
    assert!(source_out.rounds_run > 0);
    assert_eq!(source_out.rounds_run, target_out.rounds_run);

    let frames = log.lock().unwrap().clone();
    assert!(!frames.is_empty());
    let report = protocol::assert_clean_transcript(&frames).unwrap();
    assert!(report.hex_fields > 0);

    // same loss reported to both sides
    assert_eq!(source_out.round_losses, target_out.round_losses);
}

#[test]
fn tcp_and_loopback_produce_identical_parameters() {
    let cfg = small_config("linear");
    let prepared = prepare_data(&cfg).unwrap();
    let (s_loop, t_loop) = run_encrypted_in_process(&cfg, &prepared, None).unwrap();
    let mut tcp_cfg = cfg.clone();
    tcp_cfg.transport = TransportKind::Tcp;
    let (s_tcp, t_tcp) = run_encrypted_in_process(&tcp_cfg, &prepared, None).unwrap();
    assert_eq!(s_loop.net, s_tcp.net);
    assert_eq!(t_loop.net, t_tcp.net);
    assert_eq!(s_loop.round_losses, s_tcp.round_losses);
}

#[test]
fn handshake_rejects_kernel_mismatch() {
    let cfg = small_config("linear");
    let prepared = prepare_data(&cfg).unwrap();
    let (source, _) = build_parties(&cfg, &prepared).unwrap();
    let mut gauss_cfg = small_config("gaussian");
    gauss_cfg.sigma = 2.0;
    let (_, target) = build_parties(&gauss_cfg, &prepare_data(&gauss_cfg).unwrap()).unwrap();

    let (a, b) = loopback_pair();
    let err = protocol::run_two_party(source, target, Box::new(a), Box::new(b)).unwrap_err();
    assert!(
        err.to_string().contains("kernel spec mismatch")
            || err.to_string().contains("aborted"),
        "{err}"
    );
}

#[test]
fn replayed_hello_is_a_protocol_error() {
    let cfg = small_config("linear");
    let prepared = prepare_data(&cfg).unwrap();
    let (_, target) = build_parties(&cfg, &prepared).unwrap();
    let (mut a, b) = loopback_pair();

    // a fake source that reuses seq 0 for its second message
    let handle = std::thread::spawn(move || {
        let mut b: Box<dyn Transport> = Box::new(b);
        target.run(&mut *b)
    });
    let hello = build_parties(&cfg, &prepared).unwrap().0;
    let shared = harness::shared_config(&cfg, prepared.train.co_indices.len()).unwrap();
    let msg = protocol::ProtocolMessage::new(
        0,
        MessageBody::Hello(protocol::message::HelloBody { role: Role::Source, config: shared }),
    );
    drop(hello);
    let bytes = protocol::serialize(&msg).unwrap();
    a.send_frame(&bytes).unwrap();
    let _ = a.recv_frame().unwrap(); // target's hello
    a.send_frame(&bytes).unwrap(); // replay with seq 0 where 1 is expected
    let err = handle.join().unwrap().unwrap_err();
    assert!(err.to_string().contains("out-of-order"), "{err}");
}

#[test]
fn peer_disconnect_surfaces_as_transport_error() {
    let cfg = small_config("linear");
    let prepared = prepare_data(&cfg).unwrap();
    let (_, target) = build_parties(&cfg, &prepared).unwrap();
    let (a, b) = loopback_pair();
    let handle = std::thread::spawn(move || {
        let mut b: Box<dyn Transport> = Box::new(b);
        target.run(&mut *b)
    });
    drop(a); // peer vanishes before the handshake
    let err = handle.join().unwrap().unwrap_err();
    assert!(err.to_string().contains("disconnected"), "{err}");
}
