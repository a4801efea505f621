//! The honest-but-curious two-party training protocol: message schedule,
//! gradient masking and decrypt-with-mask rounds, wire format, transports,
//! and a transcript scanner for the structural privacy contract.

pub mod cls;
pub mod masking;
pub mod message;
pub mod party;
pub mod scanner;
pub mod transport;

pub use masking::{MaskStore, mask_cipher, unmask};
pub use message::{
    MessageBody, ProtocolMessage, Role, SharedConfig, WIRE_VERSION, deserialize, serialize,
};
pub use party::{Party, PartyData, PartyOutcome, batch_schedule, should_stop};
pub use scanner::{ScanReport, assert_clean_transcript, scan_frames};
pub use transport::{
    FrameLog, LoopbackTransport, RecordingTransport, TcpTransport, Transport, loopback_pair,
    new_frame_log,
};

use crate::error::{Error, Result};

/// Runs both parties to completion on two connected transports, one thread
/// each, and returns (source outcome, target outcome).
pub fn run_two_party(
    source: Party,
    target: Party,
    mut source_transport: Box<dyn Transport>,
    mut target_transport: Box<dyn Transport>,
) -> Result<(PartyOutcome, PartyOutcome)> {
    let source_handle = std::thread::spawn(move || source.run(&mut *source_transport));
    let target_handle = std::thread::spawn(move || target.run(&mut *target_transport));
    let source_out = source_handle
        .join()
        .map_err(|_| Error::Protocol("source party thread panicked".into()))?;
    let target_out = target_handle
        .join()
        .map_err(|_| Error::Protocol("target party thread panicked".into()))?;
    Ok((source_out?, target_out?))
}
