//! The wire format: length-prefix-framed UTF-8 JSON objects with hex-encoded
//! big integers, version `smmd/1`.

use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::model::Activation;
use serde::{Deserialize, Serialize};

pub const WIRE_VERSION: &str = "smmd/1";

/// Which side of the protocol a party plays.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Source,
    Target,
}

impl Role {
    pub fn other(self) -> Role {
        match self {
            Role::Source => Role::Target,
            Role::Target => Role::Source,
        }
    }
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Role::Source => write!(f, "source"),
            Role::Target => write!(f, "target"),
        }
    }
}

/// Everything both parties must agree on before training; validated
/// field-by-field during the handshake.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharedConfig {
    pub kernel: KernelSpec,
    pub frac_bits: u32,
    pub int_bits: u32,
    pub aligned_widths: Vec<usize>,
    /// Co-occurrence count.
    pub n_co: usize,
    /// Rows per round; 0 means the full co-occurrence set.
    pub batch_size: usize,
    pub epochs: usize,
    pub alpha: f64,
    pub beta: f64,
    pub lr: f64,
    pub activation: Activation,
    /// Both parties derive identical batch index sequences from this.
    pub schedule_seed: u64,
    pub early_stop_patience: usize,
    pub early_stop_tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HelloBody {
    pub role: Role,
    pub config: SharedConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PubKeyBody {
    pub n: String,
    pub g: String,
    pub key_id: String,
}

/// One aligned layer's worth of encrypted monomial rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerMonomials {
    pub layer_index: usize,
    /// Canonical layout tag, e.g. `c+d1+d2@4`; cross-validated on receipt.
    pub layout: String,
    pub scale: u32,
    pub rows: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncMonomialsBody {
    pub round: u64,
    pub key_id: String,
    pub layers: Vec<LayerMonomials>,
}

/// A labeled tensor of ciphertexts (kernel-sum scalars, regularizer values,
/// classification gradient rows).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CipherTensor {
    pub label: String,
    pub shape: [usize; 2],
    pub scale: u32,
    pub values: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncScalarBody {
    pub round: u64,
    pub key_id: String,
    pub items: Vec<CipherTensor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskedGradRequestBody {
    pub round: u64,
    pub request_id: u64,
    pub key_id: String,
    pub items: Vec<CipherTensor>,
}

/// Ring elements (hex) recovered by the key owner from masked ciphertexts;
/// uniform noise to the decryptor, meaningful only after unmasking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlainTensor {
    pub label: String,
    pub shape: [usize; 2],
    pub scale: u32,
    pub values: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecryptedMaskedGradBody {
    pub round: u64,
    pub request_id: u64,
    pub items: Vec<PlainTensor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReportBody {
    pub round: u64,
    /// Total objective value; a deliberate aggregate-only disclosure for
    /// convergence monitoring.
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum MessageBody {
    Hello(HelloBody),
    PubKey(PubKeyBody),
    EncMonomials(EncMonomialsBody),
    EncScalar(EncScalarBody),
    MaskedGradRequest(MaskedGradRequestBody),
    DecryptedMaskedGrad(DecryptedMaskedGradBody),
    LossReport(LossReportBody),
    Abort { reason: String },
    Done,
}

impl MessageBody {
    pub fn kind(&self) -> &'static str {
        match self {
            MessageBody::Hello(_) => "Hello",
            MessageBody::PubKey(_) => "PubKey",
            MessageBody::EncMonomials(_) => "EncMonomials",
            MessageBody::EncScalar(_) => "EncScalar",
            MessageBody::MaskedGradRequest(_) => "MaskedGradRequest",
            MessageBody::DecryptedMaskedGrad(_) => "DecryptedMaskedGrad",
            MessageBody::LossReport(_) => "LossReport",
            MessageBody::Abort { .. } => "Abort",
            MessageBody::Done => "Done",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolMessage {
    pub version: String,
    pub seq: u64,
    #[serde(flatten)]
    pub body: MessageBody,
}

impl ProtocolMessage {
    pub fn new(seq: u64, body: MessageBody) -> Self {
        ProtocolMessage { version: WIRE_VERSION.to_string(), seq, body }
    }
}

/// Message to frame payload (UTF-8 JSON).
pub fn serialize(msg: &ProtocolMessage) -> Result<Vec<u8>> {
    serde_json::to_vec(msg).map_err(|e| Error::Wire(e.to_string()))
}

/// Frame payload back to a message, with the version checked before the
/// body so foreign versions fail cleanly.
pub fn deserialize(bytes: &[u8]) -> Result<ProtocolMessage> {
    if bytes.is_empty() {
        return Err(Error::Wire("malformed frame: zero-length payload".into()));
    }
    let value: serde_json::Value = serde_json::from_slice(bytes)
        .map_err(|e| Error::Wire(format!("{e} (line {}, column {})", e.line(), e.column())))?;
    match value.get("version").and_then(|v| v.as_str()) {
        Some(WIRE_VERSION) => {}
        Some(other) => {
            return Err(Error::Wire(format!(
                "unknown version {other:?}, expected {WIRE_VERSION:?}"
            )));
        }
        None => return Err(Error::Wire("frame lacks a version field".into())),
    }
    serde_json::from_value(value).map_err(|e| Error::Wire(format!("bad {WIRE_VERSION} frame: {e}")))
}

pub fn key_id_to_hex(key_id: u64) -> String {
    format!("{key_id:016x}")
}

pub fn key_id_from_hex(s: &str) -> Result<u64> {
    u64::from_str_radix(s, 16).map_err(|_| Error::Wire(format!("non-hex key id {s:?}")))
}


#[cfg(test)]
mod tests {
    use super::tests_support::shared_config_for_tests as shared_config;
    use super::*;

    fn samples() -> Vec<MessageBody> {
        vec![
            MessageBody::Hello(HelloBody { role: Role::Source, config: shared_config() }),
            MessageBody::PubKey(PubKeyBody {
                n: "ff01".into(),
                g: "ff02".into(),
                key_id: "00000000deadbeef".into(),
            }),
            MessageBody::EncMonomials(EncMonomialsBody {
                round: 2,
                key_id: "0000000000000001".into(),
                layers: vec![LayerMonomials {
                    layer_index: 1,
                    layout: "c+d1@4".into(),
                    scale: 1,
                    rows: vec![vec!["ab".into(), "cd".into()], vec!["01".into(), "02".into()]],
                }],
            }),
            MessageBody::EncScalar(EncScalarBody {
                round: 2,
                key_id: "0000000000000001".into(),
                items: vec![CipherTensor {
                    label: "own_scalars".into(),
                    shape: [2, 1],
                    scale: 2,
                    values: vec!["0a".into(), "0b".into()],
                }],
            }),
            MessageBody::MaskedGradRequest(MaskedGradRequestBody {
                round: 2,
                request_id: 5,
                key_id: "0000000000000001".into(),
                items: vec![CipherTensor {
                    label: "mmd_grad_rows_l1".into(),
                    shape: [1, 2],
                    scale: 2,
                    values: vec!["11".into(), "22".into()],
                }],
            }),
            MessageBody::DecryptedMaskedGrad(DecryptedMaskedGradBody {
                round: 2,
                request_id: 5,
                items: vec![PlainTensor {
                    label: "mmd_grad_rows_l1".into(),
                    shape: [1, 2],
                    scale: 2,
                    values: vec!["33".into(), "44".into()],
                }],
            }),
            MessageBody::LossReport(LossReportBody { round: 2, loss: 0.6931 }),
            MessageBody::Abort { reason: "kernel spec mismatch".into() },
            MessageBody::Done,
        ]
    }

    #[test]
    fn roundtrip_every_kind() {
        for (i, body) in samples().into_iter().enumerate() {
            let msg = ProtocolMessage::new(i as u64, body);
            let bytes = serialize(&msg).unwrap();
            let back = deserialize(&bytes).unwrap();
            assert_eq!(back, msg);
        }
    }

    #[test]
    fn version_and_frame_errors() {
        let msg = ProtocolMessage::new(0, MessageBody::Done);
        let bytes = serialize(&msg).unwrap();
        let tampered = String::from_utf8(bytes).unwrap().replace("smmd/1", "smmd/2");
        let err = deserialize(tampered.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("smmd/2"), "{err}");

        assert!(deserialize(b"").is_err());
        let err = deserialize(b"{\"version\": \"smmd/1\", ").unwrap_err();
        assert!(err.to_string().contains("column"), "{err}");
        let err = deserialize(br#"{"version":"smmd/1","seq":0,"kind":"Nope","payload":null}"#)
            .unwrap_err();
        assert!(err.to_string().contains("Nope") || err.to_string().contains("variant"), "{err}");
    }

    #[test]
    fn wire_json_shape_is_stable() {
        let msg = ProtocolMessage::new(3, MessageBody::LossReport(LossReportBody {
            round: 1,
            loss: 0.5,
        }));
        let v: serde_json::Value = serde_json::from_slice(&serialize(&msg).unwrap()).unwrap();
        assert_eq!(v["version"], "smmd/1");
        assert_eq!(v["seq"], 3);
        assert_eq!(v["kind"], "LossReport");
        assert_eq!(v["payload"]["loss"], 0.5);
    }
}
