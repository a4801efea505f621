//! Decrypt-with-mask: before a ciphertext under the peer's key is sent back
//! for decryption, its owner adds an encryption of a uniform ring element.
//! The decryptor sees only the masked value (information-theoretically
//! hidden); the owner subtracts the mask from the returned plaintext.

use crate::error::{Error, Result};
use crate::he::{Ciphertext, PublicKey};
use num_bigint::BigUint;
use rand::RngCore;
use std::collections::HashMap;

/// Masks `c` with a fresh uniform ring element, returning the masked
/// ciphertext and the mask to keep.
pub fn mask_cipher(
    pk_peer: &PublicKey,
    c: &Ciphertext,
    rng: &mut dyn RngCore,
) -> Result<(Ciphertext, BigUint)> {
    let r = pk_peer.sample_ring(rng);
    let masked = pk_peer.add_cipher(c, &pk_peer.encrypt(&r, rng)?)?;
    Ok((masked, r))
}

/// Removes a mask from a decrypted ring element: `(m - r) mod n`.
pub fn unmask(n: &BigUint, decrypted: &BigUint, mask: &BigUint) -> BigUint {
    ((decrypted + n) - mask % n) % n
}

/// One-time mask storage keyed by `(request id, item label, index)`. Taking
/// a request consumes its masks; a second take is an error, so a mask can
/// never cover two values.
#[derive(Debug, Default)]
pub struct MaskStore {
    records: HashMap<u64, HashMap<(String, usize), BigUint>>,
}

impl MaskStore {
    pub fn new() -> Self {
        MaskStore::default()
    }

    pub fn insert(&mut self, request_id: u64, label: &str, index: usize, mask: BigUint) {
        self.records
            .entry(request_id)
            .or_default()
            .insert((label.to_string(), index), mask);
    }

    /// Consumes and returns all masks of one request.
    pub fn take_request(&mut self, request_id: u64) -> Result<HashMap<(String, usize), BigUint>> {
        self.records.remove(&request_id).ok_or_else(|| {
            Error::Protocol(format!(
                "masks for request {request_id} already consumed or never created"
            ))
        })
    }

    pub fn pending(&self) -> usize {
        self.records.len()
    }
}
