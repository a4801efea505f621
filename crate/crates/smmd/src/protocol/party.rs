//! Per-party protocol engine: handshake, the per-round message schedule, and
//! the full training loop.
//!
//! Each party runs as an independent sequential state machine over one
//! transport. Message order is strictly half-duplex by role (the source
//! sends first in every phase), which keeps both sequence counters in
//! lockstep and makes large simultaneous frames impossible to deadlock on.
//!
//! Round schedule (one message each direction per phase):
//!
//! 1. `EncMonomials` — encrypted monomials of each aligned layer's hidden
//!    rows, under the sender's key; the target augments its last layer with
//!    the degree-1/degree-2 blocks the classification terms pair against.
//! 2. `EncScalar` — source to target: encrypted per-row classification
//!    gradients (under the target's key, for the target to decrypt and
//!    keep); target to source: its own-domain kernel sums and regularizer
//!    value encrypted under its own key for the loss assembly.
//! 3. `MaskedGradRequest` — each side masks the peer-keyed ciphertexts it
//!    computed (MMD cross gradients; plus the classification aggregate and
//!    total loss on the source side) with fresh uniform ring masks.
//! 4. `DecryptedMaskedGrad` — each side decrypts the peer's masked values
//!    (uniform noise to the decryptor) and returns the ring elements.
//! 5. `LossReport` — the source unmasks and decodes the total objective and
//!    reports it; the target echoes it back. Both record it for convergence
//!    monitoring (a deliberate aggregate-only disclosure).
//!
//! Each party then chains the decoded hidden-layer gradients through its own
//! backpropagation and takes one local SGD step.

use crate::error::{Error, Result};
use crate::he::fixed::FixedPointParams;
use crate::he::{Ciphertext, KeyPair, PublicKey, parse_hex};
use crate::kernels::MonomialLayout;
use crate::mmd::{
    EncryptedMonomialBatch, HiddenBatch, encrypt_monomial_batch, own_grad_rows, own_kernel_sum,
    secure_cross_kernel_sum, secure_mmd_grad_rows,
};
use crate::model::{
    LayerActivations, NetworkParams, backward, forward, l2_reg, sgd_step,
    translator_vector,
};
use crate::protocol::cls::classification_cross_terms;
use crate::protocol::masking::{MaskStore, mask_cipher, unmask};
use crate::protocol::message::*;
use crate::protocol::transport::Transport;
use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use std::collections::HashMap;

/// One party's private inputs: its view of the co-occurrence rows (row `i`
/// here pairs with row `i` on the peer), plus labels on the source side.
#[derive(Debug, Clone)]
pub struct PartyData {
    pub features: Array2<f64>,
    pub labels: Option<Vec<f64>>,
}

/// Training result as seen by one party.
#[derive(Debug)]
pub struct PartyOutcome {
    pub role: Role,
    pub net: NetworkParams,
    /// Loss after every round, in order.
    pub round_losses: Vec<f64>,
    /// Mean loss per completed epoch.
    pub epoch_losses: Vec<f64>,
    pub rounds_run: u64,
}

pub struct Party {
    role: Role,
    shared: SharedConfig,
    net: NetworkParams,
    data: PartyData,
    keypair: KeyPair,
    peer_pk: Option<PublicKey>,
    fx_own: FixedPointParams,
    fx_peer: Option<FixedPointParams>,
    rng: ChaCha20Rng,
    send_seq: u64,
    recv_seq: u64,
    round: u64,
    next_request_id: u64,
    masks: MaskStore,
    round_losses: Vec<f64>,
}

/// Deterministic batch index sequence for one epoch; both parties (and the
/// plaintext reference trainer) derive the identical sequence from the
/// shared schedule seed.
pub fn batch_schedule(n: usize, batch_size: usize, epoch: u64, seed: u64) -> Vec<Vec<usize>> {
    let bs = if batch_size == 0 { n } else { batch_size.min(n) };
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ (epoch + 1).wrapping_mul(0x9e3779b97f4a7c15));
    idx.shuffle(&mut rng);
    idx.chunks(bs).map(|c| c.to_vec()).collect()
}

/// Early-stop rule: the last `patience` epoch-to-epoch loss deltas are all
/// below `tol` in magnitude.
pub fn should_stop(epoch_losses: &[f64], patience: usize, tol: f64) -> bool {
    if patience == 0 || epoch_losses.len() < patience + 1 {
        return false;
    }
    let last = epoch_losses.len() - 1;
    (0..patience).all(|k| (epoch_losses[last - k] - epoch_losses[last - k - 1]).abs() < tol)
}

impl Party {
    pub fn new(
        role: Role,
        shared: SharedConfig,
        net: NetworkParams,
        data: PartyData,
        key_bits: u64,
        crypto_seed: u64,
    ) -> Result<Party> {
        shared.kernel.validate()?;
        if !shared.kernel.is_secure_evaluable() {
            return Err(Error::Config(format!(
                "{} has no secure decomposition; encrypted mode needs linear, \
                 polynomial with c=0 and d in {{2,3}}, or gaussian taylor2",
                shared.kernel.label()
            )));
        }
        if net.arch.aligned_widths() != shared.aligned_widths.as_slice() {
            return Err(Error::Config(format!(
                "aligned widths {:?} disagree with shared config {:?}",
                net.arch.aligned_widths(),
                shared.aligned_widths
            )));
        }
        if net.arch.activation != shared.activation {
            return Err(Error::Config("activation disagrees with shared config".into()));
        }
        if data.features.nrows() != shared.n_co {
            return Err(Error::Config(format!(
                "{} co-occurrence rows, shared config says {}",
                data.features.nrows(),
                shared.n_co
            )));
        }
        if data.features.ncols() != net.arch.input_dim {
            return Err(Error::Config("feature width disagrees with network input".into()));
        }
        match role {
            Role::Source => {
                let labels = data
                    .labels
                    .as_ref()
                    .ok_or_else(|| Error::Config("source party needs labels".into()))?;
                if labels.len() != shared.n_co {
                    return Err(Error::Config("label count disagrees with co-occurrence".into()));
                }
                if labels.iter().any(|y| *y != 1.0 && *y != -1.0) {
                    return Err(Error::Config("labels must be normalized to -1/+1".into()));
                }
            }
            Role::Target => {
                if data.labels.is_some() {
                    return Err(Error::Config(
                        "target party must not hold labels in the training path".into(),
                    ));
                }
            }
        }
        if crate::kernels::KernelFamily::Polynomial == shared.kernel.family
            && shared.kernel.degree == 3
            && shared.aligned_widths.iter().any(|w| *w > 16)
        {
            return Err(Error::Config(
                "secure degree-3 polynomial caps aligned-layer width at 16 \
                 (monomial count grows cubically)"
                    .into(),
            ));
        }
        let mut rng = ChaCha20Rng::seed_from_u64(crypto_seed);
        let keypair = KeyPair::generate_with_rng(key_bits, &mut rng)?;
        let fx_own =
            FixedPointParams::new(shared.frac_bits, shared.int_bits, keypair.public.modulus())?;
        Ok(Party {
            role,
            shared,
            net,
            data,
            keypair,
            peer_pk: None,
            fx_own,
            fx_peer: None,
            rng,
            send_seq: 0,
            recv_seq: 0,
            round: 0,
            next_request_id: 0,
            masks: MaskStore::new(),
            round_losses: Vec::new(),
        })
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn public_key(&self) -> &PublicKey {
        &self.keypair.public
    }

    fn send(&mut self, t: &mut dyn Transport, body: MessageBody) -> Result<()> {
        let msg = ProtocolMessage::new(self.send_seq, body);
        self.send_seq += 1;
        t.send_frame(&serialize(&msg)?)
    }

    fn recv(&mut self, t: &mut dyn Transport) -> Result<ProtocolMessage> {
        let msg = deserialize(&t.recv_frame()?)?;
        if msg.seq != self.recv_seq {
            return Err(Error::Protocol(format!(
                "out-of-order message: seq {} where {} was expected",
                msg.seq, self.recv_seq
            )));
        }
        self.recv_seq += 1;
        if self.send_seq.abs_diff(self.recv_seq) > 1 {
            return Err(Error::Protocol(format!(
                "lockstep violation: sent {} received {}",
                self.send_seq, self.recv_seq
            )));
        }
        if let MessageBody::Abort { reason } = &msg.body {
            return Err(Error::Abort(reason.clone()));
        }
        Ok(msg)
    }

    /// One lockstep phase: the source sends first, the target answers.
    fn exchange(&mut self, t: &mut dyn Transport, body: MessageBody) -> Result<ProtocolMessage> {
        match self.role {
            Role::Source => {
                self.send(t, body)?;
                self.recv(t)
            }
            Role::Target => {
                let peer = self.recv(t)?;
                self.send(t, body)?;
                Ok(peer)
            }
        }
    }

    fn abort(&mut self, t: &mut dyn Transport, reason: &str) -> Error {
        let _ = self.send(t, MessageBody::Abort { reason: reason.to_string() });
        Error::Abort(reason.to_string())
    }

    /// Exchanges and cross-validates configuration and public keys.
    pub fn handshake(&mut self, t: &mut dyn Transport) -> Result<()> {
        let hello = MessageBody::Hello(HelloBody {
            role: self.role,
            config: self.shared.clone(),
        });
        let peer = self.exchange(t, hello)?;
        let peer_hello = match peer.body {
            MessageBody::Hello(h) => h,
            other => {
                return Err(self.abort(t, &format!("expected Hello, got {}", other.kind())));
            }
        };
        if peer_hello.role == self.role {
            return Err(self.abort(t, &format!("both parties configured as {}", self.role)));
        }
        if peer_hello.config.kernel != self.shared.kernel {
            return Err(self.abort(t, "kernel spec mismatch"));
        }
        if peer_hello.config != self.shared {
            return Err(self.abort(t, "shared config mismatch"));
        }

        let (n_hex, g_hex) = self.keypair.public.to_hex_parts();
        let pubkey = MessageBody::PubKey(PubKeyBody {
            n: n_hex,
            g: g_hex,
            key_id: key_id_to_hex(self.keypair.public.key_id()),
        });
        let peer = self.exchange(t, pubkey)?;
        let peer_key = match peer.body {
            MessageBody::PubKey(k) => k,
            other => {
                return Err(self.abort(t, &format!("expected PubKey, got {}", other.kind())));
            }
        };
        let pk = PublicKey::from_hex_parts(&peer_key.n, &peer_key.g)?;
        if key_id_from_hex(&peer_key.key_id)? != pk.key_id() {
            return Err(self.abort(t, "peer key id does not match its modulus"));
        }
        self.fx_peer = Some(FixedPointParams::new(
            self.shared.frac_bits,
            self.shared.int_bits,
            pk.modulus(),
        )?);
        self.peer_pk = Some(pk);
        Ok(())
    }

    fn aligned_layers(&self) -> Vec<usize> {
        self.net.arch.aligned_layers().collect()
    }

    /// The monomial layout this party sends for a given aligned layer.
    fn own_layout(&self, layer: usize, last_aligned: usize, dim: usize) -> Result<MonomialLayout> {
        if self.role == Role::Target && layer == last_aligned {
            MonomialLayout::for_kernel_with_classification(&self.shared.kernel, dim)
        } else {
            MonomialLayout::for_kernel(&self.shared.kernel, dim)
        }
    }

    /// The layout the peer is expected to send for a given aligned layer.
    fn peer_layout(&self, layer: usize, last_aligned: usize, dim: usize) -> Result<MonomialLayout> {
        if self.role.other() == Role::Target && layer == last_aligned {
            MonomialLayout::for_kernel_with_classification(&self.shared.kernel, dim)
        } else {
            MonomialLayout::for_kernel(&self.shared.kernel, dim)
        }
    }

    /// One full protocol round over the given co-occurrence batch; returns
    /// the round loss.
    pub fn run_round(&mut self, t: &mut dyn Transport, batch_idx: &[usize]) -> Result<f64> {
        let n = batch_idx.len();
        if n == 0 {
            return Err(Error::Protocol("empty batch".into()));
        }
        let peer_pk =
            self.peer_pk.clone().ok_or_else(|| Error::Protocol("handshake not run".into()))?;
        let fx_peer =
            self.fx_peer.clone().ok_or_else(|| Error::Protocol("handshake not run".into()))?;
        let spec = self.shared.kernel.clone();
        let (alpha, beta) = (self.shared.alpha, self.shared.beta);
        let n_f = n as f64;

        // local forward pass
        let features = gather_rows(&self.data.features, batch_idx);
        let acts = forward(&self.net, &features)?;
        let aligned = self.aligned_layers();
        let last_aligned = *aligned.last().expect("validated arch");
        let hidden: Vec<HiddenBatch> = aligned.iter().map(|&l| acts.hidden_at(l)).collect();
        let batch_labels: Option<Vec<f64>> = self
            .data
            .labels
            .as_ref()
            .map(|ls| batch_idx.iter().map(|&i| ls[i]).collect());

        // phase 1: exchange encrypted monomials
        let mut own_layers = Vec::with_capacity(hidden.len());
        for hb in &hidden {
            let layout = self.own_layout(hb.layer_index, last_aligned, hb.dim())?;
            let enc =
                encrypt_monomial_batch(hb, &layout, &self.keypair.public, &self.fx_own, &mut self.rng)?;
            own_layers.push(LayerMonomials {
                layer_index: hb.layer_index,
                layout: layout.describe(),
                scale: enc.scale,
                rows: enc.rows.iter().map(|r| r.iter().map(|c| c.to_hex()).collect()).collect(),
            });
        }
        let body = MessageBody::EncMonomials(EncMonomialsBody {
            round: self.round,
            key_id: key_id_to_hex(self.keypair.public.key_id()),
            layers: own_layers,
        });
        let peer_msg = self.exchange(t, body)?;
        let peer_mono = self.parse_peer_monomials(peer_msg, n, last_aligned, &peer_pk, &hidden)?;

        // role-specific cross computations and the remaining phases
        match self.role {
            Role::Source => self.round_as_source(
                t, batch_idx, &acts, &hidden, &peer_mono, &peer_pk, &fx_peer, &spec, alpha, beta,
                n_f, last_aligned,
                batch_labels.as_deref().expect("source holds labels"),
            ),
            Role::Target => self.round_as_target(
                t, &acts, &hidden, &peer_mono, &peer_pk, &fx_peer, &spec, alpha, beta, n_f,
                last_aligned,
            ),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn round_as_source(
        &mut self,
        t: &mut dyn Transport,
        _batch_idx: &[usize],
        acts: &LayerActivations,
        hidden: &[HiddenBatch],
        peer_mono: &[EncryptedMonomialBatch],
        peer_pk: &PublicKey,
        fx_peer: &FixedPointParams,
        spec: &crate::kernels::KernelSpec,
        alpha: f64,
        beta: f64,
        n_f: f64,
        last_aligned: usize,
        labels: &[f64],
    ) -> Result<f64> {
        let n = labels.len();
        let dim_last = hidden.last().expect("aligned layers").dim();

        // translator from own labeled hidden rows at the last aligned layer
        let t_vec = translator_vector(&hidden.last().unwrap().reps, labels)?;

        // encrypted cross terms against the target's monomials
        let mut cross_sums = Vec::with_capacity(hidden.len());
        let mut grad_rows = Vec::with_capacity(hidden.len());
        for (hb, pm) in hidden.iter().zip(peer_mono) {
            cross_sums.push(secure_cross_kernel_sum(hb, pm, spec, peer_pk, fx_peer)?);
            grad_rows.push(secure_mmd_grad_rows(hb, pm, spec, peer_pk, fx_peer)?);
        }
        let cls = classification_cross_terms(
            &t_vec,
            labels,
            peer_mono.last().expect("aligned layers"),
            peer_pk,
            fx_peer,
        )?;

        // phase 2: classification gradient rows out, target own-scalars in
        let cls_tensor = CipherTensor {
            label: "cls_grad_rows".into(),
            shape: [n, dim_last],
            scale: 2,
            values: cls
                .target_grad_rows
                .iter()
                .flat_map(|row| row.iter().map(|c| c.to_hex()))
                .collect(),
        };
        let body = MessageBody::EncScalar(EncScalarBody {
            round: self.round,
            key_id: key_id_to_hex(peer_pk.key_id()),
            items: vec![cls_tensor],
        });
        let peer_msg = self.exchange(t, body)?;
        let own_scalars = match peer_msg.body {
            MessageBody::EncScalar(b) => {
                self.check_round(b.round)?;
                let item = b
                    .items
                    .into_iter()
                    .find(|i| i.label == "own_scalars")
                    .ok_or_else(|| Error::Protocol("peer sent no own_scalars".into()))?;
                if item.shape != [hidden.len() + 1, 1] || item.scale != 2 {
                    return Err(Error::Protocol("own_scalars has unexpected shape/scale".into()));
                }
                tensor_to_ciphertexts(&item, peer_pk)?
            }
            other => return Err(self.abort(t, &format!("expected EncScalar, got {}", other.kind()))),
        };
        let (peer_own_sums, peer_reg) = own_scalars.split_at(hidden.len());
        let peer_reg = &peer_reg[0];

        // local plaintext pieces of the objective
        let own_sums: Vec<f64> =
            hidden.iter().map(|hb| own_kernel_sum(hb, spec)).collect::<Result<_>>()?;
        let (reg_own, reg_grads) = l2_reg(&self.net);

        // assemble the total loss under the target's key (scale 3)
        let one_ct = &peer_mono.last().unwrap().rows[0]
            [peer_mono.last().unwrap().layout.idx_constant()?];
        let mut loss_ct = peer_pk.mul_plain(&cls.loss_sum, &fx_peer.encode(1.0 / n_f)?)?;
        for (l, cross) in cross_sums.iter().enumerate() {
            let coef = alpha / (n_f * n_f);
            let t1 = peer_pk.mul_plain(&peer_own_sums[l], &fx_peer.encode(coef)?)?;
            let t2 = peer_pk.mul_plain(one_ct, &fx_peer.encode_at_scale(own_sums[l] * coef, 2)?)?;
            let t3 = peer_pk.mul_plain(cross, &fx_peer.encode(-2.0 * coef)?)?;
            loss_ct = peer_pk.add_cipher(&loss_ct, &t1)?;
            loss_ct = peer_pk.add_cipher(&loss_ct, &t2)?;
            loss_ct = peer_pk.add_cipher(&loss_ct, &t3)?;
        }
        let t4 = peer_pk.mul_plain(peer_reg, &fx_peer.encode(beta / 2.0)?)?;
        let t5 = peer_pk.mul_plain(one_ct, &fx_peer.encode_at_scale(reg_own * beta / 2.0, 2)?)?;
        loss_ct = peer_pk.add_cipher(&loss_ct, &t4)?;
        loss_ct = peer_pk.add_cipher(&loss_ct, &t5)?;

        // phase 3/4: mask round
        let request_id = self.next_request_id;
        self.next_request_id += 1;
        let mut items = Vec::new();
        for (hb, rows) in hidden.iter().zip(&grad_rows) {
            let flat: Vec<&Ciphertext> = rows.iter().flatten().collect();
            items.push(self.mask_tensor(
                peer_pk,
                request_id,
                &format!("mmd_grad_rows_l{}", hb.layer_index),
                [rows.len(), hb.dim()],
                2,
                &flat,
            )?);
        }
        let agg_refs: Vec<&Ciphertext> = cls.hidden_agg.iter().collect();
        items.push(self.mask_tensor(peer_pk, request_id, "cls_hidden_agg", [1, dim_last], 2, &agg_refs)?);
        items.push(self.mask_tensor(peer_pk, request_id, "loss_total", [1, 1], 3, &[&loss_ct])?);

        let body = MessageBody::MaskedGradRequest(MaskedGradRequestBody {
            round: self.round,
            request_id,
            key_id: key_id_to_hex(peer_pk.key_id()),
            items,
        });
        let peer_msg = self.exchange(t, body)?;
        let peer_request = match peer_msg.body {
            MessageBody::MaskedGradRequest(b) => {
                self.check_round(b.round)?;
                b
            }
            other => {
                return Err(self.abort(t, &format!("expected MaskedGradRequest, got {}", other.kind())));
            }
        };

        // answer the peer's decrypt request, then collect our own answers
        let answer = self.decrypt_request(&peer_request)?;
        let peer_msg = self.exchange(t, MessageBody::DecryptedMaskedGrad(answer))?;
        let answered = match peer_msg.body {
            MessageBody::DecryptedMaskedGrad(b) => {
                self.check_round(b.round)?;
                if b.request_id != request_id {
                    return Err(Error::Protocol("answer for an unknown mask request".into()));
                }
                b
            }
            other => {
                return Err(self.abort(t, &format!("expected DecryptedMaskedGrad, got {}", other.kind())));
            }
        };
        let mut unmasked = self.unmask_items(&answered, request_id, fx_peer)?;

        let loss = unmasked
            .remove("loss_total")
            .ok_or_else(|| Error::Protocol("peer answer lacks loss_total".into()))?[0];
        let agg = unmasked
            .remove("cls_hidden_agg")
            .ok_or_else(|| Error::Protocol("peer answer lacks cls_hidden_agg".into()))?;

        // phase 5: loss report and echo
        let peer_msg = self.exchange(
            t,
            MessageBody::LossReport(LossReportBody { round: self.round, loss }),
        )?;
        match peer_msg.body {
            MessageBody::LossReport(b) => {
                if b.loss != loss {
                    return Err(Error::Protocol("peer echoed a different loss".into()));
                }
            }
            other => return Err(self.abort(t, &format!("expected LossReport, got {}", other.kind()))),
        }

        // gradient assembly and the local step
        let mut dl_dhidden: HashMap<usize, Array2<f64>> = HashMap::new();
        for hb in hidden {
            let label = format!("mmd_grad_rows_l{}", hb.layer_index);
            let cross_flat = unmasked
                .remove(&label)
                .ok_or_else(|| Error::Protocol(format!("peer answer lacks {label}")))?;
            let cross = Array2::from_shape_vec((hb.rows(), hb.dim()), cross_flat)
                .map_err(|e| Error::Protocol(format!("bad gradient shape: {e}")))?;
            let own = own_grad_rows(hb, spec)?;
            let coef = 2.0 * alpha / (n_f * n_f);
            let mut g = (own - cross) * coef;
            if hb.layer_index == last_aligned {
                let a = Array1::from_vec(agg.clone());
                for (j, &y) in labels.iter().enumerate() {
                    let mut row = g.row_mut(j);
                    row.scaled_add(y / (n_f * n_f), &a);
                }
            }
            dl_dhidden.insert(hb.layer_index, g);
        }
        let mut grads = backward(&self.net, acts, &Array1::zeros(n), &dl_dhidden)?;
        grads.axpy(beta / 2.0, &reg_grads);
        self.net = sgd_step(&self.net, &grads, self.shared.lr)?;

        self.round += 1;
        self.round_losses.push(loss);
        Ok(loss)
    }

    #[allow(clippy::too_many_arguments)]
    fn round_as_target(
        &mut self,
        t: &mut dyn Transport,
        acts: &LayerActivations,
        hidden: &[HiddenBatch],
        peer_mono: &[EncryptedMonomialBatch],
        peer_pk: &PublicKey,
        fx_peer: &FixedPointParams,
        spec: &crate::kernels::KernelSpec,
        alpha: f64,
        beta: f64,
        n_f: f64,
        last_aligned: usize,
    ) -> Result<f64> {
        let n = hidden[0].rows();
        let dim_last = hidden.last().expect("aligned layers").dim();

        // encrypted MMD cross gradients for our own rows, under the source key
        let mut grad_rows = Vec::with_capacity(hidden.len());
        for (hb, pm) in hidden.iter().zip(peer_mono) {
            grad_rows.push(secure_mmd_grad_rows(hb, pm, spec, peer_pk, fx_peer)?);
        }

        // own-domain scalars, encrypted under our own key for the source's
        // loss assembly
        let own_sums: Vec<f64> =
            hidden.iter().map(|hb| own_kernel_sum(hb, spec)).collect::<Result<_>>()?;
        let (reg_own, reg_grads) = l2_reg(&self.net);
        let mut scalar_cts = Vec::with_capacity(own_sums.len() + 1);
        for v in own_sums.iter().chain(std::iter::once(&reg_own)) {
            let encoded = self.fx_own.encode_at_scale(*v, 2)?;
            scalar_cts.push(self.keypair.public.encrypt(&encoded, &mut self.rng)?);
        }
        let body = MessageBody::EncScalar(EncScalarBody {
            round: self.round,
            key_id: key_id_to_hex(self.keypair.public.key_id()),
            items: vec![CipherTensor {
                label: "own_scalars".into(),
                shape: [own_sums.len() + 1, 1],
                scale: 2,
                values: scalar_cts.iter().map(|c| c.to_hex()).collect(),
            }],
        });
        let peer_msg = self.exchange(t, body)?;
        let cls_rows = match peer_msg.body {
            MessageBody::EncScalar(b) => {
                self.check_round(b.round)?;
                let item = b
                    .items
                    .into_iter()
                    .find(|i| i.label == "cls_grad_rows")
                    .ok_or_else(|| Error::Protocol("source sent no cls_grad_rows".into()))?;
                if item.shape != [n, dim_last] || item.scale != 2 {
                    return Err(Error::Protocol("cls_grad_rows has unexpected shape/scale".into()));
                }
                // under our own key: decrypt and decode our per-row
                // classification gradients
                let cts = tensor_to_ciphertexts(&item, &self.keypair.public)?;
                let mut vals = Vec::with_capacity(cts.len());
                for ct in &cts {
                    let m = self.keypair.secret.decrypt(ct)?;
                    vals.push(self.fx_own.decode(&m, item.scale)?);
                }
                Array2::from_shape_vec((n, dim_last), vals)
                    .map_err(|e| Error::Protocol(format!("bad cls gradient shape: {e}")))?
            }
            other => return Err(self.abort(t, &format!("expected EncScalar, got {}", other.kind()))),
        };

        // phase 3/4: mask round (we answer first, then get our answers)
        let request_id = self.next_request_id;
        self.next_request_id += 1;
        let mut items = Vec::new();
        for (hb, rows) in hidden.iter().zip(&grad_rows) {
            let flat: Vec<&Ciphertext> = rows.iter().flatten().collect();
            items.push(self.mask_tensor(
                peer_pk,
                request_id,
                &format!("mmd_grad_rows_l{}", hb.layer_index),
                [rows.len(), hb.dim()],
                2,
                &flat,
            )?);
        }
        let body = MessageBody::MaskedGradRequest(MaskedGradRequestBody {
            round: self.round,
            request_id,
            key_id: key_id_to_hex(peer_pk.key_id()),
            items,
        });
        let peer_msg = self.exchange(t, body)?;
        let peer_request = match peer_msg.body {
            MessageBody::MaskedGradRequest(b) => {
                self.check_round(b.round)?;
                b
            }
            other => {
                return Err(self.abort(t, &format!("expected MaskedGradRequest, got {}", other.kind())));
            }
        };
        let answer = self.decrypt_request(&peer_request)?;
        let peer_msg = self.exchange(t, MessageBody::DecryptedMaskedGrad(answer))?;
        let answered = match peer_msg.body {
            MessageBody::DecryptedMaskedGrad(b) => {
                self.check_round(b.round)?;
                if b.request_id != request_id {
                    return Err(Error::Protocol("answer for an unknown mask request".into()));
                }
                b
            }
            other => {
                return Err(self.abort(t, &format!("expected DecryptedMaskedGrad, got {}", other.kind())));
            }
        };
        let mut unmasked = self.unmask_items(&answered, request_id, fx_peer)?;

        // phase 5: receive the loss, echo it
        let peer_msg = self.recv(t)?;
        let loss = match peer_msg.body {
            MessageBody::LossReport(b) => {
                self.check_round(b.round)?;
                b.loss
            }
            MessageBody::Abort { reason } => return Err(Error::Abort(reason)),
            other => return Err(self.abort(t, &format!("expected LossReport, got {}", other.kind()))),
        };
        self.send(t, MessageBody::LossReport(LossReportBody { round: self.round, loss }))?;

        // gradient assembly and the local step
        let mut dl_dhidden: HashMap<usize, Array2<f64>> = HashMap::new();
        for hb in hidden {
            let label = format!("mmd_grad_rows_l{}", hb.layer_index);
            let cross_flat = unmasked
                .remove(&label)
                .ok_or_else(|| Error::Protocol(format!("peer answer lacks {label}")))?;
            let cross = Array2::from_shape_vec((hb.rows(), hb.dim()), cross_flat)
                .map_err(|e| Error::Protocol(format!("bad gradient shape: {e}")))?;
            let own = own_grad_rows(hb, spec)?;
            let coef = 2.0 * alpha / (n_f * n_f);
            let mut g = (own - cross) * coef;
            if hb.layer_index == last_aligned {
                g += &cls_rows;
            }
            dl_dhidden.insert(hb.layer_index, g);
        }
        let mut grads = backward(&self.net, acts, &Array1::zeros(n), &dl_dhidden)?;
        grads.axpy(beta / 2.0, &reg_grads);
        self.net = sgd_step(&self.net, &grads, self.shared.lr)?;

        self.round += 1;
        self.round_losses.push(loss);
        Ok(loss)
    }

    /// Full training loop: handshake, all epochs with the shared batch
    /// schedule, lockstep early stopping, and the closing Done exchange.
    pub fn run(mut self, t: &mut dyn Transport) -> Result<PartyOutcome> {
        self.handshake(t)?;
        let mut epoch_losses = Vec::new();
        'epochs: for epoch in 0..self.shared.epochs {
            let batches = batch_schedule(
                self.shared.n_co,
                self.shared.batch_size,
                epoch as u64,
                self.shared.schedule_seed,
            );
            let mut losses = Vec::with_capacity(batches.len());
            for batch in &batches {
                match self.run_round(t, batch) {
                    Ok(loss) => losses.push(loss),
                    Err(e) => {
                        if !matches!(e, Error::Abort(_) | Error::Transport(_)) {
                            let _ = self.send(t, MessageBody::Abort { reason: e.to_string() });
                        }
                        return Err(e);
                    }
                }
            }
            let epoch_loss = losses.iter().sum::<f64>() / losses.len() as f64;
            epoch_losses.push(epoch_loss);
            if should_stop(&epoch_losses, self.shared.early_stop_patience, self.shared.early_stop_tol)
            {
                break 'epochs;
            }
        }
        let peer_done = self.exchange(t, MessageBody::Done)?;
        if !matches!(peer_done.body, MessageBody::Done) {
            return Err(Error::Protocol(format!(
                "expected Done, got {}",
                peer_done.body.kind()
            )));
        }
        Ok(PartyOutcome {
            role: self.role,
            net: self.net,
            round_losses: self.round_losses,
            epoch_losses,
            rounds_run: self.round,
        })
    }

    fn check_round(&self, round: u64) -> Result<()> {
        if round != self.round {
            return Err(Error::Protocol(format!(
                "peer is at round {round}, we are at {}",
                self.round
            )));
        }
        Ok(())
    }

    fn parse_peer_monomials(
        &self,
        msg: ProtocolMessage,
        n: usize,
        last_aligned: usize,
        peer_pk: &PublicKey,
        hidden: &[HiddenBatch],
    ) -> Result<Vec<EncryptedMonomialBatch>> {
        let body = match msg.body {
            MessageBody::EncMonomials(b) => b,
            other => {
                return Err(Error::Protocol(format!(
                    "expected EncMonomials, got {}",
                    other.kind()
                )));
            }
        };
        self.check_round(body.round)?;
        if key_id_from_hex(&body.key_id)? != peer_pk.key_id() {
            return Err(Error::KeyMismatch {
                expected: peer_pk.key_id(),
                found: key_id_from_hex(&body.key_id)?,
            });
        }
        if body.layers.len() != hidden.len() {
            return Err(Error::Protocol(format!(
                "peer sent {} aligned layers, expected {}",
                body.layers.len(),
                hidden.len()
            )));
        }
        let mut out = Vec::with_capacity(body.layers.len());
        for (layer, hb) in body.layers.iter().zip(hidden) {
            if layer.layer_index != hb.layer_index {
                return Err(Error::Protocol(format!(
                    "peer layer index {} where {} was expected",
                    layer.layer_index, hb.layer_index
                )));
            }
            if layer.scale != 1 {
                return Err(Error::Protocol("monomials must arrive at scale 1".into()));
            }
            let expected = self.peer_layout(hb.layer_index, last_aligned, hb.dim())?;
            if layer.layout != expected.describe() {
                return Err(Error::Protocol(format!(
                    "monomial layout mismatch at layer {}: peer sent {:?}, expected {:?} \
                     (kernel spec disagreement between parties)",
                    layer.layer_index,
                    layer.layout,
                    expected.describe()
                )));
            }
            if layer.rows.len() != n {
                return Err(Error::Protocol(format!(
                    "peer sent {} monomial rows for a batch of {n}",
                    layer.rows.len()
                )));
            }
            let mut rows = Vec::with_capacity(n);
            for row in &layer.rows {
                if row.len() != expected.len() {
                    return Err(Error::Protocol(format!(
                        "monomial count mismatch: row has {}, layout expects {}",
                        row.len(),
                        expected.len()
                    )));
                }
                rows.push(
                    row.iter()
                        .map(|hex| Ciphertext::from_hex(hex, peer_pk))
                        .collect::<Result<Vec<_>>>()?,
                );
            }
            out.push(EncryptedMonomialBatch {
                rows,
                layer_index: layer.layer_index,
                key_id: peer_pk.key_id(),
                scale: layer.scale,
                layout: expected,
            });
        }
        Ok(out)
    }

    fn mask_tensor(
        &mut self,
        peer_pk: &PublicKey,
        request_id: u64,
        label: &str,
        shape: [usize; 2],
        scale: u32,
        cts: &[&Ciphertext],
    ) -> Result<CipherTensor> {
        if cts.len() != shape[0] * shape[1] {
            return Err(Error::DimMismatch(format!(
                "{label}: {} ciphertexts for shape {shape:?}",
                cts.len()
            )));
        }
        let mut values = Vec::with_capacity(cts.len());
        for (idx, ct) in cts.iter().enumerate() {
            let (masked, r) = mask_cipher(peer_pk, ct, &mut self.rng)?;
            self.masks.insert(request_id, label, idx, r);
            values.push(masked.to_hex());
        }
        Ok(CipherTensor { label: label.to_string(), shape, scale, values })
    }

    /// Decrypts a peer's masked request with our secret key. The plaintexts
    /// are uniform ring elements; we learn nothing and return them as-is.
    fn decrypt_request(&self, req: &MaskedGradRequestBody) -> Result<DecryptedMaskedGradBody> {
        if key_id_from_hex(&req.key_id)? != self.keypair.public.key_id() {
            return Err(Error::KeyMismatch {
                expected: self.keypair.public.key_id(),
                found: key_id_from_hex(&req.key_id)?,
            });
        }
        let mut items = Vec::with_capacity(req.items.len());
        for item in &req.items {
            let mut values = Vec::with_capacity(item.values.len());
            for hex in &item.values {
                let ct = Ciphertext::from_hex(hex, &self.keypair.public)?;
                values.push(self.keypair.secret.decrypt(&ct)?.to_str_radix(16));
            }
            items.push(PlainTensor {
                label: item.label.clone(),
                shape: item.shape,
                scale: item.scale,
                values,
            });
        }
        Ok(DecryptedMaskedGradBody { round: req.round, request_id: req.request_id, items })
    }

    /// Unmasks and decodes a peer's answers to our mask request.
    fn unmask_items(
        &mut self,
        body: &DecryptedMaskedGradBody,
        request_id: u64,
        fx_peer: &FixedPointParams,
    ) -> Result<HashMap<String, Vec<f64>>> {
        let masks = self.masks.take_request(request_id)?;
        let n_peer = fx_peer.modulus();
        let mut out = HashMap::new();
        for item in &body.items {
            let mut values = Vec::with_capacity(item.values.len());
            for (idx, hex) in item.values.iter().enumerate() {
                let ring = parse_hex(hex)?;
                if &ring >= n_peer {
                    return Err(Error::Protocol("decrypted value not reduced mod n".into()));
                }
                let mask = masks.get(&(item.label.clone(), idx)).ok_or_else(|| {
                    Error::Protocol(format!("no mask recorded for {}[{idx}]", item.label))
                })?;
                let unmasked = unmask(n_peer, &ring, mask);
                values.push(fx_peer.decode(&unmasked, item.scale)?);
            }
            out.insert(item.label.clone(), values);
        }
        Ok(out)
    }
}

pub(crate) fn gather_rows(m: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((idx.len(), m.ncols()));
    for (ii, &i) in idx.iter().enumerate() {
        out.row_mut(ii).assign(&m.row(i));
    }
    out
}

fn tensor_to_ciphertexts(tensor: &CipherTensor, pk: &PublicKey) -> Result<Vec<Ciphertext>> {
    if tensor.values.len() != tensor.shape[0] * tensor.shape[1] {
        return Err(Error::Protocol(format!(
            "{}: {} values for shape {:?}",
            tensor.label,
            tensor.values.len(),
            tensor.shape
        )));
    }
    tensor.values.iter().map(|hex| Ciphertext::from_hex(hex, pk)).collect()
}
