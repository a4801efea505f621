//! The squared maximum mean discrepancy estimator, its gradient with respect
//! to hidden representations, and the secure composition of cross-party
//! kernel sums and gradient rows from encrypted peer monomials.
//!
//! The estimator is the biased V-statistic
//!
//! ```text
//! MMD^2 = 1/Ns^2 sum k(s_i, s_i') + 1/Nt^2 sum k(t_j, t_j')
//!         - 2/(Ns Nt) sum k(s_i, t_j)
//! ```
//!
//! including the diagonal self-pair terms. The secure path touches peer data
//! only through [`crate::he::PublicKey::add_cipher`] and
//! [`crate::he::PublicKey::mul_plain`]; these functions never see a secret
//! key, and the per-key decrypt counter lets tests pin that no decryption
//! happens here.

use crate::error::{Error, Result};
use crate::he::fixed::FixedPointParams;
use crate::he::{Ciphertext, PublicKey};
use crate::kernels::{
    self, KernelSpec, MonomialLayout, eval_kernel, grad_coefficients, kernel_grad_x,
    value_coefficients,
};
use ndarray::{Array2, Axis};
use num_bigint::BigUint;
use num_traits::Zero;
use rand::RngCore;

/// One party's hidden representations for the co-occurrence batch at one
/// aligned layer. Rows are index-aligned across parties: row `i` of the
/// source batch pairs with row `i` of the target batch.
#[derive(Debug, Clone)]
pub struct HiddenBatch {
    pub reps: Array2<f64>,
    pub layer_index: usize,
}

impl HiddenBatch {
    pub fn new(reps: Array2<f64>, layer_index: usize) -> Self {
        HiddenBatch { reps, layer_index }
    }

    pub fn rows(&self) -> usize {
        self.reps.nrows()
    }

    pub fn dim(&self) -> usize {
        self.reps.ncols()
    }

    fn row_vec(&self, i: usize) -> Vec<f64> {
        self.reps.row(i).to_vec()
    }
}

/// Which side's rows a gradient is taken with respect to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Source,
    Target,
}

/// Element-wise encryption of one party's monomial rows under that party's
/// key, as sent to the peer.
#[derive(Debug, Clone)]
pub struct EncryptedMonomialBatch {
    pub rows: Vec<Vec<Ciphertext>>,
    pub layer_index: usize,
    pub key_id: u64,
    /// Fixed-point factors carried by every entry (always 1 for fresh
    /// monomial encodings).
    pub scale: u32,
    pub layout: MonomialLayout,
}

impl EncryptedMonomialBatch {
    pub fn rows_len(&self) -> usize {
        self.rows.len()
    }

    fn check_key(&self, pk: &PublicKey) -> Result<()> {
        if self.key_id != pk.key_id() {
            return Err(Error::KeyMismatch { expected: pk.key_id(), found: self.key_id });
        }
        for row in &self.rows {
            if row.len() != self.layout.len() {
                return Err(Error::Protocol(format!(
                    "monomial count mismatch: row has {}, layout {} expects {} \
                     (kernel spec disagreement between parties)",
                    row.len(),
                    self.layout.describe(),
                    self.layout.len()
                )));
            }
        }
        Ok(())
    }
}

fn check_batches(xs: &HiddenBatch, xt: &HiddenBatch) -> Result<()> {
    if xs.rows() == 0 || xt.rows() == 0 {
        return Err(Error::DimMismatch("empty hidden batch".into()));
    }
    if xs.dim() != xt.dim() {
        return Err(Error::DimMismatch(format!(
            "hidden dims differ: {} vs {}",
            xs.dim(),
            xt.dim()
        )));
    }
    Ok(())
}

/// The biased V-statistic of the squared MMD between two hidden batches.
pub fn mmd2_plain(xs: &HiddenBatch, xt: &HiddenBatch, spec: &KernelSpec) -> Result<f64> {
    check_batches(xs, xt)?;
    let (ns, nt) = (xs.rows(), xt.rows());
    let ss = own_kernel_sum(xs, spec)?;
    let tt = own_kernel_sum(xt, spec)?;
    let mut st = 0.0;
    for i in 0..ns {
        let xi = xs.row_vec(i);
        for j in 0..nt {
            st += eval_kernel(spec, &xi, &xt.row_vec(j))?;
        }
    }
    Ok(ss / (ns * ns) as f64 + tt / (nt * nt) as f64 - 2.0 * st / (ns * nt) as f64)
}

/// Exact analytic gradient of [`mmd2_plain`] with respect to each row of the
/// chosen side, including both argument positions of the self terms.
pub fn mmd2_grad_hidden(
    xs: &HiddenBatch,
    xt: &HiddenBatch,
    spec: &KernelSpec,
    wrt: Side,
) -> Result<Array2<f64>> {
    check_batches(xs, xt)?;
    let (own, other) = match wrt {
        Side::Source => (xs, xt),
        Side::Target => (xt, xs),
    };
    let (n_own, n_other) = (own.rows(), other.rows());
    let dim = own.dim();
    let mut grad = Array2::<f64>::zeros((n_own, dim));
    // All supported kernels are symmetric, so the derivative of k(a, b) in b
    // equals kernel_grad_x(b, a); each own-pair (i, i') contributes twice.
    for i in 0..n_own {
        let xi = own.row_vec(i);
        let mut acc = vec![0.0; dim];
        for j in 0..n_own {
            let g = kernel_grad_x(spec, &xi, &own.row_vec(j))?;
            for (a, v) in acc.iter_mut().zip(&g) {
                *a += 2.0 * v / (n_own * n_own) as f64;
            }
        }
        for j in 0..n_other {
            let g = kernel_grad_x(spec, &xi, &other.row_vec(j))?;
            for (a, v) in acc.iter_mut().zip(&g) {
                *a -= 2.0 * v / (n_own * n_other) as f64;
            }
        }
        for (c, v) in acc.iter().enumerate() {
            grad[(i, c)] = *v;
        }
    }
    Ok(grad)
}

/// Per-row sums of own-domain kernel gradients,
/// `out[i] = sum_j d k(x_i, x_j) / d x_i`; with the caller's `2 alpha / N^2`
/// factor this is the local half of the MMD gradient (the factor 2 covers
/// both argument positions of the symmetric kernel).
pub fn own_grad_rows(batch: &HiddenBatch, spec: &KernelSpec) -> Result<Array2<f64>> {
    let (n, dim) = (batch.rows(), batch.dim());
    if n == 0 {
        return Err(Error::DimMismatch("empty hidden batch".into()));
    }
    let mut out = Array2::<f64>::zeros((n, dim));
    for i in 0..n {
        let xi = batch.row_vec(i);
        for j in 0..n {
            let g = kernel_grad_x(spec, &xi, &batch.row_vec(j))?;
            for (c, v) in g.iter().enumerate() {
                out[(i, c)] += v;
            }
        }
    }
    Ok(out)
}

/// Sum of kernel values over all own-domain pairs, `sum_{i,j} k(x_i, x_j)`;
/// the locally computed scalar a party contributes to the loss assembly.
pub fn own_kernel_sum(batch: &HiddenBatch, spec: &KernelSpec) -> Result<f64> {
    let n = batch.rows();
    if n == 0 {
        return Err(Error::DimMismatch("empty hidden batch".into()));
    }
    let mut acc = 0.0;
    for i in 0..n {
        let xi = batch.row_vec(i);
        for j in 0..n {
            acc += eval_kernel(spec, &xi, &batch.row_vec(j))?;
        }
    }
    Ok(acc)
}

/// Encrypts the monomials of every row of `batch` under `pk`, using the
/// given layout (kernel-only, or classification-augmented).
pub fn encrypt_monomial_batch(
    batch: &HiddenBatch,
    layout: &MonomialLayout,
    pk: &PublicKey,
    params: &FixedPointParams,
    rng: &mut dyn RngCore,
) -> Result<EncryptedMonomialBatch> {
    if batch.dim() != layout.dim() {
        return Err(Error::DimMismatch(format!(
            "batch dim {} vs layout dim {}",
            batch.dim(),
            layout.dim()
        )));
    }
    let mut rows = Vec::with_capacity(batch.rows());
    for i in 0..batch.rows() {
        let encoded = kernels::encode_monomials(layout, &batch.row_vec(i), params)?;
        let mut row = Vec::with_capacity(encoded.len());
        for m in &encoded {
            row.push(pk.encrypt(m, rng)?);
        }
        rows.push(row);
    }
    Ok(EncryptedMonomialBatch {
        rows,
        layer_index: batch.layer_index,
        key_id: pk.key_id(),
        scale: 1,
        layout: layout.clone(),
    })
}

/// Column-wise homomorphic sums over all rows of an encrypted batch:
/// `out[t] = [[sum_j monomial_t(peer_j)]]`.
pub fn summed_monomials(pk: &PublicKey, batch: &EncryptedMonomialBatch) -> Result<Vec<Ciphertext>> {
    batch.check_key(pk)?;
    let mut rows = batch.rows.iter();
    let first = rows.next().ok_or_else(|| Error::DimMismatch("empty monomial batch".into()))?;
    let mut acc = first.clone();
    for row in rows {
        for (a, c) in acc.iter_mut().zip(row) {
            *a = pk.add_cipher(a, c)?;
        }
    }
    Ok(acc)
}

/// Pairs a plaintext coefficient vector (scale 1) against encrypted
/// monomials (scale 1), yielding one ciphertext at scale 2. Zero
/// coefficients are skipped.
pub(crate) fn pair_coefficients(
    pk: &PublicKey,
    params: &FixedPointParams,
    coeffs: &[f64],
    monomials: &[Ciphertext],
) -> Result<Ciphertext> {
    if coeffs.len() != monomials.len() {
        return Err(Error::Protocol(format!(
            "coefficient count {} vs monomial count {}",
            coeffs.len(),
            monomials.len()
        )));
    }
    let mut acc: Option<Ciphertext> = None;
    for (a, m) in coeffs.iter().zip(monomials) {
        if *a == 0.0 {
            continue;
        }
        let term = pk.mul_plain(m, &params.encode(*a)?)?;
        acc = Some(match acc {
            Some(prev) => pk.add_cipher(&prev, &term)?,
            None => term,
        });
    }
    match acc {
        Some(c) => Ok(c),
        // All-zero coefficients: annihilate an existing ciphertext so the
        // result is still a well-formed encryption of zero.
        None => pk.mul_plain(&monomials[0], &BigUint::zero()),
    }
}

/// `[[sum_i sum_j k(own_i, peer_j)]]` under the peer's key, computed with
/// ciphertext additions and plaintext multiplications only. The result
/// carries fixed-point scale 2; normalization (e.g. `2 alpha / N^2`) is the
/// caller's business.
pub fn secure_cross_kernel_sum(
    own: &HiddenBatch,
    peer: &EncryptedMonomialBatch,
    spec: &KernelSpec,
    pk_peer: &PublicKey,
    params: &FixedPointParams,
) -> Result<Ciphertext> {
    let layout = MonomialLayout::for_kernel(spec, own.dim())?;
    check_layout_compat(&layout, &peer.layout)?;
    let summed = summed_monomials(pk_peer, peer)?;
    // sum_i a_t(own_i), accumulated exactly in the ring before pairing
    let mut coeff_sums = vec![BigUint::zero(); peer.layout.len()];
    let mut nonzero = vec![false; peer.layout.len()];
    for i in 0..own.rows() {
        let coeffs = project_coefficients(
            &value_coefficients(spec, &layout, &own.row_vec(i))?,
            &layout,
            &peer.layout,
        )?;
        for (t, a) in coeffs.iter().enumerate() {
            if *a != 0.0 {
                coeff_sums[t] = params.ring_add(&coeff_sums[t], &params.encode(*a)?);
                nonzero[t] = true;
            }
        }
    }
    let mut acc: Option<Ciphertext> = None;
    for (t, s) in coeff_sums.iter().enumerate() {
        if !nonzero[t] {
            continue;
        }
        let term = pk_peer.mul_plain(&summed[t], s)?;
        acc = Some(match acc {
            Some(prev) => pk_peer.add_cipher(&prev, &term)?,
            None => term,
        });
    }
    match acc {
        Some(c) => Ok(c),
        None => pk_peer.mul_plain(&summed[0], &BigUint::zero()),
    }
}

/// Per-own-row encrypted MMD gradient cross terms,
/// `out[i][c] = [[sum_j d k(own_i, peer_j) / d own_i[c]]]`, under the peer's
/// key at scale 2. The caller applies the `-2 alpha / N^2` factor after
/// decryption.
pub fn secure_mmd_grad_rows(
    own: &HiddenBatch,
    peer: &EncryptedMonomialBatch,
    spec: &KernelSpec,
    pk_peer: &PublicKey,
    params: &FixedPointParams,
) -> Result<Vec<Vec<Ciphertext>>> {
    let layout = MonomialLayout::for_kernel(spec, own.dim())?;
    check_layout_compat(&layout, &peer.layout)?;
    let summed = summed_monomials(pk_peer, peer)?;
    let mut out = Vec::with_capacity(own.rows());
    for i in 0..own.rows() {
        let rows = grad_coefficients(spec, &layout, &own.row_vec(i))?;
        let mut grad_row = Vec::with_capacity(own.dim());
        for row in &rows {
            let projected = project_coefficients(row, &layout, &peer.layout)?;
            grad_row.push(pair_coefficients(pk_peer, params, &projected, &summed)?);
        }
        out.push(grad_row);
    }
    Ok(out)
}

/// The kernel layout must be a sub-layout of what the peer actually sent
/// (the peer may send a classification-augmented superset).
fn check_layout_compat(needed: &MonomialLayout, sent: &MonomialLayout) -> Result<()> {
    if needed.dim() != sent.dim() {
        return Err(Error::DimMismatch(format!(
            "monomial layout dims differ: {} vs {}",
            needed.dim(),
            sent.dim()
        )));
    }
    for b in needed.blocks() {
        if !sent.has_block(*b) {
            return Err(Error::Protocol(format!(
                "peer layout {} lacks block {b:?} required by {} \
                 (kernel spec disagreement between parties)",
                sent.describe(),
                needed.describe()
            )));
        }
    }
    Ok(())
}

/// Re-indexes a coefficient vector over `from` into the (super-)layout `to`,
/// zero-filling blocks the source layout does not populate.
pub fn project_coefficients(
    coeffs: &[f64],
    from: &MonomialLayout,
    to: &MonomialLayout,
) -> Result<Vec<f64>> {
    if from == to {
        return Ok(coeffs.to_vec());
    }
    check_layout_compat(from, to)?;
    let dim = from.dim();
    let mut out = vec![0.0; to.len()];
    for block in from.blocks() {
        match block {
            kernels::MonomialBlock::Constant => {
                out[to.idx_constant()?] = coeffs[from.idx_constant()?];
            }
            kernels::MonomialBlock::Degree1 => {
                for k in 0..dim {
                    out[to.idx_degree1(k)?] = coeffs[from.idx_degree1(k)?];
                }
            }
            kernels::MonomialBlock::Degree2 => {
                for k in 0..dim {
                    for l in k..dim {
                        out[to.idx_degree2(k, l)?] = coeffs[from.idx_degree2(k, l)?];
                    }
                }
            }
            kernels::MonomialBlock::Degree3 => {
                for k in 0..dim {
                    for l in k..dim {
                        for m in l..dim {
                            out[to.idx_degree3(k, l, m)?] = coeffs[from.idx_degree3(k, l, m)?];
                        }
                    }
                }
            }
            kernels::MonomialBlock::NormSq => {
                out[to.idx_norm_sq()?] = coeffs[from.idx_norm_sq()?];
            }
            kernels::MonomialBlock::NormFourth => {
                out[to.idx_norm_fourth()?] = coeffs[from.idx_norm_fourth()?];
            }
            kernels::MonomialBlock::CoordNormSq => {
                for k in 0..dim {
                    out[to.idx_coord_norm_sq(k)?] = coeffs[from.idx_coord_norm_sq(k)?];
                }
            }
        }
    }
    Ok(out)
}

/// Column means over rows, handy for synthetic-data assertions.
pub fn batch_mean(batch: &HiddenBatch) -> Vec<f64> {
    batch.reps.mean_axis(Axis(0)).map(|m| m.to_vec()).unwrap_or_default()
}
