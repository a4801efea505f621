//! Encrypted classification cross terms, computed by the source party over
//! the target's monomial ciphertexts.
//!
//! With the translator vector `T = 1/N sum y_j h_j^s` (source-private) and
//! target hidden rows `h_i^t`, the pseudo-label score is `f_i = <T, h_i^t>`
//! and the Taylor loss derivative is `l'_i = -y_i/2 + f_i/4`. The
//! classification objective is the plain sum `sum_i l(y_i, f_i)` over the
//! batch. Everything the round needs is linear or quadratic in the target
//! hidden units, so it pairs plaintext source-side coefficients against the
//! target's degree-1 and degree-2 monomials:
//!
//! * per-row target gradients `l'_i T` (delivered to the target under its
//!   own key),
//! * the aggregate `A = sum_i l'_i h_i^t` feeding the source-side gradient
//!   `(y_j / N) A` (recovered by the source via a mask round),
//! * the batch loss sum `sum_i l(y_i, f_i)`.

use crate::error::{Error, Result};
use crate::he::fixed::FixedPointParams;
use crate::he::{Ciphertext, PublicKey};
use crate::mmd::{EncryptedMonomialBatch, pair_coefficients};
use crate::model::LN_2;
use ndarray::Array1;

/// All classification cross terms for one batch, under the target's key at
/// fixed-point scale 2.
pub struct ClsCrossTerms {
    /// `[[ l'_i T_c ]]`, shape N x dim.
    pub target_grad_rows: Vec<Vec<Ciphertext>>,
    /// `[[ A_c ]] = [[ sum_i l'_i h^t_{i,c} ]]`, length dim.
    pub hidden_agg: Vec<Ciphertext>,
    /// `[[ sum_i l(y_i, f_i) ]]`.
    pub loss_sum: Ciphertext,
}

/// Builds the cross terms from the target's classification-augmented
/// monomial batch. `labels` are the source's co-occurrence labels for the
/// batch rows, `t_vec` the translator vector at the last aligned layer.
pub fn classification_cross_terms(
    t_vec: &Array1<f64>,
    labels: &[f64],
    peer: &EncryptedMonomialBatch,
    pk_peer: &PublicKey,
    params: &FixedPointParams,
) -> Result<ClsCrossTerms> {
    let n = peer.rows_len();
    if labels.len() != n {
        return Err(Error::DimMismatch(format!("{} labels for {n} peer rows", labels.len())));
    }
    let layout = &peer.layout;
    let dim = layout.dim();
    if t_vec.len() != dim {
        return Err(Error::DimMismatch(format!(
            "translator dim {} vs peer layout dim {dim}",
            t_vec.len()
        )));
    }
    let n_f = n as f64;

    let mut target_grad_rows = Vec::with_capacity(n);
    let mut hidden_agg: Vec<Option<Ciphertext>> = vec![None; dim];
    let mut loss_sum: Option<Ciphertext> = None;

    for (i, &y) in labels.iter().enumerate() {
        let row = &peer.rows[i];

        // target gradient row i, component c:
        // (1/N) l'_i T_c = (-y T_c / 2N) * 1 + sum_c' (T_c T_c' / 4N) * h_c'
        let mut grad_row = Vec::with_capacity(dim);
        for c in 0..dim {
            let mut coeffs = vec![0.0; layout.len()];
            coeffs[layout.idx_constant()?] = -y * t_vec[c] / (2.0 * n_f);
            for cp in 0..dim {
                coeffs[layout.idx_degree1(cp)?] += t_vec[c] * t_vec[cp] / (4.0 * n_f);
            }
            grad_row.push(pair_coefficients(pk_peer, params, &coeffs, row)?);
        }
        target_grad_rows.push(grad_row);

        // A_c contribution of row i: (-y/2) h_c + (1/4) f_i h_c
        for c in 0..dim {
            let mut coeffs = vec![0.0; layout.len()];
            coeffs[layout.idx_degree1(c)?] += -y / 2.0;
            for cp in 0..dim {
                coeffs[layout.idx_degree2(cp, c)?] += t_vec[cp] / 4.0;
            }
            let term = pair_coefficients(pk_peer, params, &coeffs, row)?;
            hidden_agg[c] = Some(match hidden_agg[c].take() {
                Some(prev) => pk_peer.add_cipher(&prev, &term)?,
                None => term,
            });
        }

        // loss contribution of row i: log 2 - y f_i / 2 + f_i^2 / 8
        let mut coeffs = vec![0.0; layout.len()];
        coeffs[layout.idx_constant()?] = LN_2;
        for cp in 0..dim {
            coeffs[layout.idx_degree1(cp)?] += -y * t_vec[cp] / 2.0;
        }
        for cp in 0..dim {
            for cq in cp..dim {
                let mult = if cp == cq { 1.0 } else { 2.0 };
                coeffs[layout.idx_degree2(cp, cq)?] += mult * t_vec[cp] * t_vec[cq] / 8.0;
            }
        }
        let term = pair_coefficients(pk_peer, params, &coeffs, row)?;
        loss_sum = Some(match loss_sum.take() {
            Some(prev) => pk_peer.add_cipher(&prev, &term)?,
            None => term,
        });
    }

    Ok(ClsCrossTerms {
        target_grad_rows,
        hidden_agg: hidden_agg.into_iter().map(|c| c.expect("n >= 1 rows")).collect(),
        loss_sum: loss_sum.expect("n >= 1 rows"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::he::keygen;
    use crate::kernels::{KernelSpec, MonomialLayout};
    use crate::mmd::{HiddenBatch, encrypt_monomial_batch};
    use crate::model::{taylor_logistic_grad, taylor_logistic_loss};
    use approx::assert_abs_diff_eq;
    use ndarray::{Array2, array};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn cross_terms_match_plaintext_formulas() {
        let kp = keygen(512, 61).unwrap();
        let params = FixedPointParams::new(40, 128, kp.public.modulus()).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(62);
        let spec = KernelSpec::linear();
        let dim = 3;
        let layout = MonomialLayout::for_kernel_with_classification(&spec, dim).unwrap();

        let mut drng = ChaCha20Rng::seed_from_u64(63);
        let n = 4;
        let data: Vec<f64> = (0..n * dim).map(|_| drng.random_range(-1.0..1.0)).collect();
        let target_hidden = Array2::from_shape_vec((n, dim), data).unwrap();
        let labels = [1.0, -1.0, -1.0, 1.0];
        let t_vec = array![0.4, -0.9, 0.2];

        let enc = encrypt_monomial_batch(
            &HiddenBatch::new(target_hidden.clone(), 1),
            &layout,
            &kp.public,
            &params,
            &mut rng,
        )
        .unwrap();
        let terms =
            classification_cross_terms(&t_vec, &labels, &enc, &kp.public, &params).unwrap();

        let dec = |ct: &Ciphertext| -> f64 {
            params.decode(&kp.secret.decrypt(ct).unwrap(), 2).unwrap()
        };

        let scores: Vec<f64> =
            target_hidden.rows().into_iter().map(|r| r.dot(&t_vec)).collect();
        let lprime: Vec<f64> = scores
            .iter()
            .zip(&labels)
            .map(|(f, y)| taylor_logistic_grad(*y, *f))
            .collect();

        let tol = 1e-8;
        for i in 0..n {
            for c in 0..dim {
                let expect = lprime[i] * t_vec[c] / n as f64;
                assert_abs_diff_eq!(dec(&terms.target_grad_rows[i][c]), expect, epsilon = tol);
            }
        }
        for c in 0..dim {
            let expect: f64 =
                (0..n).map(|i| lprime[i] * target_hidden[(i, c)]).sum();
            assert_abs_diff_eq!(dec(&terms.hidden_agg[c]), expect, epsilon = tol);
        }
        let expect_loss: f64 = scores
            .iter()
            .zip(&labels)
            .map(|(f, y)| taylor_logistic_loss(*y, *f))
            .sum();
        assert_abs_diff_eq!(dec(&terms.loss_sum), expect_loss, epsilon = tol);
    }

    #[test]
    fn label_count_mismatch_is_rejected() {
        let kp = keygen(256, 64).unwrap();
        let params = FixedPointParams::new(20, 60, kp.public.modulus()).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(65);
        let spec = KernelSpec::linear();
        let layout = MonomialLayout::for_kernel_with_classification(&spec, 2).unwrap();
        let enc = encrypt_monomial_batch(
            &HiddenBatch::new(array![[0.1, 0.2]], 0),
            &layout,
            &kp.public,
            &params,
            &mut rng,
        )
        .unwrap();
        let t_vec = array![0.1, 0.1];
        assert!(
            classification_cross_terms(&t_vec, &[1.0, -1.0], &enc, &kp.public, &params).is_err()
        );
    }
}
