//! Training loops for the three run modes. The plaintext transfer loop
//! implements the exact objective the encrypted protocol computes — same
//! batch schedule, same translator, same gradient assembly — so the two
//! modes are comparable round for round.

use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::mmd::{HiddenBatch, Side, mmd2_grad_hidden, mmd2_plain};
use crate::model::{
    NetworkParams, backward, clip_score, forward, l2_reg, sgd_step, taylor_logistic_grad,
    taylor_logistic_loss, translator_vector,
};
use crate::protocol::party::gather_rows;
use crate::protocol::{batch_schedule, should_stop};
use ndarray::{Array1, Array2};
use std::collections::HashMap;

pub struct TransferInputs<'a> {
    /// Source-view features of the co-occurrence rows (row-aligned with the
    /// target's).
    pub source_features: &'a Array2<f64>,
    pub target_features: &'a Array2<f64>,
    /// Source labels of the co-occurrence rows, in {-1, +1}.
    pub labels: &'a [f64],
}

#[derive(Debug, Clone, Copy)]
pub struct TrainHyper {
    pub alpha: f64,
    pub beta: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule_seed: u64,
    pub early_stop_patience: usize,
    pub early_stop_tol: f64,
}

pub struct TransferOutcome {
    pub source_net: NetworkParams,
    pub target_net: NetworkParams,
    pub epoch_losses: Vec<f64>,
    pub round_losses: Vec<f64>,
    /// Summed aligned-layer MMD^2 on the full co-occurrence set, before the
    /// first update and after the last.
    pub alignment_mmd: (f64, f64),
}

fn aligned_hidden(
    net: &NetworkParams,
    acts: &crate::model::LayerActivations,
) -> Vec<HiddenBatch> {
    net.arch.aligned_layers().map(|l| acts.hidden_at(l)).collect()
}

/// Total aligned-layer MMD^2 between the two views' hidden representations
/// over the full co-occurrence set.
pub fn alignment_mmd(
    source_net: &NetworkParams,
    target_net: &NetworkParams,
    inputs: &TransferInputs,
    spec: &KernelSpec,
) -> Result<f64> {
    let acts_s = forward(source_net, inputs.source_features)?;
    let acts_t = forward(target_net, inputs.target_features)?;
    let hs = aligned_hidden(source_net, &acts_s);
    let ht = aligned_hidden(target_net, &acts_t);
    let mut total = 0.0;
    for (a, b) in hs.iter().zip(&ht) {
        total += mmd2_plain(a, b, spec)?;
    }
    Ok(total)
}

/// One plaintext round on one co-occurrence batch; mirrors the encrypted
/// round term for term. Returns the round loss and the updated networks.
#[allow(clippy::too_many_arguments)]
pub fn plaintext_round(
    source_net: &NetworkParams,
    target_net: &NetworkParams,
    inputs: &TransferInputs,
    batch_idx: &[usize],
    spec: &KernelSpec,
    alpha: f64,
    beta: f64,
    lr: f64,
) -> Result<(f64, NetworkParams, NetworkParams)> {
    let n = batch_idx.len();
    if n == 0 {
        return Err(Error::Training("empty batch".into()));
    }
    let n_f = n as f64;
    let s_batch = gather_rows(inputs.source_features, batch_idx);
    let t_batch = gather_rows(inputs.target_features, batch_idx);
    let labels: Vec<f64> = batch_idx.iter().map(|&i| inputs.labels[i]).collect();

    let acts_s = forward(source_net, &s_batch)?;
    let acts_t = forward(target_net, &t_batch)?;
    let hs = aligned_hidden(source_net, &acts_s);
    let ht = aligned_hidden(target_net, &acts_t);
    let last_aligned = hs.last().expect("aligned layers").layer_index;

    // translator scores for the batch (clip is straight-through in backprop)
    let t_vec = translator_vector(&hs.last().unwrap().reps, &labels)?;
    let scores: Vec<f64> = ht
        .last()
        .unwrap()
        .reps
        .rows()
        .into_iter()
        .map(|r| clip_score(r.dot(&t_vec)))
        .collect();
    let lprime: Vec<f64> =
        scores.iter().zip(&labels).map(|(f, y)| taylor_logistic_grad(*y, *f)).collect();
    let cls_loss: f64 = scores
        .iter()
        .zip(&labels)
        .map(|(f, y)| taylor_logistic_loss(*y, *f))
        .sum::<f64>()
        / n_f;

    // MMD values and hidden-layer gradients per aligned layer
    let mut mmd_total = 0.0;
    let mut grad_s: HashMap<usize, Array2<f64>> = HashMap::new();
    let mut grad_t: HashMap<usize, Array2<f64>> = HashMap::new();
    for (a, b) in hs.iter().zip(&ht) {
        mmd_total += mmd2_plain(a, b, spec)?;
        grad_s.insert(a.layer_index, mmd2_grad_hidden(a, b, spec, Side::Source)? * alpha);
        grad_t.insert(b.layer_index, mmd2_grad_hidden(a, b, spec, Side::Target)? * alpha);
    }

    // classification terms at the last aligned layer
    let ht_last = &ht.last().unwrap().reps;
    let mut agg = Array1::<f64>::zeros(ht_last.ncols());
    for (i, lp) in lprime.iter().enumerate() {
        agg.scaled_add(*lp, &ht_last.row(i));
    }
    {
        let g = grad_s.get_mut(&last_aligned).expect("aligned");
        for (j, &y) in labels.iter().enumerate() {
            let mut row = g.row_mut(j);
            row.scaled_add(y / (n_f * n_f), &agg);
        }
        let g = grad_t.get_mut(&last_aligned).expect("aligned");
        for (i, lp) in lprime.iter().enumerate() {
            let mut row = g.row_mut(i);
            row.scaled_add(lp / n_f, &t_vec);
        }
    }

    let (reg_s, reg_grads_s) = l2_reg(source_net);
    let (reg_t, reg_grads_t) = l2_reg(target_net);
    let loss = cls_loss + alpha * mmd_total + beta / 2.0 * (reg_s + reg_t);

    let mut grads = backward(source_net, &acts_s, &Array1::zeros(n), &grad_s)?;
    grads.axpy(beta / 2.0, &reg_grads_s);
    let new_source = sgd_step(source_net, &grads, lr)?;

    let mut grads = backward(target_net, &acts_t, &Array1::zeros(n), &grad_t)?;
    grads.axpy(beta / 2.0, &reg_grads_t);
    let new_target = sgd_step(target_net, &grads, lr)?;

    Ok((loss, new_source, new_target))
}

/// Full plaintext transfer training with the shared batch schedule and the
/// lockstep early-stop rule.
pub fn train_plaintext_transfer(
    mut source_net: NetworkParams,
    mut target_net: NetworkParams,
    inputs: &TransferInputs,
    spec: &KernelSpec,
    hyper: &TrainHyper,
) -> Result<TransferOutcome> {
    let n = inputs.labels.len();
    if inputs.source_features.nrows() != n || inputs.target_features.nrows() != n {
        return Err(Error::Training("co-occurrence views disagree on row count".into()));
    }
    let mmd_before = alignment_mmd(&source_net, &target_net, inputs, spec)?;
    let mut epoch_losses = Vec::new();
    let mut round_losses = Vec::new();
    for epoch in 0..hyper.epochs {
        let batches = batch_schedule(n, hyper.batch_size, epoch as u64, hyper.schedule_seed);
        let mut losses = Vec::with_capacity(batches.len());
        for batch in &batches {
            let (loss, s, t) = plaintext_round(
                &source_net,
                &target_net,
                inputs,
                batch,
                spec,
                hyper.alpha,
                hyper.beta,
                hyper.lr,
            )?;
            if !loss.is_finite() {
                return Err(Error::Training(format!("non-finite loss at epoch {epoch}")));
            }
            source_net = s;
            target_net = t;
            losses.push(loss);
            round_losses.push(loss);
        }
        epoch_losses.push(losses.iter().sum::<f64>() / losses.len() as f64);
        if should_stop(&epoch_losses, hyper.early_stop_patience, hyper.early_stop_tol) {
            break;
        }
    }
    let mmd_after = alignment_mmd(&source_net, &target_net, inputs, spec)?;
    Ok(TransferOutcome {
        source_net,
        target_net,
        epoch_losses,
        round_losses,
        alignment_mmd: (mmd_before, mmd_after),
    })
}

/// Source-only baseline: trains the source network's classifier head on the
/// source view alone (Taylor logistic + L2); the target network never
/// updates and no MMD term exists.
pub fn train_source_only(
    mut source_net: NetworkParams,
    source_features: &Array2<f64>,
    labels: &[f64],
    hyper: &TrainHyper,
) -> Result<(NetworkParams, Vec<f64>)> {
    let n = labels.len();
    if source_features.nrows() != n || n == 0 {
        return Err(Error::Training("features and labels disagree".into()));
    }
    let mut epoch_losses = Vec::new();
    for epoch in 0..hyper.epochs {
        let batches = batch_schedule(n, hyper.batch_size, epoch as u64, hyper.schedule_seed);
        let mut losses = Vec::with_capacity(batches.len());
        for batch in &batches {
            let nb = batch.len() as f64;
            let feats = gather_rows(source_features, batch);
            let ys: Vec<f64> = batch.iter().map(|&i| labels[i]).collect();
            let acts = forward(&source_net, &feats)?;
            let scores: Vec<f64> = acts.scores.iter().map(|f| clip_score(*f)).collect();
            let loss = scores
                .iter()
                .zip(&ys)
                .map(|(f, y)| taylor_logistic_loss(*y, *f))
                .sum::<f64>()
                / nb;
            let (reg, reg_grads) = l2_reg(&source_net);
            let dl_df = Array1::from_iter(
                scores.iter().zip(&ys).map(|(f, y)| taylor_logistic_grad(*y, *f) / nb),
            );
            let mut grads = backward(&source_net, &acts, &dl_df, &HashMap::new())?;
            grads.axpy(hyper.beta / 2.0, &reg_grads);
            source_net = sgd_step(&source_net, &grads, hyper.lr)?;
            losses.push(loss + hyper.beta / 2.0 * reg);
        }
        epoch_losses.push(losses.iter().sum::<f64>() / losses.len() as f64);
        if should_stop(&epoch_losses, hyper.early_stop_patience, hyper.early_stop_tol) {
            break;
        }
    }
    Ok((source_net, epoch_losses))
}

/// Pseudo-label scores for target-view rows: translator built from the
/// source net's hidden representations of the labeled co-occurrence rows
/// under the final parameters.
pub fn transfer_scores(
    source_net: &NetworkParams,
    target_net: &NetworkParams,
    basis_source_features: &Array2<f64>,
    basis_labels: &[f64],
    target_features: &Array2<f64>,
) -> Result<Vec<f64>> {
    let acts_s = forward(source_net, basis_source_features)?;
    let last_s = source_net.arch.aligned_layers().last().expect("aligned");
    let t_vec = translator_vector(&acts_s.post[last_s], basis_labels)?;
    let acts_t = forward(target_net, target_features)?;
    let last_t = target_net.arch.aligned_layers().last().expect("aligned");
    Ok(acts_t.post[last_t].rows().into_iter().map(|r| r.dot(&t_vec)).collect())
}
