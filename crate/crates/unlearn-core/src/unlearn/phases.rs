//! The two training phases and the saliency computation between them.

use std::time::Instant;

use super::losses::{contrastive_forget_loss_grad, kl_uniform_loss_grad, retain_ce_loss_grad};
use super::saliency::{apply_mask, mask_from_grads, MaskMode, SaliencyMask};
use super::{batch_images, batch_labels, PhaseReport, UnlearnConfig};
use crate::backend::{Classifier, LossOutput, ParamGrads, SgdOptimizer};
use crate::data::{BatchIter, LabeledDataset};
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepKind {
    Contrastive,
    CrossEntropy,
}

/// Phase 1: minimize KL(softmax(logits) || uniform) over forget batches
/// only. No mask is applied here.
pub fn forgetting_phase(
    model: &mut Classifier,
    ds: &LabeledDataset,
    forget: &[usize],
    cfg: &UnlearnConfig,
) -> Result<PhaseReport> {
    cfg.validate()?;
    if forget.is_empty() {
        return Err(Error::config("forgetting phase: nothing to forget (empty forget set)"));
    }
    let start = Instant::now();
    let mut report = PhaseReport { epochs: cfg.phase1_epochs, ..Default::default() };
    let mut opt = SgdOptimizer::new(cfg.phase1_lr, cfg.momentum, cfg.weight_decay)?;
    model.set_train(true);
    for epoch in 0..cfg.phase1_epochs {
        let shuffle = derive_seed(cfg.seed, "phase1-shuffle", epoch as u64, 0);
        let mut loss_sum = 0.0f64;
        let mut count = 0usize;
        for batch in BatchIter::new(forget, cfg.batch_size_forget, Some(shuffle), false)? {
            let images = batch_images(ds, &batch, None);
            let (loss, grads) = model.loss_grads(&images, |logits, _f, _v| {
                let (v, g) = kl_uniform_loss_grad(logits)?;
                Ok(LossOutput::from_logits(v, g))
            })?;
            opt.step(model, &grads)?;
            loss_sum += loss * batch.len() as f64;
            count += batch.len();
        }
        report.kl_loss.push(loss_sum / count as f64);
    }
    model.set_train(false);
    report.seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Mean forgetting-loss gradient over the whole forget set at the current
/// parameters (eval mode, fixed batch order), turned into a mask. Computed
/// once at the phase-1 endpoint and frozen for all of phase 2.
pub fn compute_saliency(
    model: &mut Classifier,
    ds: &LabeledDataset,
    forget: &[usize],
    cfg: &UnlearnConfig,
    mode: MaskMode,
) -> Result<SaliencyMask> {
    cfg.validate()?;
    if forget.is_empty() {
        return Err(Error::config("saliency: empty forget set"));
    }
    if mode == MaskMode::None {
        return mask_from_grads(&ParamGrads::zeros_like(model), MaskMode::None, cfg.hard_sparsity);
    }
    let was_train = model.is_train();
    model.set_train(false);
    let mut total: Option<ParamGrads> = None;
    for batch in BatchIter::new(forget, cfg.batch_size_forget, None, false)? {
        let images = batch_images(ds, &batch, None);
        let (_, mut grads) = model.loss_grads(&images, |logits, _f, _v| {
            let (v, g) = kl_uniform_loss_grad(logits)?;
            Ok(LossOutput::from_logits(v, g))
        })?;
        // batch means weighted back to sums, then normalized by |D_f|
        grads.scale(batch.len() as f32);
        match &mut total {
            Some(t) => t.add_assign(&grads)?,
            None => total = Some(grads),
        }
    }
    let mut mean = total.expect("at least one batch");
    mean.scale(1.0 / forget.len() as f32);
    model.set_train(was_train);
    mask_from_grads(&mean, mode, cfg.hard_sparsity)
}

/// Phase 2: per retain pass, one contrastive step on a forget batch
/// (positive pairs from augmentation, negatives from the adjacent retain
/// batch) before every `alternation_ratio` cross-entropy retain steps.
/// The mask gates contrastive gradients; CE steps stay unmasked unless
/// `mask_ce` is set. Forget batches cycle as needed.
pub fn adversarial_finetune_phase(
    model: &mut Classifier,
    ds: &LabeledDataset,
    forget: &[usize],
    retain: &[usize],
    mask: &SaliencyMask,
    cfg: &UnlearnConfig,
) -> Result<PhaseReport> {
    cfg.validate()?;
    if forget.is_empty() || retain.is_empty() {
        return Err(Error::config("adversarial fine-tuning needs nonempty forget and retain sets"));
    }
    let start = Instant::now();
    let mut report = PhaseReport { epochs: cfg.phase2_epochs, ..Default::default() };
    let mut opt = SgdOptimizer::new(cfg.phase2_lr, cfg.momentum, cfg.weight_decay)?;
    model.set_train(true);

    // Cycling forget-batch stream with per-pass reshuffling.
    let mut forget_pass = 0u64;
    let mut forget_iter =
        BatchIter::new(forget, cfg.batch_size_forget, Some(derive_seed(cfg.seed, "phase2-forget", 0, 0)), false)?;
    let mut next_forget = move || -> Result<Vec<usize>> {
        match forget_iter.next() {
            Some(b) => Ok(b),
            None => {
                forget_pass += 1;
                forget_iter = BatchIter::new(
                    forget,
                    cfg.batch_size_forget,
                    Some(derive_seed(cfg.seed, "phase2-forget", forget_pass, 0)),
                    false,
                )?;
                Ok(forget_iter.next().expect("nonempty forget set"))
            }
        }
    };

    let mut global_step = 0u64;
    for epoch in 0..cfg.phase2_epochs {
        let shuffle = derive_seed(cfg.seed, "phase2-retain", epoch as u64, 0);
        let mut con_sum = 0.0f64;
        let mut con_count = 0usize;
        let mut ce_sum = 0.0f64;
        let mut ce_count = 0usize;
        for (step, retain_batch) in
            BatchIter::new(retain, cfg.batch_size_retain, Some(shuffle), false)?.enumerate()
        {
            if step % cfg.alternation_ratio == 0 {
                let forget_batch = next_forget()?;
                let loss = contrastive_step(
                    model,
                    ds,
                    &forget_batch,
                    &retain_batch,
                    mask,
                    cfg,
                    &mut opt,
                    derive_seed(cfg.seed, "pair-aug", epoch as u64, global_step),
                )?;
                con_sum += loss * forget_batch.len() as f64;
                con_count += forget_batch.len();
                report.step_trace.push(StepKind::Contrastive);
            }
            let images = batch_images(ds, &retain_batch, None);
            let labels = batch_labels(ds, &retain_batch);
            let (loss, grads) = model.loss_grads(&images, |logits, _f, _v| {
                let (v, g) = retain_ce_loss_grad(logits, &labels)?;
                Ok(LossOutput::from_logits(v, g))
            })?;
            let grads = if cfg.mask_ce { apply_mask(&grads, mask)? } else { grads };
            opt.step(model, &grads)?;
            ce_sum += loss * retain_batch.len() as f64;
            ce_count += retain_batch.len();
            report.step_trace.push(StepKind::CrossEntropy);
            global_step += 1;
        }
        report.contrastive_loss.push(if con_count > 0 { con_sum / con_count as f64 } else { 0.0 });
        report.ce_loss.push(ce_sum / ce_count as f64);
    }
    model.set_train(false);
    report.seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

/// One contrastive update: one forward over [forget | augmented forget |
/// retain], the contrastive loss on the normalized embeddings, and a
/// masked SGD step.
#[allow(clippy::too_many_arguments)]
fn contrastive_step(
    model: &mut Classifier,
    ds: &LabeledDataset,
    forget_batch: &[usize],
    retain_batch: &[usize],
    mask: &SaliencyMask,
    cfg: &UnlearnConfig,
    opt: &mut SgdOptimizer,
    aug_seed: u64,
) -> Result<f64> {
    let bf = forget_batch.len();
    let br = retain_batch.len();
    let x_f = batch_images(ds, forget_batch, None);
    let x_fa = batch_images(ds, forget_batch, Some((&cfg.pair_augment, aug_seed)));
    let x_r = batch_images(ds, retain_batch, None);
    let mut all = Tensor::zeros(&[2 * bf + br, 3, 32, 32]);
    let s = all.as_mut_slice();
    s[..x_f.len()].copy_from_slice(x_f.as_slice());
    s[x_f.len()..x_f.len() + x_fa.len()].copy_from_slice(x_fa.as_slice());
    s[x_f.len() + x_fa.len()..].copy_from_slice(x_r.as_slice());

    let tau = cfg.tau;
    let (loss, grads) = model.loss_grads(&all, |_logits, feat, _view| {
        let d = feat.dim(1);
        let rows = |lo: usize, hi: usize| {
            Tensor::from_vec(&[hi - lo, d], feat.as_slice()[lo * d..hi * d].to_vec())
        };
        let zf = rows(0, bf);
        let za = rows(bf, 2 * bf);
        let zr = rows(2 * bf, 2 * bf + br);
        let (value, g) = contrastive_forget_loss_grad(&zf, &za, &zr, tau)?;
        let mut d_feat = Tensor::zeros_like(feat);
        let df = d_feat.as_mut_slice();
        df[..bf * d].copy_from_slice(g.d_forget.as_slice());
        df[bf * d..2 * bf * d].copy_from_slice(g.d_forget_aug.as_slice());
        df[2 * bf * d..].copy_from_slice(g.d_retain.as_slice());
        Ok(LossOutput::from_features(value, d_feat))
    })?;
    let gated = apply_mask(&grads, mask)?;
    opt.step(model, &gated)?;
    Ok(loss)
}
