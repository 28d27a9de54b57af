//! The two-phase unlearning method and its baselines.
//!
//! Phase 1 drives the model's outputs on the forget set toward the uniform
//! distribution (KL minimization). A saliency mask is then computed from
//! the forgetting-loss gradient, and phase 2 alternates contrastive steps
//! on forget batches (gated by the mask) with cross-entropy steps on retain
//! batches. `mask_mode` none/hard/soft select the method variants.

mod baselines;
pub mod losses;
mod phases;
mod saliency;

pub use baselines::{ft_baseline, ga_baseline, rl_baseline};
pub use phases::{adversarial_finetune_phase, compute_saliency, forgetting_phase, StepKind};
pub use saliency::{apply_mask, mask_from_grads, soft_saliency, MaskMode, SaliencyMask};

use std::time::Instant;

use crate::backend::{build_classifier, ArchitectureSpec, Classifier, SgdOptimizer};
use crate::data::{AugmentationPolicy, BatchIter, ForgetSplit, LabeledDataset, IMAGE_BYTES};
use crate::error::{Error, Result};
use crate::eval;
use crate::rng::derive_seed;
use crate::tensor::Tensor;
use losses::retain_ce_loss_grad;

/// All hyperparameters of the two-phase procedure. The paper fixes only the
/// temperature; everything else is an artifact default, overridable from the
/// experiment config.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlearnConfig {
    pub tau: f64,
    pub phase1_epochs: usize,
    pub phase2_epochs: usize,
    pub phase1_lr: f32,
    pub phase2_lr: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    pub batch_size_forget: usize,
    pub batch_size_retain: usize,
    pub mask_mode: MaskMode,
    /// Fraction of parameters kept by the hard mask's global top-|g| cut.
    pub hard_sparsity: f32,
    /// Cross-entropy steps per contrastive step in phase 2.
    pub alternation_ratio: usize,
    /// Gate the cross-entropy steps with the mask too (off by default:
    /// masking retain updates would throttle retain-set recovery).
    pub mask_ce: bool,
    pub seed: u64,
    /// Augmentation used to generate the positive counterpart x'.
    pub pair_augment: AugmentationPolicy,
}

impl Default for UnlearnConfig {
    fn default() -> Self {
        UnlearnConfig {
            tau: 1.4,
            phase1_epochs: 3,
            phase2_epochs: 5,
            phase1_lr: 1e-3,
            phase2_lr: 1e-3,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size_forget: 256,
            batch_size_retain: 256,
            mask_mode: MaskMode::Soft,
            hard_sparsity: 0.5,
            alternation_ratio: 1,
            mask_ce: false,
            seed: 0,
            pair_augment: AugmentationPolicy::default(),
        }
    }
}

impl UnlearnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau <= 0.0 || !self.tau.is_finite() {
            return Err(Error::config(format!("tau {} must be > 0", self.tau)));
        }
        if self.phase1_epochs < 1 || self.phase2_epochs < 1 {
            return Err(Error::config("phase epochs must be >= 1"));
        }
        if self.phase1_lr <= 0.0 || self.phase2_lr <= 0.0 {
            return Err(Error::config("learning rates must be > 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum must be in [0,1)"));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::config("weight decay must be >= 0"));
        }
        if self.batch_size_forget < 1 || self.batch_size_retain < 1 {
            return Err(Error::config("batch sizes must be >= 1"));
        }
        if !(self.hard_sparsity > 0.0 && self.hard_sparsity <= 1.0) {
            return Err(Error::config("hard mask sparsity must be in (0,1]"));
        }
        if self.alternation_ratio < 1 {
            return Err(Error::config("alternation ratio must be >= 1"));
        }
        Ok(())
    }
}

/// The unlearning methods the harness can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Retrain,
    Ft,
    Ga,
    Rl,
    Cl,
    WsCl,
    WssCl,
}

impl Method {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "retrain" => Ok(Method::Retrain),
            "ft" => Ok(Method::Ft),
            "ga" => Ok(Method::Ga),
            "rl" => Ok(Method::Rl),
            "cl" => Ok(Method::Cl),
            "ws-cl" => Ok(Method::WsCl),
            "wss-cl" => Ok(Method::WssCl),
            other => Err(Error::config(format!("unknown method: {other}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Method::Retrain => "retrain",
            Method::Ft => "ft",
            Method::Ga => "ga",
            Method::Rl => "rl",
            Method::Cl => "cl",
            Method::WsCl => "ws-cl",
            Method::WssCl => "wss-cl",
        }
    }

    /// The mask variant each contrastive method corresponds to.
    pub fn mask_mode(&self) -> Option<MaskMode> {
        match self {
            Method::Cl => Some(MaskMode::None),
            Method::WsCl => Some(MaskMode::Hard),
            Method::WssCl => Some(MaskMode::Soft),
            _ => None,
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-phase training record: epoch-mean losses and wall-clock time.
#[derive(Debug, Clone, Default)]
pub struct PhaseReport {
    pub epochs: usize,
    pub seconds: f64,
    pub kl_loss: Vec<f64>,
    pub contrastive_loss: Vec<f64>,
    pub ce_loss: Vec<f64>,
    pub step_trace: Vec<StepKind>,
}

/// Plain supervised training configuration (original model, retrain gold
/// standard, and the fine-tuning baselines).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    pub batch_size: usize,
    pub seed: u64,
    pub augment: Option<AugmentationPolicy>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 128,
            seed: 0,
            augment: Some(AugmentationPolicy::default()),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::config("training epochs must be >= 1"));
        }
        if self.lr <= 0.0 {
            return Err(Error::config("learning rate must be > 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(Error::config("bad momentum or weight decay"));
        }
        if self.batch_size < 1 {
            return Err(Error::config("batch size must be >= 1"));
        }
        Ok(())
    }
}

/// Assemble a normalized image batch; with `augment`, each sample gets an
/// independent draw seeded by `(aug_seed, position, index)`.
pub(crate) fn batch_images(
    ds: &LabeledDataset,
    indices: &[usize],
    augment: Option<(&AugmentationPolicy, u64)>,
) -> Tensor {
    let mut out = Tensor::zeros(&[indices.len(), 3, 32, 32]);
    let data = out.as_mut_slice();
    crate::exec::for_each_chunk(data, IMAGE_BYTES, |j, chunk| {
        let idx = indices[j];
        match augment {
            Some((policy, aug_seed)) => {
                let seed = derive_seed(aug_seed, "sample", j as u64, idx as u64);
                crate::data::write_augmented(ds, idx, policy, seed, chunk);
            }
            None => ds.write_normalized(idx, chunk),
        }
    });
    out
}

pub(crate) fn batch_labels(ds: &LabeledDataset, indices: &[usize]) -> Vec<usize> {
    indices.iter().map(|&i| ds.label(i)).collect()
}

/// Epoch-mean cross-entropy training on an index subset. `label_override`,
/// when present, replaces the dataset labels (indexed by dataset position).
pub fn train_ce(
    model: &mut Classifier,
    ds: &LabeledDataset,
    indices: &[usize],
    cfg: &TrainConfig,
    label_override: Option<&[usize]>,
) -> Result<PhaseReport> {
    cfg.validate()?;
    if indices.is_empty() {
        return Err(Error::config("cannot train on an empty index set"));
    }
    if let Some(ov) = label_override {
        if ov.len() != ds.len() {
            return Err(Error::usage("label override must cover the whole dataset"));
        }
    }
    let start = Instant::now();
    let mut report = PhaseReport { epochs: cfg.epochs, ..Default::default() };
    let mut opt = SgdOptimizer::new(cfg.lr, cfg.momentum, cfg.weight_decay)?;
    model.set_train(true);
    for epoch in 0..cfg.epochs {
        let shuffle = derive_seed(cfg.seed, "train-shuffle", epoch as u64, 0);
        let batches = BatchIter::new(indices, cfg.batch_size, Some(shuffle), false)?;
        let mut loss_sum = 0.0f64;
        let mut count = 0usize;
        for (step, batch) in batches.enumerate() {
            let aug = cfg.augment.as_ref().map(|p| {
                (p, derive_seed(cfg.seed, "train-aug", epoch as u64, step as u64))
            });
            let images = batch_images(ds, &batch, aug);
            let labels: Vec<usize> = match label_override {
                Some(ov) => batch.iter().map(|&i| ov[i]).collect(),
                None => batch_labels(ds, &batch),
            };
            let (loss, grads) = model.loss_grads(&images, |logits, _feat, _view| {
                let (v, g) = retain_ce_loss_grad(logits, &labels)?;
                Ok(crate::backend::LossOutput::from_logits(v, g))
            })?;
            opt.step(model, &grads)?;
            loss_sum += loss * batch.len() as f64;
            count += batch.len();
            report.step_trace.push(StepKind::CrossEntropy);
        }
        report.ce_loss.push(loss_sum / count as f64);
    }
    model.set_train(false);
    report.seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Gold standard: a fresh model trained from scratch on the retain set only.
/// The training pipeline is identical to original training, so an empty
/// forget set reproduces the original model bit-for-bit.
pub fn retrain_gold(
    spec: &ArchitectureSpec,
    ds: &LabeledDataset,
    retain_indices: &[usize],
    cfg: &TrainConfig,
) -> Result<(Classifier, PhaseReport)> {
    if retain_indices.is_empty() {
        return Err(Error::config("retrain needs a nonempty retain set"));
    }
    let mut model = build_classifier(spec, cfg.seed)?;
    let report = train_ce(&mut model, ds, retain_indices, cfg, None)?;
    Ok((model, report))
}

/// Outcome of the full two-phase procedure.
pub struct UnlearnOutcome {
    pub phase1: PhaseReport,
    pub phase2: PhaseReport,
    pub saliency_seconds: f64,
    /// Wall-clock of the procedure itself (phases + mask), excluding the
    /// embedding diagnostics.
    pub rte_seconds: f64,
    pub mask: SaliencyMask,
    /// Mean forget-retain embedding cosine similarity entering phase 2.
    pub cross_cosine_before: f64,
    /// Same measurement after phase 2.
    pub cross_cosine_after: f64,
}

/// The full two-phase procedure: forgetting phase, saliency mask, then
/// adversarial fine-tuning. `mask_mode` none/hard/soft realize the plain,
/// hard-masked and soft-masked contrastive variants.
pub fn wss_cl_unlearn(
    model: &mut Classifier,
    ds: &LabeledDataset,
    split: &ForgetSplit,
    cfg: &UnlearnConfig,
) -> Result<UnlearnOutcome> {
    cfg.validate()?;
    let phase1 = forgetting_phase(model, ds, &split.forget, cfg)?;
    let t_mask = Instant::now();
    let mask = compute_saliency(model, ds, &split.forget, cfg, cfg.mask_mode)?;
    let saliency_seconds = t_mask.elapsed().as_secs_f64();
    let cross_cosine_before = eval::mean_cross_cosine(model, ds, &split.forget, &split.retain)?;
    let phase2 = adversarial_finetune_phase(model, ds, &split.forget, &split.retain, &mask, cfg)?;
    let cross_cosine_after = eval::mean_cross_cosine(model, ds, &split.forget, &split.retain)?;
    Ok(UnlearnOutcome {
        rte_seconds: phase1.seconds + saliency_seconds + phase2.seconds,
        phase1,
        phase2,
        saliency_seconds,
        mask,
        cross_cosine_before,
        cross_cosine_after,
    })
}
