//! Evaluation: top-1 accuracy, unlearning accuracy, the loss-threshold
//! membership inference attack, gaps against the retrain reference, and
//! the serialized metrics report.

use serde::{Deserialize, Serialize};

use crate::backend::Classifier;
use crate::data::{ForgetSplit, LabeledDataset, SplitMode};
use crate::error::{Error, Result};
use crate::rng;

use crate::unlearn::losses::per_sample_ce;

const EVAL_BATCH: usize = 512;

/// Per-sample eval outputs shared by the accuracy and attack metrics:
/// top-1 predictions (lowest index wins ties) and cross-entropy losses.
pub struct EvalOutputs {
    pub predictions: Vec<usize>,
    pub losses: Vec<f64>,
}

/// One eval-mode pass over an index subset.
pub fn eval_outputs(
    model: &mut Classifier,
    ds: &LabeledDataset,
    indices: &[usize],
) -> Result<EvalOutputs> {
    if indices.is_empty() {
        return Err(Error::usage("evaluation over an empty index set"));
    }
    let was_train = model.is_train();
    model.set_train(false);
    let mut predictions = Vec::with_capacity(indices.len());
    let mut losses = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(EVAL_BATCH) {
        let images = crate::unlearn::batch_images(ds, chunk, None);
        let labels = crate::unlearn::batch_labels(ds, chunk);
        let logits = model.forward_logits(&images)?;
        let k = logits.dim(1);
        for row in logits.as_slice().chunks(k) {
            let mut best = 0usize;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            predictions.push(best);
        }
        losses.extend(per_sample_ce(&logits, &labels)?);
    }
    model.set_train(was_train);
    Ok(EvalOutputs { predictions, losses })
}

/// Top-1 accuracy as a percentage in [0, 100].
pub fn accuracy_pct(model: &mut Classifier, ds: &LabeledDataset, indices: &[usize]) -> Result<f64> {
    let out = eval_outputs(model, ds, indices)?;
    Ok(accuracy_from_predictions(&out.predictions, ds, indices))
}

pub(crate) fn accuracy_from_predictions(
    predictions: &[usize],
    ds: &LabeledDataset,
    indices: &[usize],
) -> f64 {
    let correct = predictions
        .iter()
        .zip(indices)
        .filter(|(p, &i)| **p == ds.label(i))
        .count();
    100.0 * correct as f64 / indices.len() as f64
}

/// Unlearning accuracy: `100 - accuracy` on the forget set. Higher means
/// more forgotten.
pub fn ua(model: &mut Classifier, ds: &LabeledDataset, forget: &[usize]) -> Result<f64> {
    Ok(100.0 - accuracy_pct(model, ds, forget)?)
}

/// The threshold attacker over per-sample losses. Members (a retain
/// subsample) and non-members (the test set) calibrate a single loss
/// threshold maximizing balanced accuracy; samples at or below the
/// threshold are judged members (ties -> member). The efficacy is the
/// percentage of forget-set samples judged NON-members.
pub fn mia_from_losses(member: &[f64], non_member: &[f64], forget: &[f64]) -> Result<f64> {
    if member.is_empty() || non_member.is_empty() || forget.is_empty() {
        return Err(Error::usage("mia needs nonempty member, non-member and forget losses"));
    }
    let mut candidates: Vec<f64> = member.iter().chain(non_member).copied().collect();
    candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
    candidates.dedup();
    // classify(loss <= t) = member; balanced accuracy over the two sets
    let balanced = |t: f64| -> f64 {
        let tpr = member.iter().filter(|&&l| l <= t).count() as f64 / member.len() as f64;
        let tnr = non_member.iter().filter(|&&l| l > t).count() as f64 / non_member.len() as f64;
        (tpr + tnr) / 2.0
    };
    // the "judge everything non-member" degenerate threshold
    let mut best_t = f64::NEG_INFINITY;
    let mut best = balanced(best_t);
    // prefer larger thresholds on ties: the attacker stays maximally
    // inclusive about membership when the data cannot separate the sets
    for &t in &candidates {
        let b = balanced(t);
        if b >= best {
            best = b;
            best_t = t;
        }
    }
    let non_member_count = forget.iter().filter(|&&l| l > best_t).count();
    Ok(100.0 * non_member_count as f64 / forget.len() as f64)
}

/// Full attack against a model: calibrates on a seeded retain subsample of
/// size `min(|test|, 10000)` versus the test set, then scores the forget set.
pub fn mia_efficacy(
    model: &mut Classifier,
    train: &LabeledDataset,
    test: &LabeledDataset,
    retain: &[usize],
    forget: &[usize],
    seed: u64,
) -> Result<f64> {
    let sample_size = test.len().min(10_000).min(retain.len());
    let members = subsample(retain, sample_size, seed);
    let member_losses = eval_outputs(model, train, &members)?.losses;
    let test_indices: Vec<usize> = (0..test.len()).collect();
    let non_member_losses = eval_outputs(model, test, &test_indices)?.losses;
    let forget_losses = eval_outputs(model, train, forget)?.losses;
    mia_from_losses(&member_losses, &non_member_losses, &forget_losses)
}

fn subsample(indices: &[usize], k: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    if k >= indices.len() {
        return indices.to_vec();
    }
    let mut order = indices.to_vec();
    let mut rng = rng::rng_for(seed, "mia-members", 0, 0);
    order.shuffle(&mut rng);
    order.truncate(k);
    order
}

/// Mean pairwise cosine similarity between the embeddings of two index
/// sets, capped for cost. Uses the identity
/// `mean_{f,r} (zf . zr) = (mean_f zf) . (mean_r zr)` on unit embeddings.
pub fn mean_cross_cosine(
    model: &mut Classifier,
    ds: &LabeledDataset,
    a: &[usize],
    b: &[usize],
) -> Result<f64> {
    const CAP: usize = 2048;
    let mean_embedding = |model: &mut Classifier, idx: &[usize]| -> Result<Vec<f64>> {
        let take = &idx[..idx.len().min(CAP)];
        let was_train = model.is_train();
        model.set_train(false);
        let d = model.feature_dim();
        let mut acc = vec![0.0f64; d];
        for chunk in take.chunks(EVAL_BATCH) {
            let images = crate::unlearn::batch_images(ds, chunk, None);
            let feats = model.forward_features(&images)?;
            for row in feats.as_slice().chunks(d) {
                for (a, &v) in acc.iter_mut().zip(row) {
                    *a += f64::from(v);
                }
            }
        }
        model.set_train(was_train);
        for v in acc.iter_mut() {
            *v /= take.len() as f64;
        }
        Ok(acc)
    };
    let ma = mean_embedding(model, a)?;
    let mb = mean_embedding(model, b)?;
    Ok(ma.iter().zip(&mb).map(|(x, y)| x * y).sum())
}

/// How a split is recorded inside a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitInfo {
    pub mode: String,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub class: Option<usize>,
}

impl SplitInfo {
    pub fn from_split(split: &ForgetSplit) -> Self {
        match split.mode {
            SplitMode::Random { fraction } => SplitInfo {
                mode: "random".into(),
                seed: split.seed,
                fraction: Some(fraction),
                class: None,
            },
            SplitMode::Class { class } => SplitInfo {
                mode: "class".into(),
                seed: split.seed,
                fraction: None,
                class: Some(class),
            },
        }
    }
}

/// Absolute gaps against the retrain reference, in metric order
/// UA, RA, TA, MIA.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gaps {
    pub ua: f64,
    pub ra: f64,
    pub ta: f64,
    pub mia: f64,
}

/// The full metric record for one unlearned (or reference) model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    pub dataset: String,
    pub split: SplitInfo,
    pub ua: f64,
    pub ra: f64,
    pub ta: f64,
    pub mia: f64,
    pub rte_seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gaps: Option<Gaps>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub avg_gap: Option<f64>,
}

impl MetricsReport {
    /// Fill `gaps` and `avg_gap` against a reference report.
    pub fn with_reference(mut self, reference: &MetricsReport) -> MetricsReport {
        let gaps = Gaps {
            ua: (self.ua - reference.ua).abs(),
            ra: (self.ra - reference.ra).abs(),
            ta: (self.ta - reference.ta).abs(),
            mia: (self.mia - reference.mia).abs(),
        };
        self.avg_gap = Some((gaps.ua + gaps.ra + gaps.ta + gaps.mia) / 4.0);
        self.gaps = Some(gaps);
        self
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::input(format!("cannot encode report: {e}")))
    }

    pub fn from_json(json: &str) -> Result<MetricsReport> {
        serde_json::from_str(json).map_err(|e| Error::input(format!("bad report json: {e}")))
    }
}

/// Mean absolute gap of (UA, RA, TA, MIA) against a reference report.
pub fn avg_gap(report: &MetricsReport, reference: &MetricsReport) -> f64 {
    ((report.ua - reference.ua).abs()
        + (report.ra - reference.ra).abs()
        + (report.ta - reference.ta).abs()
        + (report.mia - reference.mia).abs())
        / 4.0
}

/// Evaluate all metrics for one model: UA on the forget set, RA on the
/// retain set, TA on the test set, the membership attack, and the
/// passed-through runtime. One forward pass per index set.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_all(
    model: &mut Classifier,
    method: &str,
    train: &LabeledDataset,
    test: &LabeledDataset,
    split: &ForgetSplit,
    rte_seconds: f64,
    mia_seed: u64,
    reference: Option<&MetricsReport>,
) -> Result<MetricsReport> {
    if split.forget.is_empty() {
        return Err(Error::usage("evaluate_all needs a nonempty forget set"));
    }
    let forget_out = eval_outputs(model, train, &split.forget)?;
    let retain_out = eval_outputs(model, train, &split.retain)?;
    let test_indices: Vec<usize> = (0..test.len()).collect();
    let test_out = eval_outputs(model, test, &test_indices)?;

    let ua = 100.0 - accuracy_from_predictions(&forget_out.predictions, train, &split.forget);
    let ra = accuracy_from_predictions(&retain_out.predictions, train, &split.retain);
    let ta = accuracy_from_predictions(&test_out.predictions, test, &test_indices);

    // members: seeded subsample of retain losses (already computed)
    let sample_size = test.len().min(10_000).min(split.retain.len());
    let member_positions = subsample(&(0..split.retain.len()).collect::<Vec<_>>(), sample_size, mia_seed);
    let member_losses: Vec<f64> = member_positions.iter().map(|&p| retain_out.losses[p]).collect();
    let mia = mia_from_losses(&member_losses, &test_out.losses, &forget_out.losses)?;

    let report = MetricsReport {
        method: method.to_string(),
        dataset: train.name.clone(),
        split: SplitInfo::from_split(split),
        ua,
        ra,
        ta,
        mia,
        rte_seconds,
        gaps: None,
        avg_gap: None,
    };
    Ok(match reference {
        Some(r) => report.with_reference(r),
        None => report,
    })
}
