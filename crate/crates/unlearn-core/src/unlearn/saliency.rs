//! Saliency masks: per-parameter gates in [0,1] derived from the gradient
//! of the forgetting loss, applied to gradients by element-wise product.

use crate::backend::{Classifier, ParamGrads};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskMode {
    /// All-ones gate: updates flow unchanged.
    None,
    /// Binary gate on the top-q fraction of |g| across the whole model.
    Hard,
    /// `|2(sigmoid(g) - 0.5)|` per coordinate.
    Soft,
}

impl std::fmt::Display for MaskMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MaskMode::None => write!(f, "none"),
            MaskMode::Hard => write!(f, "hard"),
            MaskMode::Soft => write!(f, "soft"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMask {
    entries: Vec<(String, Tensor)>,
    pub mode: MaskMode,
    pub hard_sparsity: Option<f32>,
}

impl SaliencyMask {
    pub fn entries(&self) -> &[(String, Tensor)] {
        &self.entries
    }

    pub fn from_entries(
        entries: Vec<(String, Tensor)>,
        mode: MaskMode,
        hard_sparsity: Option<f32>,
    ) -> Result<Self> {
        for (name, t) in &entries {
            if t.as_slice().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return Err(Error::input(format!("mask entry {name} outside [0,1]")));
            }
        }
        Ok(SaliencyMask { entries, mode, hard_sparsity })
    }

    /// All-ones mask congruent with the model.
    pub fn all_ones(model: &Classifier) -> Self {
        let mut entries = Vec::new();
        model.visit_params(&mut |name, t| {
            let mut ones = Tensor::zeros_like(t);
            ones.fill(1.0);
            entries.push((name.to_string(), ones));
        });
        SaliencyMask { entries, mode: MaskMode::None, hard_sparsity: None }
    }

    pub fn num_elements(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn fraction_ones(&self) -> f64 {
        let ones: usize = self
            .entries
            .iter()
            .map(|(_, t)| t.as_slice().iter().filter(|&&v| v == 1.0).count())
            .sum();
        ones as f64 / self.num_elements() as f64
    }
}

/// Soft saliency of one gradient coordinate: `|2(sigmoid(g) - 0.5)|`.
/// Zero at g = 0, even in g, strictly increasing in |g|, bounded by 1.
pub fn soft_saliency(g: f64) -> f64 {
    let sig = 1.0 / (1.0 + (-g).exp());
    (2.0 * (sig - 0.5)).abs()
}

/// Build a mask from the full-forget-set mean gradient of the forgetting
/// loss. `grads` must be congruent with the model the mask will gate.
pub fn mask_from_grads(grads: &ParamGrads, mode: MaskMode, hard_sparsity: f32) -> Result<SaliencyMask> {
    if !grads.all_finite() {
        return Err(Error::numeric("non-finite gradients in saliency computation"));
    }
    match mode {
        MaskMode::None => {
            let entries = grads
                .iter()
                .map(|(n, t)| {
                    let mut ones = Tensor::zeros_like(t);
                    ones.fill(1.0);
                    (n.to_string(), ones)
                })
                .collect();
            Ok(SaliencyMask { entries, mode, hard_sparsity: None })
        }
        MaskMode::Soft => {
            let entries = grads
                .iter()
                .map(|(n, t)| {
                    let data = t
                        .as_slice()
                        .iter()
                        .map(|&g| soft_saliency(f64::from(g)) as f32)
                        .collect();
                    (n.to_string(), Tensor::from_vec(t.shape(), data))
                })
                .collect();
            Ok(SaliencyMask { entries, mode, hard_sparsity: None })
        }
        MaskMode::Hard => {
            if !(0.0..=1.0).contains(&hard_sparsity) || hard_sparsity <= 0.0 {
                return Err(Error::config(format!(
                    "hard mask sparsity {hard_sparsity} must be in (0, 1]"
                )));
            }
            Ok(hard_mask(grads, hard_sparsity))
        }
    }
}

/// Top-q binarization over the whole model's |g| ranking. Elements strictly
/// above the threshold magnitude are always selected; ties at the threshold
/// are granted in parameter order until the quota `round(q*n)` is met.
fn hard_mask(grads: &ParamGrads, q: f32) -> SaliencyMask {
    let total: usize = grads.iter().map(|(_, t)| t.len()).sum();
    let quota = ((f64::from(q) * total as f64).round() as usize).min(total);
    let mut magnitudes: Vec<f32> = Vec::with_capacity(total);
    for (_, t) in grads.iter() {
        magnitudes.extend(t.as_slice().iter().map(|&g| g.abs()));
    }
    // threshold = magnitude at rank `quota` from the top
    let threshold = if quota == 0 {
        f32::INFINITY
    } else {
        let idx = total - quota;
        let mut sorted = magnitudes.clone();
        sorted.select_nth_unstable_by(idx, |a, b| a.partial_cmp(b).unwrap());
        sorted[idx]
    };
    let above = magnitudes.iter().filter(|&&m| m > threshold).count();
    let mut tie_budget = quota.saturating_sub(above);
    let mut entries = Vec::with_capacity(grads.len());
    let mut offset = 0usize;
    for (name, t) in grads.iter() {
        let data = magnitudes[offset..offset + t.len()]
            .iter()
            .map(|&m| {
                if m > threshold {
                    1.0
                } else if m == threshold && tie_budget > 0 {
                    tie_budget -= 1;
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        offset += t.len();
        entries.push((name.to_string(), Tensor::from_vec(t.shape(), data)));
    }
    SaliencyMask { entries, mode: MaskMode::Hard, hard_sparsity: Some(q) }
}

/// Gate gradients: `g <- M (.) g`, returning fresh arrays.
pub fn apply_mask(grads: &ParamGrads, mask: &SaliencyMask) -> Result<ParamGrads> {
    let gl: Vec<(&str, &Tensor)> = grads.iter().collect();
    if gl.len() != mask.entries.len() {
        return Err(Error::usage("mask and gradients have different parameter sets"));
    }
    let mut out = Vec::with_capacity(gl.len());
    for ((gn, gt), (mn, mt)) in gl.iter().zip(&mask.entries) {
        if gn != mn || !gt.same_shape(mt) {
            return Err(Error::usage(format!("mask entry {mn} does not match gradient {gn}")));
        }
        let data = gt
            .as_slice()
            .iter()
            .zip(mt.as_slice())
            .map(|(&g, &m)| m * g)
            .collect();
        out.push((gn.to_string(), Tensor::from_vec(gt.shape(), data)));
    }
    Ok(ParamGrads::from_entries(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn grads(parts: &[(&str, Vec<f32>)]) -> ParamGrads {
        ParamGrads::from_entries(
            parts
                .iter()
                .map(|(n, v)| (n.to_string(), Tensor::from_vec(&[v.len()], v.clone())))
                .collect(),
        )
    }

    #[test]
    fn soft_saliency_pointwise() {
        assert_eq!(soft_saliency(0.0), 0.0);
        let sig1 = 1.0 / (1.0 + (-1.0f64).exp());
        assert_relative_eq!(soft_saliency(1.0), 2.0 * sig1 - 1.0, epsilon = 1e-12);
        assert_relative_eq!(soft_saliency(1.0), 0.46212, epsilon = 1e-5);
        assert_relative_eq!(soft_saliency(-1.0), soft_saliency(1.0), epsilon = 1e-15);
    }

    #[test]
    fn soft_saliency_shape_properties() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut pts: Vec<f64> = (0..1000).map(|_| rng.random_range(-8.0..8.0)).collect();
        for &g in &pts {
            let s = soft_saliency(g);
            assert!((0.0..=1.0).contains(&s));
            assert_relative_eq!(s, soft_saliency(-g), epsilon = 1e-15);
        }
        // strictly increasing in |g|
        pts = pts.iter().map(|g| g.abs()).collect();
        pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        pts.dedup();
        for w in pts.windows(2) {
            assert!(soft_saliency(w[1]) > soft_saliency(w[0]));
        }
    }

    #[test]
    fn soft_mask_from_grads() {
        let g = grads(&[("a", vec![0.0, 1.0, -1.0])]);
        let m = mask_from_grads(&g, MaskMode::Soft, 0.5).unwrap();
        let vals = m.entries()[0].1.as_slice();
        assert_eq!(vals[0], 0.0);
        assert_relative_eq!(vals[1], 0.46212, epsilon = 1e-5);
        assert_relative_eq!(vals[2], vals[1]);
    }

    #[test]
    fn hard_mask_hits_quota_exactly() {
        let g = grads(&[("a", vec![0.1, -0.5, 0.3, 0.2]), ("b", vec![0.4, -0.05, 0.6, 0.0])]);
        let m = mask_from_grads(&g, MaskMode::Hard, 0.5).unwrap();
        let ones: usize = m
            .entries()
            .iter()
            .map(|(_, t)| t.as_slice().iter().filter(|&&v| v == 1.0).count())
            .sum();
        assert_eq!(ones, 4);
        // the top-4 magnitudes are 0.6, 0.5, 0.4, 0.3
        assert_eq!(m.entries()[0].1.as_slice(), &[0.0, 1.0, 1.0, 0.0]);
        assert_eq!(m.entries()[1].1.as_slice(), &[1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn hard_mask_ties_fill_in_parameter_order() {
        let g = grads(&[("a", vec![0.5, 0.5, 0.5, 0.5])]);
        let m = mask_from_grads(&g, MaskMode::Hard, 0.5).unwrap();
        assert_eq!(m.entries()[0].1.as_slice(), &[1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn hard_mask_q_one_is_all_ones() {
        let g = grads(&[("a", vec![0.0, -1.0, 2.0])]);
        let m = mask_from_grads(&g, MaskMode::Hard, 1.0).unwrap();
        assert!(m.entries()[0].1.as_slice().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn invalid_sparsity_is_config_error() {
        let g = grads(&[("a", vec![1.0])]);
        assert!(mask_from_grads(&g, MaskMode::Hard, 0.0).is_err());
        assert!(mask_from_grads(&g, MaskMode::Hard, 1.5).is_err());
    }

    #[test]
    fn apply_mask_identity_annihilator_linearity() {
        let g = grads(&[("a", vec![3.0, -2.0, 0.5])]);
        let ones = mask_from_grads(&g, MaskMode::None, 0.5).unwrap();
        let out = apply_mask(&g, &ones).unwrap();
        assert_eq!(out, g);

        let zeros = SaliencyMask::from_entries(
            vec![("a".into(), Tensor::zeros(&[3]))],
            MaskMode::Hard,
            Some(0.5),
        )
        .unwrap();
        let out = apply_mask(&g, &zeros).unwrap();
        assert!(out.iter().all(|(_, t)| t.as_slice().iter().all(|&v| v == 0.0)));

        // definition & linearity: mask 0.5 at one coordinate, grad 3.0 -> 1.5
        let half = SaliencyMask::from_entries(
            vec![("a".into(), Tensor::from_vec(&[3], vec![0.5, 1.0, 1.0]))],
            MaskMode::Soft,
            None,
        )
        .unwrap();
        let out = apply_mask(&g, &half).unwrap();
        assert_eq!(out.get("a").unwrap().as_slice(), &[1.5, -2.0, 0.5]);
        let mut scaled = g.clone();
        scaled.scale(2.0);
        let out2 = apply_mask(&scaled, &half).unwrap();
        let expect: Vec<f32> = out.get("a").unwrap().as_slice().iter().map(|v| 2.0 * v).collect();
        assert_eq!(out2.get("a").unwrap().as_slice(), &expect[..]);
    }

    #[test]
    fn apply_mask_does_not_alias_input() {
        let g = grads(&[("a", vec![1.0, 2.0])]);
        let ones = mask_from_grads(&g, MaskMode::None, 0.5).unwrap();
        let mut out = apply_mask(&g, &ones).unwrap();
        out.iter_mut().next().unwrap().1.fill(9.0);
        assert_eq!(g.get("a").unwrap().as_slice(), &[1.0, 2.0]);
    }

    #[test]
    fn apply_mask_shape_mismatch_is_usage_error() {
        let g = grads(&[("a", vec![1.0, 2.0])]);
        let bad = SaliencyMask::from_entries(
            vec![("a".into(), Tensor::zeros(&[3]))],
            MaskMode::None,
            None,
        )
        .unwrap();
        assert!(matches!(apply_mask(&g, &bad), Err(Error::Usage(_))));
        let wrong_name = SaliencyMask::from_entries(
            vec![("b".into(), Tensor::zeros(&[2]))],
            MaskMode::None,
            None,
        )
        .unwrap();
        assert!(matches!(apply_mask(&g, &wrong_name), Err(Error::Usage(_))));
    }

    #[test]
    fn mask_entries_validated_to_unit_interval() {
        assert!(SaliencyMask::from_entries(
            vec![("a".into(), Tensor::from_vec(&[1], vec![1.5]))],
            MaskMode::Soft,
            None,
        )
        .is_err());
    }
}
