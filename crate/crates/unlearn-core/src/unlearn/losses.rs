//! The three training objectives: KL-to-uniform over logits for the
//! forgetting stage, the contrastive loss separating forget and retain
//! embeddings, and plain cross-entropy for retain fidelity. Each comes as
//! value-only and value-plus-gradient, with f64 accumulation throughout.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Row softmax in f64: returns probabilities and leaves logits untouched.
fn softmax_row(logits: &[f32], probs: &mut [f64]) {
    let mx = logits.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let mut z = 0.0f64;
    for (p, &l) in probs.iter_mut().zip(logits) {
        let e = f64::from(l - mx).exp();
        *p = e;
        z += e;
    }
    for p in probs.iter_mut() {
        *p /= z;
    }
}

/// Mean over the batch of KL(softmax(logits) || Uniform(K)); equals
/// ln K minus the mean softmax entropy, and is always >= 0.
pub fn kl_uniform_loss(logits: &Tensor) -> Result<f64> {
    Ok(kl_uniform_impl(logits, None)?.0)
}

/// KL-to-uniform loss plus its gradient w.r.t. the logits.
pub fn kl_uniform_loss_grad(logits: &Tensor) -> Result<(f64, Tensor)> {
    let mut grad = Tensor::zeros_like(logits);
    let (value, _) = kl_uniform_impl(logits, Some(&mut grad))?;
    Ok((value, grad))
}

fn kl_uniform_impl(logits: &Tensor, mut grad: Option<&mut Tensor>) -> Result<(f64, ())> {
    let (bsz, k) = (logits.dim(0), logits.dim(1));
    if k < 2 {
        return Err(Error::usage("KL-to-uniform needs K >= 2"));
    }
    if !logits.all_finite() {
        return Err(Error::numeric("non-finite logits in KL-to-uniform loss"));
    }
    let ln_k = (k as f64).ln();
    let mut total = 0.0f64;
    let mut probs = vec![0.0f64; k];
    for b in 0..bsz {
        let row = &logits.as_slice()[b * k..(b + 1) * k];
        softmax_row(row, &mut probs);
        // entropy H = -sum p ln p; KL(p||U) = ln K - H
        let mut h = 0.0f64;
        for &p in &probs {
            if p > 0.0 {
                h -= p * p.ln();
            }
        }
        total += ln_k - h;
        if let Some(g) = grad.as_deref_mut() {
            let gr = &mut g.as_mut_slice()[b * k..(b + 1) * k];
            for (gj, &p) in gr.iter_mut().zip(&probs) {
                // d/dz_j [ -H ] = p_j (ln p_j + H)
                let lp = if p > 0.0 { p.ln() } else { 0.0 };
                *gj = (p * (lp + h) / bsz as f64) as f32;
            }
        }
    }
    Ok((total / bsz as f64, ()))
}

/// Mean cross-entropy of logits against integer labels.
pub fn retain_ce_loss(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    Ok(ce_impl(logits, labels, None)?.0)
}

pub fn retain_ce_loss_grad(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let mut grad = Tensor::zeros_like(logits);
    let (value, _) = ce_impl(logits, labels, Some(&mut grad))?;
    Ok((value, grad))
}

/// Per-sample cross-entropy losses (the membership attack's score).
pub fn per_sample_ce(logits: &Tensor, labels: &[usize]) -> Result<Vec<f64>> {
    let (bsz, k) = (logits.dim(0), logits.dim(1));
    check_labels(labels, bsz, k)?;
    let mut out = Vec::with_capacity(bsz);
    let mut probs = vec![0.0f64; k];
    for b in 0..bsz {
        let row = &logits.as_slice()[b * k..(b + 1) * k];
        softmax_row(row, &mut probs);
        out.push(-probs[labels[b]].max(f64::MIN_POSITIVE).ln());
    }
    Ok(out)
}

fn check_labels(labels: &[usize], bsz: usize, k: usize) -> Result<()> {
    if labels.len() != bsz {
        return Err(Error::usage(format!(
            "{} labels for a batch of {bsz}",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::input(format!("label {bad} out of range for K={k}")));
    }
    Ok(())
}

fn ce_impl(logits: &Tensor, labels: &[usize], mut grad: Option<&mut Tensor>) -> Result<(f64, ())> {
    let (bsz, k) = (logits.dim(0), logits.dim(1));
    check_labels(labels, bsz, k)?;
    let mut total = 0.0f64;
    let mut probs = vec![0.0f64; k];
    for b in 0..bsz {
        let row = &logits.as_slice()[b * k..(b + 1) * k];
        softmax_row(row, &mut probs);
        total -= probs[labels[b]].max(f64::MIN_POSITIVE).ln();
        if let Some(g) = grad.as_deref_mut() {
            let gr = &mut g.as_mut_slice()[b * k..(b + 1) * k];
            for (j, (gj, &p)) in gr.iter_mut().zip(&probs).enumerate() {
                let ind = if j == labels[b] { 1.0 } else { 0.0 };
                *gj = ((p - ind) / bsz as f64) as f32;
            }
        }
    }
    Ok((total / bsz as f64, ()))
}

fn cosine(a: &[f32], b: &[f32]) -> (f64, f64, f64) {
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        dot += f64::from(x) * f64::from(y);
        na += f64::from(x) * f64::from(x);
        nb += f64::from(y) * f64::from(y);
    }
    (dot, na.sqrt().max(1e-12), nb.sqrt().max(1e-12))
}

/// Contrastive gradients for one batch, congruent with the three inputs.
pub struct ContrastiveGrads {
    pub d_forget: Tensor,
    pub d_forget_aug: Tensor,
    pub d_retain: Tensor,
}

/// Contrastive loss for forgetting samples, averaged over the forget batch:
/// `-ln[ exp(s+/t) / (exp(s+/t) + sum_r exp(s_r/t)) ]` where `s+` is the
/// cosine similarity of a forget embedding with its augmented counterpart
/// and `s_r` its similarity with each retain-batch embedding.
pub fn contrastive_forget_loss(
    forget: &Tensor,
    forget_aug: &Tensor,
    retain: &Tensor,
    tau: f64,
) -> Result<f64> {
    Ok(contrastive_impl(forget, forget_aug, retain, tau, false)?.0)
}

pub fn contrastive_forget_loss_grad(
    forget: &Tensor,
    forget_aug: &Tensor,
    retain: &Tensor,
    tau: f64,
) -> Result<(f64, ContrastiveGrads)> {
    let (v, g) = contrastive_impl(forget, forget_aug, retain, tau, true)?;
    Ok((v, g.expect("grads requested")))
}

fn contrastive_impl(
    forget: &Tensor,
    forget_aug: &Tensor,
    retain: &Tensor,
    tau: f64,
    want_grads: bool,
) -> Result<(f64, Option<ContrastiveGrads>)> {
    if tau <= 0.0 || !tau.is_finite() {
        return Err(Error::config(format!("temperature {tau} must be > 0")));
    }
    let (bf, d) = (forget.dim(0), forget.dim(1));
    let br = retain.dim(0);
    if br == 0 || bf == 0 {
        return Err(Error::usage("contrastive loss needs nonempty forget and retain batches"));
    }
    if forget_aug.shape() != forget.shape() || retain.dim(1) != d {
        return Err(Error::usage("contrastive embeddings have mismatched shapes"));
    }
    let mut grads = want_grads.then(|| ContrastiveGrads {
        d_forget: Tensor::zeros_like(forget),
        d_forget_aug: Tensor::zeros_like(forget_aug),
        d_retain: Tensor::zeros_like(retain),
    });
    let fs = forget.as_slice();
    let gs = forget_aug.as_slice();
    let rs = retain.as_slice();
    let mut total = 0.0f64;
    let mut weights = vec![0.0f64; br + 1];
    for i in 0..bf {
        let zi = &fs[i * d..(i + 1) * d];
        let zi_aug = &gs[i * d..(i + 1) * d];
        let (dp, ni, np) = cosine(zi, zi_aug);
        let s_pos = dp / (ni * np);
        // log-sum-exp over the positive and all negatives, shifted by max
        let mut sims = Vec::with_capacity(br + 1);
        sims.push(s_pos);
        for r in 0..br {
            let zr = &rs[r * d..(r + 1) * d];
            let (dr, _, nr) = cosine(zi, zr);
            sims.push(dr / (ni * nr));
        }
        let mx = sims.iter().cloned().fold(f64::NEG_INFINITY, f64::max) / tau;
        let mut z = 0.0f64;
        for (w, &s) in weights.iter_mut().zip(&sims) {
            *w = (s / tau - mx).exp();
            z += *w;
        }
        total += z.ln() + mx - s_pos / tau;
        if let Some(g) = grads.as_mut() {
            // dL/ds_pos = (w_pos - 1)/tau, dL/ds_r = w_r/tau, each / bf.
            let scale = 1.0 / (tau * bf as f64);
            let norm_i = ni;
            let zi_unit: Vec<f64> = zi.iter().map(|&v| f64::from(v) / ni).collect();
            // positive pair
            let coef_pos = (weights[0] / z - 1.0) * scale;
            {
                let dzi = g.d_forget.as_mut_slice();
                let dza = g.d_forget_aug.as_mut_slice();
                let zp_unit: Vec<f64> = zi_aug.iter().map(|&v| f64::from(v) / np).collect();
                for j in 0..d {
                    // d s(a,b)/da = (b_unit - s * a_unit)/|a|
                    dzi[i * d + j] +=
                        (coef_pos * (zp_unit[j] - sims[0] * zi_unit[j]) / norm_i) as f32;
                    dza[i * d + j] += (coef_pos * (zi_unit[j] - sims[0] * zp_unit[j]) / np) as f32;
                }
            }
            for r in 0..br {
                let zr = &rs[r * d..(r + 1) * d];
                let (_, _, nr) = cosine(zi, zr);
                let coef = (weights[r + 1] / z) * scale;
                let s_r = sims[r + 1];
                let dzi = g.d_forget.as_mut_slice();
                let dzr = g.d_retain.as_mut_slice();
                for j in 0..d {
                    let zr_unit = f64::from(zr[j]) / nr;
                    dzi[i * d + j] += (coef * (zr_unit - s_r * zi_unit[j]) / norm_i) as f32;
                    dzr[r * d + j] += (coef * (zi_unit[j] - s_r * zr_unit) / nr) as f32;
                }
            }
        }
    }
    Ok((total / bf as f64, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn t(shape: &[usize], v: Vec<f32>) -> Tensor {
        Tensor::from_vec(shape, v)
    }

    #[test]
    fn kl_zero_for_uniform_logits() {
        let logits = t(&[2, 4], vec![0.3; 8]);
        assert_relative_eq!(kl_uniform_loss(&logits).unwrap(), 0.0, epsilon = 1e-7);
    }

    #[test]
    fn kl_worked_two_class_example() {
        // logits (ln 3, 0) -> p = (0.75, 0.25); KL = 0.75 ln 1.5 + 0.25 ln 0.5
        let expected = 0.75 * 1.5f64.ln() + 0.25 * 0.5f64.ln();
        let logits = t(&[1, 2], vec![3.0f32.ln(), 0.0]);
        let got = kl_uniform_loss(&logits).unwrap();
        assert_relative_eq!(got, expected, epsilon = 1e-6);
        assert_relative_eq!(got, 0.13081, epsilon = 1e-4);
    }

    #[test]
    fn kl_saturates_at_ln_k() {
        let logits = t(&[1, 2], vec![30.0, -30.0]);
        assert_relative_eq!(kl_uniform_loss(&logits).unwrap(), 2.0f64.ln(), epsilon = 1e-4);
    }

    #[test]
    fn kl_rejects_non_finite() {
        let logits = t(&[1, 2], vec![f32::NAN, 0.0]);
        assert!(matches!(kl_uniform_loss(&logits), Err(Error::Numeric(_))));
    }

    #[test]
    fn kl_equals_lnk_minus_entropy_on_random_batches() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        for _ in 0..100 {
            let k = rng.random_range(2..12);
            let bsz = rng.random_range(1..6);
            let logits = t(
                &[bsz, k],
                (0..bsz * k).map(|_| rng.random_range(-4.0..4.0)).collect(),
            );
            // independent route: ln K - mean entropy, computed directly
            let mut expected = 0.0f64;
            for b in 0..bsz {
                let row = &logits.as_slice()[b * k..(b + 1) * k];
                let mx = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
                let z: f64 = row.iter().map(|&v| f64::from(v - mx).exp()).sum();
                let mut h = 0.0;
                for &v in row {
                    let p = f64::from(v - mx).exp() / z;
                    h -= p * p.ln();
                }
                expected += (k as f64).ln() - h;
            }
            expected /= bsz as f64;
            assert_relative_eq!(kl_uniform_loss(&logits).unwrap(), expected, epsilon = 1e-6);
        }
    }

    #[test]
    fn ce_uniform_prediction_is_ln_k() {
        let logits = t(&[3, 10], vec![0.0; 30]);
        let labels = vec![1usize, 5, 9];
        assert_relative_eq!(
            retain_ce_loss(&logits, &labels).unwrap(),
            10.0f64.ln(),
            epsilon = 1e-6
        );
    }

    #[test]
    fn ce_saturated_correct_prediction_is_zero() {
        let mut v = vec![-30.0f32; 10];
        v[3] = 30.0;
        let logits = t(&[1, 10], v);
        assert!(retain_ce_loss(&logits, &[3]).unwrap() < 1e-6);
    }

    #[test]
    fn ce_worked_two_class_example() {
        // logits (ln 3, 0), label 0 -> -ln 0.75
        let logits = t(&[1, 2], vec![3.0f32.ln(), 0.0]);
        let got = retain_ce_loss(&logits, &[0]).unwrap();
        assert_relative_eq!(got, -(0.75f64.ln()), epsilon = 1e-6);
        assert_relative_eq!(got, 0.2877, epsilon = 1e-4);
    }

    #[test]
    fn ce_rejects_out_of_range_label() {
        let logits = t(&[1, 2], vec![0.0, 0.0]);
        assert!(matches!(retain_ce_loss(&logits, &[2]), Err(Error::Input(_))));
    }

    #[test]
    fn contrastive_worked_example() {
        // sim(z, z') = 1, one negative with sim 0, tau = 1.4:
        // loss = -ln( e^{1/1.4} / (e^{1/1.4} + 1) ) = ln(1 + e^{-1/1.4})
        let z = t(&[1, 2], vec![1.0, 0.0]);
        let zp = t(&[1, 2], vec![1.0, 0.0]);
        let zr = t(&[1, 2], vec![0.0, 1.0]);
        let got = contrastive_forget_loss(&z, &zp, &zr, 1.4).unwrap();
        let expected = (1.0 + (-1.0 / 1.4f64).exp()).ln();
        assert_relative_eq!(got, expected, epsilon = 1e-6);
        assert_relative_eq!(got, 0.3985, epsilon = 1e-4);
    }

    #[test]
    fn contrastive_equal_similarities_give_ln_n_plus_one() {
        // all similarities equal -> ln(N+1); with one negative, ln 2
        let z = t(&[1, 2], vec![1.0, 0.0]);
        let zp = t(&[1, 2], vec![1.0, 0.0]);
        let zr = t(&[1, 2], vec![1.0, 0.0]);
        let got = contrastive_forget_loss(&z, &zp, &zr, 1.4).unwrap();
        assert_relative_eq!(got, 2.0f64.ln(), epsilon = 1e-6);
        // three negatives, all sims equal -> ln 4
        let zr = t(&[3, 2], vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
        let got = contrastive_forget_loss(&z, &zp, &zr, 0.7).unwrap();
        assert_relative_eq!(got, 4.0f64.ln(), epsilon = 1e-6);
    }

    #[test]
    fn contrastive_increases_with_negative_similarity() {
        let z = t(&[1, 2], vec![1.0, 0.0]);
        let zp = t(&[1, 2], vec![0.9, (1.0f32 - 0.81).sqrt()]);
        let mut last = f64::NEG_INFINITY;
        for neg_sim in [-0.9f32, -0.3, 0.2, 0.7, 0.95] {
            let y = (1.0 - neg_sim * neg_sim).sqrt();
            let zr = t(&[1, 2], vec![neg_sim, y]);
            let loss = contrastive_forget_loss(&z, &zp, &zr, 1.4).unwrap();
            assert!(loss > last, "loss must strictly increase in negative similarity");
            last = loss;
        }
    }

    #[test]
    fn contrastive_is_invariant_under_negative_permutation() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let d = 8;
        let mk = |rng: &mut rand_chacha::ChaCha8Rng, n: usize| {
            let mut v: Vec<f32> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
            for row in v.chunks_mut(d) {
                let norm = row.iter().map(|&x| x * x).sum::<f32>().sqrt();
                row.iter_mut().for_each(|x| *x /= norm);
            }
            t(&[n, d], v)
        };
        let z = mk(&mut rng, 2);
        let zp = mk(&mut rng, 2);
        let zr = mk(&mut rng, 5);
        let base = contrastive_forget_loss(&z, &zp, &zr, 1.4).unwrap();
        // reverse the retain rows
        let mut rev = Vec::new();
        for r in (0..5).rev() {
            rev.extend_from_slice(&zr.as_slice()[r * d..(r + 1) * d]);
        }
        let permuted = contrastive_forget_loss(&z, &zp, &t(&[5, d], rev), 1.4).unwrap();
        assert_relative_eq!(base, permuted, epsilon = 1e-12);
    }

    #[test]
    fn contrastive_rejects_bad_inputs() {
        let z = t(&[1, 2], vec![1.0, 0.0]);
        let zr_empty = Tensor::zeros(&[0, 2]);
        assert!(matches!(
            contrastive_forget_loss(&z, &z, &zr_empty, 1.4),
            Err(Error::Usage(_))
        ));
        let zr = t(&[1, 2], vec![0.0, 1.0]);
        assert!(matches!(
            contrastive_forget_loss(&z, &z, &zr, 0.0),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            contrastive_forget_loss(&z, &z, &zr, -1.0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn contrastive_gradient_matches_finite_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let d = 6;
        // base points exactly representable in f32, so f32 quantization in
        // the loss evaluation does not pollute the finite differences
        let mk = |rng: &mut rand_chacha::ChaCha8Rng, n: usize| -> Vec<f64> {
            (0..n * d).map(|_| f64::from(rng.random_range(-1.0f32..1.0))).collect()
        };
        let zf = mk(&mut rng, 2);
        let za = mk(&mut rng, 2);
        let zr = mk(&mut rng, 3);
        let as_t = |v: &[f64], n: usize| {
            t(&[n, d], v.iter().map(|&x| x as f32).collect())
        };
        let loss = |zf: &[f64], za: &[f64], zr: &[f64]| -> f64 {
            contrastive_forget_loss(&as_t(zf, 2), &as_t(za, 2), &as_t(zr, 3), 1.4).unwrap()
        };
        let (_, grads) =
            contrastive_forget_loss_grad(&as_t(&zf, 2), &as_t(&za, 2), &as_t(&zr, 3), 1.4)
                .unwrap();
        // h large enough that the f32 cast of x +/- h loses at most ~1e-8
        let h = 1e-3;
        let check = |analytic: &Tensor, base: &Vec<f64>, which: usize| {
            for idx in 0..analytic.len() {
                let mut plus = base.clone();
                plus[idx] += h;
                let mut minus = base.clone();
                minus[idx] -= h;
                let (lp, lm) = match which {
                    0 => (loss(&plus, &za, &zr), loss(&minus, &za, &zr)),
                    1 => (loss(&zf, &plus, &zr), loss(&zf, &minus, &zr)),
                    _ => (loss(&zf, &za, &plus), loss(&zf, &za, &minus)),
                };
                let fd = (lp - lm) / (2.0 * h);
                let a = f64::from(analytic.as_slice()[idx]);
                let denom = fd.abs().max(a.abs()).max(1e-6);
                assert!(
                    ((a - fd) / denom).abs() < 1e-3,
                    "grad {which}[{idx}]: analytic {a} vs fd {fd}"
                );
            }
        };
        check(&grads.d_forget, &zf, 0);
        check(&grads.d_forget_aug, &za, 1);
        check(&grads.d_retain, &zr, 2);
    }
}
