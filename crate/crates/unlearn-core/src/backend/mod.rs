//! Classifier abstraction: deterministic construction from a seed, logits
//! and feature forward passes, gradients of scalar losses via the recorded
//! backward pass, and SGD with momentum.

pub mod checkpoint;
pub mod layers;
pub mod network;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;
use network::Network;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ArchKind {
    SmallCnn,
    Resnet18Cifar,
    /// Hand-built stacks (tests, benches); not checkpointable.
    Custom(String),
}

impl ArchKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "small-cnn" => Ok(ArchKind::SmallCnn),
            "resnet18-cifar" => Ok(ArchKind::Resnet18Cifar),
            other => Err(Error::config(format!("unknown architecture name: {other}"))),
        }
    }
}

impl fmt::Display for ArchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ArchKind::SmallCnn => write!(f, "small-cnn"),
            ArchKind::Resnet18Cifar => write!(f, "resnet18-cifar"),
            ArchKind::Custom(name) => write!(f, "custom:{name}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub arch: ArchKind,
    pub num_classes: usize,
}

impl ArchitectureSpec {
    pub fn new(arch: ArchKind, num_classes: usize) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::config(format!("num_classes {num_classes} must be >= 2")));
        }
        Ok(ArchitectureSpec { arch, num_classes })
    }

    pub fn feature_dim(&self) -> usize {
        match self.arch {
            ArchKind::SmallCnn => 128,
            ArchKind::Resnet18Cifar => 512,
            ArchKind::Custom(_) => 0,
        }
    }

    /// Input layout: channels, height, width.
    pub fn input_shape(&self) -> (usize, usize, usize) {
        (3, 32, 32)
    }
}

/// Named gradient arrays, shape-congruent with a classifier's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    entries: Vec<(String, Tensor)>,
}

impl ParamGrads {
    pub fn from_entries(entries: Vec<(String, Tensor)>) -> Self {
        ParamGrads { entries }
    }

    pub fn zeros_like(model: &Classifier) -> Self {
        let mut entries = Vec::new();
        model.visit_params(&mut |name, t| entries.push((name.to_string(), Tensor::zeros_like(t))));
        ParamGrads { entries }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn scale(&mut self, a: f32) {
        for (_, t) in &mut self.entries {
            t.scale(a);
        }
    }

    pub fn add_assign(&mut self, other: &ParamGrads) -> Result<()> {
        self.check_congruent_with(other)?;
        for ((_, t), (_, o)) in self.entries.iter_mut().zip(&other.entries) {
            t.add_assign(o);
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|(_, t)| t.all_finite())
    }

    fn check_congruent_with(&self, other: &ParamGrads) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::usage("gradient maps have different parameter sets"));
        }
        for ((an, at), (bn, bt)) in self.entries.iter().zip(&other.entries) {
            if an != bn || !at.same_shape(bt) {
                return Err(Error::usage(format!(
                    "gradient maps disagree at {an} vs {bn}"
                )));
            }
        }
        Ok(())
    }
}

/// Upstream gradients returned by a loss closure. At least one of the
/// gradient fields must be present for `loss_grads` to have anything to
/// differentiate through.
pub struct LossOutput {
    pub value: f64,
    /// d(loss)/d(logits), shape [B,K].
    pub d_logits: Option<Tensor>,
    /// d(loss)/d(normalized features), shape [B,d].
    pub d_features: Option<Tensor>,
    /// Direct per-parameter contributions for losses that read parameters.
    pub d_params: Option<Vec<(String, Tensor)>>,
}

impl LossOutput {
    pub fn from_logits(value: f64, d_logits: Tensor) -> Self {
        LossOutput { value, d_logits: Some(d_logits), d_features: None, d_params: None }
    }

    pub fn from_features(value: f64, d_features: Tensor) -> Self {
        LossOutput { value, d_logits: None, d_features: Some(d_features), d_params: None }
    }
}

/// Read-only access to named parameters during loss evaluation.
pub struct ParamView<'a>(&'a Network);

impl ParamView<'_> {
    pub fn visit(&self, f: &mut impl FnMut(&str, &Tensor)) {
        self.0.visit_params(f);
    }
}

pub struct Classifier {
    pub spec: ArchitectureSpec,
    net: Network,
    train_mode: bool,
    build_seed: u64,
}

/// Deterministic construction: two calls with identical `(spec, seed)`
/// produce bit-identical parameters.
pub fn build_classifier(spec: &ArchitectureSpec, seed: u64) -> Result<Classifier> {
    let mut rng = rng::rng_for(seed, "init", 0, 0);
    let net = match &spec.arch {
        ArchKind::SmallCnn => network::small_cnn(spec.num_classes, &mut rng),
        ArchKind::Resnet18Cifar => network::resnet18_cifar(spec.num_classes, &mut rng),
        ArchKind::Custom(name) => {
            return Err(Error::config(format!(
                "custom architecture {name} cannot be built from a spec"
            )))
        }
    };
    Ok(Classifier { spec: spec.clone(), net, train_mode: false, build_seed: seed })
}

impl Classifier {
    /// Wrap a hand-built network (gradient checks, benches).
    pub fn from_network(name: &str, num_classes: usize, net: Network, seed: u64) -> Classifier {
        Classifier {
            spec: ArchitectureSpec { arch: ArchKind::Custom(name.to_string()), num_classes },
            net,
            train_mode: false,
            build_seed: seed,
        }
    }

    pub fn set_train(&mut self, train: bool) {
        self.train_mode = train;
    }

    pub fn is_train(&self) -> bool {
        self.train_mode
    }

    pub fn build_seed(&self) -> u64 {
        self.build_seed
    }

    pub fn feature_dim(&self) -> usize {
        self.net.feature_dim
    }

    pub fn num_params(&self) -> usize {
        self.net.num_params()
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit_params(&mut |n, _| names.push(n.to_string()));
        names
    }

    pub fn visit_params(&self, f: &mut impl FnMut(&str, &Tensor)) {
        self.net.visit_params(f);
    }

    pub fn visit_params_mut(&mut self, f: &mut impl FnMut(&str, &mut Tensor)) {
        self.net.visit_params_mut(f);
    }

    pub fn visit_buffers(&self, f: &mut impl FnMut(&str, &Tensor)) {
        self.net.visit_buffers(f);
    }

    pub fn visit_buffers_mut(&mut self, f: &mut impl FnMut(&str, &mut Tensor)) {
        self.net.visit_buffers_mut(f);
    }

    fn check_input(&self, images: &Tensor) -> Result<()> {
        let shape = images.shape();
        if shape.len() != 4 || shape[1] != 3 {
            return Err(Error::input(format!(
                "expected image batch [B,3,H,W], got {shape:?}"
            )));
        }
        if !matches!(self.spec.arch, ArchKind::Custom(_)) {
            let (c, h, w) = self.spec.input_shape();
            if (shape[1], shape[2], shape[3]) != (c, h, w) {
                return Err(Error::input(format!(
                    "expected input [B,{c},{h},{w}], got {shape:?}"
                )));
            }
        }
        Ok(())
    }

    /// Class logits, shape [B,K].
    pub fn forward_logits(&mut self, images: &Tensor) -> Result<Tensor> {
        self.check_input(images)?;
        let feat = self.net.features_raw(images, self.train_mode);
        Ok(self.net.head.forward(&feat))
    }

    /// L2-normalized penultimate-layer embeddings, shape [B,d].
    pub fn forward_features(&mut self, images: &Tensor) -> Result<Tensor> {
        self.check_input(images)?;
        let raw = self.net.features_raw(images, self.train_mode);
        let bsz = raw.dim(0);
        let mut out = Tensor::zeros(raw.shape());
        layers::l2_normalize_rows(raw.as_slice(), bsz, self.net.feature_dim, out.as_mut_slice());
        Ok(out)
    }

    /// Logits and normalized features from one shared forward pass.
    pub fn forward_both(&mut self, images: &Tensor) -> Result<(Tensor, Tensor)> {
        self.check_input(images)?;
        let raw = self.net.features_raw(images, self.train_mode);
        let bsz = raw.dim(0);
        let mut norm = Tensor::zeros(raw.shape());
        layers::l2_normalize_rows(raw.as_slice(), bsz, self.net.feature_dim, norm.as_mut_slice());
        let logits = self.net.head.forward(&raw);
        Ok((logits, norm))
    }

    /// Differentiate a scalar loss of this model's outputs (and optionally
    /// its parameters) at the current parameters. The closure receives the
    /// logits, the normalized features and a parameter view, and returns the
    /// loss value with its upstream gradients.
    pub fn loss_grads<F>(&mut self, images: &Tensor, loss: F) -> Result<(f64, ParamGrads)>
    where
        F: FnOnce(&Tensor, &Tensor, &ParamView) -> Result<LossOutput>,
    {
        self.check_input(images)?;
        let (logits, cache) = self.net.forward_recorded(images, self.train_mode);
        let out = loss(&logits, &cache.features_norm, &ParamView(&self.net))?;
        if out.d_logits.is_none() && out.d_features.is_none() && out.d_params.is_none() {
            return Err(Error::usage(
                "loss is not connected to the model: no upstream gradients returned",
            ));
        }
        if let Some(dl) = &out.d_logits {
            dl.check_shape(logits.shape(), "d_logits")?;
        }
        if let Some(df) = &out.d_features {
            df.check_shape(cache.features_norm.shape(), "d_features")?;
        }
        let mut sink = self.net.backward(cache, out.d_logits.as_ref(), out.d_features.as_ref());
        if let Some(direct) = &out.d_params {
            for (name, g) in direct {
                if !sink.add_direct(name, g) {
                    return Err(Error::usage(format!(
                        "direct gradient for unknown or mismatched parameter {name}"
                    )));
                }
            }
        }
        Ok((out.value, ParamGrads::from_entries(sink.into_entries())))
    }
}

/// SGD with momentum; weight decay is folded into the gradient before the
/// momentum update (`v = m*v + g + wd*w; w -= lr*v`). Momentum buffers
/// persist for the lifetime of the optimizer, i.e. one training phase.
pub struct SgdOptimizer {
    pub lr: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    velocity: Option<Vec<(String, Tensor)>>,
}

impl SgdOptimizer {
    pub fn new(lr: f32, momentum: f32, weight_decay: f32) -> Result<Self> {
        if lr <= 0.0 || !lr.is_finite() {
            return Err(Error::config(format!("learning rate {lr} must be > 0")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::config(format!("momentum {momentum} must be in [0,1)")));
        }
        if weight_decay < 0.0 {
            return Err(Error::config(format!("weight decay {weight_decay} must be >= 0")));
        }
        Ok(SgdOptimizer { lr, momentum, weight_decay, velocity: None })
    }

    pub fn step(&mut self, model: &mut Classifier, grads: &ParamGrads) -> Result<()> {
        let velocity = match &mut self.velocity {
            Some(v) => v,
            None => {
                let mut v = Vec::with_capacity(grads.len());
                model.visit_params(&mut |name, t| v.push((name.to_string(), Tensor::zeros_like(t))));
                self.velocity = Some(v);
                self.velocity.as_mut().unwrap()
            }
        };
        let mut i = 0;
        let mut err = None;
        let (lr, mu, wd) = (self.lr, self.momentum, self.weight_decay);
        let grads_vec: Vec<(&str, &Tensor)> = grads.iter().collect();
        model.visit_params_mut(&mut |name, w| {
            if err.is_some() {
                return;
            }
            if i >= grads_vec.len() || grads_vec[i].0 != name || !grads_vec[i].1.same_shape(w) {
                err = Some(Error::usage(format!("gradients not congruent with model at {name}")));
                return;
            }
            let v = velocity[i].1.as_mut_slice();
            let g = grads_vec[i].1.as_slice();
            for ((vj, wj), gj) in v.iter_mut().zip(w.as_mut_slice()).zip(g) {
                *vj = mu * *vj + (*gj + wd * *wj);
                *wj -= lr * *vj;
            }
            i += 1;
        });
        if let Some(e) = err {
            return Err(e);
        }
        if i != grads_vec.len() {
            return Err(Error::usage("gradients not congruent with model: extra entries"));
        }
        Ok(())
    }

    pub fn velocity(&self) -> Option<&[(String, Tensor)]> {
        self.velocity.as_deref()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn spec(arch: ArchKind, k: usize) -> ArchitectureSpec {
        ArchitectureSpec::new(arch, k).unwrap()
    }

    fn batch(bsz: usize, seed: u64) -> Tensor {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data = (0..bsz * 3 * 32 * 32).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::from_vec(&[bsz, 3, 32, 32], data)
    }

    #[test]
    fn build_is_deterministic() {
        let s = spec(ArchKind::SmallCnn, 10);
        let a = build_classifier(&s, 7).unwrap();
        let b = build_classifier(&s, 7).unwrap();
        let mut pa = Vec::new();
        a.visit_params(&mut |n, t| pa.push((n.to_string(), t.clone())));
        let mut i = 0;
        b.visit_params(&mut |n, t| {
            assert_eq!(pa[i].0, n);
            assert_eq!(pa[i].1, *t, "parameter {n} differs between identical builds");
            i += 1;
        });
        let c = build_classifier(&s, 8).unwrap();
        let mut any_diff = false;
        let mut j = 0;
        c.visit_params(&mut |_, t| {
            if pa[j].1 != *t {
                any_diff = true;
            }
            j += 1;
        });
        assert!(any_diff, "different seeds must differ");
    }

    #[test]
    fn unknown_architecture_is_config_error() {
        assert!(ArchKind::parse("mlp-mixer").is_err());
        assert!(ArchKind::parse("small-cnn").is_ok());
    }

    #[test]
    fn resnet_head_shape_and_logit_width() {
        let s = spec(ArchKind::Resnet18Cifar, 10);
        let m = build_classifier(&s, 0).unwrap();
        let mut head_shape = Vec::new();
        m.visit_params(&mut |n, t| {
            if n == "head.weight" {
                head_shape = t.shape().to_vec();
            }
        });
        assert_eq!(head_shape, vec![10, 512]);

        let s = spec(ArchKind::SmallCnn, 100);
        let mut m = build_classifier(&s, 3).unwrap();
        let logits = m.forward_logits(&batch(2, 0)).unwrap();
        assert_eq!(logits.shape(), &[2, 100]);
    }

    #[test]
    fn eval_forward_is_deterministic_and_rowwise() {
        let s = spec(ArchKind::SmallCnn, 10);
        let mut m = build_classifier(&s, 1).unwrap();
        let x = batch(4, 5);
        let a = m.forward_logits(&x).unwrap();
        let b = m.forward_logits(&x).unwrap();
        assert_eq!(a, b);
        assert!(a.all_finite());
        // duplicate a row: identical logits rows
        let mut dup = x.clone();
        let row = dup.as_slice()[0..3 * 32 * 32].to_vec();
        dup.as_mut_slice()[3 * 32 * 32..2 * 3 * 32 * 32].copy_from_slice(&row);
        let l = m.forward_logits(&dup).unwrap();
        let k = l.dim(1);
        assert_eq!(l.as_slice()[..k], l.as_slice()[k..2 * k]);
    }

    #[test]
    fn softmax_of_logits_normalizes() {
        let s = spec(ArchKind::SmallCnn, 10);
        let mut m = build_classifier(&s, 2).unwrap();
        let logits = m.forward_logits(&batch(3, 1)).unwrap();
        for row in logits.as_slice().chunks(10) {
            let mx = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let sum: f64 = row.iter().map(|&v| f64::from((v - mx).exp())).sum();
            let total: f64 = row.iter().map(|&v| f64::from((v - mx).exp()) / sum).sum();
            assert_relative_eq!(total, 1.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn features_are_unit_rows() {
        let s = spec(ArchKind::SmallCnn, 10);
        let mut m = build_classifier(&s, 4).unwrap();
        let f = m.forward_features(&batch(5, 2)).unwrap();
        for row in f.as_slice().chunks(128) {
            let norm: f64 = row.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt();
            assert_relative_eq!(norm, 1.0, epsilon = 1e-6);
            // cosine of a row with itself
            let cos: f64 = row.iter().map(|&v| f64::from(v) * f64::from(v)).sum();
            assert_relative_eq!(cos, 1.0, epsilon = 1e-6);
        }
        let g = m.forward_features(&batch(5, 2)).unwrap();
        assert_eq!(f, g);
    }

    #[test]
    fn param_sum_loss_gives_unit_grads() {
        let s = spec(ArchKind::SmallCnn, 10);
        let mut m = build_classifier(&s, 9).unwrap();
        let x = batch(1, 3);
        // loss = sum of all params -> all-ones gradients
        let (_, grads) = m
            .loss_grads(&x, |_logits, _feat, view| {
                let mut value = 0.0f64;
                let mut direct = Vec::new();
                view.visit(&mut |name, t| {
                    value += t.as_slice().iter().map(|&v| f64::from(v)).sum::<f64>();
                    let mut ones = Tensor::zeros_like(t);
                    ones.fill(1.0);
                    direct.push((name.to_string(), ones));
                });
                Ok(LossOutput { value, d_logits: None, d_features: None, d_params: Some(direct) })
            })
            .unwrap();
        for (name, g) in grads.iter() {
            assert!(g.as_slice().iter().all(|&v| v == 1.0), "{name} not all-ones");
        }
        // loss = 0 * sum of params -> all-zero gradients
        let (v, grads) = m
            .loss_grads(&x, |_l, _f, view| {
                let mut direct = Vec::new();
                view.visit(&mut |name, t| direct.push((name.to_string(), Tensor::zeros_like(t))));
                Ok(LossOutput { value: 0.0, d_logits: None, d_features: None, d_params: Some(direct) })
            })
            .unwrap();
        assert_eq!(v, 0.0);
        assert!(grads.iter().all(|(_, g)| g.as_slice().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn disconnected_loss_is_usage_error() {
        let s = spec(ArchKind::SmallCnn, 10);
        let mut m = build_classifier(&s, 9).unwrap();
        let err = m
            .loss_grads(&batch(1, 0), |_, _, _| {
                Ok(LossOutput { value: 1.0, d_logits: None, d_features: None, d_params: None })
            })
            .unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
    }

    #[test]
    fn grads_are_congruent_with_params() {
        let s = spec(ArchKind::SmallCnn, 10);
        let mut m = build_classifier(&s, 11).unwrap();
        let x = batch(2, 7);
        let (_, grads) = m
            .loss_grads(&x, |logits, _, _| {
                let mut d = Tensor::zeros_like(logits);
                d.fill(1.0 / logits.len() as f32);
                let value = logits.as_slice().iter().map(|&v| f64::from(v)).sum::<f64>()
                    / logits.len() as f64;
                Ok(LossOutput::from_logits(value, d))
            })
            .unwrap();
        let mut names = Vec::new();
        m.visit_params(&mut |n, t| names.push((n.to_string(), t.shape().to_vec())));
        let got: Vec<(String, Vec<usize>)> =
            grads.iter().map(|(n, t)| (n.to_string(), t.shape().to_vec())).collect();
        assert_eq!(names, got);
    }

    #[test]
    fn sgd_definition_and_weight_decay_fold() {
        // single scalar param w=1, grad=2, lr=0.1, momentum=0, wd=0 -> 0.8
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut lin = network::LinearLayer::new("head", 1, 1, &mut rng);
        lin.weight.as_mut_slice()[0] = 1.0;
        lin.bias.as_mut_slice()[0] = 0.0;
        let net = Network::new(vec![], lin);
        let mut m = Classifier::from_network("scalar", 2, net, 0);
        let grads = ParamGrads::from_entries(vec![
            ("head.weight".into(), Tensor::from_vec(&[1, 1], vec![2.0])),
            ("head.bias".into(), Tensor::from_vec(&[1], vec![0.0])),
        ]);
        let mut opt = SgdOptimizer::new(0.1, 0.0, 0.0).unwrap();
        opt.step(&mut m, &grads).unwrap();
        let mut w = 0.0;
        m.visit_params(&mut |n, t| {
            if n == "head.weight" {
                w = t.as_slice()[0];
            }
        });
        assert_relative_eq!(w, 0.8, epsilon = 1e-7);

        // same with wd=0.5: effective grad 2 + 0.5*1 = 2.5 -> w = 0.75
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut lin = network::LinearLayer::new("head", 1, 1, &mut rng);
        lin.weight.as_mut_slice()[0] = 1.0;
        lin.bias.as_mut_slice()[0] = 0.0;
        let mut m = Classifier::from_network("scalar", 2, Network::new(vec![], lin), 0);
        let mut opt = SgdOptimizer::new(0.1, 0.0, 0.5).unwrap();
        opt.step(&mut m, &grads).unwrap();
        let mut w = 0.0;
        m.visit_params(&mut |n, t| {
            if n == "head.weight" {
                w = t.as_slice()[0];
            }
        });
        // bias also decays: 0 stays 0
        assert_relative_eq!(w, 0.75, epsilon = 1e-7);
    }

    #[test]
    fn zero_grads_are_a_fixed_point() {
        let s = spec(ArchKind::SmallCnn, 10);
        let mut m = build_classifier(&s, 5).unwrap();
        let grads = ParamGrads::zeros_like(&m);
        let mut before = Vec::new();
        m.visit_params(&mut |_, t| before.push(t.clone()));
        let mut opt = SgdOptimizer::new(0.1, 0.9, 0.0).unwrap();
        opt.step(&mut m, &grads).unwrap();
        let mut i = 0;
        m.visit_params(&mut |_, t| {
            assert_eq!(before[i], *t);
            i += 1;
        });
    }

    #[test]
    fn sgd_rejects_bad_lr() {
        assert!(SgdOptimizer::new(0.0, 0.9, 0.0).is_err());
        assert!(SgdOptimizer::new(-1.0, 0.9, 0.0).is_err());
        assert!(SgdOptimizer::new(0.1, 1.0, 0.0).is_err());
    }

    #[test]
    fn momentum_buffers_persist_across_steps() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut lin = network::LinearLayer::new("head", 1, 1, &mut rng);
        lin.weight.as_mut_slice()[0] = 0.0;
        lin.bias.as_mut_slice()[0] = 0.0;
        let mut m = Classifier::from_network("scalar", 2, Network::new(vec![], lin), 0);
        let grads = ParamGrads::from_entries(vec![
            ("head.weight".into(), Tensor::from_vec(&[1, 1], vec![1.0])),
            ("head.bias".into(), Tensor::from_vec(&[1], vec![0.0])),
        ]);
        let mut opt = SgdOptimizer::new(1.0, 0.5, 0.0).unwrap();
        // v1 = 1, w = -1; v2 = 1.5, w = -2.5
        opt.step(&mut m, &grads).unwrap();
        opt.step(&mut m, &grads).unwrap();
        let mut w = 0.0;
        m.visit_params(&mut |n, t| {
            if n == "head.weight" {
                w = t.as_slice()[0];
            }
        });
        assert_relative_eq!(w, -2.5, epsilon = 1e-7);
    }

    #[test]
    fn shape_mismatch_is_input_error() {
        let s = spec(ArchKind::SmallCnn, 10);
        let mut m = build_classifier(&s, 5).unwrap();
        let bad = Tensor::zeros(&[2, 3, 16, 16]);
        assert!(matches!(m.forward_logits(&bad), Err(Error::Input(_))));
    }
}
