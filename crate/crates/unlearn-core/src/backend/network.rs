//! Layer graph: a trunk of nodes producing the feature embedding, plus a
//! linear classification head. Forward passes cache what backward needs;
//! backward pops the cache in reverse and accumulates named parameter
//! gradients. Residual nodes give ResNet-style two-branch blocks.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::layers::{self, ConvDims};
use crate::tensor::Tensor;

fn uniform_init(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f32).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::from_vec(shape, data)
}

pub struct ConvLayer {
    pub name: String,
    pub weight: Tensor,
    pub bias: Option<Tensor>,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        with_bias: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = cin * k * k;
        let weight = uniform_init(rng, &[cout, cin, k, k], fan_in);
        let bias = with_bias.then(|| uniform_init(rng, &[cout], fan_in));
        ConvLayer { name: name.to_string(), weight, bias, cin, cout, k, stride, pad }
    }

    fn dims(&self, x: &Tensor) -> ConvDims {
        ConvDims {
            batch: x.dim(0),
            cin: x.dim(1),
            h: x.dim(2),
            w: x.dim(3),
            cout: self.cout,
            k: self.k,
            stride: self.stride,
            pad: self.pad,
        }
    }
}

pub struct BnLayer {
    pub name: String,
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub momentum: f32,
    pub eps: f32,
}

impl BnLayer {
    pub fn new(name: &str, c: usize) -> Self {
        BnLayer {
            name: name.to_string(),
            gamma: Tensor::from_vec(&[c], vec![1.0; c]),
            beta: Tensor::zeros(&[c]),
            running_mean: Tensor::zeros(&[c]),
            running_var: Tensor::from_vec(&[c], vec![1.0; c]),
            momentum: 0.1,
            eps: 1e-5,
        }
    }
}

pub struct LinearLayer {
    pub name: String,
    pub weight: Tensor,
    pub bias: Tensor,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl LinearLayer {
    pub fn new(name: &str, in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        LinearLayer {
            name: name.to_string(),
            weight: uniform_init(rng, &[out_dim, in_dim], in_dim),
            bias: uniform_init(rng, &[out_dim], in_dim),
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let bsz = x.dim(0);
        let mut out = Tensor::zeros(&[bsz, self.out_dim]);
        layers::linear_forward(
            x.as_slice(),
            self.weight.as_slice(),
            self.bias.as_slice(),
            bsz,
            self.in_dim,
            self.out_dim,
            out.as_mut_slice(),
        );
        out
    }

    fn backward(&self, dy: &Tensor, input: &Tensor, sink: &mut GradSink) -> Tensor {
        let bsz = dy.dim(0);
        let mut dx = Tensor::zeros(&[bsz, self.in_dim]);
        layers::linear_backward_input(
            dy.as_slice(),
            self.weight.as_slice(),
            bsz,
            self.in_dim,
            self.out_dim,
            dx.as_mut_slice(),
        );
        let (dw, db) = sink.pair_mut(&self.name);
        layers::linear_backward_params(
            input.as_slice(),
            dy.as_slice(),
            bsz,
            self.in_dim,
            self.out_dim,
            dw,
            db,
        );
        dx
    }
}

pub enum Node {
    Conv(ConvLayer),
    Bn(BnLayer),
    Relu,
    MaxPool2,
    GlobalAvgPool,
    Flatten,
    Linear(LinearLayer),
    Residual { main: Vec<Node>, shortcut: Vec<Node> },
}

enum StepCache {
    Conv { input: Tensor },
    Bn { xhat: Tensor, inv_std: Vec<f32>, train: bool },
    Relu { mask: Vec<u8> },
    MaxPool { codes: Vec<u8>, in_shape: [usize; 4] },
    AvgPool { in_shape: [usize; 4] },
    Flatten { in_shape: [usize; 4] },
    Linear { input: Tensor },
}

fn shape4(t: &Tensor) -> [usize; 4] {
    [t.dim(0), t.dim(1), t.dim(2), t.dim(3)]
}

impl Node {
    fn forward(&mut self, x: Tensor, train: bool, record: bool, cache: &mut Vec<StepCache>) -> Tensor {
        match self {
            Node::Conv(conv) => {
                let d = conv.dims(&x);
                let mut out = Tensor::zeros(&[d.batch, d.cout, d.out_h(), d.out_w()]);
                layers::conv2d_forward(
                    x.as_slice(),
                    conv.weight.as_slice(),
                    conv.bias.as_ref().map(Tensor::as_slice),
                    &d,
                    out.as_mut_slice(),
                );
                if record {
                    cache.push(StepCache::Conv { input: x });
                }
                out
            }
            Node::Bn(bn) => {
                let [b, c, h, w] = shape4(&x);
                let mut out = Tensor::zeros(x.shape());
                if train {
                    let mut xhat = Tensor::zeros(x.shape());
                    let stats = layers::bn_forward_train(
                        x.as_slice(),
                        bn.gamma.as_slice(),
                        bn.beta.as_slice(),
                        bn.running_mean.as_mut_slice(),
                        bn.running_var.as_mut_slice(),
                        bn.momentum,
                        bn.eps,
                        b,
                        c,
                        h * w,
                        out.as_mut_slice(),
                        xhat.as_mut_slice(),
                    );
                    if record {
                        cache.push(StepCache::Bn { xhat, inv_std: stats.inv_std, train: true });
                    }
                } else {
                    let mut xhat = record.then(|| Tensor::zeros(x.shape()));
                    let stats = layers::bn_forward_eval(
                        x.as_slice(),
                        bn.gamma.as_slice(),
                        bn.beta.as_slice(),
                        bn.running_mean.as_slice(),
                        bn.running_var.as_slice(),
                        bn.eps,
                        b,
                        c,
                        h * w,
                        out.as_mut_slice(),
                        xhat.as_mut().map(|t| t.as_mut_slice()),
                    );
                    if let Some(xhat) = xhat {
                        cache.push(StepCache::Bn { xhat, inv_std: stats.inv_std, train: false });
                    }
                }
                out
            }
            Node::Relu => {
                let mut x = x;
                if record {
                    let mut mask = Vec::new();
                    layers::relu_forward(x.as_mut_slice(), Some(&mut mask));
                    cache.push(StepCache::Relu { mask });
                } else {
                    layers::relu_forward(x.as_mut_slice(), None);
                }
                x
            }
            Node::MaxPool2 => {
                let [b, c, h, w] = shape4(&x);
                let mut out = Tensor::zeros(&[b, c, h / 2, w / 2]);
                if record {
                    let mut codes = Vec::new();
                    layers::maxpool2_forward(x.as_slice(), b, c, h, w, out.as_mut_slice(), Some(&mut codes));
                    cache.push(StepCache::MaxPool { codes, in_shape: [b, c, h, w] });
                } else {
                    layers::maxpool2_forward(x.as_slice(), b, c, h, w, out.as_mut_slice(), None);
                }
                out
            }
            Node::GlobalAvgPool => {
                let [b, c, h, w] = shape4(&x);
                let mut out = Tensor::zeros(&[b, c]);
                layers::global_avgpool_forward(x.as_slice(), b, c, h * w, out.as_mut_slice());
                if record {
                    cache.push(StepCache::AvgPool { in_shape: [b, c, h, w] });
                }
                out
            }
            Node::Flatten => {
                let [b, c, h, w] = shape4(&x);
                if record {
                    cache.push(StepCache::Flatten { in_shape: [b, c, h, w] });
                }
                Tensor::from_vec(&[b, c * h * w], x.into_vec())
            }
            Node::Linear(lin) => {
                let out = lin.forward(&x);
                if record {
                    cache.push(StepCache::Linear { input: x });
                }
                out
            }
            Node::Residual { main, shortcut } => {
                // Shortcut runs (and caches) first so backward pops main first.
                let s_out = forward_seq(shortcut, x.clone(), train, record, cache);
                let mut m_out = forward_seq(main, x, train, record, cache);
                m_out.add_assign(&s_out);
                m_out
            }
        }
    }

    fn backward(&self, dy: Tensor, cache: &mut Vec<StepCache>, sink: &mut GradSink) -> Tensor {
        match self {
            Node::Conv(conv) => {
                let Some(StepCache::Conv { input }) = cache.pop() else {
                    panic!("cache mismatch at conv {}", conv.name);
                };
                let d = conv.dims(&input);
                let mut dx = Tensor::zeros(input.shape());
                layers::conv2d_backward_input(dy.as_slice(), conv.weight.as_slice(), &d, dx.as_mut_slice());
                if conv.bias.is_some() {
                    let (dw, db) = sink.pair_mut(&conv.name);
                    layers::conv2d_backward_params(input.as_slice(), dy.as_slice(), &d, dw, Some(db));
                } else {
                    let dw = sink.weight_mut(&conv.name);
                    layers::conv2d_backward_params(input.as_slice(), dy.as_slice(), &d, dw, None);
                }
                dx
            }
            Node::Bn(bn) => {
                let Some(StepCache::Bn { xhat, inv_std, train }) = cache.pop() else {
                    panic!("cache mismatch at bn {}", bn.name);
                };
                let [b, c, h, w] = shape4(&xhat);
                let mut dx = Tensor::zeros(xhat.shape());
                let (dgamma, dbeta) = sink.bn_pair_mut(&bn.name);
                let f = if train { layers::bn_backward_train } else { layers::bn_backward_eval };
                f(
                    dy.as_slice(),
                    xhat.as_slice(),
                    bn.gamma.as_slice(),
                    &inv_std,
                    b,
                    c,
                    h * w,
                    dx.as_mut_slice(),
                    dgamma,
                    dbeta,
                );
                dx
            }
            Node::Relu => {
                let Some(StepCache::Relu { mask }) = cache.pop() else {
                    panic!("cache mismatch at relu");
                };
                let mut dy = dy;
                layers::relu_backward(dy.as_mut_slice(), &mask);
                dy
            }
            Node::MaxPool2 => {
                let Some(StepCache::MaxPool { codes, in_shape: [b, c, h, w] }) = cache.pop() else {
                    panic!("cache mismatch at maxpool");
                };
                let mut dx = Tensor::zeros(&[b, c, h, w]);
                layers::maxpool2_backward(dy.as_slice(), &codes, b, c, h, w, dx.as_mut_slice());
                dx
            }
            Node::GlobalAvgPool => {
                let Some(StepCache::AvgPool { in_shape: [b, c, h, w] }) = cache.pop() else {
                    panic!("cache mismatch at avgpool");
                };
                let mut dx = Tensor::zeros(&[b, c, h, w]);
                layers::global_avgpool_backward(dy.as_slice(), b, c, h * w, dx.as_mut_slice());
                dx
            }
            Node::Flatten => {
                let Some(StepCache::Flatten { in_shape: [b, c, h, w] }) = cache.pop() else {
                    panic!("cache mismatch at flatten");
                };
                Tensor::from_vec(&[b, c, h, w], dy.into_vec())
            }
            Node::Linear(lin) => {
                let Some(StepCache::Linear { input }) = cache.pop() else {
                    panic!("cache mismatch at linear {}", lin.name);
                };
                lin.backward(&dy, &input, sink)
            }
            Node::Residual { main, shortcut } => {
                let dx_main = backward_seq(main, dy.clone(), cache, sink);
                let mut dx = backward_seq(shortcut, dy, cache, sink);
                dx.add_assign(&dx_main);
                dx
            }
        }
    }

    fn visit_params(&self, f: &mut impl FnMut(&str, &Tensor)) {
        match self {
            Node::Conv(c) => {
                f(&format!("{}.weight", c.name), &c.weight);
                if let Some(b) = &c.bias {
                    f(&format!("{}.bias", c.name), b);
                }
            }
            Node::Bn(bn) => {
                f(&format!("{}.gamma", bn.name), &bn.gamma);
                f(&format!("{}.beta", bn.name), &bn.beta);
            }
            Node::Linear(l) => {
                f(&format!("{}.weight", l.name), &l.weight);
                f(&format!("{}.bias", l.name), &l.bias);
            }
            Node::Residual { main, shortcut } => {
                for n in main {
                    n.visit_params(f);
                }
                for n in shortcut {
                    n.visit_params(f);
                }
            }
            _ => {}
        }
    }

    fn visit_params_mut(&mut self, f: &mut impl FnMut(&str, &mut Tensor)) {
        match self {
            Node::Conv(c) => {
                f(&format!("{}.weight", c.name), &mut c.weight);
                if let Some(b) = &mut c.bias {
                    f(&format!("{}.bias", c.name), b);
                }
            }
            Node::Bn(bn) => {
                f(&format!("{}.gamma", bn.name), &mut bn.gamma);
                f(&format!("{}.beta", bn.name), &mut bn.beta);
            }
            Node::Linear(l) => {
                f(&format!("{}.weight", l.name), &mut l.weight);
                f(&format!("{}.bias", l.name), &mut l.bias);
            }
            Node::Residual { main, shortcut } => {
                for n in main {
                    n.visit_params_mut(f);
                }
                for n in shortcut {
                    n.visit_params_mut(f);
                }
            }
            _ => {}
        }
    }

    /// Non-trainable state (batch-norm running statistics), included in
    /// checkpoints but not in gradients.
    fn visit_buffers(&self, f: &mut impl FnMut(&str, &Tensor)) {
        match self {
            Node::Bn(bn) => {
                f(&format!("{}.running_mean", bn.name), &bn.running_mean);
                f(&format!("{}.running_var", bn.name), &bn.running_var);
            }
            Node::Residual { main, shortcut } => {
                for n in main {
                    n.visit_buffers(f);
                }
                for n in shortcut {
                    n.visit_buffers(f);
                }
            }
            _ => {}
        }
    }

    fn visit_buffers_mut(&mut self, f: &mut impl FnMut(&str, &mut Tensor)) {
        match self {
            Node::Bn(bn) => {
                f(&format!("{}.running_mean", bn.name), &mut bn.running_mean);
                f(&format!("{}.running_var", bn.name), &mut bn.running_var);
            }
            Node::Residual { main, shortcut } => {
                for n in main {
                    n.visit_buffers_mut(f);
                }
                for n in shortcut {
                    n.visit_buffers_mut(f);
                }
            }
            _ => {}
        }
    }
}

fn forward_seq(nodes: &mut [Node], x: Tensor, train: bool, record: bool, cache: &mut Vec<StepCache>) -> Tensor {
    let mut cur = x;
    for n in nodes.iter_mut() {
        cur = n.forward(cur, train, record, cache);
    }
    cur
}

fn backward_seq(nodes: &[Node], dy: Tensor, cache: &mut Vec<StepCache>, sink: &mut GradSink) -> Tensor {
    let mut cur = dy;
    for n in nodes.iter().rev() {
        cur = n.backward(cur, cache, sink);
    }
    cur
}

/// Accumulator for named parameter gradients, congruent with the network's
/// parameter list by construction.
pub struct GradSink {
    index: HashMap<String, usize>,
    entries: Vec<(String, Tensor)>,
}

impl GradSink {
    pub fn for_network(net: &Network) -> Self {
        let mut entries = Vec::new();
        let mut index = HashMap::new();
        net.visit_params(&mut |name: &str, t: &Tensor| {
            index.insert(name.to_string(), entries.len());
            entries.push((name.to_string(), Tensor::zeros_like(t)));
        });
        GradSink { index, entries }
    }

    fn slot(&mut self, name: &str) -> &mut Tensor {
        let i = *self.index.get(name).unwrap_or_else(|| panic!("unknown param {name}"));
        &mut self.entries[i].1
    }

    fn weight_mut(&mut self, layer: &str) -> &mut [f32] {
        self.slot(&format!("{layer}.weight")).as_mut_slice()
    }

    /// Disjoint (weight, bias) gradient slices for one layer.
    fn pair_mut(&mut self, layer: &str) -> (&mut [f32], &mut [f32]) {
        let wi = self.index[&format!("{layer}.weight")];
        let bi = self.index[&format!("{layer}.bias")];
        split_two(&mut self.entries, wi, bi)
    }

    fn bn_pair_mut(&mut self, layer: &str) -> (&mut [f32], &mut [f32]) {
        let gi = self.index[&format!("{layer}.gamma")];
        let bi = self.index[&format!("{layer}.beta")];
        split_two(&mut self.entries, gi, bi)
    }

    pub fn add_direct(&mut self, name: &str, grad: &Tensor) -> bool {
        match self.index.get(name) {
            Some(&i) if self.entries[i].1.same_shape(grad) => {
                self.entries[i].1.add_assign(grad);
                true
            }
            _ => false,
        }
    }

    pub fn into_entries(self) -> Vec<(String, Tensor)> {
        self.entries
    }
}

fn split_two(entries: &mut [(String, Tensor)], a: usize, b: usize) -> (&mut [f32], &mut [f32]) {
    assert_ne!(a, b);
    if a < b {
        let (lo, hi) = entries.split_at_mut(b);
        (lo[a].1.as_mut_slice(), hi[0].1.as_mut_slice())
    } else {
        let (lo, hi) = entries.split_at_mut(a);
        let bslice = lo[b].1.as_mut_slice();
        (hi[0].1.as_mut_slice(), bslice)
    }
}

/// Trunk producing the raw feature embedding plus the classification head.
pub struct Network {
    pub trunk: Vec<Node>,
    pub head: LinearLayer,
    pub feature_dim: usize,
}

/// Cache of one recorded forward pass, consumed by `backward`.
pub struct ForwardCache {
    steps: Vec<StepCache>,
    pub features_raw: Tensor,
    pub features_norm: Tensor,
    pub norms: Vec<f32>,
}

impl Network {
    pub fn new(trunk: Vec<Node>, head: LinearLayer) -> Self {
        let feature_dim = head.in_dim;
        Network { trunk, head, feature_dim }
    }

    /// Forward to raw features without recording.
    pub fn features_raw(&mut self, images: &Tensor, train: bool) -> Tensor {
        let mut cache = Vec::new();
        forward_seq(&mut self.trunk, images.clone(), train, false, &mut cache)
    }

    /// Recorded forward pass: returns logits plus the cache for backward.
    pub fn forward_recorded(&mut self, images: &Tensor, train: bool) -> (Tensor, ForwardCache) {
        let mut steps = Vec::new();
        let raw = forward_seq(&mut self.trunk, images.clone(), train, true, &mut steps);
        let bsz = raw.dim(0);
        let mut norm = Tensor::zeros(raw.shape());
        let norms = layers::l2_normalize_rows(raw.as_slice(), bsz, self.feature_dim, norm.as_mut_slice());
        let logits = self.head.forward(&raw);
        (logits, ForwardCache { steps, features_raw: raw, features_norm: norm, norms })
    }

    /// Backward from upstream gradients on logits and/or normalized features.
    pub fn backward(
        &self,
        cache: ForwardCache,
        d_logits: Option<&Tensor>,
        d_features: Option<&Tensor>,
    ) -> GradSink {
        let mut sink = GradSink::for_network(self);
        let bsz = cache.features_raw.dim(0);
        let mut d_raw = Tensor::zeros(&[bsz, self.feature_dim]);
        if let Some(dl) = d_logits {
            let dx = self.head.backward(dl, &cache.features_raw, &mut sink);
            d_raw.add_assign(&dx);
        }
        if let Some(df) = d_features {
            let mut dx = Tensor::zeros(&[bsz, self.feature_dim]);
            layers::l2_normalize_backward(
                df.as_slice(),
                cache.features_norm.as_slice(),
                &cache.norms,
                bsz,
                self.feature_dim,
                dx.as_mut_slice(),
            );
            d_raw.add_assign(&dx);
        }
        let mut steps = cache.steps;
        backward_seq(&self.trunk, d_raw, &mut steps, &mut sink);
        debug_assert!(steps.is_empty(), "unconsumed forward cache entries");
        sink
    }

    pub fn visit_params(&self, f: &mut impl FnMut(&str, &Tensor)) {
        for n in &self.trunk {
            n.visit_params(f);
        }
        f(&format!("{}.weight", self.head.name), &self.head.weight);
        f(&format!("{}.bias", self.head.name), &self.head.bias);
    }

    pub fn visit_params_mut(&mut self, f: &mut impl FnMut(&str, &mut Tensor)) {
        for n in &mut self.trunk {
            n.visit_params_mut(f);
        }
        f(&format!("{}.weight", self.head.name), &mut self.head.weight);
        f(&format!("{}.bias", self.head.name), &mut self.head.bias);
    }

    pub fn visit_buffers(&self, f: &mut impl FnMut(&str, &Tensor)) {
        for n in &self.trunk {
            n.visit_buffers(f);
        }
    }

    pub fn visit_buffers_mut(&mut self, f: &mut impl FnMut(&str, &mut Tensor)) {
        for n in &mut self.trunk {
            n.visit_buffers_mut(f);
        }
    }

    pub fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, t| n += t.len());
        n
    }
}

/// The fixed desk-scale CNN: conv3x3(32)-ReLU-conv3x3(32)-pool-conv3x3(64)-
/// ReLU-conv3x3(64)-pool-flatten-linear(128)-ReLU, with a linear(K) head.
/// Feature dimension 128.
pub fn small_cnn(num_classes: usize, rng: &mut ChaCha8Rng) -> Network {
    small_cnn_custom([32, 32, 64, 64], 128, 32, num_classes, rng)
}

/// Same topology as `small_cnn` with configurable widths and input side,
/// used for desk-scale gradient checks and benches.
pub fn small_cnn_custom(
    channels: [usize; 4],
    feature_dim: usize,
    input_side: usize,
    num_classes: usize,
    rng: &mut ChaCha8Rng,
) -> Network {
    assert!(input_side % 4 == 0, "two 2x2 pools need input divisible by 4");
    let [c1, c2, c3, c4] = channels;
    let side = input_side / 4;
    let trunk = vec![
        Node::Conv(ConvLayer::new("conv1", 3, c1, 3, 1, 1, true, rng)),
        Node::Relu,
        Node::Conv(ConvLayer::new("conv2", c1, c2, 3, 1, 1, true, rng)),
        Node::MaxPool2,
        Node::Conv(ConvLayer::new("conv3", c2, c3, 3, 1, 1, true, rng)),
        Node::Relu,
        Node::Conv(ConvLayer::new("conv4", c3, c4, 3, 1, 1, true, rng)),
        Node::MaxPool2,
        Node::Flatten,
        Node::Linear(LinearLayer::new("fc1", c4 * side * side, feature_dim, rng)),
        Node::Relu,
    ];
    let head = LinearLayer::new("head", feature_dim, num_classes, rng);
    Network::new(trunk, head)
}

fn basic_block(name: &str, cin: usize, cout: usize, stride: usize, rng: &mut ChaCha8Rng) -> Vec<Node> {
    let main = vec![
        Node::Conv(ConvLayer::new(&format!("{name}.conv1"), cin, cout, 3, stride, 1, false, rng)),
        Node::Bn(BnLayer::new(&format!("{name}.bn1"), cout)),
        Node::Relu,
        Node::Conv(ConvLayer::new(&format!("{name}.conv2"), cout, cout, 3, 1, 1, false, rng)),
        Node::Bn(BnLayer::new(&format!("{name}.bn2"), cout)),
    ];
    let shortcut = if stride != 1 || cin != cout {
        vec![
            Node::Conv(ConvLayer::new(&format!("{name}.down"), cin, cout, 1, stride, 0, false, rng)),
            Node::Bn(BnLayer::new(&format!("{name}.downbn"), cout)),
        ]
    } else {
        Vec::new()
    };
    vec![Node::Residual { main, shortcut }, Node::Relu]
}

/// ResNet-18 adapted to 32x32 inputs: 3x3 stem, no initial max-pool,
/// stages of widths 64/128/256/512 with two basic blocks each, global
/// average pooling into a 512-d feature embedding.
pub fn resnet18_cifar(num_classes: usize, rng: &mut ChaCha8Rng) -> Network {
    let mut trunk = vec![
        Node::Conv(ConvLayer::new("stem.conv", 3, 64, 3, 1, 1, false, rng)),
        Node::Bn(BnLayer::new("stem.bn", 64)),
        Node::Relu,
    ];
    let stages: [(usize, usize, usize); 4] =
        [(64, 64, 1), (64, 128, 2), (128, 256, 2), (256, 512, 2)];
    for (s, &(cin, cout, stride)) in stages.iter().enumerate() {
        trunk.extend(basic_block(&format!("layer{}.0", s + 1), cin, cout, stride, rng));
        trunk.extend(basic_block(&format!("layer{}.1", s + 1), cout, cout, 1, rng));
    }
    trunk.push(Node::GlobalAvgPool);
    let head = LinearLayer::new("head", 512, num_classes, rng);
    Network::new(trunk, head)
}
