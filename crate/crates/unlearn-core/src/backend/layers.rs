//! Numeric kernels for the layer zoo: convolution, batch norm, pooling,
//! linear, ReLU and row L2-normalization, each with forward and backward.
//!
//! Parallelism only ever splits disjoint output regions (batch rows for
//! forwards and input gradients, output channels for weight gradients);
//! every floating-point reduction runs in a fixed sequential order inside
//! its region, so results do not depend on thread count.

use crate::exec;

/// Eight-lane dot product: fixed combination order, vectorizes cleanly.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    const LANES: usize = 8;
    let mut acc = [0.0f32; LANES];
    let chunks = a.len() / LANES;
    for i in 0..chunks {
        let ai = &a[i * LANES..i * LANES + LANES];
        let bi = &b[i * LANES..i * LANES + LANES];
        for l in 0..LANES {
            acc[l] += ai[l] * bi[l];
        }
    }
    let mut s = 0.0;
    for v in acc {
        s += v;
    }
    for i in chunks * LANES..a.len() {
        s += a[i] * b[i];
    }
    s
}

#[inline]
fn axpy(alpha: f32, x: &[f32], y: &mut [f32]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * *xi;
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConvDims {
    pub batch: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvDims {
    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.pad - self.k) / self.stride + 1
    }
    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.pad - self.k) / self.stride + 1
    }

    /// Valid output range along one axis for kernel offset `kof`:
    /// positions `o` with `o*stride + kof - pad` inside `0..extent`.
    fn range(&self, kof: usize, extent: usize, out_extent: usize) -> (usize, usize) {
        let lo = if kof >= self.pad {
            0
        } else {
            (self.pad - kof).div_ceil(self.stride)
        };
        let hi_raw = (extent + self.pad - 1 - kof) / self.stride;
        (lo, hi_raw.min(out_extent.saturating_sub(1)))
    }
}

/// Unfold one sample into column-major patches: `cols[k_idx]` is the input
/// value (or zero padding) feeding output position `out_pos` through kernel
/// offset `k_idx = (ic*k + kh)*k + kw`. Long contiguous spans per row make
/// the convolution kernels plain axpy/dot over `out_plane`-length slices.
fn im2col(x_sample: &[f32], d: &ConvDims, cols: &mut [f32]) {
    let (ho, wo) = (d.out_h(), d.out_w());
    let (in_plane, out_plane) = (d.h * d.w, ho * wo);
    debug_assert_eq!(cols.len(), d.cin * d.k * d.k * out_plane);
    cols.fill(0.0);
    let mut row = 0usize;
    for ic in 0..d.cin {
        let x_c = &x_sample[ic * in_plane..(ic + 1) * in_plane];
        for kh in 0..d.k {
            let (oy_lo, oy_hi) = d.range(kh, d.h, ho);
            for kw in 0..d.k {
                let (ox_lo, ox_hi) = d.range(kw, d.w, wo);
                let col = &mut cols[row * out_plane..(row + 1) * out_plane];
                row += 1;
                if oy_lo > oy_hi || ox_lo > ox_hi {
                    continue;
                }
                let len = ox_hi - ox_lo + 1;
                for oy in oy_lo..=oy_hi {
                    let iy = oy * d.stride + kh - d.pad;
                    let dst = &mut col[oy * wo + ox_lo..oy * wo + ox_lo + len];
                    if d.stride == 1 {
                        let ix0 = ox_lo + kw - d.pad;
                        dst.copy_from_slice(&x_c[iy * d.w + ix0..iy * d.w + ix0 + len]);
                    } else {
                        for (j, v) in dst.iter_mut().enumerate() {
                            let ix = (ox_lo + j) * d.stride + kw - d.pad;
                            *v = x_c[iy * d.w + ix];
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-add unfolded gradients back to the input layout (the adjoint of
/// `im2col`).
fn col2im_add(cols: &[f32], d: &ConvDims, dx_sample: &mut [f32]) {
    let (ho, wo) = (d.out_h(), d.out_w());
    let (in_plane, out_plane) = (d.h * d.w, ho * wo);
    let mut row = 0usize;
    for ic in 0..d.cin {
        let dx_c = &mut dx_sample[ic * in_plane..(ic + 1) * in_plane];
        for kh in 0..d.k {
            let (oy_lo, oy_hi) = d.range(kh, d.h, ho);
            for kw in 0..d.k {
                let (ox_lo, ox_hi) = d.range(kw, d.w, wo);
                let col = &cols[row * out_plane..(row + 1) * out_plane];
                row += 1;
                if oy_lo > oy_hi || ox_lo > ox_hi {
                    continue;
                }
                let len = ox_hi - ox_lo + 1;
                for oy in oy_lo..=oy_hi {
                    let iy = oy * d.stride + kh - d.pad;
                    let src = &col[oy * wo + ox_lo..oy * wo + ox_lo + len];
                    if d.stride == 1 {
                        let ix0 = ox_lo + kw - d.pad;
                        axpy(1.0, src, &mut dx_c[iy * d.w + ix0..iy * d.w + ix0 + len]);
                    } else {
                        for (j, v) in src.iter().enumerate() {
                            let ix = (ox_lo + j) * d.stride + kw - d.pad;
                            dx_c[iy * d.w + ix] += *v;
                        }
                    }
                }
            }
        }
    }
}

/// x: [B,Cin,H,W], weight: [Cout,Cin,k,k], bias: [Cout], out: [B,Cout,Ho,Wo].
pub fn conv2d_forward(x: &[f32], weight: &[f32], bias: Option<&[f32]>, d: &ConvDims, out: &mut [f32]) {
    let (ho, wo) = (d.out_h(), d.out_w());
    let (in_plane, out_plane, kk) = (d.h * d.w, ho * wo, d.k * d.k);
    let in_sample = d.cin * in_plane;
    let patch = d.cin * kk;
    debug_assert_eq!(x.len(), d.batch * in_sample);
    debug_assert_eq!(out.len(), d.batch * d.cout * out_plane);
    exec::for_each_chunk(out, d.cout * out_plane, |b, out_b| {
        let mut cols = vec![0.0f32; patch * out_plane];
        im2col(&x[b * in_sample..(b + 1) * in_sample], d, &mut cols);
        for oc in 0..d.cout {
            let out_c = &mut out_b[oc * out_plane..(oc + 1) * out_plane];
            out_c.fill(bias.map_or(0.0, |bv| bv[oc]));
            let w_oc = &weight[oc * patch..(oc + 1) * patch];
            for (row, &wv) in w_oc.iter().enumerate() {
                axpy(wv, &cols[row * out_plane..(row + 1) * out_plane], out_c);
            }
        }
    });
}

/// Gradient w.r.t. the convolution input. `dx` is overwritten.
pub fn conv2d_backward_input(dy: &[f32], weight: &[f32], d: &ConvDims, dx: &mut [f32]) {
    let (ho, wo) = (d.out_h(), d.out_w());
    let (in_plane, out_plane, kk) = (d.h * d.w, ho * wo, d.k * d.k);
    let in_sample = d.cin * in_plane;
    let patch = d.cin * kk;
    dx.fill(0.0);
    exec::for_each_chunk(dx, in_sample, |b, dx_b| {
        let dy_b = &dy[b * d.cout * out_plane..(b + 1) * d.cout * out_plane];
        let mut dcols = vec![0.0f32; patch * out_plane];
        for oc in 0..d.cout {
            let dy_c = &dy_b[oc * out_plane..(oc + 1) * out_plane];
            let w_oc = &weight[oc * patch..(oc + 1) * patch];
            for (row, &wv) in w_oc.iter().enumerate() {
                axpy(wv, dy_c, &mut dcols[row * out_plane..(row + 1) * out_plane]);
            }
        }
        col2im_add(&dcols, d, dx_b);
    });
}

/// Gradients w.r.t. weight and bias, accumulated into `dw`/`db`. Per-sample
/// contributions are computed in parallel and reduced in ascending sample
/// order, so the result does not depend on thread scheduling.
pub fn conv2d_backward_params(
    x: &[f32],
    dy: &[f32],
    d: &ConvDims,
    dw: &mut [f32],
    mut db: Option<&mut [f32]>,
) {
    let (ho, wo) = (d.out_h(), d.out_w());
    let (in_plane, out_plane, kk) = (d.h * d.w, ho * wo, d.k * d.k);
    let in_sample = d.cin * in_plane;
    let patch = d.cin * kk;
    let partials = exec::map_indexed(d.batch, |b| {
        let mut cols = vec![0.0f32; patch * out_plane];
        im2col(&x[b * in_sample..(b + 1) * in_sample], d, &mut cols);
        let dy_b = &dy[b * d.cout * out_plane..(b + 1) * d.cout * out_plane];
        let mut dw_part = vec![0.0f32; d.cout * patch];
        for oc in 0..d.cout {
            let dy_c = &dy_b[oc * out_plane..(oc + 1) * out_plane];
            let dw_oc = &mut dw_part[oc * patch..(oc + 1) * patch];
            for (row, g) in dw_oc.iter_mut().enumerate() {
                *g = dot(dy_c, &cols[row * out_plane..(row + 1) * out_plane]);
            }
        }
        dw_part
    });
    for part in partials {
        for (a, p) in dw.iter_mut().zip(part) {
            *a += p;
        }
    }
    if let Some(db) = db.as_deref_mut() {
        let sums = exec::map_indexed(d.cout, |oc| {
            let mut acc = 0.0f32;
            for b in 0..d.batch {
                for g in &dy[(b * d.cout + oc) * out_plane..][..out_plane] {
                    acc += *g;
                }
            }
            acc
        });
        for (dbi, s) in db.iter_mut().zip(sums) {
            *dbi += s;
        }
    }
}

/// x: [B,I], weight: [O,I], bias: [O], out: [B,O].
pub fn linear_forward(x: &[f32], weight: &[f32], bias: &[f32], bsz: usize, i: usize, o: usize, out: &mut [f32]) {
    debug_assert_eq!(x.len(), bsz * i);
    debug_assert_eq!(out.len(), bsz * o);
    exec::for_each_chunk(out, o, |b, out_b| {
        let x_b = &x[b * i..(b + 1) * i];
        for (oi, out_v) in out_b.iter_mut().enumerate() {
            *out_v = bias[oi] + dot(&weight[oi * i..(oi + 1) * i], x_b);
        }
    });
}

pub fn linear_backward_input(dy: &[f32], weight: &[f32], _bsz: usize, i: usize, o: usize, dx: &mut [f32]) {
    dx.fill(0.0);
    exec::for_each_chunk(dx, i, |b, dx_b| {
        let dy_b = &dy[b * o..(b + 1) * o];
        for (oi, g) in dy_b.iter().enumerate() {
            axpy(*g, &weight[oi * i..(oi + 1) * i], dx_b);
        }
    });
}

pub fn linear_backward_params(
    x: &[f32],
    dy: &[f32],
    bsz: usize,
    i: usize,
    o: usize,
    dw: &mut [f32],
    db: &mut [f32],
) {
    exec::for_each_chunk(dw, i, |oi, dw_row| {
        for b in 0..bsz {
            axpy(dy[b * o + oi], &x[b * i..(b + 1) * i], dw_row);
        }
    });
    for (oi, dbi) in db.iter_mut().enumerate() {
        let mut acc = 0.0f32;
        for b in 0..bsz {
            acc += dy[b * o + oi];
        }
        *dbi += acc;
    }
}

pub fn relu_forward(x: &mut [f32], mask: Option<&mut Vec<u8>>) {
    if let Some(mask) = mask {
        mask.clear();
        mask.resize(x.len(), 0);
        for (v, m) in x.iter_mut().zip(mask.iter_mut()) {
            if *v > 0.0 {
                *m = 1;
            } else {
                *v = 0.0;
            }
        }
    } else {
        for v in x.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
    }
}

pub fn relu_backward(dy: &mut [f32], mask: &[u8]) {
    debug_assert_eq!(dy.len(), mask.len());
    for (g, &m) in dy.iter_mut().zip(mask) {
        if m == 0 {
            *g = 0.0;
        }
    }
}

/// 2x2 max pooling with stride 2. `codes` records the argmax corner
/// (0..3, ties to the lowest code) for the backward pass.
pub fn maxpool2_forward(
    x: &[f32],
    bsz: usize,
    c: usize,
    h: usize,
    w: usize,
    out: &mut [f32],
    codes: Option<&mut Vec<u8>>,
) {
    assert!(h % 2 == 0 && w % 2 == 0, "maxpool2 requires even spatial dims");
    let (ho, wo) = (h / 2, w / 2);
    let out_sample = c * ho * wo;
    debug_assert_eq!(out.len(), bsz * out_sample);
    let mut scratch = Vec::new();
    let codes: &mut Vec<u8> = match codes {
        Some(v) => {
            v.clear();
            v.resize(bsz * out_sample, 0);
            v
        }
        None => {
            scratch.resize(bsz * out_sample, 0);
            &mut scratch
        }
    };
    exec::for_each_chunk2(out, out_sample, codes, out_sample, |b, out_b, code_b| {
        let x_b = &x[b * c * h * w..(b + 1) * c * h * w];
        for ci in 0..c {
            let x_c = &x_b[ci * h * w..(ci + 1) * h * w];
            let out_c = &mut out_b[ci * ho * wo..(ci + 1) * ho * wo];
            let code_c = &mut code_b[ci * ho * wo..(ci + 1) * ho * wo];
            for oy in 0..ho {
                for ox in 0..wo {
                    let base = 2 * oy * w + 2 * ox;
                    let vals = [x_c[base], x_c[base + 1], x_c[base + w], x_c[base + w + 1]];
                    let mut best = 0u8;
                    for (j, &v) in vals.iter().enumerate().skip(1) {
                        if v > vals[best as usize] {
                            best = j as u8;
                        }
                    }
                    out_c[oy * wo + ox] = vals[best as usize];
                    code_c[oy * wo + ox] = best;
                }
            }
        }
    });
}

pub fn maxpool2_backward(dy: &[f32], codes: &[u8], _bsz: usize, c: usize, h: usize, w: usize, dx: &mut [f32]) {
    let (ho, wo) = (h / 2, w / 2);
    dx.fill(0.0);
    exec::for_each_chunk(dx, c * h * w, |b, dx_b| {
        let dy_b = &dy[b * c * ho * wo..(b + 1) * c * ho * wo];
        let code_b = &codes[b * c * ho * wo..(b + 1) * c * ho * wo];
        for ci in 0..c {
            let dx_c = &mut dx_b[ci * h * w..(ci + 1) * h * w];
            for oy in 0..ho {
                for ox in 0..wo {
                    let idx = ci * ho * wo + oy * wo + ox;
                    let code = code_b[idx] as usize;
                    let base = 2 * oy * w + 2 * ox + (code / 2) * w + code % 2;
                    dx_c[base] += dy_b[idx];
                }
            }
        }
    });
}

pub fn global_avgpool_forward(x: &[f32], bsz: usize, c: usize, hw: usize, out: &mut [f32]) {
    debug_assert_eq!(out.len(), bsz * c);
    let inv = 1.0 / hw as f32;
    exec::for_each_chunk(out, c, |b, out_b| {
        let x_b = &x[b * c * hw..(b + 1) * c * hw];
        for (ci, o) in out_b.iter_mut().enumerate() {
            let mut acc = 0.0f32;
            for v in &x_b[ci * hw..(ci + 1) * hw] {
                acc += *v;
            }
            *o = acc * inv;
        }
    });
}

pub fn global_avgpool_backward(dy: &[f32], _bsz: usize, c: usize, hw: usize, dx: &mut [f32]) {
    let inv = 1.0 / hw as f32;
    exec::for_each_chunk(dx, c * hw, |b, dx_b| {
        let dy_b = &dy[b * c..(b + 1) * c];
        for ci in 0..c {
            let g = dy_b[ci] * inv;
            for v in &mut dx_b[ci * hw..(ci + 1) * hw] {
                *v = g;
            }
        }
    });
}

/// Batch-norm statistics produced by the training forward pass.
pub struct BnStats {
    pub inv_std: Vec<f32>,
}

/// Training-mode batch norm over [B,C,HW]: normalizes with batch statistics,
/// updates running statistics in place (unbiased variance, torch-style
/// `running = (1-m)*running + m*batch`), and writes the normalized values
/// (`xhat`) needed by the backward pass.
#[allow(clippy::too_many_arguments)]
pub fn bn_forward_train(
    x: &[f32],
    gamma: &[f32],
    beta: &[f32],
    running_mean: &mut [f32],
    running_var: &mut [f32],
    momentum: f32,
    eps: f32,
    bsz: usize,
    c: usize,
    hw: usize,
    out: &mut [f32],
    xhat: &mut [f32],
) -> BnStats {
    let n = bsz * hw;
    let stats = exec::map_indexed(c, |ci| {
        let mut sum = 0.0f64;
        for b in 0..bsz {
            for v in &x[(b * c + ci) * hw..(b * c + ci + 1) * hw] {
                sum += f64::from(*v);
            }
        }
        let mean = sum / n as f64;
        let mut var = 0.0f64;
        for b in 0..bsz {
            for v in &x[(b * c + ci) * hw..(b * c + ci + 1) * hw] {
                let d = f64::from(*v) - mean;
                var += d * d;
            }
        }
        (mean, var / n as f64)
    });
    let mut inv_std = vec![0.0f32; c];
    let mut means = vec![0.0f32; c];
    for (ci, &(mean, var)) in stats.iter().enumerate() {
        means[ci] = mean as f32;
        inv_std[ci] = (1.0 / (var + f64::from(eps)).sqrt()) as f32;
        running_mean[ci] = (1.0 - momentum) * running_mean[ci] + momentum * mean as f32;
        let unbiased = if n > 1 { var * n as f64 / (n - 1) as f64 } else { var };
        running_var[ci] = (1.0 - momentum) * running_var[ci] + momentum * unbiased as f32;
    }
    exec::for_each_chunk2(out, c * hw, xhat, c * hw, |b, out_b, xhat_b| {
        let x_b = &x[b * c * hw..(b + 1) * c * hw];
        for ci in 0..c {
            let (m, istd, g, bt) = (means[ci], inv_std[ci], gamma[ci], beta[ci]);
            for j in 0..hw {
                let xh = (x_b[ci * hw + j] - m) * istd;
                xhat_b[ci * hw + j] = xh;
                out_b[ci * hw + j] = g * xh + bt;
            }
        }
    });
    BnStats { inv_std }
}

/// Eval-mode batch norm: normalizes with the running statistics. Writes
/// `xhat` only when a backward pass will follow.
#[allow(clippy::too_many_arguments)]
pub fn bn_forward_eval(
    x: &[f32],
    gamma: &[f32],
    beta: &[f32],
    running_mean: &[f32],
    running_var: &[f32],
    eps: f32,
    _bsz: usize,
    c: usize,
    hw: usize,
    out: &mut [f32],
    mut xhat: Option<&mut [f32]>,
) -> BnStats {
    let mut inv_std = vec![0.0f32; c];
    for ci in 0..c {
        inv_std[ci] = 1.0 / (running_var[ci] + eps).sqrt();
    }
    match xhat.as_deref_mut() {
        Some(xh) => exec::for_each_chunk2(out, c * hw, xh, c * hw, |b, out_b, xh_b| {
            let x_b = &x[b * c * hw..(b + 1) * c * hw];
            for ci in 0..c {
                let (m, istd, g, bt) = (running_mean[ci], inv_std[ci], gamma[ci], beta[ci]);
                for j in 0..hw {
                    let v = (x_b[ci * hw + j] - m) * istd;
                    xh_b[ci * hw + j] = v;
                    out_b[ci * hw + j] = g * v + bt;
                }
            }
        }),
        None => exec::for_each_chunk(out, c * hw, |b, out_b| {
            let x_b = &x[b * c * hw..(b + 1) * c * hw];
            for ci in 0..c {
                let (m, istd, g, bt) = (running_mean[ci], inv_std[ci], gamma[ci], beta[ci]);
                for j in 0..hw {
                    out_b[ci * hw + j] = g * (x_b[ci * hw + j] - m) * istd + bt;
                }
            }
        }),
    }
    BnStats { inv_std }
}

/// Backward through training-mode batch norm (batch statistics coupled).
#[allow(clippy::too_many_arguments)]
pub fn bn_backward_train(
    dy: &[f32],
    xhat: &[f32],
    gamma: &[f32],
    inv_std: &[f32],
    bsz: usize,
    c: usize,
    hw: usize,
    dx: &mut [f32],
    dgamma: &mut [f32],
    dbeta: &mut [f32],
) {
    let n = (bsz * hw) as f64;
    let sums = exec::map_indexed(c, |ci| {
        let mut s_dy = 0.0f64;
        let mut s_dy_xhat = 0.0f64;
        for b in 0..bsz {
            let off = (b * c + ci) * hw;
            for j in 0..hw {
                let g = f64::from(dy[off + j]);
                s_dy += g;
                s_dy_xhat += g * f64::from(xhat[off + j]);
            }
        }
        (s_dy, s_dy_xhat)
    });
    for ci in 0..c {
        dbeta[ci] += sums[ci].0 as f32;
        dgamma[ci] += sums[ci].1 as f32;
    }
    exec::for_each_chunk(dx, c * hw, |b, dx_b| {
        for ci in 0..c {
            let (s_dy, s_dy_xhat) = sums[ci];
            let scale = f64::from(gamma[ci]) * f64::from(inv_std[ci]) / n;
            let off = (b * c + ci) * hw;
            for j in 0..hw {
                let g = f64::from(dy[off + j]);
                let xh = f64::from(xhat[off + j]);
                dx_b[ci * hw + j] = (scale * (n * g - s_dy - xh * s_dy_xhat)) as f32;
            }
        }
    });
}

/// Backward through eval-mode batch norm (running statistics are constants).
#[allow(clippy::too_many_arguments)]
pub fn bn_backward_eval(
    dy: &[f32],
    xhat: &[f32],
    gamma: &[f32],
    inv_std: &[f32],
    bsz: usize,
    c: usize,
    hw: usize,
    dx: &mut [f32],
    dgamma: &mut [f32],
    dbeta: &mut [f32],
) {
    let sums = exec::map_indexed(c, |ci| {
        let mut s_dy = 0.0f64;
        let mut s_dy_xhat = 0.0f64;
        for b in 0..bsz {
            let off = (b * c + ci) * hw;
            for j in 0..hw {
                let g = f64::from(dy[off + j]);
                s_dy += g;
                s_dy_xhat += g * f64::from(xhat[off + j]);
            }
        }
        (s_dy, s_dy_xhat)
    });
    for ci in 0..c {
        dbeta[ci] += sums[ci].0 as f32;
        dgamma[ci] += sums[ci].1 as f32;
    }
    exec::for_each_chunk(dx, c * hw, |b, dx_b| {
        for ci in 0..c {
            let g = gamma[ci] * inv_std[ci];
            let off = (b * c + ci) * hw;
            for j in 0..hw {
                dx_b[ci * hw + j] = g * dy[off + j];
            }
        }
    });
}

/// Row-wise L2 normalization of [B,D]; returns the row norms.
/// Rows with norm below the guard are left as zeros.
pub fn l2_normalize_rows(x: &[f32], bsz: usize, d: usize, out: &mut [f32]) -> Vec<f32> {
    const GUARD: f32 = 1e-12;
    let norms = exec::map_indexed(bsz, |b| dot(&x[b * d..(b + 1) * d], &x[b * d..(b + 1) * d]).sqrt());
    exec::for_each_chunk(out, d, |b, out_b| {
        let n = norms[b];
        let x_b = &x[b * d..(b + 1) * d];
        if n > GUARD {
            let inv = 1.0 / n;
            for (o, v) in out_b.iter_mut().zip(x_b) {
                *o = v * inv;
            }
        } else {
            out_b.fill(0.0);
        }
    });
    norms
}

/// Backward through row L2 normalization: `dx = (dz - (z . dz) z) / ||x||`.
pub fn l2_normalize_backward(dz: &[f32], z: &[f32], norms: &[f32], _bsz: usize, d: usize, dx: &mut [f32]) {
    const GUARD: f32 = 1e-12;
    exec::for_each_chunk(dx, d, |b, dx_b| {
        let n = norms[b];
        if n <= GUARD {
            dx_b.fill(0.0);
            return;
        }
        let z_b = &z[b * d..(b + 1) * d];
        let dz_b = &dz[b * d..(b + 1) * d];
        let zdz = dot(z_b, dz_b);
        let inv = 1.0 / n;
        for ((x, g), zv) in dx_b.iter_mut().zip(dz_b).zip(z_b) {
            *x = (g - zdz * zv) * inv;
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn randv(n: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    /// Naive reference convolution, written independently of the kernel.
    fn conv_ref(x: &[f32], w: &[f32], bias: Option<&[f32]>, d: &ConvDims) -> Vec<f32> {
        let (ho, wo) = (d.out_h(), d.out_w());
        let mut out = vec![0.0f32; d.batch * d.cout * ho * wo];
        for b in 0..d.batch {
            for oc in 0..d.cout {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = bias.map_or(0.0, |bv| bv[oc]);
                        for ic in 0..d.cin {
                            for kh in 0..d.k {
                                for kw in 0..d.k {
                                    let iy = (oy * d.stride + kh) as isize - d.pad as isize;
                                    let ix = (ox * d.stride + kw) as isize - d.pad as isize;
                                    if iy >= 0 && (iy as usize) < d.h && ix >= 0 && (ix as usize) < d.w {
                                        let xv = x[((b * d.cin + ic) * d.h + iy as usize) * d.w
                                            + ix as usize];
                                        let wv = w[((oc * d.cin + ic) * d.k + kh) * d.k + kw];
                                        acc += xv * wv;
                                    }
                                }
                            }
                        }
                        out[((b * d.cout + oc) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_forward_matches_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &(stride, pad, k) in &[(1usize, 1usize, 3usize), (2, 1, 3), (1, 0, 1), (2, 0, 1)] {
            let d = ConvDims { batch: 3, cin: 2, h: 8, w: 8, cout: 4, k, stride, pad };
            let x = randv(d.batch * d.cin * d.h * d.w, &mut rng);
            let w = randv(d.cout * d.cin * k * k, &mut rng);
            let b = randv(d.cout, &mut rng);
            let mut out = vec![0.0; d.batch * d.cout * d.out_h() * d.out_w()];
            conv2d_forward(&x, &w, Some(&b), &d, &mut out);
            let reference = conv_ref(&x, &w, Some(&b), &d);
            for (a, r) in out.iter().zip(&reference) {
                assert_relative_eq!(a, r, epsilon = 1e-5);
            }
        }
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = ConvDims { batch: 2, cin: 2, h: 6, w: 6, cout: 3, k: 3, stride: 1, pad: 1 };
        let x = randv(d.batch * d.cin * d.h * d.w, &mut rng);
        let w = randv(d.cout * d.cin * 9, &mut rng);
        let dy = randv(d.batch * d.cout * d.out_h() * d.out_w(), &mut rng);
        // loss = sum(out * dy); gradient checked by central differences in f64
        let loss = |x: &[f32], w: &[f32]| -> f64 {
            let out = conv_ref(x, w, None, &d);
            out.iter().zip(&dy).map(|(o, g)| f64::from(*o) * f64::from(*g)).sum()
        };
        let mut dx = vec![0.0; x.len()];
        conv2d_backward_input(&dy, &w, &d, &mut dx);
        let mut dw = vec![0.0; w.len()];
        conv2d_backward_params(&x, &dy, &d, &mut dw, None);
        let h = 1e-3f32;
        for idx in [0usize, 7, 31, x.len() - 1] {
            let mut xp = x.clone();
            xp[idx] += h;
            let mut xm = x.clone();
            xm[idx] -= h;
            let fd = (loss(&xp, &w) - loss(&xm, &w)) / (2.0 * f64::from(h));
            assert_relative_eq!(f64::from(dx[idx]), fd, max_relative = 1e-2, epsilon = 1e-4);
        }
        for idx in [0usize, 5, w.len() - 1] {
            let mut wp = w.clone();
            wp[idx] += h;
            let mut wm = w.clone();
            wm[idx] -= h;
            let fd = (loss(&x, &wp) - loss(&x, &wm)) / (2.0 * f64::from(h));
            assert_relative_eq!(f64::from(dw[idx]), fd, max_relative = 1e-2, epsilon = 1e-4);
        }
    }

    #[test]
    fn parallel_and_serial_paths_are_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = ConvDims { batch: 4, cin: 3, h: 8, w: 8, cout: 8, k: 3, stride: 1, pad: 1 };
        let x = randv(d.batch * d.cin * d.h * d.w, &mut rng);
        let w = randv(d.cout * d.cin * 9, &mut rng);
        let mut out_par = vec![0.0; d.batch * d.cout * 64];
        conv2d_forward(&x, &w, None, &d, &mut out_par);
        let mut out_ser = vec![0.0; out_par.len()];
        exec::force_serial(|| conv2d_forward(&x, &w, None, &d, &mut out_ser));
        assert_eq!(out_par, out_ser);
    }

    #[test]
    fn maxpool_roundtrip() {
        let x = vec![
            1.0, 2.0, 5.0, 6.0, //
            3.0, 4.0, 7.0, 8.0, //
            0.5, 0.25, -1.0, -2.0, //
            0.125, 0.0625, -3.0, -4.0,
        ];
        let mut out = vec![0.0; 4];
        let mut codes = Vec::new();
        maxpool2_forward(&x, 1, 1, 4, 4, &mut out, Some(&mut codes));
        assert_eq!(out, vec![4.0, 8.0, 0.5, -1.0]);
        let dy = vec![1.0, 2.0, 3.0, 4.0];
        let mut dx = vec![0.0; 16];
        maxpool2_backward(&dy, &codes, 1, 1, 4, 4, &mut dx);
        assert_eq!(dx[5], 1.0); // argmax of first window
        assert_eq!(dx[7], 2.0);
        assert_eq!(dx[8], 3.0);
        assert_eq!(dx[10], 4.0);
        assert_eq!(dx.iter().filter(|&&v| v != 0.0).count(), 4);
    }

    #[test]
    fn l2_normalize_unit_rows() {
        let x = vec![3.0, 4.0, 0.0, 0.0, 0.0, 0.0];
        let mut out = vec![0.0; 6];
        let norms = l2_normalize_rows(&x, 2, 3, &mut out);
        assert_relative_eq!(norms[0], 5.0);
        assert_relative_eq!(out[0], 0.6);
        assert_relative_eq!(out[1], 0.8);
        // zero row stays zero under the guard
        assert_eq!(&out[3..], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn bn_train_normalizes_batch() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (bsz, c, hw) = (4, 2, 9);
        let x = randv(bsz * c * hw, &mut rng);
        let gamma = vec![1.0; c];
        let beta = vec![0.0; c];
        let mut rm = vec![0.0; c];
        let mut rv = vec![1.0; c];
        let mut out = vec![0.0; x.len()];
        let mut xhat = vec![0.0; x.len()];
        bn_forward_train(&x, &gamma, &beta, &mut rm, &mut rv, 0.1, 1e-5, bsz, c, hw, &mut out, &mut xhat);
        for ci in 0..c {
            let mut mean = 0.0f64;
            let mut var = 0.0f64;
            for b in 0..bsz {
                for j in 0..hw {
                    mean += f64::from(out[(b * c + ci) * hw + j]);
                }
            }
            mean /= (bsz * hw) as f64;
            for b in 0..bsz {
                for j in 0..hw {
                    let d = f64::from(out[(b * c + ci) * hw + j]) - mean;
                    var += d * d;
                }
            }
            var /= (bsz * hw) as f64;
            assert_relative_eq!(mean, 0.0, epsilon = 1e-5);
            assert_relative_eq!(var, 1.0, epsilon = 1e-3);
        }
    }
}
