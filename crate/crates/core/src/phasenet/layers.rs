//! Dense layers of the decoder with hand-written backward passes.
//!
//! Activations are NCHW `f64` tensors. Convolutions are stride 1 and
//! zero-padded to keep the spatial size; they go through im2col and a GEMM.

use std::ops::Range;

/// NCHW activation tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Tensor {
            n,
            c,
            h,
            w,
            data: vec![0.0; n * c * h * w],
        }
    }

    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), n * c * h * w, "tensor data length");
        Tensor { n, c, h, w, data }
    }

    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.n, self.c, self.h, self.w)
    }

    pub fn sample_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let s = self.sample_len();
        &self.data[i * s..(i + 1) * s]
    }

    pub fn sample_mut(&mut self, i: usize) -> &mut [f64] {
        let s = self.sample_len();
        &mut self.data[i * s..(i + 1) * s]
    }

    pub fn plane(&self, i: usize, ch: usize) -> &[f64] {
        let p = self.h * self.w;
        let start = (i * self.c + ch) * p;
        &self.data[start..start + p]
    }

    pub fn plane_mut(&mut self, i: usize, ch: usize) -> &mut [f64] {
        let p = self.h * self.w;
        let start = (i * self.c + ch) * p;
        &mut self.data[start..start + p]
    }
}

/// `C = A·B + beta·C` for row-major `C` (`m x n`); `A` and `B` are given by
/// pointers-plus-strides so transposes are free.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (usize, usize),
    b: &[f64],
    b_strides: (usize, usize),
    c: &mut [f64],
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(c.len() >= m * n);
    if k == 0 {
        for v in &mut c[..m * n] {
            *v *= beta;
        }
        return;
    }
    debug_assert!(a.len() > (m - 1) * a_strides.0 + (k - 1) * a_strides.1);
    debug_assert!(b.len() > (k - 1) * b_strides.0 + (n - 1) * b_strides.1);
    // SAFETY: the debug assertions above spell out the extents matrixmultiply
    // reads and writes; callers size every buffer from the same dimensions.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of one convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

impl ConvShape {
    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn weight_len(&self) -> usize {
        self.out_channels * self.patch_len()
    }
}

/// Unfolds the receptive fields of output rows `rows` into a
/// `(C·k·k) x (rows·width)` matrix. `input` holds map rows
/// `in_start..in_start + in_rows`; rows outside `[0, height)` are zero.
#[allow(clippy::too_many_arguments)]
fn im2col(
    input: &[f64],
    channels: usize,
    in_start: usize,
    in_rows: usize,
    height: usize,
    width: usize,
    kernel: usize,
    rows: &Range<usize>,
    col: &mut [f64],
) {
    let pad = (kernel / 2) as isize;
    let npx = rows.len() * width;
    for ci in 0..channels {
        let plane = &input[ci * in_rows * width..(ci + 1) * in_rows * width];
        for ky in 0..kernel {
            for kx in 0..kernel {
                let row = (ci * kernel + ky) * kernel + kx;
                let dst = &mut col[row * npx..(row + 1) * npx];
                for (oy, y) in rows.clone().enumerate() {
                    let sy = y as isize + ky as isize - pad;
                    let out_row = &mut dst[oy * width..(oy + 1) * width];
                    if sy < 0 || sy >= height as isize {
                        out_row.fill(0.0);
                        continue;
                    }
                    let local = sy as usize - in_start;
                    debug_assert!(local < in_rows);
                    let src = &plane[local * width..(local + 1) * width];
                    let dx = kx as isize - pad;
                    for (x, o) in out_row.iter_mut().enumerate() {
                        let sx = x as isize + dx;
                        *o = if sx < 0 || sx >= width as isize {
                            0.0
                        } else {
                            src[sx as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`] over a full map (accumulates into `grad_input`).
fn col2im(col: &[f64], channels: usize, height: usize, width: usize, kernel: usize, grad_input: &mut [f64]) {
    let pad = (kernel / 2) as isize;
    let npx = height * width;
    for ci in 0..channels {
        let plane = &mut grad_input[ci * npx..(ci + 1) * npx];
        for ky in 0..kernel {
            for kx in 0..kernel {
                let row = (ci * kernel + ky) * kernel + kx;
                let src = &col[row * npx..(row + 1) * npx];
                for y in 0..height {
                    let sy = y as isize + ky as isize - pad;
                    if sy < 0 || sy >= height as isize {
                        continue;
                    }
                    let dst = &mut plane[sy as usize * width..(sy as usize + 1) * width];
                    let s = &src[y * width..(y + 1) * width];
                    let dx = kx as isize - pad;
                    for x in 0..width {
                        let sx = x as isize + dx;
                        if sx >= 0 && sx < width as isize {
                            dst[sx as usize] += s[x];
                        }
                    }
                }
            }
        }
    }
}

/// Convolution of one sample restricted to output rows `rows`; see
/// [`im2col`] for the input row window. Writes `out_channels x rows x width`.
#[allow(clippy::too_many_arguments)]
pub fn conv_rows(
    shape: ConvShape,
    weight: &[f64],
    bias: &[f64],
    input: &[f64],
    in_start: usize,
    in_rows: usize,
    height: usize,
    width: usize,
    rows: Range<usize>,
    out: &mut [f64],
) {
    let npx = rows.len() * width;
    let patch = shape.patch_len();
    for (co, b) in bias.iter().enumerate() {
        out[co * npx..(co + 1) * npx].fill(*b);
    }
    if shape.kernel == 1 && in_start == rows.start && in_rows == rows.len() {
        gemm(
            shape.out_channels,
            patch,
            npx,
            weight,
            (patch, 1),
            input,
            (npx, 1),
            out,
            1.0,
        );
        return;
    }
    let mut col = vec![0.0; patch * npx];
    im2col(
        input,
        shape.in_channels,
        in_start,
        in_rows,
        height,
        width,
        shape.kernel,
        &rows,
        &mut col,
    );
    gemm(
        shape.out_channels,
        patch,
        npx,
        weight,
        (patch, 1),
        &col,
        (npx, 1),
        out,
        1.0,
    );
}

/// Full-map convolution of every sample.
pub fn conv_forward(shape: ConvShape, weight: &[f64], bias: &[f64], input: &Tensor) -> Tensor {
    assert_eq!(input.c, shape.in_channels, "convolution input channels");
    let mut out = Tensor::zeros(input.n, shape.out_channels, input.h, input.w);
    for i in 0..input.n {
        conv_rows(
            shape,
            weight,
            bias,
            input.sample(i),
            0,
            input.h,
            input.h,
            input.w,
            0..input.h,
            out.sample_mut(i),
        );
    }
    out
}

/// Backward pass of [`conv_forward`]. Accumulates into `grad_weight` and
/// `grad_bias`; returns the input gradient when `want_input` is set.
pub fn conv_backward(
    shape: ConvShape,
    weight: &[f64],
    input: &Tensor,
    grad_out: &Tensor,
    grad_weight: &mut [f64],
    grad_bias: &mut [f64],
    want_input: bool,
) -> Option<Tensor> {
    let (h, w) = (input.h, input.w);
    let npx = h * w;
    let patch = shape.patch_len();
    let mut grad_in = want_input.then(|| Tensor::zeros(input.n, input.c, h, w));
    let mut col = vec![0.0; patch * npx];
    let mut dcol = vec![0.0; patch * npx];
    for i in 0..input.n {
        let dy = grad_out.sample(i);
        for (co, gb) in grad_bias.iter_mut().enumerate() {
            *gb += dy[co * npx..(co + 1) * npx].iter().sum::<f64>();
        }
        let x = input.sample(i);
        let cols: &[f64] = if shape.kernel == 1 {
            x
        } else {
            im2col(x, shape.in_channels, 0, h, h, w, shape.kernel, &(0..h), &mut col);
            &col
        };
        // dW (cout x patch) += dY (cout x npx) · colsᵀ (npx x patch)
        gemm(
            shape.out_channels,
            npx,
            patch,
            dy,
            (npx, 1),
            cols,
            (1, npx),
            grad_weight,
            1.0,
        );
        if let Some(gi) = grad_in.as_mut() {
            // dcol (patch x npx) = Wᵀ (patch x cout) · dY (cout x npx)
            let target: &mut [f64] = if shape.kernel == 1 {
                gi.sample_mut(i)
            } else {
                &mut dcol
            };
            gemm(
                patch,
                shape.out_channels,
                npx,
                weight,
                (1, patch),
                dy,
                (npx, 1),
                target,
                0.0,
            );
            if shape.kernel != 1 {
                col2im(&dcol, shape.in_channels, h, w, shape.kernel, gi.sample_mut(i));
            }
        }
    }
    grad_in
}

/// Per-channel statistics recorded by a training-mode normalization.
#[derive(Debug, Clone)]
pub struct NormCache {
    /// Normalized activations before scale/offset.
    pub normalized: Tensor,
    pub inv_std: Vec<f64>,
    pub batch_mean: Vec<f64>,
    pub batch_var: Vec<f64>,
}

/// Batch normalization with batch statistics (biased variance).
pub fn norm_forward_train(x: &Tensor, scale: &[f64], offset: &[f64], eps: f64) -> (Tensor, NormCache) {
    let count = (x.n * x.h * x.w) as f64;
    let mut mean = vec![0.0; x.c];
    let mut var = vec![0.0; x.c];
    for i in 0..x.n {
        for c in 0..x.c {
            mean[c] += x.plane(i, c).iter().sum::<f64>();
        }
    }
    for m in &mut mean {
        *m /= count;
    }
    for i in 0..x.n {
        for c in 0..x.c {
            let m = mean[c];
            var[c] += x.plane(i, c).iter().map(|v| (v - m) * (v - m)).sum::<f64>();
        }
    }
    for v in &mut var {
        *v /= count;
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut normalized = Tensor::zeros(x.n, x.c, x.h, x.w);
    let mut y = Tensor::zeros(x.n, x.c, x.h, x.w);
    for i in 0..x.n {
        for c in 0..x.c {
            let (m, s) = (mean[c], inv_std[c]);
            let src = x.plane(i, c);
            let nrm = normalized.plane_mut(i, c);
            for (o, v) in nrm.iter_mut().zip(src) {
                *o = (v - m) * s;
            }
            let (g, b) = (scale[c], offset[c]);
            let nrm = normalized.plane(i, c).to_vec();
            for (o, v) in y.plane_mut(i, c).iter_mut().zip(&nrm) {
                *o = g * v + b;
            }
        }
    }
    (
        y,
        NormCache {
            normalized,
            inv_std,
            batch_mean: mean,
            batch_var: var,
        },
    )
}

/// Backward pass of [`norm_forward_train`].
pub fn norm_backward_train(
    cache: &NormCache,
    scale: &[f64],
    grad_out: &Tensor,
    grad_scale: &mut [f64],
    grad_offset: &mut [f64],
) -> Tensor {
    let xh = &cache.normalized;
    let count = (xh.n * xh.h * xh.w) as f64;
    let c_len = xh.c;
    let mut sum_dy = vec![0.0; c_len];
    let mut sum_dy_xh = vec![0.0; c_len];
    for i in 0..xh.n {
        for c in 0..c_len {
            let dy = grad_out.plane(i, c);
            let x = xh.plane(i, c);
            sum_dy[c] += dy.iter().sum::<f64>();
            sum_dy_xh[c] += dy.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    for c in 0..c_len {
        grad_offset[c] += sum_dy[c];
        grad_scale[c] += sum_dy_xh[c];
    }
    let mut dx = Tensor::zeros(xh.n, xh.c, xh.h, xh.w);
    for i in 0..xh.n {
        for c in 0..c_len {
            let k = scale[c] * cache.inv_std[c] / count;
            let (mdy, mdyx) = (sum_dy[c], sum_dy_xh[c]);
            let dy = grad_out.plane(i, c).to_vec();
            let x = xh.plane(i, c).to_vec();
            for ((o, d), v) in dx.plane_mut(i, c).iter_mut().zip(&dy).zip(&x) {
                *o = k * (count * d - mdy - v * mdyx);
            }
        }
    }
    dx
}

/// Inference-mode normalization with stored statistics, applied in place to
/// a `channels x pixels` block.
pub fn norm_apply_eval(
    data: &mut [f64],
    pixels: usize,
    scale: &[f64],
    offset: &[f64],
    mean: &[f64],
    var: &[f64],
    eps: f64,
) {
    for c in 0..scale.len() {
        let s = scale[c] / (var[c] + eps).sqrt();
        let b = offset[c] - mean[c] * s;
        for v in &mut data[c * pixels..(c + 1) * pixels] {
            *v = *v * s + b;
        }
    }
}

#[inline]
pub fn leaky(v: f64, slope: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        slope * v
    }
}

/// Bilinear resampling taps along one axis with half-pixel alignment and
/// edge clamping.
#[derive(Debug, Clone)]
pub struct Taps {
    idx: Vec<(usize, usize)>,
    weight: Vec<f64>,
    input_len: usize,
}

impl Taps {
    pub fn new(input_len: usize, output_len: usize) -> Self {
        let ratio = input_len as f64 / output_len as f64;
        let mut idx = Vec::with_capacity(output_len);
        let mut weight = Vec::with_capacity(output_len);
        for o in 0..output_len {
            let src = ((o as f64 + 0.5) * ratio - 0.5).clamp(0.0, (input_len - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(input_len - 1);
            idx.push((i0, i1));
            weight.push(src - i0 as f64);
        }
        Taps {
            idx,
            weight,
            input_len,
        }
    }

    pub fn output_len(&self) -> usize {
        self.idx.len()
    }

    /// Source rows touched by output rows `rows`.
    pub fn source_span(&self, rows: &Range<usize>) -> Range<usize> {
        if rows.is_empty() {
            return 0..0;
        }
        let lo = self.idx[rows.start].0;
        let hi = self.idx[rows.end - 1].1;
        lo..hi + 1
    }
}

/// Bilinear resize of one plane, restricted to output rows `rows`. `src`
/// holds source rows `src_start..` of a plane `src_w` wide.
pub fn resize_rows(
    ty: &Taps,
    tx: &Taps,
    src: &[f64],
    src_start: usize,
    src_w: usize,
    rows: Range<usize>,
    out: &mut [f64],
) {
    let ow = tx.output_len();
    let mut tmp = vec![0.0; src_w];
    for (r, oy) in rows.enumerate() {
        let (y0, y1) = ty.idx[oy];
        let wy = ty.weight[oy];
        let a = &src[(y0 - src_start) * src_w..(y0 - src_start + 1) * src_w];
        let b = &src[(y1 - src_start) * src_w..(y1 - src_start + 1) * src_w];
        for x in 0..src_w {
            tmp[x] = (1.0 - wy) * a[x] + wy * b[x];
        }
        let dst = &mut out[r * ow..(r + 1) * ow];
        for (ox, d) in dst.iter_mut().enumerate() {
            let (x0, x1) = tx.idx[ox];
            let wx = tx.weight[ox];
            *d = (1.0 - wx) * tmp[x0] + wx * tmp[x1];
        }
    }
}

/// Resizes every plane of a tensor to `h x w`.
pub fn resize_forward(x: &Tensor, h: usize, w: usize) -> Tensor {
    let ty = Taps::new(x.h, h);
    let tx = Taps::new(x.w, w);
    let mut out = Tensor::zeros(x.n, x.c, h, w);
    for i in 0..x.n {
        for c in 0..x.c {
            let src = x.plane(i, c).to_vec();
            resize_rows(&ty, &tx, &src, 0, x.w, 0..h, out.plane_mut(i, c));
        }
    }
    out
}

/// Adjoint of [`resize_forward`] back to `h x w`.
pub fn resize_backward(grad: &Tensor, h: usize, w: usize) -> Tensor {
    let ty = Taps::new(h, grad.h);
    let tx = Taps::new(w, grad.w);
    debug_assert_eq!(ty.input_len, h);
    let mut out = Tensor::zeros(grad.n, grad.c, h, w);
    let mut tmp = vec![0.0; w];
    for i in 0..grad.n {
        for c in 0..grad.c {
            let g = grad.plane(i, c).to_vec();
            let dst = out.plane_mut(i, c);
            for oy in 0..grad.h {
                tmp.fill(0.0);
                for ox in 0..grad.w {
                    let (x0, x1) = tx.idx[ox];
                    let wx = tx.weight[ox];
                    let v = g[oy * grad.w + ox];
                    tmp[x0] += (1.0 - wx) * v;
                    tmp[x1] += wx * v;
                }
                let (y0, y1) = ty.idx[oy];
                let wy = ty.weight[oy];
                for x in 0..w {
                    dst[y0 * w + x] += (1.0 - wy) * tmp[x];
                    dst[y1 * w + x] += wy * tmp[x];
                }
            }
        }
    }
    out
}

/// Stacks tensors with equal `n, h, w` along channels.
pub fn concat_channels(parts: &[&Tensor]) -> Tensor {
    let (n, h, w) = (parts[0].n, parts[0].h, parts[0].w);
    let c: usize = parts.iter().map(|p| p.c).sum();
    let mut out = Tensor::zeros(n, c, h, w);
    for i in 0..n {
        let mut offset = 0;
        let dst = out.sample_mut(i);
        for p in parts {
            assert_eq!((p.n, p.h, p.w), (n, h, w), "concat shape");
            let s = p.sample(i);
            dst[offset..offset + s.len()].copy_from_slice(s);
            offset += s.len();
        }
    }
    out
}

/// Splits a gradient of a channel concatenation back into its parts.
pub fn split_channels(grad: &Tensor, channels: &[usize]) -> Vec<Tensor> {
    let mut parts: Vec<Tensor> = channels
        .iter()
        .map(|&c| Tensor::zeros(grad.n, c, grad.h, grad.w))
        .collect();
    let plane = grad.h * grad.w;
    for i in 0..grad.n {
        let src = grad.sample(i);
        let mut offset = 0;
        for p in parts.iter_mut() {
            let len = p.c * plane;
            p.sample_mut(i).copy_from_slice(&src[offset..offset + len]);
            offset += len;
        }
    }
    parts
}
