//! Neural network layers used by the per-rule classifier modules.
//!
//! Everything is generic over the float type so the same code runs in f32
//! for training/inference and in f64 for finite-difference gradient checks.
//!
//! Shapes follow one convention throughout: a batch of `b` sequences of
//! length `len` with `c` channels is stored as a row-major `(b * len, c)`
//! matrix (batch-major, then position, then channel). With that layout the
//! flatten step between the last convolution and the dense layer is a free
//! reshape, and convolutions reduce to one GEMM over im2col patches.

use ndarray::{Array1, Array2, ArrayView2, Axis, NdFloat};

/// 1-D convolution with "same" zero padding and stride 1.
///
/// `weight` has shape `(c_out, k * c_in)`; the row layout matches the patch
/// layout produced by [`im2col`] (kernel offset major, channel minor).
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d<F> {
    pub weight: Array2<F>,
    pub bias: Array1<F>,
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
}

impl<F: NdFloat> Conv1d<F> {
    pub fn zeros(c_in: usize, c_out: usize, k: usize) -> Self {
        assert!(k % 2 == 1, "same-padding convolution requires an odd kernel");
        Conv1d {
            weight: Array2::zeros((c_out, k * c_in)),
            bias: Array1::zeros(c_out),
            c_in,
            c_out,
            k,
        }
    }

    /// Forward pass over `(b * len, c_in)` activations. Returns the output
    /// `(b * len, c_out)` and the im2col patches kept for the backward pass.
    pub fn forward(&self, x: ArrayView2<F>, b: usize, len: usize) -> (Array2<F>, Array2<F>) {
        debug_assert_eq!(x.nrows(), b * len);
        debug_assert_eq!(x.ncols(), self.c_in);
        let patches = im2col(x, b, len, self.k);
        let mut out = patches.dot(&self.weight.t());
        out += &self.bias;
        (out, patches)
    }

    /// Backward pass. `grad_out` is `(b * len, c_out)`. Returns
    /// `(grad_input, grad_weight, grad_bias)`.
    pub fn backward(
        &self,
        patches: &Array2<F>,
        grad_out: ArrayView2<F>,
        b: usize,
        len: usize,
    ) -> (Array2<F>, Array2<F>, Array1<F>) {
        let grad_weight = grad_out.t().dot(patches);
        let grad_bias = grad_out.sum_axis(Axis(0));
        let grad_patches = grad_out.dot(&self.weight);
        let grad_input = col2im(grad_patches.view(), b, len, self.c_in, self.k);
        (grad_input, grad_weight, grad_bias)
    }
}

/// Gather sliding windows: `x` is `(b * len, c)`, the result is
/// `(b * len, k * c)` with `out[bt, dk*c + ch] = x[b, t - pad + dk, ch]`
/// (zero outside the sequence). Windows never cross message boundaries.
pub fn im2col<F: NdFloat>(x: ArrayView2<F>, b: usize, len: usize, k: usize) -> Array2<F> {
    let c = x.ncols();
    let pad = (k - 1) / 2;
    let mut out = Array2::zeros((b * len, k * c));
    for bi in 0..b {
        let base = bi * len;
        for t in 0..len {
            let mut row = out.row_mut(base + t);
            let row = row.as_slice_mut().expect("freshly allocated, standard layout");
            for dk in 0..k {
                let s = t as isize - pad as isize + dk as isize;
                if s < 0 || s >= len as isize {
                    continue;
                }
                let src = x.row(base + s as usize);
                let src = src.as_slice().expect("standard layout input");
                row[dk * c..(dk + 1) * c].copy_from_slice(src);
            }
        }
    }
    out
}

/// Scatter-add the inverse of [`im2col`]: fold `(b * len, k * c)` patch
/// gradients back onto `(b * len, c)` input positions.
pub fn col2im<F: NdFloat>(
    grad_patches: ArrayView2<F>,
    b: usize,
    len: usize,
    c: usize,
    k: usize,
) -> Array2<F> {
    let pad = (k - 1) / 2;
    let mut out = Array2::zeros((b * len, c));
    for bi in 0..b {
        let base = bi * len;
        for t in 0..len {
            let patch = grad_patches.row(base + t);
            let patch = patch.as_slice().expect("standard layout");
            for dk in 0..k {
                let s = t as isize - pad as isize + dk as isize;
                if s < 0 || s >= len as isize {
                    continue;
                }
                let mut dst = out.row_mut(base + s as usize);
                let dst = dst.as_slice_mut().expect("standard layout");
                for ch in 0..c {
                    dst[ch] += patch[dk * c + ch];
                }
            }
        }
    }
    out
}

/// Fully connected layer: `weight` is `(n_out, n_in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<F> {
    pub weight: Array2<F>,
    pub bias: Array1<F>,
}

impl<F: NdFloat> Dense<F> {
    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Dense {
            weight: Array2::zeros((n_out, n_in)),
            bias: Array1::zeros(n_out),
        }
    }

    pub fn forward(&self, x: ArrayView2<F>) -> Array2<F> {
        let mut out = x.dot(&self.weight.t());
        out += &self.bias;
        out
    }

    /// Returns `(grad_input, grad_weight, grad_bias)`.
    pub fn backward(
        &self,
        x: ArrayView2<F>,
        grad_out: ArrayView2<F>,
    ) -> (Array2<F>, Array2<F>, Array1<F>) {
        let grad_weight = grad_out.t().dot(&x);
        let grad_bias = grad_out.sum_axis(Axis(0));
        let grad_input = grad_out.dot(&self.weight);
        (grad_input, grad_weight, grad_bias)
    }
}

/// In-place rectifier.
pub fn relu_inplace<F: NdFloat>(a: &mut Array2<F>) {
    a.mapv_inplace(|v| if v > F::zero() { v } else { F::zero() });
}

/// Mask `grad` by the rectifier's activation pattern (`out` is the value
/// *after* ReLU).
pub fn relu_backward_inplace<F: NdFloat>(grad: &mut Array2<F>, out: &Array2<F>) {
    ndarray::Zip::from(grad).and(out).for_each(|g, &o| {
        if o <= F::zero() {
            *g = F::zero();
        }
    });
}

/// Width-2, stride-2 max pooling along the position axis. Input is
/// `(b * len, c)`; output is `(b * (len / 2), c)` (odd tails are dropped)
/// plus the winning offset (0 or 1) per output cell for the backward pass.
pub fn maxpool2<F: NdFloat>(x: ArrayView2<F>, b: usize, len: usize) -> (Array2<F>, Array2<u8>) {
    let c = x.ncols();
    let out_len = len / 2;
    assert!(out_len > 0, "sequence too short to pool (len = {len})");
    let mut out = Array2::zeros((b * out_len, c));
    let mut arg = Array2::zeros((b * out_len, c));
    for bi in 0..b {
        for t in 0..out_len {
            let r0 = x.row(bi * len + 2 * t);
            let r1 = x.row(bi * len + 2 * t + 1);
            let mut dst = out.row_mut(bi * out_len + t);
            let mut idx = arg.row_mut(bi * out_len + t);
            for ch in 0..c {
                // Ties take the first position, matching the backward route.
                if r1[ch] > r0[ch] {
                    dst[ch] = r1[ch];
                    idx[ch] = 1;
                } else {
                    dst[ch] = r0[ch];
                    idx[ch] = 0;
                }
            }
        }
    }
    (out, arg)
}

/// Route pooled gradients back to the winning positions.
pub fn maxpool2_backward<F: NdFloat>(
    grad_out: ArrayView2<F>,
    arg: &Array2<u8>,
    b: usize,
    len: usize,
) -> Array2<F> {
    let c = grad_out.ncols();
    let out_len = len / 2;
    let mut grad_in = Array2::zeros((b * len, c));
    for bi in 0..b {
        for t in 0..out_len {
            let src = grad_out.row(bi * out_len + t);
            let idx = arg.row(bi * out_len + t);
            for ch in 0..c {
                let offset = idx[ch] as usize;
                grad_in[(bi * len + 2 * t + offset, ch)] += src[ch];
            }
        }
    }
    grad_in
}

/// Softmax cross-entropy over `(b, n_classes)` logits against class indices.
/// Returns the mean loss and the gradient w.r.t. the logits,
/// `(softmax - onehot) / b`.
pub fn softmax_cross_entropy<F: NdFloat>(
    logits: ArrayView2<F>,
    targets: &[usize],
) -> (f64, Array2<F>) {
    let b = logits.nrows();
    assert_eq!(targets.len(), b);
    let mut grad = logits.to_owned();
    let mut loss = 0.0f64;
    let inv_b = F::from(1.0 / b as f64).unwrap();
    for (i, mut row) in grad.rows_mut().into_iter().enumerate() {
        let max = row.iter().cloned().fold(F::neg_infinity(), F::max);
        let mut sum = F::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        let target = targets[i];
        debug_assert!(target < row.len());
        // log p_t = z_t - max - log sum
        let p_t = row[target] / sum;
        loss -= (p_t.to_f64().unwrap().max(f64::MIN_POSITIVE)).ln();
        for (j, v) in row.iter_mut().enumerate() {
            let p = *v / sum;
            let y = if j == target { F::one() } else { F::zero() };
            *v = (p - y) * inv_b;
        }
    }
    (loss / b as f64, grad)
}
