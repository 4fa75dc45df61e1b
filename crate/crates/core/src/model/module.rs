//! The per-rule classifier module.
//!
//! Each rule gets its own small network mapping an encoded message to a
//! probability vector over the four result codes. Two parallel branches
//! consume the two feature blocks (structured features and hashed text);
//! each branch is conv -> conv -> maxpool -> conv -> conv -> dense, all
//! ReLU-activated; the branch outputs are concatenated and pushed through a
//! ReLU head and a 4-way softmax output layer.

use ndarray::{Array2, ArrayView2, NdFloat};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::layers::{
    maxpool2, maxpool2_backward, relu_backward_inplace, relu_inplace, Conv1d, Dense,
};
use crate::rules::ResultCode;

/// Architecture hyperparameters shared by every module of a twin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModuleArch {
    /// Channel counts of the four convolution layers per branch.
    pub conv_filters: [usize; 4],
    /// Convolution kernel width (odd; stride 1, same padding).
    pub kernel: usize,
    /// Width of the per-branch dense layer.
    pub dense_units: usize,
    /// Width of the dense head after branch concatenation.
    pub head_width: usize,
}

impl Default for ModuleArch {
    fn default() -> Self {
        ModuleArch {
            conv_filters: [16, 32, 64, 64],
            kernel: 3,
            dense_units: 200,
            head_width: 64,
        }
    }
}

impl ModuleArch {
    /// A deliberately small architecture for experiments and tests that care
    /// about pipeline behaviour rather than raw capacity.
    pub fn small() -> Self {
        ModuleArch {
            conv_filters: [8, 16, 32, 32],
            kernel: 3,
            dense_units: 100,
            head_width: 32,
        }
    }

    /// An even smaller variant used by exhaustive numerical tests.
    pub fn tiny() -> Self {
        ModuleArch {
            conv_filters: [4, 8, 12, 12],
            kernel: 3,
            dense_units: 32,
            head_width: 16,
        }
    }

    pub fn check(&self, branch1_len: usize, branch2_len: usize) -> Result<()> {
        if self.kernel % 2 == 0 || self.kernel == 0 {
            return Err(Error::Model(format!(
                "kernel width {} must be odd",
                self.kernel
            )));
        }
        if self.conv_filters.iter().any(|&c| c == 0)
            || self.dense_units == 0
            || self.head_width == 0
        {
            return Err(Error::Model("architecture has a zero-width layer".into()));
        }
        for (name, len) in [("branch 1", branch1_len), ("branch 2", branch2_len)] {
            if len < 2 {
                return Err(Error::Model(format!(
                    "{name} input length {len} too short for max pooling"
                )));
            }
        }
        Ok(())
    }
}

/// One convolutional branch.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchParams<F> {
    pub convs: Vec<Conv1d<F>>,
    pub fc: Dense<F>,
    pub input_len: usize,
}

/// All parameters of one per-rule module.
#[derive(Debug, Clone, PartialEq)]
pub struct ModuleParams<F> {
    pub arch: ModuleArch,
    pub branch1: BranchParams<F>,
    pub branch2: BranchParams<F>,
    pub head: Dense<F>,
    pub output: Dense<F>,
}

impl<F: NdFloat> ModuleParams<F> {
    /// Zero-valued parameters with the right shapes.
    pub fn zeros(arch: &ModuleArch, branch1_len: usize, branch2_len: usize) -> Result<Self> {
        arch.check(branch1_len, branch2_len)?;
        let branch = |len: usize| {
            let f = arch.conv_filters;
            BranchParams {
                convs: vec![
                    Conv1d::zeros(1, f[0], arch.kernel),
                    Conv1d::zeros(f[0], f[1], arch.kernel),
                    Conv1d::zeros(f[1], f[2], arch.kernel),
                    Conv1d::zeros(f[2], f[3], arch.kernel),
                ],
                fc: Dense::zeros((len / 2) * f[3], arch.dense_units),
                input_len: len,
            }
        };
        Ok(ModuleParams {
            arch: *arch,
            branch1: branch(branch1_len),
            branch2: branch(branch2_len),
            head: Dense::zeros(2 * arch.dense_units, arch.head_width),
            output: Dense::zeros(arch.head_width, ResultCode::COUNT),
        })
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.flat_views().iter().map(|s| s.len()).sum()
    }

    /// All parameter tensors flattened to slices, in a canonical order
    /// (branch 1 convs, branch 1 dense, branch 2 convs, branch 2 dense,
    /// head, output; weight before bias). Gradient/optimizer state built
    /// with [`ModuleParams::zeros`] lines up index for index.
    pub fn flat_views(&self) -> Vec<&[F]> {
        let mut out = Vec::with_capacity(24);
        for branch in [&self.branch1, &self.branch2] {
            for conv in &branch.convs {
                out.push(conv.weight.as_slice().expect("standard layout"));
                out.push(conv.bias.as_slice().expect("standard layout"));
            }
            out.push(branch.fc.weight.as_slice().expect("standard layout"));
            out.push(branch.fc.bias.as_slice().expect("standard layout"));
        }
        for dense in [&self.head, &self.output] {
            out.push(dense.weight.as_slice().expect("standard layout"));
            out.push(dense.bias.as_slice().expect("standard layout"));
        }
        out
    }

    pub fn flat_views_mut(&mut self) -> Vec<&mut [F]> {
        let mut out = Vec::with_capacity(24);
        for branch in [&mut self.branch1, &mut self.branch2] {
            for conv in &mut branch.convs {
                out.push(conv.weight.as_slice_mut().expect("standard layout"));
                out.push(conv.bias.as_slice_mut().expect("standard layout"));
            }
            out.push(branch.fc.weight.as_slice_mut().expect("standard layout"));
            out.push(branch.fc.bias.as_slice_mut().expect("standard layout"));
        }
        for dense in [&mut self.head, &mut self.output] {
            out.push(dense.weight.as_slice_mut().expect("standard layout"));
            out.push(dense.bias.as_slice_mut().expect("standard layout"));
        }
        out
    }

    /// Names and shapes of the tensors in [`ModuleParams::flat_views`] order.
    pub fn tensor_names(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::with_capacity(24);
        for (bname, branch) in [("b1", &self.branch1), ("b2", &self.branch2)] {
            for (i, conv) in branch.convs.iter().enumerate() {
                out.push((format!("{bname}.conv{i}.w"), conv.weight.shape().to_vec()));
                out.push((format!("{bname}.conv{i}.b"), conv.bias.shape().to_vec()));
            }
            out.push((format!("{bname}.fc.w"), branch.fc.weight.shape().to_vec()));
            out.push((format!("{bname}.fc.b"), branch.fc.bias.shape().to_vec()));
        }
        for (dname, dense) in [("head", &self.head), ("out", &self.output)] {
            out.push((format!("{dname}.w"), dense.weight.shape().to_vec()));
            out.push((format!("{dname}.b"), dense.bias.shape().to_vec()));
        }
        out
    }
}

impl ModuleParams<f32> {
    /// Promote to f64 (used by the gradient check).
    pub fn to_f64(&self) -> ModuleParams<f64> {
        let mut out = ModuleParams::<f64>::zeros(
            &self.arch,
            self.branch1.input_len,
            self.branch2.input_len,
        )
        .expect("shape already validated");
        for (dst, src) in out.flat_views_mut().into_iter().zip(self.flat_views()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d = *s as f64;
            }
        }
        out
    }
}

/// Amplitude of the bias initialization noise.
///
/// Biases start at small nonzero values rather than exactly zero. With zero
/// biases, a ReLU unit whose input window is entirely clipped sits *exactly*
/// on the rectifier kink, where the derivative is ill-defined; gradient
/// checks then see an O(1) disagreement between the analytic convention
/// (relu'(0) = 0) and central differences. Small noise moves every such unit
/// cleanly to one side of the kink without affecting training.
const BIAS_INIT_BOUND: f32 = 0.01;

/// Uniform fan-in initialization: every weight is drawn from
/// `U(-sqrt(6 / fan_in), +sqrt(6 / fan_in))`; biases from
/// `U(-0.01, +0.01)` (see [`BIAS_INIT_BOUND`]).
///
/// Tensors are filled in canonical order from a ChaCha stream, so a given
/// seed always produces the same module.
pub fn init_module(
    arch: &ModuleArch,
    branch1_len: usize,
    branch2_len: usize,
    seed: u64,
) -> Result<ModuleParams<f32>> {
    let mut params = ModuleParams::<f32>::zeros(arch, branch1_len, branch2_len)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kernel = arch.kernel;
    for branch in [&mut params.branch1, &mut params.branch2] {
        for conv in &mut branch.convs {
            let fan_in = conv.c_in * kernel;
            fill_uniform(conv.weight.iter_mut(), weight_bound(fan_in), &mut rng);
            fill_uniform(conv.bias.iter_mut(), BIAS_INIT_BOUND, &mut rng);
        }
        let fan_in = branch.fc.weight.ncols();
        fill_uniform(branch.fc.weight.iter_mut(), weight_bound(fan_in), &mut rng);
        fill_uniform(branch.fc.bias.iter_mut(), BIAS_INIT_BOUND, &mut rng);
    }
    let fan_in = params.head.weight.ncols();
    fill_uniform(params.head.weight.iter_mut(), weight_bound(fan_in), &mut rng);
    fill_uniform(params.head.bias.iter_mut(), BIAS_INIT_BOUND, &mut rng);
    let fan_in = params.output.weight.ncols();
    fill_uniform(params.output.weight.iter_mut(), weight_bound(fan_in), &mut rng);
    fill_uniform(params.output.bias.iter_mut(), BIAS_INIT_BOUND, &mut rng);
    Ok(params)
}

fn weight_bound(fan_in: usize) -> f32 {
    (6.0 / fan_in as f64).sqrt() as f32
}

fn fill_uniform<'a>(
    values: impl Iterator<Item = &'a mut f32>,
    bound: f32,
    rng: &mut ChaCha8Rng,
) {
    for v in values {
        *v = rng.gen_range(-bound..=bound);
    }
}

/// Intermediate activations cached by the forward pass.
pub struct ModuleCache<F> {
    branch1: BranchCache<F>,
    branch2: BranchCache<F>,
    concat: Array2<F>,
    head_out: Array2<F>,
    batch: usize,
}

struct BranchCache<F> {
    patches: Vec<Array2<F>>,
    activations: Vec<Array2<F>>,
    pool_arg: Array2<u8>,
    flat: Array2<F>,
    fc_out: Array2<F>,
}

impl<F: NdFloat> ModuleParams<F> {
    /// Forward pass producing logits `(batch, 4)` and the cache needed by
    /// [`ModuleParams::backward`]. `x1`/`x2` are `(batch, branch_len)`.
    pub fn forward(&self, x1: ArrayView2<F>, x2: ArrayView2<F>) -> (Array2<F>, ModuleCache<F>) {
        let batch = x1.nrows();
        debug_assert_eq!(x2.nrows(), batch);
        let (h1, c1) = branch_forward(&self.branch1, x1, batch);
        let (h2, c2) = branch_forward(&self.branch2, x2, batch);
        let mut concat = Array2::zeros((batch, h1.ncols() + h2.ncols()));
        concat
            .slice_mut(ndarray::s![.., ..h1.ncols()])
            .assign(&h1);
        concat
            .slice_mut(ndarray::s![.., h1.ncols()..])
            .assign(&h2);
        let mut head_out = self.head.forward(concat.view());
        relu_inplace(&mut head_out);
        let logits = self.output.forward(head_out.view());
        (
            logits,
            ModuleCache {
                branch1: c1,
                branch2: c2,
                concat,
                head_out,
                batch,
            },
        )
    }

    /// Backward pass from the logit gradient; returns parameter gradients in
    /// a [`ModuleParams`] of identical shape.
    pub fn backward(&self, cache: &ModuleCache<F>, grad_logits: ArrayView2<F>) -> ModuleParams<F> {
        let mut grads = ModuleParams::<F>::zeros(
            &self.arch,
            self.branch1.input_len,
            self.branch2.input_len,
        )
        .expect("shapes validated at construction");

        let (grad_head_out, gw, gb) = self.output.backward(cache.head_out.view(), grad_logits);
        grads.output.weight = gw;
        grads.output.bias = gb;

        let mut grad_head_out = grad_head_out;
        relu_backward_inplace(&mut grad_head_out, &cache.head_out);
        let (grad_concat, gw, gb) = self.head.backward(cache.concat.view(), grad_head_out.view());
        grads.head.weight = gw;
        grads.head.bias = gb;

        let d = self.arch.dense_units;
        let g1 = grad_concat.slice(ndarray::s![.., ..d]).to_owned();
        let g2 = grad_concat.slice(ndarray::s![.., d..]).to_owned();
        branch_backward(&self.branch1, &cache.branch1, g1, cache.batch, &mut grads.branch1);
        branch_backward(&self.branch2, &cache.branch2, g2, cache.batch, &mut grads.branch2);
        grads
    }

    /// Class probabilities in f64, `(batch, 4)`. Probabilities are computed
    /// with the max-subtraction trick and a clamped exponent floor, so every
    /// entry is strictly positive and each row sums to 1 within 1e-6.
    pub fn predict_proba(&self, x1: ArrayView2<F>, x2: ArrayView2<F>) -> Array2<f64> {
        let (logits, _) = self.forward(x1, x2);
        let mut out = Array2::zeros((logits.nrows(), logits.ncols()));
        for (i, row) in logits.rows().into_iter().enumerate() {
            let max = row
                .iter()
                .map(|v| v.to_f64().unwrap())
                .fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (j, v) in row.iter().enumerate() {
                // The floor keeps even wildly confident logits away from a
                // hard zero probability.
                let z = (v.to_f64().unwrap() - max).max(-500.0);
                let e = z.exp();
                out[(i, j)] = e;
                sum += e;
            }
            for j in 0..row.len() {
                out[(i, j)] /= sum;
            }
        }
        out
    }
}

fn branch_forward<F: NdFloat>(
    branch: &BranchParams<F>,
    x: ArrayView2<F>,
    batch: usize,
) -> (Array2<F>, BranchCache<F>) {
    let len = branch.input_len;
    debug_assert_eq!(x.ncols(), len);
    // (batch, len) -> (batch * len, 1): same memory order.
    let input = x
        .to_owned()
        .into_shape_with_order((batch * len, 1))
        .expect("row-major reshape");

    let mut patches = Vec::with_capacity(4);
    let mut activations = Vec::with_capacity(4);

    let (mut a, p) = branch.convs[0].forward(input.view(), batch, len);
    relu_inplace(&mut a);
    patches.push(p);
    activations.push(a);
    let (mut a, p) = branch.convs[1].forward(activations[0].view(), batch, len);
    relu_inplace(&mut a);
    patches.push(p);
    activations.push(a);

    let (pooled, pool_arg) = maxpool2(activations[1].view(), batch, len);
    let pooled_len = len / 2;

    let (mut a, p) = branch.convs[2].forward(pooled.view(), batch, pooled_len);
    relu_inplace(&mut a);
    patches.push(p);
    activations.push(a);
    let (mut a, p) = branch.convs[3].forward(activations[2].view(), batch, pooled_len);
    relu_inplace(&mut a);
    patches.push(p);
    activations.push(a);

    // (batch * pooled_len, c) -> (batch, pooled_len * c): free reshape.
    let c_last = activations[3].ncols();
    let flat = activations[3]
        .clone()
        .into_shape_with_order((batch, pooled_len * c_last))
        .expect("row-major reshape");
    let mut fc_out = branch.fc.forward(flat.view());
    relu_inplace(&mut fc_out);
    (
        fc_out.clone(),
        BranchCache {
            patches,
            activations,
            pool_arg,
            flat,
            fc_out,
        },
    )
}

fn branch_backward<F: NdFloat>(
    branch: &BranchParams<F>,
    cache: &BranchCache<F>,
    mut grad_fc_out: Array2<F>,
    batch: usize,
    grads: &mut BranchParams<F>,
) {
    let len = branch.input_len;
    let pooled_len = len / 2;

    relu_backward_inplace(&mut grad_fc_out, &cache.fc_out);
    let (grad_flat, gw, gb) = branch.fc.backward(cache.flat.view(), grad_fc_out.view());
    grads.fc.weight = gw;
    grads.fc.bias = gb;

    let c_last = cache.activations[3].ncols();
    let mut grad_a3 = grad_flat
        .into_shape_with_order((batch * pooled_len, c_last))
        .expect("row-major reshape");
    relu_backward_inplace(&mut grad_a3, &cache.activations[3]);
    let (mut grad_a2, gw, gb) =
        branch.convs[3].backward(&cache.patches[3], grad_a3.view(), batch, pooled_len);
    grads.convs[3].weight = gw;
    grads.convs[3].bias = gb;

    relu_backward_inplace(&mut grad_a2, &cache.activations[2]);
    let (grad_pooled, gw, gb) =
        branch.convs[2].backward(&cache.patches[2], grad_a2.view(), batch, pooled_len);
    grads.convs[2].weight = gw;
    grads.convs[2].bias = gb;

    let mut grad_a1 = maxpool2_backward(grad_pooled.view(), &cache.pool_arg, batch, len);
    relu_backward_inplace(&mut grad_a1, &cache.activations[1]);
    let (mut grad_a0, gw, gb) =
        branch.convs[1].backward(&cache.patches[1], grad_a1.view(), batch, len);
    grads.convs[1].weight = gw;
    grads.convs[1].bias = gb;

    relu_backward_inplace(&mut grad_a0, &cache.activations[0]);
    let (_, gw, gb) = branch.convs[0].backward(&cache.patches[0], grad_a0.view(), batch, len);
    grads.convs[0].weight = gw;
    grads.convs[0].bias = gb;
}
