//! Two-hidden-layer perceptron with ReLU hidden activations and an exact
//! reverse-mode backward pass.

use rand::Rng;

use crate::error::{Result, SocoError};
use crate::numerics::linalg;
use crate::numerics::tensor::Tensor;

/// Activation applied to the final layer.
///
/// Critics and logit/residual heads use `Identity`; bounded action heads use
/// `Tanh`. Any additional squashing belongs to the caller, so a bound is
/// never applied twice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputActivation {
    Identity,
    Tanh,
}

/// `[in, h1, h2, out]` feed-forward network.
///
/// Parameters are stored in the fixed order `[w0, b0, w1, b1, w2, b2]` with
/// weight matrices shaped `[fan_in, fan_out]` row-major. That order is the
/// contract for optimizer state, soft updates, hashing, and checkpoints.
#[derive(Debug, Clone)]
pub struct Mlp {
    sizes: [usize; 4],
    out_act: OutputActivation,
    params: Vec<Tensor>,
}

/// Activations recorded by [`Mlp::forward_train`], consumed by [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Tensor,
    h1: Tensor,
    h2: Tensor,
    output: Tensor,
}

impl ForwardCache {
    pub fn output(&self) -> &Tensor {
        &self.output
    }

    pub fn batch(&self) -> usize {
        self.input.rows()
    }
}

/// Parameter gradients in the same order and shapes as [`Mlp::params`].
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub params: Vec<Tensor>,
}

impl MlpGrads {
    pub fn zeros_like(net: &Mlp) -> Self {
        MlpGrads {
            params: net.params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    /// Scales every gradient entry in place.
    pub fn scale(&mut self, s: f64) {
        for t in &mut self.params {
            for v in t.as_mut_slice() {
                *v *= s;
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.params
            .iter()
            .flat_map(|t| t.as_slice().iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

impl Mlp {
    /// Seeded initialization: weights uniform in `[-1/sqrt(fan_in), +1/sqrt(fan_in)]`
    /// drawn layer by layer in storage order, biases zero.
    pub fn new<R: Rng>(sizes: [usize; 4], out_act: OutputActivation, rng: &mut R) -> Self {
        assert!(sizes.iter().all(|&s| s > 0), "all layer sizes must be positive");
        let mut params = Vec::with_capacity(6);
        for l in 0..3 {
            let fan_in = sizes[l];
            let fan_out = sizes[l + 1];
            let bound = 1.0 / (fan_in as f64).sqrt();
            let data: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            params.push(Tensor::from_vec(&[fan_in, fan_out], data).expect("finite init"));
            params.push(Tensor::zeros(&[fan_out]));
        }
        Mlp {
            sizes,
            out_act,
            params,
        }
    }

    pub fn zeros(sizes: [usize; 4], out_act: OutputActivation) -> Self {
        let mut params = Vec::with_capacity(6);
        for l in 0..3 {
            params.push(Tensor::zeros(&[sizes[l], sizes[l + 1]]));
            params.push(Tensor::zeros(&[sizes[l + 1]]));
        }
        Mlp {
            sizes,
            out_act,
            params,
        }
    }

    pub fn sizes(&self) -> [usize; 4] {
        self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        self.sizes[3]
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.out_act
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    /// `in*h1 + h1 + h1*h2 + h2 + h2*out + out`
    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    /// Named parameter tensors, e.g. `solo.w0`, for checkpoints and hashing.
    pub fn named_tensors(&self, prefix: &str) -> Vec<(String, Tensor)> {
        const NAMES: [&str; 6] = ["w0", "b0", "w1", "b1", "w2", "b2"];
        NAMES
            .iter()
            .zip(&self.params)
            .map(|(n, t)| (format!("{prefix}.{n}"), t.clone()))
            .collect()
    }

    /// Rebuilds a network from named tensors produced by [`Mlp::named_tensors`].
    pub fn from_named_tensors(
        prefix: &str,
        out_act: OutputActivation,
        lookup: &dyn Fn(&str) -> Option<Tensor>,
    ) -> Result<Mlp> {
        const NAMES: [&str; 6] = ["w0", "b0", "w1", "b1", "w2", "b2"];
        let mut params = Vec::with_capacity(6);
        for n in NAMES {
            let key = format!("{prefix}.{n}");
            let t = lookup(&key).ok_or_else(|| SocoError::Invalid(format!("missing tensor {key}")))?;
            params.push(t);
        }
        let w0 = params[0].shape().to_vec();
        let w1 = params[2].shape().to_vec();
        let w2 = params[4].shape().to_vec();
        if w0.len() != 2 || w1.len() != 2 || w2.len() != 2 || w0[1] != w1[0] || w1[1] != w2[0] {
            return Err(SocoError::Invalid(format!(
                "inconsistent layer shapes under prefix {prefix}"
            )));
        }
        let sizes = [w0[0], w0[1], w1[1], w2[1]];
        for (i, t) in params.iter().enumerate() {
            let want: &[usize] = match i {
                0 => &[sizes[0], sizes[1]],
                1 => &[sizes[1]],
                2 => &[sizes[1], sizes[2]],
                3 => &[sizes[2]],
                4 => &[sizes[2], sizes[3]],
                _ => &[sizes[3]],
            };
            if t.shape() != want {
                return Err(SocoError::shape(
                    format!("{prefix}.{}", ["w0", "b0", "w1", "b1", "w2", "b2"][i]),
                    format!("{want:?}"),
                    format!("{:?}", t.shape()),
                ));
            }
        }
        Ok(Mlp {
            sizes,
            out_act,
            params,
        })
    }

    fn affine(&self, layer: usize, input: &Tensor) -> Tensor {
        let w = &self.params[2 * layer];
        let b = &self.params[2 * layer + 1];
        let m = input.rows();
        let k = w.shape()[0];
        let n = w.shape()[1];
        let mut out = Tensor::zeros(&[m, n]);
        linalg::gemm_nn_acc(m, k, n, input.as_slice(), w.as_slice(), out.as_mut_slice());
        linalg::add_bias_rows(m, n, b.as_slice(), out.as_mut_slice());
        out
    }

    fn run_forward(&self, input: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
        if input.shape().len() != 2 || input.cols() != self.sizes[0] {
            return Err(SocoError::shape(
                "mlp_forward input",
                format!("[batch, {}]", self.sizes[0]),
                format!("{:?}", input.shape()),
            ));
        }
        input.validate_finite("mlp_forward input")?;

        let mut h1 = self.affine(0, input);
        relu_inplace(&mut h1);
        let mut h2 = self.affine(1, &h1);
        relu_inplace(&mut h2);
        let mut out = self.affine(2, &h2);
        if self.out_act == OutputActivation::Tanh {
            for v in out.as_mut_slice() {
                *v = v.tanh();
            }
        }
        out.validate_finite("mlp_forward output")?;
        Ok((h1, h2, out))
    }

    /// Inference pass; no activations are retained.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let (_, _, out) = self.run_forward(input)?;
        Ok(out)
    }

    /// Training pass: records the activations `backward` needs.
    pub fn forward_train(&self, input: &Tensor) -> Result<ForwardCache> {
        let (h1, h2, out) = self.run_forward(input)?;
        Ok(ForwardCache {
            input: input.clone(),
            h1,
            h2,
            output: out,
        })
    }

    /// Exact reverse-mode gradients for the batch recorded in `cache`.
    ///
    /// `upstream` is dLoss/dOutput, shape `[batch, out]`. Returns parameter
    /// gradients and dLoss/dInput.
    pub fn backward(&self, cache: &ForwardCache, upstream: &Tensor) -> Result<(MlpGrads, Tensor)> {
        let batch = cache.batch();
        if upstream.shape() != [batch, self.sizes[3]] {
            return Err(SocoError::shape(
                "mlp_backward upstream",
                format!("[{batch}, {}]", self.sizes[3]),
                format!("{:?}", upstream.shape()),
            ));
        }
        upstream.validate_finite("mlp_backward upstream")?;

        let [d_in, h1n, h2n, d_out] = self.sizes;
        let mut grads = MlpGrads::zeros_like(self);

        // Output head.
        let mut delta3 = upstream.clone();
        if self.out_act == OutputActivation::Tanh {
            for (d, &y) in delta3.as_mut_slice().iter_mut().zip(cache.output.as_slice()) {
                *d *= 1.0 - y * y;
            }
        }

        // Layer 2 (h2 -> out).
        linalg::gemm_tn_acc(
            h2n,
            batch,
            d_out,
            cache.h2.as_slice(),
            delta3.as_slice(),
            grads.params[4].as_mut_slice(),
        );
        linalg::col_sum_acc(batch, d_out, delta3.as_slice(), grads.params[5].as_mut_slice());

        let mut delta2 = Tensor::zeros(&[batch, h2n]);
        linalg::gemm_nt_acc(
            batch,
            d_out,
            h2n,
            delta3.as_slice(),
            self.params[4].as_slice(),
            delta2.as_mut_slice(),
        );
        relu_backward_inplace(&mut delta2, &cache.h2);

        // Layer 1 (h1 -> h2).
        linalg::gemm_tn_acc(
            h1n,
            batch,
            h2n,
            cache.h1.as_slice(),
            delta2.as_slice(),
            grads.params[2].as_mut_slice(),
        );
        linalg::col_sum_acc(batch, h2n, delta2.as_slice(), grads.params[3].as_mut_slice());

        let mut delta1 = Tensor::zeros(&[batch, h1n]);
        linalg::gemm_nt_acc(
            batch,
            h2n,
            h1n,
            delta2.as_slice(),
            self.params[2].as_slice(),
            delta1.as_mut_slice(),
        );
        relu_backward_inplace(&mut delta1, &cache.h1);

        // Layer 0 (input -> h1).
        linalg::gemm_tn_acc(
            d_in,
            batch,
            h1n,
            cache.input.as_slice(),
            delta1.as_slice(),
            grads.params[0].as_mut_slice(),
        );
        linalg::col_sum_acc(batch, h1n, delta1.as_slice(), grads.params[1].as_mut_slice());

        let mut input_grad = Tensor::zeros(&[batch, d_in]);
        linalg::gemm_nt_acc(
            batch,
            h1n,
            d_in,
            delta1.as_slice(),
            self.params[0].as_slice(),
            input_grad.as_mut_slice(),
        );
        Ok((grads, input_grad))
    }

    /// Gradient with respect to the input only; skips the parameter-gradient
    /// GEMMs, which roughly halves the cost when the caller is just chaining
    /// through this network.
    pub fn input_backward(&self, cache: &ForwardCache, upstream: &Tensor) -> Result<Tensor> {
        let batch = cache.batch();
        if upstream.shape() != [batch, self.sizes[3]] {
            return Err(SocoError::shape(
                "input_backward upstream",
                format!("[{batch}, {}]", self.sizes[3]),
                format!("{:?}", upstream.shape()),
            ));
        }
        let [d_in, h1n, h2n, d_out] = self.sizes;

        let mut delta3 = upstream.clone();
        if self.out_act == OutputActivation::Tanh {
            for (d, &y) in delta3.as_mut_slice().iter_mut().zip(cache.output.as_slice()) {
                *d *= 1.0 - y * y;
            }
        }
        let mut delta2 = Tensor::zeros(&[batch, h2n]);
        linalg::gemm_nt_acc(
            batch,
            d_out,
            h2n,
            delta3.as_slice(),
            self.params[4].as_slice(),
            delta2.as_mut_slice(),
        );
        relu_backward_inplace(&mut delta2, &cache.h2);

        let mut delta1 = Tensor::zeros(&[batch, h1n]);
        linalg::gemm_nt_acc(
            batch,
            h2n,
            h1n,
            delta2.as_slice(),
            self.params[2].as_slice(),
            delta1.as_mut_slice(),
        );
        relu_backward_inplace(&mut delta1, &cache.h1);

        let mut input_grad = Tensor::zeros(&[batch, d_in]);
        linalg::gemm_nt_acc(
            batch,
            h1n,
            d_in,
            delta1.as_slice(),
            self.params[0].as_slice(),
            input_grad.as_mut_slice(),
        );
        Ok(input_grad)
    }

    /// Flattens all parameters in storage order.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for p in &self.params {
            out.extend_from_slice(p.as_slice());
        }
        out
    }

    /// Overwrites all parameters from a flat slice in storage order.
    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(SocoError::shape(
                "set_flat_params",
                format!("{}", self.param_count()),
                format!("{}", flat.len()),
            ));
        }
        let mut off = 0;
        for p in &mut self.params {
            let n = p.len();
            p.as_mut_slice().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }
}

fn relu_inplace(t: &mut Tensor) {
    for v in t.as_mut_slice() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Masks `delta` where the recorded post-ReLU activation is zero.
fn relu_backward_inplace(delta: &mut Tensor, post: &Tensor) {
    for (d, &h) in delta.as_mut_slice().iter_mut().zip(post.as_slice()) {
        if h <= 0.0 {
            *d = 0.0;
        }
    }
}
