use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::conv::{self, ConvGeometry};
use super::tensor::{Real, Tensor5};

pub const LEAKY_SLOPE: f64 = 0.2;
pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv3d,
    Deconv3d,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    Batch,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// Leaky ReLU with slope 0.2.
    LeakyRelu,
    Tanh,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    pub normalization: Normalization,
    pub activation: Activation,
}

impl LayerSpec {
    /// Output `[T, H, W]` for an input of `dims`, if the layer accepts it.
    pub fn output_dims(&self, dims: [usize; 3]) -> Option<[usize; 3]> {
        match self.kind {
            LayerKind::Conv3d => {
                ConvGeometry::new(self.in_channels, dims, self.kernel, self.stride, self.padding).map(|g| g.strided)
            }
            LayerKind::Deconv3d => {
                // Output padding is implied: the dense side is `dims * stride`.
                let mut out = [0; 3];
                for d in 0..3 {
                    out[d] = dims[d] * self.stride[d];
                }
                let g = ConvGeometry::new(self.out_channels, out, self.kernel, self.stride, self.padding)?;
                (g.strided == dims).then_some(out)
            }
        }
    }

    fn geometry(&self, input: [usize; 3]) -> ConvGeometry {
        match self.kind {
            LayerKind::Conv3d => ConvGeometry::new(self.in_channels, input, self.kernel, self.stride, self.padding),
            LayerKind::Deconv3d => self
                .output_dims(input)
                .and_then(|out| ConvGeometry::new(self.out_channels, out, self.kernel, self.stride, self.padding)),
        }
        .expect("layer geometry validated at construction")
    }

    pub fn weight_len(&self) -> usize {
        self.in_channels * self.out_channels * self.kernel.iter().product::<usize>()
    }

    pub fn has_bias(&self) -> bool {
        self.normalization == Normalization::None
    }
}

/// Batch-normalization parameters and running statistics for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<F> {
    pub gamma: Vec<F>,
    pub beta: Vec<F>,
    pub running_mean: Vec<F>,
    pub running_var: Vec<F>,
}

impl<F: Real> BatchNorm<F> {
    fn new(channels: usize) -> Self {
        Self {
            gamma: vec![F::ONE; channels],
            beta: vec![F::ZERO; channels],
            running_mean: vec![F::ZERO; channels],
            running_var: vec![F::ONE; channels],
        }
    }
}

/// One conv/deconv → [batch norm] → activation block.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<F> {
    pub spec: LayerSpec,
    pub weight: Vec<F>,
    /// Empty when the layer is batch-normalized.
    pub bias: Vec<F>,
    pub norm: Option<BatchNorm<F>>,
}

/// What one layer keeps from a training-mode forward pass.
pub(crate) struct LayerTrace<F> {
    input: Tensor5<F>,
    /// Normalized pre-activation (`x̂`), batch-normalized layers only.
    xhat: Option<Tensor5<F>>,
    inv_std: Vec<F>,
    output: Tensor5<F>,
}

impl<F> LayerTrace<F> {
    pub(crate) fn output(&self) -> &Tensor5<F> {
        &self.output
    }
}

/// Gradients for one layer, same layout as its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads<F> {
    pub weight: Vec<F>,
    pub bias: Vec<F>,
    pub gamma: Vec<F>,
    pub beta: Vec<F>,
}

impl<F: Real> Layer<F> {
    /// Fan-in uniform initialization scaled for leaky-ReLU gain.
    pub fn init(spec: LayerSpec, rng: &mut impl Rng) -> Self {
        let kvol: usize = spec.kernel.iter().product();
        let fan_in = (spec.in_channels * kvol) as f64;
        let gain = (2.0 / (1.0 + LEAKY_SLOPE * LEAKY_SLOPE)).sqrt();
        let bound = gain * (3.0 / fan_in).sqrt();
        let weight = (0..spec.weight_len())
            .map(|_| F::from_f64(rng.gen_range(-bound..bound)))
            .collect();
        let bias = if spec.has_bias() {
            vec![F::ZERO; spec.out_channels]
        } else {
            Vec::new()
        };
        let norm = (spec.normalization == Normalization::Batch).then(|| BatchNorm::new(spec.out_channels));
        Self {
            spec,
            weight,
            bias,
            norm,
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len() + self.norm.as_ref().map_or(0, |n| 2 * n.gamma.len())
    }

    /// Linear part (convolution + bias) for a whole batch.
    fn linear(&self, x: &Tensor5<F>) -> Tensor5<F> {
        let dims = x.spatial();
        let out_dims = self.spec.output_dims(dims).expect("validated");
        let g = self.spec.geometry(dims);
        let cout = self.spec.out_channels;
        let mut y = Tensor5::zeros([x.batch(), cout, out_dims[0], out_dims[1], out_dims[2]]);
        let out_len = y.sample_len();
        let in_len = x.sample_len();
        y.data
            .par_chunks_mut(out_len)
            .zip(x.data.par_chunks(in_len))
            .for_each(|(yi, xi)| match self.spec.kind {
                LayerKind::Conv3d => conv::conv_forward(&g, &self.weight, cout, xi, yi),
                LayerKind::Deconv3d => conv::deconv_forward(&g, &self.weight, self.spec.in_channels, xi, yi),
            });
        if !self.bias.is_empty() {
            let plane = out_len / cout;
            for yi in y.data.chunks_mut(out_len) {
                for (c, chan) in yi.chunks_mut(plane).enumerate() {
                    let b = self.bias[c];
                    chan.iter_mut().for_each(|v| *v += b);
                }
            }
        }
        y
    }

    fn activate(&self, y: &mut Tensor5<F>) {
        match self.spec.activation {
            Activation::LeakyRelu => {
                let slope = F::from_f64(LEAKY_SLOPE);
                y.data.iter_mut().for_each(|v| {
                    if *v < F::ZERO {
                        *v *= slope;
                    }
                });
            }
            Activation::Tanh => y.data.iter_mut().for_each(|v| *v = v.tanh()),
            Activation::None => {}
        }
    }

    /// Inference-mode forward: batch norm uses running statistics.
    pub fn forward(&self, x: &Tensor5<F>) -> Tensor5<F> {
        let mut y = self.linear(x);
        if let Some(bn) = &self.norm {
            let cout = self.spec.out_channels;
            let plane = y.sample_len() / cout;
            let eps = F::from_f64(BN_EPS);
            let scale: Vec<F> = (0..cout)
                .map(|c| bn.gamma[c] / (bn.running_var[c] + eps).sqrt())
                .collect();
            let shift: Vec<F> = (0..cout).map(|c| bn.beta[c] - bn.running_mean[c] * scale[c]).collect();
            for chan in y.data.chunks_mut(plane).enumerate() {
                let c = chan.0 % cout;
                chan.1.iter_mut().for_each(|v| *v = *v * scale[c] + shift[c]);
            }
        }
        self.activate(&mut y);
        y
    }

    /// Training-mode forward: normalizes with batch statistics and updates
    /// the running averages.
    pub(crate) fn forward_train(&mut self, x: Tensor5<F>) -> (Tensor5<F>, LayerTrace<F>) {
        let mut y = self.linear(&x);
        let mut xhat = None;
        let mut inv_std = Vec::new();
        if let Some(bn) = &mut self.norm {
            let cout = self.spec.out_channels;
            let plane = y.sample_len() / cout;
            let count = (y.batch() * plane) as f64;
            let mut mean = vec![0.0f64; cout];
            let mut var = vec![0.0f64; cout];
            for (i, chan) in y.data.chunks(plane).enumerate() {
                mean[i % cout] += chan.iter().map(|v| v.to_f64()).sum::<f64>();
            }
            mean.iter_mut().for_each(|m| *m /= count);
            for (i, chan) in y.data.chunks(plane).enumerate() {
                let m = mean[i % cout];
                var[i % cout] += chan.iter().map(|v| (v.to_f64() - m).powi(2)).sum::<f64>();
            }
            var.iter_mut().for_each(|v| *v /= count);
            inv_std = var.iter().map(|v| F::from_f64(1.0 / (v + BN_EPS).sqrt())).collect();
            let unbias = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
            for c in 0..cout {
                let rm = bn.running_mean[c].to_f64();
                let rv = bn.running_var[c].to_f64();
                bn.running_mean[c] = F::from_f64((1.0 - BN_MOMENTUM) * rm + BN_MOMENTUM * mean[c]);
                bn.running_var[c] = F::from_f64((1.0 - BN_MOMENTUM) * rv + BN_MOMENTUM * var[c] * unbias);
            }
            let mut normalized = y.clone();
            for (i, chan) in normalized.data.chunks_mut(plane).enumerate() {
                let c = i % cout;
                let m = F::from_f64(mean[c]);
                chan.iter_mut().for_each(|v| *v = (*v - m) * inv_std[c]);
            }
            for (i, (out, nx)) in y.data.chunks_mut(plane).zip(normalized.data.chunks(plane)).enumerate() {
                let c = i % cout;
                for (o, n) in out.iter_mut().zip(nx) {
                    *o = bn.gamma[c] * *n + bn.beta[c];
                }
            }
            xhat = Some(normalized);
        }
        self.activate(&mut y);
        let trace = LayerTrace {
            input: x,
            xhat,
            inv_std,
            output: y.clone(),
        };
        (y, trace)
    }

    /// Backpropagate `dy` through the layer; returns parameter gradients and,
    /// if requested, the gradient with respect to the layer input.
    pub(crate) fn backward(
        &self,
        trace: &LayerTrace<F>,
        mut dy: Tensor5<F>,
        need_input_grad: bool,
    ) -> (LayerGrads<F>, Option<Tensor5<F>>) {
        match self.spec.activation {
            Activation::LeakyRelu => {
                let slope = F::from_f64(LEAKY_SLOPE);
                for (d, y) in dy.data.iter_mut().zip(&trace.output.data) {
                    if *y < F::ZERO {
                        *d *= slope;
                    }
                }
            }
            Activation::Tanh => {
                for (d, y) in dy.data.iter_mut().zip(&trace.output.data) {
                    *d *= F::ONE - *y * *y;
                }
            }
            Activation::None => {}
        }
        let cout = self.spec.out_channels;
        let plane = dy.sample_len() / cout;
        let mut grads = LayerGrads {
            weight: vec![F::ZERO; self.weight.len()],
            bias: vec![F::ZERO; self.bias.len()],
            gamma: Vec::new(),
            beta: Vec::new(),
        };
        if let (Some(bn), Some(xhat)) = (&self.norm, &trace.xhat) {
            let count = (dy.batch() * plane) as f64;
            let mut sum_d = vec![0.0f64; cout];
            let mut sum_dx = vec![0.0f64; cout];
            for (i, (d, xh)) in dy.data.chunks(plane).zip(xhat.data.chunks(plane)).enumerate() {
                let c = i % cout;
                for (a, b) in d.iter().zip(xh) {
                    sum_d[c] += a.to_f64();
                    sum_dx[c] += a.to_f64() * b.to_f64();
                }
            }
            grads.beta = sum_d.iter().map(|v| F::from_f64(*v)).collect();
            grads.gamma = sum_dx.iter().map(|v| F::from_f64(*v)).collect();
            // dz = γ·σ⁻¹/N · (N·du − Σdu − x̂·Σ(du·x̂))
            for (i, (d, xh)) in dy.data.chunks_mut(plane).zip(xhat.data.chunks(plane)).enumerate() {
                let c = i % cout;
                let k = bn.gamma[c] * trace.inv_std[c];
                let mean_d = F::from_f64(sum_d[c] / count);
                let mean_dx = F::from_f64(sum_dx[c] / count);
                for (a, b) in d.iter_mut().zip(xh) {
                    *a = k * (*a - mean_d - *b * mean_dx);
                }
            }
        } else if !self.bias.is_empty() {
            let mut sums = vec![0.0f64; cout];
            for (i, d) in dy.data.chunks(plane).enumerate() {
                sums[i % cout] += d.iter().map(|v| v.to_f64()).sum::<f64>();
            }
            grads.bias = sums.into_iter().map(F::from_f64).collect();
        }

        let x = &trace.input;
        let g = self.spec.geometry(x.spatial());
        let in_len = x.sample_len();
        let out_len = dy.sample_len();
        let mut dx = need_input_grad.then(|| Tensor5::zeros(x.shape));
        let per_sample: Vec<Vec<F>> = match dx.as_mut() {
            Some(dx) => dx
                .data
                .par_chunks_mut(in_len)
                .zip(x.data.par_chunks(in_len))
                .zip(dy.data.par_chunks(out_len))
                .map(|((dxi, xi), dyi)| self.linear_backward(&g, xi, dyi, Some(dxi)))
                .collect(),
            None => x
                .data
                .par_chunks(in_len)
                .zip(dy.data.par_chunks(out_len))
                .map(|(xi, dyi)| self.linear_backward(&g, xi, dyi, None))
                .collect(),
        };
        // Fixed-order reduction keeps results independent of thread count.
        for dw in per_sample {
            grads.weight.iter_mut().zip(dw).for_each(|(a, b)| *a += b);
        }
        (grads, dx)
    }

    fn linear_backward(&self, g: &ConvGeometry, x: &[F], dy: &[F], dx: Option<&mut [F]>) -> Vec<F> {
        let mut dw = vec![F::ZERO; self.weight.len()];
        match self.spec.kind {
            LayerKind::Conv3d => conv::conv_backward(g, &self.weight, self.spec.out_channels, x, dy, &mut dw, dx),
            LayerKind::Deconv3d => conv::deconv_backward(g, &self.weight, self.spec.in_channels, x, dy, &mut dw, dx),
        }
        dw
    }
}
