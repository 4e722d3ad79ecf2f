//! The clip autoencoder `X̂ = D(E(X))`: a 3-D convolutional encoder, a
//! mirrored transposed-convolution decoder and a tanh output so
//! reconstructions live in `[-1, 1]`.
//!
//! Networks are generic over [`Real`] so the same code trains in f32 and is
//! checked against finite differences in f64.

pub mod checkpoint;
pub mod conv;
pub mod layers;
pub mod tensor;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Clip;
use crate::error::{Error, Result};
use layers::LayerTrace;
pub use layers::{Activation, BatchNorm, Layer, LayerGrads, LayerKind, LayerSpec, Normalization};
pub use tensor::{Real, Tensor5};

/// Named architecture presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// 16×1×256×256 clips, channels 1→96→128→256→256 and back.
    Paper,
    /// 8×1×64×64 clips, channels 1→32→48→64 and back; trains on a CPU.
    Desk,
}

impl Preset {
    pub fn as_str(self) -> &'static str {
        match self {
            Preset::Paper => "paper",
            Preset::Desk => "desk",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Preset::Paper),
            "desk" => Ok(Preset::Desk),
            other => Err(Error::Config(format!(
                "unknown preset {other:?} (expected paper or desk)"
            ))),
        }
    }
}

/// Clip shape `T×C×H×W` plus the layer schedule.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub name: String,
    /// `[T, C, H, W]`
    pub input: [usize; 4],
    pub layers: Vec<LayerSpec>,
}

fn block(kind: LayerKind, cin: usize, cout: usize, stride: [usize; 3]) -> LayerSpec {
    LayerSpec {
        kind,
        in_channels: cin,
        out_channels: cout,
        kernel: [3, 3, 3],
        stride,
        padding: [1, 1, 1],
        normalization: Normalization::Batch,
        activation: Activation::LeakyRelu,
    }
}

fn output_block(cin: usize, cout: usize, stride: [usize; 3]) -> LayerSpec {
    LayerSpec {
        normalization: Normalization::None,
        activation: Activation::Tanh,
        ..block(LayerKind::Deconv3d, cin, cout, stride)
    }
}

/// Encoder/decoder built from a channel ladder: the first encoder layer
/// downsamples space only, the rest downsample time and space by 2. The
/// decoder mirrors it and ends in a tanh layer without normalization.
pub fn ladder(name: &str, input: [usize; 4], channels: &[usize]) -> Architecture {
    use LayerKind::*;
    assert!(channels.len() >= 2 && channels[0] == input[1]);
    let first = [1, 2, 2];
    let rest = [2, 2, 2];
    let mut layers = Vec::new();
    for (i, w) in channels.windows(2).enumerate() {
        layers.push(block(Conv3d, w[0], w[1], if i == 0 { first } else { rest }));
    }
    let depth = channels.len() - 1;
    for i in (0..depth).rev() {
        let (cin, cout) = (channels[i + 1], channels[i]);
        if i == 0 {
            layers.push(output_block(cin, cout, first));
        } else {
            layers.push(block(Deconv3d, cin, cout, rest));
        }
    }
    Architecture {
        name: name.to_string(),
        input,
        layers,
    }
}

impl Architecture {
    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Paper => ladder("paper", [16, 1, 256, 256], &[1, 96, 128, 256, 256]),
            Preset::Desk => ladder("desk", [8, 1, 64, 64], &[1, 32, 48, 64]),
        }
    }

    /// `[N, C, T, H, W]` for a batch of `n` clips.
    pub fn batch_shape(&self, n: usize) -> [usize; 5] {
        let [t, c, h, w] = self.input;
        [n, c, t, h, w]
    }

    /// Checks the schedule maps the input shape back onto itself and ends in
    /// tanh.
    pub fn validate(&self) -> Result<()> {
        let [t, c, h, w] = self.input;
        let mut dims = [t, h, w];
        let mut chans = c;
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.in_channels != chans {
                return Err(Error::Config(format!(
                    "layer {i}: expects {} channels, previous layer gives {chans}",
                    layer.in_channels
                )));
            }
            dims = layer.output_dims(dims).ok_or_else(|| {
                Error::Config(format!("layer {i}: cannot map {dims:?} with stride {:?}", layer.stride))
            })?;
            chans = layer.out_channels;
        }
        if chans != c || dims != [t, h, w] {
            return Err(Error::Config(format!(
                "decoder output {chans}×{dims:?} does not mirror input {c}×{:?}",
                [t, h, w]
            )));
        }
        match self.layers.last() {
            Some(l) if l.activation == Activation::Tanh => Ok(()),
            _ => Err(Error::Config("final layer must use tanh".into())),
        }
    }
}

/// Encoder and decoder weights plus normalization statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Autoencoder<F> {
    pub arch: Architecture,
    pub layers: Vec<Layer<F>>,
}

/// Parameter gradients in [`Autoencoder::parameters`] order, plus the
/// optional input gradient.
#[derive(Debug, Clone)]
pub struct Gradients<F> {
    pub layers: Vec<LayerGrads<F>>,
    pub input: Option<Tensor5<F>>,
}

impl<F: Real> Gradients<F> {
    pub fn flat(&self) -> Vec<&[F]> {
        let mut out = Vec::new();
        for g in &self.layers {
            out.push(g.weight.as_slice());
            for v in [&g.bias, &g.gamma, &g.beta] {
                if !v.is_empty() {
                    out.push(v.as_slice());
                }
            }
        }
        out
    }
}

/// Per-layer record of a training-mode forward pass.
pub struct Trace<F> {
    layers: Vec<LayerTrace<F>>,
}

impl<F: Real> Autoencoder<F> {
    /// Deterministic initialization from `(architecture, seed)`.
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = arch.layers.iter().map(|s| Layer::init(*s, &mut rng)).collect();
        Ok(Self { arch, layers })
    }

    pub fn from_preset(preset: Preset, seed: u64) -> Result<Self> {
        Self::new(Architecture::preset(preset), seed)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// Learnable tensors: per layer weight, bias (if any), γ and β (if
    /// batch-normalized).
    pub fn parameters(&self) -> Vec<&[F]> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(l.weight.as_slice());
            if !l.bias.is_empty() {
                out.push(l.bias.as_slice());
            }
            if let Some(n) = &l.norm {
                out.push(n.gamma.as_slice());
                out.push(n.beta.as_slice());
            }
        }
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut [F]> {
        let mut out: Vec<&mut [F]> = Vec::new();
        for l in &mut self.layers {
            out.push(l.weight.as_mut_slice());
            if !l.bias.is_empty() {
                out.push(l.bias.as_mut_slice());
            }
            if let Some(n) = &mut l.norm {
                out.push(n.gamma.as_mut_slice());
                out.push(n.beta.as_mut_slice());
            }
        }
        out
    }

    /// Running means and variances of every normalized layer.
    pub fn buffers(&self) -> Vec<&[F]> {
        let mut out = Vec::new();
        for n in self.layers.iter().filter_map(|l| l.norm.as_ref()) {
            out.push(n.running_mean.as_slice());
            out.push(n.running_var.as_slice());
        }
        out
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut [F]> {
        let mut out: Vec<&mut [F]> = Vec::new();
        for n in self.layers.iter_mut().filter_map(|l| l.norm.as_mut()) {
            out.push(n.running_mean.as_mut_slice());
            out.push(n.running_var.as_mut_slice());
        }
        out
    }

    fn check_input(&self, x: &Tensor5<F>) -> Result<()> {
        let expected = self.arch.batch_shape(x.batch());
        if x.shape != expected || x.batch() == 0 {
            return Err(Error::ShapeMismatch {
                expected: expected.to_vec(),
                actual: x.shape.to_vec(),
            });
        }
        Ok(())
    }

    /// Inference-mode reconstruction (running normalization statistics).
    pub fn forward(&self, x: &Tensor5<F>) -> Result<Tensor5<F>> {
        self.check_input(x)?;
        let mut h = self.layers[0].forward(x);
        for layer in &self.layers[1..] {
            h = layer.forward(&h);
        }
        Ok(h)
    }

    /// Training-mode forward: batch statistics, running averages updated.
    pub fn forward_train(&mut self, x: Tensor5<F>) -> Result<(Tensor5<F>, Trace<F>)> {
        self.check_input(&x)?;
        let mut traces = Vec::with_capacity(self.layers.len());
        let mut h = x;
        for layer in &mut self.layers {
            let (y, t) = layer.forward_train(h);
            traces.push(t);
            h = y;
        }
        Ok((h, Trace { layers: traces }))
    }

    /// Backpropagates `d_output` through a recorded training pass.
    pub fn backward(&self, trace: &Trace<F>, d_output: Tensor5<F>, need_input_grad: bool) -> Gradients<F> {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut d = d_output;
        let mut input = None;
        for (i, (layer, t)) in self.layers.iter().zip(&trace.layers).enumerate().rev() {
            let want_dx = i > 0 || need_input_grad;
            let (g, dx) = layer.backward(t, d, want_dx);
            grads.push(g);
            match dx {
                Some(dx) if i > 0 => d = dx,
                dx => {
                    input = dx;
                    break;
                }
            }
        }
        grads.reverse();
        Gradients { layers: grads, input }
    }

    /// Which leaky-ReLU units of a traced pass were on their negative side.
    /// Two passes share a linear region when their masks are equal.
    pub fn negative_mask(&self, trace: &Trace<F>) -> Vec<bool> {
        let mut out = Vec::new();
        for (layer, t) in self.layers.iter().zip(&trace.layers) {
            if layer.spec.activation == Activation::LeakyRelu {
                out.extend(t.output().data.iter().map(|v| *v < F::ZERO));
            }
        }
        out
    }

    pub fn cast<G: Real>(&self) -> Autoencoder<G> {
        let conv = |v: &Vec<F>| v.iter().map(|x| G::from_f64(x.to_f64())).collect::<Vec<G>>();
        Autoencoder {
            arch: self.arch.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    spec: l.spec,
                    weight: conv(&l.weight),
                    bias: conv(&l.bias),
                    norm: l.norm.as_ref().map(|n| BatchNorm {
                        gamma: conv(&n.gamma),
                        beta: conv(&n.beta),
                        running_mean: conv(&n.running_mean),
                        running_var: conv(&n.running_var),
                    }),
                })
                .collect(),
        }
    }

    /// Stacks clips (each `T×C×H×W`) into an `N×C×T×H×W` batch.
    pub fn batch_from_clips<'a>(&self, clips: impl IntoIterator<Item = &'a Clip>) -> Result<Tensor5<F>> {
        let [t, c, h, w] = self.arch.input;
        let frame = h * w;
        let mut data = Vec::new();
        let mut n = 0;
        for clip in clips {
            if clip.shape() != self.arch.input {
                return Err(Error::ShapeMismatch {
                    expected: self.arch.input.to_vec(),
                    actual: clip.shape().to_vec(),
                });
            }
            let src = clip.data();
            for ch in 0..c {
                for ti in 0..t {
                    let off = (ti * c + ch) * frame;
                    data.extend(src[off..off + frame].iter().map(|v| F::from_f64(*v as f64)));
                }
            }
            n += 1;
        }
        Ok(Tensor5::from_vec(self.arch.batch_shape(n), data))
    }

    /// Reconstruction of one clip in its `T×C×H×W` layout.
    pub fn reconstruct(&self, clip: &Clip) -> Result<Vec<f32>> {
        let x = self.batch_from_clips([clip])?;
        let y = self.forward(&x)?;
        Ok(batch_sample_to_tchw(&y, 0))
    }
}

/// Sample `i` of an `N×C×T×H×W` tensor as `T×C×H×W` f32 values.
pub fn batch_sample_to_tchw<F: Real>(x: &Tensor5<F>, i: usize) -> Vec<f32> {
    let [_, c, t, h, w] = x.shape;
    let frame = h * w;
    let s = x.sample(i);
    let mut out = Vec::with_capacity(s.len());
    for ti in 0..t {
        for ch in 0..c {
            let off = (ch * t + ti) * frame;
            out.extend(s[off..off + frame].iter().map(|v| v.to_f64() as f32));
        }
    }
    out
}

/// Human-readable summary of an architecture for `model-info`.
pub fn describe(arch: &Architecture) -> String {
    let model = Autoencoder::<f32>::new(arch.clone(), 0).expect("valid architecture");
    let mut out = String::new();
    let [t, c, h, w] = arch.input;
    out.push_str(&format!("preset: {}\ninput: {t}x{c}x{h}x{w}\n", arch.name));
    let mut dims = [t, h, w];
    for (i, (spec, layer)) in arch.layers.iter().zip(&model.layers).enumerate() {
        dims = spec.output_dims(dims).expect("validated");
        out.push_str(&format!(
            "layer {i}: {:?} {}->{} stride {:?} norm {:?} act {:?} -> {}x{}x{}x{} ({} params)\n",
            spec.kind,
            spec.in_channels,
            spec.out_channels,
            spec.stride,
            spec.normalization,
            spec.activation,
            dims[0],
            spec.out_channels,
            dims[1],
            dims[2],
            layer.param_count()
        ));
    }
    out.push_str(&format!("total parameters: {}\n", model.param_count()));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Architecture {
        ladder("tiny", [4, 1, 8, 8], &[1, 3, 4])
    }

    #[test]
    fn presets_validate() {
        Architecture::preset(Preset::Paper).validate().unwrap();
        Architecture::preset(Preset::Desk).validate().unwrap();
    }

    #[test]
    fn desk_init_is_deterministic() {
        let a = Autoencoder::<f32>::from_preset(Preset::Desk, 7).unwrap();
        let b = Autoencoder::<f32>::from_preset(Preset::Desk, 7).unwrap();
        assert_eq!(a, b);
        let c = Autoencoder::<f32>::from_preset(Preset::Desk, 8).unwrap();
        assert_ne!(a.layers[0].weight, c.layers[0].weight);
    }

    #[test]
    fn broken_mirror_is_rejected() {
        let mut arch = tiny();
        arch.layers.pop();
        assert!(matches!(arch.validate(), Err(Error::Config(_))));
        let mut arch = tiny();
        arch.layers.last_mut().unwrap().activation = Activation::None;
        assert!(arch.validate().is_err());
    }

    #[test]
    fn forward_rejects_wrong_shape() {
        let m = Autoencoder::<f64>::new(tiny(), 1).unwrap();
        let x = Tensor5::zeros([1, 1, 4, 8, 6]);
        assert!(matches!(m.forward(&x), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn parameters_and_gradients_line_up() {
        let mut m = Autoencoder::<f64>::new(tiny(), 1).unwrap();
        let x = Tensor5::from_vec([2, 1, 4, 8, 8], (0..512).map(|i| (i as f64 * 0.1).sin()).collect());
        let (y, trace) = m.forward_train(x).unwrap();
        let g = m.backward(&trace, y, true);
        let p = m.parameters();
        let gf = g.flat();
        assert_eq!(p.len(), gf.len());
        for (a, b) in p.iter().zip(&gf) {
            assert_eq!(a.len(), b.len());
        }
        assert_eq!(g.input.unwrap().shape, [2, 1, 4, 8, 8]);
        assert_eq!(p.iter().map(|v| v.len()).sum::<usize>(), m.param_count());
    }

    #[test]
    fn cast_round_trip_preserves_f32_weights() {
        let m = Autoencoder::<f32>::new(tiny(), 3).unwrap();
        let back: Autoencoder<f32> = m.cast::<f64>().cast();
        assert_eq!(m, back);
    }
}
