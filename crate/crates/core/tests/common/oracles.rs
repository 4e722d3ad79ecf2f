//! Independent reference computations shared by the property suites and
//! the acceptance runner.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use steal_core::dataset::{Clip, ClipSpec};
use steal_core::model::{Autoencoder, Preset, Tensor5};
use steal_core::training::objective;

/// `n×1×1×1` clip with the given stride, so stride > 1 marks a pseudo clip.
pub fn clip(data: Vec<f32>, stride: usize) -> Clip {
    let n = data.len();
    Clip::from_parts(
        data,
        [n, 1, 1, 1],
        ClipSpec {
            video_id: "v".into(),
            start: 1,
            stride,
            length: n,
        },
    )
    .unwrap()
}

/// PSNR straight from the definition, after mapping `[-1, 1]` to `[0, 1]`.
pub fn direct_psnr(a: &[f32], b: &[f32]) -> f64 {
    let n = a.len() as f64;
    let mse = a
        .iter()
        .zip(b)
        .map(|(x, y)| ((*x as f64 + 1.0) * 0.5 - (*y as f64 + 1.0) * 0.5).powi(2))
        .sum::<f64>()
        / n;
    10.0 * (1.0 / (mse + 1e-10)).log10()
}

/// `P(pos > neg) + ½·P(pos = neg)` by counting every pair.
pub fn pairwise_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] == 0 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] != 0 {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Random scores on a grid of `levels` values (few levels means many ties)
/// with both classes present.
pub fn tied_instance(n: usize, levels: u32, seed: u64) -> (Vec<f64>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scores: Vec<f64> = (0..n)
        .map(|_| rng.gen_range(0..levels) as f64 / levels as f64)
        .collect();
    let mut labels: Vec<u8> = (0..n).map(|_| rng.gen_bool(0.3) as u8).collect();
    labels[0] = 1;
    labels[1] = 0;
    (scores, labels)
}

pub fn grad_input(batch: usize, seed: u64) -> Tensor5<f64> {
    let shape = Autoencoder::<f64>::from_preset(Preset::Desk, 0)
        .unwrap()
        .arch
        .batch_shape(batch);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = shape.iter().product();
    Tensor5::from_vec(shape, (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

/// Loss and leaky-ReLU sign pattern of a training-mode pass.
pub fn loss_and_mask(model: &Autoencoder<f64>, x: &Tensor5<f64>, signs: &[f64]) -> (f64, Vec<bool>) {
    let mut m = model.clone();
    let (y, trace) = m.forward_train(x.clone()).unwrap();
    (objective(x, &y, signs, None).0, m.negative_mask(&trace))
}

pub fn analytic_grads(model: &Autoencoder<f64>, x: &Tensor5<f64>, signs: &[f64]) -> Vec<Vec<f64>> {
    let mut m = model.clone();
    let (y, trace) = m.forward_train(x.clone()).unwrap();
    let (_, dy) = objective(x, &y, signs, None);
    let g = m.backward(&trace, dy, false);
    g.flat().into_iter().map(<[f64]>::to_vec).collect()
}

pub struct GradOutcome {
    pub worst: f64,
    /// Draws whose ±ε perturbation changed some unit's leaky-ReLU side.
    pub skipped: usize,
}

/// Central differences at `eps` on `count` random parameters of the desk
/// model. With `skip_kinks`, a draw is only compared when `w - ε`, `w` and
/// `w + ε` lie in the same linear region of every leaky ReLU; across a
/// kink the difference quotient does not approximate the derivative at `w`.
pub fn gradient_check(signs: &[f64], seed: u64, count: usize, eps: f64, skip_kinks: bool) -> GradOutcome {
    let model = Autoencoder::<f64>::from_preset(Preset::Desk, seed).unwrap();
    let x = grad_input(signs.len(), seed + 100);
    let grads = analytic_grads(&model, &x, signs);
    let (_, base_mask) = loss_and_mask(&model, &x, signs);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 200);
    let mut out = GradOutcome { worst: 0.0, skipped: 0 };
    let mut checked = 0;
    while checked < count {
        let t = rng.gen_range(0..grads.len());
        let i = rng.gen_range(0..grads[t].len());
        let a = grads[t][i];
        let mut plus = model.clone();
        plus.parameters_mut()[t][i] += eps;
        let mut minus = model.clone();
        minus.parameters_mut()[t][i] -= eps;
        let (lp, mask_p) = loss_and_mask(&plus, &x, signs);
        let (lm, mask_m) = loss_and_mask(&minus, &x, signs);
        if skip_kinks && (mask_p != base_mask || mask_m != base_mask) {
            out.skipped += 1;
            continue;
        }
        let numeric = (lp - lm) / (2.0 * eps);
        out.worst = out.worst.max((numeric - a).abs() / (a.abs() + 1e-8));
        checked += 1;
    }
    out
}
