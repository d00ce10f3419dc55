use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::kernels::{self, ConvGeometry, PoolGeometry};
use super::{LayerSpec, Network};
use crate::error::{Error, Result};
use crate::rational::{
    backward_into, backward_rows_into, eval_pau_into, eval_pau_rows_into, sample_noisy_coeffs_with,
    sample_noisy_rows, NoiseGranularity, RationalCoefficients,
};

/// Noise stream index reserved for per-batch draws.
const BATCH_STREAM: u64 = (1 << 40) - 1;

/// Noise for activation layer `layer` and sample `sample` comes from its own
/// ChaCha stream, so draws do not depend on how a batch is split up.
fn noise_rng(seed: u64, layer: usize, sample: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((layer as u64) << 40) | sample);
    rng
}

/// Caches from one forward pass, consumed by [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    identity: (u64, u64),
    batch: usize,
    training: bool,
    seed: u64,
    first_sample: u64,
    /// Input of every layer.
    inputs: Vec<Vec<f64>>,
    argmax: Vec<Vec<usize>>,
    /// Per-batch noisy coefficients, by layer.
    batch_coeffs: Vec<Option<RationalCoefficients>>,
    output: Vec<f64>,
}

impl ForwardTrace {
    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn output(&self) -> &[f64] {
        &self.output
    }

    /// Input to layer `index`.
    pub fn layer_input(&self, index: usize) -> &[f64] {
        &self.inputs[index]
    }
}

/// Gradients for every layer parameter (same layout as [`Network::params`])
/// and every trainable unit; frozen units carry `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub layers: Vec<f64>,
    pub units: Vec<Option<Vec<f64>>>,
}

impl GradientSet {
    pub fn zeros(net: &Network) -> Self {
        Self {
            layers: vec![0.0; net.params().len()],
            units: net
                .units()
                .iter()
                .map(|u| u.trainable.then(|| vec![0.0; u.coefficients.orders().len()]))
                .collect(),
        }
    }

    /// Element-wise `self += other`.
    pub fn add(&mut self, other: &GradientSet) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            *a += b;
        }
        for (a, b) in self.units.iter_mut().zip(&other.units) {
            if let (Some(a), Some(b)) = (a, b) {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
            }
        }
    }

    pub fn scale(&mut self, k: f64) {
        self.layers.iter_mut().for_each(|g| *g *= k);
        for u in self.units.iter_mut().flatten() {
            u.iter_mut().for_each(|g| *g *= k);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.layers.iter().all(|&g| g == 0.0)
            && self.units.iter().flatten().flatten().all(|&g| g == 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|g| g.is_finite())
            && self.units.iter().flatten().flatten().all(|g| g.is_finite())
    }
}

/// Forward pass over `batch` (samples back to back). Output rows are class
/// log-probabilities when the network ends in a softmax. With `training` set,
/// randomized units draw fresh noise from `seed`; otherwise clean coefficients are used.
pub fn forward(
    net: &Network,
    batch: &[f64],
    training: bool,
    seed: u64,
) -> Result<(Vec<f64>, ForwardTrace)> {
    forward_at(net, batch, training, seed, 0)
}

/// [`forward`] for a slice of a larger batch whose first sample has global
/// index `first_sample`; noise draws are keyed by global sample index.
pub fn forward_at(
    net: &Network,
    batch: &[f64],
    training: bool,
    seed: u64,
    first_sample: u64,
) -> Result<(Vec<f64>, ForwardTrace)> {
    let in_len = net.input_len();
    if !batch.len().is_multiple_of(in_len) {
        return Err(Error::Shape(format!(
            "batch length {} is not a multiple of the input size {in_len}",
            batch.len()
        )));
    }
    let n = batch.len() / in_len;
    let shapes = net.shapes();
    let layers = &net.spec().layers;
    let mut inputs = Vec::with_capacity(layers.len());
    let mut argmax = vec![Vec::new(); layers.len()];
    let mut batch_coeffs = vec![None; layers.len()];
    let mut cur = batch.to_vec();

    for (l, layer) in layers.iter().enumerate() {
        let (shape_in, shape_out) = (shapes[l], shapes[l + 1]);
        let mut out = vec![0.0; n * shape_out.len()];
        match *layer {
            LayerSpec::Dense { in_dim, out_dim } => {
                let slot = net.slots()[l].as_ref().expect("dense layer has parameters");
                let p = net.params();
                kernels::dense_forward(
                    &cur,
                    n,
                    &p[slot.weights.clone()],
                    &p[slot.bias.clone()],
                    in_dim,
                    out_dim,
                    &mut out,
                );
            }
            LayerSpec::Conv2d { .. } => {
                let slot = net.slots()[l].as_ref().expect("conv layer has parameters");
                let p = net.params();
                kernels::conv_forward(
                    &conv_geometry(layer, shape_in),
                    &cur,
                    n,
                    &p[slot.weights.clone()],
                    &p[slot.bias.clone()],
                    &mut out,
                );
            }
            LayerSpec::MaxPool { window, stride } => {
                let g = PoolGeometry {
                    channels: shape_in.channels,
                    height: shape_in.height,
                    width: shape_in.width,
                    window,
                    stride,
                };
                argmax[l] = vec![0; out.len()];
                kernels::pool_forward(&g, &cur, n, &mut out, &mut argmax[l]);
            }
            LayerSpec::Activation { unit_index } => {
                let unit = &net.units()[unit_index];
                let d = shape_in.len();
                if training && unit.is_noisy() {
                    match unit.noise {
                        NoiseGranularity::PerBatch => {
                            let mut rng = noise_rng(seed, l, BATCH_STREAM);
                            let c = sample_noisy_coeffs_with(
                                &unit.coefficients,
                                unit.noise_alpha,
                                &mut rng,
                            );
                            eval_pau_into(&cur, &c, unit.mode, &mut out)?;
                            batch_coeffs[l] = Some(c);
                        }
                        NoiseGranularity::PerElement => {
                            for s in 0..n {
                                let mut rng = noise_rng(seed, l, first_sample + s as u64);
                                let rows = sample_noisy_rows(
                                    &unit.coefficients,
                                    unit.noise_alpha,
                                    d,
                                    &mut rng,
                                );
                                eval_pau_rows_into(
                                    &cur[s * d..(s + 1) * d],
                                    &rows,
                                    unit.coefficients.orders(),
                                    unit.mode,
                                    &mut out[s * d..(s + 1) * d],
                                )?;
                            }
                        }
                    }
                } else {
                    eval_pau_into(&cur, &unit.coefficients, unit.mode, &mut out)?;
                }
            }
            LayerSpec::Fixed { activation } => {
                for (o, &x) in out.iter_mut().zip(&cur) {
                    *o = activation.eval(x);
                }
            }
            LayerSpec::Flatten => out.copy_from_slice(&cur),
            LayerSpec::Softmax => kernels::log_softmax_forward(&cur, shape_in.len(), &mut out),
        }
        inputs.push(std::mem::replace(&mut cur, out));
    }

    let trace = ForwardTrace {
        identity: net.identity(),
        batch: n,
        training,
        seed,
        first_sample,
        inputs,
        argmax,
        batch_coeffs,
        output: cur.clone(),
    };
    Ok((cur, trace))
}

fn conv_geometry(layer: &LayerSpec, shape_in: super::Shape) -> ConvGeometry {
    match *layer {
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        } => ConvGeometry {
            in_channels,
            out_channels,
            height: shape_in.height,
            width: shape_in.width,
            kernel,
            stride,
            padding,
        },
        _ => unreachable!("not a convolution"),
    }
}

/// Backpropagates `loss_grad` (∂loss/∂output, same shape as the output).
/// Randomized units are differentiated at the coefficients drawn in the forward pass.
pub fn backward(net: &Network, trace: &ForwardTrace, loss_grad: &[f64]) -> Result<GradientSet> {
    if trace.identity != net.identity() {
        return Err(Error::StaleTrace);
    }
    if loss_grad.len() != trace.output.len() {
        return Err(Error::mismatch(
            "loss gradient",
            trace.output.len(),
            loss_grad.len(),
        ));
    }
    let n = trace.batch;
    let shapes = net.shapes();
    let layers = &net.spec().layers;
    let mut grads = GradientSet::zeros(net);
    let mut g = loss_grad.to_vec();

    for (l, layer) in layers.iter().enumerate().rev() {
        let x = &trace.inputs[l];
        let shape_in = shapes[l];
        // The first layer's input gradient is never needed unless it is the only one.
        let need_input = l > 0;
        let mut d_in = vec![0.0; if need_input { x.len() } else { 0 }];
        match *layer {
            LayerSpec::Dense { in_dim, out_dim } => {
                let slot = net.slots()[l].as_ref().expect("dense layer has parameters");
                let (dw, db) = grads.layers[slot.weights.start..slot.bias.end]
                    .split_at_mut(slot.weights.len());
                kernels::dense_backward(
                    x,
                    n,
                    &net.params()[slot.weights.clone()],
                    in_dim,
                    out_dim,
                    &g,
                    dw,
                    db,
                    need_input.then_some(&mut d_in[..]),
                );
            }
            LayerSpec::Conv2d { .. } => {
                let slot = net.slots()[l].as_ref().expect("conv layer has parameters");
                let (dw, db) = grads.layers[slot.weights.start..slot.bias.end]
                    .split_at_mut(slot.weights.len());
                kernels::conv_backward(
                    &conv_geometry(layer, shape_in),
                    x,
                    n,
                    &net.params()[slot.weights.clone()],
                    &g,
                    dw,
                    db,
                    need_input.then_some(&mut d_in[..]),
                );
            }
            LayerSpec::MaxPool { .. } => {
                if need_input {
                    kernels::pool_backward(&trace.argmax[l], &g, &mut d_in);
                }
            }
            LayerSpec::Activation { unit_index } => {
                let unit = &net.units()[unit_index];
                let orders = unit.coefficients.orders();
                let mut scratch = vec![0.0; orders.len()];
                let acc = match grads.units[unit_index].as_mut() {
                    Some(acc) => acc,
                    None => &mut scratch,
                };
                let mut d_x = vec![0.0; x.len()];
                if trace.training && unit.is_noisy() {
                    match unit.noise {
                        NoiseGranularity::PerBatch => {
                            let c = trace.batch_coeffs[l]
                                .as_ref()
                                .expect("per-batch draw recorded in forward");
                            backward_into(x, &g, c, unit.mode, &mut d_x, acc)?;
                        }
                        NoiseGranularity::PerElement => {
                            let d = shape_in.len();
                            for s in 0..n {
                                let mut rng =
                                    noise_rng(trace.seed, l, trace.first_sample + s as u64);
                                let rows = sample_noisy_rows(
                                    &unit.coefficients,
                                    unit.noise_alpha,
                                    d,
                                    &mut rng,
                                );
                                let span = s * d..(s + 1) * d;
                                backward_rows_into(
                                    &x[span.clone()],
                                    &g[span.clone()],
                                    &rows,
                                    orders,
                                    unit.mode,
                                    &mut d_x[span],
                                    acc,
                                )?;
                            }
                        }
                    }
                } else {
                    backward_into(x, &g, &unit.coefficients, unit.mode, &mut d_x, acc)?;
                }
                if need_input {
                    d_in = d_x;
                }
            }
            LayerSpec::Fixed { activation } => {
                if need_input {
                    for ((d, &xv), &gv) in d_in.iter_mut().zip(x).zip(&g) {
                        *d = gv * activation.derivative(xv);
                    }
                }
            }
            LayerSpec::Flatten => {
                if need_input {
                    d_in.copy_from_slice(&g);
                }
            }
            LayerSpec::Softmax => {
                if need_input {
                    let out = if l + 1 < layers.len() {
                        &trace.inputs[l + 1]
                    } else {
                        &trace.output
                    };
                    kernels::log_softmax_backward(out, &g, shape_in.len(), &mut d_in);
                }
            }
        }
        g = d_in;
    }

    if let Some(mask) = net.mask() {
        for (d, &live) in grads.layers.iter_mut().zip(mask) {
            if !live {
                *d = 0.0;
            }
        }
    }
    Ok(grads)
}

/// Mean negative log-likelihood of `labels` under row-wise log-probabilities,
/// and its gradient with respect to those log-probabilities.
pub fn softmax_cross_entropy(
    log_probs: &[f64],
    labels: &[u8],
    classes: usize,
) -> Result<(f64, Vec<f64>)> {
    if log_probs.len() != labels.len() * classes {
        return Err(Error::mismatch(
            "log-probabilities",
            labels.len() * classes,
            log_probs.len(),
        ));
    }
    let n = labels.len();
    let mut grad = vec![0.0; log_probs.len()];
    if n == 0 {
        return Ok((0.0, grad));
    }
    let scale = 1.0 / n as f64;
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let y = y as usize;
        if y >= classes {
            return Err(Error::Shape(format!("label {y} outside 0..{classes}")));
        }
        loss -= log_probs[i * classes + y];
        grad[i * classes + y] = -scale;
    }
    Ok((loss * scale, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approx::TargetActivation;
    use crate::network::{build_network, NetworkSpec, PauConfig, PauInit, Shape};
    use crate::rational::{RationalCoefficients, SafetyMode};
    use rand::{Rng, SeedableRng};

    fn random(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1.0)
    }

    /// Total loss `Σ w·out` for a fixed random weighting `w` of the outputs.
    fn weighted_loss(net: &Network, x: &[f64], w: &[f64], training: bool) -> f64 {
        let (out, _) = forward(net, x, training, 11).unwrap();
        out.iter().zip(w).map(|(a, b)| a * b).sum()
    }

    /// Coefficient derivatives are only compared for noise-free units: with the
    /// uniform draws held fixed, the noise width α|c| moves with c.
    fn check_network_gradients(net: &mut Network, training: bool) {
        let x = random(3 * net.input_len(), 1);
        let w = random(3 * net.output_len(), 2);
        let (_, trace) = forward(net, &x, training, 11).unwrap();
        let grads = backward(net, &trace, &w).unwrap();
        let h = 1e-5;
        for i in 0..net.params().len() {
            let base = net.params()[i];
            net.update(|p, _| p[i] = base + h);
            let up = weighted_loss(net, &x, &w, training);
            net.update(|p, _| p[i] = base - h);
            let down = weighted_loss(net, &x, &w, training);
            net.update(|p, _| p[i] = base);
            let fd = (up - down) / (2.0 * h);
            assert!(rel_err(fd, grads.layers[i]) < 1e-4, "param {i}: {fd} vs {}", grads.layers[i]);
        }
        for u in 0..net.units().len() {
            if training && net.units()[u].is_noisy() {
                continue;
            }
            for j in 0..net.units()[u].coefficients.orders().len() {
                let base = net.units()[u].coefficients.as_slice()[j];
                let set = |net: &mut Network, v: f64| {
                    net.update(|_, units| units[u].coefficients.as_mut_slice()[j] = v)
                };
                set(net, base + h);
                let up = weighted_loss(net, &x, &w, training);
                set(net, base - h);
                let down = weighted_loss(net, &x, &w, training);
                set(net, base);
                let fd = (up - down) / (2.0 * h);
                let g = grads.units[u].as_ref().unwrap()[j];
                assert!(rel_err(fd, g) < 1e-4, "unit {u} coeff {j}: {fd} vs {g}");
            }
        }
    }

    fn toy() -> NetworkSpec {
        NetworkSpec {
            input: Shape::flat(4),
            layers: vec![
                LayerSpec::dense(4, 3),
                LayerSpec::Activation { unit_index: 0 },
                LayerSpec::dense(3, 2),
            ],
        }
    }

    #[test]
    fn toy_network_matches_finite_differences() {
        let mut net = build_network(&toy(), &PauConfig::default(), 3).unwrap();
        assert_eq!(net.params().len(), 15 + 8);
        check_network_gradients(&mut net, false);
    }

    #[test]
    fn toy_network_with_softmax_and_tanh_init() {
        let mut spec = toy();
        spec.layers.push(LayerSpec::Softmax);
        let cfg = PauConfig {
            init: PauInit::Builtin("tanh".into()),
            ..PauConfig::default()
        };
        let mut net = build_network(&spec, &cfg, 4).unwrap();
        check_network_gradients(&mut net, false);
    }

    #[test]
    fn randomized_units_match_finite_differences_with_fixed_noise() {
        for noise in [NoiseGranularity::PerElement, NoiseGranularity::PerBatch] {
            let cfg = PauConfig {
                noise_alpha: 0.05,
                noise,
                ..PauConfig::default()
            };
            let mut net = build_network(&toy(), &cfg, 5).unwrap();
            check_network_gradients(&mut net, true);
        }
    }

    #[test]
    fn conv_network_matches_finite_differences() {
        let spec = NetworkSpec {
            input: Shape::image(1, 6, 6),
            layers: vec![
                LayerSpec::conv(1, 2, 3, 1),
                LayerSpec::Activation { unit_index: 0 },
                LayerSpec::pool2(),
                LayerSpec::Flatten,
                LayerSpec::dense(18, 3),
                LayerSpec::Softmax,
            ],
        };
        let mut net = build_network(&spec, &PauConfig::default(), 6).unwrap();
        check_network_gradients(&mut net, false);
    }

    #[test]
    fn zero_weights_give_uniform_probabilities() {
        let mut net = build_network(&NetworkSpec::mlp(&[6, 5, 4]), &PauConfig::default(), 0).unwrap();
        net.update(|p, _| p.fill(0.0));
        let (out, _) = forward(&net, &random(12, 3), false, 0).unwrap();
        for v in out {
            assert!((v - (0.25f64).ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let net = build_network(&NetworkSpec::mlp(&[6, 5, 4]), &PauConfig::default(), 1).unwrap();
        let (out, _) = forward(&net, &random(60, 4), false, 0).unwrap();
        for row in out.chunks(4) {
            let s: f64 = row.iter().map(|v| v.exp()).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let net = build_network(&NetworkSpec::mlp(&[6, 5, 4]), &PauConfig::default(), 1).unwrap();
        let (out, trace) = forward(&net, &random(12, 4), false, 0).unwrap();
        let g = backward(&net, &trace, &vec![0.0; out.len()]).unwrap();
        assert!(g.is_zero());
    }

    #[test]
    fn frozen_units_have_no_gradients() {
        let cfg = PauConfig {
            trainable: false,
            ..PauConfig::default()
        };
        let net = build_network(&NetworkSpec::mlp(&[6, 5, 4]), &cfg, 1).unwrap();
        let (out, trace) = forward(&net, &random(12, 4), false, 0).unwrap();
        let g = backward(&net, &trace, &vec![1.0; out.len()]).unwrap();
        assert_eq!(g.units, vec![None]);
    }

    #[test]
    fn stale_traces_are_rejected() {
        let mut net = build_network(&NetworkSpec::mlp(&[6, 5, 4]), &PauConfig::default(), 1).unwrap();
        let (out, trace) = forward(&net, &random(12, 4), false, 0).unwrap();
        net.update(|p, _| p[0] += 1.0);
        let err = backward(&net, &trace, &vec![0.0; out.len()]).unwrap_err();
        assert!(matches!(err, Error::StaleTrace));
        let other = build_network(&NetworkSpec::mlp(&[6, 5, 4]), &PauConfig::default(), 1).unwrap();
        assert!(backward(&other, &trace, &vec![0.0; out.len()]).is_err());
    }

    #[test]
    fn noise_free_training_equals_inference() {
        let net = build_network(&NetworkSpec::mlp(&[6, 5, 4]), &PauConfig::default(), 1).unwrap();
        let x = random(30, 4);
        let (a, _) = forward(&net, &x, true, 9).unwrap();
        let (b, _) = forward(&net, &x, false, 0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn noise_depends_on_seed_and_is_split_invariant() {
        let cfg = PauConfig {
            noise_alpha: 0.1,
            ..PauConfig::default()
        };
        let net = build_network(&NetworkSpec::mlp(&[6, 5, 4]), &cfg, 1).unwrap();
        let x = random(30, 4);
        let (a, _) = forward(&net, &x, true, 9).unwrap();
        let (b, _) = forward(&net, &x, true, 9).unwrap();
        let (c, _) = forward(&net, &x, true, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let (head, _) = forward_at(&net, &x[..12], true, 9, 0).unwrap();
        let (tail, _) = forward_at(&net, &x[12..], true, 9, 2).unwrap();
        assert_eq!([head, tail].concat(), a);
        let (clean, _) = forward(&net, &x, false, 9).unwrap();
        assert_ne!(a, clean);
    }

    #[test]
    fn shared_unit_affects_every_element() {
        let mut net = build_network(&NetworkSpec::mlp(&[6, 5, 4]), &PauConfig::default(), 1).unwrap();
        let x = random(6, 4);
        let (_, before) = forward(&net, &x, false, 0).unwrap();
        net.update(|_, units| units[0].coefficients.as_mut_slice()[0] += 0.5);
        let (_, after) = forward(&net, &x, false, 0).unwrap();
        let c = &net.units()[0].coefficients;
        for ((a, b), &z) in before
            .layer_input(2)
            .iter()
            .zip(after.layer_input(2))
            .zip(before.layer_input(1))
        {
            let q = crate::rational::denominator_value(z, c, SafetyMode::Safe);
            assert!((b - a - 0.5 / q).abs() < 1e-14);
        }
    }

    /// Coefficient gradients of a randomized unit equal the clean analytic
    /// gradients evaluated at the regenerated noisy coefficients.
    #[test]
    fn randomized_coefficient_gradients_use_sampled_noise() {
        let spec = NetworkSpec {
            input: Shape::flat(5),
            layers: vec![LayerSpec::Activation { unit_index: 0 }],
        };
        for noise in [NoiseGranularity::PerElement, NoiseGranularity::PerBatch] {
            let cfg = PauConfig {
                noise_alpha: 0.2,
                noise,
                ..PauConfig::default()
            };
            let net = build_network(&spec, &cfg, 0).unwrap();
            let x = random(15, 8);
            let w = random(15, 9);
            let (_, trace) = forward_at(&net, &x, true, 21, 4).unwrap();
            let got = backward(&net, &trace, &w).unwrap().units[0].clone().unwrap();
            let clean = &net.units()[0].coefficients;
            let mut want = vec![0.0; clean.orders().len()];
            for s in 0..3 {
                let rows: Vec<RationalCoefficients> = match noise {
                    NoiseGranularity::PerBatch => {
                        let mut rng = noise_rng(21, 0, BATCH_STREAM);
                        vec![sample_noisy_coeffs_with(clean, 0.2, &mut rng); 5]
                    }
                    NoiseGranularity::PerElement => {
                        let mut rng = noise_rng(21, 0, 4 + s as u64);
                        sample_noisy_rows(clean, 0.2, 5, &mut rng)
                            .chunks(clean.orders().len())
                            .map(|r| RationalCoefficients::from_flat(r.to_vec(), clean.orders()).unwrap())
                            .collect()
                    }
                };
                for (i, row) in rows.iter().enumerate() {
                    let g = crate::rational::grad_pau(x[s * 5 + i], row, SafetyMode::Safe).unwrap();
                    for (acc, d) in want.iter_mut().zip(g.d_numerator.iter().chain(&g.d_denominator)) {
                        *acc += w[s * 5 + i] * d;
                    }
                }
            }
            for (a, b) in got.iter().zip(&want) {
                assert!(rel_err(*a, *b) < 1e-12, "{noise:?}: {got:?} vs {want:?}");
            }
            let (_, clean_trace) = forward(&net, &x, false, 0).unwrap();
            let clean_grad = backward(&net, &clean_trace, &w).unwrap().units[0].clone().unwrap();
            assert_ne!(clean_grad, got);
        }
    }

    #[test]
    fn rational_init_tracks_leaky_relu_network() {
        let spec = NetworkSpec::mlp(&[784, 128, 10]);
        let pau = build_network(&spec, &PauConfig::default(), 2).unwrap();
        let mut fixed = build_network(
            &spec.with_fixed_activations(TargetActivation::LeakyRelu { alpha: 0.01 }),
            &PauConfig::default(),
            2,
        )
        .unwrap();
        fixed.update(|p, _| p.copy_from_slice(pau.params()));
        for seed in 0..5 {
            let mut x = random(784, 100 + seed);
            let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            x.iter_mut().for_each(|v| *v /= norm);
            let logits = |net: &Network| {
                let (_, t) = forward(net, &x, false, 0).unwrap();
                t.layer_input(3).to_vec()
            };
            let (a, b) = (logits(&pau), logits(&fixed));
            let diff = a.iter().zip(&b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
            assert!(diff <= 0.5, "{diff}");
        }
    }

    #[test]
    fn unsafe_pole_propagates() {
        let spec = NetworkSpec {
            input: Shape::flat(2),
            layers: vec![LayerSpec::Activation { unit_index: 0 }],
        };
        let cfg = PauConfig {
            init: PauInit::Coefficients(RationalCoefficients::new(vec![0.0, 1.0], vec![-0.5]).unwrap()),
            mode: SafetyMode::Unsafe,
            ..PauConfig::default()
        };
        let net = build_network(&spec, &cfg, 0).unwrap();
        let err = forward(&net, &[1.0, 2.0], false, 0).unwrap_err();
        assert!(matches!(err, Error::PoleAt { index: 1, .. }), "{err:?}");
    }

    #[test]
    fn cross_entropy_gradient() {
        let lp = [(0.25f64).ln(); 8];
        let (loss, grad) = softmax_cross_entropy(&lp, &[1, 3], 4).unwrap();
        assert!((loss - (4.0f64).ln()).abs() < 1e-15);
        assert_eq!(grad[1], -0.5);
        assert_eq!(grad[7], -0.5);
        assert_eq!(grad.iter().filter(|&&g| g != 0.0).count(), 2);
        assert!(softmax_cross_entropy(&lp, &[4, 0], 4).is_err());
    }
}
