//! Scalar regression onto a fixed activation, a quick end-to-end check that
//! a rational unit can learn a target curve.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::optim::{OptimizerKind, OptimizerState};
use crate::approx::TargetActivation;
use crate::error::{Error, Result};
use crate::network::{backward, build_network, forward, LayerSpec, Network, NetworkSpec, PauConfig, Shape};

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionData {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
}

impl RegressionData {
    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }
}

/// `n` points with `x` uniform on `range` and `y = target(x)`.
pub fn synth_regression(
    target: &TargetActivation,
    n: usize,
    range: (f64, f64),
    seed: u64,
) -> RegressionData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs: Vec<f64> = (0..n).map(|_| rng.gen_range(range.0..=range.1)).collect();
    let ys = xs.iter().map(|&x| target.eval(x)).collect();
    RegressionData { xs, ys }
}

/// The model `x ↦ F(x)` made of a single rational unit.
pub fn unit_regressor(pau: &PauConfig) -> Result<Network> {
    let spec = NetworkSpec {
        input: Shape::flat(1),
        layers: vec![LayerSpec::Activation { unit_index: 0 }],
    };
    build_network(&spec, pau, 0)
}

fn mse(pred: &[f64], ys: &[f64]) -> f64 {
    pred.iter().zip(ys).map(|(p, y)| (p - y) * (p - y)).sum::<f64>() / ys.len() as f64
}

/// Full-batch mean-squared-error training of a scalar network for `steps`
/// optimizer steps. Returns the trained network and its final MSE.
pub fn fit_regression(
    mut net: Network,
    data: &RegressionData,
    steps: usize,
    optimizer: OptimizerKind,
    seed: u64,
) -> Result<(Network, f64)> {
    if net.input_len() != 1 || net.output_len() != 1 {
        return Err(Error::Shape("regression needs a scalar network".into()));
    }
    if data.is_empty() {
        return Ok((net, 0.0));
    }
    let mut opt = OptimizerState::new(optimizer, None, &net)?;
    let scale = 2.0 / data.len() as f64;
    for step in 0..steps {
        let (pred, trace) = forward(&net, &data.xs, true, seed.wrapping_add(step as u64))?;
        let grad: Vec<f64> = pred.iter().zip(&data.ys).map(|(p, y)| scale * (p - y)).collect();
        let grads = backward(&net, &trace, &grad)?;
        if !grads.is_finite() {
            return Err(Error::Diverged { epoch: 0, step });
        }
        opt.step(&mut net, &grads)?;
    }
    let (pred, _) = forward(&net, &data.xs, false, 0)?;
    let err = mse(&pred, &data.ys);
    Ok((net, err))
}
