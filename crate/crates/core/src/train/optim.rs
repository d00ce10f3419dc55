//! Momentum SGD and Adam over a network's layer parameters and unit coefficients.
//!
//! Layer parameters and rational-unit coefficients form separate groups: the
//! unit group may use its own learning rate and never receives weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{GradientSet, Network};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum OptimizerKind {
    Sgd {
        lr: f64,
        momentum: f64,
        #[serde(default)]
        weight_decay: f64,
    },
    Adam {
        lr: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
        #[serde(default)]
        weight_decay: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl OptimizerKind {
    pub fn adam(lr: f64) -> Self {
        OptimizerKind::Adam {
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            weight_decay: 0.0,
        }
    }

    pub fn sgd(lr: f64, momentum: f64) -> Self {
        OptimizerKind::Sgd {
            lr,
            momentum,
            weight_decay: 0.0,
        }
    }

    pub fn lr(&self) -> f64 {
        match *self {
            OptimizerKind::Sgd { lr, .. } | OptimizerKind::Adam { lr, .. } => lr,
        }
    }

    fn weight_decay(&self) -> f64 {
        match *self {
            OptimizerKind::Sgd { weight_decay, .. } | OptimizerKind::Adam { weight_decay, .. } => {
                weight_decay
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            OptimizerKind::Sgd {
                lr,
                momentum,
                weight_decay,
            } => lr > 0.0 && (0.0..1.0).contains(&momentum) && weight_decay >= 0.0,
            OptimizerKind::Adam {
                lr,
                beta1,
                beta2,
                eps,
                weight_decay,
            } => {
                lr > 0.0
                    && (0.0..1.0).contains(&beta1)
                    && (0.0..1.0).contains(&beta2)
                    && eps > 0.0
                    && weight_decay >= 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// Moment buffers for one parameter group.
#[derive(Debug, Clone, Default, PartialEq)]
struct Moments {
    first: Vec<f64>,
    second: Vec<f64>,
}

impl Moments {
    fn new(len: usize) -> Self {
        Self {
            first: vec![0.0; len],
            second: vec![0.0; len],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    /// Learning rate for unit coefficients; `None` uses the global rate.
    pub pau_lr: Option<f64>,
    /// Multiplier applied to both learning rates (for step decay).
    pub lr_scale: f64,
    layers: Moments,
    units: Vec<Option<Moments>>,
    step: u64,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, pau_lr: Option<f64>, net: &Network) -> Result<Self> {
        kind.validate()?;
        if let Some(lr) = pau_lr {
            if !(lr > 0.0) {
                return Err(Error::InvalidConfig(format!("PAU learning rate {lr} must be positive")));
            }
        }
        Ok(Self {
            kind,
            pau_lr,
            lr_scale: 1.0,
            layers: Moments::new(net.params().len()),
            units: net
                .units()
                .iter()
                .map(|u| u.trainable.then(|| Moments::new(u.coefficients.orders().len())))
                .collect(),
            step: 0,
        })
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update to `net` from `grads`.
    pub fn step(&mut self, net: &mut Network, grads: &GradientSet) -> Result<()> {
        if grads.layers.len() != self.layers.first.len() {
            return Err(Error::mismatch(
                "layer gradients",
                self.layers.first.len(),
                grads.layers.len(),
            ));
        }
        if grads.units.len() != self.units.len() {
            return Err(Error::mismatch("unit gradients", self.units.len(), grads.units.len()));
        }
        for (i, (g, m)) in grads.units.iter().zip(&self.units).enumerate() {
            match (g, m) {
                (Some(g), Some(m)) if g.len() == m.first.len() => {}
                (None, None) => {}
                _ => {
                    return Err(Error::Shape(format!(
                        "gradient for unit {i} does not match its trainable state"
                    )))
                }
            }
        }
        self.step += 1;
        let t = self.step;
        let kind = self.kind;
        let layer_lr = kind.lr() * self.lr_scale;
        let unit_lr = self.pau_lr.unwrap_or(kind.lr()) * self.lr_scale;
        let decay = kind.weight_decay();
        let (layers, units) = (&mut self.layers, &mut self.units);
        net.update(|params, pau| {
            apply(kind, t, layer_lr, decay, params, &grads.layers, layers);
            for ((unit, g), m) in pau.iter_mut().zip(&grads.units).zip(units.iter_mut()) {
                if let (Some(g), Some(m)) = (g, m) {
                    apply(kind, t, unit_lr, 0.0, unit.coefficients.as_mut_slice(), g, m);
                }
            }
        });
        Ok(())
    }
}

fn apply(
    kind: OptimizerKind,
    t: u64,
    lr: f64,
    decay: f64,
    params: &mut [f64],
    grads: &[f64],
    m: &mut Moments,
) {
    match kind {
        OptimizerKind::Sgd { momentum, .. } => sgd_step(params, grads, &mut m.first, lr, momentum, decay),
        OptimizerKind::Adam {
            beta1, beta2, eps, ..
        } => adam_step(params, grads, m, t, lr, beta1, beta2, eps, decay),
    }
}

/// `v ← μ·v + (g + λ·w)`, `w ← w − η·v`.
pub fn sgd_step(
    params: &mut [f64],
    grads: &[f64],
    velocity: &mut [f64],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) {
    for ((w, &g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        let g = g + weight_decay * *w;
        *v = momentum * *v + g;
        *w -= lr * *v;
    }
}

/// Adam with bias-corrected moments; `t` is the 1-based step number.
#[allow(clippy::too_many_arguments)]
fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    m: &mut Moments,
    t: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
) {
    let c1 = 1.0 - beta1.powf(t as f64);
    let c2 = 1.0 - beta2.powf(t as f64);
    for (((w, &g), m1), m2) in params
        .iter_mut()
        .zip(grads)
        .zip(m.first.iter_mut())
        .zip(m.second.iter_mut())
    {
        let g = g + weight_decay * *w;
        *m1 = beta1 * *m1 + (1.0 - beta1) * g;
        *m2 = beta2 * *m2 + (1.0 - beta2) * g * g;
        *w -= lr * (*m1 / c1) / ((*m2 / c2).sqrt() + eps);
    }
}
