//! A small feedforward network with one shared rational unit per activation layer.

mod checkpoint;
mod kernels;
mod pass;

use std::ops::Range;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::approx::{builtin_coefficients, TargetActivation};
use crate::error::{Error, Result};
use crate::rational::{NoiseGranularity, RationalCoefficients, SafetyMode};

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use pass::{backward, forward, forward_at, softmax_cross_entropy, ForwardTrace, GradientSet};

pub(crate) use kernels::{ConvGeometry, PoolGeometry};

/// Per-sample tensor shape, `channels × height × width`. Flat vectors use `h = w = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn flat(len: usize) -> Self {
        Self::image(len, 1, 1)
    }

    pub fn image(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_flat(&self) -> bool {
        self.height == 1 && self.width == 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum LayerSpec {
    Dense {
        in_dim: usize,
        out_dim: usize,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        #[serde(default)]
        padding: usize,
    },
    MaxPool {
        window: usize,
        stride: usize,
    },
    /// Shared rational unit `unit_index`.
    Activation {
        unit_index: usize,
    },
    /// A fixed closed-form activation, for baselines.
    Fixed {
        activation: TargetActivation,
    },
    Flatten,
    /// Terminal log-softmax.
    Softmax,
}

impl LayerSpec {
    pub fn dense(in_dim: usize, out_dim: usize) -> Self {
        LayerSpec::Dense { in_dim, out_dim }
    }

    pub fn conv(in_channels: usize, out_channels: usize, kernel: usize, padding: usize) -> Self {
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride: 1,
            padding,
        }
    }

    pub fn pool2() -> Self {
        LayerSpec::MaxPool {
            window: 2,
            stride: 2,
        }
    }

    /// Weight and bias counts of a parametric layer.
    pub fn param_shape(&self) -> Option<(usize, usize)> {
        match *self {
            LayerSpec::Dense { in_dim, out_dim } => Some((in_dim * out_dim, out_dim)),
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => Some((out_channels * in_channels * kernel * kernel, out_channels)),
            _ => None,
        }
    }

    /// Incoming connections per output unit.
    pub fn fan_in(&self) -> Option<usize> {
        match *self {
            LayerSpec::Dense { in_dim, .. } => Some(in_dim),
            LayerSpec::Conv2d {
                in_channels,
                kernel,
                ..
            } => Some(in_channels * kernel * kernel),
            _ => None,
        }
    }
}

/// Layer list plus the per-sample input shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input: Shape,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    /// Dense stack `dims[0] → ... → dims[last]` with a rational unit after each
    /// hidden layer and a terminal softmax.
    pub fn mlp(dims: &[usize]) -> Self {
        let mut layers = Vec::new();
        let mut unit = 0;
        for (i, pair) in dims.windows(2).enumerate() {
            layers.push(LayerSpec::dense(pair[0], pair[1]));
            if i + 2 < dims.len() {
                layers.push(LayerSpec::Activation { unit_index: unit });
                unit += 1;
            }
        }
        layers.push(LayerSpec::Softmax);
        Self {
            input: Shape::flat(dims.first().copied().unwrap_or(0)),
            layers,
        }
    }

    /// LeNet-5 on 28×28 inputs: the first convolution pads by 2 so the third
    /// one sees a 5×5 map and produces 120 features.
    pub fn lenet() -> Self {
        use LayerSpec::*;
        Self {
            input: Shape::image(1, 28, 28),
            layers: vec![
                LayerSpec::conv(1, 6, 5, 2),
                Activation { unit_index: 0 },
                LayerSpec::pool2(),
                LayerSpec::conv(6, 16, 5, 0),
                Activation { unit_index: 1 },
                LayerSpec::pool2(),
                LayerSpec::conv(16, 120, 5, 0),
                Activation { unit_index: 2 },
                Flatten,
                LayerSpec::dense(120, 84),
                Activation { unit_index: 3 },
                LayerSpec::dense(84, 10),
                Softmax,
            ],
        }
    }

    /// VGG-8 on 28×28 inputs. Five 2×2 pools need a 32×32 map, so the first
    /// convolution pads by 3 (the same as zero-padding the image to 32×32 and
    /// then using same-padded 3×3 convolutions throughout).
    pub fn vgg8() -> Self {
        use LayerSpec::*;
        Self {
            input: Shape::image(1, 28, 28),
            layers: vec![
                LayerSpec::conv(1, 64, 3, 3),
                Activation { unit_index: 0 },
                LayerSpec::pool2(),
                LayerSpec::conv(64, 128, 3, 1),
                Activation { unit_index: 1 },
                LayerSpec::pool2(),
                LayerSpec::conv(128, 256, 3, 1),
                LayerSpec::conv(256, 256, 3, 1),
                Activation { unit_index: 2 },
                LayerSpec::pool2(),
                LayerSpec::conv(256, 512, 3, 1),
                LayerSpec::conv(512, 512, 3, 1),
                Activation { unit_index: 3 },
                LayerSpec::pool2(),
                LayerSpec::conv(512, 512, 3, 1),
                LayerSpec::conv(512, 512, 3, 1),
                Activation { unit_index: 4 },
                LayerSpec::pool2(),
                Flatten,
                LayerSpec::dense(512, 10),
                Softmax,
            ],
        }
    }

    /// The same architecture with every rational unit replaced by `target`.
    pub fn with_fixed_activations(&self, target: TargetActivation) -> Self {
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                LayerSpec::Activation { .. } => LayerSpec::Fixed { activation: target },
                other => other.clone(),
            })
            .collect();
        Self {
            input: self.input,
            layers,
        }
    }

    pub fn unit_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| matches!(l, LayerSpec::Activation { .. }))
            .count()
    }

    /// Checks shape compatibility; returns the shape before each layer plus the output shape.
    pub fn shapes(&self) -> Result<Vec<Shape>> {
        if self.input.is_empty() {
            return Err(Error::Shape("input shape is empty".into()));
        }
        let units = self.unit_count();
        let mut seen = vec![false; units];
        let mut shapes = vec![self.input];
        let mut cur = self.input;
        for (i, layer) in self.layers.iter().enumerate() {
            let bad = |msg: String| Error::Shape(format!("layer {i} ({layer:?}): {msg}"));
            cur = match *layer {
                LayerSpec::Dense { in_dim, out_dim } => {
                    if !cur.is_flat() {
                        return Err(bad(format!("expects a flat input, got {cur:?}")));
                    }
                    if cur.channels != in_dim {
                        return Err(bad(format!("input has {} features", cur.channels)));
                    }
                    if out_dim == 0 {
                        return Err(bad("zero outputs".into()));
                    }
                    Shape::flat(out_dim)
                }
                LayerSpec::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    padding,
                } => {
                    if cur.channels != in_channels {
                        return Err(bad(format!("input has {} channels", cur.channels)));
                    }
                    if kernel == 0 || stride == 0 || out_channels == 0 {
                        return Err(bad("kernel, stride and channels must be positive".into()));
                    }
                    if cur.height + 2 * padding < kernel || cur.width + 2 * padding < kernel {
                        return Err(bad(format!("kernel larger than padded input {cur:?}")));
                    }
                    let g = ConvGeometry {
                        in_channels,
                        out_channels,
                        height: cur.height,
                        width: cur.width,
                        kernel,
                        stride,
                        padding,
                    };
                    Shape::image(out_channels, g.out_height(), g.out_width())
                }
                LayerSpec::MaxPool { window, stride } => {
                    if window == 0 || stride == 0 {
                        return Err(bad("window and stride must be positive".into()));
                    }
                    if cur.height < window || cur.width < window {
                        return Err(bad(format!("window larger than input {cur:?}")));
                    }
                    let g = PoolGeometry {
                        channels: cur.channels,
                        height: cur.height,
                        width: cur.width,
                        window,
                        stride,
                    };
                    Shape::image(cur.channels, g.out_height(), g.out_width())
                }
                LayerSpec::Activation { unit_index } => {
                    match seen.get_mut(unit_index) {
                        Some(slot) if !*slot => *slot = true,
                        Some(_) => return Err(bad("unit index used twice".into())),
                        None => return Err(bad(format!("unit index out of range 0..{units}"))),
                    }
                    cur
                }
                LayerSpec::Fixed { .. } => cur,
                LayerSpec::Flatten => Shape::flat(cur.len()),
                LayerSpec::Softmax => {
                    if i + 1 != self.layers.len() {
                        return Err(bad("softmax must be the last layer".into()));
                    }
                    if !cur.is_flat() {
                        return Err(bad("softmax expects a flat input".into()));
                    }
                    cur
                }
            };
            shapes.push(cur);
        }
        Ok(shapes)
    }
}

/// How rational units are initialized.
#[derive(Debug, Clone, PartialEq)]
pub enum PauInit {
    /// A builtin name such as `lrelu(0.01)`.
    Builtin(String),
    Coefficients(RationalCoefficients),
}

impl Default for PauInit {
    fn default() -> Self {
        PauInit::Builtin("lrelu(0.01)".into())
    }
}

impl PauInit {
    pub fn coefficients(&self) -> Result<RationalCoefficients> {
        match self {
            PauInit::Builtin(name) => builtin_coefficients(name),
            PauInit::Coefficients(c) => Ok(c.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PauConfig {
    pub init: PauInit,
    pub mode: SafetyMode,
    /// Relative noise width; 0 disables randomization.
    pub noise_alpha: f64,
    pub noise: NoiseGranularity,
    pub trainable: bool,
}

impl Default for PauConfig {
    fn default() -> Self {
        Self {
            init: PauInit::default(),
            mode: SafetyMode::Safe,
            noise_alpha: 0.0,
            noise: NoiseGranularity::PerElement,
            trainable: true,
        }
    }
}

/// One shared rational activation.
#[derive(Debug, Clone, PartialEq)]
pub struct PauUnit {
    pub coefficients: RationalCoefficients,
    pub mode: SafetyMode,
    pub noise_alpha: f64,
    pub noise: NoiseGranularity,
    pub trainable: bool,
}

impl PauUnit {
    pub fn new(coefficients: RationalCoefficients, cfg: &PauConfig) -> Self {
        Self {
            coefficients,
            mode: cfg.mode,
            noise_alpha: cfg.noise_alpha,
            noise: cfg.noise,
            trainable: cfg.trainable,
        }
    }

    pub fn is_noisy(&self) -> bool {
        self.noise_alpha > 0.0
    }
}

/// Where a parametric layer's weights and biases live in the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSlot {
    pub weights: Range<usize>,
    pub bias: Range<usize>,
}

/// Total and rational-unit parameter counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamCount {
    pub total: usize,
    pub pau: usize,
}

static NEXT_NETWORK_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Debug, Clone)]
pub struct Network {
    spec: NetworkSpec,
    shapes: Vec<Shape>,
    slots: Vec<Option<ParamSlot>>,
    params: Vec<f64>,
    units: Vec<PauUnit>,
    /// Live flags parallel to `params`; masked entries are held at zero.
    mask: Option<Vec<bool>>,
    seed: u64,
    id: u64,
    version: u64,
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec
            && self.params == other.params
            && self.units == other.units
            && self.mask == other.mask
            && self.seed == other.seed
    }
}

/// Builds a network with fan-in scaled uniform weights `U(−1/√fan_in, 1/√fan_in)`
/// (biases too) drawn in layer order from `seed`.
pub fn build_network(spec: &NetworkSpec, pau: &PauConfig, seed: u64) -> Result<Network> {
    let shapes = spec.shapes()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut slots = Vec::with_capacity(spec.layers.len());
    let mut params = Vec::new();
    for layer in &spec.layers {
        let slot = layer.param_shape().map(|(w, b)| {
            let start = params.len();
            let bound = (1.0 / layer.fan_in().unwrap_or(1).max(1) as f64).sqrt();
            params.extend((0..w + b).map(|_| rng.gen_range(-bound..bound)));
            ParamSlot {
                weights: start..start + w,
                bias: start + w..start + w + b,
            }
        });
        slots.push(slot);
    }
    let coefficients = pau.init.coefficients()?;
    let units = (0..spec.unit_count())
        .map(|_| PauUnit::new(coefficients.clone(), pau))
        .collect();
    Ok(Network::assemble(spec.clone(), shapes, slots, params, units, None, seed))
}

impl Network {
    fn assemble(
        spec: NetworkSpec,
        shapes: Vec<Shape>,
        slots: Vec<Option<ParamSlot>>,
        params: Vec<f64>,
        units: Vec<PauUnit>,
        mask: Option<Vec<bool>>,
        seed: u64,
    ) -> Self {
        Self {
            spec,
            shapes,
            slots,
            params,
            units,
            mask,
            seed,
            id: NEXT_NETWORK_ID.fetch_add(1, Ordering::Relaxed),
            version: 0,
        }
    }

    fn touch(&mut self) {
        self.version += 1;
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    /// Shape before each layer, followed by the output shape.
    pub fn shapes(&self) -> &[Shape] {
        &self.shapes
    }

    pub fn input_len(&self) -> usize {
        self.spec.input.len()
    }

    pub fn output_len(&self) -> usize {
        self.shapes.last().map_or(0, Shape::len)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn slots(&self) -> &[Option<ParamSlot>] {
        &self.slots
    }

    /// All layer weights and biases, flat.
    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn units(&self) -> &[PauUnit] {
        &self.units
    }

    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_deref()
    }

    /// Mutable access to layer parameters and units; masked entries are
    /// re-zeroed afterwards and any outstanding trace becomes stale.
    pub fn update<T>(&mut self, f: impl FnOnce(&mut [f64], &mut [PauUnit]) -> T) -> T {
        self.touch();
        let out = f(&mut self.params, &mut self.units);
        self.apply_mask();
        out
    }

    pub fn set_units(&mut self, f: impl FnMut(&mut PauUnit)) {
        self.touch();
        self.units.iter_mut().for_each(f);
    }

    /// Installs a live mask over the flat parameters (or clears it with `None`).
    pub fn set_mask(&mut self, mask: Option<Vec<bool>>) -> Result<()> {
        if let Some(m) = &mask {
            if m.len() != self.params.len() {
                return Err(Error::mismatch("parameter mask", self.params.len(), m.len()));
            }
        }
        self.touch();
        self.mask = mask;
        self.apply_mask();
        Ok(())
    }

    fn apply_mask(&mut self) {
        if let Some(mask) = &self.mask {
            for (p, &live) in self.params.iter_mut().zip(mask) {
                if !live {
                    *p = 0.0;
                }
            }
        }
    }

    /// `(total, pau)`: live layer parameters plus `m+1+n` per trainable unit.
    pub fn param_count(&self) -> ParamCount {
        let layers = match &self.mask {
            Some(m) => m.iter().filter(|&&live| live).count(),
            None => self.params.len(),
        };
        let pau = self
            .units
            .iter()
            .filter(|u| u.trainable)
            .map(|u| u.coefficients.orders().len())
            .sum();
        ParamCount {
            total: layers + pau,
            pau,
        }
    }

    pub(crate) fn identity(&self) -> (u64, u64) {
        (self.id, self.version)
    }
}

/// Free-function form of [`Network::param_count`].
pub fn param_count(net: &Network) -> ParamCount {
    net.param_count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lenet_accounting() {
        let net = build_network(&NetworkSpec::lenet(), &PauConfig::default(), 0).unwrap();
        assert_eq!(net.param_count(), ParamCount { total: 61_746, pau: 40 });
        assert_eq!(net.units().len(), 4);
        let shapes = net.shapes();
        assert_eq!(shapes[7], Shape::image(120, 1, 1));
        assert_eq!(*shapes.last().unwrap(), Shape::flat(10));
    }

    #[test]
    fn vgg8_accounting() {
        let spec = NetworkSpec::vgg8();
        let weights: usize = spec
            .layers
            .iter()
            .filter_map(|l| l.param_shape())
            .map(|(w, b)| w + b)
            .sum();
        assert_eq!(weights + 50, 9_224_508);
        let net = build_network(&spec, &PauConfig::default(), 0).unwrap();
        assert_eq!(net.param_count(), ParamCount { total: 9_224_508, pau: 50 });
    }

    #[test]
    fn mlp_accounting() {
        let net = build_network(&NetworkSpec::mlp(&[784, 128, 10]), &PauConfig::default(), 0).unwrap();
        assert_eq!(net.param_count().pau, 10);
        assert_eq!(net.param_count().total, 784 * 128 + 128 + 128 * 10 + 10 + 10);
        let frozen = PauConfig {
            trainable: false,
            ..PauConfig::default()
        };
        let net = build_network(&NetworkSpec::mlp(&[784, 128, 10]), &frozen, 0).unwrap();
        assert_eq!(net.param_count().pau, 0);
    }

    #[test]
    fn empty_network() {
        let spec = NetworkSpec {
            input: Shape::flat(4),
            layers: vec![],
        };
        let net = build_network(&spec, &PauConfig::default(), 0).unwrap();
        assert_eq!(net.param_count(), ParamCount { total: 0, pau: 0 });
    }

    #[test]
    fn seeded_build_is_deterministic() {
        let spec = NetworkSpec::mlp(&[20, 8, 3]);
        let a = build_network(&spec, &PauConfig::default(), 5).unwrap();
        let b = build_network(&spec, &PauConfig::default(), 5).unwrap();
        let c = build_network(&spec, &PauConfig::default(), 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.params(), c.params());
        let bound = (1.0f64 / 20.0).sqrt();
        assert!(a.params()[..160].iter().all(|w| w.abs() < bound));
    }

    #[test]
    fn shape_errors() {
        let bad = NetworkSpec {
            input: Shape::flat(4),
            layers: vec![LayerSpec::dense(5, 2)],
        };
        assert!(matches!(bad.shapes(), Err(Error::Shape(_))));
        let bad = NetworkSpec {
            input: Shape::flat(4),
            layers: vec![LayerSpec::Softmax, LayerSpec::dense(4, 2)],
        };
        assert!(bad.shapes().is_err());
        let bad = NetworkSpec {
            input: Shape::flat(4),
            layers: vec![LayerSpec::Activation { unit_index: 1 }],
        };
        assert!(bad.shapes().is_err());
        let bad = NetworkSpec {
            input: Shape::image(1, 4, 4),
            layers: vec![LayerSpec::dense(16, 2)],
        };
        assert!(bad.shapes().is_err());
        let unknown = PauConfig {
            init: PauInit::Builtin("gelu".into()),
            ..PauConfig::default()
        };
        assert!(build_network(&NetworkSpec::mlp(&[2, 2, 2]), &unknown, 0).is_err());
    }
}
