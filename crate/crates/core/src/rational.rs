//! Rational activation kernels.
//!
//! A Padé activation unit computes
//!
//! ```text
//! F(x) = P(x) / Q(x),   P(x) = a_0 + a_1 x + ... + a_m x^m,   A(x) = b_1 x + ... + b_n x^n
//! ```
//!
//! with `Q(x) = 1 + A(x)` in [`SafetyMode::Unsafe`] and `Q(x) = 1 + |A(x)|` in
//! [`SafetyMode::Safe`]. The safe form has `Q(x) >= 1` everywhere, so it has no
//! real poles. The unsafe form reports a pole error whenever `|Q(x)|` drops below
//! a floor instead of returning infinities.
//!
//! Coefficients are stored flat as `[a_0, ..., a_m, b_1, ..., b_n]`; the constant
//! denominator term is fixed at 1 and never stored. Gradient kernels share the
//! `A(x)`/`Q(x)` sub-expressions between the input and coefficient derivatives.

use std::fmt;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default `|Q(x)|` floor below which unsafe evaluation reports a pole.
pub const DEFAULT_POLE_FLOOR: f64 = 1e-12;

/// Numerator degree `m` and denominator degree `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RationalOrders {
    pub numerator: usize,
    pub denominator: usize,
}

impl RationalOrders {
    pub const fn new(numerator: usize, denominator: usize) -> Self {
        Self {
            numerator,
            denominator,
        }
    }

    /// Number of stored coefficients, `m + 1 + n`.
    pub const fn len(&self) -> usize {
        self.numerator + 1 + self.denominator
    }

    pub const fn is_empty(&self) -> bool {
        false
    }
}

impl Default for RationalOrders {
    fn default() -> Self {
        Self::new(5, 4)
    }
}

impl fmt::Display for RationalOrders {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}/{}]", self.numerator, self.denominator)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum SafetyMode {
    Unsafe,
    #[default]
    Safe,
}

impl SafetyMode {
    pub fn is_safe(self) -> bool {
        self == SafetyMode::Safe
    }
}

/// Learnable state of one rational unit.
#[derive(Debug, Clone, PartialEq)]
pub struct RationalCoefficients {
    values: Vec<f64>,
    orders: RationalOrders,
}

impl RationalCoefficients {
    /// Builds coefficients from `a_0..a_m` and `b_1..b_n`.
    pub fn new(numerator: Vec<f64>, denominator: Vec<f64>) -> Result<Self> {
        if numerator.is_empty() {
            return Err(Error::InvalidCoefficients(
                "numerator needs at least a_0".into(),
            ));
        }
        let orders = RationalOrders::new(numerator.len() - 1, denominator.len());
        let mut values = numerator;
        values.extend(denominator);
        Self::from_flat(values, orders)
    }

    /// Builds coefficients from the flat `[a_0..a_m, b_1..b_n]` layout.
    pub fn from_flat(values: Vec<f64>, orders: RationalOrders) -> Result<Self> {
        if values.len() != orders.len() {
            return Err(Error::mismatch("coefficients", orders.len(), values.len()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidCoefficients(format!(
                "coefficient {i} is not finite ({})",
                values[i]
            )));
        }
        Ok(Self { values, orders })
    }

    pub fn zeros(orders: RationalOrders) -> Self {
        Self {
            values: vec![0.0; orders.len()],
            orders,
        }
    }

    pub fn orders(&self) -> RationalOrders {
        self.orders
    }

    pub fn numerator(&self) -> &[f64] {
        &self.values[..=self.orders.numerator]
    }

    pub fn denominator(&self) -> &[f64] {
        &self.values[self.orders.numerator + 1..]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    /// Mutable flat view. Callers must keep the values finite.
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    fn view(&self) -> CoeffView<'_> {
        CoeffView::new(&self.values, self.orders.numerator)
    }
}

/// Borrowed `[a.., b..]` slice split at `m`.
#[derive(Clone, Copy)]
pub(crate) struct CoeffView<'a> {
    pub numerator: &'a [f64],
    pub denominator: &'a [f64],
}

impl<'a> CoeffView<'a> {
    pub fn new(values: &'a [f64], m: usize) -> Self {
        let (numerator, denominator) = values.split_at(m + 1);
        Self {
            numerator,
            denominator,
        }
    }
}

/// Derivatives of one PAU evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct PauGradientBundle {
    /// ∂F/∂x
    pub d_input: f64,
    /// ∂F/∂a_j, j = 0..=m
    pub d_numerator: Vec<f64>,
    /// ∂F/∂b_k, k = 1..=n
    pub d_denominator: Vec<f64>,
}

/// Horner evaluation of `c_0 + c_1 x + ... + c_d x^d`.
pub fn eval_polynomial(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

/// Horner evaluation returning the value and the first derivative.
fn eval_polynomial_with_derivative(coeffs: &[f64], x: f64) -> (f64, f64) {
    let mut value = 0.0;
    let mut deriv = 0.0;
    for &c in coeffs.iter().rev() {
        deriv = deriv * x + value;
        value = value * x + c;
    }
    (value, deriv)
}

/// `-1`, `0` or `+1`. Unlike `f64::signum`, zero maps to zero.
pub fn sign_conv(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else if z < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `A(x) = b_1 x + ... + b_n x^n`
fn denominator_sum(denominator: &[f64], x: f64) -> f64 {
    x * eval_polynomial(denominator, x)
}

/// Shared sub-expressions of the forward and backward kernels.
struct Terms {
    p: f64,
    dp: f64,
    da: f64,
    q: f64,
    /// ∂Q/∂A: sign(A) in safe mode, 1 in unsafe mode.
    dq_da: f64,
}

fn terms(x: f64, c: CoeffView<'_>, mode: SafetyMode, floor: f64) -> Result<Terms> {
    let (p, dp) = eval_polynomial_with_derivative(c.numerator, x);
    // A(x) = x·B(x) with B = b_1 + b_2 x + ...; A'(x) = B(x) + x·B'(x).
    let (b, db) = eval_polynomial_with_derivative(c.denominator, x);
    let a = x * b;
    let da = b + x * db;
    let (q, dq_da) = match mode {
        SafetyMode::Safe => (1.0 + a.abs(), sign_conv(a)),
        SafetyMode::Unsafe => {
            let q = 1.0 + a;
            if !(q.abs() >= floor) {
                return Err(Error::Pole { x, denominator: q });
            }
            (q, 1.0)
        }
    };
    Ok(Terms { p, dp, da, q, dq_da })
}

fn eval_view(x: f64, c: CoeffView<'_>, mode: SafetyMode, floor: f64) -> Result<f64> {
    let p = eval_polynomial(c.numerator, x);
    let a = denominator_sum(c.denominator, x);
    let q = match mode {
        SafetyMode::Safe => 1.0 + a.abs(),
        SafetyMode::Unsafe => {
            let q = 1.0 + a;
            if !(q.abs() >= floor) {
                return Err(Error::Pole { x, denominator: q });
            }
            q
        }
    };
    Ok(p / q)
}

/// Evaluates `F(x)`. Safe mode never fails.
pub fn eval_pau(x: f64, coeffs: &RationalCoefficients, mode: SafetyMode) -> Result<f64> {
    eval_pau_with_floor(x, coeffs, mode, DEFAULT_POLE_FLOOR)
}

pub fn eval_pau_with_floor(
    x: f64,
    coeffs: &RationalCoefficients,
    mode: SafetyMode,
    pole_floor: f64,
) -> Result<f64> {
    eval_view(x, coeffs.view(), mode, pole_floor)
}

/// The denominator `Q(x)` for the given mode.
pub fn denominator_value(x: f64, coeffs: &RationalCoefficients, mode: SafetyMode) -> f64 {
    let a = denominator_sum(coeffs.denominator(), x);
    match mode {
        SafetyMode::Safe => 1.0 + a.abs(),
        SafetyMode::Unsafe => 1.0 + a,
    }
}

/// Element-wise [`eval_pau`]. A pole reports the index of the offending element.
pub fn eval_pau_batch(
    xs: &[f64],
    coeffs: &RationalCoefficients,
    mode: SafetyMode,
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; xs.len()];
    eval_pau_into(xs, coeffs, mode, &mut out)?;
    Ok(out)
}

pub(crate) fn eval_pau_into(
    xs: &[f64],
    coeffs: &RationalCoefficients,
    mode: SafetyMode,
    out: &mut [f64],
) -> Result<()> {
    debug_assert_eq!(xs.len(), out.len());
    let view = coeffs.view();
    for (index, (&x, y)) in xs.iter().zip(out.iter_mut()).enumerate() {
        *y = eval_view(x, view, mode, DEFAULT_POLE_FLOOR).map_err(|e| at_index(e, index))?;
    }
    Ok(())
}

/// Evaluates each element with its own coefficient row (`rows` is `xs.len() × (m+1+n)`).
pub(crate) fn eval_pau_rows_into(
    xs: &[f64],
    rows: &[f64],
    orders: RationalOrders,
    mode: SafetyMode,
    out: &mut [f64],
) -> Result<()> {
    let width = orders.len();
    debug_assert_eq!(rows.len(), xs.len() * width);
    for (index, ((&x, row), y)) in xs
        .iter()
        .zip(rows.chunks_exact(width))
        .zip(out.iter_mut())
        .enumerate()
    {
        let view = CoeffView::new(row, orders.numerator);
        *y = eval_view(x, view, mode, DEFAULT_POLE_FLOOR).map_err(|e| at_index(e, index))?;
    }
    Ok(())
}

fn at_index(err: Error, index: usize) -> Error {
    match err {
        Error::Pole { x, denominator } => Error::PoleAt {
            index,
            x,
            denominator,
        },
        other => other,
    }
}

/// Exact analytic gradients of `F` at `x`:
///
/// ```text
/// ∂F/∂x   = P'(x)/Q(x) − Q'(x)·P(x)/Q(x)²,   Q'(x) = sign(A(x))·A'(x)
/// ∂F/∂a_j = x^j / Q(x)
/// ∂F/∂b_k = −x^k · sign(A(x)) · P(x)/Q(x)²
/// ```
///
/// In unsafe mode `sign(A)` is replaced by 1 and `Q = 1 + A`.
pub fn grad_pau(
    x: f64,
    coeffs: &RationalCoefficients,
    mode: SafetyMode,
) -> Result<PauGradientBundle> {
    let orders = coeffs.orders();
    let mut acc = vec![0.0; orders.len()];
    let d_input = accumulate_grad(x, 1.0, coeffs.view(), mode, &mut acc)?;
    let d_denominator = acc.split_off(orders.numerator + 1);
    Ok(PauGradientBundle {
        d_input,
        d_numerator: acc,
        d_denominator,
    })
}

/// Adds `upstream · ∂F/∂c` into `acc` and returns `upstream · ∂F/∂x`.
pub(crate) fn accumulate_grad(
    x: f64,
    upstream: f64,
    c: CoeffView<'_>,
    mode: SafetyMode,
    acc: &mut [f64],
) -> Result<f64> {
    let t = terms(x, c, mode, DEFAULT_POLE_FLOOR)?;
    let inv_q = 1.0 / t.q;
    // P/Q², shared by the input and denominator derivatives.
    let p_over_q2 = t.p * inv_q * inv_q;
    let d_input = t.dp * inv_q - t.dq_da * t.da * p_over_q2;

    let (acc_num, acc_den) = acc.split_at_mut(c.numerator.len());
    let up_inv_q = upstream * inv_q;
    let mut power = 1.0;
    for slot in acc_num.iter_mut() {
        *slot += up_inv_q * power;
        power *= x;
    }
    let up_den = -upstream * t.dq_da * p_over_q2;
    let mut power = x;
    for slot in acc_den.iter_mut() {
        *slot += up_den * power;
        power *= x;
    }
    Ok(upstream * d_input)
}

/// Result of [`backward_pau`].
#[derive(Debug, Clone, PartialEq)]
pub struct PauBackward {
    pub d_inputs: Vec<f64>,
    /// Coefficient gradients summed over all elements (one shared unit).
    pub d_coefficients: RationalCoefficients,
}

/// Backward pass of one shared unit over a batch of elements.
///
/// Coefficient gradients are summed left to right over the elements.
pub fn backward_pau(
    xs: &[f64],
    upstream: &[f64],
    coeffs: &RationalCoefficients,
    mode: SafetyMode,
) -> Result<PauBackward> {
    if xs.len() != upstream.len() {
        return Err(Error::mismatch("upstream gradient", xs.len(), upstream.len()));
    }
    let orders = coeffs.orders();
    let mut acc = vec![0.0; orders.len()];
    let mut d_inputs = vec![0.0; xs.len()];
    backward_into(xs, upstream, coeffs, mode, &mut d_inputs, &mut acc)?;
    Ok(PauBackward {
        d_inputs,
        d_coefficients: RationalCoefficients {
            values: acc,
            orders,
        },
    })
}

pub(crate) fn backward_into(
    xs: &[f64],
    upstream: &[f64],
    coeffs: &RationalCoefficients,
    mode: SafetyMode,
    d_inputs: &mut [f64],
    acc: &mut [f64],
) -> Result<()> {
    let view = coeffs.view();
    for (index, ((&x, &up), dx)) in xs
        .iter()
        .zip(upstream)
        .zip(d_inputs.iter_mut())
        .enumerate()
    {
        *dx = accumulate_grad(x, up, view, mode, acc).map_err(|e| at_index(e, index))?;
    }
    Ok(())
}

/// Backward pass where element `i` was evaluated with coefficient row `i`.
/// Gradients are taken at the per-element coefficients and summed into `acc`.
pub(crate) fn backward_rows_into(
    xs: &[f64],
    upstream: &[f64],
    rows: &[f64],
    orders: RationalOrders,
    mode: SafetyMode,
    d_inputs: &mut [f64],
    acc: &mut [f64],
) -> Result<()> {
    let width = orders.len();
    for (index, (((&x, &up), row), dx)) in xs
        .iter()
        .zip(upstream)
        .zip(rows.chunks_exact(width))
        .zip(d_inputs.iter_mut())
        .enumerate()
    {
        let view = CoeffView::new(row, orders.numerator);
        *dx = accumulate_grad(x, up, view, mode, acc).map_err(|e| at_index(e, index))?;
    }
    Ok(())
}

/// How often randomized coefficients are redrawn during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseGranularity {
    /// A fresh coefficient draw for every input element.
    #[default]
    PerElement,
    /// One draw shared by a whole forward call.
    PerBatch,
}

/// Perturbs one coefficient by a uniform draw on `[c − α|c|, c + α|c|]`.
#[inline]
fn perturb<R: Rng + ?Sized>(c: f64, alpha: f64, rng: &mut R) -> f64 {
    let width = alpha * c.abs();
    if width == 0.0 {
        return c;
    }
    let u: f64 = rng.gen_range(-1.0..=1.0);
    c + width * u
}

/// Randomized coefficients: every coefficient is drawn uniformly from
/// `[c − α|c|, c + α|c|]`. `alpha = 0` returns the input unchanged.
pub fn sample_noisy_coeffs(
    coeffs: &RationalCoefficients,
    alpha: f64,
    seed: u64,
) -> RationalCoefficients {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_noisy_coeffs_with(coeffs, alpha, &mut rng)
}

pub fn sample_noisy_coeffs_with<R: Rng + ?Sized>(
    coeffs: &RationalCoefficients,
    alpha: f64,
    rng: &mut R,
) -> RationalCoefficients {
    assert!(alpha >= 0.0, "noise alpha must be non-negative");
    let values = coeffs
        .values
        .iter()
        .map(|&c| perturb(c, alpha, rng))
        .collect();
    RationalCoefficients {
        values,
        orders: coeffs.orders,
    }
}

/// One independent draw per element, flattened as `count × (m+1+n)`.
pub fn sample_noisy_rows<R: Rng + ?Sized>(
    coeffs: &RationalCoefficients,
    alpha: f64,
    count: usize,
    rng: &mut R,
) -> Vec<f64> {
    assert!(alpha >= 0.0, "noise alpha must be non-negative");
    let mut rows = Vec::with_capacity(count * coeffs.values.len());
    for _ in 0..count {
        rows.extend(coeffs.values.iter().map(|&c| perturb(c, alpha, rng)));
    }
    rows
}

/// Per-element variant of [`sample_noisy_coeffs`]: one sample per input.
pub fn sample_noisy_coeffs_per_element(
    coeffs: &RationalCoefficients,
    alpha: f64,
    count: usize,
    seed: u64,
) -> Vec<RationalCoefficients> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| sample_noisy_coeffs_with(coeffs, alpha, &mut rng))
        .collect()
}
