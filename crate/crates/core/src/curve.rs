//! Sampled activation curves, optionally with the spread of randomized
//! coefficients.

use std::fmt::Write as _;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rational::{eval_pau, sample_noisy_coeffs_with, RationalCoefficients, SafetyMode};

/// Noise draws behind each envelope.
pub const ENVELOPE_SAMPLES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub x: f64,
    pub y: f64,
    /// `(min, max)` over the noisy draws.
    pub envelope: Option<(f64, f64)>,
}

/// `points` evenly spaced abscissae from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let step = (hi - lo) / (points - 1) as f64;
            (0..points)
                .map(|i| if i == points - 1 { hi } else { lo + i as f64 * step })
                .collect()
        }
    }
}

/// Evaluates `F` on `xs`. With `noise = Some((alpha, seed))` the same
/// [`ENVELOPE_SAMPLES`] noisy coefficient sets are evaluated at every point.
pub fn sample_curve(
    coeffs: &RationalCoefficients,
    mode: SafetyMode,
    xs: &[f64],
    noise: Option<(f64, u64)>,
) -> Result<Vec<CurvePoint>> {
    let draws = match noise {
        Some((alpha, seed)) => {
            if !(alpha >= 0.0 && alpha.is_finite()) {
                return Err(Error::InvalidConfig(format!("noise alpha {alpha} must be non-negative")));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..ENVELOPE_SAMPLES)
                .map(|_| sample_noisy_coeffs_with(coeffs, alpha, &mut rng))
                .collect()
        }
        None => Vec::new(),
    };
    xs.iter()
        .map(|&x| {
            let y = eval_pau(x, coeffs, mode)?;
            let envelope = if noise.is_some() {
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for c in &draws {
                    let v = eval_pau(x, c, mode)?;
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
                Some((lo, hi))
            } else {
                None
            };
            Ok(CurvePoint { x, y, envelope })
        })
        .collect()
}

/// CSV with header `x,f(x)`, plus `min,max` when the points carry envelopes.
pub fn curve_csv(points: &[CurvePoint]) -> String {
    let with_envelope = points.first().is_some_and(|p| p.envelope.is_some());
    let mut out = String::from(if with_envelope { "x,f(x),min,max\n" } else { "x,f(x)\n" });
    for p in points {
        write!(out, "{},{}", p.x, p.y).unwrap();
        if let Some((lo, hi)) = p.envelope {
            write!(out, ",{lo},{hi}").unwrap();
        }
        out.push('\n');
    }
    out
}
