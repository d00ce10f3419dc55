use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Closed-form scalar activations used as fit targets and baselines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TargetActivation {
    Relu,
    Relu6,
    LeakyRelu { alpha: f64 },
    Sigmoid,
    Tanh,
    Swish { beta: f64 },
    Elu { alpha: f64 },
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl TargetActivation {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            TargetActivation::Relu => x.max(0.0),
            TargetActivation::Relu6 => x.max(0.0).min(6.0),
            TargetActivation::LeakyRelu { alpha } => x.max(0.0) + alpha * x.min(0.0),
            TargetActivation::Sigmoid => sigmoid(x),
            TargetActivation::Tanh => x.tanh(),
            TargetActivation::Swish { beta } => x * sigmoid(beta * x),
            TargetActivation::Elu { alpha } => x.max(0.0) + (alpha * x.exp_m1()).min(0.0),
        }
    }

    /// Derivative with respect to the input; kinks take the left-hand
    /// convention used by common frameworks (ReLU'(0) = 0).
    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            TargetActivation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            TargetActivation::Relu6 => {
                if x > 0.0 && x < 6.0 {
                    1.0
                } else {
                    0.0
                }
            }
            TargetActivation::LeakyRelu { alpha } => {
                if x > 0.0 {
                    1.0
                } else {
                    alpha
                }
            }
            TargetActivation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            TargetActivation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            TargetActivation::Swish { beta } => {
                let s = sigmoid(beta * x);
                s + beta * x * s * (1.0 - s)
            }
            TargetActivation::Elu { alpha } => {
                if x > 0.0 {
                    1.0
                } else if alpha * x.exp_m1() < 0.0 {
                    alpha * x.exp()
                } else {
                    0.0
                }
            }
        }
    }

    /// Whether the function is analytic at the origin.
    pub fn is_smooth_at_zero(&self) -> bool {
        matches!(
            self,
            TargetActivation::Sigmoid | TargetActivation::Tanh | TargetActivation::Swish { .. }
        )
    }
}

impl fmt::Display for TargetActivation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetActivation::Relu => f.write_str("relu"),
            TargetActivation::Relu6 => f.write_str("relu6"),
            TargetActivation::LeakyRelu { alpha } => write!(f, "lrelu({alpha})"),
            TargetActivation::Sigmoid => f.write_str("sigmoid"),
            TargetActivation::Tanh => f.write_str("tanh"),
            TargetActivation::Swish { beta } => write!(f, "swish({beta})"),
            TargetActivation::Elu { alpha } => write!(f, "elu({alpha})"),
        }
    }
}

/// Splits `name(arg)` into `("name", Some("arg"))`.
pub(crate) fn split_call(s: &str) -> Result<(&str, Option<&str>), Error> {
    let s = s.trim();
    match s.find('(') {
        None => Ok((s, None)),
        Some(open) => {
            let inner = s[open + 1..]
                .strip_suffix(')')
                .ok_or_else(|| Error::UnknownName(s.to_string()))?;
            Ok((s[..open].trim(), Some(inner.trim())))
        }
    }
}

pub(crate) fn parse_arg(name: &str, arg: &str) -> Result<f64, Error> {
    arg.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::UnknownName(format!("{name}({arg})")))
}

impl FromStr for TargetActivation {
    type Err = Error;

    /// Parses `relu`, `relu6`, `lrelu(0.01)`, `sigmoid`, `tanh`, `swish`,
    /// `swish(1.5)`, `elu` and `elu(0.5)`.
    fn from_str(s: &str) -> Result<Self, Error> {
        let (name, arg) = split_call(s)?;
        let value = |default: Option<f64>| match (arg, default) {
            (Some(a), _) => parse_arg(name, a),
            (None, Some(d)) => Ok(d),
            (None, None) => Err(Error::UnknownName(s.to_string())),
        };
        let target = match name.to_ascii_lowercase().as_str() {
            "relu" if arg.is_none() => TargetActivation::Relu,
            "relu6" if arg.is_none() => TargetActivation::Relu6,
            "lrelu" | "leaky_relu" | "leakyrelu" => TargetActivation::LeakyRelu {
                alpha: value(Some(0.01))?,
            },
            "sigmoid" if arg.is_none() => TargetActivation::Sigmoid,
            "tanh" if arg.is_none() => TargetActivation::Tanh,
            "swish" => TargetActivation::Swish {
                beta: value(Some(1.0))?,
            },
            "elu" => TargetActivation::Elu {
                alpha: value(Some(1.0))?,
            },
            _ => return Err(Error::UnknownName(s.to_string())),
        };
        Ok(target)
    }
}
