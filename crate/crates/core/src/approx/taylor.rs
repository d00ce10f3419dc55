//! Maclaurin series of the smooth targets, computed in exact rational arithmetic.

use num_rational::Ratio;
use num_traits::{ToPrimitive, Zero};

use super::target::TargetActivation;
use crate::error::{Error, Result};

pub type Rational = Ratio<i128>;

/// Largest supported series degree.
pub const MAX_TAYLOR_DEGREE: usize = 12;

/// Maclaurin coefficients `c_0..c_d`.
#[derive(Debug, Clone, PartialEq)]
pub struct TaylorSeries {
    coefficients: Vec<f64>,
}

impl TaylorSeries {
    pub fn new(coefficients: Vec<f64>) -> Result<Self> {
        if coefficients.is_empty() {
            return Err(Error::InvalidConfig("empty Taylor series".into()));
        }
        if coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidConfig("non-finite Taylor coefficient".into()));
        }
        Ok(Self { coefficients })
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn degree(&self) -> usize {
        self.coefficients.len() - 1
    }
}

/// tanh series from `t' = 1 − t²`: `(k+1)·t_{k+1} = [k = 0] − Σ_{i+j=k} t_i t_j`.
fn tanh_series(degree: usize) -> Vec<Rational> {
    let mut t = vec![Rational::zero(); degree + 1];
    for k in 0..degree {
        let mut conv = Rational::zero();
        for i in 0..=k {
            conv += t[i] * t[k - i];
        }
        let forcing = if k == 0 {
            Rational::from_integer(1)
        } else {
            Rational::zero()
        };
        t[k + 1] = (forcing - conv) / Rational::from_integer(k as i128 + 1);
    }
    t
}

/// `σ(x) = 1/2 + tanh(x/2)/2`.
fn sigmoid_series(degree: usize) -> Vec<Rational> {
    let mut s = tanh_series(degree);
    s[0] = Rational::new(1, 2);
    let mut scale = Rational::new(1, 2);
    for c in s.iter_mut().skip(1) {
        scale /= 2;
        *c *= scale;
    }
    s
}

/// Exact series for the targets whose coefficients are rational.
pub fn taylor_exact(target: &TargetActivation, degree: usize) -> Result<Vec<Rational>> {
    check_degree(degree)?;
    match target {
        TargetActivation::Tanh => Ok(tanh_series(degree)),
        TargetActivation::Sigmoid => Ok(sigmoid_series(degree)),
        TargetActivation::Swish { beta } if *beta == 1.0 => {
            let mut c = vec![Rational::zero()];
            if degree > 0 {
                c.extend(sigmoid_series(degree - 1));
            }
            Ok(c)
        }
        other if other.is_smooth_at_zero() => Err(Error::InvalidConfig(format!(
            "{other} has irrational Taylor coefficients"
        ))),
        other => Err(Error::NoTaylorSeries(other.to_string())),
    }
}

fn check_degree(degree: usize) -> Result<()> {
    if degree > MAX_TAYLOR_DEGREE {
        return Err(Error::InvalidConfig(format!(
            "Taylor degree {degree} exceeds {MAX_TAYLOR_DEGREE}"
        )));
    }
    Ok(())
}

fn to_f64(r: &Rational) -> f64 {
    r.to_f64().expect("rational series coefficients fit in f64")
}

/// Maclaurin series of `target` up to `degree`.
///
/// Sigmoid and tanh are exact rationals rounded once; swish(β) scales the
/// sigmoid coefficients by powers of β: `x·σ(βx) = Σ s_k β^k x^{k+1}`.
pub fn taylor_of(target: &TargetActivation, degree: usize) -> Result<TaylorSeries> {
    check_degree(degree)?;
    let coefficients = match target {
        TargetActivation::Tanh | TargetActivation::Sigmoid => taylor_exact(target, degree)?
            .iter()
            .map(to_f64)
            .collect(),
        TargetActivation::Swish { beta } => {
            let mut c = vec![0.0];
            if degree > 0 {
                let mut power = 1.0;
                for s in sigmoid_series(degree - 1) {
                    c.push(to_f64(&s) * power);
                    power *= beta;
                }
            }
            c
        }
        other => return Err(Error::NoTaylorSeries(other.to_string())),
    };
    TaylorSeries::new(coefficients)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(n: i128, d: i128) -> Rational {
        Rational::new(n, d)
    }

    #[test]
    fn tanh_degree_five() {
        let s = taylor_exact(&TargetActivation::Tanh, 5).unwrap();
        assert_eq!(s, vec![r(0, 1), r(1, 1), r(0, 1), r(-1, 3), r(0, 1), r(2, 15)]);
        let f = taylor_of(&TargetActivation::Tanh, 5).unwrap();
        assert_eq!(f.coefficients(), &[0.0, 1.0, 0.0, -1.0 / 3.0, 0.0, 2.0 / 15.0]);
    }

    #[test]
    fn sigmoid_degree_one() {
        let f = taylor_of(&TargetActivation::Sigmoid, 1).unwrap();
        assert_eq!(f.coefficients(), &[0.5, 0.25]);
    }

    #[test]
    fn sigmoid_higher_terms() {
        // σ = 1/2 + x/4 − x³/48 + x⁵/480 − 17x⁷/80640
        let s = taylor_exact(&TargetActivation::Sigmoid, 7).unwrap();
        assert_eq!(s[3], r(-1, 48));
        assert_eq!(s[5], r(1, 480));
        assert_eq!(s[7], r(-17, 80640));
    }

    #[test]
    fn swish_is_shifted_sigmoid() {
        let swish = taylor_of(&TargetActivation::Swish { beta: 1.0 }, 4).unwrap();
        assert_eq!(swish.coefficients(), &[0.0, 0.5, 0.25, 0.0, -1.0 / 48.0]);
        let scaled = taylor_of(&TargetActivation::Swish { beta: 2.0 }, 3).unwrap();
        assert_eq!(scaled.coefficients(), &[0.0, 0.5, 0.5, 0.0]);
    }

    #[test]
    fn degree_twelve_fits_in_i128() {
        let s = taylor_exact(&TargetActivation::Tanh, 12).unwrap();
        assert_eq!(s[11], r(-1382, 155925));
    }

    #[test]
    fn non_smooth_targets_are_rejected() {
        for t in [
            TargetActivation::Relu,
            TargetActivation::LeakyRelu { alpha: 0.01 },
            TargetActivation::Elu { alpha: 1.0 },
        ] {
            assert!(matches!(taylor_of(&t, 5), Err(Error::NoTaylorSeries(_))));
        }
        assert!(taylor_of(&TargetActivation::Tanh, 13).is_err());
    }
}
