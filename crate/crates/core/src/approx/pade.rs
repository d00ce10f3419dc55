use nalgebra::{DMatrix, DVector};
use num_rational::BigRational;
use num_traits::{One, Zero};

use super::taylor::{Rational, TaylorSeries};
use crate::error::{Error, Result};
use crate::rational::{RationalCoefficients, RationalOrders};

/// Largest tolerated residual of the denominator system.
const SYSTEM_RESIDUAL_TOL: f64 = 1e-9;

/// `[m/n]` Padé approximant matching the first `m+n+1` Taylor coefficients.
///
/// The denominator solves `Σ_{j=1..n} b_j c_{k−j} = −c_k` for `k = m+1..m+n`
/// (with `c_i = 0` for `i < 0`); the numerator follows by back-substitution,
/// `a_j = c_j + Σ_{k=1..min(j,n)} b_k c_{j−k}`.
pub fn pade_from_taylor(
    series: &TaylorSeries,
    orders: RationalOrders,
) -> Result<RationalCoefficients> {
    let RationalOrders {
        numerator: m,
        denominator: n,
    } = orders;
    let c = series.coefficients();
    if series.degree() < m + n {
        return Err(Error::InvalidConfig(format!(
            "Taylor degree {} is below m+n = {}",
            series.degree(),
            m + n
        )));
    }
    let coef = |i: isize| if i < 0 { 0.0 } else { c[i as usize] };

    let b = if n == 0 {
        Vec::new()
    } else {
        let system = DMatrix::from_fn(n, n, |row, col| {
            let k = (m + 1 + row) as isize;
            coef(k - (col as isize + 1))
        });
        let rhs = DVector::from_fn(n, |row, _| -c[m + 1 + row]);
        let solution = system
            .clone()
            .lu()
            .solve(&rhs)
            .ok_or(Error::DegenerateOrders { m, n })?;
        let residual = (&system * &solution - &rhs).amax();
        let scale = rhs.amax().max(system.amax()).max(f64::MIN_POSITIVE);
        if !solution.iter().all(|v| v.is_finite()) || residual > SYSTEM_RESIDUAL_TOL * scale {
            return Err(Error::DegenerateOrders { m, n });
        }
        solution.iter().copied().collect()
    };

    let a = (0..=m)
        .map(|j| {
            let mut acc = c[j];
            for (k, bk) in b.iter().enumerate().take(j.min(n)) {
                acc += bk * c[j - (k + 1)];
            }
            acc
        })
        .collect();
    RationalCoefficients::new(a, b)
}

/// Exact `[m/n]` Padé approximant of a rational series, as
/// `(a_0..=a_m, b_1..=b_n)`. Solved by Gaussian elimination over big rationals.
pub fn pade_exact(
    series: &[Rational],
    orders: RationalOrders,
) -> Result<(Vec<BigRational>, Vec<BigRational>)> {
    let RationalOrders {
        numerator: m,
        denominator: n,
    } = orders;
    if series.len() < m + n + 1 {
        return Err(Error::InvalidConfig(format!(
            "Taylor degree {} is below m+n = {}",
            series.len().saturating_sub(1),
            m + n
        )));
    }
    let big = |r: &Rational| {
        BigRational::new((*r.numer()).into(), (*r.denom()).into())
    };
    let c: Vec<BigRational> = series.iter().map(big).collect();
    let coef = |i: isize| {
        if i < 0 {
            BigRational::zero()
        } else {
            c[i as usize].clone()
        }
    };
    // Augmented system [M | rhs], row k = m+1+row.
    let mut rows: Vec<Vec<BigRational>> = (0..n)
        .map(|row| {
            let k = (m + 1 + row) as isize;
            let mut r: Vec<BigRational> = (0..n).map(|col| coef(k - (col as isize + 1))).collect();
            r.push(-c[m + 1 + row].clone());
            r
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n)
            .find(|&r| !rows[r][col].is_zero())
            .ok_or(Error::DegenerateOrders { m, n })?;
        rows.swap(col, pivot);
        let inv = BigRational::one() / rows[col][col].clone();
        for v in rows[col].iter_mut() {
            *v *= inv.clone();
        }
        for r in 0..n {
            if r != col && !rows[r][col].is_zero() {
                let factor = rows[r][col].clone();
                for j in col..=n {
                    let delta = factor.clone() * rows[col][j].clone();
                    rows[r][j] -= delta;
                }
            }
        }
    }
    let b: Vec<BigRational> = rows.into_iter().map(|mut r| r.pop().expect("rhs")).collect();
    let a = (0..=m)
        .map(|j| {
            let mut acc = c[j].clone();
            for (k, bk) in b.iter().enumerate().take(j.min(n)) {
                acc += bk.clone() * c[j - (k + 1)].clone();
            }
            acc
        })
        .collect();
    Ok((a, b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approx::taylor::taylor_of;
    use crate::approx::TargetActivation;

    #[test]
    fn exp_one_one() {
        let s = TaylorSeries::new(vec![1.0, 1.0, 0.5, 1.0 / 6.0]).unwrap();
        let p = pade_from_taylor(&s, RationalOrders::new(1, 1)).unwrap();
        assert_eq!(p.numerator(), &[1.0, 0.5]);
        assert_eq!(p.denominator(), &[-0.5]);
    }

    #[test]
    fn zero_denominator_order_truncates() {
        let s = TaylorSeries::new(vec![1.0, 2.0, 3.0]).unwrap();
        let p = pade_from_taylor(&s, RationalOrders::new(2, 0)).unwrap();
        assert_eq!(p.numerator(), &[1.0, 2.0, 3.0]);
        assert!(p.denominator().is_empty());
    }

    #[test]
    fn tanh_five_four() {
        let s = taylor_of(&TargetActivation::Tanh, 9).unwrap();
        let p = pade_from_taylor(&s, RationalOrders::new(5, 4)).unwrap();
        let expect_a = [0.0, 1.0, 0.0, 1.0 / 9.0, 0.0, 1.0 / 945.0];
        let expect_b = [0.0, 4.0 / 9.0, 0.0, 1.0 / 63.0];
        for (got, want) in p.numerator().iter().zip(expect_a) {
            assert!((got - want).abs() < 1e-14, "{got} vs {want}");
        }
        for (got, want) in p.denominator().iter().zip(expect_b) {
            assert!((got - want).abs() < 1e-14, "{got} vs {want}");
        }
    }

    #[test]
    fn exact_tanh_and_sigmoid() {
        use crate::approx::taylor::taylor_exact;
        let show = |v: &[BigRational]| v.iter().map(|r| r.to_string()).collect::<Vec<_>>();
        let s = taylor_exact(&TargetActivation::Tanh, 9).unwrap();
        let (a, b) = pade_exact(&s, RationalOrders::new(5, 4)).unwrap();
        assert_eq!(show(&a), ["0", "1", "0", "1/9", "0", "1/945"]);
        assert_eq!(show(&b), ["0", "4/9", "0", "1/63"]);
        let s = taylor_exact(&TargetActivation::Sigmoid, 9).unwrap();
        let (a, b) = pade_exact(&s, RationalOrders::new(5, 4)).unwrap();
        assert_eq!(show(&a), ["1/2", "1/4", "1/18", "1/144", "1/2016", "1/60480"]);
        assert_eq!(show(&b), ["0", "1/9", "0", "1/1008"]);
        let tanh = taylor_exact(&TargetActivation::Tanh, 5).unwrap();
        assert!(matches!(
            pade_exact(&tanh, RationalOrders::new(4, 1)),
            Err(Error::DegenerateOrders { .. })
        ));
    }

    #[test]
    fn singular_system_is_degenerate() {
        // tanh is odd: the [4/1] system reads b_1·c_4 = −c_5 with c_4 = 0.
        let s = taylor_of(&TargetActivation::Tanh, 5).unwrap();
        let err = pade_from_taylor(&s, RationalOrders::new(4, 1)).unwrap_err();
        assert!(matches!(err, Error::DegenerateOrders { m: 4, n: 1 }), "{err:?}");
    }

    #[test]
    fn short_series_is_rejected() {
        let s = TaylorSeries::new(vec![1.0, 1.0]).unwrap();
        assert!(pade_from_taylor(&s, RationalOrders::new(1, 1)).is_err());
    }
}
