//! Reference `[5/4]` initializations: closed-form Padé approximants for the
//! smooth activations and least-squares fits for the ReLU family.

use super::target::TargetActivation;
use crate::error::{Error, Result};
use crate::rational::RationalCoefficients;

type Column = ([f64; 6], [f64; 4]);

const RELU: Column = (
    [0.02996348, 0.61690165, 2.37539147, 3.06608078, 1.52474449, 0.25281987],
    [1.19160814, 4.40811795, 0.91111034, 0.34885983],
);
const LRELU_0_01: Column = (
    [0.02979246, 0.61837738, 2.32335207, 3.05202660, 1.48548002, 0.25103717],
    [1.14201226, 4.39322834, 0.87154450, 0.34720652],
);
const LRELU_0_20: Column = (
    [0.02557776, 0.66182815, 1.58182975, 2.94478759, 0.95287794, 0.23319681],
    [0.50962605, 4.18376890, 0.37832090, 0.32407314],
);
const LRELU_0_25: Column = (
    [0.02423485, 0.67709718, 1.43858363, 2.95497990, 0.85679722, 0.23229612],
    [0.41014746, 4.14691964, 0.30292546, 0.32002850],
);
const LRELU_0_30: Column = (
    [0.02282366, 0.69358438, 1.30847432, 2.97681599, 0.77165297, 0.23252265],
    [0.32849543, 4.11557902, 0.24155603, 0.31659365],
);
const LRELU_NEG_0_5: Column = (
    [0.02650441, 0.80772912, 13.56611639, 7.00217900, 11.61477781, 0.68720375],
    [13.70648993, 6.07781733, 12.32535229, 0.54006880],
);

const SIGMOID: Column = (
    [
        1.0 / 2.0,
        1.0 / 4.0,
        1.0 / 18.0,
        1.0 / 144.0,
        1.0 / 2016.0,
        1.0 / 60480.0,
    ],
    // The symbolic derivation gives 1/1008; 1/10008 appears in some printings.
    [0.0, 1.0 / 9.0, 0.0, 1.0 / 1008.0],
);
const TANH: Column = (
    [0.0, 1.0, 0.0, 1.0 / 9.0, 0.0, 1.0 / 945.0],
    [0.0, 4.0 / 9.0, 0.0, 1.0 / 63.0],
);

fn swish(beta: f64) -> Column {
    let b2 = beta * beta;
    let b3 = b2 * beta;
    let b4 = b2 * b2;
    (
        [
            0.0,
            0.5,
            beta / 4.0,
            3.0 * b2 / 56.0,
            b3 / 168.0,
            b4 / 3360.0,
        ],
        [0.0, 3.0 * b2 / 28.0, 0.0, b4 / 1680.0],
    )
}

/// Names accepted by [`builtin_coefficients`].
pub const BUILTIN_NAMES: [&str; 9] = [
    "sigmoid",
    "tanh",
    "swish(beta)",
    "relu",
    "lrelu(0.01)",
    "lrelu(0.20)",
    "lrelu(0.25)",
    "lrelu(0.30)",
    "lrelu(-0.5)",
];

/// Embedded `[5/4]` coefficients for `name`, e.g. `"lrelu(0.01)"` or `"swish(1.5)"`.
pub fn builtin_coefficients(name: &str) -> Result<RationalCoefficients> {
    let unknown = || Error::UnknownName(name.to_string());
    let target: TargetActivation = name.parse().map_err(|_| unknown())?;
    let (a, b) = match target {
        TargetActivation::Sigmoid => SIGMOID,
        TargetActivation::Tanh => TANH,
        TargetActivation::Swish { beta } => swish(beta),
        TargetActivation::Relu => RELU,
        TargetActivation::LeakyRelu { alpha } => match alpha {
            a if a == 0.01 => LRELU_0_01,
            a if a == 0.2 => LRELU_0_20,
            a if a == 0.25 => LRELU_0_25,
            a if a == 0.3 => LRELU_0_30,
            a if a == -0.5 => LRELU_NEG_0_5,
            _ => return Err(unknown()),
        },
        _ => return Err(unknown()),
    };
    RationalCoefficients::new(a.to_vec(), b.to_vec())
}

/// The target each builtin approximates.
pub fn builtin_target(name: &str) -> Result<TargetActivation> {
    builtin_coefficients(name)?;
    name.parse()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::{eval_pau, SafetyMode};

    #[test]
    fn lrelu_column_verbatim() {
        let c = builtin_coefficients("lrelu(0.01)").unwrap();
        assert_eq!(c.numerator()[0], 0.02979246);
        assert_eq!(c.numerator()[1], 0.61837738);
        assert_eq!(c.denominator()[3], 0.34720652);
    }

    #[test]
    fn relu_column_verbatim() {
        let c = builtin_coefficients("relu").unwrap();
        assert_eq!(
            c.numerator(),
            &[0.02996348, 0.61690165, 2.37539147, 3.06608078, 1.52474449, 0.25281987]
        );
        assert_eq!(
            c.denominator(),
            &[1.19160814, 4.40811795, 0.91111034, 0.34885983]
        );
    }

    #[test]
    fn tanh_and_sigmoid_columns() {
        let t = builtin_coefficients("tanh").unwrap();
        assert_eq!(t.numerator(), &[0.0, 1.0, 0.0, 1.0 / 9.0, 0.0, 1.0 / 945.0]);
        assert_eq!(t.denominator(), &[0.0, 4.0 / 9.0, 0.0, 1.0 / 63.0]);
        let s = builtin_coefficients("sigmoid").unwrap();
        let v = eval_pau(1.0, &s, SafetyMode::Safe).unwrap();
        assert!((v - 0.73107).abs() < 1e-4, "{v}");
    }

    #[test]
    fn name_variants() {
        assert_eq!(
            builtin_coefficients("lrelu(0.2)").unwrap(),
            builtin_coefficients("lrelu(0.20)").unwrap()
        );
        assert_eq!(
            builtin_coefficients("swish").unwrap(),
            builtin_coefficients("swish(1)").unwrap()
        );
        let s = builtin_coefficients("swish(2)").unwrap();
        assert_eq!(s.numerator()[2], 0.5);
        assert_eq!(s.denominator()[3], 16.0 / 1680.0);
    }

    #[test]
    fn unknown_names() {
        for name in ["lrelu(0.15)", "elu", "relu6", "gelu", ""] {
            assert!(
                matches!(builtin_coefficients(name), Err(Error::UnknownName(_))),
                "{name}"
            );
        }
    }
}
