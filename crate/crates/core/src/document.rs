//! Coefficient documents: a small UTF-8 key/value (TOML) file holding one unit.
//!
//! ```text
//! version = 1
//! orders = [5, 4]
//! safe = true
//! numerator = [0.0, 1.0, 0.0, 0.1111111111111111, 0.0, 0.0010582010582010583]
//! denominator = [0.0, 0.4444444444444444, 0.0, 0.015873015873015872]
//! provenance = "pade:tanh"
//! ```
//!
//! Floats are written in shortest round-trip form, so reading a document back
//! yields bit-identical coefficients.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rational::{RationalCoefficients, RationalOrders, SafetyMode};

pub const DOCUMENT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientDocument {
    pub coefficients: RationalCoefficients,
    pub mode: SafetyMode,
    pub provenance: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct RawDocument {
    pub version: u32,
    pub orders: [usize; 2],
    pub safe: bool,
    pub numerator: Vec<f64>,
    pub denominator: Vec<f64>,
    pub provenance: String,
}

impl CoefficientDocument {
    pub fn new(
        coefficients: RationalCoefficients,
        mode: SafetyMode,
        provenance: impl Into<String>,
    ) -> Self {
        Self {
            coefficients,
            mode,
            provenance: provenance.into(),
        }
    }

    pub(crate) fn to_raw(&self) -> RawDocument {
        let orders = self.coefficients.orders();
        RawDocument {
            version: DOCUMENT_VERSION,
            orders: [orders.numerator, orders.denominator],
            safe: self.mode.is_safe(),
            numerator: self.coefficients.numerator().to_vec(),
            denominator: self.coefficients.denominator().to_vec(),
            provenance: self.provenance.clone(),
        }
    }

    pub(crate) fn from_raw(raw: RawDocument) -> Result<Self> {
        if raw.version != DOCUMENT_VERSION {
            return Err(Error::Parse(format!(
                "unsupported document version {}",
                raw.version
            )));
        }
        let orders = RationalOrders::new(raw.orders[0], raw.orders[1]);
        if raw.numerator.len() != orders.numerator + 1 {
            return Err(Error::mismatch(
                "numerator",
                orders.numerator + 1,
                raw.numerator.len(),
            ));
        }
        if raw.denominator.len() != orders.denominator {
            return Err(Error::mismatch(
                "denominator",
                orders.denominator,
                raw.denominator.len(),
            ));
        }
        let coefficients = RationalCoefficients::new(raw.numerator, raw.denominator)?;
        let mode = if raw.safe {
            SafetyMode::Safe
        } else {
            SafetyMode::Unsafe
        };
        Ok(Self {
            coefficients,
            mode,
            provenance: raw.provenance,
        })
    }

    pub fn to_text(&self) -> String {
        toml::to_string(&self.to_raw()).expect("coefficient documents always serialize")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let raw: RawDocument = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        Self::from_raw(raw)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::parse(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn text_layout() {
        let c = RationalCoefficients::new(vec![0.5, 0.25], vec![-0.5]).unwrap();
        let doc = CoefficientDocument::new(c, SafetyMode::Safe, "pade:exp");
        let text = doc.to_text();
        assert!(text.contains("version = 1"), "{text}");
        assert!(text.contains("safe = true"), "{text}");
        assert!(text.contains("provenance = \"pade:exp\""), "{text}");
        assert_eq!(CoefficientDocument::parse(&text).unwrap(), doc);
    }

    #[test]
    fn rejects_inconsistent_orders() {
        let text = "version = 1\norders = [2, 1]\nsafe = false\nnumerator = [1.0, 2.0]\ndenominator = [1.0]\nprovenance = \"x\"\n";
        assert!(CoefficientDocument::parse(text).is_err());
        let text = text.replace("version = 1", "version = 2");
        assert!(CoefficientDocument::parse(&text).is_err());
    }

    #[test]
    fn rejects_unknown_keys() {
        let text = "version = 1\norders = [0, 0]\nsafe = true\nnumerator = [1.0]\ndenominator = []\nprovenance = \"x\"\nextra = 3\n";
        assert!(CoefficientDocument::parse(text).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            num in prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO, 1..8),
            den in prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::ZERO, 0..6),
            safe in any::<bool>(),
        ) {
            let mode = if safe { SafetyMode::Safe } else { SafetyMode::Unsafe };
            let doc = CoefficientDocument::new(
                RationalCoefficients::new(num, den).unwrap(), mode, "lsq:lrelu(0.01)");
            let back = CoefficientDocument::parse(&doc.to_text()).unwrap();
            let bits = |d: &CoefficientDocument| d.coefficients.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&back), bits(&doc));
            prop_assert_eq!(back.mode, doc.mode);
        }
    }
}
