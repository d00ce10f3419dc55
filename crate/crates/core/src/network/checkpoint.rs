//! Checkpoints: `manifest.toml` (architecture, seed, units, offset table) next
//! to `weights.bin` (64-bit little-endian floats).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Network, NetworkSpec, ParamSlot, PauUnit};
use crate::document::{CoefficientDocument, RawDocument};
use crate::error::{Error, Result};
use crate::rational::NoiseGranularity;

const CHECKPOINT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const WEIGHTS_FILE: &str = "weights.bin";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    version: u32,
    /// Decimal string: TOML integers are signed 64-bit.
    seed: String,
    spec: NetworkSpec,
    units: Vec<UnitEntry>,
    blobs: Vec<BlobEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct UnitEntry {
    trainable: bool,
    noise_alpha: f64,
    noise: NoiseGranularity,
    coefficients: RawDocument,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
struct BlobEntry {
    name: String,
    /// Byte offset into the weight file.
    offset: u64,
    /// Number of f64 values.
    len: u64,
}

fn blob_table(net: &Network) -> Vec<BlobEntry> {
    let mut blobs = Vec::new();
    for (i, slot) in net.slots().iter().enumerate() {
        if let Some(slot) = slot {
            for (kind, range) in [("weight", &slot.weights), ("bias", &slot.bias)] {
                blobs.push(BlobEntry {
                    name: format!("layer{i}.{kind}"),
                    offset: 8 * range.start as u64,
                    len: range.len() as u64,
                });
            }
        }
    }
    if net.mask().is_some() {
        blobs.push(BlobEntry {
            name: "mask".into(),
            offset: 8 * net.params().len() as u64,
            len: net.params().len() as u64,
        });
    }
    blobs
}

pub fn save_checkpoint(net: &Network, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let units = net
        .units()
        .iter()
        .map(|u| UnitEntry {
            trainable: u.trainable,
            noise_alpha: u.noise_alpha,
            noise: u.noise,
            coefficients: CoefficientDocument::new(u.coefficients.clone(), u.mode, "checkpoint")
                .to_raw(),
        })
        .collect();
    let manifest = Manifest {
        version: CHECKPOINT_VERSION,
        seed: net.seed().to_string(),
        spec: net.spec().clone(),
        units,
        blobs: blob_table(net),
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Parse(e.to_string()))?;

    let mut bytes = Vec::with_capacity(8 * net.params().len() * 2);
    for v in net.params() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(mask) = net.mask() {
        for &live in mask {
            bytes.extend_from_slice(&(if live { 1.0f64 } else { 0.0 }).to_le_bytes());
        }
    }
    fs::write(dir.join(WEIGHTS_FILE), bytes)?;
    fs::write(dir.join(MANIFEST_FILE), text)?;
    Ok(())
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<Network> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST_FILE);
    let weights_path = dir.join(WEIGHTS_FILE);
    let format_error = |message: String| Error::Format {
        path: manifest_path.clone(),
        message,
    };
    let text = fs::read_to_string(&manifest_path)?;
    let manifest: Manifest = toml::from_str(&text).map_err(|e| format_error(e.to_string()))?;
    if manifest.version != CHECKPOINT_VERSION {
        return Err(format_error(format!(
            "unsupported checkpoint version {}",
            manifest.version
        )));
    }
    let seed: u64 = manifest
        .seed
        .parse()
        .map_err(|_| format_error(format!("bad seed {:?}", manifest.seed)))?;
    let shapes = manifest.spec.shapes()?;

    let mut slots = Vec::with_capacity(manifest.spec.layers.len());
    let mut total = 0;
    for layer in &manifest.spec.layers {
        slots.push(layer.param_shape().map(|(w, b)| {
            let start = total;
            total += w + b;
            ParamSlot {
                weights: start..start + w,
                bias: start + w..start + w + b,
            }
        }));
    }

    let bytes = fs::read(&weights_path)?;
    let has_mask = manifest.blobs.iter().any(|b| b.name == "mask");
    let expected = 8 * total as u64 * if has_mask { 2 } else { 1 };
    if bytes.len() as u64 != expected {
        return Err(Error::Truncated {
            path: weights_path,
            expected,
            actual: bytes.len() as u64,
        });
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let params = values[..total].to_vec();
    let mask = has_mask.then(|| values[total..].iter().map(|&v| v != 0.0).collect());

    if manifest.spec.unit_count() != manifest.units.len() {
        return Err(format_error(format!(
            "spec uses {} units, manifest lists {}",
            manifest.spec.unit_count(),
            manifest.units.len()
        )));
    }
    let units = manifest
        .units
        .into_iter()
        .map(|u| {
            let doc = CoefficientDocument::from_raw(u.coefficients)?;
            Ok(PauUnit {
                coefficients: doc.coefficients,
                mode: doc.mode,
                noise_alpha: u.noise_alpha,
                noise: u.noise,
                trainable: u.trainable,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let net = Network::assemble(manifest.spec, shapes, slots, params, units, mask, seed);
    if blob_table(&net) != manifest.blobs {
        return Err(format_error("offset table does not match the architecture".into()));
    }
    Ok(net)
}
