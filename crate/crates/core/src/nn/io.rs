//! Flat little-endian f64 parameter files with a JSON manifest.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamManifest {
    pub name: String,
    pub count: usize,
    /// Architecture description of the owning network.
    pub architecture: serde_json::Value,
}

pub fn params_to_le_bytes<T: Scalar>(params: &[T]) -> Vec<u8> {
    let mut out = Vec::with_capacity(params.len() * 8);
    for p in params {
        out.extend_from_slice(&p.to_f64_lossy().to_le_bytes());
    }
    out
}

pub fn params_from_le_bytes<T: Scalar>(bytes: &[u8]) -> Result<Vec<T>> {
    if bytes.len() % 8 != 0 {
        return Err(Error::validation(format!(
            "parameter blob of {} bytes is not a multiple of 8",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("chunk of 8"))))
        .collect())
}

/// Writes `<stem>.bin` and `<stem>.json`.
pub fn write_params<T: Scalar>(dir: &Path, stem: &str, manifest: &ParamManifest, params: &[T]) -> Result<()> {
    let bin = dir.join(format!("{stem}.bin"));
    let json = dir.join(format!("{stem}.json"));
    fs::write(&bin, params_to_le_bytes(params)).map_err(|e| Error::io(&bin, e))?;
    let text = serde_json::to_string_pretty(manifest)?;
    fs::write(&json, text).map_err(|e| Error::io(&json, e))
}

pub fn read_params<T: Scalar>(dir: &Path, stem: &str) -> Result<(ParamManifest, Vec<T>)> {
    let bin = dir.join(format!("{stem}.bin"));
    let json = dir.join(format!("{stem}.json"));
    let text = fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
    let manifest: ParamManifest = serde_json::from_str(&text)?;
    let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    let params = params_from_le_bytes(&bytes)?;
    if params.len() != manifest.count {
        return Err(Error::DimensionMismatch {
            context: "parameter file",
            expected: manifest.count,
            got: params.len(),
        });
    }
    Ok((manifest, params))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bytes_are_little_endian_f64() {
        let b = params_to_le_bytes(&[1.0f64, -0.5]);
        assert_eq!(&b[..8], &1.0f64.to_le_bytes());
        let back: Vec<f64> = params_from_le_bytes(&b).unwrap();
        assert_eq!(back, vec![1.0, -0.5]);
        assert!(params_from_le_bytes::<f64>(&b[..7]).is_err());
    }
}
