//! Field files: a raw little-endian payload of interleaved (re, im) f64 values
//! plus a JSON sidecar with the grid, a role tag and a SHA-256 checksum.

use crate::error::{Error, Result};
use crate::fields::{Grid3, ScalarField, VectorField};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub n: usize,
    pub l: f64,
    pub role: String,
    pub components: usize,
    pub checksum: String,
}

fn paths(base: &Path) -> (PathBuf, PathBuf) {
    let mut bin = base.as_os_str().to_owned();
    bin.push(".bin");
    let mut json = base.as_os_str().to_owned();
    json.push(".json");
    (PathBuf::from(bin), PathBuf::from(json))
}

pub fn checksum(bytes: &[u8]) -> String {
    format!("sha256:{}", hex::encode(Sha256::digest(bytes)))
}

fn encode(blocks: &[&[C64]]) -> Vec<u8> {
    let total: usize = blocks.iter().map(|b| b.len()).sum();
    let mut out = Vec::with_capacity(total * 16);
    for b in blocks {
        for v in b.iter() {
            out.extend_from_slice(&v.re.to_le_bytes());
            out.extend_from_slice(&v.im.to_le_bytes());
        }
    }
    out
}

fn decode(bytes: &[u8]) -> Vec<C64> {
    bytes
        .chunks_exact(16)
        .map(|c| {
            let re = f64::from_le_bytes(c[0..8].try_into().unwrap());
            let im = f64::from_le_bytes(c[8..16].try_into().unwrap());
            C64::new(re, im)
        })
        .collect()
}

fn write_blocks(base: &Path, grid: &Grid3, role: &str, blocks: &[&[C64]]) -> Result<Sidecar> {
    if let Some(dir) = base.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let (bin, json) = paths(base);
    let payload = encode(blocks);
    let side = Sidecar {
        n: grid.n,
        l: grid.l,
        role: role.to_string(),
        components: blocks.len(),
        checksum: checksum(&payload),
    };
    fs::write(&bin, &payload)?;
    fs::write(&json, serde_json::to_string_pretty(&side).map_err(|e| Error::Format(e.to_string()))?)?;
    Ok(side)
}

fn read_blocks(base: &Path, components: usize) -> Result<(Sidecar, Grid3, Vec<C64>)> {
    let (bin, json) = paths(base);
    if !json.exists() {
        return Err(Error::Format(format!("missing sidecar {}", json.display())));
    }
    let side: Sidecar =
        serde_json::from_str(&fs::read_to_string(&json)?).map_err(|e| Error::Format(format!("{}: {e}", json.display())))?;
    let grid = Grid3::new(side.n, side.l)?;
    if side.components != components {
        return Err(Error::Format(format!(
            "{} holds {} components, expected {}",
            base.display(),
            side.components,
            components
        )));
    }
    let payload = fs::read(&bin)?;
    if payload.len() != grid.len() * components * 16 {
        return Err(Error::Format(format!(
            "{}: payload has {} bytes, sidecar shape needs {}",
            bin.display(),
            payload.len(),
            grid.len() * components * 16
        )));
    }
    if checksum(&payload) != side.checksum {
        return Err(Error::Checksum { path: bin.display().to_string() });
    }
    Ok((side, grid, decode(&payload)))
}

pub fn write_scalar(base: &Path, f: &ScalarField, role: &str) -> Result<Sidecar> {
    write_blocks(base, f.grid(), role, &[f.values()])
}

pub fn read_scalar(base: &Path) -> Result<(ScalarField, String)> {
    let (side, grid, vals) = read_blocks(base, 1)?;
    Ok((ScalarField::from_values(grid, vals)?, side.role))
}

pub fn write_vector(base: &Path, v: &VectorField, role: &str) -> Result<Sidecar> {
    write_blocks(base, v.grid(), role, &[v.c[0].values(), v.c[1].values(), v.c[2].values()])
}

pub fn read_vector(base: &Path) -> Result<(VectorField, String)> {
    let (side, grid, vals) = read_blocks(base, 3)?;
    let m = grid.len();
    let comp = |i: usize| ScalarField::from_values(grid, vals[i * m..(i + 1) * m].to_vec());
    Ok((VectorField::new([comp(0)?, comp(1)?, comp(2)?])?, side.role))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ScalarField {
        let g = Grid3::new(4, 1.5).unwrap();
        ScalarField::from_fn(g, |x| C64::new(x[0].sin() + 1e-300, x[1] * x[2] - 0.1))
    }

    #[test]
    fn scalar_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("u");
        let f = sample();
        write_scalar(&base, &f, "test").unwrap();
        let (g, role) = read_scalar(&base).unwrap();
        assert_eq!(role, "test");
        for (a, b) in f.values().iter().zip(g.values()) {
            assert_eq!(a.re.to_bits(), b.re.to_bits());
            assert_eq!(a.im.to_bits(), b.im.to_bits());
        }
    }

    #[test]
    fn corrupted_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("u");
        write_scalar(&base, &sample(), "test").unwrap();
        let bin = dir.path().join("u.bin");
        let mut bytes = fs::read(&bin).unwrap();
        bytes[17] ^= 0x40;
        fs::write(&bin, bytes).unwrap();
        assert!(matches!(read_scalar(&base), Err(Error::Checksum { .. })));
    }

    #[test]
    fn missing_sidecar_and_shape_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("u");
        write_scalar(&base, &sample(), "test").unwrap();
        assert!(read_vector(&base).is_err());
        fs::remove_file(dir.path().join("u.json")).unwrap();
        assert!(matches!(read_scalar(&base), Err(Error::Format(_))));
    }
}
