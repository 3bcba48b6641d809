//! Checkpoint files.
//!
//! Layout (all integers little-endian):
//!
//! | bytes | content |
//! |-------|---------|
//! | 4 | magic `UNET` |
//! | 4 | format version (`1`) |
//! | 4 × 6 | input size, levels, convs per level, base features, out classes, upsample mode |
//! | 8 | parameter count |
//! | 4 × count | `f32` parameters in [`UNetConfig::layout`] order |
//! | 8 | CRC-64/ECMA-182 of everything above |

use std::fs;
use std::path::Path;

use crc::{Crc, CRC_64_ECMA_182};

use super::unet::{UNetConfig, UNetParams, UpsampleMode};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"UNET";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 6 * 4 + 8;
const CHECKSUM: Crc<u64> = Crc::<u64>::new(&CRC_64_ECMA_182);

pub fn checksum(bytes: &[u8]) -> u64 {
    CHECKSUM.checksum(bytes)
}

pub fn encode_params(params: &UNetParams<f32>) -> Vec<u8> {
    let cfg = params.config();
    let mut buf = Vec::with_capacity(HEADER_LEN + 4 * params.values().len() + 8);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    for field in [
        cfg.input_size,
        cfg.levels,
        cfg.convs_per_level,
        cfg.base_features,
        cfg.out_classes,
    ] {
        buf.extend_from_slice(&(field as u32).to_le_bytes());
    }
    let mode: u32 = match cfg.upsample {
        UpsampleMode::BilinearConv => 0,
    };
    buf.extend_from_slice(&mode.to_le_bytes());
    buf.extend_from_slice(&(params.values().len() as u64).to_le_bytes());
    for v in params.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let sum = checksum(&buf);
    buf.extend_from_slice(&sum.to_le_bytes());
    buf
}

/// Decodes a checkpoint, verifying magic, version and checksum.
pub fn decode_params(path: &Path, bytes: &[u8]) -> Result<UNetParams<f32>> {
    let corrupt = |reason: &str| Error::CorruptHeader {
        path: path.to_owned(),
        reason: reason.to_string(),
    };
    if bytes.len() < HEADER_LEN + 8 {
        return Err(corrupt("checkpoint truncated"));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(trailer.try_into().unwrap());
    let computed = checksum(body);
    if stored != computed {
        return Err(Error::ChecksumMismatch { stored, computed });
    }
    if &body[..4] != MAGIC {
        return Err(corrupt("missing UNET magic"));
    }
    let word = |i: usize| u32::from_le_bytes(body[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    if word(0) != VERSION {
        return Err(corrupt(&format!("unsupported checkpoint version {}", word(0))));
    }
    let upsample = match word(6) {
        0 => UpsampleMode::BilinearConv,
        m => return Err(corrupt(&format!("unknown upsample mode {m}"))),
    };
    let config = UNetConfig {
        input_size: word(1) as usize,
        levels: word(2) as usize,
        convs_per_level: word(3) as usize,
        base_features: word(4) as usize,
        out_classes: word(5) as usize,
        upsample,
    };
    let count = u64::from_le_bytes(body[32..40].try_into().unwrap()) as usize;
    let values = &body[HEADER_LEN..];
    if values.len() != 4 * count {
        return Err(corrupt("parameter block length does not match count"));
    }
    let values = values
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    UNetParams::from_values(config, values)
}

pub fn save_params(params: &UNetParams<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_params(params)).map_err(|e| Error::io(path, e))
}

/// Loads a checkpoint of any configuration.
pub fn read_params(path: impl AsRef<Path>) -> Result<UNetParams<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_params(path, &bytes)
}

/// Loads a checkpoint and requires it to match `expected`.
pub fn load_params(path: impl AsRef<Path>, expected: &UNetConfig) -> Result<UNetParams<f32>> {
    let params = read_params(path)?;
    if params.config() != expected {
        return Err(Error::ConfigMismatch(format!(
            "checkpoint holds {:?}, expected {:?}",
            params.config(),
            expected
        )));
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let p = UNetParams::<f32>::init(UNetConfig::desk(3), 11).unwrap();
        save_params(&p, &path).unwrap();
        let back = load_params(&path, &UNetConfig::desk(3)).unwrap();
        assert!(p
            .values()
            .iter()
            .zip(back.values())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn wrong_config_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        save_params(&UNetParams::<f32>::init(UNetConfig::desk(3), 1).unwrap(), &path).unwrap();
        assert!(matches!(
            load_params(&path, &UNetConfig::desk(1)),
            Err(Error::ConfigMismatch(_))
        ));
    }

    #[test]
    fn corrupted_byte_fails_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        save_params(&UNetParams::<f32>::init(UNetConfig::desk(1), 1).unwrap(), &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[100] ^= 0x10;
        fs::write(&path, bytes).unwrap();
        assert!(matches!(
            load_params(&path, &UNetConfig::desk(1)),
            Err(Error::ChecksumMismatch { .. })
        ));
    }
}
