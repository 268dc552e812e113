//! Binary grid files.
//!
//! Layout, all integers little-endian:
//!
//! | bytes | field |
//! |-------|-------|
//! | 4 | magic `SCDG` |
//! | 2 | version (1) |
//! | 2 | dtype code: 1 = f32, 2 = f64 |
//! | 4 | height |
//! | 4 | width |
//! | 2 | channels |
//!
//! The payload follows as little-endian floats in row-major order with the
//! channels of a pixel stored next to each other.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::ScalarGrid;

pub const MAGIC: &[u8; 4] = b"SCDG";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 18;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn code(self) -> u16 {
        match self {
            DType::F32 => 1,
            DType::F64 => 2,
        }
    }

    pub fn from_code(code: u16) -> Result<Self> {
        match code {
            1 => Ok(DType::F32),
            2 => Ok(DType::F64),
            c => Err(Error::Format(format!("unknown dtype code {c}"))),
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::F64 => "f64",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "f32" => Some(DType::F32),
            "f64" => Some(DType::F64),
            _ => None,
        }
    }
}

/// Serializes same-shaped channels into `out`.
pub fn encode(channels: &[ScalarGrid], dtype: DType) -> Result<Vec<u8>> {
    let first = channels
        .first()
        .ok_or_else(|| Error::Shape("grid file needs at least one channel".into()))?;
    for c in channels {
        c.ensure_same_shape(first, "grid file channels")?;
    }
    let count =
        u16::try_from(channels.len()).map_err(|_| Error::Shape("too many channels".into()))?;
    let height = u32::try_from(first.height()).map_err(|_| Error::Shape("grid too tall".into()))?;
    let width = u32::try_from(first.width()).map_err(|_| Error::Shape("grid too wide".into()))?;
    let mut out = Vec::with_capacity(HEADER_LEN + first.len() * channels.len() * dtype.size());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&dtype.code().to_le_bytes());
    out.extend_from_slice(&height.to_le_bytes());
    out.extend_from_slice(&width.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    for i in 0..first.len() {
        for c in channels {
            let v = c.values()[i];
            match dtype {
                DType::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
                DType::F64 => out.extend_from_slice(&v.to_le_bytes()),
            }
        }
    }
    Ok(out)
}

/// Parses a grid file into its channels and stored dtype.
pub fn decode(bytes: &[u8]) -> Result<(Vec<ScalarGrid>, DType)> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!(
            "{} bytes is shorter than the header",
            bytes.len()
        )));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Format("bad magic; not a grid file".into()));
    }
    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
    let u32_at =
        |o: usize| u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]);
    let version = u16_at(4);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let dtype = DType::from_code(u16_at(6))?;
    let (height, width, channels) = (u32_at(8) as usize, u32_at(12) as usize, u16_at(16) as usize);
    if channels == 0 {
        return Err(Error::Format("grid file has zero channels".into()));
    }
    let expected = height
        .checked_mul(width)
        .and_then(|n| n.checked_mul(channels))
        .and_then(|n| n.checked_mul(dtype.size()))
        .ok_or_else(|| Error::Format("grid dimensions overflow".into()))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != expected {
        return Err(Error::Format(format!(
            "payload is {} bytes, header implies {expected}",
            payload.len()
        )));
    }
    let mut data = vec![Vec::with_capacity(height * width); channels];
    for (k, chunk) in payload.chunks_exact(dtype.size()).enumerate() {
        let v = match dtype {
            DType::F32 => f32::from_le_bytes(chunk.try_into().expect("4-byte chunk")) as f64,
            DType::F64 => f64::from_le_bytes(chunk.try_into().expect("8-byte chunk")),
        };
        data[k % channels].push(v);
    }
    let grids = data
        .into_iter()
        .map(|values| ScalarGrid::new(height, width, values))
        .collect::<Result<Vec<_>>>()?;
    Ok((grids, dtype))
}

pub fn write_grids(path: &Path, channels: &[ScalarGrid], dtype: DType) -> Result<()> {
    let bytes = encode(channels, dtype)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn write_grid(path: &Path, grid: &ScalarGrid, dtype: DType) -> Result<()> {
    write_grids(path, std::slice::from_ref(grid), dtype)
}

pub fn read_grids(path: &Path) -> Result<Vec<ScalarGrid>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes).map(|(g, _)| g)
}

/// Reads a file that must hold exactly one channel.
pub fn read_grid(path: &Path) -> Result<ScalarGrid> {
    let mut grids = read_grids(path)?;
    if grids.len() != 1 {
        return Err(Error::Format(format!(
            "{} has {} channels, expected 1",
            path.display(),
            grids.len()
        )));
    }
    Ok(grids.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let g = ScalarGrid::from_fn(2, 3, |x, y| (x + 10 * y) as f64);
        let bytes = encode(&[g.clone(), g.map(|v| -v)], DType::F32).unwrap();
        assert_eq!(&bytes[..4], b"SCDG");
        assert_eq!(bytes[4..6], [1, 0]);
        assert_eq!(bytes[6..8], [1, 0]);
        assert_eq!(bytes[8..12], [2, 0, 0, 0]);
        assert_eq!(bytes[12..16], [3, 0, 0, 0]);
        assert_eq!(bytes[16..18], [2, 0]);
        assert_eq!(bytes.len(), 18 + 2 * 3 * 2 * 4);
        // Second value is channel 1 of pixel (0, 0).
        assert_eq!(f32::from_le_bytes(bytes[22..26].try_into().unwrap()), -0.0);
        assert_eq!(f32::from_le_bytes(bytes[26..30].try_into().unwrap()), 1.0);
    }

    #[test]
    fn rejects_corrupt_files() {
        let g = ScalarGrid::filled(2, 2, 1.0);
        let good = encode(&[g], DType::F64).unwrap();
        assert!(matches!(decode(&good[..10]), Err(Error::Format(_))));
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
        let mut bad = good.clone();
        bad[6] = 9;
        assert!(decode(&bad).is_err());
        assert!(decode(&good[..good.len() - 1]).is_err());
    }

    proptest! {
        #[test]
        fn f64_round_trip_is_bit_exact(values in proptest::collection::vec(any::<f64>(), 12), channels in 1usize..4) {
            let grids: Vec<ScalarGrid> = (0..channels)
                .map(|c| ScalarGrid::new(3, 4, values.iter().map(|v| v + c as f64).collect()).unwrap())
                .collect();
            let (back, dtype) = decode(&encode(&grids, DType::F64).unwrap()).unwrap();
            prop_assert_eq!(dtype, DType::F64);
            for (a, b) in grids.iter().zip(&back) {
                for (x, y) in a.values().iter().zip(b.values()) {
                    prop_assert!(x.to_bits() == y.to_bits() || (x.is_nan() && y.is_nan()));
                }
            }
        }

        #[test]
        fn f32_round_trip_is_lossless_for_f32_values(values in proptest::collection::vec(any::<f32>(), 6)) {
            let g = ScalarGrid::new(2, 3, values.iter().map(|v| *v as f64).collect()).unwrap();
            let (back, _) = decode(&encode(&[g.clone()], DType::F32).unwrap()).unwrap();
            for (x, y) in g.values().iter().zip(back[0].values()) {
                prop_assert!(x.to_bits() == y.to_bits() || (x.is_nan() && y.is_nan()));
            }
        }
    }
}
