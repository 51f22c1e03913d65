//! VXL1 volume files.
//!
//! ```text
//! offset  size  field
//!      0     4  magic "VXL1"
//!      4    12  X, Y, Z (u32)
//!     16     4  channel count (u32)
//!     20     1  dtype tag (0 = f32)
//!     21     1  intensity domain (0 = HU, 1 = normalized)
//!     22     1  spacing present (0 or 1)
//!     23     1  reserved, 0
//!     24    12  spacing (3 x f32)
//!     36     -  payload: channels in order, each X*Y*Z values, x-major
//! ```
//!
//! All integers and floats are little-endian.

use std::path::Path;

use super::write_atomic;
use crate::data::{IntensityDomain, Volume};
use crate::error::{Error, Result};
use crate::tensor::DType;

pub const HEADER_LEN: usize = 36;
const MAGIC: &[u8; 4] = b"VXL1";

fn format_err(path: &Path, offset: usize, detail: impl Into<String>) -> Error {
    Error::Format { path: path.to_path_buf(), offset: offset as u64, detail: detail.into() }
}

/// Serializes channels that share extents, domain, and spacing.
pub fn encode_vxl(channels: &[&Volume]) -> Result<Vec<u8>> {
    let first = channels.first().ok_or_else(|| Error::arg("write_volume", "no channels"))?;
    if let Some(c) = channels.iter().find(|c| c.dims != first.dims) {
        return Err(Error::dim("write_volume", None, format!("channel extents {:?} vs {:?}", c.dims, first.dims)));
    }
    let n: usize = first.dims.iter().product();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * n * channels.len());
    out.extend_from_slice(MAGIC);
    for d in first.dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&(channels.len() as u32).to_le_bytes());
    out.push(DType::F32.tag());
    out.push(match first.domain {
        IntensityDomain::Hu => 0,
        IntensityDomain::Normalized => 1,
    });
    out.push(u8::from(first.spacing.is_some()));
    out.push(0);
    for s in first.spacing.unwrap_or([0.0; 3]) {
        out.extend_from_slice(&s.to_le_bytes());
    }
    for c in channels {
        for v in &c.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().expect("4 bytes"))
}

fn f32_at(b: &[u8], at: usize) -> f32 {
    f32::from_le_bytes(b[at..at + 4].try_into().expect("4 bytes"))
}

/// Parses a VXL1 image; `path` only labels errors.
pub fn decode_vxl(bytes: &[u8], path: &Path) -> Result<Vec<Volume>> {
    if bytes.len() < HEADER_LEN {
        return Err(format_err(path, bytes.len(), format!("header truncated: need {HEADER_LEN} bytes, found {}", bytes.len())));
    }
    if &bytes[0..4] != MAGIC {
        return Err(format_err(path, 0, format!("bad magic {:?}, expected \"VXL1\"", String::from_utf8_lossy(&bytes[0..4]))));
    }
    let mut dims = [0usize; 3];
    for (a, d) in dims.iter_mut().enumerate() {
        *d = u32_at(bytes, 4 + 4 * a) as usize;
        if *d == 0 {
            return Err(format_err(path, 4 + 4 * a, format!("extent of axis {a} is zero")));
        }
    }
    let channels = u32_at(bytes, 16) as usize;
    if channels == 0 {
        return Err(format_err(path, 16, "channel count is zero"));
    }
    if DType::from_tag(bytes[20]) != Some(DType::F32) {
        return Err(format_err(path, 20, format!("unsupported dtype tag {}", bytes[20])));
    }
    let domain = match bytes[21] {
        0 => IntensityDomain::Hu,
        1 => IntensityDomain::Normalized,
        t => return Err(format_err(path, 21, format!("unknown intensity domain {t}"))),
    };
    let spacing = match bytes[22] {
        0 => None,
        1 => Some([f32_at(bytes, 24), f32_at(bytes, 28), f32_at(bytes, 32)]),
        t => return Err(format_err(path, 22, format!("spacing flag must be 0 or 1, found {t}"))),
    };
    let n = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
    let expected = n.and_then(|n| n.checked_mul(channels)).and_then(|v| v.checked_mul(4));
    let payload = bytes.len() - HEADER_LEN;
    match expected {
        Some(e) if e == payload => {}
        Some(e) => {
            return Err(format_err(path, HEADER_LEN, format!("payload holds {payload} bytes, expected {e} ({dims:?} x {channels} channels x 4)")));
        }
        None => return Err(format_err(path, 4, format!("extents {dims:?} x {channels} overflow"))),
    }
    let n = n.unwrap_or(0);
    let volumes = (0..channels)
        .map(|c| {
            let base = HEADER_LEN + 4 * n * c;
            let data = (0..n).map(|i| f32_at(bytes, base + 4 * i)).collect();
            Volume { dims, data, spacing, domain }
        })
        .collect();
    Ok(volumes)
}

pub fn read_channels(path: &Path) -> Result<Vec<Volume>> {
    decode_vxl(&std::fs::read(path)?, path)
}

/// Reads a single-channel volume.
pub fn read_volume(path: &Path) -> Result<Volume> {
    let mut v = read_channels(path)?;
    if v.len() != 1 {
        return Err(format_err(path, 16, format!("expected 1 channel, found {}", v.len())));
    }
    Ok(v.remove(0))
}

pub fn write_channels(channels: &[&Volume], path: &Path) -> Result<()> {
    write_atomic(path, &encode_vxl(channels)?)
}

pub fn write_volume(v: &Volume, path: &Path) -> Result<()> {
    write_channels(&[v], path)
}

/// Element type of a headerless little-endian export.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RawDType {
    U8,
    I16,
    U16,
    I32,
    F32,
}

impl RawDType {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "u8" => RawDType::U8,
            "i16" => RawDType::I16,
            "u16" => RawDType::U16,
            "i32" => RawDType::I32,
            "f32" => RawDType::F32,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            RawDType::U8 => 1,
            RawDType::I16 | RawDType::U16 => 2,
            RawDType::I32 | RawDType::F32 => 4,
        }
    }
}

/// Imports a headerless x-major CT export as an HU volume.
pub fn read_raw(path: &Path, dims: [usize; 3], dtype: RawDType) -> Result<Volume> {
    let bytes = std::fs::read(path)?;
    let n: usize = dims.iter().product();
    if n == 0 {
        return Err(Error::arg("read_raw", format!("extents {dims:?} contain a zero")));
    }
    let want = n * dtype.size();
    if bytes.len() != want {
        return Err(format_err(path, bytes.len().min(want), format!("raw payload holds {} bytes, expected {want} for {dims:?} {dtype:?}", bytes.len())));
    }
    let data = bytes
        .chunks_exact(dtype.size())
        .map(|c| match dtype {
            RawDType::U8 => c[0] as f32,
            RawDType::I16 => i16::from_le_bytes([c[0], c[1]]) as f32,
            RawDType::U16 => u16::from_le_bytes([c[0], c[1]]) as f32,
            RawDType::I32 => i32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f32,
            RawDType::F32 => f32::from_le_bytes([c[0], c[1], c[2], c[3]]),
        })
        .collect();
    Volume::new(dims, data, IntensityDomain::Hu)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn p() -> &'static Path {
        Path::new("mem.vxl")
    }

    #[test]
    fn fuzz_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1000 {
            let dims = [rng.random_range(1..6), rng.random_range(1..6), rng.random_range(1..6)];
            let n: usize = dims.iter().product();
            let channels = rng.random_range(1..4);
            let spacing = rng.random_bool(0.5).then(|| [rng.random(), rng.random(), rng.random()]);
            let domain = if rng.random_bool(0.5) { IntensityDomain::Hu } else { IntensityDomain::Normalized };
            let vols: Vec<Volume> = (0..channels)
                .map(|_| Volume { dims, data: (0..n).map(|_| f32::from_bits(rng.random::<u32>() & 0x7f7f_ffff)).collect(), spacing, domain })
                .collect();
            let bytes = encode_vxl(&vols.iter().collect::<Vec<_>>()).unwrap();
            let back = decode_vxl(&bytes, p()).unwrap();
            assert_eq!(back.len(), channels);
            for (a, b) in vols.iter().zip(&back) {
                assert_eq!(a.dims, b.dims);
                assert_eq!(a.spacing, b.spacing);
                assert_eq!(a.domain, b.domain);
                assert!(a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits()));
            }
        }
    }

    #[test]
    fn truncated_payload_names_lengths() {
        let v = Volume::filled([2, 3, 4], 1.0, IntensityDomain::Normalized);
        let bytes = encode_vxl(&[&v]).unwrap();
        match decode_vxl(&bytes[..bytes.len() - 5], p()) {
            Err(Error::Format { offset, detail, .. }) => {
                assert_eq!(offset, HEADER_LEN as u64);
                assert!(detail.contains("91") && detail.contains("96"), "{detail}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn header_errors_carry_offsets() {
        let v = Volume::filled([2, 2, 2], 0.0, IntensityDomain::Hu);
        let good = encode_vxl(&[&v]).unwrap();
        let offset = |b: &[u8]| match decode_vxl(b, p()) {
            Err(Error::Format { offset, .. }) => offset,
            other => panic!("{other:?}"),
        };
        let mut bad = good.clone();
        bad[0] = b'X';
        assert_eq!(offset(&bad), 0);
        let mut bad = good.clone();
        bad[8..12].copy_from_slice(&0u32.to_le_bytes());
        assert_eq!(offset(&bad), 8);
        let mut bad = good.clone();
        bad[20] = 9;
        assert_eq!(offset(&bad), 20);
        assert_eq!(offset(&good[..10]), 10);
    }

    #[test]
    fn files_round_trip_and_raw_import() {
        let dir = tempfile::tempdir().unwrap();
        let v = Volume { spacing: Some([0.5, 0.5, 2.0]), ..Volume::filled([3, 2, 2], 0.25, IntensityDomain::Normalized) };
        let path = dir.path().join("a.vxl");
        write_volume(&v, &path).unwrap();
        assert_eq!(read_volume(&path).unwrap(), v);
        write_channels(&[&v, &v], &path).unwrap();
        assert!(matches!(read_volume(&path), Err(Error::Format { offset: 16, .. })));

        let raw = dir.path().join("ct.raw");
        let vals: [i16; 4] = [-1000, 0, 40, 1200];
        std::fs::write(&raw, vals.iter().flat_map(|v| v.to_le_bytes()).collect::<Vec<u8>>()).unwrap();
        let r = read_raw(&raw, [1, 2, 2], RawDType::I16).unwrap();
        assert_eq!(r.data, vec![-1000.0, 0.0, 40.0, 1200.0]);
        assert!(read_raw(&raw, [2, 2, 2], RawDType::I16).is_err());
    }
}
