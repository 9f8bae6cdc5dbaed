//! Binary parameter file.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "SPTF" | version u32 | count u32 |
//!   count x ( name_len u32 | name utf-8 | rows u32 | cols u32 | re f32[rows*cols] | im f32[rows*cols] )
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use super::matrix::ComplexMatrix;
use super::param::ParamStore;
use crate::error::{Result, SpectfError};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SPTF";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_params(entries: &[(String, ComplexMatrix)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, m) in entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
        for v in m.re().iter().chain(m.im()) {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    out
}

/// Bytes of float payload (excluding headers and names) in an encoded file.
pub fn payload_bytes(entries: &[(String, ComplexMatrix)]) -> usize {
    entries.iter().map(|(_, m)| 2 * m.len() * 4).sum()
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(SpectfError::format(
                self.pos as u64,
                format!("truncated file while reading {what}"),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let raw = self.take(n * 4, what)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect())
    }
}

pub fn decode_params(bytes: &[u8]) -> Result<Vec<(String, ComplexMatrix)>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(SpectfError::format(0, "bad magic, expected SPTF"));
    }
    let version_at = r.pos;
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(SpectfError::format(version_at as u64, format!("unsupported version {version}")));
    }
    let count = r.u32("parameter count")? as usize;
    let mut out = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let name_at = r.pos;
        let name_len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| SpectfError::format(name_at as u64, "parameter name is not utf-8"))?
            .to_owned();
        let rows = r.u32("rows")? as usize;
        let cols = r.u32("cols")? as usize;
        let re = r.f32s(rows * cols, "real plane")?;
        let im = r.f32s(rows * cols, "imaginary plane")?;
        out.push((name, ComplexMatrix::from_parts(rows, cols, re, im)?));
    }
    if r.pos != bytes.len() {
        return Err(SpectfError::format(r.pos as u64, "trailing bytes after last parameter"));
    }
    Ok(out)
}

pub fn save_params(store: &ParamStore, path: impl AsRef<Path>) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_params(&store.snapshot()))?;
    Ok(())
}

pub fn load_params(path: impl AsRef<Path>) -> Result<Vec<(String, ComplexMatrix)>> {
    decode_params(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<(String, ComplexMatrix)> {
        let a = ComplexMatrix::from_parts(2, 3, vec![1.0, -2.5, 0.125, 3.0, 4.0, 5.0], vec![0.5; 6])
            .unwrap();
        let b = ComplexMatrix::from_parts(1, 1, vec![f32::MIN_POSITIVE as f64], vec![-0.0]).unwrap();
        vec![("layer.w".into(), a), ("b".into(), b)]
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let bytes = encode_params(&sample());
        let decoded = decode_params(&bytes).unwrap();
        assert_eq!(encode_params(&decoded), bytes);
        assert_eq!(decoded[0].1, sample()[0].1);
    }

    #[test]
    fn payload_accounting() {
        let entries = sample();
        let header = 12 + entries.iter().map(|(n, _)| 12 + n.len()).sum::<usize>();
        assert_eq!(encode_params(&entries).len(), header + payload_bytes(&entries));
    }

    #[test]
    fn truncation_and_magic_errors_carry_offsets() {
        let bytes = encode_params(&sample());
        match decode_params(&bytes[..bytes.len() - 2]) {
            Err(SpectfError::Format { offset, .. }) => assert!(offset > 12),
            other => panic!("expected format error, got {other:?}"),
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_params(&bad), Err(SpectfError::Format { offset: 0, .. })));
    }
}
