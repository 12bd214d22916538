//! fvecs / ivecs files and the little-endian byte helpers shared by the
//! binary snapshot formats.
//!
//! A record is `[i32 d][d × payload]`, all little-endian; every record of a
//! file has the same `d`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::dataset::VectorDataset;
use crate::error::{GateError, Result};

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| GateError::io(path, e))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let f = fs::File::create(path).map_err(|e| GateError::io(path, e))?;
    let mut w = BufWriter::new(f);
    w.write_all(bytes).and_then(|_| w.flush()).map_err(|e| GateError::io(path, e))
}

/// Cursor over a byte buffer that reports offsets in its errors.
pub(crate) struct ByteReader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(path: &'a Path, bytes: &'a [u8]) -> Self {
        Self { path, bytes, pos: 0 }
    }

    pub(crate) fn offset(&self) -> u64 {
        self.pos as u64
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn is_done(&self) -> bool {
        self.pos == self.bytes.len()
    }

    pub(crate) fn err(&self, reason: impl Into<String>) -> GateError {
        GateError::format(self.path, self.offset(), reason)
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(self.err(format!("truncated {what}: need {n} bytes, {} remain", self.remaining())));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let at = self.offset();
        let got = self.take(4, "magic")?;
        if got != expected {
            return Err(GateError::format(
                self.path,
                at,
                format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(got),
                    String::from_utf8_lossy(expected)
                ),
            ));
        }
        Ok(())
    }

    pub(crate) fn i32(&mut self, what: &str) -> Result<i32> {
        let b = self.take(4, what)?;
        Ok(i32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    /// Reads an i32 that must be non-negative.
    pub(crate) fn count(&mut self, what: &str) -> Result<usize> {
        let at = self.offset();
        let v = self.i32(what)?;
        if v < 0 {
            return Err(GateError::format(self.path, at, format!("negative {what}: {v}")));
        }
        Ok(v as usize)
    }

    pub(crate) fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let b = self.take(n * 4, what)?;
        Ok(b.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
    }

    pub(crate) fn i32s(&mut self, n: usize, what: &str) -> Result<Vec<i32>> {
        let b = self.take(n * 4, what)?;
        Ok(b.chunks_exact(4).map(|c| i32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
    }
}

pub(crate) fn put_i32(buf: &mut Vec<u8>, v: i32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_f32(buf: &mut Vec<u8>, v: f32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn to_i32(v: usize, what: &str) -> Result<i32> {
    i32::try_from(v).map_err(|_| GateError::invalid(format!("{what} {v} does not fit in i32")))
}

/// Reads records of a vecs file, returning `(dim, flat payload)`.
fn read_vecs<T>(
    path: &Path,
    read: impl Fn(&mut ByteReader<'_>, usize) -> Result<Vec<T>>,
) -> Result<(usize, Vec<T>, usize)> {
    let bytes = read_file(path)?;
    let mut r = ByteReader::new(path, &bytes);
    let mut dim: Option<usize> = None;
    let mut out = Vec::new();
    let mut records = 0usize;
    while !r.is_done() {
        let at = r.offset();
        let d = r.i32("record dimension")?;
        if d <= 0 {
            return Err(GateError::format(path, at, format!("record dimension {d} must be positive")));
        }
        let d = d as usize;
        match dim {
            None => dim = Some(d),
            Some(prev) if prev != d => {
                return Err(GateError::format(
                    path,
                    at,
                    format!("record dimension {d} differs from first record's {prev}"),
                ))
            }
            _ => {}
        }
        out.extend(read(&mut r, d)?);
        records += 1;
    }
    let dim = dim.ok_or_else(|| GateError::format(path, 0, "file holds no records"))?;
    Ok((dim, out, records))
}

pub fn load_fvecs(path: impl AsRef<Path>) -> Result<VectorDataset> {
    let path = path.as_ref();
    let (dim, data, _) = read_vecs(path, |r, d| r.f32s(d, "float payload"))?;
    if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
        let rec = pos / dim;
        let offset = (rec * (dim + 1) + 1 + pos % dim) * 4;
        return Err(GateError::format(path, offset as u64, "non-finite component"));
    }
    VectorDataset::new(dim, data)
}

pub fn save_fvecs(dataset: &VectorDataset, path: impl AsRef<Path>) -> Result<()> {
    let dim = to_i32(dataset.dim(), "dimension")?;
    let mut buf = Vec::with_capacity(dataset.len() * (dataset.dim() + 1) * 4);
    for v in dataset.iter() {
        put_i32(&mut buf, dim);
        for x in v {
            put_f32(&mut buf, *x);
        }
    }
    write_file(path.as_ref(), &buf)
}

pub fn load_ivecs(path: impl AsRef<Path>) -> Result<Vec<Vec<i32>>> {
    let (dim, data, _) = read_vecs(path.as_ref(), |r, d| r.i32s(d, "integer payload"))?;
    Ok(data.chunks_exact(dim).map(|c| c.to_vec()).collect())
}

pub fn save_ivecs(rows: &[Vec<i32>], path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    let dim = rows.first().map_or(0, |r| r.len());
    for (i, row) in rows.iter().enumerate() {
        if row.len() != dim || dim == 0 {
            return Err(GateError::invalid(format!(
                "ivecs row {i} has length {} (expected {dim}, non-zero)",
                row.len()
            )));
        }
        put_i32(&mut buf, to_i32(dim, "dimension")?);
        for x in row {
            put_i32(&mut buf, *x);
        }
    }
    write_file(path.as_ref(), &buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn hand_built_record() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("one.fvecs");
        let mut b = Vec::new();
        put_i32(&mut b, 2);
        put_f32(&mut b, 1.0);
        put_f32(&mut b, 2.0);
        fs::write(&p, &b).unwrap();
        let ds = load_fvecs(&p).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.get(0), &[1.0, 2.0]);
    }

    #[test]
    fn truncated_record_names_offset() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.fvecs");
        let mut b = Vec::new();
        put_i32(&mut b, 3);
        put_f32(&mut b, 1.0);
        put_f32(&mut b, 2.0);
        fs::write(&p, &b).unwrap();
        match load_fvecs(&p) {
            Err(GateError::Format { offset, .. }) => assert_eq!(offset, 4),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn inconsistent_and_nonpositive_dims() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("mixed.fvecs");
        let mut b = Vec::new();
        put_i32(&mut b, 1);
        put_f32(&mut b, 1.0);
        put_i32(&mut b, 2);
        put_f32(&mut b, 1.0);
        put_f32(&mut b, 1.0);
        fs::write(&p, &b).unwrap();
        match load_fvecs(&p) {
            Err(GateError::Format { offset, .. }) => assert_eq!(offset, 8),
            other => panic!("expected format error, got {other:?}"),
        }

        let mut b = Vec::new();
        put_i32(&mut b, 0);
        fs::write(&p, &b).unwrap();
        assert!(matches!(load_fvecs(&p), Err(GateError::Format { offset: 0, .. })));
        let mut b = Vec::new();
        put_i32(&mut b, -4);
        fs::write(&p, &b).unwrap();
        assert!(matches!(load_ivecs(&p), Err(GateError::Format { offset: 0, .. })));
    }

    #[test]
    fn fvecs_round_trip_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rt.fvecs");
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let data: Vec<f32> = (0..100 * 12).map(|_| rng.random_range(-1e3..1e3)).collect();
        let ds = VectorDataset::new(12, data).unwrap();
        save_fvecs(&ds, &p).unwrap();
        let back = load_fvecs(&p).unwrap();
        let a: Vec<u32> = ds.as_slice().iter().map(|x| x.to_bits()).collect();
        let b: Vec<u32> = back.as_slice().iter().map(|x| x.to_bits()).collect();
        assert_eq!(a, b);
        let bytes1 = fs::read(&p).unwrap();
        save_fvecs(&back, &p).unwrap();
        assert_eq!(bytes1, fs::read(&p).unwrap());
    }

    #[test]
    fn ivecs_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rt.ivecs");
        let rows = vec![vec![1, -2, 3], vec![i32::MAX, 0, i32::MIN]];
        save_ivecs(&rows, &p).unwrap();
        assert_eq!(load_ivecs(&p).unwrap(), rows);
        assert!(save_ivecs(&[vec![1], vec![1, 2]], &p).is_err());
    }
}
