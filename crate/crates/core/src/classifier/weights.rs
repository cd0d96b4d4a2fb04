//! `TNW1` weight files.
//!
//! Layout: the 4-byte magic `TNW1`, then for every tensor its rank (u32 LE),
//! each dimension (u32 LE) and the values as IEEE-754 f64 LE in row-major
//! order. Tensors follow each other until end of file.

use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"TNW1";

#[derive(Debug, Error)]
pub enum WeightFileError {
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("truncated weight file at byte {0}")]
    Truncated(usize),
    #[error("tensor dims {0:?} overflow")]
    Overflow(Vec<u32>),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub values: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, values: Vec<f64>) -> Self {
        assert_eq!(
            dims.iter().product::<usize>(),
            values.len(),
            "dims/value count mismatch"
        );
        Self { dims, values }
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let n = dims.iter().product();
        Self::new(dims, vec![0.0; n])
    }
}

/// Ordered tensors of one model: conv1 kernel, conv1 bias, conv2 kernel,
/// conv2 bias, dense matrix, dense bias.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightSet {
    pub tensors: Vec<Tensor>,
}

impl WeightSet {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        for t in &self.tensors {
            out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
            for &d in &t.dims {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in &t.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WeightFileError> {
        let mut reader = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = reader.take(4)?.try_into().unwrap();
        if &magic != MAGIC {
            return Err(WeightFileError::BadMagic(magic));
        }
        let mut tensors = Vec::new();
        while reader.pos < bytes.len() {
            let rank = reader.u32()? as usize;
            let raw: Vec<u32> = (0..rank).map(|_| reader.u32()).collect::<Result<_, _>>()?;
            let count = raw
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
                .filter(|n| n.checked_mul(8).is_some())
                .ok_or_else(|| WeightFileError::Overflow(raw.clone()))?;
            let payload = reader.take(count * 8)?;
            let values = payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push(Tensor::new(
                raw.into_iter().map(|d| d as usize).collect(),
                values,
            ));
        }
        Ok(Self { tensors })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WeightFileError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(WeightFileError::Truncated(self.bytes.len()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, WeightFileError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn save_weights(ws: &WeightSet, path: impl AsRef<Path>) -> Result<(), WeightFileError> {
    fs::write(path, ws.to_bytes())?;
    Ok(())
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<WeightSet, WeightFileError> {
    WeightSet::from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let ws = WeightSet {
            tensors: vec![Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0])],
        };
        let bytes = ws.to_bytes();
        assert_eq!(&bytes[..4], b"TNW1");
        assert_eq!(&bytes[4..8], &2u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &2u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &3u32.to_le_bytes());
        assert_eq!(bytes.len() - 16, 48);
        assert_eq!(&bytes[16..24], &1.0f64.to_le_bytes());
    }

    #[test]
    fn bad_magic_and_truncation() {
        assert!(matches!(
            WeightSet::from_bytes(b"XXXX"),
            Err(WeightFileError::BadMagic(m)) if &m == b"XXXX"
        ));
        assert!(matches!(
            WeightSet::from_bytes(b"TN"),
            Err(WeightFileError::Truncated(_))
        ));
        let ws = WeightSet {
            tensors: vec![Tensor::zeros(vec![4])],
        };
        let bytes = ws.to_bytes();
        assert!(matches!(
            WeightSet::from_bytes(&bytes[..bytes.len() - 1]),
            Err(WeightFileError::Truncated(_))
        ));
        assert!(matches!(
            WeightSet::from_bytes(&bytes[..6]),
            Err(WeightFileError::Truncated(_))
        ));
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.tnw");
        let ws = WeightSet {
            tensors: vec![
                Tensor::new(vec![1, 2], vec![f64::MIN_POSITIVE, -0.0]),
                Tensor::zeros(vec![]),
            ],
        };
        save_weights(&ws, &path).unwrap();
        let back = load_weights(&path).unwrap();
        assert_eq!(back.to_bytes(), ws.to_bytes());
    }

    proptest! {
        #[test]
        fn bytes_roundtrip_bitwise(shapes in proptest::collection::vec(proptest::collection::vec(1usize..5, 0..4), 0..5), seed in any::<u64>()) {
            let mut rng = crate::rng::Rng::new(seed);
            let tensors = shapes.into_iter().map(|dims| {
                let n = dims.iter().product();
                Tensor::new(dims, (0..n).map(|_| f64::from_bits(rng.next_u64() & !(0x7ff << 52) )).collect())
            }).collect();
            let ws = WeightSet { tensors };
            let back = WeightSet::from_bytes(&ws.to_bytes()).unwrap();
            prop_assert_eq!(back.to_bytes(), ws.to_bytes());
        }
    }
}
