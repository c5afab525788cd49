use std::path::Path;

use crate::error::{Error, Result};

pub const ARRAY_MAGIC: &[u8; 8] = b"CSFTARR1";

/// Dense little-endian `f64` array with an explicit shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Array {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Array {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::DimensionMismatch(format!("shape {shape:?} holds {n} values, got {}", data.len())));
        }
        Ok(Self { shape, data })
    }

    /// Stacks equally sized 3-vector lists into an `n × m × 3` array.
    pub fn from_vec3s(frames: &[Vec<[f64; 3]>]) -> Result<Self> {
        let m = frames.first().map_or(0, Vec::len);
        if frames.iter().any(|f| f.len() != m) {
            return Err(Error::DimensionMismatch("frames hold different numbers of points".into()));
        }
        Self::new(vec![frames.len(), m, 3], frames.iter().flatten().flatten().copied().collect())
    }

    pub fn to_vec3s(&self) -> Result<Vec<Vec<[f64; 3]>>> {
        match self.shape[..] {
            [_, m, 3] => Ok(self
                .data
                .chunks_exact(3 * m.max(1))
                .map(|f| f.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
                .collect()),
            _ => Err(Error::DimensionMismatch(format!("expected an n x m x 3 array, got {:?}", self.shape))),
        }
    }

    /// Splits along the first axis.
    pub fn rows(&self) -> Vec<Vec<f64>> {
        let n = self.shape.first().copied().unwrap_or(0);
        if n == 0 {
            return Vec::new();
        }
        self.data.chunks_exact(self.data.len() / n).map(<[f64]>::to_vec).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 8 * (self.shape.len() + self.data.len()));
        out.extend_from_slice(ARRAY_MAGIC);
        out.extend_from_slice(&(self.shape.len() as u32).to_le_bytes());
        for &d in &self.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        if bytes.len() < 12 || &bytes[..8] != ARRAY_MAGIC {
            return Err("missing CSFTARR1 header".into());
        }
        let ndim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let header = 12 + 8 * ndim;
        if bytes.len() < header {
            return Err("truncated shape".into());
        }
        let shape: Vec<usize> = bytes[12..header]
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()) as usize)
            .collect();
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or("shape overflows")?;
        if Some(bytes.len() - header) != n.checked_mul(8) {
            return Err(format!("shape {shape:?} does not match {} data bytes", bytes.len() - header));
        }
        let data = bytes[header..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(Self { shape, data })
    }
}

pub fn write_array(path: &Path, array: &Array) -> Result<()> {
    std::fs::write(path, array.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_array(path: &Path) -> Result<Array> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Array::from_bytes(&bytes).map_err(|m| Error::schema(path, m))
}
