use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Result, TensorError};

const MAGIC: &[u8; 4] = b"LPT1";

/// Dense row-major array of `f64` values.
///
/// A rank-0 tensor (empty shape) holds exactly one value and is used for
/// scalar losses.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        if shape.iter().any(|&d| d == 0) {
            return Err(TensorError::InvalidShape {
                op: "tensor",
                shape,
                reason: "dimensions must be positive".into(),
            });
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(TensorError::InvalidShape {
                op: "tensor",
                shape,
                reason: format!("expected {numel} values, got {}", data.len()),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    /// Panics on a zero-sized dimension; use [`Tensor::new`] for untrusted shapes.
    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f64) -> Self {
        let shape = shape.into();
        assert!(shape.iter().all(|&d| d > 0), "zero-sized dimension in {shape:?}");
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; numel],
        }
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> f64) -> Self {
        let shape = shape.into();
        assert!(shape.iter().all(|&d| d > 0), "zero-sized dimension in {shape:?}");
        let numel: usize = shape.iter().product();
        Tensor {
            shape,
            data: (0..numel).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Value of a scalar (or single-element) tensor.
    pub fn item(&self) -> Option<f64> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        if numel != self.data.len() || shape.iter().any(|&d| d == 0) {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape,
                rhs: shape,
            });
        }
        Ok(Tensor {
            shape,
            data: self.data,
        })
    }

    /// `(n, c, h, w)` of a rank-4 tensor.
    pub fn dims4(&self, op: &'static str) -> Result<[usize; 4]> {
        match self.shape[..] {
            [n, c, h, w] => Ok([n, c, h, w]),
            _ => Err(TensorError::InvalidShape {
                op,
                shape: self.shape.clone(),
                reason: "expected rank 4 (N, C, H, W)".into(),
            }),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Sub-tensor `[start, start + len)` along the leading dimension.
    pub fn narrow_batch(&self, start: usize, len: usize) -> Result<Tensor> {
        let Some(&n) = self.shape.first() else {
            return Err(TensorError::InvalidShape {
                op: "narrow_batch",
                shape: self.shape.clone(),
                reason: "rank-0 tensor has no batch dimension".into(),
            });
        };
        if len == 0 || start + len > n {
            return Err(TensorError::InvalidArgument(format!(
                "narrow_batch: range {start}..{} outside batch of {n}",
                start + len
            )));
        }
        let row = self.data.len() / n;
        let mut shape = self.shape.clone();
        shape[0] = len;
        Tensor::new(shape, self.data[start * row..(start + len) * row].to_vec())
    }

    /// Concatenates tensors along the leading dimension.
    pub fn stack_batch(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::InvalidArgument("stack_batch: no tensors".into()))?;
        if first.rank() == 0 {
            return Err(TensorError::InvalidShape {
                op: "stack_batch",
                shape: Vec::new(),
                reason: "rank-0 tensor has no batch dimension".into(),
            });
        }
        let mut n = 0;
        let mut data = Vec::new();
        for p in parts {
            if p.shape[1..] != first.shape[1..] {
                return Err(TensorError::ShapeMismatch {
                    op: "stack_batch",
                    lhs: first.shape.clone(),
                    rhs: p.shape.clone(),
                });
            }
            n += p.shape[0];
            data.extend_from_slice(&p.data);
        }
        let mut shape = first.shape.clone();
        shape[0] = n;
        Tensor::new(shape, data)
    }

    /// Keeps the listed positions along `axis`, in the given order.
    pub fn index_select(&self, axis: usize, indices: &[usize]) -> Result<Tensor> {
        if axis >= self.rank() {
            return Err(TensorError::InvalidShape {
                op: "index_select",
                shape: self.shape.clone(),
                reason: format!("axis {axis} out of range"),
            });
        }
        let dim = self.shape[axis];
        if indices.is_empty() || indices.iter().any(|&i| i >= dim) {
            return Err(TensorError::InvalidArgument(format!(
                "index_select: indices {indices:?} invalid for axis of length {dim}"
            )));
        }
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * indices.len() * inner);
        for o in 0..outer {
            for &i in indices {
                let base = (o * dim + i) * inner;
                data.extend_from_slice(&self.data[base..base + inner]);
            }
        }
        let mut shape = self.shape.clone();
        shape[axis] = indices.len();
        Tensor::new(shape, data)
    }

    pub fn write_lpt<W: Write>(&self, mut w: W) -> Result<()> {
        let rank = u8::try_from(self.shape.len())
            .map_err(|_| TensorError::Format(format!("rank {} exceeds 255", self.shape.len())))?;
        w.write_all(MAGIC)?;
        w.write_all(&[rank])?;
        for &d in &self.shape {
            let d = u32::try_from(d)
                .map_err(|_| TensorError::Format(format!("dimension {d} exceeds u32")))?;
            w.write_all(&d.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.data.len() * 8);
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_lpt<R: Read>(mut r: R) -> Result<Tensor> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| TensorError::Format("truncated header".into()))?;
        if &magic != MAGIC {
            return Err(TensorError::Format(format!("bad magic {magic:?}")));
        }
        let mut rank = [0u8; 1];
        r.read_exact(&mut rank)
            .map_err(|_| TensorError::Format("truncated header".into()))?;
        let mut shape = Vec::with_capacity(rank[0] as usize);
        for _ in 0..rank[0] {
            let mut d = [0u8; 4];
            r.read_exact(&mut d)
                .map_err(|_| TensorError::Format("truncated shape".into()))?;
            shape.push(u32::from_le_bytes(d) as usize);
        }
        let numel: usize = shape.iter().product();
        let mut payload = Vec::new();
        r.read_to_end(&mut payload)?;
        if payload.len() != numel * 8 {
            return Err(TensorError::Format(format!(
                "payload has {} bytes, shape {shape:?} needs {}",
                payload.len(),
                numel * 8
            )));
        }
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Tensor::new(shape, data).map_err(|e| TensorError::Format(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_lpt(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Tensor> {
        let bytes = std::fs::read(path)?;
        Tensor::read_lpt(&bytes[..])
    }

    pub fn to_lpt_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(5 + 4 * self.rank() + 8 * self.numel());
        self.write_lpt(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor{:?} ", self.shape)?;
        if self.data.len() <= SHOWN {
            write!(f, "{:?}", self.data)
        } else {
            write!(f, "{:?}..", &self.data[..SHOWN])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_inconsistent_shape() {
        assert!(Tensor::new([2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new([2, 0], vec![]).is_err());
        assert!(Tensor::new([2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn lpt_layout_is_exact() {
        let t = Tensor::new([1, 2], vec![1.0, -2.5]).unwrap();
        let bytes = t.to_lpt_bytes();
        assert_eq!(&bytes[..4], b"LPT1");
        assert_eq!(bytes[4], 2);
        assert_eq!(&bytes[5..9], &1u32.to_le_bytes());
        assert_eq!(&bytes[9..13], &2u32.to_le_bytes());
        assert_eq!(&bytes[13..21], &1.0f64.to_le_bytes());
        assert_eq!(&bytes[21..29], &(-2.5f64).to_le_bytes());
        assert_eq!(bytes.len(), 29);
    }

    #[test]
    fn lpt_rejects_truncation_and_bad_magic() {
        let t = Tensor::new([3], vec![1.0, 2.0, 3.0]).unwrap();
        let bytes = t.to_lpt_bytes();
        assert!(Tensor::read_lpt(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Tensor::read_lpt(&bad[..]).is_err());
    }

    #[test]
    fn scalar_round_trip() {
        let s = Tensor::scalar(0.25);
        let back = Tensor::read_lpt(&s.to_lpt_bytes()[..]).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.item(), Some(0.25));
    }

    #[test]
    fn index_select_middle_axis() {
        let t = Tensor::from_fn([2, 3, 2], |i| i as f64);
        let s = t.index_select(1, &[0, 2]).unwrap();
        assert_eq!(s.shape(), &[2, 2, 2]);
        assert_eq!(s.data(), &[0.0, 1.0, 4.0, 5.0, 6.0, 7.0, 10.0, 11.0]);
        assert!(t.index_select(1, &[3]).is_err());
        assert!(t.index_select(1, &[]).is_err());
    }

    #[test]
    fn narrow_and_stack_are_inverse() {
        let t = Tensor::from_fn([4, 2, 3], |i| i as f64);
        let a = t.narrow_batch(0, 1).unwrap();
        let b = t.narrow_batch(1, 3).unwrap();
        assert_eq!(Tensor::stack_batch(&[&a, &b]).unwrap(), t);
        assert!(t.narrow_batch(3, 2).is_err());
    }
}
