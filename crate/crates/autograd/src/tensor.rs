use std::fmt;
use std::sync::Arc;

use crate::error::{Result, TensorError};

/// Dense row-major `f64` tensor. Storage is reference counted so reshapes and
/// clones are cheap; writes go through copy-on-write.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        let head: Vec<f64> = self.data.iter().take(SHOWN).copied().collect();
        write!(f, "Tensor{:?} {:?}", self.shape, head)?;
        if self.data.len() > SHOWN {
            write!(f, "…")?;
        }
        Ok(())
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub(crate) fn contiguous_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![0; shape.len()];
    let mut acc = 1;
    for (s, &d) in strides.iter_mut().zip(shape).rev() {
        *s = acc;
        acc *= d;
    }
    strides
}

/// Numpy-style broadcast of two shapes.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides for reading a tensor of `shape` as if broadcast to `target`
/// (zero stride on broadcast axes).
pub(crate) fn broadcast_strides(shape: &[usize], target: &[usize]) -> Vec<usize> {
    let own = contiguous_strides(shape);
    let offset = target.len() - shape.len();
    (0..target.len())
        .map(|i| {
            if i < offset || shape[i - offset] == 1 {
                0
            } else {
                own[i - offset]
            }
        })
        .collect()
}

/// Walks a multi-index over `shape`, yielding the linear offsets of up to two
/// strided views.
pub(crate) struct StridedWalk<'a> {
    shape: &'a [usize],
    index: Vec<usize>,
}

impl<'a> StridedWalk<'a> {
    pub(crate) fn new(shape: &'a [usize]) -> Self {
        Self {
            shape,
            index: vec![0; shape.len()],
        }
    }

    /// Advances the multi-index, updating the offsets incrementally.
    #[inline]
    pub(crate) fn step(&mut self, strides: &[&[usize]], offsets: &mut [usize]) {
        for axis in (0..self.shape.len()).rev() {
            self.index[axis] += 1;
            for (o, s) in offsets.iter_mut().zip(strides) {
                *o += s[axis];
            }
            if self.index[axis] < self.shape[axis] {
                return;
            }
            for (o, s) in offsets.iter_mut().zip(strides) {
                *o -= s[axis] * self.shape[axis];
            }
            self.index[axis] = 0;
        }
    }
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        if numel(&shape) != data.len() {
            return Err(TensorError::DataLength {
                len: data.len(),
                shape,
            });
        }
        Ok(Self {
            shape,
            data: Arc::new(data),
        })
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f64) -> Self {
        let shape = shape.into();
        let n = numel(&shape);
        Self {
            shape,
            data: Arc::new(vec![value; n]),
        }
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn scalar(value: f64) -> Self {
        Self::full(Vec::new(), value)
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> f64) -> Self {
        let shape = shape.into();
        let data = (0..numel(&shape)).map(&mut f).collect();
        Self {
            shape,
            data: Arc::new(data),
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
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    pub fn into_vec(self) -> Vec<f64> {
        Arc::try_unwrap(self.data).unwrap_or_else(|shared| (*shared).clone())
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        assert_eq!(index.len(), self.shape.len());
        let strides = contiguous_strides(&self.shape);
        let offset: usize = index
            .iter()
            .zip(&self.shape)
            .zip(&strides)
            .map(|((&i, &d), &s)| {
                assert!(i < d, "index {index:?} out of bounds for {:?}", self.shape);
                i * s
            })
            .sum();
        self.data[offset]
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Tensor> {
        let shape = shape.into();
        if numel(&shape) != self.numel() {
            return Err(TensorError::shapes("reshape", &self.shape, &shape));
        }
        Ok(Tensor {
            shape,
            data: Arc::clone(&self.data),
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::new(self.data.iter().map(|&x| f(x)).collect()),
        }
    }

    /// Elementwise combination with numpy broadcasting.
    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape == other.shape {
            let data = self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect();
            return Ok(Tensor {
                shape: self.shape.clone(),
                data: Arc::new(data),
            });
        }
        let shape = broadcast_shape(&self.shape, &other.shape)
            .ok_or_else(|| TensorError::shapes("broadcast", &self.shape, &other.shape))?;
        let sa = broadcast_strides(&self.shape, &shape);
        let sb = broadcast_strides(&other.shape, &shape);
        let n = numel(&shape);
        let mut data = Vec::with_capacity(n);
        let mut walk = StridedWalk::new(&shape);
        let mut offsets = [0usize, 0usize];
        for _ in 0..n {
            data.push(f(self.data[offsets[0]], other.data[offsets[1]]));
            walk.step(&[&sa, &sb], &mut offsets);
        }
        Ok(Tensor {
            shape,
            data: Arc::new(data),
        })
    }

    /// Sums a broadcast result back down to `shape` (inverse of broadcasting).
    pub fn sum_to(&self, shape: &[usize]) -> Result<Tensor> {
        if self.shape == shape {
            return Ok(self.clone());
        }
        let check = broadcast_shape(shape, &self.shape);
        if check.as_deref() != Some(&self.shape[..]) {
            return Err(TensorError::shapes("sum_to", &self.shape, shape));
        }
        let dst_strides = broadcast_strides(shape, &self.shape);
        let src_strides = contiguous_strides(&self.shape);
        let mut out = vec![0.0; numel(shape)];
        let mut walk = StridedWalk::new(&self.shape);
        let mut offsets = [0usize, 0usize];
        for _ in 0..self.numel() {
            out[offsets[1]] += self.data[offsets[0]];
            walk.step(&[&src_strides, &dst_strides], &mut offsets);
        }
        Tensor::new(shape.to_vec(), out)
    }

    pub fn permute(&self, axes: &[usize]) -> Result<Tensor> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if axes.len() != rank
            || axes
                .iter()
                .any(|&a| a >= rank || std::mem::replace(&mut seen[a], true))
        {
            return Err(TensorError::invalid(
                "permute",
                format!("{axes:?} is not a permutation of rank {rank}"),
            ));
        }
        let out_shape: Vec<usize> = axes.iter().map(|&a| self.shape[a]).collect();
        let own = contiguous_strides(&self.shape);
        let src_strides: Vec<usize> = axes.iter().map(|&a| own[a]).collect();
        let n = self.numel();
        let mut data = Vec::with_capacity(n);
        let mut walk = StridedWalk::new(&out_shape);
        let mut offsets = [0usize];
        for _ in 0..n {
            data.push(self.data[offsets[0]]);
            walk.step(&[&src_strides], &mut offsets);
        }
        Tensor::new(out_shape, data)
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        if axis >= self.rank() || start + len > self.shape[axis] {
            return Err(TensorError::invalid(
                "narrow",
                format!(
                    "range {start}..{} on axis {axis} of {:?}",
                    start + len,
                    self.shape
                ),
            ));
        }
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let d = self.shape[axis];
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * d + start) * inner;
            data.extend_from_slice(&self.data[base..base + len * inner]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = len;
        Tensor::new(shape, data)
    }

    pub fn concat(tensors: &[&Tensor], axis: usize) -> Result<Tensor> {
        let first = tensors
            .first()
            .ok_or_else(|| TensorError::invalid("concat", "no tensors"))?;
        let rank = first.rank();
        if axis >= rank {
            return Err(TensorError::invalid("concat", format!("axis {axis} >= rank {rank}")));
        }
        for t in tensors {
            let same = t.rank() == rank
                && (0..rank).all(|i| i == axis || t.shape[i] == first.shape[i]);
            if !same {
                return Err(TensorError::shapes("concat", &first.shape, &t.shape));
            }
        }
        let outer: usize = first.shape[..axis].iter().product();
        let inner: usize = first.shape[axis + 1..].iter().product();
        let total: usize = tensors.iter().map(|t| t.shape[axis]).sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for t in tensors {
                let chunk = t.shape[axis] * inner;
                data.extend_from_slice(&t.data[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = first.shape.clone();
        shape[axis] = total;
        Tensor::new(shape, data)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(other.data.iter())
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data_mut().iter_mut().zip(other.data.iter()) {
            *a += b;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_shapes() {
        assert_eq!(broadcast_shape(&[2, 1, 4], &[3, 1]), Some(vec![2, 3, 4]));
        assert_eq!(broadcast_shape(&[2, 3], &[4, 3]), None);
        assert_eq!(broadcast_shape(&[], &[5]), Some(vec![5]));
    }

    #[test]
    fn zip_map_broadcasts_and_sum_to_reduces() {
        let a = Tensor::new([2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let b = Tensor::new([3], vec![10., 20., 30.]).unwrap();
        let c = a.zip_map(&b, |x, y| x + y).unwrap();
        assert_eq!(c.data(), &[11., 22., 33., 14., 25., 36.]);
        let r = a.sum_to(&[1, 3]).unwrap();
        assert_eq!(r.data(), &[5., 7., 9.]);
        let r = a.sum_to(&[2, 1]).unwrap();
        assert_eq!(r.data(), &[6., 15.]);
    }

    #[test]
    fn permute_transposes() {
        let a = Tensor::new([2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let t = a.permute(&[1, 0]).unwrap();
        assert_eq!(t.shape(), &[3, 2]);
        assert_eq!(t.data(), &[1., 4., 2., 5., 3., 6.]);
        assert!(a.permute(&[0, 0]).is_err());
    }

    #[test]
    fn narrow_and_concat_are_inverse() {
        let a = Tensor::from_fn([2, 5, 3], |i| i as f64);
        let l = a.narrow(1, 0, 2).unwrap();
        let r = a.narrow(1, 2, 3).unwrap();
        assert_eq!(Tensor::concat(&[&l, &r], 1).unwrap(), a);
    }
}
