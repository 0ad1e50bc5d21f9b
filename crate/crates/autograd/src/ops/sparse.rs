use crate::error::{Result, TensorError};
use crate::tape::Var;
use crate::tensor::Tensor;

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from (row, col, value) triplets; duplicates are summed.
    pub fn from_triplets(rows: usize, cols: usize, mut triplets: Vec<(usize, usize, f64)>) -> Result<Self> {
        if let Some(&(r, c, _)) = triplets.iter().find(|&&(r, c, _)| r >= rows || c >= cols) {
            return Err(TensorError::invalid(
                "csr",
                format!("entry ({r}, {c}) outside {rows}x{cols}"),
            ));
        }
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0; rows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *values.last_mut().expect("previous entry") += v;
                continue;
            }
            row_ptr[r + 1] += 1;
            col_idx.push(c);
            values.push(v);
            last = Some((r, c));
        }
        for r in 0..rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Ok(Self {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// `(col, value)` entries of one row.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.row(r).find(|&(cc, _)| cc == c).map_or(0.0, |(_, v)| v)
    }

    pub fn to_dense(&self) -> Tensor {
        let mut d = vec![0.0; self.rows * self.cols];
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                d[r * self.cols + c] = v;
            }
        }
        Tensor::new(vec![self.rows, self.cols], d).expect("shape")
    }

    /// `y[.., i] = Σ_j A[i, j] x[.., j]` over the last axis of `x`.
    fn apply(&self, x: &[f64], lanes: usize, out: &mut [f64]) {
        for l in 0..lanes {
            let src = &x[l * self.cols..(l + 1) * self.cols];
            let dst = &mut out[l * self.rows..(l + 1) * self.rows];
            for (r, d) in dst.iter_mut().enumerate() {
                *d = self.row(r).map(|(c, v)| v * src[c]).sum();
            }
        }
    }

    /// `y[.., j] = Σ_i A[i, j] g[.., i]`.
    fn apply_transpose(&self, g: &[f64], lanes: usize, out: &mut [f64]) {
        for l in 0..lanes {
            let src = &g[l * self.rows..(l + 1) * self.rows];
            let dst = &mut out[l * self.cols..(l + 1) * self.cols];
            for (r, &gv) in src.iter().enumerate() {
                for (c, v) in self.row(r) {
                    dst[c] += v * gv;
                }
            }
        }
    }
}

impl<'t> Var<'t> {
    /// Applies a sparse matrix along the last axis: `out = x · Aᵀ`, so every
    /// output position `i` is the `A`-weighted combination of row `i`.
    pub fn sparse_apply(&self, a: &std::sync::Arc<CsrMatrix>) -> Result<Var<'t>> {
        let x = self.value();
        let shape = x.shape().to_vec();
        let last = *shape
            .last()
            .ok_or_else(|| TensorError::invalid("sparse_apply", "scalar input"))?;
        if last != a.cols() {
            return Err(TensorError::shapes("sparse_apply", &shape, &[a.rows(), a.cols()]));
        }
        let lanes = x.numel() / last.max(1);
        let mut out = vec![0.0; lanes * a.rows()];
        a.apply(x.data(), lanes, &mut out);
        let mut out_shape = shape.clone();
        *out_shape.last_mut().expect("rank >= 1") = a.rows();
        let out = Tensor::new(out_shape, out)?;
        let a = std::sync::Arc::clone(a);
        self.tape.push("sparse_apply", out, &[*self], move |g, _| {
            let mut dx = vec![0.0; lanes * a.cols()];
            a.apply_transpose(g.data(), lanes, &mut dx);
            vec![Some(Tensor::new(shape.clone(), dx).expect("shape"))]
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tape;
    use std::sync::Arc;

    #[test]
    fn duplicates_are_summed_and_rows_sorted() {
        let m = CsrMatrix::from_triplets(2, 3, vec![(1, 2, 1.0), (0, 1, 2.0), (1, 2, 0.5)]).unwrap();
        assert_eq!(m.nnz(), 2);
        assert_eq!(m.get(1, 2), 1.5);
        assert_eq!(m.get(0, 0), 0.0);
    }

    #[test]
    fn sparse_apply_matches_dense_product_and_adjoint() {
        let a = Arc::new(
            CsrMatrix::from_triplets(3, 3, vec![(0, 1, 0.5), (0, 2, 0.5), (1, 0, 1.0), (2, 1, 1.0)]).unwrap(),
        );
        let tape = Tape::new();
        let x = tape.leaf(Tensor::new([2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap());
        let y = x.sparse_apply(&a).unwrap();
        assert_eq!(y.value().data(), &[2.5, 1., 2., 5.5, 4., 5.]);
        let g = tape.backward(y.sum().unwrap()).unwrap();
        // column sums of A
        assert_eq!(g.get(x).unwrap().data(), &[1., 1.5, 0.5, 1., 1.5, 0.5]);
    }
}
