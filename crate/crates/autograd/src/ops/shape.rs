use crate::error::{Result, TensorError};
use crate::tape::Var;
use crate::tensor::Tensor;

pub(crate) fn broadcast_to(t: &Tensor, shape: &[usize]) -> Tensor {
    Tensor::zeros(shape.to_vec())
        .zip_map(t, |_, v| v)
        .expect("broadcastable")
}

fn keepdim_shape(shape: &[usize], axes: &[usize]) -> Vec<usize> {
    shape
        .iter()
        .enumerate()
        .map(|(i, &d)| if axes.contains(&i) { 1 } else { d })
        .collect()
}

impl<'t> Var<'t> {
    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Var<'t>> {
        let x = self.value();
        let original = x.shape().to_vec();
        let out = x.reshape(shape)?;
        self.tape.push("reshape", out, &[*self], move |g, _| {
            vec![Some(g.reshape(original.clone()).expect("same numel"))]
        })
    }

    pub fn permute(&self, axes: &[usize]) -> Result<Var<'t>> {
        let out = self.value().permute(axes)?;
        let mut inverse = vec![0; axes.len()];
        for (i, &a) in axes.iter().enumerate() {
            inverse[a] = i;
        }
        self.tape.push("permute", out, &[*self], move |g, _| {
            vec![Some(g.permute(&inverse).expect("valid permutation"))]
        })
    }

    /// Swaps the last two axes.
    pub fn t(&self) -> Result<Var<'t>> {
        let r = self.rank();
        if r < 2 {
            return Err(TensorError::invalid("t", "rank < 2"));
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 1, r - 2);
        self.permute(&axes)
    }

    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Var<'t>> {
        let x = self.value();
        let out = x.narrow(axis, start, len)?;
        let full = x.shape().to_vec();
        self.tape.push("narrow", out, &[*self], move |g, _| {
            let mut parts: Vec<Tensor> = Vec::with_capacity(3);
            let mut before = full.clone();
            before[axis] = start;
            let mut after = full.clone();
            after[axis] = full[axis] - start - len;
            if start > 0 {
                parts.push(Tensor::zeros(before));
            }
            parts.push(g.clone());
            if after[axis] > 0 {
                parts.push(Tensor::zeros(after));
            }
            let refs: Vec<&Tensor> = parts.iter().collect();
            vec![Some(Tensor::concat(&refs, axis).expect("matching shapes"))]
        })
    }

    /// Splits along `axis` into consecutive pieces of the given sizes.
    pub fn split(&self, axis: usize, sizes: &[usize]) -> Result<Vec<Var<'t>>> {
        let total: usize = sizes.iter().sum();
        if axis >= self.rank() || total != self.dim(axis) {
            return Err(TensorError::invalid(
                "split",
                format!("sizes {sizes:?} on axis {axis} of {:?}", self.shape()),
            ));
        }
        let mut start = 0;
        sizes
            .iter()
            .map(|&len| {
                let part = self.narrow(axis, start, len);
                start += len;
                part
            })
            .collect()
    }

    pub fn concat(vars: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
        let first = vars
            .first()
            .ok_or_else(|| TensorError::invalid("concat", "no inputs"))?;
        let values: Vec<Tensor> = vars.iter().map(|v| v.value()).collect();
        let refs: Vec<&Tensor> = values.iter().collect();
        let out = Tensor::concat(&refs, axis)?;
        let sizes: Vec<usize> = values.iter().map(|v| v.shape()[axis]).collect();
        first.tape.push("concat", out, vars, move |g, need| {
            let mut start = 0;
            sizes
                .iter()
                .zip(need)
                .map(|(&len, &n)| {
                    let part = n.then(|| g.narrow(axis, start, len).expect("in range"));
                    start += len;
                    part
                })
                .collect()
        })
    }

    pub fn sum(&self) -> Result<Var<'t>> {
        let x = self.value();
        let shape = x.shape().to_vec();
        let out = Tensor::scalar(x.sum());
        self.tape.push("sum", out, &[*self], move |g, _| {
            vec![Some(Tensor::full(shape.clone(), g.item()))]
        })
    }

    pub fn mean(&self) -> Result<Var<'t>> {
        let n = self.value().numel();
        if n == 0 {
            return Err(TensorError::invalid("mean", "empty tensor"));
        }
        self.sum()?.scale(1.0 / n as f64)
    }

    /// Sum over `axes`, keeping them as size-1 dimensions.
    pub fn sum_axes(&self, axes: &[usize]) -> Result<Var<'t>> {
        let x = self.value();
        if axes.iter().any(|&a| a >= x.rank()) {
            return Err(TensorError::invalid("sum_axes", format!("{axes:?}")));
        }
        let target = keepdim_shape(x.shape(), axes);
        let out = x.sum_to(&target)?;
        let full = x.shape().to_vec();
        self.tape.push("sum_axes", out, &[*self], move |g, _| {
            vec![Some(broadcast_to(g, &full))]
        })
    }

    pub fn mean_axes(&self, axes: &[usize]) -> Result<Var<'t>> {
        let shape = self.shape();
        let count: usize = axes.iter().map(|&a| shape.get(a).copied().unwrap_or(1)).product();
        self.sum_axes(axes)?.scale(1.0 / count.max(1) as f64)
    }
}
