use crate::error::{Result, TensorError};
use crate::tape::Var;
use crate::tensor::Tensor;

/// Iterates lanes along `axis`: yields the base offset of every lane, whose
/// elements sit at `base + i * stride`.
fn lanes(shape: &[usize], axis: usize) -> (usize, usize, impl Iterator<Item = usize>) {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let len = shape[axis];
    let bases = (0..outer).flat_map(move |o| (0..inner).map(move |i| o * len * inner + i));
    (len, inner, bases)
}

impl<'t> Var<'t> {
    /// Softmax along `axis`. Entries equal to `-inf` get exactly zero weight;
    /// a lane that is entirely `-inf` is an error.
    pub fn softmax(&self, axis: usize) -> Result<Var<'t>> {
        let x = self.value();
        if axis >= x.rank() {
            return Err(TensorError::invalid("softmax", format!("axis {axis} of {:?}", x.shape())));
        }
        let mut y = vec![0.0; x.numel()];
        let xd = x.data();
        let (len, stride, bases) = lanes(x.shape(), axis);
        for base in bases {
            let max = (0..len)
                .map(|i| xd[base + i * stride])
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(TensorError::invalid("softmax", "lane with no finite logits"));
            }
            let mut total = 0.0;
            for i in 0..len {
                let e = (xd[base + i * stride] - max).exp();
                y[base + i * stride] = e;
                total += e;
            }
            for i in 0..len {
                y[base + i * stride] /= total;
            }
        }
        let shape = x.shape().to_vec();
        let y = Tensor::new(shape.clone(), y)?;
        let y_keep = y.clone();
        self.tape.push("softmax", y, &[*self], move |g, _| {
            let yd = y_keep.data();
            let gd = g.data();
            let mut dx = vec![0.0; yd.len()];
            let (len, stride, bases) = lanes(&shape, axis);
            for base in bases {
                let dot: f64 = (0..len)
                    .map(|i| gd[base + i * stride] * yd[base + i * stride])
                    .sum();
                for i in 0..len {
                    let o = base + i * stride;
                    dx[o] = yd[o] * (gd[o] - dot);
                }
            }
            vec![Some(Tensor::new(shape.clone(), dx).expect("shape"))]
        })
    }
}
