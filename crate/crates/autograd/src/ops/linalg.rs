use crate::error::{Result, TensorError};
use crate::tape::Var;
use crate::tensor::Tensor;

/// `c (m×n) = op(a) · op(b) (+ c if accumulate)`, all buffers row-major.
/// With `a_t` the buffer `a` holds the k×m matrix, likewise for `b_t`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c[..m * n].fill(0.0);
        }
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: slices are bounds-checked above and the strides describe
    // row-major layouts of exactly those extents.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

struct MatmulPlan {
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    a_shared: bool,
    b_shared: bool,
    out_shape: Vec<usize>,
}

fn plan(a: &[usize], b: &[usize]) -> Result<MatmulPlan> {
    let err = || TensorError::shapes("matmul", a, b);
    if a.len() < 2 || b.len() < 2 {
        return Err(err());
    }
    let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
    let (k2, n) = (b[b.len() - 2], b[b.len() - 1]);
    if k != k2 {
        return Err(err());
    }
    let a_batch = &a[..a.len() - 2];
    let b_batch = &b[..b.len() - 2];
    let (batch_dims, a_shared, b_shared) = if a_batch == b_batch {
        (a_batch.to_vec(), false, false)
    } else if a_batch.is_empty() {
        (b_batch.to_vec(), true, false)
    } else if b_batch.is_empty() {
        (a_batch.to_vec(), false, true)
    } else {
        return Err(err());
    };
    let batch = batch_dims.iter().product();
    let mut out_shape = batch_dims;
    out_shape.extend([m, n]);
    Ok(MatmulPlan {
        batch,
        m,
        k,
        n,
        a_shared,
        b_shared,
        out_shape,
    })
}

impl<'t> Var<'t> {
    /// Batched matrix product over the last two axes. Batch axes must match,
    /// or one operand may be a plain matrix shared across the batch.
    pub fn matmul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let a = self.value();
        let b = other.value();
        let p = plan(a.shape(), b.shape())?;
        let (m, k, n) = (p.m, p.k, p.n);
        let mut out = vec![0.0; p.batch * m * n];
        for i in 0..p.batch {
            let ao = if p.a_shared { 0 } else { i * m * k };
            let bo = if p.b_shared { 0 } else { i * k * n };
            gemm(
                m,
                k,
                n,
                &a.data()[ao..],
                false,
                &b.data()[bo..],
                false,
                &mut out[i * m * n..],
                false,
            );
        }
        let out = Tensor::new(p.out_shape.clone(), out)?;
        self.tape.push("matmul", out, &[*self, *other], move |g, need| {
            let gd = g.data();
            let ga = need[0].then(|| {
                let mut da = vec![0.0; a.numel()];
                for i in 0..p.batch {
                    let ao = if p.a_shared { 0 } else { i * m * k };
                    let bo = if p.b_shared { 0 } else { i * k * n };
                    gemm(
                        m,
                        n,
                        k,
                        &gd[i * m * n..],
                        false,
                        &b.data()[bo..],
                        true,
                        &mut da[ao..],
                        p.a_shared,
                    );
                }
                Tensor::new(a.shape().to_vec(), da).expect("shape")
            });
            let gb = need[1].then(|| {
                let mut db = vec![0.0; b.numel()];
                for i in 0..p.batch {
                    let ao = if p.a_shared { 0 } else { i * m * k };
                    let bo = if p.b_shared { 0 } else { i * k * n };
                    gemm(
                        k,
                        m,
                        n,
                        &a.data()[ao..],
                        true,
                        &gd[i * m * n..],
                        false,
                        &mut db[bo..],
                        p.b_shared,
                    );
                }
                Tensor::new(b.shape().to_vec(), db).expect("shape")
            });
            vec![ga, gb]
        })
    }
}
