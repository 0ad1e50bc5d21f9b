use mrsnet_autograd::Var;

use crate::error::{Error, Result};

/// Bias that removes a key from attention. It is finite so that the
/// non-finite diagnostics never flag masking, yet `exp` of it underflows to
/// exactly zero, so masked keys get exactly zero weight.
pub const MASKED_LOGIT: f64 = -1e300;

pub struct Attended<'t> {
    /// (B, Nq, Dv)
    pub output: Var<'t>,
    /// (B, heads, Nq, Nk); each row sums to one.
    pub weights: Var<'t>,
}

/// Multi-head scaled dot-product attention on token-major inputs:
/// `q` (B, Nq, D), `k` (B, Nk, D), `v` (B, Nk, Dv). `key_bias`, if given, is
/// added to the logits with shape (B, 1, 1, Nk); [`MASKED_LOGIT`] removes a key.
pub fn scaled_dot_product<'t>(
    q: Var<'t>,
    k: Var<'t>,
    v: Var<'t>,
    heads: usize,
    key_bias: Option<Var<'t>>,
) -> Result<Attended<'t>> {
    let (qs, ks, vs) = (q.shape(), k.shape(), v.shape());
    if qs.len() != 3 || ks.len() != 3 || vs.len() != 3 || qs[0] != ks[0] || ks[..2] != vs[..2] || qs[2] != ks[2] {
        return Err(Error::Shape(format!("attention q {qs:?} k {ks:?} v {vs:?}")));
    }
    let (b, nq, d) = (qs[0], qs[1], qs[2]);
    let (nk, dv) = (ks[1], vs[2]);
    if heads == 0 || d % heads != 0 || dv % heads != 0 {
        return Err(Error::Config(format!(
            "{heads} heads do not divide key width {d} / value width {dv}"
        )));
    }
    let (dh, dvh) = (d / heads, dv / heads);
    let split = |x: Var<'t>, n: usize, w: usize| -> Result<Var<'t>> {
        Ok(x.reshape([b, n, heads, w])?.permute(&[0, 2, 1, 3])?)
    };
    let qh = split(q, nq, dh)?;
    let kh = split(k, nk, dh)?;
    let vh = split(v, nk, dvh)?;
    let mut logits = qh.matmul(&kh.t()?)?.scale(1.0 / (dh as f64).sqrt())?;
    if let Some(bias) = key_bias {
        logits = logits.add(&bias)?;
    }
    let weights = logits.softmax(3)?;
    let output = weights
        .matmul(&vh)?
        .permute(&[0, 2, 1, 3])?
        .reshape([b, nq, dv])?;
    Ok(Attended { output, weights })
}
