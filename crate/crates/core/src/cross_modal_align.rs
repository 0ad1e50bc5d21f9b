//! Cross-modal alignment (CMA): language-gated cross-attention from visual
//! queries to word keys/values, then a per-pixel convex fusion of the visual
//! projection and the attended language features.

use mrsnet_autograd::{Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::attention::{scaled_dot_product, MASKED_LOGIT};
use crate::error::{Error, Result};
use crate::language::LanguageSequence;
use crate::layers::ChannelLinear;
use crate::params::{Ctx, Init};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmaConfig {
    /// Visual channel width.
    pub dim: usize,
    /// Language embedding width.
    pub lang_dim: usize,
    pub heads: usize,
    /// Query/key width; defaults to `dim`.
    pub key_dim: usize,
}

impl CmaConfig {
    pub fn new(dim: usize, lang_dim: usize) -> Self {
        Self {
            dim,
            lang_dim,
            heads: 1,
            key_dim: dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.key_dim == 0 {
            return Err(Error::Config("CMA key width d_k must be positive".into()));
        }
        if self.dim == 0 || self.lang_dim == 0 {
            return Err(Error::Config("CMA widths must be positive".into()));
        }
        if self.heads == 0 || self.key_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "{} heads do not divide d_k = {}",
                self.heads, self.key_dim
            )));
        }
        Ok(())
    }
}

/// Intermediate values of one CMA pass; flat layouts use `N_v = H·W`.
pub struct CmaOutput<'t> {
    /// (B, dim, H, W)
    pub f_cm: Var<'t>,
    /// (B, 1, N_l)
    pub gate: Var<'t>,
    /// (B, l_in, N_l), padded positions exactly zero.
    pub gated_language: Var<'t>,
    /// (B, heads, N_v, N_l)
    pub attention: Var<'t>,
    /// (B, dim, N_v)
    pub v_proj: Var<'t>,
    /// (B, dim, N_v)
    pub v_l: Var<'t>,
    /// (B, dim, N_v)
    pub w_proj: Var<'t>,
    /// Convex combination before the output projection, (B, dim, N_v).
    pub fused: Var<'t>,
}

#[derive(Debug, Clone)]
pub struct CrossModalAlign {
    cfg: CmaConfig,
    pub visual: ChannelLinear,
    pub lang_gate: ChannelLinear,
    pub query: ChannelLinear,
    pub key: ChannelLinear,
    pub value: ChannelLinear,
    pub attn_out: ChannelLinear,
    pub fusion_gate: ChannelLinear,
    pub project: ChannelLinear,
}

impl CrossModalAlign {
    pub fn new(init: &mut Init<'_>, cfg: CmaConfig) -> Result<Self> {
        cfg.validate()?;
        let (d, l, k) = (cfg.dim, cfg.lang_dim, cfg.key_dim);
        Ok(Self {
            visual: ChannelLinear::new(init, "visual", d, d),
            lang_gate: ChannelLinear::new(init, "lang_gate", l, 1),
            query: ChannelLinear::new(init, "query", d, k),
            key: ChannelLinear::new(init, "key", l, k),
            value: ChannelLinear::new(init, "value", l, k),
            attn_out: ChannelLinear::new(init, "attn_out", k, d),
            fusion_gate: ChannelLinear::new(init, "fusion_gate", 2 * d, d),
            project: ChannelLinear::new(init, "project", d, d),
            cfg,
        })
    }

    pub fn config(&self) -> &CmaConfig {
        &self.cfg
    }

    /// `G_lang = σ(Conv1D(L))`, `gated_L = L ⊙ G_lang` with padding zeroed.
    pub fn gate_language<'t>(
        &self,
        ctx: &Ctx<'t>,
        language: &LanguageSequence,
    ) -> Result<(Var<'t>, Var<'t>)> {
        let (b, l, n) = (
            language.batch(),
            language.embed_dim(),
            language.num_tokens(),
        );
        if l != self.cfg.lang_dim {
            return Err(Error::Config(format!(
                "CMA expects language width {}, got {l}",
                self.cfg.lang_dim
            )));
        }
        let feats = ctx.input(language.features.clone());
        let mask = ctx.input(language.mask.reshape([b, 1, n])?);
        let gate = self.lang_gate.forward(ctx, feats)?.sigmoid()?;
        let gated = feats.mul(&gate)?.mul(&mask)?;
        Ok((gated, gate))
    }

    pub fn forward_detailed<'t>(
        &self,
        ctx: &Ctx<'t>,
        x: Var<'t>,
        language: &LanguageSequence,
    ) -> Result<CmaOutput<'t>> {
        let shape = x.shape();
        if shape.len() != 4 || shape[1] != self.cfg.dim {
            return Err(Error::Config(format!(
                "CMA configured for {} channels, input is {shape:?}",
                self.cfg.dim
            )));
        }
        let (b, d, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        if language.batch() != b {
            return Err(Error::Shape(format!(
                "{b} images but {} expressions",
                language.batch()
            )));
        }
        let _scope = ctx.tape().enter("cma");
        let n_v = h * w;
        let v_proj = self
            .visual
            .forward(ctx, x.reshape([b, d, n_v])?)?
            .gelu()?;
        let (gated, gate) = self.gate_language(ctx, language)?;

        let q = self.query.forward(ctx, v_proj)?.permute(&[0, 2, 1])?;
        let k = self.key.forward(ctx, gated)?.permute(&[0, 2, 1])?;
        let v = self.value.forward(ctx, gated)?.permute(&[0, 2, 1])?;
        let n_l = language.num_tokens();
        let bias = language
            .mask
            .map(|m| if m == 1.0 { 0.0 } else { MASKED_LOGIT })
            .reshape([b, 1, 1, n_l])?;
        let attended = scaled_dot_product(q, k, v, self.cfg.heads, Some(ctx.input(bias)))?;
        let v_l = self
            .attn_out
            .forward(ctx, attended.output.permute(&[0, 2, 1])?)?;

        let w_proj = self
            .fusion_gate
            .forward(ctx, Var::concat(&[v_proj, v_l], 1)?)?
            .sigmoid()?;
        let fused = v_l.add(&w_proj.mul(&v_proj.sub(&v_l)?)?)?;
        let f_cm = self.project.forward(ctx, fused)?.reshape([b, d, h, w])?;
        Ok(CmaOutput {
            f_cm,
            gate,
            gated_language: gated,
            attention: attended.weights,
            v_proj,
            v_l,
            w_proj,
            fused,
        })
    }

    pub fn forward<'t>(
        &self,
        ctx: &Ctx<'t>,
        x: Var<'t>,
        language: &LanguageSequence,
    ) -> Result<Var<'t>> {
        Ok(self.forward_detailed(ctx, x, language)?.f_cm)
    }
}

/// `W ⊙ a + (1 − W) ⊙ b` on plain tensors, for checking fusion arithmetic.
pub fn convex_combine(w: &Tensor, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let diff = a.zip_map(b, |x, y| x - y)?;
    let scaled = w.zip_map(&diff, |g, d| g * d)?;
    Ok(b.zip_map(&scaled, |y, s| y + s)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{Mode, ParamStore};
    use mrsnet_autograd::Tape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_key_width_is_a_config_error() {
        let mut cfg = CmaConfig::new(4, 4);
        cfg.key_dim = 0;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn language_width_mismatch_is_reported() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cma = CrossModalAlign::new(&mut Init::new(&mut store, &mut rng), CmaConfig::new(2, 3))
            .unwrap();
        let tape = Tape::no_grad();
        let ctx = Ctx::new(&tape, &store, Mode::Eval);
        let lang = LanguageSequence::new(Tensor::ones([1, 4, 2]), Tensor::ones([1, 2])).unwrap();
        let x = ctx.input(Tensor::zeros([1, 2, 2, 2]));
        assert!(cma.forward(&ctx, x, &lang).is_err());
    }

    #[test]
    fn convex_combination_endpoints() {
        let a = Tensor::new([2], vec![1.0, -2.0]).unwrap();
        let b = Tensor::new([2], vec![3.0, 5.0]).unwrap();
        assert_eq!(convex_combine(&Tensor::ones([2]), &a, &b).unwrap(), a);
        assert_eq!(convex_combine(&Tensor::zeros([2]), &a, &b).unwrap(), b);
    }
}
