//! Hierarchical feature integration (HFIM).
//!
//! All stages are folded to the coarsest resolution with space-to-depth,
//! concatenated, processed by a local convolutional branch, a spatial
//! self-attention branch and a frequency-domain attention branch, projected
//! back to the packed width, split by the channel ledger and unfolded to the
//! original stage resolutions.

use mrsnet_autograd::{Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::attention::scaled_dot_product;
use crate::error::{Error, Result};
use crate::layers::{BatchNorm2d, ChannelLinear, Conv2d};
use crate::params::{Ctx, Init};

fn check_divisible(shape: &[usize], factor: usize) -> Result<()> {
    if shape.len() != 4 || factor == 0 || shape[2] % factor != 0 || shape[3] % factor != 0 {
        return Err(Error::Shape(format!(
            "space-to-depth by {factor} needs (B, C, H, W) with H and W divisible by {factor}, got {shape:?}"
        )));
    }
    Ok(())
}

/// (B, C, H, W) → (B, C·f², H/f, W/f). Output channel `c·f² + p·f + q` holds
/// input pixel `(f·i + p, f·j + q)` of channel `c`.
pub fn space_to_depth<'t>(x: Var<'t>, factor: usize) -> Result<Var<'t>> {
    let s = x.shape();
    check_divisible(&s, factor)?;
    if factor == 1 {
        return Ok(x);
    }
    let (b, c, h, w, f) = (s[0], s[1], s[2] / factor, s[3] / factor, factor);
    Ok(x
        .reshape([b, c, h, f, w, f])?
        .permute(&[0, 1, 3, 5, 2, 4])?
        .reshape([b, c * f * f, h, w])?)
}

/// Inverse of [`space_to_depth`]: (B, C·f², H, W) → (B, C, H·f, W·f).
pub fn depth_to_space<'t>(x: Var<'t>, factor: usize) -> Result<Var<'t>> {
    let s = x.shape();
    if s.len() != 4 || factor == 0 || s[1] % (factor * factor) != 0 {
        return Err(Error::Shape(format!(
            "depth-to-space by {factor} needs channels divisible by {}, got {s:?}",
            factor * factor
        )));
    }
    if factor == 1 {
        return Ok(x);
    }
    let (b, c, h, w, f) = (s[0], s[1] / (factor * factor), s[2], s[3], factor);
    Ok(x
        .reshape([b, c, f, f, h, w])?
        .permute(&[0, 1, 4, 2, 5, 3])?
        .reshape([b, c, h * f, w * f])?)
}

/// Tensor form of [`space_to_depth`].
pub fn space_to_depth_tensor(x: &Tensor, factor: usize) -> Result<Tensor> {
    check_divisible(x.shape(), factor)?;
    let s = x.shape();
    let (b, c, h, w, f) = (s[0], s[1], s[2] / factor, s[3] / factor, factor);
    Ok(x
        .reshape([b, c, h, f, w, f])?
        .permute(&[0, 1, 3, 5, 2, 4])?
        .reshape([b, c * f * f, h, w])?)
}

/// Tensor form of [`depth_to_space`].
pub fn depth_to_space_tensor(x: &Tensor, factor: usize) -> Result<Tensor> {
    let s = x.shape();
    if s.len() != 4 || factor == 0 || s[1] % (factor * factor) != 0 {
        return Err(Error::Shape(format!(
            "depth-to-space by {factor} needs channels divisible by {}, got {s:?}",
            factor * factor
        )));
    }
    let (b, c, h, w, f) = (s[0], s[1] / (factor * factor), s[2], s[3], factor);
    Ok(x
        .reshape([b, c, f, f, h, w])?
        .permute(&[0, 1, 4, 2, 5, 3])?
        .reshape([b, c, h * f, w * f])?)
}

/// Where each stage lives inside the unified feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub stage: usize,
    pub original_channels: usize,
    pub factor: usize,
    pub packed_channels: usize,
}

/// Derives the channel ledger for stage shapes `(B, C_s, H_s, W_s)`. Every
/// stage must be a power-of-two multiple of the coarsest one, with the same
/// multiple along both axes.
pub fn channel_ledger(shapes: &[Vec<usize>]) -> Result<Vec<LedgerEntry>> {
    if shapes.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "hierarchical fusion needs at least 2 stages, got {}",
            shapes.len()
        )));
    }
    if shapes.iter().any(|s| s.len() != 4) {
        return Err(Error::Shape(format!("stages must be (B, C, H, W): {shapes:?}")));
    }
    let batch = shapes[0][0];
    let h_min = shapes.iter().map(|s| s[2]).min().unwrap_or(0);
    let w_min = shapes.iter().map(|s| s[3]).min().unwrap_or(0);
    if h_min == 0 || w_min == 0 {
        return Err(Error::Shape(format!("empty stage in {shapes:?}")));
    }
    shapes
        .iter()
        .enumerate()
        .map(|(stage, s)| {
            if s[0] != batch {
                return Err(Error::Shape(format!("stage batch sizes differ: {shapes:?}")));
            }
            let factor = s[2] / h_min;
            let exact = s[2] % h_min == 0 && s[3] == factor * w_min;
            if !exact || !factor.is_power_of_two() {
                return Err(Error::Shape(format!(
                    "stage {stage} ({}x{}) is not a power-of-two multiple of the coarsest stage ({h_min}x{w_min})",
                    s[2], s[3]
                )));
            }
            Ok(LedgerEntry {
                stage,
                original_channels: s[1],
                factor,
                packed_channels: s[1] * factor * factor,
            })
        })
        .collect()
}

pub fn packed_width(ledger: &[LedgerEntry]) -> usize {
    ledger.iter().map(|e| e.packed_channels).sum()
}

/// Depthwise 3×3, pointwise 1×1, batch norm, ReLU.
#[derive(Debug, Clone)]
pub struct LocalBranch {
    pub depthwise: Conv2d,
    pub pointwise: Conv2d,
    pub norm: BatchNorm2d,
}

impl LocalBranch {
    pub fn new(init: &mut Init<'_>, width: usize) -> Self {
        Self {
            depthwise: Conv2d::new(init, "depthwise", width, width, 3, 1, 1, width),
            pointwise: Conv2d::pointwise(init, "pointwise", width, width),
            norm: BatchNorm2d::new(init, "norm", width),
        }
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let y = self.depthwise.forward(ctx, x)?;
        let y = self.pointwise.forward(ctx, y)?;
        Ok(self.norm.forward(ctx, y)?.relu()?)
    }
}

pub struct AttentionBranchOutput<'t> {
    pub output: Var<'t>,
    /// (B, heads, N, N)
    pub weights: Var<'t>,
}

/// Q/K/V projections, multi-head attention over tokens and an output
/// projection, all on (B, width, N) layouts.
#[derive(Debug, Clone)]
pub struct TokenAttention {
    pub query: ChannelLinear,
    pub key: ChannelLinear,
    pub value: ChannelLinear,
    pub out: ChannelLinear,
    pub heads: usize,
}

impl TokenAttention {
    pub fn new(init: &mut Init<'_>, width: usize, heads: usize) -> Result<Self> {
        if heads == 0 || width % heads != 0 {
            return Err(Error::Config(format!(
                "{heads} attention heads do not divide width {width}"
            )));
        }
        Ok(Self {
            query: ChannelLinear::new(init, "query", width, width),
            key: ChannelLinear::new(init, "key", width, width),
            value: ChannelLinear::new(init, "value", width, width),
            out: ChannelLinear::new(init, "out", width, width),
            heads,
        })
    }

    /// `tokens` is (B, width, N).
    pub fn forward<'t>(&self, ctx: &Ctx<'t>, tokens: Var<'t>) -> Result<AttentionBranchOutput<'t>> {
        let t = |layer: &ChannelLinear| -> Result<Var<'t>> {
            Ok(layer.forward(ctx, tokens)?.permute(&[0, 2, 1])?)
        };
        let attended = scaled_dot_product(t(&self.query)?, t(&self.key)?, t(&self.value)?, self.heads, None)?;
        let output = self
            .out
            .forward(ctx, attended.output.permute(&[0, 2, 1])?)?;
        Ok(AttentionBranchOutput {
            output,
            weights: attended.weights,
        })
    }
}

/// Multi-head self-attention over spatial positions.
#[derive(Debug, Clone)]
pub struct SpatialAttentionBranch {
    pub attention: TokenAttention,
}

impl SpatialAttentionBranch {
    pub fn new(init: &mut Init<'_>, width: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            attention: TokenAttention::new(init, width, heads)?,
        })
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t>, x: Var<'t>) -> Result<AttentionBranchOutput<'t>> {
        let s = x.shape();
        let out = self.attention.forward(ctx, x.reshape([s[0], s[1], s[2] * s[3]])?)?;
        Ok(AttentionBranchOutput {
            output: out.output.reshape(s)?,
            weights: out.weights,
        })
    }
}

/// Attention over frequency bins. Each bin's complex spectrum becomes a
/// real token `[re; im]` of width `2E`; the attended tokens are projected
/// back to `(re, im)` pairs, inverse transformed, and the real part kept.
#[derive(Debug, Clone)]
pub struct FrequencyAttentionBranch {
    pub attention: TokenAttention,
}

impl FrequencyAttentionBranch {
    pub fn new(init: &mut Init<'_>, width: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            attention: TokenAttention::new(init, 2 * width, heads)?,
        })
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t>, x: Var<'t>) -> Result<AttentionBranchOutput<'t>> {
        let s = x.shape();
        let (b, e, h, w) = (s[0], s[1], s[2], s[3]);
        let n = h * w;
        let spectrum = x.to_complex()?.fft2()?;
        // (B, E, H, W, 2) → (B, 2, E, H, W) → (B, 2E, N): re rows then im rows.
        let tokens = spectrum.permute(&[0, 4, 1, 2, 3])?.reshape([b, 2 * e, n])?;
        let out = self.attention.forward(ctx, tokens)?;
        let complex = out
            .output
            .reshape([b, 2, e, h, w])?
            .permute(&[0, 2, 3, 4, 1])?;
        Ok(AttentionBranchOutput {
            output: complex.ifft2()?.real_part()?,
            weights: out.weights,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HfimConfig {
    pub stage_dims: Vec<usize>,
    /// Spatial extent ratios of each stage relative to the coarsest.
    pub stage_factors: Vec<usize>,
    pub spatial_heads: usize,
    pub frequency_heads: usize,
    /// Working width of the three branches. `None` runs them at the packed
    /// width; `Some(e)` adds 1×1 projections packed→e before the branches.
    pub width: Option<usize>,
}

impl HfimConfig {
    pub fn packed_width(&self) -> usize {
        self.stage_dims
            .iter()
            .zip(&self.stage_factors)
            .map(|(c, f)| c * f * f)
            .sum()
    }

    pub fn branch_width(&self) -> usize {
        self.width.unwrap_or_else(|| self.packed_width())
    }
}

pub struct HfimOutput<'t> {
    /// Same shapes as the input stages.
    pub stages: Vec<Var<'t>>,
    pub ledger: Vec<LedgerEntry>,
    /// (B, C_packed, H_min, W_min)
    pub unified: Var<'t>,
    pub local: Var<'t>,
    pub global: AttentionBranchOutput<'t>,
    pub frequency: AttentionBranchOutput<'t>,
}

#[derive(Debug, Clone)]
pub struct Hfim {
    cfg: HfimConfig,
    pub in_proj: Option<Conv2d>,
    pub local: LocalBranch,
    pub global: SpatialAttentionBranch,
    pub frequency: FrequencyAttentionBranch,
    pub fuse: Conv2d,
}

impl Hfim {
    pub fn new(init: &mut Init<'_>, cfg: HfimConfig) -> Result<Self> {
        if cfg.stage_dims.len() != cfg.stage_factors.len() || cfg.stage_dims.len() < 2 {
            return Err(Error::Config(format!(
                "HFIM needs matching stage dims and factors for at least 2 stages, got {:?} / {:?}",
                cfg.stage_dims, cfg.stage_factors
            )));
        }
        let packed = cfg.packed_width();
        let width = cfg.branch_width();
        let in_proj = cfg
            .width
            .map(|e| Conv2d::pointwise(init, "in_proj", packed, e));
        Ok(Self {
            in_proj,
            local: LocalBranch::new(&mut init.sub("local"), width),
            global: SpatialAttentionBranch::new(&mut init.sub("global"), width, cfg.spatial_heads)?,
            frequency: FrequencyAttentionBranch::new(
                &mut init.sub("frequency"),
                width,
                cfg.frequency_heads,
            )?,
            fuse: Conv2d::pointwise(init, "fuse", 3 * width, packed),
            cfg,
        })
    }

    pub fn config(&self) -> &HfimConfig {
        &self.cfg
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t>, stages: &[Var<'t>]) -> Result<HfimOutput<'t>> {
        let shapes: Vec<Vec<usize>> = stages.iter().map(|s| s.shape()).collect();
        let ledger = channel_ledger(&shapes)?;
        let dims: Vec<usize> = ledger.iter().map(|e| e.original_channels).collect();
        let factors: Vec<usize> = ledger.iter().map(|e| e.factor).collect();
        if dims != self.cfg.stage_dims || factors != self.cfg.stage_factors {
            return Err(Error::Config(format!(
                "HFIM configured for dims {:?} at factors {:?}, got {dims:?} at {factors:?}",
                self.cfg.stage_dims, self.cfg.stage_factors
            )));
        }
        let _scope = ctx.tape().enter("hfim");
        let packed: Vec<Var<'t>> = stages
            .iter()
            .zip(&ledger)
            .map(|(&s, e)| space_to_depth(s, e.factor))
            .collect::<Result<_>>()?;
        let unified = Var::concat(&packed, 1)?;
        let branch_in = match &self.in_proj {
            Some(proj) => proj.forward(ctx, unified)?,
            None => unified,
        };
        let local = self.local.forward(ctx, branch_in)?;
        let global = self.global.forward(ctx, branch_in)?;
        let frequency = self.frequency.forward(ctx, branch_in)?;
        let fused = self.fuse.forward(
            ctx,
            Var::concat(&[local, global.output, frequency.output], 1)?,
        )?;
        let sizes: Vec<usize> = ledger.iter().map(|e| e.packed_channels).collect();
        let restored = fused
            .split(1, &sizes)?
            .into_iter()
            .zip(&ledger)
            .map(|(slice, e)| depth_to_space(slice, e.factor))
            .collect::<Result<Vec<_>>>()?;
        Ok(HfimOutput {
            stages: restored,
            ledger,
            unified,
            local,
            global,
            frequency,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn space_to_depth_layout() {
        let x = Tensor::from_fn([1, 1, 4, 4], |i| i as f64);
        let y = space_to_depth_tensor(&x, 2).unwrap();
        assert_eq!(y.shape(), [1, 4, 2, 2]);
        // Channel p·2+q holds pixels (2i+p, 2j+q).
        assert_eq!(y.data(), &[0., 2., 8., 10., 1., 3., 9., 11., 4., 6., 12., 14., 5., 7., 13., 15.]);
        assert_eq!(depth_to_space_tensor(&y, 2).unwrap(), x);
    }

    #[test]
    fn indivisible_space_to_depth_is_an_error() {
        assert!(space_to_depth_tensor(&Tensor::zeros([1, 1, 3, 4]), 2).is_err());
    }

    #[test]
    fn ledger_arithmetic() {
        let shapes = vec![vec![1, 8, 16, 16], vec![1, 16, 8, 8], vec![1, 32, 4, 4]];
        let ledger = channel_ledger(&shapes).unwrap();
        assert_eq!(
            ledger.iter().map(|e| e.packed_channels).collect::<Vec<_>>(),
            [128, 64, 32]
        );
        assert_eq!(packed_width(&ledger), 224);
    }

    #[test]
    fn ledger_rejects_non_power_of_two_ratio() {
        let shapes = vec![vec![1, 8, 12, 12], vec![1, 16, 4, 4]];
        assert!(channel_ledger(&shapes).is_err());
        assert!(channel_ledger(&shapes[..1]).is_err());
    }
}
