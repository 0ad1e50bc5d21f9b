//! Full network: vision encoder with an IFIM after every stage, HFIM across
//! the refined stages, and a top-down decoder to a one-channel logit map.

use mrsnet_autograd::{Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hfim::{Hfim, HfimConfig};
use crate::ifim::{AblationFlags, Ifim, IfimConfig};
use crate::language::{HashingTextEncoder, LanguageSequence, TextEncoder};
use crate::layers::Conv2d;
use crate::params::{Ctx, Init, ParamStore};

pub const STAGE_STRIDES: [usize; 4] = [4, 8, 16, 32];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub stage_dims: Vec<usize>,
    /// Width of the text-encoder token features.
    pub text_dim: usize,
    pub max_tokens: usize,
    pub pyramid_factors: Vec<usize>,
    pub cma_heads: usize,
    pub hfim_heads: usize,
    /// HFIM branch width; `None` runs the branches at the full packed width.
    pub hfim_width: Option<usize>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            stage_dims: vec![96, 192, 384, 768],
            text_dim: 768,
            max_tokens: 20,
            pyramid_factors: vec![1, 2, 4],
            cma_heads: 1,
            hfim_heads: 4,
            hfim_width: Some(256),
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stage_dims.len() != STAGE_STRIDES.len() || self.stage_dims.contains(&0) {
            return Err(Error::Config(format!(
                "need {} positive stage widths, got {:?}",
                STAGE_STRIDES.len(),
                self.stage_dims
            )));
        }
        if self.text_dim == 0 || self.max_tokens == 0 {
            return Err(Error::Config("text_dim and max_tokens must be positive".into()));
        }
        Ok(())
    }

    /// Input height and width must be multiples of this.
    pub fn size_multiple(&self) -> usize {
        STAGE_STRIDES[STAGE_STRIDES.len() - 1] * self.pyramid_factors.last().copied().unwrap_or(1)
    }

    /// Encoder stage shapes for a `(batch, 3, height, width)` input.
    pub fn stage_shapes(&self, batch: usize, height: usize, width: usize) -> Vec<[usize; 4]> {
        self.stage_dims
            .iter()
            .zip(STAGE_STRIDES)
            .map(|(&d, s)| [batch, d, height / s, width / s])
            .collect()
    }
}

/// Image → multi-stage features. Stage `s` consumes the refined output of
/// stage `s − 1` (the image for stage 0).
pub trait VisionEncoder: std::fmt::Debug + Send + Sync {
    fn stage_dims(&self) -> &[usize];
    fn stage_strides(&self) -> &[usize];
    fn forward_stage<'t>(&self, ctx: &Ctx<'t>, stage: usize, input: Var<'t>) -> Result<Var<'t>>;
}

/// Strided-convolution stand-in for a hierarchical backbone: a 4×4/4 patch
/// embedding, then 2×2/2 downsampling convolutions, each followed by GELU.
#[derive(Debug, Clone)]
pub struct ToyVisionEncoder {
    dims: Vec<usize>,
    stages: Vec<Conv2d>,
}

impl ToyVisionEncoder {
    pub fn new(init: &mut Init<'_>, dims: &[usize]) -> Self {
        let mut stages = vec![Conv2d::new(init, "stem", 3, dims[0], 4, 4, 0, 1)];
        for s in 1..dims.len() {
            stages.push(Conv2d::new(init, &format!("down{s}"), dims[s - 1], dims[s], 2, 2, 0, 1));
        }
        Self {
            dims: dims.to_vec(),
            stages,
        }
    }
}

impl VisionEncoder for ToyVisionEncoder {
    fn stage_dims(&self) -> &[usize] {
        &self.dims
    }

    fn stage_strides(&self) -> &[usize] {
        &STAGE_STRIDES
    }

    fn forward_stage<'t>(&self, ctx: &Ctx<'t>, stage: usize, input: Var<'t>) -> Result<Var<'t>> {
        let conv = self
            .stages
            .get(stage)
            .ok_or_else(|| Error::Config(format!("encoder has no stage {stage}")))?;
        Ok(conv.forward(ctx, input)?.gelu()?)
    }
}

/// Top-down decoder: from the coarsest stage, upsample 2×, concatenate the
/// next finer HFIM output, 3×3 conv to that stage's width and ReLU; finally
/// a 1×1 conv to one channel and a 4× bilinear upsample to input size.
#[derive(Debug, Clone)]
pub struct Decoder {
    pub levels: Vec<Conv2d>,
    pub head: Conv2d,
}

impl Decoder {
    pub fn new(init: &mut Init<'_>, dims: &[usize]) -> Self {
        let levels = (0..dims.len() - 1)
            .map(|s| Conv2d::same3x3(init, &format!("level{s}"), dims[s + 1] + dims[s], dims[s]))
            .collect();
        Self {
            levels,
            head: Conv2d::pointwise(init, "head", dims[0], 1),
        }
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t>, skips: &[Var<'t>], height: usize, width: usize) -> Result<Var<'t>> {
        let mut y = *skips
            .last()
            .ok_or_else(|| Error::InvalidInput("decoder needs at least one stage".into()))?;
        for s in (0..self.levels.len()).rev() {
            let skip = skips[s];
            let up = y.upsample_bilinear(skip.dim(2), skip.dim(3))?;
            y = self.levels[s]
                .forward(ctx, Var::concat(&[up, skip], 1)?)?
                .relu()?;
        }
        // The 1×1 conv commutes with bilinear upsampling (interpolation
        // weights sum to one), so projecting first is exact and cheaper.
        Ok(self.head.forward(ctx, y)?.upsample_bilinear(height, width)?)
    }
}

pub struct NetworkOutput<'t> {
    /// (B, 1, H, W)
    pub logits: Var<'t>,
    /// Encoder outputs before IFIM refinement.
    pub encoder_stages: Vec<Var<'t>>,
    /// IFIM outputs; these feed the next encoder stage and the HFIM.
    pub refined_stages: Vec<Var<'t>>,
    pub hfim_stages: Vec<Var<'t>>,
}

impl NetworkOutput<'_> {
    /// σ(logits).
    pub fn probabilities(&self) -> Result<Tensor> {
        Ok(self.logits.value().map(sigmoid))
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug)]
pub struct Network {
    cfg: NetworkConfig,
    pub encoder: Box<dyn VisionEncoder>,
    pub text: Box<dyn TextEncoder>,
    pub ifims: Vec<Ifim>,
    pub hfim: Hfim,
    pub decoder: Decoder,
}

impl Network {
    /// Builds the network with the toy encoders, registering parameters in
    /// `init`.
    pub fn new(init: &mut Init<'_>, cfg: NetworkConfig) -> Result<Self> {
        cfg.validate()?;
        let encoder = ToyVisionEncoder::new(&mut init.sub("encoder"), &cfg.stage_dims);
        let text = HashingTextEncoder::new(cfg.text_dim, cfg.max_tokens)?;
        Self::with_encoders(init, cfg, Box::new(encoder), Box::new(text))
    }

    pub fn with_encoders(
        init: &mut Init<'_>,
        cfg: NetworkConfig,
        encoder: Box<dyn VisionEncoder>,
        text: Box<dyn TextEncoder>,
    ) -> Result<Self> {
        cfg.validate()?;
        if encoder.stage_dims() != cfg.stage_dims.as_slice() || encoder.stage_strides() != STAGE_STRIDES {
            return Err(Error::Config(format!(
                "encoder stages {:?} / strides {:?} do not match config {:?} / {STAGE_STRIDES:?}",
                encoder.stage_dims(),
                encoder.stage_strides(),
                cfg.stage_dims
            )));
        }
        if text.embed_dim() != cfg.text_dim {
            return Err(Error::Config(format!(
                "text encoder width {} does not match text_dim {}",
                text.embed_dim(),
                cfg.text_dim
            )));
        }
        let ifims = cfg
            .stage_dims
            .iter()
            .enumerate()
            .map(|(s, &dim)| {
                let icfg = IfimConfig {
                    pyramid_factors: cfg.pyramid_factors.clone(),
                    cma_heads: cfg.cma_heads,
                    ..IfimConfig::new(dim, cfg.text_dim)
                };
                Ifim::new(&mut init.sub(format!("ifim.{s}")), &icfg)
            })
            .collect::<Result<Vec<_>>>()?;
        let coarsest = STAGE_STRIDES[STAGE_STRIDES.len() - 1];
        let hcfg = HfimConfig {
            stage_dims: cfg.stage_dims.clone(),
            stage_factors: STAGE_STRIDES.iter().map(|s| coarsest / s).collect(),
            spatial_heads: cfg.hfim_heads,
            frequency_heads: cfg.hfim_heads,
            width: cfg.hfim_width,
        };
        let hfim = Hfim::new(&mut init.sub("hfim"), hcfg)?;
        let decoder = Decoder::new(&mut init.sub("decoder"), &cfg.stage_dims);
        Ok(Self {
            cfg,
            encoder,
            text,
            ifims,
            hfim,
            decoder,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.cfg
    }

    pub fn encode_text(&self, texts: &[&str]) -> Result<LanguageSequence> {
        self.text.encode(texts)
    }

    pub fn forward<'t>(
        &self,
        ctx: &Ctx<'t>,
        images: Var<'t>,
        language: &LanguageSequence,
        flags: AblationFlags,
    ) -> Result<NetworkOutput<'t>> {
        let s = images.shape();
        if s.len() != 4 || s[1] != 3 {
            return Err(Error::Shape(format!("images must be (B, 3, H, W), got {s:?}")));
        }
        let (h, w) = (s[2], s[3]);
        let m = self.cfg.size_multiple();
        if h == 0 || w == 0 || h % m != 0 || w % m != 0 {
            return Err(Error::Shape(format!(
                "input {h}x{w} must have height and width divisible by {m}"
            )));
        }
        if language.batch() != s[0] {
            return Err(Error::Shape(format!(
                "{} images but {} expressions",
                s[0],
                language.batch()
            )));
        }
        let mut encoder_stages = Vec::with_capacity(self.ifims.len());
        let mut refined_stages = Vec::with_capacity(self.ifims.len());
        let mut x = images;
        for (stage, ifim) in self.ifims.iter().enumerate() {
            let feat = {
                let _scope = ctx.tape().enter(&format!("encoder.{stage}"));
                self.encoder.forward_stage(ctx, stage, x)?
            };
            let _scope = ctx.tape().enter(&format!("ifim.{stage}"));
            x = ifim.forward(ctx, feat, language, flags)?.refined;
            encoder_stages.push(feat);
            refined_stages.push(x);
        }
        let hfim_stages = self.hfim.forward(ctx, &refined_stages)?.stages;
        let logits = {
            let _scope = ctx.tape().enter("decoder");
            self.decoder.forward(ctx, &hfim_stages, h, w)?
        };
        Ok(NetworkOutput {
            logits,
            encoder_stages,
            refined_stages,
            hfim_stages,
        })
    }
}

/// Parameters plus the network that addresses them.
#[derive(Debug)]
pub struct Model {
    pub store: ParamStore,
    pub network: Network,
}

impl Model {
    pub fn new(cfg: NetworkConfig, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let network = Network::new(&mut Init::new(&mut store, &mut rng), cfg)?;
        Ok(Self { store, network })
    }
}

/// Probability clamp used by the cross-entropy loss.
pub const PROB_EPS: f64 = 1e-7;

/// Pixelwise binary cross-entropy on clamped probabilities, averaged over
/// every pixel of every sample. `target` holds 0/1 values shaped like
/// `logits`.
pub fn bce_loss<'t>(logits: Var<'t>, target: &Tensor) -> Result<Var<'t>> {
    if logits.shape() != target.shape() {
        return Err(Error::Shape(format!(
            "logits {:?} and target {:?} differ",
            logits.shape(),
            target.shape()
        )));
    }
    let p = logits.sigmoid()?.clamp(PROB_EPS, 1.0 - PROB_EPS)?;
    let y = logits.constant(target.clone());
    let one_minus_y = logits.constant(target.map(|v| 1.0 - v));
    let pos = y.mul(&p.ln()?)?;
    let neg = one_minus_y.mul(&p.neg()?.add_scalar(1.0)?.ln()?)?;
    Ok(pos.add(&neg)?.mean()?.neg()?)
}

/// Soft dice loss `1 − (2Σpy + 1)/(Σp + Σy + 1)` averaged over the batch.
pub fn dice_loss<'t>(logits: Var<'t>, target: &Tensor) -> Result<Var<'t>> {
    if logits.shape() != target.shape() || logits.rank() != 4 {
        return Err(Error::Shape(format!(
            "logits {:?} and target {:?} must match as (B, 1, H, W)",
            logits.shape(),
            target.shape()
        )));
    }
    let p = logits.sigmoid()?;
    let y = logits.constant(target.clone());
    let inter = p.mul(&y)?.sum_axes(&[1, 2, 3])?;
    let denom = p.add(&y)?.sum_axes(&[1, 2, 3])?.add_scalar(1.0)?;
    let ratio = inter.scale(2.0)?.add_scalar(1.0)?.div(&denom)?;
    Ok(ratio.neg()?.add_scalar(1.0)?.mean()?)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Adds the soft dice loss to the cross-entropy.
    #[serde(default)]
    pub dice: bool,
}

pub fn segmentation_loss<'t>(logits: Var<'t>, target: &Tensor, cfg: LossConfig) -> Result<Var<'t>> {
    let bce = bce_loss(logits, target)?;
    if cfg.dice {
        Ok(bce.add(&dice_loss(logits, target)?)?)
    } else {
        Ok(bce)
    }
}
