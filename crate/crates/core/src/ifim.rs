//! Intra-scale feature interaction: PSR, CSR and CMA on one encoder stage,
//! merged by an adaptive sigmoid-gated fusion.

use mrsnet_autograd::Var;
use serde::{Deserialize, Serialize};

use crate::cross_modal_align::{CmaConfig, CrossModalAlign};
use crate::error::{Error, Result};
use crate::language::LanguageSequence;
use crate::layers::ChannelLinear;
use crate::params::{Ctx, Init};
use crate::spatial_relations::SpatialRelations;
use crate::spectral_pyramid::{PsrConfig, PyramidalRefinement};

/// Branch switches for ablation runs. CMA is always on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationFlags {
    pub use_psr: bool,
    pub use_csr: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        Self {
            use_psr: true,
            use_csr: true,
        }
    }
}

pub struct FuseOutput<'t> {
    /// (B, dim, H, W)
    pub refined: Var<'t>,
    /// Three (B, dim, H, W) gate maps in (0, 1): PSR, CSR, CMA.
    pub gates: [Var<'t>; 3],
    /// `w1⊙F_py + w2⊙F_rel + w3⊙F_cm` before the output projection.
    pub weighted_sum: Var<'t>,
}

/// `linear(w1⊙a + w2⊙b + w3⊙c)` with `[w1, w2, w3] = σ(linear(concat[a, b, c]))`.
#[derive(Debug, Clone)]
pub struct AdaptiveFuse {
    pub gate: ChannelLinear,
    pub project: ChannelLinear,
    dim: usize,
}

impl AdaptiveFuse {
    pub fn new(init: &mut Init<'_>, dim: usize) -> Self {
        Self {
            gate: ChannelLinear::new(init, "gate", 3 * dim, 3 * dim),
            project: ChannelLinear::new(init, "project", dim, dim),
            dim,
        }
    }

    pub fn forward<'t>(
        &self,
        ctx: &Ctx<'t>,
        f_py: Var<'t>,
        f_rel: Var<'t>,
        f_cm: Var<'t>,
    ) -> Result<FuseOutput<'t>> {
        let shape = f_py.shape();
        if f_rel.shape() != shape || f_cm.shape() != shape {
            return Err(Error::Shape(format!(
                "fusion inputs disagree: {shape:?}, {:?}, {:?}",
                f_rel.shape(),
                f_cm.shape()
            )));
        }
        if shape.len() != 4 || shape[1] != self.dim {
            return Err(Error::Config(format!(
                "fusion configured for {} channels, inputs are {shape:?}",
                self.dim
            )));
        }
        let (b, d, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        let n = h * w;
        let flat = |v: Var<'t>| v.reshape([b, d, n]);
        let (a, r, c) = (flat(f_py)?, flat(f_rel)?, flat(f_cm)?);
        let weights = self
            .gate
            .forward(ctx, Var::concat(&[a, r, c], 1)?)?
            .sigmoid()?
            .split(1, &[d, d, d])?;
        let sum = weights[0]
            .mul(&a)?
            .add(&weights[1].mul(&r)?)?
            .add(&weights[2].mul(&c)?)?;
        let refined = self.project.forward(ctx, sum)?.reshape([b, d, h, w])?;
        let unflat = |v: &Var<'t>| v.reshape([b, d, h, w]);
        Ok(FuseOutput {
            refined,
            gates: [
                unflat(&weights[0])?,
                unflat(&weights[1])?,
                unflat(&weights[2])?,
            ],
            weighted_sum: sum.reshape([b, d, h, w])?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IfimConfig {
    pub dim: usize,
    pub lang_dim: usize,
    pub pyramid_factors: Vec<usize>,
    pub cma_heads: usize,
}

impl IfimConfig {
    pub fn new(dim: usize, lang_dim: usize) -> Self {
        Self {
            dim,
            lang_dim,
            pyramid_factors: vec![1, 2, 4],
            cma_heads: 1,
        }
    }
}

pub struct IfimOutput<'t> {
    pub refined: Var<'t>,
    pub gates: [Var<'t>; 3],
    pub f_py: Var<'t>,
    pub f_rel: Var<'t>,
    pub f_cm: Var<'t>,
}

/// One IFIM block. Parameters of every branch exist regardless of the
/// ablation flags so checkpoints share a layout; a disabled branch passes
/// the stage feature through unchanged and its parameters never enter the
/// graph.
#[derive(Debug, Clone)]
pub struct Ifim {
    pub psr: PyramidalRefinement,
    pub csr: SpatialRelations,
    pub cma: CrossModalAlign,
    pub fuse: AdaptiveFuse,
}

impl Ifim {
    pub fn new(init: &mut Init<'_>, cfg: &IfimConfig) -> Result<Self> {
        let psr_cfg = PsrConfig {
            pyramid_factors: cfg.pyramid_factors.clone(),
            ..PsrConfig::new(cfg.dim)
        };
        let cma_cfg = CmaConfig {
            heads: cfg.cma_heads,
            ..CmaConfig::new(cfg.dim, cfg.lang_dim)
        };
        Ok(Self {
            psr: PyramidalRefinement::new(&mut init.sub("psr"), psr_cfg)?,
            csr: SpatialRelations::new(&mut init.sub("csr"), cfg.dim),
            cma: CrossModalAlign::new(&mut init.sub("cma"), cma_cfg)?,
            fuse: AdaptiveFuse::new(&mut init.sub("fuse"), cfg.dim),
        })
    }

    pub fn forward<'t>(
        &self,
        ctx: &Ctx<'t>,
        x: Var<'t>,
        language: &LanguageSequence,
        flags: AblationFlags,
    ) -> Result<IfimOutput<'t>> {
        let f_py = if flags.use_psr {
            self.psr.forward(ctx, x)?
        } else {
            x
        };
        let f_rel = if flags.use_csr {
            self.csr.forward(ctx, x)?
        } else {
            x
        };
        let f_cm = self.cma.forward(ctx, x, language)?;
        let fused = {
            let _scope = ctx.tape().enter("fuse");
            self.fuse.forward(ctx, f_py, f_rel, f_cm)?
        };
        Ok(IfimOutput {
            refined: fused.refined,
            gates: fused.gates,
            f_py,
            f_rel,
            f_cm,
        })
    }
}
