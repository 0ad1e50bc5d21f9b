//! Pyramidal spatial-spectral refinement (PSR).
//!
//! Each pyramid level refines its input twice: a 3×3 convolution in the
//! spatial domain, and a per-pixel channel reweighting whose logits come from
//! the FFT magnitude and phase of the features. Levels run at 1/f resolution
//! for every pyramid factor f and are merged back at full resolution.

use mrsnet_autograd::{fft2_raw, FftDirection, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::Conv2d;
use crate::params::{Ctx, Init};

/// Axis over which the spectral weights are normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WeightAxis {
    #[default]
    Channel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsrConfig {
    pub dim: usize,
    pub pyramid_factors: Vec<usize>,
    #[serde(default)]
    pub weight_axis: WeightAxis,
}

impl PsrConfig {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            pyramid_factors: vec![1, 2, 4],
            weight_axis: WeightAxis::Channel,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("PSR dim must be positive".into()));
        }
        let f = &self.pyramid_factors;
        if f.first() != Some(&1) || f.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "pyramid factors must start at 1 and strictly increase, got {f:?}"
            )));
        }
        Ok(())
    }

    pub fn max_factor(&self) -> usize {
        self.pyramid_factors.last().copied().unwrap_or(1)
    }
}

/// FFT magnitude and phase of a (B, C, H, W) feature map.
pub struct SpectralPair<'t> {
    pub magnitude: Var<'t>,
    pub phase: Var<'t>,
}

impl SpectralPair<'_> {
    /// `IFFT2(M · e^{iP})`, real part.
    pub fn reconstruct(&self) -> Result<Tensor> {
        let m = self.magnitude.value();
        let p = self.phase.value();
        let mut shape = m.shape().to_vec();
        let data: Vec<f64> = m
            .data()
            .iter()
            .zip(p.data())
            .flat_map(|(&r, &a)| [r * a.cos(), r * a.sin()])
            .collect();
        shape.push(2);
        let n: usize = shape[shape.len() - 3..shape.len() - 1].iter().product();
        let z = fft2_raw(
            &Tensor::new(shape.clone(), data)?,
            FftDirection::Inverse,
            1.0 / n.max(1) as f64,
        )?;
        let real: Vec<f64> = z.data().chunks_exact(2).map(|c| c[0]).collect();
        Ok(Tensor::new(m.shape().to_vec(), real)?)
    }
}

/// Unnormalized 2-D FFT of `x` split into magnitude and phase.
pub fn fft_decompose<'t>(x: Var<'t>) -> Result<SpectralPair<'t>> {
    if x.rank() != 4 {
        return Err(Error::Shape(format!("expected (B, C, H, W), got {:?}", x.shape())));
    }
    if !x.value().all_finite() {
        let origin = x
            .tape()
            .first_non_finite()
            .map_or_else(|| "input".to_string(), |label| label.to_string());
        return Err(Error::NonFinite(format!(
            "{origin}; the feature map reaching the FFT is not finite"
        )));
    }
    let spectrum = x.to_complex()?.fft2()?;
    Ok(SpectralPair {
        magnitude: spectrum.magnitude()?,
        phase: spectrum.phase()?,
    })
}

pub struct RefineOutput<'t> {
    pub output: Var<'t>,
    /// Softmax weights over channels, (B, dim, H, W).
    pub spectral_weights: Var<'t>,
}

/// One pyramid level: `Conv(concat[Conv(X), softmax_c(Conv([M, P])) ⊙ X])`.
#[derive(Debug, Clone)]
pub struct SpatialSpectralRefine {
    pub spatial: Conv2d,
    pub spectral: Conv2d,
    pub fuse: Conv2d,
    dim: usize,
}

impl SpatialSpectralRefine {
    pub fn new(init: &mut Init<'_>, dim: usize) -> Self {
        Self {
            spatial: Conv2d::same3x3(init, "spatial", dim, dim),
            spectral: Conv2d::same3x3(init, "spectral", 2 * dim, dim),
            fuse: Conv2d::same3x3(init, "fuse", 2 * dim, dim),
            dim,
        }
    }

    pub fn forward_detailed<'t>(&self, ctx: &Ctx<'t>, x: Var<'t>) -> Result<RefineOutput<'t>> {
        if x.rank() != 4 || x.dim(1) != self.dim {
            return Err(Error::Config(format!(
                "PSR configured for {} channels, input is {:?}",
                self.dim,
                x.shape()
            )));
        }
        let x_s = self.spatial.forward(ctx, x)?;
        let spec = fft_decompose(x)?;
        let logits = self
            .spectral
            .forward(ctx, Var::concat(&[spec.magnitude, spec.phase], 1)?)?;
        let weights = logits.softmax(1)?;
        let x_f = weights.mul(&x)?;
        let output = self.fuse.forward(ctx, Var::concat(&[x_s, x_f], 1)?)?;
        Ok(RefineOutput {
            output,
            spectral_weights: weights,
        })
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t>, x: Var<'t>) -> Result<Var<'t>> {
        Ok(self.forward_detailed(ctx, x)?.output)
    }
}

/// Full PSR block producing `F_py`.
#[derive(Debug, Clone)]
pub struct PyramidalRefinement {
    cfg: PsrConfig,
    levels: Vec<SpatialSpectralRefine>,
    project: Conv2d,
}

impl PyramidalRefinement {
    pub fn new(init: &mut Init<'_>, cfg: PsrConfig) -> Result<Self> {
        cfg.validate()?;
        let levels = cfg
            .pyramid_factors
            .iter()
            .map(|f| SpatialSpectralRefine::new(&mut init.sub(format!("level{f}")), cfg.dim))
            .collect();
        let project = Conv2d::pointwise(
            init,
            "project",
            cfg.pyramid_factors.len() * cfg.dim,
            cfg.dim,
        );
        Ok(Self {
            cfg,
            levels,
            project,
        })
    }

    pub fn config(&self) -> &PsrConfig {
        &self.cfg
    }

    pub fn levels(&self) -> &[SpatialSpectralRefine] {
        &self.levels
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let shape = x.shape();
        if shape.len() != 4 || shape[1] != self.cfg.dim {
            return Err(Error::Config(format!(
                "PSR configured for {} channels, input is {shape:?}",
                self.cfg.dim
            )));
        }
        let (h, w) = (shape[2], shape[3]);
        let f = self.cfg.max_factor();
        if h % f != 0 || w % f != 0 {
            return Err(Error::Shape(format!(
                "PSR needs H and W divisible by {f}; got {h}x{w}, pad to {}x{}",
                h.div_ceil(f) * f,
                w.div_ceil(f) * f
            )));
        }
        let _scope = ctx.tape().enter("psr");
        let mut branches = Vec::with_capacity(self.levels.len());
        for (&factor, level) in self.cfg.pyramid_factors.iter().zip(&self.levels) {
            let down = x.avg_pool2d(factor)?;
            let refined = level.forward(ctx, down)?;
            branches.push(refined.upsample_bilinear(h, w)?);
        }
        self.project.forward(ctx, Var::concat(&branches, 1)?)
    }
}
