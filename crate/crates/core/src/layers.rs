use mrsnet_autograd::{Conv2dOptions, Tensor, Var};

use crate::error::{Error, Result};
use crate::params::{Ctx, Init, ParamId};

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_channels: usize,
    pub out_channels: usize,
    opts: Conv2dOptions,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        init: &mut Init<'_>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> Self {
        let mut init = init.sub(name);
        let fan_in = in_channels / groups * kernel * kernel;
        let weight = init.uniform(
            "weight",
            &[out_channels, in_channels / groups, kernel, kernel],
            fan_in,
        );
        let bias = Some(init.uniform("bias", &[out_channels], fan_in));
        Self {
            weight,
            bias,
            in_channels,
            out_channels,
            opts: Conv2dOptions {
                stride,
                padding,
                groups,
            },
        }
    }

    /// 3×3, stride 1, padding 1.
    pub fn same3x3(init: &mut Init<'_>, name: &str, c_in: usize, c_out: usize) -> Self {
        Self::new(init, name, c_in, c_out, 3, 1, 1, 1)
    }

    pub fn pointwise(init: &mut Init<'_>, name: &str, c_in: usize, c_out: usize) -> Self {
        Self::new(init, name, c_in, c_out, 1, 1, 0, 1)
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t>, x: Var<'t>) -> Result<Var<'t>> {
        if x.rank() != 4 || x.dim(1) != self.in_channels {
            return Err(Error::Config(format!(
                "conv expects {} input channels, got input {:?}",
                self.in_channels,
                x.shape()
            )));
        }
        let w = ctx.param(self.weight);
        let b = self.bias.map(|id| ctx.param(id));
        Ok(x.conv2d(&w, b.as_ref(), self.opts)?)
    }
}

/// Per-position linear map over the channel axis of (B, C, N) tensors; a
/// kernel-size-1 Conv1D.
#[derive(Debug, Clone)]
pub struct ChannelLinear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl ChannelLinear {
    pub fn new(init: &mut Init<'_>, name: &str, in_channels: usize, out_channels: usize) -> Self {
        let mut init = init.sub(name);
        let weight = init.uniform("weight", &[out_channels, in_channels], in_channels);
        let bias = init.uniform("bias", &[out_channels, 1], in_channels);
        Self {
            weight,
            bias,
            in_channels,
            out_channels,
        }
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t>, x: Var<'t>) -> Result<Var<'t>> {
        if x.rank() != 3 || x.dim(1) != self.in_channels {
            return Err(Error::Config(format!(
                "channel projection expects {} channels, got input {:?}",
                self.in_channels,
                x.shape()
            )));
        }
        let y = ctx.param(self.weight).matmul(&x)?;
        Ok(y.add(&ctx.param(self.bias))?)
    }
}

/// Batch normalization over (B, H, W) per channel with running statistics.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub channels: usize,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm2d {
    pub fn new(init: &mut Init<'_>, name: &str, channels: usize) -> Self {
        let mut init = init.sub(name);
        Self {
            gamma: init.constant("gamma", Tensor::ones([channels])),
            beta: init.constant("beta", Tensor::zeros([channels])),
            running_mean: init.buffer("running_mean", Tensor::zeros([channels])),
            running_var: init.buffer("running_var", Tensor::ones([channels])),
            channels,
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    /// Training mode normalizes with batch statistics (a batch of one
    /// normalizes over spatial positions only) and queues running-stat
    /// updates on the context; eval mode uses the running statistics.
    pub fn forward<'t>(&self, ctx: &Ctx<'t>, x: Var<'t>) -> Result<Var<'t>> {
        if x.rank() != 4 || x.dim(1) != self.channels {
            return Err(Error::Config(format!(
                "batch norm over {} channels got {:?}",
                self.channels,
                x.shape()
            )));
        }
        let c = self.channels;
        let gamma = ctx.param(self.gamma).reshape([1, c, 1, 1])?;
        let beta = ctx.param(self.beta).reshape([1, c, 1, 1])?;
        let (centered, inv_std) = if ctx.training() {
            let mean = x.mean_axes(&[0, 2, 3])?;
            let centered = x.sub(&mean)?;
            let var = centered.mul(&centered)?.mean_axes(&[0, 2, 3])?;
            let count = x.dim(0) * x.dim(2) * x.dim(3);
            let unbiased = if count > 1 {
                count as f64 / (count - 1) as f64
            } else {
                1.0
            };
            let m = self.momentum;
            let new_mean = ctx
                .buffer(self.running_mean)
                .zip_map(&mean.value().reshape([c])?, |r, b| (1.0 - m) * r + m * b)?;
            let new_var = ctx
                .buffer(self.running_var)
                .zip_map(&var.value().reshape([c])?, |r, b| {
                    (1.0 - m) * r + m * b * unbiased
                })?;
            ctx.record_buffer_update(self.running_mean, new_mean);
            ctx.record_buffer_update(self.running_var, new_var);
            (centered, var.add_scalar(self.eps)?.powf(-0.5)?)
        } else {
            let mean = ctx.input(ctx.buffer(self.running_mean).reshape([1, c, 1, 1])?);
            let eps = self.eps;
            let inv = ctx.buffer(self.running_var).map(|v| 1.0 / (v + eps).sqrt());
            (x.sub(&mean)?, ctx.input(inv.reshape([1, c, 1, 1])?))
        };
        Ok(centered.mul(&inv_std)?.mul(&gamma)?.add(&beta)?)
    }
}
