//! Central finite-difference gradient checking.

use crate::error::{Result, TensorError};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Upper bound on perturbed coordinates per input; larger inputs are
    /// sampled at an even stride.
    pub max_coords: usize,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-6,
            max_coords: 4096,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub coords_checked: usize,
    pub max_abs_error: f64,
    /// `max |analytic - numeric| / max |numeric|` over the checked coordinates.
    pub relative_error: f64,
    pub numeric_scale: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.relative_error <= tolerance
    }
}

/// Compares reverse-mode gradients of the scalar `f` against central
/// differences, returning one report per input.
pub fn check_gradients<F>(inputs: &[Tensor], f: F, opts: GradCheckOptions) -> Result<Vec<GradCheckReport>>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let analytic = {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&tape, &vars)?;
        if out.value().numel() != 1 {
            return Err(TensorError::invalid("check_gradients", "function must return a scalar"));
        }
        let grads = tape.backward(out)?;
        vars.iter()
            .zip(inputs)
            .map(|(v, t)| {
                grads
                    .get(*v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(t.shape().to_vec()))
            })
            .collect::<Vec<_>>()
    };

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let tape = Tape::no_grad();
        let vars: Vec<Var<'_>> = perturbed.iter().map(|t| tape.constant(t.clone())).collect();
        Ok(f(&tape, &vars)?.value().item())
    };

    let mut reports = Vec::with_capacity(inputs.len());
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let n = input.numel();
        let stride = n.div_ceil(opts.max_coords.max(1)).max(1);
        let (mut max_abs, mut scale, mut count) = (0.0f64, 0.0f64, 0);
        for j in (0..n).step_by(stride) {
            let orig = input.data()[j];
            work[i].data_mut()[j] = orig + opts.step;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = orig - opts.step;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * opts.step);
            let a = analytic[i].data()[j];
            max_abs = max_abs.max((a - numeric).abs());
            scale = scale.max(numeric.abs());
            count += 1;
        }
        reports.push(GradCheckReport {
            coords_checked: count,
            max_abs_error: max_abs,
            relative_error: if scale > 0.0 { max_abs / scale } else { max_abs },
            numeric_scale: scale,
        });
    }
    Ok(reports)
}
