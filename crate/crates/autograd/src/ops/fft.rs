//! Complex tensors are stored as real tensors with a trailing axis of size 2
//! holding `(re, im)`. The 2-D transforms act on the two axes before it.

use rustfft::num_complex::Complex64;
use rustfft::{FftDirection, FftPlanner};

use crate::error::{Result, TensorError};
use crate::tape::Var;
use crate::tensor::Tensor;

fn spectral_dims(shape: &[usize], op: &'static str) -> Result<(usize, usize, usize)> {
    if shape.len() < 3 || shape[shape.len() - 1] != 2 {
        return Err(TensorError::invalid(
            op,
            format!("expected [..., H, W, 2], got {shape:?}"),
        ));
    }
    let h = shape[shape.len() - 3];
    let w = shape[shape.len() - 2];
    let planes = shape[..shape.len() - 3].iter().product();
    Ok((planes, h, w))
}

/// Unnormalized 2-D DFT in the given direction over every plane of a
/// `[..., H, W, 2]` tensor, optionally scaling the result.
pub fn fft2_raw(x: &Tensor, direction: FftDirection, scale: f64) -> Result<Tensor> {
    let (planes, h, w) = spectral_dims(x.shape(), "fft2")?;
    if h == 0 || w == 0 {
        return Ok(x.clone());
    }
    let mut buf: Vec<Complex64> = x
        .data()
        .chunks_exact(2)
        .map(|c| Complex64::new(c[0], c[1]))
        .collect();
    let mut planner = FftPlanner::<f64>::new();
    let row_fft = planner.plan_fft(w, direction);
    let col_fft = planner.plan_fft(h, direction);
    row_fft.process(&mut buf);
    let mut column = vec![Complex64::new(0.0, 0.0); h * w];
    for p in 0..planes {
        let plane = &mut buf[p * h * w..(p + 1) * h * w];
        for y in 0..h {
            for xx in 0..w {
                column[xx * h + y] = plane[y * w + xx];
            }
        }
        col_fft.process(&mut column);
        for y in 0..h {
            for xx in 0..w {
                plane[y * w + xx] = column[xx * h + y];
            }
        }
    }
    let data = buf
        .iter()
        .flat_map(|c| [c.re * scale, c.im * scale])
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

impl<'t> Var<'t> {
    /// Forward 2-D FFT, unnormalized.
    pub fn fft2(&self) -> Result<Var<'t>> {
        let out = fft2_raw(&self.value(), FftDirection::Forward, 1.0)?;
        self.tape.push("fft2", out, &[*self], |g, _| {
            // adjoint of the DFT matrix is its conjugate: an unnormalized inverse
            vec![Some(
                fft2_raw(g, FftDirection::Inverse, 1.0).expect("same layout"),
            )]
        })
    }

    /// Inverse 2-D FFT with 1/(H·W) normalization.
    pub fn ifft2(&self) -> Result<Var<'t>> {
        let x = self.value();
        let (_, h, w) = spectral_dims(x.shape(), "ifft2")?;
        let n = (h * w).max(1) as f64;
        let out = fft2_raw(&x, FftDirection::Inverse, 1.0 / n)?;
        self.tape.push("ifft2", out, &[*self], move |g, _| {
            vec![Some(
                fft2_raw(g, FftDirection::Forward, 1.0 / n).expect("same layout"),
            )]
        })
    }

    /// Embeds a real tensor as complex with zero imaginary part.
    pub fn to_complex(&self) -> Result<Var<'t>> {
        let mut shape = self.shape();
        shape.push(1);
        let re = self.reshape(shape.clone())?;
        let im = self.tape.constant(Tensor::zeros(shape.clone()));
        Var::concat(&[re, im], shape.len() - 1)
    }

    pub fn real_part(&self) -> Result<Var<'t>> {
        let shape = self.shape();
        spectral_dims(&shape, "real_part")?;
        self.narrow(shape.len() - 1, 0, 1)?
            .reshape(shape[..shape.len() - 1].to_vec())
    }

    pub fn imag_part(&self) -> Result<Var<'t>> {
        let shape = self.shape();
        spectral_dims(&shape, "imag_part")?;
        self.narrow(shape.len() - 1, 1, 1)?
            .reshape(shape[..shape.len() - 1].to_vec())
    }

    /// |z| of a complex tensor. The gradient at z = 0 is taken as zero.
    pub fn magnitude(&self) -> Result<Var<'t>> {
        let z = self.value();
        let shape = z.shape().to_vec();
        spectral_dims(&shape, "magnitude")?;
        let out_shape = shape[..shape.len() - 1].to_vec();
        let mags: Vec<f64> = z
            .data()
            .chunks_exact(2)
            .map(|c| c[0].hypot(c[1]))
            .collect();
        let out = Tensor::new(out_shape, mags)?;
        let out_keep = out.clone();
        self.tape.push("magnitude", out, &[*self], move |g, _| {
            let mut dz = vec![0.0; z.numel()];
            for (i, ((c, &m), &gv)) in z
                .data()
                .chunks_exact(2)
                .zip(out_keep.data())
                .zip(g.data())
                .enumerate()
            {
                if m > 0.0 {
                    dz[2 * i] = gv * c[0] / m;
                    dz[2 * i + 1] = gv * c[1] / m;
                }
            }
            vec![Some(Tensor::new(shape.clone(), dz).expect("shape"))]
        })
    }

    /// arg(z) in [-π, π]. A signed-zero imaginary part is canonicalized to +0,
    /// so exactly real negative bins map to +π. The gradient at z = 0 is zero.
    pub fn phase(&self) -> Result<Var<'t>> {
        let z = self.value();
        let shape = z.shape().to_vec();
        spectral_dims(&shape, "phase")?;
        let out_shape = shape[..shape.len() - 1].to_vec();
        let angles: Vec<f64> = z
            .data()
            .chunks_exact(2)
            .map(|c| (c[1] + 0.0).atan2(c[0]))
            .collect();
        let out = Tensor::new(out_shape, angles)?;
        self.tape.push("phase", out, &[*self], move |g, _| {
            let mut dz = vec![0.0; z.numel()];
            for (i, (c, &gv)) in z.data().chunks_exact(2).zip(g.data()).enumerate() {
                let r2 = c[0] * c[0] + c[1] * c[1];
                if r2 > 0.0 {
                    dz[2 * i] = -gv * c[1] / r2;
                    dz[2 * i + 1] = gv * c[0] / r2;
                }
            }
            vec![Some(Tensor::new(shape.clone(), dz).expect("shape"))]
        })
    }
}
