use crate::error::{Result, TensorError};
use crate::ops::linalg::gemm;
use crate::tape::Var;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dOptions {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Default for Conv2dOptions {
    fn default() -> Self {
        Self {
            stride: 1,
            padding: 0,
            groups: 1,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    padding: usize,
}

impl Geometry {
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.padding == 0
    }
}

/// Unfolds `channels` input planes starting at `x` into a
/// (channels·kh·kw) × (ho·wo) column matrix.
fn im2col(x: &[f64], channels: usize, g: &Geometry, cols: &mut [f64]) {
    let plane = g.ho * g.wo;
    for c in 0..channels {
        let src = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    let line = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src_row = &src[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        *v = if ix < 0 || ix >= g.w as isize {
                            0.0
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], channels: usize, g: &Geometry, dx: &mut [f64]) {
    let plane = g.ho * g.wo;
    for c in 0..channels {
        let dst = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[iy as usize * g.w + ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

impl<'t> Var<'t> {
    /// 2-D cross-correlation over (B, C, H, W) with weight
    /// (C_out, C_in / groups, kh, kw) and optional bias (C_out).
    pub fn conv2d(
        &self,
        weight: &Var<'t>,
        bias: Option<&Var<'t>>,
        opts: Conv2dOptions,
    ) -> Result<Var<'t>> {
        let x = self.value();
        let w = weight.value();
        let (xs, ws) = (x.shape().to_vec(), w.shape().to_vec());
        if xs.len() != 4 || ws.len() != 4 || opts.groups == 0 || opts.stride == 0 {
            return Err(TensorError::shapes("conv2d", &xs, &ws));
        }
        let (batch, c_in, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (c_out, cg_in, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        let groups = opts.groups;
        if c_in % groups != 0 || c_out % groups != 0 || cg_in * groups != c_in {
            return Err(TensorError::shapes("conv2d", &xs, &ws));
        }
        if h + 2 * opts.padding < kh || wd + 2 * opts.padding < kw {
            return Err(TensorError::invalid("conv2d", "kernel larger than padded input"));
        }
        if let Some(b) = bias {
            if b.shape() != [c_out] {
                return Err(TensorError::shapes("conv2d bias", &b.shape(), &[c_out]));
            }
        }
        let g = Geometry {
            h,
            w: wd,
            kh,
            kw,
            ho: (h + 2 * opts.padding - kh) / opts.stride + 1,
            wo: (wd + 2 * opts.padding - kw) / opts.stride + 1,
            stride: opts.stride,
            padding: opts.padding,
        };
        let cg_out = c_out / groups;
        let krows = cg_in * kh * kw;
        let plane = g.ho * g.wo;
        let mut out = vec![0.0; batch * c_out * plane];
        let mut cols = if g.is_pointwise() {
            Vec::new()
        } else {
            vec![0.0; krows * plane]
        };
        let xd = x.data();
        let wdata = w.data();
        for b in 0..batch {
            for gi in 0..groups {
                let x_off = (b * c_in + gi * cg_in) * h * wd;
                let colm: &[f64] = if g.is_pointwise() {
                    &xd[x_off..x_off + krows * plane]
                } else {
                    im2col(&xd[x_off..], cg_in, &g, &mut cols);
                    &cols
                };
                gemm(
                    cg_out,
                    krows,
                    plane,
                    &wdata[gi * cg_out * krows..],
                    false,
                    colm,
                    false,
                    &mut out[(b * c_out + gi * cg_out) * plane..],
                    false,
                );
            }
        }
        if let Some(bv) = bias {
            let bd = bv.value();
            for b in 0..batch {
                for (co, &bias) in bd.data().iter().enumerate() {
                    let o = (b * c_out + co) * plane;
                    out[o..o + plane].iter_mut().for_each(|v| *v += bias);
                }
            }
        }
        let out = Tensor::new(vec![batch, c_out, g.ho, g.wo], out)?;
        let mut parents = vec![*self, *weight];
        parents.extend(bias.copied());
        self.tape.push("conv2d", out, &parents, move |gout, need| {
            let gd = gout.data();
            let xd = x.data();
            let wdata = w.data();
            let mut dx = need[0].then(|| vec![0.0; x.numel()]);
            let mut dw = need[1].then(|| vec![0.0; w.numel()]);
            let mut cols = vec![0.0; krows * plane];
            let mut dcols = vec![0.0; krows * plane];
            for b in 0..batch {
                for gi in 0..groups {
                    let x_off = (b * c_in + gi * cg_in) * h * wd;
                    let g_off = (b * c_out + gi * cg_out) * plane;
                    if let Some(dw) = dw.as_mut() {
                        let colm: &[f64] = if g.is_pointwise() {
                            &xd[x_off..x_off + krows * plane]
                        } else {
                            im2col(&xd[x_off..], cg_in, &g, &mut cols);
                            &cols
                        };
                        gemm(
                            cg_out,
                            plane,
                            krows,
                            &gd[g_off..],
                            false,
                            colm,
                            true,
                            &mut dw[gi * cg_out * krows..],
                            true,
                        );
                    }
                    if let Some(dx) = dx.as_mut() {
                        if g.is_pointwise() {
                            gemm(
                                krows,
                                cg_out,
                                plane,
                                &wdata[gi * cg_out * krows..],
                                true,
                                &gd[g_off..],
                                false,
                                &mut dx[x_off..],
                                true,
                            );
                        } else {
                            gemm(
                                krows,
                                cg_out,
                                plane,
                                &wdata[gi * cg_out * krows..],
                                true,
                                &gd[g_off..],
                                false,
                                &mut dcols,
                                false,
                            );
                            col2im(&dcols, cg_in, &g, &mut dx[x_off..]);
                        }
                    }
                }
            }
            let mut grads = vec![
                dx.map(|d| Tensor::new(x.shape().to_vec(), d).expect("shape")),
                dw.map(|d| Tensor::new(w.shape().to_vec(), d).expect("shape")),
            ];
            if need.len() == 3 {
                grads.push(need[2].then(|| {
                    let mut db = vec![0.0; c_out];
                    for b in 0..batch {
                        for (co, acc) in db.iter_mut().enumerate() {
                            let o = (b * c_out + co) * plane;
                            *acc += gd[o..o + plane].iter().sum::<f64>();
                        }
                    }
                    Tensor::new(vec![c_out], db).expect("shape")
                }));
            }
            grads
        })
    }

    /// Non-overlapping average pooling with kernel = stride = `factor`.
    pub fn avg_pool2d(&self, factor: usize) -> Result<Var<'t>> {
        let x = self.value();
        let s = x.shape().to_vec();
        if s.len() != 4 || factor == 0 || s[2] % factor != 0 || s[3] % factor != 0 {
            return Err(TensorError::invalid(
                "avg_pool2d",
                format!("factor {factor} does not tile {s:?}"),
            ));
        }
        if factor == 1 {
            return Ok(*self);
        }
        let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
        let (ho, wo) = (h / factor, w / factor);
        let norm = 1.0 / (factor * factor) as f64;
        let xd = x.data();
        let mut out = vec![0.0; planes * ho * wo];
        for p in 0..planes {
            for y in 0..h {
                for xx in 0..w {
                    out[(p * ho + y / factor) * wo + xx / factor] += xd[(p * h + y) * w + xx] * norm;
                }
            }
        }
        let out = Tensor::new(vec![s[0], s[1], ho, wo], out)?;
        self.tape.push("avg_pool2d", out, &[*self], move |g, _| {
            let gd = g.data();
            let mut dx = vec![0.0; planes * h * w];
            for p in 0..planes {
                for y in 0..h {
                    for xx in 0..w {
                        dx[(p * h + y) * w + xx] = gd[(p * ho + y / factor) * wo + xx / factor] * norm;
                    }
                }
            }
            vec![Some(Tensor::new(s.clone(), dx).expect("shape"))]
        })
    }

    /// Bilinear resize of (B, C, H, W) with half-pixel centres
    /// (`align_corners = false`).
    pub fn upsample_bilinear(&self, out_h: usize, out_w: usize) -> Result<Var<'t>> {
        let x = self.value();
        let s = x.shape().to_vec();
        if s.len() != 4 || out_h == 0 || out_w == 0 || s[2] == 0 || s[3] == 0 {
            return Err(TensorError::invalid("upsample_bilinear", format!("{s:?} -> {out_h}x{out_w}")));
        }
        if s[2] == out_h && s[3] == out_w {
            return Ok(*self);
        }
        let out = resize_bilinear(&x, out_h, out_w);
        let (h, w) = (s[2], s[3]);
        self.tape.push("upsample_bilinear", out, &[*self], move |g, _| {
            let ys = interp_taps(h, out_h);
            let xs = interp_taps(w, out_w);
            let planes = s[0] * s[1];
            let gd = g.data();
            let mut dx = vec![0.0; planes * h * w];
            for p in 0..planes {
                for (oy, ty) in ys.iter().enumerate() {
                    for (ox, tx) in xs.iter().enumerate() {
                        let gv = gd[(p * out_h + oy) * out_w + ox];
                        for &(iy, wy) in &ty.taps {
                            for &(ix, wx) in &tx.taps {
                                dx[(p * h + iy) * w + ix] += gv * wy * wx;
                            }
                        }
                    }
                }
            }
            vec![Some(Tensor::new(s.clone(), dx).expect("shape"))]
        })
    }
}

struct Taps {
    taps: [(usize, f64); 2],
}

fn interp_taps(input: usize, output: usize) -> Vec<Taps> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            let frac = src - i0 as f64;
            Taps {
                taps: [(i0, 1.0 - frac), (i1, frac)],
            }
        })
        .collect()
}

/// Non-differentiable bilinear resize, also used for resizing predictions.
pub fn resize_bilinear(x: &Tensor, out_h: usize, out_w: usize) -> Tensor {
    let s = x.shape();
    assert_eq!(s.len(), 4, "resize_bilinear expects rank 4");
    let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
    let ys = interp_taps(h, out_h);
    let xs = interp_taps(w, out_w);
    let xd = x.data();
    let mut out = vec![0.0; planes * out_h * out_w];
    for p in 0..planes {
        for (oy, ty) in ys.iter().enumerate() {
            for (ox, tx) in xs.iter().enumerate() {
                let mut acc = 0.0;
                for &(iy, wy) in &ty.taps {
                    for &(ix, wx) in &tx.taps {
                        acc += xd[(p * h + iy) * w + ix] * wy * wx;
                    }
                }
                out[(p * out_h + oy) * out_w + ox] = acc;
            }
        }
    }
    Tensor::new(vec![s[0], s[1], out_h, out_w], out).expect("shape")
}
