use crate::error::Result;
use crate::tape::Var;

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cdf + x * pdf
}

impl<'t> Var<'t> {
    /// Elementwise op whose derivative is expressed through input and output.
    fn unary(
        &self,
        op: &'static str,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Result<Var<'t>> {
        let x = self.value();
        let y = x.map(f);
        let y_keep = y.clone();
        self.tape.push(op, y, &[*self], move |g, _| {
            let d = x
                .zip_map(&y_keep, &df)
                .and_then(|d| d.zip_map(g, |a, b| a * b))
                .expect("same shapes");
            vec![Some(d)]
        })
    }

    pub fn neg(&self) -> Result<Var<'t>> {
        self.unary("neg", |x| -x, |_, _| -1.0)
    }

    pub fn scale(&self, factor: f64) -> Result<Var<'t>> {
        self.unary("scale", move |x| x * factor, move |_, _| factor)
    }

    pub fn add_scalar(&self, c: f64) -> Result<Var<'t>> {
        self.unary("add_scalar", move |x| x + c, |_, _| 1.0)
    }

    pub fn exp(&self) -> Result<Var<'t>> {
        self.unary("exp", f64::exp, |_, y| y)
    }

    pub fn ln(&self) -> Result<Var<'t>> {
        self.unary("ln", f64::ln, |x, _| 1.0 / x)
    }

    pub fn sqrt(&self) -> Result<Var<'t>> {
        self.unary("sqrt", f64::sqrt, |_, y| 0.5 / y)
    }

    pub fn powf(&self, p: f64) -> Result<Var<'t>> {
        self.unary("powf", move |x| x.powf(p), move |x, _| p * x.powf(p - 1.0))
    }

    pub fn sigmoid(&self) -> Result<Var<'t>> {
        self.unary("sigmoid", sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn tanh(&self) -> Result<Var<'t>> {
        self.unary("tanh", f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn relu(&self) -> Result<Var<'t>> {
        self.unary("relu", |x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    /// Exact (erf-based) GELU.
    pub fn gelu(&self) -> Result<Var<'t>> {
        self.unary("gelu", gelu, |x, _| gelu_grad(x))
    }

    /// Clamp with zero gradient outside `[lo, hi]`.
    pub fn clamp(&self, lo: f64, hi: f64) -> Result<Var<'t>> {
        self.unary(
            "clamp",
            move |x| x.clamp(lo, hi),
            move |x, _| if x >= lo && x <= hi { 1.0 } else { 0.0 },
        )
    }

    pub fn add(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let a = self.value();
        let b = other.value();
        let out = a.zip_map(&b, |x, y| x + y)?;
        let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
        self.tape.push("add", out, &[*self, *other], move |g, need| {
            vec![
                need[0].then(|| g.sum_to(&sa).expect("broadcast")),
                need[1].then(|| g.sum_to(&sb).expect("broadcast")),
            ]
        })
    }

    pub fn sub(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let a = self.value();
        let b = other.value();
        let out = a.zip_map(&b, |x, y| x - y)?;
        let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
        self.tape.push("sub", out, &[*self, *other], move |g, need| {
            vec![
                need[0].then(|| g.sum_to(&sa).expect("broadcast")),
                need[1].then(|| g.map(|v| -v).sum_to(&sb).expect("broadcast")),
            ]
        })
    }

    pub fn mul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let a = self.value();
        let b = other.value();
        let out = a.zip_map(&b, |x, y| x * y)?;
        self.tape.push("mul", out, &[*self, *other], move |g, need| {
            vec![
                need[0].then(|| {
                    g.zip_map(&b, |gv, bv| gv * bv)
                        .and_then(|t| t.sum_to(a.shape()))
                        .expect("broadcast")
                }),
                need[1].then(|| {
                    g.zip_map(&a, |gv, av| gv * av)
                        .and_then(|t| t.sum_to(b.shape()))
                        .expect("broadcast")
                }),
            ]
        })
    }

    pub fn div(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let a = self.value();
        let b = other.value();
        let out = a.zip_map(&b, |x, y| x / y)?;
        let out_keep = out.clone();
        self.tape.push("div", out, &[*self, *other], move |g, need| {
            vec![
                need[0].then(|| {
                    g.zip_map(&b, |gv, bv| gv / bv)
                        .and_then(|t| t.sum_to(a.shape()))
                        .expect("broadcast")
                }),
                need[1].then(|| {
                    // d(a/b)/db = -(a/b)/b
                    out_keep
                        .zip_map(&b, |q, bv| -q / bv)
                        .and_then(|t| t.zip_map(g, |d, gv| d * gv))
                        .and_then(|t| t.sum_to(b.shape()))
                        .expect("broadcast")
                }),
            ]
        })
    }
}
