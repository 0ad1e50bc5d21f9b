use mrsnet_autograd::gradcheck::{check_gradients, GradCheckOptions};
use mrsnet_autograd::{Conv2dOptions, CsrMatrix, Result, Tape, Tensor, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

const TOL: f64 = 1e-6;

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

/// Contracts the output with fixed random weights so every output element
/// contributes to the scalar.
fn project<'t>(tape: &'t Tape, y: Var<'t>, seed: u64) -> Result<Var<'t>> {
    let w = tape.constant(random(&y.shape(), seed));
    y.mul(&w)?.sum()
}

fn assert_grads<F>(inputs: &[Tensor], f: F)
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let reports = check_gradients(inputs, f, GradCheckOptions::default()).unwrap();
    for (i, r) in reports.iter().enumerate() {
        assert!(r.passes(TOL), "input {i}: {r:?}");
    }
}

#[test]
fn elementwise_ops() {
    let a = random(&[2, 3], 1);
    let b = random(&[1, 3], 2).map(|v| v + 2.0);
    assert_grads(&[a.clone(), b.clone()], |t, v| {
        let y = v[0].mul(&v[1])?.add(&v[0])?.div(&v[1])?.sub(&v[1])?;
        project(t, y, 3)
    });
    assert_grads(&[a], |t, v| {
        let y = Var::concat(
            &[v[0].sigmoid()?, v[0].gelu()?, v[0].tanh()?, v[0].exp()?, v[0].add_scalar(3.0)?.ln()?],
            0,
        )?;
        project(t, y, 4)
    });
}

#[test]
fn matmul_and_softmax() {
    let a = random(&[2, 3, 4], 5);
    let b = random(&[2, 4, 5], 6);
    let w = random(&[3, 3], 7);
    assert_grads(&[a, b, w], |t, v| {
        let y = v[2].matmul(&v[0].matmul(&v[1])?)?.softmax(2)?;
        project(t, y, 8)
    });
}

#[test]
fn masked_softmax_gradient_ignores_masked_slots() {
    let x = random(&[2, 4], 9);
    assert_grads(&[x], |t, v| {
        let mask = t.constant(Tensor::new([1, 4], vec![0.0, f64::NEG_INFINITY, 0.0, 0.0]).unwrap());
        let y = v[0].add(&mask)?.softmax(1)?;
        project(t, y, 10)
    });
}

#[test]
fn convolutions_pooling_and_resizing() {
    let x = random(&[2, 4, 6, 6], 11);
    let w = random(&[6, 2, 3, 3], 12);
    let b = random(&[6], 13);
    for (stride, padding, groups) in [(1, 1, 2), (2, 1, 1), (1, 0, 1)] {
        let w = if groups == 1 { random(&[6, 4, 3, 3], 14) } else { w.clone() };
        assert_grads(&[x.clone(), w, b.clone()], move |t, v| {
            let opts = Conv2dOptions { stride, padding, groups };
            let y = v[0].conv2d(&v[1], Some(&v[2]), opts)?;
            project(t, y, 15)
        });
    }
    let pw = random(&[3, 4, 1, 1], 16);
    assert_grads(&[x.clone(), pw], |t, v| {
        let y = v[0].conv2d(&v[1], None, Conv2dOptions::default())?;
        project(t, y, 17)
    });
    assert_grads(&[x], |t, v| {
        let y = v[0].avg_pool2d(2)?.upsample_bilinear(7, 5)?;
        project(t, y, 18)
    });
}

#[test]
fn spectral_ops() {
    // offset keeps every bin away from the origin, where |z| and arg z kink
    let x = random(&[1, 2, 3, 4], 19).map(|v| v + 0.1);
    assert_grads(&[x.clone()], |t, v| {
        let spec = v[0].to_complex()?.fft2()?;
        let y = Var::concat(&[spec.magnitude()?, spec.phase()?.scale(0.1)?], 1)?;
        project(t, y, 20)
    });
    let z = random(&[2, 3, 3, 2], 21);
    assert_grads(&[z], |t, v| {
        let y = v[0].ifft2()?;
        project(t, y, 22)
    });
}

#[test]
fn sparse_apply_and_reductions() {
    let a = Arc::new(
        CsrMatrix::from_triplets(4, 4, vec![(0, 1, 0.5), (0, 3, 0.5), (1, 2, 1.0), (3, 0, 0.25)]).unwrap(),
    );
    let x = random(&[2, 3, 4], 23);
    assert_grads(&[x], move |t, v| {
        let y = v[0].sparse_apply(&a)?;
        let m = y.mean_axes(&[0, 2])?;
        let centered = y.sub(&m)?;
        let s = centered.mul(&centered)?.mean_axes(&[0, 2])?.add_scalar(1e-3)?.powf(-0.5)?;
        project(t, centered.mul(&s)?.permute(&[2, 0, 1])?, 24)
    });
}

proptest! {
    #[test]
    fn fft_round_trip(h in 1usize..7, w in 1usize..7, seed in any::<u64>()) {
        let tape = Tape::no_grad();
        let x = tape.constant(random(&[2, h, w], seed));
        let back = x.to_complex().unwrap().fft2().unwrap().ifft2().unwrap().real_part().unwrap();
        prop_assert!(back.value().max_abs_diff(&x.value()) < 1e-12);
    }
}
