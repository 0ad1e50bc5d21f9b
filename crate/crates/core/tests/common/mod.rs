#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;

use mrsnet::config::TrainConfig;
use mrsnet::data_model::DatasetIndex;
use mrsnet::network::NetworkConfig;
use mrsnet::synthetic::{self, SyntheticOptions};

/// A model small enough to train in seconds on one CPU core.
pub fn tiny_network() -> NetworkConfig {
    NetworkConfig {
        stage_dims: vec![16, 32, 64, 128],
        text_dim: 32,
        max_tokens: 8,
        hfim_width: Some(32),
        ..NetworkConfig::default()
    }
}

/// The overfit recipe: 8 synthetic 128x128 samples, one batch of 8, 200 steps.
pub fn overfit_config(output_dir: &Path) -> TrainConfig {
    TrainConfig {
        model: tiny_network(),
        batch_size: 8,
        epochs: 200,
        max_steps: Some(200),
        output_dir: output_dir.to_path_buf(),
        ..TrainConfig::default()
    }
}

/// `count` synthetic samples, all assigned to the `train` split.
pub fn train_only_dataset(count: usize, size: usize, seed: u64) -> DatasetIndex {
    let index = synthetic::dataset(&SyntheticOptions::new(count, size, seed)).unwrap();
    let ids: Vec<String> = index.samples().iter().map(|r| r.id.clone()).collect();
    index
        .with_splits(BTreeMap::from([("train".to_string(), ids)]))
        .unwrap()
}

/// Relative error used by the gradient checks.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

use mrsnet::autograd::{Tape, Tensor, Var};
use mrsnet::params::{Ctx, Mode, ParamStore};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

/// Worst relative gradient error of one module, over its inputs and every
/// trainable parameter.
#[derive(Debug)]
pub struct ModuleGradCheck {
    pub worst: f64,
    pub worst_name: String,
    pub coords: usize,
}

pub const GRAD_SCALE_FLOOR: f64 = 1e-4;

/// Central-difference check of `f` (whose output is contracted with a fixed
/// random tensor to a scalar) against reverse-mode gradients. Checks at most
/// `max_coords` evenly strided coordinates per tensor.
pub fn check_module<F>(store: &ParamStore, inputs: &[Tensor], max_coords: usize, f: F) -> ModuleGradCheck
where
    F: for<'t> Fn(&Ctx<'t>, &[Var<'t>]) -> mrsnet::Result<Var<'t>>,
{
    const STEP: f64 = 1e-6;
    let scalar = |store: &ParamStore, inputs: &[Tensor], grad: bool| -> (f64, Vec<Option<Tensor>>, Vec<(String, Tensor)>) {
        let tape = if grad { Tape::new() } else { Tape::no_grad() };
        let ctx = Ctx::new(&tape, store, Mode::Train);
        let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&ctx, &vars).expect("forward");
        let weights = random_tensor(&out.shape(), 99);
        let loss = out.mul(&tape.constant(weights)).unwrap().sum().unwrap();
        let value = loss.value().item();
        if !grad {
            return (value, Vec::new(), Vec::new());
        }
        let grads = tape.backward(loss).unwrap();
        let input_grads = vars.iter().map(|v| grads.get(*v).cloned()).collect();
        let params = ctx
            .param_grads(&grads)
            .into_iter()
            .map(|(id, g)| (store.name(id).to_string(), g))
            .collect();
        (value, input_grads, params)
    };
    let (_, input_grads, param_grads) = scalar(store, inputs, true);
    let param_grads: std::collections::HashMap<String, Tensor> = param_grads.into_iter().collect();

    let mut result = ModuleGradCheck {
        worst: 0.0,
        worst_name: String::new(),
        coords: 0,
    };
    let mut record = |name: String, analytic: &[f64], numeric: &[f64]| {
        let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let err = analytic
            .iter()
            .zip(numeric)
            .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
        // Some gradients vanish by symmetry (a bias feeding a normalization,
        // a key bias under softmax); the floor keeps their finite-difference
        // round-off from being read as a relative error.
        let rel = err / scale.max(GRAD_SCALE_FLOOR);
        result.coords += numeric.len();
        if rel >= result.worst {
            result.worst = rel;
            result.worst_name = name;
        }
    };

    let mut work = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let n = input.numel();
        let stride = n.div_ceil(max_coords).max(1);
        let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
        let zero = Tensor::zeros(input.shape().to_vec());
        let g = input_grads[i].as_ref().unwrap_or(&zero);
        for j in (0..n).step_by(stride) {
            let orig = input.data()[j];
            work[i].data_mut()[j] = orig + STEP;
            let plus = scalar(store, &work, false).0;
            work[i].data_mut()[j] = orig - STEP;
            let minus = scalar(store, &work, false).0;
            work[i].data_mut()[j] = orig;
            analytic.push(g.data()[j]);
            numeric.push((plus - minus) / (2.0 * STEP));
        }
        record(format!("input{i}"), &analytic, &numeric);
    }

    let mut store = store.clone();
    let ids: Vec<_> = store.trainable().collect();
    for id in ids {
        let name = store.name(id).to_string();
        let original = store.get(id).clone();
        let n = original.numel();
        let stride = n.div_ceil(max_coords).max(1);
        let zero = Tensor::zeros(original.shape().to_vec());
        let g = param_grads.get(&name).unwrap_or(&zero).clone();
        let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
        for j in (0..n).step_by(stride) {
            let mut t = original.clone();
            t.data_mut()[j] += STEP;
            store.set(id, t.clone()).unwrap();
            let plus = scalar(&store, inputs, false).0;
            t.data_mut()[j] -= 2.0 * STEP;
            store.set(id, t).unwrap();
            let minus = scalar(&store, inputs, false).0;
            analytic.push(g.data()[j]);
            numeric.push((plus - minus) / (2.0 * STEP));
        }
        store.set(id, original).unwrap();
        record(name, &analytic, &numeric);
    }
    result
}

/// Builds a module in a fresh store.
pub fn build<T>(seed: u64, f: impl FnOnce(&mut mrsnet::params::Init<'_>) -> T) -> (ParamStore, T) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let module = f(&mut mrsnet::params::Init::new(&mut store, &mut rng));
    (store, module)
}

/// Sets every trainable parameter whose path starts with `prefix` to `value`.
pub fn fill_params(store: &mut ParamStore, prefix: &str, value: f64) {
    let ids: Vec<_> = store
        .trainable()
        .filter(|&id| store.name(id).starts_with(prefix))
        .collect();
    assert!(!ids.is_empty(), "no parameters under {prefix}");
    for id in ids {
        let shape = store.get(id).shape().to_vec();
        store.set(id, Tensor::full(shape, value)).unwrap();
    }
}

pub fn set_param(store: &mut ParamStore, name: &str, value: Tensor) {
    let id = store.find(name).unwrap_or_else(|| panic!("no parameter {name}"));
    store.set(id, value).unwrap();
}
