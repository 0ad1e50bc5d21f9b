//! Parameter storage and the per-forward context that lifts parameters onto
//! a tape.

use std::cell::RefCell;
use std::collections::HashMap;

use mrsnet_autograd::{Gradients, Tape, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Trainable,
    /// Running statistics and other state that is saved but not optimized.
    Buffer,
}

#[derive(Debug, Clone)]
struct Entry {
    name: String,
    value: Tensor,
    kind: ParamKind,
}

/// Named tensors keyed by dotted module path, e.g. `ifim.0.psr.level1.spatial.weight`.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<Entry>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn insert(&mut self, name: String, value: Tensor, kind: ParamKind) -> ParamId {
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let id = ParamId(self.entries.len());
        self.by_name.insert(name.clone(), id);
        self.entries.push(Entry { name, value, kind });
        id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let entry = &mut self.entries[id.0];
        if entry.value.shape() != value.shape() {
            return Err(Error::Shape(format!(
                "{}: expected {:?}, got {:?}",
                entry.name,
                entry.value.shape(),
                value.shape()
            )));
        }
        entry.value = value;
        Ok(())
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn kind(&self, id: ParamId) -> ParamKind {
        self.entries[id.0].kind
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn trainable(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.ids()
            .filter(|&id| self.kind(id) == ParamKind::Trainable)
    }

    /// Trainable parameters whose path starts with `prefix` and continues
    /// with a path separator.
    pub fn under(&self, prefix: &str) -> Vec<ParamId> {
        let dotted = format!("{prefix}.");
        self.trainable()
            .filter(|&id| self.name(id).starts_with(&dotted))
            .collect()
    }

    pub fn num_scalars(&self) -> usize {
        self.trainable().map(|id| self.get(id).numel()).sum()
    }
}

/// Registers parameters under a path prefix with PyTorch-style uniform
/// initialization.
pub struct Init<'a> {
    store: &'a mut ParamStore,
    rng: &'a mut ChaCha8Rng,
    prefix: String,
}

impl<'a> Init<'a> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut ChaCha8Rng) -> Self {
        Self {
            store,
            rng,
            prefix: String::new(),
        }
    }

    pub fn sub(&mut self, name: impl AsRef<str>) -> Init<'_> {
        let prefix = self.path(name.as_ref());
        Init {
            store: &mut *self.store,
            rng: &mut *self.rng,
            prefix,
        }
    }

    fn path(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    /// `U(-1/√fan_in, 1/√fan_in)`.
    pub fn uniform(&mut self, name: &str, shape: &[usize], fan_in: usize) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let rng = &mut *self.rng;
        let value = Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-bound..bound));
        let path = self.path(name);
        self.store.insert(path, value, ParamKind::Trainable)
    }

    pub fn constant(&mut self, name: &str, value: Tensor) -> ParamId {
        let path = self.path(name);
        self.store.insert(path, value, ParamKind::Trainable)
    }

    pub fn buffer(&mut self, name: &str, value: Tensor) -> ParamId {
        let path = self.path(name);
        self.store.insert(path, value, ParamKind::Buffer)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Gradients keyed by parameter. Parameters never touched by the forward
/// pass are absent.
pub type ParamGrads = HashMap<ParamId, Tensor>;

/// Everything a module needs during one forward pass.
pub struct Ctx<'t> {
    tape: &'t Tape,
    store: &'t ParamStore,
    mode: Mode,
    leaves: RefCell<HashMap<ParamId, Var<'t>>>,
    buffer_updates: RefCell<Vec<(ParamId, Tensor)>>,
}

impl<'t> Ctx<'t> {
    pub fn new(tape: &'t Tape, store: &'t ParamStore, mode: Mode) -> Self {
        Self {
            tape,
            store,
            mode,
            leaves: RefCell::new(HashMap::new()),
            buffer_updates: RefCell::new(Vec::new()),
        }
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn store(&self) -> &'t ParamStore {
        self.store
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn training(&self) -> bool {
        self.mode == Mode::Train
    }

    /// The parameter as a tape leaf; repeated calls return the same leaf.
    pub fn param(&self, id: ParamId) -> Var<'t> {
        *self
            .leaves
            .borrow_mut()
            .entry(id)
            .or_insert_with(|| self.tape.leaf(self.store.get(id).clone()))
    }

    pub fn buffer(&self, id: ParamId) -> &'t Tensor {
        self.store.get(id)
    }

    pub fn input(&self, value: Tensor) -> Var<'t> {
        self.tape.constant(value)
    }

    pub(crate) fn record_buffer_update(&self, id: ParamId, value: Tensor) {
        self.buffer_updates.borrow_mut().push((id, value));
    }

    pub fn take_buffer_updates(&self) -> Vec<(ParamId, Tensor)> {
        std::mem::take(&mut self.buffer_updates.borrow_mut())
    }

    pub fn param_grads(&self, grads: &Gradients) -> ParamGrads {
        self.leaves
            .borrow()
            .iter()
            .filter_map(|(&id, &var)| grads.get(var).map(|g| (id, g.clone())))
            .collect()
    }

    /// Fails with the location of the first NaN/Inf recorded on the tape.
    pub fn check_finite(&self) -> Result<()> {
        match self.tape.first_non_finite() {
            Some(label) => Err(Error::NonFinite(label.to_string())),
            None => Ok(()),
        }
    }
}
