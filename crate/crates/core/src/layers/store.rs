use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::error::{Error, Result};
use crate::tensor::{Float, Gradients, Tape, Tensor, Var};

/// Handle to an entry of a [`ParamStore`].
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pid(usize);

impl Pid {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum EntryKind {
    /// Learnable weight.
    Param,
    /// State updated outside gradient descent (normalization statistics).
    Buffer,
}

#[derive(Clone, Debug)]
pub struct Entry<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub kind: EntryKind,
}

/// Named tensors of a model, in creation order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    entries: Vec<Entry<T>>,
    by_name: HashMap<String, usize>,
}

impl<T: Float> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    fn insert(&mut self, name: String, value: Tensor<T>, kind: EntryKind) -> Result<Pid> {
        if self.by_name.contains_key(&name) {
            return Err(Error::invalid("param_store", format!("duplicate name `{name}`")));
        }
        self.by_name.insert(name.clone(), self.entries.len());
        self.entries.push(Entry { name, value, kind });
        Ok(Pid(self.entries.len() - 1))
    }

    pub fn add_param(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<Pid> {
        self.insert(name.into(), value, EntryKind::Param)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<Pid> {
        self.insert(name.into(), value, EntryKind::Buffer)
    }

    pub fn get(&self, id: Pid) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: Pid) -> &mut Tensor<T> {
        &mut self.entries[id.0].value
    }

    pub fn name(&self, id: Pid) -> &str {
        &self.entries[id.0].name
    }

    pub fn find(&self, name: &str) -> Option<Pid> {
        self.by_name.get(name).map(|&i| Pid(i))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = (Pid, &Entry<T>)> {
        self.entries.iter().enumerate().map(|(i, e)| (Pid(i), e))
    }

    /// Learnable entries only.
    pub fn params(&self) -> impl Iterator<Item = (Pid, &Entry<T>)> {
        self.entries().filter(|(_, e)| e.kind == EntryKind::Param)
    }

    /// Total element count of the learnable entries.
    pub fn param_count(&self) -> usize {
        self.params().map(|(_, e)| e.value.numel()).sum()
    }

    pub fn cast<U: Float>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| Entry {
                    name: e.name.clone(),
                    value: e.value.cast(),
                    kind: e.kind,
                })
                .collect(),
            by_name: self.by_name.clone(),
        }
    }
}

/// Uniform initialization bound for a layer followed by a leaky rectifier
/// of negative slope `slope`.
pub fn kaiming_bound(fan_in: usize, slope: f64) -> f64 {
    (6.0 / ((1.0 + slope * slope) * fan_in.max(1) as f64)).sqrt()
}

pub fn uniform_tensor<T: Float>(shape: &[usize], bound: f64, rng: &mut ChaCha8Rng) -> Tensor<T> {
    Tensor::from_fn(shape.to_vec(), |_| T::lit(rng.gen_range(-bound..=bound)))
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Running-statistics update produced by a train-mode normalization.
#[derive(Debug, Clone)]
pub struct BnUpdate {
    pub running_mean: Pid,
    pub running_var: Pid,
    pub momentum: f64,
    pub mean: Vec<f64>,
    /// Unbiased batch variance.
    pub var: Vec<f64>,
}

/// State of one forward evaluation: the tape, the mode, which store
/// entries have been placed on the tape, and side effects to apply once
/// the step is done.
pub struct Pass<'a, T: Float> {
    pub tape: &'a mut Tape<T>,
    store: &'a ParamStore<T>,
    mode: Mode,
    grads: bool,
    bound: Vec<Option<Var>>,
    bn_updates: Vec<BnUpdate>,
    rng: ChaCha8Rng,
    warned_single: bool,
}

impl<'a, T: Float> Pass<'a, T> {
    pub fn new(tape: &'a mut Tape<T>, store: &'a ParamStore<T>, mode: Mode, grads: bool) -> Self {
        Pass {
            tape,
            store,
            mode,
            grads,
            bound: vec![None; store.len()],
            bn_updates: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(0),
            warned_single: false,
        }
    }

    pub fn with_dropout_seed(mut self, seed: u64) -> Self {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &'a ParamStore<T> {
        self.store
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// Uses `var` in place of store entry `id` (gradient checks feed
    /// perturbed copies this way).
    pub fn bind(&mut self, id: Pid, var: Var) {
        self.bound[id.0] = Some(var);
    }

    /// Tape variable holding entry `id`, created on first use.
    pub fn param(&mut self, id: Pid) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let v = self.tape.leaf(self.store.get(id).clone(), self.grads);
        self.bound[id.0] = Some(v);
        v
    }

    pub(crate) fn push_bn_update(&mut self, update: BnUpdate, positions: usize) {
        if positions <= 1 && !self.warned_single {
            log::warn!("batch normalization over a single position per channel; statistics are degenerate");
            self.warned_single = true;
        }
        self.bn_updates.push(update);
    }

    /// Ends the pass, returning the store-entry bindings and the pending
    /// statistic updates.
    pub fn finish(self) -> PassOutcome {
        PassOutcome {
            bound: self.bound,
            bn_updates: self.bn_updates,
        }
    }
}

pub struct PassOutcome {
    pub bound: Vec<Option<Var>>,
    pub bn_updates: Vec<BnUpdate>,
}

impl PassOutcome {
    /// Gradient of every learnable store entry (absent ones are `None`).
    pub fn param_grads<T: Float>(
        &self,
        store: &ParamStore<T>,
        grads: &mut Gradients<T>,
    ) -> Vec<Option<Tensor<T>>> {
        store
            .entries()
            .map(|(id, e)| match (e.kind, self.bound[id.0]) {
                (EntryKind::Param, Some(v)) => grads.take(v),
                _ => None,
            })
            .collect()
    }

    /// Folds the batch statistics into the running estimates:
    /// `running ← (1 − momentum)·running + momentum·batch`.
    pub fn apply_bn_updates<T: Float>(&self, store: &mut ParamStore<T>) {
        for u in &self.bn_updates {
            blend(store.get_mut(u.running_mean), &u.mean, u.momentum);
            blend(store.get_mut(u.running_var), &u.var, u.momentum);
        }
    }
}

fn blend<T: Float>(running: &mut Tensor<T>, batch: &[f64], momentum: f64) {
    for (r, &b) in running.data_mut().iter_mut().zip(batch) {
        *r = T::lit((1.0 - momentum) * r.as_f64() + momentum * b);
    }
}
