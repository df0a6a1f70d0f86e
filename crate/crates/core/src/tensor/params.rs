use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, Scalar, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
struct Entry<T> {
    name: String,
    tensor: Tensor<T>,
    trainable: bool,
}

/// Named parameter tensors in registration order. Non-trainable entries
/// (statistics tables) are stored and checkpointed but never updated.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    entries: Vec<Entry<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { entries: Vec::new() }
    }

    pub fn add(&mut self, name: &str, tensor: Tensor<T>) -> ParamId {
        self.push(name, tensor, true)
    }

    pub fn add_buffer(&mut self, name: &str, tensor: Tensor<T>) -> ParamId {
        self.push(name, tensor, false)
    }

    fn push(&mut self, name: &str, tensor: Tensor<T>, trainable: bool) -> ParamId {
        debug_assert!(self.find(name).is_none(), "duplicate parameter {name}");
        self.entries.push(Entry {
            name: name.to_string(),
            tensor,
            trainable,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].tensor
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|e| (e.name.as_str(), &e.tensor))
    }

    /// Number of scalar weights over trainable entries.
    pub fn num_weights(&self) -> usize {
        self.entries.iter().filter(|e| e.trainable).map(|e| e.tensor.numel()).sum()
    }

    /// Overwrites every entry from `(name, tensor)` pairs. Names and shapes
    /// must match the registered layout exactly.
    pub fn load<'a, U: Scalar>(&mut self, named: impl IntoIterator<Item = (&'a str, &'a Tensor<U>)>) -> Result<()> {
        let mut seen = vec![false; self.entries.len()];
        for (name, t) in named {
            let id = self
                .find(name)
                .ok_or_else(|| Error::Input(alloc::format!("unknown parameter {name}")))?;
            let e = &mut self.entries[id.0];
            if e.tensor.shape() != t.shape() {
                return Err(Error::shape("load parameter", e.tensor.shape(), t.shape()));
            }
            e.tensor = t.cast();
            seen[id.0] = true;
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::Input(alloc::format!("missing parameter {}", self.entries[i].name)));
        }
        Ok(())
    }
}

/// Per-parameter gradient accumulators, shape-matched to a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Grads<T> {
    bufs: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Grads<T> {
    pub fn new(store: &ParamStore<T>) -> Self {
        Grads {
            bufs: vec![None; store.len()],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&[T]> {
        self.bufs.get(id.0).and_then(|b| b.as_deref())
    }

    pub fn len(&self) -> usize {
        self.bufs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bufs.is_empty()
    }

    pub fn scale(&mut self, s: T) {
        for b in self.bufs.iter_mut().flatten() {
            for v in b {
                *v *= s;
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        let sq: f64 = self.bufs.iter().flatten().flat_map(|b| b.iter()).map(|v| v.f64() * v.f64()).sum();
        libm::sqrt(sq)
    }

    fn add(&mut self, id: ParamId, g: &[T]) {
        match &mut self.bufs[id.0] {
            Some(acc) => {
                for (a, &v) in acc.iter_mut().zip(g) {
                    *a += v;
                }
            }
            slot @ None => *slot = Some(g.to_vec()),
        }
    }
}

/// One forward/backward pass: a fresh [`Graph`] with parameters bound on
/// first use, plus the dropout RNG and the train/eval switch.
pub struct Session<'s, T> {
    pub graph: Graph<T>,
    store: &'s ParamStore<T>,
    bound: Vec<Option<Var>>,
    training: bool,
    rng: ChaCha8Rng,
}

impl<'s, T: Scalar> Session<'s, T> {
    pub fn new(store: &'s ParamStore<T>, training: bool, seed: u64) -> Self {
        Session {
            graph: Graph::new(),
            store,
            bound: vec![None; store.len()],
            training,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn inference(store: &'s ParamStore<T>) -> Self {
        Self::new(store, false, 0)
    }

    pub fn training(&self) -> bool {
        self.training
    }

    pub fn store(&self) -> &'s ParamStore<T> {
        self.store
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let v = self.graph.leaf(self.store.get(id).clone(), self.store.is_trainable(id));
        self.bound[id.0] = Some(v);
        v
    }

    pub fn dropout(&mut self, x: Var, rate: f64) -> Result<Var> {
        self.graph.dropout(x, rate, self.training, &mut self.rng)
    }

    /// Runs backward from `loss` and adds the bound parameters' gradients to `grads`.
    pub fn backward_into(&mut self, loss: Var, grads: &mut Grads<T>) -> Result<()> {
        self.graph.backward(loss)?;
        for (i, v) in self.bound.iter().enumerate() {
            if let Some(v) = v {
                if let Some(g) = self.graph.grad(*v) {
                    grads.add(ParamId(i), g);
                }
            }
        }
        Ok(())
    }

    pub fn bound_var(&self, id: ParamId) -> Option<Var> {
        self.bound[id.0]
    }
}
