//! Parameter storage and the per-forward context.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamId(pub usize);

/// What a parameter does; drives optimizer grouping and count breakdowns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamRole {
    SplineCoeffs,
    PolyCoeffs,
    Knots,
    BaseWeights,
    Scales,
    Weights,
    Bias,
    NormAffine,
    SineFrequencies,
    SinePhases,
    /// Running statistics and other non-trainable state.
    Buffer,
}

impl ParamRole {
    /// Roles that are never weight-decayed.
    pub fn decay_exempt(self) -> bool {
        matches!(self, ParamRole::Knots | ParamRole::NormAffine | ParamRole::Buffer)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub role: ParamRole,
    pub trainable: bool,
    pub value: Tensor,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, role: ParamRole, trainable: bool) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            role,
            trainable,
            value: value.detach(),
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        self.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Trainable scalars per role.
    pub fn count_by_role(&self) -> BTreeMap<ParamRole, usize> {
        let mut m = BTreeMap::new();
        for p in self.params.iter().filter(|p| p.trainable) {
            *m.entry(p.role).or_insert(0) += p.value.len();
        }
        m
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.is_finite())
    }
}

/// Gradients indexed by [`ParamId`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Grads {
    slots: Vec<Option<Vec<f64>>>,
}

impl Grads {
    pub fn new(n: usize) -> Self {
        Grads { slots: vec![None; n] }
    }

    /// Collects gradients of every parameter leaf registered through a
    /// [`Ctx`] on `tape`.
    pub fn from_tape(tape: &Tape, store: &ParamStore) -> Self {
        let mut g = Grads::new(store.len());
        for (tag, grad) in tape.tagged_grads() {
            if tag < store.len() {
                g.slots[tag] = Some(grad.to_vec());
            }
        }
        g
    }

    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.slots.get(id.0).and_then(|s| s.as_deref())
    }

    pub fn set(&mut self, id: ParamId, g: Vec<f64>) {
        if id.0 >= self.slots.len() {
            self.slots.resize(id.0 + 1, None);
        }
        self.slots[id.0] = Some(g);
    }

    pub fn norm(&self, ids: &[ParamId]) -> f64 {
        ids.iter()
            .filter_map(|&id| self.get(id))
            .flat_map(|g| g.iter())
            .fold(0.0, |acc, v| acc + v * v)
            .sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
}

/// State threaded through one forward pass: the tape, read access to the
/// parameters, the mode, an RNG for dropout and pending buffer updates.
pub struct Ctx<'a> {
    pub tape: Tape,
    pub mode: Mode,
    store: &'a ParamStore,
    rng: ChaCha8Rng,
    updates: Vec<(ParamId, Tensor)>,
    overrides: Vec<Option<Tensor>>,
}

impl<'a> Ctx<'a> {
    pub fn new(store: &'a ParamStore, tape: Tape, mode: Mode, seed: u64) -> Self {
        Ctx {
            tape,
            mode,
            store,
            rng: ChaCha8Rng::seed_from_u64(seed),
            updates: Vec::new(),
            overrides: Vec::new(),
        }
    }

    /// Recording tape in training mode.
    pub fn train(store: &'a ParamStore, seed: u64) -> Self {
        Self::new(store, Tape::new(), Mode::Train, seed)
    }

    /// Non-recording tape in evaluation mode.
    pub fn eval(store: &'a ParamStore) -> Self {
        Self::new(store, Tape::no_grad(), Mode::Eval, 0)
    }

    /// Parameter as a tape value: a tagged leaf when trainable, a constant
    /// otherwise.
    pub fn param(&mut self, id: ParamId) -> Tensor {
        if let Some(Some(t)) = self.overrides.get(id.0) {
            return t.clone();
        }
        let p = self.store.get(id);
        if p.trainable {
            self.tape.leaf_tagged(&p.value, id.0)
        } else {
            p.value.detach()
        }
    }

    /// Makes [`Ctx::param`] return `value` (typically a leaf of this tape)
    /// for `id`.
    pub fn set_override(&mut self, id: ParamId, value: Tensor) {
        if id.0 >= self.overrides.len() {
            self.overrides.resize(id.0 + 1, None);
        }
        self.overrides[id.0] = Some(value);
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn is_training(&self) -> bool {
        self.mode == Mode::Train
    }

    pub fn push_update(&mut self, id: ParamId, value: Tensor) {
        self.updates.push((id, value));
    }

    pub fn into_parts(self) -> (Tape, Vec<(ParamId, Tensor)>) {
        (self.tape, self.updates)
    }
}

/// Writes deferred buffer updates (running statistics) into the store.
pub fn apply_updates(store: &mut ParamStore, updates: Vec<(ParamId, Tensor)>) -> Result<()> {
    for (id, v) in updates {
        let slot = store.value_mut(id);
        if slot.shape() != v.shape() {
            return Err(Error::Shape {
                op: "apply_updates",
                lhs: slot.shape(),
                rhs: v.shape(),
            });
        }
        *slot = v.detach();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn params_become_tagged_leaves_once() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::row(&[1.0, 2.0]), ParamRole::Weights, true);
        let c = store.add("c", Tensor::scalar(3.0), ParamRole::Buffer, false);
        let mut ctx = Ctx::train(&store, 0);
        let a = ctx.param(w);
        let b = ctx.param(w);
        let k = ctx.param(c);
        assert!(!k.requires_grad());
        let s = ctx.tape.add(&a, &b).unwrap();
        let s = ctx.tape.mul(&s, &k).unwrap();
        let s = ctx.tape.sum(&s).unwrap();
        ctx.tape.backward(&s).unwrap();
        let g = Grads::from_tape(&ctx.tape, &store);
        assert_eq!(g.get(w).unwrap(), &[6.0, 6.0]);
        assert!(g.get(c).is_none());
    }

    #[test]
    fn role_counts_skip_buffers() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::zeros(2, 3), ParamRole::Weights, true);
        store.add("rm", Tensor::zeros(1, 3), ParamRole::Buffer, false);
        let m = store.count_by_role();
        assert_eq!(m.get(&ParamRole::Weights), Some(&6));
        assert_eq!(m.get(&ParamRole::Buffer), None);
    }
}
