//! Named parameter storage shared by the model, losses, and optimizer.
//!
//! Parameters are registered once at build time in a deterministic
//! order; checkpoints, optimizer state, and gradient bookkeeping all
//! key off that order. Non-trainable entries hold batch-norm running
//! statistics.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::array::Array;
use crate::graph::{Graph, NodeId};

#[derive(Clone, Copy, PartialEq, Eq, Debug, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(&self) -> usize {
        self.0
    }
}

pub struct ParamEntry {
    pub name: String,
    pub value: Array,
    pub trainable: bool,
}

#[derive(Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: &str, value: Array, trainable: bool) -> ParamId {
        assert!(
            !self.by_name.contains_key(name),
            "duplicate parameter name {name}"
        );
        let id = ParamId(self.entries.len());
        self.entries.push(ParamEntry {
            name: name.to_string(),
            value,
            trainable,
        });
        self.by_name.insert(name.to_string(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Array {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Array {
        &mut self.entries[id.0].value
    }

    pub fn set(&mut self, id: ParamId, value: Array) {
        assert!(
            value.same_shape(&self.entries[id.0].value),
            "parameter {} shape change",
            self.entries[id.0].name
        );
        self.entries[id.0].value = value;
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamEntry)> {
        self.entries.iter().enumerate().map(|(i, e)| (ParamId(i), e))
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        self.iter()
            .filter(|(_, e)| e.trainable)
            .map(|(id, _)| id)
            .collect()
    }

    /// Total element count over trainable parameters.
    pub fn trainable_len(&self) -> usize {
        self.iter()
            .filter(|(_, e)| e.trainable)
            .map(|(_, e)| e.value.len())
            .sum()
    }
}

/// Per-graph mapping from parameters to leaf nodes. All trainable
/// parameters are bound up front so gradient collection is uniform.
pub struct Binding {
    node_of: Vec<Option<NodeId>>,
}

impl Binding {
    pub fn new(graph: &mut Graph, store: &ParamStore) -> Self {
        let mut node_of = vec![None; store.len()];
        for (id, entry) in store.iter() {
            if entry.trainable {
                node_of[id.0] = Some(graph.leaf(entry.value.clone()));
            }
        }
        Self { node_of }
    }

    pub fn node(&self, id: ParamId) -> NodeId {
        self.node_of[id.0].expect("parameter not bound (non-trainable?)")
    }
}

/// Deterministic per-purpose RNG stream derived from a base seed.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Kaiming-style fan-in normal initialization: N(0, sqrt(2 / fan_in)).
pub fn kaiming_init(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Array {
    let std = (2.0 / fan_in as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("valid normal");
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| dist.sample(rng)).collect();
    Array::from_vec(shape, data)
}
