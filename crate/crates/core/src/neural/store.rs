use std::collections::HashMap;

/// Dense row-major matrix (a vector is `n x 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "tensor data length");
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(rows, cols, vec![0.0; rows * cols])
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Which trainable component a parameter belongs to; used for freezing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum ParamGroup {
    #[default]
    Goal,
    Collision,
    Env,
    Cvae,
}

impl ParamGroup {
    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::Goal => "goal",
            ParamGroup::Collision => "collision",
            ParamGroup::Env => "env",
            ParamGroup::Cvae => "cvae",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [ParamGroup::Goal, ParamGroup::Collision, ParamGroup::Env, ParamGroup::Cvae]
            .into_iter()
            .find(|g| g.name() == s)
    }
}

/// Named parameter tensors, addressed by [`ParamId`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    groups: Vec<ParamGroup>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor, group: ParamGroup) -> ParamId {
        assert!(!self.index.contains_key(name), "duplicate parameter name {name}");
        let id = ParamId(self.tensors.len());
        self.names.push(name.to_string());
        self.tensors.push(tensor);
        self.groups.push(group);
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn ids_in(&self, groups: &[ParamGroup]) -> Vec<ParamId> {
        self.ids().filter(|id| groups.contains(&self.group(*id))).collect()
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn group(&self, id: ParamId) -> ParamGroup {
        self.groups[id.0]
    }

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    /// Total scalar count over the given parameters.
    pub fn numel(&self, ids: &[ParamId]) -> usize {
        ids.iter().map(|id| self.tensor(*id).len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|x| x.is_finite()))
    }
}

/// Accumulated gradients, one slot per parameter in a store.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    slots: Vec<Vec<f64>>,
}

impl ParamGrads {
    pub fn zeros(store: &ParamStore) -> Self {
        Self { slots: store.tensors.iter().map(|t| vec![0.0; t.len()]).collect() }
    }

    pub fn add(&mut self, id: ParamId, g: &[f64]) {
        self.slots[id.0].iter_mut().zip(g).for_each(|(a, b)| *a += b);
    }

    pub fn merge(&mut self, other: &ParamGrads) {
        for (a, b) in self.slots.iter_mut().zip(&other.slots) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, k: f64) {
        self.slots.iter_mut().flatten().for_each(|x| *x *= k);
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.slots[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.slots[id.0]
    }

    pub fn is_finite(&self) -> bool {
        self.slots.iter().flatten().all(|x| x.is_finite())
    }
}
