//! Dense layers and the LSTM cell, recorded on a [`Graph`].

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::graph::{Graph, Var};
use super::store::{ParamGroup, ParamId, ParamStore, Tensor};
use crate::error::{NspError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
    Tanh,
}

impl Activation {
    fn apply(self, g: &mut Graph, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Relu => g.relu(x),
            Activation::Sigmoid => g.sigmoid(x),
            Activation::Tanh => g.tanh(x),
        }
    }
}

/// Glorot-uniform weights, zero bias.
fn glorot(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit).expect("finite glorot bound");
    Tensor::new(rows, cols, (0..rows * cols).map(|_| dist.sample(rng)).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub activation: Activation,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl DenseLayer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        group: ParamGroup,
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = store.insert(&format!("{name}.weight"), glorot(rng, out_dim, in_dim), group);
        let bias = store.insert(&format!("{name}.bias"), Tensor::zeros(out_dim, 1), group);
        Self { weight, bias, activation, in_dim, out_dim }
    }

    /// Rebinds a layer to parameters already present in `store` (checkpoint load).
    pub fn bind(store: &ParamStore, name: &str, activation: Activation) -> Result<Self> {
        let weight = lookup(store, &format!("{name}.weight"))?;
        let bias = lookup(store, &format!("{name}.bias"))?;
        let w = store.tensor(weight);
        if store.tensor(bias).len() != w.rows {
            return Err(NspError::ShapeMismatch(format!("{name}: bias length != weight rows")));
        }
        Ok(Self { weight, bias, activation, in_dim: w.cols, out_dim: w.rows })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        if g.dim(x) != self.in_dim {
            return Err(NspError::ShapeMismatch(format!(
                "dense layer expects {} inputs, got {}",
                self.in_dim,
                g.dim(x)
            )));
        }
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let wx = g.matvec(w, x);
        let z = g.add(wx, b);
        Ok(self.activation.apply(g, z))
    }

    pub fn params(&self) -> [ParamId; 2] {
        [self.weight, self.bias]
    }
}

pub(crate) fn lookup(store: &ParamStore, name: &str) -> Result<ParamId> {
    store.lookup(name).ok_or_else(|| NspError::ShapeMismatch(format!("missing parameter `{name}`")))
}

/// Stack of dense layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
}

impl Mlp {
    /// Layers of widths `dims[0] -> dims[1] -> ...`; `hidden` activation on
    /// every layer but the last, which uses `last`.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        group: ParamGroup,
        dims: &[usize],
        hidden: Activation,
        last: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { last } else { hidden };
                DenseLayer::new(store, &format!("{name}.{i}"), group, dims[i], dims[i + 1], act, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn bind(store: &ParamStore, name: &str, depth: usize, hidden: Activation, last: Activation) -> Result<Self> {
        let layers = (0..depth)
            .map(|i| DenseLayer::bind(store, &format!("{name}.{i}"), if i + 1 == depth { last } else { hidden }))
            .collect::<Result<Vec<_>>>()?;
        for pair in layers.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(NspError::ShapeMismatch(format!("{name}: layer widths do not chain")));
            }
        }
        Ok(Self { layers })
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }
}

pub fn mlp_forward(layers: &[DenseLayer], g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
    layers.iter().try_fold(x, |h, layer| layer.forward(g, store, h))
}

impl Mlp {
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        mlp_forward(&self.layers, g, store, x)
    }
}

/// Standard LSTM cell. Each gate has an `H x (H + in)` weight acting on
/// `[h; x]` and an `H` bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell {
    /// input, forget, output, candidate
    pub weights: [ParamId; 4],
    pub biases: [ParamId; 4],
    pub input: usize,
    pub hidden: usize,
}

const GATES: [&str; 4] = ["input", "forget", "output", "candidate"];

impl LstmCell {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        group: ParamGroup,
        input: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let mut weights = Vec::with_capacity(4);
        let mut biases = Vec::with_capacity(4);
        for gate in GATES {
            weights.push(store.insert(&format!("{name}.{gate}.weight"), glorot(rng, hidden, hidden + input), group));
            biases.push(store.insert(&format!("{name}.{gate}.bias"), Tensor::zeros(hidden, 1), group));
        }
        Self { weights: weights.try_into().unwrap(), biases: biases.try_into().unwrap(), input, hidden }
    }

    pub fn bind(store: &ParamStore, name: &str) -> Result<Self> {
        let mut weights = Vec::with_capacity(4);
        let mut biases = Vec::with_capacity(4);
        for gate in GATES {
            weights.push(lookup(store, &format!("{name}.{gate}.weight"))?);
            biases.push(lookup(store, &format!("{name}.{gate}.bias"))?);
        }
        let w0 = store.tensor(weights[0]);
        let (hidden, total) = (w0.rows, w0.cols);
        if total < hidden {
            return Err(NspError::ShapeMismatch(format!("{name}: gate weight narrower than hidden size")));
        }
        for (w, b) in weights.iter().zip(&biases) {
            let t = store.tensor(*w);
            if t.rows != hidden || t.cols != total || store.tensor(*b).len() != hidden {
                return Err(NspError::ShapeMismatch(format!("{name}: gates disagree in shape")));
            }
        }
        Ok(Self { weights: weights.try_into().unwrap(), biases: biases.try_into().unwrap(), input: total - hidden, hidden })
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.weights.iter().chain(&self.biases).copied().collect()
    }

    /// One recurrence step; returns `(h', c')`.
    pub fn step(&self, g: &mut Graph, store: &ParamStore, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        if g.dim(x) != self.input || g.dim(h) != self.hidden || g.dim(c) != self.hidden {
            return Err(NspError::ShapeMismatch(format!(
                "lstm expects x:{} h:{} c:{}, got x:{} h:{} c:{}",
                self.input,
                self.hidden,
                self.hidden,
                g.dim(x),
                g.dim(h),
                g.dim(c)
            )));
        }
        let hx = g.concat(&[h, x]);
        let mut pre = [hx; 4];
        for k in 0..4 {
            let w = g.param(store, self.weights[k]);
            let b = g.param(store, self.biases[k]);
            let wx = g.matvec(w, hx);
            pre[k] = g.add(wx, b);
        }
        let i = g.sigmoid(pre[0]);
        let f = g.sigmoid(pre[1]);
        let o = g.sigmoid(pre[2]);
        let cand = g.tanh(pre[3]);
        let fc = g.mul(f, c);
        let ic = g.mul(i, cand);
        let c_next = g.add(fc, ic);
        let tc = g.tanh(c_next);
        let h_next = g.mul(o, tc);
        Ok((h_next, c_next))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::gradcheck::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_all(store: &mut ParamStore) {
        for id in store.ids().collect::<Vec<_>>() {
            store.tensor_mut(id).data.fill(0.0);
        }
    }

    #[test]
    fn identity_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let layer = DenseLayer::new(&mut store, "l", ParamGroup::Goal, 2, 2, Activation::Identity, &mut rng);
        store.tensor_mut(layer.weight).data = vec![1.0, 0.0, 0.0, 1.0];
        let mut g = Graph::new();
        let x = g.constant(vec![1.0, 2.0]);
        let y = mlp_forward(&[layer], &mut g, &store, x).unwrap();
        assert_eq!(g.value(y), &[1.0, 2.0]);
    }

    #[test]
    fn zero_sigmoid_layer_is_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let layer = DenseLayer::new(&mut store, "l", ParamGroup::Goal, 3, 4, Activation::Sigmoid, &mut rng);
        zero_all(&mut store);
        let mut g = Graph::new();
        let x = g.constant(vec![3.0, -7.0, 11.0]);
        let y = layer.forward(&mut g, &store, x).unwrap();
        assert_eq!(g.value(y), &[0.5; 4]);
    }

    #[test]
    fn shape_mismatch_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let layer = DenseLayer::new(&mut store, "l", ParamGroup::Goal, 3, 4, Activation::Tanh, &mut rng);
        let mut g = Graph::new();
        let x = g.constant(vec![1.0, 2.0]);
        assert!(matches!(layer.forward(&mut g, &store, x), Err(NspError::ShapeMismatch(_))));
    }

    #[test]
    fn two_layer_relu_matches_straight_line_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "m", ParamGroup::Goal, &[3, 5, 2], Activation::Relu, Activation::Identity, &mut rng);
        for id in mlp.params() {
            for x in &mut store.tensor_mut(id).data {
                *x = rng.random_range(-1.0..1.0);
            }
        }
        let x = [0.4, -1.2, 0.9];
        let mut g = Graph::new();
        let xv = g.constant(x.to_vec());
        let y = mlp.forward(&mut g, &store, xv).unwrap();

        // independent re-evaluation with plain loops
        let affine = |w: &Tensor, b: &Tensor, x: &[f64]| -> Vec<f64> {
            (0..w.rows).map(|r| (0..w.cols).map(|c| w.data[r * w.cols + c] * x[c]).sum::<f64>() + b.data[r]).collect()
        };
        let l0 = &mlp.layers[0];
        let l1 = &mlp.layers[1];
        let h: Vec<f64> = affine(store.tensor(l0.weight), store.tensor(l0.bias), &x).into_iter().map(|v| v.max(0.0)).collect();
        let out = affine(store.tensor(l1.weight), store.tensor(l1.bias), &h);
        for (a, b) in g.value(y).iter().zip(&out) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_lstm_hand_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let cell = LstmCell::new(&mut store, "lstm", ParamGroup::Goal, 2, 3, &mut rng);
        zero_all(&mut store);
        let mut g = Graph::new();
        let x = g.constant(vec![0.3, -0.8]);
        let h = g.constant(vec![0.1, 0.2, 0.3]);
        let c = g.constant(vec![1.0, -2.0, 0.5]);
        let (h2, c2) = cell.step(&mut g, &store, x, h, c).unwrap();
        for (k, c0) in [1.0, -2.0, 0.5].into_iter().enumerate() {
            assert!((g.value(c2)[k] - 0.5 * c0).abs() < 1e-15);
            assert!((g.value(h2)[k] - 0.5 * (0.5 * c0).tanh()).abs() < 1e-15);
        }

        let zero = g.constant(vec![0.0; 3]);
        let (h3, c3) = cell.step(&mut g, &store, x, zero, zero).unwrap();
        assert_eq!(g.value(h3), &[0.0; 3]);
        assert_eq!(g.value(c3), &[0.0; 3]);
    }

    fn randomize(store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        for id in store.ids().collect::<Vec<_>>() {
            for x in &mut store.tensor_mut(id).data {
                *x = rng.random_range(-0.8..0.8);
            }
        }
    }

    #[test]
    fn dense_layers_pass_grad_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..100 {
            let act = [Activation::Identity, Activation::Sigmoid, Activation::Tanh, Activation::Relu][trial % 4];
            let mut store = ParamStore::new();
            let layer = DenseLayer::new(&mut store, "l", ParamGroup::Goal, 3, 4, act, &mut rng);
            randomize(&mut store, &mut rng);
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let ids = layer.params().to_vec();
            let err = grad_check(&store, &ids, 1e-5, |g, s| {
                let xv = g.constant(x.clone());
                let y = layer.forward(g, s, xv)?;
                let sq = g.square(y);
                Ok(g.sum(sq))
            })
            .unwrap();
            assert!(err < 1e-4, "trial {trial} ({act:?}): {err}");
        }
    }

    #[test]
    fn lstm_passes_grad_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for trial in 0..100 {
            let mut store = ParamStore::new();
            let cell = LstmCell::new(&mut store, "lstm", ParamGroup::Goal, 3, 4, &mut rng);
            randomize(&mut store, &mut rng);
            let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-1.0..1.0)).collect() };
            let (x, h, c) = (draw(3), draw(4), draw(4));
            let ids = cell.params();
            let err = grad_check(&store, &ids, 1e-5, |g, s| {
                let xv = g.constant(x.clone());
                let hv = g.constant(h.clone());
                let cv = g.constant(c.clone());
                let (h1, c1) = cell.step(g, s, xv, hv, cv)?;
                let (h2, c2) = cell.step(g, s, xv, h1, c1)?;
                let both = g.concat(&[h2, c2]);
                let sq = g.square(both);
                Ok(g.sum(sq))
            })
            .unwrap();
            assert!(err < 1e-4, "trial {trial}: {err}");
        }
    }
}
