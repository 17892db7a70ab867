//! Goal-Network (relaxation time τ) and Collision-Network (repulsion k_nj).

use rand::Rng;

use crate::error::{NspError, Result};
use crate::neural::{Activation, DenseLayer, Graph, LstmCell, Mlp, ParamGroup, ParamId, ParamStore, Var};
use crate::types::NspConfig;

/// Layer widths shared by the learned components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelDims {
    pub embed: usize,
    pub lstm_hidden: usize,
    pub mlp_hidden: usize,
    pub latent: usize,
    pub cvae_feature: usize,
    /// Pixel quantities are multiplied by this before entering the force
    /// networks.
    pub feature_scale: f64,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self { embed: 16, lstm_hidden: 32, mlp_hidden: 64, latent: 16, cvae_feature: 16, feature_scale: 0.01 }
    }
}

impl ModelDims {
    /// Narrow widths for fast checks and desk-scale experiments.
    pub fn small() -> Self {
        Self { embed: 8, lstm_hidden: 8, mlp_hidden: 16, latent: 4, cvae_feature: 8, feature_scale: 0.01 }
    }
}

/// Graph handles for an agent's position and velocity (2-vectors).
#[derive(Debug, Clone, Copy)]
pub struct StateVars {
    pub p: Var,
    pub v: Var,
}

/// LSTM carry for one agent.
#[derive(Debug, Clone, Copy)]
pub struct Recurrent {
    pub h: Var,
    pub c: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GoalNetwork {
    pub state_encoder: Mlp,
    pub lstm: LstmCell,
    pub post_lstm: DenseLayer,
    pub goal_embed: Mlp,
    pub head: Mlp,
}

impl GoalNetwork {
    pub fn new(store: &mut ParamStore, dims: &ModelDims, rng: &mut impl Rng) -> Self {
        let g = ParamGroup::Goal;
        let (e, h, m) = (dims.embed, dims.lstm_hidden, dims.mlp_hidden);
        Self {
            state_encoder: Mlp::new(store, "goal.state_encoder", g, &[4, e], Activation::Tanh, Activation::Tanh, rng),
            lstm: LstmCell::new(store, "goal.lstm", g, e, h, rng),
            post_lstm: DenseLayer::new(store, "goal.post_lstm", g, h, h, Activation::Identity, rng),
            goal_embed: Mlp::new(store, "goal.goal_embed", g, &[2, e], Activation::Tanh, Activation::Tanh, rng),
            head: Mlp::new(store, "goal.head", g, &[h + e, m, 1], Activation::Tanh, Activation::Identity, rng),
        }
    }

    pub fn bind(store: &ParamStore) -> Result<Self> {
        Ok(Self {
            state_encoder: Mlp::bind(store, "goal.state_encoder", 1, Activation::Tanh, Activation::Tanh)?,
            lstm: LstmCell::bind(store, "goal.lstm")?,
            post_lstm: DenseLayer::bind(store, "goal.post_lstm", Activation::Identity)?,
            goal_embed: Mlp::bind(store, "goal.goal_embed", 1, Activation::Tanh, Activation::Tanh)?,
            head: Mlp::bind(store, "goal.head", 2, Activation::Tanh, Activation::Identity)?,
        })
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut ids = self.state_encoder.params();
        ids.extend(self.lstm.params());
        ids.extend(self.post_lstm.params());
        ids.extend(self.goal_embed.params());
        ids.extend(self.head.params());
        ids
    }

    /// Fresh zero carry; call at the start of every window.
    pub fn reset(&self, g: &mut Graph) -> Recurrent {
        let n = self.lstm.hidden;
        Recurrent { h: g.constant(vec![0.0; n]), c: g.constant(vec![0.0; n]) }
    }

    /// Carry re-created as constants from plain values (detached inference).
    pub fn restore(&self, g: &mut Graph, h: &[f64], c: &[f64]) -> Recurrent {
        Recurrent { h: g.constant(h.to_vec()), c: g.constant(c.to_vec()) }
    }

    /// Feeds one state through the encoder and LSTM; returns the new hidden.
    pub fn observe(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        state: &mut Option<Recurrent>,
        q: StateVars,
        dims: &ModelDims,
    ) -> Result<Var> {
        let carry = state.ok_or(NspError::UninitializedState)?;
        let qv = g.concat(&[q.p, q.v]);
        let qs = g.scale(qv, dims.feature_scale);
        let enc = self.state_encoder.forward(g, store, qs)?;
        let (h, c) = self.lstm.step(g, store, enc, carry.h, carry.c)?;
        *state = Some(Recurrent { h, c });
        Ok(h)
    }

    /// τ = a_tau·sigmoid(NN(q, p_goal)) + b_tau. Advances the carry.
    pub fn tau(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        state: &mut Option<Recurrent>,
        q: StateVars,
        goal: Var,
        cfg: &NspConfig,
        dims: &ModelDims,
    ) -> Result<Var> {
        let h = self.observe(g, store, state, q, dims)?;
        let post = self.post_lstm.forward(g, store, h)?;
        let gs = g.scale(goal, dims.feature_scale);
        let ge = self.goal_embed.forward(g, store, gs)?;
        let joined = g.concat(&[post, ge]);
        let raw = self.head.forward(g, store, joined)?;
        Ok(squash(g, raw, cfg.a_tau, cfg.b_tau))
    }
}

/// `a·sigmoid(raw) + b` on the graph.
fn squash(g: &mut Graph, raw: Var, a: f64, b: f64) -> Var {
    let s = g.sigmoid(raw);
    let scaled = g.scale(s, a);
    let offset = g.scalar(b);
    g.add(scaled, offset)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollisionNetwork {
    pub self_encoder: Mlp,
    pub neighbor_encoder: Mlp,
    pub head: Mlp,
}

impl CollisionNetwork {
    pub fn new(store: &mut ParamStore, dims: &ModelDims, rng: &mut impl Rng) -> Self {
        let g = ParamGroup::Collision;
        let (e, m) = (dims.embed, dims.mlp_hidden);
        Self {
            self_encoder: Mlp::new(store, "collision.self_encoder", g, &[4, e], Activation::Tanh, Activation::Tanh, rng),
            neighbor_encoder: Mlp::new(store, "collision.neighbor_encoder", g, &[4, e], Activation::Tanh, Activation::Tanh, rng),
            head: Mlp::new(store, "collision.head", g, &[2 * e, m, 1], Activation::Tanh, Activation::Identity, rng),
        }
    }

    pub fn bind(store: &ParamStore) -> Result<Self> {
        Ok(Self {
            self_encoder: Mlp::bind(store, "collision.self_encoder", 1, Activation::Tanh, Activation::Tanh)?,
            neighbor_encoder: Mlp::bind(store, "collision.neighbor_encoder", 1, Activation::Tanh, Activation::Tanh)?,
            head: Mlp::bind(store, "collision.head", 2, Activation::Tanh, Activation::Identity)?,
        })
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut ids = self.self_encoder.params();
        ids.extend(self.neighbor_encoder.params());
        ids.extend(self.head.params());
        ids
    }

    /// k_nj = a_k·sigmoid(NN(q_n, q_j)) + b_k for one ordered pair. The
    /// neighbor enters as its offset from the agent plus its velocity.
    pub fn k(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        me: StateVars,
        neighbor: StateVars,
        cfg: &NspConfig,
        dims: &ModelDims,
    ) -> Result<Var> {
        let s = dims.feature_scale;
        let own = g.concat(&[me.p, me.v]);
        let own = g.scale(own, s);
        let offset = g.sub(neighbor.p, me.p);
        let other = g.concat(&[offset, neighbor.v]);
        let other = g.scale(other, s);
        let a = self.self_encoder.forward(g, store, own)?;
        let b = self.neighbor_encoder.forward(g, store, other)?;
        let joined = g.concat(&[a, b]);
        let raw = self.head.forward(g, store, joined)?;
        Ok(squash(g, raw, cfg.a_k, cfg.b_k))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::grad_check;
    use crate::types::Dataset;
    use glam::DVec2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero(store: &mut ParamStore) {
        for id in store.ids().collect::<Vec<_>>() {
            store.tensor_mut(id).data.fill(0.0);
        }
    }

    fn state(g: &mut Graph, p: (f64, f64), v: (f64, f64)) -> StateVars {
        StateVars { p: g.vec2(DVec2::new(p.0, p.1)), v: g.vec2(DVec2::new(v.0, v.1)) }
    }

    fn build() -> (ParamStore, GoalNetwork, CollisionNetwork) {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let dims = ModelDims::small();
        let goal = GoalNetwork::new(&mut store, &dims, &mut rng);
        let col = CollisionNetwork::new(&mut store, &dims, &mut rng);
        (store, goal, col)
    }

    #[test]
    fn zero_weights_give_midpoint() {
        let (mut store, goal, col) = build();
        zero(&mut store);
        let dims = ModelDims::small();
        let sdd = NspConfig::preset(Dataset::Sdd);
        let mut g = Graph::new();
        let q = state(&mut g, (120.0, 40.0), (3.0, -1.0));
        let target = g.vec2(DVec2::new(300.0, 10.0));
        let mut carry = Some(goal.reset(&mut g));
        let tau = goal.tau(&mut g, &store, &mut carry, q, target, &sdd, &dims).unwrap();
        assert_eq!(g.scalar_value(tau), 0.9);

        let other = state(&mut g, (130.0, 45.0), (-1.0, 0.0));
        let k = col.k(&mut g, &store, q, other, &sdd, &dims).unwrap();
        assert_eq!(g.scalar_value(k), 50.0);
        let eth = NspConfig::preset(Dataset::Eth);
        let k = col.k(&mut g, &store, q, other, &eth, &dims).unwrap();
        assert_eq!(g.scalar_value(k), 25.0);
    }

    #[test]
    fn outputs_stay_in_range() {
        let (mut store, goal, col) = build();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let dims = ModelDims::small();
        for id in store.ids().collect::<Vec<_>>() {
            for x in &mut store.tensor_mut(id).data {
                *x = rng.random_range(-3.0..3.0);
            }
        }
        for cfg in [NspConfig::preset(Dataset::Sdd), NspConfig::preset(Dataset::Univ), NspConfig::preset(Dataset::Eth)] {
            let mut g = Graph::new();
            let mut carry = Some(goal.reset(&mut g));
            for step in 0..10 {
                let q = state(&mut g, (step as f64 * 30.0, 7.0), (rng.random_range(-40.0..40.0), 2.0));
                let target = g.vec2(DVec2::new(500.0, -200.0));
                let tau = goal.tau(&mut g, &store, &mut carry, q, target, &cfg, &dims).unwrap();
                let tau = g.scalar_value(tau);
                assert!(tau > cfg.b_tau && tau < cfg.a_tau + cfg.b_tau);
                let other = state(&mut g, (rng.random_range(-90.0..90.0), 0.0), (0.0, 1.0));
                let k = col.k(&mut g, &store, q, other, &cfg, &dims).unwrap();
                let k = g.scalar_value(k);
                assert!(k > cfg.b_k && k < cfg.a_k + cfg.b_k);
            }
        }
    }

    #[test]
    fn carry_must_be_initialized() {
        let (store, goal, _) = build();
        let mut g = Graph::new();
        let q = state(&mut g, (0.0, 0.0), (1.0, 0.0));
        let target = g.vec2(DVec2::ONE);
        let err = goal.tau(&mut g, &store, &mut None, q, target, &NspConfig::default(), &ModelDims::small());
        assert!(matches!(err, Err(NspError::UninitializedState)));
    }

    #[test]
    fn reset_restores_determinism() {
        let (store, goal, _) = build();
        let dims = ModelDims::small();
        let cfg = NspConfig::default();
        let mut g = Graph::new();
        let q = state(&mut g, (50.0, 60.0), (12.0, -4.0));
        let target = g.vec2(DVec2::new(200.0, 10.0));
        let mut carry = Some(goal.reset(&mut g));
        let first = goal.tau(&mut g, &store, &mut carry, q, target, &cfg, &dims).unwrap();
        let first = g.scalar_value(first);
        let second = goal.tau(&mut g, &store, &mut carry, q, target, &cfg, &dims).unwrap();
        let second = g.scalar_value(second);
        assert_ne!(first, second);
        let mut carry = Some(goal.reset(&mut g));
        let again = goal.tau(&mut g, &store, &mut carry, q, target, &cfg, &dims).unwrap();
        let again = g.scalar_value(again);
        assert_eq!(first.to_bits(), again.to_bits());
    }

    #[test]
    fn rebinding_finds_same_parameters() {
        let (store, goal, col) = build();
        assert_eq!(GoalNetwork::bind(&store).unwrap(), goal);
        assert_eq!(CollisionNetwork::bind(&store).unwrap(), col);
    }

    #[test]
    fn tau_and_k_pass_grad_check() {
        let (store, goal, col) = build();
        let dims = ModelDims::small();
        let cfg = NspConfig::default();
        // several recurrent gradients sit near 1e-8, so a wider step keeps roundoff out
        let err = grad_check(&store, &goal.params(), 1e-4, |g, s| {
            let mut carry = Some(goal.reset(g));
            let mut total = g.scalar(0.0);
            for step in 0..3 {
                let q = state(g, (40.0 + 10.0 * step as f64, 80.0), (25.0, -5.0));
                let target = g.vec2(DVec2::new(260.0, 30.0));
                let tau = goal.tau(g, s, &mut carry, q, target, &cfg, &dims)?;
                total = g.add(total, tau);
            }
            Ok(total)
        })
        .unwrap();
        assert!(err < 1e-4, "goal net: {err}");

        let err = grad_check(&store, &col.params(), 1e-5, |g, s| {
            let me = state(g, (40.0, 80.0), (25.0, -5.0));
            let other = state(g, (70.0, 60.0), (-10.0, 3.0));
            col.k(g, s, me, other, &cfg, &dims)
        })
        .unwrap();
        assert!(err < 1e-4, "collision net: {err}");
    }
}
