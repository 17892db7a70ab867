use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cvae::CvaeModel;
use crate::error::{NspError, Result};
use crate::nets::{CollisionNetwork, GoalNetwork, ModelDims};
use crate::neural::{ParamGroup, ParamId, ParamStore, Tensor};

/// Network structure: which stored tensors play which role.
#[derive(Debug, Clone, PartialEq)]
pub struct Networks {
    pub goal: GoalNetwork,
    pub collision: CollisionNetwork,
    pub k_env: ParamId,
    pub cvae: CvaeModel,
    pub dims: ModelDims,
}

/// Every learnable quantity: the structure plus the tensor values.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub nets: Networks,
    pub store: ParamStore,
}

pub const K_ENV: &str = "env.k_env";

impl ModelParams {
    pub fn new(dims: ModelDims, k_env_init: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let goal = GoalNetwork::new(&mut store, &dims, &mut rng);
        let collision = CollisionNetwork::new(&mut store, &dims, &mut rng);
        let k_env = store.insert(K_ENV, Tensor::new(1, 1, vec![k_env_init.max(0.0)]), ParamGroup::Env);
        let cvae = CvaeModel::new(&mut store, &dims, &mut rng);
        Self { nets: Networks { goal, collision, k_env, cvae, dims }, store }
    }

    /// Rebuilds the structure around tensors loaded from a checkpoint.
    pub fn from_store(store: ParamStore, feature_scale: f64) -> Result<Self> {
        let goal = GoalNetwork::bind(&store)?;
        let collision = CollisionNetwork::bind(&store)?;
        let cvae = CvaeModel::bind(&store)?;
        let k_env = store.lookup(K_ENV).ok_or_else(|| NspError::ShapeMismatch(format!("missing `{K_ENV}`")))?;
        let dims = ModelDims {
            embed: goal.state_encoder.out_dim(),
            lstm_hidden: goal.lstm.hidden,
            mlp_hidden: goal.head.layers[0].out_dim,
            latent: cvae.latent_dim,
            cvae_feature: cvae.e_past.out_dim(),
            feature_scale,
        };
        Ok(Self { nets: Networks { goal, collision, k_env, cvae, dims }, store })
    }

    pub fn k_env(&self) -> f64 {
        self.store.tensor(self.nets.k_env).data[0]
    }

    pub fn set_k_env(&mut self, value: f64) {
        self.store.tensor_mut(self.nets.k_env).data[0] = value;
    }

    pub fn group_params(&self, groups: &[ParamGroup]) -> Vec<ParamId> {
        self.store.ids_in(groups)
    }

    pub fn all_finite(&self) -> bool {
        self.store.all_finite()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn groups_partition_parameters() {
        let m = ModelParams::new(ModelDims::small(), 1.0, 0);
        let goal = m.group_params(&[ParamGroup::Goal]);
        let col = m.group_params(&[ParamGroup::Collision]);
        let cvae = m.group_params(&[ParamGroup::Cvae]);
        assert_eq!(goal.len(), m.nets.goal.params().len());
        assert_eq!(col.len(), m.nets.collision.params().len());
        assert_eq!(cvae.len(), m.nets.cvae.params().len());
        assert_eq!(m.group_params(&[ParamGroup::Env]), vec![m.nets.k_env]);
        assert_eq!(goal.len() + col.len() + cvae.len() + 1, m.store.len());
        assert_eq!(m.k_env(), 1.0);
    }

    #[test]
    fn structure_rebinds_from_store() {
        let m = ModelParams::new(ModelDims::default(), 1.0, 3);
        let again = ModelParams::from_store(m.store.clone(), m.nets.dims.feature_scale).unwrap();
        assert_eq!(again, m);
    }
}
