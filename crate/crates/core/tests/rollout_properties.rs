use glam::DVec2;
use nsp_core::dynamics::ForceSwitches;
use nsp_core::model::ModelParams;
use nsp_core::nets::ModelDims;
use nsp_core::neural::ParamGroup;
use nsp_core::rollout::{rollout_window, Cohort, RolloutMode, RolloutOptions};
use nsp_core::training::cohort_gradients;
use nsp_core::types::{CellClass, NspConfig, SceneGrid, TrajectoryWindow, OBS_LEN, PRED_LEN};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn cohort_from(agents: &[(f64, f64, f64, f64)]) -> Cohort {
    let windows = agents
        .iter()
        .enumerate()
        .map(|(i, &(x, y, vx, vy))| {
            let v = DVec2::new(vx, vy);
            let positions: Vec<DVec2> = (0..20).map(|k| DVec2::new(x, y) + v * (0.4 * k as f64)).collect();
            TrajectoryWindow::from_positions(format!("agent{i}"), (0..20).map(|f| 100 + 10 * f).collect(), &positions, 0.4)
        })
        .collect();
    Cohort::new(windows)
}

fn agents() -> impl Strategy<Value = Vec<(f64, f64, f64, f64)>> {
    proptest::collection::vec((0.0f64..200.0, 0.0f64..200.0, 5.0f64..40.0, -20.0f64..20.0), 1..6)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn permuting_agents_changes_nothing(a in agents(), rot in 0usize..6, seed in 0u64..100) {
        let model = ModelParams::new(ModelDims::small(), 1.0, seed);
        let cfg = NspConfig::default();
        let grid = SceneGrid::empty();
        let base = cohort_from(&a);
        let mut permuted = base.clone();
        let n = permuted.windows.len();
        permuted.windows.rotate_left(rot % n);
        permuted.windows.reverse();
        for mode in [RolloutMode::Deterministic, RolloutMode::Stochastic] {
            let opts = RolloutOptions { mode, ..Default::default() };
            let x = rollout_window(&base, &grid, &model, &cfg, &opts, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let y = rollout_window(&permuted, &grid, &model, &cfg, &opts, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            for p in &x.agents {
                let q = y.agents.iter().find(|q| q.agent_id == p.agent_id).unwrap();
                prop_assert_eq!(&p.positions, &q.positions);
            }
        }
    }

    #[test]
    fn predictions_align_with_windows(a in agents(), seed in 0u64..100) {
        let model = ModelParams::new(ModelDims::small(), 1.0, seed);
        let cohort = cohort_from(&a);
        let r = rollout_window(&cohort, &SceneGrid::empty(), &model, &NspConfig::default(), &RolloutOptions::default(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        prop_assert_eq!(r.agents.len(), cohort.windows.len());
        for (p, w) in r.agents.iter().zip(&cohort.windows) {
            prop_assert_eq!(&p.agent_id, &w.agent_id);
            prop_assert_eq!(p.positions.len(), PRED_LEN);
            prop_assert_eq!(p.forces.len(), PRED_LEN);
            prop_assert_eq!(&p.frame_ids[..], &w.frame_ids[OBS_LEN..]);
            prop_assert_eq!(p.observed_consumed, OBS_LEN);
            prop_assert!(p.positions.iter().all(|q| q.is_finite()));
        }
    }
}

#[test]
fn deterministic_rollouts_repeat_bit_for_bit() {
    let model = ModelParams::new(ModelDims::default(), 1.0, 2);
    let cohort = cohort_from(&[(10.0, 10.0, 30.0, 2.0), (60.0, 14.0, -20.0, 0.0), (30.0, 60.0, 5.0, -15.0)]);
    let cfg = NspConfig::default();
    let run = |seed| rollout_window(&cohort, &SceneGrid::empty(), &model, &cfg, &RolloutOptions::default(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    assert_eq!(run(1), run(1));
    assert_eq!(run(1).agents[0].positions, run(2).agents[0].positions);
}

#[test]
fn backward_reaches_every_force_parameter() {
    let model = ModelParams::new(ModelDims::small(), 1.0, 3);
    let cfg = NspConfig::default();
    let mut grid = SceneGrid::walkable(120, 200);
    for row in 30..40 {
        for col in 0..200 {
            grid.set(row, col, CellClass::Unwalkable);
        }
    }
    let cohort = cohort_from(&[(10.0, 20.0, 25.0, 0.0), (120.0, 24.0, -25.0, 0.0), (40.0, 10.0, 20.0, 1.0)]);
    let (_, grads, _) = cohort_gradients(&cohort, &grid, &model, &cfg, ForceSwitches::ALL).unwrap();
    for id in model.group_params(&[ParamGroup::Goal, ParamGroup::Collision, ParamGroup::Env]) {
        assert!(grads.get(id).iter().any(|g| *g != 0.0), "no gradient reaches {}", model.store.name(id));
    }
}
