use glam::DVec2;
use nsp_core::cli::score_predictions;
use nsp_core::eval::min_of_k;
use nsp_core::io::{
    apply_homography, load_checkpoint, load_trajectories, prediction_records, save_checkpoint, save_trajectories,
    Checkpoint, Direction, Homography, RawTrack,
};
use nsp_core::model::ModelParams;
use nsp_core::nets::ModelDims;
use nsp_core::rollout::{rollout_window, RolloutMode, RolloutOptions};
use nsp_core::synthetic::{generate_cohorts, SyntheticSpec};
use nsp_core::types::{NspConfig, SceneGrid};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn rollout_survives_the_trajectory_format() {
    let cfg = NspConfig::default();
    let cohort = generate_cohorts(&SyntheticSpec { scenes: 1, ..Default::default() }, &cfg, &SceneGrid::empty()).unwrap().remove(0);
    let model = ModelParams::new(ModelDims::small(), 1.0, 1);
    let opts = RolloutOptions { mode: RolloutMode::Stochastic, ..Default::default() };
    let result = rollout_window(&cohort, &SceneGrid::empty(), &model, &cfg, &opts, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pred.txt");
    save_trajectories(&path, &prediction_records(&result, Some(3))).unwrap();
    let tracks = load_trajectories(&path).unwrap();
    for a in &result.agents {
        let t = tracks.iter().find(|t| t.agent_id == format!("{}#3", a.agent_id)).unwrap();
        assert_eq!(t.records.iter().map(|r| r.0).collect::<Vec<_>>(), a.frame_ids);
        for (r, p) in t.records.iter().zip(&a.positions) {
            assert!((r.1 - *p).length() <= 1e-9);
        }
    }
}

#[test]
fn checkpoint_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let mut c = Checkpoint::new(ModelParams::new(ModelDims::default(), 2.5, 7));
    c.set_meta("stage", "3");
    save_checkpoint(&path, &c).unwrap();
    assert_eq!(load_checkpoint(&path).unwrap(), c);
}

fn track(id: &str, pts: &[DVec2]) -> RawTrack {
    RawTrack { agent_id: id.into(), records: pts.iter().enumerate().map(|(i, p)| (10 * i as i64, *p)).collect() }
}

#[test]
fn metric_scores_equal_pixel_scores_mapped_through_the_homography() {
    let h = Homography::new([[0.04, 0.002, -3.0], [-0.001, 0.05, 1.5], [1e-5, -2e-5, 1.0]]).unwrap();
    let truth: Vec<DVec2> = (0..12).map(|i| DVec2::new(100.0 + 9.0 * i as f64, 200.0 - 4.0 * i as f64)).collect();
    let samples: Vec<Vec<DVec2>> = (0..3)
        .map(|k| truth.iter().enumerate().map(|(i, p)| *p + DVec2::new(k as f64 * 2.0, i as f64 * 0.5 - k as f64)).collect())
        .collect();
    let pred: Vec<RawTrack> = samples.iter().enumerate().map(|(k, s)| track(&format!("a#{k}"), s)).collect();
    let (ade, fde, n, _) = score_predictions(&pred, &[track("a", &truth)], Some(&h), 0.2).unwrap();
    let world = |pts: &[DVec2]| pts.iter().map(|p| apply_homography(&h, *p, Direction::PixelToWorld).unwrap()).collect::<Vec<_>>();
    let expect = min_of_k(&samples.iter().map(|s| world(s)).collect::<Vec<_>>(), &world(&truth)).unwrap();
    assert_eq!(n, 1);
    assert!((ade - expect.0).abs() < 1e-12 && (fde - expect.1).abs() < 1e-12);
}
