use std::path::{Path, PathBuf};

use nsp_core::cli::run;
use nsp_core::io::load_trajectories;

fn toy(file: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/toy").join(file).display().to_string()
}

fn nsp(args: &[&str]) -> (i32, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run(std::iter::once("nsp").chain(args.iter().copied()), &mut out, &mut err);
    let text = String::from_utf8(out).unwrap() + &String::from_utf8(err).unwrap();
    (code, text)
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).display().to_string()
}

#[test]
fn train_predict_evaluate_on_the_toy_set() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = path(dir.path(), "m.ckpt");
    let (code, out) = nsp(&["train", "--config", &toy("toy.cfg"), "--out", &ckpt, "--set", "goal_epochs=5", "--set", "repulsion_epochs=5", "--set", "cvae_epochs=5"]);
    assert_eq!(code, 0, "{out}");
    assert_eq!(out.lines().count(), 15);

    let pred = path(dir.path(), "pred.txt");
    let (code, out) = nsp(&["predict", "--ckpt", &ckpt, "--data", &toy("test.txt"), "--mode", "sto", "--samples", "5", "--out", &pred, "--seed", "3"]);
    assert_eq!(code, 0, "{out}");
    let tracks = load_trajectories(Path::new(&pred)).unwrap();
    assert_eq!(tracks.len(), 12 * 5);
    assert!(tracks.iter().all(|t| t.len() == 12));

    let (code, out) = nsp(&["evaluate", "--pred", &pred, "--truth", &toy("test.txt")]);
    assert_eq!(code, 0, "{out}");
    assert!(out.contains("ADE ") && out.contains("FDE ") && out.contains("windows 12"), "{out}");

    let again = path(dir.path(), "again.txt");
    nsp(&["predict", "--ckpt", &ckpt, "--data", &toy("test.txt"), "--mode", "sto", "--samples", "5", "--out", &again, "--seed", "3"]);
    assert_eq!(std::fs::read(&pred).unwrap(), std::fs::read(&again).unwrap());

    let (code, out) = nsp(&["gradcheck", "--ckpt", &ckpt]);
    assert_eq!(code, 0, "{out}");
}

#[test]
fn perfect_prediction_scores_zero() {
    let (code, out) = nsp(&["evaluate", "--pred", &toy("test.txt"), "--truth", &toy("test.txt")]);
    assert_eq!(code, 0);
    assert!(out.starts_with("ADE 0.000000\nFDE 0.000000\n"), "{out}");
}

#[test]
fn simulate_writes_thirty_seconds_at_ten_fps() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = path(dir.path(), "m.ckpt");
    let (code, out) = nsp(&["train", "--config", &toy("toy.cfg"), "--out", &ckpt, "--stage", "1", "--set", "goal_epochs=1"]);
    assert_eq!(code, 0, "{out}");
    let traj = path(dir.path(), "sim.txt");
    let args = ["simulate", "--ckpt", &ckpt, "--scene", &toy("plaza.grid"), "--agents", "50", "--seed", "4", "--seconds", "30", "--out", &traj];
    let (code, out) = nsp(&args);
    assert_eq!(code, 0, "{out}");
    let tracks = load_trajectories(Path::new(&traj)).unwrap();
    assert_eq!(tracks.len(), 50);
    assert!(tracks.iter().all(|t| t.len() == 300 && t.records[299].0 == 299));
    let first = std::fs::read(&traj).unwrap();
    nsp(&args);
    assert_eq!(first, std::fs::read(&traj).unwrap());
}

#[test]
fn bad_config_key_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let (code, out) = nsp(&["train", "--data", &toy("train.txt"), "--out", &path(dir.path(), "m"), "--set", "nonsense=1"]);
    assert_eq!(code, 1);
    assert!(out.contains("error kind=ConfigError"), "{out}");
}
