//! Writes predictions to the trajectory format, reads them back and
//! scores them in pixels and, through a homography, in meters.
//!
//! cargo run --example evaluate

use nsp_core::cli::score_predictions;
use nsp_core::eval::{min_of_k, standard_sample_goals};
use nsp_core::io::{format_trajectories, parse_trajectories, Homography, Record};
use nsp_core::DVec2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> nsp_core::Result<()> {
    let truth: Vec<DVec2> = (0..12).map(|i| DVec2::new(100.3 + 8.0 * i as f64, 50.6 + 2.5 * i as f64)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let ends = standard_sample_goals(truth[11], 12.0, 20, &mut rng);
    // straight lines from the first true point to each sampled end
    let samples: Vec<Vec<DVec2>> = ends
        .iter()
        .map(|end| (0..12).map(|i| truth[0].lerp(*end, i as f64 / 11.0)).collect())
        .collect();
    let (ade, fde) = min_of_k(&samples, &truth)?;
    println!("in memory      minADE {ade:.3} px  minFDE {fde:.3} px");

    let mut records = Vec::new();
    for (k, s) in samples.iter().enumerate() {
        records.extend(s.iter().enumerate().map(|(i, p)| Record { frame_id: 80 + 10 * i as i64, agent_id: format!("ped7#{k}"), p: *p }));
    }
    let truth_records: Vec<Record> =
        truth.iter().enumerate().map(|(i, p)| Record { frame_id: 80 + 10 * i as i64, agent_id: "ped7".into(), p: *p }).collect();
    let pred = parse_trajectories(&format_trajectories(&records), "pred")?;
    let gt = parse_trajectories(&format_trajectories(&truth_records), "truth")?;
    let (ade, fde, n, _) = score_predictions(&pred, &gt, None, 15.0)?;
    println!("from file      minADE {ade:.3} px  minFDE {fde:.3} px  ({n} window)");

    let h = Homography::new([[0.025, 0.0, 0.0], [0.0, 0.025, 0.0], [0.0, 0.0, 1.0]])?;
    let (ade, fde, _, _) = score_predictions(&pred, &gt, Some(&h), 0.2)?;
    println!("world units    minADE {ade:.4} m   minFDE {fde:.4} m");
    Ok(())
}
