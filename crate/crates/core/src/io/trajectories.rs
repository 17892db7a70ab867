use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use glam::DVec2;

use super::{parse_error, read_text, write_bytes};
use crate::error::{NspError, Result};
use crate::rollout::{Cohort, ObstacleTrack, RolloutResult};
use crate::types::{validate_window, AgentState, TrajectoryWindow, WINDOW_LEN};

/// One row of a trajectory file.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub frame_id: i64,
    pub agent_id: String,
    pub p: DVec2,
}

/// All records of one agent, sorted by frame.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTrack {
    pub agent_id: String,
    pub records: Vec<(i64, DVec2)>,
}

impl RawTrack {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn position_at(&self, frame: i64) -> Option<usize> {
        self.records.binary_search_by_key(&frame, |r| r.0).ok()
    }

    /// State at record `i`: backward difference when the previous record is
    /// one `step` earlier, else forward when the next is one `step` later.
    fn state(&self, i: usize, step: i64, dt: f64) -> AgentState {
        let (f, p) = self.records[i];
        let v = match (i.checked_sub(1).map(|j| self.records[j]), self.records.get(i + 1)) {
            (Some((pf, pp)), _) if f - pf == step => (p - pp) / dt,
            (_, Some((nf, np))) if nf - f == step => (*np - p) / dt,
            _ => DVec2::ZERO,
        };
        AgentState::new(p, v)
    }
}

/// Parses `frame_id agent_id x y` rows separated by tabs or spaces. Blank
/// lines and lines starting with `#` are skipped. Tracks come out in order
/// of first appearance.
pub fn parse_trajectories(text: &str, source: &str) -> Result<Vec<RawTrack>> {
    let mut order: Vec<String> = Vec::new();
    let mut by_agent: HashMap<String, Vec<(i64, DVec2)>> = HashMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(parse_error(source, n + 1, format!("expected 4 fields, found {}", fields.len())));
        }
        let frame = parse_frame(fields[0]).ok_or_else(|| parse_error(source, n + 1, format!("bad frame id `{}`", fields[0])))?;
        let coord = |s: &str| s.parse::<f64>().ok().filter(|x| x.is_finite());
        let (Some(x), Some(y)) = (coord(fields[2]), coord(fields[3])) else {
            return Err(parse_error(source, n + 1, "coordinates must be finite numbers"));
        };
        let id = fields[1].to_string();
        by_agent.entry(id.clone()).or_insert_with(|| {
            order.push(id);
            Vec::new()
        });
        by_agent.get_mut(fields[1]).expect("inserted").push((frame, DVec2::new(x, y)));
    }
    order
        .into_iter()
        .map(|agent_id| {
            let mut records = by_agent.remove(&agent_id).expect("grouped");
            records.sort_by_key(|r| r.0);
            if records.windows(2).any(|w| w[0].0 == w[1].0) {
                return Err(NspError::NonMonotoneFrames { agent: agent_id });
            }
            Ok(RawTrack { agent_id, records })
        })
        .collect()
}

/// Frame ids are integers; `12.0` style values from float-formatted files
/// are accepted when exact.
fn parse_frame(s: &str) -> Option<i64> {
    s.parse::<i64>().ok().or_else(|| {
        let f: f64 = s.parse().ok()?;
        (f.fract() == 0.0 && f.abs() < 9e15).then_some(f as i64)
    })
}

pub fn load_trajectories(path: &Path) -> Result<Vec<RawTrack>> {
    parse_trajectories(&read_text(path)?, &path.display().to_string())
}

/// Tab-separated rows, sorted by frame then agent id. Floats use the
/// shortest representation that reads back exactly.
pub fn format_trajectories(records: &[Record]) -> String {
    let mut sorted: Vec<&Record> = records.iter().collect();
    sorted.sort_by(|a, b| a.frame_id.cmp(&b.frame_id).then_with(|| a.agent_id.cmp(&b.agent_id)));
    let mut out = String::new();
    for r in sorted {
        let _ = writeln!(out, "{}\t{}\t{:?}\t{:?}", r.frame_id, r.agent_id, r.p.x, r.p.y);
    }
    out
}

pub fn save_trajectories(path: &Path, records: &[Record]) -> Result<()> {
    write_bytes(path, format_trajectories(records).as_bytes())
}

/// Predicted frames of a rollout as records. With `sample = Some(k)` the
/// agent ids become `id#k`.
pub fn prediction_records(result: &RolloutResult, sample: Option<usize>) -> Vec<Record> {
    let mut out = Vec::new();
    for a in &result.agents {
        let id = match sample {
            Some(k) => format!("{}#{k}", a.agent_id),
            None => a.agent_id.clone(),
        };
        for (f, p) in a.frame_ids.iter().zip(&a.positions) {
            out.push(Record { frame_id: *f, agent_id: id.clone(), p: *p });
        }
    }
    out
}

/// Every 20-record slice of every track, starting at multiples of `stride`.
/// Slices whose frame ids are not evenly spaced are skipped, as are tracks
/// shorter than a window.
pub fn window_split(tracks: &[RawTrack], stride: usize, dt: f64) -> Vec<TrajectoryWindow> {
    let stride = stride.max(1);
    let mut out = Vec::new();
    for track in tracks {
        let mut start = 0;
        while start + WINDOW_LEN <= track.len() {
            if let Some(w) = window_at(track, start, dt) {
                out.push(w);
            }
            start += stride;
        }
    }
    out
}

fn window_at(track: &RawTrack, start: usize, dt: f64) -> Option<TrajectoryWindow> {
    let slice = &track.records[start..start + WINDOW_LEN];
    let frame_ids: Vec<i64> = slice.iter().map(|r| r.0).collect();
    let step = frame_ids[1] - frame_ids[0];
    let positions: Vec<DVec2> = slice.iter().map(|r| r.1).collect();
    let mut w = TrajectoryWindow::from_positions(track.agent_id.clone(), frame_ids, &positions, dt);
    w.frames[0] = track.state(start, step, dt);
    validate_window(&w).ok()?;
    Some(w)
}

/// Windows grouped by shared frames, each group with the other agents
/// present during those frames attached as dynamic obstacles. Cohorts are
/// ordered by first frame, windows by agent id.
pub fn build_cohorts(tracks: &[RawTrack], stride: usize, dt: f64) -> Vec<Cohort> {
    let mut groups: BTreeMap<Vec<i64>, Vec<TrajectoryWindow>> = BTreeMap::new();
    for w in window_split(tracks, stride, dt) {
        groups.entry(w.frame_ids.clone()).or_default().push(w);
    }
    groups
        .into_iter()
        .map(|(frames, mut windows)| {
            windows.sort_by(|a, b| a.agent_id.cmp(&b.agent_id));
            let step = frames[1] - frames[0];
            let obstacles = tracks
                .iter()
                .filter(|t| !windows.iter().any(|w| w.agent_id == t.agent_id))
                .filter_map(|t| {
                    let states: Vec<Option<AgentState>> =
                        frames.iter().map(|f| t.position_at(*f).map(|i| t.state(i, step, dt))).collect();
                    states.iter().any(Option::is_some).then(|| ObstacleTrack { agent_id: t.agent_id.clone(), states })
                })
                .collect();
            Cohort { windows, obstacles }
        })
        .collect()
}
