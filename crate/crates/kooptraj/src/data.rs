//! Dataset ingestion, sliding windows, train/val/test splits, and
//! synthetic dynamics generators for oracle testing.
//!
//! Canonical trajectory file format: whitespace-separated
//! `frame agent_id x y` rows with an optional header line. A sidecar
//! `<file>.meta.json` may pin the frame stride, units, and agent class.
//! Context files are `frame x y` point lists.

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geom::{AgentClass, Trajectory};

/// One parsed dataset row.
#[derive(Clone, Debug, PartialEq)]
pub struct RawRecord {
    pub frame: i64,
    pub agent_id: String,
    pub x: f64,
    pub y: f64,
}

/// Optional sidecar metadata next to a trajectory file.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct DatasetMeta {
    #[serde(default)]
    pub stride: Option<i64>,
    #[serde(default)]
    pub units: Option<String>,
    #[serde(default)]
    pub agent_class: Option<AgentClass>,
}

impl DatasetMeta {
    pub fn load_for(path: &Path) -> Result<Self> {
        let mut sidecar = path.as_os_str().to_owned();
        sidecar.push(".meta.json");
        let sidecar = Path::new(&sidecar);
        if sidecar.exists() {
            let text = std::fs::read_to_string(sidecar)?;
            Ok(serde_json::from_str(&text)?)
        } else {
            Ok(Self::default())
        }
    }
}

/// Load a trajectory file: rows grouped by agent, sorted by frame, and
/// split into constant-stride segments wherever the frame sequence gaps.
pub fn load_tsv(path: &Path) -> Result<Vec<Trajectory>> {
    let meta = DatasetMeta::load_for(path)?;
    let text = std::fs::read_to_string(path)?;
    let records = parse_records(&text, &path.display().to_string())?;
    let class = meta.agent_class.unwrap_or(AgentClass::Pedestrian);
    group_records(records, meta.stride, class, &path.display().to_string())
}

fn parse_records(text: &str, path: &str) -> Result<Vec<RawRecord>> {
    let mut records = Vec::new();
    let mut first_data_line = true;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        // Optional header: first line whose leading field is not numeric.
        if first_data_line && fields[0].parse::<f64>().is_err() {
            first_data_line = false;
            continue;
        }
        first_data_line = false;
        if fields.len() != 4 {
            return Err(Error::Parse {
                path: path.into(),
                line: lineno + 1,
                msg: format!("expected 4 fields `frame agent_id x y`, got {}", fields.len()),
            });
        }
        let parse_num = |s: &str, what: &str| -> Result<f64> {
            s.parse::<f64>().map_err(|_| Error::Parse {
                path: path.into(),
                line: lineno + 1,
                msg: format!("cannot parse {what} `{s}`"),
            })
        };
        let frame_f = parse_num(fields[0], "frame")?;
        let (x, y) = (parse_num(fields[2], "x")?, parse_num(fields[3], "y")?);
        if !x.is_finite() || !y.is_finite() || !frame_f.is_finite() {
            return Err(Error::Parse {
                path: path.into(),
                line: lineno + 1,
                msg: "non-finite value".into(),
            });
        }
        records.push(RawRecord {
            frame: frame_f.round() as i64,
            agent_id: fields[1].to_string(),
            x,
            y,
        });
    }
    if records.is_empty() {
        return Err(Error::EmptyDataset(path.into()));
    }
    Ok(records)
}

fn group_records(
    records: Vec<RawRecord>,
    stride_override: Option<i64>,
    class: AgentClass,
    path: &str,
) -> Result<Vec<Trajectory>> {
    // Group by agent in first-seen order.
    let mut order: Vec<String> = Vec::new();
    let mut by_agent: HashMap<String, Vec<RawRecord>> = HashMap::new();
    for r in records {
        if !by_agent.contains_key(&r.agent_id) {
            order.push(r.agent_id.clone());
        }
        by_agent.entry(r.agent_id.clone()).or_default().push(r);
    }

    let mut out = Vec::new();
    for id in order {
        let mut rows = by_agent.remove(&id).unwrap();
        rows.sort_by_key(|r| r.frame);
        for w in rows.windows(2) {
            if w[0].frame == w[1].frame {
                return Err(Error::Parse {
                    path: path.into(),
                    line: 0,
                    msg: format!("agent `{id}` has duplicate frame {}", w[0].frame),
                });
            }
        }
        let stride = stride_override.unwrap_or_else(|| {
            rows.windows(2).map(|w| w[1].frame - w[0].frame).min().unwrap_or(1)
        });
        // Split into constant-stride segments at every gap.
        let mut segment: Vec<&RawRecord> = Vec::new();
        let mut segments: Vec<Vec<&RawRecord>> = Vec::new();
        for r in &rows {
            if let Some(last) = segment.last() {
                if r.frame - last.frame != stride {
                    segments.push(std::mem::take(&mut segment));
                }
            }
            segment.push(r);
        }
        segments.push(segment);
        for seg in segments {
            if seg.len() < 2 {
                continue;
            }
            out.push(Trajectory::new(
                id.clone(),
                seg.iter().map(|r| r.frame).collect(),
                seg.iter().map(|r| Vector2::new(r.x, r.y)).collect(),
                class,
            )?);
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "{path}: no trajectory of length >= 2 after segmentation"
        )));
    }
    Ok(out)
}

/// Write trajectories in the canonical format (header included).
pub fn write_tsv(trajectories: &[Trajectory], path: &Path) -> Result<()> {
    let mut text = String::from("frame agent_id x y\n");
    for t in trajectories {
        for (i, p) in t.positions.iter().enumerate() {
            text.push_str(&format!("{} {} {} {}\n", t.times[i], t.agent_id, p.x, p.y));
        }
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Load a `frame x y` context file into per-frame point lists.
pub fn load_context(path: &Path) -> Result<HashMap<i64, Vec<Vector2<f64>>>> {
    let text = std::fs::read_to_string(path)?;
    let name = path.display().to_string();
    let mut out: HashMap<i64, Vec<Vector2<f64>>> = HashMap::new();
    let mut first_data_line = true;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if first_data_line && fields[0].parse::<f64>().is_err() {
            first_data_line = false;
            continue;
        }
        first_data_line = false;
        if fields.len() != 3 {
            return Err(Error::Parse {
                path: name,
                line: lineno + 1,
                msg: format!("expected 3 fields `frame x y`, got {}", fields.len()),
            });
        }
        let mut nums = [0.0f64; 3];
        for (i, f) in fields.iter().enumerate() {
            nums[i] = f.parse::<f64>().map_err(|_| Error::Parse {
                path: name.clone(),
                line: lineno + 1,
                msg: format!("cannot parse `{f}`"),
            })?;
        }
        out.entry(nums[0].round() as i64)
            .or_default()
            .push(Vector2::new(nums[1], nums[2]));
    }
    Ok(out)
}

/// A history/future slice of one trajectory.
#[derive(Clone, Debug)]
pub struct Window {
    pub agent_id: String,
    /// Frame index of the newest history point (the forecast origin).
    pub anchor_frame: i64,
    pub history: Vec<Vector2<f64>>,
    pub future: Vec<Vector2<f64>>,
}

/// Slices of full `history_len + horizon` coverage at offsets 0, stride,
/// 2*stride, ... Short trajectories yield no windows.
pub fn sliding_windows(
    trajectory: &Trajectory,
    history_len: usize,
    horizon: usize,
    stride: usize,
) -> Vec<Window> {
    assert!(stride >= 1, "window stride must be >= 1");
    let total = history_len + horizon;
    let n = trajectory.len();
    if n < total {
        return Vec::new();
    }
    (0..=(n - total))
        .step_by(stride)
        .map(|off| Window {
            agent_id: trajectory.agent_id.clone(),
            anchor_frame: trajectory.times[off + history_len - 1],
            history: trajectory.positions[off..off + history_len].to_vec(),
            future: trajectory.positions[off + history_len..off + total].to_vec(),
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    ConstantVelocity,
    CircularArc,
    UnicycleSine,
    BimodalFork,
}

impl std::str::FromStr for SynthKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "constant_velocity" => Ok(SynthKind::ConstantVelocity),
            "circular_arc" => Ok(SynthKind::CircularArc),
            "unicycle_sine" => Ok(SynthKind::UnicycleSine),
            "bimodal_fork" => Ok(SynthKind::BimodalFork),
            other => Err(Error::Config(format!("unknown synthetic kind `{other}`"))),
        }
    }
}

/// Parameters for the synthetic generators.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SynthSpec {
    pub kind: SynthKind,
    pub agents: usize,
    pub len: usize,
    pub noise: f64,
    pub seed: u64,
    /// Step index at which fork trajectories change direction
    /// (bimodal_fork only); defaults to len/2.
    pub fork_at: Option<usize>,
}

impl SynthSpec {
    pub fn new(kind: SynthKind, agents: usize, len: usize, noise: f64, seed: u64) -> Self {
        Self { kind, agents, len, noise, seed, fork_at: None }
    }
}

/// Reproducible synthetic trajectory sets for oracle tests.
pub fn synth_generate(spec: &SynthSpec) -> Result<Vec<Trajectory>> {
    if spec.agents < 1 || spec.len < 2 {
        return Err(Error::InvalidParam("need at least 1 agent and length >= 2".into()));
    }
    if spec.noise < 0.0 {
        return Err(Error::InvalidParam("noise must be >= 0".into()));
    }
    let mut out = Vec::with_capacity(spec.agents);
    for a in 0..spec.agents {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(a as u64));
        let positions = match spec.kind {
            SynthKind::ConstantVelocity => gen_constant_velocity(&mut rng, spec),
            SynthKind::CircularArc => gen_circular_arc(&mut rng, spec),
            SynthKind::UnicycleSine => gen_unicycle_sine(&mut rng, spec),
            SynthKind::BimodalFork => gen_bimodal_fork(&mut rng, spec),
        };
        out.push(Trajectory::new(
            format!("synth{a}"),
            (0..spec.len as i64).collect(),
            positions,
            AgentClass::Pedestrian,
        )?);
    }
    Ok(out)
}

fn noisy(rng: &mut ChaCha8Rng, noise: f64) -> Vector2<f64> {
    if noise == 0.0 {
        return Vector2::zeros();
    }
    let nx: f64 = rng.sample(StandardNormal);
    let ny: f64 = rng.sample(StandardNormal);
    Vector2::new(nx, ny) * noise
}

fn gen_constant_velocity(rng: &mut ChaCha8Rng, spec: &SynthSpec) -> Vec<Vector2<f64>> {
    let start = Vector2::new(rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0));
    let angle = rng.gen_range(0.0..std::f64::consts::TAU);
    let speed = rng.gen_range(0.5..2.0);
    let v = Vector2::new(angle.cos(), angle.sin()) * speed;
    (0..spec.len)
        .map(|t| start + v * t as f64 + noisy(rng, spec.noise))
        .collect()
}

fn gen_circular_arc(rng: &mut ChaCha8Rng, spec: &SynthSpec) -> Vec<Vector2<f64>> {
    let center = Vector2::new(rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0));
    let radius = 5.0;
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let step = 0.1 * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    (0..spec.len)
        .map(|t| {
            let a = phase + step * t as f64;
            center + Vector2::new(a.cos(), a.sin()) * radius + noisy(rng, spec.noise)
        })
        .collect()
}

fn gen_unicycle_sine(rng: &mut ChaCha8Rng, spec: &SynthSpec) -> Vec<Vector2<f64>> {
    let mut pos = Vector2::new(rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0));
    let theta0 = rng.gen_range(0.0..std::f64::consts::TAU);
    let speed = rng.gen_range(0.5..1.5);
    let amp = rng.gen_range(0.3..0.8);
    let omega = rng.gen_range(0.2..0.5);
    (0..spec.len)
        .map(|t| {
            let theta = theta0 + amp * (omega * t as f64).sin();
            let out = pos + noisy(rng, spec.noise);
            pos += Vector2::new(theta.cos(), theta.sin()) * speed;
            out
        })
        .collect()
}

fn gen_bimodal_fork(rng: &mut ChaCha8Rng, spec: &SynthSpec) -> Vec<Vector2<f64>> {
    let start = Vector2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    let heading = rng.gen_range(0.0..std::f64::consts::TAU);
    let speed = rng.gen_range(0.8..1.2);
    let fork_at = spec.fork_at.unwrap_or(spec.len / 2).max(1);
    let turn = std::f64::consts::FRAC_PI_4 * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let mut pos = start;
    (0..spec.len)
        .map(|t| {
            let out = pos + noisy(rng, spec.noise);
            let dir = if t < fork_at { heading } else { heading + turn };
            pos += Vector2::new(dir.cos(), dir.sin()) * speed;
            out
        })
        .collect()
}

/// Fractions of whole trajectories per split.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self { train: 0.8, val: 0.1, test: 0.1 }
    }
}

#[derive(Clone, Debug)]
pub struct DatasetSplit {
    pub train: Vec<Trajectory>,
    pub val: Vec<Trajectory>,
    pub test: Vec<Trajectory>,
    pub ratios: SplitRatios,
    pub seed: u64,
}

/// Seeded split by whole trajectory (never by window), disjoint and
/// exhaustive.
pub fn split_dataset(
    mut trajectories: Vec<Trajectory>,
    ratios: SplitRatios,
    seed: u64,
) -> Result<DatasetSplit> {
    let total = ratios.train + ratios.val + ratios.test;
    if (total - 1.0).abs() > 1e-9 || ratios.train < 0.0 || ratios.val < 0.0 || ratios.test < 0.0 {
        return Err(Error::Config(format!("split ratios must sum to 1, got {total}")));
    }
    if trajectories.is_empty() {
        return Err(Error::EmptyDataset("split".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = trajectories.len();
    for i in (1..n).rev() {
        trajectories.swap(i, rng.gen_range(0..=i));
    }
    let n_train = (ratios.train * n as f64).round() as usize;
    let n_val = ((ratios.val * n as f64).round() as usize).min(n - n_train.min(n));
    let n_train = n_train.min(n);
    let mut iter = trajectories.into_iter();
    let train: Vec<_> = iter.by_ref().take(n_train).collect();
    let val: Vec<_> = iter.by_ref().take(n_val).collect();
    let test: Vec<_> = iter.collect();
    Ok(DatasetSplit { train, val, test, ratios, seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn temp_file(content: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.txt");
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(content.as_bytes()).unwrap();
        (dir, path)
    }

    #[test]
    fn three_rows_one_agent() {
        let (_d, path) = temp_file("0 a 1.0 2.0\n1 a 1.5 2.5\n2 a 2.0 3.0\n");
        let trajs = load_tsv(&path).unwrap();
        assert_eq!(trajs.len(), 1);
        assert_eq!(trajs[0].len(), 3);
        assert_eq!(trajs[0].positions[2], Vector2::new(2.0, 3.0));
    }

    #[test]
    fn interleaved_agents_sorted_by_frame() {
        let (_d, path) = temp_file("1 b 10 10\n0 a 0 0\n0 b 9 9\n1 a 1 1\n");
        let trajs = load_tsv(&path).unwrap();
        assert_eq!(trajs.len(), 2);
        let b = trajs.iter().find(|t| t.agent_id == "b").unwrap();
        assert_eq!(b.positions[0], Vector2::new(9.0, 9.0));
        assert_eq!(b.positions[1], Vector2::new(10.0, 10.0));
    }

    #[test]
    fn frame_gap_splits_segments() {
        let (_d, path) =
            temp_file("0 a 0 0\n10 a 1 0\n30 a 3 0\n40 a 4 0\n");
        let trajs = load_tsv(&path).unwrap();
        // stride 10 inferred; gap 10->30 splits into [0,10] and [30,40]
        assert_eq!(trajs.len(), 2);
        assert_eq!(trajs[0].times, vec![0, 10]);
        assert_eq!(trajs[1].times, vec![30, 40]);
    }

    #[test]
    fn malformed_row_reports_line() {
        let (_d, path) = temp_file("0 a 1.0 2.0\n1 a oops 2.5\n");
        match load_tsv(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn empty_file_errors() {
        let (_d, path) = temp_file("");
        assert!(matches!(load_tsv(&path), Err(Error::EmptyDataset(_))));
    }

    #[test]
    fn header_is_skipped_and_sidecar_applies() {
        let (_d, path) = temp_file("frame agent_id x y\n0 a 0 0\n2 a 1 1\n4 a 2 2\n");
        let sidecar = path.with_extension("txt.meta.json");
        std::fs::write(&sidecar, r#"{"stride": 2, "agent_class": "vehicle"}"#).unwrap();
        let trajs = load_tsv(&path).unwrap();
        assert_eq!(trajs.len(), 1);
        assert_eq!(trajs[0].stride(), 2);
        assert_eq!(trajs[0].agent_class, AgentClass::Vehicle);
    }

    #[test]
    fn round_trip_is_idempotent() {
        let spec = SynthSpec::new(SynthKind::UnicycleSine, 4, 20, 0.01, 9);
        let trajs = synth_generate(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.txt");
        let p2 = dir.path().join("b.txt");
        write_tsv(&trajs, &p1).unwrap();
        let loaded = load_tsv(&p1).unwrap();
        write_tsv(&loaded, &p2).unwrap();
        assert_eq!(std::fs::read_to_string(&p1).unwrap(), std::fs::read_to_string(&p2).unwrap());
        let reloaded = load_tsv(&p2).unwrap();
        assert_eq!(loaded, reloaded);
    }

    #[test]
    fn window_counting() {
        let spec = SynthSpec::new(SynthKind::ConstantVelocity, 1, 20, 0.0, 1);
        let t = &synth_generate(&spec).unwrap()[0];
        let (h, p) = (8, 12);
        assert_eq!(sliding_windows(t, h, p, 1).len(), 1); // len == H+P
        let spec = SynthSpec::new(SynthKind::ConstantVelocity, 1, 24, 0.0, 1);
        let t = &synth_generate(&spec).unwrap()[0];
        assert_eq!(sliding_windows(t, h, p, 2).len(), 3); // offsets 0,2,4
        let spec = SynthSpec::new(SynthKind::ConstantVelocity, 1, 19, 0.0, 1);
        let t = &synth_generate(&spec).unwrap()[0];
        assert_eq!(sliding_windows(t, h, p, 1).len(), 0); // len == H+P-1
    }

    #[test]
    fn window_contents_align() {
        let spec = SynthSpec::new(SynthKind::ConstantVelocity, 1, 12, 0.0, 3);
        let t = &synth_generate(&spec).unwrap()[0];
        let w = &sliding_windows(t, 4, 6, 1)[2];
        assert_eq!(w.history, t.positions[2..6].to_vec());
        assert_eq!(w.future, t.positions[6..12].to_vec());
        assert_eq!(w.anchor_frame, t.times[5]);
    }

    #[test]
    fn constant_velocity_differences_constant() {
        let spec = SynthSpec::new(SynthKind::ConstantVelocity, 3, 25, 0.0, 7);
        for t in synth_generate(&spec).unwrap() {
            let d0 = t.positions[1] - t.positions[0];
            for w in t.positions.windows(2) {
                assert!(((w[1] - w[0]) - d0).amax() < 1e-12);
            }
        }
    }

    #[test]
    fn circular_arc_radius_constant() {
        let spec = SynthSpec::new(SynthKind::CircularArc, 2, 40, 0.0, 11);
        for t in synth_generate(&spec).unwrap() {
            // recover the center from three points, then check all radii
            let (a, b, c) = (t.positions[0], t.positions[1], t.positions[2]);
            let center = circumcenter(a, b, c);
            for p in &t.positions {
                assert!(((p - center).norm() - 5.0).abs() < 1e-9);
            }
        }
    }

    fn circumcenter(a: Vector2<f64>, b: Vector2<f64>, c: Vector2<f64>) -> Vector2<f64> {
        let d = 2.0 * (a.x * (b.y - c.y) + b.x * (c.y - a.y) + c.x * (a.y - b.y));
        let ux = (a.norm_squared() * (b.y - c.y)
            + b.norm_squared() * (c.y - a.y)
            + c.norm_squared() * (a.y - b.y))
            / d;
        let uy = (a.norm_squared() * (c.x - b.x)
            + b.norm_squared() * (a.x - c.x)
            + c.norm_squared() * (b.x - a.x))
            / d;
        Vector2::new(ux, uy)
    }

    #[test]
    fn bimodal_fork_balanced() {
        let spec = SynthSpec {
            fork_at: Some(4),
            ..SynthSpec::new(SynthKind::BimodalFork, 1000, 10, 0.0, 13)
        };
        let trajs = synth_generate(&spec).unwrap();
        let mut left = 0;
        for t in &trajs {
            let pre = t.positions[3] - t.positions[2];
            let post = t.positions[6] - t.positions[5];
            let cross = pre.x * post.y - pre.y * post.x;
            if cross > 0.0 {
                left += 1;
            }
        }
        assert!((450..=550).contains(&left), "left count {left}");
    }

    #[test]
    fn synth_reproducible_under_seed() {
        let spec = SynthSpec::new(SynthKind::UnicycleSine, 3, 15, 0.05, 21);
        assert_eq!(synth_generate(&spec).unwrap(), synth_generate(&spec).unwrap());
    }

    #[test]
    fn split_disjoint_exhaustive_deterministic() {
        let spec = SynthSpec::new(SynthKind::ConstantVelocity, 20, 10, 0.0, 2);
        let trajs = synth_generate(&spec).unwrap();
        let s1 = split_dataset(trajs.clone(), SplitRatios::default(), 5).unwrap();
        let s2 = split_dataset(trajs.clone(), SplitRatios::default(), 5).unwrap();
        assert_eq!(s1.train, s2.train);
        assert_eq!(s1.test, s2.test);
        assert_eq!(s1.train.len() + s1.val.len() + s1.test.len(), trajs.len());
        assert_eq!(s1.train.len(), 16);
        assert_eq!(s1.val.len(), 2);

        let mut ids: Vec<&str> = s1
            .train
            .iter()
            .chain(&s1.val)
            .chain(&s1.test)
            .map(|t| t.agent_id.as_str())
            .collect();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), trajs.len());
    }

    #[test]
    fn split_rejects_bad_ratios() {
        let spec = SynthSpec::new(SynthKind::ConstantVelocity, 4, 10, 0.0, 2);
        let trajs = synth_generate(&spec).unwrap();
        let bad = SplitRatios { train: 0.8, val: 0.3, test: 0.1 };
        assert!(split_dataset(trajs, bad, 0).is_err());
    }

    #[test]
    fn context_file_loads_per_frame() {
        let (_d, path) = temp_file("0 1.0 2.0\n0 3.0 4.0\n5 -1.0 0.5\n");
        let ctx = load_context(&path).unwrap();
        assert_eq!(ctx[&0].len(), 2);
        assert_eq!(ctx[&5], vec![Vector2::new(-1.0, 0.5)]);
    }
}
