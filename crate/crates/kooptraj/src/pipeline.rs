//! End-to-end glue between raw trajectories and the two fitted models.
//!
//! Frame conventions used throughout the pipeline:
//!
//! * Goal-estimator samples are anchored per window: each training
//!   window is mapped into the ego frame of its own newest history
//!   point, the same frame a forecast sees at test time.
//! * Transition-model snapshots are anchored per trajectory: the whole
//!   trajectory is mapped once into the ego frame of its first forecast
//!   origin (index H-1), so snapshot pairs cover states at many offsets
//!   and orientations and the fitted dynamics stay valid across a full
//!   rollout.
//! * One standardizer — fit on the per-trajectory-aligned training
//!   positions with a variance floor for degenerate axes — is shared by
//!   both models and embedded in their files.

use nalgebra::Vector2;
use std::collections::HashMap;

use crate::data::{sliding_windows, Window};
use crate::edmd::{build_snapshots, fit_ridge, KoopmanModel, SnapshotSet};
use crate::error::{Error, Result};
use crate::geom::{
    ego_transform, heading_from_displacement, select_context, AgentClass, ContextSet, Pose2,
    Standardizer, Trajectory,
};
use crate::mdn::{goal_features, train, GoalDataset, GoalModel, MdnNetwork, TrainConfig, TrainReport};
use crate::observables::DictionarySpec;
use crate::spectral::spectral_radius;

/// Axes whose ego-frame standard deviation falls below this are given
/// std = 1 instead of erroring (straight-line data has exactly zero
/// cross-track variance).
pub const STD_FLOOR: f64 = 1e-9;

/// Pose of the forecast origin at `positions[idx]`, heading from the
/// last displacement into it.
pub fn anchor_pose(positions: &[Vector2<f64>], idx: usize) -> Result<Pose2> {
    if positions.len() < 2 || idx >= positions.len() {
        return Err(Error::InvalidParam("anchor needs two positions".into()));
    }
    let heading = if idx >= 1 {
        heading_from_displacement(positions[idx - 1], positions[idx])
    } else {
        heading_from_displacement(positions[0], positions[1])
    };
    Pose2::new(positions[idx], heading)
}

/// Map each trajectory into the ego frame of its first forecast origin.
pub fn ego_align_trajectories(
    trajectories: &[Trajectory],
    history_len: usize,
) -> Result<Vec<Trajectory>> {
    trajectories
        .iter()
        .map(|t| {
            let idx = (history_len.saturating_sub(1)).min(t.len() - 1);
            let pose = anchor_pose(&t.positions, idx)?;
            t.with_positions(ego_transform(&pose, &t.positions)?)
        })
        .collect()
}

/// The shared pipeline standardizer: per-trajectory ego alignment, then
/// floored population statistics over every position.
pub fn frame_standardizer(
    trajectories: &[Trajectory],
    history_len: usize,
) -> Result<(Standardizer, [bool; 2])> {
    let aligned = ego_align_trajectories(trajectories, history_len)?;
    Standardizer::fit_floored(aligned.iter().flat_map(|t| t.positions.iter()), STD_FLOOR)
}

fn standardize_trajectories(trajectories: &[Trajectory], std: &Standardizer) -> Result<Vec<Trajectory>> {
    trajectories
        .iter()
        .map(|t| t.with_positions(std.apply_all(&t.positions)))
        .collect()
}

/// Settings for fitting the transition model.
#[derive(Clone, Copy, Debug)]
pub struct KoopmanFitSpec {
    pub history_len: usize,
    pub horizon: usize,
    pub include_quadratic: bool,
    pub lambda: f64,
}

impl KoopmanFitSpec {
    pub fn dictionary(&self) -> DictionarySpec {
        DictionarySpec::new(self.history_len, self.include_quadratic)
    }
}

/// Ego-align, standardize, and build snapshot pairs from world-frame
/// trajectories.
pub fn prepare_snapshots(
    trajectories: &[Trajectory],
    spec: &KoopmanFitSpec,
) -> Result<(SnapshotSet, Standardizer)> {
    let (std, _) = frame_standardizer(trajectories, spec.history_len)?;
    let aligned = ego_align_trajectories(trajectories, spec.history_len)?;
    let standardized = standardize_trajectories(&aligned, &std)?;
    let snaps = build_snapshots(&standardized, &spec.dictionary(), spec.horizon)?;
    Ok((snaps, std))
}

/// Fit the transition model from world-frame trajectories.
pub fn fit_koopman_model(
    trajectories: &[Trajectory],
    spec: &KoopmanFitSpec,
) -> Result<KoopmanModel> {
    let (snaps, std) = prepare_snapshots(trajectories, spec)?;
    fit_ridge(&snaps, spec.lambda, &std)
}

/// One row of a ridge sweep.
#[derive(Clone, Copy, Debug)]
pub struct RidgeSweepRow {
    pub lambda: f64,
    pub spectral_radius: f64,
    pub k_fro_norm: f64,
    pub fit_residual: f64,
}

/// Fit the same snapshot set at each ridge coefficient and report
/// stability diagnostics per fit.
pub fn sweep_ridge(
    trajectories: &[Trajectory],
    spec: &KoopmanFitSpec,
    lambdas: &[f64],
) -> Result<Vec<RidgeSweepRow>> {
    if lambdas.is_empty() {
        return Err(Error::Config("ridge sweep needs at least one coefficient".into()));
    }
    let (snaps, std) = prepare_snapshots(trajectories, spec)?;
    lambdas
        .iter()
        .map(|&lambda| {
            let model = fit_ridge(&snaps, lambda, &std)?;
            Ok(RidgeSweepRow {
                lambda,
                spectral_radius: spectral_radius(&model),
                k_fro_norm: model.k_fro_norm(),
                fit_residual: model.fit_residual,
            })
        })
        .collect()
}

/// Settings for assembling goal-estimator training windows.
#[derive(Clone, Copy, Debug)]
pub struct GoalDataSpec {
    pub history_len: usize,
    pub horizon: usize,
    pub window_stride: usize,
    /// 0 disables context features (pedestrian profile).
    pub context_slots: usize,
    pub context_radius: f64,
}

/// Ego-standardized context around a window anchor, or None for
/// history-only profiles.
fn window_context(
    window: &Window,
    pose: &Pose2,
    std: &Standardizer,
    spec: &GoalDataSpec,
    context: Option<&HashMap<i64, Vec<Vector2<f64>>>>,
) -> Result<Option<ContextSet>> {
    if spec.context_slots == 0 {
        return Ok(None);
    }
    let empty = Vec::new();
    let candidates = context
        .and_then(|m| m.get(&window.anchor_frame))
        .unwrap_or(&empty);
    let query = *window.history.last().expect("nonempty history");
    let selected = select_context(query, candidates, spec.context_radius, spec.context_slots)?;
    Ok(Some(ContextSet {
        points: selected
            .points
            .iter()
            .map(|&p| std.apply(crate::geom::ego_transform_point(pose, p)))
            .collect(),
        radius: selected.radius,
    }))
}

/// Per-window ego-standardized features and goals for estimator
/// training.
pub fn build_goal_dataset(
    trajectories: &[Trajectory],
    spec: &GoalDataSpec,
    std: &Standardizer,
    context: Option<&HashMap<i64, Vec<Vector2<f64>>>>,
) -> Result<GoalDataset> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut goals = Vec::new();
    for traj in trajectories {
        for window in sliding_windows(traj, spec.history_len, spec.horizon, spec.window_stride) {
            let pose = anchor_pose(&window.history, spec.history_len - 1)
                .or_else(|_| anchor_pose(&traj.positions, 0))?;
            let hist_std: Vec<Vector2<f64>> = window
                .history
                .iter()
                .map(|&q| std.apply(crate::geom::ego_transform_point(&pose, q)))
                .collect();
            let goal_world = window.future[spec.horizon - 1];
            let goal_std = std.apply(crate::geom::ego_transform_point(&pose, goal_world));
            let ctx = window_context(&window, &pose, std, spec, context)?;
            rows.push(goal_features(&hist_std, ctx.as_ref(), spec.context_slots));
            goals.push(goal_std);
        }
    }
    if rows.is_empty() {
        return Err(Error::EmptyDataset(
            "no training window long enough for the requested horizons".into(),
        ));
    }
    let width = rows[0].len();
    let mut features = nalgebra::DMatrix::zeros(rows.len(), width);
    for (i, row) in rows.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            features[(i, j)] = *v;
        }
    }
    Ok(GoalDataset { features, goals })
}

/// Train a goal model end to end from world-frame trajectories, using
/// the shared pipeline standardizer.
pub fn train_goal_model(
    trajectories: &[Trajectory],
    agent_class: AgentClass,
    data_spec: &GoalDataSpec,
    hidden: &[usize],
    cfg: &TrainConfig,
    context: Option<&HashMap<i64, Vec<Vector2<f64>>>>,
) -> Result<(GoalModel, TrainReport)> {
    let (std, _) = frame_standardizer(trajectories, data_spec.history_len)?;
    let dataset = build_goal_dataset(trajectories, data_spec, &std, context)?;
    let input_dim = 2 * data_spec.history_len + 3 * data_spec.context_slots;
    let mut net = MdnNetwork::new(input_dim, hidden, cfg.mixtures, cfg.seed)?;
    let report = train(&mut net, &dataset, cfg)?;
    Ok((
        GoalModel {
            net,
            agent_class,
            history_len: data_spec.history_len,
            context_slots: data_spec.context_slots,
            context_radius: data_spec.context_radius,
            standardizer: std,
            seed: cfg.seed,
        },
        report,
    ))
}

/// World-frame context set around a forecast origin, selected from a
/// per-frame candidate map (used by the CLI at predict time).
pub fn context_for(
    query: Vector2<f64>,
    frame: i64,
    slots: usize,
    radius: f64,
    context: Option<&HashMap<i64, Vec<Vector2<f64>>>>,
) -> Result<Option<ContextSet>> {
    if slots == 0 {
        return Ok(None);
    }
    let empty = Vec::new();
    let candidates = context.and_then(|m| m.get(&frame)).unwrap_or(&empty);
    Ok(Some(select_context(query, candidates, radius, slots)?))
}
