//! The end-to-end two-stage forecast: sample goals from the mixture
//! estimator, lift the goal-augmented history, roll the lifted state
//! forward under the transition matrix, project each step back to
//! positions, and return K candidate trajectories in the world frame.
//!
//! All numeric work happens in standardized ego coordinates; the world
//! frame is restored at the end by inverting the standardizer and the
//! ego transform.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use std::time::Instant;

use crate::edmd::KoopmanModel;
use crate::error::{Error, Result};
use crate::geom::{
    ego_inverse_point, ego_transform_point, heading_from_displacement, ContextSet, Pose2,
};
use crate::mdn::{expected_goal, sample_goals_rng, GoalModel};
use crate::observables::{
    goal_of, history_from_linear, lift, project, write_goal, AugmentedState, LiftedVector,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RolloutMode {
    /// Pure matrix powers of the lifted state.
    Linear,
    /// Re-lift after every step: quadratic terms refreshed from the
    /// predicted position, goal entries held fixed.
    Relift,
}

impl std::str::FromStr for RolloutMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "linear" => Ok(RolloutMode::Linear),
            "relift" => Ok(RolloutMode::Relift),
            other => Err(Error::Config(format!("unknown rollout mode `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoalMode {
    Sampled,
    Expected,
}

impl std::str::FromStr for GoalMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sampled" => Ok(GoalMode::Sampled),
            "expected" => Ok(GoalMode::Expected),
            other => Err(Error::Config(format!("unknown goal mode `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ForecastConfig {
    pub history_len: usize,
    pub horizon: usize,
    pub num_samples: usize,
    pub rollout_mode: RolloutMode,
    pub goal_mode: GoalMode,
    /// None applies the mode default: on for relift, off for linear.
    pub goal_clamp: Option<bool>,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        Self {
            history_len: 8,
            horizon: 12,
            num_samples: 20,
            rollout_mode: RolloutMode::Linear,
            goal_mode: GoalMode::Sampled,
            goal_clamp: None,
        }
    }
}

impl ForecastConfig {
    /// Dataset horizon presets.
    pub fn preset(name: &str) -> Option<Self> {
        let (history_len, horizon) = match name {
            "eth-ucy" => (8, 12),
            "nuscenes" => (4, 12),
            "waymo" => (10, 30),
            _ => return None,
        };
        Some(Self { history_len, horizon, ..Self::default() })
    }

    pub fn goal_clamp_effective(&self) -> bool {
        self.goal_clamp.unwrap_or(matches!(self.rollout_mode, RolloutMode::Relift))
    }

    pub fn validate(&self) -> Result<()> {
        if self.history_len < 1 || self.horizon < 1 || self.num_samples < 1 {
            return Err(Error::InvalidParam(
                "history, horizon, and sample count must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// K candidate world-frame trajectories plus the goals that produced
/// them and the lifted trace of each rollout.
#[derive(Clone, Debug)]
pub struct Forecast {
    pub candidates: Vec<Vec<Vector2<f64>>>,
    pub goals: Vec<Vector2<f64>>,
    pub lifted: Vec<Vec<LiftedVector>>,
}

/// Wall-clock nanoseconds per pipeline stage of one forecast call.
#[derive(Clone, Copy, Debug, Default)]
pub struct StageNanos {
    pub goal_sampling: u128,
    pub lift: u128,
    pub rollout: u128,
    pub project: u128,
}

/// Propagate a lifted state `horizon` steps.
pub fn rollout(
    model: &KoopmanModel,
    z0: &LiftedVector,
    horizon: usize,
    mode: RolloutMode,
) -> Result<Vec<LiftedVector>> {
    let clamp = matches!(mode, RolloutMode::Relift);
    rollout_clamped(model, z0, horizon, mode, clamp)
}

fn rollout_clamped(
    model: &KoopmanModel,
    z0: &LiftedVector,
    horizon: usize,
    mode: RolloutMode,
    goal_clamp: bool,
) -> Result<Vec<LiftedVector>> {
    let p = model.lifted_dim();
    if z0.len() != p {
        return Err(Error::ShapeMismatch {
            what: "lifted vector vs model",
            expected: p,
            got: z0.len(),
        });
    }
    let spec = &model.spec;
    let mut out = Vec::with_capacity(horizon);
    match mode {
        RolloutMode::Linear => {
            let fixed_goal = goal_of(z0, spec);
            let mut z = z0.clone();
            for _ in 0..horizon {
                z = &model.k * &z;
                if goal_clamp {
                    write_goal(&mut z, spec, fixed_goal);
                }
                out.push(z.clone());
            }
        }
        RolloutMode::Relift => {
            let mut state = AugmentedState::new(history_from_linear(z0, spec), goal_of(z0, spec));
            for _ in 0..horizon {
                let z = lift(&state, spec)?;
                let z_next = &model.k * &z;
                let predicted = project(&z_next, spec)?;
                state.history.remove(0);
                state.history.push(predicted);
                if !goal_clamp {
                    state.goal = goal_of(&z_next, spec);
                }
                out.push(lift(&state, spec)?);
            }
        }
    }
    Ok(out)
}

/// Two-stage forecast for one agent from its world-frame history.
/// `context` carries world-frame context points already selected around
/// the agent. Deterministic under the seed.
pub fn forecast(
    history_world: &[Vector2<f64>],
    context_world: Option<&ContextSet>,
    goal_model: &GoalModel,
    koopman: &KoopmanModel,
    cfg: &ForecastConfig,
    seed: u64,
) -> Result<Forecast> {
    forecast_instrumented(history_world, context_world, goal_model, koopman, cfg, seed)
        .map(|(f, _)| f)
}

pub fn forecast_instrumented(
    history_world: &[Vector2<f64>],
    context_world: Option<&ContextSet>,
    goal_model: &GoalModel,
    koopman: &KoopmanModel,
    cfg: &ForecastConfig,
    seed: u64,
) -> Result<(Forecast, StageNanos)> {
    cfg.validate()?;
    let h = cfg.history_len;
    if history_world.len() < h {
        return Err(Error::ShapeMismatch {
            what: "history length vs forecast config",
            expected: h,
            got: history_world.len(),
        });
    }
    if koopman.spec.history_len != h || goal_model.history_len != h {
        return Err(Error::ModelMismatch(format!(
            "history length disagrees: config {h}, transition model {}, goal model {}",
            koopman.spec.history_len, goal_model.history_len
        )));
    }
    if !koopman.standardizer.approx_eq(&goal_model.standardizer, 1e-9) {
        return Err(Error::ModelMismatch(
            "goal model and transition model were fitted with different standardizers".into(),
        ));
    }

    let mut stages = StageNanos::default();
    let std = &koopman.standardizer;
    let history = &history_world[history_world.len() - h..];

    // Ego anchor at the newest history point.
    let heading = if h >= 2 {
        heading_from_displacement(history[h - 2], history[h - 1])
    } else {
        0.0
    };
    let pose = Pose2::new(history[h - 1], heading)?;
    let hist_std: Vec<Vector2<f64>> = history
        .iter()
        .map(|&q| std.apply(ego_transform_point(&pose, q)))
        .collect();
    if hist_std.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
        return Err(Error::NonFinite("forecast history".into()));
    }
    let ctx_std = context_world.map(|ctx| ContextSet {
        points: ctx
            .points
            .iter()
            .map(|&q| std.apply(ego_transform_point(&pose, q)))
            .collect(),
        radius: ctx.radius,
    });

    let t0 = Instant::now();
    let mixture = goal_model.mixture(&hist_std, ctx_std.as_ref())?;
    let goals_std: Vec<Vector2<f64>> = match cfg.goal_mode {
        GoalMode::Sampled => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            sample_goals_rng(&mixture, cfg.num_samples, &mut rng)
        }
        GoalMode::Expected => vec![expected_goal(&mixture); cfg.num_samples],
    };
    stages.goal_sampling = t0.elapsed().as_nanos();

    let clamp = cfg.goal_clamp_effective();
    let mut candidates = Vec::with_capacity(cfg.num_samples);
    let mut lifted_traces = Vec::with_capacity(cfg.num_samples);
    for goal in &goals_std {
        let t1 = Instant::now();
        let z0 = lift(&AugmentedState::new(hist_std.clone(), *goal), &koopman.spec)?;
        stages.lift += t1.elapsed().as_nanos();

        let t2 = Instant::now();
        let trace = rollout_clamped(koopman, &z0, cfg.horizon, cfg.rollout_mode, clamp)?;
        stages.rollout += t2.elapsed().as_nanos();

        let t3 = Instant::now();
        let mut path = Vec::with_capacity(cfg.horizon);
        for z in &trace {
            let pos_std = project(z, &koopman.spec)?;
            path.push(ego_inverse_point(&pose, std.unapply(pos_std)));
        }
        stages.project += t3.elapsed().as_nanos();

        candidates.push(path);
        lifted_traces.push(trace);
    }

    let goals = goals_std
        .iter()
        .map(|&g| ego_inverse_point(&pose, std.unapply(g)))
        .collect();
    Ok((
        Forecast { candidates, goals, lifted: lifted_traces },
        stages,
    ))
}

/// Best-of-K displacement errors against ground truth. `min_ade` and
/// `min_fde` are minimized independently; `best_index` is the
/// ADE-minimizing candidate, ties to the lowest index.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BestOfK {
    pub best_index: usize,
    pub min_ade: f64,
    pub min_fde: f64,
}

pub fn best_of_k(candidates: &[Vec<Vector2<f64>>], truth: &[Vector2<f64>]) -> Result<BestOfK> {
    if candidates.is_empty() || truth.is_empty() {
        return Err(Error::InvalidParam("need at least one candidate and a nonempty truth".into()));
    }
    let steps = truth.len();
    let mut best_index = 0;
    let mut min_ade = f64::INFINITY;
    let mut min_fde = f64::INFINITY;
    for (k, cand) in candidates.iter().enumerate() {
        if cand.len() != steps {
            return Err(Error::ShapeMismatch {
                what: "candidate length vs ground truth",
                expected: steps,
                got: cand.len(),
            });
        }
        let ade = cand
            .iter()
            .zip(truth)
            .map(|(c, t)| (c - t).norm())
            .sum::<f64>()
            / steps as f64;
        let fde = (cand[steps - 1] - truth[steps - 1]).norm();
        if ade < min_ade {
            min_ade = ade;
            best_index = k;
        }
        if fde < min_fde {
            min_fde = fde;
        }
    }
    Ok(BestOfK { best_index, min_ade, min_fde })
}
