//! Ego-frame alignment, coordinate standardization, and nearest-point
//! context selection.
//!
//! All downstream learning happens in standardized ego coordinates: the
//! agent's current position maps to the origin and its heading to the
//! +x axis, after which coordinates are shifted and scaled by
//! training-set statistics.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Displacements shorter than this do not define a heading.
pub const HEADING_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentClass {
    Pedestrian,
    Vehicle,
    Cyclist,
}

impl std::str::FromStr for AgentClass {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pedestrian" => Ok(AgentClass::Pedestrian),
            "vehicle" => Ok(AgentClass::Vehicle),
            "cyclist" => Ok(AgentClass::Cyclist),
            other => Err(Error::Config(format!("unknown agent class `{other}`"))),
        }
    }
}

impl std::fmt::Display for AgentClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            AgentClass::Pedestrian => "pedestrian",
            AgentClass::Vehicle => "vehicle",
            AgentClass::Cyclist => "cyclist",
        };
        f.write_str(s)
    }
}

/// Normalize an angle to (-pi, pi].
pub fn normalize_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut r = a % two_pi;
    if r > std::f64::consts::PI {
        r -= two_pi;
    } else if r <= -std::f64::consts::PI {
        r += two_pi;
    }
    r
}

/// A planar pose: position plus heading, heading normalized to (-pi, pi].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose2 {
    position: Vector2<f64>,
    heading: f64,
}

impl Pose2 {
    pub fn new(position: Vector2<f64>, heading: f64) -> Result<Self> {
        if !position.x.is_finite() || !position.y.is_finite() || !heading.is_finite() {
            return Err(Error::NonFinite("pose".into()));
        }
        Ok(Self {
            position,
            heading: normalize_angle(heading),
        })
    }

    pub fn position(&self) -> Vector2<f64> {
        self.position
    }

    pub fn heading(&self) -> f64 {
        self.heading
    }

    /// Rotation matrix of the heading; orthonormal with determinant +1.
    pub fn rotation(&self) -> Matrix2<f64> {
        let (s, c) = self.heading.sin_cos();
        Matrix2::new(c, -s, s, c)
    }
}

/// Heading of the displacement `curr - prev`, or 0 when the displacement
/// is shorter than [`HEADING_EPS`].
pub fn heading_from_displacement(prev: Vector2<f64>, curr: Vector2<f64>) -> f64 {
    let d = curr - prev;
    if d.norm() < HEADING_EPS {
        0.0
    } else {
        d.y.atan2(d.x)
    }
}

/// Map one point into the pose's ego frame: `R^T (q - p)`.
pub fn ego_transform_point(pose: &Pose2, q: Vector2<f64>) -> Vector2<f64> {
    pose.rotation().transpose() * (q - pose.position)
}

/// Inverse of [`ego_transform_point`]: `R q + p`.
pub fn ego_inverse_point(pose: &Pose2, q: Vector2<f64>) -> Vector2<f64> {
    pose.rotation() * q + pose.position
}

/// Map points into the pose's ego frame. The pose position goes to (0,0)
/// and a point one unit ahead along the heading goes to (1,0).
pub fn ego_transform(pose: &Pose2, points: &[Vector2<f64>]) -> Result<Vec<Vector2<f64>>> {
    check_finite(points, "ego_transform input")?;
    Ok(points.iter().map(|q| ego_transform_point(pose, *q)).collect())
}

/// Map ego-frame points back to the world frame.
pub fn ego_inverse(pose: &Pose2, points: &[Vector2<f64>]) -> Result<Vec<Vector2<f64>>> {
    check_finite(points, "ego_inverse input")?;
    Ok(points.iter().map(|q| ego_inverse_point(pose, *q)).collect())
}

fn check_finite(points: &[Vector2<f64>], what: &str) -> Result<()> {
    if points.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
        return Err(Error::NonFinite(what.into()));
    }
    Ok(())
}

/// A time-stamped 2-D position sequence for one agent.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub agent_id: String,
    pub times: Vec<i64>,
    pub positions: Vec<Vector2<f64>>,
    pub agent_class: AgentClass,
}

impl Trajectory {
    /// Validates: length >= 2, times strictly increasing with constant
    /// stride, finite positions.
    pub fn new(
        agent_id: impl Into<String>,
        times: Vec<i64>,
        positions: Vec<Vector2<f64>>,
        agent_class: AgentClass,
    ) -> Result<Self> {
        let agent_id = agent_id.into();
        if times.len() != positions.len() {
            return Err(Error::ShapeMismatch {
                what: "trajectory times vs positions",
                expected: times.len(),
                got: positions.len(),
            });
        }
        if times.len() < 2 {
            return Err(Error::InvalidParam(format!(
                "trajectory `{agent_id}` has length {} (< 2)",
                times.len()
            )));
        }
        let stride = times[1] - times[0];
        if stride <= 0 {
            return Err(Error::InvalidParam(format!(
                "trajectory `{agent_id}` times not strictly increasing"
            )));
        }
        for w in times.windows(2) {
            if w[1] - w[0] != stride {
                return Err(Error::InvalidParam(format!(
                    "trajectory `{agent_id}` has non-constant frame stride ({} vs {stride})",
                    w[1] - w[0]
                )));
            }
        }
        check_finite(&positions, "trajectory positions")?;
        Ok(Self {
            agent_id,
            times,
            positions,
            agent_class,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn stride(&self) -> i64 {
        self.times[1] - self.times[0]
    }

    /// Same trajectory with positions replaced (times and tags kept).
    pub fn with_positions(&self, positions: Vec<Vector2<f64>>) -> Result<Self> {
        Trajectory::new(
            self.agent_id.clone(),
            self.times.clone(),
            positions,
            self.agent_class,
        )
    }
}

/// Up to N nearest neighbor points around a query, sorted by ascending
/// distance. Stored in the caller's frame; `radius` records the query
/// radius used for selection.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextSet {
    pub points: Vec<Vector2<f64>>,
    pub radius: f64,
}

impl ContextSet {
    pub fn empty(radius: f64) -> Self {
        Self {
            points: Vec::new(),
            radius,
        }
    }

    pub fn count(&self) -> usize {
        self.points.len()
    }

    /// Fixed-width slots for the goal estimator: `(x, y, presence)` per
    /// slot, zero-padded past `count()`.
    pub fn padded_slots(&self, n_slots: usize) -> Vec<[f64; 3]> {
        (0..n_slots)
            .map(|i| match self.points.get(i) {
                Some(p) => [p.x, p.y, 1.0],
                None => [0.0, 0.0, 0.0],
            })
            .collect()
    }
}

/// Select the at most `n` nearest candidates within `radius` of `query`,
/// ascending by distance; ties broken by input order.
pub fn select_context(
    query: Vector2<f64>,
    candidates: &[Vector2<f64>],
    radius: f64,
    n: usize,
) -> Result<ContextSet> {
    if !(radius > 0.0) {
        return Err(Error::InvalidParam(format!("context radius {radius} must be > 0")));
    }
    if n < 1 {
        return Err(Error::InvalidParam("context size must be >= 1".into()));
    }
    check_finite(candidates, "select_context candidates")?;
    let mut within: Vec<(f64, usize)> = candidates
        .iter()
        .enumerate()
        .filter_map(|(i, p)| {
            let d = (p - query).norm();
            (d <= radius).then_some((d, i))
        })
        .collect();
    // Stable sort keeps input order for equal distances.
    within.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    within.truncate(n);
    Ok(ContextSet {
        points: within.iter().map(|&(_, i)| candidates[i]).collect(),
        radius,
    })
}

/// Per-axis shift/scale fit on training positions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: [f64; 2],
    pub std: [f64; 2],
}

impl Standardizer {
    pub fn identity() -> Self {
        Self {
            mean: [0.0, 0.0],
            std: [1.0, 1.0],
        }
    }

    /// Population mean and standard deviation per axis. Errors when an
    /// axis has zero variance.
    pub fn fit<'a, I>(positions: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Vector2<f64>>,
    {
        let (mean, std, count) = moments(positions);
        if count == 0 {
            return Err(Error::EmptyDataset("standardizer fit".into()));
        }
        for (axis, s) in ['x', 'y'].into_iter().zip(std) {
            if !(s > 0.0) {
                return Err(Error::ZeroVariance { axis });
            }
        }
        Ok(Self { mean, std })
    }

    /// Like [`Standardizer::fit`], but degenerate axes (std below
    /// `min_std`) fall back to std = 1 instead of erroring. Returns the
    /// standardizer and which axes were floored.
    pub fn fit_floored<'a, I>(positions: I, min_std: f64) -> Result<(Self, [bool; 2])>
    where
        I: IntoIterator<Item = &'a Vector2<f64>>,
    {
        let (mean, mut std, count) = moments(positions);
        if count == 0 {
            return Err(Error::EmptyDataset("standardizer fit".into()));
        }
        let mut floored = [false, false];
        for i in 0..2 {
            if !(std[i] > min_std) {
                std[i] = 1.0;
                floored[i] = true;
            }
        }
        Ok((Self { mean, std }, floored))
    }

    pub fn apply(&self, p: Vector2<f64>) -> Vector2<f64> {
        Vector2::new((p.x - self.mean[0]) / self.std[0], (p.y - self.mean[1]) / self.std[1])
    }

    pub fn unapply(&self, p: Vector2<f64>) -> Vector2<f64> {
        Vector2::new(p.x * self.std[0] + self.mean[0], p.y * self.std[1] + self.mean[1])
    }

    pub fn apply_all(&self, points: &[Vector2<f64>]) -> Vec<Vector2<f64>> {
        points.iter().map(|&p| self.apply(p)).collect()
    }

    pub fn unapply_all(&self, points: &[Vector2<f64>]) -> Vec<Vector2<f64>> {
        points.iter().map(|&p| self.unapply(p)).collect()
    }

    /// True when two standardizers agree to within `tol` per entry.
    pub fn approx_eq(&self, other: &Self, tol: f64) -> bool {
        (0..2).all(|i| {
            (self.mean[i] - other.mean[i]).abs() <= tol && (self.std[i] - other.std[i]).abs() <= tol
        })
    }
}

fn moments<'a, I>(positions: I) -> ([f64; 2], [f64; 2], usize)
where
    I: IntoIterator<Item = &'a Vector2<f64>>,
{
    let mut sum = [0.0f64; 2];
    let mut sum_sq = [0.0f64; 2];
    let mut count = 0usize;
    for p in positions {
        sum[0] += p.x;
        sum[1] += p.y;
        sum_sq[0] += p.x * p.x;
        sum_sq[1] += p.y * p.y;
        count += 1;
    }
    if count == 0 {
        return ([0.0; 2], [0.0; 2], 0);
    }
    let n = count as f64;
    let mean = [sum[0] / n, sum[1] / n];
    let var = [
        (sum_sq[0] / n - mean[0] * mean[0]).max(0.0),
        (sum_sq[1] / n - mean[1] * mean[1]).max(0.0),
    ];
    ([mean[0], mean[1]], [var[0].sqrt(), var[1].sqrt()], count)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    #[test]
    fn ego_identity_pose_is_identity() {
        let pose = Pose2::new(Vector2::new(0.0, 0.0), 0.0).unwrap();
        let out = ego_transform(&pose, &[Vector2::new(3.0, 4.0)]).unwrap();
        assert_relative_eq!(out[0].x, 3.0, max_relative = 1e-12);
        assert_relative_eq!(out[0].y, 4.0, max_relative = 1e-12);
    }

    #[test]
    fn ego_quarter_turn_hand_computed() {
        // R = rot(pi/2); q - p = (0, 1); R^{-1} (q - p) = (1, 0)
        let pose = Pose2::new(Vector2::new(1.0, 1.0), FRAC_PI_2).unwrap();
        let out = ego_transform(&pose, &[Vector2::new(1.0, 2.0)]).unwrap();
        assert_relative_eq!(out[0].x, 1.0, epsilon = 1e-12);
        assert_relative_eq!(out[0].y, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn ego_maps_pose_position_to_origin() {
        let pose = Pose2::new(Vector2::new(-7.3, 2.9), 1.234).unwrap();
        let out = ego_transform(&pose, &[pose.position()]).unwrap();
        assert!(out[0].norm() < 1e-12);
    }

    #[test]
    fn ego_unit_ahead_maps_to_x_axis() {
        let pose = Pose2::new(Vector2::new(2.0, -1.0), 0.7).unwrap();
        let ahead = pose.position() + Vector2::new(0.7f64.cos(), 0.7f64.sin());
        let out = ego_transform(&pose, &[ahead]).unwrap();
        assert_relative_eq!(out[0].x, 1.0, epsilon = 1e-12);
        assert_relative_eq!(out[0].y, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn ego_round_trip_examples() {
        let pose = Pose2::new(Vector2::new(1.0, 1.0), FRAC_PI_2).unwrap();
        let p = Vector2::new(3.0, 4.0);
        let round = ego_inverse(&pose, &ego_transform(&pose, &[p]).unwrap()).unwrap();
        assert!((round[0] - p).norm() < 1e-12);

        let pose = Pose2::new(Vector2::new(2.0, 0.0), PI).unwrap();
        let p = Vector2::new(1.0, 0.0);
        let round = ego_inverse(&pose, &ego_transform(&pose, &[p]).unwrap()).unwrap();
        assert!((round[0] - p).norm() < 1e-12);
    }

    #[test]
    fn ego_rejects_non_finite() {
        let pose = Pose2::new(Vector2::new(0.0, 0.0), 0.0).unwrap();
        assert!(ego_transform(&pose, &[Vector2::new(f64::NAN, 0.0)]).is_err());
        assert!(Pose2::new(Vector2::new(f64::INFINITY, 0.0), 0.0).is_err());
    }

    #[test]
    fn heading_normalized_to_half_open_interval() {
        assert_relative_eq!(Pose2::new(Vector2::zeros(), 3.0 * PI).unwrap().heading(), PI);
        assert_relative_eq!(Pose2::new(Vector2::zeros(), -PI).unwrap().heading(), PI);
        let r = Pose2::new(Vector2::zeros(), 0.3).unwrap().rotation();
        assert_relative_eq!(r.determinant(), 1.0, epsilon = 1e-12);
        assert!((r.transpose() * r - Matrix2::identity()).norm() < 1e-12);
    }

    #[test]
    fn select_context_nearest_two() {
        let cands = [
            Vector2::new(1.0, 0.0),
            Vector2::new(3.0, 0.0),
            Vector2::new(0.5, 0.0),
        ];
        let ctx = select_context(Vector2::zeros(), &cands, 2.0, 2).unwrap();
        assert_eq!(ctx.points, vec![Vector2::new(0.5, 0.0), Vector2::new(1.0, 0.0)]);
    }

    #[test]
    fn select_context_all_outside_radius() {
        let ctx = select_context(Vector2::zeros(), &[Vector2::new(5.0, 0.0)], 2.0, 3).unwrap();
        assert_eq!(ctx.count(), 0);
    }

    #[test]
    fn select_context_matches_exhaustive_sort() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let cands: Vec<Vector2<f64>> = (0..100)
            .map(|_| Vector2::new(rng.gen_range(-12.0..12.0), rng.gen_range(-12.0..12.0)))
            .collect();
        let query = Vector2::new(0.5, -0.25);
        let (r, n) = (10.0, 8);
        let ctx = select_context(query, &cands, r, n).unwrap();

        let mut expect: Vec<(f64, usize)> = cands
            .iter()
            .enumerate()
            .map(|(i, p)| ((p - query).norm(), i))
            .filter(|&(d, _)| d <= r)
            .collect();
        expect.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let expect: Vec<Vector2<f64>> = expect.iter().take(n).map(|&(_, i)| cands[i]).collect();
        assert_eq!(ctx.points, expect);
    }

    #[test]
    fn select_context_ties_keep_input_order() {
        let cands = [Vector2::new(1.0, 0.0), Vector2::new(0.0, 1.0), Vector2::new(-1.0, 0.0)];
        let ctx = select_context(Vector2::zeros(), &cands, 2.0, 3).unwrap();
        assert_eq!(ctx.points, cands.to_vec());
    }

    #[test]
    fn standardizer_hand_computed() {
        let pts = [
            Vector2::new(0.0, 0.0),
            Vector2::new(2.0, 0.0),
            Vector2::new(0.0, 2.0),
            Vector2::new(2.0, 2.0),
        ];
        let s = Standardizer::fit(pts.iter()).unwrap();
        assert_relative_eq!(s.mean[0], 1.0);
        assert_relative_eq!(s.mean[1], 1.0);
        assert_relative_eq!(s.std[0], 1.0);
        assert_relative_eq!(s.std[1], 1.0);
    }

    #[test]
    fn standardizer_idempotent_on_normalized_data() {
        let pts = [
            Vector2::new(-1.0, -1.0),
            Vector2::new(1.0, -1.0),
            Vector2::new(-1.0, 1.0),
            Vector2::new(1.0, 1.0),
        ];
        let s = Standardizer::fit(pts.iter()).unwrap();
        assert_relative_eq!(s.mean[0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(s.std[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(s.std[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn standardizer_zero_variance_names_axis() {
        let pts = [Vector2::new(3.0, 1.0), Vector2::new(3.0, 2.0)];
        match Standardizer::fit(pts.iter()) {
            Err(Error::ZeroVariance { axis }) => assert_eq!(axis, 'x'),
            other => panic!("expected zero-variance error, got {other:?}"),
        }
        let repeated = [Vector2::new(1.0, 1.0); 3];
        assert!(Standardizer::fit(repeated.iter()).is_err());
        let (s, floored) = Standardizer::fit_floored(repeated.iter(), 1e-9).unwrap();
        assert_eq!(floored, [true, true]);
        assert_eq!(s.std, [1.0, 1.0]);
    }

    #[test]
    fn standardized_training_set_has_zero_mean_unit_variance() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Vector2<f64>> = (0..500)
            .map(|_| Vector2::new(5.0 + rng.gen::<f64>() * 3.0, -2.0 + rng.gen::<f64>()))
            .collect();
        let s = Standardizer::fit(pts.iter()).unwrap();
        let std_pts = s.apply_all(&pts);
        let n = std_pts.len() as f64;
        let mean_x: f64 = std_pts.iter().map(|p| p.x).sum::<f64>() / n;
        let var_y: f64 = std_pts.iter().map(|p| p.y * p.y).sum::<f64>() / n
            - (std_pts.iter().map(|p| p.y).sum::<f64>() / n).powi(2);
        assert!(mean_x.abs() < 1e-9);
        assert!((var_y - 1.0).abs() < 1e-6);
    }

    #[test]
    fn trajectory_rejects_bad_stride() {
        let p = vec![Vector2::zeros(); 3];
        assert!(Trajectory::new("a", vec![0, 10, 21], p.clone(), AgentClass::Pedestrian).is_err());
        assert!(Trajectory::new("a", vec![0, 10, 20], p, AgentClass::Pedestrian).is_ok());
    }

    proptest! {
        #[test]
        fn ego_round_trip_is_identity(
            px in -100.0..100.0f64, py in -100.0..100.0f64,
            heading in -10.0..10.0f64,
            qx in -100.0..100.0f64, qy in -100.0..100.0f64,
        ) {
            let pose = Pose2::new(Vector2::new(px, py), heading).unwrap();
            let q = Vector2::new(qx, qy);
            let round = ego_inverse_point(&pose, ego_transform_point(&pose, q));
            prop_assert!((round - q).amax() < 1e-12);
        }

        #[test]
        fn context_distances_rigid_invariant(
            angle in -3.0..3.0f64,
            tx in -50.0..50.0f64, ty in -50.0..50.0f64,
            seed in 0u64..1000,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let cands: Vec<Vector2<f64>> = (0..30)
                .map(|_| Vector2::new(rng.gen_range(-8.0..8.0), rng.gen_range(-8.0..8.0)))
                .collect();
            let query = Vector2::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let pose = Pose2::new(Vector2::new(tx, ty), angle).unwrap();
            let moved: Vec<Vector2<f64>> = cands.iter().map(|&c| ego_inverse_point(&pose, c)).collect();
            let moved_query = ego_inverse_point(&pose, query);

            let a = select_context(query, &cands, 6.0, 5).unwrap();
            let b = select_context(moved_query, &moved, 6.0, 5).unwrap();
            prop_assert_eq!(a.count(), b.count());
            for (p, q) in a.points.iter().zip(&b.points) {
                let da = (p - query).norm();
                let db = (q - moved_query).norm();
                prop_assert!((da - db).abs() < 1e-9);
            }
        }

        #[test]
        fn standardizer_round_trip(
            mx in -10.0..10.0f64, my in -10.0..10.0f64,
            sx in 0.1..10.0f64, sy in 0.1..10.0f64,
            px in -100.0..100.0f64, py in -100.0..100.0f64,
        ) {
            let s = Standardizer { mean: [mx, my], std: [sx, sy] };
            let p = Vector2::new(px, py);
            prop_assert!((s.unapply(s.apply(p)) - p).amax() < 1e-12);
        }
    }
}
