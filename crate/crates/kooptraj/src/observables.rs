//! The lifting dictionary and the projection map between physical and
//! lifted coordinates.
//!
//! Lifted layout, in this fixed order:
//!
//! ```text
//! z = [ h_1x, h_1y, ..., h_Hx, h_Hy,            linear history block (oldest -> newest)
//!       h_1x^2, h_1y^2, ..., h_Hx^2, h_Hy^2,    element-wise squares (when enabled)
//!       g_x, g_y ]                              goal block
//! ```
//!
//! The projection map reads the *newest* history slot, which after one
//! Koopman step holds the one-step position prediction.

use nalgebra::{DVector, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Current serialized layout of the lifted vector.
pub const LAYOUT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DictionarySpec {
    pub history_len: usize,
    pub state_dim: usize,
    pub goal_dim: usize,
    pub include_quadratic: bool,
}

impl DictionarySpec {
    pub fn new(history_len: usize, include_quadratic: bool) -> Self {
        Self {
            history_len,
            state_dim: 2,
            goal_dim: 2,
            include_quadratic,
        }
    }

    /// Total lifted dimension p.
    pub fn lifted_dim(&self) -> usize {
        let linear = self.state_dim * self.history_len;
        linear + if self.include_quadratic { linear } else { 0 } + self.goal_dim
    }

    /// Width of the linear history block.
    pub fn linear_len(&self) -> usize {
        self.state_dim * self.history_len
    }

    /// Index of the first entry of the newest history position.
    pub fn newest_slot(&self) -> usize {
        self.state_dim * (self.history_len - 1)
    }

    /// Index of the first goal entry.
    pub fn goal_slot(&self) -> usize {
        self.lifted_dim() - self.goal_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.history_len < 1 {
            return Err(Error::InvalidParam("history length must be >= 1".into()));
        }
        if self.state_dim != 2 || self.goal_dim != 2 {
            return Err(Error::InvalidParam(
                "only planar states (d = 2) are supported".into(),
            ));
        }
        Ok(())
    }
}

/// History window plus temporal goal: the autonomous Koopman state.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedState {
    /// H positions, oldest first, newest last.
    pub history: Vec<Vector2<f64>>,
    pub goal: Vector2<f64>,
}

impl AugmentedState {
    pub fn new(history: Vec<Vector2<f64>>, goal: Vector2<f64>) -> Self {
        Self { history, goal }
    }

    pub fn newest(&self) -> Vector2<f64> {
        *self.history.last().expect("non-empty history")
    }
}

pub type LiftedVector = DVector<f64>;

/// Lift an augmented state into dictionary coordinates.
pub fn lift(state: &AugmentedState, spec: &DictionarySpec) -> Result<LiftedVector> {
    spec.validate()?;
    if state.history.len() != spec.history_len {
        return Err(Error::ShapeMismatch {
            what: "history length vs dictionary spec",
            expected: spec.history_len,
            got: state.history.len(),
        });
    }
    let mut z = DVector::zeros(spec.lifted_dim());
    for (i, p) in state.history.iter().enumerate() {
        if !p.x.is_finite() || !p.y.is_finite() {
            return Err(Error::NonFinite("augmented state history".into()));
        }
        z[2 * i] = p.x;
        z[2 * i + 1] = p.y;
        if spec.include_quadratic {
            let off = spec.linear_len();
            z[off + 2 * i] = p.x * p.x;
            z[off + 2 * i + 1] = p.y * p.y;
        }
    }
    if !state.goal.x.is_finite() || !state.goal.y.is_finite() {
        return Err(Error::NonFinite("augmented state goal".into()));
    }
    let g = spec.goal_slot();
    z[g] = state.goal.x;
    z[g + 1] = state.goal.y;
    Ok(z)
}

/// Extract the newest history position from a lifted vector.
pub fn project(z: &LiftedVector, spec: &DictionarySpec) -> Result<Vector2<f64>> {
    if z.len() != spec.lifted_dim() {
        return Err(Error::ShapeMismatch {
            what: "lifted vector length",
            expected: spec.lifted_dim(),
            got: z.len(),
        });
    }
    let s = spec.newest_slot();
    Ok(Vector2::new(z[s], z[s + 1]))
}

/// Read the goal entries of a lifted vector.
pub fn goal_of(z: &LiftedVector, spec: &DictionarySpec) -> Vector2<f64> {
    let g = spec.goal_slot();
    Vector2::new(z[g], z[g + 1])
}

/// Overwrite the goal entries of a lifted vector.
pub fn write_goal(z: &mut LiftedVector, spec: &DictionarySpec, goal: Vector2<f64>) {
    let g = spec.goal_slot();
    z[g] = goal.x;
    z[g + 1] = goal.y;
}

/// Rebuild the history positions from the linear block alone.
pub fn history_from_linear(z: &LiftedVector, spec: &DictionarySpec) -> Vec<Vector2<f64>> {
    (0..spec.history_len)
        .map(|i| Vector2::new(z[2 * i], z[2 * i + 1]))
        .collect()
}
