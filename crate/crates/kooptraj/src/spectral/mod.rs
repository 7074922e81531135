//! Eigen-analysis of the fitted transition matrix: spectral-radius
//! stability diagnostics and per-mode trajectory decomposition.

pub mod eig;

use nalgebra::{DMatrix, DVector, Vector2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::edmd::KoopmanModel;
use crate::error::{Error, Result};
use crate::observables::LiftedVector;

/// Eigenvector-basis condition number above which the decomposition is
/// marked non-diagonalizable and mode-resolved operations refuse to run.
pub const COND_FLAG_LIMIT: f64 = 1e10;
/// Relative eigen-residual above which the same flag is raised.
pub const RESIDUAL_FLAG_LIMIT: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeClass {
    Persistent,
    Transient,
    Intermediate,
}

impl std::fmt::Display for ModeClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ModeClass::Persistent => "persistent",
            ModeClass::Transient => "transient",
            ModeClass::Intermediate => "intermediate",
        };
        f.write_str(s)
    }
}

/// Magnitude thresholds for mode classification.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifyThresholds {
    pub persistent_min: f64,
    pub transient_max: f64,
}

impl Default for ClassifyThresholds {
    fn default() -> Self {
        Self {
            persistent_min: 0.8,
            transient_max: 0.3,
        }
    }
}

impl ClassifyThresholds {
    pub fn classify(&self, magnitude: f64) -> ModeClass {
        if magnitude >= self.persistent_min {
            ModeClass::Persistent
        } else if magnitude <= self.transient_max {
            ModeClass::Transient
        } else {
            ModeClass::Intermediate
        }
    }
}

#[derive(Clone, Debug)]
pub struct SpectralDecomposition {
    /// Descending by magnitude, ties by descending real part.
    pub eigenvalues: Vec<Complex64>,
    /// Right eigenvectors as columns.
    pub right_vectors: DMatrix<Complex64>,
    /// Rows of the inverse eigenvector matrix.
    pub left_rows: DMatrix<Complex64>,
    /// Condition number of the eigenvector basis.
    pub v_condition: f64,
    /// `||K V - V diag(lambda)||` relative to `||K||`.
    pub eigen_residual: f64,
    /// Set when the basis is too ill-conditioned to trust mode-resolved
    /// results.
    pub non_diagonalizable: bool,
}

impl SpectralDecomposition {
    pub fn spectral_radius(&self) -> f64 {
        self.eigenvalues.first().map(|l| l.norm()).unwrap_or(0.0)
    }
}

/// Eigendecomposition of a model's transition matrix.
pub fn decompose(model: &KoopmanModel) -> Result<SpectralDecomposition> {
    decompose_matrix(&model.k)
}

pub fn decompose_matrix(k: &DMatrix<f64>) -> Result<SpectralDecomposition> {
    if k.iter().any(|v| !v.is_finite()) {
        return Err(Error::NanInData("transition matrix".into()));
    }
    let eig = eig::eigendecompose(k)?;

    let svd = eig.vectors.clone().svd(false, false);
    let s_max = svd.singular_values.max();
    let s_min = svd.singular_values.min();
    let v_condition = if s_min > 0.0 { s_max / s_min } else { f64::INFINITY };

    let inverse = eig.vectors.clone().lu().try_inverse();
    let non_diagonalizable = !(v_condition < COND_FLAG_LIMIT)
        || eig.residual >= RESIDUAL_FLAG_LIMIT
        || inverse.is_none();
    let p = k.nrows();
    let left_rows =
        inverse.unwrap_or_else(|| DMatrix::from_element(p, p, Complex64::new(0.0, 0.0)));

    Ok(SpectralDecomposition {
        eigenvalues: eig.values,
        right_vectors: eig.vectors,
        left_rows,
        v_condition,
        eigen_residual: eig.residual,
        non_diagonalizable,
    })
}

/// Largest eigenvalue magnitude of the transition matrix.
pub fn spectral_radius(model: &KoopmanModel) -> f64 {
    spectral_radius_matrix(&model.k)
}

pub fn spectral_radius_matrix(k: &DMatrix<f64>) -> f64 {
    if k.nrows() == 0 {
        return 0.0;
    }
    match eig::complex_eigenvalues_checked(k) {
        Ok(values) => values.iter().map(|l| l.norm()).fold(0.0, f64::max),
        Err(_) => f64::NAN,
    }
}

/// One mode's isolated projected trajectory over the rollout horizon.
/// Conjugate pairs are merged into a single real curve reported under
/// the eigenvalue with positive imaginary part.
#[derive(Clone, Debug)]
pub struct ModeContribution {
    pub mode_index: usize,
    pub eigenvalue: Complex64,
    pub curve: Vec<Vector2<f64>>,
    pub magnitude: f64,
    pub class: ModeClass,
}

/// Per-mode projected contributions of a lifted initial state over
/// `horizon` steps. Their sum reproduces the full projected rollout.
pub fn mode_rollout(
    model: &KoopmanModel,
    decomp: &SpectralDecomposition,
    z0: &LiftedVector,
    horizon: usize,
) -> Result<Vec<ModeContribution>> {
    mode_rollout_with(model, decomp, z0, horizon, &ClassifyThresholds::default())
}

pub fn mode_rollout_with(
    model: &KoopmanModel,
    decomp: &SpectralDecomposition,
    z0: &LiftedVector,
    horizon: usize,
    thresholds: &ClassifyThresholds,
) -> Result<Vec<ModeContribution>> {
    if decomp.non_diagonalizable {
        return Err(Error::NonDiagonalizable {
            cond: decomp.v_condition,
        });
    }
    let p = model.lifted_dim();
    if z0.len() != p {
        return Err(Error::ShapeMismatch {
            what: "lifted vector vs model",
            expected: p,
            got: z0.len(),
        });
    }
    let zc = DVector::from_iterator(p, z0.iter().map(|&v| Complex64::new(v, 0.0)));
    let coeffs = &decomp.left_rows * zc;
    let slot = model.spec.newest_slot();

    let scale = decomp.spectral_radius().max(1.0);
    let pair_tol = 1e-10 * scale;

    let mut contributions = Vec::new();
    let mut consumed = vec![false; p];
    for i in 0..p {
        if consumed[i] {
            continue;
        }
        let lambda = decomp.eigenvalues[i];
        let mut paired = false;
        if lambda.im.abs() > 0.0 {
            if let Some(j) = (0..p).find(|&j| {
                j != i && !consumed[j] && (decomp.eigenvalues[j] - lambda.conj()).norm() <= pair_tol
            }) {
                consumed[j] = true;
                paired = true;
            }
        }
        consumed[i] = true;

        // Report a merged pair under its +Im eigenvalue.
        let rep_lambda = if paired && lambda.im < 0.0 { lambda.conj() } else { lambda };

        let vx = decomp.right_vectors[(slot, i)];
        let vy = decomp.right_vectors[(slot + 1, i)];
        let c = coeffs[i];
        let mut curve = Vec::with_capacity(horizon);
        let mut lam_pow = Complex64::new(1.0, 0.0);
        for _ in 0..horizon {
            lam_pow *= decomp.eigenvalues[i];
            let term_x = vx * lam_pow * c;
            let term_y = vy * lam_pow * c;
            let point = if paired {
                Vector2::new(2.0 * term_x.re, 2.0 * term_y.re)
            } else {
                Vector2::new(term_x.re, term_y.re)
            };
            curve.push(point);
        }
        let magnitude = rep_lambda.norm();
        contributions.push(ModeContribution {
            mode_index: i,
            eigenvalue: rep_lambda,
            curve,
            magnitude,
            class: thresholds.classify(magnitude),
        });
    }
    Ok(contributions)
}

/// Per-mode classification of a decomposition under the given thresholds.
pub fn classify_modes(
    decomp: &SpectralDecomposition,
    thresholds: &ClassifyThresholds,
) -> Vec<ModeClass> {
    decomp
        .eigenvalues
        .iter()
        .map(|l| thresholds.classify(l.norm()))
        .collect()
}
