//! Snapshot-pair construction and ridge-regularized least-squares fitting
//! of the lifted transition matrix, with a moment-matrix alternative.
//!
//! Both fit paths solve the normal equations `(Psi^T Psi + lambda I) K^T =
//! Psi^T Psi'`. The solver takes a symmetric positive-definite
//! factorization when the system is well conditioned (condition estimate
//! below 1e12) and falls back to a truncated-SVD pseudoinverse with
//! singular-value cutoff `1e-10 * sigma_max` otherwise.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geom::{Standardizer, Trajectory};
use crate::observables::{lift, AugmentedState, DictionarySpec, LiftedVector, LAYOUT_VERSION};

/// Condition-number threshold separating the Cholesky and SVD solve paths.
pub const COND_LIMIT: f64 = 1e12;
/// Relative singular-value cutoff for the pseudoinverse path.
pub const SVD_CUTOFF: f64 = 1e-10;

/// Lifted snapshot pairs: rows of `psi` are z_t, rows of `psi_next` are
/// z_{t+1}. Pairs never span two different agents' trajectories.
#[derive(Clone, Debug)]
pub struct SnapshotSet {
    pub spec: DictionarySpec,
    psi: DMatrix<f64>,
    psi_next: DMatrix<f64>,
}

impl SnapshotSet {
    pub fn from_rows(
        spec: DictionarySpec,
        rows: Vec<(LiftedVector, LiftedVector)>,
    ) -> Result<Self> {
        let p = spec.lifted_dim();
        let m = rows.len();
        let mut psi = DMatrix::zeros(m, p);
        let mut psi_next = DMatrix::zeros(m, p);
        for (i, (z, zn)) in rows.iter().enumerate() {
            if z.len() != p || zn.len() != p {
                return Err(Error::ShapeMismatch {
                    what: "snapshot row width",
                    expected: p,
                    got: z.len(),
                });
            }
            psi.row_mut(i).copy_from(&z.transpose());
            psi_next.row_mut(i).copy_from(&zn.transpose());
        }
        Ok(Self { spec, psi, psi_next })
    }

    pub fn len(&self) -> usize {
        self.psi.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn psi(&self) -> &DMatrix<f64> {
        &self.psi
    }

    pub fn psi_next(&self) -> &DMatrix<f64> {
        &self.psi_next
    }

    pub fn row_pair(&self, i: usize) -> (DVector<f64>, DVector<f64>) {
        (self.psi.row(i).transpose(), self.psi_next.row(i).transpose())
    }

    fn check_finite(&self) -> Result<()> {
        if self.psi.iter().chain(self.psi_next.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NanInData("snapshot matrices".into()));
        }
        Ok(())
    }
}

/// Build snapshot pairs from standardized trajectories.
///
/// One pair per index t where the trajectory provides H steps of history
/// through t and ground truth through t+1+P; the goal entries are
/// supervised from data as g_t = y_{t+P}, g_{t+1} = y_{t+1+P}. A
/// trajectory of length H+P+k contributes exactly k pairs; shorter ones
/// contribute none.
pub fn build_snapshots(
    trajectories: &[Trajectory],
    spec: &DictionarySpec,
    horizon: usize,
) -> Result<SnapshotSet> {
    spec.validate()?;
    if horizon < 1 {
        return Err(Error::InvalidParam("horizon must be >= 1".into()));
    }
    let h = spec.history_len;
    let mut rows = Vec::new();
    for traj in trajectories {
        let n = traj.len();
        if n < h + horizon + 1 {
            continue;
        }
        for t in (h - 1)..=(n - 2 - horizon) {
            let state_at = |t0: usize| {
                AugmentedState::new(
                    traj.positions[t0 + 1 - h..=t0].to_vec(),
                    traj.positions[t0 + horizon],
                )
            };
            let z = lift(&state_at(t), spec)?;
            let z_next = lift(&state_at(t + 1), spec)?;
            rows.push((z, z_next));
        }
    }
    SnapshotSet::from_rows(*spec, rows)
}

/// Fitted lifted transition matrix with everything needed to use it.
#[derive(Clone, Debug)]
pub struct KoopmanModel {
    /// Acts on column lifted vectors: z' = K z.
    pub k: DMatrix<f64>,
    pub spec: DictionarySpec,
    pub lambda: f64,
    pub standardizer: Standardizer,
    /// RMS one-step residual over the training pairs.
    pub fit_residual: f64,
}

impl KoopmanModel {
    pub fn lifted_dim(&self) -> usize {
        self.spec.lifted_dim()
    }

    pub fn k_fro_norm(&self) -> f64 {
        self.k.norm()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = KoopmanModelFile::from(self);
        std::fs::write(path, serde_json::to_string_pretty(&file)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: KoopmanModelFile = serde_json::from_str(&text)?;
        file.into_model()
    }
}

#[derive(Serialize, Deserialize)]
struct KoopmanModelFile {
    layout_version: u32,
    spec: DictionarySpec,
    lambda: f64,
    standardizer: Standardizer,
    fit_residual: f64,
    /// Row-major rows of K.
    k: Vec<Vec<f64>>,
}

impl From<&KoopmanModel> for KoopmanModelFile {
    fn from(m: &KoopmanModel) -> Self {
        Self {
            layout_version: LAYOUT_VERSION,
            spec: m.spec,
            lambda: m.lambda,
            standardizer: m.standardizer.clone(),
            fit_residual: m.fit_residual,
            k: (0..m.k.nrows())
                .map(|i| m.k.row(i).iter().copied().collect())
                .collect(),
        }
    }
}

impl KoopmanModelFile {
    fn into_model(self) -> Result<KoopmanModel> {
        if self.layout_version != LAYOUT_VERSION {
            return Err(Error::ModelMismatch(format!(
                "unsupported layout version {}",
                self.layout_version
            )));
        }
        let p = self.spec.lifted_dim();
        if self.k.len() != p || self.k.iter().any(|r| r.len() != p) {
            return Err(Error::ModelMismatch(format!(
                "K is not {p}x{p} as the dictionary spec requires"
            )));
        }
        let flat: Vec<f64> = self.k.iter().flatten().copied().collect();
        Ok(KoopmanModel {
            k: DMatrix::from_row_slice(p, p, &flat),
            spec: self.spec,
            lambda: self.lambda,
            standardizer: self.standardizer,
            fit_residual: self.fit_residual,
        })
    }
}

/// Solve `(G + lambda I) X = B` for X, choosing the factorization by a
/// condition estimate of the regularized Gram matrix.
fn solve_normal_eq(g: &DMatrix<f64>, b: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    let p = g.nrows();
    let mut m = g.clone();
    for i in 0..p {
        m[(i, i)] += lambda;
    }
    let svd = m.clone().svd(false, false);
    let s_max = svd.singular_values.max();
    let s_min = svd.singular_values.min();
    let cond = if s_min > 0.0 { s_max / s_min } else { f64::INFINITY };

    if cond < COND_LIMIT {
        if let Some(chol) = Cholesky::new(m.clone()) {
            return Ok(chol.solve(b));
        }
    }
    if lambda == 0.0 {
        return Err(Error::IllConditioned { cond });
    }
    let svd = m.svd(true, true);
    svd.solve(b, SVD_CUTOFF * s_max)
        .map_err(|e| Error::Numerical(format!("svd solve failed: {e}")))
}

fn finish_model(
    kt: DMatrix<f64>,
    snapshots: &SnapshotSet,
    lambda: f64,
    standardizer: &Standardizer,
) -> Result<KoopmanModel> {
    if kt.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("fitted K contains non-finite entries".into()));
    }
    let m = snapshots.len();
    let p = snapshots.spec.lifted_dim();
    let resid = snapshots.psi() * &kt - snapshots.psi_next();
    let fit_residual = resid.norm() / ((m * p) as f64).sqrt();
    Ok(KoopmanModel {
        k: kt.transpose(),
        spec: snapshots.spec,
        lambda,
        standardizer: standardizer.clone(),
        fit_residual,
    })
}

/// Ridge-regularized least squares: `K^T = (Psi^T Psi + lambda I)^{-1}
/// Psi^T Psi'`.
pub fn fit_ridge(
    snapshots: &SnapshotSet,
    lambda: f64,
    standardizer: &Standardizer,
) -> Result<KoopmanModel> {
    if snapshots.is_empty() {
        return Err(Error::EmptySnapshots);
    }
    if lambda < 0.0 {
        return Err(Error::InvalidParam("ridge coefficient must be >= 0".into()));
    }
    snapshots.check_finite()?;
    let g = snapshots.psi().transpose() * snapshots.psi();
    let b = snapshots.psi().transpose() * snapshots.psi_next();
    let kt = solve_normal_eq(&g, &b, lambda)?;
    finish_model(kt, snapshots, lambda, standardizer)
}

/// Streaming accumulator of the moment matrices `G = (1/m) sum z z^T` and
/// `A = (1/m) sum z z'^T`. Sums commute, so shards may be accumulated in
/// any order and merged.
#[derive(Clone, Debug)]
pub struct MomentAccumulator {
    spec: DictionarySpec,
    g_sum: DMatrix<f64>,
    a_sum: DMatrix<f64>,
    count: usize,
}

impl MomentAccumulator {
    pub fn new(spec: DictionarySpec) -> Self {
        let p = spec.lifted_dim();
        Self {
            spec,
            g_sum: DMatrix::zeros(p, p),
            a_sum: DMatrix::zeros(p, p),
            count: 0,
        }
    }

    pub fn push(&mut self, z: &LiftedVector, z_next: &LiftedVector) -> Result<()> {
        let p = self.spec.lifted_dim();
        if z.len() != p || z_next.len() != p {
            return Err(Error::ShapeMismatch {
                what: "moment accumulator row",
                expected: p,
                got: z.len(),
            });
        }
        self.g_sum.ger(1.0, z, z, 1.0);
        self.a_sum.ger(1.0, z, z_next, 1.0);
        self.count += 1;
        Ok(())
    }

    pub fn push_snapshots(&mut self, snapshots: &SnapshotSet) -> Result<()> {
        for i in 0..snapshots.len() {
            let (z, zn) = snapshots.row_pair(i);
            self.push(&z, &zn)?;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &MomentAccumulator) {
        self.g_sum += &other.g_sum;
        self.a_sum += &other.a_sum;
        self.count += other.count;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Solve `(G + (lambda/m) I) K^T-moment = A` on the normalized moments.
    pub fn fit(&self, lambda: f64, standardizer: &Standardizer) -> Result<DMatrix<f64>> {
        if self.count == 0 {
            return Err(Error::EmptySnapshots);
        }
        if lambda < 0.0 {
            return Err(Error::InvalidParam("ridge coefficient must be >= 0".into()));
        }
        let _ = standardizer;
        let m = self.count as f64;
        let g = &self.g_sum / m;
        let a = &self.a_sum / m;
        if g.iter().chain(a.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NanInData("moment matrices".into()));
        }
        solve_normal_eq(&g, &a, lambda / m)
    }
}

/// Moment-matrix form of the same ridge problem; agrees with
/// [`fit_ridge`] up to roundoff.
pub fn fit_moments(
    snapshots: &SnapshotSet,
    lambda: f64,
    standardizer: &Standardizer,
) -> Result<KoopmanModel> {
    if snapshots.is_empty() {
        return Err(Error::EmptySnapshots);
    }
    let mut acc = MomentAccumulator::new(snapshots.spec);
    acc.push_snapshots(snapshots)?;
    let kt = acc.fit(lambda, standardizer)?;
    finish_model(kt, snapshots, lambda, standardizer)
}

/// One lifted step: returns `K z`.
pub fn predict_one_step(model: &KoopmanModel, z: &LiftedVector) -> Result<LiftedVector> {
    if z.len() != model.lifted_dim() {
        return Err(Error::ShapeMismatch {
            what: "lifted vector vs model",
            expected: model.lifted_dim(),
            got: z.len(),
        });
    }
    Ok(&model.k * z)
}

/// Relative normal-equation residual `||(G + lambda I) K^T - B||_F /
/// ||B||_F` of a fitted model on a snapshot set.
pub fn normal_equation_residual(model: &KoopmanModel, snapshots: &SnapshotSet) -> f64 {
    let g = snapshots.psi().transpose() * snapshots.psi();
    let b = snapshots.psi().transpose() * snapshots.psi_next();
    let p = g.nrows();
    let mut m = g;
    for i in 0..p {
        m[(i, i)] += model.lambda;
    }
    (&m * model.k.transpose() - &b).norm() / b.norm()
}
