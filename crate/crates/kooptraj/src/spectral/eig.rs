//! Eigendecomposition of a real non-symmetric matrix.
//!
//! Eigenvalues come from the real Schur form; eigenvectors are recovered
//! by shifted inverse iteration on the complexified matrix. Clustered
//! eigenvalues reuse one shift with iterates orthogonalized against the
//! vectors already accepted for the cluster, which keeps the basis
//! independent for semisimple eigenvalues and exposes defective ones
//! through a large eigen-residual.

use nalgebra::{DMatrix, DVector, Schur};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Relative spacing under which eigenvalues share a cluster.
const CLUSTER_RTOL: f64 = 1e-8;
/// Iteration cap per eigenvector.
const MAX_ITER: usize = 8;
/// QR-iteration cap for the Schur reduction.
const SCHUR_MAX_ITER: usize = 100_000;

#[derive(Clone, Debug)]
pub struct Eigen {
    /// Sorted by descending magnitude, ties by descending real part,
    /// then descending imaginary part (conjugate pairs adjacent, +Im
    /// first).
    pub values: Vec<Complex64>,
    /// Unit right eigenvectors as columns, phase-fixed so the
    /// largest-modulus entry is real positive.
    pub vectors: DMatrix<Complex64>,
    /// `max_i ||A v_i - lambda_i v_i||_2 / ||A||_F` over unit vectors.
    pub residual: f64,
}

/// Total order used for spectral indexing.
pub fn eigenvalue_order(a: &Complex64, b: &Complex64) -> std::cmp::Ordering {
    b.norm()
        .partial_cmp(&a.norm())
        .unwrap_or(std::cmp::Ordering::Equal)
        .then(b.re.partial_cmp(&a.re).unwrap_or(std::cmp::Ordering::Equal))
        .then(b.im.partial_cmp(&a.im).unwrap_or(std::cmp::Ordering::Equal))
}

/// All complex eigenvalues, unsorted. The zero matrix short-circuits:
/// the QR iteration's relative deflation test never fires when the
/// whole matrix scale is zero.
pub fn complex_eigenvalues_checked(a: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    let n = a.nrows();
    if a.norm() == 0.0 {
        return Ok(vec![Complex64::new(0.0, 0.0); n]);
    }
    let schur = Schur::try_new(a.clone(), f64::EPSILON, SCHUR_MAX_ITER)
        .ok_or_else(|| Error::Numerical("eigenvalue iteration did not converge".into()))?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

pub fn eigendecompose(a: &DMatrix<f64>) -> Result<Eigen> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "eigendecomposition needs a square matrix");
    if n == 1 {
        return Ok(Eigen {
            values: vec![Complex64::new(a[(0, 0)], 0.0)],
            vectors: DMatrix::from_element(1, 1, Complex64::new(1.0, 0.0)),
            residual: 0.0,
        });
    }
    if a.norm() == 0.0 {
        return Ok(Eigen {
            values: vec![Complex64::new(0.0, 0.0); n],
            vectors: DMatrix::identity(n, n).map(|v: f64| Complex64::new(v, 0.0)),
            residual: 0.0,
        });
    }

    let mut values = complex_eigenvalues_checked(a)?;
    values.sort_by(eigenvalue_order);

    let scale = a.norm().max(f64::MIN_POSITIVE);
    let ac = a.map(|v| Complex64::new(v, 0.0));

    let mut vectors = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    let mut worst_residual = 0.0f64;
    let mut done: Vec<(Complex64, usize)> = Vec::new();

    for (idx, &lambda) in values.iter().enumerate() {
        // Conjugate partner already solved: conjugate its vector.
        if lambda.im < 0.0 {
            if let Some(&(_, j)) = done
                .iter()
                .find(|(l, _)| (l.conj() - lambda).norm() <= 1e-12 * scale.max(l.norm()))
            {
                let v = vectors.column(j).map(|c| c.conj());
                vectors.column_mut(idx).copy_from(&v);
                done.push((lambda, idx));
                continue;
            }
        }

        // Vectors already accepted for (numerically) the same eigenvalue.
        let cluster: Vec<DVector<Complex64>> = done
            .iter()
            .filter(|(l, _)| (l - lambda).norm() <= CLUSTER_RTOL * scale)
            .map(|&(_, j)| vectors.column(j).into_owned())
            .collect();

        let (v, res) = inverse_iteration(&ac, lambda, &cluster, scale, idx as u64);
        worst_residual = worst_residual.max(res / scale);
        vectors.column_mut(idx).copy_from(&v);
        done.push((lambda, idx));
    }

    Ok(Eigen {
        values,
        vectors,
        residual: worst_residual,
    })
}

fn inverse_iteration(
    ac: &DMatrix<Complex64>,
    lambda: Complex64,
    ortho: &[DVector<Complex64>],
    scale: f64,
    seed: u64,
) -> (DVector<Complex64>, f64) {
    let n = ac.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_E160_u64 ^ seed);
    let random_unit = |rng: &mut ChaCha8Rng| -> DVector<Complex64> {
        let mut v = DVector::from_fn(n, |_, _| {
            Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        });
        v /= Complex64::new(v.norm(), 0.0);
        v
    };

    let mut shift = lambda;
    let mut lu = shifted_lu(ac, shift);
    let mut v = random_unit(&mut rng);
    orthogonalize(&mut v, ortho);
    if v.norm() < 1e-12 {
        v = random_unit(&mut rng);
    }
    v /= Complex64::new(v.norm(), 0.0);

    let mut best = v.clone();
    let mut best_res = residual(ac, lambda, &best);

    for it in 0..MAX_ITER {
        let solved = lu.as_ref().and_then(|f| f.solve(&v));
        let mut w = match solved {
            Some(w) if w.iter().all(|c| c.re.is_finite() && c.im.is_finite()) => w,
            _ => {
                // Singular to machine precision: nudge the shift off the
                // eigenvalue and rebuild the factorization.
                let eps = scale * 1e-13 * (it + 1) as f64;
                shift = lambda + Complex64::new(eps, eps);
                lu = shifted_lu(ac, shift);
                continue;
            }
        };
        orthogonalize(&mut w, ortho);
        let norm = w.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            v = random_unit(&mut rng);
            orthogonalize(&mut v, ortho);
            let nv = v.norm();
            if nv > 0.0 {
                v /= Complex64::new(nv, 0.0);
            }
            continue;
        }
        v = w / Complex64::new(norm, 0.0);
        let res = residual(ac, lambda, &v);
        if res < best_res {
            best_res = res;
            best = v.clone();
        }
        if best_res <= 1e-14 * scale {
            break;
        }
    }

    fix_phase(&mut best);
    (best, best_res)
}

fn shifted_lu(
    ac: &DMatrix<Complex64>,
    shift: Complex64,
) -> Option<nalgebra::LU<Complex64, nalgebra::Dyn, nalgebra::Dyn>> {
    let n = ac.nrows();
    let mut m = ac.clone();
    for i in 0..n {
        m[(i, i)] -= shift;
    }
    Some(m.lu())
}

fn residual(ac: &DMatrix<Complex64>, lambda: Complex64, v: &DVector<Complex64>) -> f64 {
    (ac * v - v * lambda).norm()
}

/// Modified Gram-Schmidt against an accepted set.
fn orthogonalize(v: &mut DVector<Complex64>, basis: &[DVector<Complex64>]) {
    for b in basis {
        let coeff = b.dotc(v);
        *v -= b * coeff;
    }
}

/// Rotate so the largest-modulus entry is real positive.
fn fix_phase(v: &mut DVector<Complex64>) {
    let mut max_idx = 0;
    let mut max_norm = 0.0;
    for (i, c) in v.iter().enumerate() {
        let m = c.norm();
        if m > max_norm {
            max_norm = m;
            max_idx = i;
        }
    }
    if max_norm > 0.0 {
        let phase = v[max_idx] / Complex64::new(max_norm, 0.0);
        *v *= phase.conj();
    }
}
