//! Dense linear-algebra helpers shared by the operators and the problem cache.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Default relative tolerance for [`spectral_norm`].
pub const SPECTRAL_TOL: f64 = 1e-10;
/// Default iteration cap for [`spectral_norm`].
pub const SPECTRAL_MAX_ITER: usize = 10_000;

const START_VECTOR_SEED: u64 = 0x05af_e120;

/// Eigenvalues of a PSD matrix this far below zero are treated as round-off.
pub const PSD_ROUNDOFF: f64 = 1e-12;

/// Largest eigenvalue of `AᵀA` (the Lipschitz constant of `x ↦ Aᵀ(Ax − d)`),
/// by power iteration from a fixed pseudo-random start vector.
///
/// Stops once the Rayleigh quotient changes by at most `tol` relative to its
/// value. On exhaustion the error carries the last estimate.
pub fn spectral_norm(a: &DMatrix<f64>, tol: f64, max_iter: usize) -> Result<f64> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance must be positive, got {tol}")));
    }
    if a.ncols() == 0 || a.nrows() == 0 || a.iter().all(|v| *v == 0.0) {
        return Err(Error::InvalidParameter("spectral norm of a zero matrix".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(START_VECTOR_SEED);
    let mut v = DVector::from_fn(a.ncols(), |_, _| StandardNormal.sample(&mut rng));
    v.normalize_mut();

    let mut estimate = 0.0;
    for _ in 0..max_iter {
        let av = a * &v;
        let next = av.norm_squared();
        let mut w = a.tr_mul(&av);
        let wn = w.norm();
        if wn == 0.0 {
            // Start vector in the null space; nudge it deterministically.
            v = DVector::from_fn(a.ncols(), |i, _| 1.0 + i as f64);
            v.normalize_mut();
            continue;
        }
        w /= wn;
        v = w;
        if (next - estimate).abs() <= tol * next {
            return Ok(next);
        }
        estimate = next;
    }
    Err(Error::NotConverged {
        what: "power iteration",
        iterations: max_iter,
        best: estimate,
    })
}

/// Lipschitz constant with the default tolerance and cap.
pub fn lipschitz(a: &DMatrix<f64>) -> Result<f64> {
    spectral_norm(a, SPECTRAL_TOL, SPECTRAL_MAX_ITER)
}

/// Principal square root of a symmetric positive semidefinite matrix.
///
/// Eigenvalues in `[-PSD_ROUNDOFF, 0)` are clamped to zero; anything more
/// negative is a configuration error.
pub fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::dims(format!("square root of a {}x{} matrix", m.nrows(), m.ncols())));
    }
    let eig = SymmetricEigen::new(m.clone());
    let mut roots = eig.eigenvalues.clone();
    for ev in roots.iter_mut() {
        if *ev < -PSD_ROUNDOFF {
            return Err(Error::config(format!(
                "matrix is not positive semidefinite (eigenvalue {ev:e})"
            )));
        }
        *ev = ev.max(0.0).sqrt();
    }
    let q = &eig.eigenvectors;
    Ok(q * DMatrix::from_diagonal(&roots) * q.transpose())
}

pub(crate) fn check_len(what: &str, v: &DVector<f64>, expected: usize) -> Result<()> {
    if v.len() != expected {
        return Err(Error::dims(format!("{what}: expected length {expected}, got {}", v.len())));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_and_identity() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]);
        assert!((spectral_norm(&a, 1e-12, 10_000).unwrap() - 4.0).abs() < 1e-10);
        let i = DMatrix::<f64>::identity(3, 3);
        assert!((lipschitz(&i).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn matches_dense_eigensolver() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..5 {
            let a = DMatrix::from_fn(5, 8, |_, _| StandardNormal.sample(&mut rng));
            let ata = a.transpose() * &a;
            let oracle = SymmetricEigen::new(ata).eigenvalues.max();
            let got = lipschitz(&a).unwrap();
            assert!((got - oracle).abs() <= 1e-8 * oracle, "{got} vs {oracle}");
        }
    }

    #[test]
    fn zero_matrix_and_bad_tol_rejected() {
        assert!(matches!(
            lipschitz(&DMatrix::zeros(3, 2)),
            Err(Error::InvalidParameter(_))
        ));
        assert!(spectral_norm(&DMatrix::identity(2, 2), 0.0, 10).is_err());
    }

    #[test]
    fn exhaustion_reports_best_estimate() {
        // Nearly repeated top eigenvalue: one iteration cannot settle.
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.999]);
        match spectral_norm(&a, 1e-15, 1) {
            Err(Error::NotConverged { best, .. }) => assert!(best >= 0.0),
            other => panic!("expected NotConverged, got {other:?}"),
        }
    }

    #[test]
    fn psd_sqrt_squares_back() {
        let b = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 4.0]);
        let r = psd_sqrt(&b).unwrap();
        assert!((&r * &r - &b).amax() < 1e-12);
        assert!(psd_sqrt(&DMatrix::from_diagonal_element(2, 2, -1e-3)).is_err());
        let tiny = psd_sqrt(&DMatrix::from_diagonal_element(2, 2, -1e-14)).unwrap();
        assert_eq!(tiny.amax(), 0.0);
    }
}
