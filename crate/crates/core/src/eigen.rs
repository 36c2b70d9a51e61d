//! Eigenvalues of symmetric 3x3 matrices.

use nalgebra::Matrix3;

use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-8;
const MAX_SWEEPS: usize = 32;

fn check_symmetric(m: &Matrix3<f64>) -> Result<()> {
    let scale = m.abs().max().max(1.0);
    for (i, j) in [(0, 1), (0, 2), (1, 2)] {
        let gap = (m[(i, j)] - m[(j, i)]).abs();
        if !(gap <= SYMMETRY_TOL * scale) {
            return Err(Error::Contract(format!(
                "matrix is not symmetric: |m[{i}{j}] - m[{j}{i}]| = {gap:e}"
            )));
        }
    }
    Ok(())
}

/// Eigenvalues of a symmetric matrix in descending order.
///
/// Cyclic Jacobi rotations; each sweep annihilates the three off-diagonal
/// entries in turn and convergence is quadratic, so a handful of sweeps
/// reach machine precision even for repeated eigenvalues.
pub fn symmetric_eigenvalues(m: &Matrix3<f64>) -> Result<[f64; 3]> {
    check_symmetric(m)?;
    let mut a = (m + m.transpose()) * 0.5;
    let scale = a.abs().max();
    if !scale.is_finite() {
        return Err(Error::Contract("matrix has non-finite entries".into()));
    }
    for _ in 0..MAX_SWEEPS {
        let off = a[(0, 1)].abs() + a[(0, 2)].abs() + a[(1, 2)].abs();
        if off <= f64::EPSILON * 1e-3 * scale {
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            let apq = a[(p, q)];
            if apq == 0.0 {
                continue;
            }
            let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let t = if theta == 0.0 { 1.0 } else { t };
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            let mut rot = Matrix3::identity();
            rot[(p, p)] = c;
            rot[(q, q)] = c;
            rot[(p, q)] = s;
            rot[(q, p)] = -s;
            a = rot.transpose() * a * rot;
            a[(p, q)] = 0.0;
            a[(q, p)] = 0.0;
        }
    }
    let mut d = [a[(0, 0)], a[(1, 1)], a[(2, 2)]];
    d.sort_by(|x, y| y.total_cmp(x));
    Ok(d)
}

/// Largest eigenvalue of a symmetric matrix.
pub fn max_eigenvalue(m: &Matrix3<f64>) -> Result<f64> {
    Ok(symmetric_eigenvalues(m)?[0])
}
