//! Small dense helpers: norms, Hermitian checks, and a Jacobi eigensolver.
//!
//! The eigensolver exists so tests can verify spectral claims (PSD
//! covariances, Laplacian spectra) without pulling in a LAPACK binding; the
//! matrices involved are at most a few hundred rows.

use ndarray::{Array2, ArrayView2};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub fn frobenius_norm(a: &ArrayView2<C64>) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn frobenius_norm_real(a: &ArrayView2<f64>) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Largest absolute deviation from Hermitian symmetry, max_ij |a_ij - conj(a_ji)|.
pub fn hermitian_deviation(a: &ArrayView2<C64>) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i..n {
            let d = (a[[i, j]] - a[[j, i]].conj()).norm();
            if d > worst {
                worst = d;
            }
        }
    }
    worst
}

/// Eigenvalues of a real symmetric matrix, ascending, by cyclic Jacobi sweeps.
pub fn symmetric_eigenvalues(a: &ArrayView2<f64>) -> Result<Vec<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::dims(
            "symmetric_eigenvalues",
            format!("{n}x{n}"),
            format!("{}x{}", a.nrows(), a.ncols()),
        ));
    }
    let mut m = a.to_owned();
    let scale = frobenius_norm_real(&m.view()).max(1.0);
    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[[i, j]] * m[[i, j]];
            }
        }
        if (2.0 * off).sqrt() <= 1e-13 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[[p, q]];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                let tau = s / (1.0 + c);
                let app = m[[p, p]];
                let aqq = m[[q, q]];
                m[[p, p]] = app - t * apq;
                m[[q, q]] = aqq + t * apq;
                m[[p, q]] = 0.0;
                m[[q, p]] = 0.0;
                for i in 0..n {
                    if i == p || i == q {
                        continue;
                    }
                    let aip = m[[i, p]];
                    let aiq = m[[i, q]];
                    m[[i, p]] = aip - s * (aiq + tau * aip);
                    m[[p, i]] = m[[i, p]];
                    m[[i, q]] = aiq + s * (aip - tau * aiq);
                    m[[q, i]] = m[[i, q]];
                }
            }
        }
    }
    let mut eigs: Vec<f64> = (0..n).map(|i| m[[i, i]]).collect();
    eigs.sort_by(|a, b| a.total_cmp(b));
    Ok(eigs)
}

/// Eigenvalues of a complex Hermitian matrix, ascending.
///
/// Uses the real embedding [[X, -Y], [Y, X]] of A = X + iY, whose spectrum is
/// that of A with every eigenvalue doubled.
pub fn hermitian_eigenvalues(a: &ArrayView2<C64>) -> Result<Vec<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::dims(
            "hermitian_eigenvalues",
            format!("{n}x{n}"),
            format!("{}x{}", a.nrows(), a.ncols()),
        ));
    }
    let mut e = Array2::<f64>::zeros((2 * n, 2 * n));
    for i in 0..n {
        for j in 0..n {
            let z = a[[i, j]];
            e[[i, j]] = z.re;
            e[[i + n, j + n]] = z.re;
            e[[i, j + n]] = -z.im;
            e[[i + n, j]] = z.im;
        }
    }
    let doubled = symmetric_eigenvalues(&e.view())?;
    Ok(doubled.into_iter().step_by(2).collect())
}

/// Smallest eigenvalue of a complex Hermitian matrix.
pub fn min_hermitian_eigenvalue(a: &ArrayView2<C64>) -> Result<f64> {
    Ok(hermitian_eigenvalues(a)?[0])
}

/// Spectral radius of a symmetric operator given through its matvec, by power
/// iteration from a fixed asymmetric start vector.
pub fn spectral_radius_symmetric<F>(n: usize, matvec: F, iterations: usize) -> f64
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.3 * ((7.1 * i as f64).sin())).collect();
    let mut norm = l2(&v);
    for x in v.iter_mut() {
        *x /= norm;
    }
    let mut radius = 0.0;
    for _ in 0..iterations {
        let w = matvec(&v);
        norm = l2(&w);
        if norm == 0.0 {
            return 0.0;
        }
        radius = norm;
        v = w;
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
    radius
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn eigenvalues_of_diagonal_matrix() {
        let a = array![[3.0, 0.0], [0.0, -1.0]];
        let e = symmetric_eigenvalues(&a.view()).unwrap();
        assert_abs_diff_eq!(e[0], -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e[1], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn eigenvalues_of_2x2_analytic() {
        // [[2, 1], [1, 2]] has eigenvalues 1 and 3.
        let a = array![[2.0, 1.0], [1.0, 2.0]];
        let e = symmetric_eigenvalues(&a.view()).unwrap();
        assert_abs_diff_eq!(e[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e[1], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn eigenvalues_match_trace_and_frobenius_invariants() {
        // Symmetric matrix assembled from plane rotations applied to a known
        // diagonal, so the exact spectrum is known.
        let d = [5.0, 2.0, -1.0, 0.5, 0.0];
        let n = d.len();
        let mut a = Array2::<f64>::zeros((n, n));
        for i in 0..n {
            a[[i, i]] = d[i];
        }
        // Conjugate by a product of plane rotations (orthogonal by construction).
        let rotations: [(usize, usize, f64); 5] =
            [(0, 1, 0.3), (1, 2, -1.1), (2, 3, 0.7), (3, 4, 2.0), (0, 4, -0.4)];
        for &(p, q, ang) in &rotations {
            let (c, s) = (ang.cos(), ang.sin());
            // A <- G^T A G applied as row then column updates.
            for j in 0..n {
                let (ap, aq) = (a[[p, j]], a[[q, j]]);
                a[[p, j]] = c * ap - s * aq;
                a[[q, j]] = s * ap + c * aq;
            }
            for i in 0..n {
                let (ap, aq) = (a[[i, p]], a[[i, q]]);
                a[[i, p]] = c * ap - s * aq;
                a[[i, q]] = s * ap + c * aq;
            }
        }
        let mut want = d.to_vec();
        want.sort_by(|a, b| a.total_cmp(b));
        let got = symmetric_eigenvalues(&a.view()).unwrap();
        for (g, w) in got.iter().zip(&want) {
            assert_abs_diff_eq!(g, w, epsilon = 1e-10);
        }
    }

    #[test]
    fn hermitian_eigenvalues_analytic() {
        // [[2, i], [-i, 2]] has eigenvalues 1 and 3.
        let a = array![
            [C64::new(2.0, 0.0), C64::new(0.0, 1.0)],
            [C64::new(0.0, -1.0), C64::new(2.0, 0.0)]
        ];
        let e = hermitian_eigenvalues(&a.view()).unwrap();
        assert_abs_diff_eq!(e[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e[1], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn hermitian_deviation_detects_asymmetry() {
        let mut a = Array2::<C64>::zeros((2, 2));
        a[[0, 1]] = C64::new(1.0, 2.0);
        a[[1, 0]] = C64::new(1.0, -2.0);
        assert!(hermitian_deviation(&a.view()) < 1e-15);
        a[[1, 0]] = C64::new(1.0, -1.5);
        assert_abs_diff_eq!(hermitian_deviation(&a.view()), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn power_iteration_finds_dominant_eigenvalue() {
        let a = array![[2.0, 1.0], [1.0, 2.0]];
        let r = spectral_radius_symmetric(2, |x| {
            vec![
                a[[0, 0]] * x[0] + a[[0, 1]] * x[1],
                a[[1, 0]] * x[0] + a[[1, 1]] * x[1],
            ]
        }, 200);
        assert_abs_diff_eq!(r, 3.0, epsilon = 1e-9);
    }
}
