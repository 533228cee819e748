//! Covariance upsampling: estimates a nonnegative source-power map from a
//! low-channel covariance and resynthesizes it on the high-channel array.

use std::sync::Arc;

use ndarray::Array2;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{dot3, ArrayGeometry, Tessellation};
use crate::linalg::C64;
use crate::sigproc::BandPlan;

pub const MAX_SOLVER_ITERATIONS: usize = 10000;
pub const RELATIVE_OBJECTIVE_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct UpsampleRequest {
    pub low_res: Vec<Array2<C64>>,
    pub low_geom: ArrayGeometry,
    pub target_geom: ArrayGeometry,
    pub tess: Arc<Tessellation>,
    pub plan: Arc<BandPlan>,
}

/// Per-band solver diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandSolve {
    pub converged: bool,
    pub iterations: usize,
    pub objective: f64,
}

#[derive(Debug, Clone)]
pub struct UpsampleOutcome {
    pub covariances: Vec<Array2<C64>>,
    pub reports: Vec<BandSolve>,
    pub power_maps: Vec<Vec<f64>>,
}

/// Plane-wave synthesis matrix with unit-modulus entries,
/// entry (m, n) = exp(+j 2 pi f/c <p_m, r_n>). This is sqrt(M) times the
/// unit-column steering matrix; the physical scaling keeps per-channel power
/// comparable between arrays of different channel counts.
fn synthesis_matrix(geom: &ArrayGeometry, tess: &Tessellation, frequency_hz: f64) -> Array2<C64> {
    let m = geom.channel_count();
    let n = tess.len();
    let kappa = 2.0 * std::f64::consts::PI * frequency_hz / geom.speed_of_sound();
    let mut a = Array2::<C64>::zeros((m, n));
    for (nn, dir) in tess.directions().iter().enumerate() {
        for (mm, pos) in geom.positions().iter().enumerate() {
            a[[mm, nn]] = C64::from_polar(1.0, kappa * dot3(*pos, *dir));
        }
    }
    a
}

fn validate(req: &UpsampleRequest) -> Result<(usize, usize)> {
    let m_lo = req.low_geom.channel_count();
    let m_hi = req.target_geom.channel_count();
    if m_lo >= m_hi {
        return Err(Error::InvalidInput(format!(
            "low-res channel count {m_lo} must be below target channel count {m_hi}"
        )));
    }
    if (req.low_geom.speed_of_sound() - req.target_geom.speed_of_sound()).abs() > 1e-9 {
        return Err(Error::InvalidInput(
            "low-res and target geometries disagree on the speed of sound".into(),
        ));
    }
    if req.low_res.len() != req.plan.band_count() {
        return Err(Error::dims(
            "upsample_covariance",
            format!("{} band matrices", req.plan.band_count()),
            format!("{}", req.low_res.len()),
        ));
    }
    for (f, sigma) in req.low_res.iter().enumerate() {
        if sigma.dim() != (m_lo, m_lo) {
            return Err(Error::dims(
                "upsample_covariance",
                format!("{m_lo}x{m_lo} covariance in band {f}"),
                format!("{}x{}", sigma.nrows(), sigma.ncols()),
            ));
        }
    }
    Ok((m_lo, m_hi))
}

/// Rebuilds R = A diag(p) A^H + q I - Sigma from scratch (exactly Hermitian).
fn residual_matrix(a: &Array2<C64>, p: &[f64], q: f64, sigma: &Array2<C64>, r: &mut Array2<C64>) {
    let (m, n) = a.dim();
    for i in 0..m {
        for j in i..m {
            let mut acc = C64::new(0.0, 0.0);
            for nn in 0..n {
                if p[nn] != 0.0 {
                    acc += a[[i, nn]] * a[[j, nn]].conj() * p[nn];
                }
            }
            if i == j {
                acc += q;
            }
            let v = acc - sigma[[i, j]];
            r[[i, j]] = v;
            if i != j {
                r[[j, i]] = v.conj();
            }
        }
    }
}

fn frob_sq(r: &Array2<C64>) -> f64 {
    r.iter().map(|z| z.norm_sqr()).sum()
}

struct BandResult {
    covariance: Array2<C64>,
    report: BandSolve,
    power: Vec<f64>,
}

fn solve_band(
    sigma_lo: &Array2<C64>,
    a_lo: &Array2<C64>,
    a_hi: &Array2<C64>,
    m_lo: usize,
    m_hi: usize,
) -> BandResult {
    let n = a_lo.ncols();

    // Split off the largest isotropic component before fitting. Atom
    // ensembles can imitate an identity at the low-res array (their
    // off-diagonal ripple cancels across few channels) but not at the target
    // array, so letting the fit absorb it would resynthesize spurious
    // correlations. The floor goes straight into diagonal loading instead.
    let floor = crate::linalg::min_hermitian_eigenvalue(&sigma_lo.view())
        .unwrap_or(0.0)
        .max(0.0);
    let mut sigma_fit = sigma_lo.clone();
    for i in 0..m_lo {
        sigma_fit[[i, i]] -= floor;
    }
    let sigma_lo = &sigma_fit;

    // The fit uses the plane-wave atoms plus one isotropic coordinate q >= 0
    // (an identity component). Without it, diffuse input gets composed out of
    // coherent atoms and resynthesizes with spurious off-diagonal structure;
    // with it, isotropic power lands in diagonal loading, while rank-1 input
    // still forces q = 0 (a a^H - q I is indefinite for q > 0).
    //
    // The objective's Hessian is 2G over the extended unknowns, with
    // G_nm = |a_n^H a_m|^2, G_nq = ||a_n||^2 = M, G_qq = ||I||_F^2 = M, so the
    // sharp gradient Lipschitz constant is 2 lambda_max(G). G is PSD (a Gram
    // matrix of the atom outer products), so plain power iteration finds
    // lambda_max; the 1.01 margin covers its one-sided convergence.
    let dim = n + 1;
    let mut g = vec![0.0f64; dim * dim];
    for nn in 0..n {
        for mm in nn..n {
            let mut dot = C64::new(0.0, 0.0);
            for i in 0..m_lo {
                dot += a_lo[[i, nn]].conj() * a_lo[[i, mm]];
            }
            let v = dot.norm_sqr();
            g[nn * dim + mm] = v;
            g[mm * dim + nn] = v;
        }
    }
    for nn in 0..n {
        g[nn * dim + n] = m_lo as f64;
        g[n * dim + nn] = m_lo as f64;
    }
    g[n * dim + n] = m_lo as f64;
    let lambda_max = crate::linalg::spectral_radius_symmetric(
        dim,
        |x| {
            (0..dim)
                .map(|i| {
                    let row = &g[i * dim..(i + 1) * dim];
                    row.iter().zip(x).map(|(a, b)| a * b).sum()
                })
                .collect()
        },
        60,
    );
    drop(g);
    let step = 1.0 / (2.0 * lambda_max * 1.01);

    // Accelerated projected gradient (Nesterov extrapolation with restart on
    // objective increase). The residual is linear in the unknowns, so the
    // extrapolated point's residual is the same linear combination of the two
    // stored exact residuals; each iteration costs one gradient pass plus one
    // rebuild. Index n of the unknown vector is the isotropic coordinate q.
    let mut x = vec![0.0f64; dim];
    let mut x_prev = vec![0.0f64; dim];
    let mut x_next = vec![0.0f64; dim];
    let mut r_x = Array2::<C64>::zeros((m_lo, m_lo));
    let mut r_prev = Array2::<C64>::zeros((m_lo, m_lo));
    let mut r_y = Array2::<C64>::zeros((m_lo, m_lo));
    residual_matrix(a_lo, &x[..n], x[n], sigma_lo, &mut r_x);
    r_prev.assign(&r_x);
    let mut objective = frob_sq(&r_x);
    let mut best_objective = objective;
    let mut best_p = x.clone();
    let mut converged = objective == 0.0;
    let mut iterations = 0;
    let mut t = 1.0f64;

    if !converged {
        for iter in 1..=MAX_SOLVER_ITERATIONS {
            iterations = iter;
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let beta = (t - 1.0) / t_next;
            // y = x + beta (x - x_prev); R(y) by the same combination.
            for ((ry, &rx), &rp) in r_y.iter_mut().zip(r_x.iter()).zip(r_prev.iter()) {
                *ry = rx + (rx - rp) * beta;
            }
            // grad_n at y = 2 Re(a_n^H R(y) a_n); grad_q = 2 Re(tr R(y)).
            for nn in 0..n {
                let mut quad = C64::new(0.0, 0.0);
                for i in 0..m_lo {
                    let mut row = C64::new(0.0, 0.0);
                    for j in 0..m_lo {
                        row += r_y[[i, j]] * a_lo[[j, nn]];
                    }
                    quad += a_lo[[i, nn]].conj() * row;
                }
                let grad = 2.0 * quad.re;
                let y = x[nn] + beta * (x[nn] - x_prev[nn]);
                x_next[nn] = (y - step * grad).max(0.0);
            }
            let grad_q = 2.0 * (0..m_lo).map(|i| r_y[[i, i]].re).sum::<f64>();
            let y_q = x[n] + beta * (x[n] - x_prev[n]);
            x_next[n] = (y_q - step * grad_q).max(0.0);
            std::mem::swap(&mut r_prev, &mut r_x);
            residual_matrix(a_lo, &x_next[..n], x_next[n], sigma_lo, &mut r_x);
            let new_objective = frob_sq(&r_x);
            if new_objective > objective {
                // Momentum overshot; restart from the last accepted iterate.
                std::mem::swap(&mut r_x, &mut r_prev);
                r_prev.assign(&r_x);
                x_prev.copy_from_slice(&x);
                t = 1.0;
                continue;
            }
            std::mem::swap(&mut x_prev, &mut x);
            std::mem::swap(&mut x, &mut x_next);
            t = t_next;
            if new_objective < best_objective {
                best_objective = new_objective;
                best_p.copy_from_slice(&x);
            }
            let relative_decrease = (objective - new_objective) / objective;
            objective = new_objective;
            if relative_decrease < RELATIVE_OBJECTIVE_TOLERANCE {
                converged = true;
                break;
            }
            if objective == 0.0 {
                converged = true;
                break;
            }
        }
    }
    let q = best_p[n];
    let mut p = best_p;
    p.truncate(n);
    let objective = best_objective;

    // Resynthesize on the target array; the isotropic floor, the fitted
    // isotropic power, and any unexplained trace become diagonal loading
    // (clamped to preserve PSD).
    let trace_fit: f64 = (0..m_lo).map(|i| sigma_lo[[i, i]].re).sum();
    let modeled_trace: f64 = m_lo as f64 * (p.iter().sum::<f64>() + q);
    let loading = floor + q + ((trace_fit - modeled_trace) / m_lo as f64).max(0.0);

    let mut sigma_hi = Array2::<C64>::zeros((m_hi, m_hi));
    for i in 0..m_hi {
        for j in i..m_hi {
            let mut acc = C64::new(0.0, 0.0);
            for nn in 0..n {
                if p[nn] != 0.0 {
                    acc += a_hi[[i, nn]] * a_hi[[j, nn]].conj() * p[nn];
                }
            }
            if i == j {
                sigma_hi[[i, i]] = C64::new(acc.re + loading, 0.0);
            } else {
                sigma_hi[[i, j]] = acc;
                sigma_hi[[j, i]] = acc.conj();
            }
        }
    }

    BandResult {
        covariance: sigma_hi,
        report: BandSolve {
            converged,
            iterations,
            objective,
        },
        power: p,
    }
}

/// Upsamples per-band covariances from the low-res array to the target array
/// by accelerated projected-gradient NNLS on the tessellation power map and
/// resynthesis. Non-convergence is reported in the band metadata, not an
/// error; the best iterate is used.
pub fn upsample_covariance(req: &UpsampleRequest) -> Result<UpsampleOutcome> {
    let (m_lo, m_hi) = validate(req)?;
    let results: Vec<BandResult> = req
        .plan
        .centers()
        .par_iter()
        .zip(req.low_res.par_iter())
        .map(|(&freq, sigma_lo)| {
            let a_lo = synthesis_matrix(&req.low_geom, &req.tess, freq);
            let a_hi = synthesis_matrix(&req.target_geom, &req.tess, freq);
            solve_band(sigma_lo, &a_lo, &a_hi, m_lo, m_hi)
        })
        .collect();

    let mut covariances = Vec::with_capacity(results.len());
    let mut reports = Vec::with_capacity(results.len());
    let mut power_maps = Vec::with_capacity(results.len());
    for r in results {
        covariances.push(r.covariance);
        reports.push(r.report);
        power_maps.push(r.power);
    }
    Ok(UpsampleOutcome {
        covariances,
        reports,
        power_maps,
    })
}

/// Mean absolute magnitude error and mean wrapped phase error (radians)
/// between two same-shape complex matrices. Phase is averaged only over
/// entries whose true magnitude exceeds 1e-12.
pub fn covariance_error(est: &Array2<C64>, truth: &Array2<C64>) -> Result<(f64, f64)> {
    if est.dim() != truth.dim() {
        return Err(Error::dims(
            "covariance_error",
            format!("{:?}", truth.dim()),
            format!("{:?}", est.dim()),
        ));
    }
    let mut mag_sum = 0.0;
    let mut mag_count = 0usize;
    let mut phase_sum = 0.0;
    let mut phase_count = 0usize;
    for (e, t) in est.iter().zip(truth.iter()) {
        mag_sum += (e.norm() - t.norm()).abs();
        mag_count += 1;
        if t.norm() > 1e-12 {
            let mut d = (e.arg() - t.arg()).rem_euclid(2.0 * std::f64::consts::PI);
            if d > std::f64::consts::PI {
                d = 2.0 * std::f64::consts::PI - d;
            }
            phase_sum += d;
            phase_count += 1;
        }
    }
    let mag = if mag_count > 0 { mag_sum / mag_count as f64 } else { 0.0 };
    let phase = if phase_count > 0 {
        phase_sum / phase_count as f64
    } else {
        0.0
    };
    Ok((mag, phase))
}
