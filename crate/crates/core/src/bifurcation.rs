//! Pseudo-arclength continuation of solution branches of
//! `A(u) = lambda h phi_p(u) + f(x, u)` and detection of the bifurcation
//! point where the branch meets the trivial line.
//!
//! Points live in the product space `R x W` with the norm
//! `||(lambda, u)|| = (lambda^2 + ||u||^2)^{1/2}`; arclength steps, the
//! secant predictor and the corrector hyperplane all use this metric.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::eigen::EigenPair;
use crate::gagliardo::{apply_a, dual_norm, energy, KernelError, KernelMatrix};
use crate::grid::GridFunction;
use crate::nonlinear::{residual_jacobian, RealizedRhs};
use crate::solver::{phi_p, SolverOptions};

#[derive(Error, Debug)]
pub enum BifurcationError {
    #[error("right-hand side carries no eigenvalue coupling")]
    MissingCoupling,
    #[error("direction must be normalized in the Gagliardo norm, got {0}")]
    DirectionNotNormalized(f64),
    #[error("start point residual {residual:.3e} above tolerance {tol:.3e}")]
    BadStart { residual: f64, tol: f64 },
    #[error("corrector failed to produce the first branch point")]
    StartCorrectionFailed,
    #[error("inconclusive: {0}")]
    Inconclusive(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// One accepted point of a solution branch.
#[derive(Debug, Clone)]
pub struct BranchPoint {
    pub lambda: f64,
    pub u: GridFunction,
    /// Gagliardo norm `E(u)^{1/p}`.
    pub norm: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BranchStatus {
    CompletedSteps,
    /// Step halving hit the floor before the corrector succeeded.
    StepUnderflow,
    /// The branch left the configured (lambda, norm) box; the continuation
    /// represents the unbounded alternative by this exit.
    LeftBox,
}

#[derive(Debug, Clone)]
pub struct Branch {
    pub points: Vec<BranchPoint>,
    /// Nominal arclength increment between consecutive points.
    pub step: f64,
    pub status: BranchStatus,
}

/// Continuation controls; the box bounds realize the branch-termination
/// alternative.
#[derive(Debug, Clone, Copy)]
pub struct ContinuationOptions {
    pub step: f64,
    pub steps: usize,
    pub tol: f64,
    pub lambda_box: (f64, f64),
    pub norm_cap: f64,
}

impl Default for ContinuationOptions {
    fn default() -> Self {
        Self {
            step: 0.02,
            steps: 40,
            tol: 1e-9,
            lambda_box: (0.0, f64::INFINITY),
            norm_cap: 1e3,
        }
    }
}

/// Ratio `||F(t d)||_* / t^{p-1}` of the reaction part of the right-hand
/// side against the eigenvalue scaling, measured at amplitude `t` along a
/// normalized direction. For superlinear reactions it decays like
/// `t^{q-p}` as `t -> 0`.
pub fn small_norm_ratio(
    rhs: &RealizedRhs,
    t: f64,
    direction: &GridFunction,
    kernel: &KernelMatrix,
) -> Result<f64, BifurcationError> {
    let p = kernel.p();
    let norm = energy(direction, kernel)?.powf(1.0 / p);
    if (norm - 1.0).abs() > 1e-6 {
        return Err(BifurcationError::DirectionNotNormalized(norm));
    }
    let f = rhs.reaction_dual(&direction.scale(t));
    Ok(dual_norm(&f, kernel)? / t.powf(p - 1.0))
}

fn with_lambda(rhs: &RealizedRhs, lambda: f64) -> RealizedRhs {
    let mut out = rhs.clone();
    match &mut out.lambda {
        Some((l, _)) => *l = lambda,
        None => unreachable!("checked by callers"),
    }
    out
}

/// Residual coefficients `w (A(u) - lambda h phi_p(u) - f(x, u))`.
fn residual_coeffs(
    lambda: f64,
    u: &GridFunction,
    rhs: &RealizedRhs,
    kernel: &KernelMatrix,
) -> Result<DVector<f64>, BifurcationError> {
    let w = kernel.domain().cell_weight();
    let a = apply_a(u, kernel)?;
    let f = with_lambda(rhs, lambda).dual_at(u, kernel.p());
    Ok(DVector::from_iterator(
        u.len(),
        a.coeffs.iter().zip(&f.coeffs).map(|(ai, fi)| w * (ai - fi)),
    ))
}

fn dual_residual_norm(
    lambda: f64,
    u: &GridFunction,
    rhs: &RealizedRhs,
    kernel: &KernelMatrix,
) -> Result<f64, BifurcationError> {
    let a = apply_a(u, kernel)?;
    let f = with_lambda(rhs, lambda).dual_at(u, kernel.p());
    Ok(dual_norm(&a.add_scaled(-1.0, &f), kernel)?)
}

/// Gagliardo norm surrogate of a displacement in the product metric.
fn product_distance(
    a: (f64, &GridFunction),
    b: (f64, &GridFunction),
    kernel: &KernelMatrix,
) -> f64 {
    let p = kernel.p();
    let du = a.1.add_scaled(-1.0, b.1);
    let un = energy(&du, kernel).map(|e| e.powf(2.0 / p)).unwrap_or(f64::INFINITY);
    ((a.0 - b.0) * (a.0 - b.0) + un).sqrt()
}

struct Tangent {
    lambda: f64,
    u: GridFunction,
}

/// Corrector: damped Newton on the residual augmented with the tangent
/// hyperplane through the predictor, in the product metric.
fn correct(
    predictor: (f64, GridFunction),
    tangent: &Tangent,
    rhs: &RealizedRhs,
    kernel: &KernelMatrix,
    tol: f64,
) -> Option<(f64, GridFunction)> {
    let n = kernel.len();
    let w = kernel.domain().cell_weight();
    let p = kernel.p();
    let quadratic = p == 2.0;
    let (mut lambda, mut u) = predictor.clone();
    let coupling = &rhs.lambda.as_ref().expect("coupling checked").1;

    // Hyperplane row: the tangent paired in the energy inner product when
    // available, in the quadrature inner product otherwise.
    let row_u: Vec<f64> = if quadratic {
        let gram = kernel.gram().ok()?;
        let tv = DVector::from_iterator(n, tangent.u.values.iter().copied());
        (gram * tv).iter().copied().collect()
    } else {
        tangent.u.values.iter().map(|v| w * v).collect()
    };

    let hyper = |lambda: f64, u: &GridFunction| -> f64 {
        let mut c = tangent.lambda * (lambda - predictor.0);
        for (rv, (uv, pv)) in row_u.iter().zip(u.values.iter().zip(&predictor.1.values)) {
            c += rv * (uv - pv);
        }
        c
    };

    let merit = |r: &DVector<f64>, c: f64| -> f64 { r.norm_squared() + c * c };

    let mut r = residual_coeffs(lambda, &u, rhs, kernel).ok()?;
    let mut c = hyper(lambda, &u);
    let mut m = merit(&r, c);
    for _ in 0..40 {
        if m.sqrt() <= 1e-13 * (1.0 + lambda.abs()) {
            break;
        }
        let rl = with_lambda(rhs, lambda);
        let ju = residual_jacobian(&u, &rl, kernel);
        let mut jac = DMatrix::zeros(n + 1, n + 1);
        jac.view_mut((0, 0), (n, n)).copy_from(&ju);
        for i in 0..n {
            jac[(i, n)] = -w * coupling.values[i] * phi_p(u.values[i], p);
            jac[(n, i)] = row_u[i];
        }
        jac[(n, n)] = tangent.lambda;
        let mut rhs_vec = DVector::zeros(n + 1);
        for i in 0..n {
            rhs_vec[i] = -r[i];
        }
        rhs_vec[n] = -c;

        let mut improved = false;
        let mut mu = 0.0f64;
        for _ in 0..6 {
            let mut jm = jac.clone();
            for i in 0..=n {
                jm[(i, i)] += mu;
            }
            if let Some(delta) = jm.lu().solve(&rhs_vec) {
                let mut t = 1.0;
                for _ in 0..25 {
                    let trial_u = GridFunction {
                        domain: Arc::clone(kernel.domain()),
                        values: u
                            .values
                            .iter()
                            .zip(delta.iter())
                            .map(|(v, d)| v + t * d)
                            .collect(),
                    };
                    let trial_l = lambda + t * delta[n];
                    if let Ok(tr) = residual_coeffs(trial_l, &trial_u, rhs, kernel) {
                        let tc = hyper(trial_l, &trial_u);
                        let tm = merit(&tr, tc);
                        if tm < m * (1.0 - 1e-4 * t) {
                            u = trial_u;
                            lambda = trial_l;
                            r = tr;
                            c = tc;
                            m = tm;
                            improved = true;
                            break;
                        }
                    }
                    t *= 0.5;
                }
            }
            if improved {
                break;
            }
            mu = if mu == 0.0 { 1e-10 } else { mu * 100.0 };
        }
        if !improved {
            break;
        }
    }
    let dn = dual_residual_norm(lambda, &u, rhs, kernel).ok()?;
    if dn <= tol {
        Some((lambda, u))
    } else {
        None
    }
}

/// Builds a converged branch point near `(lambda_1, eps e_1)` by correcting
/// the eigenpair predictor at a pinned amplitude.
pub fn branch_start(
    rhs: &RealizedRhs,
    pair: &EigenPair,
    eps: f64,
    kernel: &KernelMatrix,
    opts: &SolverOptions,
) -> Result<BranchPoint, BifurcationError> {
    if rhs.lambda.is_none() {
        return Err(BifurcationError::MissingCoupling);
    }
    let u0 = pair.u.scale(eps);
    // Pin the amplitude by the hyperplane through the eigenfunction itself.
    let tangent = Tangent {
        lambda: 0.0,
        u: pair.u.clone(),
    };
    let corrected = correct(
        (pair.lambda, u0),
        &tangent,
        rhs,
        kernel,
        opts.tol,
    )
    .ok_or(BifurcationError::StartCorrectionFailed)?;
    let (lambda, u) = corrected;
    let p = kernel.p();
    let norm = energy(&u, kernel)?.powf(1.0 / p);
    let residual = dual_residual_norm(lambda, &u, rhs, kernel)?;
    Ok(BranchPoint {
        lambda,
        u,
        norm,
        residual,
    })
}

/// Pseudo-arclength predictor-corrector continuation. The predictor is the
/// secant through the last two points (the eigenfunction direction seeds the
/// first step); each accepted point re-evaluates its residual independently
/// of the corrector.
pub fn continue_branch(
    rhs: &RealizedRhs,
    start: &BranchPoint,
    copts: &ContinuationOptions,
    kernel: &KernelMatrix,
    first_direction: &GridFunction,
) -> Result<Branch, BifurcationError> {
    if rhs.lambda.is_none() {
        return Err(BifurcationError::MissingCoupling);
    }
    if start.residual > copts.tol {
        return Err(BifurcationError::BadStart {
            residual: start.residual,
            tol: copts.tol,
        });
    }
    let p = kernel.p();
    let mut points = vec![start.clone()];
    let mut status = BranchStatus::CompletedSteps;

    // First tangent: pure state direction, no lambda drift.
    let dir_norm = energy(first_direction, kernel)?.powf(1.0 / p);
    let mut tangent = Tangent {
        lambda: 0.0,
        u: first_direction.scale(1.0 / dir_norm),
    };

    'outer: for _ in 0..copts.steps {
        let last = points.last().unwrap();
        let mut h = copts.step;
        let mut accepted: Option<(f64, GridFunction)> = None;
        while h >= 1e-6 {
            let predictor = (
                last.lambda + h * tangent.lambda,
                last.u.add_scaled(h, &tangent.u),
            );
            if let Some((lambda, u)) = correct(predictor, &tangent, rhs, kernel, copts.tol) {
                let d = product_distance((lambda, &u), (last.lambda, &last.u), kernel);
                if d >= copts.step / 2.0 && d <= 2.0 * copts.step {
                    accepted = Some((lambda, u));
                    break;
                }
            }
            h *= 0.5;
        }
        let Some((lambda, u)) = accepted else {
            status = BranchStatus::StepUnderflow;
            break 'outer;
        };
        let norm = energy(&u, kernel)?.powf(1.0 / p);
        let residual = dual_residual_norm(lambda, &u, rhs, kernel)?;
        // Secant tangent for the next step, normalized in the product metric.
        let dl = lambda - last.lambda;
        let du = u.add_scaled(-1.0, &last.u);
        let d = product_distance((lambda, &u), (last.lambda, &last.u), kernel);
        if d > 0.0 {
            tangent = Tangent {
                lambda: dl / d,
                u: du.scale(1.0 / d),
            };
        }
        points.push(BranchPoint {
            lambda,
            u,
            norm,
            residual,
        });
        if lambda < copts.lambda_box.0 || lambda > copts.lambda_box.1 || norm > copts.norm_cap {
            status = BranchStatus::LeftBox;
            break;
        }
    }
    Ok(Branch {
        points,
        step: copts.step,
        status,
    })
}

/// Linear extrapolation of `lambda(||u||)` to the trivial line.
#[derive(Debug, Clone, Serialize)]
pub struct BifurcationReport {
    pub lambda0: f64,
    /// `|lambda0 - lambda1| / lambda1`.
    pub relative_gap: f64,
    pub points_used: usize,
}

/// Extrapolates the small-norm end of a branch to `||u|| = 0` and compares
/// with the first eigenvalue. Needs at least 5 points below norm 0.1.
pub fn detect_bifurcation(
    branch: &Branch,
    lambda1: f64,
) -> Result<BifurcationReport, BifurcationError> {
    let small: Vec<(f64, f64)> = branch
        .points
        .iter()
        .filter(|pt| pt.norm < 0.1)
        .map(|pt| (pt.norm, pt.lambda))
        .collect();
    if small.len() < 5 {
        return Err(BifurcationError::Inconclusive(format!(
            "only {} points with norm below 0.1, need 5",
            small.len()
        )));
    }
    let n = small.len() as f64;
    let mx = small.iter().map(|p| p.0).sum::<f64>() / n;
    let my = small.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = small.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = small.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let lambda0 = my - slope * mx;
    Ok(BifurcationReport {
        lambda0,
        relative_gap: (lambda0 - lambda1).abs() / lambda1,
        points_used: small.len(),
    })
}
