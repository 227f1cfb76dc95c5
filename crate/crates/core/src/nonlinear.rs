//! Residuals and solvers for the nonlinear problem `A(u) = f(x, u)`,
//! the non-resonant linear-in-lambda problem, and the truncated functional
//! whose critical points yield small solutions.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

use crate::eigen::{oracle_spectrum_p2, solve_first, EigenError};
use crate::gagliardo::{
    apply_a, dual_norm, embedding_constant, energy, DualVector, KernelError, KernelMatrix,
    OperatorContext,
};
use crate::grid::{Domain1D, GridFunction, KahanSum};
use crate::solver::{phi_p, SolverOptions};
use crate::weights::{SpaceParams, WeightError, WeightSpec};

#[derive(Error, Debug)]
pub enum NonlinearError {
    #[error("lambda = {lambda} sits in the resonance guard band around lambda_1 = {lambda1}{}",
        cond.map(|c| format!(" (condition estimate {c:.3e})")).unwrap_or_default())]
    NearResonance {
        lambda: f64,
        lambda1: f64,
        cond: Option<f64>,
    },
    #[error("no solution found: {0}")]
    NotFound(String),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Eigen(#[from] EigenError),
    #[error(transparent)]
    Weight(#[from] WeightError),
}

/// One reaction term `coef * h(x) * |t|^{q-2} t` (odd) or
/// `coef * h(x) * |t|^{q-1}` (even).
#[derive(Debug, Clone)]
pub struct RhsTerm {
    pub coef: f64,
    pub weight: WeightSpec,
    pub q: f64,
    pub odd: bool,
}

/// Right-hand side: reaction terms, an optional eigenvalue coupling
/// `lambda h(x) phi_p(t)`, and an optional fixed forcing functional.
#[derive(Debug, Clone, Default)]
pub struct RhsSpec {
    pub terms: Vec<RhsTerm>,
    pub lambda_coupling: Option<(f64, WeightSpec)>,
    pub forcing: Option<DualVector>,
}

impl RhsSpec {
    pub fn single_power(coef: f64, q: f64) -> Self {
        Self {
            terms: vec![RhsTerm {
                coef,
                weight: WeightSpec::power(0.0).expect("beta = 0"),
                q,
                odd: true,
            }],
            lambda_coupling: None,
            forcing: None,
        }
    }

    /// Precomputes nodal weight values on `domain`.
    pub fn realize(&self, domain: &Arc<Domain1D>) -> RealizedRhs {
        RealizedRhs {
            domain: Arc::clone(domain),
            terms: self
                .terms
                .iter()
                .map(|t| RealizedTerm {
                    coef: t.coef,
                    h: t.weight.realize_on_grid(domain),
                    q: t.q,
                    odd: t.odd,
                })
                .collect(),
            lambda: self
                .lambda_coupling
                .as_ref()
                .map(|(l, w)| (*l, w.realize_on_grid(domain))),
            forcing: self.forcing.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RealizedTerm {
    pub coef: f64,
    pub h: GridFunction,
    pub q: f64,
    pub odd: bool,
}

impl RealizedTerm {
    #[inline]
    fn f(&self, i: usize, t: f64) -> f64 {
        let shape = if self.odd {
            phi_p(t, self.q)
        } else {
            t.abs().powf(self.q - 1.0)
        };
        self.coef * self.h.values[i] * shape
    }

    #[inline]
    fn primitive(&self, i: usize, t: f64) -> f64 {
        let shape = if self.odd {
            t.abs().powf(self.q) / self.q
        } else {
            t.signum() * t.abs().powf(self.q) / self.q
        };
        self.coef * self.h.values[i] * shape
    }

    /// `d f / d t`; unbounded at the origin for q < 2, so the magnitude of
    /// `t` is floored before raising to the negative power.
    #[inline]
    fn f_prime(&self, i: usize, t: f64) -> f64 {
        let floored = t.abs().max(1e-9);
        let shape = if self.odd {
            (self.q - 1.0) * floored.powf(self.q - 2.0)
        } else {
            (self.q - 1.0) * floored.powf(self.q - 2.0) * t.signum()
        };
        self.coef * self.h.values[i] * shape
    }
}

/// Right-hand side with weights evaluated on a fixed grid.
#[derive(Debug, Clone)]
pub struct RealizedRhs {
    pub domain: Arc<Domain1D>,
    pub terms: Vec<RealizedTerm>,
    pub lambda: Option<(f64, GridFunction)>,
    pub forcing: Option<DualVector>,
}

impl RealizedRhs {
    /// Pointwise reaction value `f(x_i, t)` including the eigenvalue
    /// coupling, excluding the forcing functional.
    pub fn pointwise(&self, i: usize, t: f64, p: f64) -> f64 {
        let mut v: f64 = self.terms.iter().map(|term| term.f(i, t)).sum();
        if let Some((lambda, h)) = &self.lambda {
            v += lambda * h.values[i] * phi_p(t, p);
        }
        v
    }

    /// Primitive `F(x_i, t)` of the pointwise reaction.
    pub fn primitive(&self, i: usize, t: f64, p: f64) -> f64 {
        let mut v: f64 = self.terms.iter().map(|term| term.primitive(i, t)).sum();
        if let Some((lambda, h)) = &self.lambda {
            v += lambda * h.values[i] * t.abs().powf(p) / p;
        }
        v
    }

    fn pointwise_prime(&self, i: usize, t: f64, p: f64) -> f64 {
        let mut v: f64 = self.terms.iter().map(|term| term.f_prime(i, t)).sum();
        if let Some((lambda, h)) = &self.lambda {
            v += lambda * h.values[i] * (p - 1.0) * t.abs().max(1e-9).powf(p - 2.0);
        }
        v
    }

    /// Full dual vector of the right-hand side evaluated at `u`.
    pub fn dual_at(&self, u: &GridFunction, p: f64) -> DualVector {
        let mut coeffs: Vec<f64> = (0..u.len())
            .map(|i| self.pointwise(i, u.values[i], p))
            .collect();
        if let Some(f) = &self.forcing {
            for (c, fc) in coeffs.iter_mut().zip(&f.coeffs) {
                *c += fc;
            }
        }
        DualVector {
            domain: Arc::clone(&self.domain),
            coeffs,
        }
    }

    /// Dual vector of the reaction terms only (no eigenvalue coupling, no
    /// forcing); the compact perturbation of the bifurcation problem.
    pub fn reaction_dual(&self, u: &GridFunction) -> DualVector {
        let coeffs = (0..u.len())
            .map(|i| self.terms.iter().map(|term| term.f(i, u.values[i])).sum())
            .collect();
        DualVector {
            domain: Arc::clone(&self.domain),
            coeffs,
        }
    }
}

/// Converged solution with its certificate quantities.
#[derive(Debug, Clone)]
pub struct Solution {
    pub u: GridFunction,
    pub residual: f64,
    pub energy: f64,
}

/// Residual dual vector `A(u) - rhs(u)` and its dual norm.
pub fn residual(
    u: &GridFunction,
    rhs: &RealizedRhs,
    kernel: &KernelMatrix,
) -> Result<(DualVector, f64), NonlinearError> {
    let a = apply_a(u, kernel)?;
    let r = a.add_scaled(-1.0, &rhs.dual_at(u, kernel.p()));
    let norm = dual_norm(&r, kernel)?;
    Ok((r, norm))
}

const RESONANCE_GUARD: f64 = 1e-3;

/// Weighted mass matrix `diag(w h)`.
fn mass_matrix(ctx: &OperatorContext) -> DMatrix<f64> {
    let w = ctx.domain().cell_weight();
    DMatrix::from_diagonal(&DVector::from_iterator(
        ctx.kernel.len(),
        ctx.weight.values.iter().map(|h| w * h),
    ))
}

fn condition_estimate(m: &DMatrix<f64>) -> f64 {
    let sym = 0.5 * (m + m.transpose());
    let eig = SymmetricEigen::new(sym);
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    for &ev in eig.eigenvalues.iter() {
        lo = lo.min(ev.abs());
        hi = hi.max(ev.abs());
    }
    if lo == 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Unconstrained minimization of a smooth functional by conjugate-gradient
/// descent with Armijo backtracking. Returns the final point.
fn descend<F, G>(
    mut u: GridFunction,
    value: F,
    grad: G,
    max_iter: usize,
    gtol: f64,
    step0: f64,
) -> GridFunction
where
    F: Fn(&GridFunction) -> f64,
    G: Fn(&GridFunction) -> Vec<f64>,
{
    let mut fval = value(&u);
    let mut g = grad(&u);
    let mut dir: Vec<f64> = g.iter().map(|x| -x).collect();
    let mut g_sq: f64 = g.iter().map(|x| x * x).sum();
    let mut step = step0;
    for _ in 0..max_iter {
        if g_sq.sqrt() <= gtol {
            break;
        }
        // With the attainable value decrease under the f64 floor, the Armijo
        // test accepts zero-progress ties; switch to steps scored by the
        // gradient norm instead.
        let fabs = 1.0 + fval.abs();
        if g_sq <= 1e-13 * fabs {
            let mut alpha = step;
            let mut accepted = false;
            for _ in 0..40 {
                let mut trial = u.clone();
                for (tv, gc) in trial.values.iter_mut().zip(&g) {
                    *tv -= alpha * gc;
                }
                let tv = value(&trial);
                let tg = grad(&trial);
                let tg_sq: f64 = tg.iter().map(|x| x * x).sum();
                if tv <= fval + 1e-14 * fabs && tg_sq < g_sq * (1.0 - 1e-6) {
                    u = trial;
                    fval = tv;
                    g = tg;
                    g_sq = tg_sq;
                    dir = g.iter().map(|x| -x).collect();
                    step = 2.0 * alpha;
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !accepted {
                break;
            }
            continue;
        }
        let mut slope: f64 = g.iter().zip(&dir).map(|(a, b)| a * b).sum();
        if slope >= 0.0 {
            dir = g.iter().map(|x| -x).collect();
            slope = -g_sq;
        }
        let mut alpha = step;
        let mut accepted = false;
        for _ in 0..50 {
            let mut trial = u.clone();
            for (tv, d) in trial.values.iter_mut().zip(&dir) {
                *tv += alpha * d;
            }
            let tv = value(&trial);
            if tv <= fval + 1e-4 * alpha * slope {
                u = trial;
                fval = tv;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
        step = 2.0 * alpha;
        let new_g = grad(&u);
        let new_g_sq: f64 = new_g.iter().map(|x| x * x).sum();
        let mut beta: f64 = new_g
            .iter()
            .zip(&g)
            .map(|(n, o)| n * (n - o))
            .sum::<f64>()
            / g_sq;
        if !beta.is_finite() || beta < 0.0 {
            beta = 0.0;
        }
        for (d, n) in dir.iter_mut().zip(&new_g) {
            *d = -n + beta * *d;
        }
        g = new_g;
        g_sq = new_g_sq;
    }
    u
}

/// Solves the non-resonant problem `A(u) = lambda h phi_p(u) + f`.
///
/// Below the first eigenvalue the coercive functional is minimized directly
/// (every p). Between the eigenvalues, p = 2 reduces to one linear solve;
/// other p run damped multi-start Newton. Values of lambda inside the guard
/// band around the first eigenvalue are rejected with a condition-number
/// diagnostic.
pub fn solve_fredholm(
    lambda: f64,
    f: &DualVector,
    ctx: &OperatorContext,
    opts: &SolverOptions,
) -> Result<Solution, NonlinearError> {
    let p = ctx.kernel.p();
    let w = ctx.domain().cell_weight();
    let first = solve_first(ctx, opts)?;
    let lambda1 = first.lambda;
    if (lambda - lambda1).abs() <= RESONANCE_GUARD * lambda1 {
        let cond = if p == 2.0 {
            let m = ctx.kernel.gram()?.clone() - lambda * mass_matrix(ctx);
            Some(condition_estimate(&m))
        } else {
            None
        };
        return Err(NonlinearError::NearResonance {
            lambda,
            lambda1,
            cond,
        });
    }

    let functional = |u: &GridFunction| -> f64 {
        let e = energy(u, &ctx.kernel).unwrap();
        e / p - lambda / p * ctx.weighted_p_mass(u) - f.pair(u)
    };
    let gradient = |u: &GridFunction| -> Vec<f64> {
        let a = apply_a(u, &ctx.kernel).unwrap();
        a.coeffs
            .iter()
            .zip(&ctx.weight.values)
            .zip(&u.values)
            .zip(&f.coeffs)
            .map(|(((ai, hi), ui), fi)| w * (ai - lambda * hi * phi_p(*ui, p) - fi))
            .collect()
    };

    if lambda < lambda1 {
        // Coercive regime: direct minimization.
        let fscale = f.l2_norm().max(1e-30);
        let mut best: Option<Solution> = None;
        for start_idx in 0..4u64 {
            let start = if start_idx == 0 {
                GridFunction::zeros(Arc::clone(ctx.domain()))
            } else {
                crate::solver::seeded_function(ctx.domain(), opts.seed.wrapping_add(start_idx))
            };
            let u = descend(
                start,
                functional,
                gradient,
                opts.max_iter,
                1e-12 * w * fscale,
                opts.step0 / (1.0 + fscale),
            );
            let rhs = RealizedRhs {
                domain: Arc::clone(ctx.domain()),
                terms: vec![],
                lambda: Some((lambda, ctx.weight.clone())),
                forcing: Some(f.clone()),
            };
            let (_, rn) = residual(&u, &rhs, &ctx.kernel)?;
            if rn <= opts.tol {
                return Ok(Solution {
                    energy: functional(&u),
                    u,
                    residual: rn,
                });
            }
            let replace = best.as_ref().map_or(true, |b| rn < b.residual);
            if replace {
                best = Some(Solution {
                    energy: functional(&u),
                    u,
                    residual: rn,
                });
            }
        }
        return best
            .filter(|b| b.residual <= opts.tol)
            .ok_or_else(|| NonlinearError::NotFound("minimization did not converge".into()));
    }

    if p == 2.0 {
        // Indefinite but non-resonant: one linear solve of (G - lambda M).
        let m = ctx.kernel.gram()?.clone() - lambda * mass_matrix(ctx);
        let cond = condition_estimate(&m);
        if cond > 1e10 {
            return Err(NonlinearError::NearResonance {
                lambda,
                lambda1,
                cond: Some(cond),
            });
        }
        let rhs_vec = DVector::from_iterator(f.coeffs.len(), f.coeffs.iter().map(|c| c * w));
        let lu = m.lu();
        let sol = lu
            .solve(&rhs_vec)
            .ok_or_else(|| NonlinearError::NotFound("linear solve failed".into()))?;
        let u = GridFunction {
            domain: Arc::clone(ctx.domain()),
            values: sol.iter().copied().collect(),
        };
        let rhs = RealizedRhs {
            domain: Arc::clone(ctx.domain()),
            terms: vec![],
            lambda: Some((lambda, ctx.weight.clone())),
            forcing: Some(f.clone()),
        };
        let (_, rn) = residual(&u, &rhs, &ctx.kernel)?;
        if rn > opts.tol {
            return Err(NonlinearError::NotFound(format!(
                "linear solve residual {rn:.3e} above tolerance"
            )));
        }
        return Ok(Solution {
            energy: functional(&u),
            u,
            residual: rn,
        });
    }

    // p != 2 between the eigenvalues: damped Newton from deterministic
    // starts. The leading start balances the forcing against the eigenvalue
    // defect along the ground state: phi_p(c) (lambda_1 - lambda) = <f, e1>.
    let rhs = RealizedRhs {
        domain: Arc::clone(ctx.domain()),
        terms: vec![],
        lambda: Some((lambda, ctx.weight.clone())),
        forcing: Some(f.clone()),
    };
    let proj = f.pair(&first.u) / (lambda1 - lambda);
    let c = proj.signum() * proj.abs().powf(1.0 / (p - 1.0));
    let mut starts: Vec<GridFunction> = vec![
        first.u.scale(c),
        first.u.scale(1.25 * c),
        first.u.scale(0.8 * c),
    ];
    for start_idx in 0..5u64 {
        let noise = crate::solver::seeded_function(ctx.domain(), opts.seed.wrapping_add(start_idx));
        starts.push(first.u.scale(c).add_scaled(0.1 * c.abs(), &noise));
    }
    for start in starts {
        if let Some(u) = newton_polish(start, &rhs, &ctx.kernel, 120) {
            let (_, rn) = residual(&u, &rhs, &ctx.kernel)?;
            if rn <= opts.tol {
                return Ok(Solution {
                    energy: functional(&u),
                    u,
                    residual: rn,
                });
            }
        }
    }
    Err(NonlinearError::NotFound(
        "all Newton starts failed; the solver, not the theorem, gave up".into(),
    ))
}

/// Jacobian of the residual map `u -> w(A(u) - rhs(u))`.
pub(crate) fn residual_jacobian(
    u: &GridFunction,
    rhs: &RealizedRhs,
    kernel: &KernelMatrix,
) -> DMatrix<f64> {
    let n = kernel.len();
    let p = kernel.p();
    let mut j = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut diag = KahanSum::new();
        for l in 0..n {
            if l != i {
                let d = u.values[i] - u.values[l];
                let weight = 2.0 * (p - 1.0) * kernel.k(i, l) * d.abs().max(1e-9).powf(p - 2.0);
                j[(i, l)] = -weight;
                diag.add(weight);
            }
        }
        diag.add((p - 1.0) * kernel.tail()[i] * u.values[i].abs().max(1e-9).powf(p - 2.0));
        j[(i, i)] = diag.value();
    }
    let w = kernel.domain().cell_weight();
    for i in 0..n {
        j[(i, i)] -= w * rhs.pointwise_prime(i, u.values[i], p);
    }
    j
}

/// Refines a candidate into a stationary point of `A(u) = rhs(u)` by damped
/// Newton iteration and certifies it with the dual-norm residual.
pub fn refine_stationary(
    start: GridFunction,
    rhs: &RealizedRhs,
    kernel: &KernelMatrix,
    opts: &SolverOptions,
) -> Result<Solution, NonlinearError> {
    let u = newton_polish(start, rhs, kernel, opts.max_iter.min(200))
        .ok_or_else(|| NonlinearError::NotFound("Newton iteration stalled".into()))?;
    let (_, rn) = residual(&u, rhs, kernel)?;
    if rn > opts.tol {
        return Err(NonlinearError::NotFound(format!(
            "refined residual {rn:.3e} above tolerance"
        )));
    }
    let p = kernel.p();
    let mut primitive = KahanSum::new();
    for (i, &v) in u.values.iter().enumerate() {
        primitive.add(rhs.primitive(i, v, p));
    }
    let energy_val = energy(&u, kernel)? / p
        - kernel.domain().cell_weight() * primitive.value()
        - rhs.forcing.as_ref().map(|f| f.pair(&u)).unwrap_or(0.0);
    Ok(Solution {
        u,
        residual: rn,
        energy: energy_val,
    })
}

/// Damped Newton iteration on the full nonlinear residual; `None` when the
/// iteration stalls before the coefficient residual collapses.
fn newton_polish(
    start: GridFunction,
    rhs: &RealizedRhs,
    kernel: &KernelMatrix,
    max_iter: usize,
) -> Option<GridFunction> {
    let n = kernel.len();
    let w = kernel.domain().cell_weight();
    let p = kernel.p();
    let mut u = start;
    let res_vec = |u: &GridFunction| -> DVector<f64> {
        let a = apply_a(u, kernel).unwrap();
        let r = rhs.dual_at(u, p);
        DVector::from_iterator(
            n,
            a.coeffs.iter().zip(&r.coeffs).map(|(ai, fi)| w * (ai - fi)),
        )
    };
    let mut r = res_vec(&u);
    let mut rnorm = r.norm();
    let scale = 1.0 + u.sup_norm();
    for _ in 0..max_iter {
        if rnorm <= 1e-14 * scale {
            return Some(u);
        }
        let j = residual_jacobian(&u, rhs, kernel);
        let mut mu = 0.0f64;
        let mut improved = false;
        for _ in 0..8 {
            let mut jm = j.clone();
            for i in 0..n {
                jm[(i, i)] += mu;
            }
            if let Some(delta) = jm.lu().solve(&(-&r)) {
                // Backtracking on the Euclidean residual.
                let mut t = 1.0;
                for _ in 0..25 {
                    let trial = GridFunction {
                        domain: Arc::clone(kernel.domain()),
                        values: u
                            .values
                            .iter()
                            .zip(delta.iter())
                            .map(|(v, d)| v + t * d)
                            .collect(),
                    };
                    let tr = res_vec(&trial);
                    if tr.norm() < rnorm * (1.0 - 1e-4 * t) {
                        u = trial;
                        r = tr;
                        rnorm = r.norm();
                        improved = true;
                        break;
                    }
                    t *= 0.5;
                }
            }
            if improved {
                break;
            }
            mu = if mu == 0.0 { 1e-8 * (1.0 + rnorm) } else { mu * 100.0 };
        }
        if !improved {
            break;
        }
    }
    if rnorm <= 1e-11 * scale {
        Some(u)
    } else {
        None
    }
}

/// Smooth even cutoff: 1 on `[-t2, t2]`, 0 outside `[-2 t2, 2 t2]`, quintic
/// smoothstep in between (so `eta' t <= 0` and `eta` is C^2).
#[derive(Debug, Clone, Copy)]
pub struct Cutoff {
    pub t2: f64,
}

impl Cutoff {
    pub fn eta(&self, t: f64) -> f64 {
        let a = t.abs();
        if a <= self.t2 {
            1.0
        } else if a >= 2.0 * self.t2 {
            0.0
        } else {
            let x = (a - self.t2) / self.t2;
            1.0 - x * x * x * (10.0 - 15.0 * x + 6.0 * x * x)
        }
    }

    pub fn eta_prime(&self, t: f64) -> f64 {
        let a = t.abs();
        if a <= self.t2 || a >= 2.0 * self.t2 {
            0.0
        } else {
            let x = (a - self.t2) / self.t2;
            let s = 30.0 * x * x * (1.0 - x) * (1.0 - x);
            -t.signum() * s / self.t2
        }
    }

    pub fn sup_abs_derivative(&self) -> f64 {
        // max of 30 x^2 (1-x)^2 over [0,1] is 30/16.
        30.0 / 16.0 / self.t2
    }
}

/// Thresholds and growth cap of the truncation construction.
#[derive(Debug, Clone, Copy)]
pub struct TruncationSpec {
    pub t0: f64,
    pub t1: f64,
    pub t2: f64,
    pub gamma: f64,
}

impl TruncationSpec {
    pub fn new(t0: f64, t1: f64, t2: f64, gamma: f64) -> Result<Self, NonlinearError> {
        if !(0.0 < t2 && t2 < t1 / 2.0 && t1 < t0) {
            return Err(NonlinearError::Validation(format!(
                "thresholds must satisfy 0 < t2 < t1/2 < t1 < t0, got t2 = {t2}, t1 = {t1}, t0 = {t0}"
            )));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(NonlinearError::Validation(format!(
                "gamma must lie in (0, 1), got {gamma}"
            )));
        }
        Ok(Self { t0, t1, t2, gamma })
    }

    /// Derives the thresholds from the right-hand side: `t1` is the largest
    /// sampled amplitude below which the primitive dominates `|t|^p` at
    /// every node, `t2 = t1/4`, and gamma sits at half its admissible cap
    /// `1/(p C_imb^p)` measured from the embedding constant.
    pub fn from_scan(
        rhs: &RealizedRhs,
        kernel: &KernelMatrix,
        opts: &SolverOptions,
    ) -> Result<Self, NonlinearError> {
        let p = kernel.p();
        let n = kernel.len();
        let dominates = |t: f64| (0..n).all(|i| rhs.primitive(i, t, p) >= t.powf(p));
        // Scan a log grid for the first amplitude where domination fails,
        // then bisect the threshold.
        let mut lo = 1e-6;
        let mut hi = f64::INFINITY;
        for k in 0..200 {
            let t = 10f64.powf(-6.0 + 7.0 * k as f64 / 199.0);
            if dominates(t) {
                lo = t;
            } else {
                hi = t;
                break;
            }
        }
        let t1 = if hi.is_finite() {
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if dominates(mid) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.999 * lo
        } else {
            10.0
        };
        if t1 <= 0.0 || !dominates(t1) {
            return Err(NonlinearError::Validation(
                "primitive never dominates |t|^p near zero".into(),
            ));
        }
        let c_imb = embedding_constant(p, kernel, opts)?;
        let gamma_cap = (1.0 / (p * c_imb.powf(p))).min(1.0);
        Self::new(2.0 * t1, t1, t1 / 4.0, 0.5 * gamma_cap)
    }

    pub fn cutoff(&self) -> Cutoff {
        Cutoff { t2: self.t2 }
    }
}

/// Truncated reaction: inside `[-t2, t2]` it is the original `f`; outside
/// `[-2 t2, 2 t2]` it is the tame power `p gamma phi_p(t)`; in between the
/// cutoff blends them.
#[derive(Debug, Clone)]
pub struct TruncatedRhs {
    pub rhs: RealizedRhs,
    pub spec: TruncationSpec,
    pub p: f64,
}

impl TruncatedRhs {
    pub fn f_tilde(&self, i: usize, t: f64) -> f64 {
        let cut = self.spec.cutoff();
        let eta = cut.eta(t);
        let etap = cut.eta_prime(t);
        let f = self.rhs.pointwise(i, t, self.p);
        let big_f = self.rhs.primitive(i, t, self.p);
        etap * big_f + eta * f - self.spec.gamma * etap * t.abs().powf(self.p)
            + (1.0 - eta) * self.p * self.spec.gamma * phi_p(t, self.p)
    }

    pub fn big_f_tilde(&self, i: usize, t: f64) -> f64 {
        let cut = self.spec.cutoff();
        let eta = cut.eta(t);
        eta * self.rhs.primitive(i, t, self.p)
            + (1.0 - eta) * self.spec.gamma * t.abs().powf(self.p)
    }

    fn f_tilde_prime(&self, i: usize, t: f64) -> f64 {
        // Central difference; the blend is C^1 so this is adequate for the
        // Newton Jacobian (accuracy only affects the step, not the result).
        let h = 1e-7 * (1.0 + t.abs());
        (self.f_tilde(i, t + h) - self.f_tilde(i, t - h)) / (2.0 * h)
    }

    /// Growth constant of the truncated reaction:
    /// `|f_tilde| <= C1 [sum h_i |t|^{q_i-1} + |t|^{p-1}]`.
    pub fn growth_constant(&self) -> f64 {
        let qmin = self
            .rhs
            .terms
            .iter()
            .map(|t| t.q)
            .fold(f64::INFINITY, f64::min);
        let sup_eta_prime = self.spec.cutoff().sup_abs_derivative();
        2.0 * self.spec.t2 * sup_eta_prime / qmin
            + 1.0
            + 2.0 * self.spec.t2 * self.spec.gamma * sup_eta_prime
            + self.p * self.spec.gamma
    }

    pub fn dual_at(&self, u: &GridFunction) -> DualVector {
        DualVector {
            domain: Arc::clone(&self.rhs.domain),
            coeffs: (0..u.len()).map(|i| self.f_tilde(i, u.values[i])).collect(),
        }
    }

    /// Modified energy `E(u)/p - int F_tilde(x, u)`.
    pub fn modified_energy(&self, u: &GridFunction, kernel: &KernelMatrix) -> f64 {
        let mut sum = KahanSum::new();
        for (i, &v) in u.values.iter().enumerate() {
            sum.add(self.big_f_tilde(i, v));
        }
        energy(u, kernel).unwrap() / self.p - u.domain.cell_weight() * sum.value()
    }
}

/// Builds the truncated reaction after verifying its admissibility on a
/// sampling grid: odd terms only, no forcing, and the primitive dominating
/// `|t|^p` below `t1`.
pub fn build_truncation(
    rhs: &RealizedRhs,
    spec: &TruncationSpec,
    kernel: &KernelMatrix,
) -> Result<TruncatedRhs, NonlinearError> {
    if rhs.forcing.is_some() {
        return Err(NonlinearError::Validation(
            "truncation requires an odd reaction; a fixed forcing breaks oddness".into(),
        ));
    }
    if let Some(term) = rhs.terms.iter().find(|t| !t.odd) {
        return Err(NonlinearError::Validation(format!(
            "term with exponent q = {} is not odd in t",
            term.q
        )));
    }
    let p = kernel.p();
    // Primitive domination below t1, sampled on a log grid at every node.
    for k in 0..60 {
        let t = spec.t1 * 10f64.powf(-5.0 * (1.0 - k as f64 / 59.0)) * (1.0 - 1e-9);
        for i in 0..kernel.len() {
            if rhs.primitive(i, t, p) < t.powf(p) * (1.0 - 1e-9) {
                return Err(NonlinearError::Validation(format!(
                    "primitive fails to dominate |t|^p at node {i}, t = {t:.3e}"
                )));
            }
        }
    }
    Ok(TruncatedRhs {
        rhs: rhs.clone(),
        spec: *spec,
        p,
    })
}

/// Outcome of the small-solution search: retained solutions sorted by
/// modified energy, plus the levels at which no admissible critical point
/// was found.
#[derive(Debug)]
pub struct SmallSolutions {
    pub solutions: Vec<Solution>,
    pub gaps: Vec<usize>,
}

fn weighted_l2_dist(a: &GridFunction, b: &GridFunction) -> f64 {
    let mut sum = KahanSum::new();
    for (x, y) in a.values.iter().zip(&b.values) {
        sum.add((x - y) * (x - y));
    }
    (a.domain.cell_weight() * sum.value()).sqrt()
}

/// Searches for critical points of the modified energy with negative level,
/// level by level over a nested family of subspaces: seeded multi-start
/// minimization inside the subspace provides candidates, full-space damped
/// Newton polishes them into genuine discrete critical points, and the
/// filter keeps those that also solve the untruncated problem.
pub fn find_small_solutions(
    rhs: &RealizedRhs,
    spec: &TruncationSpec,
    ctx: &OperatorContext,
    n_levels: usize,
    opts: &SolverOptions,
) -> Result<SmallSolutions, NonlinearError> {
    let trunc = build_truncation(rhs, spec, &ctx.kernel)?;
    let p = ctx.kernel.p();
    let qmin = rhs.terms.iter().map(|t| t.q).fold(f64::INFINITY, f64::min);
    if !(qmin < p) {
        return Err(NonlinearError::Validation(format!(
            "the driving term must be sublinear at zero: min q = {qmin} >= p = {p}"
        )));
    }
    let w = ctx.domain().cell_weight();

    // Basis of the nested subspaces: dense eigenmodes at p = 2, sine modes
    // otherwise.
    let basis: Vec<GridFunction> = if p == 2.0 {
        let ones = GridFunction::constant(Arc::clone(ctx.domain()), 1.0);
        let flat = OperatorContext::eigen(Arc::clone(&ctx.kernel), ones)?;
        oracle_spectrum_p2(&flat)?
            .into_iter()
            .take(n_levels)
            .map(|(_, u)| u)
            .collect()
    } else {
        let left = ctx.domain().left();
        let span = ctx.domain().right() - left;
        (1..=n_levels)
            .map(|k| {
                GridFunction::from_fn(Arc::clone(ctx.domain()), |x| {
                    (k as f64 * std::f64::consts::PI * (x - left) / span).sin()
                })
            })
            .collect()
    };

    let phi_tilde = |u: &GridFunction| trunc.modified_energy(u, &ctx.kernel);
    let trunc_residual_norm = |u: &GridFunction| -> Result<f64, NonlinearError> {
        let a = apply_a(u, &ctx.kernel)?;
        let r = a.add_scaled(-1.0, &trunc.dual_at(u));
        Ok(dual_norm(&r, &ctx.kernel)?)
    };

    let mut accepted: Vec<Solution> = Vec::new();
    let mut gaps = Vec::new();
    for level in 1..=n_levels.min(basis.len()) {
        let mut candidates: Vec<GridFunction> = Vec::new();

        // Amplitude scan along the newest mode: the 1-D slice of the
        // modified energy dips negative at the right magnitude.
        let mode = &basis[level - 1];
        let mode_sup = mode.sup_norm();
        let mut best_c = 0.0;
        let mut best_val = 0.0;
        for k in 0..60 {
            let c = spec.t2 / mode_sup * 10f64.powf(-4.0 + 4.0 * k as f64 / 59.0);
            let val = phi_tilde(&mode.scale(c));
            if val < best_val {
                best_val = val;
                best_c = c;
            }
        }
        if best_c > 0.0 {
            candidates.push(mode.scale(best_c));
        }

        // Seeded multi-start minimization inside the subspace.
        use rand::Rng;
        let mut rng = opts.with_seed(opts.seed.wrapping_add(31 * level as u64)).rng();
        for _ in 0..16 {
            let coeffs: Vec<f64> = (0..level).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let amp: f64 = spec.t2 * 10f64.powf(rng.gen_range(-2.0..0.0));
            let mut u = GridFunction::zeros(Arc::clone(ctx.domain()));
            for (c, b) in coeffs.iter().zip(&basis) {
                u = u.add_scaled(*c, b);
            }
            let sup = u.sup_norm();
            if sup == 0.0 {
                continue;
            }
            u = u.scale(amp / sup);
            let refined = descend(
                u,
                &phi_tilde,
                |v: &GridFunction| {
                    let a = apply_a(v, &ctx.kernel).unwrap();
                    let fd = trunc.dual_at(v);
                    a.coeffs
                        .iter()
                        .zip(&fd.coeffs)
                        .map(|(ai, fi)| w * (ai - fi))
                        .collect()
                },
                200,
                1e-12,
                opts.step0,
            );
            if phi_tilde(&refined) < 0.0 {
                candidates.push(refined);
            }
        }

        // Polish candidates into full critical points.
        let trunc_for_newton = TruncatedRhsAsRealized { trunc: &trunc };
        let mut found_at_level = false;
        for cand in candidates {
            let polished = if p == 2.0 {
                newton_polish_trunc(cand, &trunc_for_newton, &ctx.kernel, 80)
            } else {
                Some(descend(
                    cand,
                    &phi_tilde,
                    |v: &GridFunction| {
                        let a = apply_a(v, &ctx.kernel).unwrap();
                        let fd = trunc.dual_at(v);
                        a.coeffs
                            .iter()
                            .zip(&fd.coeffs)
                            .map(|(ai, fi)| w * (ai - fi))
                            .collect()
                    },
                    opts.max_iter,
                    1e-13,
                    opts.step0,
                ))
            };
            let Some(u) = polished else { continue };
            let energy_val = phi_tilde(&u);
            if !(energy_val < 0.0) {
                continue;
            }
            if u.sup_norm() >= spec.t1 {
                continue;
            }
            let rt = trunc_residual_norm(&u)?;
            if rt > opts.tol {
                continue;
            }
            // Retained solutions must also solve the untruncated problem;
            // with sup |u| <= t2 the two reactions agree identically.
            let (_, r_orig) = residual(&u, rhs, &ctx.kernel)?;
            if r_orig > opts.tol {
                continue;
            }
            // Canonical sign and odd-pair deduplication.
            let mut u = u;
            if u.integrate() < 0.0 {
                u = u.scale(-1.0);
            }
            let is_dup = accepted.iter().any(|s| {
                weighted_l2_dist(&s.u, &u) <= 1e-4
                    || weighted_l2_dist(&s.u, &u.scale(-1.0)) <= 1e-4
            });
            if !is_dup {
                accepted.push(Solution {
                    residual: rt.max(r_orig),
                    energy: energy_val,
                    u,
                });
                found_at_level = true;
            }
        }
        if !found_at_level {
            gaps.push(level);
        }
    }
    accepted.sort_by(|a, b| a.energy.partial_cmp(&b.energy).unwrap());
    Ok(SmallSolutions {
        solutions: accepted,
        gaps,
    })
}

/// Adapter so the damped Newton routine can consume the truncated reaction.
struct TruncatedRhsAsRealized<'a> {
    trunc: &'a TruncatedRhs,
}

fn newton_polish_trunc(
    start: GridFunction,
    rhs: &TruncatedRhsAsRealized,
    kernel: &KernelMatrix,
    max_iter: usize,
) -> Option<GridFunction> {
    let n = kernel.len();
    let w = kernel.domain().cell_weight();
    let mut u = start;
    let res_vec = |u: &GridFunction| -> DVector<f64> {
        let a = apply_a(u, kernel).unwrap();
        let fd = rhs.trunc.dual_at(u);
        DVector::from_iterator(
            n,
            a.coeffs.iter().zip(&fd.coeffs).map(|(ai, fi)| w * (ai - fi)),
        )
    };
    let p = kernel.p();
    let mut r = res_vec(&u);
    let mut rnorm = r.norm();
    let scale = 1.0 + u.sup_norm();
    for _ in 0..max_iter {
        if rnorm <= 1e-14 * scale {
            return Some(u);
        }
        let mut j = DMatrix::zeros(n, n);
        for i in 0..n {
            let mut diag = KahanSum::new();
            for l in 0..n {
                if l != i {
                    let d: f64 = u.values[i] - u.values[l];
                    let weight = 2.0 * (p - 1.0) * kernel.k(i, l) * d.abs().max(1e-9).powf(p - 2.0);
                    j[(i, l)] = -weight;
                    diag.add(weight);
                }
            }
            diag.add((p - 1.0) * kernel.tail()[i] * u.values[i].abs().max(1e-9).powf(p - 2.0));
            j[(i, i)] = diag.value() - w * rhs.trunc.f_tilde_prime(i, u.values[i]);
        }
        let mut mu = 0.0f64;
        let mut improved = false;
        for _ in 0..8 {
            let mut jm = j.clone();
            for i in 0..n {
                jm[(i, i)] += mu;
            }
            if let Some(delta) = jm.lu().solve(&(-&r)) {
                let mut t = 1.0;
                for _ in 0..25 {
                    let trial = GridFunction {
                        domain: Arc::clone(kernel.domain()),
                        values: u
                            .values
                            .iter()
                            .zip(delta.iter())
                            .map(|(v, d)| v + t * d)
                            .collect(),
                    };
                    let tr = res_vec(&trial);
                    if tr.norm() < rnorm * (1.0 - 1e-4 * t) {
                        u = trial;
                        r = tr;
                        rnorm = r.norm();
                        improved = true;
                        break;
                    }
                    t *= 0.5;
                }
            }
            if improved {
                break;
            }
            mu = if mu == 0.0 { 1e-8 * (1.0 + rnorm) } else { mu * 100.0 };
        }
        if !improved {
            break;
        }
    }
    if rnorm <= 1e-11 * scale {
        Some(u)
    } else {
        None
    }
}

/// The structural hypotheses on the reaction term.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Hypothesis {
    /// Growth envelope with weights in the tilde class.
    GrowthEnvelope,
    /// Superlinear terms between p and the critical exponent (plus an
    /// admissible sublinear perturbation) for the bifurcation setting.
    BifurcationGrowth,
    /// Reaction vanishes faster than phi_p at zero.
    SuperlinearAtZero,
    /// Strict sign inequality p F - f t > 0 near zero.
    SignInequality,
    /// Reaction dominates phi_p at zero (sublinear driving term).
    SublinearAtZero,
    /// Odd in t.
    Odd,
}

#[derive(Debug, Clone)]
pub struct HypothesisReport {
    pub hypothesis: Hypothesis,
    pub holds: bool,
    pub violations: Vec<String>,
}

/// Exponent comparisons for power-term reactions plus sampling checks on a
/// log-spaced amplitude grid.
pub fn check_hypothesis(
    rhs: &RhsSpec,
    params: &SpaceParams,
    domain: &Arc<Domain1D>,
    which: Hypothesis,
) -> HypothesisReport {
    let realized = rhs.realize(domain);
    let p = params.p;
    let critical = params.critical_exponent();
    let mut violations = Vec::new();
    match which {
        Hypothesis::GrowthEnvelope => {
            for (i, term) in rhs.terms.iter().enumerate() {
                if !(term.q >= 1.0 && term.q < critical) {
                    violations.push(format!("term {i}: q = {} outside [1, {critical})", term.q));
                    continue;
                }
                match SpaceParams::new(params.dim, params.p, params.s, term.q) {
                    Ok(tp) => match crate::weights::check_tilde_wq(&term.weight, &tp) {
                        Ok(report) if !report.member => {
                            violations.push(format!("term {i}: weight outside the tilde class"))
                        }
                        Err(e) => violations.push(format!("term {i}: {e}")),
                        _ => {}
                    },
                    Err(e) => violations.push(format!("term {i}: {e}")),
                }
                if let WeightSpec::Power { negative_on, .. } = &term.weight {
                    if negative_on.is_some() {
                        violations.push(format!("term {i}: weight must be nonnegative"));
                    }
                }
            }
        }
        Hypothesis::BifurcationGrowth => {
            let mut sublinear = 0;
            for (i, term) in rhs.terms.iter().enumerate() {
                if term.q >= p {
                    if !(term.q > p && term.q < critical) {
                        violations.push(format!(
                            "term {i}: superlinear exponent q = {} outside ({p}, {critical})",
                            term.q
                        ));
                    }
                } else {
                    sublinear += 1;
                }
            }
            if sublinear > 1 {
                violations.push(format!("{sublinear} sublinear terms, at most one admitted"));
            }
        }
        Hypothesis::SuperlinearAtZero => {
            // Sampling: |f| / |t|^{p-1} must decrease to zero as t -> 0.
            let mut prev = f64::INFINITY;
            for k in (0..30).rev() {
                let t = 10f64.powf(-6.0 + 5.0 * k as f64 / 29.0);
                let ratio = (0..domain.len())
                    .map(|i| realized.reaction_dual_value(i, t) / t.powf(p - 1.0))
                    .fold(0.0f64, |m, v| m.max(v.abs()));
                if ratio > prev * (1.0 + 1e-9) {
                    violations.push(format!("ratio grows as t decreases near t = {t:.2e}"));
                    break;
                }
                prev = ratio;
            }
            if prev > 1e-3 {
                violations.push(format!(
                    "ratio |f|/|t|^{{p-1}} = {prev:.3e} at the smallest sample, expected ~0"
                ));
            }
        }
        Hypothesis::SignInequality => {
            for k in 0..40 {
                let t = 10f64.powf(-5.0 + 5.0 * k as f64 / 39.0);
                for i in 0..domain.len() {
                    let f = realized.pointwise(i, t, p);
                    let big_f = realized.primitive(i, t, p);
                    if !(p * big_f - f * t > 0.0) {
                        violations.push(format!("p F - f t <= 0 at node {i}, t = {t:.2e}"));
                    }
                    let fm = realized.pointwise(i, -t, p);
                    let big_fm = realized.primitive(i, -t, p);
                    if !(p * big_fm + fm * t > 0.0) {
                        violations.push(format!("p F - f t <= 0 at node {i}, t = -{t:.2e}"));
                    }
                }
                if violations.len() > 8 {
                    break;
                }
            }
        }
        Hypothesis::SublinearAtZero => {
            let mut prev = 0.0;
            for k in (0..30).rev() {
                let t = 10f64.powf(-6.0 + 5.0 * k as f64 / 29.0);
                let ratio = (0..domain.len())
                    .map(|i| realized.reaction_dual_value(i, t) / t.powf(p - 1.0))
                    .fold(f64::INFINITY, |m, v| m.min(v));
                if ratio < prev * (1.0 - 1e-9) {
                    violations.push(format!("ratio shrinks as t decreases near t = {t:.2e}"));
                    break;
                }
                prev = ratio;
            }
            if prev < 1e3 {
                violations.push(format!(
                    "ratio f/phi_p = {prev:.3e} at the smallest sample, expected to diverge"
                ));
            }
        }
        Hypothesis::Odd => {
            for (i, term) in rhs.terms.iter().enumerate() {
                if !term.odd {
                    violations.push(format!("term {i} (q = {}) is even in t", term.q));
                }
            }
            if rhs.forcing.is_some() {
                violations.push("fixed forcing breaks oddness".into());
            }
        }
    }
    HypothesisReport {
        hypothesis: which,
        holds: violations.is_empty(),
        violations,
    }
}

impl RealizedRhs {
    fn reaction_dual_value(&self, i: usize, t: f64) -> f64 {
        self.terms.iter().map(|term| term.f(i, t)).sum()
    }
}
