//! Level-set truncation machinery for a-priori sup-norm bounds.
//!
//! Given a nonnegative exponent `q_tilde`, the iteration tracks the
//! truncation masses `Z_n = int (u - k_n)_+^{q_tilde}` along the level ladder
//! `k_n = k_* (2 - 2^{-n})`. When `Z_n` collapses below a relative floor the
//! ladder certifies `sup u <= 2 k_*`. The smallest certifying `k_*` is found
//! by bisection; brackets always exist because any `k_*` slightly above
//! `sup(u)/2` empties the last level set.

use serde::Serialize;
use thiserror::Error;

use crate::grid::{GridFunction, KahanSum};
use crate::weights::SpaceParams;

#[derive(Error, Debug)]
pub enum AprioriError {
    #[error("invalid growth term: {0}")]
    InvalidGrowth(String),
    #[error("inconclusive: {0}")]
    Inconclusive(String),
}

/// One growth term `h |t|^{q-1}` with its integrability witness `(a, r)`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct GrowthTerm {
    pub q: f64,
    pub r: f64,
    pub a: f64,
}

/// Growth envelope `|f(x,t)| <= sum_i h_i |t|^{q_i - 1}` described by the
/// exponent triples of its terms.
#[derive(Debug, Clone, Serialize)]
pub struct GrowthSpec {
    pub terms: Vec<GrowthTerm>,
}

const Z_FLOOR: f64 = 1e-14;
pub const DEFAULT_LEVELS: usize = 40;

/// Exponent `q_tilde`: the largest solution of
/// `1/r_i + a_i/p + (max{p, q_i} - a_i)/q_tilde_i = 1` over the terms.
///
/// Each term must satisfy the strict growth inequality, which is equivalent
/// to `q_tilde_i` staying below the critical exponent.
pub fn compute_qtilde(spec: &GrowthSpec, params: &SpaceParams) -> Result<f64, AprioriError> {
    if spec.terms.is_empty() {
        return Err(AprioriError::InvalidGrowth("no growth terms".into()));
    }
    let critical = params.critical_exponent();
    let mut qtilde: f64 = 0.0;
    for (i, term) in spec.terms.iter().enumerate() {
        if !(term.q >= 1.0 && term.q < critical) {
            return Err(AprioriError::InvalidGrowth(format!(
                "term {i}: q = {} outside [1, {critical})",
                term.q
            )));
        }
        if !(term.r > 1.0) {
            return Err(AprioriError::InvalidGrowth(format!(
                "term {i}: r = {} must exceed 1",
                term.r
            )));
        }
        if !(0.0..=1.0).contains(&term.a) {
            return Err(AprioriError::InvalidGrowth(format!(
                "term {i}: a = {} outside [0, 1]",
                term.a
            )));
        }
        let growth = params.p.max(term.q);
        let denom = 1.0 - 1.0 / term.r - term.a / params.p;
        if denom <= 0.0 {
            return Err(AprioriError::InvalidGrowth(format!(
                "term {i}: 1/r + a/p = {} reaches 1",
                1.0 / term.r + term.a / params.p
            )));
        }
        let qi = (growth - term.a) / denom;
        if qi >= critical {
            return Err(AprioriError::InvalidGrowth(format!(
                "term {i}: induced exponent {qi} reaches the critical exponent {critical}"
            )));
        }
        qtilde = qtilde.max(qi);
    }
    Ok(qtilde)
}

/// Level ladder, truncation masses and the convergence verdict.
#[derive(Debug, Clone, Serialize)]
pub struct DeGiorgiTrace {
    pub k_star: f64,
    pub q_tilde: f64,
    pub levels: Vec<f64>,
    pub masses: Vec<f64>,
    pub converged: bool,
}

fn truncation_mass(u: &GridFunction, level: f64, q_tilde: f64) -> f64 {
    let mut sum = KahanSum::new();
    for &v in &u.values {
        if v > level {
            sum.add((v - level).powf(q_tilde));
        }
    }
    u.domain.cell_weight() * sum.value()
}

/// Runs the ladder `k_n = k_* (2 - 2^{-n})` for `n = 0..=n_max` and records
/// the masses; `converged` means the final mass fell below `1e-14 Z_0`.
pub fn degiorgi_trace(u: &GridFunction, k_star: f64, q_tilde: f64, n_max: usize) -> DeGiorgiTrace {
    let n_max = n_max.max(1);
    let mut levels = Vec::with_capacity(n_max + 1);
    let mut masses = Vec::with_capacity(n_max + 1);
    for n in 0..=n_max {
        let k_n = k_star * (2.0 - 0.5f64.powi(n as i32));
        levels.push(k_n);
        masses.push(truncation_mass(u, k_n, q_tilde));
    }
    let z0 = masses[0];
    let converged = z0 == 0.0 || masses[n_max] < Z_FLOOR * z0;
    DeGiorgiTrace {
        k_star,
        q_tilde,
        levels,
        masses,
        converged,
    }
}

fn certifies(u: &GridFunction, msup: f64, k: f64, q_tilde: f64, n_max: usize) -> bool {
    if msup <= 2.0 * k {
        let trace = degiorgi_trace(u, k, q_tilde, n_max);
        let monotone = trace.masses.windows(2).all(|w| w[1] <= w[0]);
        trace.converged && monotone
    } else {
        false
    }
}

fn positive_sup(u: &GridFunction) -> f64 {
    u.values.iter().cloned().fold(0.0, f64::max)
}

fn find_kstar_one_sided(u: &GridFunction, q_tilde: f64, n_max: usize) -> f64 {
    let msup = positive_sup(u);
    if msup == 0.0 {
        return 0.0;
    }
    // This bracket always certifies: the final level exceeds sup(u).
    let mut hi = 0.5 * msup * (1.0 + 1e-9);
    if !certifies(u, msup, hi, q_tilde, n_max) {
        hi = 0.5 * msup * (1.0 + 1e-6);
    }
    let mut lo = 0.0;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if certifies(u, msup, mid, q_tilde, n_max) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Smallest level base `k_*` (by bisection) whose ladder certifies the
/// two-sided bound `max |u| <= 2 k_*`; the sign-flipped pass covers the
/// negative part.
pub fn find_kstar(u: &GridFunction, q_tilde: f64) -> f64 {
    let n_max = DEFAULT_LEVELS;
    let k_plus = find_kstar_one_sided(u, q_tilde, n_max);
    let neg = u.scale(-1.0);
    let k_minus = find_kstar_one_sided(&neg, q_tilde, n_max);
    let mut k = k_plus.max(k_minus);
    if k == 0.0 {
        return 0.0;
    }
    // Guard against a non-monotone sliver of the relative-decay criterion:
    // re-verify both sides at the combined k and fall back to the bracket.
    let sup_abs = u.sup_norm();
    if !(certifies(u, positive_sup(u), k, q_tilde, n_max)
        && certifies(&neg, positive_sup(&neg), k, q_tilde, n_max)
        && sup_abs <= 2.0 * k)
    {
        k = 0.5 * sup_abs * (1.0 + 1e-9);
    }
    k
}

/// Exact pointwise verification of the ladder mechanics for one trace:
/// the level-set measure bound, the monotonicity of the truncations, and
/// the domination of `u` by the scaled truncation on the next level set.
#[derive(Debug, Clone, Serialize)]
pub struct ChainReport {
    pub mass_bound_ok: bool,
    pub truncation_monotone_ok: bool,
    pub domination_ok: bool,
}

impl ChainReport {
    pub fn all_ok(&self) -> bool {
        self.mass_bound_ok && self.truncation_monotone_ok && self.domination_ok
    }
}

pub fn check_level_set_chain(u: &GridFunction, trace: &DeGiorgiTrace) -> ChainReport {
    let w = u.domain.cell_weight();
    let q = trace.q_tilde;
    let mut mass_bound_ok = true;
    let mut truncation_monotone_ok = true;
    let mut domination_ok = true;
    for n in 0..trace.levels.len() - 1 {
        let k_n = trace.levels[n];
        let k_next = trace.levels[n + 1];
        let count = u.values.iter().filter(|&&v| v > k_next).count();
        let measure = w * count as f64;
        if trace.k_star > 0.0 {
            let bound = 2f64.powf((n as f64 + 1.0) * q) / trace.k_star.powf(q) * trace.masses[n];
            if measure > bound * (1.0 + 1e-12) {
                mass_bound_ok = false;
            }
        }
        let factor = 2f64.powi(n as i32 + 2) - 1.0;
        for &v in &u.values {
            let w_n = (v - k_n).max(0.0);
            let w_next = (v - k_next).max(0.0);
            if w_next > w_n {
                truncation_monotone_ok = false;
            }
            if v > k_next && !(v < factor * w_n) {
                domination_ok = false;
            }
        }
    }
    ChainReport {
        mass_bound_ok,
        truncation_monotone_ok,
        domination_ok,
    }
}

/// Two-regime power-law fit of sup norms against `L^{q_tilde}` norms.
#[derive(Debug, Clone, Serialize)]
pub struct ScalingFit {
    pub gamma_low: f64,
    pub gamma_high: f64,
    /// RMS deviation of the data from the piecewise fit, in log units.
    pub fit_residual: f64,
    /// Envelope constant: the data obeys
    /// `sup|u| <= C max(|u|_q^gamma_low, |u|_q^gamma_high)`.
    pub envelope_constant: f64,
    pub consistent: bool,
}

fn least_squares_slope(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, my - slope * mx)
}

/// Fits `log sup|u|` against `log |u|_{q_tilde}` in two regimes split at the
/// median norm. The envelope constant is inflated by three residual
/// standard deviations; data points escaping even that envelope mark the
/// fit inconsistent.
pub fn scaling_fit(solutions: &[GridFunction], q_tilde: f64) -> Result<ScalingFit, AprioriError> {
    if solutions.len() < 5 {
        return Err(AprioriError::Inconclusive(format!(
            "need at least 5 solutions, got {}",
            solutions.len()
        )));
    }
    let mut data: Vec<(f64, f64)> = Vec::with_capacity(solutions.len());
    for u in solutions {
        let t = u.lq_norm(q_tilde);
        let s = u.sup_norm();
        if t <= 0.0 || s <= 0.0 {
            return Err(AprioriError::Inconclusive("zero solution in sample".into()));
        }
        data.push((t.ln(), s.ln()));
    }
    data.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let spread = data.last().unwrap().0 - data[0].0;
    if spread < 2.0 * std::f64::consts::LN_10 {
        return Err(AprioriError::Inconclusive(format!(
            "norms span {:.2} decades, need at least 2",
            spread / std::f64::consts::LN_10
        )));
    }
    let mid = data.len() / 2;
    let (low, high) = data.split_at(mid.max(2).min(data.len() - 2));
    let (gamma_low, c_low) = least_squares_slope(low);
    let (gamma_high, c_high) = least_squares_slope(high);
    let predict = |x: f64, in_low: bool| {
        if in_low {
            gamma_low * x + c_low
        } else {
            gamma_high * x + c_high
        }
    };
    let mut sq = 0.0;
    for (i, (x, y)) in data.iter().enumerate() {
        let d = y - predict(*x, i < low.len());
        sq += d * d;
    }
    let fit_residual = (sq / data.len() as f64).sqrt();
    let envelope_constant = (c_low.max(c_high) + 3.0 * fit_residual).exp();
    let consistent = data.iter().all(|(x, y)| {
        let bound = envelope_constant * (gamma_low * x).exp().max((gamma_high * x).exp());
        y.exp() <= bound * (1.0 + 1e-9)
    });
    Ok(ScalingFit {
        gamma_low,
        gamma_high,
        fit_residual,
        envelope_constant,
        consistent,
    })
}
