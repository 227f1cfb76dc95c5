//! Weight functions and their integrability classes.
//!
//! A weight is either a radial power `h(x) = (1 - |x|)^{-beta}` on the unit
//! ball of dimension `N`, or a tabulated grid function on a 1-D domain. The
//! class checks decide whether `h rho^{s a}` lies in `L^r` for a pair
//! `(a, r)` compatible with the exponent inequality of the class, and return
//! an explicit witness pair so the verdict can be re-checked independently.
//!
//! Power weights are decided in closed form: on the unit ball,
//! `h rho^{s a} = rho^{s a - beta}` belongs to `L^r` exactly when
//! `r (beta - s a) < 1`. Tabulated weights are decided by quadrature on their
//! own grid; a finite tabulation can only certify the discrete surrogate, so
//! those verdicts carry the class-inequality margin but no integrability
//! margin.

use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::grid::{Domain1D, GridFunction, KahanSum};

#[derive(Error, Debug)]
pub enum WeightError {
    #[error("invalid space parameters: {0}")]
    InvalidParams(String),
    #[error("exponent q = {q} must be below the critical exponent {critical}")]
    Supercritical { q: f64, critical: f64 },
    #[error("power weight requires beta >= 0, got {0}")]
    NegativeBeta(f64),
    #[error("witness outside the admissible range: {0}")]
    BadWitness(String),
}

/// Ambient dimension and the exponents `(p, s, q)` of the function-space
/// setting. `q` must stay below the critical exponent.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SpaceParams {
    pub dim: u32,
    pub p: f64,
    pub s: f64,
    pub q: f64,
}

impl SpaceParams {
    pub fn new(dim: u32, p: f64, s: f64, q: f64) -> Result<Self, WeightError> {
        if dim == 0 {
            return Err(WeightError::InvalidParams("dimension must be >= 1".into()));
        }
        if !(p > 1.0) {
            return Err(WeightError::InvalidParams(format!("p must be > 1, got {p}")));
        }
        if !(s > 0.0 && s <= 1.0) {
            return Err(WeightError::InvalidParams(format!(
                "s must lie in (0, 1], got {s}"
            )));
        }
        if !(q >= 1.0) {
            return Err(WeightError::InvalidParams(format!("q must be >= 1, got {q}")));
        }
        let params = Self { dim, p, s, q };
        let critical = params.critical_exponent();
        if q >= critical {
            return Err(WeightError::Supercritical { q, critical });
        }
        Ok(params)
    }

    /// `N p / (N - s p)` below the space-dimension threshold, infinite above.
    pub fn critical_exponent(&self) -> f64 {
        critical_exponent(self.dim, self.p, self.s)
    }
}

/// Critical Sobolev exponent of the embedding; `+inf` when `s p >= N`.
pub fn critical_exponent(dim: u32, p: f64, s: f64) -> f64 {
    let n = dim as f64;
    if s * p < n {
        n * p / (n - s * p)
    } else {
        f64::INFINITY
    }
}

/// A weight function: radial boundary power on the unit ball, or a tabulated
/// grid function. `negative_on` optionally negates the realized weight on an
/// interval of the 1-D solver domain, producing a sign-changing weight whose
/// class membership (which only sees `|h|`) is unaffected.
#[derive(Debug, Clone)]
pub enum WeightSpec {
    Power {
        beta: f64,
        negative_on: Option<(f64, f64)>,
    },
    Tabulated(GridFunction),
}

impl WeightSpec {
    pub fn power(beta: f64) -> Result<Self, WeightError> {
        if beta < 0.0 {
            return Err(WeightError::NegativeBeta(beta));
        }
        Ok(Self::Power {
            beta,
            negative_on: None,
        })
    }

    pub fn power_masked(beta: f64, negative_on: (f64, f64)) -> Result<Self, WeightError> {
        if beta < 0.0 {
            return Err(WeightError::NegativeBeta(beta));
        }
        Ok(Self::Power {
            beta,
            negative_on: Some(negative_on),
        })
    }

    pub fn tabulated(values: GridFunction) -> Self {
        Self::Tabulated(values)
    }

    /// Nodal values on a 1-D solver domain; the boundary power uses the
    /// grid's own distance function.
    pub fn realize_on_grid(&self, domain: &Arc<Domain1D>) -> GridFunction {
        match self {
            Self::Power { beta, negative_on } => {
                let rho = domain.distance_to_boundary();
                let values = domain
                    .nodes()
                    .iter()
                    .zip(&rho)
                    .map(|(&x, &d)| {
                        let mut v = d.powf(-beta);
                        if let Some((lo, hi)) = negative_on {
                            if x >= *lo && x <= *hi {
                                v = -v;
                            }
                        }
                        v
                    })
                    .collect();
                GridFunction {
                    domain: Arc::clone(domain),
                    values,
                }
            }
            Self::Tabulated(g) => g.clone(),
        }
    }
}

/// Which integrability class a verdict refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum WeightClass {
    /// Plain `L^r` class with `1/r + q/p_s^* < 1` and `a = 0`.
    Aq,
    /// `h rho^{s a} in L^r` with `a in [0, q)` and `1/r + a/p + (q-a)/p_s^* < 1`.
    Wq,
    /// Subclass with `a in [0, 1]` and `max{p, q}` in place of `q`.
    TildeWq,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Witness {
    pub a: f64,
    pub r: f64,
}

/// Verdict of a class check together with a re-checkable witness.
#[derive(Debug, Clone, Serialize)]
pub struct ClassReport {
    pub class: WeightClass,
    pub member: bool,
    pub witness: Option<Witness>,
    /// Smallest slack among the defining inequalities at the witness;
    /// positive exactly when `member` is true.
    pub margin: f64,
}

/// Aggregate of all class verdicts for one weight, plus the largest plain
/// `L^r` exponent verified on the candidate grid.
#[derive(Debug, Clone, Serialize)]
pub struct WeightSummary {
    pub largest_lr: Option<f64>,
    pub aq: ClassReport,
    pub wq: ClassReport,
    pub tilde_wq: ClassReport,
}

const SCAN_POINTS: usize = 1000;
const REL_SLACK: f64 = 1e-9;
const LR_CAP: f64 = 1e6;

fn class_growth_exponent(class: WeightClass, params: &SpaceParams) -> f64 {
    match class {
        WeightClass::Aq | WeightClass::Wq => params.q,
        WeightClass::TildeWq => params.p.max(params.q),
    }
}

/// Candidate values of `a` for the scan, honoring each class's admissible
/// interval (`[0, q)` open, `[0, 1]` closed, or the single point `0`).
fn a_candidates(class: WeightClass, params: &SpaceParams) -> Vec<f64> {
    match class {
        WeightClass::Aq => vec![0.0],
        WeightClass::Wq => (0..SCAN_POINTS)
            .map(|k| params.q * k as f64 / SCAN_POINTS as f64)
            .collect(),
        WeightClass::TildeWq => (0..SCAN_POINTS)
            .map(|k| k as f64 / (SCAN_POINTS - 1) as f64)
            .collect(),
    }
}

/// Slack available to `1/r` in the class inequality at anchor `a`:
/// `1 - a/p - (Q - a)/p_s^*` with `Q` the class growth exponent.
fn inv_r_budget(class: WeightClass, params: &SpaceParams, a: f64) -> f64 {
    let big_q = class_growth_exponent(class, params);
    let critical = params.critical_exponent();
    let critical_term = if critical.is_finite() {
        (big_q - a) / critical
    } else {
        0.0
    };
    1.0 - a / params.p - critical_term
}

fn margin_at(class: WeightClass, params: &SpaceParams, beta: f64, a: f64, r: f64) -> f64 {
    let class_slack = inv_r_budget(class, params, a) - 1.0 / r;
    let singular = (beta - params.s * a).max(0.0);
    let lr_slack = 1.0 - r * singular;
    class_slack.min(lr_slack)
}

fn check_power_class(
    class: WeightClass,
    beta: f64,
    params: &SpaceParams,
) -> Result<ClassReport, WeightError> {
    let mut best: Option<(f64, Witness)> = None;
    for a in a_candidates(class, params) {
        let budget = inv_r_budget(class, params, a);
        if budget <= 0.0 {
            continue;
        }
        // The class inequality demands r > max(1, 1/budget); integrability of
        // rho^{s a - beta} demands r < 1/(beta - s a) when that power is
        // genuinely singular.
        let r_min = (1.0 / budget).max(1.0);
        let singular = beta - params.s * a;
        let r_max = if singular > 0.0 {
            1.0 / singular
        } else {
            f64::INFINITY
        };
        let feasible = if r_max.is_finite() {
            (r_max - r_min) / r_max > REL_SLACK
        } else {
            true
        };
        if !feasible {
            continue;
        }
        let r = if r_max.is_finite() {
            0.5 * (r_min + r_max)
        } else {
            (2.0 * r_min).max(2.0)
        };
        let margin = margin_at(class, params, beta, a, r);
        if margin > 0.0 && best.as_ref().map_or(true, |(m, _)| margin > *m) {
            best = Some((margin, Witness { a, r }));
        }
    }
    Ok(match best {
        Some((margin, witness)) => ClassReport {
            class,
            member: true,
            witness: Some(witness),
            margin,
        },
        None => ClassReport {
            class,
            member: false,
            witness: None,
            margin: 0.0,
        },
    })
}

/// `L^r` quadrature of `|h| rho^{s a}` on the tabulated grid; always finite
/// for finite nodal values, so membership hinges on the class inequality.
fn tabulated_lr_quadrature(g: &GridFunction, s: f64, a: f64, r: f64) -> f64 {
    let rho = g.domain.distance_to_boundary();
    let mut sum = KahanSum::new();
    for (v, d) in g.values.iter().zip(&rho) {
        sum.add((v.abs() * d.powf(s * a)).powf(r));
    }
    (g.domain.cell_weight() * sum.value()).powf(1.0 / r)
}

fn check_tabulated_class(
    class: WeightClass,
    g: &GridFunction,
    params: &SpaceParams,
) -> Result<ClassReport, WeightError> {
    let mut best: Option<(f64, Witness)> = None;
    // Coarser anchor grid than the closed-form scan; each candidate requires
    // a full quadrature pass.
    for k in 0..50 {
        let a = match class {
            WeightClass::Aq => {
                if k > 0 {
                    break;
                }
                0.0
            }
            WeightClass::Wq => params.q * k as f64 / 50.0,
            WeightClass::TildeWq => k as f64 / 49.0,
        };
        let budget = inv_r_budget(class, params, a);
        if budget <= REL_SLACK {
            continue;
        }
        for factor in [1.5, 3.0, 10.0, 100.0] {
            let r = factor / budget;
            let slack = budget - 1.0 / r;
            if slack <= REL_SLACK {
                continue;
            }
            let quad = tabulated_lr_quadrature(g, params.s, a, r);
            if !quad.is_finite() {
                continue;
            }
            if best.as_ref().map_or(true, |(m, _)| slack > *m) {
                best = Some((slack, Witness { a, r }));
            }
        }
    }
    Ok(match best {
        Some((margin, witness)) => ClassReport {
            class,
            member: true,
            witness: Some(witness),
            margin,
        },
        None => ClassReport {
            class,
            member: false,
            witness: None,
            margin: 0.0,
        },
    })
}

fn check_class(
    class: WeightClass,
    weight: &WeightSpec,
    params: &SpaceParams,
) -> Result<ClassReport, WeightError> {
    match weight {
        WeightSpec::Power { beta, .. } => check_power_class(class, *beta, params),
        WeightSpec::Tabulated(g) => check_tabulated_class(class, g, params),
    }
}

/// Membership in the plain Hoelder class (`a = 0`).
pub fn check_aq(weight: &WeightSpec, params: &SpaceParams) -> Result<ClassReport, WeightError> {
    check_class(WeightClass::Aq, weight, params)
}

/// Membership in the weighted class with `a in [0, q)`.
pub fn check_wq(weight: &WeightSpec, params: &SpaceParams) -> Result<ClassReport, WeightError> {
    check_class(WeightClass::Wq, weight, params)
}

/// Membership in the subclass with `a in [0, 1]` and growth `max{p, q}`.
pub fn check_tilde_wq(
    weight: &WeightSpec,
    params: &SpaceParams,
) -> Result<ClassReport, WeightError> {
    check_class(WeightClass::TildeWq, weight, params)
}

/// Re-checks a user-supplied witness pair exactly against the defining
/// inequalities; returns its margin (positive means the witness certifies).
pub fn validate_witness(
    weight: &WeightSpec,
    params: &SpaceParams,
    class: WeightClass,
    a: f64,
    r: f64,
) -> Result<f64, WeightError> {
    if !(r > 1.0) {
        return Err(WeightError::BadWitness(format!("r must be > 1, got {r}")));
    }
    let admissible = match class {
        WeightClass::Aq => a == 0.0,
        WeightClass::Wq => (0.0..params.q).contains(&a),
        WeightClass::TildeWq => (0.0..=1.0).contains(&a),
    };
    if !admissible {
        return Err(WeightError::BadWitness(format!(
            "a = {a} outside the admissible interval of {class:?}"
        )));
    }
    match weight {
        WeightSpec::Power { beta, .. } => Ok(margin_at(class, params, *beta, a, r)),
        WeightSpec::Tabulated(g) => {
            let slack = inv_r_budget(class, params, a) - 1.0 / r;
            let quad = tabulated_lr_quadrature(g, params.s, a, r);
            Ok(if quad.is_finite() { slack } else { f64::NEG_INFINITY })
        }
    }
}

/// All class verdicts for one weight in a single report.
pub fn summarize(weight: &WeightSpec, params: &SpaceParams) -> Result<WeightSummary, WeightError> {
    Ok(WeightSummary {
        largest_lr: largest_lr_verified(weight, params),
        aq: check_aq(weight, params)?,
        wq: check_wq(weight, params)?,
        tilde_wq: check_tilde_wq(weight, params)?,
    })
}

/// Largest exponent from a log-spaced candidate grid for which plain `L^r`
/// membership verifies; `None` when not even exponents near 1 qualify.
pub fn largest_lr_verified(weight: &WeightSpec, params: &SpaceParams) -> Option<f64> {
    let candidates: Vec<f64> = (0..200)
        .map(|k| (1.0 + 1e-6) * (LR_CAP / (1.0 + 1e-6)).powf(k as f64 / 199.0))
        .collect();
    let passes = |r: f64| -> bool {
        match weight {
            WeightSpec::Power { beta, .. } => r * beta < 1.0,
            WeightSpec::Tabulated(g) => {
                tabulated_lr_quadrature(g, params.s, 0.0, r).is_finite()
            }
        }
    };
    candidates.into_iter().rev().find(|&r| passes(r))
}

/// Lebesgue measure of the unit ball in dimension `n`.
pub fn unit_ball_volume(dim: u32) -> f64 {
    match dim {
        0 => 1.0,
        1 => 2.0,
        _ => unit_ball_volume(dim - 2) * 2.0 * std::f64::consts::PI / dim as f64,
    }
}

/// Measure of the superlevel set `{|h| > level}`.
///
/// For the radial power on the unit ball this is closed-form; for tabulated
/// weights it is the cell-counting measure on the grid.
pub fn distribution_function(weight: &WeightSpec, dim: u32, level: f64) -> f64 {
    match weight {
        WeightSpec::Power { beta, .. } => {
            let omega = unit_ball_volume(dim);
            if *beta == 0.0 {
                return if level < 1.0 { omega } else { 0.0 };
            }
            if level <= 1.0 {
                omega
            } else {
                let inner = 1.0 - level.powf(-1.0 / beta);
                omega * (1.0 - inner.powi(dim as i32))
            }
        }
        WeightSpec::Tabulated(g) => {
            let count = g.values.iter().filter(|v| v.abs() > level).count();
            g.domain.cell_weight() * count as f64
        }
    }
}

/// Decreasing rearrangement `h^*(t)`, the generalized inverse of the
/// distribution function.
pub fn decreasing_rearrangement(weight: &WeightSpec, dim: u32, t: f64) -> f64 {
    match weight {
        WeightSpec::Power { beta, .. } => {
            let omega = unit_ball_volume(dim);
            if t >= omega {
                return 0.0;
            }
            if *beta == 0.0 {
                return 1.0;
            }
            if t <= 0.0 {
                return f64::INFINITY;
            }
            let inner = 1.0 - (1.0 - t / omega).powf(1.0 / dim as f64);
            inner.powf(-beta)
        }
        WeightSpec::Tabulated(g) => {
            let w = g.domain.cell_weight();
            let total = w * g.len() as f64;
            if t >= total {
                return 0.0;
            }
            let mut sorted: Vec<f64> = g.values.iter().map(|v| v.abs()).collect();
            sorted.sort_by(|x, y| y.partial_cmp(x).unwrap());
            let k = (t / w).floor().max(0.0) as usize;
            if k < sorted.len() {
                sorted[k]
            } else {
                0.0
            }
        }
    }
}

/// Exponent pair of a Lorentz space `L^{p0, q0}`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LorentzParams {
    pub p0: f64,
    pub q0: f64,
}

impl LorentzParams {
    pub fn new(p0: f64, q0: f64) -> Result<Self, WeightError> {
        if !(p0 > 1.0 && q0 > 1.0) {
            return Err(WeightError::InvalidParams(format!(
                "Lorentz exponents must exceed 1, got p0 = {p0}, q0 = {q0}"
            )));
        }
        Ok(Self { p0, q0 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LorentzVerdict {
    Member,
    NotMember,
    /// The refinement behaviour of the quasinorm integral was too close to
    /// call; near the threshold its divergence is logarithmically slow.
    Inconclusive,
}

#[derive(Debug, Clone, Serialize)]
pub struct LorentzReport {
    pub verdict: LorentzVerdict,
    /// Growth factor of the quasinorm tail across the last two refinements
    /// (numeric branch only).
    pub tail_growth: Option<f64>,
    /// Membership threshold on `beta` (analytic branch only).
    pub beta_threshold: Option<f64>,
}

/// Lorentz-space membership. Power weights are decided analytically
/// (`beta < 1/p0`, strictly); tabulated weights go through the numeric
/// refinement test.
pub fn lorentz_membership(weight: &WeightSpec, lorentz: &LorentzParams, dim: u32) -> LorentzReport {
    match weight {
        WeightSpec::Power { beta, .. } => {
            let threshold = 1.0 / lorentz.p0;
            // Convergence of the quasinorm integral reduces to the sign of
            // the exponent (1/p0 - beta) q0 near t = 0.
            let verdict = if (threshold - beta) * lorentz.q0 > 0.0 {
                LorentzVerdict::Member
            } else {
                LorentzVerdict::NotMember
            };
            LorentzReport {
                verdict,
                tail_growth: None,
                beta_threshold: Some(threshold),
            }
        }
        WeightSpec::Tabulated(_) => lorentz_membership_numeric(weight, lorentz, dim),
    }
}

/// Numeric Lorentz test: quadrature of `[t^{1/p0} h^*(t)]^{q0} / t` over a
/// shrinking lower limit. The integral increment per refinement grows
/// geometrically for a divergent integrand and shrinks for a convergent one;
/// ratios inside `(0.9, 1.1)` are declared inconclusive.
pub fn lorentz_membership_numeric(
    weight: &WeightSpec,
    lorentz: &LorentzParams,
    dim: u32,
) -> LorentzReport {
    let total = match weight {
        WeightSpec::Power { .. } => unit_ball_volume(dim),
        WeightSpec::Tabulated(g) => g.domain.cell_weight() * g.len() as f64,
    };
    let integrand = |t: f64| -> f64 {
        let h = decreasing_rearrangement(weight, dim, t);
        (t.powf(1.0 / lorentz.p0) * h).powf(lorentz.q0) / t
    };
    // Log-midpoint panels over [lo, hi].
    let segment = |lo: f64, hi: f64| -> f64 {
        let panels = 240;
        let log_lo = lo.ln();
        let step = (hi.ln() - log_lo) / panels as f64;
        let mut sum = KahanSum::new();
        for k in 0..panels {
            let tm = (log_lo + (k as f64 + 0.5) * step).exp();
            sum.add(integrand(tm) * tm * step);
        }
        sum.value()
    };
    let t_a = total * 1e-3;
    let t_b = total * 1e-6;
    let t_c = total * 1e-9;
    let head = segment(t_a, total * (1.0 - 1e-12));
    let inc1 = segment(t_b, t_a);
    let inc2 = segment(t_c, t_b);
    if !(head.is_finite() && inc1.is_finite() && inc2.is_finite()) {
        return LorentzReport {
            verdict: LorentzVerdict::NotMember,
            tail_growth: Some(f64::INFINITY),
            beta_threshold: None,
        };
    }
    if inc1 <= 1e-300 || inc1 <= 1e-14 * head {
        // The tail contributes nothing; bounded rearrangement.
        return LorentzReport {
            verdict: LorentzVerdict::Member,
            tail_growth: Some(0.0),
            beta_threshold: None,
        };
    }
    let ratio = inc2 / inc1;
    let verdict = if ratio >= 1.1 {
        LorentzVerdict::NotMember
    } else if ratio <= 0.9 {
        LorentzVerdict::Member
    } else {
        LorentzVerdict::Inconclusive
    };
    LorentzReport {
        verdict,
        tail_growth: Some(ratio),
        beta_threshold: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    fn params(dim: u32, p: f64, s: f64, q: f64) -> SpaceParams {
        SpaceParams::new(dim, p, s, q).unwrap()
    }

    #[test]
    fn critical_exponent_values() {
        assert_relative_eq!(critical_exponent(3, 2.0, 1.0), 6.0);
        assert_relative_eq!(critical_exponent(1, 2.0, 0.4), 10.0, max_relative = 1e-14);
        assert!(critical_exponent(1, 2.0, 0.6).is_infinite());
    }

    #[test]
    fn supercritical_q_rejected() {
        assert!(matches!(
            SpaceParams::new(3, 2.0, 1.0, 6.0),
            Err(WeightError::Supercritical { .. })
        ));
    }

    #[test]
    fn bounded_weight_in_every_class() {
        let pr = params(3, 2.0, 1.0, 2.0);
        let h = WeightSpec::power(0.0).unwrap();
        for report in [
            check_aq(&h, &pr).unwrap(),
            check_wq(&h, &pr).unwrap(),
            check_tilde_wq(&h, &pr).unwrap(),
        ] {
            assert!(report.member);
            assert!(report.margin > 0.0);
            let w = report.witness.unwrap();
            assert_eq!(w.a, 0.0);
        }
    }

    #[test]
    fn tilde_wq_threshold_weight_member_with_explicit_witness() {
        // N = 3, p = 2, s = 1, beta = 2/3, q = 2: member of the tilde class,
        // and the pair (a, r) = (2/3, 3) certifies it.
        let pr = params(3, 2.0, 1.0, 2.0);
        let h = WeightSpec::power(2.0 / 3.0).unwrap();
        let report = check_tilde_wq(&h, &pr).unwrap();
        assert!(report.member);
        assert!(report.margin > 0.0);
        let w = report.witness.unwrap();
        let recheck = validate_witness(&h, &pr, WeightClass::TildeWq, w.a, w.r).unwrap();
        assert!(recheck > 0.0);
        assert_relative_eq!(recheck, report.margin, max_relative = 1e-12);
        let explicit = validate_witness(&h, &pr, WeightClass::TildeWq, 2.0 / 3.0, 3.0).unwrap();
        assert!(explicit > 0.0);
        // But the same weight misses L^{3/2}: r beta < 1 forces r < 3/2.
        let lr = largest_lr_verified(&h, &pr).unwrap();
        assert!(lr < 1.5);
    }

    #[test]
    fn wq_infeasible_for_strong_singularity() {
        // N = 3, p = 2, s = 1, beta = 2, q = 2: the two inequalities in
        // (a, r) are jointly infeasible over the whole scan.
        let pr = params(3, 2.0, 1.0, 2.0);
        let h = WeightSpec::power(2.0).unwrap();
        let report = check_wq(&h, &pr).unwrap();
        assert!(!report.member);
        assert!(report.witness.is_none());
    }

    #[test]
    fn near_boundary_power_example_family() {
        // beta = 2s/3 + eps on the unit ball with N = 3, p = q = 2 is a
        // member of the tilde class whenever the feasibility region is
        // nonempty; at s = 1 this covers every eps in [0, 1/3).
        for (s, eps) in [(1.0, 0.0), (1.0, 0.1), (1.0, 0.3), (0.7, 0.1), (0.5, 0.2)] {
            let beta = 2.0 * s / 3.0 + eps;
            let pr = params(3, 2.0, s, 2.0);
            let h = WeightSpec::power(beta).unwrap();
            let report = check_tilde_wq(&h, &pr).unwrap();
            assert!(report.member, "expected member at s = {s}, eps = {eps}");
            let w = report.witness.unwrap();
            let margin = validate_witness(&h, &pr, WeightClass::TildeWq, w.a, w.r).unwrap();
            assert!(margin > 0.0);
            // Members of the tilde class with q >= p are members of the wide class.
            assert!(check_wq(&h, &pr).unwrap().member);
        }
    }

    #[test]
    fn aq_examples() {
        let pr = params(3, 2.0, 1.0, 2.0);
        // Slightly above the Hoelder threshold 2/3: infeasible.
        let h = WeightSpec::power(2.0 / 3.0 + 1e-3).unwrap();
        assert!(!check_aq(&h, &pr).unwrap().member);
        // beta = 0.1: r = 5 certifies (1/5 + 2/6 < 1 and 0.5 < 1).
        let h = WeightSpec::power(0.1).unwrap();
        let report = check_aq(&h, &pr).unwrap();
        assert!(report.member);
        let margin = validate_witness(&h, &pr, WeightClass::Aq, 0.0, 5.0).unwrap();
        assert!(margin > 0.0);
    }

    #[test]
    fn class_inclusions_on_power_family() {
        // in_Aq implies in_Wq, and the tilde class sits inside the wide class
        // once the growth exponent dominates.
        for beta in [0.0, 0.2, 0.4, 2.0 / 3.0, 0.8, 1.2] {
            for q in [2.0, 3.0] {
                let pr = params(3, 2.0, 1.0, q);
                let h = WeightSpec::power(beta).unwrap();
                let aq = check_aq(&h, &pr).unwrap();
                let wq = check_wq(&h, &pr).unwrap();
                let tq = check_tilde_wq(&h, &pr).unwrap();
                if aq.member {
                    assert!(wq.member, "Aq but not Wq at beta = {beta}, q = {q}");
                }
                if tq.member && q >= 2.0 {
                    assert!(wq.member, "tilde but not wide at beta = {beta}, q = {q}");
                }
            }
        }
    }

    #[test]
    fn distribution_function_closed_form_and_monte_carlo() {
        let h = WeightSpec::power(2.0 / 3.0).unwrap();
        let omega = 4.0 * std::f64::consts::PI / 3.0;
        assert_relative_eq!(unit_ball_volume(3), omega, max_relative = 1e-15);
        assert_relative_eq!(distribution_function(&h, 3, 1.0), omega, max_relative = 1e-15);
        assert_relative_eq!(distribution_function(&h, 3, 0.3), omega, max_relative = 1e-15);
        assert!(distribution_function(&h, 3, 1e9) < 1e-5);

        // Level 8: alpha = omega (1 - (1 - 8^{-3/2})^3), cross-checked by a
        // seeded Monte-Carlo volume of the superlevel set.
        let level: f64 = 8.0;
        let expected = omega * (1.0 - (1.0 - level.powf(-1.5)).powi(3));
        assert_relative_eq!(distribution_function(&h, 3, level), expected, max_relative = 1e-14);

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
        let samples = 1_000_000usize;
        let mut inside = 0usize;
        let mut above = 0usize;
        while inside < samples {
            let x = rng.gen_range(-1.0..1.0);
            let y = rng.gen_range(-1.0..1.0);
            let z: f64 = rng.gen_range(-1.0..1.0);
            let r2: f64 = x * x + y * y + z * z;
            if r2 >= 1.0 {
                continue;
            }
            inside += 1;
            let hval = (1.0 - r2.sqrt()).powf(-2.0 / 3.0);
            if hval > level {
                above += 1;
            }
        }
        let mc = omega * above as f64 / samples as f64;
        assert_relative_eq!(mc, expected, max_relative = 0.01);
    }

    #[test]
    fn rearrangement_closed_form_and_inverse() {
        let h = WeightSpec::power(2.0 / 3.0).unwrap();
        let omega = 4.0 * std::f64::consts::PI / 3.0;
        assert_eq!(decreasing_rearrangement(&h, 3, omega), 0.0);
        assert_eq!(decreasing_rearrangement(&h, 3, 2.0 * omega), 0.0);
        assert!(decreasing_rearrangement(&h, 3, 1e-12) > 1e3);

        // t = omega (1 - 1/8) gives h^* = [1 - (1/8)^{1/3}]^{-2/3} = 2^{2/3}.
        let t = omega * (1.0 - 1.0 / 8.0);
        assert_relative_eq!(
            decreasing_rearrangement(&h, 3, t),
            2f64.powf(2.0 / 3.0),
            max_relative = 1e-13
        );

        // Generalized-inverse property h^*(alpha(s)) <= s on samples, and
        // monotonicity of both functions.
        let mut prev_alpha = f64::INFINITY;
        for &s in &[0.5, 1.0, 1.5, 2.0, 4.0, 8.0, 32.0] {
            let alpha = distribution_function(&h, 3, s);
            assert!(alpha <= prev_alpha + 1e-15);
            prev_alpha = alpha;
            assert!(decreasing_rearrangement(&h, 3, alpha) <= s * (1.0 + 1e-12));
        }
        let mut prev_h = f64::INFINITY;
        for k in 1..40 {
            let t = omega * k as f64 / 40.0;
            let v = decreasing_rearrangement(&h, 3, t);
            assert!(v <= prev_h + 1e-15);
            prev_h = v;
        }
    }

    #[test]
    fn tabulated_rearrangement_inverts_cell_counting() {
        let d = build_grid(-1.0, 1.0, 32).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let g = GridFunction::new(
            Arc::clone(&d),
            (0..32).map(|_| rng.gen_range(0.0..4.0)).collect(),
        )
        .unwrap();
        let h = WeightSpec::tabulated(g.clone());
        let w = d.cell_weight();
        for &s in &[0.1, 0.7, 1.3, 2.9, 3.9] {
            let alpha = distribution_function(&h, 1, s);
            assert!(decreasing_rearrangement(&h, 1, alpha) <= s + 1e-12);
        }
        // Total mass of the superlevel set at level 0 is the grid measure.
        assert_relative_eq!(
            distribution_function(&h, 1, 0.0),
            w * 32.0,
            max_relative = 1e-14
        );
    }

    #[test]
    fn lorentz_analytic_threshold() {
        let lp = LorentzParams::new(1.5, 2.0).unwrap();
        let at = |beta: f64| lorentz_membership(&WeightSpec::power(beta).unwrap(), &lp, 3).verdict;
        assert_eq!(at(0.5), LorentzVerdict::Member);
        assert_eq!(at(2.0 / 3.0), LorentzVerdict::NotMember);
        assert_eq!(at(0.7), LorentzVerdict::NotMember);
        let lp4 = LorentzParams::new(1.5, 4.0).unwrap();
        assert_eq!(
            lorentz_membership(&WeightSpec::power(0.7).unwrap(), &lp4, 3).verdict,
            LorentzVerdict::NotMember
        );
    }

    #[test]
    fn lorentz_numeric_agrees_off_threshold() {
        let lp = LorentzParams::new(1.5, 2.0).unwrap();
        for beta in [0.3, 0.5, 0.6, 0.7, 0.8, 1.0] {
            let h = WeightSpec::power(beta).unwrap();
            let analytic = lorentz_membership(&h, &lp, 3).verdict;
            let numeric = lorentz_membership_numeric(&h, &lp, 3).verdict;
            assert_eq!(analytic, numeric, "disagreement at beta = {beta}");
        }
    }

    #[test]
    fn witness_rejected_outside_admissible_range() {
        let pr = params(3, 2.0, 1.0, 2.0);
        let h = WeightSpec::power(0.5).unwrap();
        assert!(validate_witness(&h, &pr, WeightClass::Wq, 2.0, 3.0).is_err());
        assert!(validate_witness(&h, &pr, WeightClass::TildeWq, 1.5, 3.0).is_err());
        assert!(validate_witness(&h, &pr, WeightClass::Aq, 0.1, 3.0).is_err());
        assert!(validate_witness(&h, &pr, WeightClass::Wq, 0.5, 0.9).is_err());
    }

    #[test]
    fn masked_power_realization_flips_sign() {
        let d = build_grid(-1.0, 1.0, 8).unwrap();
        let h = WeightSpec::power_masked(0.3, (-1.0, 0.0)).unwrap();
        let g = h.realize_on_grid(&d);
        let rho = d.distance_to_boundary();
        for (i, &x) in d.nodes().iter().enumerate() {
            let expected = rho[i].powf(-0.3) * if x <= 0.0 { -1.0 } else { 1.0 };
            assert_relative_eq!(g.values[i], expected, max_relative = 1e-14);
        }
    }
}
