//! Experiment configuration: one JSON file with nested sections, fully
//! validated before any computation runs.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub domain: DomainCfg,
    pub operator: OperatorCfg,
    #[serde(default)]
    pub weight: WeightCfg,
    #[serde(default)]
    pub rhs: Option<RhsCfg>,
    #[serde(default)]
    pub solver: SolverCfg,
    #[serde(default)]
    pub eigen: Option<EigenCfg>,
    #[serde(default)]
    pub bounds: Option<BoundsCfg>,
    #[serde(default)]
    pub solve: Option<SolveCfg>,
    #[serde(default)]
    pub bifurcate: Option<BifurcateCfg>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct DomainCfg {
    pub left: f64,
    pub right: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorCfg {
    pub p: f64,
    pub s: f64,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "lowercase")]
pub enum WeightCfg {
    /// Boundary power `rho(x)^{-beta}`, optionally negated on an interval.
    Power {
        beta: f64,
        #[serde(default)]
        negative_on: Option<(f64, f64)>,
    },
    /// Explicit nodal values (must match the grid length).
    Tabulated { values: Vec<f64> },
}

impl Default for WeightCfg {
    fn default() -> Self {
        WeightCfg::Power {
            beta: 0.0,
            negative_on: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct TermCfg {
    pub coef: f64,
    #[serde(default)]
    pub beta: f64,
    pub q: f64,
    #[serde(default = "default_true")]
    pub odd: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RhsCfg {
    pub terms: Vec<TermCfg>,
}

#[derive(Debug, Clone, Copy, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverCfg {
    pub tol: f64,
    pub max_iter: usize,
    pub step0: f64,
    pub seed: u64,
}

impl Default for SolverCfg {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 2000,
            step0: 1.0,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct EigenCfg {
    pub second: bool,
    pub path_points: usize,
    pub oracle: bool,
    pub simplicity_trials: usize,
}

impl Default for EigenCfg {
    fn default() -> Self {
        Self {
            second: true,
            path_points: 32,
            oracle: false,
            simplicity_trials: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsCfg {
    pub q_tilde: f64,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields, tag = "mode", rename_all = "lowercase")]
pub enum SolveCfg {
    /// Linear-in-lambda problem with a seeded forcing functional.
    Fredholm {
        lambda: f64,
        #[serde(default = "default_forcing_seed")]
        forcing_seed: u64,
    },
    /// Multi-start search for small solutions of the odd sublinear problem.
    Small {
        #[serde(default = "default_levels")]
        levels: usize,
    },
}

fn default_forcing_seed() -> u64 {
    901
}

fn default_levels() -> usize {
    5
}

#[derive(Debug, Clone, Copy, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct BifurcateCfg {
    pub eps: f64,
    pub step: f64,
    pub steps: usize,
    pub path_points: usize,
}

impl Default for BifurcateCfg {
    fn default() -> Self {
        Self {
            eps: 1e-2,
            step: 0.0125,
            steps: 40,
            path_points: 32,
        }
    }
}

impl Config {
    pub fn load(path: &std::path::Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {path:?}: {e}")))?;
        let cfg: Config = serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("config parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks every parameter constraint up front, naming the violated
    /// inequality in the message.
    pub fn validate(&self) -> Result<(), CliError> {
        let d = &self.domain;
        if !(d.left < d.right) {
            return Err(CliError::Validation(format!(
                "domain requires left < right, got {} >= {}",
                d.left, d.right
            )));
        }
        if d.n < 2 {
            return Err(CliError::Validation(format!(
                "domain requires n >= 2, got {}",
                d.n
            )));
        }
        let op = &self.operator;
        if !(op.p > 1.0) {
            return Err(CliError::Validation(format!("operator requires p > 1, got {}", op.p)));
        }
        if !(op.s > 0.0 && op.s < 1.0) {
            return Err(CliError::Validation(format!(
                "operator requires s in (0, 1), got {}",
                op.s
            )));
        }
        if op.s * op.p >= 1.0 {
            return Err(CliError::Validation(format!(
                "operator requires s*p < 1 (tail integrals and critical exponent), got s*p = {}",
                op.s * op.p
            )));
        }
        let critical = fracp_core::weights::critical_exponent(1, op.p, op.s);
        if let WeightCfg::Power { beta, .. } = &self.weight {
            if *beta < 0.0 {
                return Err(CliError::Validation(format!(
                    "weight requires beta >= 0, got {beta}"
                )));
            }
        }
        if let WeightCfg::Tabulated { values } = &self.weight {
            if values.len() != d.n {
                return Err(CliError::Validation(format!(
                    "tabulated weight has {} values, the grid has {} nodes",
                    values.len(),
                    d.n
                )));
            }
        }
        if let Some(rhs) = &self.rhs {
            for (i, t) in rhs.terms.iter().enumerate() {
                if !(t.q >= 1.0 && t.q < critical) {
                    return Err(CliError::Validation(format!(
                        "rhs term {i} requires 1 <= q < p_s^* = {critical}, got q = {}",
                        t.q
                    )));
                }
                if t.beta < 0.0 {
                    return Err(CliError::Validation(format!(
                        "rhs term {i} requires beta >= 0, got {}",
                        t.beta
                    )));
                }
            }
        }
        if !(self.solver.tol > 0.0) {
            return Err(CliError::Validation(format!(
                "solver requires tol > 0, got {}",
                self.solver.tol
            )));
        }
        if let Some(b) = &self.bounds {
            if !(b.q_tilde >= 1.0) {
                return Err(CliError::Validation(format!(
                    "bounds requires q_tilde >= 1, got {}",
                    b.q_tilde
                )));
            }
        }
        if let Some(e) = &self.eigen {
            if e.second && (e.path_points < 4 || e.path_points % 2 != 0) {
                return Err(CliError::Validation(format!(
                    "eigen.path_points must be an even number >= 4, got {}",
                    e.path_points
                )));
            }
        }
        Ok(())
    }

    /// Hash of the fully resolved configuration; stamped into every output
    /// file so artifacts are traceable and reruns diffable.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(canonical.as_bytes());
        let digest = hasher.finalize();
        let mut out = String::with_capacity(64);
        for byte in digest {
            out.push_str(&format!("{byte:02x}"));
        }
        out
    }
}
