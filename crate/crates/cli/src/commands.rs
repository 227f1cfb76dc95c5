//! The five experiment commands and their file outputs.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;
use serde_json::json;

use fracp_core::apriori::{check_level_set_chain, degiorgi_trace, find_kstar, DEFAULT_LEVELS};
use fracp_core::bifurcation::{
    branch_start, continue_branch, detect_bifurcation, BifurcationError, ContinuationOptions,
};
use fracp_core::eigen::{
    oracle_spectrum_p2, residual as eigen_residual, solve_first, solve_second, EigenError,
    EigenPair, OddPath,
};
use fracp_core::gagliardo::{assemble_kernel, DualVector, OperatorContext};
use fracp_core::grid::{build_grid, Domain1D, GridFunction};
use fracp_core::nonlinear::{
    find_small_solutions, solve_fredholm, NonlinearError, RhsSpec, RhsTerm, TruncationSpec,
};
use fracp_core::solver::{run_indexed, seeded_function, SolverOptions};
use fracp_core::weights::{
    check_aq, check_tilde_wq, check_wq, lorentz_membership, LorentzParams, LorentzVerdict,
    SpaceParams, WeightSpec,
};

use crate::config::{Config, SolveCfg, WeightCfg};
use crate::CliError;

impl From<EigenError> for CliError {
    fn from(e: EigenError) -> Self {
        match e {
            EigenError::NotConverged { .. } | EigenError::ProjectionFailed(_) => {
                CliError::Solver(e.to_string())
            }
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<NonlinearError> for CliError {
    fn from(e: NonlinearError) -> Self {
        match e {
            NonlinearError::NotFound(_) => CliError::Solver(e.to_string()),
            NonlinearError::NearResonance { .. } => CliError::Validation(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<BifurcationError> for CliError {
    fn from(e: BifurcationError) -> Self {
        match e {
            BifurcationError::Inconclusive(_) => CliError::Inconclusive(e.to_string()),
            BifurcationError::StartCorrectionFailed | BifurcationError::BadStart { .. } => {
                CliError::Solver(e.to_string())
            }
            other => CliError::Validation(other.to_string()),
        }
    }
}

fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes a file whose first line records the resolved config hash.
fn write_hashed(path: &Path, hash: &str, body: &str) -> Result<(), CliError> {
    let content = format!("# config-hash: {hash}\n{body}");
    std::fs::write(path, content)
        .map_err(|e| CliError::Validation(format!("cannot write {path:?}: {e}")))
}

fn write_csv(
    path: &Path,
    hash: &str,
    header: &str,
    rows: &[Vec<f64>],
) -> Result<(), CliError> {
    let mut body = String::from(header);
    body.push('\n');
    for row in rows {
        let line: Vec<String> = row.iter().map(|x| fmt17(*x)).collect();
        body.push_str(&line.join(","));
        body.push('\n');
    }
    write_hashed(path, hash, &body)
}

fn write_json<T: Serialize>(path: &Path, hash: &str, value: &T) -> Result<(), CliError> {
    let body = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Validation(format!("serialization failed: {e}")))?;
    write_hashed(path, hash, &(body + "\n"))
}

struct Experiment {
    domain: Arc<Domain1D>,
    ctx: OperatorContext,
    opts: SolverOptions,
    hash: String,
    outdir: PathBuf,
}

fn setup(cfg: &Config, outdir: &Path) -> Result<Experiment, CliError> {
    let domain = build_grid(cfg.domain.left, cfg.domain.right, cfg.domain.n)
        .map_err(|e| CliError::Validation(e.to_string()))?;
    let kernel = assemble_kernel(&domain, cfg.operator.s, cfg.operator.p)
        .map_err(|e| CliError::Validation(e.to_string()))?;
    let weight = weight_spec(&cfg.weight, &domain)?.realize_on_grid(&domain);
    let ctx = OperatorContext::eigen(kernel, weight)
        .map_err(|e| CliError::Validation(e.to_string()))?;
    let opts = SolverOptions {
        tol: cfg.solver.tol,
        max_iter: cfg.solver.max_iter,
        step0: cfg.solver.step0,
        seed: cfg.solver.seed,
    };
    std::fs::create_dir_all(outdir)
        .map_err(|e| CliError::Validation(format!("cannot create {outdir:?}: {e}")))?;
    Ok(Experiment {
        domain,
        ctx,
        opts,
        hash: cfg.hash(),
        outdir: outdir.to_path_buf(),
    })
}

fn weight_spec(cfg: &WeightCfg, domain: &Arc<Domain1D>) -> Result<WeightSpec, CliError> {
    match cfg {
        WeightCfg::Power { beta, negative_on } => {
            let spec = match negative_on {
                Some(region) => WeightSpec::power_masked(*beta, *region),
                None => WeightSpec::power(*beta),
            };
            spec.map_err(|e| CliError::Validation(e.to_string()))
        }
        WeightCfg::Tabulated { values } => {
            let g = GridFunction::new(Arc::clone(domain), values.clone())
                .map_err(|e| CliError::Validation(e.to_string()))?;
            Ok(WeightSpec::tabulated(g))
        }
    }
}

fn rhs_spec(cfg: &Config, lambda: Option<f64>, domain: &Arc<Domain1D>) -> Result<RhsSpec, CliError> {
    let terms = cfg
        .rhs
        .as_ref()
        .map(|r| {
            r.terms
                .iter()
                .map(|t| {
                    Ok(RhsTerm {
                        coef: t.coef,
                        weight: WeightSpec::power(t.beta)
                            .map_err(|e| CliError::Validation(e.to_string()))?,
                        q: t.q,
                        odd: t.odd,
                    })
                })
                .collect::<Result<Vec<_>, CliError>>()
        })
        .transpose()?
        .unwrap_or_default();
    let lambda_coupling = lambda
        .map(|l| Ok::<_, CliError>((l, weight_spec(&cfg.weight, domain)?)))
        .transpose()?;
    Ok(RhsSpec {
        terms,
        lambda_coupling,
        forcing: None,
    })
}

fn function_csv(exp: &Experiment, name: &str, u: &GridFunction) -> Result<PathBuf, CliError> {
    let rows: Vec<Vec<f64>> = exp
        .domain
        .nodes()
        .iter()
        .zip(&u.values)
        .map(|(x, v)| vec![*x, *v])
        .collect();
    let path = exp.outdir.join(name);
    write_csv(&path, &exp.hash, "x,u", &rows)?;
    Ok(path)
}

/// Weight-class verdict from command-line flags; JSON on stdout.
#[allow(clippy::too_many_arguments)]
pub fn cmd_check_weight(
    beta: f64,
    dim: u32,
    p: f64,
    s: f64,
    q: f64,
    class: &str,
    p0: f64,
    q0: f64,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let weight = WeightSpec::power(beta).map_err(|e| CliError::Validation(e.to_string()))?;
    let report = match class {
        "lorentz" => {
            let lp = LorentzParams::new(p0, q0).map_err(|e| CliError::Validation(e.to_string()))?;
            let r = lorentz_membership(&weight, &lp, dim);
            if r.verdict == LorentzVerdict::Inconclusive {
                return Err(CliError::Inconclusive(
                    "Lorentz membership near the threshold".into(),
                ));
            }
            json!({
                "class": "lorentz",
                "member": r.verdict == LorentzVerdict::Member,
                "witness_a": null,
                "witness_r": null,
                "margin": r.beta_threshold.map(|t| t - beta),
            })
        }
        "all" => {
            let params = SpaceParams::new(dim, p, s, q)
                .map_err(|e| CliError::Validation(e.to_string()))?;
            let summary = fracp_core::weights::summarize(&weight, &params)
                .map_err(|e| CliError::Validation(e.to_string()))?;
            serde_json::to_value(&summary).expect("summary serializes")
        }
        other => {
            let params = SpaceParams::new(dim, p, s, q)
                .map_err(|e| CliError::Validation(e.to_string()))?;
            let r = match other {
                "aq" => check_aq(&weight, &params),
                "wq" => check_wq(&weight, &params),
                "tilde-wq" => check_tilde_wq(&weight, &params),
                unknown => {
                    return Err(CliError::Validation(format!(
                        "unknown class {unknown:?}; expected aq, wq, tilde-wq, lorentz or all"
                    )))
                }
            }
            .map_err(|e| CliError::Validation(e.to_string()))?;
            json!({
                "class": other,
                "member": r.member,
                "witness_a": r.witness.map(|w| w.a),
                "witness_r": r.witness.map(|w| w.r),
                "margin": r.margin,
            })
        }
    };
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    println!("{text}");
    if let Some(path) = out {
        let hash = {
            use sha2::{Digest, Sha256};
            let mut h = Sha256::new();
            h.update(text.as_bytes());
            format!("{:x}", h.finalize())
        };
        write_hashed(path, &hash, &(text + "\n"))?;
    }
    Ok(())
}

/// First (and optionally second) eigenpair with CSV nodal output.
pub fn cmd_eigen(cfg: &Config, outdir: &Path, threads: usize) -> Result<(), CliError> {
    let exp = setup(cfg, outdir)?;
    let ecfg = cfg.eigen.unwrap_or_default();
    let pair = solve_first(&exp.ctx, &exp.opts)?;
    function_csv(&exp, "e1.csv", &pair.u)?;

    let mut summary = json!({
        "lambda1": pair.lambda,
        "residual1": pair.residual,
        "normalization1": pair.normalization,
    });

    if ecfg.second {
        let path = OddPath::great_circle(&pair.u, &exp.ctx, ecfg.path_points, &exp.opts)?;
        let second = solve_second(&exp.ctx, &path, &exp.opts)?;
        let maximizer = &second.path.points()[second.argmax];
        let res2 = eigen_residual(
            &EigenPair {
                lambda: second.lambda,
                u: maximizer.clone(),
                residual: 0.0,
                normalization: 1.0,
            },
            &exp.ctx,
        )?;
        function_csv(&exp, "e2_maximizer.csv", maximizer)?;
        summary["lambda2"] = json!(second.lambda);
        summary["residual2"] = json!(res2);
        summary["path_sweeps"] = json!(second.sweeps);
    }

    if ecfg.simplicity_trials > 0 {
        // Independent seeded re-solves, run over the worker cap, then a
        // single-threaded alignment pass.
        let results = run_indexed(ecfg.simplicity_trials, threads, |t| {
            let opts = exp.opts.with_seed(exp.opts.seed.wrapping_add(7919 * t as u64));
            solve_first(&exp.ctx, &opts).map(|p| p.u)
        });
        let mut verdict = "proportional";
        let mut worst: f64 = 1.0;
        let w = exp.domain.cell_weight();
        let mut minimizers = Vec::new();
        for r in results {
            match r {
                Ok(u) => minimizers.push(u),
                Err(_) => {
                    verdict = "inconclusive";
                    break;
                }
            }
        }
        if verdict != "inconclusive" {
            for i in 0..minimizers.len() {
                for j in (i + 1)..minimizers.len() {
                    let a = &minimizers[i];
                    let b = &minimizers[j];
                    let inner: f64 =
                        a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum::<f64>() * w;
                    let na = (a.values.iter().map(|x| x * x).sum::<f64>() * w).sqrt();
                    let nb = (b.values.iter().map(|x| x * x).sum::<f64>() * w).sqrt();
                    let align = inner.abs() / (na * nb);
                    worst = worst.min(align);
                }
            }
            if 1.0 - worst > 1e-6 {
                verdict = "distinct";
            }
        }
        summary["simplicity"] = json!(verdict);
        summary["worst_alignment"] = json!(worst);
    }

    if ecfg.oracle {
        if cfg.operator.p != 2.0 {
            return Err(CliError::Validation(format!(
                "the dense oracle requires p = 2, got p = {}",
                cfg.operator.p
            )));
        }
        let spectrum = oracle_spectrum_p2(&exp.ctx)?;
        let rows: Vec<Vec<f64>> = spectrum
            .iter()
            .enumerate()
            .map(|(k, (lam, _))| vec![k as f64, *lam])
            .collect();
        write_csv(&exp.outdir.join("oracle.csv"), &exp.hash, "index,lambda", &rows)?;
        summary["oracle_count"] = json!(spectrum.len());
    }

    write_json(&exp.outdir.join("eigen.json"), &exp.hash, &summary)?;
    println!("{}", serde_json::to_string(&summary).expect("summary serializes"));
    Ok(())
}

fn read_solution_csv(path: &Path, domain: &Arc<Domain1D>) -> Result<GridFunction, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read {path:?}: {e}")))?;
    let mut xs = Vec::new();
    let mut us = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with('x') {
            continue;
        }
        let mut parts = line.split(',');
        let x: f64 = parts
            .next()
            .and_then(|t| t.trim().parse().ok())
            .ok_or_else(|| CliError::Validation(format!("bad CSV line: {line}")))?;
        let u: f64 = parts
            .next()
            .and_then(|t| t.trim().parse().ok())
            .ok_or_else(|| CliError::Validation(format!("bad CSV line: {line}")))?;
        xs.push(x);
        us.push(u);
    }
    if xs.len() != domain.len() {
        return Err(CliError::Validation(format!(
            "solution file has {} rows, the configured grid has {} nodes",
            xs.len(),
            domain.len()
        )));
    }
    for (x, node) in xs.iter().zip(domain.nodes()) {
        if (x - node).abs() > 1e-9 * (1.0 + node.abs()) {
            return Err(CliError::Validation(format!(
                "solution grid mismatch: file node {x} vs configured node {node}"
            )));
        }
    }
    GridFunction::new(Arc::clone(domain), us).map_err(|e| CliError::Validation(e.to_string()))
}

/// Sup-norm certification of a stored solution.
pub fn cmd_bounds(cfg: &Config, outdir: &Path, solution: &Path) -> Result<(), CliError> {
    let exp = setup(cfg, outdir)?;
    let bcfg = cfg
        .bounds
        .ok_or_else(|| CliError::Validation("config has no [bounds] section".into()))?;
    let u = read_solution_csv(solution, &exp.domain)?;
    let k_star = find_kstar(&u, bcfg.q_tilde);
    let trace = degiorgi_trace(&u, k_star, bcfg.q_tilde, DEFAULT_LEVELS);
    let chain = check_level_set_chain(&u, &trace);
    let rows: Vec<Vec<f64>> = trace
        .levels
        .iter()
        .zip(&trace.masses)
        .enumerate()
        .map(|(n, (k, z))| vec![n as f64, *k, *z])
        .collect();
    write_csv(&exp.outdir.join("trace.csv"), &exp.hash, "n,k_n,Z_n", &rows)?;
    let summary = json!({
        "k_star": k_star,
        "bound": 2.0 * k_star,
        "sup_norm": u.sup_norm(),
        "converged": trace.converged,
        "chain_ok": chain.all_ok(),
    });
    write_json(&exp.outdir.join("bounds.json"), &exp.hash, &summary)?;
    println!("{}", serde_json::to_string(&summary).expect("summary serializes"));
    Ok(())
}

/// Non-resonant solve or small-solution search, per the config block.
pub fn cmd_solve(cfg: &Config, outdir: &Path) -> Result<(), CliError> {
    let exp = setup(cfg, outdir)?;
    let scfg = cfg
        .solve
        .clone()
        .ok_or_else(|| CliError::Validation("config has no [solve] section".into()))?;

    match scfg {
        SolveCfg::Fredholm {
            lambda,
            forcing_seed,
        } => {
            let g = seeded_function(&exp.domain, forcing_seed);
            let f = DualVector {
                domain: Arc::clone(&exp.domain),
                coeffs: g.values,
            };
            let sol = solve_fredholm(lambda, &f, &exp.ctx, &exp.opts)?;
            function_csv(&exp, "solution.csv", &sol.u)?;
            let summary = json!({
                "lambda": lambda,
                "energy": sol.energy,
                "residual": sol.residual,
                "sup_norm": sol.u.sup_norm(),
            });
            write_json(&exp.outdir.join("solve.json"), &exp.hash, &summary)?;
            println!("{}", serde_json::to_string(&summary).expect("summary serializes"));
        }
        SolveCfg::Small { levels } => {
            let rhs = rhs_spec(cfg, None, &exp.domain)?.realize(&exp.domain);
            if rhs.terms.is_empty() {
                return Err(CliError::Validation(
                    "small-solution search needs at least one rhs term".into(),
                ));
            }
            let spec = TruncationSpec::from_scan(&rhs, &exp.ctx.kernel, &exp.opts)?;
            let out = find_small_solutions(&rhs, &spec, &exp.ctx, levels, &exp.opts)?;
            let mut entries = Vec::new();
            for (k, sol) in out.solutions.iter().enumerate() {
                let name = format!("small_{k:02}.csv");
                function_csv(&exp, &name, &sol.u)?;
                entries.push(json!({
                    "file": name,
                    "energy": sol.energy,
                    "residual": sol.residual,
                    "sup_norm": sol.u.sup_norm(),
                }));
            }
            let summary = json!({
                "t1": spec.t1,
                "t2": spec.t2,
                "gamma": spec.gamma,
                "solutions": entries,
                "gaps": out.gaps,
            });
            write_json(&exp.outdir.join("solve.json"), &exp.hash, &summary)?;
            println!("{}", serde_json::to_string(&summary).expect("summary serializes"));
        }
    }
    Ok(())
}

/// Branch continuation from the first eigenvalue plus bifurcation-point
/// detection.
pub fn cmd_bifurcate(cfg: &Config, outdir: &Path) -> Result<(), CliError> {
    let exp = setup(cfg, outdir)?;
    let bcfg = cfg.bifurcate.unwrap_or_default();
    let pair = solve_first(&exp.ctx, &exp.opts)?;

    // The termination box scales with the second eigenvalue.
    let odd_path = OddPath::great_circle(&pair.u, &exp.ctx, bcfg.path_points, &exp.opts)?;
    let second = solve_second(&exp.ctx, &odd_path, &exp.opts)?;

    let rhs = rhs_spec(cfg, Some(0.0), &exp.domain)?.realize(&exp.domain);
    if rhs.terms.is_empty() {
        return Err(CliError::Validation(
            "continuation needs at least one rhs term".into(),
        ));
    }
    let start = branch_start(&rhs, &pair, bcfg.eps, &exp.ctx.kernel, &exp.opts)?;
    let copts = ContinuationOptions {
        step: bcfg.step,
        steps: bcfg.steps,
        tol: exp.opts.tol,
        lambda_box: (0.0, 10.0 * second.lambda),
        norm_cap: 1e3,
    };
    let branch = continue_branch(&rhs, &start, &copts, &exp.ctx.kernel, &pair.u)?;
    let rows: Vec<Vec<f64>> = branch
        .points
        .iter()
        .map(|pt| vec![pt.lambda, pt.norm, pt.u.sup_norm(), pt.residual])
        .collect();
    write_csv(
        &exp.outdir.join("branch.csv"),
        &exp.hash,
        "lambda,norm,sup_norm,residual",
        &rows,
    )?;
    let report = detect_bifurcation(&branch, pair.lambda)?;
    let summary = json!({
        "lambda1": pair.lambda,
        "lambda2": second.lambda,
        "lambda0": report.lambda0,
        "relative_gap": report.relative_gap,
        "points_used": report.points_used,
        "branch_points": branch.points.len(),
        "status": format!("{:?}", branch.status),
    });
    write_json(&exp.outdir.join("bifurcate.json"), &exp.hash, &summary)?;
    println!("{}", serde_json::to_string(&summary).expect("summary serializes"));
    Ok(())
}
