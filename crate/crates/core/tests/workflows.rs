//! Cross-module checks: generated solution families, dual-route comparisons
//! and refinement stability.

use std::sync::Arc;

use fracp_core::apriori::scaling_fit;
use fracp_core::eigen::{oracle_spectrum_p2, residual as eigen_residual, EigenPair};
use fracp_core::gagliardo::{
    assemble_kernel, embedding_constant, hardy_supremum, seminorm_qh, DualVector, OperatorContext,
};
use fracp_core::grid::{build_grid, GridFunction};
use fracp_core::nonlinear::solve_fredholm;
use fracp_core::solver::{seeded_function, SolverOptions};
use fracp_core::weights::{
    check_aq, check_tilde_wq, check_wq, validate_witness, SpaceParams, WeightClass, WeightSpec,
};

fn unit_context(n: usize, s: f64, p: f64) -> OperatorContext {
    let d = build_grid(-1.0, 1.0, n).unwrap();
    let k = assemble_kernel(&d, s, p).unwrap();
    let h = GridFunction::constant(Arc::clone(&d), 1.0);
    OperatorContext::eigen(k, h).unwrap()
}

#[test]
fn fredholm_family_obeys_two_slope_envelope() {
    let ctx = unit_context(32, 0.4, 2.0);
    let opts = SolverOptions::default();
    let lambda1 = fracp_core::eigen::solve_first(&ctx, &opts).unwrap().lambda;
    let base = seeded_function(ctx.domain(), 31);

    // Non-resonant solutions across forcing amplitudes spanning 4 decades.
    let mut family = Vec::new();
    for k in 0..9 {
        let amp = 10f64.powf(-2.0 + 4.0 * k as f64 / 8.0);
        let f = DualVector {
            domain: Arc::clone(ctx.domain()),
            coeffs: base.values.iter().map(|v| amp * v).collect(),
        };
        let sol = solve_fredholm(0.4 * lambda1, &f, &ctx, &opts).unwrap();
        family.push(sol.u);
    }
    let fit = scaling_fit(&family, 4.0).unwrap();
    assert!(fit.consistent, "envelope violated: {fit:?}");
    // The linear problem scales exactly: both regimes have unit slope.
    assert!((fit.gamma_low - 1.0).abs() < 1e-6);
    assert!((fit.gamma_high - 1.0).abs() < 1e-6);
}

#[test]
fn hardy_supremum_agrees_with_weighted_oracle() {
    // The supremum of the boundary-weighted quotient equals the reciprocal
    // of the first eigenvalue with weight rho^{-sp}; two independent routes.
    let d = build_grid(-1.0, 1.0, 64).unwrap();
    let s = 0.4;
    let k = assemble_kernel(&d, s, 2.0).unwrap();
    let opts = SolverOptions::default();
    let sup = hardy_supremum(&k, &opts).unwrap();

    let rho = d.distance_to_boundary();
    let weight = GridFunction::new(
        Arc::clone(&d),
        rho.iter().map(|r| r.powf(-s * 2.0)).collect(),
    )
    .unwrap();
    let ctx = OperatorContext::eigen(Arc::clone(&k), weight).unwrap();
    let lambda1 = oracle_spectrum_p2(&ctx).unwrap()[0].0;
    let expected = 1.0 / lambda1;
    assert!(
        (sup - expected).abs() <= 0.01 * expected,
        "ascent sup {sup} vs oracle {expected}"
    );
}

#[test]
fn embedding_constant_stable_under_refinement() {
    let opts = SolverOptions::default();
    let mut values = Vec::new();
    for n in [64usize, 128] {
        let d = build_grid(-1.0, 1.0, n).unwrap();
        let k = assemble_kernel(&d, 0.4, 2.0).unwrap();
        values.push(embedding_constant(3.0, &k, &opts).unwrap());
    }
    let change = (values[1] - values[0]).abs() / values[0];
    assert!(change < 0.2, "embedding constant moved {:.1}%", change * 100.0);
}

#[test]
fn weighted_seminorm_ratio_bounded() {
    // |u|_{q,h} <= C ||u|| for a singular tilde-class weight: the measured
    // ratio over 1000 seeded vectors stays under the algebraic cap obtained
    // from the embedding constant and the nodal maximum of the weight.
    let q = 2.0;
    let mut maxima = Vec::new();
    for n in [48usize, 96] {
        let d = build_grid(-1.0, 1.0, n).unwrap();
        let k = assemble_kernel(&d, 0.4, 2.0).unwrap();
        let h = WeightSpec::power(0.3).unwrap().realize_on_grid(&d);
        let hmax = h.sup_norm();
        let ctx = OperatorContext::new(Arc::clone(&k), h, q).unwrap();
        let opts = SolverOptions::default();
        let cap = hmax.powf(1.0 / q) * embedding_constant(q, &k, &opts).unwrap();
        let mut worst: f64 = 0.0;
        for seed in 0..1000u64 {
            let u = seeded_function(&d, seed);
            let ratio = seminorm_qh(&u, &ctx).unwrap()
                / fracp_core::gagliardo::gagliardo_norm(&u, &k).unwrap();
            assert!(ratio <= cap * (1.0 + 1e-9), "ratio {ratio} above cap {cap}");
            worst = worst.max(ratio);
        }
        maxima.push(worst);
    }
    // The empirical supremum is stable under refinement.
    let change = (maxima[1] - maxima[0]).abs() / maxima[0];
    assert!(change < 0.3, "seminorm ratio moved {:.1}%", change * 100.0);
}

#[test]
fn eigenfunction_trace_decays_strictly() {
    // Ladder on the solved ground state scaled to unit sup, base level 0.6:
    // strictly decreasing masses collapsing to zero.
    let ctx = unit_context(48, 0.4, 2.0);
    let opts = SolverOptions::default();
    let pair = fracp_core::eigen::solve_first(&ctx, &opts).unwrap();
    let u = pair.u.scale(1.0 / pair.u.sup_norm());
    let trace = fracp_core::apriori::degiorgi_trace(&u, 0.6, 4.0, 40);
    assert!(trace.converged);
    let mut prev = f64::INFINITY;
    for &z in &trace.masses {
        assert!(z <= prev);
        if z > 0.0 && prev.is_finite() {
            assert!(z < prev, "mass plateaued above zero");
        }
        prev = z;
    }
    assert_eq!(*trace.masses.last().unwrap(), 0.0);
}

#[test]
fn stationary_points_have_flat_directional_derivatives() {
    // Finite-difference cross-check of criticality: along 20 seeded
    // directions the governing functional is flat at returned solutions.
    let ctx = unit_context(32, 0.4, 2.0);
    let opts = SolverOptions::default();
    let rhs = fracp_core::nonlinear::RhsSpec::single_power(1.0, 1.5).realize(ctx.domain());
    let spec =
        fracp_core::nonlinear::TruncationSpec::from_scan(&rhs, &ctx.kernel, &opts).unwrap();
    let trunc = fracp_core::nonlinear::build_truncation(&rhs, &spec, &ctx.kernel).unwrap();
    let out = fracp_core::nonlinear::find_small_solutions(&rhs, &spec, &ctx, 3, &opts).unwrap();
    assert!(!out.solutions.is_empty());
    for sol in out.solutions.iter().take(2) {
        for seed in 0..20u64 {
            let dir = seeded_function(ctx.domain(), 500 + seed);
            let nd = fracp_core::gagliardo::gagliardo_norm(&dir, &ctx.kernel).unwrap();
            let eps = 1e-6;
            let plus = trunc.modified_energy(&sol.u.add_scaled(eps, &dir), &ctx.kernel);
            let minus = trunc.modified_energy(&sol.u.add_scaled(-eps, &dir), &ctx.kernel);
            let fd = (plus - minus) / (2.0 * eps);
            assert!(
                fd.abs() <= 100.0 * opts.tol * (1.0 + nd),
                "directional derivative {fd:.3e} not flat (seed {seed})"
            );
        }
    }
}

#[test]
fn branch_points_survive_independent_resolve() {
    // Three continuation points re-solved by damped Newton from perturbed
    // starts land back on the same solutions.
    let ctx = unit_context(32, 0.4, 2.0);
    let opts = SolverOptions::default();
    let pair = fracp_core::eigen::solve_first(&ctx, &opts).unwrap();
    let rhs_spec = fracp_core::nonlinear::RhsSpec {
        terms: vec![fracp_core::nonlinear::RhsTerm {
            coef: -1.0,
            weight: WeightSpec::power(0.0).unwrap(),
            q: 4.0,
            odd: true,
        }],
        lambda_coupling: Some((0.0, WeightSpec::power(0.0).unwrap())),
        forcing: None,
    };
    let rhs = rhs_spec.realize(ctx.domain());
    let start =
        fracp_core::bifurcation::branch_start(&rhs, &pair, 1e-2, &ctx.kernel, &opts).unwrap();
    let copts = fracp_core::bifurcation::ContinuationOptions {
        step: 0.05,
        steps: 20,
        tol: 1e-9,
        lambda_box: (0.0, 1e3 * pair.lambda),
        norm_cap: 1e3,
    };
    let branch =
        fracp_core::bifurcation::continue_branch(&rhs, &start, &copts, &ctx.kernel, &pair.u)
            .unwrap();
    assert!(branch.points.len() >= 10);
    for idx in [3usize, 8, branch.points.len() - 1] {
        let pt = &branch.points[idx];
        let mut fixed = rhs.clone();
        if let Some((l, _)) = &mut fixed.lambda {
            *l = pt.lambda;
        }
        let noise = seeded_function(ctx.domain(), 900 + idx as u64);
        let perturbed = pt.u.add_scaled(0.01 * pt.u.sup_norm(), &noise);
        let resolved =
            fracp_core::nonlinear::refine_stationary(perturbed, &fixed, &ctx.kernel, &opts)
                .unwrap();
        let dist = resolved
            .u
            .add_scaled(-1.0, &pt.u)
            .sup_norm();
        assert!(
            dist <= 1e-6 * (1.0 + pt.u.sup_norm()),
            "point {idx}: independent resolve drifted {dist:.3e}"
        );
    }
}

#[test]
fn zero_pair_rejected_by_residual() {
    let ctx = unit_context(16, 0.4, 2.0);
    let zero_pair = EigenPair {
        lambda: 0.0,
        u: GridFunction::zeros(Arc::clone(ctx.domain())),
        residual: 0.0,
        normalization: 0.0,
    };
    assert!(eigen_residual(&zero_pair, &ctx).is_err());
}

#[test]
fn witnesses_revalidate_across_classes() {
    let params = SpaceParams::new(3, 2.0, 1.0, 2.0).unwrap();
    for beta in [0.0, 0.1, 0.3, 0.5, 2.0 / 3.0, 0.8] {
        let h = WeightSpec::power(beta).unwrap();
        for (class, report) in [
            (WeightClass::Aq, check_aq(&h, &params).unwrap()),
            (WeightClass::Wq, check_wq(&h, &params).unwrap()),
            (WeightClass::TildeWq, check_tilde_wq(&h, &params).unwrap()),
        ] {
            if report.member {
                let w = report.witness.unwrap();
                let margin = validate_witness(&h, &params, class, w.a, w.r).unwrap();
                assert!(margin > 0.0, "class {class:?}, beta {beta}: margin {margin}");
                assert!(
                    (margin - report.margin).abs() <= 1e-12 * (1.0 + margin.abs()),
                    "margin mismatch for {class:?} at beta {beta}"
                );
            }
        }
    }
}
