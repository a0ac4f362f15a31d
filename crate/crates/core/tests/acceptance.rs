//! Acceptance suite: one test per criterion, each printing a pass line with
//! the measured values and asserting the stated tolerance and runtime budget.

use std::sync::Arc;
use std::time::Instant;

use passlab::greeks::adjoint_identity_residual;
use passlab::hjb::{
    bs_boundary_value, passport_candidates, passport_grid, solve_passport_hjb,
    solve_symmetric_passport, symmetric_grid,
};
use passlab::market::{CoefficientField, LinearGrowth, MarketModel, Regularity, UnivariatePayoff};
use passlab::math::norm_pdf;
use passlab::paths::{
    mc_estimate, simulate_account, simulate_classical_portfolio, PathConfig,
};
use passlab::pde::{
    adjoint_density, fundamental_solution, greens_residual, solve_cauchy, SolveOptions,
    SpaceTimeGrid, SpaceTimeWindow, StorePolicy,
};
use passlab::strategy::{ClassicalStrategy, IndexState, SymmetricStrategy};
use passlab::structure::{
    check_matrix_order, convexity_criterion_critical, convexity_criterion_global,
    default_hinge_family, find_convexity_violation, hormander_rank, verify_comparison,
    ComparisonData, OrderVerdict, Region, ScanDirections, VectorField,
};
use passlab::Matrix;

/// Independent normal CDF oracle: composite Simpson quadrature of the density.
fn norm_cdf_quadrature(x: f64) -> f64 {
    let n = 40_000usize;
    let hi = x.abs();
    if hi == 0.0 {
        return 0.5;
    }
    let h = hi / n as f64;
    let mut s = norm_pdf(0.0) + norm_pdf(hi);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * norm_pdf(i as f64 * h);
    }
    let half = s * h / 3.0;
    if x >= 0.0 {
        0.5 + half
    } else {
        0.5 - half
    }
}

#[test]
fn criterion_01_symmetric_boundary_closed_form() {
    let t0 = Instant::now();
    let got = bs_boundary_value(0.0, 1.0, 0.2);
    let elapsed = t0.elapsed();
    let oracle = 2.0 * norm_cdf_quadrature(0.1) - 1.0;
    let err = (got - oracle).abs();
    assert!(err <= 1e-9, "boundary value {got} vs oracle {oracle}");
    assert!((got - 0.0796557).abs() < 1e-6);
    assert!(elapsed.as_micros() < 1000, "runtime {elapsed:?}");
    println!(
        "ACCEPTANCE 01 symmetric-boundary: PASS value={got:.9} |err|={err:.2e} (tol 1e-9) in {elapsed:?}"
    );
}

#[test]
fn criterion_02_heat_oracle_polynomial() {
    let t0 = Instant::now();
    let field = CoefficientField::diagonal(vec![1.0, 1.0]);
    let t_final = 0.5;
    // 101 x 101 box padded 6 sqrt(2 a T) past the evaluation window
    let grid = SpaceTimeGrid::new(
        vec![-8.0, -8.0],
        vec![8.0, 8.0],
        vec![101, 101],
        100,
        t_final,
    )
    .unwrap();
    let surf = solve_cauchy(
        &field,
        &|x: &[f64]| x[0] * x[0],
        &grid,
        &SolveOptions {
            store: StorePolicy::FinalOnly,
            ..Default::default()
        },
    )
    .unwrap();
    let last = surf.times.len() - 1;
    let mut max_err = 0.0f64;
    for multi in grid.iter_multi() {
        let x = grid.point(&multi);
        if x[0].abs() > 2.0 || x[1].abs() > 2.0 {
            continue;
        }
        let got = surf.value_at(last, &multi);
        max_err = max_err.max((got - (x[0] * x[0] + 2.0 * t_final)).abs());
    }
    let h = grid.spacing(0);
    let k = grid.time_step;
    let tol = 1e-6 + h * h + k;
    let elapsed = t0.elapsed();
    assert!(max_err <= tol, "interior error {max_err:.3e} > {tol:.3e}");
    assert!(elapsed.as_secs_f64() < 10.0, "runtime {elapsed:?}");
    println!(
        "ACCEPTANCE 02 heat-oracle: PASS max_err={max_err:.3e} (tol {tol:.3e}) in {elapsed:?}"
    );
}

#[test]
fn criterion_03_comparison_theorem_instance() {
    let t0 = Instant::now();
    let a = CoefficientField::diagonal(vec![0.5, 0.5]);
    let ap = CoefficientField::diagonal(vec![1.0, 0.5]);
    let payoff = UnivariatePayoff::hinge(0, 0.0);
    let eval = Region::new(vec![-1.0, -1.0], vec![1.0, 1.0], vec![5, 5]).unwrap();
    let t_eval = 0.5;
    let report = verify_comparison(
        &a,
        &ap,
        &ComparisonData::Univariate(payoff),
        &eval,
        t_eval,
        0.1,
    )
    .unwrap();
    assert_eq!(report.order.verdict, OrderVerdict::OrderedStrict11);
    assert!(
        report.min_gap_on_gamma > 0.0,
        "gap not strictly positive on Gamma-active nodes: {report:?}"
    );
    let oracle = norm_pdf(0.0) * ((2.0f64 * 1.0 * t_eval).sqrt() - (2.0f64 * 0.5 * t_eval).sqrt());
    let gap_err = (report.gap_at_origin - oracle).abs();
    let elapsed = t0.elapsed();
    assert!(gap_err <= 5e-3, "gap {} vs {oracle}", report.gap_at_origin);
    assert!(elapsed.as_secs_f64() < 60.0, "runtime {elapsed:?}");
    println!(
        "ACCEPTANCE 03 comparison: PASS min_gap={:.3e} gap@0={:.6} oracle={:.6} frac>h2={:.3} in {elapsed:?}",
        report.min_gap_on_gamma, report.gap_at_origin, oracle, report.frac_above_h2
    );
}

#[test]
fn criterion_04_symmetric_policy_is_stop_loss() {
    let t0 = Instant::now();
    let sigma = 0.2;
    let grid = symmetric_grid(-3.0, -2.5, 2.5, 129, 129, 1.0, sigma).unwrap();
    let sol = solve_symmetric_passport(sigma, 1.0, &grid, StorePolicy::FinalOnly).unwrap();
    let last = sol.policy.times.len() - 1;
    let (n1, n2) = (grid.nodes[0], grid.nodes[1]);
    let h2 = grid.spacing(1);
    let u = &sol.surface.values[last];
    let mut total = 0usize;
    let mut agree = 0usize;
    for i1 in 1..(n1 - 1) {
        let s_n = grid.coord(0, i1).exp();
        for i2 in 1..(n2 - 1) {
            let id = i1 * n2 + i2;
            let g22 = (u[id + 1] - 2.0 * u[id] + u[id - 1]) / (h2 * h2);
            let g2 = (u[id + 1] - u[id - 1]) / (2.0 * h2);
            if g22 - g2 <= 1e-6 {
                continue;
            }
            total += 1;
            let want = if s_n <= 1.0 { 1.0 } else { 0.0 };
            if (sol.policy.controls[last][id] - want).abs() < 1e-12 {
                agree += 1;
            }
        }
    }
    let frac = agree as f64 / total as f64;
    let elapsed = t0.elapsed();
    assert!(total > 1000, "Gamma-active census too small: {total}");
    assert!(frac >= 0.99, "agreement {frac:.4}");
    assert!(elapsed.as_secs_f64() < 60.0, "runtime {elapsed:?}");
    println!(
        "ACCEPTANCE 04 stop-loss-policy: PASS agreement={frac:.4} on {total} nodes in {elapsed:?}"
    );
}

#[test]
fn criterion_05_pde_mc_cross_validation() {
    let t0 = Instant::now();
    let sigma = 0.2;
    let grid = symmetric_grid(-3.0, -2.5, 2.5, 193, 193, 1.0, sigma).unwrap();
    let sol = solve_symmetric_passport(sigma, 1.0, &grid, StorePolicy::FinalOnly).unwrap();
    let last = sol.surface.times.len() - 1;
    let node = grid.nearest_node(&[0.0, 0.0]).unwrap(); // m0 = 1, x0 = 1
    let pde = sol.surface.values[last][grid.flat(&node)];

    let strat = SymmetricStrategy::stop_loss();
    let cfg = PathConfig::new(1.0, 1_000_000, 20_240_817).unwrap().with_steps(512);
    let st0 = IndexState::new(1.0, 1.0).unwrap();
    let ens = simulate_account(sigma, &strat, &cfg, &st0, None).unwrap();
    let (mc, se) = mc_estimate(&ens, |v| (v[1] - 1.0f64).max(0.0)).unwrap();
    let gap = (pde - mc).abs();
    let tol = 3.0 * se + 5e-3;
    let elapsed = t0.elapsed();
    assert!(gap <= tol, "pde {pde} vs mc {mc} +- {se}");
    assert!(elapsed.as_secs_f64() < 300.0, "runtime {elapsed:?}");
    println!(
        "ACCEPTANCE 05 pde-mc: PASS pde={pde:.6} mc={mc:.6} stderr={se:.2e} |gap|={gap:.2e} (tol {tol:.2e}) in {elapsed:?}"
    );
}

#[test]
fn criterion_06_hjb_dominates_dyadic_strategies() {
    let t0 = Instant::now();
    let model = MarketModel::single(0.2, 1.0).unwrap();
    let grid = passport_grid(&model, 0.0, 0.0, 1.0, 161, 81).unwrap();
    let sol = solve_passport_hjb(&model, 0.0, &grid, StorePolicy::FinalOnly).unwrap();
    let last = sol.surface.times.len() - 1;
    let node = grid.nearest_node(&[0.0, 0.0]).unwrap();
    let hjb = sol.surface.values[last][grid.flat(&node)];
    let slack = 2.0 * grid.spacing(0);

    let cfg = PathConfig::new(1.0, 200_000, 777).unwrap().with_steps(256);
    let mut worst_margin = f64::INFINITY;
    for mask in 0..16u32 {
        let values: Vec<Vec<f64>> = (0..4)
            .map(|i| vec![if mask & (1 << i) != 0 { 1.0 } else { -1.0 }])
            .collect();
        let strat = ClassicalStrategy::dyadic(1.0, 2, values).unwrap();
        let ens = simulate_classical_portfolio(&model, &strat, &cfg, 0.0, None).unwrap();
        let (mc, se) = mc_estimate(&ens, |row| row[1].max(0.0)).unwrap();
        let margin = hjb + 3.0 * se + slack - mc;
        worst_margin = worst_margin.min(margin);
        assert!(
            margin >= 0.0,
            "strategy {mask:04b}: mc {mc} +- {se} beats hjb {hjb}"
        );
    }
    let elapsed = t0.elapsed();
    assert!(elapsed.as_secs_f64() < 600.0, "runtime {elapsed:?}");
    println!(
        "ACCEPTANCE 06 hjb-dominance: PASS hjb={hjb:.6} worst_margin={worst_margin:.4} (16 dyadic strategies) in {elapsed:?}"
    );
}

#[test]
fn criterion_07_vertex_policy_matches_control_grid() {
    let t0 = Instant::now();
    for rho12 in [-0.9, 0.0, 0.9] {
        let rho = Matrix::from_rows(&[vec![1.0, rho12], vec![rho12, 1.0]]);
        let model = MarketModel::new(vec![0.2, 0.2], rho, vec![1.0, 1.0]).unwrap();
        let grid = passport_grid(&model, 1.0, 1.0, 0.25, 49, 21).unwrap();
        let sol = solve_passport_hjb(&model, 1.0, &grid, StorePolicy::FinalOnly).unwrap();
        let (cands, _) = passport_candidates(&model.eigen_factorize().unwrap());
        let last = sol.surface.times.len() - 1;
        let strides = grid.strides();
        let hp = grid.spacing(0);
        let v = &sol.surface.values[last];
        let mut census = 0usize;
        let mut matched = 0usize;
        for (flat, multi) in grid.iter_multi().enumerate() {
            if (0..grid.dim()).any(|d| multi[d] == 0 || multi[d] + 1 >= grid.nodes[d]) {
                continue;
            }
            let gpp =
                (v[flat + strides[0]] - 2.0 * v[flat] + v[flat - strides[0]]) / (hp * hp);
            if gpp <= 1e-6 {
                continue;
            }
            let s = [grid.coord(1, multi[1]).exp(), grid.coord(2, multi[2]).exp()];
            let cand_best = cands
                .iter()
                .map(|c| model.basket_volatility(None, &s, c).unwrap())
                .fold(0.0f64, f64::max);
            let mut grid_best = 0.0f64;
            for a in 0..41 {
                for b in 0..41 {
                    let d = [-1.0 + a as f64 * 0.05, -1.0 + b as f64 * 0.05];
                    grid_best =
                        grid_best.max(model.basket_volatility(None, &s, &d).unwrap());
                }
            }
            census += 1;
            if (cand_best - grid_best).abs() <= 1e-6 {
                matched += 1;
            }
        }
        let frac = matched as f64 / census as f64;
        assert!(census > 100, "census too small for rho={rho12}: {census}");
        assert!(frac >= 0.99, "rho={rho12}: match fraction {frac:.4}");
        println!(
            "ACCEPTANCE 07 vertex-policy rho={rho12}: match={frac:.4} on {census} nodes"
        );
    }
    let elapsed = t0.elapsed();
    assert!(elapsed.as_secs_f64() < 600.0, "runtime {elapsed:?}");
    println!("ACCEPTANCE 07 vertex-policy: PASS in {elapsed:?}");
}

#[test]
fn criterion_08_convexity_criteria_and_violation_search() {
    let t0 = Instant::now();
    let region = Region::new(vec![-2.0, -2.0], vec![2.0, 2.0], vec![9, 9]).unwrap();

    // global: pass, pass, fail-with-witness
    let a_const = CoefficientField::diagonal(vec![0.7, 0.3]);
    let r1 = convexity_criterion_global(
        &a_const,
        &|x: &[f64]| x[0] * x[0] + x[1] * x[1],
        0.0,
        &region,
    )
    .unwrap();
    assert!(r1.pass);
    let r2 =
        convexity_criterion_global(&a_const, &|x: &[f64]| x[0].powi(4), 0.0, &region).unwrap();
    assert!(r2.pass);
    let a_sine = CoefficientField::from_fn(
        2,
        Regularity::Smooth,
        LinearGrowth { offset: 1.5, slope: 0.0 },
        |x: &[f64]| Matrix::from_rows(&[vec![1.0 + 0.5 * x[1].sin(), 0.0], vec![0.0, 1.0]]),
    );
    let r3 = convexity_criterion_global(&a_sine, &|x: &[f64]| x[0] * x[0], 0.0, &region).unwrap();
    assert!(!r3.pass && r3.witness.is_some());

    // critical-set: vacuous pass, quartic pass with detected critical line,
    // sine example vacuous pass while global fails
    let c1 = convexity_criterion_critical(
        &a_const,
        &|x: &[f64]| x[0] * x[0] + x[1] * x[1],
        0.0,
        &region,
    )
    .unwrap();
    assert!(c1.pass && c1.critical_points.is_empty());
    let c2 =
        convexity_criterion_critical(&a_const, &|x: &[f64]| x[0].powi(4), 1e-3, &region).unwrap();
    assert!(c2.pass && !c2.critical_points.is_empty());
    let c3 = convexity_criterion_critical(&a_sine, &|x: &[f64]| x[0] * x[0], 0.0, &region).unwrap();
    assert!(c3.pass && c3.critical_points.is_empty());

    // violation search: witness within the 200-candidate budget
    let search_region = Region::new(vec![-3.0, -3.0], vec![3.0, 3.0], vec![41, 41]).unwrap();
    let family = default_hinge_family(2, 200);
    let witness = find_convexity_violation(
        &a_sine,
        &family,
        200,
        &search_region,
        0.05,
        -1e-4,
        ScanDirections::All,
    )
    .unwrap()
    .expect("violation witness within budget");
    assert!(witness.second_difference < -1e-4);

    let elapsed = t0.elapsed();
    assert!(elapsed.as_secs_f64() < 600.0, "runtime {elapsed:?}");
    println!(
        "ACCEPTANCE 08 convexity: PASS global=(pass,pass,fail) critical=(vacuous,pass,vacuous) witness={:.3e} at {:?} in {elapsed:?}",
        witness.second_difference, witness.point
    );
}

#[test]
fn criterion_09_adjoint_identity_residuals() {
    let t0 = Instant::now();
    let field = CoefficientField::from_fn(
        2,
        Regularity::Smooth,
        LinearGrowth { offset: 0.7, slope: 0.0 },
        |x: &[f64]| {
            Matrix::from_rows(&[
                vec![0.5 + 0.05 * x[0].sin(), 0.0],
                vec![0.0, 0.4 + 0.05 * x[1].sin()],
            ])
        },
    );
    let x = [0.25, -0.125];
    let y = [-0.25, 0.25];
    let lo = [-5.0, -5.0];
    let hi = [5.0, 5.0];
    for alpha in [vec![0usize, 0], vec![1, 0], vec![0, 1], vec![2, 0]] {
        let coarse = adjoint_identity_residual(
            &field, 0.5, &x, 0.0, &y, &alpha, (&lo, &hi, &[161, 161]), 480, 0.25,
        )
        .unwrap();
        let fine = adjoint_identity_residual(
            &field, 0.5, &x, 0.0, &y, &alpha, (&lo, &hi, &[321, 321]), 1920, 0.125,
        )
        .unwrap();
        let order = (coarse / fine).log2();
        assert!(fine <= 5e-3, "alpha {alpha:?}: default-grid residual {fine:.3e}");
        assert!(
            order >= 0.8,
            "alpha {alpha:?}: empirical order {order:.2} ({coarse:.3e} -> {fine:.3e})"
        );
        println!(
            "ACCEPTANCE 09 adjoint-identity alpha={alpha:?}: residual={fine:.3e} order={order:.2}"
        );
    }
    let elapsed = t0.elapsed();
    assert!(elapsed.as_secs_f64() < 300.0, "runtime {elapsed:?}");
    println!("ACCEPTANCE 09 adjoint-identity: PASS in {elapsed:?}");
}

#[test]
fn criterion_10_greens_identity_residual() {
    let t0 = Instant::now();
    let run = |steps: usize, nodes: usize| -> f64 {
        let field = CoefficientField::diagonal(vec![0.5]);
        let grid = SpaceTimeGrid::new(vec![-6.0], vec![6.0], vec![nodes], steps, 0.5).unwrap();
        let w0 = 0.25;
        let v = fundamental_solution(&field, &[0.3], &grid, w0, &Default::default()).unwrap();
        let u = adjoint_density(&field, &[-0.2], &grid, w0, &Default::default()).unwrap();
        let sigma = (w0 * w0 + 2.0f64 * 0.5 * 0.5).sqrt();
        let center = 0.05;
        let lo = ((center - 3.0 * sigma - grid.lo[0]) / grid.spacing(0)).round() as usize;
        let hi = ((center + 3.0 * sigma - grid.lo[0]) / grid.spacing(0)).round() as usize;
        let w = SpaceTimeWindow {
            level_start: steps / 5,
            level_end: 4 * steps / 5,
            lo: vec![lo],
            hi: vec![hi],
        };
        greens_residual(&field, &u, &v, &w).unwrap()
    };
    let coarse = run(220, 121);
    let fine = run(440, 241);
    let factor = coarse / fine;
    let elapsed = t0.elapsed();
    assert!(coarse <= 1e-3, "residual {coarse:.3e}");
    assert!(factor >= 1.8, "shrink factor {factor:.2}");
    assert!(elapsed.as_secs_f64() < 120.0, "runtime {elapsed:?}");
    println!(
        "ACCEPTANCE 10 greens-residual: PASS residual={coarse:.3e} shrink={factor:.2}x in {elapsed:?}"
    );
}

#[test]
fn criterion_11_hormander_rank_examples() {
    let t0 = Instant::now();
    // coordinate fields span at depth 0
    let coords = [VectorField::coordinate(2, 0), VectorField::coordinate(2, 1)];
    let r1 = hormander_rank(None, &coords, &[0.4, -0.3], 3).unwrap();
    assert_eq!(r1, (true, 0));
    // Grushin pair satisfied at depth 1
    let grushin = [
        VectorField::coordinate(2, 0),
        VectorField::new(2, |x: &[f64]| vec![0.0, x[0]]),
    ];
    let r2 = hormander_rank(None, &grushin, &[0.0, 0.0], 3).unwrap();
    assert_eq!(r2, (true, 1));
    // deficient single field never spans
    let single = [VectorField::coordinate(2, 0)];
    let r3 = hormander_rank(None, &single, &[0.0, 0.0], 4).unwrap();
    assert_eq!(r3, (false, 4));
    let elapsed = t0.elapsed();
    assert!(elapsed.as_millis() < 1000, "runtime {elapsed:?}");
    println!(
        "ACCEPTANCE 11 hormander: PASS depth0={r1:?} grushin={r2:?} single={r3:?} in {elapsed:?}"
    );
}

/// Supporting check used by criterion 3's hypothesis gate and the verify
/// command: the comparison machinery refuses unordered pairs and tags
/// multivariate data.
#[test]
fn comparison_hypothesis_gates_hold() {
    let a = CoefficientField::diagonal(vec![1.0, 0.0]);
    let ap = CoefficientField::diagonal(vec![0.0, 1.0]);
    let r = Region::new(vec![-1.0, -1.0], vec![1.0, 1.0], vec![3, 3]).unwrap();
    assert_eq!(
        check_matrix_order(&a, &ap, &r).unwrap().verdict,
        OrderVerdict::Unordered
    );
    let multi = ComparisonData::Multivariate(Arc::new(|x: &[f64]| {
        x[0].max(0.0) + x[1].max(0.0)
    }));
    let a = CoefficientField::diagonal(vec![0.5, 0.5]);
    let ap = CoefficientField::diagonal(vec![1.0, 0.5]);
    let rep = verify_comparison(&a, &ap, &multi, &r, 0.2, 0.2).unwrap();
    assert!(matches!(
        rep.hypothesis,
        passlab::structure::HypothesisStatus::OutsideHypotheses(_)
    ));
}
