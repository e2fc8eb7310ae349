//! Single-stage OPF tests: analytic small cases, dual-path DC checks, and
//! the bundled 5/14-bus cases.

use approx::assert_abs_diff_eq;
use nalgebra::DVector;
use opfkit::net::parse_case;
use opfkit::nlp::{check_derivatives, solve_nlp, NlpOptions, NlpProblem, SolveStatus};
use opfkit::opf::{
    assemble_ac_opf, assemble_dc_opf, eliminate_dc_state, solve_ac_opf, solve_dc_opf,
    verify_ac_solution, CostFunction, SolutionState,
};
use opfkit::powerflow::Disturbance;

fn case5() -> opfkit::Network {
    parse_case(include_str!("../cases/case5.m")).unwrap()
}

fn case14() -> opfkit::Network {
    parse_case(include_str!("../cases/case14.m")).unwrap()
}

const TWO_BUS: &str = "\
mpc.baseMVA = 100;
mpc.bus = [
  1 3 0  0 0 0 1 1 0 230 1 1.1 0.9;
  2 1 80 10 0 0 1 1 0 230 1 1.1 0.9;
];
mpc.gen = [
  1 0 0 100 -100 1 100 1 300 0;
];
mpc.branch = [ 1 2 0.01 0.1 0 0 0 0 0 0 1; ];
mpc.gencost = [ 2 0 0 3 0.01 20 0; ];
";

#[test]
fn two_bus_generator_covers_load_plus_losses() {
    let net = parse_case(TWO_BUS).unwrap();
    let d = Disturbance::from_network(&net);
    let cost = CostFunction::from_network(&net);
    let sol = solve_ac_opf(&net, &d, &cost, &NlpOptions::default()).unwrap();
    // 0.8 p.u. load plus small resistive losses
    assert!(sol.u.p_gen[0] > 0.8 && sol.u.p_gen[0] < 0.85, "p = {}", sol.u.p_gen[0]);
}

#[test]
fn zero_demand_zero_dispatch() {
    let text = TWO_BUS.replace("2 1 80 10", "2 1 0 0");
    let net = parse_case(&text).unwrap();
    let d = Disturbance::from_network(&net);
    let cost = CostFunction::from_network(&net);
    let sol = solve_ac_opf(&net, &d, &cost, &NlpOptions::default()).unwrap();
    assert!(sol.u.p_gen[0].abs() < 1e-6);
    match &sol.state {
        SolutionState::Ac(x) => {
            assert!(x.theta.amax() < 1e-7);
        }
        _ => panic!("AC solution expected"),
    }
}

#[test]
fn ac_opf_dimensions_on_14_bus() {
    let net = case14();
    assert_eq!(net.n_bus(), 14);
    assert_eq!(net.n_line(), 20);
    assert_eq!(net.n_gen(), 5);
    let d = Disturbance::from_network(&net);
    let cost = CostFunction::from_network(&net);
    let p = assemble_ac_opf(&net, &d, &cost);
    assert_eq!(p.num_vars(), 2 * 14 + 2 * 5);
    assert_eq!(p.num_eq(), 28);
}

#[test]
fn ac_opf_derivatives_on_14_bus() {
    let net = case14();
    let d = Disturbance::from_network(&net);
    let cost = CostFunction::from_network(&net);
    let p = assemble_ac_opf(&net, &d, &cost);
    // random-ish interior point
    let mut z = p.initial_guess();
    for (k, zk) in z.iter_mut().enumerate() {
        *zk += 0.01 * ((k * 2654435761 % 97) as f64 / 97.0 - 0.5);
    }
    let rep = check_derivatives(&p, &z);
    assert!(rep.max() <= 1e-5, "deviation {:?}", rep);
}

#[test]
fn ac_opf_14_bus_solves_and_certifies() {
    let net = case14();
    let d = Disturbance::from_network(&net);
    let cost = CostFunction::from_network(&net);
    let sol = solve_ac_opf(&net, &d, &cost, &NlpOptions::default()).unwrap();
    assert!(sol.kkt.max() <= 1e-8);
    let SolutionState::Ac(x) = &sol.state else { panic!("AC expected") };
    let rep = verify_ac_solution(&net, &d, x, &sol.u, 1e-6);
    assert!(rep.ok, "{rep:?}");
    // total generation covers total demand plus positive losses
    let total_p: f64 = sol.u.p_gen.sum();
    assert!(total_p > d.p_dem.sum());
}

#[test]
fn ac_opf_5_bus_dispatch_concentrates_on_cheap_generators() {
    let net = case5();
    let d = Disturbance::from_network(&net);
    let cost = CostFunction::from_network(&net);
    let sol = solve_ac_opf(&net, &d, &cost, &NlpOptions::default()).unwrap();
    // generators at buses 1 and 5 are the cheapest and carry the load
    let p = &sol.u.p_gen;
    assert!(p[0] + p[4] > 0.9 * d.p_dem.sum(), "cheap dispatch {p:?}");
    assert!(p[2] < 1e-4, "expensive generator 3 unused, got {}", p[2]);
    assert!(p[3] < 1e-4, "expensive generator 4 unused, got {}", p[3]);
}

#[test]
fn dc_two_bus_unlimited_dispatch_at_cheapest() {
    let net = parse_case(
        "mpc.baseMVA = 100;
mpc.bus = [
  1 3 0  0 0 0 1 1 0 230 1 1.1 0.9;
  2 1 50 0 0 0 1 1 0 230 1 1.1 0.9;
];
mpc.gen = [
  1 0 0 100 -100 1 100 1 300 0;
  2 0 0 100 -100 1 100 1 300 0;
];
mpc.branch = [ 1 2 0 0.1 0 0 0 0 0 0 1; ];
mpc.gencost = [
  2 0 0 2 10 0;
  2 0 0 2 50 0;
];",
    )
    .unwrap();
    let cost = CostFunction::from_network(&net);
    let sol = solve_dc_opf(&net, &net.p_demand(), &cost, &NlpOptions::default()).unwrap();
    assert_abs_diff_eq!(sol.u.p_gen[0], 0.5, epsilon = 1e-6);
    assert!(sol.u.p_gen[1] < 1e-6);
    // lossless balance is exact
    assert_abs_diff_eq!(sol.u.p_gen.sum(), 0.5, epsilon = 1e-9);
}

#[test]
fn dc_full_and_reduced_agree_on_5_bus() {
    let net = case5();
    let cost = CostFunction::from_network(&net);
    let p_dem = net.p_demand();
    let full = solve_dc_opf(&net, &p_dem, &cost, &NlpOptions::default()).unwrap();

    let problem = assemble_dc_opf(&net, &p_dem, &cost);
    let reduced = eliminate_dc_state(&problem).unwrap();
    let share = p_dem.sum() / net.n_gen() as f64;
    let z0 = DVector::from_fn(net.n_gen(), |k, _| {
        share.clamp(net.generators[k].p_min, net.generators[k].p_max)
    });
    let red_sol = solve_nlp(&reduced, &z0, &NlpOptions::default()).unwrap();
    assert_eq!(red_sol.status, SolveStatus::Converged);
    assert!(
        (full.u.p_gen.clone() - red_sol.z.clone()).amax() < 1e-8,
        "full {:?} reduced {:?}",
        full.u.p_gen,
        red_sol.z
    );
    // the implied angles solve the same DC power flow
    let theta = reduced.recover_theta(&red_sol.z);
    let SolutionState::Dc(full_theta) = &full.state else { panic!("DC expected") };
    assert!((theta.theta - full_theta.theta.clone()).amax() < 1e-7);
}

#[test]
fn dc_random_instances_full_vs_reduced_objective() {
    use rand::{rngs::StdRng, Rng, SeedableRng};
    let mut rng = StdRng::seed_from_u64(21);
    let net = case5();
    let cost = CostFunction::from_network(&net);
    for _ in 0..5 {
        let mut p_dem = net.p_demand();
        for v in p_dem.iter_mut() {
            *v *= rng.random_range(0.5..1.3);
        }
        let full = solve_dc_opf(&net, &p_dem, &cost, &NlpOptions::default()).unwrap();
        let reduced = eliminate_dc_state(&assemble_dc_opf(&net, &p_dem, &cost)).unwrap();
        let share = p_dem.sum() / net.n_gen() as f64;
        let z0 = DVector::from_fn(net.n_gen(), |k, _| {
            share.clamp(net.generators[k].p_min, net.generators[k].p_max)
        });
        let red = solve_nlp(&reduced, &z0, &NlpOptions::default()).unwrap();
        assert!((full.objective - red.objective_value).abs() <= 1e-8 * full.objective.abs().max(1.0));
    }
}

#[test]
fn reduced_dc_strictly_convex_when_cost_strict() {
    let net = case5();
    // replace the zero-cost condenser entry to make every diagonal positive
    let g = net.n_gen();
    let mut quad = DVector::zeros(2 * g);
    let mut lin = DVector::zeros(2 * g);
    for k in 0..g {
        quad[k] = 100.0 + 10.0 * k as f64;
        lin[k] = 1000.0;
    }
    let cost = CostFunction::new(quad, lin, 0.0);
    let reduced = eliminate_dc_state(&assemble_dc_opf(&net, &net.p_demand(), &cost)).unwrap();
    let mut h = nalgebra::DMatrix::zeros(g, g);
    reduced.lagrangian_hessian(
        &DVector::zeros(g),
        1.0,
        &DVector::zeros(1),
        &DVector::zeros(reduced.num_ineq()),
        &mut h,
    );
    let eig = h.symmetric_eigenvalues();
    assert!(eig.min() > 0.0, "reduced Hessian must be positive definite");
}

#[test]
fn dc_tightening_line_limit_raises_objective() {
    let mut net = case5();
    let cost = CostFunction::from_network(&net);
    let base = solve_dc_opf(&net, &net.p_demand(), &cost, &NlpOptions::default()).unwrap();
    // find a loaded line and halve its limit below the unconstrained flow
    let (k, flow) = base
        .line_flows
        .iter()
        .enumerate()
        .map(|(k, f)| (k, f.p))
        .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
        .unwrap();
    assert!(flow > 0.0, "expected a positively loaded line");
    net.lines[k].s_max = Some(0.5 * flow);
    let tighter = solve_dc_opf(&net, &net.p_demand(), &cost, &NlpOptions::default()).unwrap();
    assert!(
        tighter.objective > base.objective + 1e-6,
        "tightened {} vs base {}",
        tighter.objective,
        base.objective
    );
}

#[test]
fn dc_balance_exact_and_scaling_invariance() {
    let net = case5();
    let p_dem = net.p_demand();
    let cost = CostFunction::from_network(&net);
    let sol = solve_dc_opf(&net, &p_dem, &cost, &NlpOptions::default()).unwrap();
    assert_abs_diff_eq!(sol.u.p_gen.sum(), p_dem.sum(), epsilon = 1e-9);

    // pure linear cost: argmin invariant under positive scaling of h
    let g = net.n_gen();
    let mut lin = DVector::zeros(2 * g);
    for k in 0..g {
        lin[k] = 10.0 + 7.0 * k as f64;
    }
    let c1 = CostFunction::new(DVector::zeros(2 * g), lin.clone(), 0.0);
    let c2 = CostFunction::new(DVector::zeros(2 * g), 3.5 * lin, 0.0);
    let s1 = solve_dc_opf(&net, &p_dem, &c1, &NlpOptions::default()).unwrap();
    let s2 = solve_dc_opf(&net, &p_dem, &c2, &NlpOptions::default()).unwrap();
    assert!((s1.u.p_gen - s2.u.p_gen).amax() < 1e-6);
}

#[test]
fn certificate_rejects_corrupted_point() {
    let net = case5();
    let d = Disturbance::from_network(&net);
    let cost = CostFunction::from_network(&net);
    let sol = solve_ac_opf(&net, &d, &cost, &NlpOptions::default()).unwrap();
    let SolutionState::Ac(x) = &sol.state else { panic!() };
    let mut u_bad = sol.u.clone();
    u_bad.p_gen[0] += 0.3;
    let rep = verify_ac_solution(&net, &d, x, &u_bad, 1e-6);
    assert!(!rep.ok);
    assert!(rep.max_pf_residual > 0.1);
}
