use opfkit::dist::*;
use opfkit::net::parse_case;
use opfkit::nlp::NlpOptions;
use opfkit::opf::{solve_ac_opf, CostFunction, SolutionState};
use opfkit::powerflow::Disturbance;
use std::collections::BTreeMap;

#[test]
fn dbg_aladin_5bus() {
    let net = parse_case(include_str!("../cases/case5.m")).unwrap();
    let d = Disturbance::from_network(&net);
    let cost = CostFunction::from_network(&net);
    let central = solve_ac_opf(&net, &d, &cost, &NlpOptions::default()).unwrap();
    println!("centralized objective {:.4}", central.objective);
    let SolutionState::Ac(x) = &central.state else { panic!() };
    let reference = GlobalPoint { x: x.clone(), u: central.u.clone() };

    let mut assignment = BTreeMap::new();
    for b in [1usize, 2] { assignment.insert(b, 1); }
    for b in [3usize, 4, 5] { assignment.insert(b, 2); }
    let spec = PartitionSpec { assignment };
    let (regions, consensus) = split_network(&net, &d, &cost, &spec).unwrap();
    println!("pairs: {}", consensus.pairs.len());

    let mut cfg = AladinConfig::default();
    cfg.eps = 1e-6;
    cfg.max_iter = 40;
    let t0 = std::time::Instant::now();
    let out = aladin_solve(&regions, &consensus, &cfg, None, Some(&reference)).unwrap();
    println!("converged {} in {} iterations ({:?})", out.converged, out.iterations, t0.elapsed());
    for r in &out.log.records {
        println!("it {:2} cv {:9.2e} step {:9.2e} dist {:9.2e} rho {:8.1e} mu {:8.1e} obj {:.3}",
            r.iter, r.consensus_violation, r.local_step_norm,
            r.distance_to_reference.unwrap_or(f64::NAN), r.rho, r.mu, r.objective);
    }
    println!("objective {:.4} vs centralized {:.4} rel {:.2e}", out.objective, central.objective,
        (out.objective - central.objective).abs() / central.objective);
}

#[test]
fn dbg_region_problem() {
    use opfkit::nlp::{check_derivatives, solve_nlp, NlpProblem};
    let net = parse_case(include_str!("../cases/case5.m")).unwrap();
    let d = Disturbance::from_network(&net);
    let cost = CostFunction::from_network(&net);
    let mut assignment = BTreeMap::new();
    for b in [1usize, 2] { assignment.insert(b, 1); }
    for b in [3usize, 4, 5] { assignment.insert(b, 2); }
    let (regions, consensus) = split_network(&net, &d, &cost, &PartitionSpec { assignment }).unwrap();
    let _ = consensus;
    for region in &regions {
        let p = region.as_nlp();
        println!("region {}: n {} me {} mi {}", region.index, p.num_vars(), p.num_eq(), p.num_ineq());
        let z0 = region.initial.clone();
        println!("  z0 finite: {}", z0.iter().all(|v| v.is_finite()));
        let rep = check_derivatives(p, &z0);
        println!("  derivative check: grad {:.2e} eq {:.2e} ineq {:.2e} hess {:.2e}", rep.gradient, rep.eq_jacobian, rep.ineq_jacobian, rep.hessian);
        let mut opts = NlpOptions::default();
        opts.max_iter = 200; opts.trace = true;
        match solve_nlp(p, &z0, &opts) {
            Ok(r) => {
                println!("  plain local solve: {:?} iters {} kkt {:.2e} obj {:.3}", r.status, r.iterations, r.kkt.max(), r.objective_value);
            }
            Err(e) => println!("  plain local solve failed: {e}"),
        }
    }
}

#[test]
fn dbg_augmented_solve() {
    use opfkit::nlp::{solve_nlp, NlpOptions};
    use nalgebra::DVector;
    let net = parse_case(include_str!("../cases/case5.m")).unwrap();
    let d = Disturbance::from_network(&net);
    let cost = CostFunction::from_network(&net);
    let mut assignment = BTreeMap::new();
    for b in [1usize, 2] { assignment.insert(b, 1); }
    for b in [3usize, 4, 5] { assignment.insert(b, 2); }
    let (regions, consensus) = split_network(&net, &d, &cost, &PartitionSpec { assignment }).unwrap();
    let region = &regions[0];
    let lambda = DVector::zeros(consensus.n_rows);
    let cfg = AladinConfig::default();
    let sigma = DVector::from_element(region.n_local(), 1.0);
    match local_step(region, &lambda, &region.initial, 1e3, &sigma, &cfg) {
        Ok(out) => println!("local step ok, z norm {:.3}", out.z.norm()),
        Err(e) => println!("local step failed: {e}"),
    }
    // direct probe: lower rho
    for rho in [0.0, 1.0, 100.0, 1000.0] {
        match local_step(region, &lambda, &region.initial, rho, &sigma, &cfg) {
            Ok(out) => println!("rho {rho:8.1}: ok, iters {}", out.iterations),
            Err(e) => println!("rho {rho:8.1}: {e}"),
        }
    }
    let _ = solve_nlp as fn(&dyn opfkit::nlp::NlpProblem, &DVector<f64>, &NlpOptions) -> _;
}

#[test]
fn dbg_aladin_manual_loop() {
    use nalgebra::DVector;
    let net = parse_case(include_str!("../cases/case5.m")).unwrap();
    let d = Disturbance::from_network(&net);
    let cost = CostFunction::from_network(&net);
    let mut assignment = BTreeMap::new();
    for b in [1usize, 2] { assignment.insert(b, 1); }
    for b in [3usize, 4, 5] { assignment.insert(b, 2); }
    let (regions, consensus) = split_network(&net, &d, &cost, &PartitionSpec { assignment }).unwrap();
    let cfg = AladinConfig::default();
    let mut state = AladinState {
        z_bar: regions.iter().map(|r| r.initial.clone()).collect(),
        lambda: DVector::zeros(consensus.n_rows),
        rho: cfg.rho0,
        mu: cfg.mu0,
    };
    for iter in 0..25 {
        let mut locals = Vec::new();
        for region in &regions {
            let sigma = DVector::from_element(region.n_local(), 1.0);
            match local_step(region, &state.lambda, &state.z_bar[region.index], state.rho, &sigma, &cfg) {
                Ok(l) => locals.push(l),
                Err(e) => {
                    println!("iter {iter} region {}: LOCAL FAIL {e}", region.index);
                    // rerun with trace through the augmented path
                    use opfkit::nlp::{solve_nlp, NlpOptions};
                    let inner = region.as_nlp();
                    let nn = inner.num_vars();
                    let mut lin = nalgebra::DVector::zeros(nn);
                    for &(row, col, coeff) in &region.coupling {
                        lin[col] += coeff * state.lambda[row];
                    }
                    let aug = opfkit::dist::debug_augmented(inner, lin, state.rho * &sigma, state.z_bar[region.index].clone());
                    let mut o = NlpOptions::default();
                    o.tol = 1e-9; o.max_iter = 300; o.trace = true;
                    let r = solve_nlp(aug.as_ref(), &state.z_bar[region.index], &o).unwrap();
                    for t in r.trace.iter().rev().take(12).rev() {
                        println!("  it {:3} stat {:9.2e} eq {:9.2e} comp {:9.2e} alpha {:8.2e} mu {:8.2e}", t.iter, t.stationarity, t.eq_violation, t.complementarity, t.step_length, t.barrier_mu);
                    }
                    return;
                }
            }
        }
        let z: Vec<_> = locals.iter().map(|l| l.z.clone()).collect();
        let cv = consensus_violation(&regions, &consensus, &z);
        println!("iter {iter}: cv {cv:9.2e} rho {:.1e} mu {:.1e} lambda_max {:9.2e}", state.rho, state.mu, state.lambda.amax());
        match coordination_step(&locals, &regions, &consensus, &state.lambda, state.mu) {
            Ok((dz, lqp)) => {
                let dzmax = dz.iter().map(|d| d.amax()).fold(0.0f64, f64::max);
                println!("  dz max {dzmax:9.2e} lambda_qp max {:9.2e}", lqp.amax());
                for (ri, d) in dz.iter().enumerate() {
                    for (j, v) in d.iter().enumerate() {
                        if v.abs() > 1.0 {
                            println!("    region {ri} col {j}: dz {v:9.2e} z {:9.3} zbar {:9.3}", locals[ri].z[j], state.z_bar[ri][j]);
                        }
                    }
                }
                update_and_linesearch(&mut state, &locals, &dz, &lqp, &regions, &consensus, &cfg);
            }
            Err(e) => { println!("  COORD FAIL {e}"); return; }
        }
    }
}
