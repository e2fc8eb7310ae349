//! Multi-stage OPF tests: horizon-1 degeneration, dynamics and ramp
//! invariants, receding-horizon consistency.

use approx::assert_abs_diff_eq;
use nalgebra::DVector;
use opfkit::multistage::{
    assemble_multistage, receding_horizon_run, solve_multistage, LoadProfile, RampSpec,
    RegularizationSpec,
};
use opfkit::net::parse_case;
use opfkit::nlp::NlpOptions;
use opfkit::opf::{solve_ac_opf, CostFunction};
use opfkit::powerflow::Disturbance;

fn case5() -> opfkit::Network {
    parse_case(include_str!("../cases/case5.m")).unwrap()
}

#[test]
fn paper_cost_vector_from_case_file() {
    let net = case5();
    let cost = CostFunction::from_network(&net);
    let h_expected: [f64; 5] = [200.0, 0.0, 220.0, 240.0, 260.0];
    let h_lin_expected: [f64; 5] = [1500.0, 0.0, 3000.0, 4000.0, 1000.0];
    for k in 0..5 {
        assert_abs_diff_eq!(cost.quad[k], h_expected[k], epsilon = 1e-10 * h_expected[k].max(1.0));
        assert_abs_diff_eq!(
            cost.lin[k],
            h_lin_expected[k],
            epsilon = 1e-10 * h_lin_expected[k].max(1.0)
        );
        assert_eq!(cost.quad[5 + k], 0.0);
        assert_eq!(cost.lin[5 + k], 0.0);
    }
}

#[test]
fn horizon_one_free_start_equals_single_stage() {
    let net = case5();
    let cost = CostFunction::from_network(&net);
    let profile = LoadProfile::constant(&net, 1);
    let problem = assemble_multistage(
        &net,
        &profile,
        &cost,
        &RampSpec::unlimited(net.n_gen()),
        &RegularizationSpec::none(net.n_gen()),
        None,
    )
    .unwrap();
    let ms = solve_multistage(&problem, &profile, &NlpOptions::default()).unwrap();
    let single =
        solve_ac_opf(&net, &Disturbance::from_network(&net), &cost, &NlpOptions::default()).unwrap();
    assert_abs_diff_eq!(ms.objective, single.objective, epsilon = 1e-6 * single.objective.abs());
}

#[test]
fn horizon_one_pinned_start_recovers_u0() {
    let net = case5();
    let cost = CostFunction::from_network(&net);
    let profile = LoadProfile::constant(&net, 1);
    let single =
        solve_ac_opf(&net, &Disturbance::from_network(&net), &cost, &NlpOptions::default()).unwrap();
    let problem = assemble_multistage(
        &net,
        &profile,
        &cost,
        &RampSpec::unlimited(net.n_gen()),
        &RegularizationSpec::none(net.n_gen()),
        Some(&single.u),
    )
    .unwrap();
    let ms = solve_multistage(&problem, &profile, &NlpOptions::default()).unwrap();
    assert!((ms.u[0].p_gen.clone() - single.u.p_gen.clone()).amax() < 1e-6);
}

#[test]
fn constant_profile_from_optimum_needs_no_increments() {
    let net = case5();
    let cost = CostFunction::from_network(&net);
    let single =
        solve_ac_opf(&net, &Disturbance::from_network(&net), &cost, &NlpOptions::default()).unwrap();
    let profile = LoadProfile::constant(&net, 4);
    let problem = assemble_multistage(
        &net,
        &profile,
        &cost,
        &RampSpec::unlimited(net.n_gen()),
        &RegularizationSpec::none(net.n_gen()),
        Some(&single.u),
    )
    .unwrap();
    let ms = solve_multistage(&problem, &profile, &NlpOptions::default()).unwrap();
    for du in &ms.delta_u {
        assert!(du.p_gen.amax() < 1e-5, "increment {:?}", du.p_gen);
    }
    // dynamics hold exactly by construction of the reported increments
    for k in 0..profile.horizon() - 1 {
        let lhs = &ms.u[k + 1].p_gen - (&ms.u[k].p_gen + &ms.delta_u[k].p_gen);
        assert_eq!(lhs.amax(), 0.0);
    }
}

fn step_profile(net: &opfkit::Network, t: usize, bump_stage: usize, bump: f64) -> LoadProfile {
    let mut profile = LoadProfile::constant(net, t);
    let idx = net.index_of(4).unwrap();
    for k in bump_stage..t {
        profile.stages[k].p_dem[idx] += bump;
        profile.stages[k].q_dem[idx] += bump / 3.0;
    }
    profile
}

#[test]
fn ramp_feasibility_and_binding() {
    let net = case5();
    let cost = CostFunction::from_network(&net);
    let profile = step_profile(&net, 4, 2, 1.0);
    let ramps = RampSpec::unlimited(net.n_gen()).with_limit(0, 0.3);
    let problem = assemble_multistage(
        &net,
        &profile,
        &cost,
        &ramps,
        &RegularizationSpec::none(net.n_gen()),
        None,
    )
    .unwrap();
    let ms = solve_multistage(&problem, &profile, &NlpOptions::default()).unwrap();
    for k in 0..profile.horizon() - 1 {
        let dp = ms.u[k + 1].p_gen[0] - ms.u[k].p_gen[0];
        assert!(dp >= -0.3 - 1e-9 && dp <= 0.3 + 1e-9, "ramp violated: {dp}");
    }
}

#[test]
fn unlimited_ramps_never_bind() {
    let net = case5();
    let cost = CostFunction::from_network(&net);
    let profile = step_profile(&net, 3, 1, 0.8);
    let problem = assemble_multistage(
        &net,
        &profile,
        &cost,
        &RampSpec::unlimited(net.n_gen()),
        &RegularizationSpec::none(net.n_gen()),
        None,
    )
    .unwrap();
    let ms = solve_multistage(&problem, &profile, &NlpOptions::default()).unwrap();
    // no increment is anywhere near the (infinite) ramp bounds
    for du in &ms.delta_u {
        assert!(du.p_gen.amax().is_finite());
    }
}

#[test]
fn tightening_ramps_never_cheaper() {
    let net = case5();
    let cost = CostFunction::from_network(&net);
    let profile = step_profile(&net, 4, 2, 1.2);
    let mut last = None;
    for rate in [2.0, 0.8, 0.4] {
        let ramps = RampSpec::unlimited(net.n_gen()).with_limit(0, rate);
        let problem = assemble_multistage(
            &net,
            &profile,
            &cost,
            &ramps,
            &RegularizationSpec::none(net.n_gen()),
            None,
        )
        .unwrap();
        let ms = solve_multistage(&problem, &profile, &NlpOptions::default()).unwrap();
        if let Some(prev) = last {
            assert!(ms.objective >= prev - 1e-5, "tighter ramp got cheaper: {} < {prev}", ms.objective);
        }
        last = Some(ms.objective);
    }
}

#[test]
fn receding_full_window_matches_one_shot() {
    let net = case5();
    let cost = CostFunction::from_network(&net);
    let profile = step_profile(&net, 3, 1, 0.6);
    let ramps = RampSpec::unlimited(net.n_gen()).with_limit(0, 0.25);
    let reg = RegularizationSpec::none(net.n_gen());
    let problem = assemble_multistage(&net, &profile, &cost, &ramps, &reg, None).unwrap();
    let one_shot = solve_multistage(&problem, &profile, &NlpOptions::default()).unwrap();
    let rh =
        receding_horizon_run(&net, &profile, &cost, &ramps, &reg, None, profile.horizon()).unwrap();
    assert_abs_diff_eq!(rh.total_cost, one_shot.objective, epsilon = 1e-5 * one_shot.objective);
    for k in 0..profile.horizon() {
        assert!(
            (rh.applied_u[k].p_gen.clone() - one_shot.u[k].p_gen.clone()).amax() < 1e-4,
            "trajectories diverge at stage {k}"
        );
    }
}

#[test]
fn window_one_is_greedy() {
    let net = case5();
    let cost = CostFunction::from_network(&net);
    let profile = step_profile(&net, 3, 1, 0.5);
    let reg = RegularizationSpec::none(net.n_gen());
    let rh = receding_horizon_run(
        &net,
        &profile,
        &cost,
        &RampSpec::unlimited(net.n_gen()),
        &reg,
        None,
        1,
    )
    .unwrap();
    for (k, d) in profile.stages.iter().enumerate() {
        let single = solve_ac_opf(&net, d, &cost, &NlpOptions::default()).unwrap();
        assert_abs_diff_eq!(rh.stage_costs[k], single.objective, epsilon = 1e-5 * single.objective);
    }
}

#[test]
fn profile_csv_round_trip() {
    let net = case5();
    let mut profile = LoadProfile::constant(&net, 3);
    profile.stages[1].p_dem[3] = 1.7;
    profile.stages[2].q_dem[2] = 0.41;
    let text = profile.to_csv(&net);
    let back = LoadProfile::from_csv(&text, &net).unwrap();
    assert_eq!(back.horizon(), 3);
    for k in 0..3 {
        assert_eq!(back.stages[k].p_dem, profile.stages[k].p_dem);
        assert_eq!(back.stages[k].q_dem, profile.stages[k].q_dem);
    }
}

#[test]
fn bad_u0_rejected() {
    let net = case5();
    let cost = CostFunction::from_network(&net);
    let profile = LoadProfile::constant(&net, 2);
    let mut u0 = opfkit::powerflow::ControlInput::zeros(net.n_gen());
    u0.p_gen[0] = 99.0; // far above the box
    let err = assemble_multistage(
        &net,
        &profile,
        &cost,
        &RampSpec::unlimited(net.n_gen()),
        &RegularizationSpec::none(net.n_gen()),
        Some(&u0),
    )
    .err()
    .unwrap();
    assert!(err.to_string().contains("initial input"));
}

#[test]
fn sigma_regularization_shrinks_increments() {
    let net = case5();
    let cost = CostFunction::from_network(&net);
    let profile = step_profile(&net, 3, 1, 0.6);
    let ramps = RampSpec::unlimited(net.n_gen());
    let free = assemble_multistage(
        &net,
        &profile,
        &cost,
        &ramps,
        &RegularizationSpec::none(net.n_gen()),
        None,
    )
    .unwrap();
    let ms_free = solve_multistage(&free, &profile, &NlpOptions::default()).unwrap();
    let reg = RegularizationSpec { sigma: DVector::from_element(2 * net.n_gen(), 5000.0) };
    let damped = assemble_multistage(&net, &profile, &cost, &ramps, &reg, None).unwrap();
    let ms_damped = solve_multistage(&damped, &profile, &NlpOptions::default()).unwrap();
    let free_moves: f64 = ms_free.delta_u.iter().map(|d| d.p_gen.norm_squared()).sum();
    let damped_moves: f64 = ms_damped.delta_u.iter().map(|d| d.p_gen.norm_squared()).sum();
    assert!(damped_moves < free_moves, "{damped_moves} !< {free_moves}");
}
