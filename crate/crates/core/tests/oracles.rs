use sasaki_berger::flow::{integrate, Bundle, FlowConfig};
use sasaki_berger::frenet::{
    algebraic_chain, constancy_verdict, curvature_profile, generalized_curvatures, ChainSource, DEFAULT_RANK_TOL,
};
use sasaki_berger::runner::sampling::random_initial_state;
use sasaki_berger::space_form::{BergerParams, SpaceFormModel};

/// On CP^1 the projection is a planar curve, so `k_1` is the turning rate of
/// `u` divided by the speed.
#[test]
fn cp1_curvature_is_the_turning_rate() {
    let model = SpaceFormModel::projective(1);
    let params = BergerParams::new(0.5).unwrap();
    for seed in 0..5 {
        let initial = random_initial_state(1, Bundle::UnitTangent, &params, 1.0, seed).unwrap();
        let h = 1e-3;
        let traj = integrate(&FlowConfig::new(Bundle::UnitTangent, model, params, h, 1.0), &initial.state).unwrap();
        let angle = |j: usize| {
            let u = traj.samples[j].state.u.as_slice();
            u[1].atan2(u[0])
        };
        let speed = (1.0 - initial.state.lambda_sq(&params)).sqrt();
        for j in [100, 500, 900] {
            let mut dtheta = angle(j + 1) - angle(j - 1);
            if dtheta > std::f64::consts::PI {
                dtheta -= 2.0 * std::f64::consts::PI;
            } else if dtheta < -std::f64::consts::PI {
                dtheta += 2.0 * std::f64::consts::PI;
            }
            let turning = (dtheta / (2.0 * h)).abs() / speed;
            let chain = algebraic_chain(&model, &params, &traj.samples[j].state, Bundle::UnitTangent, 2).unwrap();
            let k1 = generalized_curvatures(&chain, DEFAULT_RANK_TOL).unwrap().get(1);
            assert!((k1 - turning).abs() <= 1e-6 * (1.0 + k1), "seed {seed}: k1 {k1}, turning {turning}");
        }
    }
}

#[test]
fn sasaki_and_flat_profiles_are_constant() {
    for (model, delta) in [(SpaceFormModel::projective(4), 0.0), (SpaceFormModel::flat(4), 0.8)] {
        let params = BergerParams::new(delta).unwrap();
        let initial = random_initial_state(4, Bundle::UnitTangent, &params, 1.0, 3).unwrap();
        let traj = integrate(&FlowConfig::new(Bundle::UnitTangent, model, params, 1e-3, 10.0), &initial.state).unwrap();
        let profile = curvature_profile(&traj, 8, DEFAULT_RANK_TOL, 200, ChainSource::Algebraic).unwrap();
        let verdict = constancy_verdict(&profile, 1e-6);
        assert!(verdict.passed, "{verdict:?}");
    }
}
