use approx::assert_abs_diff_eq;
use fbcap::capacity::{self, CapacityOptions};
use fbcap::model::{make_ar1_channel, make_delayed};
use fbcap::simulate::{analytic_rate_trajectory, simulate_policy, Policy, SimConfig};
use fbcap::{Ar1Params, ChannelModel, Mat};

fn optimum(model: &ChannelModel) -> Policy {
    Policy::from_solution(&capacity::stationary_capacity(model, 1.0, &CapacityOptions::default()).unwrap())
}

#[test]
fn results_depend_only_on_seed() {
    let model = make_ar1_channel(Ar1Params::new(0.8)).unwrap();
    let cfg = SimConfig { horizon: 2000, trials: 4, seed: 11, policy: optimum(&model) };
    let a = simulate_policy(&model, &cfg).unwrap();
    let b = simulate_policy(&model, &cfg).unwrap();
    assert_eq!(a.empirical_power, b.empirical_power);
    assert_eq!(a.encoder_innovation_cov, b.encoder_innovation_cov);
    let c = simulate_policy(&model, &SimConfig { seed: 12, ..cfg }).unwrap();
    assert_ne!(a.empirical_power, c.empirical_power);
}

#[test]
fn delayed_policy_meets_power() {
    let model = make_delayed(&make_ar1_channel(Ar1Params::new(0.5)).unwrap(), 2).unwrap();
    let sol = capacity::stationary_capacity(&model, 1.0, &CapacityOptions::default()).unwrap();
    let cfg = SimConfig { horizon: 5000, trials: 8, seed: 1, policy: Policy::from_solution(&sol) };
    let res = simulate_policy(&model, &cfg).unwrap();
    let tr = sol.pi.trace();
    assert!((res.empirical_power - tr).abs() < 0.05 * tr, "{} vs {tr}", res.empirical_power);
    assert!(res.whiteness_maxlag_corr < 4.0 / (40_000f64).sqrt());
}

#[test]
fn analytic_rate_settles_to_capacity() {
    let model = make_ar1_channel(Ar1Params::new(0.5)).unwrap();
    let sol = capacity::stationary_capacity(&model, 1.0, &CapacityOptions::default()).unwrap();
    let traj = analytic_rate_trajectory(&model, &Policy::from_solution(&sol), &Mat::zeros(1, 1), 300).unwrap();
    assert_eq!(traj.len(), 300);
    assert_abs_diff_eq!(traj[299], sol.rate_nats, epsilon = 1e-8);
    // the first use has no past to exploit
    assert!(traj[0] < sol.rate_nats);
}
