use policy_surrogate::domain::TreatmentCondition;
use policy_surrogate::sim::{
    expected_deaths_analytic, simulate_replicate, simulate_trajectory, CountyOudParams, HealthState, LinearSimulator,
    SimConfig, Simulator,
};
use policy_surrogate::synthetic::{linear_problem, oud_params_for, random_counties, SyntheticSpec};
use proptest::prelude::*;

fn params() -> impl Strategy<Value = CountyOudParams> {
    (
        (-4.0f64..-1.5, 0.0f64..0.03, -3.0f64..-1.0, 0.01f64..0.3, -4.0f64..-1.5, 0.0f64..0.1, 0.01f64..0.1),
        (5.0f64..90.0, 0.5f64..12.0, 0.5f64..12.0, 0.0f64..30.0),
    )
        .prop_map(|(b, (o, bup, nal, fen))| CountyOudParams {
            beta: [b.0, b.1, b.2, b.3, b.4, b.5, b.6],
            opioid_rate: o,
            bup_rate: bup,
            nal_rate: nal,
            fentanyl_rate: fen,
            ..CountyOudParams::default()
        })
}

fn small() -> SimConfig {
    SimConfig { horizon_years: 2, steps_per_year: 6, cohort_size: 500, rng_seed: 0 }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cohort_is_closed_and_death_is_absorbing(p in params(), n in 0u32..5, b in 0u32..5, seed in any::<u64>()) {
        let cfg = SimConfig { rng_seed: seed, ..small() };
        let traj = simulate_trajectory(&p, TreatmentCondition::new(n, b), &cfg).unwrap();
        prop_assert_eq!(traj.len() as u32, cfg.steps() + 1);
        for w in traj.windows(2) {
            prop_assert_eq!(w[1].total(), cfg.cohort_size);
            prop_assert!(w[1].get(HealthState::OverdoseDead) >= w[0].get(HealthState::OverdoseDead));
            prop_assert!(w[1].get(HealthState::OtherDead) >= w[0].get(HealthState::OtherDead));
        }
    }

    #[test]
    fn expected_deaths_fall_with_either_treatment(p in params(), n in 0u32..4, b in 0u32..4) {
        let cfg = small();
        let z = |n, b| expected_deaths_analytic(&p, TreatmentCondition::new(n, b), &cfg).unwrap();
        prop_assert!(z(n + 1, b) <= z(n, b) + 1e-12);
        prop_assert!(z(n, b + 1) <= z(n, b) + 1e-12);
    }

    #[test]
    fn replicates_are_deterministic(p in params(), seed in any::<u64>()) {
        let cfg = SimConfig { rng_seed: seed, ..small() };
        let c = TreatmentCondition::new(2, 1);
        prop_assert_eq!(simulate_replicate(&p, c, &cfg).unwrap(), simulate_replicate(&p, c, &cfg).unwrap());
        prop_assert_eq!(simulate_trajectory(&p, c, &cfg).unwrap(), simulate_trajectory(&p, c, &cfg).unwrap());
    }
}

#[test]
fn synthetic_cohort_parameters_are_valid_and_nearly_additive() {
    let counties = random_counties(6, 3);
    for (id, p) in oud_params_for(&counties).unwrap() {
        p.validate().unwrap();
        let cfg = SimConfig::default();
        let z = |n, b| expected_deaths_analytic(&p, TreatmentCondition::new(n, b), &cfg).unwrap();
        let mixed = (z(4, 4) - z(4, 0) - z(0, 4) + z(0, 0)).abs();
        let main = (z(4, 0) - z(0, 0)).abs().min((z(0, 4) - z(0, 0)).abs());
        assert!(mixed < main, "{id}: mixed {mixed} vs main {main}");
    }
}

#[test]
fn linear_simulator_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = linear_problem(&SyntheticSpec { counties: 4, ..Default::default() }).unwrap();
    let (_, truth) = p.write(dir.path()).unwrap();
    let back = LinearSimulator::load(truth).unwrap();
    assert_eq!(back.coefficients, p.simulator.coefficients);
    let c = TreatmentCondition::new(3, 2);
    assert_eq!(back.simulate("c01", c, 9).unwrap(), p.simulator.simulate("c01", c, 9).unwrap());
}
