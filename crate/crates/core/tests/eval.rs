mod common;

use std::collections::BTreeMap;

use policy_surrogate::domain::TreatmentGrid;
use policy_surrogate::eval::{
    assign_prototypes, compare_noise_models, compare_specifications, compare_strategies, factorial_slices, relative_error,
    run_design, state_learning_curve, training_inputs, GridTable, TruthSource,
};
use policy_surrogate::regression::ModelKind;
use policy_surrogate::seqdes::DesignConfig;
use policy_surrogate::sim::{OudSimulator, SimConfig};
use policy_surrogate::synthetic::{linear_problem, oud_params_for, random_counties, SyntheticSpec};
use proptest::prelude::*;

fn table(rows: Vec<Vec<f64>>) -> GridTable {
    let mut t = GridTable::new(TreatmentGrid::new(2, 3).unwrap());
    for (i, r) in rows.into_iter().enumerate() {
        t.insert(format!("c{i:02}"), r).unwrap();
    }
    t
}

fn rows() -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(1.0f64..200.0, 6), 1..8)
}

proptest! {
    #[test]
    fn relative_error_matches_double_loop_and_ignores_county_order(
        (truth, pred) in rows().prop_flat_map(|t| {
            let k = t.len();
            (Just(t), prop::collection::vec(prop::collection::vec(0.0f64..250.0, 6), k))
        }),
        rot in 0usize..8,
    ) {
        let mut sum = 0.0;
        let mut n = 0.0;
        for (p, t) in pred.iter().zip(&truth) {
            for j in 0..6 {
                sum += (p[j] - t[j]).abs() / t[j];
                n += 1.0;
            }
        }
        let got = relative_error(&table(pred.clone()), &table(truth.clone())).unwrap();
        prop_assert!((got - sum / n).abs() <= 1e-12 * (sum / n).max(1.0));

        let r = rot % truth.len();
        let (mut t2, mut p2) = (truth, pred);
        t2.rotate_left(r);
        p2.rotate_left(r);
        let again = relative_error(&table(p2), &table(t2)).unwrap();
        prop_assert!((got - again).abs() <= 1e-12 * got.max(1.0));
    }

    #[test]
    fn prototype_assignment_is_total_idempotent_and_nearest(
        vecs in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 4), 3..20),
        picks in prop::collection::vec(any::<prop::sample::Index>(), 1..4),
    ) {
        let vectors: BTreeMap<String, Vec<f64>> = vecs.iter().enumerate().map(|(i, v)| (format!("c{i:02}"), v.clone())).collect();
        let ids: Vec<String> = vectors.keys().cloned().collect();
        let protos: Vec<String> = picks.iter().map(|i| ids[i.index(ids.len())].clone()).collect();
        let a = assign_prototypes(&vectors, &protos).unwrap();
        prop_assert_eq!(a.len(), vectors.len());
        for p in &protos {
            prop_assert_eq!(&a[p].prototype, p);
        }
        for (id, v) in &vectors {
            let best = protos
                .iter()
                .map(|p| v.iter().zip(&vectors[p]).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt())
                .fold(f64::INFINITY, f64::min);
            let got = &a[id];
            prop_assert!(protos.contains(&got.prototype));
            prop_assert!((got.distance - best).abs() < 1e-12);
        }
        let chosen: Vec<String> = a.values().map(|x| x.prototype.clone()).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
        let b = assign_prototypes(&vectors, &chosen).unwrap();
        for p in &chosen {
            prop_assert_eq!(&b[p].prototype, p);
        }
    }
}

#[test]
fn cohort_model_surface_is_nearly_additive() {
    let counties = random_counties(8, 5);
    let sim = OudSimulator::new(oud_params_for(&counties).unwrap(), SimConfig::default()).unwrap();
    let ids: Vec<String> = counties.iter().map(|c| c.county_id.clone()).collect();
    let t = GridTable::from_simulator(&sim, TreatmentGrid::default(), &ids, TruthSource::Analytic, 0, 0).unwrap();
    for id in &ids {
        let f = factorial_slices(&t, id).unwrap();
        assert!(f.defect_ratio() < 0.2, "{id}: {}", f.defect_ratio());
    }
}

fn setup(counties: usize) -> (policy_surrogate::synthetic::SyntheticProblem, GridTable) {
    let p = linear_problem(&SyntheticSpec { counties, ..Default::default() }).unwrap();
    let ids: Vec<String> = p.counties.iter().map(|c| c.county_id.clone()).collect();
    let t = GridTable::from_simulator(&p.simulator, TreatmentGrid::default(), &ids, TruthSource::Analytic, 0, 0).unwrap();
    (p, t)
}

#[test]
fn final_checkpoint_replays_to_the_direct_error() {
    let (p, truth) = setup(8);
    let cfg = DesignConfig { budget: 400, plateau_tol: None, seed: 4, ..DesignConfig::default() };
    let s = run_design(cfg, &p.counties, &p.simulator, &truth).unwrap();
    let curve = state_learning_curve(&s, &truth, 3).unwrap();
    let direct = relative_error(&s.prediction_table().unwrap(), &truth).unwrap();
    let last = curve.last().unwrap();
    assert_eq!(last.budget_used, s.budget_used());
    assert!((last.rel_error - direct).abs() < 1e-12, "{} vs {direct}", last.rel_error);
}

#[test]
fn error_falls_over_the_run_on_average() {
    let (p, truth) = setup(20);
    let (mut first, mut last) = (0.0, 0.0);
    for seed in 1..=5 {
        let cfg = DesignConfig { budget: 1000, plateau_tol: None, seed, ..DesignConfig::default() };
        let s = run_design(cfg, &p.counties, &p.simulator, &truth).unwrap();
        let c = state_learning_curve(&s, &truth, 1).unwrap();
        first += c[0].rel_error;
        last += c.last().unwrap().rel_error;
    }
    assert!(last <= first, "{last} vs {first}");
}

#[test]
fn strategies_share_the_budget_grid() {
    let (p, truth) = setup(6);
    let base = DesignConfig { budget: 400, plateau_tol: None, ..DesignConfig::default() };
    let pc = compare_strategies(&base, &p.counties, &p.simulator, &truth, &[1, 2]).unwrap();
    assert_eq!(pc.budgets.first(), Some(&base.init.total_cost(&base.grid, &p.counties)));
    assert!(pc.budgets.windows(2).all(|w| w[1] - w[0] == 25));
    for v in &pc.variants {
        for (run, curve) in v.runs.iter().zip(&v.curves) {
            assert_eq!(run.len(), pc.budgets.len());
            assert!(run.iter().all(|e| e.is_finite()));
            assert!(curve.last().unwrap().budget_used <= base.budget);
        }
    }
}

#[test]
fn noise_models_agree_when_noise_is_uniform() {
    let p = linear_problem(&SyntheticSpec { counties: 10, noise_sd: (12.0, 12.0), ..Default::default() }).unwrap();
    let ids: Vec<String> = p.counties.iter().map(|c| c.county_id.clone()).collect();
    let truth = GridTable::from_simulator(&p.simulator, TreatmentGrid::default(), &ids, TruthSource::Analytic, 0, 0).unwrap();
    let base = DesignConfig { budget: 500, plateau_tol: None, ..DesignConfig::default() };
    let pc = compare_noise_models(&base, &p.counties, &p.simulator, &truth, &[1, 2, 3]).unwrap();
    let (h, o) = (&pc.variants[0].band, &pc.variants[1].band);
    for j in 0..pc.budgets.len() {
        assert!(h.min[j].max(o.min[j]) <= h.max[j].min(o.max[j]) * 1.05, "budget {}: bands apart", pc.budgets[j]);
    }
}

#[test]
fn identical_specifications_have_zero_deltas() {
    let (p, truth) = setup(6);
    let cfg = DesignConfig { budget: 300, plateau_tol: None, ..DesignConfig::default() };
    let s = run_design(cfg, &p.counties, &p.simulator, &truth).unwrap();
    let m = s.models().unwrap();
    let cmp = compare_specifications(m, m, &training_inputs(m), 2000, 0).unwrap();
    assert!(cmp.interaction.is_none());
    for r in &cmp.rows {
        assert_eq!(r.delta, 0.0);
        assert!(r.spans_zero());
    }
    let inter = s.fit_models_for(ModelKind::Interaction).unwrap();
    assert!(compare_specifications(m, &inter, &training_inputs(m), 2000, 0).unwrap().interaction.is_some());
}
