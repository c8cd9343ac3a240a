use policy_surrogate::artifact::{run_experiment, RunArtifact};
use policy_surrogate::config::{load_config, save_config, RunConfig};
use policy_surrogate::synthetic::{linear_problem, SyntheticSpec};
use policy_surrogate::whatif::{PredictRequest, WhatIf};
use policy_surrogate::Error;

fn fixture(dir: &std::path::Path, budget: usize) -> RunConfig {
    let p = linear_problem(&SyntheticSpec { counties: 5, ..Default::default() }).unwrap();
    let (counties, truth) = p.write(dir).unwrap();
    let mut c = RunConfig::minimal(counties, budget);
    c.paths.linear_truth = Some(truth);
    c.paths.output_dir = dir.join("out");
    c.plateau_tol = None;
    c
}

#[test]
fn save_then_load_is_identity() {
    let dir = tempfile::tempdir().unwrap();
    let c = fixture(dir.path(), 300);
    let f = dir.path().join("config.json");
    save_config(&c, &f).unwrap();
    let back = load_config(&f).unwrap();
    assert_eq!(back, c);
    assert_eq!(back.content_hash().unwrap(), c.content_hash().unwrap());
}

#[test]
fn budget_below_initialization_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let c = fixture(dir.path(), 109);
    assert!(matches!(c.validate(), Err(Error::Config(m)) if m.contains("initialization cost 110")));
    let f = dir.path().join("config.json");
    save_config(&c, &f).unwrap();
    assert!(load_config(&f).is_err());
}

#[test]
fn artifact_reload_answers_identically() {
    let dir = tempfile::tempdir().unwrap();
    let c = fixture(dir.path(), 200);
    let a = run_experiment(&c).unwrap();
    let f = dir.path().join("artifact.json");
    a.save(&f).unwrap();
    let b = RunArtifact::load(&f).unwrap();
    assert_eq!(a, b);
    let last = a.checkpoints.last().unwrap();
    let table = b.prediction_table().unwrap();
    let direct = policy_surrogate::eval::GridTable::from_coefficients(b.design.grid.clone(), b.design.response, &last.coefficients);
    assert_eq!(table, direct);
    let req = PredictRequest { county_id: "c02".into(), n: 2, b: 3, want_interval: true, samples: None };
    let (wa, wb) = (WhatIf::from_artifact(&a).unwrap(), WhatIf::from_artifact(&b).unwrap());
    assert_eq!(wa.predict(&req, 1).unwrap(), wb.predict(&req, 1).unwrap());
}

#[test]
fn newer_schema_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let c = fixture(dir.path(), 200);
    let mut a = run_experiment(&c).unwrap();
    a.schema_version += 1;
    let f = dir.path().join("artifact.json");
    a.save(&f).unwrap();
    assert!(matches!(RunArtifact::load(&f), Err(Error::Config(_))));
}
