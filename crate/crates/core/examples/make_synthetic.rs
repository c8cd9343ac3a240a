//! Writes a synthetic county set, its linear truth, cohort-model parameters
//! and two ready-to-run configs.
//!
//! ```text
//! cargo run -p policy-surrogate --example make_synthetic -- data/synthetic
//! ```

use std::collections::BTreeMap;

use policy_surrogate::config::{save_config, RunConfig};
use policy_surrogate::synthetic::{linear_problem, oud_params_for, SyntheticSpec};

fn main() -> policy_surrogate::Result<()> {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "data/synthetic".into());
    let problem = linear_problem(&SyntheticSpec::default())?;
    problem.write(&dir)?;
    let dir = std::path::Path::new(&dir);

    let params: BTreeMap<_, _> = oud_params_for(&problem.counties)?;
    std::fs::write(dir.join("oud_params.json"), serde_json::to_string_pretty(&params)?)?;

    let mut linear = RunConfig::minimal("counties.csv", 2000);
    linear.paths.linear_truth = Some("linear_truth.json".into());
    save_config(&linear, dir.join("config.json"))?;

    let mut oud = RunConfig::minimal("counties.csv", 2000);
    oud.paths.oud_params = Some("oud_params.json".into());
    oud.paths.output_dir = "out-oud".into();
    save_config(&oud, dir.join("config-oud.json"))?;
    println!("wrote {}", dir.display());
    Ok(())
}
