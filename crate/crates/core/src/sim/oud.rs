//! Cohort Markov model of opioid use disorder.
//!
//! Agents are exchangeable, so instead of stepping individuals the chain moves
//! whole buckets: every step each health state sends a multinomial number of
//! its members along each outgoing edge. Three edges are driven by logistic
//! models of county dispensing covariates (prescription uptake, treatment
//! entry, overdose death); the rest are constant per-year probabilities.

use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::domain::TreatmentCondition;
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

/// Dispensing rates grow by this fraction per treatment level.
pub const LEVEL_SCALE: f64 = 0.25;

pub const NUM_STATES: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(usize)]
pub enum HealthState {
    Nonuse = 0,
    PrescribedUse = 1,
    Misuse = 2,
    Oud = 3,
    Treatment = 4,
    OverdoseDead = 5,
    OtherDead = 6,
}

/// Fractions of the cohort in each living state at time zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialMix {
    pub nonuse: f64,
    pub prescribed_use: f64,
    pub misuse: f64,
    pub oud: f64,
    pub treatment: f64,
}

impl Default for InitialMix {
    fn default() -> Self {
        InitialMix { nonuse: 0.905, prescribed_use: 0.06, misuse: 0.02, oud: 0.012, treatment: 0.003 }
    }
}

impl InitialMix {
    fn fractions(&self) -> [f64; 5] {
        [self.nonuse, self.prescribed_use, self.misuse, self.oud, self.treatment]
    }
}

fn d_misuse_onset() -> f64 { 0.002 }
fn d_oud_from_rx() -> f64 { 0.02 }
fn d_oud_from_misuse() -> f64 { 0.10 }
fn d_relapse() -> f64 { 0.30 }
fn d_success() -> f64 { 0.25 }
fn d_other_exit() -> f64 { 0.008 }

/// County parameters of the cohort model.
///
/// The constant per-year probabilities default to synthetic stand-in values;
/// they are not calibrated to any real population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountyOudParams {
    /// Logistic coefficients: `beta[0..2]` prescription uptake, `beta[2..4]`
    /// treatment entry, `beta[4..7]` overdose death.
    pub beta: [f64; 7],
    /// Prescriptions per 100 persons per year.
    pub opioid_rate: f64,
    pub bup_rate: f64,
    pub nal_rate: f64,
    /// Seizures per 100,000 per year.
    pub fentanyl_rate: f64,
    #[serde(default = "d_misuse_onset")]
    pub misuse_onset: f64,
    #[serde(default = "d_oud_from_rx")]
    pub oud_from_rx: f64,
    #[serde(default = "d_oud_from_misuse")]
    pub oud_from_misuse: f64,
    #[serde(default = "d_relapse")]
    pub relapse: f64,
    #[serde(default = "d_success")]
    pub treatment_success: f64,
    #[serde(default = "d_other_exit")]
    pub other_exit: f64,
    #[serde(default)]
    pub initial_mix: InitialMix,
}

impl Default for CountyOudParams {
    fn default() -> Self {
        CountyOudParams {
            beta: [-3.0, 0.01, -2.0, 0.1, -4.5, 0.05, 0.04],
            opioid_rate: 50.0,
            bup_rate: 5.0,
            nal_rate: 5.0,
            fentanyl_rate: 10.0,
            misuse_onset: d_misuse_onset(),
            oud_from_rx: d_oud_from_rx(),
            oud_from_misuse: d_oud_from_misuse(),
            relapse: d_relapse(),
            treatment_success: d_success(),
            other_exit: d_other_exit(),
            initial_mix: InitialMix::default(),
        }
    }
}

impl CountyOudParams {
    pub fn validate(&self) -> Result<()> {
        let probs = [
            self.misuse_onset,
            self.oud_from_rx,
            self.oud_from_misuse,
            self.relapse,
            self.treatment_success,
            self.other_exit,
        ];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::invalid("transition probabilities must lie in [0, 1]"));
        }
        let rates = [self.opioid_rate, self.bup_rate, self.nal_rate, self.fentanyl_rate];
        if rates.iter().any(|r| !(*r >= 0.0) || !r.is_finite()) {
            return Err(Error::invalid("dispensing and seizure rates must be finite and >= 0"));
        }
        if self.beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::invalid("logistic coefficients must be finite"));
        }
        let mix = self.initial_mix.fractions();
        if mix.iter().any(|f| !(0.0..=1.0).contains(f)) || (mix.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("initial mix must be fractions summing to 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub horizon_years: u32,
    pub steps_per_year: u32,
    pub cohort_size: u64,
    pub rng_seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig { horizon_years: 5, steps_per_year: 12, cohort_size: 10_000, rng_seed: 0 }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon_years < 1 {
            return Err(Error::invalid("horizon must be at least one year"));
        }
        if self.steps_per_year < 1 {
            return Err(Error::invalid("steps_per_year must be at least 1"));
        }
        if self.cohort_size < 100 {
            return Err(Error::invalid(format!("cohort_size must be >= 100, got {}", self.cohort_size)));
        }
        Ok(())
    }

    pub fn steps(&self) -> u32 {
        self.horizon_years * self.steps_per_year
    }
}

/// Annual and per-step probabilities of the three covariate-driven edges.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionProbabilities {
    /// `[p1, p2, p3]` per year.
    pub annual: [f64; 3],
    /// `[p1, p2, p3]` per step.
    pub per_step: [f64; 3],
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Converts an annual probability so that `steps` independent trials compound to it.
pub fn per_step(p_annual: f64, steps_per_year: u32) -> f64 {
    if steps_per_year == 1 {
        return p_annual;
    }
    // 1 - (1 - p)^(1/k), written to keep precision for small p.
    -((1.0 / steps_per_year as f64) * (-p_annual).ln_1p()).exp_m1()
}

pub fn transition_probabilities(
    params: &CountyOudParams,
    condition: TreatmentCondition,
    steps_per_year: u32,
) -> Result<TransitionProbabilities> {
    let b = &params.beta;
    let bup = params.bup_rate * (1.0 + LEVEL_SCALE * condition.b as f64);
    let nal = params.nal_rate * (1.0 + LEVEL_SCALE * condition.n as f64);
    let logits = [
        b[0] + b[1] * params.opioid_rate,
        b[2] + b[3] * bup,
        b[4] + b[5] * params.fentanyl_rate - b[6] * nal,
    ];
    if logits.iter().any(|l| !l.is_finite()) {
        return Err(Error::invalid(format!("non-finite transition logit {logits:?}")));
    }
    let annual = logits.map(sigmoid);
    Ok(TransitionProbabilities { annual, per_step: annual.map(|p| per_step(p, steps_per_year)) })
}

/// Outgoing edges `(from, to, per-step probability)` in draw order.
fn edges(params: &CountyOudParams, tp: &TransitionProbabilities, spy: u32) -> Result<Vec<(HealthState, HealthState, f64)>> {
    use HealthState::*;
    let s = |p: f64| per_step(p, spy);
    let [p1, p2, p3] = tp.per_step;
    let exit = s(params.other_exit);
    let e = vec![
        (Nonuse, PrescribedUse, p1),
        (Nonuse, Misuse, s(params.misuse_onset)),
        (Nonuse, OtherDead, exit),
        (PrescribedUse, Oud, s(params.oud_from_rx)),
        (PrescribedUse, OtherDead, exit),
        (Misuse, Oud, s(params.oud_from_misuse)),
        (Misuse, OtherDead, exit),
        (Oud, Treatment, p2),
        (Oud, OverdoseDead, p3),
        (Oud, OtherDead, exit),
        (Treatment, Oud, s(params.relapse)),
        (Treatment, Nonuse, s(params.treatment_success)),
        (Treatment, OtherDead, exit),
    ];
    let mut total = [0.0; NUM_STATES];
    for (from, _, p) in &e {
        total[*from as usize] += p;
    }
    if let Some(i) = total.iter().position(|t| *t > 1.0 + 1e-12) {
        return Err(Error::invalid(format!(
            "per-step exit probabilities from state {i} sum to {} > 1",
            total[i]
        )));
    }
    Ok(e)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortState {
    pub counts: [u64; NUM_STATES],
}

impl CohortState {
    pub fn initial(mix: &InitialMix, cohort_size: u64) -> Self {
        let mut counts = [0u64; NUM_STATES];
        let fr = mix.fractions();
        for i in 1..5 {
            counts[i] = (fr[i] * cohort_size as f64).floor() as u64;
        }
        counts[0] = cohort_size - counts[1..5].iter().sum::<u64>();
        CohortState { counts }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn get(&self, s: HealthState) -> u64 {
        self.counts[s as usize]
    }
}

/// Runs one replicate and returns every state along the way (initial state first).
pub fn simulate_trajectory(
    params: &CountyOudParams,
    condition: TreatmentCondition,
    cfg: &SimConfig,
) -> Result<Vec<CohortState>> {
    cfg.validate()?;
    params.validate()?;
    let tp = transition_probabilities(params, condition, cfg.steps_per_year)?;
    let edges = edges(params, &tp, cfg.steps_per_year)?;
    let mut rng = rng_from_seed(cfg.rng_seed);
    let mut state = CohortState::initial(&params.initial_mix, cfg.cohort_size);
    let mut out = Vec::with_capacity(cfg.steps() as usize + 1);
    out.push(state);
    for _ in 0..cfg.steps() {
        let mut next = state.counts;
        // Multinomial exits per state via sequential conditional binomials.
        let mut remaining = state.counts;
        let mut mass_left = [1.0f64; NUM_STATES];
        for &(from, to, p) in &edges {
            let f = from as usize;
            if remaining[f] == 0 || p <= 0.0 {
                mass_left[f] -= p;
                continue;
            }
            let cond_p = (p / mass_left[f]).clamp(0.0, 1.0);
            let k = Binomial::new(remaining[f], cond_p)
                .map_err(|e| Error::invalid(format!("binomial({}, {cond_p}): {e}", remaining[f])))?
                .sample(&mut rng);
            remaining[f] -= k;
            mass_left[f] -= p;
            next[f] -= k;
            next[to as usize] += k;
        }
        state = CohortState { counts: next };
        debug_assert_eq!(state.total(), cfg.cohort_size);
        out.push(state);
    }
    Ok(out)
}

/// Cumulative overdose deaths over the horizon per 100,000 cohort members.
pub fn simulate_replicate(params: &CountyOudParams, condition: TreatmentCondition, cfg: &SimConfig) -> Result<f64> {
    let traj = simulate_trajectory(params, condition, cfg)?;
    let last = traj.last().expect("trajectory has the initial state");
    Ok(last.get(HealthState::OverdoseDead) as f64 * 1e5 / cfg.cohort_size as f64)
}

/// Exact expectation of [`simulate_replicate`], obtained by pushing the
/// expected occupancy vector through the per-step transition matrix.
pub fn expected_deaths_analytic(params: &CountyOudParams, condition: TreatmentCondition, cfg: &SimConfig) -> Result<f64> {
    params.validate()?;
    let tp = transition_probabilities(params, condition, cfg.steps_per_year)?;
    let edges = edges(params, &tp, cfg.steps_per_year)?;
    let init = CohortState::initial(&params.initial_mix, cfg.cohort_size);
    let mut occ: [f64; NUM_STATES] = init.counts.map(|c| c as f64);
    for _ in 0..cfg.steps() {
        let mut next = occ;
        for &(from, to, p) in &edges {
            let flow = occ[from as usize] * p;
            next[from as usize] -= flow;
            next[to as usize] += flow;
        }
        occ = next;
    }
    Ok(occ[HealthState::OverdoseDead as usize] * 1e5 / cfg.cohort_size as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet_params() -> CountyOudParams {
        CountyOudParams {
            beta: [-50.0, 0.0, -50.0, 0.0, -50.0, 0.0, 0.0],
            misuse_onset: 0.0,
            oud_from_rx: 0.0,
            oud_from_misuse: 0.0,
            relapse: 0.0,
            treatment_success: 0.0,
            other_exit: 0.0,
            ..CountyOudParams::default()
        }
    }

    #[test]
    fn zero_logit_gives_half() {
        let p = CountyOudParams { beta: [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0], ..Default::default() };
        let tp = transition_probabilities(&p, TreatmentCondition::BASELINE, 12).unwrap();
        assert_eq!(tp.annual[1], 0.5);
        assert!((1.0 - (1.0 - tp.per_step[1]).powi(12) - 0.5).abs() < 1e-14);
    }

    #[test]
    fn hand_evaluated_overdose_probability() {
        let p = CountyOudParams {
            beta: [0.0, 0.0, 0.0, 0.0, -3.0, 0.1, 0.2],
            fentanyl_rate: 10.0,
            nal_rate: 5.0,
            ..Default::default()
        };
        let tp = transition_probabilities(&p, TreatmentCondition::BASELINE, 12).unwrap();
        assert!((tp.annual[2] - 0.047_425_873_177_566_78).abs() < 1e-12);
    }

    #[test]
    fn naloxone_lowers_overdose_probability() {
        let p = CountyOudParams::default();
        let p3: Vec<f64> = (0..5)
            .map(|n| transition_probabilities(&p, TreatmentCondition::new(n, 0), 12).unwrap().annual[2])
            .collect();
        assert!(p3.windows(2).all(|w| w[1] < w[0]), "{p3:?}");
    }

    #[test]
    fn non_finite_logit_is_an_error() {
        let p = CountyOudParams { opioid_rate: 1e308, beta: [0.0, 1e10, 0.0, 0.0, 0.0, 0.0, 0.0], ..Default::default() };
        assert!(transition_probabilities(&p, TreatmentCondition::BASELINE, 12).is_err());
    }

    #[test]
    fn tiny_cohort_rejected() {
        let cfg = SimConfig { cohort_size: 99, ..Default::default() };
        assert!(simulate_replicate(&CountyOudParams::default(), TreatmentCondition::BASELINE, &cfg).is_err());
    }

    #[test]
    fn negligible_overdose_gives_no_deaths() {
        let p = CountyOudParams { beta: [-3.0, 0.01, -2.0, 0.1, -50.0, 0.0, 0.0], ..Default::default() };
        let cfg = SimConfig { cohort_size: 100_000, rng_seed: 3, ..Default::default() };
        assert_eq!(simulate_replicate(&p, TreatmentCondition::BASELINE, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn replicate_is_deterministic() {
        let cfg = SimConfig { rng_seed: 11, ..Default::default() };
        let p = CountyOudParams::default();
        let a = simulate_replicate(&p, TreatmentCondition::new(2, 3), &cfg).unwrap();
        let b = simulate_replicate(&p, TreatmentCondition::new(2, 3), &cfg).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn cohort_is_closed() {
        let cfg = SimConfig { cohort_size: 5_000, rng_seed: 2, ..Default::default() };
        let traj = simulate_trajectory(&CountyOudParams::default(), TreatmentCondition::new(4, 4), &cfg).unwrap();
        assert_eq!(traj.len(), 61);
        assert!(traj.iter().all(|s| s.total() == 5_000));
    }

    #[test]
    fn analytic_all_zero_probabilities() {
        let cfg = SimConfig::default();
        assert!(expected_deaths_analytic(&quiet_params(), TreatmentCondition::BASELINE, &cfg).unwrap() < 1e-12);
    }

    #[test]
    fn analytic_single_step_from_oud() {
        let p = CountyOudParams {
            beta: [-50.0, 0.0, -50.0, 0.0, (0.1f64 / 0.9).ln(), 0.0, 0.0],
            initial_mix: InitialMix { nonuse: 0.0, prescribed_use: 0.0, misuse: 0.0, oud: 1.0, treatment: 0.0 },
            ..quiet_params()
        };
        let cfg = SimConfig { horizon_years: 1, steps_per_year: 1, cohort_size: 1000, rng_seed: 0 };
        let d = expected_deaths_analytic(&p, TreatmentCondition::BASELINE, &cfg).unwrap();
        assert!((d - 10_000.0).abs() < 1e-6, "{d}");
    }

    #[test]
    fn analytic_monotone_in_both_levels() {
        let p = CountyOudParams::default();
        let cfg = SimConfig::default();
        for fixed in 0..5 {
            let along_n: Vec<f64> = (0..5)
                .map(|n| expected_deaths_analytic(&p, TreatmentCondition::new(n, fixed), &cfg).unwrap())
                .collect();
            let along_b: Vec<f64> = (0..5)
                .map(|b| expected_deaths_analytic(&p, TreatmentCondition::new(fixed, b), &cfg).unwrap())
                .collect();
            assert!(along_n.windows(2).all(|w| w[1] <= w[0]));
            assert!(along_b.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn oversubscribed_exits_rejected() {
        let p = CountyOudParams { relapse: 0.9, treatment_success: 0.9, ..Default::default() };
        let cfg = SimConfig { steps_per_year: 1, ..Default::default() };
        assert!(expected_deaths_analytic(&p, TreatmentCondition::BASELINE, &cfg).is_err());
    }
}
