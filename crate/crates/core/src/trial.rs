//! Staged trial engine and the replication harness.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::allocation::{
    apply_suspension, assign_stage, equal_split, fixed_randomization, rule1, rule2, rule3, thompson, trippa,
    AllocationResult, ComparatorConfig,
};
use crate::error::{Error, Result};
use crate::outcome::{simulate_patient, ScenarioSpec, TransformConstants};
use crate::posterior::{gibbs_fit_data, mean, prob_best_thetas, superiority_from_thetas, ArmData, McmcConfig};
use crate::rng::{Purpose, StreamKey};
use crate::stopping::{check_early_stop, SpendingSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RuleName {
    Rule1,
    Rule2,
    Rule3,
    /// Fixed equal randomization.
    Fr,
    /// Thompson sampling.
    Ts,
    /// Trippa et al.
    Tp,
}

impl RuleName {
    pub const ALL: [RuleName; 6] = [Self::Rule1, Self::Rule2, Self::Rule3, Self::Fr, Self::Ts, Self::Tp];

    pub fn label(&self) -> &'static str {
        match self {
            Self::Rule1 => "rule1",
            Self::Rule2 => "rule2",
            Self::Rule3 => "rule3",
            Self::Fr => "fr",
            Self::Ts => "ts",
            Self::Tp => "tp",
        }
    }
}

impl fmt::Display for RuleName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for RuleName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|r| r.label() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown rule `{s}`")))
    }
}

/// How the first stage is split before any data exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FirstStage {
    /// Multinomial draw with equal probabilities.
    #[default]
    Multinomial,
    /// Deterministic equal split.
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub total_n: usize,
    pub num_stages: usize,
    pub scenario: ScenarioSpec,
    pub rule: RuleName,
    /// Clinically meaningful margin on the transformed scale.
    pub delta: f64,
    /// `r` in "at least r arms superior".
    pub hypothesis_r: usize,
    pub mcmc: McmcConfig,
    pub comparator: ComparatorConfig,
    pub first_stage: FirstStage,
}

impl TrialConfig {
    pub fn new(scenario: ScenarioSpec, rule: RuleName, delta: f64) -> Self {
        Self {
            total_n: 2000,
            num_stages: 10,
            scenario,
            rule,
            delta,
            hypothesis_r: 2,
            mcmc: McmcConfig::default(),
            comparator: ComparatorConfig::default(),
            first_stage: FirstStage::Multinomial,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_stages == 0 {
            return Err(Error::InvalidArgument("num_stages must be positive".into()));
        }
        if self.total_n == 0 || !self.total_n.is_multiple_of(self.num_stages) {
            return Err(Error::InvalidArgument(format!(
                "total_n {} must be a positive multiple of num_stages {}",
                self.total_n, self.num_stages
            )));
        }
        if self.scenario.arms.len() < 2 {
            return Err(Error::InvalidArgument("the scenario needs at least one treatment arm".into()));
        }
        for arm in &self.scenario.arms {
            arm.validate()?;
        }
        if !self.delta.is_finite() {
            return Err(Error::InvalidArgument(format!("delta must be finite, got {}", self.delta)));
        }
        let k = self.scenario.num_treatments();
        let r_max = k.saturating_sub(1).max(1);
        if self.hypothesis_r == 0 || self.hypothesis_r > r_max {
            return Err(Error::InvalidArgument(format!(
                "hypothesis r must lie in [1, {r_max}], got {}",
                self.hypothesis_r
            )));
        }
        self.mcmc.validate()?;
        self.comparator.validate()
    }

    pub fn stage_size(&self) -> usize {
        self.total_n / self.num_stages
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub stopped_early: bool,
    /// Stage of the last analysis (1-based).
    pub stop_stage: usize,
    pub rejected: bool,
    /// Patients enrolled per arm, control first.
    pub per_arm_n: Vec<usize>,
    /// Share of enrolled patients randomized to a truly best treatment arm.
    pub best_arm_proportion: f64,
    pub pps_ha1: f64,
    pub pps_ha2: f64,
    pub pps_ha3: f64,
    /// Interim `PPS(H_a1)` after each analysed stage.
    pub pps_trajectory: Vec<f64>,
    /// Posterior mean of `theta` per arm at the last analysis, control first.
    pub theta_hats: Vec<f64>,
    /// Posterior mean of `theta_k - theta_0` per treatment arm.
    pub xi_hats: Vec<f64>,
    /// Suspension flags behind each adaptive allocation.
    pub suspension_log: Vec<Vec<bool>>,
    /// Allocation probabilities used at each stage, control first.
    pub allocation_log: Vec<Vec<f64>>,
}

impl TrialResult {
    pub fn total_n(&self) -> usize {
        self.per_arm_n.iter().sum()
    }
}

/// `P(r-th largest theta_k - theta_0 > delta)` over matched treatment draws
/// against every control draw.
///
/// `treatments[k][b]` holds draw `b` of arm `k + 1`.
pub fn final_pps(treatments: &[Vec<f64>], control: &[f64], delta: f64, r: usize) -> Result<f64> {
    let k = treatments.len();
    if r == 0 || r > k {
        return Err(Error::InvalidArgument(format!("hypothesis r must lie in [1, {k}], got {r}")));
    }
    let b = treatments[0].len();
    if let Some(bad) = treatments.iter().find(|t| t.len() != b) {
        return Err(Error::UnequalDraws(b, bad.len()));
    }
    let mut sorted = control.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(superiority_from_thetas(&order_statistic(treatments, r), &sorted, delta))
}

/// Per draw index, the `r`-th largest value across arms.
fn order_statistic(treatments: &[Vec<f64>], r: usize) -> Vec<f64> {
    let b = treatments[0].len();
    let mut column = vec![0.0; treatments.len()];
    (0..b)
        .map(|i| {
            for (c, t) in column.iter_mut().zip(treatments) {
                *c = t[i];
            }
            column.sort_by(|x, y| y.total_cmp(x));
            column[r - 1]
        })
        .collect()
}

/// Indices of the treatment arms with the largest true `theta`.
pub fn true_best_arms(scenario: &ScenarioSpec, constants: &TransformConstants) -> Vec<usize> {
    let thetas: Vec<f64> = scenario.arms[1..].iter().map(|a| crate::posterior::theta_of(a, constants)).collect();
    let best = thetas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    thetas.iter().enumerate().filter(|(_, &t)| t >= best - 1e-12).map(|(i, _)| i + 1).collect()
}

fn next_allocation(
    config: &TrialConfig,
    thetas: &[Vec<f64>],
    sorted_control: &[f64],
    per_arm_n: &[usize],
    log: &mut Vec<Vec<bool>>,
) -> Result<AllocationResult> {
    let k = thetas.len() - 1;
    let cmp = &config.comparator;
    let t = per_arm_n.iter().sum::<usize>() as f64 / config.total_n as f64;
    let adaptive = |log: &mut Vec<Vec<bool>>| -> Result<_> {
        let p = prob_best_thetas(&thetas[1..])?;
        let s = apply_suspension(&p, cmp.suspension_threshold);
        let suspended = s.suspended();
        log.push(suspended.clone());
        Ok((s.scaled, suspended))
    };
    match config.rule {
        RuleName::Rule1 => adaptive(log).map(|(p, s)| rule1(&p, &s)),
        RuleName::Rule2 => adaptive(log).map(|(p, s)| rule2(&p, &s, cmp.rule2_cap)),
        RuleName::Rule3 => adaptive(log).map(|(p, s)| rule3(&p, &s)),
        RuleName::Fr => Ok(fixed_randomization(k)),
        RuleName::Ts => thompson(&prob_best_thetas(thetas)?, ComparatorConfig::thompson_exponent(t)),
        RuleName::Tp => {
            let sup: Vec<f64> = thetas[1..].iter().map(|t| superiority_from_thetas(t, sorted_control, 0.0)).collect();
            trippa(&sup, per_arm_n, t, cmp)
        }
    }
}

/// Run one replicate of the staged design.
///
/// Every random draw comes from a stream keyed by
/// `(seed, replicate, stage, arm, purpose)`.
pub fn run_trial(
    config: &TrialConfig,
    schedule: &SpendingSchedule,
    constants: &TransformConstants,
    seed: u64,
    replicate: u64,
) -> Result<TrialResult> {
    config.validate()?;
    if schedule.num_stages() != config.num_stages {
        return Err(Error::ScheduleMismatch { schedule: schedule.num_stages(), trial: config.num_stages });
    }
    let arms = &config.scenario.arms;
    let k = arms.len() - 1;
    let key = StreamKey::new(seed, replicate, 0, 0, Purpose::Enroll);
    let n_j = config.stage_size();

    let mut data = vec![ArmData::default(); k + 1];
    let mut per_arm_n = vec![0usize; k + 1];
    let mut alloc = fixed_randomization(k);
    let mut suspension_log = Vec::new();
    let mut allocation_log = Vec::new();
    let mut pps_trajectory = Vec::new();
    let mut thetas: Vec<Vec<f64>> = Vec::new();
    let mut stopped_early = false;
    let mut rejected = false;
    let mut stop_stage = config.num_stages;

    for stage in 1..=config.num_stages {
        let stage_key = key.with_stage(stage as u32);
        let counts = if stage == 1 && config.first_stage == FirstStage::Exact {
            equal_split(k + 1, n_j)
        } else {
            assign_stage(&alloc, n_j, &mut stage_key.with_purpose(Purpose::Allocate).stream())
        };
        allocation_log.push(alloc.probs.clone());
        for (arm, &n) in counts.iter().enumerate() {
            let mut rng = stage_key.with_arm(arm as u32).with_purpose(Purpose::Enroll).stream();
            for _ in 0..n {
                data[arm].push(&simulate_patient(&arms[arm], constants, &mut rng), constants);
            }
            per_arm_n[arm] += n;
        }

        thetas = data
            .iter()
            .enumerate()
            .map(|(arm, d)| {
                let mut rng = stage_key.with_arm(arm as u32).with_purpose(Purpose::Fit).stream();
                gibbs_fit_data(d, &config.mcmc, constants, &mut rng).thetas(constants)
            })
            .collect();
        let mut sorted_control = thetas[0].clone();
        sorted_control.sort_by(f64::total_cmp);
        let pps = superiority_from_thetas(&order_statistic(&thetas[1..], 1), &sorted_control, config.delta);
        pps_trajectory.push(pps);

        let critical = schedule.critical(stage);
        if stage < config.num_stages {
            if check_early_stop(pps, critical) {
                stopped_early = true;
                rejected = true;
                stop_stage = stage;
                break;
            }
            alloc = next_allocation(config, &thetas, &sorted_control, &per_arm_n, &mut suspension_log)?;
        } else {
            rejected = pps > critical;
        }
    }

    let control = &thetas[0];
    let treatments = &thetas[1..];
    let theta_hats: Vec<f64> = thetas.iter().map(|t| mean(t)).collect();
    let xi_hats = theta_hats[1..].iter().map(|t| t - theta_hats[0]).collect();
    let best = true_best_arms(&config.scenario, constants);
    let total: usize = per_arm_n.iter().sum();
    let on_best: usize = best.iter().map(|&i| per_arm_n[i]).sum();
    Ok(TrialResult {
        stopped_early,
        stop_stage,
        rejected,
        per_arm_n,
        best_arm_proportion: on_best as f64 / total as f64,
        pps_ha1: final_pps(treatments, control, config.delta, 1)?,
        pps_ha2: final_pps(treatments, control, config.delta, config.hypothesis_r)?,
        pps_ha3: final_pps(treatments, control, config.delta, k)?,
        pps_trajectory,
        theta_hats,
        xi_hats,
        suspension_log,
        allocation_log,
    })
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

impl MeanSd {
    pub fn of(xs: impl IntoIterator<Item = f64>) -> Self {
        let xs: Vec<f64> = xs.into_iter().collect();
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
        Self { mean: m, sd: if xs.len() > 1 { (ss / (n - 1.0)).sqrt() } else { 0.0 } }
    }
}

impl fmt::Display for MeanSd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.3} ({:.3})", self.mean, self.sd)
    }
}

/// Operating characteristics over many replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationSummary {
    pub replicates: usize,
    pub pps_ha1: MeanSd,
    pub pps_ha2: MeanSd,
    pub pps_ha3: MeanSd,
    pub best_arm_proportion: MeanSd,
    pub sample_size: MeanSd,
    pub rejection_rate: f64,
    pub early_stop_rate: f64,
    pub mean_per_arm_n: Vec<f64>,
}

impl ReplicationSummary {
    pub fn from_results(results: &[TrialResult]) -> Self {
        let n = results.len();
        let arms = results.first().map_or(0, |r| r.per_arm_n.len());
        let frac = |f: fn(&TrialResult) -> bool| results.iter().filter(|r| f(r)).count() as f64 / n as f64;
        Self {
            replicates: n,
            pps_ha1: MeanSd::of(results.iter().map(|r| r.pps_ha1)),
            pps_ha2: MeanSd::of(results.iter().map(|r| r.pps_ha2)),
            pps_ha3: MeanSd::of(results.iter().map(|r| r.pps_ha3)),
            best_arm_proportion: MeanSd::of(results.iter().map(|r| r.best_arm_proportion)),
            sample_size: MeanSd::of(results.iter().map(|r| r.total_n() as f64)),
            rejection_rate: frac(|r| r.rejected),
            early_stop_rate: frac(|r| r.stopped_early),
            mean_per_arm_n: (0..arms)
                .map(|a| results.iter().map(|r| r.per_arm_n[a] as f64).sum::<f64>() / n as f64)
                .collect(),
        }
    }
}

/// Run `replicates` independent trials on the current rayon pool.
///
/// Results come back in replicate order and do not depend on the pool size.
pub fn replicate(
    config: &TrialConfig,
    schedule: &SpendingSchedule,
    constants: &TransformConstants,
    replicates: usize,
    seed: u64,
) -> Result<(Vec<TrialResult>, ReplicationSummary)> {
    if replicates == 0 {
        return Err(Error::InvalidArgument("at least one replicate is required".into()));
    }
    config.validate()?;
    let results = (0..replicates as u64)
        .into_par_iter()
        .map(|m| run_trial(config, schedule, constants, seed, m))
        .collect::<Result<Vec<_>>>()?;
    let summary = ReplicationSummary::from_results(&results);
    Ok((results, summary))
}

/// Run `f` inside a dedicated rayon pool with `workers` threads.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if workers == 0 {
        return Err(Error::InvalidArgument("workers must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}
