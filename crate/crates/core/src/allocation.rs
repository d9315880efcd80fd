//! Per-stage allocation probabilities: Rules I-III, fixed randomization,
//! Thompson sampling, the Trippa procedure, and arm suspension.
//!
//! Treatment vectors are indexed `0..K` for arms `1..=K`; allocation results
//! are indexed `0..=K` with the control at index 0.

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationResult {
    /// Probabilities over arms `0..=K`; index 0 is the control.
    pub probs: Vec<f64>,
    /// Suspension flags over treatment arms `1..=K`.
    pub suspended: Vec<bool>,
}

impl AllocationResult {
    pub fn num_treatments(&self) -> usize {
        self.probs.len() - 1
    }
}

/// Tuning constants for the comparators and the proposed rules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ComparatorConfig {
    pub trippa_gamma_scale: f64,
    pub trippa_gamma_power: f64,
    pub trippa_eta_scale: f64,
    pub rule2_cap: f64,
    pub suspension_threshold: f64,
}

impl Default for ComparatorConfig {
    fn default() -> Self {
        Self {
            trippa_gamma_scale: 10.0,
            trippa_gamma_power: 0.75,
            trippa_eta_scale: 0.25,
            rule2_cap: 0.8,
            suspension_threshold: 0.05,
        }
    }
}

impl ComparatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rule2_cap > 0.0 && self.rule2_cap <= 1.0) {
            return Err(Error::InvalidArgument(format!("rule II cap must lie in (0, 1], got {}", self.rule2_cap)));
        }
        if !(0.0..1.0).contains(&self.suspension_threshold) {
            return Err(Error::InvalidArgument(format!(
                "suspension threshold must lie in [0, 1), got {}",
                self.suspension_threshold
            )));
        }
        Ok(())
    }

    /// Thompson exponent `c = n_{j+} / (2N)` from the information fraction.
    pub fn thompson_exponent(t: f64) -> f64 {
        t / 2.0
    }

    pub fn trippa_gamma(&self, t: f64) -> f64 {
        self.trippa_gamma_scale * t.powf(self.trippa_gamma_power)
    }

    pub fn trippa_eta(&self, t: f64) -> f64 {
        self.trippa_eta_scale * t
    }
}

/// Outcome of the suspension screen.
#[derive(Debug, Clone, PartialEq)]
pub struct Suspension {
    /// Per treatment arm: `true` when active this stage.
    pub active: Vec<bool>,
    /// Best-arm probabilities rescaled over active arms; suspended entries are 0.
    pub scaled: Vec<f64>,
}

impl Suspension {
    pub fn suspended(&self) -> Vec<bool> {
        self.active.iter().map(|a| !a).collect()
    }
}

/// Suspend treatment arms whose best-arm probability is below `threshold`.
///
/// Suspension lasts for one stage only. If every arm would be suspended,
/// none is.
pub fn apply_suspension(p_best: &[f64], threshold: f64) -> Suspension {
    let mut active: Vec<bool> = p_best.iter().map(|&p| p >= threshold).collect();
    if !active.iter().any(|&a| a) {
        active.iter_mut().for_each(|a| *a = true);
    }
    let total: f64 = p_best.iter().zip(&active).filter(|(_, &a)| a).map(|(p, _)| p).sum();
    let scaled = p_best
        .iter()
        .zip(&active)
        .map(|(&p, &a)| {
            if !a {
                0.0
            } else if total > 0.0 {
                p / total
            } else {
                0.0
            }
        })
        .collect();
    Suspension { active, scaled }
}

fn normalized(v: &[f64]) -> Vec<f64> {
    let total: f64 = v.iter().sum();
    v.iter().map(|x| x / total).collect()
}

/// Spread `mass` over the flagged arms proportionally to `weights`, or equally
/// when all their weights are zero.
fn spread(mass: f64, weights: &[f64], eligible: &[bool]) -> Vec<f64> {
    let total: f64 = weights.iter().zip(eligible).filter(|(_, &e)| e).map(|(w, _)| w).sum();
    let count = eligible.iter().filter(|&&e| e).count();
    weights
        .iter()
        .zip(eligible)
        .map(|(&w, &e)| match (e, total > 0.0) {
            (false, _) => 0.0,
            (true, true) => mass * w / total,
            (true, false) => mass / count as f64,
        })
        .collect()
}

/// Rule I: control fixed at `1/(K+1)` of the design's K; the rest in
/// proportion to the scaled best-arm probabilities.
pub fn rule1(p_scaled: &[f64], suspended: &[bool]) -> AllocationResult {
    let k = p_scaled.len();
    let control = 1.0 / (k as f64 + 1.0);
    let active: Vec<bool> = suspended.iter().map(|s| !s).collect();
    let mut probs = vec![control];
    probs.extend(spread(1.0 - control, p_scaled, &active));
    AllocationResult { probs, suspended: suspended.to_vec() }
}

/// Index of the largest entry among active arms; ties go to the lowest index.
fn best_index(p: &[f64], suspended: &[bool]) -> usize {
    let mut best = None::<usize>;
    for (i, &v) in p.iter().enumerate() {
        if suspended[i] {
            continue;
        }
        match best {
            Some(b) if p[b] >= v => {}
            _ => best = Some(i),
        }
    }
    best.unwrap_or(0)
}

/// Rule II: the best arm first (capped), then `1/K` of the remainder to the
/// control, then the other active arms in proportion to their probabilities.
pub fn rule2(p_scaled: &[f64], suspended: &[bool], cap: f64) -> AllocationResult {
    let k = p_scaled.len();
    let best = best_index(p_scaled, suspended);
    let best_share = p_scaled[best].min(cap);
    let remainder = 1.0 - best_share;
    let mut control = remainder / k as f64;
    let others: Vec<bool> = (0..k).map(|i| i != best && !suspended[i]).collect();
    let mut treat = if others.iter().any(|&o| o) {
        spread(remainder - control, p_scaled, &others)
    } else {
        // Nobody else to receive the residual; it stays with the control.
        control = remainder;
        vec![0.0; k]
    };
    treat[best] = best_share;
    let mut probs = vec![control];
    probs.extend(treat);
    AllocationResult { probs, suspended: suspended.to_vec() }
}

/// Rule III: the control mirrors the best arm's weight, then everything is rescaled.
pub fn rule3(p_scaled: &[f64], suspended: &[bool]) -> AllocationResult {
    let best = p_scaled.iter().zip(suspended).filter(|(_, &s)| !s).map(|(&p, _)| p).fold(0.0, f64::max);
    let mut raw = vec![best];
    raw.extend(p_scaled.iter().zip(suspended).map(|(&p, &s)| if s { 0.0 } else { p }));
    AllocationResult { probs: normalized(&raw), suspended: suspended.to_vec() }
}

pub fn fixed_randomization(k_total: usize) -> AllocationResult {
    AllocationResult { probs: vec![1.0 / (k_total as f64 + 1.0); k_total + 1], suspended: vec![false; k_total] }
}

/// Thompson sampling: `p_k^c / sum_h p_h^c` over arms `0..=K`, where `p` is the
/// best-arm probability with the control included in the comparison.
pub fn thompson(p_best_incl_control: &[f64], c: f64) -> Result<AllocationResult> {
    let powered: Vec<f64> = p_best_incl_control.iter().map(|&p| if p > 0.0 { p.powf(c) } else { 0.0 }).collect();
    if powered.iter().sum::<f64>() <= 0.0 {
        return Err(Error::InvalidArgument("thompson weights are all zero".into()));
    }
    Ok(AllocationResult { probs: normalized(&powered), suspended: vec![false; p_best_incl_control.len() - 1] })
}

/// Trippa et al.: treatment weights `P(theta_k > theta_0)^gamma` normalized
/// over treatments, control weight `(1/K) exp(eta (max_k n_k - n_0))`.
///
/// `arm_counts` covers arms `0..=K`; `t` is the information fraction.
pub fn trippa(
    superiority_probs: &[f64],
    arm_counts: &[usize],
    t: f64,
    config: &ComparatorConfig,
) -> Result<AllocationResult> {
    let k = superiority_probs.len();
    if arm_counts.len() != k + 1 {
        return Err(Error::InvalidArgument(format!("trippa needs {} arm counts, got {}", k + 1, arm_counts.len())));
    }
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::InvalidArgument(format!("information fraction must lie in (0, 1], got {t}")));
    }
    let gamma = config.trippa_gamma(t);
    let eta = config.trippa_eta(t);
    let w: Vec<f64> = superiority_probs.iter().map(|&p| p.powf(gamma)).collect();
    let all = vec![true; k];
    let treat = spread(1.0, &w, &all);
    let lead = arm_counts[1..].iter().copied().max().unwrap_or(0) as f64 - arm_counts[0] as f64;
    let control = (eta * lead).exp() / k as f64;
    let mut raw = vec![control];
    raw.extend(treat);
    Ok(AllocationResult { probs: normalized(&raw), suspended: vec![false; k] })
}

/// Multinomial assignment of one stage's patients.
pub fn assign_stage<R: Rng + ?Sized>(alloc: &AllocationResult, stage_size: usize, rng: &mut R) -> Vec<usize> {
    let mut counts = vec![0; alloc.probs.len()];
    let mut left = stage_size as u64;
    let mut mass = 1.0;
    for (i, &p) in alloc.probs.iter().enumerate() {
        if left == 0 {
            break;
        }
        let last = alloc.probs[i + 1..].iter().all(|&q| q == 0.0);
        let n = if last {
            left
        } else if p <= 0.0 {
            0
        } else {
            let q = (p / mass).clamp(0.0, 1.0);
            Binomial::new(left, q).expect("valid binomial").sample(rng)
        };
        counts[i] = n as usize;
        left -= n;
        mass -= p;
    }
    counts
}

/// Equal split of a stage, remainder to the lowest indices.
pub fn equal_split(num_arms: usize, stage_size: usize) -> Vec<usize> {
    (0..num_arms).map(|i| stage_size / num_arms + usize::from(i < stage_size % num_arms)).collect()
}
