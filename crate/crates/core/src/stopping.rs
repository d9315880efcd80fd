//! Alpha-spending functions, simulation-calibrated critical values, and the
//! interim efficacy test.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erfc, erfc_inv};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::allocation::equal_split;
use crate::error::{Error, Result};
use crate::outcome::{simulate_patient, ArmModel, TransformConstants};
use crate::posterior::{gibbs_fit_data, superiority_from_thetas, ArmData, McmcConfig};
use crate::rng::{Purpose, StreamKey};

pub fn alpha_pocock(t: f64, alpha: f64) -> f64 {
    alpha * (1.0 + (std::f64::consts::E - 1.0) * t).ln()
}

pub fn alpha_obf(t: f64, alpha: f64) -> f64 {
    // z_{alpha/2} = Phi^{-1}(1 - alpha/2) = sqrt(2) erfc^{-1}(alpha)
    let z = std::f64::consts::SQRT_2 * erfc_inv_refined(alpha);
    // 2 - 2 Phi(x) = erfc(x / sqrt 2)
    erfc(z / (t.sqrt() * std::f64::consts::SQRT_2))
}

/// `erfc^{-1}` polished with Newton steps so that `erfc(x) = p` to rounding.
fn erfc_inv_refined(p: f64) -> f64 {
    let mut x = erfc_inv(p);
    for _ in 0..3 {
        let slope = -std::f64::consts::FRAC_2_SQRT_PI * (-x * x).exp();
        x -= (erfc(x) - p) / slope;
    }
    x
}

pub fn alpha_power(t: f64, alpha: f64, gamma: f64) -> f64 {
    t.powf(gamma) * alpha
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase")]
pub enum SpendingFunction {
    Pocock,
    Obf,
    Power { gamma: f64 },
}

impl SpendingFunction {
    /// Cumulative spend `alpha(t)`.
    pub fn spend(&self, t: f64, alpha: f64) -> f64 {
        match *self {
            Self::Pocock => alpha_pocock(t, alpha),
            Self::Obf => alpha_obf(t, alpha),
            Self::Power { gamma } => alpha_power(t, alpha, gamma),
        }
    }
}

impl fmt::Display for SpendingFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Pocock => f.write_str("pocock"),
            Self::Obf => f.write_str("obf"),
            Self::Power { gamma } => write!(f, "power({gamma})"),
        }
    }
}

impl FromStr for SpendingFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pocock" => Ok(Self::Pocock),
            "obf" => Ok(Self::Obf),
            _ => s
                .strip_prefix("power(")
                .and_then(|r| r.strip_suffix(')'))
                .and_then(|g| g.parse::<f64>().ok())
                .filter(|g| *g > 0.0)
                .map(|gamma| Self::Power { gamma })
                .ok_or_else(|| Error::InvalidArgument(format!("unknown spending function `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryEntry {
    /// Interim index, 1-based.
    pub stage: usize,
    /// Information fraction `j / J`.
    pub t: f64,
    pub alpha_t: f64,
    pub delta_alpha: f64,
    /// Critical value `c_j`.
    pub critical: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpendingSchedule {
    pub spending: SpendingFunction,
    pub alpha: f64,
    pub entries: Vec<BoundaryEntry>,
}

const BOUNDARY_MAGIC: &str = "# brar boundaries v1";
const BOUNDARY_HEADER: &str = "j,t,alpha_t,delta_alpha,c";

impl SpendingSchedule {
    /// Spend profile over `J` equally spaced interims with the given critical values.
    pub fn new(spending: SpendingFunction, alpha: f64, critical: &[f64]) -> Self {
        let num_stages = critical.len();
        let mut prev = 0.0;
        let entries = critical
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let stage = i + 1;
                let t = stage as f64 / num_stages as f64;
                let alpha_t = spending.spend(t, alpha);
                let e = BoundaryEntry { stage, t, alpha_t, delta_alpha: alpha_t - prev, critical: c };
                prev = alpha_t;
                e
            })
            .collect();
        Self { spending, alpha, entries }
    }

    /// A schedule with the same critical value at every interim.
    pub fn constant(num_stages: usize, critical: f64) -> Self {
        Self::new(SpendingFunction::Power { gamma: 1.0 }, 0.025, &vec![critical; num_stages])
    }

    pub fn num_stages(&self) -> usize {
        self.entries.len()
    }

    /// Critical value at interim `stage` (1-based).
    pub fn critical(&self, stage: usize) -> f64 {
        self.entries[stage - 1].critical
    }

    pub fn critical_values(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.critical).collect()
    }

    /// Versioned CSV boundary file; floats use shortest round-trip formatting.
    pub fn to_boundary_file(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{BOUNDARY_MAGIC}");
        let _ = writeln!(
            out,
            "# brar_version={} spending={} alpha={} stages={}",
            crate::VERSION,
            self.spending,
            self.alpha,
            self.num_stages()
        );
        let _ = writeln!(out, "{BOUNDARY_HEADER}");
        for e in &self.entries {
            let _ = writeln!(out, "{},{},{},{},{}", e.stage, e.t, e.alpha_t, e.delta_alpha, e.critical);
        }
        out
    }

    pub fn parse_boundary_file(text: &str) -> Result<Self> {
        let bad = |m: String| Error::BoundaryFormat(m);
        let mut lines = text.lines();
        if lines.next() != Some(BOUNDARY_MAGIC) {
            return Err(bad(format!("missing `{BOUNDARY_MAGIC}` header")));
        }
        let meta =
            lines.next().and_then(|l| l.strip_prefix("# ")).ok_or_else(|| bad("missing metadata line".into()))?;
        let mut spending = None;
        let mut alpha = None;
        let mut stages = None;
        for kv in meta.split_whitespace() {
            match kv.split_once('=') {
                Some(("spending", v)) => spending = Some(v.parse::<SpendingFunction>()?),
                Some(("alpha", v)) => alpha = v.parse::<f64>().ok(),
                Some(("stages", v)) => stages = v.parse::<usize>().ok(),
                _ => {}
            }
        }
        let (spending, alpha, stages) = match (spending, alpha, stages) {
            (Some(s), Some(a), Some(j)) => (s, a, j),
            _ => return Err(bad(format!("incomplete metadata `{meta}`"))),
        };
        if lines.next() != Some(BOUNDARY_HEADER) {
            return Err(bad("missing column header".into()));
        }
        let mut entries = Vec::with_capacity(stages);
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(bad(format!("row `{line}` does not have 5 fields")));
            }
            let num = |s: &str| s.trim().parse::<f64>().map_err(|e| bad(format!("row `{line}`: {e}")));
            let stage = f[0].trim().parse::<usize>().map_err(|e| bad(format!("row `{line}`: {e}")))?;
            if stage != entries.len() + 1 {
                return Err(bad(format!("row `{line}` is out of order")));
            }
            let critical = num(f[4])?;
            if !(0.0..=1.0).contains(&critical) {
                return Err(bad(format!("critical value {critical} outside [0, 1]")));
            }
            entries.push(BoundaryEntry {
                stage,
                t: num(f[1])?,
                alpha_t: num(f[2])?,
                delta_alpha: num(f[3])?,
                critical,
            });
        }
        if entries.len() != stages {
            return Err(bad(format!("expected {stages} rows, found {}", entries.len())));
        }
        Ok(Self { spending, alpha, entries })
    }
}

/// Settings for the null-trial calibration of critical values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub n_rep: usize,
    pub stage_size: usize,
    pub num_stages: usize,
    pub alpha: f64,
    pub spending: SpendingFunction,
    pub delta: f64,
    pub null_arm: ArmModel,
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_rep < 100 {
            return Err(Error::InvalidArgument(format!("n_rep must be at least 100, got {}", self.n_rep)));
        }
        if !(self.alpha > 0.0 && self.alpha < 0.5) {
            return Err(Error::InvalidArgument(format!("alpha must lie in (0, 0.5), got {}", self.alpha)));
        }
        if self.num_stages == 0 || self.stage_size < 2 {
            return Err(Error::InvalidArgument("calibration needs J >= 1 and stage_size >= 2".into()));
        }
        if let SpendingFunction::Power { gamma } = self.spending {
            if gamma <= 0.0 {
                return Err(Error::InvalidArgument(format!("power gamma must be positive, got {gamma}")));
            }
        }
        self.null_arm.validate()
    }
}

/// Interim superiority statistics `P(theta_1 - theta_0 > delta | data through stage j)`
/// for one two-arm null trial.
pub fn null_trial_statistics(
    config: &CalibrationConfig,
    mcmc: &McmcConfig,
    constants: &TransformConstants,
    key: StreamKey,
) -> Vec<f64> {
    let split = equal_split(2, config.stage_size);
    let mut data = [ArmData::default(); 2];
    let mut stats = Vec::with_capacity(config.num_stages);
    for stage in 1..=config.num_stages as u32 {
        for (arm, &n) in split.iter().enumerate() {
            let mut rng = key.with_stage(stage).with_arm(arm as u32).with_purpose(Purpose::Enroll).stream();
            for _ in 0..n {
                data[arm].push(&simulate_patient(&config.null_arm, constants, &mut rng), constants);
            }
        }
        let thetas: Vec<Vec<f64>> = (0..2)
            .map(|arm| {
                let mut rng = key.with_stage(stage).with_arm(arm as u32).with_purpose(Purpose::Fit).stream();
                gibbs_fit_data(&data[arm], mcmc, constants, &mut rng).thetas(constants)
            })
            .collect();
        let mut control = thetas[0].clone();
        control.sort_by(f64::total_cmp);
        stats.push(superiority_from_thetas(&thetas[1], &control, config.delta));
    }
    stats
}

/// Inverse-CDF (type 1) empirical quantile: the `ceil(level * n)`-th order statistic.
pub fn empirical_quantile(values: &[f64], level: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    // Guard against `level * n` landing a rounding error above an integer.
    let rank = ((level * n as f64) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
    sorted[rank - 1]
}

/// Critical values from a matrix of null statistics (`rows[m][j]`).
///
/// `c_1` is the `1 - alpha(t_1)` quantile of the first column; for later
/// interims only rows whose previous statistic did not exceed the previous
/// boundary are kept, and `c_j` is their `1 - delta_alpha(t_j)` quantile.
pub fn critical_values_from_matrix(
    rows: &[Vec<f64>],
    spending: SpendingFunction,
    alpha: f64,
) -> Result<SpendingSchedule> {
    let num_stages = rows.first().map_or(0, Vec::len);
    let mut schedule = SpendingSchedule::new(spending, alpha, &vec![0.0; num_stages]);
    let mut surviving: Vec<&Vec<f64>> = rows.iter().collect();
    for j in 0..num_stages {
        if j > 0 {
            let prev = schedule.entries[j - 1].critical;
            surviving.retain(|r| r[j - 1] <= prev);
        }
        if surviving.is_empty() {
            return Err(Error::Calibration { stage: j + 1, reason: "no surviving replicates; increase n_rep".into() });
        }
        let column: Vec<f64> = surviving.iter().map(|r| r[j]).collect();
        let level = 1.0 - schedule.entries[j].delta_alpha;
        schedule.entries[j].critical = empirical_quantile(&column, level);
    }
    Ok(schedule)
}

/// Calibrate critical values by simulating `n_rep` two-arm null trials.
///
/// Replicate `m` draws from streams keyed by `(seed, m, stage, arm)`, so the
/// result is identical for any number of rayon workers.
pub fn calibrate_boundaries(
    config: &CalibrationConfig,
    mcmc: &McmcConfig,
    constants: &TransformConstants,
    seed: u64,
) -> Result<SpendingSchedule> {
    config.validate()?;
    mcmc.validate()?;
    let rows = calibration_matrix(config, mcmc, constants, seed);
    critical_values_from_matrix(&rows, config.spending, config.alpha)
}

/// The `n_rep x J` matrix of null interim statistics.
pub fn calibration_matrix(
    config: &CalibrationConfig,
    mcmc: &McmcConfig,
    constants: &TransformConstants,
    seed: u64,
) -> Vec<Vec<f64>> {
    let base = StreamKey::root(seed, Purpose::Calibrate);
    (0..config.n_rep as u64)
        .into_par_iter()
        .map(|m| null_trial_statistics(config, mcmc, constants, base.with_replicate(m)))
        .collect()
}

/// Stop for efficacy when the interim PPS strictly exceeds the boundary.
pub fn check_early_stop(best_vs_control_pps: f64, critical: f64) -> bool {
    best_vs_control_pps > critical
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn spending_endpoints() {
        for a in [0.01, 0.025, 0.05] {
            assert!((alpha_pocock(1.0, a) - a).abs() < 1e-12);
            assert!((alpha_obf(1.0, a) - a).abs() < 1e-12);
            assert!((alpha_power(1.0, a, 1.0) - a).abs() < 1e-12);
            assert!((alpha_power(1.0, a, 3.0) - a).abs() < 1e-12);
        }
    }

    #[test]
    fn spending_examples() {
        assert_relative_eq!(alpha_pocock(0.1, 0.025), 0.025 * 1.171828f64.ln(), max_relative = 1e-6);
        assert_relative_eq!(alpha_pocock(0.1, 0.025), 0.0039643, max_relative = 1e-4);
        // 2 P(Z > 2.241403 / 0.5) from the normal tail
        let tail = 2.0 * crate::tn::std_sf(2.241403 / 0.5);
        assert_relative_eq!(alpha_obf(0.25, 0.025), tail, max_relative = 1e-5);
        assert!((alpha_obf(0.25, 0.025) - 7.4e-6).abs() / 7.4e-6 < 0.05);
        assert!(alpha_obf(0.1, 0.025) < alpha_obf(0.5, 0.025));
        assert!(alpha_obf(0.5, 0.025) < alpha_obf(1.0, 0.025));
        assert_relative_eq!(alpha_power(0.5, 0.025, 1.0), 0.0125);
        assert_relative_eq!(alpha_power(0.5, 0.025, 2.0), 0.00625);
    }

    #[test]
    fn spending_is_monotone() {
        for f in [SpendingFunction::Pocock, SpendingFunction::Obf, SpendingFunction::Power { gamma: 1.0 }] {
            let vals: Vec<f64> = (1..=100).map(|i| f.spend(i as f64 / 100.0, 0.025)).collect();
            assert!(vals.windows(2).all(|w| w[1] > w[0]), "{f}");
        }
    }

    #[test]
    fn schedule_increments_sum_to_alpha() {
        for f in [SpendingFunction::Pocock, SpendingFunction::Obf, SpendingFunction::Power { gamma: 1.0 }] {
            let s = SpendingSchedule::new(f, 0.025, &[0.5; 10]);
            let total: f64 = s.entries.iter().map(|e| e.delta_alpha).sum();
            assert!((total - 0.025).abs() < 1e-12);
            assert!((s.entries[9].alpha_t - 0.025).abs() < 1e-12);
            assert!(s.entries.iter().all(|e| e.delta_alpha >= 0.0));
        }
        let s = SpendingSchedule::new(SpendingFunction::Power { gamma: 1.0 }, 0.025, &[0.5; 10]);
        for e in &s.entries {
            assert_relative_eq!(e.delta_alpha, 0.0025, epsilon = 1e-15);
        }
    }

    #[test]
    fn boundary_file_roundtrip() {
        let s = SpendingSchedule::new(SpendingFunction::Obf, 0.025, &[0.99, 0.98, 0.97, 0.1 + 0.2]);
        let text = s.to_boundary_file();
        assert!(text.starts_with(BOUNDARY_MAGIC));
        assert_eq!(SpendingSchedule::parse_boundary_file(&text).unwrap(), s);
        let p = SpendingSchedule::new(SpendingFunction::Power { gamma: 2.5 }, 0.05, &[0.5; 3]);
        assert_eq!(SpendingSchedule::parse_boundary_file(&p.to_boundary_file()).unwrap(), p);
        assert!(SpendingSchedule::parse_boundary_file("j,t\n").is_err());
        let truncated: String = text.lines().take(5).map(|l| format!("{l}\n")).collect();
        assert!(SpendingSchedule::parse_boundary_file(&truncated).is_err());
    }

    #[test]
    fn quantile_convention() {
        let v: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(empirical_quantile(&v, 0.9), 9.0);
        assert_eq!(empirical_quantile(&v, 0.91), 10.0);
        assert_eq!(empirical_quantile(&v, 0.0), 1.0);
        assert_eq!(empirical_quantile(&v, 1.0), 10.0);
        let w: Vec<f64> = (0..2000).map(f64::from).collect();
        assert_eq!(empirical_quantile(&w, 0.9975), 1994.0);
    }

    #[test]
    fn matrix_calibration_follows_survivors() {
        // rows: stage-1 statistic i/10, stage-2 statistic 1 - i/10
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64 / 10.0, 1.0 - i as f64 / 10.0]).collect();
        let s = critical_values_from_matrix(&rows, SpendingFunction::Power { gamma: 1.0 }, 0.4).unwrap();
        // level 1 - 0.2 = 0.8 -> 8th order statistic of stage 1
        assert_relative_eq!(s.critical(1), 0.7);
        // survivors are rows 0..=7, stage-2 values 1.0..0.3; level 0.8 -> ceil(6.4) = 7th
        assert_relative_eq!(s.critical(2), 0.9);
        let all_high = vec![vec![1.0, 1.0]; 10];
        let s = critical_values_from_matrix(&all_high, SpendingFunction::Obf, 0.025).unwrap();
        assert_eq!(s.critical_values(), vec![1.0, 1.0]);
        assert!(matches!(
            critical_values_from_matrix(&[], SpendingFunction::Obf, 0.025),
            Ok(ref s) if s.num_stages() == 0
        ));
    }

    #[test]
    fn early_stop_is_strict() {
        assert!(check_early_stop(0.99, 0.95));
        assert!(!check_early_stop(0.95, 0.95));
        assert!(!check_early_stop(0.0, 0.0));
    }

    #[test]
    fn spending_labels_roundtrip() {
        for f in [SpendingFunction::Pocock, SpendingFunction::Obf, SpendingFunction::Power { gamma: 1.5 }] {
            assert_eq!(f.to_string().parse::<SpendingFunction>().unwrap(), f);
        }
        assert!("power(-1)".parse::<SpendingFunction>().is_err());
        assert!("linear".parse::<SpendingFunction>().is_err());
    }
}
