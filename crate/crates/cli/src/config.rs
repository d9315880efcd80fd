//! TOML run configuration.

use serde::Deserialize;
use std::path::PathBuf;

use brar_core::allocation::ComparatorConfig;
use brar_core::asymptotics::VerificationConfig;
use brar_core::outcome::{build_scenario, control_arm};
use brar_core::stopping::CalibrationConfig;
use brar_core::trial::FirstStage;
use brar_core::{ArmModel, McmcConfig, RuleName, ScenarioName, ScenarioSpec, SpendingFunction, TrialConfig};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: Option<ScenarioSection>,
    pub trial: Option<TrialSection>,
    pub rule: Option<RuleSection>,
    #[serde(default)]
    pub mcmc: McmcConfig,
    pub spending: Option<SpendingSection>,
    #[serde(default)]
    pub replication: ReplicationSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub asymptotics: AsymptoticsSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub name: ScenarioName,
    /// Censoring level for the named scenarios (0.2 or 0.3).
    #[serde(default = "default_omega")]
    pub omega: f64,
    /// Explicit arms for `name = "custom"`, control first.
    pub arms: Option<Vec<ArmModel>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialSection {
    #[serde(default = "default_total_n")]
    pub total_n: usize,
    #[serde(default = "default_num_stages")]
    pub num_stages: usize,
    pub delta: f64,
    #[serde(default = "default_r")]
    pub hypothesis_r: usize,
    #[serde(default)]
    pub first_stage: FirstStage,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleSection {
    pub name: RuleName,
    pub rule2_cap: Option<f64>,
    pub suspension_threshold: Option<f64>,
    pub trippa_gamma_scale: Option<f64>,
    pub trippa_gamma_power: Option<f64>,
    pub trippa_eta_scale: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpendingName {
    Pocock,
    Obf,
    Power,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpendingSection {
    pub name: SpendingName,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Existing boundary file; takes precedence over `calibration`.
    pub boundary_file: Option<PathBuf>,
    pub calibration: Option<CalibrationSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationSection {
    #[serde(default = "default_n_rep")]
    pub n_rep: usize,
    /// Patients per stage in the two-arm null trials; defaults to `total_n / num_stages`.
    pub stage_size: Option<usize>,
    /// Margin used by the null statistic; defaults to `trial.delta`.
    pub delta: Option<f64>,
    pub null_arm: ArmModel,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplicationSection {
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

impl Default for ReplicationSection {
    fn default() -> Self {
        Self { replicates: default_replicates(), seed: default_seed() }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_directory")]
    pub directory: PathBuf,
    #[serde(default = "default_run_id")]
    pub run_id: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { directory: default_directory(), run_id: default_run_id() }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AsymptoticsSection {
    /// Arm under test; defaults to the control profile at omega = 0.3.
    pub arm: Option<ArmModel>,
    #[serde(default)]
    pub verification: VerificationConfig,
}

fn default_omega() -> f64 {
    0.3
}
fn default_total_n() -> usize {
    2000
}
fn default_num_stages() -> usize {
    10
}
fn default_r() -> usize {
    2
}
fn default_gamma() -> f64 {
    1.0
}
fn default_alpha() -> f64 {
    0.025
}
fn default_n_rep() -> usize {
    10_000
}
fn default_replicates() -> usize {
    100
}
fn default_seed() -> u64 {
    1
}
fn default_directory() -> PathBuf {
    PathBuf::from("out")
}
fn default_run_id() -> String {
    "run".into()
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        let cfg: Self = toml::from_str(text).map_err(|e| e.to_string())?;
        if cfg.output.run_id.is_empty() || cfg.output.run_id.contains(['/', '\\']) || cfg.output.run_id == ".." {
            return Err(format!("output.run_id `{}` is not a plain name", cfg.output.run_id));
        }
        Ok(cfg)
    }

    pub fn scenario_spec(&self) -> Result<ScenarioSpec, String> {
        let s = self.scenario.as_ref().ok_or("missing [scenario] section")?;
        match (s.name, &s.arms) {
            (ScenarioName::Custom, Some(arms)) => ScenarioSpec::custom(arms.clone()).map_err(|e| e.to_string()),
            (ScenarioName::Custom, None) => Err("scenario.arms is required for a custom scenario".into()),
            (_, Some(_)) => Err("scenario.arms is only allowed with name = \"custom\"".into()),
            (name, None) => build_scenario(name, s.omega).map_err(|e| e.to_string()),
        }
    }

    pub fn trial_section(&self) -> Result<&TrialSection, String> {
        self.trial.as_ref().ok_or_else(|| "missing [trial] section".into())
    }

    pub fn comparator(&self) -> ComparatorConfig {
        let mut c = ComparatorConfig::default();
        if let Some(r) = &self.rule {
            let set = |slot: &mut f64, v: Option<f64>| {
                if let Some(v) = v {
                    *slot = v;
                }
            };
            set(&mut c.rule2_cap, r.rule2_cap);
            set(&mut c.suspension_threshold, r.suspension_threshold);
            set(&mut c.trippa_gamma_scale, r.trippa_gamma_scale);
            set(&mut c.trippa_gamma_power, r.trippa_gamma_power);
            set(&mut c.trippa_eta_scale, r.trippa_eta_scale);
        }
        c
    }

    pub fn trial_config(&self) -> Result<TrialConfig, String> {
        let t = self.trial_section()?;
        let rule = self.rule.as_ref().ok_or("missing [rule] section")?;
        let cfg = TrialConfig {
            total_n: t.total_n,
            num_stages: t.num_stages,
            scenario: self.scenario_spec()?,
            rule: rule.name,
            delta: t.delta,
            hypothesis_r: t.hypothesis_r,
            mcmc: self.mcmc,
            comparator: self.comparator(),
            first_stage: t.first_stage,
        };
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }

    pub fn spending_section(&self) -> Result<&SpendingSection, String> {
        self.spending.as_ref().ok_or_else(|| "missing [spending] section".into())
    }

    pub fn spending_function(&self) -> Result<SpendingFunction, String> {
        let s = self.spending_section()?;
        Ok(match s.name {
            SpendingName::Pocock => SpendingFunction::Pocock,
            SpendingName::Obf => SpendingFunction::Obf,
            SpendingName::Power => {
                if s.gamma.is_nan() || s.gamma <= 0.0 {
                    return Err(format!("spending.gamma must be positive, got {}", s.gamma));
                }
                SpendingFunction::Power { gamma: s.gamma }
            }
        })
    }

    pub fn calibration_config(&self) -> Result<CalibrationConfig, String> {
        let s = self.spending_section()?;
        let c = s.calibration.as_ref().ok_or("missing [spending.calibration] block (with null_arm)")?;
        let t = self.trial_section()?;
        let cfg = CalibrationConfig {
            n_rep: c.n_rep,
            stage_size: c.stage_size.unwrap_or(t.total_n / t.num_stages.max(1)),
            num_stages: t.num_stages,
            alpha: s.alpha,
            spending: self.spending_function()?,
            delta: c.delta.unwrap_or(t.delta),
            null_arm: c.null_arm,
        };
        cfg.validate().map_err(|e| e.to_string())?;
        self.mcmc.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }

    pub fn asymptotics_arm(&self) -> ArmModel {
        self.asymptotics.arm.unwrap_or_else(|| control_arm(0.3))
    }
}
