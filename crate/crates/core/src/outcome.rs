//! Composite-endpoint data types, the OSFD transform and the scenario-driven
//! patient generator.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tn;

/// Last day of the OSFD window; longer support-free spells are censored here.
pub const MAX_DAYS: u32 = 28;

/// Bounds of the transformed response `D = ceil(ln 30) - ln(30 - Y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformConstants {
    /// `ceil(ln 30) = 4`.
    pub l_ceiling: u32,
    /// `4 - ln 30`, the image of `Y = 0` (never attained).
    pub lower: f64,
    /// `4 - ln 2`, the image of `Y = 28` and the censoring spike.
    pub upper: f64,
}

impl TransformConstants {
    pub fn standard() -> Self {
        let l_ceiling = 30f64.ln().ceil() as u32;
        let l = f64::from(l_ceiling);
        Self { l_ceiling, lower: l - 30f64.ln(), upper: l - 2f64.ln() }
    }

    /// Whether `d` is the censoring spike value.
    pub fn is_upper(&self, d: f64) -> bool {
        d >= self.upper
    }
}

impl Default for TransformConstants {
    fn default() -> Self {
        Self::standard()
    }
}

/// Map a day count and death indicator to the transformed response.
pub fn transform_osfd(y_days: u32, tau: u8) -> Result<f64> {
    if tau == 1 {
        return Ok(0.0);
    }
    if tau != 0 {
        return Err(Error::InvalidArgument(format!("death indicator must be 0 or 1, got {tau}")));
    }
    if !(1..=MAX_DAYS).contains(&y_days) {
        return Err(Error::DayOutOfRange(y_days));
    }
    let c = TransformConstants::standard();
    Ok(f64::from(c.l_ceiling) - (30.0 - f64::from(y_days)).ln())
}

/// Continuous inverse of the transform for survivors: `Y = 30 - exp(4 - d)`.
pub fn inverse_transform(d: f64) -> f64 {
    let c = TransformConstants::standard();
    30.0 - (f64::from(c.l_ceiling) - d).exp()
}

/// One subject: death indicator, reported day count and the transformed response.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub tau: u8,
    /// `None` for deaths.
    pub y_days: Option<u32>,
    /// Authoritative response; `y_days` is derived from it for reporting only.
    pub d: f64,
}

impl PatientRecord {
    pub fn death() -> Self {
        Self { tau: 1, y_days: None, d: 0.0 }
    }

    pub fn censored(constants: &TransformConstants) -> Self {
        Self { tau: 0, y_days: Some(MAX_DAYS), d: constants.upper }
    }

    /// A survivor with a continuous response inside the window.
    pub fn alive(d: f64) -> Self {
        let y = inverse_transform(d).floor().clamp(1.0, f64::from(MAX_DAYS)) as u32;
        Self { tau: 0, y_days: Some(y), d }
    }

    pub fn from_days(y_days: u32, tau: u8) -> Result<Self> {
        let d = transform_osfd(y_days, tau)?;
        Ok(if tau == 1 { Self::death() } else { Self { tau: 0, y_days: Some(y_days), d } })
    }

    pub fn is_valid(&self, c: &TransformConstants) -> bool {
        match self.tau {
            1 => self.d == 0.0,
            0 => self.d > c.lower && self.d <= c.upper,
            _ => false,
        }
    }
}

/// The parameter quadruple `(lambda, omega, mu, sigma2)` of one arm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmModel {
    /// Mortality probability.
    pub lambda: f64,
    /// Probability that a survivor sits at the censoring spike.
    pub omega: f64,
    /// Location of the truncated normal (may lie outside the window).
    pub mu: f64,
    /// Squared scale of the truncated normal.
    pub sigma2: f64,
}

impl ArmModel {
    pub fn new(lambda: f64, omega: f64, mu: f64, sigma2: f64) -> Result<Self> {
        let arm = Self { lambda, omega, mu, sigma2 };
        arm.validate()?;
        Ok(arm)
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !unit(self.lambda) || !unit(self.omega) {
            return Err(Error::InvalidArgument(format!(
                "lambda and omega must lie in [0, 1] (got {}, {})",
                self.lambda, self.omega
            )));
        }
        if !self.mu.is_finite() || !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "mu must be finite and sigma2 positive (got {}, {})",
                self.mu, self.sigma2
            )));
        }
        Ok(())
    }

    pub fn sigma(&self) -> f64 {
        self.sigma2.sqrt()
    }
}

/// Draw one patient from the generative reading of the mixture: death with
/// probability `lambda`, otherwise the censoring spike with probability
/// `omega`, otherwise a truncated-normal response.
pub fn simulate_patient<R: Rng + ?Sized>(arm: &ArmModel, constants: &TransformConstants, rng: &mut R) -> PatientRecord {
    if rng.random::<f64>() < arm.lambda {
        return PatientRecord::death();
    }
    if rng.random::<f64>() < arm.omega {
        return PatientRecord::censored(constants);
    }
    let mut d = tn::sample_tn(rng, arm.mu, arm.sigma(), constants.lower, constants.upper);
    // The window is open at LOWER and the spike owns UPPER.
    if d <= constants.lower {
        d = f64::from_bits(constants.lower.to_bits() + 1);
    }
    if d >= constants.upper {
        d = f64::from_bits(constants.upper.to_bits() - 1);
    }
    PatientRecord::alive(d)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScenarioName {
    #[serde(rename = "MNN")]
    Mnn,
    #[serde(rename = "SNN")]
    Snn,
    #[serde(rename = "SMN")]
    Smn,
    #[serde(rename = "SMM")]
    Smm,
    #[serde(rename = "SSM")]
    Ssm,
    #[serde(rename = "custom")]
    Custom,
}

impl ScenarioName {
    pub const SIMULATED: [ScenarioName; 5] = [Self::Mnn, Self::Snn, Self::Smn, Self::Smm, Self::Ssm];

    pub fn label(&self) -> &'static str {
        match self {
            Self::Mnn => "MNN",
            Self::Snn => "SNN",
            Self::Smn => "SMN",
            Self::Smm => "SMM",
            Self::Ssm => "SSM",
            Self::Custom => "custom",
        }
    }
}

impl fmt::Display for ScenarioName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ScenarioName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "MNN" => Ok(Self::Mnn),
            "SNN" => Ok(Self::Snn),
            "SMN" => Ok(Self::Smn),
            "SMM" => Ok(Self::Smm),
            "SSM" => Ok(Self::Ssm),
            "custom" => Ok(Self::Custom),
            other => Err(Error::UnknownScenario(other.to_string())),
        }
    }
}

/// A named set of arm profiles; index 0 is the control.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: ScenarioName,
    pub omega_level: f64,
    pub arms: Vec<ArmModel>,
}

pub const CONTROL_MU: f64 = -2.3;
pub const CONTROL_SIGMA: f64 = 0.8;
pub const CONTROL_LAMBDA: f64 = 0.20;
const STRONG_D: f64 = 0.8;
const MEDIUM_D: f64 = 0.5;
const STRONG_LAMBDA: f64 = 0.15;
const MEDIUM_LAMBDA: f64 = 0.18;

#[derive(Clone, Copy)]
enum Effect {
    Strong,
    Medium,
    None,
}

fn effect_arm(effect: Effect, omega: f64) -> ArmModel {
    let (d, lambda) = match effect {
        Effect::Strong => (STRONG_D, STRONG_LAMBDA),
        Effect::Medium => (MEDIUM_D, MEDIUM_LAMBDA),
        Effect::None => (0.0, CONTROL_LAMBDA),
    };
    ArmModel { lambda, omega, mu: CONTROL_MU + d * CONTROL_SIGMA, sigma2: CONTROL_SIGMA * CONTROL_SIGMA }
}

/// The control profile `(0.20, omega, -2.3, 0.64)`.
pub fn control_arm(omega: f64) -> ArmModel {
    effect_arm(Effect::None, omega)
}

/// Build one of the five simulated scenarios (three treatment arms plus control).
pub fn build_scenario(name: ScenarioName, omega_level: f64) -> Result<ScenarioSpec> {
    if omega_level != 0.2 && omega_level != 0.3 {
        return Err(Error::InvalidArgument(format!("omega level must be 0.2 or 0.3, got {omega_level}")));
    }
    use Effect::*;
    let effects = match name {
        ScenarioName::Mnn => [Medium, None, None],
        ScenarioName::Snn => [Strong, None, None],
        ScenarioName::Smn => [Strong, Medium, None],
        ScenarioName::Smm => [Strong, Medium, Medium],
        ScenarioName::Ssm => [Strong, Strong, Medium],
        ScenarioName::Custom => {
            return Err(Error::InvalidArgument("custom scenarios are built from explicit arms".into()))
        }
    };
    let mut arms = vec![control_arm(omega_level)];
    arms.extend(effects.iter().map(|&e| effect_arm(e, omega_level)));
    Ok(ScenarioSpec { name, omega_level, arms })
}

impl ScenarioSpec {
    pub fn custom(arms: Vec<ArmModel>) -> Result<Self> {
        if arms.len() < 2 {
            return Err(Error::InvalidArgument("a scenario needs a control and at least one treatment arm".into()));
        }
        for arm in &arms {
            arm.validate()?;
        }
        let omega_level = arms[0].omega;
        Ok(Self { name: ScenarioName::Custom, omega_level, arms })
    }

    /// All arms share the control profile.
    pub fn null(num_treatments: usize, omega: f64) -> Self {
        Self { name: ScenarioName::Custom, omega_level: omega, arms: vec![control_arm(omega); num_treatments + 1] }
    }

    pub fn num_treatments(&self) -> usize {
        self.arms.len() - 1
    }
}
