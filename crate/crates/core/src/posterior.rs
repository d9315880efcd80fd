//! Gibbs sampler for the spike + censoring-mass + truncated-normal mixture,
//! and the posterior summaries built on its draws.
//!
//! Per arm the model is
//!
//! ```text
//! tau ~ Ber(lambda)
//! D | tau = 0 ~ omega * delta_{UPPER} + (1 - omega) * TN(mu, sigma2; LOWER, UPPER)
//! mu ~ N(0, 1e4), sigma2 ~ IG(1e-4, 1e-4), omega, lambda ~ Unif(0, 1)
//! ```
//!
//! The sampler sweeps `lambda -> omega -> z -> mu -> sigma2`. Interior
//! responses can only come from the truncated normal, so the latent spike
//! indicator is random only for survivors sitting exactly at `UPPER`; the
//! sweep therefore runs on sufficient statistics and costs O(1) per iteration.
//! The `mu`/`sigma2` updates use the plain conjugate normal forms (the
//! truncation is not reflected in them), matching the published sampler.

use rand::Rng;
use rand_distr::{Beta, Binomial, Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::outcome::{ArmModel, PatientRecord, TransformConstants};
use crate::tn;

pub const PRIOR_MU_PRECISION: f64 = 1e-4;
pub const PRIOR_IG: f64 = 1e-4;
pub const SIGMA2_FLOOR: f64 = 1e-12;
pub const SIGMA2_CEIL: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McmcConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self { iterations: 2000, burn_in: 500, thin: 10 }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.thin == 0 || self.burn_in >= self.iterations {
            return Err(Error::InvalidArgument(format!(
                "mcmc needs iterations > burn_in >= 0 and thin > 0 (got {self:?})"
            )));
        }
        if self.retained() < 2 {
            return Err(Error::InvalidArgument(format!("mcmc must retain at least 2 draws (got {})", self.retained())));
        }
        Ok(())
    }

    /// Number of retained draws `B`.
    pub fn retained(&self) -> usize {
        (self.iterations - self.burn_in) / self.thin
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaParams {
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalParams {
    pub mean: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InvGammaParams {
    pub shape: f64,
    pub scale: f64,
}

pub fn cond_lambda(n_total: usize, n_deaths: usize) -> BetaParams {
    debug_assert!(n_deaths <= n_total);
    BetaParams { alpha: 1.0 + n_deaths as f64, beta: 1.0 + (n_total - n_deaths) as f64 }
}

/// Counts are over survivors only; deaths carry no information about `omega`.
pub fn cond_omega(n_alive: usize, n_censored: usize) -> BetaParams {
    debug_assert!(n_censored <= n_alive);
    BetaParams { alpha: 1.0 + n_censored as f64, beta: 1.0 + (n_alive - n_censored) as f64 }
}

/// Probability that a survivor's response came from the censoring spike.
pub fn cond_z(d: f64, arm: &ArmModel, constants: &TransformConstants) -> f64 {
    if !constants.is_upper(d) {
        return 0.0;
    }
    let psi = tn::tn_ln_density(constants.upper, arm.mu, arm.sigma2, constants.lower, constants.upper).exp();
    spike_responsibility(arm.omega, psi)
}

/// `omega / (omega + (1 - omega) psi)`.
pub fn spike_responsibility(omega: f64, psi: f64) -> f64 {
    let denom = omega + (1.0 - omega) * psi;
    if denom > 0.0 {
        (omega / denom).clamp(0.0, 1.0)
    } else {
        // omega = 0 and psi = 0: the spike is the only finite explanation left.
        1.0
    }
}

pub fn cond_mu(d_values: &[f64], sigma2: f64) -> NormalParams {
    cond_mu_stats(d_values.len(), d_values.iter().sum(), sigma2)
}

pub fn cond_mu_stats(count: usize, sum: f64, sigma2: f64) -> NormalParams {
    let precision = PRIOR_MU_PRECISION + count as f64 / sigma2;
    NormalParams { mean: (sum / sigma2) / precision, variance: 1.0 / precision }
}

pub fn cond_sigma2(d_values: &[f64], mu: f64) -> InvGammaParams {
    let q = d_values.iter().map(|d| (d - mu) * (d - mu)).sum();
    cond_sigma2_stats(d_values.len(), q)
}

pub fn cond_sigma2_stats(count: usize, sum_sq_dev: f64) -> InvGammaParams {
    InvGammaParams { shape: PRIOR_IG + count as f64 / 2.0, scale: PRIOR_IG + sum_sq_dev / 2.0 }
}

/// Sufficient statistics of one arm's accumulated records.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ArmData {
    pub n_total: usize,
    pub n_deaths: usize,
    /// Survivors at the censoring spike.
    pub n_upper: usize,
    /// Survivors strictly inside the window.
    pub n_interior: usize,
    interior_mean: f64,
    interior_m2: f64,
}

impl ArmData {
    pub fn from_records(records: &[PatientRecord], constants: &TransformConstants) -> Self {
        let mut data = Self::default();
        for r in records {
            data.push(r, constants);
        }
        data
    }

    pub fn push(&mut self, record: &PatientRecord, constants: &TransformConstants) {
        self.n_total += 1;
        if record.tau == 1 {
            self.n_deaths += 1;
        } else if constants.is_upper(record.d) {
            self.n_upper += 1;
        } else {
            self.n_interior += 1;
            let delta = record.d - self.interior_mean;
            self.interior_mean += delta / self.n_interior as f64;
            self.interior_m2 += delta * (record.d - self.interior_mean);
        }
    }

    pub fn n_alive(&self) -> usize {
        self.n_total - self.n_deaths
    }

    pub fn interior_mean(&self) -> f64 {
        self.interior_mean
    }

    /// Sum of squared deviations of interior responses from their mean.
    pub fn interior_m2(&self) -> f64 {
        self.interior_m2
    }
}

/// Retained post-burn-in draws for one arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSample {
    pub draws: Vec<ArmModel>,
    /// Mean fraction of spike-valued survivors assigned to the spike, over all iterations.
    pub latent_z_rate: Option<f64>,
}

impl PosteriorSample {
    pub fn new(draws: Vec<ArmModel>) -> Self {
        Self { draws, latent_z_rate: None }
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    /// `theta_of` evaluated at every draw.
    pub fn thetas(&self, constants: &TransformConstants) -> Vec<f64> {
        self.draws.iter().map(|d| theta_of(d, constants)).collect()
    }

    pub fn mean_draw(&self) -> ArmModel {
        let n = self.draws.len() as f64;
        let mut m = ArmModel { lambda: 0.0, omega: 0.0, mu: 0.0, sigma2: 0.0 };
        for d in &self.draws {
            m.lambda += d.lambda / n;
            m.omega += d.omega / n;
            m.mu += d.mu / n;
            m.sigma2 += d.sigma2 / n;
        }
        m
    }

    /// Columnar text dump: one row per draw.
    pub fn to_dump(&self) -> String {
        let mut out = format!("# brar posterior dump v1 (brar {})\nlambda,omega,mu,sigma2\n", crate::VERSION);
        for d in &self.draws {
            let _ = writeln!(out, "{},{},{},{}", d.lambda, d.omega, d.mu, d.sigma2);
        }
        out
    }

    pub fn from_dump(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.starts_with('#'));
        match lines.next() {
            Some("lambda,omega,mu,sigma2") => {}
            other => return Err(Error::InvalidArgument(format!("bad dump header: {other:?}"))),
        }
        let mut draws = Vec::new();
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let v: Vec<f64> = line
                .split(',')
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::InvalidArgument(format!("bad dump row `{line}`: {e}")))?;
            if v.len() != 4 {
                return Err(Error::InvalidArgument(format!("bad dump row `{line}`")));
            }
            draws.push(ArmModel::new(v[0], v[1], v[2], v[3])?);
        }
        Ok(Self::new(draws))
    }
}

/// Run the Gibbs sampler on raw records.
pub fn gibbs_fit<R: Rng + ?Sized>(
    records: &[PatientRecord],
    config: &McmcConfig,
    constants: &TransformConstants,
    rng: &mut R,
) -> PosteriorSample {
    gibbs_fit_data(&ArmData::from_records(records, constants), config, constants, rng)
}

/// Run the Gibbs sampler on precomputed sufficient statistics.
pub fn gibbs_fit_data<R: Rng + ?Sized>(
    data: &ArmData,
    config: &McmcConfig,
    constants: &TransformConstants,
    rng: &mut R,
) -> PosteriorSample {
    let upper = constants.upper;
    let n_alive = data.n_alive();

    let mut state = ArmModel {
        lambda: (data.n_deaths as f64 + 1.0) / (data.n_total as f64 + 2.0),
        omega: (data.n_upper as f64 + 1.0) / (n_alive as f64 + 2.0),
        mu: if data.n_interior > 0 { data.interior_mean } else { 0.5 * (constants.lower + upper) },
        sigma2: if data.n_interior > 1 && data.interior_m2 > 0.0 {
            data.interior_m2 / (data.n_interior - 1) as f64
        } else {
            1.0
        },
    };
    let mut n_spike = data.n_upper;

    let lambda_law = {
        let p = cond_lambda(data.n_total, data.n_deaths);
        Beta::new(p.alpha, p.beta).expect("valid beta")
    };

    let mut draws = Vec::with_capacity(config.retained());
    let mut z_total = 0.0;
    for it in 0..config.iterations {
        state.lambda = lambda_law.sample(rng);

        let p = cond_omega(n_alive, n_spike);
        state.omega = Beta::new(p.alpha, p.beta).expect("valid beta").sample(rng);

        if data.n_upper > 0 {
            let pz = cond_z(upper, &state, constants);
            n_spike = Binomial::new(data.n_upper as u64, pz).expect("valid binomial").sample(rng) as usize;
            z_total += n_spike as f64 / data.n_upper as f64;
        }

        // Survivors with z = 0: interior responses plus spike-valued ones assigned to the TN.
        let n_tn_upper = data.n_upper - n_spike;
        let m = data.n_interior + n_tn_upper;
        let sum = data.interior_mean * data.n_interior as f64 + n_tn_upper as f64 * upper;
        let p = cond_mu_stats(m, sum, state.sigma2);
        let z: f64 = StandardNormal.sample(rng);
        state.mu = p.mean + p.variance.sqrt() * z;

        let dm = data.interior_mean - state.mu;
        let du = upper - state.mu;
        let q = data.interior_m2 + data.n_interior as f64 * dm * dm + n_tn_upper as f64 * du * du;
        let p = cond_sigma2_stats(m, q);
        let g = Gamma::new(p.shape, 1.0 / p.scale).expect("valid gamma").sample(rng);
        state.sigma2 = (1.0 / g).clamp(SIGMA2_FLOOR, SIGMA2_CEIL);

        if it >= config.burn_in && (it + 1 - config.burn_in).is_multiple_of(config.thin) {
            draws.push(state);
        }
    }
    PosteriorSample { draws, latent_z_rate: (data.n_upper > 0).then(|| z_total / config.iterations as f64) }
}

/// Expected transformed response `theta = [omega UPPER + (1 - omega) E_TN] (1 - lambda)`.
pub fn theta_of(arm: &ArmModel, constants: &TransformConstants) -> f64 {
    let m = tn::tn_moments(arm.mu, arm.sigma2, constants);
    ((arm.omega * constants.upper + (1.0 - arm.omega) * m.mean) * (1.0 - arm.lambda)).max(0.0)
}

/// Total variance of the transformed response, `(1 - lambda) E(D^2 | alive) - theta^2`.
pub fn var_of(arm: &ArmModel, constants: &TransformConstants) -> f64 {
    let m = tn::tn_moments(arm.mu, arm.sigma2, constants);
    let u = constants.upper;
    let second_alive = arm.omega * u * u + (1.0 - arm.omega) * (m.variance + m.mean * m.mean);
    let theta = (arm.omega * u + (1.0 - arm.omega) * m.mean) * (1.0 - arm.lambda);
    ((1.0 - arm.lambda) * second_alive - theta * theta).max(0.0)
}

pub fn estimate_theta(sample: &PosteriorSample, constants: &TransformConstants) -> f64 {
    mean(&sample.thetas(constants))
}

/// Mean over all `B_k * B_0` cross pairs of `theta_k - theta_0`.
pub fn estimate_xi(sample_k: &PosteriorSample, sample_0: &PosteriorSample, constants: &TransformConstants) -> f64 {
    xi_from_thetas(&sample_k.thetas(constants), &sample_0.thetas(constants))
}

pub fn xi_from_thetas(theta_k: &[f64], theta_0: &[f64]) -> f64 {
    // Sum over pairs factorizes into the difference of means.
    mean(theta_k) - mean(theta_0)
}

/// Fraction of cross pairs with `theta_k - theta_0 > delta`.
pub fn prob_superiority(
    sample_k: &PosteriorSample,
    sample_0: &PosteriorSample,
    delta: f64,
    constants: &TransformConstants,
) -> f64 {
    let mut control = sample_0.thetas(constants);
    control.sort_by(f64::total_cmp);
    superiority_from_thetas(&sample_k.thetas(constants), &control, delta)
}

/// Cross-pair superiority with `sorted_control` in ascending order.
pub fn superiority_from_thetas(theta_k: &[f64], sorted_control: &[f64], delta: f64) -> f64 {
    let hits: usize = theta_k.iter().map(|&t| count_below(sorted_control, t - delta)).sum();
    hits as f64 / (theta_k.len() * sorted_control.len()) as f64
}

/// Number of entries strictly less than `x` in an ascending slice.
pub(crate) fn count_below(sorted: &[f64], x: f64) -> usize {
    sorted.partition_point(|&v| v < x)
}

/// Posterior probability that each arm is the best, from matched draw indices.
pub fn prob_best(samples: &[PosteriorSample], constants: &TransformConstants) -> Result<Vec<f64>> {
    let thetas: Vec<Vec<f64>> = samples.iter().map(|s| s.thetas(constants)).collect();
    prob_best_thetas(&thetas)
}

/// As [`prob_best`] on per-arm theta draws; ties split credit equally.
pub fn prob_best_thetas(thetas: &[Vec<f64>]) -> Result<Vec<f64>> {
    let k = thetas.len();
    if k == 0 {
        return Err(Error::InvalidArgument("prob_best needs at least one arm".into()));
    }
    let b = thetas[0].len();
    if let Some(bad) = thetas.iter().find(|t| t.len() != b) {
        return Err(Error::UnequalDraws(b, bad.len()));
    }
    if b == 0 {
        return Err(Error::InvalidArgument("prob_best needs at least one draw".into()));
    }
    let mut score = vec![0.0; k];
    for i in 0..b {
        let best = thetas.iter().map(|t| t[i]).fold(f64::NEG_INFINITY, f64::max);
        let ties = thetas.iter().filter(|t| t[i] == best).count() as f64;
        for (s, t) in score.iter_mut().zip(thetas) {
            if t[i] == best {
                *s += 1.0 / ties;
            }
        }
    }
    Ok(score.into_iter().map(|s| s / b as f64).collect())
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}
