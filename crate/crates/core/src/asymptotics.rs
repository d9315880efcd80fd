//! Exact mixed-measure likelihood, score, Fisher information, the estimand
//! gradient and delta-method variances, plus a simulation-based verification
//! report.
//!
//! Parameter vectors are ordered `(lambda, omega, mu, sigma2)`.

use nalgebra::Matrix4;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::outcome::{simulate_patient, ArmModel, PatientRecord, TransformConstants};
use crate::posterior::{estimate_theta, gibbs_fit_data, theta_of, ArmData, McmcConfig};
use crate::rng::{Purpose, StreamKey};
use crate::tn::{tn_ln_density, TruncationRatios};

pub type ScoreVector = [f64; 4];
pub type InfoMatrix = Matrix4<f64>;
pub type GradTheta = [f64; 4];

/// Largest condition number accepted before inverting an information matrix.
pub const MAX_CONDITION: f64 = 1e10;

/// Reject arms on the boundary of the parameter space.
pub fn check_open(arm: &ArmModel) -> Result<()> {
    arm.validate()?;
    let open = |x: f64| x > 0.0 && x < 1.0;
    if !open(arm.lambda) {
        return Err(Error::DegenerateParameter(format!("lambda = {} must lie in (0, 1)", arm.lambda)));
    }
    if !open(arm.omega) {
        return Err(Error::DegenerateParameter(format!("omega = {} must lie in (0, 1)", arm.omega)));
    }
    if !(arm.sigma2 > 0.0 && arm.sigma2.is_finite()) {
        return Err(Error::DegenerateParameter(format!("sigma2 = {} must be positive", arm.sigma2)));
    }
    Ok(())
}

/// Sum of per-record log-likelihood contributions.
pub fn log_likelihood(arm: &ArmModel, records: &[PatientRecord], constants: &TransformConstants) -> Result<f64> {
    let (lo, hi) = (constants.lower, constants.upper);
    let mut total = 0.0;
    for (i, r) in records.iter().enumerate() {
        let term = if r.tau == 1 {
            arm.lambda.ln()
        } else if constants.is_upper(r.d) {
            ((1.0 - arm.lambda) * arm.omega).ln()
        } else {
            ((1.0 - arm.lambda) * (1.0 - arm.omega)).ln() + tn_ln_density(r.d, arm.mu, arm.sigma2, lo, hi)
        };
        if term.is_nan() || term == f64::NEG_INFINITY {
            return Err(Error::ZeroProbability(format!("record {i} ({r:?}) under {arm:?}")));
        }
        total += term;
    }
    Ok(total)
}

/// Parameter-only pieces of the score, computed once per arm.
#[derive(Debug, Clone, Copy)]
struct ScoreKernel {
    arm: ArmModel,
    sigma: f64,
    r: f64,
    w: f64,
    upper: f64,
}

impl ScoreKernel {
    fn new(arm: &ArmModel, constants: &TransformConstants) -> Self {
        let sigma = arm.sigma();
        let t = TruncationRatios::new(arm.mu, sigma, constants.lower, constants.upper);
        Self { arm: *arm, sigma, r: t.r, w: t.w(), upper: constants.upper }
    }

    fn record(&self, rec: &PatientRecord) -> ScoreVector {
        let ArmModel { lambda, omega, mu, sigma2 } = self.arm;
        if rec.tau == 1 {
            return [1.0 / lambda, 0.0, 0.0, 0.0];
        }
        let s_lambda = -1.0 / (1.0 - lambda);
        if rec.d >= self.upper {
            return [s_lambda, 1.0 / omega, 0.0, 0.0];
        }
        let dev = rec.d - mu;
        [
            s_lambda,
            -1.0 / (1.0 - omega),
            dev / sigma2 + self.r / self.sigma,
            (-1.0 + dev * dev / sigma2 - self.w) / (2.0 * sigma2),
        ]
    }
}

/// Score of a single record.
pub fn record_score(arm: &ArmModel, record: &PatientRecord, constants: &TransformConstants) -> ScoreVector {
    ScoreKernel::new(arm, constants).record(record)
}

/// Analytic gradient of [`log_likelihood`].
pub fn score(arm: &ArmModel, records: &[PatientRecord], constants: &TransformConstants) -> Result<ScoreVector> {
    log_likelihood(arm, records, constants)?;
    let k = ScoreKernel::new(arm, constants);
    let mut s = [0.0; 4];
    for r in records {
        let v = k.record(r);
        for i in 0..4 {
            s[i] += v[i];
        }
    }
    Ok(s)
}

/// Per-observation information in closed form.
///
/// The truncated-normal block is the covariance of the `(mu, sigma2)` scores,
/// which are linear in `X` and `X^2` for the standardized variable `X`.
pub fn expected_information(arm: &ArmModel, constants: &TransformConstants) -> Result<InfoMatrix> {
    check_open(arm)?;
    let ArmModel { lambda, omega, sigma2, .. } = *arm;
    let sigma = arm.sigma();
    let t = TruncationRatios::new(arm.mu, sigma, constants.lower, constants.upper);
    let [m1, m2, m3, m4] = t.standardized_moments();
    let tn_weight = (1.0 - lambda) * (1.0 - omega);
    let i_mm = (m2 - m1 * m1) / sigma2;
    let i_ms = (m3 - m1 * m2) / (2.0 * sigma2 * sigma);
    let i_ss = (m4 - m2 * m2) / (4.0 * sigma2 * sigma2);
    let mut info = InfoMatrix::zeros();
    info[(0, 0)] = 1.0 / (lambda * (1.0 - lambda));
    info[(1, 1)] = (1.0 - lambda) / (omega * (1.0 - omega));
    info[(2, 2)] = tn_weight * i_mm;
    info[(2, 3)] = tn_weight * i_ms;
    info[(3, 2)] = tn_weight * i_ms;
    info[(3, 3)] = tn_weight * i_ss;
    Ok(info)
}

/// Monte Carlo per-observation information: mean outer product of scores
/// over `mc_samples` records simulated from `arm`.
pub fn fisher_info<R: Rng + ?Sized>(
    arm: &ArmModel,
    mc_samples: usize,
    constants: &TransformConstants,
    rng: &mut R,
) -> Result<InfoMatrix> {
    check_open(arm)?;
    if mc_samples < 10_000 {
        return Err(Error::InvalidArgument(format!("fisher_info needs at least 10^4 samples, got {mc_samples}")));
    }
    let records: Vec<PatientRecord> = (0..mc_samples).map(|_| simulate_patient(arm, constants, rng)).collect();
    Ok(outer_product_information(arm, &records, constants))
}

/// Mean outer product of per-record scores.
pub fn outer_product_information(
    arm: &ArmModel,
    records: &[PatientRecord],
    constants: &TransformConstants,
) -> InfoMatrix {
    let k = ScoreKernel::new(arm, constants);
    let mut info = InfoMatrix::zeros();
    for r in records {
        let s = nalgebra::Vector4::from(k.record(r));
        info += s * s.transpose();
    }
    info / records.len() as f64
}

fn step(value: f64) -> f64 {
    1e-5 * value.abs().max(1e-2)
}

fn perturbed(arm: &ArmModel, i: usize, h: f64) -> ArmModel {
    let mut a = *arm;
    match i {
        0 => a.lambda += h,
        1 => a.omega += h,
        2 => a.mu += h,
        _ => a.sigma2 += h,
    }
    a
}

fn component(arm: &ArmModel, i: usize) -> f64 {
    [arm.lambda, arm.omega, arm.mu, arm.sigma2][i]
}

/// Per-observation negative Hessian from central differences of the mean score.
pub fn hessian_information(arm: &ArmModel, records: &[PatientRecord], constants: &TransformConstants) -> InfoMatrix {
    let mean_score = |a: &ArmModel| {
        let k = ScoreKernel::new(a, constants);
        let mut s = [0.0; 4];
        for r in records {
            let v = k.record(r);
            for i in 0..4 {
                s[i] += v[i];
            }
        }
        s.map(|x| x / records.len() as f64)
    };
    let mut info = InfoMatrix::zeros();
    for j in 0..4 {
        let h = step(component(arm, j));
        let up = mean_score(&perturbed(arm, j, h));
        let down = mean_score(&perturbed(arm, j, -h));
        for i in 0..4 {
            info[(i, j)] = -(up[i] - down[i]) / (2.0 * h);
        }
    }
    0.5 * (info + info.transpose())
}

/// Central finite differences of [`log_likelihood`].
pub fn finite_difference_score(
    arm: &ArmModel,
    records: &[PatientRecord],
    constants: &TransformConstants,
) -> Result<ScoreVector> {
    let mut s = [0.0; 4];
    for (i, si) in s.iter_mut().enumerate() {
        let h = step(component(arm, i));
        let up = log_likelihood(&perturbed(arm, i, h), records, constants)?;
        let down = log_likelihood(&perturbed(arm, i, -h), records, constants)?;
        *si = (up - down) / (2.0 * h);
    }
    Ok(s)
}

/// Analytic gradient of `theta` with respect to `(lambda, omega, mu, sigma2)`.
pub fn grad_theta(arm: &ArmModel, constants: &TransformConstants) -> GradTheta {
    let ArmModel { lambda, omega, mu, .. } = *arm;
    let sigma = arm.sigma();
    let t = TruncationRatios::new(mu, sigma, constants.lower, constants.upper);
    let [m1, m2, m3, _] = t.standardized_moments();
    let tn_mean = mu - sigma * t.r;
    let theta = (1.0 - lambda) * (omega * constants.upper + (1.0 - omega) * tn_mean);
    let tn_weight = (1.0 - lambda) * (1.0 - omega);
    [
        -theta / (1.0 - lambda),
        (1.0 - lambda) * (constants.upper - tn_mean),
        tn_weight * (m2 - m1 * m1),
        tn_weight * (m3 - m1 * m2) / (2.0 * sigma),
    ]
}

/// Central finite differences of [`theta_of`].
pub fn finite_difference_grad_theta(arm: &ArmModel, constants: &TransformConstants) -> GradTheta {
    let mut g = [0.0; 4];
    for (i, gi) in g.iter_mut().enumerate() {
        let h = step(component(arm, i));
        *gi = (theta_of(&perturbed(arm, i, h), constants) - theta_of(&perturbed(arm, i, -h), constants)) / (2.0 * h);
    }
    g
}

/// Ratio of the largest to the smallest singular value.
pub fn condition_number(info: &InfoMatrix) -> f64 {
    let sv = info.singular_values();
    let max = sv.max();
    let min = sv.min();
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

/// Delta-method variance `g' I^{-1} g / n` of `theta_hat` for one arm.
pub fn theta_variance(arm: &ArmModel, n: usize, constants: &TransformConstants) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidArgument("sample size must be at least 1".into()));
    }
    let info = expected_information(arm, constants)?;
    let cond = condition_number(&info);
    if cond.is_nan() || cond > MAX_CONDITION {
        return Err(Error::SingularInformation(cond));
    }
    let inv = info.try_inverse().ok_or(Error::SingularInformation(cond))?;
    let g = nalgebra::Vector4::from(grad_theta(arm, constants));
    Ok((g.transpose() * inv * g)[(0, 0)] / n as f64)
}

/// `(var_theta_k, var_xi_k)` with `n` patients in each arm.
pub fn asymptotic_variance(
    arm_k: &ArmModel,
    arm_0: &ArmModel,
    n: usize,
    constants: &TransformConstants,
) -> Result<(f64, f64)> {
    let vk = theta_variance(arm_k, n, constants)?;
    let v0 = theta_variance(arm_0, n, constants)?;
    Ok((vk, vk + v0))
}

/// Whether `info` is symmetric and positive semidefinite within `1e-8 * trace`.
pub fn is_valid_information(info: &InfoMatrix) -> bool {
    let tol = 1e-8 * info.trace().abs();
    let asym = (info - info.transpose()).abs().max();
    asym <= tol && info.symmetric_eigenvalues().min() >= -tol
}

/// Largest entrywise discrepancy between two information matrices, each entry
/// scaled by `sqrt(I_ii I_jj)` of the reference.
pub fn scaled_discrepancy(estimate: &InfoMatrix, reference: &InfoMatrix) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..4 {
        for j in 0..4 {
            let scale = (reference[(i, i)] * reference[(j, j)]).sqrt();
            worst = worst.max((estimate[(i, j)] - reference[(i, j)]).abs() / scale);
        }
    }
    worst
}

/// Settings for [`verify`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerificationConfig {
    pub mc_samples: usize,
    pub score_probes: usize,
    pub probe_records: usize,
    pub fits: usize,
    pub fit_n: usize,
    pub consistency_sizes: Vec<usize>,
    pub consistency_reps: usize,
    pub mcmc: McmcConfig,
}

impl Default for VerificationConfig {
    fn default() -> Self {
        Self {
            mc_samples: 1_000_000,
            score_probes: 100,
            probe_records: 50,
            fits: 500,
            fit_n: 2000,
            consistency_sizes: vec![500, 2000, 8000],
            consistency_reps: 400,
            mcmc: McmcConfig::default(),
        }
    }
}

/// One line of the verification report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub measured: String,
    pub criterion: String,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub arm: ArmModel,
    pub seed: u64,
    pub delta_se: f64,
    pub empirical_sd: f64,
    pub checks: Vec<Check>,
}

impl VerificationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    /// Fixed-width text table with a versioned header.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# brar asymptotics report v1");
        let _ = writeln!(out, "# brar_version={} seed={}", crate::VERSION, self.seed);
        let a = &self.arm;
        let _ = writeln!(out, "# arm lambda={} omega={} mu={} sigma2={}", a.lambda, a.omega, a.mu, a.sigma2);
        let _ = writeln!(
            out,
            "# delta_se={:.6e} empirical_sd={:.6e} se_ratio={:.4}",
            self.delta_se,
            self.empirical_sd,
            self.empirical_sd / self.delta_se
        );
        let w0 = self.checks.iter().map(|c| c.name.len()).max().unwrap_or(5).max(5);
        let w1 = self.checks.iter().map(|c| c.measured.len()).max().unwrap_or(8).max(8);
        let w2 = self.checks.iter().map(|c| c.criterion.len()).max().unwrap_or(9).max(9);
        let _ = writeln!(out, "{:<w0$}  {:<w1$}  {:<w2$}  result", "check", "measured", "criterion");
        for c in &self.checks {
            let _ = writeln!(
                out,
                "{:<w0$}  {:<w1$}  {:<w2$}  {}",
                c.name,
                c.measured,
                c.criterion,
                if c.pass { "PASS" } else { "FAIL" }
            );
        }
        out
    }
}

fn check(name: &str, measured: String, criterion: &str, pass: bool) -> Check {
    Check { name: name.into(), measured, criterion: criterion.into(), pass }
}

fn simulate_data(arm: &ArmModel, n: usize, constants: &TransformConstants, key: StreamKey) -> ArmData {
    let mut rng = key.with_purpose(Purpose::Verify).stream();
    let mut data = ArmData::default();
    for _ in 0..n {
        data.push(&simulate_patient(arm, constants, &mut rng), constants);
    }
    data
}

/// Posterior-mean `theta_hat` from a fresh dataset of size `n`.
pub fn fitted_theta(
    arm: &ArmModel,
    n: usize,
    mcmc: &McmcConfig,
    constants: &TransformConstants,
    key: StreamKey,
) -> f64 {
    let data = simulate_data(arm, n, constants, key);
    let sample = gibbs_fit_data(&data, mcmc, constants, &mut key.with_purpose(Purpose::Fit).stream());
    estimate_theta(&sample, constants)
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Sample skewness and excess kurtosis.
pub fn shape_statistics(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let moment = |p: i32| xs.iter().map(|x| (x - m).powi(p)).sum::<f64>() / n;
    let m2 = moment(2);
    (moment(3) / m2.powf(1.5), moment(4) / (m2 * m2) - 3.0)
}

fn random_probe<R: Rng + ?Sized>(rng: &mut R) -> ArmModel {
    ArmModel {
        lambda: rng.random_range(0.05..0.95),
        omega: rng.random_range(0.05..0.95),
        mu: rng.random_range(-3.0..3.0),
        sigma2: rng.random_range(0.1..4.0),
    }
}

fn rel_err(approx: f64, exact: f64) -> f64 {
    (approx - exact).abs() / exact.abs().max(1.0)
}

/// Run the full oracle suite for `arm`.
pub fn verify(
    arm: &ArmModel,
    config: &VerificationConfig,
    constants: &TransformConstants,
    seed: u64,
) -> Result<VerificationReport> {
    check_open(arm)?;
    config.mcmc.validate()?;
    if config.fits < 3 || config.fit_n == 0 || config.consistency_reps == 0 {
        return Err(Error::InvalidArgument("verification needs fits >= 3 and positive sizes".into()));
    }
    let mut checks = Vec::new();
    let root = StreamKey::root(seed, Purpose::Verify);

    // Score and gradient against finite differences.
    let mut probe_rng = root.with_stage(1).stream();
    let mut worst_score: f64 = 0.0;
    let mut worst_grad: f64 = 0.0;
    for _ in 0..config.score_probes {
        let probe = random_probe(&mut probe_rng);
        let records: Vec<PatientRecord> =
            (0..config.probe_records).map(|_| simulate_patient(&probe, constants, &mut probe_rng)).collect();
        let s = score(&probe, &records, constants)?;
        let fd = finite_difference_score(&probe, &records, constants)?;
        for i in 0..4 {
            worst_score = worst_score.max(rel_err(fd[i], s[i]));
        }
        let g = grad_theta(&probe, constants);
        let gfd = finite_difference_grad_theta(&probe, constants);
        for i in 0..4 {
            worst_grad = worst_grad.max(rel_err(gfd[i], g[i]));
        }
    }
    checks.push(check(
        "score_vs_finite_difference",
        format!("{worst_score:.3e}"),
        "max rel err < 1e-6",
        worst_score < 1e-6,
    ));
    checks.push(check(
        "grad_theta_vs_finite_difference",
        format!("{worst_grad:.3e}"),
        "max rel err < 1e-6",
        worst_grad < 1e-6,
    ));

    // Information matrices.
    let mut mc_rng = root.with_stage(2).stream();
    let records: Vec<PatientRecord> =
        (0..config.mc_samples).map(|_| simulate_patient(arm, constants, &mut mc_rng)).collect();
    let outer = outer_product_information(arm, &records, constants);
    let hessian = hessian_information(arm, &records, constants);
    let exact = expected_information(arm, constants)?;
    let eq = scaled_discrepancy(&outer, &hessian);
    checks.push(check("information_equality", format!("{eq:.4}"), "outer vs -hessian, scaled err < 0.05", eq < 0.05));
    let vs_exact = scaled_discrepancy(&outer, &exact);
    checks.push(check("information_vs_closed_form", format!("{vs_exact:.4}"), "scaled err < 0.05", vs_exact < 0.05));
    let lam = (outer[(0, 0)] - exact[(0, 0)]).abs() / exact[(0, 0)];
    let om = (outer[(1, 1)] - exact[(1, 1)]).abs() / exact[(1, 1)];
    checks.push(check("lambda_omega_blocks", format!("{lam:.4}, {om:.4}"), "rel err < 0.05", lam < 0.05 && om < 0.05));
    let mut cross: f64 = 0.0;
    for (i, j) in [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3)] {
        cross = cross.max(outer[(i, j)].abs() / (outer[(i, i)] * outer[(j, j)]).sqrt());
    }
    checks.push(check("factorized_cross_blocks", format!("{cross:.4}"), "scaled |I_ij| < 0.05", cross < 0.05));
    let psd = is_valid_information(&outer) && is_valid_information(&exact);
    checks.push(check("information_psd", psd.to_string(), "symmetric, PSD", psd));

    // Delta method against repeated fits.
    let (var_theta, var_xi) = asymptotic_variance(arm, arm, config.fit_n, constants)?;
    checks.push(check(
        "var_xi_identical_arms",
        format!("{:.6e}", var_xi - 2.0 * var_theta),
        "var_xi = 2 var_theta",
        var_xi == 2.0 * var_theta,
    ));
    let doubled = theta_variance(arm, 2 * config.fit_n, constants)?;
    checks.push(check(
        "var_theta_scales_1_over_n",
        format!("{:.3e}", (2.0 * doubled - var_theta).abs() / var_theta),
        "rel err < 1e-12",
        (2.0 * doubled - var_theta).abs() <= 1e-12 * var_theta,
    ));
    let theta_star = theta_of(arm, constants);
    let fit_key = root.with_stage(3);
    let thetas: Vec<f64> = (0..config.fits as u64)
        .into_par_iter()
        .map(|m| fitted_theta(arm, config.fit_n, &config.mcmc, constants, fit_key.with_replicate(m)))
        .collect();
    let n = thetas.len() as f64;
    let mean_theta = thetas.iter().sum::<f64>() / n;
    let empirical_sd = (thetas.iter().map(|t| (t - mean_theta).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let delta_se = var_theta.sqrt();
    let ratio = empirical_sd / delta_se;
    checks.push(check(
        "delta_se_vs_empirical_sd",
        format!("ratio {ratio:.4} (sd {empirical_sd:.5}, se {delta_se:.5})"),
        "|ratio - 1| <= 0.15",
        (ratio - 1.0).abs() <= 0.15,
    ));
    let standardized: Vec<f64> = thetas.iter().map(|t| (t - theta_star) / delta_se).collect();
    let (skew, kurt) = shape_statistics(&standardized);
    checks.push(check(
        "normality",
        format!("skew {skew:.3}, excess kurtosis {kurt:.3}"),
        "|skew| < 0.3, |kurt| < 0.6",
        skew.abs() < 0.3 && kurt.abs() < 0.6,
    ));

    // Consistency sweep.
    let mut theta_err = Vec::new();
    let mut xi_err = Vec::new();
    for (s, &size) in config.consistency_sizes.iter().enumerate() {
        let key = root.with_stage(4 + s as u32);
        let pairs: Vec<(f64, f64)> = (0..config.consistency_reps as u64)
            .into_par_iter()
            .map(|m| {
                let rep = key.with_replicate(m);
                let tk = fitted_theta(arm, size, &config.mcmc, constants, rep.with_arm(1));
                let t0 = fitted_theta(arm, size, &config.mcmc, constants, rep.with_arm(0));
                ((tk - theta_star).abs(), (tk - t0).abs())
            })
            .collect();
        theta_err.push(median(pairs.iter().map(|p| p.0).collect()));
        xi_err.push(median(pairs.iter().map(|p| p.1).collect()));
    }
    let decreasing = |v: &[f64]| v.windows(2).all(|w| w[1] < w[0]);
    let fmt_list = |v: &[f64]| v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(" > ");
    checks.push(check(
        "consistency_theta",
        fmt_list(&theta_err),
        "median |theta_hat - theta| decreasing in n",
        decreasing(&theta_err),
    ));
    checks.push(check(
        "consistency_xi",
        fmt_list(&xi_err),
        "median |xi_hat - xi| decreasing in n",
        decreasing(&xi_err),
    ));

    Ok(VerificationReport { arm: *arm, seed, delta_se, empirical_sd, checks })
}
