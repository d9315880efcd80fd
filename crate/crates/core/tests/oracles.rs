use brar_core::allocation::{assign_stage, fixed_randomization};
use brar_core::outcome::{build_scenario, control_arm, simulate_patient};
use brar_core::posterior::{
    cond_lambda, cond_mu_stats, cond_omega, cond_sigma2_stats, gibbs_fit, gibbs_fit_data, theta_of, var_of, ArmData,
};
use brar_core::rng::Purpose;
use brar_core::{ArmModel, McmcConfig, PatientRecord, ScenarioName, StreamKey, TransformConstants};
use statrs::distribution::{Beta, ContinuousCDF, Gamma, Normal};

fn c() -> TransformConstants {
    TransformConstants::standard()
}

/// Kolmogorov-Smirnov distance of `u` from Uniform(0, 1).
fn ks_uniform(mut u: Vec<f64>) -> f64 {
    u.sort_by(f64::total_cmp);
    let n = u.len() as f64;
    u.iter().enumerate().map(|(i, &x)| (x - i as f64 / n).abs().max(((i + 1) as f64 / n - x).abs())).fold(0.0, f64::max)
}

fn records(arm: &ArmModel, n: usize, key: StreamKey) -> Vec<PatientRecord> {
    let mut rng = key.stream();
    (0..n).map(|_| simulate_patient(arm, &c(), &mut rng)).collect()
}

#[test]
fn gibbs_conditionals_match_closed_forms() {
    // no censoring spike, so z is trivial and every conditional is fixed by the data
    let arm = ArmModel::new(0.2, 0.0, 1.5, 0.25).unwrap();
    let recs = records(&arm, 300, StreamKey::new(11, 0, 0, 0, Purpose::Verify));
    let data = ArmData::from_records(&recs, &c());
    assert_eq!(data.n_upper, 0);
    let interior: Vec<f64> = recs.iter().filter(|r| r.tau == 0).map(|r| r.d).collect();
    let mcmc = McmcConfig { iterations: 100_000, burn_in: 0, thin: 1 };
    let sample = gibbs_fit_data(&data, &mcmc, &c(), &mut StreamKey::new(11, 0, 0, 0, Purpose::Fit).stream());
    let draws = &sample.draws;

    let bl = cond_lambda(data.n_total, data.n_deaths);
    let lambda_law = Beta::new(bl.alpha, bl.beta).unwrap();
    let bo = cond_omega(data.n_alive(), 0);
    let omega_law = Beta::new(bo.alpha, bo.beta).unwrap();
    let (mut u_l, mut u_o, mut u_m, mut u_s) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let sum: f64 = interior.iter().sum();
    for t in 1..draws.len() {
        let (prev, cur) = (draws[t - 1], draws[t]);
        u_l.push(lambda_law.cdf(cur.lambda));
        u_o.push(omega_law.cdf(cur.omega));
        let pm = cond_mu_stats(interior.len(), sum, prev.sigma2);
        u_m.push(Normal::new(pm.mean, pm.variance.sqrt()).unwrap().cdf(cur.mu));
        let q: f64 = interior.iter().map(|d| (d - cur.mu).powi(2)).sum();
        let ps = cond_sigma2_stats(interior.len(), q);
        // sigma2 = 1 / g with g ~ Gamma(shape, rate = scale)
        u_s.push(1.0 - Gamma::new(ps.shape, ps.scale).unwrap().cdf(1.0 / cur.sigma2));
    }
    // 0.1% critical value of the KS statistic
    let crit = 1.95 / (u_l.len() as f64).sqrt();
    for (name, u) in [("lambda", u_l), ("omega", u_o), ("mu", u_m), ("sigma2", u_s)] {
        let d = ks_uniform(u);
        assert!(d < crit, "{name}: KS {d} >= {crit}");
    }
}

#[test]
fn response_mean_converges_to_theta() {
    let n = 100_000;
    for name in ScenarioName::SIMULATED {
        for (i, arm) in build_scenario(name, 0.2).unwrap().arms.iter().enumerate() {
            let recs = records(arm, n, StreamKey::new(12, i as u64, 0, 0, Purpose::Verify));
            let mean = recs.iter().map(|r| r.d).sum::<f64>() / n as f64;
            let sd = var_of(arm, &c()).sqrt();
            let err = (mean - theta_of(arm, &c())).abs();
            assert!(err < 3.0 * sd / (n as f64).sqrt(), "{name} arm {i}: {err}");
        }
    }
}

#[test]
fn simulated_records_are_valid_in_bulk() {
    for (i, arm) in build_scenario(ScenarioName::Smm, 0.3).unwrap().arms.iter().enumerate() {
        let recs = records(arm, 100_000, StreamKey::new(13, i as u64, 0, 0, Purpose::Verify));
        assert!(recs.iter().all(|r| r.is_valid(&c())));
        let deaths = recs.iter().filter(|r| r.tau == 1).count() as f64 / 1e5;
        assert!((deaths - arm.lambda).abs() < 0.005);
    }
}

#[test]
fn stage_assignment_frequencies() {
    let alloc = fixed_randomization(3);
    let mut rng = StreamKey::new(14, 0, 0, 0, Purpose::Allocate).stream();
    let mut totals = [0usize; 4];
    let stages = 100_000;
    for _ in 0..stages {
        let counts = assign_stage(&alloc, 200, &mut rng);
        assert_eq!(counts.iter().sum::<usize>(), 200);
        for (t, n) in totals.iter_mut().zip(&counts) {
            *t += n;
        }
    }
    for t in totals {
        let f = t as f64 / (stages * 200) as f64;
        assert!((f - 0.25).abs() < 0.001, "{f}");
    }
}

#[test]
fn gibbs_recovers_spike_weights_and_theta() {
    let truth = control_arm(0.3);
    let recs = records(&truth, 5000, StreamKey::new(15, 0, 0, 0, Purpose::Verify));
    let sample =
        gibbs_fit(&recs, &McmcConfig::default(), &c(), &mut StreamKey::new(15, 0, 0, 0, Purpose::Fit).stream());
    let m = sample.mean_draw();
    assert!((m.lambda - truth.lambda).abs() < 0.03, "{}", m.lambda);
    assert!((m.omega - truth.omega).abs() < 0.03, "{}", m.omega);
    let thetas = sample.thetas(&c());
    let mean = thetas.iter().sum::<f64>() / thetas.len() as f64;
    let sd = (thetas.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (thetas.len() - 1) as f64).sqrt();
    assert!((mean - theta_of(&truth, &c())).abs() < 3.0 * sd, "{mean} vs {}", theta_of(&truth, &c()));
}

#[test]
fn spike_weight_errors_shrink_with_n() {
    let truth = control_arm(0.3);
    let median_err = |n: usize| {
        let mut errs: Vec<[f64; 2]> = (0..30)
            .map(|rep| {
                let key = StreamKey::new(16, rep, n as u32, 0, Purpose::Verify);
                let fit = gibbs_fit(
                    &records(&truth, n, key),
                    &McmcConfig::default(),
                    &c(),
                    &mut key.with_purpose(Purpose::Fit).stream(),
                );
                let m = fit.mean_draw();
                [(m.lambda - truth.lambda).abs(), (m.omega - truth.omega).abs()]
            })
            .collect();
        [0, 1].map(|i| {
            errs.sort_by(|a, b| a[i].total_cmp(&b[i]));
            errs[15][i]
        })
    };
    let (small, large) = (median_err(500), median_err(5000));
    assert!(small[0] > large[0] && small[1] > large[1], "{small:?} vs {large:?}");
}

#[test]
fn all_death_data_gives_beta_51_1() {
    let recs = vec![PatientRecord::death(); 50];
    let mcmc = McmcConfig { iterations: 40_000, burn_in: 0, thin: 1 };
    let s = gibbs_fit(&recs, &mcmc, &c(), &mut StreamKey::new(17, 0, 0, 0, Purpose::Fit).stream());
    let mean = s.draws.iter().map(|d| d.lambda).sum::<f64>() / s.len() as f64;
    // Beta(51, 1) has sd about 0.019
    assert!((mean - 51.0 / 52.0).abs() < 5.0 * 0.019 / (s.len() as f64).sqrt());
}
