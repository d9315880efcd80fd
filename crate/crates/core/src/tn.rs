//! Truncated-normal machinery: tail-stable ratios, moments, densities and an
//! exact sampler.
//!
//! All ratios are computed from standardized bounds `A = (lower - mu) / sigma`,
//! `B = (upper - mu) / sigma`. When both bounds sit in the same tail the
//! normalizer `Phi(B) - Phi(A)` is rewritten through Mills ratios so that
//! windows far from `mu` (the control arm has `mu = -2.3` below a window that
//! starts at 0.6) never cancel to zero.

use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::outcome::TransformConstants;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

pub fn std_pdf(x: f64) -> f64 {
    if x.is_infinite() {
        return 0.0;
    }
    (-0.5 * x * x - LN_SQRT_2PI).exp()
}

fn ln_std_pdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

pub fn std_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Upper tail `1 - Phi(x)` without cancellation.
pub fn std_sf(x: f64) -> f64 {
    0.5 * erfc(x * FRAC_1_SQRT_2)
}

/// Mills ratio `(1 - Phi(x)) / phi(x)` for `x >= 0`.
pub fn mills_ratio(x: f64) -> f64 {
    debug_assert!(x >= 0.0);
    if x.is_infinite() {
        return 0.0;
    }
    if x < 5.0 {
        return std_sf(x) / std_pdf(x);
    }
    // Lentz evaluation of 1 / (x + 1/(x + 2/(x + 3/(x + ...)))).
    let tiny = 1e-300;
    let mut f = x;
    let mut c = x;
    let mut d = 0.0;
    for k in 1..500 {
        let a = k as f64;
        d = x + a * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = x + a / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    1.0 / f
}

/// Density ratios `phi(A)/Z` and `phi(B)/Z` plus the log normalizer `ln Z`.
#[derive(Debug, Clone, Copy)]
pub struct TruncationRatios {
    pub a: f64,
    pub b: f64,
    pub ra: f64,
    pub rb: f64,
    pub ln_z: f64,
    /// `R = (phi(B) - phi(A)) / Z`, computed without cancellation.
    pub r: f64,
}

impl TruncationRatios {
    pub fn new(mu: f64, sigma: f64, lower: f64, upper: f64) -> Self {
        let a = (lower - mu) / sigma;
        let b = (upper - mu) / sigma;
        // phi(B)/phi(A) - 1 = expm1(-(B - A)(B + A)/2)
        let width = (upper - lower) / sigma;
        if a >= 0.0 {
            let e = (-0.5 * width * (a + b)).exp();
            let denom = mills_ratio(a) - mills_ratio(b) * e;
            let ra = 1.0 / denom;
            let rb = e * ra;
            let r = ra * (-0.5 * width * (a + b)).exp_m1();
            Self { a, b, ra, rb, ln_z: ln_std_pdf(a) + denom.ln(), r }
        } else if b <= 0.0 {
            let (a2, b2) = (-b, -a);
            let e = (-0.5 * width * (a2 + b2)).exp();
            let denom = mills_ratio(a2) - mills_ratio(b2) * e;
            let rb = 1.0 / denom;
            let ra = e * rb;
            // R = rb - ra = rb * (1 - e)
            let r = -rb * (-0.5 * width * (a2 + b2)).exp_m1();
            Self { a, b, ra, rb, ln_z: ln_std_pdf(b) + denom.ln(), r }
        } else {
            let z =
                0.5 * (statrs::function::erf::erf(b * FRAC_1_SQRT_2) - statrs::function::erf::erf(a * FRAC_1_SQRT_2));
            let ra = std_pdf(a) / z;
            let rb = std_pdf(b) / z;
            let e = -0.5 * width * (a + b);
            let r = if e.abs() < 1.0 { ra * e.exp_m1() } else { rb - ra };
            Self { a, b, ra, rb, ln_z: z.ln(), r }
        }
    }

    /// `(A phi(A) - B phi(B)) / Z`; the standardized variance is `1 + W - R^2`.
    pub fn w(&self) -> f64 {
        // A ra - B rb = -A R - (B - A) rb
        -self.a * self.r - (self.b - self.a) * self.rb
    }

    /// Raw moments `E[X'^k]`, k = 1..4, of the standardized truncated variable.
    pub fn standardized_moments(&self) -> [f64; 4] {
        let (a, b, ra, rb) = (self.a, self.b, self.ra, self.rb);
        let m1 = -self.r;
        let m2 = 1.0 + self.w();
        let m3 = 2.0 * m1 + a * a * ra - b * b * rb;
        let m4 = 3.0 * m2 + a * a * a * ra - b * b * b * rb;
        [m1, m2, m3, m4]
    }
}

/// Mean-shift and variance ratios of a truncated normal and its first two moments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TnMoments {
    /// `R_TN = (phi(B) - phi(A)) / Z`; the mean is `mu - sigma * R_TN`.
    pub r_tn: f64,
    /// `WR_TN = (A phi(A) - B phi(B)) / Z`; the variance is `sigma^2 (1 + WR_TN - R_TN^2)`.
    pub wr_tn: f64,
    pub mean: f64,
    pub variance: f64,
}

pub fn tn_moments(mu: f64, sigma2: f64, constants: &TransformConstants) -> TnMoments {
    tn_moments_on(mu, sigma2, constants.lower, constants.upper)
}

pub fn tn_moments_on(mu: f64, sigma2: f64, lower: f64, upper: f64) -> TnMoments {
    debug_assert!(sigma2 > 0.0);
    let sigma = sigma2.sqrt();
    let t = TruncationRatios::new(mu, sigma, lower, upper);
    let r_tn = t.r;
    let wr_tn = t.w();
    let mean = (mu - sigma * r_tn).clamp(lower, upper);
    let variance = (sigma2 * (1.0 + wr_tn - r_tn * r_tn)).max(0.0);
    TnMoments { r_tn, wr_tn, mean, variance }
}

/// Log density of `TN(mu, sigma2; lower, upper)` at `x`; `-inf` outside the window.
pub fn tn_ln_density(x: f64, mu: f64, sigma2: f64, lower: f64, upper: f64) -> f64 {
    if x < lower || x > upper {
        return f64::NEG_INFINITY;
    }
    let sigma = sigma2.sqrt();
    let t = TruncationRatios::new(mu, sigma, lower, upper);
    let u = (x - mu) / sigma;
    ln_std_pdf(u) - sigma.ln() - t.ln_z
}

/// Draw from `TN(mu, sigma^2; lower, upper)`.
///
/// Uses the exact accept-reject schemes of Robert (1995): exponential
/// proposals for one-sided tail windows, uniform proposals for narrow
/// windows and plain normal proposals when the window covers the mode widely.
pub fn sample_tn<R: Rng + ?Sized>(rng: &mut R, mu: f64, sigma: f64, lower: f64, upper: f64) -> f64 {
    let a = (lower - mu) / sigma;
    let b = (upper - mu) / sigma;
    let z = sample_std(rng, a, b);
    (mu + sigma * z).clamp(lower, upper)
}

fn sample_std<R: Rng + ?Sized>(rng: &mut R, a: f64, b: f64) -> f64 {
    if a >= 0.0 {
        one_sided(rng, a, b)
    } else if b <= 0.0 {
        -one_sided(rng, -b, -a)
    } else if b - a >= (2.0 * PI).sqrt() {
        loop {
            let z: f64 = StandardNormal.sample(rng);
            if z >= a && z <= b {
                return z;
            }
        }
    } else {
        loop {
            let z = rng.random_range(a..b);
            let u: f64 = rng.random();
            if u < (-0.5 * z * z).exp() {
                return z;
            }
        }
    }
}

/// Standard normal restricted to `[a, b]` with `0 <= a < b`.
fn one_sided<R: Rng + ?Sized>(rng: &mut R, a: f64, b: f64) -> f64 {
    let rate = 0.5 * (a + (a * a + 4.0).sqrt());
    if (b - a) * rate <= 1.0 {
        loop {
            let z = rng.random_range(a..b);
            let u: f64 = rng.random();
            if u < (0.5 * (a * a - z * z)).exp() {
                return z;
            }
        }
    }
    let exp = Exp::new(rate).expect("positive rate");
    loop {
        let z = a + exp.sample(rng);
        if z > b {
            continue;
        }
        let u: f64 = rng.random();
        if u < (-0.5 * (z - rate) * (z - rate)).exp() {
            return z;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c() -> TransformConstants {
        TransformConstants::standard()
    }

    // Midpoint-rule quadrature over the window; independent of the ratio code.
    fn quad_moments(mu: f64, sigma: f64, lo: f64, hi: f64) -> (f64, f64) {
        let n = 200_000;
        let h = (hi - lo) / n as f64;
        let (mut z, mut m1, mut m2) = (0.0, 0.0, 0.0);
        for i in 0..n {
            let x = lo + (i as f64 + 0.5) * h;
            let w = (-0.5 * ((x - mu) / sigma).powi(2)).exp();
            z += w;
            m1 += w * x;
            m2 += w * x * x;
        }
        let mean = m1 / z;
        (mean, m2 / z - mean * mean)
    }

    #[test]
    fn mills_ratio_branches_agree() {
        for &x in &[4.9, 5.0, 5.1, 6.0] {
            let direct = std_sf(x) / std_pdf(x);
            assert_relative_eq!(mills_ratio(x), direct, max_relative = 1e-10);
        }
        // asymptotic 1/x - 1/x^3 + 3/x^5
        let x: f64 = 40.0;
        let series = 1.0 / x - 1.0 / x.powi(3) + 3.0 / x.powi(5) - 15.0 / x.powi(7);
        assert_relative_eq!(mills_ratio(x), series, max_relative = 1e-10);
    }

    #[test]
    fn symmetric_truncation_has_zero_shift() {
        let k = c();
        let mid = 0.5 * (k.lower + k.upper);
        for s2 in [0.01, 0.64, 4.0, 100.0] {
            let m = tn_moments(mid, s2, &k);
            assert!(m.r_tn.abs() < 1e-12, "{s2}: {}", m.r_tn);
            assert_relative_eq!(m.mean, mid, epsilon = 1e-12);
        }
    }

    #[test]
    fn degenerate_scale_limit() {
        let m = tn_moments(2.0, 1e-10, &c());
        assert_relative_eq!(m.mean, 2.0, epsilon = 1e-9);
        assert!(m.variance < 1e-9);
    }

    #[test]
    fn moments_match_quadrature() {
        let k = c();
        for &(mu, s) in &[(-2.3, 0.8), (-1.66, 0.8), (0.9, 0.3), (2.0, 1.5), (5.0, 0.7), (3.0, 0.05)] {
            let m = tn_moments(mu, s * s, &k);
            let (qm, qv) = quad_moments(mu, s, k.lower, k.upper);
            assert_relative_eq!(m.mean, qm, max_relative = 1e-7);
            assert_relative_eq!(m.variance, qv, max_relative = 1e-5);
        }
    }

    #[test]
    fn far_tail_windows_stay_finite() {
        let k = c();
        for mu in [-300.0, -40.0, -10.0, 10.0, 40.0, 300.0] {
            for s2 in [1e-12, 1e-4, 0.64, 1e4] {
                let m = tn_moments(mu, s2, &k);
                assert!(m.mean.is_finite() && m.variance.is_finite(), "{mu} {s2} {m:?}");
                assert!(m.mean >= k.lower && m.mean <= k.upper);
                let lp = tn_ln_density(k.upper, mu, s2, k.lower, k.upper);
                assert!(!lp.is_nan());
            }
        }
    }

    #[test]
    fn density_integrates_to_one() {
        let k = c();
        for &(mu, s2) in &[(-2.3, 0.64), (1.0, 0.2), (8.0, 1.0)] {
            let n = 100_000;
            let h = (k.upper - k.lower) / n as f64;
            let total: f64 =
                (0..n).map(|i| tn_ln_density(k.lower + (i as f64 + 0.5) * h, mu, s2, k.lower, k.upper).exp() * h).sum();
            assert_relative_eq!(total, 1.0, max_relative = 1e-6);
        }
    }

    #[test]
    fn sampler_matches_moments() {
        let k = c();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(mu, s) in &[(-2.3, 0.8), (2.0, 3.0), (1.9, 0.4), (6.0, 0.5), (0.6, 0.01)] {
            let n = 200_000;
            let xs: Vec<f64> = (0..n).map(|_| sample_tn(&mut rng, mu, s, k.lower, k.upper)).collect();
            let mean = xs.iter().sum::<f64>() / n as f64;
            let m = tn_moments(mu, s * s, &k);
            let se = (m.variance / n as f64).sqrt();
            assert!((mean - m.mean).abs() < 5.0 * se + 1e-12, "{mu} {s}: {mean} vs {}", m.mean);
            assert!(xs.iter().all(|&x| x >= k.lower && x <= k.upper));
        }
    }
}
