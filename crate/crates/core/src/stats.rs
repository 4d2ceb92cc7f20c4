//! Reference laws, goodness-of-fit tests and autocorrelation estimates.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::gamma::{gamma_lr, ln_gamma};

use crate::error::{Error, Result};

/// Stationary laws of the velocity processes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReferenceLaw {
    /// Angle `theta` in `[-pi/2, pi/2]` from the inward normal, density `cos(theta)/2`.
    CosineAngle,
    /// Speed of the post-collision Maxwell-Boltzmann law in `m` dimensions:
    /// density proportional to `s^m exp(-s^2 / 2 sigma2)`.
    MbSpeed { m: usize, sigma2: f64 },
    /// Post-collision Maxwell-Boltzmann law on the lower half-space of `R^m`:
    /// density proportional to `|v_m| exp(-|v|^2 / 2 sigma2)`.
    MbFull { m: usize, sigma2: f64 },
    /// Normalized Lebesgue measure on the unit ball of `R^n`.
    UniformBall { n: usize },
}

impl ReferenceLaw {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ReferenceLaw::CosineAngle => Ok(()),
            ReferenceLaw::MbSpeed { m, sigma2 } | ReferenceLaw::MbFull { m, sigma2 } => {
                if m == 0 {
                    return Err(Error::invalid("m", "dimension must be at least 1"));
                }
                if !(sigma2.is_finite() && sigma2 > 0.0) {
                    return Err(Error::invalid("sigma2", "must be positive"));
                }
                Ok(())
            }
            ReferenceLaw::UniformBall { n } => {
                if n == 0 {
                    Err(Error::invalid("n", "dimension must be at least 1"))
                } else {
                    Ok(())
                }
            }
        }
    }

    /// Dimension of a sample.
    pub fn dim(&self) -> usize {
        match *self {
            ReferenceLaw::CosineAngle | ReferenceLaw::MbSpeed { .. } => 1,
            ReferenceLaw::MbFull { m, .. } => m,
            ReferenceLaw::UniformBall { n } => n,
        }
    }

    /// Density with respect to Lebesgue measure at `x` (length [`Self::dim`]).
    pub fn density(&self, x: &[f64]) -> f64 {
        match *self {
            ReferenceLaw::CosineAngle => {
                let t = x[0];
                if t.abs() <= 0.5 * PI {
                    0.5 * t.cos()
                } else {
                    0.0
                }
            }
            ReferenceLaw::MbSpeed { m, sigma2 } => {
                let s = x[0];
                if s <= 0.0 {
                    return 0.0;
                }
                let a = 0.5 * (m as f64 + 1.0);
                let ln_norm = (a - 1.0) * 2f64.ln() + a * sigma2.ln() + ln_gamma(a);
                (m as f64 * s.ln() - s * s / (2.0 * sigma2) - ln_norm).exp()
            }
            ReferenceLaw::MbFull { m, sigma2 } => {
                let vm = x[m - 1];
                if vm >= 0.0 {
                    return 0.0;
                }
                let r2: f64 = x.iter().map(|v| v * v).sum();
                let norm = (2.0 * PI * sigma2).powf(0.5 * (m as f64 - 1.0)) * sigma2;
                -vm * (-r2 / (2.0 * sigma2)).exp() / norm
            }
            ReferenceLaw::UniformBall { n } => {
                let r2: f64 = x.iter().map(|v| v * v).sum();
                if r2 < 1.0 {
                    1.0 / unit_ball_volume(n)
                } else {
                    0.0
                }
            }
        }
    }

    /// Cumulative distribution function of a one-dimensional law; for
    /// `UniformBall` the law of the radius.
    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            ReferenceLaw::CosineAngle => {
                0.5 * (1.0 + x.clamp(-0.5 * PI, 0.5 * PI).sin())
            }
            ReferenceLaw::MbSpeed { m, sigma2 } => {
                if x <= 0.0 {
                    0.0
                } else {
                    gamma_lr(0.5 * (m as f64 + 1.0), x * x / (2.0 * sigma2))
                }
            }
            ReferenceLaw::MbFull { m, sigma2 } => ReferenceLaw::MbSpeed { m, sigma2 }.cdf(x),
            ReferenceLaw::UniformBall { n } => x.clamp(0.0, 1.0).powi(n as i32),
        }
    }

    /// Draws one sample.
    ///
    /// The Maxwell-Boltzmann laws are sampled exactly: horizontal components are
    /// Gaussian, and `v_m = -sigma sqrt(2E)` with `E` standard exponential has
    /// density proportional to `|v_m| exp(-v_m^2 / 2 sigma2)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match *self {
            ReferenceLaw::CosineAngle => vec![sample_cosine_angle(rng)],
            ReferenceLaw::MbSpeed { m, sigma2 } => {
                let v = sample_mb_full(m, sigma2, rng);
                vec![v.iter().map(|x| x * x).sum::<f64>().sqrt()]
            }
            ReferenceLaw::MbFull { m, sigma2 } => sample_mb_full(m, sigma2, rng),
            ReferenceLaw::UniformBall { n } => sample_uniform_ball(n, rng),
        }
    }
}

pub fn unit_ball_volume(n: usize) -> f64 {
    let h = 0.5 * n as f64;
    (h * PI.ln() - ln_gamma(h + 1.0)).exp()
}

/// `theta = arcsin(2U - 1)` has density `cos(theta)/2`.
pub fn sample_cosine_angle<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    (2.0 * u - 1.0).asin()
}

pub fn sample_mb_full<R: Rng + ?Sized>(m: usize, sigma2: f64, rng: &mut R) -> Vec<f64> {
    let sigma = sigma2.sqrt();
    let mut v: Vec<f64> = (0..m - 1)
        .map(|_| sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let e: f64 = Exp1.sample(rng);
    v.push(-sigma * (2.0 * e).sqrt());
    v
}

pub fn sample_uniform_ball<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let g: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let u: f64 = rng.random();
        let r = u.powf(1.0 / n as f64);
        return g.into_iter().map(|x| x * r / norm).collect();
    }
}

/// Cosine law of directions with fixed `speed` on the lower hemisphere of
/// `R^m`: a uniform point of the unit ball of `R^{m-1}` lifted to the sphere.
pub fn sample_cosine_velocity<R: Rng + ?Sized>(m: usize, speed: f64, rng: &mut R) -> Vec<f64> {
    let mut v = if m > 1 {
        sample_uniform_ball(m - 1, rng)
    } else {
        Vec::new()
    };
    let r2: f64 = v.iter().map(|x| x * x).sum();
    v.push(-(1.0 - r2).max(0.0).sqrt());
    v.iter_mut().for_each(|x| *x *= speed);
    v
}

/// Angle from the inward normal of a two-dimensional velocity `(v_1, v_2)`, `v_2 < 0`.
pub fn exit_angle(v: &[f64]) -> f64 {
    v[0].atan2(-v[1])
}

/// Outcome of a goodness-of-fit test.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GofReport {
    pub test: String,
    pub statistic: f64,
    pub n: usize,
    /// Sample size used for the critical values (smaller than `n` for correlated samples).
    pub effective_n: f64,
    pub p_value: f64,
    pub pass_05: bool,
    pub pass_01: bool,
    pub details: String,
}

impl GofReport {
    pub fn passes(&self, significance: f64) -> bool {
        self.p_value > significance
    }
}

/// Survival function `P(K > x)` of the Kolmogorov distribution.
pub fn kolmogorov_survival(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * x * x).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-17 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Asymptotic critical values of `sqrt(n) D` at levels 0.05 and 0.01.
pub const KS_CRITICAL_05: f64 = 1.358;
pub const KS_CRITICAL_01: f64 = 1.628;

/// Maximum distance `sup |F_n - F|` between the empirical cdf of `samples` and `cdf`.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    d
}

/// One-sample Kolmogorov-Smirnov test with asymptotic critical values.
pub fn ks_test(samples: &[f64], cdf: impl Fn(f64) -> f64) -> Result<GofReport> {
    ks_test_effective(samples, cdf, samples.len() as f64)
}

/// Kolmogorov-Smirnov test where the critical values use `effective_n`
/// instead of the raw sample count, for autocorrelated samples.
pub fn ks_test_effective(
    samples: &[f64],
    cdf: impl Fn(f64) -> f64,
    effective_n: f64,
) -> Result<GofReport> {
    if samples.len() < 100 {
        return Err(Error::invalid("samples", "KS test needs at least 100 samples"));
    }
    let d = ks_statistic(samples, cdf);
    let ne = effective_n.min(samples.len() as f64);
    let scaled = ne.sqrt() * d;
    Ok(GofReport {
        test: "kolmogorov-smirnov".into(),
        statistic: d,
        n: samples.len(),
        effective_n: ne,
        p_value: kolmogorov_survival(scaled),
        pass_05: scaled < KS_CRITICAL_05,
        pass_01: scaled < KS_CRITICAL_01,
        details: format!("sqrt(n_eff) * D = {scaled:.4}"),
    })
}

/// Two-sample Kolmogorov-Smirnov distance and test.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<GofReport> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("samples", "both samples must be nonempty"));
    }
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(|p, q| p.total_cmp(q));
    y.sort_by(|p, q| p.total_cmp(q));
    let (n, m) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < x.len() && j < y.len() {
        let t = x[i].min(y[j]);
        while i < x.len() && x[i] <= t {
            i += 1;
        }
        while j < y.len() && y[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    let ne = n * m / (n + m);
    let scaled = ne.sqrt() * d;
    Ok(GofReport {
        test: "kolmogorov-smirnov-two-sample".into(),
        statistic: d,
        n: x.len() + y.len(),
        effective_n: ne,
        p_value: kolmogorov_survival(scaled),
        pass_05: scaled < KS_CRITICAL_05,
        pass_01: scaled < KS_CRITICAL_01,
        details: format!("sizes {} and {}", x.len(), y.len()),
    })
}

/// Chi-square test of points against the uniform law on the unit ball.
///
/// Radial bins have edges `(j/J)^{1/n}` so every shell has equal volume; the
/// angular coordinate is `atan2(x_2, x_1)` split into equal sectors (for
/// `n = 1`, the sign of the point).
pub fn uniform_ball_chi2(
    points: &[Vec<f64>],
    radial_bins: usize,
    angular_bins: usize,
) -> Result<GofReport> {
    uniform_ball_chi2_effective(points, radial_bins, angular_bins, 1.0)
}

/// As [`uniform_ball_chi2`], with the statistic deflated by the integrated
/// autocorrelation time `tau` of the sample sequence.
pub fn uniform_ball_chi2_effective(
    points: &[Vec<f64>],
    radial_bins: usize,
    angular_bins: usize,
    tau: f64,
) -> Result<GofReport> {
    if points.is_empty() {
        return Err(Error::invalid("points", "need at least one point"));
    }
    if radial_bins == 0 || angular_bins == 0 {
        return Err(Error::invalid("bins", "bin counts must be positive"));
    }
    if !(tau >= 1.0) {
        return Err(Error::invalid("tau", "autocorrelation time must be at least 1"));
    }
    let n = points[0].len();
    if n == 0 {
        return Err(Error::invalid("points", "points must have positive dimension"));
    }
    let angular = if n == 1 { angular_bins.min(2) } else { angular_bins };
    let cells = radial_bins * angular;
    let mut counts = vec![0u64; cells];
    for p in points {
        if p.len() != n {
            return Err(Error::invalid("points", "inconsistent dimensions"));
        }
        let r = p.iter().map(|x| x * x).sum::<f64>().sqrt();
        if r > 1.0 + 1e-12 {
            return Err(Error::Domain(format!("point {p:?} outside the unit ball")));
        }
        let rb = ((r.min(1.0).powi(n as i32) * radial_bins as f64) as usize).min(radial_bins - 1);
        let ab = if angular == 1 {
            0
        } else if n == 1 {
            usize::from(p[0] >= 0.0)
        } else {
            let phi = p[1].atan2(p[0]) + PI;
            ((phi / (2.0 * PI) * angular as f64) as usize).min(angular - 1)
        };
        counts[rb * angular + ab] += 1;
    }
    let expected = points.len() as f64 / cells as f64;
    let raw: f64 = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    let statistic = raw / tau;
    let dof = cells.saturating_sub(1);
    let p_value = if dof == 0 {
        1.0
    } else {
        1.0 - ChiSquared::new(dof as f64).expect("positive dof").cdf(statistic)
    };
    Ok(GofReport {
        test: "uniform-ball-chi-square".into(),
        statistic,
        n: points.len(),
        effective_n: points.len() as f64 / tau,
        p_value,
        pass_05: p_value > 0.05,
        pass_01: p_value > 0.01,
        details: format!("{radial_bins} radial x {angular} angular bins, {dof} dof, tau {tau:.3}"),
    })
}

/// Integrated autocorrelation time estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AutocorrelationTime {
    pub tau: f64,
    /// Lags summed before the initial positive sequence stopped.
    pub window: usize,
    /// Set for series without variance; `tau` is then the series length.
    pub degenerate: bool,
}

/// Integrated autocorrelation time `1 + 2 sum_k rho(k)` with the sum truncated
/// by Geyer's initial positive sequence rule. Autocovariances are computed by FFT.
pub fn autocorrelation_time(series: &[f64]) -> AutocorrelationTime {
    let n = series.len();
    let degenerate = AutocorrelationTime {
        tau: n as f64,
        window: 0,
        degenerate: true,
    };
    if n < 2 {
        return degenerate;
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let size = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = series
        .iter()
        .map(|x| Complex::new(x - mean, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(size)
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(size).process(&mut buf);
    for z in buf.iter_mut() {
        *z = Complex::new(z.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(size).process(&mut buf);
    let c0 = buf[0].re;
    if !(c0 > 1e-300 * n as f64) || !c0.is_finite() {
        return degenerate;
    }
    let rho = |k: usize| buf[k].re / c0;
    let mut tau = -1.0;
    let mut prev = f64::INFINITY;
    let mut k = 0;
    while 2 * k + 1 < n {
        let pair = rho(2 * k) + rho(2 * k + 1);
        if pair <= 0.0 {
            break;
        }
        // Initial monotone sequence.
        let pair = pair.min(prev);
        tau += 2.0 * pair;
        prev = pair;
        k += 1;
    }
    AutocorrelationTime {
        tau: tau.max(1.0),
        window: 2 * k,
        degenerate: false,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramBin {
    pub left: f64,
    pub right: f64,
    pub count: u64,
    pub expected: f64,
}

/// Equal-width histogram on `[lo, hi)` with expected counts from `cdf`.
pub fn histogram(
    samples: &[f64],
    bins: usize,
    lo: f64,
    hi: f64,
    cdf: impl Fn(f64) -> f64,
) -> Result<Vec<HistogramBin>> {
    if bins == 0 || !(hi > lo) {
        return Err(Error::invalid("bins", "need a positive bin count and hi > lo"));
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0u64; bins];
    for &x in samples {
        if x >= lo && x < hi {
            let b = (((x - lo) / width) as usize).min(bins - 1);
            counts[b] += 1;
        }
    }
    let n = samples.len() as f64;
    Ok((0..bins)
        .map(|b| {
            let left = lo + b as f64 * width;
            let right = if b + 1 == bins { hi } else { left + width };
            HistogramBin {
                left,
                right,
                count: counts[b],
                expected: n * (cdf(right) - cdf(left)),
            }
        })
        .collect())
}

/// Mean and standard error of the mean, with the error inflated by `sqrt(tau)`.
pub fn mean_with_error(series: &[f64], tau: f64) -> (f64, f64) {
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let var = series.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, (var * tau.max(1.0) / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let n = n + n % 2;
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(a + i as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn densities_integrate_to_one() {
        let c = simpson(|t| ReferenceLaw::CosineAngle.density(&[t]), -0.5 * PI, 0.5 * PI, 2000);
        assert!((c - 1.0).abs() < 1e-8);
        for m in 1..5 {
            let law = ReferenceLaw::MbSpeed { m, sigma2: 0.7 };
            let s = simpson(|x| law.density(&[x]), 0.0, 20.0, 20000);
            assert!((s - 1.0).abs() < 1e-8, "m={m}: {s}");
        }
        let full = ReferenceLaw::MbFull { m: 2, sigma2: 0.5 };
        let total = simpson(
            |y| simpson(|x| full.density(&[x, y]), -10.0, 10.0, 800),
            -10.0,
            0.0,
            800,
        );
        assert!((total - 1.0).abs() < 1e-8);
        let disc = ReferenceLaw::UniformBall { n: 2 }.density(&[0.1, 0.2]);
        assert!((disc - 1.0 / PI).abs() < 1e-15);
    }

    #[test]
    fn speed_cdf_matches_density() {
        let law = ReferenceLaw::MbSpeed { m: 2, sigma2: 0.5 };
        for &x in &[0.3, 0.8, 1.5, 2.5] {
            let q = simpson(|s| law.density(&[s]), 0.0, x, 4000);
            assert!((q - law.cdf(x)).abs() < 1e-10);
        }
        // Closed form for the two-dimensional post-collision speed law.
        let beta_m1: f64 = 2.0;
        let s: f64 = 0.9;
        let closed = (2.0 / PI).sqrt() * beta_m1.powf(1.5) * s * s * (-beta_m1 * s * s / 2.0).exp();
        assert!((law.density(&[s]) - closed).abs() < 1e-14);
    }

    #[test]
    fn mb_full_factorizes_into_angle_and_speed() {
        let sigma2 = 0.5;
        let full = ReferenceLaw::MbFull { m: 2, sigma2 };
        let speed = ReferenceLaw::MbSpeed { m: 2, sigma2 };
        for &s in &[0.2, 0.7, 1.3] {
            for &t in &[-1.2f64, -0.3, 0.0, 0.9] {
                let v = [s * t.sin(), -s * t.cos()];
                let joint = full.density(&v) * s;
                let product = speed.density(&[s]) * ReferenceLaw::CosineAngle.density(&[t]);
                assert!((joint - product).abs() < 1e-13);
            }
        }
        let marginal = simpson(
            |t| full.density(&[0.8 * t.sin(), -0.8 * t.cos()]) * 0.8,
            -0.5 * PI,
            0.5 * PI,
            2000,
        );
        assert!((marginal - speed.density(&[0.8])).abs() < 1e-10);
    }

    #[test]
    fn samplers_pass_their_own_ks_tests() {
        let laws = [
            ReferenceLaw::CosineAngle,
            ReferenceLaw::MbSpeed { m: 1, sigma2: 1.0 },
            ReferenceLaw::MbSpeed { m: 2, sigma2: 0.5 },
            ReferenceLaw::MbSpeed { m: 3, sigma2: 2.0 },
            ReferenceLaw::UniformBall { n: 3 },
        ];
        for (i, law) in laws.iter().enumerate() {
            let mut rng = stream_rng(11, i as u64);
            let xs: Vec<f64> = (0..100_000)
                .map(|_| {
                    let s = law.sample(&mut rng);
                    match law {
                        ReferenceLaw::UniformBall { .. } => s.iter().map(|x| x * x).sum::<f64>().sqrt(),
                        _ => s[0],
                    }
                })
                .collect();
            let report = ks_test(&xs, |x| law.cdf(x)).unwrap();
            assert!(report.pass_01, "{law:?}: {report:?}");
        }
    }

    #[test]
    fn mb_full_angle_is_cosine() {
        let mut rng = stream_rng(5, 0);
        let law = ReferenceLaw::MbFull { m: 2, sigma2: 0.5 };
        let angles: Vec<f64> = (0..100_000).map(|_| exit_angle(&law.sample(&mut rng))).collect();
        assert!(ks_test(&angles, |t| ReferenceLaw::CosineAngle.cdf(t)).unwrap().pass_01);
    }

    #[test]
    fn ks_has_power() {
        let mut rng = stream_rng(3, 0);
        let xs: Vec<f64> = (0..100_000).map(|_| (rng.random::<f64>() - 0.5) * PI).collect();
        let r = ks_test(&xs, |t| ReferenceLaw::CosineAngle.cdf(t)).unwrap();
        assert!(!r.pass_01);
    }

    #[test]
    fn ks_degenerate_sample() {
        let xs = vec![0.3; 200];
        let f = |x: f64| x.clamp(0.0, 1.0);
        let r = ks_test(&xs, f).unwrap();
        assert!((r.statistic - 0.7f64.max(0.3)).abs() < 1e-15);
        assert!(ks_test(&[0.1; 10], f).is_err());
    }

    #[test]
    fn kolmogorov_critical_values() {
        assert!((kolmogorov_survival(KS_CRITICAL_05) - 0.05).abs() < 1e-3);
        assert!((kolmogorov_survival(KS_CRITICAL_01) - 0.01).abs() < 1e-3);
    }

    #[test]
    fn two_sample_ks() {
        let mut rng = stream_rng(9, 0);
        let a: Vec<f64> = (0..5000).map(|_| rng.random::<f64>()).collect();
        let b: Vec<f64> = (0..5000).map(|_| rng.random::<f64>()).collect();
        assert!(ks_two_sample(&a, &b).unwrap().pass_01);
        let c: Vec<f64> = b.iter().map(|x| x * 0.9).collect();
        assert!(!ks_two_sample(&a, &c).unwrap().pass_01);
        assert_eq!(ks_two_sample(&a, &a).unwrap().statistic, 0.0);
    }

    #[test]
    fn uniform_ball_chi2_calibration_and_power() {
        let mut rng = stream_rng(21, 0);
        let cube: Vec<Vec<f64>> = std::iter::repeat_with(|| {
            vec![2.0 * rng.random::<f64>() - 1.0, 2.0 * rng.random::<f64>() - 1.0]
        })
        .filter(|p| p[0] * p[0] + p[1] * p[1] < 1.0)
        .take(100_000)
        .collect();
        assert!(uniform_ball_chi2(&cube, 10, 8).unwrap().pass_01);

        let clipped: Vec<Vec<f64>> = std::iter::repeat_with(|| {
            vec![
                0.4 * rng.sample::<f64, _>(StandardNormal),
                0.4 * rng.sample::<f64, _>(StandardNormal),
            ]
        })
        .filter(|p| p[0] * p[0] + p[1] * p[1] < 1.0)
        .take(100_000)
        .collect();
        assert!(!uniform_ball_chi2(&clipped, 10, 8).unwrap().pass_01);

        let single = uniform_ball_chi2(&clipped, 1, 1).unwrap();
        assert!(single.pass_01 && single.statistic == 0.0);

        let line: Vec<Vec<f64>> = (0..20_000).map(|_| sample_uniform_ball(1, &mut rng)).collect();
        assert!(uniform_ball_chi2(&line, 10, 4).unwrap().pass_01);
    }

    #[test]
    fn autocorrelation_of_iid_and_ar1() {
        let mut rng = stream_rng(31, 0);
        let iid: Vec<f64> = (0..100_000).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let t = autocorrelation_time(&iid);
        assert!((t.tau - 1.0).abs() < 0.2, "{t:?}");

        let phi = 0.9;
        let mut x = 0.0;
        let ar: Vec<f64> = (0..200_000)
            .map(|_| {
                x = phi * x + rng.sample::<f64, _>(StandardNormal);
                x
            })
            .collect();
        let t = autocorrelation_time(&ar);
        assert!((t.tau - 19.0).abs() < 0.3 * 19.0, "{t:?}");

        let flat = autocorrelation_time(&[2.0; 1000]);
        assert!(flat.degenerate && flat.tau == 1000.0);
    }

    #[test]
    fn histogram_counts() {
        let xs = [0.05, 0.15, 0.15, 0.95, 1.5];
        let h = histogram(&xs, 10, 0.0, 1.0, |x| x).unwrap();
        assert_eq!(h[0].count, 1);
        assert_eq!(h[1].count, 2);
        assert_eq!(h[9].count, 1);
        assert!((h[3].expected - 0.5).abs() < 1e-12);
    }

    #[test]
    fn cosine_velocity_lies_on_sphere() {
        let mut rng = stream_rng(1, 1);
        for m in 1..4 {
            for _ in 0..100 {
                let v = sample_cosine_velocity(m, 2.0, &mut rng);
                let s = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                assert!((s - 2.0).abs() < 1e-12 && v[m - 1] <= 0.0);
            }
        }
    }
}
