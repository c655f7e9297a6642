//! Super-Poisson (Gamma–Poisson) count distributions, the two-state mixture,
//! histogram overlap, sampling, and weighted moment fitting.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Cumulative mass retained when truncating a distribution's support.
pub const TAIL_MASS: f64 = 1e-10;

/// Relative over-dispersion floor below which a moment fit is clamped
/// to a near-Poisson law.
pub const DISPERSION_FLOOR: f64 = 1e-3;

const CLAMP_BETA: f64 = 1e3;
const CLAMP_MIN_MEAN: f64 = 1e-6;

/// Parameters of an over-dispersed photon-count law: a Poisson whose rate is
/// Gamma-distributed with shape `alpha` and rate `beta`. The marginal count is
/// negative-binomial with real-valued shape; its moments are
/// `mean = alpha/beta` and `var = alpha(1+beta)/beta^2`, so `var > mean` always.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct SuperPoissonParams {
    alpha: f64,
    beta: f64,
}

#[derive(Serialize, Deserialize)]
struct RawParams {
    alpha: f64,
    beta: f64,
}

impl TryFrom<RawParams> for SuperPoissonParams {
    type Error = Error;
    fn try_from(raw: RawParams) -> Result<Self> {
        SuperPoissonParams::new(raw.alpha, raw.beta)
    }
}

impl From<SuperPoissonParams> for RawParams {
    fn from(p: SuperPoissonParams) -> Self {
        RawParams {
            alpha: p.alpha,
            beta: p.beta,
        }
    }
}

impl SuperPoissonParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !alpha.is_finite() || alpha <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "alpha must be finite and > 0, got {alpha}"
            )));
        }
        if !beta.is_finite() || beta <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "beta must be finite and > 0, got {beta}"
            )));
        }
        Ok(Self { alpha, beta })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn mean(&self) -> f64 {
        self.alpha / self.beta
    }

    pub fn variance(&self) -> f64 {
        self.alpha * (1.0 + self.beta) / (self.beta * self.beta)
    }

    /// Log probability mass at count `n`, evaluated in log space:
    /// `lnГ(n+α) − lnГ(α) − lnГ(n+1) + α·ln(β/(1+β)) − n·ln(1+β)`.
    pub fn ln_pmf(&self, n: u32) -> f64 {
        let nf = n as f64;
        ln_gamma(nf + self.alpha) - ln_gamma(self.alpha) - ln_gamma(nf + 1.0)
            + self.alpha * (self.beta / (1.0 + self.beta)).ln()
            - nf * (1.0 + self.beta).ln()
    }

    /// Probability mass at count `n`.
    pub fn pmf(&self, n: u32) -> f64 {
        self.ln_pmf(n).exp()
    }

    /// Cumulative mass `P(X <= n)` via the regularized incomplete beta function.
    pub fn cdf(&self, n: u32) -> f64 {
        let p = self.beta / (1.0 + self.beta);
        beta_reg(self.alpha, n as f64 + 1.0, p)
    }

    /// Smallest `n` whose cumulative mass reaches `1 - TAIL_MASS`.
    pub fn support_bound(&self) -> u32 {
        let target = 1.0 - TAIL_MASS;
        let mut lo = 0u64;
        // The bulk ends within a few tens of standard deviations of the mean.
        let mut hi = (self.mean() + 20.0 * self.variance().sqrt()).ceil() as u64 + 16;
        while self.cdf(hi.min(u32::MAX as u64) as u32) < target {
            hi *= 2;
            if hi >= u32::MAX as u64 {
                return u32::MAX;
            }
        }
        while lo < hi {
            let mid = (lo + hi) / 2;
            if self.cdf(mid as u32) >= target {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        lo as u32
    }

    /// Draw one count: a Gamma(alpha, rate beta) intensity, then a Poisson count.
    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        let gamma = Gamma::new(self.alpha, 1.0 / self.beta).expect("validated parameters");
        let lambda: f64 = gamma.sample(rng);
        if lambda < 1e-300 {
            return 0;
        }
        let poisson = Poisson::new(lambda).expect("positive rate");
        let draw: f64 = poisson.sample(rng);
        draw.min(u32::MAX as f64) as u32
    }
}

/// Two-state count model: anchored dark law `g`, bright law `f`, and
/// bright-state occupation `l`. The observed count follows
/// `P(n|l) = (1-l) g(n) + l f(n)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureModel {
    pub g: SuperPoissonParams,
    pub f: SuperPoissonParams,
    occupation: f64,
}

impl MixtureModel {
    pub fn new(g: SuperPoissonParams, f: SuperPoissonParams, occupation: f64) -> Result<Self> {
        if !occupation.is_finite() || !(0.0..=1.0).contains(&occupation) {
            return Err(Error::Domain(format!(
                "occupation must lie in [0, 1], got {occupation}"
            )));
        }
        Ok(Self { g, f, occupation })
    }

    pub fn occupation(&self) -> f64 {
        self.occupation
    }

    /// Mixture probability mass `(1-l) g(n) + l f(n)`.
    pub fn pmf(&self, n: u32) -> f64 {
        (1.0 - self.occupation) * self.g.pmf(n) + self.occupation * self.f.pmf(n)
    }

    /// Support bound covering both component laws.
    pub fn support_bound(&self) -> u32 {
        self.g.support_bound().max(self.f.support_bound())
    }

    /// Draw `n_shots` counts: Bernoulli(l) picks the state, then the chosen
    /// law is sampled. Deterministic for a fixed seed.
    pub fn sample(&self, n_shots: usize, seed: u64) -> Result<ShotRecord> {
        if n_shots == 0 {
            return Err(Error::Domain("sample size must be >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let counts = (0..n_shots)
            .map(|_| {
                let bright = rng.gen::<f64>() < self.occupation;
                if bright {
                    self.f.sample_one(&mut rng)
                } else {
                    self.g.sample_one(&mut rng)
                }
            })
            .collect();
        ShotRecord::new(counts, 0, "synthetic")
    }
}

/// A sequence of per-shot photon counts for one region of interest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShotRecord {
    counts: Vec<u32>,
    roi_id: u32,
    exposure_tag: String,
}

impl ShotRecord {
    pub fn new(counts: Vec<u32>, roi_id: u32, exposure_tag: &str) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::Domain("shot record must hold at least one count".into()));
        }
        Ok(Self {
            counts,
            roi_id,
            exposure_tag: exposure_tag.to_string(),
        })
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn roi_id(&self) -> u32 {
        self.roi_id
    }

    pub fn exposure_tag(&self) -> &str {
        &self.exposure_tag
    }

    /// Bin an analog count to an integer, rounding half to even.
    pub fn bin_analog(value: f64) -> Result<u32> {
        if !value.is_finite() || value < -0.5 {
            return Err(Error::Domain(format!("count must be non-negative, got {value}")));
        }
        let rounded = round_ties_even(value).max(0.0);
        if rounded > u32::MAX as f64 {
            return Err(Error::Domain(format!("count {value} exceeds supported range")));
        }
        Ok(rounded as u32)
    }
}

fn round_ties_even(x: f64) -> f64 {
    let r = x.round();
    if (x - x.trunc()).abs() == 0.5 {
        // `f64::round` rounds half away from zero; push ties to the even side.
        if r % 2.0 != 0.0 {
            return r - (r - x).signum();
        }
    }
    r
}

/// Histogram overlap (Bhattacharyya coefficient) `Σ_n sqrt(f(n) g(n))`
/// over the union of truncated supports: 1 for identical laws, 0 for
/// perfectly separable ones.
pub fn overlap(f: &SuperPoissonParams, g: &SuperPoissonParams) -> f64 {
    let hi = f.support_bound().max(g.support_bound());
    let mut acc = 0.0;
    for n in 0..=hi {
        acc += (0.5 * (f.ln_pmf(n) + g.ln_pmf(n))).exp();
    }
    acc.min(1.0)
}

/// Result of a weighted moment fit, with a flag marking the near-Poisson clamp.
#[derive(Debug, Clone, Copy)]
pub struct MomentFit {
    pub params: SuperPoissonParams,
    /// Set when the sample showed no over-dispersion and the fit was clamped.
    pub clamped: bool,
}

/// Fit `(alpha, beta)` by weighted moments: `beta = m/(v-m)`, `alpha = m*beta`.
/// Samples with `v <= m(1+DISPERSION_FLOOR)` are clamped to a near-Poisson law.
pub fn fit_moments(counts: &[u32], weights: Option<&[f64]>) -> Result<MomentFit> {
    if counts.is_empty() {
        return Err(Error::Domain("moment fit needs at least one count".into()));
    }
    if let Some(w) = weights {
        if w.len() != counts.len() {
            return Err(Error::Domain(format!(
                "got {} weights for {} counts",
                w.len(),
                counts.len()
            )));
        }
        if w.iter().any(|&wi| !wi.is_finite() || wi < 0.0) {
            return Err(Error::Domain("weights must be finite and non-negative".into()));
        }
    }

    let wsum: f64 = match weights {
        Some(w) => w.iter().sum(),
        None => counts.len() as f64,
    };
    if wsum <= f64::MIN_POSITIVE {
        return Err(Error::DegenerateWeights { sum: wsum });
    }

    let mut mean = 0.0;
    for (i, &n) in counts.iter().enumerate() {
        let w = weights.map_or(1.0, |w| w[i]);
        mean += w * n as f64;
    }
    mean /= wsum;

    let mut var = 0.0;
    for (i, &n) in counts.iter().enumerate() {
        let w = weights.map_or(1.0, |w| w[i]);
        let d = n as f64 - mean;
        var += w * d * d;
    }
    var /= wsum;

    if var <= mean * (1.0 + DISPERSION_FLOOR) {
        let m = mean.max(CLAMP_MIN_MEAN);
        return Ok(MomentFit {
            params: SuperPoissonParams::new(m * CLAMP_BETA, CLAMP_BETA)?,
            clamped: true,
        });
    }

    let beta = mean / (var - mean);
    let alpha = mean * beta;
    Ok(MomentFit {
        params: SuperPoissonParams::new(alpha, beta)?,
        clamped: false,
    })
}

/// Collapse counts to ascending `(count, multiplicity)` pairs.
pub fn count_histogram(counts: &[u32]) -> Vec<(u32, u32)> {
    let mut sorted = counts.to_vec();
    sorted.sort_unstable();
    let mut out: Vec<(u32, u32)> = Vec::new();
    for n in sorted {
        match out.last_mut() {
            Some((value, mult)) if *value == n => *mult += 1,
            _ => out.push((n, 1)),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moment_relations() {
        let p = SuperPoissonParams::new(4.0, 2.0).unwrap();
        assert!((p.mean() - 2.0).abs() < 1e-12);
        assert!((p.variance() - 3.0).abs() < 1e-12);
        assert!(p.variance() > p.mean());
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(SuperPoissonParams::new(0.0, 1.0).is_err());
        assert!(SuperPoissonParams::new(1.0, -2.0).is_err());
        assert!(SuperPoissonParams::new(f64::NAN, 1.0).is_err());
        assert!(SuperPoissonParams::new(1.0, f64::INFINITY).is_err());
    }

    #[test]
    fn pmf_normalizes_over_truncated_support() {
        for (a, b) in [(1.0, 1.0), (4.0, 2.0), (104.0, 0.7494), (0.3, 0.05)] {
            let p = SuperPoissonParams::new(a, b).unwrap();
            let hi = p.support_bound();
            let total: f64 = (0..=hi).map(|n| p.pmf(n)).sum();
            assert!(
                (total - 1.0).abs() < 1e-9,
                "sum {total} for alpha={a} beta={b} (bound {hi})"
            );
        }
    }

    // Quadrature reference for the marginal mass: integrates the Poisson pmf
    // against the Gamma mixing density with Simpson's rule.
    fn gamma_poisson_quadrature(alpha: f64, beta: f64, n: u32) -> f64 {
        let ln_poisson = |lambda: f64, k: u32| -> f64 {
            k as f64 * lambda.ln() - lambda - ln_gamma(k as f64 + 1.0)
        };
        let ln_gamma_density = |lambda: f64| -> f64 {
            alpha * beta.ln() + (alpha - 1.0) * lambda.ln() - beta * lambda - ln_gamma(alpha)
        };
        let hi = (alpha / beta + 40.0 * (alpha.sqrt() / beta + 1.0)).max(60.0);
        let steps = 400_000;
        let h = hi / steps as f64;
        let integrand = |lambda: f64| -> f64 {
            if lambda <= 0.0 {
                return 0.0;
            }
            (ln_gamma_density(lambda) + ln_poisson(lambda, n)).exp()
        };
        let mut acc = integrand(hi);
        for i in 1..steps {
            let x = i as f64 * h;
            acc += integrand(x) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        acc * h / 3.0
    }

    #[test]
    fn pmf_matches_quadrature_oracle() {
        // alpha=1, beta=1: closed form gives pmf(0) = (beta/(1+beta))^alpha = 0.5.
        let p = SuperPoissonParams::new(1.0, 1.0).unwrap();
        let oracle = gamma_poisson_quadrature(1.0, 1.0, 0);
        assert!((oracle - 0.5).abs() < 1e-6, "quadrature said {oracle}");
        assert!((p.pmf(0) - 0.5).abs() < 1e-12);

        for n in [1u32, 3, 7] {
            let oracle = gamma_poisson_quadrature(2.5, 0.8, n);
            let p = SuperPoissonParams::new(2.5, 0.8).unwrap();
            assert!(
                (p.pmf(n) - oracle).abs() < 1e-7,
                "n={n}: pmf {} vs quadrature {oracle}",
                p.pmf(n)
            );
        }
    }

    #[test]
    fn mixture_endpoints_and_midpoint() {
        let g = SuperPoissonParams::new(2.0, 2.0).unwrap();
        let f = SuperPoissonParams::new(9.0, 3.0).unwrap();
        let dark = MixtureModel::new(g, f, 0.0).unwrap();
        let bright = MixtureModel::new(g, f, 1.0).unwrap();
        let half = MixtureModel::new(g, f, 0.5).unwrap();
        for n in 0..30 {
            assert_eq!(dark.pmf(n), g.pmf(n));
            assert_eq!(bright.pmf(n), f.pmf(n));
            assert!((half.pmf(n) - 0.5 * (f.pmf(n) + g.pmf(n))).abs() < 1e-15);
        }
    }

    #[test]
    fn mixture_rejects_out_of_range_occupation() {
        let g = SuperPoissonParams::new(2.0, 2.0).unwrap();
        let f = SuperPoissonParams::new(9.0, 3.0).unwrap();
        assert!(MixtureModel::new(g, f, 1.5).is_err());
        assert!(MixtureModel::new(g, f, -0.1).is_err());
        assert!(MixtureModel::new(g, f, f64::NAN).is_err());
    }

    #[test]
    fn overlap_identical_is_one() {
        let f = SuperPoissonParams::new(3.7, 1.2).unwrap();
        assert!((overlap(&f, &f) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn overlap_well_separated_is_tiny() {
        let g = SuperPoissonParams::new(2.0, 2.0).unwrap();
        let f = SuperPoissonParams::new(104.0, 0.7494).unwrap();
        assert!(overlap(&f, &g) < 1e-3);
    }

    #[test]
    fn sampling_dark_mean_matches() {
        let g = SuperPoissonParams::new(2.0, 2.0).unwrap();
        let f = SuperPoissonParams::new(9.0, 3.0).unwrap();
        let model = MixtureModel::new(g, f, 0.0).unwrap();
        let n = 100_000;
        let rec = model.sample(n, 7).unwrap();
        let mean: f64 = rec.counts().iter().map(|&c| c as f64).sum::<f64>() / n as f64;
        let se = (g.variance() / n as f64).sqrt();
        assert!(
            (mean - g.mean()).abs() < 5.0 * se,
            "mean {mean} vs {} (se {se})",
            g.mean()
        );
    }

    #[test]
    fn sampling_is_over_dispersed() {
        let g = SuperPoissonParams::new(2.0, 2.0).unwrap();
        let f = SuperPoissonParams::new(9.0, 3.0).unwrap();
        let model = MixtureModel::new(g, f, 1.0).unwrap();
        let rec = model.sample(100_000, 11).unwrap();
        let n = rec.len() as f64;
        let mean: f64 = rec.counts().iter().map(|&c| c as f64).sum::<f64>() / n;
        let var: f64 = rec
            .counts()
            .iter()
            .map(|&c| (c as f64 - mean).powi(2))
            .sum::<f64>()
            / n;
        assert!(var / mean > 1.0, "variance/mean {}", var / mean);
    }

    #[test]
    fn sampling_histogram_matches_mixture_pmf() {
        let g = SuperPoissonParams::new(2.0, 2.0).unwrap();
        let f = SuperPoissonParams::new(9.0, 3.0).unwrap();
        let model = MixtureModel::new(g, f, 0.5).unwrap();
        let n = 1_000_000usize;
        let rec = model.sample(n, 13).unwrap();
        let mut hist = vec![0u64; model.support_bound() as usize + 2];
        for &c in rec.counts() {
            hist[(c as usize).min(hist.len() - 1)] += 1;
        }
        for (k, &observed) in hist.iter().enumerate() {
            let p = model.pmf(k as u32);
            let se = (p * (1.0 - p) / n as f64).sqrt();
            if se == 0.0 {
                continue;
            }
            let freq = observed as f64 / n as f64;
            assert!(
                (freq - p).abs() <= 3.0 * se,
                "bin {k}: freq {freq} vs pmf {p} (se {se})"
            );
        }
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let g = SuperPoissonParams::new(2.0, 2.0).unwrap();
        let f = SuperPoissonParams::new(9.0, 3.0).unwrap();
        let model = MixtureModel::new(g, f, 0.4).unwrap();
        let a = model.sample(500, 42).unwrap();
        let b = model.sample(500, 42).unwrap();
        assert_eq!(a.counts(), b.counts());
        let c = model.sample(500, 43).unwrap();
        assert_ne!(a.counts(), c.counts());
    }

    #[test]
    fn sample_rejects_zero_shots() {
        let g = SuperPoissonParams::new(2.0, 2.0).unwrap();
        let f = SuperPoissonParams::new(9.0, 3.0).unwrap();
        let model = MixtureModel::new(g, f, 0.5).unwrap();
        assert!(model.sample(0, 1).is_err());
    }

    #[test]
    fn moment_fit_recovers_parameters() {
        let p = SuperPoissonParams::new(4.0, 2.0).unwrap();
        let model = MixtureModel::new(p, p, 1.0).unwrap();
        let rec = model.sample(100_000, 3).unwrap();
        let fit = fit_moments(rec.counts(), None).unwrap();
        assert!(!fit.clamped);
        assert!((fit.params.alpha() - 4.0).abs() / 4.0 < 0.05, "alpha {}", fit.params.alpha());
        assert!((fit.params.beta() - 2.0).abs() / 2.0 < 0.05, "beta {}", fit.params.beta());
    }

    #[test]
    fn moment_fit_clamps_constant_counts() {
        let fit = fit_moments(&[5, 5, 5, 5], None).unwrap();
        assert!(fit.clamped);
        assert!((fit.params.mean() - 5.0).abs() < 1e-9);
        // Near-Poisson: variance barely above the mean.
        assert!(fit.params.variance() / fit.params.mean() < 1.01);
    }

    #[test]
    fn moment_fit_uniform_weights_match_unweighted() {
        let counts = [0u32, 1, 3, 2, 8, 4, 1, 0, 6, 2];
        let w = vec![0.37; counts.len()];
        let a = fit_moments(&counts, None).unwrap();
        let b = fit_moments(&counts, Some(&w)).unwrap();
        assert!((a.params.alpha() - b.params.alpha()).abs() < 1e-9);
        assert!((a.params.beta() - b.params.beta()).abs() < 1e-9);
    }

    #[test]
    fn moment_fit_rejects_zero_weights() {
        let counts = [1u32, 2, 3];
        let w = [0.0, 0.0, 0.0];
        assert!(matches!(
            fit_moments(&counts, Some(&w)),
            Err(Error::DegenerateWeights { .. })
        ));
    }

    #[test]
    fn fit_sample_consistency_improves_with_n() {
        let truth = SuperPoissonParams::new(4.0, 2.0).unwrap();
        let model = MixtureModel::new(truth, truth, 1.0).unwrap();
        let mut errors = Vec::new();
        for (i, n) in [1_000usize, 10_000, 100_000].iter().enumerate() {
            let rec = model.sample(*n, 100 + i as u64).unwrap();
            let fit = fit_moments(rec.counts(), None).unwrap();
            let err = ((fit.params.alpha() - 4.0) / 4.0).abs()
                + ((fit.params.beta() - 2.0) / 2.0).abs();
            errors.push(err);
        }
        assert!(errors[0] > errors[1] && errors[1] > errors[2], "errors {errors:?}");
    }

    #[test]
    fn histogram_collapses_and_sorts() {
        let hist = count_histogram(&[7, 1, 1, 0, 7, 7]);
        assert_eq!(hist, vec![(0, 1), (1, 2), (7, 3)]);
    }

    #[test]
    fn analog_binning_rounds_half_to_even() {
        assert_eq!(ShotRecord::bin_analog(2.5).unwrap(), 2);
        assert_eq!(ShotRecord::bin_analog(3.5).unwrap(), 4);
        assert_eq!(ShotRecord::bin_analog(3.2).unwrap(), 3);
        assert_eq!(ShotRecord::bin_analog(0.0).unwrap(), 0);
        assert!(ShotRecord::bin_analog(-3.0).is_err());
        assert!(ShotRecord::bin_analog(f64::NAN).is_err());
    }

    #[test]
    fn support_bound_captures_tail() {
        let p = SuperPoissonParams::new(104.0, 0.7494).unwrap();
        let hi = p.support_bound();
        assert!(1.0 - p.cdf(hi) <= TAIL_MASS * 1.01);
        assert!(hi > 0 && 1.0 - p.cdf(hi - 1) > TAIL_MASS);
    }
}
