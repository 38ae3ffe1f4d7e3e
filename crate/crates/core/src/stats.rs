//! Statistics of sampled spectra: counting step functions, sup-deviation
//! statistics over log-width bands, CLT standardizations, KS distances,
//! band coverage fractions, and exponential-moment ratios.

use nalgebra::RealField;
use rand_distr::{Distribution, StandardNormal};

use crate::ensemble::{sample_many, EnsembleConfig, SpectrumSample};
use crate::error::{Error, Result};
use crate::num::{r64, Real};
use crate::scaling::{counting_slope, point_slope, sigma2, ModelParams};

/// Right-continuous counting function of a finite set of positive points:
/// `N(x)` = number of jumps in `[0, x]`, so `N(x_k) = k`.
#[derive(Clone, Debug, PartialEq)]
pub struct StepFunction<R> {
    jumps: Vec<R>,
}

impl<R: Real> StepFunction<R> {
    /// Builds the counting function from explicit jump locations.
    ///
    /// Jumps must be finite, strictly positive and strictly increasing: a
    /// repeated location would merge two unit jumps and corrupt every
    /// statistic downstream.
    pub fn from_jumps(jumps: Vec<R>) -> Result<Self> {
        for &j in &jumps {
            if !j.is_finite() || !(j > R::zero()) {
                return Err(Error::input(format!(
                    "step function jumps must be finite and positive, got {j}"
                )));
            }
        }
        for w in jumps.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::input(format!(
                    "step function jumps must be strictly increasing ({} then {})",
                    w[0], w[1]
                )));
            }
        }
        Ok(StepFunction { jumps })
    }

    pub fn jumps(&self) -> &[R] {
        &self.jumps
    }

    /// `N(x)`: number of jumps `<= x` (closed on the right).
    pub fn value_at(&self, x: R) -> usize {
        self.jumps.partition_point(|&j| j <= x)
    }

    /// Left limit `N(x^-)`: number of jumps `< x`.
    pub fn value_before(&self, x: R) -> usize {
        self.jumps.partition_point(|&j| j < x)
    }
}

/// Counting function of the magnitudes of a spectrum sample.
///
/// Errors on repeated magnitudes (a degenerate draw), which would make the
/// counting function jump by more than one.
pub fn counting_step<R: Real>(sample: &SpectrumSample<R>) -> Result<StepFunction<R>> {
    if sample.is_degenerate() {
        return Err(Error::input(
            "sample has repeated magnitudes; counting function would be degenerate".to_string(),
        ));
    }
    StepFunction::from_jumps(sample.magnitudes().to_vec())
}

/// Which deviation statistic a [`SupStatistic`] describes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SupKind {
    Counting,
    Points,
}

/// A sup-deviation value together with where it was attained (or approached)
/// and the window it was taken over.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SupStatistic<R> {
    pub value: R,
    /// Abscissa `x` (counting) or index `k` (points) realizing the sup; for
    /// the counting statistic the sup may only be approached, e.g. as `x`
    /// decreases to the left window edge.
    pub arg_location: R,
    pub kind: SupKind,
    pub window: (R, R),
}

/// Sup over `x` in `(s, x_max]` of `|N(x) - mu(x)| / ln x`.
///
/// Exact up to roundoff: on every interval where `N` is constant the ratio
/// is maximized at an interval endpoint (the positive part is decreasing,
/// the negative part has a single interior minimum), so evaluating the limit
/// at `s`, both one-sided values at every jump, and the right edge captures
/// the sup. A 32-point refinement grid per interval guards the cases where
/// the monotonicity hypotheses fail.
pub fn sup_counting_deviation<R: Real>(
    step: &StepFunction<R>,
    params: &ModelParams<R>,
    s: R,
    x_max: R,
) -> Result<SupStatistic<R>> {
    if !(s > R::one()) || !s.is_finite() {
        return Err(Error::domain(format!(
            "sup window must start above 1 (ln changes sign), got s = {s}"
        )));
    }
    if !(x_max > s) || !x_max.is_finite() {
        return Err(Error::domain(format!(
            "sup window must satisfy x_max > s, got ({s}, {x_max})"
        )));
    }

    let deviation = |count: usize, x: R| -> Result<R> {
        Ok((r64::<R>(count as f64) - params.mu(x)?).abs() / x.ln())
    };

    let mut best_value = R::neg_infinity();
    let mut best_loc = s;
    let mut consider = |value: R, loc: R| {
        if value > best_value {
            best_value = value;
            best_loc = loc;
        }
    };

    // Right limit at the left window edge: for x just above s the count is
    // N(s) by right continuity.
    consider(deviation(step.value_at(s), s)?, s);

    // Jump points strictly inside the window, both one-sided values, plus a
    // refinement grid over each constant interval.
    let jumps = step.jumps();
    let lo_idx = jumps.partition_point(|&j| j <= s);
    let hi_idx = jumps.partition_point(|&j| j <= x_max);
    let mut interval_start = s;
    for (idx, &x_j) in jumps.iter().enumerate().take(hi_idx).skip(lo_idx) {
        consider(deviation(idx, x_j)?, x_j); // left limit: count before the jump
        consider(deviation(idx + 1, x_j)?, x_j); // value at the jump
        refine_interval(interval_start, x_j, idx, &deviation, &mut consider)?;
        interval_start = x_j;
    }
    consider(deviation(step.value_at(x_max), x_max)?, x_max);
    refine_interval(interval_start, x_max, hi_idx, &deviation, &mut consider)?;

    Ok(SupStatistic {
        value: best_value,
        arg_location: best_loc,
        kind: SupKind::Counting,
        window: (s, x_max),
    })
}

const REFINE_POINTS: usize = 32;

fn refine_interval<R: Real>(
    a: R,
    b: R,
    count: usize,
    deviation: &impl Fn(usize, R) -> Result<R>,
    consider: &mut impl FnMut(R, R),
) -> Result<()> {
    if !(b > a) {
        return Ok(());
    }
    let steps = r64::<R>((REFINE_POINTS + 1) as f64);
    for i in 1..=REFINE_POINTS {
        let t = a + (b - a) * r64::<R>(i as f64) / steps;
        consider(deviation(count, t)?, t);
    }
    Ok(())
}

/// Max over `k` in `[k0, k_max]` of `|mu(x_k) - k| / ln k`.
///
/// A finite maximum of one term per point: reversing the iteration order
/// reproduces the value bit for bit.
pub fn sup_point_deviation<R: Real>(
    sample: &SpectrumSample<R>,
    params: &ModelParams<R>,
    k0: usize,
    k_max: usize,
) -> Result<SupStatistic<R>> {
    if k0 < 2 {
        return Err(Error::domain(format!(
            "point statistic needs k0 >= 2 (ln 1 = 0), got {k0}"
        )));
    }
    if k_max < k0 || k_max > sample.len() {
        return Err(Error::input(format!(
            "point window [{k0}, {k_max}] must sit inside the {} available points",
            sample.len()
        )));
    }
    let x_k0 = sample.magnitudes()[k0 - 1];
    if !(x_k0 > params.s_min()) {
        return Err(Error::domain(format!(
            "x_k0 = {x_k0} is not inside the increasing domain (s_min = {})",
            params.s_min()
        )));
    }

    let mut best_value = R::neg_infinity();
    let mut best_loc = r64::<R>(k0 as f64);
    for k in k0..=k_max {
        let x_k = sample.magnitudes()[k - 1];
        let kf = r64::<R>(k as f64);
        let value = (params.mu(x_k)? - kf).abs() / kf.ln();
        if value > best_value {
            best_value = value;
            best_loc = kf;
        }
    }
    Ok(SupStatistic {
        value: best_value,
        arg_location: best_loc,
        kind: SupKind::Points,
        window: (r64::<R>(k0 as f64), r64::<R>(k_max as f64)),
    })
}

/// Which standardization a [`CltSample`] carries.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CltMode {
    CountingAtS,
    PointAtK,
}

/// One standardized value per trial.
#[derive(Clone, Debug, PartialEq)]
pub struct CltSample<R> {
    pub standardized_values: Vec<R>,
    pub mode: CltMode,
    /// `s` (counting mode) or `k` (point mode).
    pub parameter: R,
}

impl<R: Real> CltSample<R> {
    pub fn mean(&self) -> R {
        let n = r64::<R>(self.standardized_values.len() as f64);
        self.standardized_values.iter().copied().sum::<R>() / n
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> R {
        let m = self.mean();
        let n = self.standardized_values.len();
        if n < 2 {
            return R::zero();
        }
        self.standardized_values
            .iter()
            .map(|&v| (v - m) * (v - m))
            .sum::<R>()
            / r64::<R>((n - 1) as f64)
    }
}

/// Standardized count at `s` for one sample: `(N(s) - mu(s)) / sqrt(sigma2(s))`.
pub fn clt_counting_value<R: Real>(
    sample: &SpectrumSample<R>,
    params: &ModelParams<R>,
    s: R,
) -> Result<R> {
    let var = sigma2(s)?;
    let count = r64::<R>(sample.count_in(s)? as f64);
    Ok((count - params.mu(s)?) / var.sqrt())
}

/// Standardized location of the `k`-th magnitude:
/// `pi (mu(x_k) - k) / sqrt(ln k)`.
pub fn clt_point_value<R: Real>(
    sample: &SpectrumSample<R>,
    params: &ModelParams<R>,
    k: usize,
) -> Result<R> {
    if k < 2 {
        return Err(Error::domain(format!(
            "point standardization needs k >= 2, got {k}"
        )));
    }
    if k > sample.len() {
        return Err(Error::input(format!(
            "k = {k} exceeds the {} available points",
            sample.len()
        )));
    }
    let x_k = sample.magnitudes()[k - 1];
    let kf = r64::<R>(k as f64);
    Ok(R::PI() * (params.mu(x_k)? - kf) / kf.ln().sqrt())
}

/// Counting-mode CLT sample from already-drawn spectra.
pub fn clt_counting_from_samples<R: Real>(
    samples: &[SpectrumSample<R>],
    params: &ModelParams<R>,
    s: R,
) -> Result<CltSample<R>> {
    let standardized_values = samples
        .iter()
        .map(|sample| clt_counting_value(sample, params, s))
        .collect::<Result<Vec<R>>>()?;
    Ok(CltSample {
        standardized_values,
        mode: CltMode::CountingAtS,
        parameter: s,
    })
}

/// Point-mode CLT sample from already-drawn spectra.
pub fn clt_point_from_samples<R: Real>(
    samples: &[SpectrumSample<R>],
    params: &ModelParams<R>,
    k: usize,
) -> Result<CltSample<R>> {
    let standardized_values = samples
        .iter()
        .map(|sample| clt_point_value(sample, params, k))
        .collect::<Result<Vec<R>>>()?;
    Ok(CltSample {
        standardized_values,
        mode: CltMode::PointAtK,
        parameter: r64::<R>(k as f64),
    })
}

/// Runs the trials described by `configs` and standardizes the count at `s`.
///
/// All configs must share `n` and the model parameter.
pub fn clt_counting_sample<R>(configs: &[EnsembleConfig<R>], s: R) -> Result<CltSample<R>>
where
    R: Real + RealField,
    StandardNormal: Distribution<R>,
{
    let params = homogeneous_params(configs)?;
    let samples = sample_many(configs)?;
    clt_counting_from_samples(&samples, &params, s)
}

/// Runs the trials described by `configs` and standardizes the `k`-th point.
pub fn clt_point_sample<R>(configs: &[EnsembleConfig<R>], k: usize) -> Result<CltSample<R>>
where
    R: Real + RealField,
    StandardNormal: Distribution<R>,
{
    let params = homogeneous_params(configs)?;
    let samples = sample_many(configs)?;
    clt_point_from_samples(&samples, &params, k)
}

fn homogeneous_params<R: Real>(configs: &[EnsembleConfig<R>]) -> Result<ModelParams<R>> {
    let first = configs
        .first()
        .ok_or_else(|| Error::input("need at least one trial config".to_string()))?;
    for c in configs {
        if c.n() != first.n() || c.params() != first.params() {
            return Err(Error::input(
                "all trial configs must share n and the model parameter".to_string(),
            ));
        }
    }
    Ok(*first.params())
}

/// Kolmogorov–Smirnov distance between the empirical distribution of
/// `values` and `reference_cdf`.
pub fn ks_statistic<R: Real>(values: &[R], reference_cdf: impl Fn(R) -> R) -> Result<R> {
    if values.is_empty() {
        return Err(Error::input("KS statistic needs a non-empty sample".to_string()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::input("KS statistic needs finite values".to_string()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values are ordered"));
    let m = r64::<R>(sorted.len() as f64);
    let mut d = R::zero();
    for (i, &v) in sorted.iter().enumerate() {
        let f = reference_cdf(v);
        let below = r64::<R>(i as f64) / m; // empirical CDF just before v
        let above = r64::<R>((i + 1) as f64) / m; // empirical CDF at v
        d = d.max((f - below).abs()).max((above - f).abs());
    }
    Ok(d)
}

/// Standard normal CDF, accurate to better than 1e-7 absolute.
pub fn normal_cdf<R: Real>(z: R) -> R {
    let z = z.to_f64().unwrap_or(f64::NAN);
    let phi = 0.5 * statrs::function::erf::erfc(-z / std::f64::consts::SQRT_2);
    r64(phi)
}

/// Fractions of trials whose sup deviations stay within the slope-plus-`eps`
/// bands, computed from already-drawn spectra.
pub fn band_coverage_from_samples<R: Real>(
    samples: &[SpectrumSample<R>],
    params: &ModelParams<R>,
    eps: R,
    s: R,
    x_max: R,
    k0: usize,
    k_max: usize,
) -> Result<(R, R)> {
    if samples.is_empty() {
        return Err(Error::input("band coverage needs at least one trial".to_string()));
    }
    if !(eps > R::zero()) || !eps.is_finite() {
        return Err(Error::domain(format!(
            "band epsilon must be positive, got {eps}"
        )));
    }
    let mut sup_counting = Vec::with_capacity(samples.len());
    let mut sup_point = Vec::with_capacity(samples.len());
    for sample in samples {
        let step = counting_step(sample)?;
        sup_counting.push(sup_counting_deviation(&step, params, s, x_max)?.value);
        sup_point.push(sup_point_deviation(sample, params, k0, k_max)?.value);
    }
    Ok(coverage_fractions(&sup_counting, &sup_point, eps))
}

/// Coverage fractions from precomputed sup statistics.
pub fn coverage_fractions<R: Real>(sup_counting: &[R], sup_point: &[R], eps: R) -> (R, R) {
    let frac = |sups: &[R], slope: R| {
        let hits = sups.iter().filter(|&&v| v <= slope + eps).count();
        r64::<R>(hits as f64) / r64::<R>(sups.len().max(1) as f64)
    };
    (
        frac(sup_counting, counting_slope()),
        frac(sup_point, point_slope()),
    )
}

/// Runs the trials and reports band-coverage fractions.
pub fn band_coverage<R>(
    configs: &[EnsembleConfig<R>],
    eps: R,
    s: R,
    x_max: R,
    k0: usize,
    k_max: usize,
) -> Result<(R, R)>
where
    R: Real + RealField,
    StandardNormal: Distribution<R>,
{
    let params = homogeneous_params(configs)?;
    let samples = sample_many(configs)?;
    band_coverage_from_samples(&samples, &params, eps, s, x_max, k0, k_max)
}

/// Exponential-moment ratio at one grid point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExpMomentPoint<R> {
    pub s: R,
    /// `log Ê[e^(gamma N(s))] - gamma mu(s) - gamma^2 sigma2(s) / 2`;
    /// `None` when the estimate degenerated (non-finite intermediate).
    pub ratio: Option<R>,
    /// Standard error of the log-mean; `None` when not estimable.
    pub stderr: Option<R>,
}

/// Exponential-moment ratios over `s_grid` from already-drawn spectra.
///
/// The empirical mean of `e^(gamma N(s))` is evaluated in log space
/// (log-sum-exp), so large `gamma * N` cannot overflow.
pub fn exp_moment_from_samples<R: Real>(
    samples: &[SpectrumSample<R>],
    params: &ModelParams<R>,
    gamma: R,
    s_grid: &[R],
) -> Result<Vec<ExpMomentPoint<R>>> {
    if samples.is_empty() {
        return Err(Error::input(
            "exponential moments need at least one trial".to_string(),
        ));
    }
    validate_gamma(gamma)?;
    validate_s_grid(s_grid)?;

    let trials = r64::<R>(samples.len() as f64);
    let mut out = Vec::with_capacity(s_grid.len());
    for &s in s_grid {
        let mu = params.mu(s)?;
        let var = sigma2(s)?;
        let exponents: Vec<R> = samples
            .iter()
            .map(|sample| Ok(gamma * r64::<R>(sample.count_in(s)? as f64)))
            .collect::<Result<Vec<R>>>()?;
        let peak = exponents
            .iter()
            .copied()
            .fold(R::neg_infinity(), |a, b| a.max(b));
        let weights: Vec<R> = exponents.iter().map(|&v| (v - peak).exp()).collect();
        let mean_w = weights.iter().copied().sum::<R>() / trials;
        let log_mean = peak + mean_w.ln();
        let ratio = log_mean - gamma * mu - gamma * gamma * var / r64::<R>(2.0);

        let stderr = if samples.len() >= 2 && mean_w > R::zero() {
            let var_w = weights
                .iter()
                .map(|&w| (w - mean_w) * (w - mean_w))
                .sum::<R>()
                / r64::<R>((samples.len() - 1) as f64);
            // Delta method for the log of a mean.
            let se = var_w.sqrt() / (mean_w * trials.sqrt());
            se.is_finite().then_some(se)
        } else {
            None
        };

        out.push(ExpMomentPoint {
            s,
            ratio: ratio.is_finite().then_some(ratio),
            stderr,
        });
    }
    Ok(out)
}

/// Runs the trials and evaluates the exponential-moment ratios.
pub fn exp_moment_ratio<R>(
    configs: &[EnsembleConfig<R>],
    gamma: R,
    s_grid: &[R],
) -> Result<Vec<ExpMomentPoint<R>>>
where
    R: Real + RealField,
    StandardNormal: Distribution<R>,
{
    let params = homogeneous_params(configs)?;
    let samples = sample_many(configs)?;
    exp_moment_from_samples(&samples, &params, gamma, s_grid)
}

fn validate_gamma<R: Real>(gamma: R) -> Result<()> {
    if !gamma.is_finite() || gamma.abs() > r64::<R>(2.0) {
        return Err(Error::domain(format!(
            "gamma must lie in [-2, 2] so rare trials cannot dominate, got {gamma}"
        )));
    }
    Ok(())
}

fn validate_s_grid<R: Real>(s_grid: &[R]) -> Result<()> {
    if s_grid.is_empty() {
        return Err(Error::input("s grid must be non-empty".to_string()));
    }
    for &s in s_grid {
        if !(s > R::one()) || !s.is_finite() {
            return Err(Error::input(format!(
                "s grid entries must be finite and > 1, got {s}"
            )));
        }
    }
    for w in s_grid.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Error::input("s grid must be strictly increasing".to_string()));
        }
    }
    Ok(())
}
