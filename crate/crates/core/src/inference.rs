//! Perturbation-resampling inference: replicate estimates under i.i.d.
//! positive unit-mean, unit-variance subject weights, variance estimation
//! (empirical or median-based), normal, quantile and Fieller intervals, and
//! covariate augmentation.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{Group, StudyData};
use crate::error::{Error, Result};
use crate::estimators::{
    is_unstable_ratio, r_s_hat, EstimateDiagnostics, EstimateSet, Estimator, PointEstimate,
};
use crate::kernel::KernelSpec;
use crate::rng::{substream, tag, StreamRng};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const MIN_VALID_DRAWS: usize = 30;
/// Largest tolerated fraction of failed draws.
pub const MAX_FAILED_FRACTION: f64 = 0.02;
/// Consistency constant turning the MAD into a normal-scale SD.
pub const MAD_SCALE: f64 = 1.4826;

/// Law of the perturbation weights.
pub trait PerturbationLaw: Send + Sync {
    fn sample(&self, rng: &mut StreamRng) -> f64;
    fn name(&self) -> &'static str;
}

/// Standard exponential weights (unit mean and variance).
#[derive(Debug, Clone, Copy, Default)]
pub struct StandardExponential;

impl PerturbationLaw for StandardExponential {
    fn sample(&self, rng: &mut StreamRng) -> f64 {
        // Exp1 can return exactly 0 with negligible probability; weights
        // must be strictly positive.
        loop {
            let v: f64 = Exp1.sample(rng);
            if v > 0.0 {
                return v;
            }
        }
    }

    fn name(&self) -> &'static str {
        "standard-exponential"
    }
}

/// All weights equal to one; every draw reproduces the point estimate.
#[derive(Debug, Clone, Copy, Default)]
pub struct UnitWeights;

impl PerturbationLaw for UnitWeights {
    fn sample(&self, _rng: &mut StreamRng) -> f64 {
        1.0
    }

    fn name(&self) -> &'static str {
        "unit"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Draw {
    /// Draw index `b`; the weight stream is keyed by it.
    pub index: usize,
    pub estimates: EstimateSet,
    /// Perturbed covariate mean difference
    /// `n_A^{-1} sum V_Ai Z_Ai - n_B^{-1} sum V_Bi Z_Bi`, one entry per
    /// covariate column.
    pub covariate_diff: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawFailure {
    pub index: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationDraws {
    pub requested: usize,
    pub seed: u64,
    pub law: String,
    pub bandwidth: f64,
    pub n_a: usize,
    pub n_b: usize,
    /// Successful draws ordered by index.
    pub draws: Vec<Draw>,
    pub failures: Vec<DrawFailure>,
}

impl PerturbationDraws {
    pub fn values(&self, estimand: Estimand) -> Vec<f64> {
        self.draws
            .iter()
            .map(|d| estimand.of(&d.estimates))
            .collect()
    }
}

fn covariate_mean_diff(data: &StudyData, wa: &[f64], wb: &[f64]) -> Vec<f64> {
    let p = data.covariate_dim();
    let mut diff = vec![0.0; p];
    for (group, w, sign) in [(Group::A, wa, 1.0), (Group::B, wb, -1.0)] {
        let arm = data.arm(group);
        let n = arm.len() as f64;
        for (r, &v) in arm.iter().zip(w) {
            for (d, z) in diff.iter_mut().zip(&r.covariates) {
                *d += sign * v * z / n;
            }
        }
    }
    diff
}

/// Unperturbed covariate mean difference between arms.
pub fn covariate_difference(data: &StudyData) -> Vec<f64> {
    covariate_mean_diff(
        data,
        &vec![1.0; data.n(Group::A)],
        &vec![1.0; data.n(Group::B)],
    )
}

/// Recomputes every estimator under `draws` independent weight vectors.
/// The kernel bandwidth stays at the estimator's unit-weight value.
pub fn perturb<L: PerturbationLaw>(
    estimator: &Estimator<'_>,
    draws: usize,
    seed: u64,
    law: &L,
) -> Result<PerturbationDraws> {
    let data = estimator.data();
    let (n_a, n_b) = (data.n(Group::A), data.n(Group::B));
    let outcomes: Vec<std::result::Result<Draw, DrawFailure>> = (0..draws)
        .into_par_iter()
        .map(|b| {
            let mut rng = substream(seed, &[tag::PERTURB, b as u64]);
            let wa: Vec<f64> = (0..n_a).map(|_| law.sample(&mut rng)).collect();
            let wb: Vec<f64> = (0..n_b).map(|_| law.sample(&mut rng)).collect();
            let fail = |message: String| DrawFailure { index: b, message };
            let est = estimator.weighted(&wa, &wb).map_err(|e| fail(e.to_string()))?;
            if !est.estimates.is_finite() {
                return Err(fail("non-finite estimate".into()));
            }
            Ok(Draw {
                index: b,
                estimates: est.estimates,
                covariate_diff: covariate_mean_diff(data, &wa, &wb),
            })
        })
        .collect();
    let mut ok = Vec::with_capacity(draws);
    let mut failures = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok(d) => ok.push(d),
            Err(f) => failures.push(f),
        }
    }
    if failures.len() as f64 > MAX_FAILED_FRACTION * draws as f64 {
        return Err(Error::TooManyFailedDraws {
            failed: failures.len(),
            total: draws,
            first: failures[0].message.clone(),
        });
    }
    Ok(PerturbationDraws {
        requested: draws,
        seed,
        law: law.name().to_string(),
        bandwidth: estimator.bandwidth(),
        n_a,
        n_b,
        draws: ok,
        failures,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimand {
    Delta,
    DeltaS,
    RS,
    DeltaT,
    RT,
    IvS,
}

impl Estimand {
    pub const ALL: [Estimand; 6] = [
        Estimand::Delta,
        Estimand::DeltaS,
        Estimand::RS,
        Estimand::DeltaT,
        Estimand::RT,
        Estimand::IvS,
    ];

    pub fn of(self, e: &EstimateSet) -> f64 {
        match self {
            Estimand::Delta => e.delta,
            Estimand::DeltaS => e.delta_s,
            Estimand::RS => e.r_s,
            Estimand::DeltaT => e.delta_t,
            Estimand::RT => e.r_t,
            Estimand::IvS => e.iv_s,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Estimand::Delta => "delta",
            Estimand::DeltaS => "delta_s",
            Estimand::RS => "r_s",
            Estimand::DeltaT => "delta_t",
            Estimand::RT => "r_t",
            Estimand::IvS => "iv_s",
        }
    }

    /// For ratio estimands `1 - num/den`, the numerator estimand.
    pub fn ratio_numerator(self) -> Option<Estimand> {
        match self {
            Estimand::RS => Some(Estimand::DeltaS),
            Estimand::RT => Some(Estimand::DeltaT),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceMode {
    #[default]
    Empirical,
    /// Squared scaled median absolute deviation on the diagonal, empirical
    /// correlations off the diagonal.
    RobustMedian,
}

impl std::str::FromStr for VarianceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "empirical" => Ok(VarianceMode::Empirical),
            "robust" | "robust-median" => Ok(VarianceMode::RobustMedian),
            other => Err(Error::InvalidParameter(format!("unknown variance mode `{other}`"))),
        }
    }
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn median(x: &[f64]) -> f64 {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn empirical_cov(x: &[f64], y: &[f64]) -> f64 {
    // Shifting by the first draw keeps identical draws at exactly zero.
    let x: Vec<f64> = x.iter().map(|v| v - x[0]).collect();
    let y: Vec<f64> = y.iter().map(|v| v - y[0]).collect();
    let (x, y) = (x.as_slice(), y.as_slice());
    let (mx, my) = (mean(x), mean(y));
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - mx) * (b - my))
        .sum::<f64>()
        / (x.len() as f64 - 1.0)
}

/// Robust scale: `1.4826 * median |x - median(x)|`.
pub fn mad_scale(x: &[f64]) -> f64 {
    let m = median(x);
    let dev: Vec<f64> = x.iter().map(|v| (v - m).abs()).collect();
    MAD_SCALE * median(&dev)
}

/// Variance of one resampled quantity under `mode`.
pub fn variance_of(x: &[f64], mode: VarianceMode) -> Result<f64> {
    if x.len() < MIN_VALID_DRAWS {
        return Err(Error::TooFewDraws {
            valid: x.len(),
            required: MIN_VALID_DRAWS,
        });
    }
    Ok(match mode {
        VarianceMode::Empirical => empirical_cov(x, x),
        VarianceMode::RobustMedian => mad_scale(x).powi(2),
    })
}

/// 2x2 covariance of `(x, y)` under `mode`.
pub fn covariance_2x2(x: &[f64], y: &[f64], mode: VarianceMode) -> Result<[[f64; 2]; 2]> {
    let vx = variance_of(x, mode)?;
    let vy = variance_of(y, mode)?;
    let cxy = match mode {
        VarianceMode::Empirical => empirical_cov(x, y),
        VarianceMode::RobustMedian => {
            let (ex, ey) = (empirical_cov(x, x), empirical_cov(y, y));
            if ex > 0.0 && ey > 0.0 {
                empirical_cov(x, y) / (ex * ey).sqrt() * (vx * vy).sqrt()
            } else {
                0.0
            }
        }
    };
    Ok([[vx, cxy], [cxy, vy]])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceSummary {
    pub mode: VarianceMode,
    /// Standard error per estimand, in [`Estimand::ALL`] order.
    pub se: Vec<(Estimand, f64)>,
    /// Covariance of `(delta_s, delta)` draws.
    pub sigma_s: [[f64; 2]; 2],
    /// Covariance of `(delta_t, delta)` draws.
    pub sigma_t: [[f64; 2]; 2],
}

impl VarianceSummary {
    pub fn se_of(&self, estimand: Estimand) -> f64 {
        self.se
            .iter()
            .find(|(e, _)| *e == estimand)
            .map(|(_, s)| *s)
            .unwrap_or(f64::NAN)
    }
}

pub fn variance(draws: &PerturbationDraws, mode: VarianceMode) -> Result<VarianceSummary> {
    let se = Estimand::ALL
        .iter()
        .map(|&e| Ok((e, variance_of(&draws.values(e), mode)?.sqrt())))
        .collect::<Result<Vec<_>>>()?;
    let delta = draws.values(Estimand::Delta);
    Ok(VarianceSummary {
        mode,
        se,
        sigma_s: covariance_2x2(&draws.values(Estimand::DeltaS), &delta, mode)?,
        sigma_t: covariance_2x2(&draws.values(Estimand::DeltaT), &delta, mode)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("alpha = {alpha} outside (0, 1)")))
    }
}

/// Upper `alpha/2` standard normal quantile.
pub fn z_value(alpha: f64) -> f64 {
    Normal::standard().inverse_cdf(1.0 - alpha / 2.0)
}

/// Wald interval `point +/- z * se`.
pub fn ci_normal(point: f64, se: f64, alpha: f64) -> Result<Interval> {
    check_alpha(alpha)?;
    let half = z_value(alpha) * se;
    Ok(Interval {
        lower: point - half,
        upper: point + half,
    })
}

/// Inverse of the empirical distribution function: the smallest order
/// statistic whose rank reaches `p * n`.
fn empirical_percentile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let k = ((p * n as f64).ceil() as usize).clamp(1, n);
    sorted[k - 1]
}

/// Percentile interval from resampled values; endpoints are order statistics.
pub fn ci_quantile(values: &[f64], alpha: f64) -> Result<Interval> {
    check_alpha(alpha)?;
    if values.is_empty() {
        return Err(Error::TooFewDraws {
            valid: 0,
            required: 1,
        });
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(Interval {
        lower: empirical_percentile(&sorted, alpha / 2.0),
        upper: empirical_percentile(&sorted, 1.0 - alpha / 2.0),
    })
}

/// A Fieller confidence set; it need not be a bounded interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FiellerSet {
    Interval { lower: f64, upper: f64 },
    /// `(-inf, lower] U [upper, inf)`.
    Complement { lower: f64, upper: f64 },
    /// `[lower, inf)`.
    UpperRay { lower: f64 },
    /// `(-inf, upper]`.
    LowerRay { upper: f64 },
    WholeLine,
    Empty,
}

impl FiellerSet {
    pub fn contains(&self, r: f64) -> bool {
        match *self {
            FiellerSet::Interval { lower, upper } => lower <= r && r <= upper,
            FiellerSet::Complement { lower, upper } => r <= lower || r >= upper,
            FiellerSet::UpperRay { lower } => r >= lower,
            FiellerSet::LowerRay { upper } => r <= upper,
            FiellerSet::WholeLine => true,
            FiellerSet::Empty => false,
        }
    }

    pub fn is_bounded_interval(&self) -> bool {
        matches!(self, FiellerSet::Interval { .. })
    }

    pub fn describe(&self) -> String {
        match *self {
            FiellerSet::Interval { lower, upper } => format!("[{lower:.4}, {upper:.4}]"),
            FiellerSet::Complement { lower, upper } => {
                format!("(-inf, {lower:.4}] U [{upper:.4}, inf)")
            }
            FiellerSet::UpperRay { lower } => format!("[{lower:.4}, inf)"),
            FiellerSet::LowerRay { upper } => format!("(-inf, {upper:.4}]"),
            FiellerSet::WholeLine => "(-inf, inf)".into(),
            FiellerSet::Empty => "empty".into(),
        }
    }

    /// Maps a set for `q` to the set for `1 - q`.
    fn reflect(self) -> FiellerSet {
        match self {
            FiellerSet::Interval { lower, upper } => FiellerSet::Interval {
                lower: 1.0 - upper,
                upper: 1.0 - lower,
            },
            FiellerSet::Complement { lower, upper } => FiellerSet::Complement {
                lower: 1.0 - upper,
                upper: 1.0 - lower,
            },
            FiellerSet::UpperRay { lower } => FiellerSet::LowerRay { upper: 1.0 - lower },
            FiellerSet::LowerRay { upper } => FiellerSet::UpperRay { lower: 1.0 - upper },
            other => other,
        }
    }
}

/// Solves `{q : (num - q den)^2 <= c (s11 - 2 q s12 + q^2 s22)}`.
fn fieller_quadratic(num: f64, den: f64, sigma: [[f64; 2]; 2], c: f64) -> FiellerSet {
    let (s11, s12, s22) = (sigma[0][0], sigma[0][1], sigma[1][1]);
    let a = den * den - c * s22;
    let b = -2.0 * (num * den - c * s12);
    let cc = num * num - c * s11;
    let scale = (den * den).max(c * s22.abs()).max(f64::MIN_POSITIVE);
    if a.abs() <= 1e-12 * scale {
        if b == 0.0 {
            return if cc <= 0.0 {
                FiellerSet::WholeLine
            } else {
                FiellerSet::Empty
            };
        }
        let root = -cc / b;
        return if b > 0.0 {
            FiellerSet::LowerRay { upper: root }
        } else {
            FiellerSet::UpperRay { lower: root }
        };
    }
    let disc = b * b - 4.0 * a * cc;
    if disc < 0.0 {
        return if a > 0.0 {
            FiellerSet::Empty
        } else {
            FiellerSet::WholeLine
        };
    }
    let sq = disc.sqrt();
    let qq = -0.5 * (b + b.signum() * sq);
    let (r1, r2) = if qq != 0.0 {
        (qq / a, cc / qq)
    } else {
        let r = -b / (2.0 * a);
        (r, r)
    };
    let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
    if a > 0.0 {
        FiellerSet::Interval { lower: lo, upper: hi }
    } else {
        FiellerSet::Complement { lower: lo, upper: hi }
    }
}

/// Fieller set for the ratio `num / den`. The critical value is the
/// `100(1-alpha)`th percentile of the perturbed pivot evaluated at the point
/// ratio.
pub fn fieller_ratio(
    num: f64,
    den: f64,
    num_draws: &[f64],
    den_draws: &[f64],
    sigma: [[f64; 2]; 2],
    alpha: f64,
) -> Result<FiellerSet> {
    check_alpha(alpha)?;
    let q_hat = num / den;
    let pivot_den = sigma[0][0] - 2.0 * q_hat * sigma[0][1] + q_hat * q_hat * sigma[1][1];
    if !(pivot_den > 0.0) || !q_hat.is_finite() {
        // No resampling variability: the set collapses to the point.
        return Ok(FiellerSet::Interval {
            lower: q_hat,
            upper: q_hat,
        });
    }
    let mut pivots: Vec<f64> = num_draws
        .iter()
        .zip(den_draws)
        .map(|(n, d)| (n - q_hat * d).powi(2) / pivot_den)
        .collect();
    if pivots.is_empty() {
        return Err(Error::TooFewDraws {
            valid: 0,
            required: 1,
        });
    }
    pivots.sort_by(f64::total_cmp);
    let c = empirical_percentile(&pivots, 1.0 - alpha);
    Ok(fieller_quadratic(num, den, sigma, c))
}

/// Fieller set for `r = 1 - num/den` with `sigma` the covariance of
/// `(num, den)` draws.
pub fn ci_fieller(
    num: f64,
    den: f64,
    num_draws: &[f64],
    den_draws: &[f64],
    sigma: [[f64; 2]; 2],
    alpha: f64,
) -> Result<FiellerSet> {
    fieller_ratio(num, den, num_draws, den_draws, sigma, alpha).map(FiellerSet::reflect)
}

/// Fieller construction for a single quantity (unit denominator): the
/// interval `point +/- sqrt(c * var)` with `c` the resampled pivot
/// percentile.
pub fn ci_fieller_scalar(point: f64, draws: &[f64], var: f64, alpha: f64) -> Result<FiellerSet> {
    let ones = vec![1.0; draws.len()];
    fieller_ratio(point, 1.0, draws, &ones, [[var, 0.0], [0.0, 0.0]], alpha)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CiSelection {
    pub normal: bool,
    pub quantile: bool,
    pub fieller: bool,
}

impl Default for CiSelection {
    fn default() -> Self {
        CiSelection {
            normal: true,
            quantile: true,
            fieller: true,
        }
    }
}

impl std::str::FromStr for CiSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let none = CiSelection {
            normal: false,
            quantile: false,
            fieller: false,
        };
        let mut sel = none;
        for part in s.split(',') {
            match part.trim() {
                "all" => sel = CiSelection::default(),
                "normal" => sel.normal = true,
                "quantile" => sel.quantile = true,
                "fieller" => sel.fieller = true,
                other => {
                    return Err(Error::InvalidParameter(format!("unknown CI type `{other}`")))
                }
            }
        }
        Ok(sel)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimandSummary {
    pub estimand: String,
    pub point: f64,
    pub se: f64,
    pub ci_normal: Option<Interval>,
    pub ci_quantile: Option<Interval>,
    /// Fieller set: ratio form for proportions, unit-denominator form for
    /// effect differences.
    pub ci_fieller: Option<FiellerSet>,
}

/// Builds the summary of one estimand from its point value and draws.
/// `ratio` carries `(num_hat, den_hat, num_draws, den_draws, sigma)` for
/// proportions of the form `1 - num/den`.
#[allow(clippy::too_many_arguments)]
fn summarize_estimand(
    name: &str,
    point: f64,
    draws: &[f64],
    mode: VarianceMode,
    alpha: f64,
    ci: CiSelection,
    ratio: Option<(f64, f64, &[f64], &[f64], [[f64; 2]; 2])>,
    warnings: &mut Vec<String>,
) -> Result<EstimandSummary> {
    let var = variance_of(draws, mode)?;
    let se = var.sqrt();
    let ci_fieller = if ci.fieller {
        let set = match ratio {
            Some((num, den, nd, dd, sigma)) => ci_fieller(num, den, nd, dd, sigma, alpha)?,
            None => ci_fieller_scalar(point, draws, var, alpha)?,
        };
        if !set.is_bounded_interval() {
            warnings.push(format!(
                "Fieller set for {name} is not a bounded interval: {}",
                set.describe()
            ));
        }
        Some(set)
    } else {
        None
    };
    Ok(EstimandSummary {
        estimand: name.to_string(),
        point,
        se,
        ci_normal: if ci.normal {
            Some(ci_normal(point, se, alpha)?)
        } else {
            None
        },
        ci_quantile: if ci.quantile {
            Some(ci_quantile(draws, alpha)?)
        } else {
            None
        },
        ci_fieller,
    })
}

/// Point estimates and intervals for every estimand of `draws`.
pub fn summarize_draws(
    point: &EstimateSet,
    draws: &PerturbationDraws,
    mode: VarianceMode,
    alpha: f64,
    ci: CiSelection,
    warnings: &mut Vec<String>,
) -> Result<Vec<EstimandSummary>> {
    let delta_draws = draws.values(Estimand::Delta);
    Estimand::ALL
        .iter()
        .map(|&e| {
            let values = draws.values(e);
            let num_draws;
            let ratio = match e.ratio_numerator() {
                Some(num) => {
                    num_draws = draws.values(num);
                    let sigma = covariance_2x2(&num_draws, &delta_draws, mode)?;
                    Some((
                        num.of(point),
                        point.delta,
                        num_draws.as_slice(),
                        delta_draws.as_slice(),
                        sigma,
                    ))
                }
                None => None,
            };
            summarize_estimand(
                e.label(),
                e.of(point),
                &values,
                mode,
                alpha,
                ci,
                ratio,
                warnings,
            )
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedReport {
    pub covariates: Vec<String>,
    /// Coefficient matrix, one row per `(delta, delta_s)`, one column per
    /// covariate.
    pub coefficients: Vec<Vec<f64>>,
    pub ridge_applied: bool,
    pub delta: f64,
    pub delta_s: f64,
    pub r_s: f64,
    pub estimands: Vec<EstimandSummary>,
}

/// Covariate-augmented `(delta, delta_s)`: the unaugmented estimates minus
/// their projection on the perturbed covariate mean difference, with the
/// coefficient fitted once from the full draw set.
pub fn augment(
    data: &StudyData,
    point: &EstimateSet,
    draws: &PerturbationDraws,
    covariates: &[String],
    mode: VarianceMode,
    alpha: f64,
    ci: CiSelection,
    warnings: &mut Vec<String>,
) -> Result<AugmentedReport> {
    if data.covariate_dim() == 0 {
        return Err(Error::MissingCovariates);
    }
    let cols = data.covariate_indices(covariates)?;
    if cols.is_empty() {
        return Err(Error::MissingCovariates);
    }
    let nd = draws.draws.len();
    if nd < MIN_VALID_DRAWS {
        return Err(Error::TooFewDraws {
            valid: nd,
            required: MIN_VALID_DRAWS,
        });
    }
    let p = cols.len();
    let u = DMatrix::from_fn(nd, p, |b, j| draws.draws[b].covariate_diff[cols[j]]);
    let x = DMatrix::from_fn(nd, 2, |b, k| {
        let e = &draws.draws[b].estimates;
        if k == 0 {
            e.delta
        } else {
            e.delta_s
        }
    });
    let center = |m: &DMatrix<f64>| {
        let means = m.row_mean();
        DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] - means[j])
    };
    let (uc, xc) = (center(&u), center(&x));
    let denom = nd as f64 - 1.0;
    let xi12 = xc.transpose() * &uc / denom;
    let mut xi22 = uc.transpose() * &uc / denom;
    let mut ridge_applied = false;
    let chol = match xi22.clone().cholesky() {
        Some(c) => c,
        None => {
            let ridge = 1e-8 * xi22.trace();
            for j in 0..p {
                xi22[(j, j)] += ridge;
            }
            ridge_applied = true;
            warnings.push(format!(
                "covariate variance matrix is singular; ridge {ridge:.3e} added"
            ));
            xi22.clone().cholesky().ok_or_else(|| {
                Error::InvalidParameter("covariate variance matrix is degenerate".into())
            })?
        }
    };
    // A = Xi12 Xi22^{-1}, computed as (Xi22^{-1} Xi21)^T.
    let a_hat = chol.solve(&xi12.transpose()).transpose();

    let full_diff = covariate_difference(data);
    let u_hat = DVector::from_iterator(p, cols.iter().map(|&c| full_diff[c]));
    let shift = &a_hat * &u_hat;
    let delta = point.delta - shift[0];
    let delta_s = point.delta_s - shift[1];
    let r_s = r_s_hat(delta, delta_s);

    let aug_draws = &x - &u * a_hat.transpose();
    let d_draws: Vec<f64> = aug_draws.column(0).iter().copied().collect();
    let ds_draws: Vec<f64> = aug_draws.column(1).iter().copied().collect();
    let r_draws: Vec<f64> = d_draws
        .iter()
        .zip(&ds_draws)
        .map(|(d, s)| r_s_hat(*d, *s))
        .collect();
    if is_unstable_ratio(delta, crate::estimators::DEFAULT_RATIO_FLOOR) {
        warnings.push(format!(
            "augmented treatment effect {delta:.4} is small; augmented R_S is unstable"
        ));
    }
    let sigma = covariance_2x2(&ds_draws, &d_draws, mode)?;
    let estimands = vec![
        summarize_estimand("delta_aug", delta, &d_draws, mode, alpha, ci, None, warnings)?,
        summarize_estimand("delta_s_aug", delta_s, &ds_draws, mode, alpha, ci, None, warnings)?,
        summarize_estimand(
            "r_s_aug",
            r_s,
            &r_draws,
            mode,
            alpha,
            ci,
            Some((delta_s, delta, &ds_draws, &d_draws, sigma)),
            warnings,
        )?,
    ];
    Ok(AugmentedReport {
        covariates: covariates.to_vec(),
        coefficients: (0..2)
            .map(|k| (0..p).map(|j| a_hat[(k, j)]).collect())
            .collect(),
        ridge_applied,
        delta,
        delta_s,
        r_s,
        estimands,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceConfig {
    pub kernel: KernelSpec,
    pub draws: usize,
    pub seed: u64,
    pub alpha: f64,
    pub variance: VarianceMode,
    pub ci: CiSelection,
    /// Covariate columns used for augmentation, if any.
    pub augment: Option<Vec<String>>,
    pub ratio_floor: f64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            kernel: KernelSpec::default(),
            draws: 500,
            seed: 0,
            alpha: 0.05,
            variance: VarianceMode::Empirical,
            ci: CiSelection::default(),
            augment: None,
            ratio_floor: crate::estimators::DEFAULT_RATIO_FLOOR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceReport {
    pub schema_version: u32,
    pub point: EstimateSet,
    pub diagnostics: EstimateDiagnostics,
    pub alpha: f64,
    pub variance_mode: VarianceMode,
    pub seed: u64,
    pub weight_law: String,
    /// The kernel bandwidth is held at its point-estimate value in every draw.
    pub bandwidth_fixed: bool,
    pub draws_requested: usize,
    pub draws_valid: usize,
    pub draws_failed: usize,
    /// Covariance of `(delta_s, delta)`.
    pub sigma: [[f64; 2]; 2],
    pub estimands: Vec<EstimandSummary>,
    pub augmented: Option<AugmentedReport>,
    pub warnings: Vec<String>,
}

impl InferenceReport {
    pub fn estimand(&self, name: &str) -> Option<&EstimandSummary> {
        self.estimands
            .iter()
            .chain(self.augmented.iter().flat_map(|a| a.estimands.iter()))
            .find(|e| e.estimand == name)
    }
}

/// Point estimation, perturbation resampling and interval construction.
pub fn infer(data: &StudyData, config: &InferenceConfig) -> Result<InferenceReport> {
    infer_with_law(data, config, &StandardExponential)
}

pub fn infer_with_law<L: PerturbationLaw>(
    data: &StudyData,
    config: &InferenceConfig,
    law: &L,
) -> Result<InferenceReport> {
    check_alpha(config.alpha)?;
    let estimator = Estimator::new(data, &config.kernel)?.with_ratio_floor(config.ratio_floor);
    let PointEstimate {
        estimates: point,
        diagnostics,
    } = estimator.point()?;
    let draws = perturb(&estimator, config.draws, config.seed, law)?;
    report_from_draws(data, &point, diagnostics, &draws, config)
}

/// Assembles the report from already computed draws.
pub fn report_from_draws(
    data: &StudyData,
    point: &EstimateSet,
    diagnostics: EstimateDiagnostics,
    draws: &PerturbationDraws,
    config: &InferenceConfig,
) -> Result<InferenceReport> {
    let mut warnings = Vec::new();
    if diagnostics.unstable_ratio {
        warnings.push(format!(
            "|delta| = {:.4} is below {}; ratio estimates are unstable",
            point.delta.abs(),
            diagnostics.ratio_floor
        ));
    }
    if diagnostics.support_warnings > 0 {
        warnings.push(format!(
            "{} arm-B surrogate values lie outside the observed arm-A range",
            diagnostics.support_warnings
        ));
    }
    if !draws.failures.is_empty() {
        warnings.push(format!(
            "{} of {} perturbation draws failed and were excluded",
            draws.failures.len(),
            draws.requested
        ));
    }
    let estimands =
        summarize_draws(point, draws, config.variance, config.alpha, config.ci, &mut warnings)?;
    let sigma = covariance_2x2(
        &draws.values(Estimand::DeltaS),
        &draws.values(Estimand::Delta),
        config.variance,
    )?;
    let augmented = match &config.augment {
        Some(cols) => Some(augment(
            data,
            point,
            draws,
            cols,
            config.variance,
            config.alpha,
            config.ci,
            &mut warnings,
        )?),
        None => None,
    };
    Ok(InferenceReport {
        schema_version: REPORT_SCHEMA_VERSION,
        point: *point,
        diagnostics,
        alpha: config.alpha,
        variance_mode: config.variance,
        seed: draws.seed,
        weight_law: draws.law.clone(),
        bandwidth_fixed: true,
        draws_requested: draws.requested,
        draws_valid: draws.draws.len(),
        draws_failed: draws.failures.len(),
        sigma,
        estimands,
        augmented,
        warnings,
    })
}

fn fmt_interval(ci: Option<Interval>) -> String {
    match ci {
        Some(ci) => format!("[{:.4}, {:.4}]", ci.lower, ci.upper),
        None => "-".into(),
    }
}

fn write_estimand_rows(out: &mut String, rows: &[EstimandSummary]) {
    use std::fmt::Write as _;
    for e in rows {
        let _ = writeln!(
            out,
            "{:<12} {:>9.4} {:>8.4}  {:<20} {:<20} {}",
            e.estimand,
            e.point,
            e.se,
            fmt_interval(e.ci_normal),
            fmt_interval(e.ci_quantile),
            e.ci_fieller.map(|f| f.describe()).unwrap_or_else(|| "-".into()),
        );
    }
}

/// Human-readable table of an inference report.
pub fn render_report(report: &InferenceReport) -> String {
    use std::fmt::Write as _;
    let mut out = String::new();
    let p = &report.point;
    let _ = writeln!(
        out,
        "t0 = {}  t = {}  bandwidth = {:.4}  draws = {}/{}  variance = {:?}  alpha = {}  seed = {}",
        p.t0,
        p.t,
        p.bandwidth,
        report.draws_valid,
        report.draws_requested,
        report.variance_mode,
        report.alpha,
        report.seed
    );
    let _ = writeln!(
        out,
        "{:<12} {:>9} {:>8}  {:<20} {:<20} {}",
        "estimand", "estimate", "SE", "normal CI", "quantile CI", "Fieller set"
    );
    write_estimand_rows(&mut out, &report.estimands);
    if let Some(aug) = &report.augmented {
        let _ = writeln!(out, "augmented with covariates: {}", aug.covariates.join(", "));
        write_estimand_rows(&mut out, &aug.estimands);
    }
    for w in &report.warnings {
        let _ = writeln!(out, "warning: {w}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_draws_have_zero_variance() {
        let x = vec![0.3; 50];
        assert_eq!(variance_of(&x, VarianceMode::Empirical).unwrap(), 0.0);
        assert_eq!(variance_of(&x, VarianceMode::RobustMedian).unwrap(), 0.0);
    }

    #[test]
    fn too_few_draws() {
        assert!(matches!(
            variance_of(&[1.0; 10], VarianceMode::Empirical),
            Err(Error::TooFewDraws { valid: 10, .. })
        ));
    }

    #[test]
    fn robust_scale_resists_an_outlier() {
        let mut rng = substream(3, &[]);
        let clean: Vec<f64> = (0..400)
            .map(|_| {
                let n: f64 = rand_distr::StandardNormal.sample(&mut rng);
                0.1 * n
            })
            .collect();
        let mut dirty = clean.clone();
        dirty[17] = 25.0;
        let rc = variance_of(&clean, VarianceMode::RobustMedian).unwrap().sqrt();
        let rd = variance_of(&dirty, VarianceMode::RobustMedian).unwrap().sqrt();
        let ec = variance_of(&clean, VarianceMode::Empirical).unwrap().sqrt();
        let ed = variance_of(&dirty, VarianceMode::Empirical).unwrap().sqrt();
        assert!((rd / rc - 1.0).abs() < 0.05);
        assert!(ed > 5.0 * ec);
    }

    #[test]
    fn degenerate_normal_interval() {
        let ci = ci_normal(0.4, 0.0, 0.05).unwrap();
        assert_eq!((ci.lower, ci.upper), (0.4, 0.4));
        assert!(ci_normal(0.4, 0.1, 1.5).is_err());
    }

    #[test]
    fn normal_interval_width() {
        let ci = ci_normal(1.0, 0.5, 0.05).unwrap();
        assert!((ci.upper - 1.0 - 0.5 * 1.959963984540054).abs() < 1e-9);
        assert!(((ci.upper + ci.lower) / 2.0 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn quantile_interval_order_statistics() {
        let v: Vec<f64> = (1..=200).map(|k| k as f64).collect();
        let ci = ci_quantile(&v, 0.05).unwrap();
        assert_eq!((ci.lower, ci.upper), (5.0, 195.0));
        let ci = ci_quantile(&[0.7; 40], 0.05).unwrap();
        assert_eq!((ci.lower, ci.upper), (0.7, 0.7));
    }

    #[test]
    fn fieller_classification() {
        // Well-determined denominator: bounded interval around 1 - 0.05/0.19.
        let set = fieller_quadratic(0.05, 0.19, [[4e-4, 1e-4], [1e-4, 6e-4]], 3.84);
        assert!(set.is_bounded_interval());
        assert!(set.reflect().contains(1.0 - 0.05 / 0.19));
        // Denominator indistinguishable from zero: unbounded sets.
        let set = fieller_quadratic(0.05, 0.01, [[4e-4, 0.0], [0.0, 6e-4]], 3.84);
        assert!(matches!(set, FiellerSet::Complement { .. } | FiellerSet::WholeLine));
        let set = fieller_quadratic(0.0, 0.0, [[4e-4, 0.0], [0.0, 6e-4]], 3.84);
        assert_eq!(set, FiellerSet::WholeLine);
    }

    #[test]
    fn fieller_scalar_is_symmetric() {
        let draws: Vec<f64> = (0..100).map(|k| 0.2 + 0.001 * (k as f64 - 49.5)).collect();
        let var = empirical_cov(&draws, &draws);
        let set = ci_fieller_scalar(0.2, &draws, var, 0.05).unwrap();
        match set {
            FiellerSet::Interval { lower, upper } => {
                assert!(((lower + upper) / 2.0 - 0.2).abs() < 1e-12);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn ci_selection_parsing() {
        let all: CiSelection = "all".parse().unwrap();
        assert_eq!(all, CiSelection::default());
        let some: CiSelection = "normal,fieller".parse().unwrap();
        assert!(some.normal && some.fieller && !some.quantile);
        assert!("bogus".parse::<CiSelection>().is_err());
    }

    proptest! {
        #[test]
        fn fieller_contains_point_ratio(
            num in -1.0f64..1.0,
            den in prop_oneof![-1.0f64..-0.05, 0.05f64..1.0],
            draws in prop::collection::vec((-0.2f64..0.2, -0.2f64..0.2), 40..80),
        ) {
            let nd: Vec<f64> = draws.iter().map(|d| num + d.0).collect();
            let dd: Vec<f64> = draws.iter().map(|d| den + 0.5 * d.0 + d.1).collect();
            let sigma = covariance_2x2(&nd, &dd, VarianceMode::Empirical).unwrap();
            let set = ci_fieller(num, den, &nd, &dd, sigma, 0.05).unwrap();
            let r = 1.0 - num / den;
            prop_assert!(set.contains(r) || (set_contains_approx(&set, r)), "{:?} vs {}", set, r);
        }

        #[test]
        fn quantile_endpoints_are_draws(
            values in prop::collection::vec(-5.0f64..5.0, 1..300),
            alpha in 0.01f64..0.5,
        ) {
            let ci = ci_quantile(&values, alpha).unwrap();
            prop_assert!(values.contains(&ci.lower));
            prop_assert!(values.contains(&ci.upper));
            prop_assert!(ci.lower <= ci.upper);
        }
    }

    fn set_contains_approx(set: &FiellerSet, r: f64) -> bool {
        let eps = 1e-9 * (1.0 + r.abs());
        set.contains(r - eps) || set.contains(r + eps)
    }
}
