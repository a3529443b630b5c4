//! Kernel-weighted Nelson-Aalen estimation of the conditional survival
//! `P(T > t | T > t0, S = s)` within one arm, and the undersmoothed
//! normal-reference bandwidth.

use serde::{Deserialize, Serialize};

use crate::data::SubjectRecord;
use crate::error::{Error, Result};

/// Increments whose kernel-weighted risk set falls below this fraction of the
/// total kernel mass are skipped.
pub const RISK_SET_GUARD: f64 = 1e-10;


/// Monotone transformation applied to surrogate values before smoothing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Transform {
    #[default]
    Log,
    Identity,
    /// `s -> 1/s`, for markers negatively associated with survival.
    Reciprocal,
}

impl Transform {
    pub fn apply(self, s: f64) -> f64 {
        match self {
            Transform::Log => s.ln(),
            Transform::Identity => s,
            Transform::Reciprocal => 1.0 / s,
        }
    }
}

impl std::str::FromStr for Transform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "log" => Ok(Transform::Log),
            "identity" => Ok(Transform::Identity),
            "reciprocal" => Ok(Transform::Reciprocal),
            other => Err(Error::InvalidParameter(format!("unknown transform `{other}`"))),
        }
    }
}

/// Which sample size enters the `m^{-1/5}` factor of the reference rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BandwidthSample {
    /// Arm-A subjects under observation at `t0` (the estimation sample).
    #[default]
    AtRisk,
    FullArm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KernelSpec {
    pub transform: Transform,
    /// Undersmoothing exponent, `h = h_opt * n_A^{-c0}`.
    pub c0: f64,
    /// Multiplier of the normal-reference rule.
    pub scott_constant: f64,
    pub bandwidth_override: Option<f64>,
    pub bandwidth_sample: BandwidthSample,
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec {
            transform: Transform::Log,
            c0: 0.11,
            scott_constant: 1.06,
            bandwidth_override: None,
            bandwidth_sample: BandwidthSample::AtRisk,
        }
    }
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.c0 > 0.05 && self.c0 < 0.3) {
            return Err(Error::InvalidParameter(format!(
                "c0 = {} outside (1/20, 3/10)",
                self.c0
            )));
        }
        if let Some(h) = self.bandwidth_override {
            if !(h.is_finite() && h > 0.0) {
                return Err(Error::InvalidParameter(format!("bandwidth {h} must be positive")));
            }
        }
        if !(self.scott_constant.is_finite() && self.scott_constant > 0.0) {
            return Err(Error::InvalidParameter("scott_constant must be positive".into()));
        }
        Ok(())
    }
}

/// Type-7 (linear interpolation) sample quantile of sorted data.
pub(crate) fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = p * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Bandwidth on the transformed scale:
/// `1.06 * min(sd, IQR/1.34) * m^{-1/5} * n_a^{-c0}`.
pub fn resolve_bandwidth(transformed: &[f64], n_a: usize, spec: &KernelSpec) -> Result<f64> {
    spec.validate()?;
    if let Some(h) = spec.bandwidth_override {
        return Ok(h);
    }
    let m = transformed.len();
    if m < 2 {
        return Err(Error::DegenerateSurrogate);
    }
    let mut sorted = transformed.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted[0] == sorted[m - 1] {
        return Err(Error::DegenerateSurrogate);
    }
    let mean = transformed.iter().sum::<f64>() / m as f64;
    let var = transformed.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
    let sd = var.sqrt();
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    if !(spread > 0.0) || !spread.is_finite() {
        return Err(Error::DegenerateSurrogate);
    }
    let size = match spec.bandwidth_sample {
        BandwidthSample::AtRisk => m,
        BandwidthSample::FullArm => n_a.max(m),
    };
    let h_opt = spec.scott_constant * spread * (size as f64).powf(-0.2);
    Ok(h_opt * (n_a as f64).powf(-spec.c0))
}

/// Gaussian kernel values `K_h(gamma_j - g)` divided by their largest value.
/// The hazard is a ratio of kernel-weighted sums, so the common factor
/// cancels; dividing it out keeps far-from-data points from underflowing.
fn kernel_row(gamma: &[f64], g: f64, h: f64) -> impl Iterator<Item = f64> + '_ {
    let nearest = gamma
        .iter()
        .map(|&gj| ((gj - g) / h).powi(2))
        .fold(f64::INFINITY, f64::min);
    gamma.iter().map(move |&gj| {
        let u2 = ((gj - g) / h).powi(2);
        (-0.5 * (u2 - nearest)).exp()
    })
}

/// Kernel hazard estimate at one point, with the number of skipped
/// increments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HazardValue {
    pub cumulative_hazard: f64,
    pub skipped_increments: usize,
}

/// Kernel values `K_h(gamma(S_j) - gamma(s))` for a fixed set of evaluation
/// points, laid out row-per-point over the fit's subjects.
#[derive(Debug, Clone)]
pub struct KernelMatrix {
    values: Vec<f64>,
    ncol: usize,
    points: Vec<f64>,
}

impl KernelMatrix {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn row(&self, k: usize) -> &[f64] {
        &self.values[k * self.ncol..(k + 1) * self.ncol]
    }
}

/// Kernel Nelson-Aalen fit on the subjects of one arm still under
/// observation at `t0`.
#[derive(Debug, Clone)]
pub struct ConditionalSurvivalFit {
    t0: f64,
    bandwidth: f64,
    spec: KernelSpec,
    /// Follow-up times of the at-risk subset, ascending.
    times: Vec<f64>,
    events: Vec<bool>,
    /// Transformed surrogate values, aligned with `times`.
    gamma: Vec<f64>,
    /// Index of each at-risk subject within the arm's records.
    subject_index: Vec<usize>,
    /// Tie groups over `times`.
    groups: Vec<(usize, usize)>,
    /// Per-subject weights aligned with `times`.
    weights: Vec<f64>,
    gamma_range: (f64, f64),
    arm_size: usize,
}

impl ConditionalSurvivalFit {
    /// Fits on `arm`, resolving the bandwidth from the at-risk surrogates.
    pub fn new(arm: &[SubjectRecord], t0: f64, spec: &KernelSpec) -> Result<Self> {
        Self::build(arm, t0, spec, None)
    }

    /// Fits with an already-resolved bandwidth.
    pub fn with_bandwidth(
        arm: &[SubjectRecord],
        t0: f64,
        spec: &KernelSpec,
        bandwidth: f64,
    ) -> Result<Self> {
        if !(bandwidth.is_finite() && bandwidth > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "bandwidth {bandwidth} must be positive"
            )));
        }
        Self::build(arm, t0, spec, Some(bandwidth))
    }

    fn build(
        arm: &[SubjectRecord],
        t0: f64,
        spec: &KernelSpec,
        bandwidth: Option<f64>,
    ) -> Result<Self> {
        spec.validate()?;
        let mut at_risk: Vec<(usize, f64, bool, f64)> = arm
            .iter()
            .enumerate()
            .filter(|(_, r)| r.time > t0)
            .filter_map(|(i, r)| {
                r.surrogate
                    .map(|s| (i, r.time, r.event, spec.transform.apply(s)))
            })
            .collect();
        if at_risk.is_empty() {
            return Err(Error::InvalidStudy(format!(
                "no subjects under observation at t0 = {t0}"
            )));
        }
        at_risk.sort_by(|a, b| a.1.total_cmp(&b.1));
        let times: Vec<f64> = at_risk.iter().map(|x| x.1).collect();
        let gamma: Vec<f64> = at_risk.iter().map(|x| x.3).collect();
        let bandwidth = match bandwidth {
            Some(h) => h,
            None => resolve_bandwidth(&gamma, arm.len(), spec)?,
        };
        let mut groups = Vec::new();
        let mut start = 0;
        for k in 1..=times.len() {
            if k == times.len() || times[k] != times[start] {
                groups.push((start, k));
                start = k;
            }
        }
        let gamma_range = gamma
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &g| {
                (lo.min(g), hi.max(g))
            });
        Ok(ConditionalSurvivalFit {
            t0,
            bandwidth,
            spec: spec.clone(),
            events: at_risk.iter().map(|x| x.2).collect(),
            subject_index: at_risk.iter().map(|x| x.0).collect(),
            weights: vec![1.0; times.len()],
            times,
            gamma,
            groups,
            gamma_range,
            arm_size: arm.len(),
        })
    }

    /// Same fit and bandwidth with per-subject perturbation weights; `weights`
    /// is indexed like the arm's records.
    pub fn reweighted(&self, arm_weights: &[f64]) -> Result<Self> {
        let mut fit = self.clone();
        fit.weights = self.align_weights(arm_weights)?;
        Ok(fit)
    }

    /// Picks the at-risk subjects' weights out of an arm-level weight vector.
    pub fn align_weights(&self, arm_weights: &[f64]) -> Result<Vec<f64>> {
        if arm_weights.len() != self.arm_size {
            return Err(Error::InvalidParameter(format!(
                "{} weights for an arm of {}",
                arm_weights.len(),
                self.arm_size
            )));
        }
        Ok(self.subject_index.iter().map(|&i| arm_weights[i]).collect())
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn at_risk_count(&self) -> usize {
        self.times.len()
    }

    /// Observed range of transformed surrogates in the fitting arm.
    pub fn support(&self) -> (f64, f64) {
        self.gamma_range
    }

    /// Whether `s` (raw scale) falls outside the fitting arm's observed range.
    pub fn outside_support(&self, s: f64) -> bool {
        let g = self.spec.transform.apply(s);
        g < self.gamma_range.0 || g > self.gamma_range.1
    }

    fn groups_through(&self, t: f64) -> usize {
        self.groups.partition_point(|&(a, _)| self.times[a] <= t)
    }

    /// Core pass: `sum_z dN_w(z) / Y_w(z)` over event times in `(t0, t]`,
    /// where the kernel-times-weight values come from `kw`.
    fn hazard_pass(
        &self,
        kw: impl Fn(usize) -> f64,
        limit: usize,
        s: f64,
    ) -> Result<HazardValue> {
        let total: f64 = (0..self.times.len()).map(&kw).sum();
        if !(total > 0.0) {
            return Err(Error::EmptyRiskSet { s });
        }
        let floor = RISK_SET_GUARD * total;
        let mut risk = 0.0;
        let mut hazard = 0.0;
        let mut skipped = 0;
        for (g, &(a, b)) in self.groups.iter().enumerate().rev() {
            let mut d_n = 0.0;
            for j in a..b {
                let v = kw(j);
                risk += v;
                if self.events[j] {
                    d_n += v;
                }
            }
            if g < limit && d_n > 0.0 {
                if risk > floor {
                    hazard += d_n / risk;
                } else {
                    skipped += 1;
                }
            }
        }
        Ok(HazardValue {
            cumulative_hazard: hazard,
            skipped_increments: skipped,
        })
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if !(t > self.t0) {
            return Err(Error::InvalidParameter(format!(
                "t = {t} must exceed t0 = {}",
                self.t0
            )));
        }
        Ok(())
    }

    /// Cumulative hazard with the skipped-increment diagnostic.
    pub fn hazard(&self, t: f64, s: f64) -> Result<HazardValue> {
        self.check_time(t)?;
        let g = self.spec.transform.apply(s);
        let h = self.bandwidth;
        let limit = self.groups_through(t);
        let kernel: Vec<f64> = kernel_row(&self.gamma, g, h).collect();
        self.hazard_pass(|j| kernel[j] * self.weights[j], limit, s)
    }

    /// Kernel Nelson-Aalen cumulative hazard `Lambda(t | s, t0)`.
    pub fn lambda_hat(&self, t: f64, s: f64) -> Result<f64> {
        self.hazard(t, s).map(|v| v.cumulative_hazard)
    }

    /// Conditional survival `exp(-Lambda(t | s, t0))`.
    pub fn psi_hat(&self, t: f64, s: f64) -> Result<f64> {
        self.lambda_hat(t, s).map(|l| (-l).exp())
    }

    /// Precomputes kernel values for evaluation points `s` (raw scale).
    pub fn kernel_matrix(&self, points: &[f64]) -> KernelMatrix {
        let h = self.bandwidth;
        let ncol = self.gamma.len();
        let mut values = Vec::with_capacity(points.len() * ncol);
        for &s in points {
            let g = self.spec.transform.apply(s);
            values.extend(kernel_row(&self.gamma, g, h));
        }
        KernelMatrix {
            values,
            ncol,
            points: points.to_vec(),
        }
    }

    /// Cumulative hazards at every point of `matrix` under `aligned_weights`
    /// (ordered like the fit's at-risk subjects, see [`Self::align_weights`]).
    pub fn hazards_from_matrix(
        &self,
        matrix: &KernelMatrix,
        aligned_weights: &[f64],
        t: f64,
    ) -> Result<Vec<HazardValue>> {
        self.check_time(t)?;
        if matrix.ncol != self.gamma.len() || aligned_weights.len() != self.gamma.len() {
            return Err(Error::InvalidParameter("kernel matrix does not match fit".into()));
        }
        let limit = self.groups_through(t);
        (0..matrix.len())
            .map(|k| {
                let row = matrix.row(k);
                self.hazard_pass(|j| row[j] * aligned_weights[j], limit, matrix.points[k])
            })
            .collect()
    }
}
