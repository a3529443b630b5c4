//! Point estimates of the treatment effect, the residual effect given
//! landmark surrogate information, the proportion explained, their
//! survival-only analogues and the incremental value of the marker.

use serde::{Deserialize, Serialize};

use crate::censor::{phi_hat_times, CensoringFitter, StepSurvival};
use crate::data::{Group, StudyData};
use crate::error::{Error, Result};
use crate::kernel::{quantile_sorted, ConditionalSurvivalFit, KernelMatrix, KernelSpec};

/// `|delta|` below this flags the ratio estimates as unstable.
pub const DEFAULT_RATIO_FLOOR: f64 = 0.05;

/// Kernel matrices larger than this many entries are not cached.
const MATRIX_LIMIT: usize = 16_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateSet {
    pub delta: f64,
    pub delta_s: f64,
    pub r_s: f64,
    pub delta_t: f64,
    pub r_t: f64,
    pub iv_s: f64,
    pub t0: f64,
    pub t: f64,
    pub bandwidth: f64,
}

impl EstimateSet {
    /// Derives the ratio quantities from the three effect estimates.
    pub fn from_effects(delta: f64, delta_s: f64, delta_t: f64, t0: f64, t: f64, bandwidth: f64) -> Self {
        EstimateSet {
            delta,
            delta_s,
            r_s: r_s_hat(delta, delta_s),
            delta_t,
            r_t: r_s_hat(delta, delta_t),
            iv_s: iv_s_hat(delta, delta_s, delta_t),
            t0,
            t,
            bandwidth,
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.delta, self.delta_s, self.r_s, self.delta_t, self.r_t, self.iv_s]
            .iter()
            .all(|x| x.is_finite())
    }
}

/// `1 - delta_s / delta`.
pub fn r_s_hat(delta: f64, delta_s: f64) -> f64 {
    1.0 - delta_s / delta
}

/// `(delta_t - delta_s) / delta`, which equals `r_s - r_t`.
pub fn iv_s_hat(delta: f64, delta_s: f64, delta_t: f64) -> f64 {
    (delta_t - delta_s) / delta
}

pub fn is_unstable_ratio(delta: f64, floor: f64) -> bool {
    !(delta.abs() >= floor)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateDiagnostics {
    /// `|delta|` is below the ratio floor; ratio estimates are unreliable.
    pub unstable_ratio: bool,
    pub ratio_floor: f64,
    /// Kernel increments skipped by the risk-set guard, summed over arm-B
    /// evaluation points.
    pub skipped_increments: usize,
    /// Arm-B surrogate values outside the observed arm-A range.
    pub support_warnings: usize,
    pub at_risk_a: usize,
    pub observed_b: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointEstimate {
    pub estimates: EstimateSet,
    pub diagnostics: EstimateDiagnostics,
}

/// Precomputed state for evaluating all estimators repeatedly under
/// different subject weights, with the bandwidth held fixed.
#[derive(Debug, Clone)]
pub struct Estimator<'a> {
    data: &'a StudyData,
    censor_a: CensoringFitter,
    censor_b: CensoringFitter,
    times_a: Vec<f64>,
    times_b: Vec<f64>,
    fit: ConditionalSurvivalFit,
    /// Raw surrogate values of arm-B subjects under observation at `t0`.
    b_points: Vec<f64>,
    b_index: Vec<usize>,
    matrix: Option<KernelMatrix>,
    support_warnings: usize,
    ratio_floor: f64,
}

impl<'a> Estimator<'a> {
    pub fn new(data: &'a StudyData, spec: &KernelSpec) -> Result<Self> {
        let fit = ConditionalSurvivalFit::new(data.arm(Group::A), data.t0(), spec)?;
        Self::with_fit(data, fit)
    }

    /// Uses a prepared arm-A fit (its bandwidth in particular).
    pub fn with_fit(data: &'a StudyData, fit: ConditionalSurvivalFit) -> Result<Self> {
        let t0 = data.t0();
        let (b_index, b_points): (Vec<usize>, Vec<f64>) = data
            .arm(Group::B)
            .iter()
            .enumerate()
            .filter(|(_, r)| r.time > t0)
            .filter_map(|(i, r)| r.surrogate.map(|s| (i, s)))
            .unzip();
        let support_warnings = b_points.iter().filter(|&&s| fit.outside_support(s)).count();
        let matrix = (b_points.len() * fit.at_risk_count() <= MATRIX_LIMIT)
            .then(|| fit.kernel_matrix(&b_points));
        Ok(Estimator {
            censor_a: CensoringFitter::from_records(data.arm(Group::A))?,
            censor_b: CensoringFitter::from_records(data.arm(Group::B))?,
            times_a: data.times(Group::A),
            times_b: data.times(Group::B),
            data,
            fit,
            b_points,
            b_index,
            matrix,
            support_warnings,
            ratio_floor: DEFAULT_RATIO_FLOOR,
        })
    }

    pub fn with_ratio_floor(mut self, floor: f64) -> Self {
        self.ratio_floor = floor;
        self
    }

    pub fn data(&self) -> &StudyData {
        self.data
    }

    pub fn fit(&self) -> &ConditionalSurvivalFit {
        &self.fit
    }

    pub fn bandwidth(&self) -> f64 {
        self.fit.bandwidth()
    }

    /// Unit-weight estimates.
    pub fn point(&self) -> Result<PointEstimate> {
        let wa = vec![1.0; self.data.n(Group::A)];
        let wb = vec![1.0; self.data.n(Group::B)];
        self.weighted(&wa, &wb)
    }

    /// Estimates with subject weights `wa`, `wb` (indexed like the arms'
    /// records) applied to every component, including both censoring
    /// Kaplan-Meier curves and the kernel hazard.
    pub fn weighted(&self, wa: &[f64], wb: &[f64]) -> Result<PointEstimate> {
        let (t0, t) = (self.data.t0(), self.data.t());
        let wc_a = self.censor_a.fit(wa)?;
        let wc_b = self.censor_b.fit(wb)?;
        let phi_a_t = phi_hat_times(&self.times_a, t, &wc_a, wa, Group::A)?;
        let phi_b_t = phi_hat_times(&self.times_b, t, &wc_b, wb, Group::B)?;
        let phi_a_t0 = phi_hat_times(&self.times_a, t0, &wc_a, wa, Group::A)?;
        let phi_b_t0 = phi_hat_times(&self.times_b, t0, &wc_b, wb, Group::B)?;

        let (psi_sum, skipped) = self.weighted_psi_sum(wa, wb, t)?;
        let delta = phi_a_t - phi_b_t;
        let delta_s = residual_effect(psi_sum, wb, &wc_b, t0, phi_b_t)?;
        if phi_a_t0 <= 0.0 {
            return Err(Error::DivisionByZero("phi_A(t0)"));
        }
        let delta_t = phi_b_t0 * phi_a_t / phi_a_t0 - phi_b_t;
        let estimates =
            EstimateSet::from_effects(delta, delta_s, delta_t, t0, t, self.fit.bandwidth());
        Ok(PointEstimate {
            estimates,
            diagnostics: EstimateDiagnostics {
                unstable_ratio: is_unstable_ratio(delta, self.ratio_floor),
                ratio_floor: self.ratio_floor,
                skipped_increments: skipped,
                support_warnings: self.support_warnings,
                at_risk_a: self.fit.at_risk_count(),
                observed_b: self.b_points.len(),
            },
        })
    }

    /// `sum_i wb_i psi_A(t | S_Bi)` over arm-B subjects under observation.
    fn weighted_psi_sum(&self, wa: &[f64], wb: &[f64], t: f64) -> Result<(f64, usize)> {
        if wb.len() != self.data.n(Group::B) {
            return Err(Error::InvalidParameter("arm-B weight length".into()));
        }
        let hazards = match &self.matrix {
            Some(matrix) => {
                let aligned = self.fit.align_weights(wa)?;
                self.fit.hazards_from_matrix(matrix, &aligned, t)?
            }
            None => {
                let fit = self.fit.reweighted(wa)?;
                self.b_points
                    .iter()
                    .map(|&s| fit.hazard(t, s))
                    .collect::<Result<Vec<_>>>()?
            }
        };
        let mut sum = 0.0;
        let mut skipped = 0;
        for (h, &i) in hazards.iter().zip(&self.b_index) {
            sum += wb[i] * (-h.cumulative_hazard).exp();
            skipped += h.skipped_increments;
        }
        Ok((sum, skipped))
    }
}

fn residual_effect(
    psi_sum: f64,
    wb: &[f64],
    wc_b: &StepSurvival,
    t0: f64,
    phi_b_t: f64,
) -> Result<f64> {
    let w_t0 = wc_b.evaluate(t0);
    if w_t0 <= 0.0 {
        return Err(Error::CensoringSupportExhausted {
            arm: Group::B,
            time: t0,
        });
    }
    let total: f64 = wb.iter().sum();
    Ok(psi_sum / (total * w_t0) - phi_b_t)
}

/// Residual treatment effect with arm-B weights; `fit` carries the arm-A
/// kernel hazard (and its weights, if any).
pub fn delta_s_hat(data: &StudyData, fit: &ConditionalSurvivalFit, weights_b: &[f64]) -> Result<f64> {
    let (t0, t) = (data.t0(), data.t());
    let arm_b = data.arm(Group::B);
    let wc_b = CensoringFitter::from_records(arm_b)?.fit(weights_b)?;
    let phi_b_t = phi_hat_times(&data.times(Group::B), t, &wc_b, weights_b, Group::B)?;
    let mut psi_sum = 0.0;
    for (r, &w) in arm_b.iter().zip(weights_b) {
        if let (true, Some(s)) = (r.time > t0, r.surrogate) {
            psi_sum += w * fit.psi_hat(t, s)?;
        }
    }
    residual_effect(psi_sum, weights_b, &wc_b, t0, phi_b_t)
}

/// Residual effect using survival information up to `t0` only.
pub fn delta_t_hat(data: &StudyData, weights_a: &[f64], weights_b: &[f64]) -> Result<f64> {
    let (t0, t) = (data.t0(), data.t());
    let mut phi = [[0.0; 2]; 2];
    for (k, (group, w)) in [(Group::A, weights_a), (Group::B, weights_b)]
        .into_iter()
        .enumerate()
    {
        let wc = CensoringFitter::from_records(data.arm(group))?.fit(w)?;
        let times = data.times(group);
        phi[k] = [
            phi_hat_times(&times, t0, &wc, w, group)?,
            phi_hat_times(&times, t, &wc, w, group)?,
        ];
    }
    if phi[0][0] <= 0.0 {
        return Err(Error::DivisionByZero("phi_A(t0)"));
    }
    Ok(phi[1][0] * phi[0][1] / phi[0][0] - phi[1][1])
}

/// All unit-weight point estimates.
pub fn estimate(data: &StudyData, spec: &KernelSpec) -> Result<PointEstimate> {
    Estimator::new(data, spec)?.point()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Warn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionCheck {
    pub holds: bool,
    /// Grid points (raw surrogate scale) where the condition fails by more
    /// than the tolerance.
    pub violations: Vec<f64>,
    /// Largest violation magnitude observed.
    pub max_violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionsReport {
    pub grid: Vec<f64>,
    pub psi_a: Vec<f64>,
    pub psi_b: Vec<f64>,
    /// Conditional survival in arm A is non-decreasing in the (transformed)
    /// surrogate.
    pub c1: ConditionCheck,
    /// `P(S_A > s, T_A > t0) >= P(S_B > s, T_B > t0)`.
    pub c2: ConditionCheck,
    /// `psi_A(t | s) >= psi_B(t | s)`.
    pub c3: ConditionCheck,
    /// Adjacent grid pairs where arm-A conditional survival decreases.
    pub c1_decreasing_pairs: usize,
    pub verdict: Verdict,
    pub messages: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConditionTolerances {
    /// Allowed total decrease of `psi_A` along the grid.
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
}

impl Default for ConditionTolerances {
    fn default() -> Self {
        ConditionTolerances {
            c1: 0.1,
            c2: 0.05,
            c3: 0.1,
        }
    }
}

/// 101 equally spaced quantiles (1% to 99%) of the pooled observed
/// surrogate values.
pub fn default_grid(data: &StudyData) -> Vec<f64> {
    let mut pooled = observed_surrogates(data);
    pooled.sort_by(f64::total_cmp);
    (0..101)
        .map(|k| quantile_sorted(&pooled, 0.01 + 0.98 * k as f64 / 100.0))
        .collect()
}

fn observed_surrogates(data: &StudyData) -> Vec<f64> {
    data.arm(Group::A)
        .iter()
        .chain(data.arm(Group::B))
        .filter_map(|r| r.surrogate)
        .collect()
}

/// Empirical checks of the sufficient conditions for `0 <= R_S <= 1` and
/// against the surrogate paradox.
pub fn check_conditions(
    data: &StudyData,
    spec: &KernelSpec,
    grid: Option<&[f64]>,
    tol: &ConditionTolerances,
) -> Result<ConditionsReport> {
    let pooled = observed_surrogates(data);
    let (lo, hi) = pooled
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &s| (a.min(s), b.max(s)));
    let mut grid = match grid {
        Some(g) => {
            if let Some(&bad) = g.iter().find(|&&s| !(s >= lo && s <= hi)) {
                return Err(Error::GridOutsideSupport(bad));
            }
            if g.is_empty() {
                return Err(Error::InvalidParameter("empty grid".into()));
            }
            g.to_vec()
        }
        None => default_grid(data),
    };
    let transform = spec.transform;
    // Order along the transformed scale so "increasing" follows gamma.
    grid.sort_by(|a, b| transform.apply(*a).total_cmp(&transform.apply(*b)));
    let (t0, t) = (data.t0(), data.t());

    let fit_a = ConditionalSurvivalFit::new(data.arm(Group::A), t0, spec)?;
    let fit_b = ConditionalSurvivalFit::new(data.arm(Group::B), t0, spec)?;
    let psi_a = grid
        .iter()
        .map(|&s| fit_a.psi_hat(t, s))
        .collect::<Result<Vec<_>>>()?;
    let psi_b = grid
        .iter()
        .map(|&s| fit_b.psi_hat(t, s))
        .collect::<Result<Vec<_>>>()?;

    // C1: largest drop of psi_A between any earlier and later grid point.
    let mut running_max = f64::NEG_INFINITY;
    let mut c1_violations = Vec::new();
    let mut c1_max = 0.0f64;
    for (k, &p) in psi_a.iter().enumerate() {
        running_max = running_max.max(p);
        let drop = running_max - p;
        c1_max = c1_max.max(drop);
        if drop > tol.c1 {
            c1_violations.push(grid[k]);
        }
    }
    let decreasing_pairs = psi_a.windows(2).filter(|w| w[1] < w[0]).count();

    // C2: joint tail of the transformed surrogate and survival past t0.
    let tail = |group: Group, g: f64| -> Result<f64> {
        let arm = data.arm(group);
        let ones = vec![1.0; arm.len()];
        let wc = CensoringFitter::from_records(arm)?.fit(&ones)?;
        let w_t0 = wc.evaluate(t0);
        if w_t0 <= 0.0 {
            return Err(Error::CensoringSupportExhausted { arm: group, time: t0 });
        }
        let count = arm
            .iter()
            .filter(|r| r.time > t0 && r.surrogate.is_some_and(|s| transform.apply(s) > g))
            .count();
        Ok(count as f64 / arm.len() as f64 / w_t0)
    };
    let mut c2_violations = Vec::new();
    let mut c2_max = 0.0f64;
    for &s in &grid {
        let g = transform.apply(s);
        let gap = tail(Group::B, g)? - tail(Group::A, g)?;
        c2_max = c2_max.max(gap);
        if gap > tol.c2 {
            c2_violations.push(s);
        }
    }

    let mut c3_violations = Vec::new();
    let mut c3_max = 0.0f64;
    for (k, &s) in grid.iter().enumerate() {
        let gap = psi_b[k] - psi_a[k];
        c3_max = c3_max.max(gap);
        if gap > tol.c3 {
            c3_violations.push(s);
        }
    }

    let check = |violations: Vec<f64>, max: f64| ConditionCheck {
        holds: violations.is_empty(),
        violations,
        max_violation: max,
    };
    let c1 = check(c1_violations, c1_max);
    let c2 = check(c2_violations, c2_max);
    let c3 = check(c3_violations, c3_max);
    let mut messages = Vec::new();
    if !c1.holds {
        messages.push(format!(
            "C1: arm-A conditional survival decreases in the surrogate by up to {:.3}; if the marker is negatively associated with survival, use its reciprocal",
            c1.max_violation
        ));
    }
    if !c2.holds {
        messages.push(format!(
            "C2: arm-B joint surrogate/survival tail exceeds arm A by up to {:.3}",
            c2.max_violation
        ));
    }
    if !c3.holds {
        messages.push(format!(
            "C3: arm-B conditional survival exceeds arm A by up to {:.3}",
            c3.max_violation
        ));
    }
    let verdict = if messages.is_empty() {
        Verdict::Pass
    } else {
        messages.push(
            "conditions for 0 <= R_S <= 1 are not supported by the data; beware of the surrogate paradox"
                .into(),
        );
        Verdict::Warn
    };
    Ok(ConditionsReport {
        grid,
        psi_a,
        psi_b,
        c1,
        c2,
        c3,
        c1_decreasing_pairs: decreasing_pairs,
        verdict,
        messages,
    })
}

/// Human-readable summary of a conditions report.
pub fn render_conditions(report: &ConditionsReport) -> String {
    use std::fmt::Write as _;
    let mut out = String::new();
    for (name, c) in [("C1", &report.c1), ("C2", &report.c2), ("C3", &report.c3)] {
        let _ = writeln!(
            out,
            "{name}: {}  max violation {:.4}  violating grid points {}",
            if c.holds { "holds" } else { "violated" },
            c.max_violation,
            c.violations.len()
        );
    }
    let verdict = match report.verdict {
        Verdict::Pass => "pass",
        Verdict::Warn => "warn",
    };
    let _ = writeln!(out, "verdict: {verdict}");
    for m in &report.messages {
        let _ = writeln!(out, "{m}");
    }
    out
}
