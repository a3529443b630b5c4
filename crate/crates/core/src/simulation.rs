//! Synthetic data generators, Monte-Carlo truth oracles and the replication
//! runner that summarizes bias, empirical and average standard errors, MSE
//! and interval coverage.

use std::fmt::Write as _;

use rand::distr::Open01;
use rand::Rng;
use rand_distr::{Distribution, Exp, Gamma, Normal as NormalDist, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{Group, StudyData, SubjectRecord};
use crate::error::{Error, Result};
use crate::estimators::{EstimateSet, Estimator};
use crate::inference::{infer, FiellerSet, InferenceConfig, Interval, VarianceMode};
use crate::kernel::KernelSpec;
use crate::rng::{substream, tag, StreamRng};

pub const SIMULATION_SCHEMA_VERSION: u32 = 1;
/// Largest tolerated fraction of failed replicates.
pub const MAX_FAILED_REPLICATES: f64 = 0.02;

// Calibration of the `dpp` generator: P(T > t0) per arm, the arm-B marker
// mean shift and the probit intercepts of P(T > t | T > t0, x).
const DPP_P0_A: f64 = 0.963;
const DPP_P0_B: f64 = 0.8827;
const DPP_SHIFT_B: f64 = -0.2451;
const DPP_INTERCEPT_A: f64 = 1.7573;
const DPP_INTERCEPT_B: f64 = 1.4574;
const DPP_CENSORING_RATE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Setting {
    /// Gamma surrogates with exponential event times whose rate is linear in S.
    One,
    /// Gamma surrogates with a log-normal accelerated failure time model.
    Two,
    /// Setting two with log-normal censoring `exp(N(4, 1))`.
    TwoAltCensoring,
    /// Both arms drawn from the arm-B law of setting one.
    Null,
    /// Normal log-marker calibrated to a diabetes prevention trial's reported
    /// survival and incidence probabilities, with `t0 = 1` and `t = 3`.
    Dpp,
}

impl Setting {
    pub const ALL: [Setting; 5] = [
        Setting::One,
        Setting::Two,
        Setting::TwoAltCensoring,
        Setting::Null,
        Setting::Dpp,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Setting::One => "1",
            Setting::Two => "2",
            Setting::TwoAltCensoring => "2alt",
            Setting::Null => "null",
            Setting::Dpp => "dpp",
        }
    }

    pub fn t0(self) -> f64 {
        match self {
            Setting::Dpp => 1.0,
            _ => 0.5,
        }
    }

    pub fn t(self) -> f64 {
        match self {
            Setting::Dpp => 3.0,
            _ => 1.0,
        }
    }

    /// True conditional survival `P(T_A > t | T_A > t0, S_A = s)`.
    pub fn psi_a(self, s: f64) -> f64 {
        let (t0, t) = (self.t0(), self.t());
        match self {
            Setting::One => (-0.2 * s * (t - t0)).exp(),
            Setting::Two | Setting::TwoAltCensoring => {
                let sd = 3.25f64.sqrt();
                let mu = 0.5 * s + 0.5;
                let std = Normal::standard();
                std.sf((t.ln() - mu) / sd) / std.sf((t0.ln() - mu) / sd)
            }
            Setting::Null => (-(0.2 + 0.22 * s) * (t - t0)).exp(),
            Setting::Dpp => Normal::standard().cdf(DPP_INTERCEPT_A + s.ln()),
        }
    }
}

impl std::fmt::Display for Setting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.id())
    }
}

impl std::str::FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "1" | "one" | "setting1" => Ok(Setting::One),
            "2" | "two" | "setting2" => Ok(Setting::Two),
            "2alt" | "setting2-altcens" => Ok(Setting::TwoAltCensoring),
            "null" => Ok(Setting::Null),
            "dpp" => Ok(Setting::Dpp),
            other => Err(Error::InvalidParameter(format!("unknown setting `{other}`"))),
        }
    }
}

/// Uncensored draw of one subject.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Latent {
    pub time: f64,
    pub surrogate: f64,
    pub covariate: f64,
}

fn open01(rng: &mut StreamRng) -> f64 {
    rng.sample(Open01)
}

fn std_normal(rng: &mut StreamRng) -> f64 {
    StandardNormal.sample(rng)
}

/// `-log(1 - Phi(z))` evaluated as `-log Phi(-z)` to keep precision.
fn exp_quantile_of_normal(z: f64) -> f64 {
    -Normal::standard().cdf(-z).ln()
}

/// Setting-one style event time: exponential with rate `rate`, driven by the
/// covariate through the probability integral transform `U = Phi(Z)`.
fn pit_exponential(rate: f64, rng: &mut StreamRng) -> (f64, f64) {
    loop {
        let z = std_normal(rng);
        let time = exp_quantile_of_normal(z) / rate;
        if time > 0.0 && time.is_finite() {
            return (time, z);
        }
    }
}

pub fn draw_latent(setting: Setting, arm: Group, rng: &mut StreamRng) -> Latent {
    let gamma_a = Gamma::new(2.0, 2.0).expect("valid gamma");
    let gamma_b = Gamma::new(9.0, 0.5).expect("valid gamma");
    match (setting, arm) {
        (Setting::One, Group::A) => {
            let s = gamma_a.sample(rng);
            let (time, z) = pit_exponential(0.2 * s, rng);
            Latent { time, surrogate: s, covariate: z }
        }
        (Setting::One, Group::B) | (Setting::Null, _) => {
            let s = gamma_b.sample(rng);
            let (time, z) = pit_exponential(0.2 + 0.22 * s, rng);
            Latent { time, surrogate: s, covariate: z }
        }
        (Setting::Two | Setting::TwoAltCensoring, _) => {
            let (s, slope, shift) = match arm {
                Group::A => (gamma_a.sample(rng), 0.5, 0.5),
                Group::B => (gamma_b.sample(rng), 0.1, 0.0),
            };
            let z = std_normal(rng);
            let eps = shift + std_normal(rng);
            Latent {
                time: (slope * s + 1.5 * z + eps).exp(),
                surrogate: s,
                covariate: z,
            }
        }
        (Setting::Dpp, _) => {
            let (p0, shift, intercept) = match arm {
                Group::A => (DPP_P0_A, 0.0, DPP_INTERCEPT_A),
                Group::B => (DPP_P0_B, DPP_SHIFT_B, DPP_INTERCEPT_B),
            };
            let (t0, t) = (setting.t0(), setting.t());
            let x = shift + std_normal(rng);
            let covariate = x + std_normal(rng);
            let time = if open01(rng) >= p0 {
                t0 * open01(rng)
            } else if open01(rng) < Normal::standard().cdf(intercept + x) {
                t + Exp::new(1.0).expect("valid rate").sample(rng)
            } else {
                t0 + (t - t0) * open01(rng)
            };
            Latent {
                time,
                surrogate: x.exp(),
                covariate,
            }
        }
    }
}

pub fn draw_censoring(setting: Setting, rng: &mut StreamRng) -> f64 {
    let rate = |r: f64| Exp::new(r).expect("valid rate");
    loop {
        let c = match setting {
            Setting::One | Setting::Null => rate(0.5).sample(rng),
            Setting::Two => {
                if rng.random_bool(0.5) {
                    rate(0.5).sample(rng)
                } else {
                    rate(0.3).sample(rng)
                }
            }
            Setting::TwoAltCensoring => {
                let n: f64 = NormalDist::new(4.0, 1.0).expect("valid normal").sample(rng);
                n.exp()
            }
            Setting::Dpp => rate(DPP_CENSORING_RATE).sample(rng),
        };
        if c > 0.0 {
            return c;
        }
    }
}

/// Observed records for one arm. Event times come from `events`, censoring
/// times from `censoring`, so censoring laws can be swapped without changing
/// the latent outcomes. The surrogate is recorded iff `X > t0`.
pub fn generate(
    setting: Setting,
    arm: Group,
    n: usize,
    events: &mut StreamRng,
    censoring: &mut StreamRng,
) -> Vec<SubjectRecord> {
    let t0 = setting.t0();
    (0..n)
        .map(|_| {
            let latent = draw_latent(setting, arm, events);
            let c = draw_censoring(setting, censoring);
            let x = latent.time.min(c);
            let event = latent.time <= c;
            SubjectRecord::new(arm, x, event, (x > t0).then_some(latent.surrogate))
                .with_covariates(vec![latent.covariate])
        })
        .collect()
}

/// Study for replicate `replicate` under `seed`.
pub fn generate_study(setting: Setting, n: usize, seed: u64, replicate: u64) -> Result<StudyData> {
    let arm = |g: Group, k: u64| {
        // The alternate-censoring variant shares event streams with setting two.
        let mut ev = substream(seed, &[tag::EVENTS, replicate, k]);
        let mut cs = substream(seed, &[tag::CENSORING, replicate, k]);
        generate(setting, g, n, &mut ev, &mut cs)
    };
    StudyData::new(arm(Group::A, 0), arm(Group::B, 1), setting.t0(), setting.t())
}

/// Population values of the estimands.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthValues {
    pub delta: f64,
    pub delta_s: f64,
    pub r_s: f64,
    pub delta_t: f64,
    pub r_t: f64,
    pub iv_s: f64,
}

impl TruthValues {
    fn from_parts(p_a_t: f64, p_a_t0: f64, p_b_t: f64, p_b_t0: f64, e_psi: f64) -> Self {
        let delta = p_a_t - p_b_t;
        let delta_s = e_psi - p_b_t;
        let delta_t = p_b_t0 * p_a_t / p_a_t0 - p_b_t;
        let r_s = 1.0 - delta_s / delta;
        let r_t = 1.0 - delta_t / delta;
        TruthValues {
            delta,
            delta_s,
            r_s,
            delta_t,
            r_t,
            iv_s: r_s - r_t,
        }
    }

    pub fn of(&self, estimand: &str) -> f64 {
        match estimand.trim_end_matches("_aug") {
            "delta" => self.delta,
            "delta_s" => self.delta_s,
            "r_s" => self.r_s,
            "delta_t" => self.delta_t,
            "r_t" => self.r_t,
            "iv_s" => self.iv_s,
            _ => f64::NAN,
        }
    }
}

/// Monte-Carlo truth with batch standard errors and the marginal summaries
/// used to calibrate generators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthReport {
    pub setting: Setting,
    pub mc_size: usize,
    pub truth: TruthValues,
    pub mc_se: TruthValues,
    pub p_a_t: f64,
    pub p_b_t: f64,
    pub p_a_t0: f64,
    pub p_b_t0: f64,
    pub mean_s_a_given_t0: f64,
    pub mean_s_b_given_t0: f64,
    pub censored_before_t_a: f64,
    pub censored_before_t_b: f64,
}

#[derive(Debug, Clone, Copy, Default)]
struct BatchSums {
    n: f64,
    a_t: f64,
    a_t0: f64,
    s_a_t0: f64,
    cens_a: f64,
    b_t: f64,
    b_t0: f64,
    s_b_t0: f64,
    psi_b: f64,
    cens_b: f64,
}

impl BatchSums {
    fn add(mut self, o: BatchSums) -> BatchSums {
        self.n += o.n;
        self.a_t += o.a_t;
        self.a_t0 += o.a_t0;
        self.s_a_t0 += o.s_a_t0;
        self.cens_a += o.cens_a;
        self.b_t += o.b_t;
        self.b_t0 += o.b_t0;
        self.s_b_t0 += o.s_b_t0;
        self.psi_b += o.psi_b;
        self.cens_b += o.cens_b;
        self
    }

    fn truth(&self) -> TruthValues {
        TruthValues::from_parts(
            self.a_t / self.n,
            self.a_t0 / self.n,
            self.b_t / self.n,
            self.b_t0 / self.n,
            self.psi_b / self.n,
        )
    }
}

fn truth_batch(setting: Setting, size: usize, seed: u64, batch: u64) -> BatchSums {
    let (t0, t) = (setting.t0(), setting.t());
    let mut acc = BatchSums {
        n: size as f64,
        ..Default::default()
    };
    for (arm, k) in [(Group::A, 0u64), (Group::B, 1)] {
        let mut ev = substream(seed, &[tag::TRUTH, batch, k]);
        let mut cs = substream(seed, &[tag::TRUTH, batch, k + 2]);
        for _ in 0..size {
            let l = draw_latent(setting, arm, &mut ev);
            let c = draw_censoring(setting, &mut cs);
            let cens = (c < l.time && c < t) as u8 as f64;
            let (above_t, above_t0) = ((l.time > t) as u8 as f64, (l.time > t0) as u8 as f64);
            match arm {
                Group::A => {
                    acc.a_t += above_t;
                    acc.a_t0 += above_t0;
                    acc.s_a_t0 += above_t0 * l.surrogate;
                    acc.cens_a += cens;
                }
                Group::B => {
                    acc.b_t += above_t;
                    acc.b_t0 += above_t0;
                    acc.s_b_t0 += above_t0 * l.surrogate;
                    if l.time > t0 {
                        acc.psi_b += setting.psi_a(l.surrogate);
                    }
                    acc.cens_b += cens;
                }
            }
        }
    }
    acc
}

const TRUTH_BATCHES: usize = 20;

/// Censoring-free Monte-Carlo evaluation of every estimand with `mc_size`
/// subjects per arm. `delta_s` uses the known conditional survival of arm A
/// averaged over the arm-B surrogate law among arm-B survivors to `t0`.
pub fn truth_oracle(setting: Setting, mc_size: usize, seed: u64) -> Result<TruthReport> {
    if mc_size < TRUTH_BATCHES * 10 {
        return Err(Error::InvalidParameter(format!(
            "Monte-Carlo size {mc_size} is below {}",
            TRUTH_BATCHES * 10
        )));
    }
    let base = mc_size / TRUTH_BATCHES;
    let batches: Vec<BatchSums> = (0..TRUTH_BATCHES)
        .into_par_iter()
        .map(|b| {
            let size = base + usize::from(b < mc_size % TRUTH_BATCHES);
            truth_batch(setting, size, seed, b as u64)
        })
        .collect();
    let total = batches
        .iter()
        .fold(BatchSums::default(), |acc, b| acc.add(*b));
    let truth = total.truth();
    let per_batch: Vec<TruthValues> = batches.iter().map(BatchSums::truth).collect();
    let batch_se = |f: fn(&TruthValues) -> f64| {
        let v: Vec<f64> = per_batch.iter().map(f).collect();
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0);
        (var / v.len() as f64).sqrt()
    };
    let mc_se = TruthValues {
        delta: batch_se(|t| t.delta),
        delta_s: batch_se(|t| t.delta_s),
        r_s: batch_se(|t| t.r_s),
        delta_t: batch_se(|t| t.delta_t),
        r_t: batch_se(|t| t.r_t),
        iv_s: batch_se(|t| t.iv_s),
    };
    Ok(TruthReport {
        setting,
        mc_size,
        truth,
        mc_se,
        p_a_t: total.a_t / total.n,
        p_b_t: total.b_t / total.n,
        p_a_t0: total.a_t0 / total.n,
        p_b_t0: total.b_t0 / total.n,
        mean_s_a_given_t0: total.s_a_t0 / total.a_t0,
        mean_s_b_given_t0: total.s_b_t0 / total.b_t0,
        censored_before_t_a: total.cens_a / total.n,
        censored_before_t_b: total.cens_b / total.n,
    })
}

/// Exact truths where a closed form exists.
pub fn exact_truth(setting: Setting) -> Option<TruthValues> {
    match setting {
        Setting::Null => Some(TruthValues {
            delta: 0.0,
            delta_s: 0.0,
            r_s: f64::NAN,
            delta_t: 0.0,
            r_t: f64::NAN,
            iv_s: f64::NAN,
        }),
        Setting::Dpp => {
            // E Phi(a + x) = Phi((a + mu) / sqrt(2)) for x ~ N(mu, 1).
            let phi = |a: f64| Normal::standard().cdf(a / 2f64.sqrt());
            let p_a_t = DPP_P0_A * phi(DPP_INTERCEPT_A);
            let p_b_t = DPP_P0_B * phi(DPP_INTERCEPT_B + DPP_SHIFT_B);
            let e_psi = DPP_P0_B * phi(DPP_INTERCEPT_A + DPP_SHIFT_B);
            Some(TruthValues::from_parts(p_a_t, DPP_P0_A, p_b_t, DPP_P0_B, e_psi))
        }
        _ => None,
    }
}

/// Truth used to score a simulation: exact when available, otherwise a
/// fixed-seed Monte-Carlo oracle.
pub fn reference_truth(setting: Setting, mc_size: usize) -> Result<TruthValues> {
    match exact_truth(setting) {
        Some(t) => Ok(t),
        None => Ok(truth_oracle(setting, mc_size, 0x5EED)?.truth),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub setting: Setting,
    pub n: usize,
    pub reps: usize,
    /// Perturbation draws per replicate; zero gives point estimates only.
    pub draws: usize,
    pub seed: u64,
    pub alpha: f64,
    pub variance: VarianceMode,
    pub kernel: KernelSpec,
    pub augment: bool,
    /// Monte-Carlo size of the truth oracle.
    pub truth_mc_size: usize,
}

impl SimulationConfig {
    pub fn new(setting: Setting, n: usize, reps: usize) -> Self {
        SimulationConfig {
            setting,
            n,
            reps,
            draws: 500,
            seed: 0,
            alpha: 0.05,
            variance: VarianceMode::Empirical,
            kernel: KernelSpec::default(),
            augment: true,
            truth_mc_size: 2_000_000,
        }
    }
}

/// One estimand in one replicate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicateValue {
    pub point: f64,
    pub se: Option<f64>,
    pub ci_normal: Option<Interval>,
    pub ci_quantile: Option<Interval>,
    pub ci_fieller: Option<FiellerSet>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub replicate: usize,
    pub values: Vec<ReplicateValue>,
    pub censored_before_t_a: f64,
    pub censored_before_t_b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationRow {
    pub estimand: String,
    pub truth: f64,
    pub mean: f64,
    pub bias: f64,
    /// Standard deviation of the point estimates across replicates.
    pub ese: Option<f64>,
    /// Mean resampling standard error.
    pub ase: Option<f64>,
    /// Mean squared error around the truth.
    pub mse: f64,
    pub coverage_normal: Option<f64>,
    pub coverage_quantile: Option<f64>,
    pub coverage_fieller: Option<f64>,
    /// Replicates whose Fieller set was not a bounded interval.
    pub fieller_non_interval: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub schema_version: u32,
    pub config: SimulationConfig,
    pub truth: TruthValues,
    pub replicates_ok: usize,
    pub replicates_failed: usize,
    pub failures: Vec<String>,
    pub censored_before_t_a: f64,
    pub censored_before_t_b: f64,
    pub rows: Vec<SimulationRow>,
    pub replicates: Vec<ReplicateResult>,
}

impl SimulationReport {
    pub fn row(&self, estimand: &str) -> Option<&SimulationRow> {
        self.rows.iter().find(|r| r.estimand == estimand)
    }
}

const POINT_ESTIMANDS: [&str; 6] = ["delta", "delta_s", "r_s", "delta_t", "r_t", "iv_s"];
const AUG_ESTIMANDS: [&str; 3] = ["delta_aug", "delta_s_aug", "r_s_aug"];

fn estimand_names(augment: bool, with_inference: bool) -> Vec<&'static str> {
    let mut names = POINT_ESTIMANDS.to_vec();
    if augment && with_inference {
        names.extend(AUG_ESTIMANDS);
    }
    names
}

fn point_value(e: &EstimateSet, name: &str) -> f64 {
    match name {
        "delta" => e.delta,
        "delta_s" => e.delta_s,
        "r_s" => e.r_s,
        "delta_t" => e.delta_t,
        "r_t" => e.r_t,
        "iv_s" => e.iv_s,
        _ => f64::NAN,
    }
}

fn censored_fraction(data: &StudyData, g: Group) -> f64 {
    let arm = data.arm(g);
    arm.iter()
        .filter(|r| !r.event && r.time < data.t())
        .count() as f64
        / arm.len() as f64
}

fn run_replicate(config: &SimulationConfig, replicate: usize) -> Result<ReplicateResult> {
    let data = generate_study(config.setting, config.n, config.seed, replicate as u64)?;
    let with_inference = config.draws > 0;
    let names = estimand_names(config.augment, with_inference);
    let values = if with_inference {
        let inf_config = InferenceConfig {
            kernel: config.kernel.clone(),
            draws: config.draws,
            seed: substream(config.seed, &[tag::REPLICATE, replicate as u64]).random(),
            alpha: config.alpha,
            variance: config.variance,
            augment: config.augment.then(|| data.covariate_names().to_vec()),
            ..InferenceConfig::default()
        };
        let report = infer(&data, &inf_config)?;
        names
            .iter()
            .map(|name| {
                let s = report
                    .estimand(name)
                    .ok_or_else(|| Error::InvalidParameter(format!("missing estimand {name}")))?;
                Ok(ReplicateValue {
                    point: s.point,
                    se: Some(s.se),
                    ci_normal: s.ci_normal,
                    ci_quantile: s.ci_quantile,
                    ci_fieller: s.ci_fieller,
                })
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        let est = Estimator::new(&data, &config.kernel)?.point()?.estimates;
        if !est.is_finite() {
            return Err(Error::InvalidParameter("non-finite estimate".into()));
        }
        names
            .iter()
            .map(|name| ReplicateValue {
                point: point_value(&est, name),
                se: None,
                ci_normal: None,
                ci_quantile: None,
                ci_fieller: None,
            })
            .collect()
    };
    Ok(ReplicateResult {
        replicate,
        values,
        censored_before_t_a: censored_fraction(&data, Group::A),
        censored_before_t_b: censored_fraction(&data, Group::B),
    })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn coverage<T>(items: &[Option<T>], covered: impl Fn(&T) -> bool) -> Option<f64> {
    let present: Vec<&T> = items.iter().flatten().collect();
    if present.is_empty() {
        None
    } else {
        Some(present.iter().filter(|x| covered(x)).count() as f64 / present.len() as f64)
    }
}

fn summarize_rows(
    names: &[&str],
    truth: &TruthValues,
    results: &[ReplicateResult],
) -> Vec<SimulationRow> {
    names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let vals: Vec<ReplicateValue> = results.iter().map(|r| r.values[k]).collect();
            let points: Vec<f64> = vals.iter().map(|v| v.point).collect();
            let tr = truth.of(name);
            let m = mean(&points);
            let ese = (points.len() > 1).then(|| {
                (points.iter().map(|p| (p - m).powi(2)).sum::<f64>() / (points.len() as f64 - 1.0))
                    .sqrt()
            });
            let ses: Vec<f64> = vals.iter().filter_map(|v| v.se).collect();
            let fieller: Vec<Option<FiellerSet>> = vals.iter().map(|v| v.ci_fieller).collect();
            SimulationRow {
                estimand: name.to_string(),
                truth: tr,
                mean: m,
                bias: m - tr,
                ese,
                ase: (!ses.is_empty()).then(|| mean(&ses)),
                mse: mean(&points.iter().map(|p| (p - tr).powi(2)).collect::<Vec<_>>()),
                coverage_normal: coverage(
                    &vals.iter().map(|v| v.ci_normal).collect::<Vec<_>>(),
                    |ci| ci.contains(tr),
                ),
                coverage_quantile: coverage(
                    &vals.iter().map(|v| v.ci_quantile).collect::<Vec<_>>(),
                    |ci| ci.contains(tr),
                ),
                coverage_fieller: coverage(&fieller, |set| set.contains(tr)),
                fieller_non_interval: fieller
                    .iter()
                    .flatten()
                    .filter(|s| !s.is_bounded_interval())
                    .count(),
            }
        })
        .collect()
}

/// Runs `config.reps` independent replicates. Results depend only on the
/// configuration, not on thread count or scheduling.
pub fn run_study(config: &SimulationConfig) -> Result<SimulationReport> {
    if config.n < 2 || config.reps == 0 {
        return Err(Error::InvalidParameter(
            "simulation needs n >= 2 and at least one replicate".into(),
        ));
    }
    let truth = reference_truth(config.setting, config.truth_mc_size)?;
    let outcomes: Vec<Result<ReplicateResult>> = (0..config.reps)
        .into_par_iter()
        .map(|r| run_replicate(config, r))
        .collect();
    let mut results = Vec::with_capacity(config.reps);
    let mut failures = Vec::new();
    for (r, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(res) => results.push(res),
            Err(e) => failures.push(format!("replicate {r}: {e}")),
        }
    }
    if failures.len() as f64 > MAX_FAILED_REPLICATES * config.reps as f64 {
        return Err(Error::TooManyFailedReplicates {
            failed: failures.len(),
            total: config.reps,
            first: failures[0].clone(),
        });
    }
    let names = estimand_names(config.augment, config.draws > 0);
    let rows = summarize_rows(&names, &truth, &results);
    Ok(SimulationReport {
        schema_version: SIMULATION_SCHEMA_VERSION,
        config: config.clone(),
        truth,
        replicates_ok: results.len(),
        replicates_failed: failures.len(),
        failures,
        censored_before_t_a: mean(
            &results.iter().map(|r| r.censored_before_t_a).collect::<Vec<_>>(),
        ),
        censored_before_t_b: mean(
            &results.iter().map(|r| r.censored_before_t_b).collect::<Vec<_>>(),
        ),
        rows,
        replicates: results,
    })
}

fn cell(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x:.4}"),
        _ => "-".into(),
    }
}

/// Aligned text table of a simulation report.
pub fn render_table(report: &SimulationReport) -> String {
    let c = &report.config;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "setting {}  n = {} per arm  reps = {} ({} failed)  D = {}  variance = {:?}",
        c.setting, c.n, report.replicates_ok, report.replicates_failed, c.draws, c.variance
    );
    let _ = writeln!(
        out,
        "censored before t: A {:.3}  B {:.3}",
        report.censored_before_t_a, report.censored_before_t_b
    );
    let _ = writeln!(
        out,
        "{:<12} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}",
        "estimand", "truth", "bias", "ESE", "ASE", "MSE", "cov.N", "cov.Q", "cov.F", "F.open"
    );
    for r in &report.rows {
        let _ = writeln!(
            out,
            "{:<12} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}",
            r.estimand,
            cell(Some(r.truth)),
            cell(Some(r.bias)),
            cell(r.ese),
            cell(r.ase),
            cell(Some(r.mse)),
            cell(r.coverage_normal),
            cell(r.coverage_quantile),
            cell(r.coverage_fieller),
            r.fieller_non_interval
        );
    }
    out
}
