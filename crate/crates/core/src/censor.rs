//! Weighted Kaplan-Meier estimation of the censoring survival function and
//! inverse-probability-of-censoring weighted survival probabilities.

use serde::{Deserialize, Serialize};

use crate::data::{Group, StudyData, SubjectRecord};
use crate::error::{Error, Result};

/// Right-continuous, non-increasing step function starting at 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSurvival {
    jump_times: Vec<f64>,
    values: Vec<f64>,
}

impl StepSurvival {
    pub fn constant_one() -> Self {
        StepSurvival {
            jump_times: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Value at `u`: the product over all jumps at times `<= u`.
    pub fn evaluate(&self, u: f64) -> f64 {
        let k = self.jump_times.partition_point(|&x| x <= u);
        if k == 0 {
            1.0
        } else {
            self.values[k - 1]
        }
    }

    pub fn jump_times(&self) -> &[f64] {
        &self.jump_times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Sort order and tie groups of one arm, reusable across weight vectors.
#[derive(Debug, Clone)]
pub struct CensoringFitter {
    order: Vec<usize>,
    /// `(start, end)` ranges into `order` sharing one distinct time.
    groups: Vec<(usize, usize)>,
    times: Vec<f64>,
    censored: Vec<bool>,
}

impl CensoringFitter {
    pub fn new(times: &[f64], events: &[bool]) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::EmptyInput);
        }
        if times.len() != events.len() {
            return Err(Error::InvalidParameter(format!(
                "{} times but {} event indicators",
                times.len(),
                events.len()
            )));
        }
        let mut order: Vec<usize> = (0..times.len()).collect();
        order.sort_by(|&i, &j| times[i].total_cmp(&times[j]));
        let mut groups = Vec::new();
        let mut start = 0;
        for k in 1..=order.len() {
            if k == order.len() || times[order[k]] != times[order[start]] {
                groups.push((start, k));
                start = k;
            }
        }
        Ok(CensoringFitter {
            order,
            groups,
            times: times.to_vec(),
            censored: events.iter().map(|&d| !d).collect(),
        })
    }

    pub fn from_records(records: &[SubjectRecord]) -> Result<Self> {
        let times: Vec<f64> = records.iter().map(|r| r.time).collect();
        let events: Vec<bool> = records.iter().map(|r| r.event).collect();
        Self::new(&times, &events)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Product-limit estimate treating censoring as the event of interest.
    /// Risk sets use `X >= u`; subjects with an observed event at `u` stay in
    /// the risk set for the censoring jump at `u`.
    pub fn fit(&self, weights: &[f64]) -> Result<StepSurvival> {
        if weights.len() != self.len() {
            return Err(Error::InvalidParameter(format!(
                "{} weights for {} subjects",
                weights.len(),
                self.len()
            )));
        }
        let mut group_total = Vec::with_capacity(self.groups.len());
        let mut group_censored = Vec::with_capacity(self.groups.len());
        for &(a, b) in &self.groups {
            let mut total = 0.0;
            let mut cens = 0.0;
            for &i in &self.order[a..b] {
                total += weights[i];
                if self.censored[i] {
                    cens += weights[i];
                }
            }
            group_total.push(total);
            group_censored.push(cens);
        }
        // Risk sets accumulated from the top so the last group is exact.
        let mut at_risk = vec![0.0; self.groups.len()];
        let mut acc = 0.0;
        for k in (0..self.groups.len()).rev() {
            acc += group_total[k];
            at_risk[k] = acc;
        }
        let mut jump_times = Vec::new();
        let mut values = Vec::new();
        let mut surv = 1.0;
        for (k, &(a, _)) in self.groups.iter().enumerate() {
            let d = group_censored[k];
            if d > 0.0 {
                let factor = if d >= at_risk[k] {
                    0.0
                } else {
                    1.0 - d / at_risk[k]
                };
                surv *= factor;
                jump_times.push(self.times[self.order[a]]);
                values.push(surv);
            }
        }
        Ok(StepSurvival { jump_times, values })
    }
}

/// Kaplan-Meier estimator of the censoring survival function.
pub fn km_censoring(times: &[f64], events: &[bool], weights: &[f64]) -> Result<StepSurvival> {
    CensoringFitter::new(times, events)?.fit(weights)
}

/// Weighted IPW survival probability
/// `sum w_i I(X_i > u) / W^C(u) / sum w_i`.
pub fn phi_hat_times(
    times: &[f64],
    u: f64,
    wc: &StepSurvival,
    weights: &[f64],
    arm: Group,
) -> Result<f64> {
    let w_u = wc.evaluate(u);
    if w_u <= 0.0 {
        return Err(Error::CensoringSupportExhausted { arm, time: u });
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (&x, &w) in times.iter().zip(weights) {
        den += w;
        if x > u {
            num += w;
        }
    }
    if den <= 0.0 {
        return Err(Error::DivisionByZero("sum of weights"));
    }
    Ok(num / den / w_u)
}

pub fn phi_hat(
    arm: &[SubjectRecord],
    u: f64,
    wc: &StepSurvival,
    weights: &[f64],
) -> Result<f64> {
    let group = arm.first().map(|r| r.group).ok_or(Error::EmptyInput)?;
    let times: Vec<f64> = arm.iter().map(|r| r.time).collect();
    phi_hat_times(&times, u, wc, weights, group)
}

/// IPW estimate of the treatment effect `P(T_A > t) - P(T_B > t)`.
pub fn delta_hat(data: &StudyData, weights_a: &[f64], weights_b: &[f64]) -> Result<f64> {
    let t = data.t();
    let mut phi = [0.0; 2];
    for (k, (group, w)) in [(Group::A, weights_a), (Group::B, weights_b)]
        .into_iter()
        .enumerate()
    {
        let arm = data.arm(group);
        let wc = CensoringFitter::from_records(arm)?.fit(w)?;
        phi[k] = phi_hat(arm, t, &wc, w)?;
    }
    Ok(phi[0] - phi[1])
}
