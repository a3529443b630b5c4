//! Independent brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use landmark_surrogate::kernel::Transform;
use landmark_surrogate::{Group, StudyData, SubjectRecord};

/// Drops censoring: every subject's observed time becomes its event time.
pub fn uncensored(data: &StudyData) -> StudyData {
    let strip = |g: Group| -> Vec<SubjectRecord> {
        data.arm(g)
            .iter()
            .map(|r| SubjectRecord { event: true, ..r.clone() })
            .collect()
    };
    StudyData::new(strip(Group::A), strip(Group::B), data.t0(), data.t()).unwrap()
}

pub fn gaussian(u: f64) -> f64 {
    (-0.5 * u * u).exp()
}

/// Kernel Nelson-Aalen evaluated by a direct double loop over event times
/// and subjects, with no sorting or caching.
pub fn brute_lambda(arm: &[SubjectRecord], t0: f64, t: f64, s: f64, h: f64, tr: Transform) -> f64 {
    let at_risk: Vec<&SubjectRecord> = arm.iter().filter(|r| r.time > t0).collect();
    let k = |r: &SubjectRecord| gaussian((tr.apply(r.surrogate.unwrap()) - tr.apply(s)) / h);
    let mut event_times: Vec<f64> = at_risk
        .iter()
        .filter(|r| r.event && r.time <= t)
        .map(|r| r.time)
        .collect();
    event_times.sort_by(f64::total_cmp);
    event_times.dedup();
    event_times
        .iter()
        .map(|&z| {
            let dn: f64 = at_risk
                .iter()
                .filter(|r| r.event && r.time == z)
                .map(|r| k(r))
                .sum();
            let y: f64 = at_risk.iter().filter(|r| r.time >= z).map(|r| k(r)).sum();
            dn / y
        })
        .sum()
}

pub fn proportion_above(arm: &[SubjectRecord], u: f64) -> f64 {
    arm.iter().filter(|r| r.time > u).count() as f64 / arm.len() as f64
}

/// Stratified Nelson-Aalen on one surrogate level.
pub fn stratum_nelson_aalen(arm: &[SubjectRecord], t0: f64, t: f64, level: f64) -> f64 {
    let stratum: Vec<&SubjectRecord> = arm
        .iter()
        .filter(|r| r.time > t0 && r.surrogate == Some(level))
        .collect();
    let mut times: Vec<f64> = stratum
        .iter()
        .filter(|r| r.event && r.time <= t)
        .map(|r| r.time)
        .collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    times
        .iter()
        .map(|&z| {
            let d = stratum.iter().filter(|r| r.event && r.time == z).count() as f64;
            let y = stratum.iter().filter(|r| r.time >= z).count() as f64;
            d / y
        })
        .sum()
}

pub fn discretize(data: &StudyData, levels: &[f64]) -> StudyData {
    let map = |g: Group| -> Vec<SubjectRecord> {
        data.arm(g)
            .iter()
            .map(|r| SubjectRecord {
                surrogate: r.surrogate.map(|s| levels[(s as usize).min(levels.len() - 1)]),
                ..r.clone()
            })
            .collect()
    };
    StudyData::new(map(Group::A), map(Group::B), data.t0(), data.t()).unwrap()
}
