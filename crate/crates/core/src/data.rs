//! Two-arm censored survival data with landmark surrogate measurements.
//!
//! A [`StudyData`] is validated once at construction and is immutable
//! afterwards. The central invariant is surrogate observability: a subject
//! carries a surrogate value if and only if it is still under observation at
//! the landmark time, i.e. `X > t0` (strict; `X == t0` counts as not under
//! observation).

use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Treatment arm. `B` is the reference (placebo) arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Group {
    A,
    B,
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Group::A => f.write_str("A"),
            Group::B => f.write_str("B"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub group: Group,
    /// Observed follow-up time `X = min(T, C)`.
    pub time: f64,
    /// `true` when the primary outcome was observed (`T < C`).
    pub event: bool,
    /// Surrogate value at the landmark, present iff `time > t0`.
    pub surrogate: Option<f64>,
    pub covariates: Vec<f64>,
}

impl SubjectRecord {
    pub fn new(group: Group, time: f64, event: bool, surrogate: Option<f64>) -> Self {
        SubjectRecord {
            group,
            time,
            event,
            surrogate,
            covariates: Vec::new(),
        }
    }

    pub fn with_covariates(mut self, covariates: Vec<f64>) -> Self {
        self.covariates = covariates;
        self
    }
}

/// Validated two-arm study together with the landmark time `t0` and the
/// horizon `t`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyData {
    arm_a: Vec<SubjectRecord>,
    arm_b: Vec<SubjectRecord>,
    t0: f64,
    t: f64,
    covariate_names: Vec<String>,
}

impl StudyData {
    /// Builds a study from per-arm records. Covariate columns are named
    /// `z1, z2, ...` unless [`StudyData::with_covariate_names`] is used.
    pub fn new(
        arm_a: Vec<SubjectRecord>,
        arm_b: Vec<SubjectRecord>,
        t0: f64,
        t: f64,
    ) -> Result<Self> {
        let dim = arm_a
            .first()
            .or(arm_b.first())
            .map(|r| r.covariates.len())
            .unwrap_or(0);
        let names = (1..=dim).map(|k| format!("z{k}")).collect();
        Self::with_covariate_names(arm_a, arm_b, t0, t, names)
    }

    pub fn with_covariate_names(
        arm_a: Vec<SubjectRecord>,
        arm_b: Vec<SubjectRecord>,
        t0: f64,
        t: f64,
        covariate_names: Vec<String>,
    ) -> Result<Self> {
        if !(t0.is_finite() && t0 > 0.0) {
            return Err(Error::InvalidStudy(format!("t0 must be positive, got {t0}")));
        }
        if !(t.is_finite() && t > t0) {
            return Err(Error::InvalidStudy(format!(
                "horizon t = {t} must exceed t0 = {t0}"
            )));
        }
        let dim = covariate_names.len();
        for (group, arm) in [(Group::A, &arm_a), (Group::B, &arm_b)] {
            for (i, r) in arm.iter().enumerate() {
                // Position within the arm, 1-based, stands in for a line number.
                check_record(r, i + 1, t0)?;
                if r.group != group {
                    return Err(Error::InvalidStudy(format!(
                        "record {} of arm {group} is labelled {}",
                        i + 1,
                        r.group
                    )));
                }
                if r.covariates.len() != dim {
                    return Err(Error::InvalidStudy(format!(
                        "record {} of arm {group} has {} covariates, expected {dim}",
                        i + 1,
                        r.covariates.len()
                    )));
                }
            }
            if arm.len() < 2 {
                return Err(Error::EmptyArm(group));
            }
            if !arm.iter().any(|r| r.surrogate.is_some()) {
                return Err(Error::InvalidStudy(format!(
                    "arm {group} has no subject under observation at t0 = {t0}"
                )));
            }
        }
        Ok(StudyData {
            arm_a,
            arm_b,
            t0,
            t,
            covariate_names,
        })
    }

    pub fn arm(&self, group: Group) -> &[SubjectRecord] {
        match group {
            Group::A => &self.arm_a,
            Group::B => &self.arm_b,
        }
    }

    pub fn n(&self, group: Group) -> usize {
        self.arm(group).len()
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn covariate_dim(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    /// Column indices of the named covariates.
    pub fn covariate_indices(&self, names: &[String]) -> Result<Vec<usize>> {
        names
            .iter()
            .map(|name| {
                self.covariate_names
                    .iter()
                    .position(|c| c == name)
                    .ok_or_else(|| Error::UnknownCovariate(name.clone()))
            })
            .collect()
    }

    pub fn times(&self, group: Group) -> Vec<f64> {
        self.arm(group).iter().map(|r| r.time).collect()
    }

    pub fn events(&self, group: Group) -> Vec<bool> {
        self.arm(group).iter().map(|r| r.event).collect()
    }

    /// Same records with a new `(t0, t)` pair, revalidated.
    pub fn with_times(&self, t0: f64, t: f64) -> Result<Self> {
        Self::with_covariate_names(
            self.arm_a.clone(),
            self.arm_b.clone(),
            t0,
            t,
            self.covariate_names.clone(),
        )
    }
}

fn check_record(r: &SubjectRecord, line: usize, t0: f64) -> Result<()> {
    if !(r.time.is_finite() && r.time > 0.0) {
        return Err(Error::NonPositiveTime { line, time: r.time });
    }
    match r.surrogate {
        Some(_) if r.time <= t0 => Err(Error::SurrogateObservabilityViolation {
            line,
            time: r.time,
            t0,
            observed: "present",
            relation: "<=",
        }),
        None if r.time > t0 => Err(Error::SurrogateObservabilityViolation {
            line,
            time: r.time,
            t0,
            observed: "absent",
            relation: ">",
        }),
        Some(s) if !(s.is_finite() && s > 0.0) => {
            Err(Error::NonPositiveSurrogate { line, value: s })
        }
        _ => {
            if r.covariates.iter().any(|z| !z.is_finite()) {
                return Err(Error::MalformedRow {
                    line,
                    message: "non-finite covariate".into(),
                });
            }
            Ok(())
        }
    }
}

/// Column mapping for CSV ingestion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Schema {
    pub group: String,
    pub time: String,
    pub event: String,
    pub surrogate: String,
    /// Covariate columns; `None` takes every column not named above.
    pub covariates: Option<Vec<String>>,
    pub label_a: String,
    pub label_b: String,
    /// Apply `s -> exp(s)` at ingestion for markers with real-valued support.
    pub exp_surrogate: bool,
}

impl Default for Schema {
    fn default() -> Self {
        Schema {
            group: "group".into(),
            time: "time".into(),
            event: "event".into(),
            surrogate: "s".into(),
            covariates: None,
            label_a: "A".into(),
            label_b: "B".into(),
            exp_surrogate: false,
        }
    }
}

fn is_missing(field: &str) -> bool {
    let f = field.trim();
    f.is_empty() || f.eq_ignore_ascii_case("na") || f.eq_ignore_ascii_case("nan")
}

fn parse_num(field: &str, column: &str, line: usize) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| Error::MalformedRow {
        line,
        message: format!("column `{column}`: `{field}` is not a number"),
    })
}

/// Reads a CSV study with a header row and validates it.
pub fn load_study<R: Read>(source: R, schema: &Schema, t0: f64, t: f64) -> Result<StudyData> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = reader.headers()?.clone();
    let column = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MalformedRow {
                line: 1,
                message: format!("missing column `{name}`"),
            })
    };
    let group_col = column(&schema.group)?;
    let time_col = column(&schema.time)?;
    let event_col = column(&schema.event)?;
    let s_col = column(&schema.surrogate)?;
    let covariate_names: Vec<String> = match &schema.covariates {
        Some(names) => names.clone(),
        None => headers
            .iter()
            .enumerate()
            .filter(|(i, _)| ![group_col, time_col, event_col, s_col].contains(i))
            .map(|(_, h)| h.to_string())
            .collect(),
    };
    let covariate_cols = covariate_names
        .iter()
        .map(|c| column(c))
        .collect::<Result<Vec<_>>>()?;

    let mut arm_a = Vec::new();
    let mut arm_b = Vec::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map(|p| p.line() as usize).unwrap_or(0);
        let field = |i: usize| row.get(i).unwrap_or("");
        let group = match field(group_col) {
            g if g == schema.label_a => Group::A,
            g if g == schema.label_b => Group::B,
            g => {
                return Err(Error::MalformedRow {
                    line,
                    message: format!(
                        "unknown group `{g}` (expected `{}` or `{}`)",
                        schema.label_a, schema.label_b
                    ),
                })
            }
        };
        let time = parse_num(field(time_col), &schema.time, line)?;
        let event = match field(event_col) {
            "1" | "true" | "TRUE" => true,
            "0" | "false" | "FALSE" => false,
            other => {
                return Err(Error::MalformedRow {
                    line,
                    message: format!("column `{}`: `{other}` is not 0/1", schema.event),
                })
            }
        };
        let surrogate = if is_missing(field(s_col)) {
            None
        } else {
            let s = parse_num(field(s_col), &schema.surrogate, line)?;
            Some(if schema.exp_surrogate { s.exp() } else { s })
        };
        let covariates = covariate_cols
            .iter()
            .zip(&covariate_names)
            .map(|(&c, name)| parse_num(field(c), name, line))
            .collect::<Result<Vec<_>>>()?;
        let record = SubjectRecord {
            group,
            time,
            event,
            surrogate,
            covariates,
        };
        check_record(&record, line, t0)?;
        match group {
            Group::A => arm_a.push(record),
            Group::B => arm_b.push(record),
        }
    }
    if arm_a.is_empty() && arm_b.is_empty() {
        return Err(Error::EmptyInput);
    }
    StudyData::with_covariate_names(arm_a, arm_b, t0, t, covariate_names)
}

/// Writes a study back in the `group,time,event,s[,z...]` layout with the
/// default `A`/`B` labels. Numbers use the shortest round-trip rendering.
pub fn write_study<W: Write>(data: &StudyData, sink: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(sink);
    let mut header = vec!["group".to_string(), "time".into(), "event".into(), "s".into()];
    header.extend(data.covariate_names().iter().cloned());
    writer.write_record(&header)?;
    for r in data.arm(Group::A).iter().chain(data.arm(Group::B)) {
        let mut row = vec![
            r.group.to_string(),
            r.time.to_string(),
            if r.event { "1".into() } else { "0".into() },
            r.surrogate.map(|s| s.to_string()).unwrap_or_else(|| "NA".into()),
        ];
        row.extend(r.covariates.iter().map(|z| z.to_string()));
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub n: usize,
    pub events_before_t0: usize,
    pub censored_before_t: usize,
    pub surrogate_observed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub t0: f64,
    pub t: f64,
    pub arm_a: ArmSummary,
    pub arm_b: ArmSummary,
    pub covariate_dim: usize,
}

pub fn summarize(data: &StudyData) -> StudySummary {
    let arm = |g: Group| {
        let records = data.arm(g);
        ArmSummary {
            n: records.len(),
            events_before_t0: records
                .iter()
                .filter(|r| r.event && r.time <= data.t0)
                .count(),
            censored_before_t: records
                .iter()
                .filter(|r| !r.event && r.time < data.t)
                .count(),
            surrogate_observed: records.iter().filter(|r| r.surrogate.is_some()).count(),
        }
    };
    StudySummary {
        t0: data.t0,
        t: data.t,
        arm_a: arm(Group::A),
        arm_b: arm(Group::B),
        covariate_dim: data.covariate_dim(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "group,time,event,s\nA,2.0,1,3.1\nA,0.3,0,NA\nB,1.5,1,4.0\nB,0.2,1,NA\n";

    fn load(text: &str) -> Result<StudyData> {
        load_study(text.as_bytes(), &Schema::default(), 0.5, 1.0)
    }

    #[test]
    fn minimal_file_loads() {
        let data = load(MINIMAL).unwrap();
        assert_eq!(data.n(Group::A), 2);
        assert_eq!(data.n(Group::B), 2);
        assert_eq!(data.covariate_dim(), 0);
    }

    #[test]
    fn surrogate_before_landmark_is_rejected() {
        let text = MINIMAL.replace("A,0.3,0,NA", "A,0.3,0,3.1");
        assert!(matches!(
            load(&text),
            Err(Error::SurrogateObservabilityViolation { line: 3, .. })
        ));
    }

    #[test]
    fn missing_surrogate_after_landmark_is_rejected() {
        let text = MINIMAL.replace("A,2.0,1,3.1", "A,2.0,1,");
        assert!(matches!(
            load(&text),
            Err(Error::SurrogateObservabilityViolation { .. })
        ));
    }

    #[test]
    fn time_equal_to_landmark_is_not_under_observation() {
        let text = MINIMAL.replace("A,0.3,0,NA", "A,0.5,0,2.0");
        assert!(matches!(
            load(&text),
            Err(Error::SurrogateObservabilityViolation { .. })
        ));
        let text = MINIMAL.replace("A,0.3,0,NA", "A,0.5,0,NA");
        assert!(load(&text).is_ok());
    }

    #[test]
    fn na_spellings() {
        for na in ["", "NA", "na", "NaN", "nan"] {
            let text = MINIMAL.replace("B,0.2,1,NA", &format!("B,0.2,1,{na}"));
            assert!(load(&text).is_ok(), "{na:?}");
        }
    }

    #[test]
    fn error_paths() {
        let text = MINIMAL.replace("B,1.5,1,4.0", "B,abc,1,4.0");
        assert!(matches!(load(&text), Err(Error::MalformedRow { line: 4, .. })));
        let text = MINIMAL.replace("B,0.2,1,NA", "B,-0.2,1,NA");
        assert!(matches!(load(&text), Err(Error::NonPositiveTime { .. })));
        let text = MINIMAL.replace("B,1.5,1,4.0", "B,1.5,1,-4.0");
        assert!(matches!(load(&text), Err(Error::NonPositiveSurrogate { .. })));
        let text = "group,time,event,s\nA,2.0,1,3.1\nA,0.3,0,NA\nB,1.5,1,4.0\n";
        assert!(matches!(load(text), Err(Error::EmptyArm(Group::B))));
        assert!(matches!(load("group,time,event,s\n"), Err(Error::EmptyInput)));
        let text = MINIMAL.replace("B,1.5,1,4.0", "C,1.5,1,4.0");
        assert!(matches!(load(&text), Err(Error::MalformedRow { .. })));
    }

    #[test]
    fn exp_surrogate_allows_real_markers() {
        let text = MINIMAL.replace("B,1.5,1,4.0", "B,1.5,1,-0.7");
        let schema = Schema {
            exp_surrogate: true,
            ..Schema::default()
        };
        let data = load_study(text.as_bytes(), &schema, 0.5, 1.0).unwrap();
        assert_eq!(data.arm(Group::B)[0].surrogate, Some((-0.7f64).exp()));
    }

    #[test]
    fn covariates_and_custom_labels() {
        let text = "arm,x,d,marker,age,bmi\ntrt,2.0,1,3.1,40,22.5\ntrt,0.3,0,,51,30\nctl,1.5,1,4.0,38,27\nctl,0.2,1,NA,60,31\n";
        let schema = Schema {
            group: "arm".into(),
            time: "x".into(),
            event: "d".into(),
            surrogate: "marker".into(),
            label_a: "trt".into(),
            label_b: "ctl".into(),
            ..Schema::default()
        };
        let data = load_study(text.as_bytes(), &schema, 0.5, 1.0).unwrap();
        assert_eq!(data.covariate_names(), ["age", "bmi"]);
        assert_eq!(data.arm(Group::B)[1].covariates, vec![60.0, 31.0]);
        assert_eq!(data.covariate_indices(&["bmi".into()]).unwrap(), vec![1]);
        assert!(data.covariate_indices(&["sex".into()]).is_err());
    }

    #[test]
    fn summary_counts() {
        let data = load(MINIMAL).unwrap();
        let s = summarize(&data);
        assert_eq!(s.arm_a.events_before_t0, 0);
        assert_eq!(s.arm_b.events_before_t0, 1);
        assert_eq!(s.arm_a.censored_before_t, 1);
        assert_eq!(s.arm_a.surrogate_observed, 1);
        assert_eq!(s.covariate_dim, 0);
    }

    #[test]
    fn study_level_invariants() {
        let a = vec![
            SubjectRecord::new(Group::A, 2.0, true, Some(3.0)),
            SubjectRecord::new(Group::A, 0.3, false, None),
        ];
        let b = vec![
            SubjectRecord::new(Group::B, 1.5, true, Some(4.0)),
            SubjectRecord::new(Group::B, 0.2, true, None),
        ];
        assert!(StudyData::new(a.clone(), b.clone(), 0.5, 0.4).is_err());
        assert!(StudyData::new(a.clone(), b.clone(), -1.0, 1.0).is_err());
        assert!(StudyData::new(a.clone(), b[..1].to_vec(), 0.5, 1.0).is_err());
        assert!(StudyData::new(a, b, 0.5, 2.0).is_ok());
    }
}
