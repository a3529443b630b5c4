use landmark_surrogate::data::{load_study, summarize, write_study, Schema};
use landmark_surrogate::simulation::{generate_study, Setting};
use landmark_surrogate::{Error, Group, StudyData};
use proptest::prelude::*;

fn load(text: &str, t0: f64, t: f64) -> landmark_surrogate::Result<StudyData> {
    load_study(text.as_bytes(), &Schema::default(), t0, t)
}

fn round_trip(data: &StudyData) -> StudyData {
    let mut buf = Vec::new();
    write_study(data, &mut buf).unwrap();
    load(std::str::from_utf8(&buf).unwrap(), data.t0(), data.t()).unwrap()
}

#[test]
fn generated_studies_round_trip_exactly() {
    for setting in Setting::ALL {
        let data = generate_study(setting, 200, 17, 1).unwrap();
        let back = round_trip(&data);
        for g in [Group::A, Group::B] {
            assert_eq!(data.arm(g), back.arm(g), "{setting}");
        }
        assert_eq!(back.covariate_names(), data.covariate_names());
    }
}

#[test]
fn dpp_shaped_study_is_accepted() {
    let data = generate_study(Setting::Dpp, 1030, 2, 0).unwrap();
    let mut a = data.arm(Group::A).to_vec();
    a.truncate(1024);
    let data = StudyData::new(a, data.arm(Group::B).to_vec(), 1.0, 3.0).unwrap();
    let back = round_trip(&data);
    assert_eq!((back.n(Group::A), back.n(Group::B)), (1024, 1030));
}

#[test]
fn minimal_example_summary() {
    let text = "group,time,event,s\nA,2.0,1,3.1\nA,0.3,0,NA\nB,1.5,1,4.0\nB,0.2,1,NA\n";
    let data = load(text, 0.5, 1.0).unwrap();
    let s = summarize(&data);
    assert_eq!((s.arm_a.n, s.arm_b.n), (2, 2));
    assert_eq!((s.arm_a.events_before_t0, s.arm_b.events_before_t0), (0, 1));
    assert_eq!(s.covariate_dim, 0);
    let bad = text.replace("A,0.3,0,NA", "A,0.3,0,3.1");
    assert!(matches!(
        load(&bad, 0.5, 1.0),
        Err(Error::SurrogateObservabilityViolation { line: 3, .. })
    ));
}

#[test]
fn setting_one_censoring_fractions() {
    let data = generate_study(Setting::One, 4000, 5, 0).unwrap();
    let s = summarize(&data);
    let frac = |a: &landmark_surrogate::data::ArmSummary| a.censored_before_t as f64 / a.n as f64;
    assert!((frac(&s.arm_a) - 0.29).abs() < 0.03, "{}", frac(&s.arm_a));
    assert!((frac(&s.arm_b) - 0.25).abs() < 0.03, "{}", frac(&s.arm_b));
}

fn row_strategy() -> impl Strategy<Value = (bool, f64, bool, Option<f64>)> {
    (
        any::<bool>(),
        0.01f64..3.0,
        any::<bool>(),
        prop::option::of(0.1f64..20.0),
    )
}

fn render(rows: &[(bool, f64, bool, Option<f64>)]) -> String {
    let mut text = String::from("group,time,event,s\n");
    for (a, x, d, s) in rows {
        text.push_str(&format!(
            "{},{},{},{}\n",
            if *a { "A" } else { "B" },
            x,
            *d as u8,
            s.map(|v| v.to_string()).unwrap_or_else(|| "NA".into())
        ));
    }
    text
}

proptest! {
    #[test]
    fn observability_violations_are_always_rejected(
        rows in prop::collection::vec(row_strategy(), 1..40),
    ) {
        let t0 = 0.5;
        let violation = rows.iter().position(|(_, x, _, s)| s.is_some() != (*x > t0));
        let result = load(&render(&rows), t0, 1.0);
        if let Some(k) = violation {
            // The first offending row is reported by its file line.
            match result {
                Err(Error::SurrogateObservabilityViolation { line, .. }) => prop_assert_eq!(line, k + 2),
                other => prop_assert!(false, "expected violation, got {:?}", other.map(|_| ())),
            }
        } else if let Ok(data) = result {
            let back = round_trip(&data);
            prop_assert_eq!(back.arm(Group::A), data.arm(Group::A));
            prop_assert_eq!(back.arm(Group::B), data.arm(Group::B));
        }
    }

    #[test]
    fn arbitrary_text_never_panics(text in "[A-Z0-9a-z,.\\-\n ]{0,200}") {
        let _ = load(&text, 0.5, 1.0);
    }
}
