#[path = "support/fixture.rs"]
mod fixture;

use analysis_base::model::{AnalysisStatus, AttrValue, InputData, InputValue};
use analysis_base::provenance::{EventKind, NewEvent, MAX_ATTEMPTS};
use analysis_base::{NewAnalysis, Timestamp};
use fixture::Fixture;
use proptest::prelude::*;

const FIVE: &str = "\
pipeline five
step a uses line-count in t=scalar out o
step b uses line-count in t=scalar out o
step c uses concatenate after a in x=a.o out o
step d uses concatenate after b,c in x=b.o,y=c.o out o
step e uses line-count in t=scalar out o
";

/// A legal per-step script: `fails` failed attempts then a completed one.
fn script(fails: u32) -> Vec<(u32, EventKind)> {
    let mut v = Vec::new();
    for attempt in 1..=fails + 1 {
        v.push((attempt, if attempt == 1 { EventKind::Scheduled } else { EventKind::Rescheduled }));
        v.push((attempt, EventKind::Started));
        v.push((attempt, EventKind::Status));
        v.push((attempt, if attempt <= fails { EventKind::Failed } else { EventKind::Completed }));
    }
    v
}

fn deps(step: &str) -> &'static [&'static str] {
    match step {
        "c" => &["a"],
        "d" => &["b", "c"],
        _ => &[],
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn legal_interleavings_are_accepted(
        fails in prop::collection::vec(0..MAX_ATTEMPTS, 5),
        picks in prop::collection::vec(0usize..5, 200),
    ) {
        let fx = Fixture::new(1);
        let v = fx.pipeline(fx.admin, FIVE);
        let scalar = |s: &str| InputValue { step_id: s.into(), port: "t".into(), value: InputData::Scalar { value: AttrValue::Integer(1) } };
        let a = fx.base.store_analysis(NewAnalysis { user: fx.admin, pipeline: v, input_values: vec![scalar("a"), scalar("b"), scalar("e")] }).unwrap();
        fx.base.open_trace(a.analysis_id).unwrap();

        let names = ["a", "b", "c", "d", "e"];
        let scripts: Vec<Vec<(u32, EventKind)>> = fails.iter().map(|f| script(*f)).collect();
        let mut pos = [0usize; 5];
        let mut completed = [false; 5];
        let mut t = 0i64;
        let mut picks = picks.into_iter().cycle();
        let total: usize = scripts.iter().map(Vec::len).sum();
        let mut emitted = 0;
        while emitted < total {
            let want = picks.next().unwrap();
            // first step at or after `want` that can move
            let i = (0..5).map(|k| (want + k) % 5).find(|&i| {
                pos[i] < scripts[i].len()
                    && (scripts[i][pos[i]].1 != EventKind::Started
                        || deps(names[i]).iter().all(|d| completed[names.iter().position(|n| n == d).unwrap()]))
            }).unwrap();
            let (attempt, kind) = scripts[i][pos[i]];
            t += 1;
            let e = NewEvent { step_id: names[i].into(), attempt, kind, resource_id: "r1".into(), timestamp: Timestamp::from_millis(t), payload: Default::default() };
            fx.base.record_event(a.analysis_id, e).unwrap();
            if kind == EventKind::Completed {
                completed[i] = true;
            }
            pos[i] += 1;
            emitted += 1;
        }
        fx.base.close_trace(a.analysis_id, vec![], vec![], AnalysisStatus::Completed, None).unwrap();
        let trace = fx.base.trace(a.analysis_id).unwrap();
        prop_assert_eq!(trace.events.len(), total);
        for (i, n) in names.iter().enumerate() {
            let got: Vec<(u32, EventKind)> = trace.step_events(n).map(|e| (e.attempt, e.kind)).collect();
            prop_assert_eq!(&got, &scripts[i]);
        }
    }
}
