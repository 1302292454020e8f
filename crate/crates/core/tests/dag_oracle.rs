use std::collections::{BTreeMap, BTreeSet};

use analysis_base::harness::{make_plan, SimResource};
use analysis_base::model::{validate_steps, PipelineStep, StepRule};
use analysis_base::Id;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_graph(rng: &mut ChaCha8Rng, acyclic: bool) -> Vec<PipelineStep> {
    let n = rng.gen_range(1..=12);
    let ids: Vec<String> = (0..n).map(|i| format!("s{:02}", (i * 7) % 13)).collect();
    (0..n)
        .map(|i| {
            let mut deps = BTreeSet::new();
            for j in 0..n {
                let allowed = if acyclic { j < i } else { j != i || rng.gen_bool(0.05) };
                if allowed && rng.gen_bool(0.25) {
                    deps.insert(ids[j].clone());
                }
            }
            PipelineStep {
                step_id: ids[i].clone(),
                algorithm_id: Id::from_u128(1),
                step_order: i as u32 + 1,
                depends_on: deps,
                input_ports: vec![],
                output_ports: vec!["o".into()],
            }
        })
        .collect()
}

/// Cyclic groups by Floyd–Warshall reachability: nodes that reach each other, or
/// a node that reaches itself.
fn oracle_cycles(steps: &[PipelineStep]) -> BTreeSet<String> {
    let n = steps.len();
    let idx: BTreeMap<&str, usize> = steps.iter().enumerate().map(|(i, s)| (s.step_id.as_str(), i)).collect();
    let mut reach = vec![vec![false; n]; n];
    for (i, s) in steps.iter().enumerate() {
        for d in &s.depends_on {
            reach[idx[d.as_str()]][i] = true;
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if reach[i][k] && reach[k][j] {
                    reach[i][j] = true;
                }
            }
        }
    }
    let mut groups = BTreeSet::new();
    for i in 0..n {
        if !reach[i][i] {
            continue;
        }
        let mut g: Vec<&str> = (0..n).filter(|&j| reach[i][j] && reach[j][i]).map(|j| steps[j].step_id.as_str()).collect();
        g.sort_unstable();
        groups.insert(g.join(","));
    }
    groups
}

#[test]
fn cycle_reports_match_reachability_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut cyclic_seen = 0;
    for _ in 0..300 {
        let acyclic = rng.gen_bool(0.3);
        let steps = random_graph(&mut rng, acyclic);
        let expected = oracle_cycles(&steps);
        let got: BTreeSet<String> = match validate_steps(&steps) {
            Ok(()) => BTreeSet::new(),
            Err(v) => v.into_iter().filter(|x| x.rule == StepRule::Cycle).map(|x| x.detail).collect(),
        };
        cyclic_seen += usize::from(!expected.is_empty());
        assert_eq!(got, expected, "{steps:?}");
    }
    assert!(cyclic_seen > 50);
}

#[test]
fn plans_are_smallest_topological_orders() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..50 {
        let steps = random_graph(&mut rng, true);
        assert!(validate_steps(&steps).is_ok());
        let n_res = rng.gen_range(1..=4);
        let resources: Vec<SimResource> = (1..=n_res).rev().map(|i| SimResource::new(&format!("r{i}"), 1.0)).collect();
        let plan = make_plan(&steps, &resources).unwrap();
        assert_eq!(plan.assignments.len(), steps.len());

        let mut done: BTreeSet<&str> = BTreeSet::new();
        for (pos, (id, res)) in plan.assignments.iter().enumerate() {
            let ready: BTreeSet<&str> = steps
                .iter()
                .filter(|s| !done.contains(s.step_id.as_str()))
                .filter(|s| s.depends_on.iter().all(|d| done.contains(d.as_str())))
                .map(|s| s.step_id.as_str())
                .collect();
            assert_eq!(Some(&id.as_str()), ready.first(), "position {pos}");
            assert_eq!(res, &format!("r{}", pos % n_res + 1));
            done.insert(id);
        }
    }
}
