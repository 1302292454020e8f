//! Seeded catalog contents and a scripted multi-user session. Every session
//! operation is a single store call, so each one commits at most one transaction.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use analysis_base::crawler::{DatasetDescriptor, EntryKind, FileEntry, ItemDescriptor};
use analysis_base::model::{
    AnalysisStatus, AnnotationTarget, AttrValue, InputData, InputPort, InputValue, OutputData,
    OutputValue, PipelineStep, PortKind, PortRef, Role, VersionRef, Visibility,
};
use analysis_base::persistency::required_inputs;
use analysis_base::provenance::{EventKind, NewEvent, ProvenanceTrace};
use analysis_base::store::Store;
use analysis_base::{AnalysisBase, Id, IdSource, Lfn, ManualClock, NewAnalysis, StorageUrls, Timestamp};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const START_MS: i64 = 1_704_067_200_000;
pub const URL_PREFIX: &str = "file:///srv/storage/";

pub fn base_over(store: Store, seed: u64) -> AnalysisBase {
    AnalysisBase::new(
        store,
        StorageUrls::new(URL_PREFIX).unwrap(),
        Arc::new(ManualClock::new(Timestamp::from_millis(START_MS), 250)),
        IdSource::seeded(seed),
    )
}

const SITES: &[&str] = &["north", "south", "east", "west", "central"];
const STAGES: &[&str] = &["baseline", "month-12", "month-24"];

/// A descriptor whose items carry a random subset of a fixed attribute vocabulary.
/// `grade` is an integer in datasets with `numeric_grade`, text otherwise.
pub fn random_descriptor(
    rng: &mut ChaCha8Rng,
    name: &str,
    items: usize,
    numeric_grade: bool,
) -> DatasetDescriptor {
    let mut out = Vec::with_capacity(items);
    for i in 0..items {
        let folder = format!("subject-{i:04}");
        let mut item = ItemDescriptor::new(folder.clone());
        item.image_files.push(FileEntry {
            relative_path: format!("{folder}/scan.nii"),
            filename: "scan.nii".into(),
            size_bytes: rng.gen_range(1..4096),
            kind: EntryKind::Image,
            checksum: format!("{:064x}", rng.gen::<u128>()),
        });
        let mut put = |k: &str, v: AttrValue, rng: &mut ChaCha8Rng| {
            if rng.gen_bool(0.85) {
                item.attributes.insert(k.to_owned(), v);
            }
        };
        let sex = if rng.gen_bool(0.5) { "M" } else { "F" };
        put("sex", AttrValue::Text(sex.into()), rng);
        let age = rng.gen_range(20..96);
        put("age", AttrValue::Integer(age), rng);
        let n = rng.gen_range(0..5);
        put("assessments", AttrValue::Integer(n), rng);
        let score = rng.gen_range(0..120) as f64 / 4.0;
        put("score", AttrValue::Decimal(score), rng);
        let site = SITES.choose(rng).unwrap();
        put("site", AttrValue::Text((*site).into()), rng);
        let stage = STAGES.choose(rng).unwrap();
        put("stage", AttrValue::Text((*stage).into()), rng);
        let grade = if numeric_grade {
            AttrValue::Integer(rng.gen_range(1..4))
        } else {
            AttrValue::Text(["A", "B", "C"].choose(rng).unwrap().to_string())
        };
        put("grade", grade, rng);
        out.push(item);
    }
    DatasetDescriptor {
        dataset_name: name.to_owned(),
        root_path: format!("/data/{name}"),
        items: out,
        generated_at: Timestamp::from_millis(START_MS),
        warnings: Vec::new(),
    }
}

pub fn random_visibility(rng: &mut ChaCha8Rng, users: &[Id]) -> Visibility {
    match rng.gen_range(0..3) {
        0 => Visibility::Private,
        1 => Visibility::Public,
        _ => {
            let k = rng.gen_range(0..=users.len().min(3));
            Visibility::Shared(users.choose_multiple(rng, k).copied().collect())
        }
    }
}

/// Registers `users` users and `datasets` datasets of up to `max_items` items each.
pub fn populate_catalog(
    base: &AnalysisBase,
    seed: u64,
    users: usize,
    datasets: usize,
    max_items: usize,
) -> Vec<Id> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<Id> = (0..users)
        .map(|i| {
            base.register_user(&format!("user-{i}"), "lab", Role::DataProvider)
                .unwrap()
                .user_id
        })
        .collect();
    for d in 0..datasets {
        let owner = *ids.choose(&mut rng).unwrap();
        let n = rng.gen_range(0..=max_items);
        let numeric = rng.gen_bool(0.5);
        let desc = random_descriptor(&mut rng, &format!("set-{d}"), n, numeric);
        let vis = random_visibility(&mut rng, &ids);
        base.index_dataset(owner, &desc, vis, "generated", false).unwrap();
    }
    ids
}

/// One session operation and its outcome, for diagnostics.
#[derive(Debug, Clone)]
pub struct OpRecord {
    pub op: &'static str,
    pub ok: bool,
}

const ALGORITHM_NAMES: &[&str] = &["bet", "fast", "flirt", "recon", "stats", "qc", "seg", "reg"];
const PIPELINE_NAMES: &[&str] = &["prep", "segment", "summary", "qc-chain", "morph"];
const DATASET_NAMES: &[&str] = &["adni-a", "adni-b", "local", "pilot", "ukb", "ppmi"];

fn pick<T: Copy>(rng: &mut ChaCha8Rng, xs: &[T]) -> Option<T> {
    xs.choose(rng).copied()
}

fn random_steps(rng: &mut ChaCha8Rng, algorithms: &[Id]) -> Vec<PipelineStep> {
    let n = rng.gen_range(1..=3);
    (1..=n)
        .map(|i| {
            let port = if i == 1 {
                let kind = [PortKind::Scalar, PortKind::Dataset, PortKind::File][rng.gen_range(0..3)];
                InputPort {
                    name: "x".into(),
                    kind,
                    source: None,
                }
            } else {
                InputPort {
                    name: "x".into(),
                    kind: PortKind::File,
                    source: Some(PortRef {
                        step_id: format!("s{}", i - 1),
                        port: "out".into(),
                    }),
                }
            };
            PipelineStep {
                step_id: format!("s{i}"),
                algorithm_id: *algorithms.choose(rng).unwrap(),
                step_order: i,
                depends_on: if i == 1 {
                    BTreeSet::new()
                } else {
                    BTreeSet::from([format!("s{}", i - 1)])
                },
                input_ports: vec![port],
                output_ports: vec!["out".into()],
            }
        })
        .collect()
}

fn input_for(
    rng: &mut ChaCha8Rng,
    base: &AnalysisBase,
    step: &str,
    port: &str,
    kind: PortKind,
) -> Option<InputValue> {
    let datasets = base.datasets();
    let value = match kind {
        PortKind::Scalar => InputData::Scalar {
            value: AttrValue::Integer(rng.gen_range(0..100)),
        },
        PortKind::Dataset => {
            let d = datasets.choose(rng)?;
            let items = if rng.gen_bool(0.5) || d.items.is_empty() {
                Vec::new()
            } else {
                vec![d.items.choose(rng).unwrap().item_id]
            };
            InputData::Dataset {
                dataset_id: d.dataset_id,
                items,
            }
        }
        PortKind::File => {
            let d = datasets.choose(rng)?;
            let item = d.items.choose(rng)?;
            InputData::File {
                file: item.image_files.first()?.clone(),
            }
        }
    };
    Some(InputValue {
        step_id: step.into(),
        port: port.into(),
        value,
    })
}

/// The event that would move `trace` forward, for the first unfinished step.
fn natural_event(rng: &mut ChaCha8Rng, trace: &ProvenanceTrace, at: Timestamp) -> Option<NewEvent> {
    let steps = &trace.header.pipeline_snapshot.steps;
    let step = steps.iter().find(|s| !trace.step_completed(&s.step_id))?;
    let last = trace.step_events(&step.step_id).last();
    let (attempt, kind) = match last {
        None => (1, EventKind::Scheduled),
        Some(e) => match e.kind {
            EventKind::Scheduled | EventKind::Rescheduled => (e.attempt, EventKind::Started),
            EventKind::Started | EventKind::Status => {
                let kind = match rng.gen_range(0..4) {
                    0 => EventKind::Status,
                    1 => EventKind::Failed,
                    _ => EventKind::Completed,
                };
                (e.attempt, kind)
            }
            EventKind::Failed => (e.attempt + 1, EventKind::Rescheduled),
            EventKind::Completed => return None,
        },
    };
    let mut payload = BTreeMap::new();
    if kind == EventKind::Failed {
        payload.insert("error".to_owned(), format!("exit status {}", rng.gen_range(1..128)));
    }
    Some(NewEvent {
        step_id: step.step_id.clone(),
        attempt,
        kind,
        resource_id: format!("r{}", rng.gen_range(1..4)),
        timestamp: at,
        payload,
    })
}

/// Runs `ops` seeded operations against `base`, calling `after` once per operation.
/// Operations may legitimately fail (conflicts, permissions, illegal events); a
/// failed operation writes nothing.
pub fn run_session(
    base: &AnalysisBase,
    seed: u64,
    ops: usize,
    mut after: impl FnMut(usize, &OpRecord),
) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..ops {
        let users: Vec<Id> = base.users().iter().map(|u| u.user_id).collect();
        let algorithms: Vec<Id> = base.algorithms().iter().map(|a| a.algorithm_id).collect();
        let pipelines = base.pipelines();
        let analyses = base.analyses();
        let roll = if users.is_empty() { 0 } else { rng.gen_range(0..100) };
        let (op, ok): (&'static str, bool) = match roll {
            0..=7 => {
                let role = [Role::Neuroscientist, Role::DataProvider, Role::Admin][rng.gen_range(0..3)];
                let r = base.register_user(&format!("u{i}"), "lab", role);
                ("register_user", r.is_ok())
            }
            8..=10 => {
                let u = pick(&mut rng, &users).unwrap();
                let r = base.set_user_active(u, rng.gen_bool(0.7));
                ("set_user_active", r.is_ok())
            }
            11..=15 => {
                let caller = pick(&mut rng, &users).unwrap();
                let name = pick(&mut rng, ALGORITHM_NAMES).unwrap();
                let lfn = Lfn::new("toolkit", name).unwrap();
                let r = base.register_algorithm(caller, name, "fsl", lfn);
                ("register_algorithm", r.is_ok())
            }
            16..=21 if !algorithms.is_empty() => {
                let caller = pick(&mut rng, &users).unwrap();
                let name = pick(&mut rng, PIPELINE_NAMES).unwrap();
                let steps = random_steps(&mut rng, &algorithms);
                let lfn = Lfn::new("pipelines", &format!("{name}.pipe")).unwrap();
                let r = base.register_pipeline(caller, name, lfn, "generated", steps);
                ("register_pipeline", r.is_ok())
            }
            22..=25 if !algorithms.is_empty() && !pipelines.is_empty() => {
                let p = pipelines.choose(&mut rng).unwrap();
                let caller = if rng.gen_bool(0.7) {
                    p.author
                } else {
                    pick(&mut rng, &users).unwrap()
                };
                let steps = random_steps(&mut rng, &algorithms);
                let lfn = Lfn::new("pipelines", &format!("{}-{i}.pipe", p.name)).unwrap();
                let r = base.update_pipeline(caller, p.pipeline_id, lfn, "revised", steps);
                ("update_pipeline", r.is_ok())
            }
            26..=33 => {
                let caller = pick(&mut rng, &users).unwrap();
                let name = pick(&mut rng, DATASET_NAMES).unwrap();
                let n = rng.gen_range(0..=5);
                let numeric = rng.gen_bool(0.5);
                let desc = random_descriptor(&mut rng, name, n, numeric);
                let vis = random_visibility(&mut rng, &users);
                let replace = rng.gen_bool(0.4);
                let r = base.index_dataset(caller, &desc, vis, "session", replace);
                ("index_dataset", r.is_ok())
            }
            34..=43 if !pipelines.is_empty() => {
                let p = pipelines.choose(&mut rng).unwrap();
                let v = p.versions.choose(&mut rng).unwrap().version;
                let pipeline = VersionRef {
                    pipeline_id: p.pipeline_id,
                    version: v,
                };
                let steps = base.steps(pipeline).unwrap();
                let mut input_values = Vec::new();
                for ((step, port), kind) in required_inputs(&steps) {
                    if let Some(iv) = input_for(&mut rng, base, &step, &port, kind) {
                        input_values.push(iv);
                    }
                }
                let r = base.store_analysis(NewAnalysis {
                    user: pick(&mut rng, &users).unwrap(),
                    pipeline,
                    input_values,
                });
                ("store_analysis", r.is_ok())
            }
            44..=51 if !analyses.is_empty() => {
                let a = analyses.choose(&mut rng).unwrap();
                let r = base.open_trace(a.analysis_id);
                ("open_trace", r.is_ok())
            }
            52..=83 if !analyses.is_empty() => {
                let open: Vec<ProvenanceTrace> = analyses
                    .iter()
                    .filter_map(|a| base.trace(a.analysis_id).ok())
                    .filter(|t| !t.is_closed())
                    .collect();
                match open.choose(&mut rng) {
                    Some(t) => {
                        let at = base.now();
                        let event = if rng.gen_bool(0.9) {
                            natural_event(&mut rng, t, at)
                        } else {
                            let step = t.header.pipeline_snapshot.steps.choose(&mut rng).unwrap();
                            Some(NewEvent {
                                step_id: step.step_id.clone(),
                                attempt: rng.gen_range(0..5),
                                kind: [
                                    EventKind::Scheduled,
                                    EventKind::Started,
                                    EventKind::Status,
                                    EventKind::Failed,
                                    EventKind::Rescheduled,
                                    EventKind::Completed,
                                ][rng.gen_range(0..6)],
                                resource_id: "r9".into(),
                                timestamp: at,
                                payload: BTreeMap::new(),
                            })
                        };
                        match event {
                            Some(e) => ("record_event", base.record_event(t.analysis_id(), e).is_ok()),
                            None => ("record_event", false),
                        }
                    }
                    None => ("record_event", false),
                }
            }
            84..=91 if !analyses.is_empty() => {
                let a = analyses.choose(&mut rng).unwrap();
                let r = match base.trace(a.analysis_id) {
                    Ok(t) => {
                        let steps = &t.header.pipeline_snapshot.steps;
                        let done = steps.iter().all(|s| t.step_completed(&s.step_id));
                        if done && rng.gen_bool(0.8) {
                            let produced_at = base.now();
                            let outputs = steps
                                .iter()
                                .map(|s| {
                                    let attempt = t
                                        .step_events(&s.step_id)
                                        .find(|e| e.kind == EventKind::Completed)
                                        .map_or(1, |e| e.attempt);
                                    OutputValue {
                                        step_id: s.step_id.clone(),
                                        port: "out".into(),
                                        value: OutputData::Scalar {
                                            value: AttrValue::Integer(rng.gen_range(0..1000)),
                                        },
                                        produced_at,
                                        attempt,
                                    }
                                })
                                .collect();
                            base.close_trace(a.analysis_id, outputs, Vec::new(), AnalysisStatus::Completed, None)
                        } else {
                            let error = rng.gen_bool(0.9).then(|| "operator cancelled".to_owned());
                            base.close_trace(a.analysis_id, Vec::new(), Vec::new(), AnalysisStatus::Failed, error)
                        }
                    }
                    Err(e) => Err(e),
                };
                ("close_trace", r.is_ok())
            }
            _ => {
                let author = pick(&mut rng, &users).unwrap();
                let target = match rng.gen_range(0..3) {
                    0 if !analyses.is_empty() => {
                        AnnotationTarget::Analysis(analyses.choose(&mut rng).unwrap().analysis_id)
                    }
                    1 if !pipelines.is_empty() => {
                        let p = pipelines.choose(&mut rng).unwrap();
                        AnnotationTarget::PipelineVersion(VersionRef {
                            pipeline_id: p.pipeline_id,
                            version: p.versions.choose(&mut rng).unwrap().version,
                        })
                    }
                    _ => match base.datasets().choose(&mut rng) {
                        Some(d) => AnnotationTarget::Dataset(d.dataset_id),
                        None => AnnotationTarget::Dataset(Id::from_u128(rng.gen())),
                    },
                };
                let r = base.store_annotation(author, target, &format!("note {i}"));
                ("store_annotation", r.is_ok())
            }
        };
        after(i, &OpRecord { op, ok });
    }
}
