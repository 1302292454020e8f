//! Simulated grid: scheduling plans, sequential execution of toy algorithms on
//! virtual resources with injected failures, and rescheduling of failed steps.
//!
//! Time is virtual. An attempt over `b` input bytes on a resource with speed factor
//! `s` lasts `round((100 + b/1024) / s)` milliseconds.

mod definition;
mod toy;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub use definition::{parse_pipeline, step_line, DefinedStep, DefinitionViolation, PipelineDefinition};
pub use toy::{is_toy, run_toy, AlgorithmInputs, InputFile, TOY_ALGORITHMS};

use crate::error::{Error, Result};
use crate::ident::{Id, Timestamp};
use crate::lfn::StorageUrls;
use crate::model::{
    AnalysisStatus, AttrValue, FileKind, FileRef, InputData, InputValue, OutputData, OutputValue,
    PipelineStep, VersionRef,
};
use crate::persistency::{derived_lfn, AnalysisBase, NewAnalysis};
use crate::provenance::{EventKind, NewEvent, MAX_ATTEMPTS};

pub const BASE_DURATION_MS: f64 = 100.0;
pub const DEFAULT_FAILURE_RATE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct SimResource {
    pub resource_id: String,
    pub speed_factor: f64,
    /// (step_id, attempt) pairs that fail when run here.
    pub failure_plan: BTreeSet<(String, u32)>,
}

impl SimResource {
    pub fn new(resource_id: &str, speed_factor: f64) -> Self {
        SimResource {
            resource_id: resource_id.to_owned(),
            speed_factor,
            failure_plan: BTreeSet::new(),
        }
    }

    pub fn failing(mut self, step_id: &str, attempt: u32) -> Self {
        self.failure_plan.insert((step_id.to_owned(), attempt));
        self
    }

    pub fn fails(&self, step_id: &str, attempt: u32) -> bool {
        self.failure_plan.contains(&(step_id.to_owned(), attempt))
    }

    pub fn duration_ms(&self, input_bytes: u64) -> i64 {
        ((BASE_DURATION_MS + input_bytes as f64 / 1024.0) / self.speed_factor).round() as i64
    }
}

/// `n` resources named `r1..rn` (zero padded to equal width), with speed factors and
/// failure plans drawn from `seed`. Every (step, attempt) pair fails on a given
/// resource with probability `failure_rate`.
pub fn resource_pool(n: usize, seed: u64, steps: &[PipelineStep], failure_rate: f64) -> Vec<SimResource> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = n.to_string().len();
    let mut ids: Vec<&str> = steps.iter().map(|s| s.step_id.as_str()).collect();
    ids.sort_unstable();
    (1..=n)
        .map(|i| {
            let speed = [0.5, 1.0, 1.5, 2.0][rng.gen_range(0..4)];
            let mut r = SimResource::new(&format!("r{i:0width$}"), speed);
            for id in &ids {
                for attempt in 1..=MAX_ATTEMPTS {
                    if rng.gen_bool(failure_rate.clamp(0.0, 1.0)) {
                        r.failure_plan.insert((id.to_string(), attempt));
                    }
                }
            }
            r
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchedulePlan {
    /// (step_id, resource_id) in execution order.
    pub assignments: Vec<(String, String)>,
}

impl SchedulePlan {
    pub fn order(&self) -> impl Iterator<Item = &str> {
        self.assignments.iter().map(|(s, _)| s.as_str())
    }
}

fn sorted_resources(resources: &[SimResource]) -> Vec<&SimResource> {
    let mut v: Vec<&SimResource> = resources.iter().collect();
    v.sort_by(|a, b| a.resource_id.cmp(&b.resource_id));
    v
}

/// Steps in lexicographically smallest topological order; resources assigned
/// round-robin in resource id order.
pub fn make_plan(steps: &[PipelineStep], resources: &[SimResource]) -> Result<SchedulePlan> {
    if resources.is_empty() {
        return Err(Error::Validation("a schedule needs at least one resource".into()));
    }
    let rs = sorted_resources(resources);
    let mut indegree: BTreeMap<&str, usize> = BTreeMap::new();
    let mut dependents: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for s in steps {
        indegree.entry(&s.step_id).or_insert(0);
        for d in &s.depends_on {
            *indegree.entry(&s.step_id).or_insert(0) += 1;
            dependents.entry(d).or_default().push(&s.step_id);
        }
    }
    let mut ready: BTreeSet<&str> = indegree.iter().filter(|(_, &n)| n == 0).map(|(s, _)| *s).collect();
    let mut assignments = Vec::new();
    while let Some(s) = ready.pop_first() {
        let r = rs[assignments.len() % rs.len()];
        assignments.push((s.to_owned(), r.resource_id.clone()));
        for &d in dependents.get(s).into_iter().flatten() {
            let n = indegree.get_mut(d).expect("every step has an entry");
            *n -= 1;
            if *n == 0 {
                ready.insert(d);
            }
        }
    }
    if assignments.len() != indegree.len() {
        return Err(Error::Validation("steps do not form an acyclic graph".into()));
    }
    Ok(SchedulePlan { assignments })
}

/// Receives execution events in emission order.
pub trait EventSink {
    fn emit(&mut self, event: NewEvent) -> Result<()>;
}

impl EventSink for Vec<NewEvent> {
    fn emit(&mut self, event: NewEvent) -> Result<()> {
        self.push(event);
        Ok(())
    }
}

/// Forwards events into an analysis' provenance trace.
pub struct TraceSink<'a> {
    pub base: &'a AnalysisBase,
    pub analysis_id: Id,
}

impl EventSink for TraceSink<'_> {
    fn emit(&mut self, event: NewEvent) -> Result<()> {
        self.base.record_event(self.analysis_id, event).map(|_| ())
    }
}

/// A value bound to an unbound input port, with dataset selections expanded to files.
#[derive(Debug, Clone, PartialEq)]
pub enum PortValue {
    Files(Vec<FileRef>),
    Scalar(AttrValue),
}

/// Derived files live under `<storage>/derived/<analysis_id>/`.
#[derive(Debug, Clone)]
pub struct DerivedStorage {
    root: PathBuf,
    urls: StorageUrls,
}

impl DerivedStorage {
    pub fn new(urls: &StorageUrls) -> Result<Self> {
        let root = StorageUrls::local_path(urls.prefix())?;
        Ok(DerivedStorage {
            root,
            urls: urls.clone(),
        })
    }

    pub fn write(&self, analysis_id: Id, rel: &str, bytes: &[u8]) -> Result<FileRef> {
        let lfn = derived_lfn(analysis_id, rel)?;
        let storage_path = format!("{}/{}", crate::persistency::DERIVED_NAMESPACE, lfn.relative_path());
        let path = self.root.join(&storage_path);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        Ok(FileRef {
            filename: lfn.file_name().to_owned(),
            lfn,
            location: self.urls.url_for(&storage_path),
            kind: FileKind::Data,
            size_bytes: bytes.len() as u64,
            checksum: Some(hex::encode(Sha256::digest(bytes))),
        })
    }
}

pub struct ExecutionContext<'a> {
    pub analysis_id: Id,
    pub start: Timestamp,
    /// algorithm id → algorithm name
    pub algorithms: &'a BTreeMap<Id, String>,
    pub storage: &'a DerivedStorage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionOutcome {
    pub status: AnalysisStatus,
    /// Outputs of every completed step, in plan order.
    pub outputs: Vec<OutputValue>,
    pub error: Option<String>,
    pub log: FileRef,
    pub finished_at: Timestamp,
    pub executed_steps: BTreeSet<String>,
}

impl ExecutionOutcome {
    /// Outputs of steps no other step depends on.
    pub fn sink_outputs(&self, steps: &[PipelineStep]) -> Vec<OutputValue> {
        let inner: BTreeSet<&str> = steps
            .iter()
            .flat_map(|s| s.depends_on.iter().map(String::as_str))
            .collect();
        self.outputs
            .iter()
            .filter(|o| !inner.contains(o.step_id.as_str()))
            .cloned()
            .collect()
    }
}

fn read_file(f: &FileRef) -> std::result::Result<InputFile, String> {
    let path = StorageUrls::local_path(&f.location).map_err(|e| e.to_string())?;
    let bytes = fs::read(&path).map_err(|e| format!("cannot read {}: {e}", f.lfn))?;
    Ok(InputFile {
        filename: f.filename.clone(),
        bytes,
    })
}

/// Runs the plan step by step. A failed attempt is retried on the next resource in
/// round-robin order up to [`MAX_ATTEMPTS`]; when a step fails for good, its
/// descendants are skipped and the remaining steps still run.
pub fn execute(
    plan: &SchedulePlan,
    steps: &[PipelineStep],
    inputs: &BTreeMap<(String, String), PortValue>,
    resources: &[SimResource],
    ctx: &ExecutionContext<'_>,
    sink: &mut dyn EventSink,
) -> Result<ExecutionOutcome> {
    let rs = sorted_resources(resources);
    let by_id: BTreeMap<&str, &PipelineStep> = steps.iter().map(|s| (s.step_id.as_str(), s)).collect();
    let mut now = ctx.start;
    let mut log = String::new();
    let mut outputs: Vec<OutputValue> = Vec::new();
    let mut failed: BTreeSet<String> = BTreeSet::new();
    let mut executed = BTreeSet::new();
    let mut errors = Vec::new();

    let mut emit = |log: &mut String, e: NewEvent| -> Result<()> {
        let _ = write!(log, "{} {} attempt={} {} on {}", e.timestamp, e.step_id, e.attempt, e.kind, e.resource_id);
        for (k, v) in &e.payload {
            let _ = write!(log, " {k}={v}");
        }
        log.push('\n');
        sink.emit(e)
    };

    for (step_id, first_resource) in &plan.assignments {
        let step = by_id
            .get(step_id.as_str())
            .ok_or_else(|| Error::Validation(format!("plan names unknown step {step_id}")))?;
        if step.depends_on.iter().any(|d| failed.contains(d)) {
            failed.insert(step_id.clone());
            let _ = writeln!(log, "{now} {step_id} skipped: upstream failure");
            continue;
        }
        let algorithm = ctx
            .algorithms
            .get(&step.algorithm_id)
            .cloned()
            .unwrap_or_else(|| step.algorithm_id.to_string());
        let mut ri = rs
            .iter()
            .position(|r| &r.resource_id == first_resource)
            .ok_or_else(|| Error::Validation(format!("plan names unknown resource {first_resource}")))?;
        executed.insert(step_id.clone());

        let mut last_error = String::new();
        let mut done = false;
        for attempt in 1..=MAX_ATTEMPTS {
            let r = rs[ri];
            let ev = |kind: EventKind, at: Timestamp, payload: BTreeMap<String, String>| NewEvent {
                step_id: step_id.clone(),
                attempt,
                kind,
                resource_id: r.resource_id.clone(),
                timestamp: at,
                payload,
            };
            let open = if attempt == 1 { EventKind::Scheduled } else { EventKind::Rescheduled };
            emit(&mut log, ev(open, now, BTreeMap::new()))?;
            emit(&mut log, ev(EventKind::Started, now, BTreeMap::new()))?;

            let gathered = gather_inputs(step, inputs, &outputs);
            let bytes = gathered
                .as_ref()
                .map_or(0, |g| g.files.iter().map(|f| f.bytes.len() as u64).sum());
            let d = r.duration_ms(bytes);
            let note = BTreeMap::from([("note".to_owned(), format!("running {algorithm} on {bytes} bytes"))]);
            emit(&mut log, ev(EventKind::Status, now.plus_millis(d / 2), note))?;
            let end = now.plus_millis(d);

            let result = if r.fails(step_id, attempt) {
                Err(format!("injected failure on {}", r.resource_id))
            } else {
                gathered.and_then(|g| run_toy(&algorithm, &g))
            };
            match result {
                Ok(bytes) => {
                    let mut payload = BTreeMap::new();
                    let mut produced = Vec::new();
                    for port in &step.output_ports {
                        let file = ctx
                            .storage
                            .write(ctx.analysis_id, &format!("{step_id}/{port}"), &bytes)?;
                        payload.insert(port.clone(), file.lfn.to_string());
                        produced.push(OutputValue {
                            step_id: step_id.clone(),
                            port: port.clone(),
                            value: OutputData::File { file },
                            produced_at: end,
                            attempt,
                        });
                    }
                    payload.insert("duration_ms".into(), d.to_string());
                    emit(&mut log, ev(EventKind::Completed, end, payload))?;
                    outputs.extend(produced);
                    done = true;
                }
                Err(msg) => {
                    let payload = BTreeMap::from([("error".to_owned(), msg.clone())]);
                    emit(&mut log, ev(EventKind::Failed, end, payload))?;
                    last_error = msg;
                    ri = (ri + 1) % rs.len();
                }
            }
            now = end;
            if done {
                break;
            }
        }
        if !done {
            failed.insert(step_id.clone());
            errors.push(format!("step {step_id} failed after {MAX_ATTEMPTS} attempts: {last_error}"));
        }
    }

    let log_ref = ctx.storage.write(ctx.analysis_id, "execution.log", log.as_bytes())?;
    let (status, error) = if errors.is_empty() {
        (AnalysisStatus::Completed, None)
    } else {
        (AnalysisStatus::Failed, Some(errors.join("; ")))
    };
    Ok(ExecutionOutcome {
        status,
        outputs,
        error,
        log: log_ref,
        finished_at: now,
        executed_steps: executed,
    })
}

fn gather_inputs(
    step: &PipelineStep,
    bound: &BTreeMap<(String, String), PortValue>,
    produced: &[OutputValue],
) -> std::result::Result<AlgorithmInputs, String> {
    let mut g = AlgorithmInputs::default();
    for p in &step.input_ports {
        match &p.source {
            Some(src) => {
                let file = produced
                    .iter()
                    .find(|o| o.step_id == src.step_id && o.port == src.port)
                    .and_then(OutputValue::file)
                    .ok_or_else(|| format!("upstream output {}.{} missing", src.step_id, src.port))?;
                g.files.push(read_file(file)?);
            }
            None => match bound.get(&(step.step_id.clone(), p.name.clone())) {
                Some(PortValue::Files(files)) => {
                    for f in files {
                        g.files.push(read_file(f)?);
                    }
                }
                Some(PortValue::Scalar(v)) => g.scalars.push((p.name.clone(), v.clone())),
                None => return Err(format!("no value for {}.{}", step.step_id, p.name)),
            },
        }
    }
    Ok(g)
}

impl AnalysisBase {
    /// Expands analysis inputs into per-port values: dataset selections become the
    /// files of the selected items (image files first), in selection order.
    pub fn resolve_inputs(&self, inputs: &[InputValue]) -> Result<BTreeMap<(String, String), PortValue>> {
        let mut out = BTreeMap::new();
        for v in inputs {
            let pv = match &v.value {
                InputData::File { file } => PortValue::Files(vec![file.clone()]),
                InputData::Scalar { value } => PortValue::Scalar(value.clone()),
                InputData::Dataset { dataset_id, items } => {
                    let d = self.dataset(*dataset_id)?;
                    let chosen: Vec<_> = if items.is_empty() {
                        d.items.iter().collect()
                    } else {
                        items
                            .iter()
                            .map(|id| {
                                d.items
                                    .iter()
                                    .find(|i| i.item_id == *id)
                                    .ok_or_else(|| Error::not_found("item", id))
                            })
                            .collect::<Result<_>>()?
                    };
                    PortValue::Files(chosen.into_iter().flat_map(|i| i.files().cloned()).collect())
                }
            };
            out.insert((v.step_id.clone(), v.port.clone()), pv);
        }
        Ok(out)
    }

    /// Stores the analysis, opens its trace, executes it on `resources` and closes
    /// the trace with the outputs or errors. Returns the analysis id; the analysis
    /// may have failed, see its status.
    pub fn submit_analysis(
        &self,
        caller: Id,
        pipeline: VersionRef,
        inputs: Vec<InputValue>,
        resources: &[SimResource],
    ) -> Result<Id> {
        if resources.is_empty() {
            return Err(Error::Validation("at least one resource is required".into()));
        }
        let storage = DerivedStorage::new(self.urls())?;
        let analysis = self.store_analysis(NewAnalysis {
            user: caller,
            pipeline,
            input_values: inputs,
        })?;
        let aid = analysis.analysis_id;
        let trace = self.open_trace(aid)?;
        let snap = &trace.header.pipeline_snapshot;
        let algorithms: BTreeMap<Id, String> = snap
            .algorithms
            .iter()
            .map(|a| (a.algorithm_id, a.name.clone()))
            .collect();
        let run = || -> Result<ExecutionOutcome> {
            let bound = self.resolve_inputs(&analysis.input_values)?;
            let plan = make_plan(&snap.steps, resources)?;
            let ctx = ExecutionContext {
                analysis_id: aid,
                start: analysis.submitted_at,
                algorithms: &algorithms,
                storage: &storage,
            };
            let mut sink = TraceSink { base: self, analysis_id: aid };
            execute(&plan, &snap.steps, &bound, resources, &ctx, &mut sink)
        };
        match run() {
            Ok(outcome) => {
                self.close_trace_at(
                    aid,
                    outcome.outputs,
                    vec![outcome.log],
                    outcome.status,
                    outcome.error,
                    outcome.finished_at,
                )?;
                Ok(aid)
            }
            Err(e) => {
                let _ = self.close_trace(aid, Vec::new(), Vec::new(), AnalysisStatus::Failed, Some(e.to_string()));
                Err(e)
            }
        }
    }

    /// Name → id map of registered algorithms, for parsing definitions.
    pub fn algorithm_registry(&self) -> BTreeMap<String, Id> {
        self.algorithms()
            .into_iter()
            .map(|a| (a.name, a.algorithm_id))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn step(id: &str, deps: &[&str]) -> PipelineStep {
        PipelineStep {
            step_id: id.into(),
            algorithm_id: Id::from_u128(1),
            step_order: 0,
            depends_on: deps.iter().map(|d| d.to_string()).collect::<BTreeSet<_>>(),
            input_ports: Vec::new(),
            output_ports: vec!["o".into()],
        }
    }

    #[test]
    fn chain_on_one_resource() {
        let plan = make_plan(&[step("B", &["A"]), step("A", &[])], &[SimResource::new("r1", 1.0)]).unwrap();
        assert_eq!(
            plan.assignments,
            vec![("A".into(), "r1".into()), ("B".into(), "r1".into())]
        );
    }

    #[test]
    fn independent_steps_round_robin() {
        let rs = [SimResource::new("r2", 1.0), SimResource::new("r1", 1.0)];
        let plan = make_plan(&[step("B", &[]), step("A", &[])], &rs).unwrap();
        assert_eq!(
            plan.assignments,
            vec![("A".into(), "r1".into()), ("B".into(), "r2".into())]
        );
    }

    #[test]
    fn empty_pool_is_rejected() {
        assert!(make_plan(&[step("A", &[])], &[]).is_err());
    }

    #[test]
    fn durations_scale_with_input_and_speed() {
        let r = SimResource::new("r1", 2.0);
        assert_eq!(r.duration_ms(0), 50);
        assert_eq!(r.duration_ms(100 * 1024), 100);
    }

    #[test]
    fn pool_is_a_function_of_the_seed() {
        let steps = [step("A", &[]), step("B", &["A"])];
        assert_eq!(resource_pool(3, 7, &steps, 0.3), resource_pool(3, 7, &steps, 0.3));
        let ids: Vec<String> = resource_pool(12, 1, &steps, 0.0).into_iter().map(|r| r.resource_id).collect();
        assert_eq!(ids[0], "r01");
        assert!(ids.windows(2).all(|w| w[0] < w[1]));
    }
}
