use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::ident::{Id, Timestamp};
use crate::model::{
    AnalysisRecord, AnalysisStatus, AnnotationRecord, InputData, OutputValue, PipelineStep,
    PipelineVersion, UserRecord,
};

use super::{EventKind, ProvenanceTrace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Person {
    pub user_id: Id,
    pub name: String,
    pub organisation: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttemptOutcome {
    Completed,
    Failed,
    Pending,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptReport {
    pub attempt: u32,
    pub resource_id: String,
    pub scheduled_at: Timestamp,
    pub started_at: Option<Timestamp>,
    pub ended_at: Option<Timestamp>,
    /// Wall-clock duration from start to the terminal event.
    pub duration_ms: Option<i64>,
    pub outcome: AttemptOutcome,
    pub error: Option<String>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepOutcome {
    Completed,
    Failed,
    /// Never ran because an upstream step failed.
    Skipped,
    Pending,
}

/// Where one input port of a step got its value from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "from")]
pub enum StepInput {
    Submitted { port: String, value: InputData },
    Upstream { port: String, step_id: String, output_port: String, value: Option<OutputValue> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step_id: String,
    pub algorithm: String,
    pub depends_on: Vec<String>,
    pub inputs: Vec<StepInput>,
    pub attempts: Vec<AttemptReport>,
    pub outputs: Vec<OutputValue>,
    pub outcome: StepOutcome,
    /// Duration of the successful attempt, if any.
    pub duration_ms: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSpecReport {
    pub pipeline_id: Id,
    pub name: String,
    pub version: PipelineVersion,
    pub steps: Vec<PipelineStep>,
}

/// Everything recorded about one analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceGraph {
    pub analysis_id: Id,
    pub status: AnalysisStatus,
    pub author: Person,
    pub executor: Person,
    pub submitted_at: Timestamp,
    pub opened_at: Timestamp,
    pub closed_at: Option<Timestamp>,
    pub pipeline: PipelineSpecReport,
    pub steps: Vec<StepReport>,
    pub outputs: Vec<OutputValue>,
    pub errors: Vec<String>,
    pub annotations: Vec<AnnotationRecord>,
}

fn person(users: &BTreeMap<Id, UserRecord>, id: Id) -> Person {
    match users.get(&id) {
        Some(u) => Person {
            user_id: id,
            name: u.name.clone(),
            organisation: u.organisation.clone(),
        },
        None => Person {
            user_id: id,
            name: String::new(),
            organisation: String::new(),
        },
    }
}

impl ProvenanceGraph {
    pub(crate) fn build(
        users: &BTreeMap<Id, UserRecord>,
        trace: &ProvenanceTrace,
        analysis: &AnalysisRecord,
        annotations: Vec<AnnotationRecord>,
    ) -> ProvenanceGraph {
        let snap = &trace.header.pipeline_snapshot;
        let mut errors = Vec::new();
        let mut steps = Vec::new();
        for step in &snap.steps {
            let attempts = attempts_of(trace, &step.step_id);
            for a in &attempts {
                if let Some(e) = &a.error {
                    errors.push(format!("{} attempt {}: {e}", step.step_id, a.attempt));
                }
            }
            let outputs: Vec<OutputValue> = analysis
                .outputs
                .iter()
                .filter(|o| o.step_id == step.step_id)
                .cloned()
                .collect();
            let inputs = step
                .input_ports
                .iter()
                .filter_map(|p| match &p.source {
                    Some(src) => Some(StepInput::Upstream {
                        port: p.name.clone(),
                        step_id: src.step_id.clone(),
                        output_port: src.port.clone(),
                        value: analysis
                            .outputs
                            .iter()
                            .find(|o| o.step_id == src.step_id && o.port == src.port)
                            .cloned(),
                    }),
                    None => trace
                        .header
                        .input_snapshot
                        .iter()
                        .find(|v| v.step_id == step.step_id && v.port == p.name)
                        .map(|v| StepInput::Submitted {
                            port: p.name.clone(),
                            value: v.value.clone(),
                        }),
                })
                .collect();
            let outcome = match attempts.last().map(|a| a.outcome) {
                Some(AttemptOutcome::Completed) => StepOutcome::Completed,
                Some(AttemptOutcome::Failed) => StepOutcome::Failed,
                Some(AttemptOutcome::Pending) => StepOutcome::Pending,
                None if trace.is_closed() => StepOutcome::Skipped,
                None => StepOutcome::Pending,
            };
            let duration_ms = attempts
                .iter()
                .find(|a| a.outcome == AttemptOutcome::Completed)
                .and_then(|a| a.duration_ms);
            let algorithm = snap
                .algorithm(step.algorithm_id)
                .map_or_else(|| step.algorithm_id.to_string(), |a| a.name.clone());
            steps.push(StepReport {
                step_id: step.step_id.clone(),
                algorithm,
                depends_on: step.depends_on.iter().cloned().collect(),
                inputs,
                attempts,
                outputs,
                outcome,
                duration_ms,
            });
        }
        if let Some(e) = trace.closed.as_ref().and_then(|c| c.error.clone()) {
            errors.push(e);
        }
        ProvenanceGraph {
            analysis_id: analysis.analysis_id,
            status: analysis.status,
            author: person(users, snap.author),
            executor: person(users, trace.header.user),
            submitted_at: analysis.submitted_at,
            opened_at: trace.header.opened_at,
            closed_at: trace.closed.as_ref().map(|c| c.closed_at),
            pipeline: PipelineSpecReport {
                pipeline_id: snap.pipeline_id,
                name: snap.name.clone(),
                version: snap.version.clone(),
                steps: snap.steps.clone(),
            },
            steps,
            outputs: analysis.outputs.clone(),
            errors,
            annotations,
        }
    }

    pub fn step(&self, step_id: &str) -> Option<&StepReport> {
        self.steps.iter().find(|s| s.step_id == step_id)
    }

    /// Sum of all attempt durations.
    pub fn total_duration_ms(&self) -> i64 {
        self.steps
            .iter()
            .flat_map(|s| &s.attempts)
            .filter_map(|a| a.duration_ms)
            .sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is serializable")
    }

    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "analysis {} ({})", self.analysis_id, self.status);
        let _ = writeln!(
            s,
            "pipeline {} v{} [{}]",
            self.pipeline.name, self.pipeline.version.version, self.pipeline.pipeline_id
        );
        let _ = writeln!(s, "authored by {} ({})", self.author.name, self.author.user_id);
        let _ = writeln!(s, "executed by {} ({})", self.executor.name, self.executor.user_id);
        let _ = writeln!(s, "submitted {}", self.submitted_at);
        if let Some(c) = self.closed_at {
            let _ = writeln!(s, "closed {c}");
        }
        for step in &self.steps {
            let _ = writeln!(
                s,
                "step {} uses {} -> {}",
                step.step_id,
                step.algorithm,
                serde_json::to_value(step.outcome).unwrap_or_default().as_str().unwrap_or("")
            );
            for i in &step.inputs {
                match i {
                    StepInput::Submitted { port, value } => {
                        let _ = writeln!(s, "  in {port} = {}", describe_input(value));
                    }
                    StepInput::Upstream { port, step_id, output_port, .. } => {
                        let _ = writeln!(s, "  in {port} <- {step_id}.{output_port}");
                    }
                }
            }
            for a in &step.attempts {
                let dur = a.duration_ms.map_or_else(|| "-".to_owned(), |d| format!("{d}ms"));
                let outcome = serde_json::to_value(a.outcome).unwrap_or_default();
                let _ = write!(
                    s,
                    "  attempt {} on {}: {} ({dur})",
                    a.attempt,
                    a.resource_id,
                    outcome.as_str().unwrap_or("")
                );
                if let Some(e) = &a.error {
                    let _ = write!(s, " error: {e}");
                }
                s.push('\n');
            }
            for o in &step.outputs {
                let _ = writeln!(s, "  out {} = {}", o.port, describe_output(o));
            }
        }
        for e in &self.errors {
            let _ = writeln!(s, "error: {e}");
        }
        for a in &self.annotations {
            let _ = writeln!(s, "note by {} at {}: {}", a.author, a.created_at, a.text);
        }
        s
    }
}

fn describe_input(v: &InputData) -> String {
    match v {
        InputData::File { file } => file.lfn.to_string(),
        InputData::Dataset { dataset_id, items } if items.is_empty() => format!("dataset {dataset_id}"),
        InputData::Dataset { dataset_id, items } => format!("dataset {dataset_id} ({} items)", items.len()),
        InputData::Scalar { value } => value.to_string(),
    }
}

fn describe_output(o: &OutputValue) -> String {
    match &o.value {
        crate::model::OutputData::File { file } => match &file.checksum {
            Some(c) => format!("{} sha256:{c}", file.lfn),
            None => file.lfn.to_string(),
        },
        crate::model::OutputData::Scalar { value } => value.to_string(),
    }
}

fn attempts_of(trace: &ProvenanceTrace, step_id: &str) -> Vec<AttemptReport> {
    let mut out: Vec<AttemptReport> = Vec::new();
    for e in trace.step_events(step_id) {
        if matches!(e.kind, EventKind::Scheduled | EventKind::Rescheduled) {
            out.push(AttemptReport {
                attempt: e.attempt,
                resource_id: e.resource_id.clone(),
                scheduled_at: e.timestamp,
                started_at: None,
                ended_at: None,
                duration_ms: None,
                outcome: AttemptOutcome::Pending,
                error: None,
                notes: Vec::new(),
            });
            continue;
        }
        let Some(a) = out.iter_mut().find(|a| a.attempt == e.attempt) else {
            continue;
        };
        match e.kind {
            EventKind::Started => {
                a.started_at = Some(e.timestamp);
                a.resource_id = e.resource_id.clone();
            }
            EventKind::Status => {
                if let Some(n) = e.payload.get("note") {
                    a.notes.push(n.clone());
                }
            }
            EventKind::Completed | EventKind::Failed => {
                a.ended_at = Some(e.timestamp);
                a.duration_ms = a.started_at.map(|s| e.timestamp.millis() - s.millis());
                if e.kind == EventKind::Completed {
                    a.outcome = AttemptOutcome::Completed;
                } else {
                    a.outcome = AttemptOutcome::Failed;
                    a.error = Some(e.payload.get("error").cloned().unwrap_or_default());
                }
            }
            EventKind::Scheduled | EventKind::Rescheduled => unreachable!(),
        }
    }
    out
}
