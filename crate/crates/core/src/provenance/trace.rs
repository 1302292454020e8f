use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ident::{Id, Timestamp};
use crate::model::{AlgorithmRecord, AnalysisStatus, InputValue, PipelineStep, PipelineVersion};

/// Attempts per step before the step, and therefore the trace, is failed for good.
pub const MAX_ATTEMPTS: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Scheduled,
    Started,
    Status,
    Failed,
    Rescheduled,
    Completed,
}

impl EventKind {
    pub fn is_terminal(self) -> bool {
        matches!(self, EventKind::Failed | EventKind::Completed)
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EventKind::Scheduled => "scheduled",
            EventKind::Started => "started",
            EventKind::Status => "status",
            EventKind::Failed => "failed",
            EventKind::Rescheduled => "rescheduled",
            EventKind::Completed => "completed",
        })
    }
}

/// An event as produced by an execution; the trace assigns `seq` on acceptance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewEvent {
    pub step_id: String,
    pub attempt: u32,
    pub kind: EventKind,
    pub resource_id: String,
    pub timestamp: Timestamp,
    pub payload: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionEvent {
    pub seq: u64,
    pub step_id: String,
    pub attempt: u32,
    pub kind: EventKind,
    pub resource_id: String,
    pub timestamp: Timestamp,
    pub payload: BTreeMap<String, String>,
}

/// Deep copy of the pipeline specification taken when the trace is opened.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineSnapshot {
    pub pipeline_id: Id,
    pub name: String,
    pub author: Id,
    pub version: PipelineVersion,
    pub steps: Vec<PipelineStep>,
    pub algorithms: Vec<AlgorithmRecord>,
}

impl PipelineSnapshot {
    pub fn step(&self, step_id: &str) -> Option<&PipelineStep> {
        self.steps.iter().find(|s| s.step_id == step_id)
    }

    pub fn algorithm(&self, id: Id) -> Option<&AlgorithmRecord> {
        self.algorithms.iter().find(|a| a.algorithm_id == id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub analysis_id: Id,
    pub user: Id,
    pub opened_at: Timestamp,
    pub pipeline_snapshot: PipelineSnapshot,
    pub input_snapshot: Vec<InputValue>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceClose {
    pub final_status: AnalysisStatus,
    pub closed_at: Timestamp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceTrace {
    pub header: TraceHeader,
    pub events: Vec<ExecutionEvent>,
    pub closed: Option<TraceClose>,
}

impl ProvenanceTrace {
    pub fn new(header: TraceHeader) -> Self {
        ProvenanceTrace {
            header,
            events: Vec::new(),
            closed: None,
        }
    }

    pub fn analysis_id(&self) -> Id {
        self.header.analysis_id
    }

    pub fn is_closed(&self) -> bool {
        self.closed.is_some()
    }

    pub fn next_seq(&self) -> u64 {
        self.events.last().map_or(1, |e| e.seq + 1)
    }

    pub fn step_events<'a>(&'a self, step_id: &'a str) -> impl Iterator<Item = &'a ExecutionEvent> + 'a {
        self.events.iter().filter(move |e| e.step_id == step_id)
    }

    pub fn step_completed(&self, step_id: &str) -> bool {
        self.step_events(step_id).any(|e| e.kind == EventKind::Completed)
    }

    /// A step is terminal once it completed or its last attempt failed with no retry left.
    pub fn step_terminal(&self, step_id: &str) -> bool {
        self.step_events(step_id).last().is_some_and(|e| e.kind.is_terminal())
    }

    pub fn has_error(&self) -> bool {
        self.events.iter().any(|e| e.kind == EventKind::Failed)
            || self.closed.as_ref().is_some_and(|c| c.error.is_some())
    }

    /// Checks `e` against the per-attempt state machine:
    /// (scheduled | rescheduled) → started → status* → (failed | completed).
    /// Attempt 1 opens with `scheduled`; attempt n > 1 opens with `rescheduled` after
    /// attempt n-1 failed. A step starts only once all its dependencies completed.
    pub fn check_event(&self, e: &NewEvent) -> Result<()> {
        let illegal = |msg: String| Err(Error::State(msg));
        if self.is_closed() {
            return illegal(format!("trace {} is closed", self.analysis_id()));
        }
        let Some(step) = self.header.pipeline_snapshot.step(&e.step_id) else {
            return Err(Error::Validation(format!("unknown step {}", e.step_id)));
        };
        if e.attempt == 0 || e.attempt > MAX_ATTEMPTS {
            return illegal(format!(
                "attempt {} of {} outside 1..={MAX_ATTEMPTS}",
                e.attempt, e.step_id
            ));
        }
        let prior: Vec<&ExecutionEvent> = self.step_events(&e.step_id).collect();
        if let Some(last) = prior.last() {
            if e.timestamp < last.timestamp {
                return illegal(format!("{} event goes back in time", e.step_id));
            }
        }
        let this_attempt: Vec<EventKind> = prior
            .iter()
            .filter(|p| p.attempt == e.attempt)
            .map(|p| p.kind)
            .collect();
        let later_attempt = prior.iter().any(|p| p.attempt > e.attempt);
        let opened = !this_attempt.is_empty();
        let started = this_attempt.contains(&EventKind::Started);
        let terminal = this_attempt.iter().any(|k| k.is_terminal());
        let what = format!("{} {} (attempt {})", e.step_id, e.kind, e.attempt);

        if later_attempt {
            return illegal(format!("{what}: a later attempt already exists"));
        }
        match e.kind {
            EventKind::Scheduled => {
                if e.attempt != 1 {
                    return illegal(format!("{what}: retries open with rescheduled"));
                }
                if opened {
                    return illegal(format!("{what}: already scheduled"));
                }
            }
            EventKind::Rescheduled => {
                if e.attempt == 1 {
                    return illegal(format!("{what}: first attempt opens with scheduled"));
                }
                if opened {
                    return illegal(format!("{what}: already rescheduled"));
                }
                let prev_failed = prior
                    .iter()
                    .any(|p| p.attempt == e.attempt - 1 && p.kind == EventKind::Failed);
                if !prev_failed {
                    return illegal(format!("{what}: attempt {} did not fail", e.attempt - 1));
                }
            }
            EventKind::Started => {
                if !opened {
                    return illegal(format!("{what}: not scheduled"));
                }
                if started {
                    return illegal(format!("{what}: already started"));
                }
                let pending: BTreeSet<&str> = step
                    .depends_on
                    .iter()
                    .filter(|d| !self.step_completed(d))
                    .map(String::as_str)
                    .collect();
                if !pending.is_empty() {
                    return illegal(format!(
                        "{what}: dependencies not completed: {}",
                        pending.into_iter().collect::<Vec<_>>().join(",")
                    ));
                }
            }
            EventKind::Status | EventKind::Failed | EventKind::Completed => {
                if !started {
                    return illegal(format!("{what}: not started"));
                }
                if terminal {
                    return illegal(format!("{what}: attempt already finished"));
                }
            }
        }
        Ok(())
    }
}
