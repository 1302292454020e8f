//! Provenance capture: a deep snapshot of the pipeline and inputs when an analysis
//! is opened, an append-only event log per execution attempt, and closure with
//! outputs or errors. `reconstruct` turns a trace back into a self-contained report.

mod report;
mod trace;

pub use report::{AttemptOutcome, AttemptReport, ProvenanceGraph, StepInput, StepOutcome, StepReport};
pub use trace::*;

use crate::error::{Error, Result};
use crate::ident::{Id, Timestamp};
use crate::model::{AnalysisStatus, FileRef, InputValue, OutputValue};
use crate::persistency::{derived_rows, status_row, AnalysisBase, NewAnalysis};
use crate::store::{ProvenanceRow, Row};

impl AnalysisBase {
    /// Opens the trace of a submitted analysis, copying its pipeline version, steps,
    /// referenced algorithms and input values.
    pub fn open_trace(&self, analysis_id: Id) -> Result<ProvenanceTrace> {
        let opened_at = self.now();
        self.store().transact(|st| {
            if st.traces.contains_key(&analysis_id) {
                return Err(Error::Conflict(format!("trace for {analysis_id} already exists")));
            }
            let a = st
                .analysis(analysis_id)
                .ok_or_else(|| Error::not_found("analysis", analysis_id))?;
            if a.status != AnalysisStatus::Submitted {
                return Err(Error::State(format!(
                    "analysis {analysis_id} is {}, not submitted",
                    a.status
                )));
            }
            let p = st
                .pipelines
                .get(&a.pipeline.pipeline_id)
                .ok_or_else(|| Error::not_found("pipeline", a.pipeline.pipeline_id))?;
            let version = p
                .version(a.pipeline.version)
                .cloned()
                .ok_or_else(|| Error::not_found("pipeline version", a.pipeline))?;
            let steps = st.steps_of(a.pipeline);
            let mut algorithms: Vec<_> = steps
                .iter()
                .filter_map(|s| st.algorithms.get(&s.algorithm_id).cloned())
                .collect();
            algorithms.sort_by_key(|x| x.algorithm_id);
            algorithms.dedup_by_key(|x| x.algorithm_id);
            let header = TraceHeader {
                analysis_id,
                user: a.user,
                opened_at,
                pipeline_snapshot: PipelineSnapshot {
                    pipeline_id: p.pipeline_id,
                    name: p.name.clone(),
                    author: p.author,
                    version,
                    steps,
                    algorithms,
                },
                input_snapshot: a.input_values.clone(),
            };
            let trace = ProvenanceTrace::new(header.clone());
            Ok((vec![Row::Provenance(ProvenanceRow::Open(header))], trace))
        })
    }

    /// Appends one event and returns its sequence number. The first `started` event
    /// moves the analysis from submitted to running.
    pub fn record_event(&self, analysis_id: Id, event: NewEvent) -> Result<u64> {
        self.store().transact(|st| {
            let trace = st
                .traces
                .get(&analysis_id)
                .ok_or_else(|| Error::not_found("trace", analysis_id))?;
            trace.check_event(&event)?;
            let mut rows = Vec::new();
            let seq = trace.next_seq();
            let stored = ExecutionEvent {
                seq,
                step_id: event.step_id,
                attempt: event.attempt,
                kind: event.kind,
                resource_id: event.resource_id,
                timestamp: event.timestamp,
                payload: event.payload,
            };
            if stored.kind == EventKind::Started
                && st.analyses[&analysis_id].status == AnalysisStatus::Submitted
            {
                rows.push(Row::Analysis(status_row(st, analysis_id, AnalysisStatus::Running)?));
            }
            rows.push(Row::Provenance(ProvenanceRow::Event {
                analysis_id,
                event: stored,
            }));
            Ok((rows, seq))
        })
    }

    /// Closes the trace, links outputs and logs, and sets the final analysis status,
    /// all in one transaction.
    pub fn close_trace(
        &self,
        analysis_id: Id,
        outputs: Vec<OutputValue>,
        log_refs: Vec<FileRef>,
        final_status: AnalysisStatus,
        error: Option<String>,
    ) -> Result<()> {
        let closed_at = self.now();
        self.close_trace_at(analysis_id, outputs, log_refs, final_status, error, closed_at)
    }

    pub(crate) fn close_trace_at(
        &self,
        analysis_id: Id,
        outputs: Vec<OutputValue>,
        log_refs: Vec<FileRef>,
        final_status: AnalysisStatus,
        error: Option<String>,
        closed_at: Timestamp,
    ) -> Result<()> {
        self.store().transact(|st| {
            let trace = st
                .traces
                .get(&analysis_id)
                .ok_or_else(|| Error::not_found("trace", analysis_id))?;
            if trace.is_closed() {
                return Err(Error::State(format!("trace {analysis_id} is already closed")));
            }
            match final_status {
                AnalysisStatus::Completed => {
                    let open: Vec<&str> = trace
                        .header
                        .pipeline_snapshot
                        .steps
                        .iter()
                        .filter(|s| !trace.step_completed(&s.step_id))
                        .map(|s| s.step_id.as_str())
                        .collect();
                    if !open.is_empty() {
                        return Err(Error::State(format!(
                            "cannot complete {analysis_id}: steps not completed: {}",
                            open.join(",")
                        )));
                    }
                }
                AnalysisStatus::Failed => {
                    if error.as_deref().map_or(true, |e| e.trim().is_empty()) {
                        return Err(Error::Validation("a failed trace needs error text".into()));
                    }
                }
                other => {
                    return Err(Error::Validation(format!("{other} is not a final status")));
                }
            }
            for o in &outputs {
                let ok = trace
                    .step_events(&o.step_id)
                    .any(|e| e.attempt == o.attempt && e.kind == EventKind::Completed);
                if !ok {
                    return Err(Error::Validation(format!(
                        "output {}.{} has no completed attempt {}",
                        o.step_id, o.port, o.attempt
                    )));
                }
            }
            let mut rows = derived_rows(st, analysis_id, outputs, log_refs)?;
            let mut status = status_row(st, analysis_id, final_status)?;
            // keep log refs appended by derived_rows
            if let Some(Row::Analysis(updated)) = rows.iter().rev().find(|r| matches!(r, Row::Analysis(_))) {
                status.log_refs = updated.log_refs.clone();
            }
            rows.retain(|r| !matches!(r, Row::Analysis(_)));
            rows.push(Row::Analysis(status));
            rows.push(Row::Provenance(ProvenanceRow::Close {
                analysis_id,
                close: TraceClose {
                    final_status,
                    closed_at,
                    error,
                },
            }));
            Ok((rows, ()))
        })
    }

    pub fn trace(&self, analysis_id: Id) -> Result<ProvenanceTrace> {
        self.store()
            .read()
            .traces
            .get(&analysis_id)
            .cloned()
            .ok_or_else(|| Error::not_found("trace", analysis_id))
    }

    pub fn reconstruct(&self, analysis_id: Id) -> Result<ProvenanceGraph> {
        let st = self.store().read();
        let trace = st
            .traces
            .get(&analysis_id)
            .ok_or_else(|| Error::not_found("analysis", analysis_id))?;
        let analysis = st
            .analysis(analysis_id)
            .ok_or_else(|| Error::not_found("analysis", analysis_id))?;
        let annotations = st.annotations_for(&crate::model::AnnotationTarget::Analysis(analysis_id));
        Ok(ProvenanceGraph::build(&st.users, trace, &analysis, annotations))
    }

    /// A submission equal to the trace's input snapshot with `overrides` replacing
    /// the entries for the same (step, port), pinned to the same pipeline version.
    pub fn derive_rerun(&self, analysis_id: Id, overrides: Vec<InputValue>) -> Result<NewAnalysis> {
        let trace = self.trace(analysis_id)?;
        let snap = &trace.header.pipeline_snapshot;
        let mut inputs = trace.header.input_snapshot.clone();
        for o in overrides {
            let port = snap
                .step(&o.step_id)
                .and_then(|s| s.input_port(&o.port))
                .ok_or_else(|| {
                    Error::Validation(format!("{}.{} is not an input port", o.step_id, o.port))
                })?;
            if port.source.is_some() {
                return Err(Error::Validation(format!(
                    "{}.{} is fed by an upstream step",
                    o.step_id, o.port
                )));
            }
            if port.kind != o.value.port_kind() {
                return Err(Error::Validation(format!(
                    "{}.{} expects a {} value",
                    o.step_id, o.port, port.kind
                )));
            }
            match inputs
                .iter_mut()
                .find(|i| i.step_id == o.step_id && i.port == o.port)
            {
                Some(slot) => *slot = o,
                None => inputs.push(o),
            }
        }
        Ok(NewAnalysis {
            user: trace.header.user,
            pipeline: crate::model::VersionRef {
                pipeline_id: snap.pipeline_id,
                version: snap.version.version,
            },
            input_values: inputs,
        })
    }
}
