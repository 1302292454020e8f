use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::ident::{Id, Timestamp};
use crate::model::{
    AlgorithmRecord, AnalysisStatus, AnnotationRecord, DataItemRecord, InputValue, OutputValue,
    PipelineRecord, PipelineStep, UserRecord, VersionRef, Visibility,
};
use crate::provenance::{ExecutionEvent, TraceClose, TraceHeader};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Table {
    Users,
    Pipelines,
    Algorithms,
    Steps,
    Datasets,
    Items,
    Analyses,
    InputValues,
    Outputs,
    Annotations,
    ProvenanceEvents,
}

impl Table {
    pub const ALL: [Table; 11] = [
        Table::Users,
        Table::Pipelines,
        Table::Algorithms,
        Table::Steps,
        Table::Datasets,
        Table::Items,
        Table::Analyses,
        Table::InputValues,
        Table::Outputs,
        Table::Annotations,
        Table::ProvenanceEvents,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Table::Users => "users",
            Table::Pipelines => "pipelines",
            Table::Algorithms => "algorithms",
            Table::Steps => "steps",
            Table::Datasets => "datasets",
            Table::Items => "items",
            Table::Analyses => "analyses",
            Table::InputValues => "input_values",
            Table::Outputs => "outputs",
            Table::Annotations => "annotations",
            Table::ProvenanceEvents => "provenance_events",
        }
    }
}

impl fmt::Display for Table {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRow {
    pub pipeline: VersionRef,
    pub position: u32,
    pub step: PipelineStep,
}

/// Dataset header; items live in their own table and are listed here by id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRow {
    pub dataset_id: Id,
    pub name: String,
    pub owner: Id,
    pub visibility: Visibility,
    pub item_ids: Vec<Id>,
    pub indexed_at: Timestamp,
    pub source_metadata_ref: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRow {
    pub dataset_id: Id,
    pub item: DataItemRecord,
}

/// Analysis header; inputs and outputs live in their own tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisRow {
    pub analysis_id: Id,
    pub user: Id,
    pub pipeline: VersionRef,
    pub submitted_at: Timestamp,
    pub status: AnalysisStatus,
    pub log_refs: Vec<crate::model::FileRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputRow {
    pub analysis_id: Id,
    pub index: u32,
    pub value: InputValue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputRow {
    pub analysis_id: Id,
    pub index: u32,
    pub value: OutputValue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "record")]
pub enum ProvenanceRow {
    Open(TraceHeader),
    Event { analysis_id: Id, event: ExecutionEvent },
    Close { analysis_id: Id, close: TraceClose },
}

impl ProvenanceRow {
    pub fn analysis_id(&self) -> Id {
        match self {
            ProvenanceRow::Open(h) => h.analysis_id,
            ProvenanceRow::Event { analysis_id, .. } | ProvenanceRow::Close { analysis_id, .. } => {
                *analysis_id
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Row {
    User(UserRecord),
    Pipeline(PipelineRecord),
    Algorithm(AlgorithmRecord),
    Step(StepRow),
    Dataset(DatasetRow),
    Item(ItemRow),
    Analysis(AnalysisRow),
    Input(InputRow),
    Output(OutputRow),
    Annotation(AnnotationRecord),
    Provenance(ProvenanceRow),
}

impl Row {
    pub fn table(&self) -> Table {
        match self {
            Row::User(_) => Table::Users,
            Row::Pipeline(_) => Table::Pipelines,
            Row::Algorithm(_) => Table::Algorithms,
            Row::Step(_) => Table::Steps,
            Row::Dataset(_) => Table::Datasets,
            Row::Item(_) => Table::Items,
            Row::Analysis(_) => Table::Analyses,
            Row::Input(_) => Table::InputValues,
            Row::Output(_) => Table::Outputs,
            Row::Annotation(_) => Table::Annotations,
            Row::Provenance(_) => Table::ProvenanceEvents,
        }
    }

    /// Identity within the table; a later row with the same id supersedes earlier ones.
    pub fn id(&self) -> String {
        match self {
            Row::User(u) => u.user_id.to_string(),
            Row::Pipeline(p) => p.pipeline_id.to_string(),
            Row::Algorithm(a) => a.algorithm_id.to_string(),
            Row::Step(s) => format!("{}/{}/{}", s.pipeline.pipeline_id, s.pipeline.version, s.position),
            Row::Dataset(d) => d.dataset_id.to_string(),
            Row::Item(i) => i.item.item_id.to_string(),
            Row::Analysis(a) => a.analysis_id.to_string(),
            Row::Input(i) => format!("{}/{}", i.analysis_id, i.index),
            Row::Output(o) => format!("{}/{}", o.analysis_id, o.index),
            Row::Annotation(a) => a.annotation_id.to_string(),
            Row::Provenance(p) => match p {
                ProvenanceRow::Open(h) => format!("{}/open", h.analysis_id),
                ProvenanceRow::Event { analysis_id, event } => format!("{analysis_id}/event/{}", event.seq),
                ProvenanceRow::Close { analysis_id, .. } => format!("{analysis_id}/close"),
            },
        }
    }

    pub(crate) fn to_value(&self) -> Value {
        let v = match self {
            Row::User(r) => serde_json::to_value(r),
            Row::Pipeline(r) => serde_json::to_value(r),
            Row::Algorithm(r) => serde_json::to_value(r),
            Row::Step(r) => serde_json::to_value(r),
            Row::Dataset(r) => serde_json::to_value(r),
            Row::Item(r) => serde_json::to_value(r),
            Row::Analysis(r) => serde_json::to_value(r),
            Row::Input(r) => serde_json::to_value(r),
            Row::Output(r) => serde_json::to_value(r),
            Row::Annotation(r) => serde_json::to_value(r),
            Row::Provenance(r) => serde_json::to_value(r),
        };
        v.expect("records are always serializable")
    }

    pub(crate) fn from_value(table: Table, v: Value) -> Result<Row> {
        fn de<T: serde::de::DeserializeOwned>(table: Table, v: Value) -> Result<T> {
            serde_json::from_value(v)
                .map_err(|e| Error::Corrupt(format!("undecodable {table} record: {e}")))
        }
        Ok(match table {
            Table::Users => Row::User(de(table, v)?),
            Table::Pipelines => Row::Pipeline(de(table, v)?),
            Table::Algorithms => Row::Algorithm(de(table, v)?),
            Table::Steps => Row::Step(de(table, v)?),
            Table::Datasets => Row::Dataset(de(table, v)?),
            Table::Items => Row::Item(de(table, v)?),
            Table::Analyses => Row::Analysis(de(table, v)?),
            Table::InputValues => Row::Input(de(table, v)?),
            Table::Outputs => Row::Output(de(table, v)?),
            Table::Annotations => Row::Annotation(de(table, v)?),
            Table::ProvenanceEvents => Row::Provenance(de(table, v)?),
        })
    }
}
