use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::ident::Id;
use crate::model::{
    AlgorithmRecord, AnalysisRecord, AnnotationRecord, AnnotationTarget, AttrValue,
    DatasetRecord, InputValue, OutputValue, PipelineRecord, PipelineStep, UserRecord, VersionRef,
};
use crate::provenance::ProvenanceTrace;

use super::rows::{AnalysisRow, DatasetRow, ItemRow, ProvenanceRow, Row};

/// Hashable form of an attribute value for equality lookups. Integers and
/// decimals share the numeric key so `age=63` matches both `63` and `63.0`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum AttrKey {
    Num(u64),
    Text(String),
}

impl AttrKey {
    pub fn of(v: &AttrValue) -> AttrKey {
        match v {
            AttrValue::Text(s) => AttrKey::Text(s.clone()),
            other => {
                let f = other.as_f64().unwrap_or(0.0);
                // +0.0 and -0.0 compare equal
                AttrKey::Num(if f == 0.0 { 0 } else { f.to_bits() })
            }
        }
    }
}

/// attribute name → value key → item ids.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AttrIndex {
    map: HashMap<String, HashMap<AttrKey, BTreeSet<Id>>>,
}

impl AttrIndex {
    fn insert(&mut self, item_id: Id, attrs: &BTreeMap<String, AttrValue>) {
        for (name, v) in attrs {
            self.map
                .entry(name.clone())
                .or_default()
                .entry(AttrKey::of(v))
                .or_default()
                .insert(item_id);
        }
    }

    fn remove(&mut self, item_id: Id, attrs: &BTreeMap<String, AttrValue>) {
        for (name, v) in attrs {
            if let Some(by_value) = self.map.get_mut(name) {
                if let Some(ids) = by_value.get_mut(&AttrKey::of(v)) {
                    ids.remove(&item_id);
                }
            }
        }
    }

    pub fn keys_of<'a>(&'a self, name: &str) -> impl Iterator<Item = (&'a AttrKey, &'a BTreeSet<Id>)> + 'a {
        self.map.get(name).into_iter().flat_map(|m| m.iter())
    }

    pub fn lookup(&self, name: &str, key: &AttrKey) -> Option<&BTreeSet<Id>> {
        self.map.get(name).and_then(|m| m.get(key))
    }
}

/// The materialized store: last-writer-wins snapshot of every table.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct State {
    pub users: BTreeMap<Id, UserRecord>,
    pub pipelines: BTreeMap<Id, PipelineRecord>,
    pub algorithms: BTreeMap<Id, AlgorithmRecord>,
    pub steps: BTreeMap<VersionRef, BTreeMap<u32, PipelineStep>>,
    pub datasets: BTreeMap<Id, DatasetRow>,
    pub items: BTreeMap<Id, ItemRow>,
    pub analyses: BTreeMap<Id, AnalysisRow>,
    pub inputs: BTreeMap<Id, BTreeMap<u32, InputValue>>,
    pub outputs: BTreeMap<Id, BTreeMap<u32, OutputValue>>,
    /// Annotation plus the transaction that created it, for creation ordering.
    pub annotations: BTreeMap<Id, (u64, AnnotationRecord)>,
    pub traces: BTreeMap<Id, ProvenanceTrace>,
    pub attr_index: AttrIndex,
    pub last_txn: u64,
}

impl State {
    pub(crate) fn apply(&mut self, txn: u64, row: Row) {
        self.last_txn = self.last_txn.max(txn);
        match row {
            Row::User(u) => {
                self.users.insert(u.user_id, u);
            }
            Row::Pipeline(p) => {
                self.pipelines.insert(p.pipeline_id, p);
            }
            Row::Algorithm(a) => {
                self.algorithms.insert(a.algorithm_id, a);
            }
            Row::Step(s) => {
                self.steps.entry(s.pipeline).or_default().insert(s.position, s.step);
            }
            Row::Dataset(d) => {
                self.datasets.insert(d.dataset_id, d);
            }
            Row::Item(i) => {
                let id = i.item.item_id;
                if let Some(old) = self.items.get(&id) {
                    let attrs = old.item.attributes.clone();
                    self.attr_index.remove(id, &attrs);
                }
                self.attr_index.insert(id, &i.item.attributes);
                self.items.insert(id, i);
            }
            Row::Analysis(a) => {
                self.analyses.insert(a.analysis_id, a);
            }
            Row::Input(i) => {
                self.inputs.entry(i.analysis_id).or_default().insert(i.index, i.value);
            }
            Row::Output(o) => {
                self.outputs.entry(o.analysis_id).or_default().insert(o.index, o.value);
            }
            Row::Annotation(a) => {
                let txn = self.annotations.get(&a.annotation_id).map_or(txn, |(t, _)| *t);
                self.annotations.insert(a.annotation_id, (txn, a));
            }
            Row::Provenance(p) => self.apply_provenance(p),
        }
    }

    fn apply_provenance(&mut self, p: ProvenanceRow) {
        match p {
            ProvenanceRow::Open(h) => {
                let id = h.analysis_id;
                match self.traces.get_mut(&id) {
                    Some(t) => t.header = h,
                    None => {
                        self.traces.insert(id, ProvenanceTrace::new(h));
                    }
                }
            }
            ProvenanceRow::Event { analysis_id, event } => {
                if let Some(t) = self.traces.get_mut(&analysis_id) {
                    match t.events.binary_search_by_key(&event.seq, |e| e.seq) {
                        Ok(i) => t.events[i] = event,
                        Err(i) => t.events.insert(i, event),
                    }
                }
            }
            ProvenanceRow::Close { analysis_id, close } => {
                if let Some(t) = self.traces.get_mut(&analysis_id) {
                    t.closed = Some(close);
                }
            }
        }
    }

    pub fn dataset(&self, id: Id) -> Option<DatasetRecord> {
        let d = self.datasets.get(&id)?;
        Some(DatasetRecord {
            dataset_id: d.dataset_id,
            name: d.name.clone(),
            owner: d.owner,
            visibility: d.visibility.clone(),
            items: d
                .item_ids
                .iter()
                .filter_map(|i| self.items.get(i).map(|r| r.item.clone()))
                .collect(),
            indexed_at: d.indexed_at,
            source_metadata_ref: d.source_metadata_ref.clone(),
        })
    }

    pub fn dataset_header(&self, id: Id) -> Option<DatasetRecord> {
        let d = self.datasets.get(&id)?;
        Some(DatasetRecord {
            dataset_id: d.dataset_id,
            name: d.name.clone(),
            owner: d.owner,
            visibility: d.visibility.clone(),
            items: Vec::new(),
            indexed_at: d.indexed_at,
            source_metadata_ref: d.source_metadata_ref.clone(),
        })
    }

    pub fn analysis(&self, id: Id) -> Option<AnalysisRecord> {
        let a = self.analyses.get(&id)?;
        Some(AnalysisRecord {
            analysis_id: a.analysis_id,
            user: a.user,
            pipeline: a.pipeline,
            submitted_at: a.submitted_at,
            status: a.status,
            input_values: self
                .inputs
                .get(&id)
                .map(|m| m.values().cloned().collect())
                .unwrap_or_default(),
            outputs: self
                .outputs
                .get(&id)
                .map(|m| m.values().cloned().collect())
                .unwrap_or_default(),
            log_refs: a.log_refs.clone(),
        })
    }

    pub fn steps_of(&self, v: VersionRef) -> Vec<PipelineStep> {
        self.steps
            .get(&v)
            .map(|m| m.values().cloned().collect())
            .unwrap_or_default()
    }

    pub fn version_exists(&self, v: VersionRef) -> bool {
        self.pipelines
            .get(&v.pipeline_id)
            .is_some_and(|p| p.version(v.version).is_some())
    }

    pub fn annotation_target_exists(&self, t: &AnnotationTarget) -> bool {
        match t {
            AnnotationTarget::Analysis(id) => self.analyses.contains_key(id),
            AnnotationTarget::Dataset(id) => self.datasets.contains_key(id),
            AnnotationTarget::PipelineVersion(v) => self.version_exists(*v),
        }
    }

    /// Annotations on `target`, oldest first.
    pub fn annotations_for(&self, target: &AnnotationTarget) -> Vec<AnnotationRecord> {
        let mut v: Vec<&(u64, AnnotationRecord)> = self
            .annotations
            .values()
            .filter(|(_, a)| a.target == *target)
            .collect();
        v.sort_by_key(|(txn, a)| (*txn, a.created_at, a.annotation_id));
        v.into_iter().map(|(_, a)| a.clone()).collect()
    }
}
