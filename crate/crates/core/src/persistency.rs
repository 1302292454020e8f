//! The persistency service: registers users, algorithms and pipelines, indexes
//! crawled dataset metadata, records analyses and their derived outputs, and
//! audits the store for referential integrity.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::crawler::DatasetDescriptor;
use crate::error::{Error, Result};
use crate::ident::{Clock, Id, IdSource, SystemClock, Timestamp};
use crate::lfn::{Lfn, StorageUrls};
use crate::model::{
    can_access, next_version, validate_steps, AlgorithmRecord, AnalysisRecord, AnalysisStatus,
    AnnotationRecord, AnnotationTarget, DataItemRecord, DatasetRecord, FileKind, FileRef,
    InputData, InputValue, OutputValue, PipelineRecord, PipelineStep, PipelineVersion, PortKind,
    Role, UserRecord, VersionRef, Visibility,
};
use crate::store::{
    AnalysisRow, DatasetRow, InputRow, ItemRow, OutputRow, Row, State, StepRow, Store,
    StoreOptions,
};

pub const DERIVED_NAMESPACE: &str = "derived";

/// Everything an analysis submission carries before it gets an id.
#[derive(Debug, Clone, PartialEq)]
pub struct NewAnalysis {
    pub user: Id,
    pub pipeline: VersionRef,
    pub input_values: Vec<InputValue>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditReport {
    pub violations: Vec<String>,
    pub records_checked: usize,
}

impl AuditReport {
    pub fn is_healthy(&self) -> bool {
        self.violations.is_empty()
    }
}

pub struct AnalysisBase {
    store: Store,
    clock: Arc<dyn Clock>,
    ids: IdSource,
    urls: StorageUrls,
}

impl std::fmt::Debug for AnalysisBase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AnalysisBase")
            .field("store", &self.store)
            .field("storage", &self.urls.prefix())
            .finish()
    }
}

impl AnalysisBase {
    pub fn new(store: Store, urls: StorageUrls, clock: Arc<dyn Clock>, ids: IdSource) -> Self {
        AnalysisBase {
            store,
            clock,
            ids,
            urls,
        }
    }

    /// Opens a durable store with the system clock and entropy-seeded ids.
    pub fn open(root: &Path, urls: StorageUrls) -> Result<Self> {
        let store = Store::open(root, StoreOptions::default())?;
        Ok(Self::new(store, urls, Arc::new(SystemClock), IdSource::from_entropy()))
    }

    pub fn in_memory(urls: StorageUrls) -> Self {
        Self::new(Store::in_memory(), urls, Arc::new(SystemClock), IdSource::from_entropy())
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn urls(&self) -> &StorageUrls {
        &self.urls
    }

    pub fn now(&self) -> Timestamp {
        self.clock.now()
    }

    pub(crate) fn fresh_id(&self) -> Id {
        self.ids.next_id()
    }

    pub fn register_user(&self, name: &str, organisation: &str, role: Role) -> Result<UserRecord> {
        if name.trim().is_empty() {
            return Err(Error::Validation("user name must not be empty".into()));
        }
        let user = UserRecord {
            user_id: self.fresh_id(),
            name: name.to_owned(),
            organisation: organisation.to_owned(),
            role,
            active: true,
        };
        self.store
            .transact(|_| Ok((vec![Row::User(user.clone())], user)))
    }

    pub fn set_user_active(&self, user_id: Id, active: bool) -> Result<UserRecord> {
        self.store.transact(|st| {
            let mut u = st
                .users
                .get(&user_id)
                .cloned()
                .ok_or_else(|| Error::not_found("user", user_id))?;
            u.active = active;
            Ok((vec![Row::User(u.clone())], u))
        })
    }

    pub fn user(&self, id: Id) -> Result<UserRecord> {
        self.store
            .read()
            .users
            .get(&id)
            .cloned()
            .ok_or_else(|| Error::not_found("user", id))
    }

    pub fn users(&self) -> Vec<UserRecord> {
        self.store.read().users.values().cloned().collect()
    }

    /// Indexes a crawled dataset under `caller`'s ownership. File references get
    /// `lfn://<dataset_id>/<relative_path>` and a location under the storage prefix,
    /// assuming the crawled root is a top-level folder of the mounted storage.
    pub fn index_dataset(
        &self,
        caller: Id,
        metadata: &DatasetDescriptor,
        visibility: Visibility,
        source_metadata_ref: &str,
        replace: bool,
    ) -> Result<DatasetRecord> {
        if metadata.dataset_name.trim().is_empty() {
            return Err(Error::Validation("dataset name must not be empty".into()));
        }
        let folder = Path::new(&metadata.root_path)
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .filter(|n| !n.is_empty())
            .unwrap_or_else(|| metadata.dataset_name.clone());
        let indexed_at = self.now();

        self.store.transact(|st| {
            let owner = active_user(st, caller)?;
            if let Visibility::Shared(users) = &visibility {
                for u in users {
                    if !st.users.contains_key(u) {
                        return Err(Error::Reference(format!("share target {u} is not a user")));
                    }
                }
            }
            let existing = st
                .datasets
                .values()
                .find(|d| d.owner == owner.user_id && d.name == metadata.dataset_name);
            let dataset_id = match (existing, replace) {
                (Some(_), false) => {
                    return Err(Error::Conflict(format!(
                        "dataset {:?} already indexed by this owner",
                        metadata.dataset_name
                    )))
                }
                (Some(d), true) => d.dataset_id,
                (None, _) => self.fresh_id(),
            };

            let mut rows = Vec::new();
            let mut items = Vec::new();
            for item in &metadata.items {
                let to_ref = |f: &crate::crawler::FileEntry, kind: FileKind| -> Result<FileRef> {
                    Ok(FileRef {
                        lfn: Lfn::new(&dataset_id.to_string(), &f.relative_path)?,
                        filename: f.filename.clone(),
                        location: self.urls.url_for(&format!("{folder}/{}", f.relative_path)),
                        kind,
                        size_bytes: f.size_bytes,
                        checksum: Some(f.checksum.clone()).filter(|c| !c.is_empty()),
                    })
                };
                let record = DataItemRecord {
                    item_id: self.fresh_id(),
                    source_subfolder: item.source_subfolder.clone(),
                    image_files: item
                        .image_files
                        .iter()
                        .map(|f| to_ref(f, FileKind::Image))
                        .collect::<Result<_>>()?,
                    data_files: item
                        .data_files
                        .iter()
                        .map(|f| to_ref(f, FileKind::Data))
                        .collect::<Result<_>>()?,
                    attributes: item.attributes.clone(),
                };
                items.push(record.clone());
                rows.push(Row::Item(ItemRow {
                    dataset_id,
                    item: record,
                }));
            }
            let header = DatasetRow {
                dataset_id,
                name: metadata.dataset_name.clone(),
                owner: owner.user_id,
                visibility: visibility.clone(),
                item_ids: items.iter().map(|i| i.item_id).collect(),
                indexed_at,
                source_metadata_ref: source_metadata_ref.to_owned(),
            };
            rows.push(Row::Dataset(header.clone()));
            let record = DatasetRecord {
                dataset_id,
                name: header.name,
                owner: header.owner,
                visibility: header.visibility,
                items,
                indexed_at,
                source_metadata_ref: header.source_metadata_ref,
            };
            Ok((rows, record))
        })
    }

    pub fn dataset(&self, id: Id) -> Result<DatasetRecord> {
        self.store
            .read()
            .dataset(id)
            .ok_or_else(|| Error::not_found("dataset", id))
    }

    /// Dataset fetch on behalf of `caller`, honouring visibility.
    pub fn dataset_for(&self, caller: Id, id: Id) -> Result<DatasetRecord> {
        let user = self.user(caller)?;
        let d = self.dataset(id)?;
        if can_access(&user, &d) {
            Ok(d)
        } else {
            Err(Error::Permission(format!("user {caller} may not read dataset {id}")))
        }
    }

    pub fn datasets(&self) -> Vec<DatasetRecord> {
        let st = self.store.read();
        st.datasets.keys().filter_map(|id| st.dataset(*id)).collect()
    }

    pub fn register_algorithm(
        &self,
        caller: Id,
        name: &str,
        toolkit: &str,
        executable_lfn: Lfn,
    ) -> Result<AlgorithmRecord> {
        if name.trim().is_empty() {
            return Err(Error::Validation("algorithm name must not be empty".into()));
        }
        let id = self.fresh_id();
        self.store.transact(|st| {
            active_user(st, caller)?;
            if st.algorithms.values().any(|a| a.name == name) {
                return Err(Error::Conflict(format!("algorithm {name:?} already registered")));
            }
            let a = AlgorithmRecord {
                algorithm_id: id,
                name: name.to_owned(),
                toolkit: toolkit.to_owned(),
                executable_lfn,
            };
            Ok((vec![Row::Algorithm(a.clone())], a))
        })
    }

    pub fn algorithm(&self, id: Id) -> Result<AlgorithmRecord> {
        self.store
            .read()
            .algorithms
            .get(&id)
            .cloned()
            .ok_or_else(|| Error::not_found("algorithm", id))
    }

    pub fn algorithm_by_name(&self, name: &str) -> Option<AlgorithmRecord> {
        self.store
            .read()
            .algorithms
            .values()
            .find(|a| a.name == name)
            .cloned()
    }

    pub fn algorithms(&self) -> Vec<AlgorithmRecord> {
        self.store.read().algorithms.values().cloned().collect()
    }

    pub fn register_pipeline(
        &self,
        caller: Id,
        name: &str,
        lfn: Lfn,
        description: &str,
        steps: Vec<PipelineStep>,
    ) -> Result<(PipelineRecord, u32)> {
        if name.trim().is_empty() {
            return Err(Error::Validation("pipeline name must not be empty".into()));
        }
        check_steps(&steps)?;
        let pipeline_id = self.fresh_id();
        let created_at = self.now();
        self.store.transact(|st| {
            let author = active_user(st, caller)?;
            check_algorithms(st, &steps)?;
            let record = PipelineRecord {
                pipeline_id,
                name: name.to_owned(),
                author: author.user_id,
                versions: vec![PipelineVersion {
                    version: 1,
                    lfn,
                    created_at,
                    description: description.to_owned(),
                }],
            };
            let mut rows = vec![Row::Pipeline(record.clone())];
            rows.extend(step_rows(VersionRef { pipeline_id, version: 1 }, steps));
            Ok((rows, (record, 1)))
        })
    }

    /// Appends a new version; earlier versions and their steps stay untouched.
    pub fn update_pipeline(
        &self,
        caller: Id,
        pipeline_id: Id,
        lfn: Lfn,
        description: &str,
        steps: Vec<PipelineStep>,
    ) -> Result<PipelineVersion> {
        check_steps(&steps)?;
        let created_at = self.now();
        self.store.transact(|st| {
            active_user(st, caller)?;
            let mut record = st
                .pipelines
                .get(&pipeline_id)
                .cloned()
                .ok_or_else(|| Error::not_found("pipeline", pipeline_id))?;
            check_algorithms(st, &steps)?;
            let version = PipelineVersion {
                version: next_version(&record),
                lfn,
                created_at,
                description: description.to_owned(),
            };
            record.versions.push(version.clone());
            let vref = VersionRef {
                pipeline_id,
                version: version.version,
            };
            let mut rows = vec![Row::Pipeline(record)];
            rows.extend(step_rows(vref, steps));
            Ok((rows, version))
        })
    }

    pub fn pipeline(&self, id: Id) -> Result<PipelineRecord> {
        self.store
            .read()
            .pipelines
            .get(&id)
            .cloned()
            .ok_or_else(|| Error::not_found("pipeline", id))
    }

    pub fn pipelines(&self) -> Vec<PipelineRecord> {
        self.store.read().pipelines.values().cloned().collect()
    }

    pub fn steps(&self, v: VersionRef) -> Result<Vec<PipelineStep>> {
        let st = self.store.read();
        if !st.version_exists(v) {
            return Err(Error::not_found("pipeline version", v));
        }
        Ok(st.steps_of(v))
    }

    /// Persists a submitted analysis with its input values.
    pub fn store_analysis(&self, new: NewAnalysis) -> Result<AnalysisRecord> {
        let analysis_id = self.fresh_id();
        let submitted_at = self.now();
        self.store.transact(|st| {
            let user = active_user(st, new.user)?;
            if !st.version_exists(new.pipeline) {
                return Err(Error::not_found("pipeline version", new.pipeline));
            }
            let steps = st.steps_of(new.pipeline);
            check_inputs(st, &user, &steps, &new.input_values)?;
            let row = AnalysisRow {
                analysis_id,
                user: user.user_id,
                pipeline: new.pipeline,
                submitted_at,
                status: AnalysisStatus::Submitted,
                log_refs: Vec::new(),
            };
            let mut rows = vec![Row::Analysis(row)];
            for (i, v) in new.input_values.iter().enumerate() {
                rows.push(Row::Input(InputRow {
                    analysis_id,
                    index: i as u32,
                    value: v.clone(),
                }));
            }
            let record = AnalysisRecord {
                analysis_id,
                user: user.user_id,
                pipeline: new.pipeline,
                submitted_at,
                status: AnalysisStatus::Submitted,
                input_values: new.input_values.clone(),
                outputs: Vec::new(),
                log_refs: Vec::new(),
            };
            Ok((rows, record))
        })
    }

    pub fn update_analysis_status(&self, analysis_id: Id, status: AnalysisStatus) -> Result<AnalysisRecord> {
        self.store.transact(|st| {
            let row = status_row(st, analysis_id, status)?;
            let mut record = st.analysis(analysis_id).expect("checked by status_row");
            record.status = status;
            Ok((vec![Row::Analysis(row)], record))
        })
    }

    /// Links outputs and log files to an analysis; an empty list is a no-op.
    pub fn store_derived_output(
        &self,
        analysis_id: Id,
        outputs: Vec<OutputValue>,
        log_refs: Vec<FileRef>,
    ) -> Result<()> {
        self.store.transact(|st| {
            let rows = derived_rows(st, analysis_id, outputs, log_refs)?;
            Ok((rows, ()))
        })
    }

    pub fn analysis(&self, id: Id) -> Result<AnalysisRecord> {
        self.store
            .read()
            .analysis(id)
            .ok_or_else(|| Error::not_found("analysis", id))
    }

    pub fn analyses(&self) -> Vec<AnalysisRecord> {
        let st = self.store.read();
        st.analyses.keys().filter_map(|id| st.analysis(*id)).collect()
    }

    pub fn store_annotation(
        &self,
        author: Id,
        target: AnnotationTarget,
        text: &str,
    ) -> Result<AnnotationRecord> {
        let annotation_id = self.fresh_id();
        let created_at = self.now();
        self.store.transact(|st| {
            active_user(st, author)?;
            if !st.annotation_target_exists(&target) {
                return Err(Error::Reference(format!("annotation target {target:?} does not exist")));
            }
            let a = AnnotationRecord {
                annotation_id,
                author,
                target,
                text: text.to_owned(),
                created_at,
            };
            Ok((vec![Row::Annotation(a.clone())], a))
        })
    }

    pub fn annotations_for(&self, target: &AnnotationTarget) -> Vec<AnnotationRecord> {
        self.store.read().annotations_for(target)
    }

    /// Full-store integrity audit: every reference resolves, every dataset and
    /// analysis has an owner, version lists are contiguous, and every closed trace
    /// carries its snapshot, inputs, and outputs or errors with gap-free sequence numbers.
    pub fn audit(&self) -> AuditReport {
        let st = self.store.read();
        let mut r = AuditReport::default();
        let mut bad = |msg: String| r.violations.push(msg);
        let mut checked = 0usize;

        for p in st.pipelines.values() {
            checked += 1;
            if !st.users.contains_key(&p.author) {
                bad(format!("pipeline {} author {} missing", p.pipeline_id, p.author));
            }
            for (i, v) in p.versions.iter().enumerate() {
                if v.version != i as u32 + 1 {
                    bad(format!("pipeline {} versions not contiguous", p.pipeline_id));
                }
            }
        }
        for (vref, steps) in &st.steps {
            checked += steps.len();
            if !st.version_exists(*vref) {
                bad(format!("steps reference missing pipeline version {vref}"));
            }
            for s in steps.values() {
                if !st.algorithms.contains_key(&s.algorithm_id) {
                    bad(format!("step {} of {vref} uses missing algorithm {}", s.step_id, s.algorithm_id));
                }
            }
            let list: Vec<PipelineStep> = steps.values().cloned().collect();
            if let Err(v) = validate_steps(&list) {
                bad(format!("steps of {vref} invalid: {}", join(&v)));
            }
        }
        for d in st.datasets.values() {
            checked += 1;
            if !st.users.contains_key(&d.owner) {
                bad(format!("dataset {} owner {} missing", d.dataset_id, d.owner));
            }
            for i in &d.item_ids {
                match st.items.get(i) {
                    Some(row) if row.dataset_id == d.dataset_id => {}
                    _ => bad(format!("dataset {} lists missing item {i}", d.dataset_id)),
                }
            }
        }
        for (id, row) in &st.items {
            checked += 1;
            if !st.datasets.contains_key(&row.dataset_id) {
                bad(format!("item {id} belongs to missing dataset {}", row.dataset_id));
            }
            for f in &row.item.image_files {
                if f.kind != FileKind::Image {
                    bad(format!("item {id} lists {} as image", f.lfn));
                }
            }
            for f in &row.item.data_files {
                if f.kind != FileKind::Data {
                    bad(format!("item {id} lists {} as data", f.lfn));
                }
            }
        }
        for a in st.analyses.values() {
            checked += 1;
            if !st.users.contains_key(&a.user) {
                bad(format!("analysis {} user {} missing", a.analysis_id, a.user));
            }
            if !st.version_exists(a.pipeline) {
                bad(format!("analysis {} pins missing version {}", a.analysis_id, a.pipeline));
            }
            if a.status.is_terminal() {
                match st.traces.get(&a.analysis_id) {
                    Some(t) if t.is_closed() => {}
                    _ => bad(format!("analysis {} is {} without a closed trace", a.analysis_id, a.status)),
                }
            }
            if a.status == AnalysisStatus::Failed
                && !st.traces.get(&a.analysis_id).is_some_and(|t| t.has_error())
            {
                bad(format!("failed analysis {} records no error", a.analysis_id));
            }
        }
        for (aid, inputs) in &st.inputs {
            checked += inputs.len();
            if !st.analyses.contains_key(aid) {
                bad(format!("input values reference missing analysis {aid}"));
                continue;
            }
            let steps = st.steps_of(st.analyses[aid].pipeline);
            for v in inputs.values() {
                let declared = steps
                    .iter()
                    .find(|s| s.step_id == v.step_id)
                    .and_then(|s| s.input_port(&v.port));
                if declared.is_none() {
                    bad(format!("analysis {aid} input {}.{} is not a declared port", v.step_id, v.port));
                }
                if let InputData::Dataset { dataset_id, .. } = &v.value {
                    if !st.datasets.contains_key(dataset_id) {
                        bad(format!("analysis {aid} input references missing dataset {dataset_id}"));
                    }
                }
            }
        }
        for (aid, outputs) in &st.outputs {
            checked += outputs.len();
            let Some(trace) = st.traces.get(aid) else {
                bad(format!("outputs of {aid} have no trace"));
                continue;
            };
            for o in outputs.values() {
                let attributable = trace.events.iter().any(|e| {
                    e.step_id == o.step_id
                        && e.attempt == o.attempt
                        && e.kind == crate::provenance::EventKind::Completed
                });
                if !attributable {
                    bad(format!(
                        "output {}.{} of {aid} is not attributable to a completed attempt",
                        o.step_id, o.port
                    ));
                }
            }
        }
        for (id, (_, a)) in &st.annotations {
            checked += 1;
            if !st.users.contains_key(&a.author) {
                bad(format!("annotation {id} author missing"));
            }
            if !st.annotation_target_exists(&a.target) {
                bad(format!("annotation {id} target missing"));
            }
        }
        for (aid, t) in &st.traces {
            checked += 1 + t.events.len();
            if !st.analyses.contains_key(aid) {
                bad(format!("trace {aid} has no analysis"));
            }
            for (i, e) in t.events.iter().enumerate() {
                if e.seq != i as u64 + 1 {
                    bad(format!("trace {aid} sequence gap at {}", e.seq));
                    break;
                }
            }
            if let Some(close) = &t.closed {
                if t.header.pipeline_snapshot.steps.is_empty() {
                    bad(format!("closed trace {aid} lacks a pipeline snapshot"));
                }
                let has_outputs = st.outputs.get(aid).is_some_and(|o| !o.is_empty());
                let ok = match close.final_status {
                    AnalysisStatus::Completed => has_outputs || t.header.pipeline_snapshot.steps.iter().all(|s| s.output_ports.is_empty()),
                    _ => t.has_error(),
                };
                if !ok {
                    bad(format!("closed trace {aid} has neither outputs nor errors"));
                }
            }
        }
        r.records_checked = checked + st.users.len() + st.algorithms.len();
        r
    }
}

fn join<T: std::fmt::Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

pub(crate) fn active_user(st: &State, id: Id) -> Result<UserRecord> {
    let u = st
        .users
        .get(&id)
        .ok_or_else(|| Error::not_found("user", id))?;
    if !u.active {
        return Err(Error::Permission(format!("user {id} is not active")));
    }
    Ok(u.clone())
}

fn check_steps(steps: &[PipelineStep]) -> Result<()> {
    if steps.is_empty() {
        return Err(Error::Validation("a pipeline needs at least one step".into()));
    }
    validate_steps(steps).map_err(|v| Error::Violations(v.iter().map(|x| x.to_string()).collect()))
}

fn check_algorithms(st: &State, steps: &[PipelineStep]) -> Result<()> {
    for s in steps {
        if !st.algorithms.contains_key(&s.algorithm_id) {
            return Err(Error::Reference(format!(
                "step {} uses unregistered algorithm {}",
                s.step_id, s.algorithm_id
            )));
        }
    }
    Ok(())
}

fn step_rows(pipeline: VersionRef, steps: Vec<PipelineStep>) -> impl Iterator<Item = Row> {
    steps.into_iter().enumerate().map(move |(i, step)| {
        Row::Step(StepRow {
            pipeline,
            position: i as u32,
            step,
        })
    })
}

/// Validates analysis inputs: declared ports, matching kinds, full coverage of
/// unbound ports, existing references, and dataset access for `user`.
pub(crate) fn check_inputs(
    st: &State,
    user: &UserRecord,
    steps: &[PipelineStep],
    inputs: &[InputValue],
) -> Result<()> {
    let mut bound = BTreeSet::new();
    for v in inputs {
        let port = steps
            .iter()
            .find(|s| s.step_id == v.step_id)
            .and_then(|s| s.input_port(&v.port))
            .ok_or_else(|| {
                Error::Validation(format!("{}.{} is not a declared input port", v.step_id, v.port))
            })?;
        if port.source.is_some() {
            return Err(Error::Validation(format!(
                "{}.{} is fed by an upstream step and cannot be bound",
                v.step_id, v.port
            )));
        }
        if port.kind != v.value.port_kind() {
            return Err(Error::Validation(format!(
                "{}.{} expects a {} value, got {}",
                v.step_id,
                v.port,
                port.kind,
                v.value.port_kind()
            )));
        }
        if !bound.insert((v.step_id.as_str(), v.port.as_str())) {
            return Err(Error::Validation(format!("{}.{} bound twice", v.step_id, v.port)));
        }
        match &v.value {
            InputData::Dataset { dataset_id, items } => {
                let d = st
                    .dataset_header(*dataset_id)
                    .ok_or_else(|| Error::not_found("dataset", dataset_id))?;
                if !can_access(user, &d) {
                    return Err(Error::Permission(format!(
                        "user {} may not use dataset {dataset_id}",
                        user.user_id
                    )));
                }
                let members: BTreeSet<&Id> = st.datasets[dataset_id].item_ids.iter().collect();
                if let Some(bad) = items.iter().find(|i| !members.contains(i)) {
                    return Err(Error::Reference(format!("item {bad} is not in dataset {dataset_id}")));
                }
            }
            InputData::File { file } => check_file_input(st, user, file)?,
            InputData::Scalar { .. } => {}
        }
    }
    for s in steps {
        for p in s.unbound_ports() {
            if !bound.contains(&(s.step_id.as_str(), p.name.as_str())) {
                return Err(Error::Validation(format!(
                    "no input value for {}.{} ({})",
                    s.step_id, p.name, p.kind
                )));
            }
        }
    }
    Ok(())
}

/// File inputs must be catalogued: a file of an accessible dataset, or a derived
/// output of an earlier analysis.
fn check_file_input(st: &State, user: &UserRecord, file: &FileRef) -> Result<()> {
    if file.lfn.namespace() == DERIVED_NAMESPACE {
        let known = st
            .outputs
            .values()
            .flat_map(|m| m.values())
            .any(|o| o.file().is_some_and(|f| f.lfn == file.lfn));
        return if known {
            Ok(())
        } else {
            Err(Error::Reference(format!("{} is not a recorded derived output", file.lfn)))
        };
    }
    let dataset_id: Id = file
        .lfn
        .namespace()
        .parse()
        .map_err(|_| Error::Reference(format!("{} is not a catalogued file", file.lfn)))?;
    let d = st
        .dataset_header(dataset_id)
        .ok_or_else(|| Error::Reference(format!("{} is not a catalogued file", file.lfn)))?;
    if !can_access(user, &d) {
        return Err(Error::Permission(format!(
            "user {} may not use dataset {dataset_id}",
            user.user_id
        )));
    }
    let listed = st.datasets[&dataset_id]
        .item_ids
        .iter()
        .filter_map(|i| st.items.get(i))
        .any(|row| row.item.files().any(|f| f.lfn == file.lfn));
    if listed {
        Ok(())
    } else {
        Err(Error::Reference(format!("{} is not a catalogued file", file.lfn)))
    }
}

pub(crate) fn status_row(st: &State, analysis_id: Id, status: AnalysisStatus) -> Result<AnalysisRow> {
    let mut row = st
        .analyses
        .get(&analysis_id)
        .cloned()
        .ok_or_else(|| Error::not_found("analysis", analysis_id))?;
    if !row.status.can_transition_to(status) {
        return Err(Error::State(format!(
            "analysis {analysis_id} cannot move from {} to {status}",
            row.status
        )));
    }
    row.status = status;
    Ok(row)
}

/// Rows for attaching outputs and logs. Derived file references must live under
/// `lfn://derived/<analysis_id>/`.
pub(crate) fn derived_rows(
    st: &State,
    analysis_id: Id,
    outputs: Vec<OutputValue>,
    log_refs: Vec<FileRef>,
) -> Result<Vec<Row>> {
    let mut row = st
        .analyses
        .get(&analysis_id)
        .cloned()
        .ok_or_else(|| Error::not_found("analysis", analysis_id))?;
    let prefix = format!("{analysis_id}/");
    let check = |f: &FileRef| -> Result<()> {
        if f.lfn.namespace() != DERIVED_NAMESPACE || !f.lfn.relative_path().starts_with(&prefix) {
            return Err(Error::Validation(format!(
                "derived file {} must live under lfn://{DERIVED_NAMESPACE}/{prefix}",
                f.lfn
            )));
        }
        Ok(())
    };
    for o in &outputs {
        if let Some(f) = o.file() {
            check(f)?;
        }
    }
    for f in &log_refs {
        check(f)?;
    }
    let mut rows = Vec::new();
    let start = st
        .outputs
        .get(&analysis_id)
        .and_then(|m| m.keys().next_back())
        .map_or(0, |k| k + 1);
    for (i, o) in outputs.into_iter().enumerate() {
        rows.push(Row::Output(OutputRow {
            analysis_id,
            index: start + i as u32,
            value: o,
        }));
    }
    if !log_refs.is_empty() {
        row.log_refs.extend(log_refs);
        rows.push(Row::Analysis(row));
    }
    Ok(rows)
}

/// Derived-file location helpers shared by the execution harness.
pub fn derived_lfn(analysis_id: Id, path: &str) -> Result<Lfn> {
    Lfn::new(DERIVED_NAMESPACE, &format!("{analysis_id}/{path}"))
}

/// Input ports that need a value, for building submissions.
pub fn required_inputs(steps: &[PipelineStep]) -> BTreeMap<(String, String), PortKind> {
    steps
        .iter()
        .flat_map(|s| {
            s.unbound_ports()
                .map(move |p| ((s.step_id.clone(), p.name.clone()), p.kind))
        })
        .collect()
}
