//! Catalog entities: users, pipelines and their versioned steps, algorithms,
//! datasets, analyses and annotations. Pure values; nothing here touches storage.
//!
//! The catalog holds *specifications* only. Execution attempts live exclusively in
//! [`crate::provenance`] traces.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::ident::{Id, Timestamp};
use crate::lfn::Lfn;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Neuroscientist,
    DataProvider,
    Admin,
}

impl std::str::FromStr for Role {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "neuroscientist" => Ok(Role::Neuroscientist),
            "data_provider" | "data-provider" => Ok(Role::DataProvider),
            "admin" => Ok(Role::Admin),
            other => Err(crate::Error::Validation(format!("unknown role {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserRecord {
    pub user_id: Id,
    pub name: String,
    pub organisation: String,
    pub role: Role,
    pub active: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineVersion {
    pub version: u32,
    pub lfn: Lfn,
    pub created_at: Timestamp,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineRecord {
    pub pipeline_id: Id,
    pub name: String,
    pub author: Id,
    pub versions: Vec<PipelineVersion>,
}

impl PipelineRecord {
    pub fn version(&self, v: u32) -> Option<&PipelineVersion> {
        self.versions.iter().find(|pv| pv.version == v)
    }

    pub fn latest(&self) -> Option<&PipelineVersion> {
        self.versions.last()
    }
}

/// Pins one version of one pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VersionRef {
    pub pipeline_id: Id,
    pub version: u32,
}

impl fmt::Display for VersionRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.pipeline_id, self.version)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlgorithmRecord {
    pub algorithm_id: Id,
    pub name: String,
    pub toolkit: String,
    pub executable_lfn: Lfn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PortKind {
    File,
    Dataset,
    Scalar,
}

impl fmt::Display for PortKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PortKind::File => "file",
            PortKind::Dataset => "dataset",
            PortKind::Scalar => "scalar",
        })
    }
}

/// An output port of an upstream step.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PortRef {
    pub step_id: String,
    pub port: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputPort {
    pub name: String,
    pub kind: PortKind,
    /// Upstream producer; `None` means the port is bound by an analysis input value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<PortRef>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineStep {
    pub step_id: String,
    pub algorithm_id: Id,
    pub step_order: u32,
    pub depends_on: BTreeSet<String>,
    pub input_ports: Vec<InputPort>,
    pub output_ports: Vec<String>,
}

impl PipelineStep {
    pub fn input_port(&self, name: &str) -> Option<&InputPort> {
        self.input_ports.iter().find(|p| p.name == name)
    }

    /// Ports that must be bound by the analysis rather than by an upstream step.
    pub fn unbound_ports(&self) -> impl Iterator<Item = &InputPort> {
        self.input_ports.iter().filter(|p| p.source.is_none())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FileKind {
    Image,
    Data,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRef {
    pub lfn: Lfn,
    pub filename: String,
    pub location: String,
    pub kind: FileKind,
    pub size_bytes: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checksum: Option<String>,
}

/// Typed attribute or scalar value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value")]
pub enum AttrValue {
    #[serde(rename = "string")]
    Text(String),
    #[serde(rename = "int")]
    Integer(i64),
    #[serde(rename = "decimal")]
    Decimal(f64),
}

impl AttrValue {
    /// Integer, then decimal, else text.
    pub fn auto_typed(raw: &str) -> Self {
        if let Ok(i) = raw.parse::<i64>() {
            AttrValue::Integer(i)
        } else if let Some(d) = raw.parse::<f64>().ok().filter(|d| d.is_finite()) {
            AttrValue::Decimal(d)
        } else {
            AttrValue::Text(raw.to_owned())
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            AttrValue::Integer(i) => Some(*i as f64),
            AttrValue::Decimal(d) => Some(*d),
            AttrValue::Text(_) => None,
        }
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            AttrValue::Text(_) => "string",
            AttrValue::Integer(_) => "int",
            AttrValue::Decimal(_) => "decimal",
        }
    }
}

impl fmt::Display for AttrValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttrValue::Text(s) => f.write_str(s),
            AttrValue::Integer(i) => write!(f, "{i}"),
            AttrValue::Decimal(d) => write!(f, "{d:?}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "users")]
pub enum Visibility {
    Private,
    Public,
    Shared(BTreeSet<Id>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataItemRecord {
    pub item_id: Id,
    pub source_subfolder: String,
    pub image_files: Vec<FileRef>,
    pub data_files: Vec<FileRef>,
    pub attributes: BTreeMap<String, AttrValue>,
}

impl DataItemRecord {
    pub fn files(&self) -> impl Iterator<Item = &FileRef> {
        self.image_files.iter().chain(self.data_files.iter())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub dataset_id: Id,
    pub name: String,
    pub owner: Id,
    pub visibility: Visibility,
    pub items: Vec<DataItemRecord>,
    pub indexed_at: Timestamp,
    pub source_metadata_ref: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnalysisStatus {
    Submitted,
    Running,
    Completed,
    Failed,
}

impl AnalysisStatus {
    /// submitted → running → {completed, failed}. A submitted analysis may also fail
    /// outright when it is rejected before execution starts.
    pub fn can_transition_to(self, next: AnalysisStatus) -> bool {
        use AnalysisStatus::*;
        matches!(
            (self, next),
            (Submitted, Running) | (Submitted, Failed) | (Running, Completed) | (Running, Failed)
        )
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, AnalysisStatus::Completed | AnalysisStatus::Failed)
    }
}

impl fmt::Display for AnalysisStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AnalysisStatus::Submitted => "submitted",
            AnalysisStatus::Running => "running",
            AnalysisStatus::Completed => "completed",
            AnalysisStatus::Failed => "failed",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InputData {
    File { file: FileRef },
    /// Selected items of a dataset; an empty selection means every item.
    Dataset { dataset_id: Id, items: Vec<Id> },
    Scalar { value: AttrValue },
}

impl InputData {
    pub fn port_kind(&self) -> PortKind {
        match self {
            InputData::File { .. } => PortKind::File,
            InputData::Dataset { .. } => PortKind::Dataset,
            InputData::Scalar { .. } => PortKind::Scalar,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputValue {
    pub step_id: String,
    pub port: String,
    pub value: InputData,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OutputData {
    File { file: FileRef },
    Scalar { value: AttrValue },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputValue {
    pub step_id: String,
    pub port: String,
    pub value: OutputData,
    pub produced_at: Timestamp,
    /// The execution attempt that produced the value.
    pub attempt: u32,
}

impl OutputValue {
    pub fn file(&self) -> Option<&FileRef> {
        match &self.value {
            OutputData::File { file } => Some(file),
            OutputData::Scalar { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisRecord {
    pub analysis_id: Id,
    pub user: Id,
    pub pipeline: VersionRef,
    pub submitted_at: Timestamp,
    pub status: AnalysisStatus,
    pub input_values: Vec<InputValue>,
    pub outputs: Vec<OutputValue>,
    pub log_refs: Vec<FileRef>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "ref")]
pub enum AnnotationTarget {
    Analysis(Id),
    PipelineVersion(VersionRef),
    Dataset(Id),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub annotation_id: Id,
    pub author: Id,
    pub target: AnnotationTarget,
    pub text: String,
    pub created_at: Timestamp,
}

/// Public datasets are open to everyone; otherwise only the owner and the explicit
/// share list. The admin role grants nothing extra.
pub fn can_access(user: &UserRecord, dataset: &DatasetRecord) -> bool {
    match &dataset.visibility {
        Visibility::Public => true,
        _ if dataset.owner == user.user_id => true,
        Visibility::Shared(users) => users.contains(&user.user_id),
        Visibility::Private => false,
    }
}

pub fn next_version(pipeline: &PipelineRecord) -> u32 {
    pipeline
        .versions
        .iter()
        .map(|v| v.version)
        .max()
        .map_or(1, |m| m + 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StepRule {
    DuplicateId,
    UnknownDependency,
    Cycle,
    Order,
    Port,
}

impl fmt::Display for StepRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StepRule::DuplicateId => "duplicate step id",
            StepRule::UnknownDependency => "unknown dependency",
            StepRule::Cycle => "cycle",
            StepRule::Order => "step order",
            StepRule::Port => "port",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct StepViolation {
    pub step_id: String,
    pub rule: StepRule,
    pub detail: String,
}

impl fmt::Display for StepViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.detail.is_empty() {
            write!(f, "{}: {}", self.rule, self.step_id)
        } else {
            write!(f, "{}: {}", self.rule, self.detail)
        }
    }
}

/// Checks a step list for unique ids, resolvable dependencies, acyclicity,
/// topologically consistent `step_order`, and well-formed port bindings.
///
/// Each strongly connected component with more than one step (or a self-loop) is
/// reported once as `cycle: <sorted step ids>`; order checks skip edges inside such
/// components.
pub fn validate_steps(steps: &[PipelineStep]) -> Result<(), Vec<StepViolation>> {
    let mut violations = Vec::new();
    let mut index: HashMap<&str, usize> = HashMap::new();
    for (i, s) in steps.iter().enumerate() {
        if index.insert(s.step_id.as_str(), i).is_some() {
            violations.push(StepViolation {
                step_id: s.step_id.clone(),
                rule: StepRule::DuplicateId,
                detail: format!("duplicate step id {}", s.step_id),
            });
        }
    }

    // adjacency: dependency -> dependent, resolved edges only
    let mut edges: Vec<Vec<usize>> = vec![Vec::new(); steps.len()];
    for (i, s) in steps.iter().enumerate() {
        for dep in &s.depends_on {
            match index.get(dep.as_str()) {
                Some(&d) => edges[d].push(i),
                None => violations.push(StepViolation {
                    step_id: s.step_id.clone(),
                    rule: StepRule::UnknownDependency,
                    detail: format!("{} depends on unknown step {dep}", s.step_id),
                }),
            }
        }
    }

    let component = strongly_connected(&edges);
    let mut comp_members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (v, &c) in component.iter().enumerate() {
        comp_members.entry(c).or_default().push(v);
    }
    let mut cyclic = vec![false; steps.len()];
    for members in comp_members.values() {
        let self_loop = members.len() == 1 && edges[members[0]].contains(&members[0]);
        if members.len() > 1 || self_loop {
            let mut ids: Vec<&str> = members.iter().map(|&m| steps[m].step_id.as_str()).collect();
            ids.sort_unstable();
            ids.dedup();
            for &m in members {
                cyclic[m] = true;
            }
            violations.push(StepViolation {
                step_id: ids[0].to_owned(),
                rule: StepRule::Cycle,
                detail: ids.join(","),
            });
        }
    }

    for (i, s) in steps.iter().enumerate() {
        for dep in &s.depends_on {
            let Some(&d) = index.get(dep.as_str()) else { continue };
            if cyclic[i] && component[i] == component[d] {
                continue;
            }
            if steps[d].step_order >= s.step_order {
                violations.push(StepViolation {
                    step_id: s.step_id.clone(),
                    rule: StepRule::Order,
                    detail: format!(
                        "{} (order {}) must come after {dep} (order {})",
                        s.step_id, s.step_order, steps[d].step_order
                    ),
                });
            }
        }
        check_ports(s, steps, &index, &mut violations);
    }

    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

fn check_ports(
    s: &PipelineStep,
    steps: &[PipelineStep],
    index: &HashMap<&str, usize>,
    out: &mut Vec<StepViolation>,
) {
    let mut port = |detail: String| {
        out.push(StepViolation {
            step_id: s.step_id.clone(),
            rule: StepRule::Port,
            detail,
        })
    };
    let mut seen = BTreeSet::new();
    for p in &s.input_ports {
        if !seen.insert(p.name.as_str()) {
            port(format!("{} declares input port {} twice", s.step_id, p.name));
        }
        let Some(src) = &p.source else { continue };
        if p.kind != PortKind::File {
            port(format!(
                "{}.{} is bound to an upstream output but has kind {}",
                s.step_id, p.name, p.kind
            ));
        }
        if !s.depends_on.contains(&src.step_id) {
            port(format!(
                "{}.{} reads {}.{} without depending on {}",
                s.step_id, p.name, src.step_id, src.port, src.step_id
            ));
        } else if let Some(&d) = index.get(src.step_id.as_str()) {
            if !steps[d].output_ports.contains(&src.port) {
                port(format!(
                    "{}.{} reads undeclared output {}.{}",
                    s.step_id, p.name, src.step_id, src.port
                ));
            }
        }
    }
    let mut outs = BTreeSet::new();
    for o in &s.output_ports {
        if !outs.insert(o.as_str()) {
            port(format!("{} declares output port {o} twice", s.step_id));
        }
    }
}

/// Tarjan's algorithm, iterative. Returns a component number per vertex.
fn strongly_connected(edges: &[Vec<usize>]) -> Vec<usize> {
    const UNSEEN: usize = usize::MAX;
    let n = edges.len();
    let mut index = vec![UNSEEN; n];
    let mut low = vec![0; n];
    let mut on_stack = vec![false; n];
    let mut stack = Vec::new();
    let mut comp = vec![UNSEEN; n];
    let mut next_index = 0;
    let mut next_comp = 0;

    for root in 0..n {
        if index[root] != UNSEEN {
            continue;
        }
        let mut call: Vec<(usize, usize)> = vec![(root, 0)];
        index[root] = next_index;
        low[root] = next_index;
        next_index += 1;
        stack.push(root);
        on_stack[root] = true;

        while let Some(&mut (v, ref mut child)) = call.last_mut() {
            if *child < edges[v].len() {
                let w = edges[v][*child];
                *child += 1;
                if index[w] == UNSEEN {
                    index[w] = next_index;
                    low[w] = next_index;
                    next_index += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    call.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
            } else {
                call.pop();
                if let Some(&(parent, _)) = call.last() {
                    low[parent] = low[parent].min(low[v]);
                }
                if low[v] == index[v] {
                    while let Some(w) = stack.pop() {
                        on_stack[w] = false;
                        comp[w] = next_comp;
                        if w == v {
                            break;
                        }
                    }
                    next_comp += 1;
                }
            }
        }
    }
    comp
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn step(id: &str, order: u32, deps: &[&str]) -> PipelineStep {
        PipelineStep {
            step_id: id.into(),
            algorithm_id: Id::from_u128(1),
            step_order: order,
            depends_on: deps.iter().map(|d| d.to_string()).collect(),
            input_ports: vec![],
            output_ports: vec!["out".into()],
        }
    }

    fn user(id: u128) -> UserRecord {
        UserRecord {
            user_id: Id::from_u128(id),
            name: format!("u{id}"),
            organisation: "org".into(),
            role: Role::Neuroscientist,
            active: true,
        }
    }

    fn dataset(owner: u128, visibility: Visibility) -> DatasetRecord {
        DatasetRecord {
            dataset_id: Id::from_u128(100),
            name: "ds".into(),
            owner: Id::from_u128(owner),
            visibility,
            items: vec![],
            indexed_at: Timestamp::from_millis(0),
            source_metadata_ref: "meta.xml".into(),
        }
    }

    #[test]
    fn access_truth_table() {
        let u1 = user(1);
        let u2 = user(2);
        let shared_u2: BTreeSet<Id> = [u2.user_id].into();
        // (user, owner, visibility, expected)
        let table = [
            (&u1, 1, Visibility::Private, true),
            (&u1, 1, Visibility::Public, true),
            (&u1, 1, Visibility::Shared(BTreeSet::new()), true),
            (&u2, 1, Visibility::Private, false),
            (&u2, 1, Visibility::Public, true),
            (&u2, 1, Visibility::Shared(BTreeSet::new()), false),
            (&u2, 1, Visibility::Shared(shared_u2.clone()), true),
            (&u1, 2, Visibility::Shared(shared_u2.clone()), false),
        ];
        for (u, owner, vis, expected) in table {
            let d = dataset(owner, vis.clone());
            assert_eq!(can_access(u, &d), expected, "{:?} {owner} {vis:?}", u.user_id);
        }
    }

    #[test]
    fn admin_gets_no_bypass() {
        let mut admin = user(3);
        admin.role = Role::Admin;
        assert!(!can_access(&admin, &dataset(1, Visibility::Private)));
    }

    #[test]
    fn next_version_successor() {
        let mut p = PipelineRecord {
            pipeline_id: Id::from_u128(1),
            name: "p".into(),
            author: Id::from_u128(2),
            versions: vec![],
        };
        assert_eq!(next_version(&p), 1);
        for v in 1..=2 {
            p.versions.push(PipelineVersion {
                version: v,
                lfn: "lfn://pipelines/p.def".parse().unwrap(),
                created_at: Timestamp::from_millis(0),
                description: String::new(),
            });
        }
        assert_eq!(next_version(&p), 3);
    }

    #[test]
    fn linear_chain_is_valid() {
        let steps = [step("A", 0, &[]), step("B", 1, &["A"]), step("C", 2, &["B"])];
        assert_eq!(validate_steps(&steps), Ok(()));
    }

    #[test]
    fn two_cycle_reported_once() {
        let steps = [step("A", 0, &["B"]), step("B", 1, &["A"])];
        let v = validate_steps(&steps).unwrap_err();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].to_string(), "cycle: A,B");
    }

    #[test]
    fn self_loop_is_a_cycle() {
        let v = validate_steps(&[step("A", 0, &["A"])]).unwrap_err();
        assert_eq!(v[0].rule, StepRule::Cycle);
    }

    #[test]
    fn duplicate_unknown_and_order() {
        let steps = [
            step("A", 1, &[]),
            step("A", 2, &[]),
            step("B", 0, &["A"]),
            step("C", 3, &["Z"]),
        ];
        let rules: BTreeSet<StepRule> = validate_steps(&steps)
            .unwrap_err()
            .into_iter()
            .map(|v| v.rule)
            .collect();
        assert!(rules.contains(&StepRule::DuplicateId));
        assert!(rules.contains(&StepRule::UnknownDependency));
        assert!(rules.contains(&StepRule::Order));
    }

    #[test]
    fn port_binding_must_follow_dependency() {
        let mut b = step("B", 1, &[]);
        b.input_ports.push(InputPort {
            name: "in".into(),
            kind: PortKind::File,
            source: Some(PortRef {
                step_id: "A".into(),
                port: "out".into(),
            }),
        });
        let v = validate_steps(&[step("A", 0, &[]), b.clone()]).unwrap_err();
        assert_eq!(v[0].rule, StepRule::Port);

        b.depends_on.insert("A".into());
        assert_eq!(validate_steps(&[step("A", 0, &[]), b.clone()]), Ok(()));

        b.input_ports[0].source.as_mut().unwrap().port = "nope".into();
        assert!(validate_steps(&[step("A", 0, &[]), b]).is_err());
    }

    #[test]
    fn status_transitions() {
        use AnalysisStatus::*;
        assert!(Submitted.can_transition_to(Running));
        assert!(Running.can_transition_to(Completed));
        assert!(Running.can_transition_to(Failed));
        assert!(!Completed.can_transition_to(Running));
        assert!(!Failed.can_transition_to(Completed));
        assert!(!Submitted.can_transition_to(Completed));
    }

    #[test]
    fn auto_typing() {
        assert_eq!(AttrValue::auto_typed("50"), AttrValue::Integer(50));
        assert_eq!(AttrValue::auto_typed("2.5"), AttrValue::Decimal(2.5));
        assert_eq!(AttrValue::auto_typed("M"), AttrValue::Text("M".into()));
        assert_eq!(AttrValue::auto_typed("NaN"), AttrValue::Text("NaN".into()));
    }
}
