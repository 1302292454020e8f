//! The operations both front ends expose. Each takes the caller id (when the
//! operation needs one) and a request value, and returns a serializable response;
//! the HTTP body and the CLI's machine output are exactly these values.

use std::fs;
use std::str::FromStr;

use analysis_base::crawler::parse_metadata;
use analysis_base::harness::{parse_pipeline, resource_pool, DEFAULT_FAILURE_RATE};
use analysis_base::model::{
    AlgorithmRecord, AnalysisRecord, AttrValue, DataItemRecord, DatasetRecord, FileRef, InputData, InputValue,
    PipelineRecord, Role, UserRecord, VersionRef, Visibility,
};
use analysis_base::persistency::AuditReport;
use analysis_base::provenance::ProvenanceGraph;
use analysis_base::query::{FilterExpr, PipelineQuery};
use analysis_base::{AnalysisBase, Error, Id, Lfn, Result, StorageUrls};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub const DEFAULT_RESOURCES: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewUser {
    pub name: String,
    #[serde(default)]
    pub organisation: String,
    pub role: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveFlag {
    pub active: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ImportOptions {
    /// `private`, `public` or `shared:<id>,<id>...`
    #[serde(default)]
    pub visibility: Option<String>,
    #[serde(default)]
    pub replace: bool,
    #[serde(default)]
    pub source: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewAlgorithm {
    pub name: String,
    pub toolkit: String,
    pub executable_lfn: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSubmission {
    /// Pipeline definition text.
    pub definition: String,
    #[serde(default)]
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegisteredPipeline {
    pub pipeline: PipelineRecord,
    pub version: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisRequest {
    /// `<pipeline_id>@<version>`
    pub pipeline: String,
    /// `<step>.<port>=<value>` bindings, see [`parse_binding`].
    #[serde(default)]
    pub inputs: Vec<String>,
    #[serde(default)]
    pub resources: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub failure_rate: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ItemQuery {
    #[serde(default)]
    pub filter: Option<String>,
    #[serde(default)]
    pub dataset: Option<String>,
    #[serde(default)]
    pub limit: Option<usize>,
    #[serde(default)]
    pub offset: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemHit {
    pub dataset_id: Id,
    pub item: DataItemRecord,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineSearch {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub algorithm: Option<String>,
    #[serde(default)]
    pub author: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TemplateParams {
    #[serde(default)]
    pub pipeline: Option<String>,
    #[serde(default)]
    pub version: Option<u32>,
    #[serde(default)]
    pub analysis: Option<String>,
    #[serde(default)]
    pub lfn: Option<String>,
}

/// The provenance question templates, by wire name.
pub const TEMPLATES: &[&str] = &[
    "authorship",
    "outputs",
    "inputs-for-output",
    "correctness",
    "execution-times",
];

pub struct Gateway {
    base: AnalysisBase,
    default_seed: u64,
}

pub fn parse_id(s: &str) -> Result<Id> {
    Id::from_str(s.trim())
}

fn require(caller: Option<Id>) -> Result<Id> {
    caller.ok_or_else(|| Error::Permission("this operation needs a caller id".into()))
}

pub fn parse_version_ref(s: &str) -> Result<VersionRef> {
    let (id, v) = s
        .split_once('@')
        .ok_or_else(|| Error::Validation(format!("pipeline reference {s:?} is not <id>@<version>")))?;
    let version = v
        .parse()
        .map_err(|_| Error::Validation(format!("bad version {v:?}")))?;
    Ok(VersionRef {
        pipeline_id: parse_id(id)?,
        version,
    })
}

pub fn parse_visibility(s: &str) -> Result<Visibility> {
    match s.trim() {
        "" | "private" => Ok(Visibility::Private),
        "public" => Ok(Visibility::Public),
        other => match other.strip_prefix("shared:") {
            Some(list) => list
                .split(',')
                .filter(|x| !x.trim().is_empty())
                .map(parse_id)
                .collect::<Result<_>>()
                .map(Visibility::Shared),
            None => Err(Error::Validation(format!(
                "visibility {other:?} is not private, public or shared:<ids>"
            ))),
        },
    }
}

impl Gateway {
    pub fn new(base: AnalysisBase, default_seed: u64) -> Gateway {
        Gateway { base, default_seed }
    }

    pub fn base(&self) -> &AnalysisBase {
        &self.base
    }

    fn urls(&self) -> &StorageUrls {
        self.base.urls()
    }

    /// The first user may register without a caller; afterwards only active admins can.
    pub fn register_user(&self, caller: Option<Id>, req: &NewUser) -> Result<UserRecord> {
        if !self.base.users().is_empty() {
            self.require_admin(caller)?;
        }
        let role = Role::from_str(&req.role)?;
        self.base.register_user(&req.name, &req.organisation, role)
    }

    pub fn set_user_active(&self, caller: Option<Id>, user: Id, flag: &ActiveFlag) -> Result<UserRecord> {
        self.require_admin(caller)?;
        self.base.set_user_active(user, flag.active)
    }

    fn require_admin(&self, caller: Option<Id>) -> Result<()> {
        let id = require(caller)?;
        let u = self
            .base
            .user(id)
            .map_err(|_| Error::Permission(format!("caller {id} is not a registered user")))?;
        if !u.active || u.role != Role::Admin {
            return Err(Error::Permission(format!("caller {id} is not an active admin")));
        }
        Ok(())
    }

    pub fn import_dataset(&self, caller: Option<Id>, xml: &[u8], opts: &ImportOptions) -> Result<DatasetRecord> {
        let caller = require(caller)?;
        let descriptor = parse_metadata(xml)
            .map_err(|vs| Error::Violations(vs.iter().map(ToString::to_string).collect()))?;
        let visibility = parse_visibility(opts.visibility.as_deref().unwrap_or("private"))?;
        let source = opts.source.clone().unwrap_or_else(|| descriptor.root_path.clone());
        self.base
            .index_dataset(caller, &descriptor, visibility, &source, opts.replace)
    }

    pub fn dataset(&self, caller: Option<Id>, id: Id) -> Result<DatasetRecord> {
        self.base.dataset_for(require(caller)?, id)
    }

    pub fn register_algorithm(&self, caller: Option<Id>, req: &NewAlgorithm) -> Result<AlgorithmRecord> {
        let lfn: Lfn = req.executable_lfn.parse()?;
        self.base
            .register_algorithm(require(caller)?, &req.name, &req.toolkit, lfn)
    }

    /// Stores the definition text under `pipelines/<folder>/v<N>.pipe` when storage is
    /// local, and returns the LFN naming it.
    fn definition_lfn(&self, folder: &str, version: u32, text: &str) -> Result<Lfn> {
        let rel = format!("{folder}/v{version}.pipe");
        if let Ok(root) = StorageUrls::local_path(self.urls().prefix()) {
            let path = root.join("pipelines").join(&rel);
            if let Some(dir) = path.parent() {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        Lfn::new("pipelines", &rel)
    }

    fn parse_definition(&self, text: &str) -> Result<analysis_base::harness::PipelineDefinition> {
        parse_pipeline(text, &self.base.algorithm_registry())
            .map_err(|vs| Error::Violations(vs.iter().map(ToString::to_string).collect()))
    }

    pub fn register_pipeline(&self, caller: Option<Id>, req: &PipelineSubmission) -> Result<RegisteredPipeline> {
        let caller = require(caller)?;
        let def = self.parse_definition(&req.definition)?;
        let same = self.base.pipelines().iter().filter(|p| p.name == def.name).count();
        let folder = match same {
            0 => def.name.clone(),
            n => format!("{}-{}", def.name, n + 1),
        };
        let lfn = self.definition_lfn(&folder, 1, &req.definition)?;
        let (pipeline, version) =
            self.base
                .register_pipeline(caller, &def.name, lfn, &req.description, def.pipeline_steps())?;
        Ok(RegisteredPipeline { pipeline, version })
    }

    pub fn update_pipeline(&self, caller: Option<Id>, pipeline_id: Id, req: &PipelineSubmission) -> Result<RegisteredPipeline> {
        let caller = require(caller)?;
        let current = self.base.pipeline(pipeline_id)?;
        let def = self.parse_definition(&req.definition)?;
        if def.name != current.name {
            return Err(Error::Validation(format!(
                "definition names pipeline {:?}, not {:?}",
                def.name, current.name
            )));
        }
        let next = current.versions.iter().map(|v| v.version).max().unwrap_or(0) + 1;
        let folder = current
            .versions
            .first()
            .and_then(|v| v.lfn.relative_path().rsplit_once('/').map(|(d, _)| d.to_owned()))
            .unwrap_or_else(|| current.name.clone());
        let lfn = self.definition_lfn(&folder, next, &req.definition)?;
        let v = self
            .base
            .update_pipeline(caller, pipeline_id, lfn, &req.description, def.pipeline_steps())?;
        Ok(RegisteredPipeline {
            pipeline: self.base.pipeline(pipeline_id)?,
            version: v.version,
        })
    }

    /// Finds a catalogued file by LFN: dataset files first, then recorded outputs.
    fn file_by_lfn(&self, lfn: &str) -> Result<FileRef> {
        for d in self.base.datasets() {
            if let Some(f) = d.items.iter().flat_map(|i| i.files()).find(|f| f.lfn.as_str() == lfn) {
                return Ok(f.clone());
            }
        }
        for a in self.base.analyses() {
            let produced = a.outputs.iter().filter_map(|o| o.file()).chain(a.log_refs.iter());
            if let Some(f) = produced.into_iter().find(|f| f.lfn.as_str() == lfn) {
                return Ok(f.clone());
            }
        }
        Err(Error::not_found("file", lfn))
    }

    /// `<step>.<port>=<value>` where value is `dataset:<id>`, `dataset:<id>:<item>,...`,
    /// `file:<lfn>`, `scalar:<v>` or a bare scalar (auto-typed).
    pub fn parse_binding(&self, binding: &str) -> Result<InputValue> {
        let (target, value) = binding
            .split_once('=')
            .ok_or_else(|| Error::Validation(format!("input {binding:?} is not <step>.<port>=<value>")))?;
        let (step, port) = target
            .trim()
            .split_once('.')
            .ok_or_else(|| Error::Validation(format!("input target {target:?} is not <step>.<port>")))?;
        let value = value.trim();
        let data = if let Some(rest) = value.strip_prefix("dataset:") {
            let (id, items) = match rest.split_once(':') {
                Some((id, list)) => (
                    id,
                    list.split(',')
                        .filter(|s| !s.trim().is_empty())
                        .map(parse_id)
                        .collect::<Result<Vec<_>>>()?,
                ),
                None => (rest, Vec::new()),
            };
            InputData::Dataset {
                dataset_id: parse_id(id)?,
                items,
            }
        } else if let Some(lfn) = value.strip_prefix("file:") {
            InputData::File {
                file: self.file_by_lfn(lfn)?,
            }
        } else {
            let raw = value.strip_prefix("scalar:").unwrap_or(value);
            InputData::Scalar {
                value: AttrValue::auto_typed(raw),
            }
        };
        Ok(InputValue {
            step_id: step.to_owned(),
            port: port.to_owned(),
            value: data,
        })
    }

    /// Submits and runs an analysis on a simulated resource pool; returns the final
    /// record whether the run completed or failed.
    pub fn run_analysis(&self, caller: Option<Id>, req: &AnalysisRequest) -> Result<AnalysisRecord> {
        let caller = require(caller)?;
        let pipeline = parse_version_ref(&req.pipeline)?;
        let inputs = req
            .inputs
            .iter()
            .map(|b| self.parse_binding(b))
            .collect::<Result<Vec<_>>>()?;
        let steps = self.base.steps(pipeline)?;
        let rate = req.failure_rate.unwrap_or(DEFAULT_FAILURE_RATE);
        if !(0.0..=1.0).contains(&rate) {
            return Err(Error::Validation(format!("failure rate {rate} outside [0, 1]")));
        }
        let pool = resource_pool(
            req.resources.unwrap_or(DEFAULT_RESOURCES),
            req.seed.unwrap_or(self.default_seed),
            &steps,
            rate,
        );
        let id = self.base.submit_analysis(caller, pipeline, inputs, &pool)?;
        self.base.analysis(id)
    }

    pub fn analysis(&self, id: Id) -> Result<AnalysisRecord> {
        self.base.analysis(id)
    }

    pub fn provenance(&self, id: Id) -> Result<ProvenanceGraph> {
        self.base.reconstruct(id)
    }

    pub fn query_items(&self, caller: Option<Id>, q: &ItemQuery) -> Result<Vec<ItemHit>> {
        let caller = require(caller)?;
        let filter: FilterExpr = q.filter.as_deref().unwrap_or("").parse()?;
        let scope = q.dataset.as_deref().map(parse_id).transpose()?;
        let rows = self.base.query_data_items(caller, scope, &filter)?;
        Ok(rows
            .into_iter()
            .skip(q.offset.unwrap_or(0))
            .take(q.limit.unwrap_or(usize::MAX))
            .map(|(dataset_id, item)| ItemHit { dataset_id, item })
            .collect())
    }

    pub fn query_pipelines(&self, q: &PipelineSearch) -> Result<Vec<PipelineRecord>> {
        let query = PipelineQuery {
            name_contains: q.name.clone().filter(|n| !n.is_empty()),
            uses_algorithm: match q.algorithm.as_deref() {
                None => None,
                Some(a) => Some(match parse_id(a) {
                    Ok(id) => id,
                    Err(_) => self
                        .base
                        .algorithm_by_name(a)
                        .ok_or_else(|| Error::not_found("algorithm", a))?
                        .algorithm_id,
                }),
            },
            author: q.author.as_deref().map(parse_id).transpose()?,
        };
        Ok(self.base.query_pipelines(&query))
    }

    pub fn provenance_template(&self, template: &str, p: &TemplateParams) -> Result<Value> {
        let need = |v: &Option<String>, what: &str| -> Result<Id> {
            let raw = v
                .as_deref()
                .ok_or_else(|| Error::Validation(format!("template {template} needs `{what}`")))?;
            parse_id(raw)
        };
        let value = match template {
            "authorship" => json!(self.base.who_authored_and_executed(need(&p.pipeline, "pipeline")?)?),
            "outputs" => json!(self.base.outputs_of(need(&p.analysis, "analysis")?)?),
            "inputs-for-output" => {
                let raw = p
                    .lfn
                    .as_deref()
                    .ok_or_else(|| Error::Validation("template inputs-for-output needs `lfn`".into()))?;
                json!(self.base.inputs_for_output(&raw.parse()?)?)
            }
            "correctness" => {
                let pid = need(&p.pipeline, "pipeline")?;
                let version = p
                    .version
                    .ok_or_else(|| Error::Validation("template correctness needs `version`".into()))?;
                json!(self.base.execution_correctness(pid, version)?)
            }
            "execution-times" => json!(self.base.execution_times(need(&p.analysis, "analysis")?)?),
            other => {
                return Err(Error::not_found("template", format!("{other} (known: {})", TEMPLATES.join(", "))))
            }
        };
        Ok(value)
    }

    pub fn audit(&self) -> AuditReport {
        self.base.audit()
    }
}
