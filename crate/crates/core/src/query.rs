//! Cohort filtering over indexed data items and the provenance question templates.
//!
//! Filters are conjunctions of `attribute op literal` predicates, written on the wire
//! as `subject_sex=M&subject_age>50&assessment_count>=2`. Literals are auto-typed.
//! A predicate on an absent attribute is false. Comparing a numeric literal with a
//! text-valued attribute (or the reverse) is a validation error whenever some item
//! in scope carries that attribute with the other type.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ident::{Id, Timestamp};
use crate::lfn::Lfn;
use crate::model::{
    can_access, AnalysisStatus, AttrValue, DataItemRecord, FileRef, InputValue, OutputValue,
    PipelineRecord, VersionRef,
};
use crate::persistency::AnalysisBase;
use crate::provenance::StepOutcome;
use crate::store::{AttrKey, State};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Comparator {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl Comparator {
    pub fn symbol(self) -> &'static str {
        match self {
            Comparator::Eq => "=",
            Comparator::Ne => "!=",
            Comparator::Lt => "<",
            Comparator::Le => "<=",
            Comparator::Gt => ">",
            Comparator::Ge => ">=",
        }
    }

    fn holds(self, ord: Ordering) -> bool {
        match self {
            Comparator::Eq => ord == Ordering::Equal,
            Comparator::Ne => ord != Ordering::Equal,
            Comparator::Lt => ord == Ordering::Less,
            Comparator::Le => ord != Ordering::Greater,
            Comparator::Gt => ord == Ordering::Greater,
            Comparator::Ge => ord != Ordering::Less,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predicate {
    pub attribute: String,
    pub op: Comparator,
    pub literal: AttrValue,
}

impl Predicate {
    pub fn new(attribute: &str, op: Comparator, literal: AttrValue) -> Self {
        Predicate {
            attribute: attribute.to_owned(),
            op,
            literal,
        }
    }

    /// `None` when the types clash.
    pub fn test(&self, attrs: &BTreeMap<String, AttrValue>) -> Option<bool> {
        let Some(v) = attrs.get(&self.attribute) else {
            return Some(false);
        };
        let ord = match (v, &self.literal) {
            (AttrValue::Text(a), AttrValue::Text(b)) => a.cmp(b),
            (a, b) if is_numeric(a) && is_numeric(b) => {
                let (x, y) = (a.as_f64()?, b.as_f64()?);
                x.partial_cmp(&y)?
            }
            _ => return None,
        };
        Some(self.op.holds(ord))
    }
}

fn is_numeric(v: &AttrValue) -> bool {
    !matches!(v, AttrValue::Text(_))
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}{}", self.attribute, self.op.symbol(), self.literal)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterExpr {
    pub predicates: Vec<Predicate>,
}

impl FilterExpr {
    pub fn all() -> Self {
        FilterExpr::default()
    }

    pub fn and(mut self, p: Predicate) -> Self {
        self.predicates.push(p);
        self
    }

    pub fn matches(&self, item: &DataItemRecord) -> Option<bool> {
        let mut all = true;
        for p in &self.predicates {
            all &= p.test(&item.attributes)?;
        }
        Some(all)
    }
}

impl fmt::Display for FilterExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.predicates.iter().map(|p| p.to_string()).collect();
        f.write_str(&parts.join("&"))
    }
}

const OPERATORS: [(&str, Comparator); 9] = [
    ("!=", Comparator::Ne),
    ("<=", Comparator::Le),
    (">=", Comparator::Ge),
    ("≠", Comparator::Ne),
    ("≤", Comparator::Le),
    ("≥", Comparator::Ge),
    ("=", Comparator::Eq),
    ("<", Comparator::Lt),
    (">", Comparator::Gt),
];

impl FromStr for FilterExpr {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut f = FilterExpr::all();
        if s.trim().is_empty() {
            return Ok(f);
        }
        for clause in s.split('&') {
            let clause = clause.trim();
            let pos = clause
                .char_indices()
                .find(|(_, c)| matches!(c, '!' | '<' | '>' | '=' | '≠' | '≤' | '≥'))
                .map(|(i, _)| i)
                .ok_or_else(|| Error::Validation(format!("predicate {clause:?} has no comparator")))?;
            let rest = &clause[pos..];
            let (sym, op) = OPERATORS
                .iter()
                .find(|(sym, _)| rest.starts_with(sym))
                .ok_or_else(|| Error::Validation(format!("bad comparator in {clause:?}")))?;
            let name = clause[..pos].trim();
            let value = rest[sym.len()..].trim();
            if name.is_empty() {
                return Err(Error::Validation(format!("predicate {clause:?} has no attribute")));
            }
            if value.is_empty() {
                return Err(Error::Validation(format!("predicate {clause:?} has no value")));
            }
            if value.starts_with(['!', '<', '>', '=', '≠', '≤', '≥']) {
                return Err(Error::Validation(format!("bad comparator in {clause:?}")));
            }
            f.predicates.push(Predicate::new(name, *op, AttrValue::auto_typed(value)));
        }
        Ok(f)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineQuery {
    pub name_contains: Option<String>,
    pub uses_algorithm: Option<Id>,
    pub author: Option<Id>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Execution {
    pub executor: Id,
    pub analysis_id: Id,
    pub version: u32,
    pub submitted_at: Timestamp,
    pub status: AnalysisStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Authorship {
    pub pipeline_id: Id,
    pub author: Id,
    pub executions: Vec<Execution>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputLineage {
    pub analysis_id: Id,
    pub pipeline: VersionRef,
    pub input_values: Vec<InputValue>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepTiming {
    pub step_id: String,
    pub attempts: u32,
    pub started_at: Option<Timestamp>,
    pub ended_at: Option<Timestamp>,
    /// Sum over all attempts.
    pub busy_ms: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionTimes {
    pub analysis_id: Id,
    pub submitted_at: Timestamp,
    pub finished_at: Option<Timestamp>,
    pub steps: Vec<StepTiming>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepCorrectness {
    pub step_id: String,
    pub attempts: u32,
    pub outcome: StepOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectnessRow {
    pub analysis_id: Id,
    pub executor: Id,
    pub status: AnalysisStatus,
    pub steps: Vec<StepCorrectness>,
    pub produced: Vec<FileRef>,
}

/// Ids of datasets `caller` may read.
fn accessible(st: &State, caller: Id) -> Result<BTreeSet<Id>> {
    let user = st
        .users
        .get(&caller)
        .ok_or_else(|| Error::not_found("user", caller))?;
    Ok(st
        .datasets
        .keys()
        .filter(|id| st.dataset_header(**id).is_some_and(|d| can_access(user, &d)))
        .copied()
        .collect())
}

impl AnalysisBase {
    /// Items of accessible datasets (optionally one dataset) satisfying `filter`,
    /// ordered by (dataset_id, item_id). Equality predicates narrow the candidates
    /// through the attribute index.
    pub fn query_data_items(
        &self,
        caller: Id,
        scope: Option<Id>,
        filter: &FilterExpr,
    ) -> Result<Vec<(Id, DataItemRecord)>> {
        let st = self.store().read();
        let mut datasets = accessible(&st, caller)?;
        if let Some(d) = scope {
            if !st.datasets.contains_key(&d) {
                return Err(Error::not_found("dataset", d));
            }
            datasets.retain(|x| *x == d);
        }
        let live: BTreeSet<Id> = datasets
            .iter()
            .flat_map(|d| st.datasets[d].item_ids.iter().copied())
            .collect();
        let in_scope = |id: &Id| live.contains(id);

        for p in &filter.predicates {
            let clash = st.attr_index.keys_of(&p.attribute).any(|(key, ids)| {
                let numeric = matches!(key, AttrKey::Num(_));
                numeric != is_numeric(&p.literal) && ids.iter().any(in_scope)
            });
            if clash {
                return Err(Error::Validation(format!(
                    "predicate {p} compares a {} literal with a differently typed attribute",
                    p.literal.type_name()
                )));
            }
        }

        let mut candidates: Option<BTreeSet<Id>> = None;
        for p in filter.predicates.iter().filter(|p| p.op == Comparator::Eq) {
            let hit = st
                .attr_index
                .lookup(&p.attribute, &AttrKey::of(&p.literal))
                .cloned()
                .unwrap_or_default();
            candidates = Some(match candidates {
                Some(c) => c.intersection(&hit).copied().collect(),
                None => hit,
            });
        }

        let mut out = Vec::new();
        let mut keep = |dataset_id: Id, item: &DataItemRecord| -> Result<()> {
            match filter.matches(item) {
                Some(true) => out.push((dataset_id, item.clone())),
                Some(false) => {}
                None => {
                    return Err(Error::Validation(format!("filter {filter} mistyped for item {}", item.item_id)))
                }
            }
            Ok(())
        };
        match candidates {
            Some(ids) => {
                for id in ids.iter().filter(|i| in_scope(i)) {
                    let row = &st.items[id];
                    keep(row.dataset_id, &row.item)?;
                }
            }
            None => {
                for d in &datasets {
                    for id in &st.datasets[d].item_ids {
                        if let Some(row) = st.items.get(id) {
                            keep(*d, &row.item)?;
                        }
                    }
                }
            }
        }
        out.sort_by_key(|(d, i)| (*d, i.item_id));
        Ok(out)
    }

    pub fn query_pipelines(&self, q: &PipelineQuery) -> Vec<PipelineRecord> {
        let st = self.store().read();
        st.pipelines
            .values()
            .filter(|p| q.name_contains.as_ref().map_or(true, |n| p.name.contains(n.as_str())))
            .filter(|p| q.author.map_or(true, |a| p.author == a))
            .filter(|p| {
                q.uses_algorithm.map_or(true, |alg| {
                    p.versions.iter().any(|v| {
                        st.steps_of(VersionRef {
                            pipeline_id: p.pipeline_id,
                            version: v.version,
                        })
                        .iter()
                        .any(|s| s.algorithm_id == alg)
                    })
                })
            })
            .cloned()
            .collect()
    }

    /// Who authored and executed a workflow: one row per analysis of any version.
    pub fn who_authored_and_executed(&self, pipeline_id: Id) -> Result<Authorship> {
        let st = self.store().read();
        let p = st
            .pipelines
            .get(&pipeline_id)
            .ok_or_else(|| Error::not_found("pipeline", pipeline_id))?;
        let mut executions: Vec<Execution> = st
            .analyses
            .values()
            .filter(|a| a.pipeline.pipeline_id == pipeline_id)
            .map(|a| Execution {
                executor: a.user,
                analysis_id: a.analysis_id,
                version: a.pipeline.version,
                submitted_at: a.submitted_at,
                status: a.status,
            })
            .collect();
        executions.sort_by_key(|e| (e.submitted_at, e.analysis_id));
        Ok(Authorship {
            pipeline_id,
            author: p.author,
            executions,
        })
    }

    /// At what time: submission, completion and per-step timings of an analysis.
    pub fn execution_times(&self, analysis_id: Id) -> Result<ExecutionTimes> {
        let g = self.reconstruct(analysis_id)?;
        let steps = g
            .steps
            .iter()
            .map(|s| StepTiming {
                step_id: s.step_id.clone(),
                attempts: s.attempts.len() as u32,
                started_at: s.attempts.iter().find_map(|a| a.started_at),
                ended_at: s.attempts.iter().rev().find_map(|a| a.ended_at),
                busy_ms: s.attempts.iter().filter_map(|a| a.duration_ms).sum(),
            })
            .collect();
        Ok(ExecutionTimes {
            analysis_id,
            submitted_at: g.submitted_at,
            finished_at: g.closed_at,
            steps,
        })
    }

    pub fn outputs_of(&self, analysis_id: Id) -> Result<Vec<OutputValue>> {
        Ok(self.analysis(analysis_id)?.outputs)
    }

    /// The analysis that produced the file named `lfn`, with its full inputs.
    pub fn inputs_for_output(&self, lfn: &Lfn) -> Result<OutputLineage> {
        let st = self.store().read();
        for (aid, outs) in &st.outputs {
            if outs.values().any(|o| o.file().is_some_and(|f| &f.lfn == lfn)) {
                let a = st.analysis(*aid).ok_or_else(|| Error::not_found("analysis", aid))?;
                return Ok(OutputLineage {
                    analysis_id: *aid,
                    pipeline: a.pipeline,
                    input_values: a.input_values,
                });
            }
        }
        Err(Error::not_found("output", lfn))
    }

    /// Whether each analysis of a pipeline version ran correctly and what it produced.
    pub fn execution_correctness(&self, pipeline_id: Id, version: u32) -> Result<Vec<CorrectnessRow>> {
        let vref = VersionRef { pipeline_id, version };
        let ids: Vec<(Timestamp, Id)> = {
            let st = self.store().read();
            if !st.version_exists(vref) {
                return Err(Error::not_found("pipeline version", vref));
            }
            let mut v: Vec<(Timestamp, Id)> = st
                .analyses
                .values()
                .filter(|a| a.pipeline == vref)
                .map(|a| (a.submitted_at, a.analysis_id))
                .collect();
            v.sort();
            v
        };
        let mut rows = Vec::new();
        for (_, aid) in ids {
            let a = self.analysis(aid)?;
            let steps = match self.reconstruct(aid) {
                Ok(g) => g
                    .steps
                    .iter()
                    .map(|s| StepCorrectness {
                        step_id: s.step_id.clone(),
                        attempts: s.attempts.len() as u32,
                        outcome: s.outcome,
                    })
                    .collect(),
                Err(_) => Vec::new(),
            };
            rows.push(CorrectnessRow {
                analysis_id: aid,
                executor: a.user,
                status: a.status,
                steps,
                produced: a.outputs.iter().filter_map(|o| o.file().cloned()).collect(),
            });
        }
        Ok(rows)
    }
}
