//! Line-oriented pipeline definitions:
//!
//! ```text
//! # comment
//! pipeline cohort-summary
//! step count uses line-count in src=dataset out counts
//! step stamp uses checksum-stamp after count in data=count.counts out stamped
//! ```
//!
//! A binding is either a port kind (`file`, `dataset`, `scalar`), meaning the value is
//! supplied when the analysis is submitted, or `<step>.<port>`, reading an upstream
//! output file. Lists are comma separated.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::ident::Id;
use crate::model::{validate_steps, InputPort, PipelineStep, PortKind, PortRef};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DefinedStep {
    /// 1-based line of the `step` statement.
    pub line: usize,
    pub algorithm: String,
    pub step: PipelineStep,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PipelineDefinition {
    pub name: String,
    pub steps: Vec<DefinedStep>,
}

impl PipelineDefinition {
    pub fn pipeline_steps(&self) -> Vec<PipelineStep> {
        self.steps.iter().map(|s| s.step.clone()).collect()
    }

    /// Canonical text form; parses back to an equal definition (modulo line numbers).
    pub fn to_text(&self) -> String {
        let mut out = format!("pipeline {}\n", self.name);
        for s in &self.steps {
            out.push_str(&step_line(&s.step, &s.algorithm));
            out.push('\n');
        }
        out
    }
}

pub fn step_line(step: &PipelineStep, algorithm: &str) -> String {
    let mut line = format!("step {} uses {algorithm}", step.step_id);
    if !step.depends_on.is_empty() {
        line.push_str(" after ");
        line.push_str(&step.depends_on.iter().cloned().collect::<Vec<_>>().join(","));
    }
    if !step.input_ports.is_empty() {
        let bindings: Vec<String> = step
            .input_ports
            .iter()
            .map(|p| match &p.source {
                Some(src) => format!("{}={}.{}", p.name, src.step_id, src.port),
                None => format!("{}={}", p.name, p.kind),
            })
            .collect();
        line.push_str(" in ");
        line.push_str(&bindings.join(","));
    }
    if !step.output_ports.is_empty() {
        line.push_str(" out ");
        line.push_str(&step.output_ports.join(","));
    }
    line
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct DefinitionViolation {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for DefinitionViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

fn is_ident(s: &str) -> bool {
    !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

fn split_list(s: &str) -> Vec<String> {
    s.split(',')
        .map(str::trim)
        .map(str::to_owned)
        .collect()
}

const KEYWORDS: [&str; 3] = ["after", "in", "out"];

/// Parses a definition, resolving algorithm names through `registry`.
pub fn parse_pipeline(
    text: &str,
    registry: &BTreeMap<String, Id>,
) -> Result<PipelineDefinition, Vec<DefinitionViolation>> {
    let mut violations = Vec::new();
    let mut name: Option<String> = None;
    let mut steps: Vec<DefinedStep> = Vec::new();
    let mut last_line = 1;

    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        last_line = lineno;
        let mut bad = |message: String| {
            violations.push(DefinitionViolation { line: lineno, message })
        };
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens[0] {
            "pipeline" => {
                if name.is_some() {
                    bad("second pipeline statement".into());
                } else if !steps.is_empty() {
                    bad("pipeline statement must come before the steps".into());
                } else if tokens.len() != 2 || !is_ident(tokens[1]) {
                    bad("expected `pipeline <name>`".into());
                } else {
                    name = Some(tokens[1].to_owned());
                }
            }
            "step" => match parse_step(&tokens, registry) {
                Ok((algorithm, mut step)) => {
                    step.step_order = steps.len() as u32 + 1;
                    steps.push(DefinedStep {
                        line: lineno,
                        algorithm,
                        step,
                    });
                }
                Err(msgs) => {
                    for m in msgs {
                        bad(m);
                    }
                }
            },
            other => bad(format!("unknown statement {other:?}")),
        }
    }

    if name.is_none() {
        violations.push(DefinitionViolation {
            line: 1,
            message: "missing `pipeline <name>` statement".into(),
        });
    }
    if steps.is_empty() && violations.is_empty() {
        violations.push(DefinitionViolation {
            line: last_line,
            message: "pipeline has no steps".into(),
        });
    }
    if violations.is_empty() {
        let list: Vec<PipelineStep> = steps.iter().map(|s| s.step.clone()).collect();
        if let Err(vs) = validate_steps(&list) {
            let line_of: BTreeMap<&str, usize> = steps
                .iter()
                .rev()
                .map(|s| (s.step.step_id.as_str(), s.line))
                .collect();
            for v in vs {
                violations.push(DefinitionViolation {
                    line: line_of.get(v.step_id.as_str()).copied().unwrap_or(1),
                    message: v.to_string(),
                });
            }
        }
    }
    if violations.is_empty() {
        Ok(PipelineDefinition {
            name: name.expect("checked above"),
            steps,
        })
    } else {
        violations.sort();
        violations.dedup();
        Err(violations)
    }
}

fn parse_step(
    tokens: &[&str],
    registry: &BTreeMap<String, Id>,
) -> Result<(String, PipelineStep), Vec<String>> {
    let mut errs = Vec::new();
    if tokens.len() < 4 || tokens[2] != "uses" {
        return Err(vec!["expected `step <id> uses <algorithm> ...`".into()]);
    }
    let step_id = tokens[1];
    if !is_ident(step_id) {
        errs.push(format!("bad step id {step_id:?}"));
    }
    let algorithm = tokens[3];
    let algorithm_id = registry.get(algorithm).copied();
    if algorithm_id.is_none() {
        errs.push(format!("unregistered algorithm {algorithm:?}"));
    }

    let mut clauses: BTreeMap<&str, String> = BTreeMap::new();
    let mut current: Option<&str> = None;
    for &t in &tokens[4..] {
        if KEYWORDS.contains(&t) {
            if clauses.contains_key(t) {
                errs.push(format!("repeated `{t}` clause"));
            }
            clauses.insert(t, String::new());
            current = Some(t);
        } else if let Some(k) = current {
            clauses.get_mut(k).expect("inserted").push_str(t);
        } else {
            errs.push(format!("unexpected {t:?} after algorithm name"));
        }
    }

    let mut depends_on = BTreeSet::new();
    if let Some(list) = clauses.get("after") {
        for d in split_list(list) {
            if !is_ident(&d) {
                errs.push(format!("bad dependency {d:?}"));
            } else {
                depends_on.insert(d);
            }
        }
    }
    let mut input_ports = Vec::new();
    if let Some(list) = clauses.get("in") {
        for b in split_list(list) {
            let Some((port, binding)) = b.split_once('=') else {
                errs.push(format!("binding {b:?} is not port=binding"));
                continue;
            };
            if !is_ident(port) {
                errs.push(format!("bad port name {port:?}"));
                continue;
            }
            let parsed = match binding {
                "file" => Some((PortKind::File, None)),
                "dataset" => Some((PortKind::Dataset, None)),
                "scalar" => Some((PortKind::Scalar, None)),
                other => other
                    .split_once('.')
                    .filter(|(s, p)| is_ident(s) && is_ident(p))
                    .map(|(s, p)| {
                        (
                            PortKind::File,
                            Some(PortRef {
                                step_id: s.to_owned(),
                                port: p.to_owned(),
                            }),
                        )
                    }),
            };
            match parsed {
                Some((kind, source)) => input_ports.push(InputPort {
                    name: port.to_owned(),
                    kind,
                    source,
                }),
                None => errs.push(format!(
                    "binding {binding:?} is neither file, dataset, scalar nor <step>.<port>"
                )),
            }
        }
    }
    let mut output_ports = Vec::new();
    if let Some(list) = clauses.get("out") {
        for o in split_list(list) {
            if !is_ident(&o) {
                errs.push(format!("bad output port {o:?}"));
            } else {
                output_ports.push(o);
            }
        }
    }
    if output_ports.is_empty() && errs.is_empty() {
        errs.push(format!("step {step_id} declares no outputs"));
    }
    if !errs.is_empty() {
        return Err(errs);
    }
    Ok((
        algorithm.to_owned(),
        PipelineStep {
            step_id: step_id.to_owned(),
            algorithm_id: algorithm_id.expect("checked above"),
            step_order: 0,
            depends_on,
            input_ports,
            output_ports,
        },
    ))
}
