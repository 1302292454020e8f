//! Command-line front end. Every subcommand opens the store named by the
//! configuration, runs one operation and prints either a short human summary or,
//! with `--format machine`, the same JSON document the HTTP API returns.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use analysis_base::crawler::{crawl_dataset, diff_descriptors, parse_metadata, serialize_metadata};
use analysis_base::model::AnalysisStatus;
use analysis_base::synth::generate_cohort;
use analysis_base::{AnalysisBase, Clock, Error, ErrorClass, Id, SystemClock};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::config::Config;
use crate::http;
use crate::ops::{
    parse_id, ActiveFlag, AnalysisRequest, Gateway, ImportOptions, ItemQuery, NewAlgorithm,
    NewUser, PipelineSearch, PipelineSubmission, TemplateParams,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_ANALYSIS_FAILED: i32 = 2;
pub const EXIT_PERMISSION: i32 = 3;
pub const EXIT_NOT_FOUND: i32 = 4;
pub const EXIT_STATE: i32 = 5;

pub fn exit_code(e: &Error) -> i32 {
    match e.class() {
        ErrorClass::Validation => EXIT_VALIDATION,
        ErrorClass::Permission => EXIT_PERMISSION,
        ErrorClass::NotFound => EXIT_NOT_FOUND,
        ErrorClass::State => EXIT_STATE,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Human,
    Machine,
}

#[derive(Debug, Parser)]
#[command(name = "abase", version, about = "Catalog, provenance and query services for indexed datasets")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, env = "ABASE_CONFIG")]
    pub config: Option<PathBuf>,
    /// Store directory (overrides the configuration).
    #[arg(long, global = true, env = "ABASE_STORE")]
    pub store: Option<PathBuf>,
    /// Storage URL prefix (overrides the configuration).
    #[arg(long, global = true)]
    pub storage_url: Option<String>,
    /// Acting user id.
    #[arg(long, global = true, env = "ABASE_CALLER")]
    pub caller: Option<String>,
    #[arg(long, global = true, value_enum, default_value = "human")]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Crawl a dataset tree and write its metadata XML.
    Crawl {
        root: PathBuf,
        /// Dataset name; defaults to the folder name.
        #[arg(long)]
        name: Option<String>,
        /// Write the XML here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Previous metadata XML of the same dataset; reports what changed since.
        #[arg(long)]
        seed_manifest: Option<PathBuf>,
    },
    /// Index a metadata XML file into the catalog.
    Index {
        metadata: PathBuf,
        /// private, public or shared:<id>,<id>
        #[arg(long, default_value = "private")]
        visibility: String,
        #[arg(long)]
        replace: bool,
        #[arg(long)]
        source: Option<String>,
    },
    RegisterUser {
        #[arg(long)]
        name: String,
        #[arg(long, default_value = "")]
        organisation: String,
        /// neuroscientist, data_provider or admin
        #[arg(long)]
        role: String,
    },
    SetUserActive {
        user: String,
        #[arg(long, action = clap::ArgAction::Set)]
        active: bool,
    },
    RegisterAlgorithm {
        #[arg(long)]
        name: String,
        #[arg(long)]
        toolkit: String,
        #[arg(long)]
        lfn: String,
    },
    /// Register a pipeline from a definition file.
    RegisterPipeline {
        definition: PathBuf,
        #[arg(long, default_value = "")]
        description: String,
    },
    /// Append a version to a pipeline from a definition file.
    UpdatePipeline {
        #[arg(long)]
        pipeline: String,
        definition: PathBuf,
        #[arg(long, default_value = "")]
        description: String,
    },
    /// Submit an analysis and run it on a simulated resource pool.
    RunAnalysis {
        /// <pipeline_id>@<version>
        #[arg(long)]
        pipeline: String,
        /// <step>.<port>=<value>; repeatable
        #[arg(long = "input")]
        inputs: Vec<String>,
        #[arg(long)]
        resources: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        failure_rate: Option<f64>,
    },
    /// Query data items (default), pipelines or provenance templates.
    Query(QueryArgs),
    Analysis {
        #[command(subcommand)]
        command: AnalysisCommand,
    },
    Dataset {
        #[command(subcommand)]
        command: DatasetCommand,
    },
    Provenance {
        #[command(subcommand)]
        command: ProvenanceCommand,
    },
    /// Check the store for referential integrity; exit 5 when unhealthy.
    Audit,
    /// Run the HTTP API until interrupted.
    Serve {
        #[arg(long)]
        listen: Option<String>,
    },
    /// Generate synthetic data.
    Synth {
        #[command(subcommand)]
        command: SynthCommand,
    },
}

#[derive(Debug, Args)]
#[command(args_conflicts_with_subcommands = true)]
pub struct QueryArgs {
    #[arg(long)]
    pub filter: Option<String>,
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long)]
    pub offset: Option<usize>,
    #[command(subcommand)]
    pub command: Option<QueryCommand>,
}

#[derive(Debug, Subcommand)]
pub enum QueryCommand {
    Pipelines {
        #[arg(long)]
        name: Option<String>,
        /// Algorithm id or name.
        #[arg(long)]
        algorithm: Option<String>,
        #[arg(long)]
        author: Option<String>,
    },
    /// authorship, outputs, inputs-for-output, correctness or execution-times
    Provenance {
        template: String,
        #[arg(long)]
        pipeline: Option<String>,
        #[arg(long)]
        version: Option<u32>,
        #[arg(long)]
        analysis: Option<String>,
        #[arg(long)]
        lfn: Option<String>,
    },
}

#[derive(Debug, Subcommand)]
pub enum AnalysisCommand {
    Show { analysis: String },
}

#[derive(Debug, Subcommand)]
pub enum DatasetCommand {
    Show { dataset: String },
}

#[derive(Debug, Subcommand)]
pub enum ProvenanceCommand {
    Show { analysis: String },
}

#[derive(Debug, Subcommand)]
pub enum SynthCommand {
    /// Write a subject cohort under PARENT/NAME and print its ground truth.
    Cohort {
        parent: PathBuf,
        #[arg(long, default_value = "cohort")]
        name: String,
        #[arg(long, default_value_t = 200)]
        subjects: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

struct Ctx {
    format: Format,
    caller: Option<Id>,
    out: Box<dyn Write>,
}

impl Ctx {
    fn emit<T: Serialize>(&mut self, value: &T, human: impl FnOnce(&T) -> String) -> Result<(), Error> {
        let text = match self.format {
            Format::Machine => serde_json::to_string_pretty(value).expect("serializable"),
            Format::Human => human(value),
        };
        writeln!(self.out, "{text}").map_err(|e| Error::io("<stdout>", e))
    }
}

fn read(path: &Path) -> Result<Vec<u8>, Error> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String, Error> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn resolve_config(cli: &Cli) -> Result<Config, Error> {
    let mut config = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(s) = &cli.store {
        config.store_root = s.clone();
    }
    if let Some(u) = &cli.storage_url {
        config.storage_url_prefix = Some(u.clone());
    }
    Ok(config)
}

fn open_gateway(config: &Config) -> Result<Gateway, Error> {
    let urls = config.prepare()?;
    let base = AnalysisBase::open(&config.store_root, urls)?;
    for w in base.store().recovery_warnings() {
        log::warn!("{w}");
    }
    Ok(Gateway::new(base, config.default_seed))
}

/// Parses `args` (including the program name) and runs the command, writing to
/// `out`. Returns the process exit code.
pub fn run<I, T>(args: I, out: Box<dyn Write>) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli, out) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn execute(cli: Cli, out: Box<dyn Write>) -> Result<i32, Error> {
    let config = resolve_config(&cli)?;
    init_logging(&config.log_level);
    let caller = cli.caller.as_deref().map(parse_id).transpose()?;
    let mut ctx = Ctx {
        format: cli.format,
        caller,
        out,
    };
    match cli.command {
        Command::Crawl {
            root,
            name,
            out,
            seed_manifest,
        } => crawl(&mut ctx, &root, name, out, seed_manifest),
        Command::Synth {
            command:
                SynthCommand::Cohort {
                    parent,
                    name,
                    subjects,
                    seed,
                },
        } => {
            let truth = generate_cohort(&parent, &name, subjects, seed)?;
            let body = json!({
                "root": truth.root,
                "subjects": truth.subjects.len(),
                "reference_cohort": truth.reference_cohort(),
            });
            ctx.emit(&body, |_| {
                format!(
                    "wrote {} subjects to {} ({} in the reference cohort)",
                    truth.subjects.len(),
                    truth.root.display(),
                    truth.reference_cohort().len()
                )
            })?;
            Ok(EXIT_OK)
        }
        Command::Serve { listen } => {
            let listen = listen.unwrap_or_else(|| config.listen.clone());
            serve(config, &listen)
        }
        other => {
            let gw = open_gateway(&config)?;
            with_store(&mut ctx, &gw, other)
        }
    }
}

fn crawl(
    ctx: &mut Ctx,
    root: &Path,
    name: Option<String>,
    out: Option<PathBuf>,
    seed_manifest: Option<PathBuf>,
) -> Result<i32, Error> {
    let name = name.unwrap_or_else(|| {
        root.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".to_owned())
    });
    let now = SystemClock.now();
    let descriptor = crawl_dataset(root, &name, now)?;
    let xml = serialize_metadata(&descriptor);
    let changes = match seed_manifest {
        Some(p) => {
            let old = parse_metadata(&read(&p)?)
                .map_err(|vs| Error::Violations(vs.iter().map(ToString::to_string).collect()))?;
            Some(diff_descriptors(&old, &descriptor)?)
        }
        None => None,
    };
    let summary = json!({
        "dataset": descriptor.dataset_name,
        "items": descriptor.items.len(),
        "warnings": descriptor.warnings.iter().chain(descriptor.items.iter().flat_map(|i| i.warnings.iter())).collect::<Vec<_>>(),
        "changes": changes,
        "metadata": out,
    });
    match &out {
        Some(path) => {
            fs::write(path, &xml).map_err(|e| Error::io(path, e))?;
            ctx.emit(&summary, |s| {
                let mut text = format!(
                    "crawled {} items of {} into {}",
                    s["items"],
                    descriptor.dataset_name,
                    path.display()
                );
                if let Some(c) = &changes {
                    text.push_str(&format!(
                        "\nadded {}, removed {}, modified {}",
                        c.added.len(),
                        c.removed.len(),
                        c.modified.len()
                    ));
                }
                text
            })?;
        }
        None => {
            ctx.out.write_all(&xml).map_err(|e| Error::io("<stdout>", e))?;
            eprintln!("{}", serde_json::to_string(&summary).expect("serializable"));
        }
    }
    Ok(EXIT_OK)
}

fn with_store(ctx: &mut Ctx, gw: &Gateway, command: Command) -> Result<i32, Error> {
    let caller = ctx.caller;
    match command {
        Command::Index {
            metadata,
            visibility,
            replace,
            source,
        } => {
            let opts = ImportOptions {
                visibility: Some(visibility),
                replace,
                source,
            };
            let d = gw.import_dataset(caller, &read(&metadata)?, &opts)?;
            ctx.emit(&d, |d| format!("indexed dataset {} ({} items) as {}", d.name, d.items.len(), d.dataset_id))?;
        }
        Command::RegisterUser {
            name,
            organisation,
            role,
        } => {
            let u = gw.register_user(
                caller,
                &NewUser {
                    name,
                    organisation,
                    role,
                },
            )?;
            ctx.emit(&u, |u| format!("registered user {} as {}", u.name, u.user_id))?;
        }
        Command::SetUserActive { user, active } => {
            let u = gw.set_user_active(caller, parse_id(&user)?, &ActiveFlag { active })?;
            ctx.emit(&u, |u| format!("user {} active: {}", u.user_id, u.active))?;
        }
        Command::RegisterAlgorithm { name, toolkit, lfn } => {
            let a = gw.register_algorithm(
                caller,
                &NewAlgorithm {
                    name,
                    toolkit,
                    executable_lfn: lfn,
                },
            )?;
            ctx.emit(&a, |a| format!("registered algorithm {} as {}", a.name, a.algorithm_id))?;
        }
        Command::RegisterPipeline {
            definition,
            description,
        } => {
            let req = PipelineSubmission {
                definition: read_text(&definition)?,
                description,
            };
            let p = gw.register_pipeline(caller, &req)?;
            ctx.emit(&p, |p| {
                format!("registered pipeline {} as {}@{}", p.pipeline.name, p.pipeline.pipeline_id, p.version)
            })?;
        }
        Command::UpdatePipeline {
            pipeline,
            definition,
            description,
        } => {
            let req = PipelineSubmission {
                definition: read_text(&definition)?,
                description,
            };
            let p = gw.update_pipeline(caller, parse_id(&pipeline)?, &req)?;
            ctx.emit(&p, |p| format!("pipeline {} is now at version {}", p.pipeline.pipeline_id, p.version))?;
        }
        Command::RunAnalysis {
            pipeline,
            inputs,
            resources,
            seed,
            failure_rate,
        } => {
            let req = AnalysisRequest {
                pipeline,
                inputs,
                resources,
                seed,
                failure_rate,
            };
            let a = gw.run_analysis(caller, &req)?;
            ctx.emit(&a, |a| {
                let mut text = format!("analysis {} {}", a.analysis_id, a.status);
                for o in &a.outputs {
                    if let Some(f) = o.file() {
                        text.push_str(&format!("\n  {}.{}  {}", o.step_id, o.port, f.lfn));
                    }
                }
                text
            })?;
            if a.status != AnalysisStatus::Completed {
                return Ok(EXIT_ANALYSIS_FAILED);
            }
        }
        Command::Query(q) => match q.command {
            None => {
                let query = ItemQuery {
                    filter: q.filter,
                    dataset: q.dataset,
                    limit: q.limit,
                    offset: q.offset,
                };
                let hits = gw.query_items(caller, &query)?;
                ctx.emit(&hits, |hits| {
                    let mut text = format!("{:<32}  {:<32}  {:<16}  attributes", "dataset", "item", "folder");
                    for h in hits {
                        let attrs: Vec<String> =
                            h.item.attributes.iter().map(|(k, v)| format!("{k}={v}")).collect();
                        text.push_str(&format!(
                            "\n{}  {}  {:<16}  {}",
                            h.dataset_id,
                            h.item.item_id,
                            h.item.source_subfolder,
                            attrs.join(" ")
                        ));
                    }
                    text.push_str(&format!("\n{} items", hits.len()));
                    text
                })?;
            }
            Some(QueryCommand::Pipelines {
                name,
                algorithm,
                author,
            }) => {
                let ps = gw.query_pipelines(&PipelineSearch {
                    name,
                    algorithm,
                    author,
                })?;
                ctx.emit(&ps, |ps| {
                    ps.iter()
                        .map(|p| {
                            let vs: Vec<String> = p.versions.iter().map(|v| v.version.to_string()).collect();
                            format!("{}  {}  versions {}", p.pipeline_id, p.name, vs.join(","))
                        })
                        .collect::<Vec<_>>()
                        .join("\n")
                })?;
            }
            Some(QueryCommand::Provenance {
                template,
                pipeline,
                version,
                analysis,
                lfn,
            }) => {
                let v = gw.provenance_template(
                    &template,
                    &TemplateParams {
                        pipeline,
                        version,
                        analysis,
                        lfn,
                    },
                )?;
                ctx.emit(&v, |v| serde_json::to_string_pretty(v).expect("serializable"))?;
            }
        },
        Command::Analysis {
            command: AnalysisCommand::Show { analysis },
        } => {
            let a = gw.analysis(parse_id(&analysis)?)?;
            ctx.emit(&a, |a| serde_json::to_string_pretty(a).expect("serializable"))?;
        }
        Command::Dataset {
            command: DatasetCommand::Show { dataset },
        } => {
            let d = gw.dataset(caller, parse_id(&dataset)?)?;
            ctx.emit(&d, |d| serde_json::to_string_pretty(d).expect("serializable"))?;
        }
        Command::Provenance {
            command: ProvenanceCommand::Show { analysis },
        } => {
            let g = gw.provenance(parse_id(&analysis)?)?;
            ctx.emit(&g, |g| g.render_text())?;
        }
        Command::Audit => {
            let report = gw.audit();
            ctx.emit(&report, |r| {
                let mut text = format!("{} records checked, {} violations", r.records_checked, r.violations.len());
                for v in &r.violations {
                    text.push_str("\n  ");
                    text.push_str(v);
                }
                text
            })?;
            if !report.is_healthy() {
                return Ok(EXIT_STATE);
            }
        }
        Command::Crawl { .. } | Command::Serve { .. } | Command::Synth { .. } => {
            unreachable!("handled without a store")
        }
    }
    Ok(EXIT_OK)
}

fn init_logging(level: &str) {
    let _ = env_logger::Builder::new()
        .parse_filters(level)
        .parse_default_env()
        .target(env_logger::Target::Stderr)
        .try_init();
}

fn serve(config: Config, listen: &str) -> Result<i32, Error> {
    let gw = Arc::new(open_gateway(&config)?);
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Error::State(format!("cannot start runtime: {e}")))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(listen)
            .await
            .map_err(|e| Error::State(format!("cannot listen on {listen}: {e}")))?;
        let addr = listener
            .local_addr()
            .map_err(|e| Error::State(format!("cannot read bound address: {e}")))?;
        println!("listening on {addr}");
        log::info!("serving {} on {addr}", config.store_root.display());
        http::serve(listener, gw, shutdown_signal()).await
    })?;
    Ok(EXIT_OK)
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
    log::info!("shutting down");
}
