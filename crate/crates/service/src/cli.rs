//! Command-line interface over the same store the server uses.

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use fairplai_core::config::TrainingConfig;
use fairplai_core::dataset::SchemaFile;
use fairplai_core::frontier::{export_csv, GridSpec};
use fairplai_core::policy::{
    audit_contract, construct_tuple, filter_feasible, issue_contract, render_tuple, select_model, IntentLexicon,
    PromptParser, TupleDefaults,
};
use fairplai_core::store::Store;

use crate::api::{router, AppState};
use crate::jobs::{run_build, JobSpec};

#[derive(Debug, Parser)]
#[command(name = "fairplai", version, about = "Fair and private model selection")]
pub struct Cli {
    /// Artifact store root.
    #[arg(long, env = "FAIRPLAI_STORE", default_value = "fairplai-store", global = true)]
    pub store: PathBuf,
    /// Training configuration JSON; built-in defaults otherwise.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ReportFormat {
    Csv,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate and store a CSV dataset.
    Ingest {
        csv: PathBuf,
        #[arg(long)]
        schema: PathBuf,
    },
    /// Build and store a frontier.
    Frontier {
        #[arg(long)]
        dataset: String,
        /// Grid JSON; the default grid otherwise.
        #[arg(long)]
        grid: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Parse a prompt into a policy tuple and explain it.
    Translate {
        #[arg(long)]
        prompt: String,
        /// Audited attributes, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "sex")]
        attributes: Vec<String>,
    },
    /// Filter a frontier by a prompt, select a point and issue a contract.
    Select {
        #[arg(long)]
        frontier: String,
        #[arg(long)]
        prompt: String,
        /// Pick this feasible point instead of the policy's choice.
        #[arg(long)]
        choose: Option<String>,
    },
    /// Re-derive a contract from stored artifacts.
    Audit {
        #[arg(long)]
        contract: String,
    },
    /// Export a stored frontier.
    Report {
        #[arg(long)]
        frontier: String,
        #[arg(long, value_enum, default_value_t = ReportFormat::Csv)]
        format: ReportFormat,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long, env = "FAIRPLAI_PORT", default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Concurrent frontier jobs; 0 means one per logical core.
        #[arg(long, default_value_t = 0)]
        max_jobs: usize,
    },
}

fn training_config(path: Option<&PathBuf>) -> Result<TrainingConfig> {
    match path {
        Some(p) => TrainingConfig::read(p).with_context(|| format!("reading config {}", p.display())),
        None => Ok(TrainingConfig::default()),
    }
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

/// Run one command; returns the process exit code.
pub async fn run(cli: Cli) -> Result<i32> {
    let store = Store::open(&cli.store).with_context(|| format!("opening store {}", cli.store.display()))?;
    let config = training_config(cli.config.as_ref())?;
    let lexicon = IntentLexicon::default();
    match cli.command {
        Command::Ingest { csv, schema } => {
            let bytes = std::fs::read(&csv).with_context(|| format!("reading {}", csv.display()))?;
            let schema = SchemaFile::read(&schema)?;
            print_json(&store.put_dataset(&bytes, &schema)?)?;
        }
        Command::Frontier { dataset, grid, seed } => {
            let grid: GridSpec = match grid {
                Some(p) => serde_json::from_str(&std::fs::read_to_string(&p)?).with_context(|| format!("parsing {}", p.display()))?,
                None => GridSpec::default(),
            };
            grid.validate()?;
            let spec = JobSpec { dataset: store.get_dataset(&dataset)?, grid, config, seed };
            let progress = |done: usize, total: usize| eprint!("\rcells {done}/{total}");
            let id = tokio::task::block_in_place(|| run_build(&store, &spec, &progress)).map_err(anyhow::Error::msg)?;
            eprintln!();
            println!("{id}");
        }
        Command::Translate { prompt, attributes } => {
            let parsed = PromptParser::new(&lexicon).parse(&prompt)?;
            let built = construct_tuple(&parsed, &TupleDefaults::default(), &attributes)?;
            print_json(&serde_json::json!({
                "tuple": built.tuple,
                "defaulted": built.defaulted(),
                "unmatched": parsed.unmatched,
                "explanation": render_tuple(&built.tuple, &lexicon),
            }))?;
        }
        Command::Select { frontier, prompt, choose } => {
            let f = store.get_frontier(&frontier)?;
            let parsed = PromptParser::new(&lexicon).parse(&prompt)?;
            let tuple = construct_tuple(&parsed, &TupleDefaults::default(), &f.protected)?.tuple;
            let cands = filter_feasible(&f, &tuple, &lexicon)?;
            let contract = if cands.candidates.is_empty() {
                eprintln!("no feasible candidates; issuing a no-selection contract");
                print_json(&cands.diagnostics)?;
                issue_contract(&store, &tuple, &f, &cands, None, "No point meets every requirement.", &lexicon.version)?
            } else {
                let sel = select_model(&cands, &f, &tuple)?;
                let (chosen, rationale) = match choose {
                    Some(c) if c != sel.chosen => {
                        let r = format!("Stakeholder chose {c} among {} feasible candidate(s); the policy would choose {}.", cands.candidates.len(), sel.chosen);
                        (c, r)
                    }
                    _ => (sel.chosen, sel.rationale),
                };
                issue_contract(&store, &tuple, &f, &cands, Some(&chosen), &rationale, &lexicon.version)?
            };
            print_json(&contract)?;
        }
        Command::Audit { contract } => {
            let report = audit_contract(&store, &contract)?;
            print_json(&report)?;
            if !report.passed {
                return Ok(1);
            }
        }
        Command::Report { frontier, format } => {
            let f = store.get_frontier(&frontier)?;
            match format {
                ReportFormat::Csv => print!("{}", export_csv(&f)?),
                ReportFormat::Json => println!("{}", f.to_canonical()?),
            }
        }
        Command::Serve { port, host, max_jobs } => {
            let app = router(AppState::new(store, config, max_jobs));
            let addr = format!("{host}:{port}");
            let listener = tokio::net::TcpListener::bind(&addr).await.with_context(|| format!("binding {addr}"))?;
            log::info!("listening on {addr}");
            axum::serve(listener, app).await?;
        }
    }
    Ok(0)
}

/// Parse arguments, run, and map errors to exit code 2.
pub async fn main_entry() -> i32 {
    match run(Cli::parse()).await {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            2
        }
    }
}
