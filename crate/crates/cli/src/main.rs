use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use medcode_core::bench::{load_dataset, run_eval, BenchError};
use medcode_core::evidence::{AnnotatorConfig, AnnotatorMode, ExtractionError};
use medcode_core::ontology::{load_ontology, Ontology, OntologyError, OntologyFormat};
use medcode_core::pipeline::{CodingMode, Pipeline, PipelineConfig, PipelineError, PredictionRecord};
use medcode_core::Code;
use medcode_service::{ServiceConfig, ServiceError};

#[derive(Parser)]
#[command(name = "mc", version, about = "Ontology-aware medical code assignment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Code one document.
    Code {
        #[arg(long)]
        ontology: PathBuf,
        #[arg(long, conflicts_with = "stdin", required_unless_present = "stdin")]
        text: Option<PathBuf>,
        #[arg(long)]
        stdin: bool,
        /// File listing allowed codes, one per line or as a JSON array.
        #[arg(long)]
        restricted: Option<PathBuf>,
        #[arg(long)]
        json: bool,
        #[command(flatten)]
        annotator: AnnotatorArgs,
    },
    /// Evaluate against a JSONL dataset and write a report.
    Eval {
        #[arg(long)]
        ontology: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum, default_value = "full")]
        mode: Mode,
        #[arg(long, default_value_t = 5)]
        runs: usize,
        #[arg(long)]
        out: PathBuf,
        /// Also write the first run's predictions as JSONL.
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[command(flatten)]
        annotator: AnnotatorArgs,
    },
    /// Ontology utilities.
    Ontology {
        #[command(subcommand)]
        command: OntologyCommand,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Subcommand)]
enum OntologyCommand {
    /// Parse and validate an ontology file.
    Validate {
        file: PathBuf,
        /// Input format; inferred from the extension when omitted.
        #[arg(long, value_enum)]
        format: Option<Format>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Full,
    Restricted,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Xml,
}

#[derive(Clone, Copy, ValueEnum)]
enum Annotator {
    Lexicon,
    External,
}

#[derive(clap::Args)]
struct AnnotatorArgs {
    #[arg(long, value_enum, default_value = "lexicon")]
    annotator: Annotator,
    #[arg(long)]
    endpoint: Option<String>,
}

impl AnnotatorArgs {
    fn config(&self) -> AnnotatorConfig {
        AnnotatorConfig {
            mode: match self.annotator {
                Annotator::Lexicon => AnnotatorMode::Lexicon,
                Annotator::External => AnnotatorMode::External,
            },
            external_endpoint: self.endpoint.clone(),
            ..Default::default()
        }
    }
}

/// Failure classes mapped to exit codes.
#[derive(Debug)]
enum Failure {
    Validation(String),
    Io(String),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 1,
            Failure::Io(_) => 2,
        }
    }
}

fn io(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Io(format!("{}: {e}", path.display()))
}

impl From<OntologyError> for Failure {
    fn from(e: OntologyError) -> Self {
        match e {
            OntologyError::Io(e) => Failure::Io(e.to_string()),
            other => Failure::Validation(other.to_string()),
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Extraction(ExtractionError::ExternalUnavailable(m)) => Failure::Io(m),
            other => Failure::Validation(other.to_string()),
        }
    }
}

impl From<BenchError> for Failure {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::Io { .. } => Failure::Io(e.to_string()),
            BenchError::Pipeline(p) => p.into(),
            other => Failure::Validation(other.to_string()),
        }
    }
}

impl From<ServiceError> for Failure {
    fn from(e: ServiceError) -> Self {
        match e {
            ServiceError::Io(_) => Failure::Io(e.to_string()),
            other => Failure::Validation(other.to_string()),
        }
    }
}

fn read_ontology(path: &Path, format: Option<Format>) -> Result<Ontology, Failure> {
    let format = match format {
        Some(Format::Json) => OntologyFormat::CanonicalJson,
        Some(Format::Xml) => OntologyFormat::Icd10cmXml,
        None if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("xml")) => OntologyFormat::Icd10cmXml,
        None => OntologyFormat::CanonicalJson,
    };
    let file = File::open(path).map_err(|e| io(path, e))?;
    load_ontology(BufReader::new(file), format).map_err(|e| match e {
        OntologyError::Io(e) => io(path, e),
        other => Failure::Validation(format!("{}: {other}", path.display())),
    })
}

fn read_restriction(path: &Path) -> Result<BTreeSet<Code>, Failure> {
    let raw = std::fs::read_to_string(path).map_err(|e| io(path, e))?;
    let items: Vec<String> = match serde_json::from_str::<Vec<String>>(&raw) {
        Ok(v) => v,
        Err(_) => raw.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect(),
    };
    items
        .iter()
        .map(|s| Code::parse(s).ok_or_else(|| Failure::Validation(format!("invalid code {s:?} in {}", path.display()))))
        .collect()
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    std::fs::write(path, contents).map_err(|e| io(path, e))
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Code { ontology, text, stdin: _, restricted, json, annotator } => {
            let o = read_ontology(&ontology, None)?;
            let (id, body) = match &text {
                Some(p) => (
                    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
                    std::fs::read_to_string(p).map_err(|e| io(p, e))?,
                ),
                None => {
                    let mut s = String::new();
                    std::io::stdin().read_to_string(&mut s).map_err(|e| Failure::Io(format!("stdin: {e}")))?;
                    ("stdin".to_string(), s)
                }
            };
            let mut cfg = PipelineConfig { annotator: annotator.config(), ..Default::default() };
            if let Some(p) = restricted {
                cfg.mode = CodingMode::Restricted;
                cfg.restriction = Some(read_restriction(&p)?);
            }
            let pipeline = Pipeline::new(Arc::new(o), cfg)?;
            let record = PredictionRecord { id, results: pipeline.code_encounter(&body)? };
            let mut out = std::io::stdout().lock();
            if json {
                writeln!(out, "{}", record.to_json_line()).map_err(|e| Failure::Io(e.to_string()))?;
            } else {
                for r in &record.results {
                    let spans: Vec<String> =
                        r.evidence.iter().map(|e| format!("[{},{}) {:?}", e.start, e.end, e.text)).collect();
                    writeln!(out, "{}\t{:.3}\t{}", r.code, r.confidence, spans.join(" "))
                        .map_err(|e| Failure::Io(e.to_string()))?;
                }
            }
            Ok(())
        }
        Command::Eval { ontology, dataset, mode, runs, out, predictions, annotator } => {
            let o = read_ontology(&ontology, None)?;
            let ds = load_dataset(&dataset)?;
            let cfg = PipelineConfig {
                mode: match mode {
                    Mode::Full => CodingMode::Full,
                    Mode::Restricted => CodingMode::Restricted,
                },
                annotator: annotator.config(),
                ..Default::default()
            };
            let outcome = run_eval(Arc::new(o), &ds, &cfg, runs)?;
            write_file(&out, &outcome.report.to_json())?;
            if let Some(p) = predictions {
                let lines: String = outcome.predictions.iter().map(|r| r.to_json_line() + "\n").collect();
                write_file(&p, &lines)?;
            }
            let m = &outcome.report.micro;
            println!("micro F1 {:.4} ± {:.4} over {} runs; report written to {}", m.f1.mean, m.f1.std, runs, out.display());
            Ok(())
        }
        Command::Ontology { command: OntologyCommand::Validate { file, format } } => {
            let o = read_ontology(&file, format)?;
            println!(
                "ok: {} {} with {} codes and {} index entries",
                o.system_id(),
                o.version(),
                o.codes().len(),
                o.index().len()
            );
            Ok(())
        }
        Command::Serve { config } => {
            let cfg = ServiceConfig::load(&config)?;
            let rt = tokio::runtime::Runtime::new().map_err(|e| Failure::Io(e.to_string()))?;
            rt.block_on(medcode_service::serve(cfg))?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Validation(m) | Failure::Io(m)) = &f;
            eprintln!("error: {m}");
            ExitCode::from(f.exit_code())
        }
    }
}
