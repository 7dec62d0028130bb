//! The `sdoh` command line.
//!
//! Exit codes: 0 success, 1 task failures (or a failure rate above the
//! threshold in `eval extraction`), 2 usage or configuration errors.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Display;
use std::io::Read;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use crate::annotation::{self, AnnotationService, StudyConfig, StudyData, SystemClock};
use crate::backend::{
    DecodeParams, NoisyRetriever, RateLimiter, RemoteBackend, RemoteConfig, ReplayBackend, RuleMock, SharedBackend,
};
use crate::corpus::{
    self, balanced_sample, generate_corpus, load_corpus, write_corpus, FactorRegistry, GeneratorSpec, GoldRelevanceSet,
    IncidentRecord, ReportTag, TaskKey,
};
use crate::eval::{
    self, cohens_kappa, paired_labels, render_report, render_retrieval, retrieval_accuracy, EvalReport, ReportFormat,
    RunMetadata,
};
use crate::pipeline::{
    all_tasks, read_traces, read_verdicts, write_traces, write_verdicts, Mode, ParseErrorPolicy, Pipeline,
    PipelineConfig, StageBackends, StageTrace,
};
use crate::prompts::{render, Bindings, Placeholder, PromptKind};
use crate::segmenter::{segment, ABBREVIATIONS};

#[derive(Debug, Parser)]
#[command(name = "sdoh", version, about = "Multi-stage extraction of suicide-related social determinants of health")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthetic corpora and balanced samples.
    #[command(subcommand)]
    Corpus(CorpusCmd),
    /// Run extraction over a corpus and write traces and verdicts.
    Extract(ExtractArgs),
    /// Score verdicts, retrieval, or agreement.
    #[command(subcommand)]
    Eval(EvalCmd),
    /// The annotation study service.
    #[command(subcommand)]
    Annotate(AnnotateCmd),
    /// Print a rendered prompt.
    Prompt(PromptArgs),
    /// Print the sentence segmentation of a report.
    Segment(SegmentArgs),
}

#[derive(Debug, Subcommand)]
pub enum CorpusCmd {
    /// Generate a synthetic corpus with gold labels and sentence relevance.
    Gen(GenArgs),
    /// Draw a balanced positive/negative sample for one factor.
    Sample(SampleArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long)]
    pub incidents: usize,
    /// Comma-separated factor ids; defaults to the six synthetic defaults.
    #[arg(long, value_delimiter = ',')]
    pub factors: Vec<String>,
    /// Probability that an incident is positive for each factor.
    #[arg(long)]
    pub positive_rate: Option<f64>,
    #[arg(long)]
    pub registry: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Sentence relevance file; defaults to `<out>` with a `.gold.jsonl` suffix.
    #[arg(long)]
    pub gold_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub factor: String,
    #[arg(long)]
    pub per_class: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long)]
    pub registry: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value = "multistage")]
    pub mode: Mode,
    /// rule-mock, noisy-mock, remote, or replay:<dir>.
    #[arg(long, default_value = "rule-mock")]
    pub backend: String,
    /// Retrieval-stage backend (multistage only).
    #[arg(long)]
    pub retriever: Option<String>,
    /// Verification-stage backend (multistage only).
    #[arg(long)]
    pub examiner: Option<String>,
    /// Extraction-stage backend.
    #[arg(long)]
    pub extractor: Option<String>,
    /// Backend behind replay:<dir> on a cache miss.
    #[arg(long, default_value = "remote")]
    pub replay_inner: String,
    #[arg(long, value_delimiter = ',')]
    pub factors: Vec<String>,
    #[arg(long)]
    pub registry: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    pub width: usize,
    #[arg(long, default_value = "fail")]
    pub on_parse_error: ParseErrorPolicy,
    /// Seed for noisy-mock.
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.2)]
    pub noise_drop: f64,
    #[arg(long, default_value_t = 0.3)]
    pub noise_inject: f64,
    /// Requests per minute shared by all remote calls.
    #[arg(long)]
    pub rpm: Option<u32>,
    #[arg(long, default_value_t = 0.0)]
    pub temperature: f64,
    #[arg(long, default_value_t = 1024)]
    pub max_tokens: u32,
    /// Record latencies and stage timings in traces (makes them run-dependent).
    #[arg(long)]
    pub timing: bool,
    #[arg(long, default_value = "traces.jsonl")]
    pub traces: PathBuf,
    #[arg(long, default_value = "verdicts.jsonl")]
    pub verdicts: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum EvalCmd {
    /// Precision, recall, F1 and accuracy per factor and mode.
    Extraction(EvalExtractionArgs),
    /// Stage-wise relevant-sentence accuracy of multistage traces.
    Retrieval(EvalRetrievalArgs),
    /// Cohen's kappa between two verdict files.
    Kappa(KappaArgs),
}

#[derive(Debug, Args)]
pub struct ReportOut {
    #[arg(long)]
    pub json_out: Option<PathBuf>,
    #[arg(long)]
    pub text_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalExtractionArgs {
    /// Corpus carrying gold labels.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, required_unless_present = "verdicts", conflicts_with = "verdicts")]
    pub traces: Vec<PathBuf>,
    #[arg(long)]
    pub verdicts: Vec<PathBuf>,
    #[arg(long)]
    pub registry: Option<PathBuf>,
    /// Exit with 1 when any factor's failed-task share exceeds this.
    #[arg(long, default_value_t = 0.0)]
    pub max_failure_rate: f64,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub out: ReportOut,
}

#[derive(Debug, Args)]
pub struct EvalRetrievalArgs {
    #[arg(long)]
    pub traces: PathBuf,
    /// Sentence relevance labels.
    #[arg(long)]
    pub gold: PathBuf,
    #[command(flatten)]
    pub out: ReportOut,
}

#[derive(Debug, Args)]
pub struct KappaArgs {
    pub a: PathBuf,
    pub b: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum AnnotateCmd {
    /// Serve the study API and UI bundle.
    Serve(ServeArgs),
    /// Print a study report from the event log.
    Report(AnnotateReportArgs),
}

#[derive(Debug, Args)]
pub struct StudyInputs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Multistage traces supplying intervention highlights.
    #[arg(long)]
    pub traces: Option<PathBuf>,
    #[arg(long)]
    pub registry: Option<PathBuf>,
    #[arg(long, default_value = "annotation-events.jsonl")]
    pub log: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub inputs: StudyInputs,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Study config to create on startup if it does not exist yet.
    #[arg(long)]
    pub study: Option<PathBuf>,
    /// Directory holding the built UI bundle.
    #[arg(long)]
    pub ui_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnnotateReportArgs {
    #[command(flatten)]
    pub inputs: StudyInputs,
    #[arg(long)]
    pub study: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PromptArgs {
    #[arg(long)]
    pub kind: PromptKind,
    #[arg(long)]
    pub factor: String,
    /// Text bound to the kind's input placeholder; read from stdin when absent.
    #[arg(long)]
    pub input: Option<String>,
    #[arg(long)]
    pub registry: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    /// Report file; stdin when absent.
    pub file: Option<PathBuf>,
    #[arg(long, default_value = "cme")]
    pub report: ReportTag,
    /// Print the abbreviation list instead.
    #[arg(long)]
    pub abbreviations: bool,
}

#[derive(Debug)]
pub enum CliError {
    /// Exit code 1.
    TaskFailures(String),
    /// Exit code 2.
    Config(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::TaskFailures(_) => 1,
            CliError::Config(_) => 2,
        }
    }
}

impl Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::TaskFailures(m) | CliError::Config(m) => f.write_str(m),
        }
    }
}

fn cfg<E: Display>(e: E) -> CliError {
    CliError::Config(e.to_string())
}

type CliResult = Result<(), CliError>;

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match runtime.block_on(run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

pub async fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Corpus(CorpusCmd::Gen(a)) => corpus_gen(a),
        Command::Corpus(CorpusCmd::Sample(a)) => corpus_sample(a),
        Command::Extract(a) => extract(a).await,
        Command::Eval(EvalCmd::Extraction(a)) => eval_extraction(a),
        Command::Eval(EvalCmd::Retrieval(a)) => eval_retrieval(a),
        Command::Eval(EvalCmd::Kappa(a)) => eval_kappa(a),
        Command::Annotate(AnnotateCmd::Serve(a)) => annotate_serve(a).await,
        Command::Annotate(AnnotateCmd::Report(a)) => annotate_report(a),
        Command::Prompt(a) => prompt(a),
        Command::Segment(a) => segment_cmd(a),
    }
}

fn registry(path: &Option<PathBuf>) -> Result<FactorRegistry, CliError> {
    match path {
        Some(p) => FactorRegistry::load(p).map_err(cfg),
        None => Ok(FactorRegistry::builtin()),
    }
}

fn write_file(path: &Path, text: &str) -> CliResult {
    std::fs::write(path, text).map_err(|e| cfg(format!("{}: {e}", path.display())))
}

fn corpus_gen(a: GenArgs) -> CliResult {
    let reg = registry(&a.registry)?;
    let mut spec = if a.factors.is_empty() && a.registry.is_none() {
        GeneratorSpec::new(a.seed, a.incidents)
    } else {
        let ids: Vec<String> = if a.factors.is_empty() {
            reg.iter().map(|f| f.factor_id.clone()).collect()
        } else {
            a.factors.clone()
        };
        GeneratorSpec::with_registry(a.seed, a.incidents, reg.subset(&ids).map_err(cfg)?)
    };
    if let Some(rate) = a.positive_rate {
        spec.positive_rates.values_mut().for_each(|r| *r = rate);
    }
    let generated = generate_corpus(&spec).map_err(cfg)?;
    let gold_out = a.gold_out.unwrap_or_else(|| {
        let stem = a.out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        a.out.with_file_name(format!("{stem}.gold.jsonl"))
    });
    write_corpus(&a.out, &generated.records).map_err(cfg)?;
    generated.relevance.write(&gold_out).map_err(cfg)?;
    println!("wrote {} incidents to {}", generated.records.len(), a.out.display());
    println!("wrote sentence relevance to {}", gold_out.display());
    for f in spec.registry.iter() {
        let pos = generated.records.iter().filter(|r| r.gold_label(&f.factor_id) == Some(true)).count();
        println!("{:<32} {pos:>5} positive / {:>5}", f.factor_id, generated.records.len());
    }
    Ok(())
}

fn corpus_sample(a: SampleArgs) -> CliResult {
    let reg = registry(&a.registry)?;
    let records = load_corpus(&a.corpus, &reg).map_err(cfg)?;
    let sample = balanced_sample(&records, &a.factor, a.per_class, a.seed).map_err(cfg)?;
    write_corpus(&a.out, &sample).map_err(cfg)?;
    let pos = sample.iter().filter(|r| r.gold_label(&a.factor) == Some(true)).count();
    println!("{}: {pos} positive / {} negative", a.factor, sample.len() - pos);
    Ok(())
}

struct BackendFactory<'a> {
    args: &'a ExtractArgs,
    built: HashMap<String, SharedBackend>,
    limiter: Option<Arc<RateLimiter>>,
}

impl BackendFactory<'_> {
    fn get(&mut self, spec: &str) -> Result<SharedBackend, CliError> {
        if let Some(b) = self.built.get(spec) {
            return Ok(b.clone());
        }
        let a = self.args;
        let backend: SharedBackend = match spec {
            "rule-mock" => Arc::new(RuleMock::synthetic()),
            "noisy-mock" => {
                for (name, v) in [("--noise-drop", a.noise_drop), ("--noise-inject", a.noise_inject)] {
                    if !(0.0..=1.0).contains(&v) {
                        return Err(cfg(format!("{name} must be within [0, 1]")));
                    }
                }
                Arc::new(NoisyRetriever::new(RuleMock::synthetic(), a.noise_drop, a.noise_inject, a.seed))
            }
            "remote" => {
                let config = RemoteConfig::from_env().map_err(cfg)?;
                let mut remote = RemoteBackend::new(config).map_err(cfg)?;
                if let Some(l) = &self.limiter {
                    remote = remote.with_limiter(l.clone());
                }
                Arc::new(remote)
            }
            other => match other.strip_prefix("replay:") {
                Some(dir) if !dir.is_empty() => {
                    if a.replay_inner.starts_with("replay:") {
                        return Err(cfg("--replay-inner cannot itself be a replay backend"));
                    }
                    let inner = self.get(&a.replay_inner.clone())?;
                    Arc::new(ReplayBackend::new(dir, inner).map_err(cfg)?)
                }
                _ => {
                    return Err(cfg(format!(
                        "unknown backend `{other}` (expected rule-mock, noisy-mock, remote or replay:<dir>)"
                    )))
                }
            },
        };
        self.built.insert(spec.to_string(), backend.clone());
        Ok(backend)
    }
}

async fn extract(a: ExtractArgs) -> CliResult {
    if a.mode != Mode::Multistage && (a.retriever.is_some() || a.examiner.is_some()) {
        return Err(cfg(format!("--retriever and --examiner only apply to multistage, not {}", a.mode)));
    }
    if a.width == 0 {
        return Err(cfg("--width must be at least 1"));
    }
    if a.rpm == Some(0) {
        return Err(cfg("--rpm must be positive"));
    }
    let reg = registry(&a.registry)?;
    let records = load_corpus(&a.corpus, &reg).map_err(cfg)?;
    let factors: Vec<String> = if a.factors.is_empty() {
        let mut seen: Vec<String> = records
            .iter()
            .flat_map(|r| r.gold_labels.iter().flat_map(|g| g.keys().cloned()))
            .collect();
        seen.sort();
        seen.dedup();
        if seen.is_empty() {
            return Err(cfg("corpus has no gold labels; pass --factors"));
        }
        seen
    } else {
        a.factors.clone()
    };
    for f in &factors {
        if !reg.contains(f) {
            return Err(cfg(format!("unknown factor `{f}`")));
        }
    }

    let mut factory = BackendFactory {
        args: &a,
        built: HashMap::new(),
        limiter: a.rpm.map(|n| Arc::new(RateLimiter::per_minute(n))),
    };
    let mut stage = |o: &Option<String>| factory.get(o.as_deref().unwrap_or(&a.backend)).map(Some);
    let backends = StageBackends {
        retriever: stage(&a.retriever)?,
        examiner: stage(&a.examiner)?,
        extractor: stage(&a.extractor)?,
    };
    let config = PipelineConfig {
        on_parse_error: a.on_parse_error,
        record_timing: a.timing,
        width: a.width,
        decode_params: DecodeParams {
            temperature: a.temperature,
            max_output_tokens: a.max_tokens,
        },
    };
    let pipeline = Pipeline::new(reg, backends, config);
    let tasks = all_tasks(&records, &factors, a.mode);
    let started = std::time::Instant::now();
    let outcome = pipeline.run_batch(tasks, &records).await.map_err(cfg)?;
    write_traces(&a.traces, &outcome.traces).map_err(cfg)?;
    write_verdicts(&a.verdicts, &outcome.traces).map_err(cfg)?;
    println!(
        "{} tasks in {:.1}s: {} succeeded, {} failed",
        outcome.traces.len(),
        started.elapsed().as_secs_f64(),
        outcome.succeeded,
        outcome.failed
    );
    for t in outcome.traces.iter().filter(|t| !t.succeeded()).take(10) {
        if let Some(e) = &t.error {
            println!("  failed {} at {}: {}", t.key(), e.stage, e.message);
        }
    }
    if outcome.failed > 0 {
        return Err(CliError::TaskFailures(format!("{} task(s) failed", outcome.failed)));
    }
    Ok(())
}

fn emit(out: &ReportOut, json: String, text: String) -> CliResult {
    if let Some(p) = &out.json_out {
        write_file(p, &json)?;
    }
    if let Some(p) = &out.text_out {
        write_file(p, &text)?;
    }
    print!("{text}");
    Ok(())
}

fn backend_ids(traces: &[StageTrace]) -> Vec<String> {
    let mut ids: Vec<String> = traces.iter().flat_map(|t| t.responses.iter().map(|r| r.backend_id.clone())).collect();
    ids.sort();
    ids.dedup();
    ids
}

fn eval_extraction(a: EvalExtractionArgs) -> CliResult {
    let reg = registry(&a.registry)?;
    let bytes = std::fs::read(&a.corpus).map_err(|e| cfg(format!("{}: {e}", a.corpus.display())))?;
    let records = corpus::parse_corpus(&String::from_utf8_lossy(&bytes), &reg).map_err(cfg)?;
    let gold = eval::gold_labels(&records);
    let mut metadata = RunMetadata {
        corpus_hash: Some(eval::sha256_hex(&bytes)),
        seed: a.seed,
        ..RunMetadata::now()
    };
    let report = if a.verdicts.is_empty() {
        let mut traces = Vec::new();
        for p in &a.traces {
            traces.extend(read_traces(p).map_err(cfg)?);
        }
        metadata.backend_ids = backend_ids(&traces);
        EvalReport::from_traces(&traces, &gold, metadata)
    } else {
        let mut verdicts = Vec::new();
        for p in &a.verdicts {
            verdicts.extend(read_verdicts(p).map_err(cfg)?);
        }
        EvalReport::from_verdicts(&verdicts, &gold, metadata)
    }
    .map_err(cfg)?;
    emit(&a.out, render_report(&report, ReportFormat::Json), render_report(&report, ReportFormat::Text))?;
    let worst = report.max_failure_rate();
    if worst > a.max_failure_rate {
        return Err(CliError::TaskFailures(format!(
            "task failure rate {worst:.3} exceeds --max-failure-rate {}",
            a.max_failure_rate
        )));
    }
    Ok(())
}

fn eval_retrieval(a: EvalRetrievalArgs) -> CliResult {
    let traces = read_traces(&a.traces).map_err(cfg)?;
    let gold = GoldRelevanceSet::load(&a.gold).map_err(cfg)?;
    let report = retrieval_accuracy(&traces, &gold).map_err(cfg)?;
    emit(&a.out, render_retrieval(&report, ReportFormat::Json), render_retrieval(&report, ReportFormat::Text))
}

fn label_map(path: &Path) -> Result<BTreeMap<TaskKey, bool>, CliError> {
    let mut out = BTreeMap::new();
    for v in read_verdicts(path).map_err(cfg)? {
        let key = TaskKey::new(&v.incident_id, &v.factor_id);
        if out.insert(key.clone(), v.value).is_some() {
            return Err(cfg(format!("{}: {key} appears twice", path.display())));
        }
    }
    Ok(out)
}

fn eval_kappa(a: KappaArgs) -> CliResult {
    let (x, y) = paired_labels(&label_map(&a.a)?, &label_map(&a.b)?);
    if x.is_empty() {
        return Err(cfg("the two label files share no tasks"));
    }
    let k = cohens_kappa(&x, &y).map_err(cfg)?;
    println!("kappa {k:.4} over {} shared tasks", x.len());
    Ok(())
}

fn study_data(inputs: &StudyInputs) -> Result<StudyData, CliError> {
    let reg = registry(&inputs.registry)?;
    let records: Vec<IncidentRecord> = load_corpus(&inputs.corpus, &reg).map_err(cfg)?;
    let traces = match &inputs.traces {
        Some(p) => read_traces(p).map_err(cfg)?,
        None => Vec::new(),
    };
    Ok(StudyData::new(reg, records, traces))
}

async fn annotate_serve(a: ServeArgs) -> CliResult {
    let service = AnnotationService::open(study_data(&a.inputs)?, Some(&a.inputs.log), Arc::new(SystemClock)).map_err(cfg)?;
    if let Some(path) = &a.study {
        let text = std::fs::read_to_string(path).map_err(|e| cfg(format!("{}: {e}", path.display())))?;
        let config: StudyConfig = serde_json::from_str(&text).map_err(|e| cfg(format!("{}: {e}", path.display())))?;
        match config.study_id.as_deref().map(|id| service.study(id)) {
            Some(Ok(existing)) if existing == config => {}
            Some(Ok(_)) => return Err(cfg("a different study with this id already exists in the log")),
            _ => {
                let created = service.create_study(config).map_err(cfg)?;
                println!("created study {}", created.study_id.unwrap_or_default());
            }
        }
    }
    let addr: SocketAddr = format!("{}:{}", a.host, a.port).parse().map_err(cfg)?;
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| cfg(format!("bind {addr}: {e}")))?;
    println!("listening on http://{}", listener.local_addr().map_err(cfg)?);
    let app = annotation::router(Arc::new(service), a.ui_dir.clone());
    annotation::serve(listener, app, async {
        let _ = tokio::signal::ctrl_c().await;
    })
    .await
    .map_err(cfg)
}

fn annotate_report(a: AnnotateReportArgs) -> CliResult {
    if !a.inputs.log.exists() {
        return Err(cfg(format!("{}: no such event log", a.inputs.log.display())));
    }
    let service = AnnotationService::open(study_data(&a.inputs)?, Some(&a.inputs.log), Arc::new(SystemClock)).map_err(cfg)?;
    let report = service.report(&a.study).map_err(cfg)?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    match &a.out {
        Some(p) => write_file(p, &json),
        None => {
            print!("{json}");
            Ok(())
        }
    }
}

fn read_input(input: Option<String>, file: Option<&Path>) -> Result<String, CliError> {
    if let Some(s) = input {
        return Ok(s);
    }
    match file {
        Some(p) => std::fs::read_to_string(p).map_err(|e| cfg(format!("{}: {e}", p.display()))),
        None => {
            let mut s = String::new();
            std::io::stdin().read_to_string(&mut s).map_err(cfg)?;
            Ok(s)
        }
    }
}

fn prompt(a: PromptArgs) -> CliResult {
    let reg = registry(&a.registry)?;
    let factor = reg.get(&a.factor).ok_or_else(|| cfg(format!("unknown factor `{}`", a.factor)))?;
    let input = read_input(a.input, None)?;
    let slot = match a.kind {
        PromptKind::Verification => Placeholder::TargetSentence,
        PromptKind::Extraction => Placeholder::RelevantDescriptions,
        _ => Placeholder::InputReport,
    };
    let req = render(a.kind, &Bindings::for_factor(factor).with(slot, input)).map_err(cfg)?;
    println!("{}", req.flattened());
    Ok(())
}

fn segment_cmd(a: SegmentArgs) -> CliResult {
    if a.abbreviations {
        for abbr in ABBREVIATIONS {
            println!("{abbr}.");
        }
        return Ok(());
    }
    let text = read_input(None, a.file.as_deref())?;
    for span in segment(a.report, &text) {
        println!("{}", serde_json::to_string(&span).expect("spans serialize"));
    }
    Ok(())
}
