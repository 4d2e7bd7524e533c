use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

use config::{EngineConfig, Overrides};

#[derive(Parser, Debug)]
#[command(name = "perforch", version, about = "Performance-guided orchestration of code-generation models")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct GlobalArgs {
    /// TOML config file (PERFORCH_CONFIG when omitted).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Provider list (JSON or TOML).
    #[arg(long, global = true)]
    providers: Option<PathBuf>,
    /// Directory with <kind>.txt prompt templates.
    #[arg(long, global = true)]
    templates_dir: Option<PathBuf>,
    /// Ranking memory directory.
    #[arg(long, global = true)]
    memory: Option<PathBuf>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true)]
    log_level: Option<String>,
    #[arg(long, global = true)]
    sandbox_root: Option<PathBuf>,
    #[arg(long, global = true)]
    keep_artifacts: bool,
}

#[derive(Args, Debug, Clone)]
pub struct BenchArgs {
    /// Line-delimited JSON benchmark (gzip accepted).
    #[arg(long)]
    pub benchmark: PathBuf,
    /// humanevalx or effibenchx.
    #[arg(long, default_value = "humanevalx")]
    pub format: String,
    /// Sidecar tags file from `classify`.
    #[arg(long)]
    pub tags: Option<PathBuf>,
    /// Keep only problems in this language.
    #[arg(long)]
    pub language: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a study loop and write StudyRecords.
    #[command(subcommand)]
    Study(StudyCmd),
    /// Tag problems by three-annotator consensus.
    Classify {
        #[command(flatten)]
        bench: BenchArgs,
        /// Comma-separated provider ids (odd count, at least 3).
        #[arg(long, value_delimiter = ',', required = true)]
        annotators: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the call ledger here.
        #[arg(long)]
        ledger: Option<PathBuf>,
    },
    /// Build or inspect the ranking memory.
    #[command(subcommand)]
    Memory(MemoryCmd),
    /// Run the orchestration agent.
    #[command(subcommand)]
    Agent(AgentCmd),
    /// Measure one solution.
    Profile {
        #[command(flatten)]
        bench: BenchArgs,
        #[arg(long)]
        problem: String,
        /// Solution file; the canonical solution when omitted.
        #[arg(long)]
        solution: Option<PathBuf>,
        /// Write the profile JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Measured repetitions.
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Run solutions against their test suites. Exit 1 unless every verdict is Pass.
    Judge {
        #[command(flatten)]
        bench: BenchArgs,
        /// One problem id; every problem when omitted.
        #[arg(long)]
        problem: Option<String>,
        /// Solution file; canonical solutions when omitted.
        #[arg(long)]
        solution: Option<PathBuf>,
        /// full or example.
        #[arg(long, default_value = "full")]
        suite: String,
        /// Write verdict JSON lines here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Aggregate run logs or study records into tables and plots.
    Report {
        /// RunLog JSONL.
        #[arg(long)]
        runs: Option<PathBuf>,
        /// StudyRecord JSONL.
        #[arg(long)]
        records: Option<PathBuf>,
        /// pass_at_1, fix_at_1, or a performance metric (time, mean_memory, max_memory, cpu).
        #[arg(long)]
        metric: String,
        #[arg(long, value_delimiter = ',', default_value = "csv")]
        format: Vec<String>,
        #[arg(long = "out-dir", default_value = ".")]
        out_dir: PathBuf,
    },
    /// Check CPU frequency, boost, SMT and idle-state settings.
    EnvCheck,
}

#[derive(Subcommand, Debug)]
pub enum StudyCmd {
    Generate(StudyArgs),
    Fix(StudyArgs),
    Refine(StudyArgs),
}

#[derive(Args, Debug, Clone)]
pub struct StudyArgs {
    #[command(flatten)]
    pub bench: BenchArgs,
    /// Comma-separated provider ids; all providers when omitted.
    #[arg(long, value_delimiter = ',')]
    pub models: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub ledger: Option<PathBuf>,
    /// Validation suite: full or example.
    #[arg(long, default_value = "full")]
    pub suite: String,
    /// Measured repetitions (refine only).
    #[arg(long)]
    pub runs: Option<usize>,
}

#[derive(Subcommand, Debug)]
pub enum MemoryCmd {
    /// Ingest StudyRecord files (or directories of *.jsonl) into the memory dir.
    Build {
        #[arg(long = "from-study", required = true, num_args = 1..)]
        from_study: Vec<PathBuf>,
    },
    /// Print one ranking table.
    Show {
        #[arg(long)]
        stage: String,
        #[arg(long)]
        language: String,
        #[arg(long)]
        metric: Option<String>,
        #[arg(long)]
        tag: Option<String>,
        #[arg(long)]
        top: Option<usize>,
    },
    /// Add a new model's study records to the memory.
    Register {
        #[arg(long)]
        model: String,
        #[arg(long)]
        records: PathBuf,
    },
}

#[derive(Subcommand, Debug)]
pub enum AgentCmd {
    Run(AgentArgs),
}

#[derive(Args, Debug, Clone)]
pub struct AgentArgs {
    #[command(flatten)]
    pub bench: BenchArgs,
    #[arg(long, default_value = "time")]
    pub metric: String,
    /// sequential, top1 or bestofn.
    #[arg(long, default_value = "sequential")]
    pub strategy: String,
    #[arg(long, default_value_t = 5)]
    pub candidates: usize,
    /// Give fix models the task text and failing test output.
    #[arg(long)]
    pub fix_with_feedback: bool,
    #[arg(long, default_value = "full")]
    pub suite: String,
    /// RunLog JSONL, appended.
    #[arg(long)]
    pub out: PathBuf,
    /// Measured repetitions per profile.
    #[arg(long)]
    pub runs: Option<usize>,
}

fn init_logging(level: &str) {
    let filter = tracing_subscriber::EnvFilter::try_new(level).unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info"));
    let _ = tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).with_ansi(std::io::IsTerminal::is_terminal(&std::io::stderr())).with_target(false).try_init();
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let g = &cli.global;
    let flags = Overrides {
        providers_file: g.providers.clone(),
        templates_dir: g.templates_dir.clone(),
        memory_dir: g.memory.clone(),
        workers: g.workers,
        log_level: g.log_level.clone(),
        sandbox_root: g.sandbox_root.clone(),
        keep_artifacts: g.keep_artifacts,
        runs: match &cli.command {
            Command::Profile { runs, .. } => *runs,
            Command::Study(StudyCmd::Generate(a) | StudyCmd::Fix(a) | StudyCmd::Refine(a)) => a.runs,
            Command::Agent(AgentCmd::Run(a)) => a.runs,
            _ => None,
        },
    };
    let cfg = match EngineConfig::load(g.config.as_deref(), &flags) {
        Ok(c) => c,
        Err(e) => {
            init_logging("info");
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };
    init_logging(&cfg.log_level);
    let result = match cli.command {
        Command::Study(s) => commands::study(&cfg, s),
        Command::Classify { bench, annotators, out, ledger } => commands::classify(&cfg, &bench, &annotators, &out, ledger.as_deref()),
        Command::Memory(m) => commands::memory(&cfg, m),
        Command::Agent(AgentCmd::Run(a)) => commands::agent_run(&cfg, &a),
        Command::Profile { bench, problem, solution, out, .. } => commands::profile(&cfg, &bench, &problem, solution.as_deref(), out.as_deref()),
        Command::Judge { bench, problem, solution, suite, out } => commands::judge(&cfg, &bench, problem.as_deref(), solution.as_deref(), &suite, out.as_deref()),
        Command::Report { runs, records, metric, format, out_dir } => commands::report(runs.as_deref(), records.as_deref(), &metric, &format, &out_dir),
        Command::EnvCheck => commands::env_check(),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
