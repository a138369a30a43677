//! Argument parsing and dispatch.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use jket_core::lm::Decoding;

use crate::commands;
use crate::config::{RunConfig, TaskName};
use crate::error::{CliError, Result};
use crate::models::Loaded;
use crate::report::{self, ReportRecord};

#[derive(Debug, Parser)]
#[command(name = "jket", version, about = "Joint knowledge-graph, entity-typing and language-model training")]
struct Cli {
    /// Skip malformed input lines instead of failing.
    #[arg(long, global = true)]
    lenient: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TaskArg {
    Kge,
    Et,
    Lm,
}

impl TaskArg {
    fn name(self) -> &'static str {
        match self {
            TaskArg::Kge => "kge",
            TaskArg::Et => "et",
            TaskArg::Lm => "lm",
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Greedy,
    Sample,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the triple classifier.
    TrainKge(TrainArgs),
    /// Train the entity typer.
    TrainEt(TrainArgs),
    /// Train the language model.
    TrainLm(TrainArgs),
    /// Alternate KGE and typing training over shared parameters.
    TrainJointKgeEt(TrainArgs),
    /// Alternate KGE and LM training over shared parameters.
    TrainJointKgeLm(TrainArgs),
    /// Evaluate an archived model; prints the report as JSON.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        task: Option<TaskArg>,
        /// Also append the report to this directory's reports.jsonl.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score triples (TSV) or type mentions (JSON lines).
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        task: Option<TaskArg>,
    },
    /// Continue a prompt with the language model.
    Generate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "")]
        prompt: String,
        #[arg(long, value_enum, default_value = "greedy")]
        mode: Mode,
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        #[arg(long, default_value_t = 20)]
        max_len: usize,
        /// Sampling seed; defaults to the model's training seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compare analytic and numerical gradients of every operation and
    /// model block.
    Gradcheck {
        #[arg(long, default_value_t = 50)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn train(task: TaskName, a: &TrainArgs, lenient: bool, stdout: &mut dyn Write) -> Result<i32> {
    let cfg = RunConfig::load(&a.config, task, a.seed, a.out.as_deref())?;
    let path = commands::train(&cfg, lenient, stdout)?;
    eprintln!("wrote {}", path.display());
    Ok(0)
}

fn dispatch(cli: Cli, stdout: &mut dyn Write) -> Result<i32> {
    let lenient = cli.lenient;
    match cli.command {
        Command::TrainKge(a) => train(TaskName::Kge, &a, lenient, stdout),
        Command::TrainEt(a) => train(TaskName::Et, &a, lenient, stdout),
        Command::TrainLm(a) => train(TaskName::Lm, &a, lenient, stdout),
        Command::TrainJointKgeEt(a) => train(TaskName::JointKgeEt, &a, lenient, stdout),
        Command::TrainJointKgeLm(a) => train(TaskName::JointKgeLm, &a, lenient, stdout),
        Command::Eval { model, data, task, out } => {
            let loaded = Loaded::read(&model)?;
            let task = loaded.pick_task(task.map(TaskArg::name))?;
            let report = commands::evaluate(&loaded, &task, &data, lenient)?;
            let mut rec = ReportRecord::new(&report, &[data.as_path()], loaded.cfg.seed())?;
            rec.task = task;
            writeln!(stdout, "{}", rec.to_json()).map_err(|e| CliError::io(&PathBuf::from("<stdout>"), e))?;
            if let Some(dir) = out {
                report::append(&dir, &[rec])?;
            }
            Ok(0)
        }
        Command::Predict { model, data, task } => {
            let loaded = Loaded::read(&model)?;
            let task = loaded.pick_task(task.map(TaskArg::name))?;
            commands::predict(&loaded, &task, &data, lenient, stdout)?;
            Ok(0)
        }
        Command::Generate {
            model,
            prompt,
            mode,
            temperature,
            max_len,
            seed,
        } => {
            let loaded = Loaded::read(&model)?;
            let decoding = match mode {
                Mode::Greedy => Decoding::Greedy,
                Mode::Sample => Decoding::Sample {
                    temperature,
                    seed: seed.unwrap_or(loaded.cfg.seed()),
                },
            };
            let text = commands::generate(&loaded, &prompt, max_len, decoding)?;
            writeln!(stdout, "{text}").map_err(|e| CliError::io(&PathBuf::from("<stdout>"), e))?;
            Ok(0)
        }
        Command::Gradcheck { instances, seed } => {
            if instances == 0 {
                return Err(CliError::Usage("--instances must be positive".into()));
            }
            Ok(if commands::gradcheck(instances, seed, stdout)? { 0 } else { 1 })
        }
    }
}

/// Parse `args` (program name first), run, and return the exit status.
/// Diagnostics go to stderr as `Kind: location: message`.
pub fn run<I, T>(args: I, stdout: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli, stdout) {
        Ok(code) => code,
        // A closed stdout (`jket predict ... | head`) is not a failure.
        Err(CliError::Io { ref source, .. }) if source.kind() == std::io::ErrorKind::BrokenPipe => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
