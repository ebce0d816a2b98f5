mod settings;

use std::fmt;
use std::io::Read;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use uncert_cot::bench::{
    format_pass_rate, load_problems, run_benchmark, sweep, CanonicalExecutor, Executor,
    SubprocessExecutor,
};
use uncert_cot::trace::{read_trace, render_table};
use uncert_cot::{generate, replay_gating, write_trace};

use settings::Settings;

/// Uncertainty-gated line-level code generation and benchmarking.
#[derive(Debug, Parser)]
#[command(name = "uncert-cot", version)]
struct Cli {
    /// TOML file with default values for any flag
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(flatten)]
    settings: Settings,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate one solution and print it to stdout
    Generate {
        /// Prompt text
        #[arg(long, conflicts_with = "prompt_file")]
        prompt: Option<String>,
        /// File holding the prompt; `-` reads stdin
        #[arg(long)]
        prompt_file: Option<PathBuf>,
        /// Where to write the decode trace
        #[arg(long, default_value = "trace.jsonl")]
        trace: PathBuf,
    },
    /// Run a dataset and write summary.json, outcomes.csv and traces
    Bench,
    /// Run the benchmark once per threshold and write sweep.csv
    Sweep,
    /// Print a trace as a per-line table
    Inspect {
        /// Trace JSONL file
        trace: PathBuf,
    },
}

/// Bad flags, values or config; exits with status 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn is_usage(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        c.downcast_ref::<UsageError>().is_some()
            || matches!(
                c.downcast_ref::<uncert_cot::Error>(),
                Some(uncert_cot::Error::InvalidConfiguration(_))
            )
    })
}

/// The error chain, skipping causes already spelled out by their parent.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !out.contains(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(if is_usage(&e) { 1 } else { 2 })
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let settings = match &cli.config {
        Some(path) => Settings::from_file(path)?.overlay(cli.settings),
        None => cli.settings,
    };
    match cli.command {
        Command::Generate {
            prompt,
            prompt_file,
            trace,
        } => run_generate(&settings, prompt, prompt_file, &trace),
        Command::Bench => run_bench(&settings),
        Command::Sweep => run_sweep(&settings),
        Command::Inspect { trace } => run_inspect(&settings, &trace),
    }
}

fn read_prompt(prompt: Option<String>, file: Option<PathBuf>) -> anyhow::Result<String> {
    match (prompt, file) {
        (Some(p), _) => Ok(p),
        (None, Some(f)) if f.as_os_str() == "-" => {
            let mut s = String::new();
            std::io::stdin().read_to_string(&mut s).context("cannot read stdin")?;
            Ok(s)
        }
        (None, Some(f)) => {
            std::fs::read_to_string(&f).with_context(|| format!("cannot read {}", f.display()))
        }
        (None, None) => Err(UsageError("one of --prompt or --prompt-file is required".into()).into()),
    }
}

fn run_generate(
    settings: &Settings,
    prompt: Option<String>,
    prompt_file: Option<PathBuf>,
    trace: &std::path::Path,
) -> anyhow::Result<()> {
    let prompt = read_prompt(prompt, prompt_file)?;
    if prompt.is_empty() {
        return Err(UsageError("prompt is empty".into()).into());
    }
    let config = settings.engine()?;
    let examples = settings.few_shot()?;
    config.validate(&examples)?;
    let provider = settings.provider()?.build()?;
    match generate(provider.as_ref(), &prompt, &config, &examples) {
        Ok(result) => {
            write_trace(trace, &result, None)?;
            print!("{}", result.code);
            Ok(())
        }
        Err(failure) => {
            let detail = failure.error.to_string();
            write_trace(trace, &failure.partial, Some(&detail))?;
            eprintln!("partial trace written to {}", trace.display());
            Err(failure.into())
        }
    }
}

fn executor(settings: &Settings, problems: &[uncert_cot::bench::Problem]) -> anyhow::Result<Box<dyn Executor>> {
    match settings.executor.as_deref().unwrap_or("subprocess") {
        "subprocess" => Ok(Box::new(SubprocessExecutor::new(settings.runner()?))),
        "canonical" => Ok(Box::new(CanonicalExecutor::from_problems(problems))),
        other => Err(UsageError(format!("unknown executor {other:?}")).into()),
    }
}

fn run_bench(settings: &Settings) -> anyhow::Result<()> {
    let config = settings.engine()?;
    let examples = settings.few_shot()?;
    config.validate(&examples)?;
    let dataset = settings.dataset()?;
    let provider = settings.provider()?.build()?;
    let problems = load_problems(dataset)?;
    let executor = executor(settings, &problems)?;
    let options = settings.bench_options();
    let report = run_benchmark(&problems, &config, &examples, provider.as_ref(), executor.as_ref(), &options)?;
    let s = &report.summary;
    println!(
        "pass_rate {} ({}/{})",
        format_pass_rate(s.passed, s.total, 3),
        s.passed,
        s.total
    );
    println!("results in {}", options.out_dir.display());
    Ok(())
}

fn run_sweep(settings: &Settings) -> anyhow::Result<()> {
    let config = settings.engine()?;
    let examples = settings.few_shot()?;
    config.validate(&examples)?;
    let dataset = settings.dataset()?;
    let provider = settings.provider()?.build()?;
    let problems = load_problems(dataset)?;
    let executor = executor(settings, &problems)?;
    let options = settings.bench_options();
    let report = sweep(
        &settings.taus(),
        &problems,
        &config,
        &examples,
        provider.as_ref(),
        executor.as_ref(),
        &options,
    )?;
    println!("{:>6}  {:>9}  {:>7}", "tau", "pass_rate", "passed");
    for row in &report.rows {
        println!(
            "{:>6}  {:>9}  {:>7}",
            row.tau,
            format_pass_rate(row.passed, row.total, 3),
            format!("{}/{}", row.passed, row.total)
        );
    }
    println!("results in {}", options.out_dir.display());
    Ok(())
}

fn run_inspect(settings: &Settings, path: &std::path::Path) -> anyhow::Result<()> {
    let stored = read_trace(path)?;
    print!("{}", render_table(&stored));
    let recorded = replay_gating(&stored.trace, None)?;
    let disagreements = recorded.iter().filter(|g| !g.agrees()).count();
    if disagreements == 0 {
        println!("replay: consistent");
    } else {
        println!("replay: {disagreements} line(s) disagree with the recorded gates");
    }
    if let Some(tau) = settings.tau {
        let gated: Vec<String> = replay_gating(&stored.trace, Some(tau))?
            .iter()
            .filter(|g| g.gated)
            .map(|g| g.line_index.to_string())
            .collect();
        println!("gated at tau={tau}: [{}]", gated.join(", "));
    }
    Ok(())
}
