//! `mip6sim` command line: `run`, `validate`, and `reproduce-paper`.
//!
//! Every failure prints one line per problem on stderr, prefixed
//! `error[<code>]:`, and exits nonzero.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::metrics::{self, OverheadReport};
use crate::scenario::{ScenarioConfig, ScenarioError};
use crate::simnet::World;

/// The two-mobile comparison scenario shipped with the binary.
pub const COMPARISON_SCENARIO: &str = include_str!("../scenarios/comparison.toml");

#[derive(Debug, Parser)]
#[command(
    name = "mip6sim",
    version,
    about = "Mobile IPv6 routing overhead simulator"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario file to quiescence.
    Run {
        scenario: PathBuf,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Check a scenario file without running it.
    Validate {
        scenario: PathBuf,
        #[arg(long)]
        mtu: Option<usize>,
    },
    /// Run the built-in four-mechanism comparison.
    ReproducePaper {
        #[command(flatten)]
        output: OutputArgs,
    },
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    /// Override the scenario MTU.
    #[arg(long)]
    pub mtu: Option<usize>,
    /// Write line-delimited JSON trace records here.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    pub format: Format,
    /// Override the payload seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Csv,
}

/// A failure with a stable machine-readable code.
#[derive(Debug)]
pub struct Failure {
    lines: Vec<(String, String)>,
}

impl Failure {
    fn new(code: &str, message: impl Into<String>) -> Self {
        Failure {
            lines: vec![(code.to_string(), message.into())],
        }
    }

    fn scenario(path: &Path, err: ScenarioError) -> Self {
        match err {
            ScenarioError::Parse {
                line,
                column,
                message,
            } => Failure::new(
                "parse-error",
                format!("{}:{line}:{column}: {}", path.display(), message.trim()),
            ),
            ScenarioError::Invalid(diagnostics) => Failure {
                lines: diagnostics
                    .into_iter()
                    .map(|d| ("config-invalid".to_string(), d.to_string()))
                    .collect(),
            },
        }
    }

    fn print(&self, err: &mut dyn Write) {
        for (code, message) in &self.lines {
            let _ = writeln!(err, "error[{code}]: {message}");
        }
    }
}

pub fn main_with_args<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            if code == 0 {
                let _ = write!(out, "{e}");
            } else {
                let first = e.to_string();
                let first = first.lines().next().unwrap_or("invalid arguments");
                let _ = writeln!(err, "error[usage]: {}", first.trim_start_matches("error: "));
            }
            return code;
        }
    };
    match execute(cli.command, out, err) {
        Ok(()) => 0,
        Err(failure) => {
            failure.print(err);
            1
        }
    }
}

fn execute(command: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), Failure> {
    match command {
        Command::Run { scenario, output } => {
            let config = load(&scenario, output.mtu, output.seed)?;
            cmd_run(&scenario, &config, &output, out, err)
        }
        Command::Validate { scenario, mtu } => cmd_validate(&scenario, mtu, out),
        Command::ReproducePaper { output } => {
            let config = comparison_scenario(output.mtu, output.seed)?;
            cmd_run(Path::new("comparison.toml"), &config, &output, out, err)
        }
    }
}

fn load(path: &Path, mtu: Option<usize>, seed: Option<u64>) -> Result<ScenarioConfig, Failure> {
    let text = fs::read_to_string(path).map_err(|e| {
        let code = if e.kind() == std::io::ErrorKind::NotFound {
            "file-not-found"
        } else {
            "io"
        };
        Failure::new(code, format!("{}: {e}", path.display()))
    })?;
    let mut config = ScenarioConfig::parse(&text).map_err(|e| Failure::scenario(path, e))?;
    apply_overrides(&mut config, mtu, seed);
    Ok(config)
}

fn apply_overrides(config: &mut ScenarioConfig, mtu: Option<usize>, seed: Option<u64>) {
    if let Some(mtu) = mtu {
        config.mtu = mtu;
    }
    if let Some(seed) = seed {
        config.seed = seed;
    }
}

/// The bundled comparison scenario with optional overrides.
pub fn comparison_scenario(
    mtu: Option<usize>,
    seed: Option<u64>,
) -> Result<ScenarioConfig, Failure> {
    let mut config = ScenarioConfig::parse(COMPARISON_SCENARIO).expect("bundled scenario parses");
    apply_overrides(&mut config, mtu, seed);
    Ok(config)
}

/// Result of running every variant of a scenario.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub rows: Vec<OverheadReport>,
    pub trace_jsonl: String,
}

/// Validates, runs each variant to quiescence, and collects report rows and
/// the concatenated trace.
pub fn run_scenario(config: &ScenarioConfig) -> Result<RunOutput, Failure> {
    let diagnostics = config.validate();
    if !diagnostics.is_empty() {
        return Err(Failure::scenario(
            Path::new(""),
            ScenarioError::Invalid(diagnostics),
        ));
    }
    let mut rows = Vec::new();
    let mut trace_jsonl = String::new();
    for variant in config.variants() {
        let mut world = World::build(&variant).map_err(|e| Failure::scenario(Path::new(""), e))?;
        world
            .run_until_quiescent(variant.horizon)
            .map_err(|e| Failure::new("horizon-exceeded", e.to_string()))?;
        trace_jsonl.push_str(&world.trace_jsonl());
        rows.extend(metrics::reports_for_world(&world, variant.mechanism));
    }
    rows.sort_by_key(|r| r.mechanism);
    Ok(RunOutput { rows, trace_jsonl })
}

fn cmd_run(
    path: &Path,
    config: &ScenarioConfig,
    output: &OutputArgs,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<(), Failure> {
    let diagnostics = config.validate();
    if !diagnostics.is_empty() {
        return Err(Failure::scenario(path, ScenarioError::Invalid(diagnostics)));
    }
    let result = run_scenario(config)?;

    if let Some(trace_path) = &output.trace {
        write_file(trace_path, &result.trace_jsonl)?;
    }
    let report = match output.format {
        Format::Table => metrics::render_table(&result.rows),
        Format::Csv => {
            let notes = metrics::render_notes(&result.rows);
            if !notes.is_empty() {
                let _ = write!(err, "{notes}");
            }
            metrics::render_csv(&result.rows)
        }
    };
    match &output.report {
        Some(report_path) => write_file(report_path, &report),
        None => out
            .write_all(report.as_bytes())
            .map_err(|e| Failure::new("io", format!("stdout: {e}"))),
    }
}

fn cmd_validate(path: &Path, mtu: Option<usize>, out: &mut dyn Write) -> Result<(), Failure> {
    let config = load(path, mtu, None)?;
    let diagnostics = config.validate();
    if !diagnostics.is_empty() {
        return Err(Failure::scenario(path, ScenarioError::Invalid(diagnostics)));
    }
    let _ = writeln!(out, "ok");
    Ok(())
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| Failure::new("io", format!("{}: {e}", path.display())))
}
