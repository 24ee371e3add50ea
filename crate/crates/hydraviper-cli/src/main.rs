//! Experiment CLI: runs configured experiments across seeds, sweeps one
//! hyperparameter, enumerates the ablation grid, and inspects serialized
//! trees.
//!
//! Exit codes: 0 on success, 2 for usage and configuration problems (bad
//! paths, malformed JSON, unknown keys, bad overrides), 1 for runtime
//! failures (reported with the pipeline stage that failed).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use hydraviper::dtree::parse_tree;
use hydraviper::pipeline::{
    ablation_grid, run_experiment, ExperimentConfig, PipelineError, PreparedDynamics, RunReport,
};

#[derive(Parser)]
#[command(name = "hydraviper", version, about = "Coordinated decision-tree policy extraction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured experiment over its seeds.
    Run(RunArgs),
    /// Re-run the experiment for each value of one hyperparameter.
    Sweep(SweepArgs),
    /// Run all eight ablation-flag combinations.
    Ablate(RunArgs),
    /// Pretty-print a serialized decision-tree file.
    InspectTree {
        #[arg(long)]
        file: PathBuf,
    },
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Run a single seed instead of the config's seed list.
    #[arg(long)]
    seed: Option<u64>,
    /// Dotted-path overrides applied to the config document, e.g.
    /// `max_depth=3` or `clustering.l=2`.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory (falls back to HYDRAVIPER_OUT_DIR, then the
    /// config's output_dir).
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Also write the aggregated dataset as TSV per seed.
    #[arg(long)]
    dump_dataset: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Config key to vary (dotted path).
    #[arg(long)]
    param: String,
    /// Comma-separated values for the swept key.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<String>,
}

/// Usage-level failure (exit 2) as opposed to a runtime failure (exit 1).
struct UsageError(String);

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => cmd_run(&args),
        Command::Sweep(args) => cmd_sweep(&args),
        Command::Ablate(args) => cmd_ablate(&args),
        Command::InspectTree { file } => cmd_inspect_tree(&file),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

enum CliError {
    Usage(String),
    Runtime(String),
}

impl From<UsageError> for CliError {
    fn from(e: UsageError) -> Self {
        CliError::Usage(e.0)
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Config(msg) => CliError::Usage(format!("configuration: {msg}")),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

/// Loads the config document and applies overrides before deserializing,
/// so unknown keys and type mismatches surface as usage errors.
fn load_config(path: &Path, overrides: &[String]) -> Result<ExperimentConfig, UsageError> {
    let text = fs::read_to_string(path)
        .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
    let mut doc: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| UsageError(format!("config is not valid JSON: {e}")))?;
    for entry in overrides {
        apply_override(&mut doc, entry)?;
    }
    serde_json::from_value(doc).map_err(|e| UsageError(format!("bad config: {e}")))
}

fn apply_override(doc: &mut serde_json::Value, entry: &str) -> Result<(), UsageError> {
    let (path, raw) = entry
        .split_once('=')
        .ok_or_else(|| UsageError(format!("override '{entry}' is not KEY=VALUE")))?;
    let value = parse_override_value(raw);
    let mut node = doc;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| UsageError(format!("override path '{path}' crosses a non-object")))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj
            .entry(part.to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    Ok(())
}

fn parse_override_value(raw: &str) -> serde_json::Value {
    if let Ok(v) = raw.parse::<i64>() {
        return serde_json::Value::from(v);
    }
    if let Ok(v) = raw.parse::<f64>() {
        return serde_json::Value::from(v);
    }
    match raw {
        "true" => serde_json::Value::Bool(true),
        "false" => serde_json::Value::Bool(false),
        _ => serde_json::Value::String(raw.to_string()),
    }
}

fn output_dir(args: &RunArgs, cfg: &ExperimentConfig) -> PathBuf {
    args.out_dir
        .clone()
        .or_else(|| std::env::var("HYDRAVIPER_OUT_DIR").ok().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(&cfg.output_dir))
}

fn seeds_for(args: &RunArgs, cfg: &ExperimentConfig) -> Vec<u64> {
    match args.seed {
        Some(seed) => vec![seed],
        None => cfg.seeds.clone(),
    }
}

/// Runs every seed in parallel against shared prepared dynamics, keeping
/// report order aligned with the seed list.
fn run_seeds(
    cfg: &ExperimentConfig,
    prep: &PreparedDynamics,
    seeds: &[u64],
    dump_dir: Option<&Path>,
) -> Result<Vec<RunReport>, CliError> {
    let reports: Vec<Result<RunReport, PipelineError>> = seeds
        .par_iter()
        .map(|&seed| {
            let dump = dump_dir.map(|d| d.join(format!("dataset_dump_seed{seed}.tsv")));
            run_experiment(cfg, seed, prep, dump.as_deref())
        })
        .collect();
    reports
        .into_iter()
        .map(|r| r.map_err(CliError::from))
        .collect()
}

fn write_lines(path: &Path, header: &str, rows: &[String]) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(out, "{header}")?;
    for row in rows {
        writeln!(out, "{row}")?;
    }
    Ok(())
}

fn write_run_outputs(dir: &Path, reports: &[RunReport]) -> Result<(), CliError> {
    let report_rows: Vec<String> = reports.iter().flat_map(|r| r.csv_rows()).collect();
    write_lines(&dir.join("report.csv"), RunReport::csv_header(), &report_rows)?;

    let timing_rows: Vec<String> = reports.iter().map(|r| r.timings_csv_row()).collect();
    write_lines(
        &dir.join("timings.csv"),
        RunReport::timings_csv_header(),
        &timing_rows,
    )?;

    let ucb_rows: Vec<String> = reports.iter().flat_map(|r| r.ucb_csv_rows()).collect();
    write_lines(&dir.join("ucb_log.csv"), RunReport::ucb_csv_header(), &ucb_rows)?;

    for report in reports {
        for (agent, text) in report.tree_texts.iter().enumerate() {
            fs::write(
                dir.join(format!("tree_seed{}_agent{agent}.txt", report.seed)),
                text,
            )?;
        }
        if let Some(dump) = &report.agent_graph_dump {
            fs::write(dir.join(format!("agent_graph_seed{}.txt", report.seed)), dump)?;
        }
    }
    Ok(())
}

fn cmd_run(args: &RunArgs) -> Result<(), CliError> {
    let cfg = load_config(&args.config, &args.overrides)?;
    cfg.validate()?;
    let dir = output_dir(args, &cfg);
    fs::create_dir_all(&dir)?;
    let seeds = seeds_for(args, &cfg);
    let prep = PreparedDynamics::build(&cfg)?;
    let reports = run_seeds(&cfg, &prep, &seeds, args.dump_dataset.then_some(dir.as_path()))?;
    write_run_outputs(&dir, &reports)?;
    for report in &reports {
        for team in &report.teams {
            println!(
                "seed {} team {} ({}): mean return {:.4}, picked iteration {}",
                report.seed,
                team.team,
                report.baseline,
                team.eval_mean_return,
                team.selected_iteration
            );
        }
    }
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> Result<(), CliError> {
    let base_cfg = load_config(&args.run.config, &args.run.overrides)?;
    let dir = output_dir(&args.run, &base_cfg);
    fs::create_dir_all(&dir)?;

    let header = format!("swept_param,swept_value,{}", RunReport::csv_header());
    let mut rows = Vec::new();
    for value in &args.values {
        let mut overrides = args.run.overrides.clone();
        overrides.push(format!("{}={}", args.param, value));
        let cfg = load_config(&args.run.config, &overrides)?;
        cfg.validate()?;
        let seeds = seeds_for(&args.run, &cfg);
        let prep = PreparedDynamics::build(&cfg)?;
        let reports = run_seeds(&cfg, &prep, &seeds, None)?;
        for report in &reports {
            for row in report.csv_rows() {
                rows.push(format!("{},{},{}", args.param, value, row));
            }
        }
    }
    write_lines(&dir.join("sweep.csv"), &header, &rows)?;
    println!("swept {} over {} values -> {}", args.param, args.values.len(), dir.join("sweep.csv").display());
    Ok(())
}

fn cmd_ablate(args: &RunArgs) -> Result<(), CliError> {
    let base_cfg = load_config(&args.config, &args.overrides)?;
    base_cfg.validate()?;
    let dir = output_dir(args, &base_cfg);
    fs::create_dir_all(&dir)?;
    let seeds = seeds_for(args, &base_cfg);
    let prep = PreparedDynamics::build(&base_cfg)?;

    let header = format!(
        "disable_cq,disable_tra,disable_vrucb,{}",
        RunReport::csv_header()
    );
    let mut rows = Vec::new();
    for flags in ablation_grid() {
        let mut cfg = base_cfg.clone();
        cfg.ablation = flags;
        let reports = run_seeds(&cfg, &prep, &seeds, None)?;
        for report in &reports {
            for row in report.csv_rows() {
                rows.push(format!(
                    "{},{},{},{}",
                    flags.disable_cq as u8, flags.disable_tra as u8, flags.disable_vrucb as u8, row
                ));
            }
        }
    }
    write_lines(&dir.join("ablate.csv"), &header, &rows)?;
    println!("ablation grid written to {}", dir.join("ablate.csv").display());
    Ok(())
}

fn cmd_inspect_tree(file: &Path) -> Result<(), CliError> {
    let text = fs::read_to_string(file)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", file.display())))?;
    let parsed = parse_tree(&text).map_err(|e| CliError::Runtime(e.to_string()))?;
    let max_feature = parsed
        .feature_names
        .iter()
        .map(|(i, _)| *i)
        .max()
        .unwrap_or(0);
    let mut names = vec![String::new(); max_feature + 1];
    for (i, name) in &parsed.feature_names {
        names[*i] = name.clone();
    }
    let named = !parsed.feature_names.is_empty();
    print_node(&parsed.root, &names, named, 0);
    Ok(())
}

fn print_node(node: &hydraviper::dtree::TreeNode, names: &[String], named: bool, indent: usize) {
    let pad = "  ".repeat(indent);
    match node {
        hydraviper::dtree::TreeNode::Leaf { action } => {
            println!("{pad}-> action {action}");
        }
        hydraviper::dtree::TreeNode::Split {
            feature,
            threshold,
            left,
            right,
        } => {
            let label = if named && !names[*feature].is_empty() {
                names[*feature].clone()
            } else {
                format!("f{feature}")
            };
            println!("{pad}if {label} <= {threshold:?}:");
            print_node(left, names, named, indent + 1);
            println!("{pad}else:");
            print_node(right, names, named, indent + 1);
        }
    }
}
