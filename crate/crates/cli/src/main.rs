use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dtas_core::config::{default_config_text, ConfigFile};
use dtas_core::report::{
    emit_plot_data, read_rows_file, rows_from_runs, summarize, write_rows_file, write_summary,
    Summary,
};
use dtas_core::sim::{run_labels, scenario_variants, Scenario, ScenarioConfig, SizedWeights};

#[derive(Parser)]
#[command(
    name = "dtas",
    version,
    about = "Distributed task allocation experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write results.csv, summary.json and series/.
    Run(RunArgs),
    /// Summarise an existing results.csv.
    Summarize {
        csv: PathBuf,
        /// Also write summary.json and series/ here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the default configuration of every scenario.
    Defaults,
}

#[derive(clap::Args)]
struct RunArgs {
    /// stable, exploration, volatile or large.
    #[arg(long)]
    scenario: String,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// TOML file with a table per scenario.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Only run these labels.
    #[arg(long, value_delimiter = ',')]
    labels: Option<Vec<String>>,
    #[arg(long)]
    parents: Option<usize>,
    /// Child count; for the large scenario, the list of sizes to sweep.
    #[arg(long, value_delimiter = ',')]
    children: Option<Vec<usize>>,
    /// Rounds per parent per episode.
    #[arg(long)]
    budget: Option<usize>,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl Failure {
    fn config(e: impl std::fmt::Display) -> Self {
        Failure::Config(e.to_string())
    }
    fn runtime(e: impl std::fmt::Display) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Summarize { csv, out } => summarize_file(&csv, out.as_deref()),
        Command::Defaults => {
            print!("{}", default_config_text());
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("config error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}

fn build_config(args: &RunArgs) -> Result<ScenarioConfig, Failure> {
    let scenario = Scenario::parse(&args.scenario)
        .ok_or_else(|| Failure::Config(format!("unknown scenario `{}`", args.scenario)))?;
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
            ConfigFile::parse(&text)
                .and_then(|f| f.scenario(scenario))
                .map_err(Failure::config)?
        }
        None => ScenarioConfig::for_scenario(scenario),
    };
    if let Some(v) = args.runs {
        cfg.runs = v;
    }
    if let Some(v) = args.episodes {
        cfg.episodes = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.parents {
        cfg.parents = v;
    }
    if let Some(v) = args.budget {
        cfg.step_budget = v;
    }
    if let Some(sizes) = &args.children {
        if scenario == Scenario::Large {
            cfg.large_sizes = sizes.iter().map(|&n| sized(&cfg.large_sizes, n)).collect();
        } else if let [n] = sizes.as_slice() {
            cfg.children = *n;
        } else {
            return Err(Failure::Config(
                "--children takes one value outside the large scenario".into(),
            ));
        }
    }
    cfg.validate().map_err(Failure::config)?;
    if let Some(labels) = &args.labels {
        let known: Vec<String> = scenario_variants(&cfg)
            .into_iter()
            .map(|v| v.label)
            .collect();
        if let Some(l) = labels.iter().find(|l| !known.contains(l)) {
            return Err(Failure::Config(format!(
                "unknown label `{l}` for {}; expected one of {}",
                scenario.name(),
                known.join(", ")
            )));
        }
    }
    Ok(cfg)
}

/// Weights for a large-system size: those of the largest configured size
/// not above `n`, else the smallest.
fn sized(configured: &[SizedWeights], n: usize) -> SizedWeights {
    let pick = configured
        .iter()
        .filter(|s| s.children <= n)
        .max_by_key(|s| s.children)
        .or_else(|| configured.iter().min_by_key(|s| s.children));
    match pick {
        Some(s) => SizedWeights { children: n, ..*s },
        None => SizedWeights {
            children: n,
            link: 0.1,
            info: 0.2,
        },
    }
}

fn run(args: RunArgs) -> Result<(), Failure> {
    let cfg = build_config(&args)?;
    eprintln!(
        "running {} ({} runs x {} episodes, seed {})",
        cfg.scenario.name(),
        cfg.runs,
        cfg.episodes,
        cfg.seed
    );
    let results = run_labels(&cfg, args.labels.as_deref()).map_err(Failure::runtime)?;
    let rows = rows_from_runs(cfg.scenario, cfg.seed, &results);
    fs::create_dir_all(&args.out).map_err(Failure::runtime)?;
    write_rows_file(&args.out.join("results.csv"), &rows).map_err(Failure::runtime)?;
    let summary = summarize(&rows).map_err(Failure::runtime)?;
    write_summary(&args.out.join("summary.json"), &summary).map_err(Failure::runtime)?;
    emit_plot_data(&rows, &args.out).map_err(Failure::runtime)?;
    print_summary(&summary);
    eprintln!("wrote {}", args.out.display());
    Ok(())
}

fn summarize_file(csv: &Path, out: Option<&Path>) -> Result<(), Failure> {
    let rows = read_rows_file(csv).map_err(Failure::runtime)?;
    let summary = summarize(&rows).map_err(Failure::runtime)?;
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(Failure::runtime)?;
        write_summary(&dir.join("summary.json"), &summary).map_err(Failure::runtime)?;
        emit_plot_data(&rows, dir).map_err(Failure::runtime)?;
    }
    print_summary(&summary);
    Ok(())
}

fn print_summary(s: &Summary) {
    println!(
        "{} final episode {} (baseline {})",
        s.scenario.name(),
        s.final_episode,
        s.baseline
    );
    println!(
        "{:<16} {:>5} {:>8} {:>7} {:>8} {:>8} {:>8} {:>8} {:>8} {:>7} {:>8}",
        "label", "n", "mean", "std", "min", "p25", "p50", "p75", "max", "u/u*", "vs base"
    );
    for (label, l) in &s.labels {
        let u = &l.utility;
        let change = l
            .change_vs_baseline
            .map_or_else(|| "-".to_string(), |c| format!("{c:+.1}%"));
        println!(
            "{:<16} {:>5} {:>8.3} {:>7.3} {:>8.3} {:>8.3} {:>8.3} {:>8.3} {:>8.3} {:>7.3} {:>8}",
            label, u.count, u.mean, u.std, u.min, u.p25, u.p50, u.p75, u.max, l.optimality, change
        );
    }
}
