//! Command-line front end: run scenarios, fuzz payloads, drive Monte Carlo
//! experiments, validate policies and inspect reports.
//!
//! Exit codes: 0 success, 1 when a scenario acceptance check or bound
//! comparison fails, 2 on usage or input parse errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use trustfabric_core::ans::AnsName;
use trustfabric_core::policy::parse_policy;
use trustfabric_sim::fuzz::{fuzz, MutationConfig, MutationOp, ALL_OPERATORS};
use trustfabric_sim::metrics::evaluate_checks;
use trustfabric_sim::montecarlo::{monte_carlo, defense_grid};
use trustfabric_sim::scenario::Scenario;
use trustfabric_sim::world::run;
use trustfabric_sim::{builtin_scenario, builtin_scenarios, RunReport};

#[derive(Parser)]
#[command(
    name = "trustfabric",
    version,
    about = "Deterministic zero-trust multi-agent security simulator",
    long_about = None
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Tabular,
}

#[derive(Args)]
struct OutputArgs {
    /// Directory for reports and exports (default: $TRUSTFABRIC_OUTPUT_DIR or ./out)
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Output format
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its report and audit export
    Run {
        /// Built-in scenario name or path to a scenario file
        #[arg(long)]
        scenario: String,
        /// Override the scenario seed
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Mutate a scenario's attacks and rank the outcomes
    Fuzz {
        /// Built-in scenario name or path to a scenario file
        #[arg(long)]
        scenario: String,
        /// Number of mutants to generate
        #[arg(long)]
        budget: u64,
        /// Comma-separated operator subset (default: all)
        #[arg(long, value_delimiter = ',')]
        operators: Vec<String>,
        /// Per-operator application probability
        #[arg(long, default_value_t = 0.5)]
        probability: f64,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Monte Carlo validation of the layered-defense bound
    Montecarlo {
        /// Base attack success probability without defenses
        #[arg(long)]
        epsilon: f64,
        /// Comma-separated per-layer detection probabilities
        #[arg(long, value_delimiter = ',')]
        detections: Vec<f64>,
        /// Number of independent trials
        #[arg(long, default_value_t = 100_000)]
        trials: u64,
        /// Root seed for trial streams
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Also run the 3x3 (epsilon x layer-count) grid
        #[arg(long, default_value_t = false)]
        grid: bool,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Parse a policy file and report rules or positioned errors
    ValidatePolicy {
        /// Path to a policy file
        #[arg(long)]
        file: PathBuf,
    },
    /// Parse an agent name and print its components
    ParseName {
        /// Name in `protocol://capability.domain.organization.version.compliance` form
        name: String,
    },
    /// Re-render a previously written report
    Report {
        /// Path to a report.json produced by `run`
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        output: OutputArgs,
    },
}

fn output_dir(args: &OutputArgs) -> PathBuf {
    args.output_dir
        .clone()
        .or_else(|| std::env::var_os("TRUSTFABRIC_OUTPUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn load_scenario(reference: &str) -> Result<Scenario, String> {
    let path = Path::new(reference);
    if path.exists() {
        return Scenario::load(path).map_err(|e| e.to_string());
    }
    if let Some(s) = builtin_scenario(reference) {
        return Ok(s);
    }
    let known: Vec<&str> = builtin_scenarios().iter().map(|(n, _)| *n).collect();
    Err(format!(
        "`{reference}` is neither a file nor a built-in scenario (built-ins: {})",
        known.join(", ")
    ))
}

fn print_report_summary(report: &RunReport) {
    println!("scenario: {} (seed {})", report.scenario, report.seed);
    println!("  ticks: {}", report.ticks);
    println!("  attack success rate: {:.4}", report.success_rate);
    println!("  persistence depth: {} sessions", report.persistence_depth);
    println!("  trigger evasion rate: {:.4}", report.trigger_evasion_rate);
    println!("  trust impact (dT): {:.4}", report.trust_impact);
    println!(
        "  availability: {:.4} ({}/{} legitimate requests)",
        report.availability.fraction,
        report.availability.legitimate_successes,
        report.availability.legitimate_requests
    );
    println!("  anomaly flags: {}", report.flags.len());
    for flag in &report.flags {
        println!("    [{:?}] t{} {}", flag.detector, flag.tick, flag.reason);
    }
}

fn cmd_run(reference: &str, seed: Option<u64>, output: &OutputArgs) -> Result<ExitCode, String> {
    let scenario = load_scenario(reference)?;
    let outcome = run(&scenario, seed).map_err(|e| e.to_string())?;
    let dir = output_dir(output);
    std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    std::fs::write(dir.join("report.json"), outcome.report.to_json()).map_err(|e| e.to_string())?;
    std::fs::write(dir.join("audit.jsonl"), &outcome.audit_export).map_err(|e| e.to_string())?;
    if output.format == Format::Tabular {
        std::fs::write(dir.join("trust_history.csv"), outcome.report.trust_history_csv())
            .map_err(|e| e.to_string())?;
    }
    print_report_summary(&outcome.report);
    println!("report written to {}", dir.display());

    let mut failed = false;
    if let Some(checks) = &scenario.checks {
        for check in evaluate_checks(&outcome.report, checks) {
            println!(
                "check {}: {} ({})",
                check.name,
                if check.passed { "PASS" } else { "FAIL" },
                check.detail
            );
            failed |= !check.passed;
        }
    }
    Ok(if failed { ExitCode::from(1) } else { ExitCode::SUCCESS })
}

fn cmd_fuzz(
    reference: &str,
    budget: u64,
    operators: &[String],
    probability: f64,
    output: &OutputArgs,
) -> Result<ExitCode, String> {
    let scenario = load_scenario(reference)?;
    let ops: Vec<MutationOp> = if operators.is_empty() {
        scenario
            .mutations
            .as_ref()
            .map(|m| m.operators.clone())
            .unwrap_or_else(|| ALL_OPERATORS.to_vec())
    } else {
        operators
            .iter()
            .map(|name| match name.as_str() {
                "encode_base64" => Ok(MutationOp::EncodeBase64),
                "whitespace_stego" => Ok(MutationOp::WhitespaceStego),
                "synonym_swap" => Ok(MutationOp::SynonymSwap),
                "trigger_delay_jitter" => Ok(MutationOp::TriggerDelayJitter),
                "payload_split_across_agents" => Ok(MutationOp::PayloadSplitAcrossAgents),
                other => Err(format!("unknown operator `{other}`")),
            })
            .collect::<Result<_, _>>()?
    };
    let config = MutationConfig { operators: ops, probability };
    let outcomes = fuzz(&scenario, &config, budget).map_err(|e| e.to_string())?;
    let dir = output_dir(output);
    std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    std::fs::write(
        dir.join("fuzz.json"),
        serde_json::to_string_pretty(&outcomes).map_err(|e| e.to_string())?,
    )
    .map_err(|e| e.to_string())?;
    println!("{} mutants ranked (most dangerous first):", outcomes.len());
    for o in outcomes.iter().take(10) {
        println!(
            "  mutant {}: succeeded={} evasion={:.2} persistence={} ops={:?}",
            o.mutant, o.succeeded, o.evasion_rate, o.persistence_depth, o.operators
        );
    }
    println!("full ranking written to {}", dir.join("fuzz.json").display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_montecarlo(
    epsilon: f64,
    detections: &[f64],
    trials: u64,
    seed: u64,
    grid: bool,
    output: &OutputArgs,
) -> Result<ExitCode, String> {
    let mut outcomes = vec![monte_carlo(seed, trials, epsilon, detections).map_err(|e| e.to_string())?];
    if grid {
        outcomes.extend(defense_grid(seed, trials).map_err(|e| e.to_string())?);
    }
    let mut all_within = true;
    for o in &outcomes {
        println!(
            "epsilon={} detections={:?}: rate={:.6} (99% ci [{:.6}, {:.6}]) bound={:.6} -> {}",
            o.epsilon,
            o.detections,
            o.rate,
            o.ci99.0,
            o.ci99.1,
            o.bound,
            if o.within_bound { "PASS" } else { "FAIL" }
        );
        all_within &= o.within_bound;
    }
    let dir = output_dir(output);
    std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    std::fs::write(
        dir.join("montecarlo.json"),
        serde_json::to_string_pretty(&outcomes).map_err(|e| e.to_string())?,
    )
    .map_err(|e| e.to_string())?;
    Ok(if all_within { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn cmd_validate_policy(file: &Path) -> Result<ExitCode, String> {
    let text = std::fs::read_to_string(file).map_err(|e| e.to_string())?;
    match parse_policy(&text) {
        Ok(rules) => {
            println!("{} rules parsed:", rules.len());
            for rule in rules {
                println!("  {} (priority {}): {}", rule.id, rule.priority, rule.source);
            }
            Ok(ExitCode::SUCCESS)
        }
        Err(e) => Err(e.to_string()),
    }
}

fn cmd_parse_name(name: &str) -> Result<ExitCode, String> {
    let parsed = AnsName::parse(name).map_err(|e| e.to_string())?;
    println!("protocol:     {}", parsed.protocol);
    println!("capability:   {}", parsed.capability);
    println!("domain:       {}", parsed.domain);
    println!("organization: {}", parsed.organization);
    println!("version:      {}", parsed.version);
    println!("compliance:   {}", parsed.compliance);
    Ok(ExitCode::SUCCESS)
}

fn cmd_report(input: &Path, output: &OutputArgs) -> Result<ExitCode, String> {
    let text = std::fs::read_to_string(input).map_err(|e| e.to_string())?;
    let report: RunReport = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    match output.format {
        Format::Text => print_report_summary(&report),
        Format::Tabular => print!("{}", report.trust_history_csv()),
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { scenario, seed, output } => cmd_run(scenario, *seed, output),
        Command::Fuzz { scenario, budget, operators, probability, output } => {
            cmd_fuzz(scenario, *budget, operators, *probability, output)
        }
        Command::Montecarlo { epsilon, detections, trials, seed, grid, output } => {
            cmd_montecarlo(*epsilon, detections, *trials, *seed, *grid, output)
        }
        Command::ValidatePolicy { file } => cmd_validate_policy(file),
        Command::ParseName { name } => cmd_parse_name(name),
        Command::Report { input, output } => cmd_report(input, output),
    };
    match result {
        Ok(code) => code,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
    }
}
