use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use tradertalk::analysis::{ClassifierRules, CompiledRules, JudgeClassifier};
use tradertalk::batch::{load_report, reanalyse, run_batch, BackendSpec, BatchOptions};
use tradertalk::llm::fingerprint_messages;
use tradertalk::model::Transcript;
use tradertalk::orchestrator::TerminationMode;
use tradertalk::report::{emit_report, summary};
use tradertalk::scenario::{render_cot_prompt, ScenarioConfig};

#[derive(Parser)]
#[command(name = "tradertalk", version, about = "Simulate bilateral gilt trading between LLM market makers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Termination {
    Rules,
    Judge,
}

#[derive(Subcommand)]
enum Command {
    /// Run a batch of simulations and write transcripts, results and metrics.
    Run {
        /// `rq1`, `rq2` or a scenario TOML file.
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        n: usize,
        /// `live`, `scripted:<script.json>` or `replay:<exchanges.jsonl>`.
        #[arg(long)]
        backend: BackendSpec,
        /// Simulations in flight (default 4 live, 16 otherwise).
        #[arg(long)]
        concurrency: Option<usize>,
        /// Seeds scripted tie-breaks; the remote model is not seeded.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Client-side request limit for the live backend.
        #[arg(long)]
        rpm: Option<u32>,
        /// Classifier rules file (defaults to the bundled rules).
        #[arg(long)]
        rules: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "rules")]
        termination: Termination,
    },
    /// Classify stored transcripts again.
    Analyze {
        #[arg(long)]
        transcripts: PathBuf,
        #[arg(long)]
        rules: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Scenario the transcripts came from (defaults to the batch manifest).
        #[arg(long)]
        scenario: Option<String>,
        /// Classify with an LLM judge on this backend instead of the rules.
        #[arg(long)]
        judge: Option<BackendSpec>,
        #[arg(long, default_value = tradertalk::scenario::DEFAULT_MODEL)]
        judge_model: String,
    },
    /// Recompute and print the metrics of a batch directory.
    Report {
        #[arg(long = "in")]
        dir: PathBuf,
        /// json, csv or both (empty means both).
        #[arg(long, default_value = "")]
        format: String,
    },
    /// Print the opening prompt an agent receives and its fingerprint.
    Prompt {
        #[arg(long)]
        scenario: String,
        /// Defaults to the initiator.
        #[arg(long)]
        agent: Option<String>,
    },
}

fn load_rules(path: Option<&Path>) -> Result<CompiledRules> {
    let rules = match path {
        Some(p) => ClassifierRules::load(p)?,
        None => ClassifierRules::default(),
    };
    Ok(rules.compile()?)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run { scenario, n, backend, concurrency, seed, out, rpm, rules, termination } => {
            let config = ScenarioConfig::resolve(&scenario)?;
            let rules = load_rules(rules.as_deref())?;
            let gateway = backend.build(seed.unwrap_or(0), rpm)?;
            let options = BatchOptions {
                n,
                concurrency: concurrency.unwrap_or_else(|| backend.default_concurrency()),
                seed,
                out_dir: out.clone(),
                rules: &rules,
                termination: match termination {
                    Termination::Rules => TerminationMode::Rules,
                    Termination::Judge => TerminationMode::Judge,
                },
            };
            let (manifest, metrics) = run_batch(&config, &gateway, &options)?;
            print!("{}", summary(Some(&manifest), &metrics));
            println!("written to {}", out.display());
            for e in &manifest.errors {
                eprintln!("run {} failed: {}", e.run_index, e.message);
            }
            Ok(if manifest.n_errored > 0 { ExitCode::from(2) } else { ExitCode::SUCCESS })
        }
        Command::Analyze { transcripts, rules, out, scenario, judge, judge_model } => {
            let rules = load_rules(rules.as_deref())?;
            let scenario = scenario.as_deref().map(ScenarioConfig::resolve).transpose()?;
            let gateway = judge.map(|spec| spec.build(0, None)).transpose()?;
            let judge = gateway.as_ref().map(|g| JudgeClassifier::new(g, judge_model));
            let metrics = reanalyse(&transcripts, scenario, &rules, judge.as_ref(), &out)?;
            print!("{}", summary(None, &metrics));
            println!("written to {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Report { dir, format } => {
            let (manifest, metrics) = load_report(&dir)?;
            emit_report(None, &metrics, &format, &dir)?;
            print!("{}", summary(manifest.as_ref(), &metrics));
            Ok(ExitCode::SUCCESS)
        }
        Command::Prompt { scenario, agent } => {
            let config = ScenarioConfig::resolve(&scenario)?;
            let profile = match &agent {
                Some(name) => config.agent(name).with_context(|| format!("no agent named {name}"))?,
                None => config.initiator(),
            };
            let messages = render_cot_prompt(profile, &config, &Transcript::new(&config.scenario_id))?;
            for m in &messages {
                println!("[{}]\n{}\n", m.role.as_str(), m.content);
            }
            println!("fingerprint {}", fingerprint_messages(&messages));
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
