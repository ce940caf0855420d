//! Command-line entry point: single-run verification, suite benchmarks,
//! the epsilon binary search, and suite generation.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use verinet::harness::{
    epsilon_search, gen_suite, load_suite, run_suite, write_csv, ResultJson, SuiteDims,
    EPSILON_BUDGET, EPSILON_HI, SUITE_TIMEOUT_SECONDS,
};
use verinet::relax::Backend;
use verinet::search::{run_strategy, SearchConfig, Strategy};
use verinet::spec::{load_spec, VerificationProblem};

#[derive(Parser)]
#[command(name = "verinet", about = "Branch-and-bound robustness verifier for ReLU networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct SearchArgs {
    /// Wall-clock budget per run, in seconds.
    #[arg(long, default_value_t = 1000.0)]
    timeout: f64,
    /// Depth/p-hat blend of the suspiciousness score.
    #[arg(long, default_value_t = 0.5)]
    lambda: f64,
    /// Geometric cooling factor of the annealing schedule.
    #[arg(long, default_value_t = 0.99)]
    alpha: f64,
    /// Initial annealing temperature.
    #[arg(long, default_value_t = 1.0)]
    tmax: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Relaxation backend: `backsub` or `lp`.
    #[arg(long, default_value = "lp", value_parser = parse_backend)]
    backend: Backend,
}

impl SearchArgs {
    fn config(&self) -> SearchConfig {
        SearchConfig {
            lambda: self.lambda,
            t_max: self.tmax,
            alpha: self.alpha,
            timeout_seconds: self.timeout,
            seed: self.seed,
            backend: self.backend,
        }
    }
}

fn parse_backend(s: &str) -> Result<Backend, String> {
    match s {
        "backsub" => Ok(Backend::BackSub),
        "lp" => Ok(Backend::TriangleLp),
        other => Err(format!("unknown backend `{other}` (expected backsub|lp)")),
    }
}

#[derive(Subcommand)]
enum Command {
    /// Verify one model against one spec document.
    Verify {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        spec: PathBuf,
        /// Search strategy: bab, greedy, or sa.
        #[arg(long, default_value = "bab")]
        strategy: Strategy,
        #[command(flatten)]
        search: SearchArgs,
        /// Write the result JSON here in addition to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every suite instance under each strategy and emit a CSV.
    Bench {
        #[arg(long)]
        suite: PathBuf,
        /// Comma-separated strategies, e.g. `bab,greedy,sa`.
        #[arg(long, default_value = "bab,greedy,sa", value_delimiter = ',')]
        strategies: Vec<Strategy>,
        /// Seeds per (instance, strategy) combination.
        #[arg(long, default_value_t = 1)]
        repeats: u64,
        #[arg(long, default_value_t = SUITE_TIMEOUT_SECONDS)]
        timeout: f64,
        #[arg(long)]
        csv: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "lp", value_parser = parse_backend)]
        backend: Backend,
    },
    /// Binary-search a perturbation radius with a non-trivial BaB tree.
    EpsilonSearch {
        #[arg(long)]
        model: PathBuf,
        /// JSON array with the reference input.
        #[arg(long)]
        center: PathBuf,
        #[arg(long)]
        label: usize,
        #[arg(long)]
        classes: usize,
        #[arg(long, default_value_t = 0.0)]
        lo: f64,
        #[arg(long, default_value_t = EPSILON_HI)]
        hi: f64,
        #[arg(long, default_value_t = EPSILON_BUDGET)]
        budget: u32,
        #[arg(long, default_value_t = SUITE_TIMEOUT_SECONDS)]
        timeout: f64,
    },
    /// Generate a random instance suite with oracle ground truth.
    GenSuite {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        max_inputs: usize,
        #[arg(long, default_value_t = 2)]
        max_layers: usize,
        #[arg(long, default_value_t = 8)]
        max_relus: usize,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Verify { model, spec, strategy, search, out } => {
            let net = verinet::model::load_network(
                &fs::read(&model).with_context(|| format!("reading {}", model.display()))?,
            )?;
            let doc =
                load_spec(&fs::read(&spec).with_context(|| format!("reading {}", spec.display()))?)?;
            let (box_, objectives) = doc.compile()?;
            let problem = VerificationProblem::new(net, box_, objectives, model.display().to_string())?;
            let outcome = run_strategy(&problem, strategy, &search.config())?;
            let result = ResultJson::from_verdict(&outcome.verdict);
            let rendered = serde_json::to_string_pretty(&result)?;
            println!("{rendered}");
            if let Some(path) = out {
                fs::write(&path, rendered.as_bytes())
                    .with_context(|| format!("writing {}", path.display()))?;
            }
        }
        Command::Bench { suite, strategies, repeats, timeout, csv, seed, backend } => {
            if strategies.is_empty() {
                bail!("at least one strategy required");
            }
            let instances = load_suite(&suite)?;
            let config = SearchConfig {
                timeout_seconds: timeout,
                seed,
                backend,
                ..SearchConfig::default()
            };
            let report = run_suite(&instances, &strategies, &config, repeats)?;
            write_csv(&csv, &report.records)?;
            let runs_dir = csv.with_extension("runs");
            fs::create_dir_all(&runs_dir)?;
            for (instance, result) in &report.run_results {
                let name = format!("{}_{}_{}.json", instance, result.strategy, result.seed);
                fs::write(runs_dir.join(name), serde_json::to_vec_pretty(result)?)?;
            }
            fs::write(
                csv.with_extension("summary.json"),
                serde_json::to_vec_pretty(&report)?,
            )?;
            for (strategy, solved) in &report.solved {
                println!("{strategy}: solved {solved}/{}", instances.len() * repeats.max(1) as usize);
            }
        }
        Command::EpsilonSearch { model, center, label, classes, lo, hi, budget, timeout } => {
            let net = verinet::model::load_network(&fs::read(&model)?)?;
            let center: Vec<f64> = serde_json::from_slice(&fs::read(&center)?)?;
            let config = SearchConfig { timeout_seconds: timeout, ..SearchConfig::default() };
            let result = epsilon_search(
                &net,
                &center,
                label,
                classes,
                Some((0.0, 1.0)),
                lo,
                hi,
                budget,
                &config,
            )?;
            println!("{}", serde_json::to_string_pretty(&result)?);
        }
        Command::GenSuite { seed, count, out, max_inputs, max_layers, max_relus } => {
            let dims = SuiteDims { max_inputs, max_layers, max_relus };
            let config = SearchConfig {
                timeout_seconds: SUITE_TIMEOUT_SECONDS,
                ..SearchConfig::default()
            };
            let records = gen_suite(&out, seed, count, &dims, &config)?;
            println!("generated {} instances under {}", records.len(), out.display());
        }
    }
    Ok(())
}
