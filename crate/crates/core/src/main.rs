use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use bayestl::bernoulli::{exact_expected_regret, regret_without_source, ExactPrior, FreeMarginal, SourceMode};
use bayestl::bounds::{otl_asymptote_general, FisherBlocks};
use bayestl::harness::runner::prior_density_at_truth;
use bayestl::harness::{catalog, emit_csv, load_config, run_scenario, Experiment};
use bayestl::scenario::SourceSpec;

#[derive(Parser)]
#[command(name = "bayestl", version, about = "Bayesian transfer-learning regret experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write the mean regret curves as CSV.
    Run {
        #[arg(long, conflicts_with = "scenario", required_unless_present = "scenario")]
        config: Option<PathBuf>,
        /// Built-in scenario name (see list-scenarios).
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        threads: Option<usize>,
        /// Base seed; trial i uses seed + i.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        repeats: Option<usize>,
    },
    /// Print the asymptotic regret decomposition for a scenario.
    Bounds {
        #[arg(long, conflicts_with = "scenario", required_unless_present = "scenario")]
        config: Option<PathBuf>,
        #[arg(long)]
        scenario: Option<String>,
    },
    /// Exact expected regret of a Bernoulli mixture.
    BernoulliExact {
        #[arg(long)]
        theta_t: f64,
        #[arg(long)]
        theta_s: f64,
        #[arg(long, value_enum)]
        prior: PriorArg,
        /// Box half-width.
        #[arg(long)]
        c: Option<f64>,
        #[arg(long)]
        n: u64,
        /// Source sample size; omit for a known source parameter.
        #[arg(long)]
        m: Option<u64>,
    },
    /// List the built-in scenarios.
    ListScenarios,
    /// Run the built-in oracle checks.
    Selftest,
}

#[derive(Clone, Copy, ValueEnum)]
enum PriorArg {
    Sum,
    Delta,
    Box,
    /// No source, uniform prior.
    None,
}

fn load(config: Option<PathBuf>, scenario: Option<String>) -> bayestl::Result<Experiment> {
    match (config, scenario) {
        (Some(path), _) => load_config(&path),
        (None, Some(name)) => catalog::load(&name),
        (None, None) => unreachable!("clap requires one of --config and --scenario"),
    }
}

fn execute(command: Command) -> bayestl::Result<()> {
    match command {
        Command::Run { config, scenario, out, threads, seed, repeats } => {
            let mut exp = load(config, scenario)?;
            if let Some(s) = seed {
                exp.scenario.seed = s;
            }
            if let Some(r) = repeats.filter(|r| *r > 0) {
                exp.repeats = r;
            }
            let result = run_scenario(&exp, threads)?;
            for a in &result.algorithms {
                for f in &a.failures {
                    eprintln!("{} trial {} (seed {}) aborted: {}", a.label, f.trial, f.seed, f.diagnostic);
                }
                eprintln!("{}: {}/{} trials, {:.3} s per trial", a.label, a.trials.len(), exp.repeats, a.mean_seconds());
            }
            emit_csv(std::slice::from_ref(&result), &out)?;
            if !result.complete() {
                eprintln!("scenario {} completed partially", result.scenario);
            }
        }
        Command::Bounds { config, scenario } => {
            let exp = load(config, scenario)?;
            let s = &exp.scenario;
            let fisher = s.family.fisher_information(&s.theta_t)?;
            let blocks = FisherBlocks::from_matrices(&fisher, &fisher, 0)?;
            let m = match s.source {
                SourceSpec::Sample { m } => m as f64,
                _ => f64::INFINITY,
            };
            let density = prior_density_at_truth(s)?;
            let est = otl_asymptote_general(s.n.max(1) as f64, m, &blocks, s.family.dim(), 0, density)?;
            println!("scenario           {}", s.name);
            println!("n                  {}", est.n);
            println!("log_n_coefficient  {}", est.log_n_coefficient);
            println!("constant_term      {}", est.constant_term);
            println!("prior_term         {}", est.prior_term);
            println!("source_correction  {}", est.source_correction);
            println!("total              {}", est.total);
            if est.improper {
                println!("improper prior at truth");
            }
        }
        Command::BernoulliExact { theta_t, theta_s, prior, c, n, m } => {
            let mode = m.map_or(SourceMode::Saturated, SourceMode::Finite);
            let value = match prior {
                PriorArg::Sum => exact_expected_regret(theta_t, theta_s, ExactPrior::Sum, n, mode)?,
                PriorArg::Delta => exact_expected_regret(theta_t, theta_s, ExactPrior::Delta, n, mode)?,
                PriorArg::Box => {
                    let c = c.ok_or_else(|| bayestl::Error::Invalid("--c is required for the box prior".into()))?;
                    exact_expected_regret(theta_t, theta_s, ExactPrior::Box(c), n, mode)?
                }
                PriorArg::None => regret_without_source(theta_t, n, FreeMarginal::UniformBox)?,
            };
            println!("{value:.12}");
        }
        Command::ListScenarios => {
            for name in catalog::names() {
                println!("{name}");
            }
        }
        Command::Selftest => {
            let checks = bayestl::selftest::run();
            let mut failed = 0;
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
                failed += usize::from(!c.passed);
            }
            if failed > 0 {
                return Err(bayestl::Error::Invalid(format!("{failed} self-test check(s) failed")));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
