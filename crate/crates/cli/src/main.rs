use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ce_core::analysis::{brute_force_optimum, truncated_expected_length, OracleDecision};
use ce_core::experiment::{
    run_experiment, ExperimentKind, ExperimentResults, ExperimentSpec, OUTPUT_ROOT_ENV,
};
use ce_core::problems::{example1, example2, random_problem, Problem, SimplexMode};
use ce_core::report::fmt_sig6;
use ce_core::CeError;

#[derive(Parser)]
#[command(name = "ce", version, about = "Cross-entropy optimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment from a spec file, or by experiment name with defaults.
    Run {
        /// Spec file (`key = value` lines) or an experiment name such as `benchmark`.
        spec: String,
        /// Override a spec field, e.g. `--set n_trials=200`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Solve a problem file exactly by enumeration.
    Oracle { problem_file: PathBuf },
    /// Evaluate closed-form quantities.
    Formula {
        #[command(subcommand)]
        formula: Formula,
    },
    /// Print a problem in the problem-file format.
    Problem {
        /// example1, example2 or random
        kind: String,
        #[arg(long, default_value_t = 100)]
        n_states: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Subcommand)]
enum Formula {
    /// Expected length of the stopping law conditioned on t <= horizon.
    ExpectedLength {
        #[arg(long)]
        lambda: f64,
        #[arg(long)]
        horizon: u64,
    },
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<CeError> for Failure {
    fn from(e: CeError) -> Self {
        match e {
            CeError::Parse(_) | CeError::InvalidParams(_) => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn load_spec(arg: &str, overrides: &[String]) -> Result<ExperimentSpec, Failure> {
    let overrides = overrides
        .iter()
        .map(|o| {
            o.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| Failure::Usage(format!("override '{o}' is not KEY=VALUE")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let text = if Path::new(arg).is_file() {
        fs::read_to_string(arg).map_err(|e| Failure::Runtime(format!("{arg}: {e}")))?
    } else if arg.parse::<ExperimentKind>().is_ok() {
        format!("experiment = {arg}\n")
    } else {
        return Err(Failure::Usage(format!(
            "'{arg}' is neither a spec file nor an experiment name"
        )));
    };
    let mut spec = ExperimentSpec::parse(&text, &overrides)?;
    let root = std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from);
    spec.resolve_output(root.as_deref());
    Ok(spec)
}

fn run(arg: &str, overrides: &[String]) -> Result<(), Failure> {
    let spec = load_spec(arg, overrides)?;
    let report = run_experiment(&spec)?;
    match &report.results {
        ExperimentResults::Benchmark(summary) => {
            println!(
                "{:<16} {:>10} {:>10} {:>10} {:>7}",
                "method", "mean", "variance", "std_dev", "trials"
            );
            for m in &summary.methods {
                println!(
                    "{:<16} {:>10} {:>10} {:>10} {:>7}",
                    m.method,
                    fmt_sig6(m.mean),
                    fmt_sig6(m.variance),
                    fmt_sig6(m.std_dev),
                    m.trials
                );
            }
        }
        ExperimentResults::Runs(set) => {
            println!(
                "{} ({} runs): mean gain {}, mean optimal percentage {}, variance {}",
                set.method.label(),
                set.percentage.count,
                fmt_sig6(set.gain.mean),
                fmt_sig6(set.percentage.mean),
                fmt_sig6(set.percentage.variance)
            );
        }
    }
    println!("artifacts in {}", report.output_dir.display());
    if report.succeeded() {
        Ok(())
    } else {
        Err(Failure::Runtime(format!(
            "{} run(s) failed; see manifest.json",
            report.manifest.errors.len()
        )))
    }
}

fn oracle(path: &Path) -> Result<(), Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
    let problem = Problem::from_text(&text)?;
    let optimum = brute_force_optimum(&problem);
    match optimum.decision {
        OracleDecision::Single(d) => println!("decision {d}"),
        OracleDecision::PerCondition(rule) => {
            for (x, d) in rule.iter().enumerate() {
                println!("condition {x} -> decision {d}");
            }
        }
    }
    println!("gain {}", fmt_sig6(optimum.gain));
    Ok(())
}

fn print_problem(kind: &str, n_states: usize, seed: u64) -> Result<(), Failure> {
    let problem = match kind {
        "example1" => example1(),
        "example2" => example2(),
        "random" => {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            random_problem(n_states, SimplexMode::Uniform, &mut rng)?.with_seed(seed)
        }
        other => {
            return Err(Failure::Usage(format!(
                "unknown problem '{other}' (example1, example2, random)"
            )))
        }
    };
    print!("{}", problem.to_text());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run { spec, overrides } => run(&spec, &overrides),
        Command::Oracle { problem_file } => oracle(&problem_file),
        Command::Formula {
            formula: Formula::ExpectedLength { lambda, horizon },
        } => {
            if !(0.0..=1.0).contains(&lambda) || horizon == 0 {
                Err(Failure::Usage(
                    "need lambda in [0, 1] and horizon >= 1".into(),
                ))
            } else {
                println!("{}", fmt_sig6(truncated_expected_length(lambda, horizon)));
                Ok(())
            }
        }
        Command::Problem {
            kind,
            n_states,
            seed,
        } => print_problem(&kind, n_states, seed),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
