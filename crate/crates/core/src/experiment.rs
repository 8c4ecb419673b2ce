//! Config-driven experiments: the two stochastic counterexamples, the two
//! stopping-sequence schemes, a custom problem file, and the randomized
//! three-method benchmark.
//!
//! An experiment is described by a flat `key = value` file. Every key has a
//! default, so `experiment = benchmark` alone runs the full comparison
//! (100 states, N = K = 100, rho = 0.1, alpha = 0.9, R(v) = v, 1000 trials).
//!
//! Per-run seeds are derived from the master seed with [`derive_seed`].

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    brute_force_optimum, optimal_percentage, truncated_expected_length, BenchmarkSummary,
    MethodSummary, Stats, TrialRecord, VarianceMode,
};
use crate::engine::{
    run_ce, run_ce_classical, run_ce_expectation, run_ce_rejection, CERunConfig, DecisionLaw,
    ImportanceMap, RunTrace, SelectionScheme, Termination,
};
use crate::error::{CeError, Result};
use crate::families::{
    CategoricalParams, ConditionalCategoricalParams, GeometricStoppingParams, LawFamily,
};
use crate::problems::{example1, example2, random_problem, sequence_problem, Problem, SimplexMode};
use crate::report::{fmt_sig6, sig6, trace_jsonl};

/// Environment variable naming the root for relative output directories.
pub const OUTPUT_ROOT_ENV: &str = "CE_OUTPUT_ROOT";

/// Documented form of [`derive_seed`], recorded in every manifest.
pub const SEED_DERIVATION: &str = "splitmix64(master + 0x9E3779B97F4A7C15 * (index + 1))";

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of stream `index` under `master`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    splitmix64(master.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index.wrapping_add(1))))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Example1,
    Example2,
    SequenceReject,
    SequenceClassical,
    Benchmark,
    Custom,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 6] = [
        ExperimentKind::Example1,
        ExperimentKind::Example2,
        ExperimentKind::SequenceReject,
        ExperimentKind::SequenceClassical,
        ExperimentKind::Benchmark,
        ExperimentKind::Custom,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Example1 => "example1",
            ExperimentKind::Example2 => "example2",
            ExperimentKind::SequenceReject => "sequence-reject",
            ExperimentKind::SequenceClassical => "sequence-classical",
            ExperimentKind::Benchmark => "benchmark",
            ExperimentKind::Custom => "custom",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = CeError;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| CeError::Parse(format!("unknown experiment '{s}'")))
    }
}

/// The three compared CE variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Quantile selection on single-sample rewards.
    Basic,
    /// Quantile selection on shared-batch expectation estimates.
    Expectation,
    /// Smooth selection with the configured importance map.
    Smooth,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Basic, Method::Expectation, Method::Smooth];

    pub fn key(self) -> &'static str {
        match self {
            Method::Basic => "basic",
            Method::Expectation => "expectation",
            Method::Smooth => "smooth",
        }
    }

    /// Row label in summary tables.
    pub fn label(self) -> &'static str {
        match self {
            Method::Basic => "Basic CE",
            Method::Expectation => "Expectation",
            Method::Smooth => "Smooth scheme",
        }
    }

    fn stream(self) -> u64 {
        match self {
            Method::Basic => 1,
            Method::Expectation => 2,
            Method::Smooth => 3,
        }
    }
}

impl FromStr for Method {
    type Err = CeError;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|m| m.key() == s).ok_or_else(|| {
            CeError::Parse(format!("unknown method '{s}' (basic, expectation, smooth)"))
        })
    }
}

fn importance_key(map: &ImportanceMap) -> String {
    match map {
        ImportanceMap::Identity => "identity".into(),
        ImportanceMap::ShiftedIdentity => "shifted".into(),
        ImportanceMap::Offset { shift } => format!("offset:{shift}"),
        ImportanceMap::Exponential { beta } => format!("exp:{beta}"),
    }
}

fn parse_importance(s: &str) -> Result<ImportanceMap> {
    match s {
        "identity" => Ok(ImportanceMap::Identity),
        "shifted" => Ok(ImportanceMap::ShiftedIdentity),
        _ => {
            let number = |v: &str, what: &str| {
                v.parse()
                    .map_err(|_| CeError::Parse(format!("bad {what} '{v}'")))
            };
            if let Some(beta) = s.strip_prefix("exp:") {
                Ok(ImportanceMap::Exponential {
                    beta: number(beta, "exponential rate")?,
                })
            } else if let Some(shift) = s.strip_prefix("offset:") {
                Ok(ImportanceMap::Offset {
                    shift: number(shift, "offset")?,
                })
            } else {
                Err(CeError::Parse(format!(
                    "unknown importance '{s}' (identity, shifted, offset:<c>, exp:<beta>)"
                )))
            }
        }
    }
}

/// Everything needed to run and reproduce one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub experiment: ExperimentKind,
    pub n_samples: usize,
    pub k_system_samples: usize,
    pub rho: f64,
    pub alpha: f64,
    pub seed: u64,
    pub max_iters: usize,
    pub eps: f64,
    pub patience: usize,
    pub importance: ImportanceMap,
    pub floor: Option<f64>,
    /// Method used by the single-problem experiments.
    pub method: Method,
    /// Seeded repetitions of a single-problem experiment.
    pub runs: usize,
    pub horizon: u64,
    pub init_lambda: f64,
    pub problem_file: Option<PathBuf>,
    pub n_states: usize,
    pub n_trials: usize,
    pub methods: Vec<Method>,
    pub simplex: SimplexMode,
    pub variance: VarianceMode,
    pub output_dir: PathBuf,
    /// Worker threads for trials; 0 uses the available parallelism.
    pub workers: usize,
    pub write_traces: bool,
}

const KEYS: [&str; 25] = [
    "experiment",
    "n_samples",
    "k_system_samples",
    "rho",
    "alpha",
    "seed",
    "max_iters",
    "eps",
    "patience",
    "importance",
    "floor",
    "method",
    "runs",
    "horizon",
    "init_lambda",
    "problem_file",
    "n_states",
    "n_trials",
    "methods",
    "simplex",
    "variance",
    "output_dir",
    "workers",
    "write_traces",
    "scheme",
];

impl ExperimentSpec {
    /// Defaults for an experiment kind. The counterexamples run without
    /// smoothing; the benchmark and custom problems use `alpha = 0.9`.
    pub fn defaults(experiment: ExperimentKind) -> Self {
        let counterexample = !matches!(
            experiment,
            ExperimentKind::Benchmark | ExperimentKind::Custom
        );
        Self {
            experiment,
            n_samples: 100,
            k_system_samples: 100,
            rho: 0.1,
            alpha: if counterexample { 0.0 } else { 0.9 },
            seed: 2006,
            max_iters: 1000,
            eps: 1e-6,
            patience: 5,
            // shift by the lowest reward of example2 so every weight is nonnegative
            importance: if experiment == ExperimentKind::Example2 {
                ImportanceMap::Offset { shift: 2.0 }
            } else {
                ImportanceMap::Identity
            },
            floor: None,
            method: Method::Basic,
            runs: 1,
            horizon: 2,
            init_lambda: 0.5,
            problem_file: None,
            n_states: 100,
            n_trials: 1000,
            methods: Method::ALL.to_vec(),
            simplex: SimplexMode::Uniform,
            variance: VarianceMode::Population,
            output_dir: PathBuf::from(format!("results/{}", experiment.name())),
            workers: 0,
            write_traces: experiment != ExperimentKind::Benchmark,
        }
    }

    /// Parse a `key = value` spec (`#` starts a comment), then apply
    /// `overrides` in order.
    pub fn parse(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut entries: Vec<(String, String)> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CeError::Parse(format!("line {}: expected 'key = value'", lineno + 1))
            })?;
            entries.push((k.trim().to_string(), v.trim().to_string()));
        }
        entries.extend(overrides.iter().cloned());
        Self::from_entries(&entries)
    }

    pub fn from_entries(entries: &[(String, String)]) -> Result<Self> {
        for (k, _) in entries {
            if !KEYS.contains(&k.as_str()) {
                return Err(CeError::Parse(format!("unknown key '{k}'")));
            }
        }
        let kind = entries
            .iter()
            .rev()
            .find(|(k, _)| k == "experiment")
            .ok_or_else(|| CeError::Parse("missing 'experiment'".into()))?
            .1
            .parse::<ExperimentKind>()?;
        let mut spec = Self::defaults(kind);
        for (k, v) in entries {
            spec.set(k, v)?;
        }
        spec.validate()?;
        Ok(spec)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| CeError::Parse(format!("field '{key}': cannot parse '{v}'")))
        }
        match key {
            "experiment" => {}
            "n_samples" => self.n_samples = num(key, value)?,
            "k_system_samples" => self.k_system_samples = num(key, value)?,
            "rho" => self.rho = num(key, value)?,
            "alpha" => self.alpha = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "max_iters" => self.max_iters = num(key, value)?,
            "eps" => self.eps = num(key, value)?,
            "patience" => self.patience = num(key, value)?,
            "importance" => self.importance = parse_importance(value)?,
            "floor" => {
                self.floor = if value == "none" {
                    None
                } else {
                    Some(num(key, value)?)
                }
            }
            "method" => self.method = value.parse()?,
            // alias: the selection scheme of single-problem runs
            "scheme" => {
                self.method = match value {
                    "quantile" => Method::Basic,
                    "smooth" => Method::Smooth,
                    other => {
                        return Err(CeError::Parse(format!(
                            "field 'scheme': unknown scheme '{other}'"
                        )))
                    }
                }
            }
            "runs" => self.runs = num(key, value)?,
            "horizon" => self.horizon = num(key, value)?,
            "init_lambda" => self.init_lambda = num(key, value)?,
            "problem_file" => self.problem_file = (value != "none").then(|| PathBuf::from(value)),
            "n_states" => self.n_states = num(key, value)?,
            "n_trials" => self.n_trials = num(key, value)?,
            "methods" => {
                let mut methods = value
                    .split(',')
                    .map(|m| m.trim().parse())
                    .collect::<Result<Vec<Method>>>()?;
                methods.sort();
                methods.dedup();
                self.methods = methods;
            }
            "simplex" => {
                self.simplex = match value {
                    "uniform" => SimplexMode::Uniform,
                    "normalized" => SimplexMode::NormalizedComponents,
                    other => {
                        return Err(CeError::Parse(format!(
                            "field 'simplex': unknown mode '{other}'"
                        )))
                    }
                }
            }
            "variance" => {
                self.variance = match value {
                    "population" => VarianceMode::Population,
                    "sample" => VarianceMode::Sample,
                    other => {
                        return Err(CeError::Parse(format!(
                            "field 'variance': unknown mode '{other}'"
                        )))
                    }
                }
            }
            "output_dir" => self.output_dir = PathBuf::from(value),
            "workers" => self.workers = num(key, value)?,
            "write_traces" => self.write_traces = num(key, value)?,
            other => return Err(CeError::Parse(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let field = |name: &str, msg: String| Err(CeError::Parse(format!("field '{name}': {msg}")));
        if self.n_samples == 0 {
            return field("n_samples", "must be at least 1".into());
        }
        if self.k_system_samples == 0 {
            return field("k_system_samples", "must be at least 1".into());
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return field("rho", format!("{} outside (0, 1)", self.rho));
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return field("alpha", format!("{} outside [0, 1)", self.alpha));
        }
        if self.max_iters == 0 {
            return field("max_iters", "must be positive".into());
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return field("eps", "must be positive".into());
        }
        if self.patience == 0 {
            return field("patience", "must be positive".into());
        }
        if let Some(f) = self.floor {
            if !(0.0..1.0).contains(&f) {
                return field("floor", format!("{f} outside [0, 1)"));
            }
        }
        if self.runs == 0 {
            return field("runs", "must be at least 1".into());
        }
        if self.n_trials == 0 {
            return field("n_trials", "must be at least 1".into());
        }
        if self.n_states < 2 {
            return field("n_states", "must be at least 2".into());
        }
        if self.horizon == 0 {
            return field("horizon", "must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.init_lambda) {
            return field(
                "init_lambda",
                format!("{} outside [0, 1]", self.init_lambda),
            );
        }
        if self.methods.is_empty() {
            return field("methods", "at least one method is required".into());
        }
        if self.experiment == ExperimentKind::Custom && self.problem_file.is_none() {
            return field("problem_file", "required for custom experiments".into());
        }
        if let ImportanceMap::Exponential { beta } = self.importance {
            if !(beta >= 0.0 && beta.is_finite()) {
                return field(
                    "importance",
                    format!("exponential rate {beta} must be >= 0"),
                );
            }
        }
        if let ImportanceMap::Offset { shift } = self.importance {
            if !shift.is_finite() {
                return field("importance", format!("offset {shift} must be finite"));
            }
        }
        Ok(())
    }

    /// Canonical key/value listing, recorded in the manifest.
    pub fn entries(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("experiment", self.experiment.name().into());
        put("n_samples", self.n_samples.to_string());
        put("k_system_samples", self.k_system_samples.to_string());
        put("rho", self.rho.to_string());
        put("alpha", self.alpha.to_string());
        put("seed", self.seed.to_string());
        put("max_iters", self.max_iters.to_string());
        put("eps", self.eps.to_string());
        put("patience", self.patience.to_string());
        put("importance", importance_key(&self.importance));
        put("floor", self.floor.map_or("none".into(), |f| f.to_string()));
        put("method", self.method.key().into());
        put("runs", self.runs.to_string());
        put("horizon", self.horizon.to_string());
        put("init_lambda", self.init_lambda.to_string());
        put(
            "problem_file",
            self.problem_file
                .as_ref()
                .map_or("none".into(), |p| p.display().to_string()),
        );
        put("n_states", self.n_states.to_string());
        put("n_trials", self.n_trials.to_string());
        put(
            "methods",
            self.methods
                .iter()
                .map(|m| m.key())
                .collect::<Vec<_>>()
                .join(","),
        );
        put(
            "simplex",
            match self.simplex {
                SimplexMode::Uniform => "uniform",
                SimplexMode::NormalizedComponents => "normalized",
            }
            .into(),
        );
        put(
            "variance",
            match self.variance {
                VarianceMode::Population => "population",
                VarianceMode::Sample => "sample",
            }
            .into(),
        );
        put("output_dir", self.output_dir.display().to_string());
        put("workers", self.workers.to_string());
        put("write_traces", self.write_traces.to_string());
        m
    }

    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Run configuration for `method` with the given seed.
    pub fn run_config(&self, method: Method, seed: u64) -> CERunConfig {
        let scheme = match method {
            Method::Smooth => SelectionScheme::Smooth {
                importance: self.importance,
            },
            Method::Basic | Method::Expectation => SelectionScheme::Quantile { rho: self.rho },
        };
        CERunConfig {
            n_samples: self.n_samples,
            k_system_samples: self.k_system_samples,
            scheme,
            alpha: self.alpha,
            max_iters: self.max_iters,
            convergence_eps: self.eps,
            convergence_patience: self.patience,
            seed,
            probability_floor: self.floor,
            record_params: self.write_traces,
        }
    }

    /// Relative output directories are placed under `root`.
    pub fn resolve_output(&mut self, root: Option<&Path>) {
        if let Some(root) = root {
            if self.output_dir.is_relative() {
                self.output_dir = root.join(&self.output_dir);
            }
        }
    }
}

/// Final state of one seeded run on a single problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub run: usize,
    pub seed: u64,
    pub method: Method,
    pub iterations: usize,
    pub termination: Termination,
    pub final_params: Vec<f64>,
    pub expected_gain: f64,
    pub optimum_gain: f64,
    pub percentage: f64,
}

impl RunOutcome {
    fn rounded(&self) -> Self {
        Self {
            final_params: self.final_params.iter().copied().map(sig6).collect(),
            expected_gain: sig6(self.expected_gain),
            optimum_gain: sig6(self.optimum_gain),
            percentage: sig6(self.percentage),
            ..self.clone()
        }
    }
}

/// Outcome of a single-problem experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSet {
    pub method: Method,
    pub outcomes: Vec<RunOutcome>,
    pub gain: Stats,
    pub percentage: Stats,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExperimentResults {
    Runs(RunSet),
    Benchmark(BenchmarkSummary),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Complete,
    Partial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedEntry {
    pub index: usize,
    pub seed: u64,
}

/// Reproducibility record written next to the artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub experiment: String,
    pub spec: BTreeMap<String, String>,
    pub master_seed: u64,
    pub seed_derivation: String,
    pub seeds: Vec<SeedEntry>,
    /// File names relative to the output directory.
    pub artifacts: Vec<String>,
    pub status: RunStatus,
    pub errors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub output_dir: PathBuf,
    pub manifest: Manifest,
    pub results: ExperimentResults,
}

impl ExperimentReport {
    pub fn succeeded(&self) -> bool {
        self.manifest.status == RunStatus::Complete
    }
}

struct Finished<F> {
    trace: RunTrace<F>,
    gain: f64,
    optimum: f64,
}

fn finish_decision<L: DecisionLaw>(problem: &Problem, trace: RunTrace<L>) -> Result<Finished<L>> {
    let optimum = brute_force_optimum(problem).gain;
    let gain = trace.final_params.expected_gain(problem);
    Ok(Finished {
        trace,
        gain,
        optimum,
    })
}

fn run_decision_method(
    spec: &ExperimentSpec,
    problem: &Problem,
    seed: u64,
) -> Result<Finished<DecisionParams>> {
    let config = spec.run_config(spec.method, seed);
    if problem.is_conditional() {
        if spec.method == Method::Expectation {
            return Err(CeError::Contract(
                "expectation scoring needs an unconditional problem".into(),
            ));
        }
        let init = ConditionalCategoricalParams::uniform(problem.systems(), problem.decisions())?;
        let f = finish_decision(problem, run_ce(problem, &init, &config)?)?;
        Ok(f.map(DecisionParams::Conditional))
    } else {
        let init = CategoricalParams::uniform(problem.decisions())?;
        let trace = match spec.method {
            Method::Expectation => run_ce_expectation(problem, &init, &config)?,
            Method::Basic | Method::Smooth => run_ce(problem, &init, &config)?,
        };
        Ok(finish_decision(problem, trace)?.map(DecisionParams::Categorical))
    }
}

/// Either decision law, so both shapes share one reporting path.
#[derive(Debug, Clone)]
enum DecisionParams {
    Categorical(CategoricalParams),
    Conditional(ConditionalCategoricalParams),
}

impl DecisionParams {
    fn snapshot(&self) -> Vec<f64> {
        match self {
            DecisionParams::Categorical(p) => p.snapshot(),
            DecisionParams::Conditional(p) => p.snapshot(),
        }
    }
}

impl<F> Finished<F> {
    fn map<G>(self, f: impl FnOnce(F) -> G) -> Finished<G> {
        let RunTrace {
            records,
            final_params,
            termination,
        } = self.trace;
        Finished {
            trace: RunTrace {
                records,
                final_params: f(final_params),
                termination,
            },
            gain: self.gain,
            optimum: self.optimum,
        }
    }
}

fn run_sequence(spec: &ExperimentSpec, seed: u64) -> Result<Finished<GeometricStoppingParams>> {
    let problem = sequence_problem(spec.horizon)?;
    let config = spec.run_config(Method::Basic, seed);
    let trace = match spec.experiment {
        ExperimentKind::SequenceReject => run_ce_rejection(
            &problem,
            &GeometricStoppingParams::untruncated(spec.init_lambda)?,
            &config,
        )?,
        _ => run_ce_classical(
            &problem,
            &GeometricStoppingParams::truncated(spec.init_lambda, spec.horizon)?,
            &config,
        )?,
    };
    let gain = truncated_expected_length(trace.final_params.lambda(), spec.horizon);
    let optimum = truncated_expected_length(1.0, spec.horizon);
    Ok(Finished {
        trace,
        gain,
        optimum,
    })
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if workers > 0 {
        builder = builder.num_threads(workers);
    }
    builder
        .build()
        .map_err(|e| CeError::Io(format!("cannot start worker pool: {e}")))
}

fn write_file(dir: &Path, name: &str, contents: &str, artifacts: &mut Vec<String>) -> Result<()> {
    fs::write(dir.join(name), contents)?;
    artifacts.push(name.to_string());
    Ok(())
}

fn load_problem(spec: &ExperimentSpec) -> Result<Problem> {
    match spec.experiment {
        ExperimentKind::Example1 => Ok(example1()),
        ExperimentKind::Example2 => Ok(example2()),
        ExperimentKind::Custom => {
            let path = spec
                .problem_file
                .as_ref()
                .ok_or_else(|| CeError::Parse("field 'problem_file': missing".into()))?;
            let text = fs::read_to_string(path)
                .map_err(|e| CeError::Io(format!("{}: {e}", path.display())))?;
            Problem::from_text(&text)
        }
        other => Err(CeError::Contract(format!(
            "{other} has no decision problem"
        ))),
    }
}

/// Run set, per-run trace files and error messages.
type SingleRuns = (RunSet, Vec<(usize, String)>, Vec<String>);

/// Seeded repetitions of one method on one problem.
fn run_single(spec: &ExperimentSpec, pool: &rayon::ThreadPool) -> Result<SingleRuns> {
    let problem = match spec.experiment {
        ExperimentKind::SequenceReject | ExperimentKind::SequenceClassical => None,
        _ => Some(load_problem(spec)?),
    };
    let method = match spec.experiment {
        ExperimentKind::SequenceReject | ExperimentKind::SequenceClassical => Method::Basic,
        _ => spec.method,
    };
    let results: Vec<Result<(RunOutcome, String)>> = pool.install(|| {
        (0..spec.runs)
            .into_par_iter()
            .map(|run| {
                let seed = derive_seed(spec.seed, run as u64);
                let (records, params, termination, gain, optimum) = match &problem {
                    Some(problem) => {
                        let f = run_decision_method(spec, problem, seed)?;
                        (
                            f.trace.records,
                            f.trace.final_params.snapshot(),
                            f.trace.termination,
                            f.gain,
                            f.optimum,
                        )
                    }
                    None => {
                        let f = run_sequence(spec, seed)?;
                        (
                            f.trace.records,
                            f.trace.final_params.snapshot(),
                            f.trace.termination,
                            f.gain,
                            f.optimum,
                        )
                    }
                };
                let trace = if spec.write_traces {
                    trace_jsonl(&records)?
                } else {
                    String::new()
                };
                let percentage = if optimum == 0.0 {
                    f64::NAN
                } else {
                    gain / optimum
                };
                let outcome = RunOutcome {
                    run,
                    seed,
                    method,
                    iterations: records.len(),
                    termination,
                    final_params: params,
                    expected_gain: gain,
                    optimum_gain: optimum,
                    percentage,
                };
                Ok((outcome, trace))
            })
            .collect()
    });
    let mut outcomes = Vec::with_capacity(spec.runs);
    let mut traces = Vec::new();
    let mut errors = Vec::new();
    for r in results {
        let (outcome, trace) = r?;
        if let Termination::Error(e) = &outcome.termination {
            errors.push(format!("run {}: {e}", outcome.run));
        }
        if spec.write_traces {
            traces.push((outcome.run, trace));
        }
        outcomes.push(outcome);
    }
    let gains: Vec<f64> = outcomes.iter().map(|o| o.expected_gain).collect();
    let pcts: Vec<f64> = outcomes.iter().map(|o| o.percentage).collect();
    let set = RunSet {
        method,
        gain: Stats::of(&gains, spec.variance)?,
        percentage: Stats::of(&pcts, spec.variance)?,
        outcomes,
    };
    Ok((set, traces, errors))
}

/// Result of one method on one trial, with the error message if the run failed.
pub type TrialOutcome = (Method, TrialRecord, Option<String>);

/// One benchmark trial: a fresh random problem solved by every requested method.
pub fn benchmark_trial(spec: &ExperimentSpec, trial: usize) -> Result<Vec<TrialOutcome>> {
    let trial_seed = derive_seed(spec.seed, trial as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(trial_seed, 0));
    let problem = random_problem(spec.n_states, spec.simplex, &mut rng)?.with_seed(trial_seed);
    let init = CategoricalParams::uniform(problem.decisions())?;
    spec.methods
        .iter()
        .map(|&method| {
            let mut config = spec.run_config(method, derive_seed(trial_seed, method.stream()));
            config.record_params = false;
            let trace = match method {
                Method::Expectation => run_ce_expectation(&problem, &init, &config)?,
                Method::Basic | Method::Smooth => run_ce(&problem, &init, &config)?,
            };
            let percentage = optimal_percentage(&problem, &trace.final_params)?;
            let error = match &trace.termination {
                Termination::Error(e) => Some(format!("trial {trial} {}: {e}", method.key())),
                _ => None,
            };
            let record = TrialRecord {
                trial,
                seed: trial_seed,
                percentage,
                iterations: trace.iterations(),
                converged: trace.converged(),
            };
            Ok((method, record, error))
        })
        .collect()
}

/// Run every benchmark trial on the pool and summarize per method.
pub fn run_benchmark(
    spec: &ExperimentSpec,
    pool: &rayon::ThreadPool,
) -> Result<(BenchmarkSummary, Vec<String>)> {
    let per_trial: Vec<Result<Vec<TrialOutcome>>> = pool.install(|| {
        (0..spec.n_trials)
            .into_par_iter()
            .map(|t| benchmark_trial(spec, t))
            .collect()
    });
    let mut by_method: BTreeMap<Method, Vec<TrialRecord>> = BTreeMap::new();
    let mut errors = Vec::new();
    for trial in per_trial {
        for (method, record, error) in trial? {
            by_method.entry(method).or_default().push(record);
            errors.extend(error);
        }
    }
    let methods = by_method
        .into_iter()
        .map(|(m, records)| MethodSummary::new(m.label(), records, spec.variance))
        .collect::<Result<Vec<_>>>()?;
    Ok((BenchmarkSummary { methods }, errors))
}

fn runs_csv(set: &RunSet) -> String {
    format!(
        "method,mean_gain,mean,variance,std_dev,trials\n{},{},{},{},{},{}\n",
        set.method.label(),
        fmt_sig6(set.gain.mean),
        fmt_sig6(set.percentage.mean),
        fmt_sig6(set.percentage.variance),
        fmt_sig6(set.percentage.std_dev),
        set.percentage.count
    )
}

/// Run an experiment and write its artifacts into `spec.output_dir`:
///
/// - `summary.csv`: one row per method.
/// - `trials.json` (benchmark) or `runs.json`: per-trial records.
/// - `trace_<run>.jsonl`: per-iteration records, when traces are enabled.
/// - `manifest.json`: spec, master seed, derived seeds, artifact list and status.
///
/// Invalid specs fail before anything is written. Runs that end in an error
/// still produce artifacts; the manifest is then marked `partial`.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    spec.validate()?;
    let dir = spec.output_dir.clone();
    fs::create_dir_all(&dir).map_err(|e| CeError::Io(format!("{}: {e}", dir.display())))?;
    let pool = thread_pool(spec.workers)?;
    let mut artifacts = Vec::new();

    let (results, errors, count) = match spec.experiment {
        ExperimentKind::Benchmark => {
            let (summary, errors) = run_benchmark(spec, &pool)?;
            write_file(&dir, "summary.csv", &summary.to_csv(), &mut artifacts)?;
            write_file(&dir, "trials.json", &summary.to_json()?, &mut artifacts)?;
            (ExperimentResults::Benchmark(summary), errors, spec.n_trials)
        }
        _ => {
            let (set, traces, errors) = run_single(spec, &pool)?;
            for (run, trace) in &traces {
                write_file(&dir, &format!("trace_{run}.jsonl"), trace, &mut artifacts)?;
            }
            write_file(&dir, "summary.csv", &runs_csv(&set), &mut artifacts)?;
            let rounded: Vec<RunOutcome> = set.outcomes.iter().map(RunOutcome::rounded).collect();
            write_file(
                &dir,
                "runs.json",
                &serde_json::to_string_pretty(&rounded)?,
                &mut artifacts,
            )?;
            (ExperimentResults::Runs(set), errors, spec.runs)
        }
    };

    let manifest = Manifest {
        experiment: spec.experiment.name().into(),
        spec: spec.entries(),
        master_seed: spec.seed,
        seed_derivation: SEED_DERIVATION.into(),
        seeds: (0..count)
            .map(|index| SeedEntry {
                index,
                seed: derive_seed(spec.seed, index as u64),
            })
            .collect(),
        artifacts,
        status: if errors.is_empty() {
            RunStatus::Complete
        } else {
            RunStatus::Partial
        },
        errors,
    };
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(ExperimentReport {
        output_dir: dir,
        manifest,
        results,
    })
}
