//! The cross-entropy optimization loop.
//!
//! Every iteration draws a batch from the current law, scores it, turns the
//! scores into selection weights, fits a fresh law by weighted maximum
//! likelihood and mixes it into the current one with rate `alpha`:
//!
//! ```text
//! params <- alpha * params + (1 - alpha) * fit(batch, weights)
//! ```
//!
//! Variants differ only in how the batch is drawn and scored:
//!
//! - [`run_ce`]: one system sample per decision sample (`v_n = V(d_n, x_n)`).
//! - [`run_ce_expectation`]: a shared batch of `K` system samples scores every decision.
//! - [`run_ce_rejection`]: untruncated stopping law, samples longer than the horizon are redrawn.
//! - [`run_ce_classical`]: stopping law conditioned on the horizon, fitted as such.
//!
//! A run is sequential and fully determined by the config seed.

pub mod selection;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CeError, Result};
use crate::families::{
    CategoricalParams, ConditionalCategoricalParams, GeometricStoppingParams, LawFamily, Sampler,
    WeightedSamples,
};
use crate::problems::{Problem, SequenceProblem};

pub use selection::{
    elite_count, select, select_weights, ImportanceMap, Selection, SelectionScheme,
};

/// Per-sample retry cap of the rejection sampler.
pub const REJECTION_RETRY_CAP: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CERunConfig {
    /// Decision samples per iteration (N).
    pub n_samples: usize,
    /// Shared system samples per iteration (K), expectation variant only.
    pub k_system_samples: usize,
    pub scheme: SelectionScheme,
    /// Smoothing rate; `0` replaces the law by the fit.
    pub alpha: f64,
    pub max_iters: usize,
    pub convergence_eps: f64,
    pub convergence_patience: usize,
    pub seed: u64,
    pub probability_floor: Option<f64>,
    /// Keep a parameter snapshot in every trace record.
    pub record_params: bool,
}

impl Default for CERunConfig {
    fn default() -> Self {
        Self {
            n_samples: 100,
            k_system_samples: 100,
            scheme: SelectionScheme::default(),
            alpha: 0.9,
            max_iters: 1000,
            convergence_eps: 1e-6,
            convergence_patience: 5,
            seed: 0,
            probability_floor: None,
            record_params: true,
        }
    }
}

impl CERunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CeError::InvalidParams(m));
        if self.n_samples == 0 {
            return bad("n_samples must be at least 1".into());
        }
        if self.k_system_samples == 0 {
            return bad("k_system_samples must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return bad(format!("alpha {} outside [0, 1)", self.alpha));
        }
        if self.max_iters == 0 {
            return bad("max_iters must be positive".into());
        }
        if self.convergence_eps.is_nan() || self.convergence_eps <= 0.0 {
            return bad(format!(
                "convergence_eps {} must be positive",
                self.convergence_eps
            ));
        }
        if self.convergence_patience == 0 {
            return bad("convergence_patience must be positive".into());
        }
        if let Some(f) = self.probability_floor {
            if !(0.0..1.0).contains(&f) {
                return bad(format!("probability floor {f} outside [0, 1)"));
            }
        }
        self.scheme.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", content = "detail", rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxIters,
    Error(String),
}

/// Summary of one iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Law in force after this iteration.
    pub params: Option<Vec<f64>>,
    pub reward_min: f64,
    pub reward_mean: f64,
    pub reward_max: f64,
    /// Quantile threshold, when the scheme has one.
    pub threshold: Option<f64>,
    pub weight_sum: f64,
    pub accepted: u64,
    pub rejected: u64,
    pub acceptance_rate: f64,
    pub max_change: f64,
    /// Set when selection failed and the law was left unchanged.
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace<F> {
    pub records: Vec<IterationRecord>,
    pub final_params: F,
    pub termination: Termination,
}

impl<F> RunTrace<F> {
    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    pub fn converged(&self) -> bool {
        self.termination == Termination::Converged
    }
}

/// A scored batch drawn from the current law.
struct Batch<O> {
    outcomes: Vec<O>,
    values: Vec<f64>,
    rejected: u64,
}

fn drive<F, D>(init: &F, config: &CERunConfig, mut draw: D) -> RunTrace<F>
where
    F: LawFamily,
    D: FnMut(&F, &mut ChaCha8Rng) -> Result<Batch<F::Outcome>>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = init.clone();
    let mut records = Vec::new();
    let mut streak = 0;

    for iteration in 0..config.max_iters {
        let batch = match draw(&params, &mut rng) {
            Ok(b) => b,
            Err(e) => {
                return RunTrace {
                    records,
                    final_params: params,
                    termination: Termination::Error(e.to_string()),
                }
            }
        };
        let n = batch.values.len();
        let (lo, hi, sum) = batch.values.iter().fold(
            (f64::INFINITY, f64::NEG_INFINITY, 0.0),
            |(lo, hi, s), &v| (lo.min(v), hi.max(v), s + v),
        );
        let accepted = n as u64;
        let mut record = IterationRecord {
            iteration,
            params: None,
            reward_min: lo,
            reward_mean: sum / n as f64,
            reward_max: hi,
            threshold: None,
            weight_sum: 0.0,
            accepted,
            rejected: batch.rejected,
            acceptance_rate: accepted as f64 / (accepted + batch.rejected) as f64,
            max_change: 0.0,
            skipped: None,
        };

        let weighted = select(&batch.values, &config.scheme).and_then(|sel| {
            record.threshold = sel.threshold;
            record.weight_sum = sel.weight_sum();
            WeightedSamples::new(batch.outcomes, sel.weights)
        });
        let samples = match weighted {
            Ok(s) => s,
            Err(e) => {
                record.skipped = Some(e.to_string());
                record.params = config.record_params.then(|| params.snapshot());
                records.push(record);
                continue;
            }
        };

        let next = params
            .fit(&samples)
            .and_then(|fitted| params.mix(&fitted, config.alpha))
            .map(|mixed| match config.probability_floor {
                Some(f) if f > 0.0 => mixed.with_floor(f),
                _ => mixed,
            });
        let next = match next {
            Ok(p) => p,
            Err(e) => {
                records.push(record);
                return RunTrace {
                    records,
                    final_params: params,
                    termination: Termination::Error(e.to_string()),
                };
            }
        };

        record.max_change = params.max_abs_change(&next);
        record.params = config.record_params.then(|| next.snapshot());
        streak = if record.max_change < config.convergence_eps {
            streak + 1
        } else {
            0
        };
        records.push(record);
        params = next;
        if streak >= config.convergence_patience {
            return RunTrace {
                records,
                final_params: params,
                termination: Termination::Converged,
            };
        }
    }
    RunTrace {
        records,
        final_params: params,
        termination: Termination::MaxIters,
    }
}

/// Decision laws that can be scored against a [`Problem`].
pub trait DecisionLaw: LawFamily {
    fn check_compatible(&self, problem: &Problem) -> Result<()>;

    /// Draw `n` samples and their rewards `V(d_n, x_n)`.
    fn draw_scored(
        &self,
        problem: &Problem,
        n: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Vec<Self::Outcome>, Vec<f64>)>;

    /// Exact expected reward of the law.
    fn expected_gain(&self, problem: &Problem) -> f64;
}

impl DecisionLaw for CategoricalParams {
    fn check_compatible(&self, problem: &Problem) -> Result<()> {
        if problem.is_conditional() {
            return Err(CeError::Contract(
                "conditional problem needs a conditional law".into(),
            ));
        }
        if self.len() != problem.decisions() {
            return Err(CeError::Contract(format!(
                "law over {} decisions for a problem with {}",
                self.len(),
                problem.decisions()
            )));
        }
        Ok(())
    }

    /// All decisions first, then all system states; deterministic problems draw no system states.
    fn draw_scored(
        &self,
        problem: &Problem,
        n: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Vec<usize>, Vec<f64>)> {
        let decisions = (0..n)
            .map(|_| self.sample(rng))
            .collect::<Result<Vec<_>>>()?;
        let values = if problem.is_deterministic() {
            decisions.iter().map(|&d| problem.reward(d, 0)).collect()
        } else {
            let systems: Vec<usize> = (0..n).map(|_| problem.sample_system(rng)).collect();
            decisions
                .iter()
                .zip(&systems)
                .map(|(&d, &x)| problem.reward(d, x))
                .collect()
        };
        Ok((decisions, values))
    }

    fn expected_gain(&self, problem: &Problem) -> f64 {
        self.probs()
            .iter()
            .enumerate()
            .map(|(d, h)| h * problem.decision_value(d))
            .sum()
    }
}

impl DecisionLaw for ConditionalCategoricalParams {
    fn check_compatible(&self, problem: &Problem) -> Result<()> {
        if !problem.is_conditional() {
            return Err(CeError::Contract(
                "conditional law on an unconditional problem".into(),
            ));
        }
        if self.conditions() != problem.systems() || self.decisions() != problem.decisions() {
            return Err(CeError::Contract(format!(
                "law table {}x{} for a problem with {} states and {} decisions",
                self.conditions(),
                self.decisions(),
                problem.systems(),
                problem.decisions()
            )));
        }
        Ok(())
    }

    /// Pairs are drawn as `x ~ p`, then `d ~ h(. | x)`.
    fn draw_scored(
        &self,
        problem: &Problem,
        n: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Vec<(usize, usize)>, Vec<f64>)> {
        let mut outcomes = Vec::with_capacity(n);
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            let x = problem.sample_system(rng);
            let d = self.sample_given(x, rng)?;
            outcomes.push((x, d));
            values.push(problem.reward(d, x));
        }
        Ok((outcomes, values))
    }

    fn expected_gain(&self, problem: &Problem) -> f64 {
        problem
            .system_law()
            .iter()
            .zip(self.rows())
            .enumerate()
            .map(|(x, (p, row))| {
                p * row
                    .probs()
                    .iter()
                    .enumerate()
                    .map(|(d, h)| h * problem.reward(d, x))
                    .sum::<f64>()
            })
            .sum()
    }
}

fn check_scheme(problem: &Problem, config: &CERunConfig) -> Result<()> {
    config.validate()?;
    let (lo, hi) = problem.reward_bounds();
    config.scheme.check_reward_range(lo, hi)
}

/// Basic stochastic CE: each decision sample is scored against its own system sample.
pub fn run_ce<L: DecisionLaw>(
    problem: &Problem,
    init: &L,
    config: &CERunConfig,
) -> Result<RunTrace<L>> {
    init.check_compatible(problem)?;
    check_scheme(problem, config)?;
    let n = config.n_samples;
    Ok(drive(init, config, |law, rng| {
        let (outcomes, values) = law.draw_scored(problem, n, rng)?;
        Ok(Batch {
            outcomes,
            values,
            rejected: 0,
        })
    }))
}

/// CE on estimated expectations: `v_n = sum_k V(d_n, x_k)` with one shared
/// batch `x_1..x_K` per iteration. Requires a system law independent of the decision.
pub fn run_ce_expectation(
    problem: &Problem,
    init: &CategoricalParams,
    config: &CERunConfig,
) -> Result<RunTrace<CategoricalParams>> {
    if problem.is_conditional() {
        return Err(CeError::Contract(
            "expectation scoring needs a decision-independent system law".into(),
        ));
    }
    init.check_compatible(problem)?;
    config.validate()?;
    let k = config.k_system_samples;
    let (lo, hi) = problem.reward_bounds();
    config
        .scheme
        .check_reward_range(lo * k as f64, hi * k as f64)?;
    let n = config.n_samples;
    Ok(drive(init, config, |law, rng| {
        let decisions = (0..n)
            .map(|_| law.sample(rng))
            .collect::<Result<Vec<_>>>()?;
        let systems: Vec<usize> = (0..k).map(|_| problem.sample_system(rng)).collect();
        let values = decisions
            .iter()
            .map(|&d| systems.iter().map(|&x| problem.reward(d, x)).sum())
            .collect();
        Ok(Batch {
            outcomes: decisions,
            values,
            rejected: 0,
        })
    }))
}

/// CE with rejection: the untruncated stopping law is sampled, sequences longer
/// than the horizon are redrawn, and the untruncated law is refitted.
pub fn run_ce_rejection(
    problem: &SequenceProblem,
    init: &GeometricStoppingParams,
    config: &CERunConfig,
) -> Result<RunTrace<GeometricStoppingParams>> {
    if init.truncation().is_some() {
        return Err(CeError::Contract(
            "rejection scheme starts from an untruncated law".into(),
        ));
    }
    config.validate()?;
    config
        .scheme
        .check_reward_range(1.0, problem.horizon() as f64)?;
    let n = config.n_samples;
    Ok(drive(init, config, |law, rng| {
        let mut outcomes = Vec::with_capacity(n);
        let mut rejected = 0;
        for _ in 0..n {
            let mut attempts = 0;
            let t = loop {
                if attempts >= REJECTION_RETRY_CAP {
                    return Err(CeError::RejectionCap(attempts));
                }
                attempts += 1;
                let t = law.sample(rng)?;
                if problem.is_valid(t) {
                    break t;
                }
                rejected += 1;
            };
            outcomes.push(t);
        }
        let values = outcomes.iter().map(|&t| problem.reward(t)).collect();
        Ok(Batch {
            outcomes,
            values,
            rejected,
        })
    }))
}

/// CE on the conditional law `P(t | t <= T)`, sampled and fitted directly.
pub fn run_ce_classical(
    problem: &SequenceProblem,
    init: &GeometricStoppingParams,
    config: &CERunConfig,
) -> Result<RunTrace<GeometricStoppingParams>> {
    if init.truncation() != Some(problem.horizon()) {
        return Err(CeError::Contract(format!(
            "classical scheme needs a law truncated at the horizon {}",
            problem.horizon()
        )));
    }
    config.validate()?;
    config
        .scheme
        .check_reward_range(1.0, problem.horizon() as f64)?;
    let n = config.n_samples;
    Ok(drive(init, config, |law, rng| {
        let outcomes = (0..n)
            .map(|_| law.sample(rng))
            .collect::<Result<Vec<_>>>()?;
        let values = outcomes.iter().map(|&t| problem.reward(t)).collect();
        Ok(Batch {
            outcomes,
            values,
            rejected: 0,
        })
    }))
}
