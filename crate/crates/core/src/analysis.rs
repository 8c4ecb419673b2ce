//! Exact reference values: stopping-law expectations, brute-force optima,
//! realized gains of a law, and benchmark statistics.

use serde::{Deserialize, Serialize};

use crate::engine::DecisionLaw;
use crate::error::{CeError, Result};
use crate::problems::Problem;
use crate::report::sig6;

/// Expected length under the stopping law conditioned on `t <= horizon`:
/// `sum t lambda^(t-1) / sum lambda^(t-1)` over `t = 1..=horizon`.
pub fn truncated_expected_length(lambda: f64, horizon: u64) -> f64 {
    if horizon <= 1 {
        return 1.0;
    }
    if lambda == 1.0 {
        return (horizon as f64 + 1.0) / 2.0;
    }
    let (mut num, mut den, mut pow) = (0.0, 0.0, 1.0);
    for t in 1..=horizon {
        num += t as f64 * pow;
        den += pow;
        pow *= lambda;
    }
    num / den
}

/// Scan of [`truncated_expected_length`] over `lambda` in `[0, 1]` with step 1e-4.
pub fn truncated_expectation_argmax(horizon: u64) -> Result<f64> {
    if horizon < 2 {
        return Err(CeError::InvalidParams(
            "the expectation is constant for horizons below 2".into(),
        ));
    }
    const STEPS: u32 = 10_000;
    let mut best = (0.0, f64::NEG_INFINITY);
    for i in 0..=STEPS {
        let lambda = f64::from(i) / f64::from(STEPS);
        let value = truncated_expected_length(lambda, horizon);
        if value >= best.1 {
            best = (lambda, value);
        }
    }
    Ok(best.0)
}

/// Best decision rule found by enumeration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleDecision {
    Single(usize),
    /// Best decision for each system state of a conditional problem.
    PerCondition(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Optimum {
    pub decision: OracleDecision,
    pub gain: f64,
}

fn first_argmax(values: impl Iterator<Item = f64>) -> (usize, f64) {
    values
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, v)| {
            if v > best.1 {
                (i, v)
            } else {
                best
            }
        })
}

/// Enumerate all decisions (or per-condition decisions). Ties go to the smaller index.
pub fn brute_force_optimum(problem: &Problem) -> Optimum {
    if problem.is_conditional() {
        let mut rule = Vec::with_capacity(problem.systems());
        let mut gain = 0.0;
        for (x, p) in problem.system_law().iter().enumerate() {
            let (d, v) = first_argmax((0..problem.decisions()).map(|d| problem.reward(d, x)));
            rule.push(d);
            gain += p * v;
        }
        Optimum {
            decision: OracleDecision::PerCondition(rule),
            gain,
        }
    } else {
        let (d, gain) = first_argmax((0..problem.decisions()).map(|d| problem.decision_value(d)));
        Optimum {
            decision: OracleDecision::Single(d),
            gain,
        }
    }
}

/// Exact `sum_{d,x} p(x) h(d | x) V(d, x)` of a decision law.
pub fn expected_gain<L: DecisionLaw>(problem: &Problem, law: &L) -> Result<f64> {
    law.check_compatible(problem)?;
    Ok(law.expected_gain(problem))
}

/// Realized expected gain as a fraction of the brute-force optimum.
pub fn optimal_percentage<L: DecisionLaw>(problem: &Problem, law: &L) -> Result<f64> {
    let optimum = brute_force_optimum(problem).gain;
    if optimum == 0.0 {
        return Err(CeError::UndefinedRatio);
    }
    Ok(expected_gain(problem, law)? / optimum)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMode {
    #[default]
    Population,
    Sample,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    pub variance: f64,
    pub std_dev: f64,
    pub count: usize,
}

impl Stats {
    pub fn of(values: &[f64], mode: VarianceMode) -> Result<Self> {
        if values.is_empty() {
            return Err(CeError::Contract("statistics of an empty list".into()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
        let variance = match mode {
            VarianceMode::Population => ss / n,
            VarianceMode::Sample if values.len() > 1 => ss / (n - 1.0),
            VarianceMode::Sample => 0.0,
        };
        Ok(Self {
            mean,
            variance,
            std_dev: variance.sqrt(),
            count: values.len(),
        })
    }
}

/// One trial of one method in a benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub percentage: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub mean: f64,
    pub variance: f64,
    pub std_dev: f64,
    pub trials: usize,
    pub records: Vec<TrialRecord>,
}

/// Mean and variance of a list of optimal percentages.
pub fn summarize(percentages: &[f64]) -> Result<Stats> {
    Stats::of(percentages, VarianceMode::Population)
}

impl MethodSummary {
    /// Records are sorted by trial index so that the summary does not depend
    /// on the order trials finished in.
    pub fn new(
        method: impl Into<String>,
        mut records: Vec<TrialRecord>,
        mode: VarianceMode,
    ) -> Result<Self> {
        records.sort_by_key(|r| r.trial);
        let values: Vec<f64> = records.iter().map(|r| r.percentage).collect();
        let stats = Stats::of(&values, mode)?;
        Ok(Self {
            method: method.into(),
            mean: stats.mean,
            variance: stats.variance,
            std_dev: stats.std_dev,
            trials: stats.count,
            records,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSummary {
    pub methods: Vec<MethodSummary>,
}

impl BenchmarkSummary {
    pub fn method(&self, name: &str) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.method == name)
    }

    /// One row per method: `method,mean,variance,std_dev,trials`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,mean,variance,std_dev,trials\n");
        for m in &self.methods {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                m.method,
                crate::report::fmt_sig6(m.mean),
                crate::report::fmt_sig6(m.variance),
                crate::report::fmt_sig6(m.std_dev),
                m.trials
            ));
        }
        out
    }

    /// Full per-trial records, numbers rounded to 6 significant digits.
    pub fn to_json(&self) -> Result<String> {
        let rounded = BenchmarkSummary {
            methods: self
                .methods
                .iter()
                .map(|m| MethodSummary {
                    mean: sig6(m.mean),
                    variance: sig6(m.variance),
                    std_dev: sig6(m.std_dev),
                    records: m
                        .records
                        .iter()
                        .map(|r| TrialRecord {
                            percentage: sig6(r.percentage),
                            ..r.clone()
                        })
                        .collect(),
                    ..m.clone()
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&rounded)?)
    }
}
