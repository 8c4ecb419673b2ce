//! Stochastic objectives `V(d, x)` with a finite decision set and a finite
//! system variable drawn from a law `p`, plus the stopping-sequence problem.

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{CeError, Result};
use crate::families::NORMALIZATION_TOL;

const FORMAT_HEADER: &str = "ce-problem v1";

/// A finite stochastic optimization problem.
///
/// Rewards are stored row-major by decision: `reward(d, x) = rewards[d * systems + x]`.
/// A `conditional` problem asks for a decision per system state (the decision
/// law is `h(d | x)`); otherwise the decision is chosen without observing `x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    decisions: usize,
    systems: usize,
    system_law: Vec<f64>,
    rewards: Vec<f64>,
    conditional: bool,
    seed: Option<u64>,
}

impl Problem {
    pub fn new(
        decisions: usize,
        systems: usize,
        system_law: Vec<f64>,
        rewards: Vec<f64>,
        conditional: bool,
    ) -> Result<Self> {
        if decisions == 0 || systems == 0 {
            return Err(CeError::InvalidParams(
                "decision and system sets must be nonempty".into(),
            ));
        }
        if system_law.len() != systems {
            return Err(CeError::InvalidParams(format!(
                "system law has {} entries for {systems} states",
                system_law.len()
            )));
        }
        if system_law.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(CeError::InvalidParams(
                "system law has a negative or non-finite entry".into(),
            ));
        }
        let sum: f64 = system_law.iter().sum();
        if (sum - 1.0).abs() > NORMALIZATION_TOL {
            return Err(CeError::InvalidParams(format!("system law sums to {sum}")));
        }
        if rewards.len() != decisions * systems {
            return Err(CeError::InvalidParams(format!(
                "reward table has {} entries, expected {}",
                rewards.len(),
                decisions * systems
            )));
        }
        if rewards.iter().any(|v| !v.is_finite()) {
            return Err(CeError::InvalidParams(
                "reward table has a non-finite entry".into(),
            ));
        }
        Ok(Self {
            decisions,
            systems,
            system_law,
            rewards,
            conditional,
            seed: None,
        })
    }

    /// Deterministic problem: a single system state with probability one.
    pub fn deterministic(rewards: Vec<f64>) -> Result<Self> {
        let n = rewards.len();
        Self::new(n, 1, vec![1.0], rewards, false)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn decisions(&self) -> usize {
        self.decisions
    }

    pub fn systems(&self) -> usize {
        self.systems
    }

    pub fn system_law(&self) -> &[f64] {
        &self.system_law
    }

    pub fn is_conditional(&self) -> bool {
        self.conditional
    }

    pub fn is_deterministic(&self) -> bool {
        self.systems == 1
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    #[inline]
    pub fn reward(&self, decision: usize, system: usize) -> f64 {
        self.rewards[decision * self.systems + system]
    }

    /// Rewards of one decision across all system states.
    pub fn reward_row(&self, decision: usize) -> &[f64] {
        &self.rewards[decision * self.systems..(decision + 1) * self.systems]
    }

    pub fn reward_bounds(&self) -> (f64, f64) {
        self.rewards
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// `sum_x p(x) V(d, x)`, summed in increasing `x`.
    pub fn decision_value(&self, decision: usize) -> f64 {
        self.reward_row(decision)
            .iter()
            .zip(&self.system_law)
            .map(|(v, p)| p * v)
            .sum()
    }

    /// Draw a system state from `p`.
    pub fn sample_system<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        if self.systems == 1 {
            return 0;
        }
        let u: f64 = rng.random();
        let mut cum = 0.0;
        for (i, &p) in self.system_law.iter().enumerate() {
            cum += p;
            if u < cum {
                return i;
            }
        }
        self.system_law.iter().rposition(|&p| p > 0.0).unwrap_or(0)
    }

    /// Self-describing text form: dimensions, flags, seed, `p`, then one `V` line per decision.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{FORMAT_HEADER}");
        let _ = writeln!(out, "decisions {}", self.decisions);
        let _ = writeln!(out, "systems {}", self.systems);
        let _ = writeln!(out, "conditional {}", self.conditional);
        match self.seed {
            Some(s) => {
                let _ = writeln!(out, "seed {s}");
            }
            None => {
                let _ = writeln!(out, "seed none");
            }
        }
        let _ = writeln!(out, "p {}", join(&self.system_law));
        for d in 0..self.decisions {
            let _ = writeln!(out, "V {}", join(self.reward_row(d)));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        if lines.next() != Some(FORMAT_HEADER) {
            return Err(CeError::Parse(format!("missing '{FORMAT_HEADER}' header")));
        }
        let (mut decisions, mut systems, mut conditional, mut seed) = (None, None, false, None);
        let mut law = None;
        let mut rewards = Vec::new();
        let mut rows = 0;
        for line in lines {
            let (key, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
            let rest = rest.trim();
            match key {
                "decisions" => decisions = Some(parse_num::<usize>(rest, key)?),
                "systems" => systems = Some(parse_num::<usize>(rest, key)?),
                "conditional" => conditional = parse_num::<bool>(rest, key)?,
                "seed" => {
                    seed = if rest == "none" {
                        None
                    } else {
                        Some(parse_num::<u64>(rest, key)?)
                    }
                }
                "p" => law = Some(parse_row(rest)?),
                "V" => {
                    rewards.extend(parse_row(rest)?);
                    rows += 1;
                }
                other => return Err(CeError::Parse(format!("unknown key '{other}'"))),
            }
        }
        let decisions = decisions.ok_or_else(|| CeError::Parse("missing 'decisions'".into()))?;
        let systems = systems.ok_or_else(|| CeError::Parse("missing 'systems'".into()))?;
        if rows != decisions {
            return Err(CeError::Parse(format!(
                "{rows} reward rows for {decisions} decisions"
            )));
        }
        let law = law.ok_or_else(|| CeError::Parse("missing 'p'".into()))?;
        let problem = Self::new(decisions, systems, law, rewards, conditional)?;
        Ok(Self { seed, ..problem })
    }
}

fn join(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

fn parse_num<T: std::str::FromStr>(s: &str, key: &str) -> Result<T> {
    s.parse()
        .map_err(|_| CeError::Parse(format!("bad value '{s}' for '{key}'")))
}

fn parse_row(s: &str) -> Result<Vec<f64>> {
    s.split_whitespace()
        .map(|v| parse_num::<f64>(v, "row"))
        .collect()
}

/// The length-constrained continue/end problem: reward of a sequence is its
/// length `t`, and sequences longer than `horizon` are invalid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceProblem {
    horizon: u64,
}

impl SequenceProblem {
    pub fn new(horizon: u64) -> Result<Self> {
        if horizon == 0 {
            return Err(CeError::InvalidParams("horizon must be at least 1".into()));
        }
        Ok(Self { horizon })
    }

    pub fn horizon(&self) -> u64 {
        self.horizon
    }

    pub fn reward(&self, length: u64) -> f64 {
        length as f64
    }

    pub fn is_valid(&self, length: u64) -> bool {
        (1..=self.horizon).contains(&length)
    }

    /// Longest admissible sequence and its reward.
    pub fn optimum(&self) -> (u64, f64) {
        (self.horizon, self.horizon as f64)
    }
}

/// Actions making up a sequence of the given length.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Continue,
    End,
}

/// `continue` repeated `length - 1` times, then `end`.
pub fn actions_of_length(length: u64) -> Vec<Action> {
    let mut out = vec![Action::Continue; length.saturating_sub(1) as usize];
    out.push(Action::End);
    out
}

/// Length of an action sequence, if it is a well-formed `continue* end` run.
pub fn length_of_actions(actions: &[Action]) -> Option<u64> {
    match actions.split_last() {
        Some((Action::End, head)) if head.iter().all(|a| *a == Action::Continue) => {
            Some(actions.len() as u64)
        }
        _ => None,
    }
}

pub fn sequence_problem(horizon: u64) -> Result<SequenceProblem> {
    SequenceProblem::new(horizon)
}

/// Conditional problem: `x, d in {0, 1}`, `p = (1/2, 1/2)`, `V(d, x) = 2x + d`.
pub fn example1() -> Problem {
    let rewards = (0..2)
        .flat_map(|d| (0..2).map(move |x| (2 * x + d) as f64))
        .collect();
    Problem::new(2, 2, vec![0.5, 0.5], rewards, true).expect("static data is valid")
}

/// Unconditional problem: `V(0,0) = 2`, `V(0,1) = -2`, `V(1,.) = 1`, `p = (1/2, 1/2)`.
pub fn example2() -> Problem {
    Problem::new(2, 2, vec![0.5, 0.5], vec![2.0, -2.0, 1.0, 1.0], false)
        .expect("static data is valid")
}

/// How the random system law is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SimplexMode {
    /// Uniform on the probability simplex (normalized exponential spacings).
    #[default]
    Uniform,
    /// Independent uniform components, normalized.
    NormalizedComponents,
}

/// Random benchmark problem with `n_states` decisions and system states.
/// `V` entries are uniform on `(0, 1]`.
pub fn random_problem<R: Rng + ?Sized>(
    n_states: usize,
    mode: SimplexMode,
    rng: &mut R,
) -> Result<Problem> {
    if n_states < 2 {
        return Err(CeError::InvalidParams(
            "random problems need at least 2 states".into(),
        ));
    }
    let rewards: Vec<f64> = (0..n_states * n_states)
        .map(|_| 1.0 - rng.random::<f64>())
        .collect();
    let raw: Vec<f64> = match mode {
        SimplexMode::Uniform => (0..n_states).map(|_| Exp1.sample(rng)).collect(),
        SimplexMode::NormalizedComponents => {
            (0..n_states).map(|_| 1.0 - rng.random::<f64>()).collect()
        }
    };
    let total: f64 = raw.iter().sum();
    let law = raw.into_iter().map(|v| v / total).collect();
    Problem::new(n_states, n_states, law, rewards, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn example1_data() {
        let p = example1();
        assert!(p.is_conditional());
        assert_eq!(p.reward(1, 1), 3.0);
        assert_eq!(p.reward(0, 0), 0.0);
        let worst_high = (0..2).map(|d| p.reward(d, 1)).fold(f64::INFINITY, f64::min);
        let best_low = (0..2)
            .map(|d| p.reward(d, 0))
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(worst_high > best_low);
    }

    #[test]
    fn example2_data() {
        let p = example2();
        assert!(!p.is_conditional());
        assert_eq!(p.decision_value(0), 0.0);
        assert_eq!(p.decision_value(1), 1.0);
        for d in 0..2 {
            for x in 0..2 {
                if (d, x) != (0, 0) {
                    assert!(p.reward(0, 0) > p.reward(d, x));
                }
            }
        }
    }

    #[test]
    fn sequence_rewards() {
        let s = sequence_problem(3).unwrap();
        let seq = [Action::Continue, Action::End];
        assert_eq!(s.reward(length_of_actions(&seq).unwrap()), 2.0);
        assert_eq!(s.reward(length_of_actions(&[Action::End]).unwrap()), 1.0);
        assert_eq!(s.optimum(), (3, 3.0));
        assert!(!s.is_valid(4));
        assert_eq!(length_of_actions(&[Action::End, Action::End]), None);
        assert_eq!(
            actions_of_length(3),
            vec![Action::Continue, Action::Continue, Action::End]
        );
        assert!(sequence_problem(0).is_err());
    }

    #[test]
    fn random_problem_ranges_and_determinism() {
        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = ChaCha8Rng::seed_from_u64(9);
        let p = random_problem(2, SimplexMode::Uniform, &mut a).unwrap();
        let q = random_problem(2, SimplexMode::Uniform, &mut b).unwrap();
        assert_eq!(p, q);
        let big = random_problem(30, SimplexMode::NormalizedComponents, &mut a).unwrap();
        let (lo, hi) = big.reward_bounds();
        assert!(lo > 0.0 && hi <= 1.0);
        assert!((big.system_law().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(big.system_law().iter().all(|&p| p >= 0.0));
        assert!(random_problem(1, SimplexMode::Uniform, &mut a).is_err());
    }

    #[test]
    fn text_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = random_problem(5, SimplexMode::Uniform, &mut rng)
            .unwrap()
            .with_seed(11);
        let back = Problem::from_text(&p.to_text()).unwrap();
        assert_eq!(p, back);
        assert!(Problem::from_text("decisions 2").is_err());
        assert!(
            Problem::from_text("ce-problem v1\ndecisions 1\nsystems 1\np 1\nV 1\nV 2\n").is_err()
        );
    }

    #[test]
    fn invalid_problem_rejected() {
        assert!(Problem::new(2, 2, vec![0.6, 0.6], vec![0.0; 4], false).is_err());
        assert!(Problem::new(2, 2, vec![0.5, 0.5], vec![0.0; 3], false).is_err());
    }
}
