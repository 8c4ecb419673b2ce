//! Parametric sampling laws used by the cross-entropy loop.
//!
//! Three families are provided:
//!
//! - [`CategoricalParams`]: a probability vector over a finite decision set.
//! - [`ConditionalCategoricalParams`]: one categorical row per system condition.
//! - [`GeometricStoppingParams`]: the law of a `continue; ...; continue; end`
//!   sequence where each step continues with probability `lambda`, optionally
//!   conditioned on the sequence length not exceeding a horizon.
//!
//! Every family exposes exact log-densities, a weighted maximum-likelihood
//! update (the cross-entropy minimizer against a weighted sample set) and a
//! pointwise convex mix of parameters used by the smoothed update.
//!
//! Parameter values are immutable; updates always return fresh values.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CeError, Result};

/// Tolerance on the sum of a probability vector.
pub const NORMALIZATION_TOL: f64 = 1e-9;

/// Hard cap on the length of a sampled stopping sequence.
pub const GEOMETRIC_LENGTH_CAP: u64 = 10_000_000;

/// Number of grid intervals scanned before golden-section refinement.
const TRUNCATED_GRID: usize = 1000;

/// Absolute tolerance of the golden-section refinement.
const GOLDEN_TOL: f64 = 1e-9;

/// A set of outcomes with nonnegative weights, at least one of them positive.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSamples<O> {
    outcomes: Vec<O>,
    weights: Vec<f64>,
}

impl<O> WeightedSamples<O> {
    pub fn new(outcomes: Vec<O>, weights: Vec<f64>) -> Result<Self> {
        if outcomes.len() != weights.len() {
            return Err(CeError::Contract(format!(
                "{} outcomes but {} weights",
                outcomes.len(),
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(CeError::Contract(format!(
                "weight {w} is not a nonnegative finite value"
            )));
        }
        if !weights.iter().any(|&w| w > 0.0) {
            return Err(CeError::Update("all sample weights are zero".into()));
        }
        Ok(Self { outcomes, weights })
    }

    /// Every outcome with weight one.
    pub fn uniform(outcomes: Vec<O>) -> Result<Self> {
        let weights = vec![1.0; outcomes.len()];
        Self::new(outcomes, weights)
    }

    pub fn outcomes(&self) -> &[O] {
        &self.outcomes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&O, f64)> {
        self.outcomes.iter().zip(self.weights.iter().copied())
    }
}

/// Common surface of a sampling-law family.
pub trait LawFamily: Clone + std::fmt::Debug + Send + Sync {
    type Outcome: Clone + std::fmt::Debug + Send + Sync;

    /// Exact log-density. Zero-probability outcomes inside the support give
    /// `f64::NEG_INFINITY`; outcomes outside the support are an error.
    fn log_prob(&self, outcome: &Self::Outcome) -> Result<f64>;

    /// Weighted maximum-likelihood fit over the family. `self` provides the
    /// shape, and for conditional laws the rows that receive no mass.
    fn fit(&self, samples: &WeightedSamples<Self::Outcome>) -> Result<Self>;

    /// Pointwise convex combination `alpha * self + (1 - alpha) * new`.
    fn mix(&self, new: &Self, alpha: f64) -> Result<Self>;

    /// Largest absolute parameter difference. Shapes are assumed to match.
    fn max_abs_change(&self, other: &Self) -> f64;

    /// Flat view of the parameters, for traces.
    fn snapshot(&self) -> Vec<f64>;

    /// Lift probabilities to at least `floor` and renormalize. Families without
    /// probability vectors return themselves unchanged.
    fn with_floor(&self, _floor: f64) -> Self {
        self.clone()
    }
}

/// Families that can be sampled without any extra context.
pub trait Sampler: LawFamily {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Self::Outcome>;
}

/// Fit a fresh law of the same kind (and shape) as `template`.
pub fn weighted_update<F: LawFamily>(
    template: &F,
    samples: &WeightedSamples<F::Outcome>,
) -> Result<F> {
    template.fit(samples)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(CeError::InvalidParams(format!(
            "smoothing rate {alpha} outside [0, 1)"
        )));
    }
    Ok(())
}

/// `old + (1 - alpha) (new - old)`: exact on `old == new`, exact `new` on `alpha == 0`.
fn blend(old: f64, new: f64, alpha: f64) -> f64 {
    if alpha == 0.0 {
        new
    } else {
        old + (1.0 - alpha) * (new - old)
    }
}

// ---------------------------------------------------------------------------
// Categorical
// ---------------------------------------------------------------------------

/// Probability vector over decisions `0..len`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalParams {
    probs: Vec<f64>,
}

impl CategoricalParams {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(CeError::InvalidParams("empty probability vector".into()));
        }
        if let Some(p) = probs
            .iter()
            .find(|p| !p.is_finite() || **p < 0.0 || **p > 1.0)
        {
            return Err(CeError::InvalidParams(format!(
                "probability {p} outside [0, 1]"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > NORMALIZATION_TOL {
            return Err(CeError::InvalidParams(format!(
                "probabilities sum to {sum}"
            )));
        }
        Ok(Self { probs })
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(CeError::InvalidParams("empty decision set".into()));
        }
        Ok(Self {
            probs: vec![1.0 / n as f64; n],
        })
    }

    /// Point mass on `decision`.
    pub fn dirac(n: usize, decision: usize) -> Result<Self> {
        if decision >= n {
            return Err(CeError::InvalidParams(format!(
                "decision {decision} outside 0..{n}"
            )));
        }
        let mut probs = vec![0.0; n];
        probs[decision] = 1.0;
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, decision: usize) -> f64 {
        self.probs.get(decision).copied().unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    fn from_masses(masses: Vec<f64>) -> Self {
        let total: f64 = masses.iter().sum();
        Self {
            probs: masses.into_iter().map(|m| m / total).collect(),
        }
    }

    fn check_shape(&self, other: &Self) -> Result<()> {
        if self.len() != other.len() {
            return Err(CeError::Contract(format!(
                "categorical sizes differ: {} vs {}",
                self.len(),
                other.len()
            )));
        }
        Ok(())
    }
}

impl LawFamily for CategoricalParams {
    type Outcome = usize;

    fn log_prob(&self, outcome: &usize) -> Result<f64> {
        match self.probs.get(*outcome) {
            Some(&p) => Ok(p.ln()),
            None => Err(CeError::Domain(format!(
                "decision {outcome} outside 0..{}",
                self.len()
            ))),
        }
    }

    fn fit(&self, samples: &WeightedSamples<usize>) -> Result<Self> {
        let mut masses = vec![0.0; self.len()];
        for (&d, w) in samples.iter() {
            *masses.get_mut(d).ok_or_else(|| {
                CeError::Domain(format!("decision {d} outside 0..{}", self.len()))
            })? += w;
        }
        Ok(Self::from_masses(masses))
    }

    fn mix(&self, new: &Self, alpha: f64) -> Result<Self> {
        self.check_shape(new)?;
        check_alpha(alpha)?;
        let probs = self
            .probs
            .iter()
            .zip(&new.probs)
            .map(|(&o, &n)| blend(o, n, alpha).clamp(0.0, 1.0))
            .collect();
        Ok(Self { probs })
    }

    fn max_abs_change(&self, other: &Self) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    fn snapshot(&self) -> Vec<f64> {
        self.probs.clone()
    }

    fn with_floor(&self, floor: f64) -> Self {
        if floor <= 0.0 {
            return self.clone();
        }
        Self::from_masses(self.probs.iter().map(|p| p.max(floor)).collect())
    }
}

impl Sampler for CategoricalParams {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<usize> {
        let u: f64 = rng.random();
        let mut cum = 0.0;
        for (i, &p) in self.probs.iter().enumerate() {
            cum += p;
            if u < cum {
                return Ok(i);
            }
        }
        // rounding left u above the accumulated mass
        Ok(self.probs.iter().rposition(|&p| p > 0.0).unwrap_or(0))
    }
}

// ---------------------------------------------------------------------------
// Conditional categorical
// ---------------------------------------------------------------------------

/// One decision law per condition `x`; outcomes are `(condition, decision)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalCategoricalParams {
    rows: Vec<CategoricalParams>,
}

impl ConditionalCategoricalParams {
    pub fn new(rows: Vec<CategoricalParams>) -> Result<Self> {
        let width = rows
            .first()
            .map(CategoricalParams::len)
            .ok_or_else(|| CeError::InvalidParams("no condition rows".into()))?;
        if rows.iter().any(|r| r.len() != width) {
            return Err(CeError::InvalidParams(
                "condition rows have different widths".into(),
            ));
        }
        Ok(Self { rows })
    }

    pub fn uniform(conditions: usize, decisions: usize) -> Result<Self> {
        let row = CategoricalParams::uniform(decisions)?;
        Self::new(vec![row; conditions])
    }

    pub fn rows(&self) -> &[CategoricalParams] {
        &self.rows
    }

    pub fn row(&self, condition: usize) -> Option<&CategoricalParams> {
        self.rows.get(condition)
    }

    pub fn conditions(&self) -> usize {
        self.rows.len()
    }

    pub fn decisions(&self) -> usize {
        self.rows[0].len()
    }

    /// Draw a decision for a given condition.
    pub fn sample_given<R: Rng + ?Sized>(&self, condition: usize, rng: &mut R) -> Result<usize> {
        self.row(condition)
            .ok_or_else(|| {
                CeError::Domain(format!(
                    "condition {condition} outside 0..{}",
                    self.conditions()
                ))
            })?
            .sample(rng)
    }

    fn check_shape(&self, other: &Self) -> Result<()> {
        if self.conditions() != other.conditions() || self.decisions() != other.decisions() {
            return Err(CeError::Contract("conditional table shapes differ".into()));
        }
        Ok(())
    }
}

impl LawFamily for ConditionalCategoricalParams {
    type Outcome = (usize, usize);

    fn log_prob(&self, &(x, d): &(usize, usize)) -> Result<f64> {
        self.row(x)
            .ok_or_else(|| {
                CeError::Domain(format!("condition {x} outside 0..{}", self.conditions()))
            })?
            .log_prob(&d)
    }

    /// Rows that receive no weight are carried over unchanged.
    fn fit(&self, samples: &WeightedSamples<(usize, usize)>) -> Result<Self> {
        let width = self.decisions();
        let mut masses = vec![vec![0.0; width]; self.conditions()];
        for (&(x, d), w) in samples.iter() {
            if d >= width {
                return Err(CeError::Domain(format!("decision {d} outside 0..{width}")));
            }
            masses.get_mut(x).ok_or_else(|| {
                CeError::Domain(format!("condition {x} outside 0..{}", self.conditions()))
            })?[d] += w;
        }
        let rows = masses
            .into_iter()
            .zip(&self.rows)
            .map(|(m, old)| {
                if m.iter().any(|&v| v > 0.0) {
                    CategoricalParams::from_masses(m)
                } else {
                    old.clone()
                }
            })
            .collect();
        Ok(Self { rows })
    }

    fn mix(&self, new: &Self, alpha: f64) -> Result<Self> {
        self.check_shape(new)?;
        let rows = self
            .rows
            .iter()
            .zip(&new.rows)
            .map(|(o, n)| o.mix(n, alpha))
            .collect::<Result<_>>()?;
        Ok(Self { rows })
    }

    fn max_abs_change(&self, other: &Self) -> f64 {
        self.rows
            .iter()
            .zip(&other.rows)
            .map(|(a, b)| a.max_abs_change(b))
            .fold(0.0, f64::max)
    }

    fn snapshot(&self) -> Vec<f64> {
        self.rows
            .iter()
            .flat_map(|r| r.probs.iter().copied())
            .collect()
    }

    fn with_floor(&self, floor: f64) -> Self {
        Self {
            rows: self.rows.iter().map(|r| r.with_floor(floor)).collect(),
        }
    }
}

// ---------------------------------------------------------------------------
// Geometric stopping time
// ---------------------------------------------------------------------------

/// Law of the length `t >= 1` of a sequence that continues with probability
/// `lambda` at every step: `P(t) = lambda^(t-1) (1 - lambda)`.
///
/// With a truncation horizon `T` the law is conditioned on `t <= T`:
/// `P(t | t <= T) = lambda^(t-1) (1 - lambda) / (1 - lambda^T)`, which tends to
/// the uniform law on `1..=T` as `lambda -> 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometricStoppingParams {
    lambda: f64,
    truncation: Option<u64>,
}

impl GeometricStoppingParams {
    pub fn new(lambda: f64, truncation: Option<u64>) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(CeError::InvalidParams(format!(
                "continuation probability {lambda} outside [0, 1]"
            )));
        }
        if truncation == Some(0) {
            return Err(CeError::InvalidParams(
                "truncation horizon must be at least 1".into(),
            ));
        }
        Ok(Self { lambda, truncation })
    }

    pub fn untruncated(lambda: f64) -> Result<Self> {
        Self::new(lambda, None)
    }

    pub fn truncated(lambda: f64, horizon: u64) -> Result<Self> {
        Self::new(lambda, Some(horizon))
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn truncation(&self) -> Option<u64> {
        self.truncation
    }

    fn check_length(&self, t: u64) -> Result<()> {
        if t == 0 {
            return Err(CeError::Domain("sequence length must be at least 1".into()));
        }
        if let Some(horizon) = self.truncation {
            if t > horizon {
                return Err(CeError::Domain(format!(
                    "length {t} exceeds horizon {horizon}"
                )));
            }
        }
        Ok(())
    }
}

/// `sum_{k=0}^{T-1} lambda^k`, the truncated normalizer divided by `1 - lambda`.
pub(crate) fn geometric_partial_sum(lambda: f64, horizon: u64) -> f64 {
    if lambda == 0.0 {
        1.0
    } else if lambda == 1.0 {
        horizon as f64
    } else {
        -(horizon as f64 * lambda.ln()).exp_m1() / (1.0 - lambda)
    }
}

/// `(t - 1) ln(lambda)` with the `0 * ln 0 = 0` convention.
fn continuation_log(lambda: f64, t: f64) -> f64 {
    if t == 1.0 {
        0.0
    } else {
        (t - 1.0) * lambda.ln()
    }
}

impl LawFamily for GeometricStoppingParams {
    type Outcome = u64;

    fn log_prob(&self, &t: &u64) -> Result<f64> {
        self.check_length(t)?;
        let head = continuation_log(self.lambda, t as f64);
        Ok(match self.truncation {
            None => head + (1.0 - self.lambda).ln(),
            Some(horizon) => head - geometric_partial_sum(self.lambda, horizon).ln(),
        })
    }

    /// Untruncated: closed form `lambda = 1 - sum(w) / sum(w t)`.
    /// Truncated: numerical maximizer of the conditional likelihood.
    fn fit(&self, samples: &WeightedSamples<u64>) -> Result<Self> {
        match self.truncation {
            None => geometric_update(samples),
            Some(horizon) => truncated_update(samples, horizon),
        }
    }

    fn mix(&self, new: &Self, alpha: f64) -> Result<Self> {
        if self.truncation != new.truncation {
            return Err(CeError::Contract("geometric truncations differ".into()));
        }
        check_alpha(alpha)?;
        Ok(Self {
            lambda: blend(self.lambda, new.lambda, alpha).clamp(0.0, 1.0),
            truncation: self.truncation,
        })
    }

    fn max_abs_change(&self, other: &Self) -> f64 {
        (self.lambda - other.lambda).abs()
    }

    fn snapshot(&self) -> Vec<f64> {
        vec![self.lambda]
    }
}

impl Sampler for GeometricStoppingParams {
    /// Inversion sampling; equivalent in law to tossing continue/end until end.
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<u64> {
        let lambda = self.lambda;
        if lambda == 0.0 {
            return Ok(1);
        }
        let u: f64 = rng.random();
        let t = match self.truncation {
            None => {
                if lambda == 1.0 {
                    return Err(CeError::NonTermination(
                        "lambda = 1 without truncation never emits end".into(),
                    ));
                }
                // P(t > k) = lambda^k, with 1 - u in (0, 1]
                let raw = ((1.0 - u).ln() / lambda.ln()).ceil();
                if raw > GEOMETRIC_LENGTH_CAP as f64 {
                    return Err(CeError::NonTermination(format!(
                        "sampled length exceeds the cap of {GEOMETRIC_LENGTH_CAP}"
                    )));
                }
                raw.max(1.0) as u64
            }
            Some(horizon) => {
                if lambda == 1.0 {
                    1 + ((u * horizon as f64) as u64).min(horizon - 1)
                } else {
                    // P(t <= k | t <= T) = (1 - lambda^k) / (1 - lambda^T)
                    let mass = -(horizon as f64 * lambda.ln()).exp_m1();
                    let raw = ((-u * mass).ln_1p() / lambda.ln()).ceil();
                    (raw.max(1.0) as u64).min(horizon)
                }
            }
        };
        Ok(t)
    }
}

fn weighted_mean_length(samples: &WeightedSamples<u64>, horizon: Option<u64>) -> Result<f64> {
    let mut mass = 0.0;
    let mut length_mass = 0.0;
    for (&t, w) in samples.iter() {
        if t == 0 {
            return Err(CeError::Domain("sequence length must be at least 1".into()));
        }
        if let Some(h) = horizon {
            if t > h {
                return Err(CeError::Domain(format!("length {t} exceeds horizon {h}")));
            }
        }
        mass += w;
        length_mass += w * t as f64;
    }
    Ok(length_mass / mass)
}

/// Weighted maximum-likelihood fit of the untruncated law:
/// `lambda = 1 - sum(w) / sum(w t)`.
pub fn geometric_update(samples: &WeightedSamples<u64>) -> Result<GeometricStoppingParams> {
    let mut mass = 0.0;
    let mut length_mass = 0.0;
    for (&t, w) in samples.iter() {
        if t == 0 {
            return Err(CeError::Domain("sequence length must be at least 1".into()));
        }
        mass += w;
        length_mass += w * t as f64;
    }
    GeometricStoppingParams::untruncated((1.0 - mass / length_mass).clamp(0.0, 1.0))
}

/// Log of `lambda^(m-1) (1 - lambda) / (1 - lambda^T)`, written as
/// `(m - 1) ln(lambda) - ln(sum_{k<T} lambda^k)` so that `lambda = 1` is finite.
pub fn truncated_log_objective(lambda: f64, mean_length: f64, horizon: u64) -> f64 {
    if lambda == 0.0 {
        return if mean_length == 1.0 {
            0.0
        } else {
            f64::NEG_INFINITY
        };
    }
    (mean_length - 1.0) * lambda.ln() - geometric_partial_sum(lambda, horizon).ln()
}

/// Maximizer over `[0, 1]` of the conditional likelihood with mean length `m`.
pub fn maximize_truncated_likelihood(mean_length: f64, horizon: u64) -> f64 {
    if mean_length >= horizon as f64 {
        return 1.0;
    }
    if mean_length <= 1.0 {
        return 0.0;
    }
    let objective = |l: f64| truncated_log_objective(l, mean_length, horizon);

    let step = 1.0 / TRUNCATED_GRID as f64;
    let mut best_i = 0;
    let mut best_v = f64::NEG_INFINITY;
    for i in 0..=TRUNCATED_GRID {
        let v = objective(i as f64 * step);
        if v > best_v {
            best_v = v;
            best_i = i;
        }
    }

    let mut lo = best_i.saturating_sub(1) as f64 * step;
    let mut hi = ((best_i + 1).min(TRUNCATED_GRID)) as f64 * step;
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - ratio * (hi - lo);
    let mut b = lo + ratio * (hi - lo);
    let (mut fa, mut fb) = (objective(a), objective(b));
    while hi - lo > GOLDEN_TOL {
        if fa < fb {
            lo = a;
            a = b;
            fa = fb;
            b = lo + ratio * (hi - lo);
            fb = objective(b);
        } else {
            hi = b;
            b = a;
            fb = fa;
            a = hi - ratio * (hi - lo);
            fa = objective(a);
        }
    }
    let refined = 0.5 * (lo + hi);

    [
        (refined, objective(refined)),
        (best_i as f64 * step, best_v),
        (lo, objective(lo)),
        (hi, objective(hi)),
    ]
    .into_iter()
    .fold((refined, f64::NEG_INFINITY), |acc, c| {
        if c.1 > acc.1 {
            c
        } else {
            acc
        }
    })
    .0
    .clamp(0.0, 1.0)
}

/// Weighted maximum-likelihood fit of the law conditioned on `t <= horizon`.
pub fn truncated_update(
    samples: &WeightedSamples<u64>,
    horizon: u64,
) -> Result<GeometricStoppingParams> {
    if horizon == 0 {
        return Err(CeError::InvalidParams(
            "truncation horizon must be at least 1".into(),
        ));
    }
    let mean = weighted_mean_length(samples, Some(horizon))?;
    GeometricStoppingParams::truncated(maximize_truncated_likelihood(mean, horizon), horizon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn degenerate_categorical_always_first() {
        let law = CategoricalParams::new(vec![1.0, 0.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!((0..1000).all(|_| law.sample(&mut rng).unwrap() == 0));
    }

    #[test]
    fn zero_lambda_ends_immediately() {
        let law = GeometricStoppingParams::untruncated(0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert!((0..1000).all(|_| law.sample(&mut rng).unwrap() == 1));
        assert_eq!(law.log_prob(&1).unwrap(), 0.0);
        assert_eq!(law.log_prob(&2).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn half_lambda_first_length_frequency() {
        let law = GeometricStoppingParams::untruncated(0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 100_000;
        let ones = (0..n)
            .filter(|_| law.sample(&mut rng).unwrap() == 1)
            .count();
        assert!(close(ones as f64 / n as f64, 0.5, 0.01));
    }

    #[test]
    fn untruncated_unit_lambda_is_guarded() {
        let law = GeometricStoppingParams::untruncated(1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert!(matches!(
            law.sample(&mut rng),
            Err(CeError::NonTermination(_))
        ));
    }

    #[test]
    fn truncated_unit_lambda_is_uniform() {
        let law = GeometricStoppingParams::truncated(1.0, 4).unwrap();
        for t in 1..=4 {
            assert!(close(law.log_prob(&t).unwrap(), (0.25f64).ln(), 1e-15));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut counts = [0usize; 4];
        for _ in 0..40_000 {
            counts[law.sample(&mut rng).unwrap() as usize - 1] += 1;
        }
        assert!(counts
            .iter()
            .all(|&c| (c as f64 / 40_000.0 - 0.25).abs() < 0.01));
    }

    #[test]
    fn log_prob_examples() {
        let g = GeometricStoppingParams::untruncated(0.5).unwrap();
        assert!(close(g.log_prob(&2).unwrap(), 0.25f64.ln(), 1e-15));
        let tg = GeometricStoppingParams::truncated(0.5, 2).unwrap();
        assert!(close(tg.log_prob(&1).unwrap(), (0.5f64 / 0.75).ln(), 1e-15));
        assert!(matches!(tg.log_prob(&3), Err(CeError::Domain(_))));
        let c = CategoricalParams::new(vec![0.3, 0.7]).unwrap();
        assert!(close(c.log_prob(&1).unwrap(), 0.7f64.ln(), 1e-15));
        assert!(matches!(c.log_prob(&2), Err(CeError::Domain(_))));
        let z = CategoricalParams::new(vec![1.0, 0.0]).unwrap();
        assert_eq!(z.log_prob(&1).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn geometric_closed_form_update() {
        let s = WeightedSamples::uniform(vec![4u64, 2, 2]).unwrap();
        let fitted =
            weighted_update(&GeometricStoppingParams::untruncated(0.3).unwrap(), &s).unwrap();
        assert!(close(fitted.lambda(), 0.625, 1e-15));
        let ones = WeightedSamples::uniform(vec![1u64; 7]).unwrap();
        assert_eq!(geometric_update(&ones).unwrap().lambda(), 0.0);
    }

    #[test]
    fn categorical_frequencies_update() {
        let s = WeightedSamples::uniform(vec![0usize, 0, 1]).unwrap();
        let fitted = CategoricalParams::uniform(2).unwrap().fit(&s).unwrap();
        assert!(close(fitted.prob(0), 2.0 / 3.0, 1e-15));
        assert!(close(fitted.prob(1), 1.0 / 3.0, 1e-15));
    }

    #[test]
    fn update_rejects_bad_weights() {
        assert!(matches!(
            WeightedSamples::new(vec![0usize, 1], vec![0.0, 0.0]),
            Err(CeError::Update(_))
        ));
        assert!(matches!(
            WeightedSamples::new(vec![0usize, 1], vec![1.0, -0.5]),
            Err(CeError::Contract(_))
        ));
        assert!(matches!(
            WeightedSamples::new(vec![0usize], vec![1.0, 1.0]),
            Err(CeError::Contract(_))
        ));
    }

    #[test]
    fn conditional_rows_without_mass_are_kept() {
        let old = ConditionalCategoricalParams::new(vec![
            CategoricalParams::new(vec![0.2, 0.8]).unwrap(),
            CategoricalParams::uniform(2).unwrap(),
        ])
        .unwrap();
        let s = WeightedSamples::new(vec![(1usize, 1usize), (1, 1), (0, 0)], vec![1.0, 1.0, 0.0])
            .unwrap();
        let new = old.fit(&s).unwrap();
        assert_eq!(new.row(0), old.row(0));
        assert_eq!(new.row(1).unwrap().probs(), &[0.0, 1.0]);
    }

    #[test]
    fn truncated_update_boundaries() {
        let ones = WeightedSamples::uniform(vec![1u64; 5]).unwrap();
        assert_eq!(truncated_update(&ones, 4).unwrap().lambda(), 0.0);
        let full = WeightedSamples::uniform(vec![3u64; 5]).unwrap();
        assert_eq!(truncated_update(&full, 3).unwrap().lambda(), 1.0);
        let over = WeightedSamples::uniform(vec![3u64, 5]).unwrap();
        assert!(matches!(
            truncated_update(&over, 4),
            Err(CeError::Domain(_))
        ));
    }

    #[test]
    fn truncated_update_matches_grid_scan() {
        // independent scan of lambda^0.5 (1 - lambda) / (1 - lambda^2) = sqrt(lambda) / (1 + lambda)
        // on a 1e-6 grid; the cancelled form avoids 0/0 noise next to 1
        let direct = |l: f64| l.sqrt() / (1.0 + l);
        let n = 1_000_000;
        let (mut arg, mut best) = (0.0, f64::NEG_INFINITY);
        for i in 0..=n {
            let l = i as f64 / n as f64;
            let v = direct(l);
            if v >= best {
                best = v;
                arg = l;
            }
        }
        let s = WeightedSamples::uniform(vec![1u64, 2]).unwrap();
        let fitted = truncated_update(&s, 2).unwrap();
        assert!(
            close(fitted.lambda(), arg, 1e-6),
            "{} vs {}",
            fitted.lambda(),
            arg
        );
    }

    #[test]
    fn interior_truncated_maximizer() {
        // T = 10, mean 3: first-order condition (m - 1) = lambda S'(lambda) / S(lambda)
        let l = maximize_truncated_likelihood(3.0, 10);
        assert!(l > 0.0 && l < 1.0);
        let s: f64 = (0..10).map(|k| l.powi(k)).sum();
        let ds: f64 = (1..10).map(|k| k as f64 * l.powi(k)).sum();
        assert!(close(ds / s, 2.0, 1e-7));
    }

    #[test]
    fn mix_examples() {
        let p = CategoricalParams::new(vec![1.0, 0.0]).unwrap();
        let q = CategoricalParams::new(vec![0.0, 1.0]).unwrap();
        assert_eq!(p.mix(&q, 0.0).unwrap(), q);
        assert_eq!(p.mix(&p, 0.37).unwrap(), p);
        let m = p.mix(&q, 0.9).unwrap();
        assert!(close(m.prob(0), 0.9, 1e-15) && close(m.prob(1), 0.1, 1e-15));
        let three = CategoricalParams::uniform(3).unwrap();
        assert!(matches!(p.mix(&three, 0.5), Err(CeError::Contract(_))));
        assert!(matches!(p.mix(&q, 1.0), Err(CeError::InvalidParams(_))));
        let a = GeometricStoppingParams::truncated(0.5, 3).unwrap();
        let b = GeometricStoppingParams::untruncated(0.5).unwrap();
        assert!(matches!(a.mix(&b, 0.5), Err(CeError::Contract(_))));
    }

    #[test]
    fn floor_lifts_zeros() {
        let p = CategoricalParams::new(vec![1.0, 0.0]).unwrap();
        let f = p.with_floor(0.01);
        assert!(f.prob(1) > 0.0);
        assert!(close(f.probs().iter().sum::<f64>(), 1.0, 1e-12));
        assert_eq!(p.with_floor(0.0), p);
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(CategoricalParams::new(vec![0.5, 0.6]).is_err());
        assert!(CategoricalParams::new(vec![]).is_err());
        assert!(CategoricalParams::new(vec![-0.1, 1.1]).is_err());
        assert!(GeometricStoppingParams::new(1.5, None).is_err());
        assert!(GeometricStoppingParams::new(0.5, Some(0)).is_err());
    }
}
