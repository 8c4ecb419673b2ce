//! Turning a batch of evaluated samples into update weights.

use serde::{Deserialize, Serialize};

use crate::error::{CeError, Result};

/// Offset added by [`ImportanceMap::ShiftedIdentity`] so the worst sample keeps a sliver of weight.
pub const SHIFT_EPSILON: f64 = 1e-9;

/// Nondecreasing map from a reward to a nonnegative importance weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ImportanceMap {
    /// `R(v) = v`; only valid for nonnegative rewards.
    Identity,
    /// `R(v) = v - min(batch) + 1e-9`, recomputed for every batch.
    ShiftedIdentity,
    /// `R(v) = v + shift` with a fixed shift; valid when every reward is at least `-shift`.
    Offset { shift: f64 },
    /// `R(v) = exp(beta v)` with `beta >= 0`.
    Exponential { beta: f64 },
}

impl ImportanceMap {
    pub fn weights(&self, values: &[f64]) -> Vec<f64> {
        match *self {
            ImportanceMap::Identity => values.to_vec(),
            ImportanceMap::ShiftedIdentity => {
                let min = values.iter().copied().fold(f64::INFINITY, f64::min);
                values.iter().map(|v| v - min + SHIFT_EPSILON).collect()
            }
            ImportanceMap::Offset { shift } => values.iter().map(|v| v + shift).collect(),
            ImportanceMap::Exponential { beta } => {
                values.iter().map(|v| (beta * v).exp()).collect()
            }
        }
    }

    /// Spot check on the reward range `[lo, hi]` that the map is nonnegative and nondecreasing.
    pub fn check_range(&self, lo: f64, hi: f64) -> Result<()> {
        match *self {
            ImportanceMap::Identity if lo < 0.0 => Err(CeError::InvalidParams(format!(
                "identity importance is negative on rewards down to {lo}; use the shifted identity"
            ))),
            ImportanceMap::Offset { shift } if (lo + shift).is_nan() || lo + shift < 0.0 => {
                Err(CeError::InvalidParams(format!(
                    "offset importance {shift} leaves rewards down to {lo} negative"
                )))
            }
            ImportanceMap::Exponential { beta } if !(beta >= 0.0 && beta.is_finite()) => {
                Err(CeError::InvalidParams(format!(
                    "exponential importance needs beta >= 0, got {beta}"
                )))
            }
            ImportanceMap::Exponential { beta } if !(beta * hi).exp().is_finite() => Err(
                CeError::InvalidParams(format!("exp({beta} * {hi}) overflows")),
            ),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SelectionScheme {
    /// Unit weight on the `ceil(rho N)` best samples.
    Quantile { rho: f64 },
    /// Weight `R(v)` on every sample.
    Smooth { importance: ImportanceMap },
}

impl Default for SelectionScheme {
    fn default() -> Self {
        SelectionScheme::Quantile { rho: 0.1 }
    }
}

impl SelectionScheme {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SelectionScheme::Quantile { rho } if !(rho > 0.0 && rho < 1.0) => Err(
                CeError::InvalidParams(format!("selective rate {rho} outside (0, 1)")),
            ),
            SelectionScheme::Smooth {
                importance: ImportanceMap::Exponential { beta },
            } if beta.is_nan() || beta < 0.0 => Err(CeError::InvalidParams(format!(
                "exponential importance needs beta >= 0, got {beta}"
            ))),
            _ => Ok(()),
        }
    }

    pub fn check_reward_range(&self, lo: f64, hi: f64) -> Result<()> {
        match self {
            SelectionScheme::Quantile { .. } => Ok(()),
            SelectionScheme::Smooth { importance } => importance.check_range(lo, hi),
        }
    }
}

/// Number of samples kept by quantile selection.
pub fn elite_count(rho: f64, n: usize) -> usize {
    // guard against rho * n landing one ulp above an integer
    (((rho * n as f64) - 1e-9).ceil().max(1.0) as usize).min(n)
}

/// Selection weights together with bookkeeping for traces.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub weights: Vec<f64>,
    /// Value of the worst selected sample, for quantile selection.
    pub threshold: Option<f64>,
}

impl Selection {
    pub fn weight_sum(&self) -> f64 {
        self.weights.iter().sum()
    }
}

pub fn select(values: &[f64], scheme: &SelectionScheme) -> Result<Selection> {
    if values.is_empty() {
        return Err(CeError::Selection("no samples to select from".into()));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(CeError::Selection("NaN reward".into()));
    }
    match *scheme {
        SelectionScheme::Quantile { rho } => {
            let keep = elite_count(rho, values.len());
            let mut order: Vec<usize> = (0..values.len()).collect();
            // stable: equal values keep increasing index order
            order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
            let mut weights = vec![0.0; values.len()];
            for &i in &order[..keep] {
                weights[i] = 1.0;
            }
            Ok(Selection {
                weights,
                threshold: Some(values[order[keep - 1]]),
            })
        }
        SelectionScheme::Smooth { importance } => {
            let weights = importance.weights(values);
            if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
                return Err(CeError::Selection(format!(
                    "importance weight {w} is not a nonnegative finite value"
                )));
            }
            if !weights.iter().any(|&w| w > 0.0) {
                return Err(CeError::Selection("all importance weights are zero".into()));
            }
            Ok(Selection {
                weights,
                threshold: None,
            })
        }
    }
}

/// Weights for `values` under `scheme` (length N).
pub fn select_weights(values: &[f64], scheme: &SelectionScheme) -> Result<Vec<f64>> {
    select(values, scheme).map(|s| s.weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_single_best() {
        let w = select_weights(
            &[3.0, 1.0, 2.0],
            &SelectionScheme::Quantile { rho: 1.0 / 3.0 },
        )
        .unwrap();
        assert_eq!(w, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn quantile_ties_prefer_lower_index() {
        let w = select_weights(
            &[5.0, 5.0, 1.0],
            &SelectionScheme::Quantile { rho: 1.0 / 3.0 },
        )
        .unwrap();
        assert_eq!(w, vec![1.0, 0.0, 0.0]);
        let w = select_weights(
            &[1.0, 5.0, 5.0, 5.0],
            &SelectionScheme::Quantile { rho: 0.5 },
        )
        .unwrap();
        assert_eq!(w, vec![0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn smooth_identity_weights() {
        let s = SelectionScheme::Smooth {
            importance: ImportanceMap::Identity,
        };
        assert_eq!(
            select_weights(&[3.0, 1.0, 2.0], &s).unwrap(),
            vec![3.0, 1.0, 2.0]
        );
        assert!(matches!(
            select_weights(&[0.0, 0.0], &s),
            Err(CeError::Selection(_))
        ));
        assert!(matches!(
            select_weights(&[1.0, -1.0], &s),
            Err(CeError::Selection(_))
        ));
    }

    #[test]
    fn shifted_identity_is_nonnegative() {
        let s = SelectionScheme::Smooth {
            importance: ImportanceMap::ShiftedIdentity,
        };
        let w = select_weights(&[2.0, -2.0, 1.0], &s).unwrap();
        assert_eq!(w[1], SHIFT_EPSILON);
        assert!((w[0] - 4.0).abs() < 1e-8 && (w[2] - 3.0).abs() < 1e-8);
    }

    #[test]
    fn offset_weights_and_range() {
        let map = ImportanceMap::Offset { shift: 2.0 };
        assert_eq!(map.weights(&[2.0, -2.0, 1.0]), vec![4.0, 0.0, 3.0]);
        assert!(map.check_range(-2.0, 2.0).is_ok());
        assert!(map.check_range(-3.0, 2.0).is_err());
    }

    #[test]
    fn elite_counts() {
        assert_eq!(elite_count(0.1, 100), 10);
        assert_eq!(elite_count(0.1, 5), 1);
        assert_eq!(elite_count(1.0 / 3.0, 3), 1);
        assert_eq!(elite_count(0.15, 10), 2);
    }

    #[test]
    fn scheme_validation() {
        assert!(SelectionScheme::Quantile { rho: 0.0 }.validate().is_err());
        assert!(SelectionScheme::Quantile { rho: 1.0 }.validate().is_err());
        let id = SelectionScheme::Smooth {
            importance: ImportanceMap::Identity,
        };
        assert!(id.check_reward_range(-2.0, 2.0).is_err());
        assert!(id.check_reward_range(0.0, 2.0).is_ok());
    }
}
