//! Dynamic rejection threshold and the thresholded prediction rule.
//!
//! The threshold is a lifetime running average: each mini-batch contributes
//! the mean, over its represented classes, of a weighted average of the
//! ground-truth probability scores. Samples whose ground-truth score falls
//! at or below the current threshold are weighted by `w_minus`, the rest by
//! `w_plus`.

use serde::{Deserialize, Serialize};

use crate::dataset::ClassId;
use crate::error::{Error, Result};
use crate::prototypes::PrototypeStore;

/// Rejection threshold `theta` with its completed-update counter.
///
/// Starts at zero with zero steps: the first update discards the initial
/// value entirely, and a zero threshold accepts every score (scores are
/// strictly positive), so the first batch's samples all take `w_plus`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdState {
    pub theta: f64,
    pub step: u64,
}

impl ThresholdState {
    pub fn new() -> Self {
        ThresholdState {
            theta: 0.0,
            step: 0,
        }
    }
}

impl Default for ThresholdState {
    fn default() -> Self {
        Self::new()
    }
}

/// Importance weights for accepted (`w_plus`) and rejected (`w_minus`)
/// ground-truth scores in the threshold update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RejectionWeights {
    pub w_plus: f64,
    pub w_minus: f64,
}

impl Default for RejectionWeights {
    fn default() -> Self {
        RejectionWeights {
            w_plus: 1.0,
            w_minus: 3.0,
        }
    }
}

impl RejectionWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.w_plus.is_finite() && self.w_plus > 0.0)
            || !(self.w_minus.is_finite() && self.w_minus > 0.0)
        {
            return Err(Error::Config("w_plus and w_minus must be positive".into()));
        }
        Ok(())
    }
}

/// Outcome of classifying one sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Prediction {
    Known(ClassId),
    Unknown,
}

impl Prediction {
    pub fn is_unknown(&self) -> bool {
        matches!(self, Prediction::Unknown)
    }
}

/// Thresholded prediction: unknown when every class score is at or below
/// `theta`, otherwise the argmax class (ties broken by smallest class id).
pub fn predict_deepnno(
    store: &PrototypeStore,
    threshold: &ThresholdState,
    feature: &[f64],
) -> Result<Prediction> {
    let scores = store.scores_all(feature)?;
    let mut best: Option<(&ClassId, f64)> = None;
    for (class, &score) in &scores {
        if score > threshold.theta {
            // strictly-greater keeps the first (smallest) class id on ties
            match best {
                Some((_, b)) if score <= b => {}
                _ => best = Some((class, score)),
            }
        }
    }
    Ok(match best {
        Some((class, _)) => Prediction::Known(class.clone()),
        None => Prediction::Unknown,
    })
}

/// Per-sample weight: `w_plus` when the sample's own class score clears the
/// threshold, `w_minus` when it does not, zero for other classes.
pub fn sample_weight(
    sample_label: &ClassId,
    class: &ClassId,
    score: f64,
    theta: f64,
    weights: &RejectionWeights,
) -> f64 {
    if sample_label != class {
        0.0
    } else if score > theta {
        weights.w_plus
    } else {
        weights.w_minus
    }
}

/// Weighted average of one class's ground-truth scores within a batch.
/// Returns `None` when the class has no samples in the batch, signalling
/// that it must be excluded from the threshold update.
pub fn batch_class_average(
    class_scores: &[f64],
    theta: f64,
    weights: &RejectionWeights,
) -> Option<f64> {
    if class_scores.is_empty() {
        return None;
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for &p in class_scores {
        let w = if p > theta {
            weights.w_plus
        } else {
            weights.w_minus
        };
        num += w * p;
        den += w;
    }
    Some(num / den)
}

/// Folds one batch's per-class averages into the running threshold:
/// `theta <- (t*theta + mean(averages)) / (t + 1)`. Returns false (leaving
/// the state untouched) when no class was represented.
pub fn update_threshold(state: &mut ThresholdState, class_averages: &[f64]) -> bool {
    if class_averages.is_empty() {
        return false;
    }
    let batch_term = class_averages.iter().sum::<f64>() / class_averages.len() as f64;
    let t = state.step as f64;
    state.theta = (t * state.theta + batch_term) / (t + 1.0);
    state.step += 1;
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cid(s: &str) -> ClassId {
        ClassId::from(s)
    }

    fn two_class_store(mu_a: Vec<f64>, mu_b: Vec<f64>) -> PrototypeStore {
        let mut store = PrototypeStore::new(mu_a.len());
        store.set_prototype(cid("a"), mu_a, 1).unwrap();
        store.set_prototype(cid("b"), mu_b, 1).unwrap();
        store
    }

    #[test]
    fn accepts_argmax_above_threshold() {
        // a at distance ln(0.5^-2)=2ln2 -> score 0.5; b farther -> 0.2
        let d_a = -2.0 * f64::ln(0.5); // score 0.5
        let d_b = -2.0 * f64::ln(0.2); // score 0.2
        let store = two_class_store(vec![d_a, 0.0], vec![-d_b, 0.0]);
        let ts = ThresholdState {
            theta: 0.4,
            step: 1,
        };
        let got = predict_deepnno(&store, &ts, &[0.0, 0.0]).unwrap();
        assert_eq!(got, Prediction::Known(cid("a")));
    }

    #[test]
    fn rejects_when_all_scores_at_or_below_threshold() {
        let d_a = -2.0 * f64::ln(0.3);
        let d_b = -2.0 * f64::ln(0.2);
        let store = two_class_store(vec![d_a, 0.0], vec![-d_b, 0.0]);
        let ts = ThresholdState {
            theta: 0.4,
            step: 1,
        };
        assert_eq!(
            predict_deepnno(&store, &ts, &[0.0, 0.0]).unwrap(),
            Prediction::Unknown
        );
    }

    #[test]
    fn boundary_score_equal_to_threshold_is_rejected() {
        let store = two_class_store(vec![1.5, 0.0], vec![3.0, 1e3]);
        let query = [0.0, 0.0];
        let top = store.probability_score(&cid("a"), &query).unwrap();
        let ts = ThresholdState {
            theta: top,
            step: 1,
        };
        assert_eq!(
            predict_deepnno(&store, &ts, &query).unwrap(),
            Prediction::Unknown
        );
    }

    #[test]
    fn ties_break_to_smallest_class_id() {
        // both prototypes equidistant from the query
        let store = two_class_store(vec![1.0, 0.0], vec![-1.0, 0.0]);
        let ts = ThresholdState {
            theta: 0.1,
            step: 1,
        };
        assert_eq!(
            predict_deepnno(&store, &ts, &[0.0, 0.0]).unwrap(),
            Prediction::Known(cid("a"))
        );
    }

    #[test]
    fn empty_store_errors() {
        let store = PrototypeStore::new(2);
        let ts = ThresholdState::new();
        assert!(matches!(
            predict_deepnno(&store, &ts, &[0.0, 0.0]),
            Err(Error::EmptyModel)
        ));
    }

    #[test]
    fn sample_weight_branches() {
        let w = RejectionWeights {
            w_plus: 1.0,
            w_minus: 3.0,
        };
        assert_eq!(sample_weight(&cid("k"), &cid("k"), 0.8, 0.5, &w), 1.0);
        // boundary p <= theta takes w_minus
        assert_eq!(sample_weight(&cid("k"), &cid("k"), 0.5, 0.5, &w), 3.0);
        assert_eq!(sample_weight(&cid("k"), &cid("j"), 0.8, 0.5, &w), 0.0);
    }

    #[test]
    fn worked_weighted_average() {
        // w+=1, w-=3, theta=0.5, scores {0.8, 0.2} -> (1*0.8 + 3*0.2)/4 = 0.35
        let w = RejectionWeights {
            w_plus: 1.0,
            w_minus: 3.0,
        };
        let got = batch_class_average(&[0.8, 0.2], 0.5, &w).unwrap();
        assert!((got - 0.35).abs() < 1e-15, "got {got}");
    }

    #[test]
    fn uniform_weights_reduce_to_plain_mean() {
        let w = RejectionWeights {
            w_plus: 1.0,
            w_minus: 3.0,
        };
        let got = batch_class_average(&[0.8, 0.6, 0.7], 0.5, &w).unwrap();
        assert!((got - 0.7).abs() < 1e-15);
    }

    #[test]
    fn single_sample_average_is_its_score() {
        let w = RejectionWeights {
            w_plus: 2.0,
            w_minus: 5.0,
        };
        assert_eq!(batch_class_average(&[0.3], 0.9, &w).unwrap(), 0.3);
        assert_eq!(batch_class_average(&[0.95], 0.9, &w).unwrap(), 0.95);
    }

    #[test]
    fn empty_class_signals_exclusion() {
        let w = RejectionWeights::default();
        assert_eq!(batch_class_average(&[], 0.5, &w), None);
    }

    #[test]
    fn first_update_ignores_initial_theta() {
        let mut ts = ThresholdState {
            theta: 0.77,
            step: 0,
        };
        assert!(update_threshold(&mut ts, &[0.6, 0.2]));
        assert!((ts.theta - 0.4).abs() < 1e-15);
        assert_eq!(ts.step, 1);
    }

    #[test]
    fn running_average_step() {
        let mut ts = ThresholdState {
            theta: 0.4,
            step: 1,
        };
        assert!(update_threshold(&mut ts, &[0.8]));
        assert!((ts.theta - 0.6).abs() < 1e-15);
        assert_eq!(ts.step, 2);
    }

    #[test]
    fn fixed_point_of_the_average() {
        let mut ts = ThresholdState {
            theta: 0.45,
            step: 7,
        };
        assert!(update_threshold(&mut ts, &[0.45]));
        assert!((ts.theta - 0.45).abs() < 1e-15);
    }

    #[test]
    fn empty_batch_leaves_state_untouched() {
        let mut ts = ThresholdState {
            theta: 0.3,
            step: 4,
        };
        assert!(!update_threshold(&mut ts, &[]));
        assert_eq!(
            ts,
            ThresholdState {
                theta: 0.3,
                step: 4
            }
        );
    }
}
