//! Training objective: per-sample binary-cross-entropy classification loss
//! over the prototype scores, feature-space distillation against a frozen
//! snapshot, and their combination with gradients for the embedding network.
//!
//! Scores are clamped into `[1e-7, 1 - 1e-7]` strictly inside the loss to
//! keep the logarithms finite; scores everywhere else stay unclamped.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::{ClassId, LabeledSample};
use crate::embedding::{EmbeddingNetwork, NetworkSnapshot, ParamGradients};
use crate::error::{Error, Result};
use crate::prototypes::PrototypeStore;

/// Clamp bound for scores inside the logarithms.
pub const SCORE_CLAMP_EPS: f64 = 1e-7;

/// Guard for divisions by a vanishing norm.
const NORM_EPS: f64 = 1e-12;

/// Loss components of one batch. `total = classification + lambda * distillation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub classification: f64,
    pub distillation: f64,
    pub lambda: f64,
    pub total: f64,
}

#[inline]
fn clamp_score(p: f64) -> f64 {
    p.clamp(SCORE_CLAMP_EPS, 1.0 - SCORE_CLAMP_EPS)
}

/// Binary cross entropy over the per-class scores:
/// `-log p_truth - sum_{k != truth} log(1 - p_k)`, together with the
/// gradient with respect to each score. Scores at the clamp boundary get a
/// zero gradient, consistent with the clamped loss.
pub fn classification_loss(
    scores: &BTreeMap<ClassId, f64>,
    truth: &ClassId,
) -> Result<(f64, BTreeMap<ClassId, f64>)> {
    if !scores.contains_key(truth) {
        return Err(Error::MissingClass(truth.clone()));
    }
    let mut loss = 0.0;
    let mut grad = BTreeMap::new();
    for (class, &p) in scores {
        let c = clamp_score(p);
        let inside = p > SCORE_CLAMP_EPS && p < 1.0 - SCORE_CLAMP_EPS;
        if class == truth {
            loss -= c.ln();
            grad.insert(class.clone(), if inside { -1.0 / c } else { 0.0 });
        } else {
            loss -= (1.0 - c).ln();
            grad.insert(class.clone(), if inside { 1.0 / (1.0 - c) } else { 0.0 });
        }
    }
    Ok((loss, grad))
}

/// Chains a gradient over the scores into a gradient over the feature:
/// `dp_k/df = -(p_k / 2) * (f - mu_k) / ||f - mu_k||`.
pub(crate) fn score_grad_to_feature(
    store: &PrototypeStore,
    feature: &[f64],
    scores: &BTreeMap<ClassId, f64>,
    score_grad: &BTreeMap<ClassId, f64>,
) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; feature.len()];
    for (class, &g) in score_grad {
        if g == 0.0 {
            continue;
        }
        let proto = store
            .get(class)
            .ok_or_else(|| Error::MissingClass(class.clone()))?;
        let p = scores[class];
        let dist = crate::prototypes::euclidean_distance(feature, &proto.mean);
        let scale = -g * p / (2.0 * dist.max(NORM_EPS));
        for ((out, f), mu) in grad.iter_mut().zip(feature).zip(&proto.mean) {
            *out += scale * (f - mu);
        }
    }
    Ok(grad)
}

/// Distillation penalty from precomputed current and teacher features:
/// the Euclidean norm of their difference, with its gradient with respect
/// to the current feature.
pub(crate) fn distillation_from_features(feature: &[f64], old_feature: &[f64]) -> (f64, Vec<f64>) {
    debug_assert_eq!(feature.len(), old_feature.len());
    let diff: Vec<f64> = feature
        .iter()
        .zip(old_feature)
        .map(|(a, b)| a - b)
        .collect();
    let norm = diff.iter().map(|d| d * d).sum::<f64>().sqrt();
    let denom = norm.max(NORM_EPS);
    let grad = diff.iter().map(|d| d / denom).collect();
    (norm, grad)
}

/// Feature-drift penalty `||phi(x) - phi_old(x)||` against a frozen snapshot.
pub fn distillation_loss(
    net: &EmbeddingNetwork,
    snapshot: &NetworkSnapshot,
    x: &[f64],
) -> Result<(f64, Vec<f64>)> {
    if !snapshot.architecture_matches(net) {
        return Err(Error::StaleCache(
            "snapshot architecture does not match the network".into(),
        ));
    }
    let feature = net.forward(x)?;
    let old = snapshot.forward(x)?;
    Ok(distillation_from_features(&feature, &old))
}

/// Mean loss over a batch plus accumulated parameter gradients.
///
/// Every sample receives the classification term; when a snapshot is
/// present and `lambda > 0`, every sample also receives the distillation
/// term weighted by `lambda`.
pub fn total_loss(
    batch: &[LabeledSample],
    net: &EmbeddingNetwork,
    snapshot: Option<&NetworkSnapshot>,
    store: &PrototypeStore,
    lambda: f64,
) -> Result<(LossBreakdown, ParamGradients)> {
    if batch.is_empty() {
        return Err(Error::EmptyData("loss over an empty batch".into()));
    }
    if let Some(snap) = snapshot {
        if !snap.architecture_matches(net) {
            return Err(Error::StaleCache(
                "snapshot architecture does not match the network".into(),
            ));
        }
    }
    let distill_active = snapshot.is_some() && lambda > 0.0;

    let mut grads = ParamGradients::zeros_like(net);
    let mut cls_sum = 0.0;
    let mut dist_sum = 0.0;
    for sample in batch {
        let (feature, cache) = net.forward_with_cache(&sample.input)?;
        let scores = store.scores_all(&feature)?;
        let (l_cl, score_grad) = classification_loss(&scores, &sample.label)?;
        cls_sum += l_cl;
        let mut feat_grad = score_grad_to_feature(store, &feature, &scores, &score_grad)?;

        if distill_active {
            let old = snapshot.unwrap().forward(&sample.input)?;
            let (l_d, g_d) = distillation_from_features(&feature, &old);
            dist_sum += l_d;
            for (fg, dg) in feat_grad.iter_mut().zip(&g_d) {
                *fg += lambda * dg;
            }
        }
        net.backward_accumulate(&cache, &feat_grad, &mut grads)?;
    }

    let n = batch.len() as f64;
    grads.scale(1.0 / n);
    let classification = cls_sum / n;
    let distillation = dist_sum / n;
    Ok((
        LossBreakdown {
            classification,
            distillation,
            lambda,
            total: classification + lambda * distillation,
        },
        grads,
    ))
}
