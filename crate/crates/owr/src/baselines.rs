//! Closed-world NCM with a learned linear metric and the shallow
//! nearest-non-outlier (NNO) algorithm, used as frozen-representation
//! comparison baselines.
//!
//! All functions here operate on feature vectors; [`NnoBaseline`] bundles a
//! frozen backbone so it can classify raw inputs.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::dataset::ClassId;
use crate::embedding::NetworkSnapshot;
use crate::error::{Error, Result};
use crate::prototypes::PrototypeStore;
use crate::rejection::Prediction;

/// Linear projection `W` (row-major, `feature_dim x metric_dim`) mapping
/// features into the metric space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearMetric {
    entries: Vec<f64>,
    feature_dim: usize,
    metric_dim: usize,
}

impl LinearMetric {
    pub fn new(feature_dim: usize, metric_dim: usize, entries: Vec<f64>) -> Result<Self> {
        if feature_dim == 0 || metric_dim == 0 {
            return Err(Error::Config("metric dimensions must be positive".into()));
        }
        if entries.len() != feature_dim * metric_dim {
            return Err(Error::InputShape {
                expected: feature_dim * metric_dim,
                got: entries.len(),
            });
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("metric entries".into()));
        }
        Ok(LinearMetric {
            entries,
            feature_dim,
            metric_dim,
        })
    }

    /// Identity-padded projection (`metric_dim <= feature_dim`): the
    /// untrained baseline then reduces to plain NCM on the leading
    /// coordinates, and to exact NCM when the dims are equal.
    pub fn identity(feature_dim: usize, metric_dim: usize) -> Result<Self> {
        if metric_dim > feature_dim {
            return Err(Error::Config(
                "identity metric requires metric_dim <= feature_dim".into(),
            ));
        }
        let mut entries = vec![0.0; feature_dim * metric_dim];
        for i in 0..metric_dim {
            entries[i * metric_dim + i] = 1.0;
        }
        LinearMetric::new(feature_dim, metric_dim, entries)
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn metric_dim(&self) -> usize {
        self.metric_dim
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [f64] {
        &mut self.entries
    }

    /// `W^T v`, length `metric_dim`.
    pub fn project(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.feature_dim {
            return Err(Error::InputShape {
                expected: self.feature_dim,
                got: v.len(),
            });
        }
        let mut out = vec![0.0; self.metric_dim];
        for (r, x) in v.iter().enumerate() {
            let row = &self.entries[r * self.metric_dim..(r + 1) * self.metric_dim];
            for (o, w) in out.iter_mut().zip(row) {
                *o += w * x;
            }
        }
        Ok(out)
    }
}

/// NNO score parameters: the distance cutoff `tau` and the normalization
/// factor `eta_tau`. Predictions are invariant to any positive `eta_tau`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NnoParams {
    pub tau: f64,
    pub eta_tau: f64,
}

impl NnoParams {
    pub fn new(tau: f64) -> Self {
        NnoParams { tau, eta_tau: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::Config("tau must be positive".into()));
        }
        if !(self.eta_tau.is_finite() && self.eta_tau > 0.0) {
            return Err(Error::Config("eta_tau must be positive".into()));
        }
        Ok(())
    }
}

/// Distance in the projected metric space: `||W^T f - W^T mu||`.
pub fn metric_distance(metric: &LinearMetric, f: &[f64], mu: &[f64]) -> Result<f64> {
    let pf = metric.project(f)?;
    let pm = metric.project(mu)?;
    Ok(crate::prototypes::euclidean_distance(&pf, &pm))
}

/// Closed-world prediction: the class of the nearest projected mean.
/// Ties break to the smallest class id; never returns an unknown verdict.
pub fn ncm_predict(metric: &LinearMetric, store: &PrototypeStore, f: &[f64]) -> Result<ClassId> {
    if store.is_empty() {
        return Err(Error::EmptyModel);
    }
    let mut best: Option<(&ClassId, f64)> = None;
    for (class, proto) in store.iter() {
        let d = metric_distance(metric, f, &proto.mean)?;
        match best {
            Some((_, bd)) if d >= bd => {}
            _ => best = Some((class, d)),
        }
    }
    Ok(best.unwrap().0.clone())
}

/// Metric-learning objective `-(1/M) sum log p_{k_i}(x_i)` with
/// `p_k = exp(-d_k^W / 2)`, and its gradient over the projection entries.
/// Samples are (label, feature) pairs.
pub fn ncm_loss_and_grad(
    metric: &LinearMetric,
    dataset: &[(ClassId, Vec<f64>)],
    store: &PrototypeStore,
) -> Result<(f64, Vec<f64>)> {
    if dataset.is_empty() {
        return Err(Error::EmptyData("metric loss over an empty dataset".into()));
    }
    let (m, d) = (metric.feature_dim(), metric.metric_dim());
    let mut loss = 0.0;
    let mut grad = vec![0.0; m * d];
    let inv_m = 1.0 / dataset.len() as f64;
    for (label, feature) in dataset {
        let proto = store
            .get(label)
            .ok_or_else(|| Error::MissingClass(label.clone()))?;
        let diff: Vec<f64> = feature
            .iter()
            .zip(&proto.mean)
            .map(|(a, b)| a - b)
            .collect();
        let z = metric.project(&diff)?;
        let dist = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        // -log p = d/2
        loss += 0.5 * dist * inv_m;
        // d||z||/dW[r][c] = diff[r] * z[c] / ||z||, guarded at zero
        let denom = dist.max(1e-12);
        let scale = 0.5 * inv_m / denom;
        for (r, &u) in diff.iter().enumerate() {
            let row = &mut grad[r * d..(r + 1) * d];
            for (g, &zc) in row.iter_mut().zip(&z) {
                *g += scale * u * zc;
            }
        }
    }
    Ok((loss, grad))
}

/// Plain gradient descent on the metric-learning objective.
/// Returns the loss after the final step.
pub fn fit_metric(
    metric: &mut LinearMetric,
    dataset: &[(ClassId, Vec<f64>)],
    store: &PrototypeStore,
    steps: usize,
    learning_rate: f64,
) -> Result<f64> {
    let (mut loss, _) = ncm_loss_and_grad(metric, dataset, store)?;
    for _ in 0..steps {
        let (l, grad) = ncm_loss_and_grad(metric, dataset, store)?;
        loss = l;
        for (w, g) in metric.entries_mut().iter_mut().zip(&grad) {
            *w -= learning_rate * g;
        }
    }
    Ok(loss)
}

/// Linear score `eta_tau * (1 - d / tau)`: positive inside the cutoff,
/// zero at `tau`, negative beyond it.
pub fn nno_score(params: &NnoParams, metric_dist: f64) -> f64 {
    params.eta_tau * (1.0 - metric_dist / params.tau)
}

/// Open-set prediction: scores are clamped at zero, and a sample whose
/// clamped score vanishes for every class is declared unknown. Otherwise
/// the argmax class wins, ties to the smallest class id.
pub fn nno_predict(
    params: &NnoParams,
    metric: &LinearMetric,
    store: &PrototypeStore,
    f: &[f64],
) -> Result<Prediction> {
    if store.is_empty() {
        return Err(Error::EmptyModel);
    }
    let mut best: Option<(&ClassId, f64)> = None;
    for (class, proto) in store.iter() {
        let d = metric_distance(metric, f, &proto.mean)?;
        let p = nno_score(params, d).max(0.0);
        if p > 0.0 {
            match best {
                Some((_, bp)) if p <= bp => {}
                _ => best = Some((class, p)),
            }
        }
    }
    Ok(match best {
        Some((class, _)) => Prediction::Known(class.clone()),
        None => Prediction::Unknown,
    })
}

/// Cross-validated cutoff selection in the style of the original
/// nearest-non-outlier recipe: each known class takes one turn as a
/// pseudo-unknown, a model over the remaining classes grid-searches `tau`
/// for open-world accuracy on that fold, and the per-fold winners are
/// averaged. `features_by_class` maps each class to its (frozen) feature
/// vectors.
pub fn select_tau_cross_validation(
    metric: &LinearMetric,
    features_by_class: &std::collections::BTreeMap<ClassId, Vec<Vec<f64>>>,
    store: &PrototypeStore,
) -> Result<f64> {
    if features_by_class.len() < 2 {
        return Err(Error::EmptyData(
            "tau cross-validation needs at least two classes".into(),
        ));
    }
    // candidate grid: the empirical minimum distances of every sample to
    // the fold stores, assembled per fold below
    let mut fold_taus = Vec::new();
    for held_out in features_by_class.keys() {
        let mut fold_store = PrototypeStore::new(store.dim());
        for (class, proto) in store.iter() {
            if class != held_out {
                fold_store.set_prototype(class.clone(), proto.mean.clone(), proto.count)?;
            }
        }
        // (is_known, own_label, min distance, argmin class) per sample
        let mut rows: Vec<(Option<&ClassId>, f64, ClassId)> = Vec::new();
        for (class, features) in features_by_class {
            for f in features {
                let mut best_d = f64::INFINITY;
                let mut best_k = None;
                for (k, proto) in fold_store.iter() {
                    let d = metric_distance(metric, f, &proto.mean)?;
                    if d < best_d {
                        best_d = d;
                        best_k = Some(k.clone());
                    }
                }
                let label = if class == held_out { None } else { Some(class) };
                rows.push((label, best_d, best_k.unwrap()));
            }
        }
        // grid over observed distances; accuracy is piecewise constant
        // between them, so together with an accept-everything point the
        // observed values cover all optima
        let mut grid: Vec<f64> = rows.iter().map(|r| r.1).collect();
        grid.sort_by(f64::total_cmp);
        grid.dedup();
        grid.push(grid.last().unwrap() * (1.0 + 1e-9) + 1e-12);
        let mut best = (f64::MIN, grid[0]);
        for &tau in &grid {
            let correct = rows
                .iter()
                .filter(|(label, d, argmin)| match label {
                    // known: accepted and correctly classified
                    Some(l) => *d < tau && argmin == *l,
                    // pseudo-unknown: rejected
                    None => *d >= tau,
                })
                .count();
            let acc = correct as f64 / rows.len() as f64;
            if acc > best.0 {
                best = (acc, tau);
            }
        }
        fold_taus.push(best.1);
    }
    let tau = fold_taus.iter().sum::<f64>() / fold_taus.len() as f64;
    if tau <= 0.0 {
        return Ok(1e-12);
    }
    Ok(tau)
}

/// Grid search for `tau` over the empirical distance grid: the smallest
/// cutoff whose false-rejection rate on the given per-sample minimum
/// distances stays within `target_false_rejection`.
pub fn select_tau(min_distances: &[f64], target_false_rejection: f64) -> Result<f64> {
    if min_distances.is_empty() {
        return Err(Error::EmptyData(
            "tau selection needs validation distances".into(),
        ));
    }
    if !(0.0..1.0).contains(&target_false_rejection) {
        return Err(Error::Config(
            "target_false_rejection must be in [0, 1)".into(),
        ));
    }
    let mut ds = min_distances.to_vec();
    if ds.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::NonFinite("validation distances".into()));
    }
    ds.sort_by(f64::total_cmp);
    let n = ds.len();
    let keep = (((1.0 - target_false_rejection) * n as f64).ceil() as usize).clamp(1, n);
    let base = ds[keep - 1];
    // strictly above the kept quantile so that a distance equal to it is accepted
    Ok(base * (1.0 + 1e-9) + 1e-12)
}

/// A frozen-representation NNO model: pretrained backbone, fixed projection
/// and cutoff. Adding a class touches only the prototype means.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NnoBaseline {
    backbone: NetworkSnapshot,
    metric: LinearMetric,
    params: NnoParams,
    store: PrototypeStore,
}

impl NnoBaseline {
    pub fn new(backbone: NetworkSnapshot, metric: LinearMetric, params: NnoParams) -> Result<Self> {
        params.validate()?;
        if metric.feature_dim() != backbone.output_dim() {
            return Err(Error::InputShape {
                expected: backbone.output_dim(),
                got: metric.feature_dim(),
            });
        }
        let dim = backbone.output_dim();
        Ok(NnoBaseline {
            backbone,
            metric,
            params,
            store: PrototypeStore::new(dim),
        })
    }

    pub fn params(&self) -> &NnoParams {
        &self.params
    }

    pub fn metric(&self) -> &LinearMetric {
        &self.metric
    }

    pub fn store(&self) -> &PrototypeStore {
        &self.store
    }

    pub fn known_classes(&self) -> BTreeSet<ClassId> {
        self.store.class_ids().cloned().collect()
    }

    pub fn embed(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.backbone.forward(input)?.into_vec())
    }

    /// Sets a class mean to the offline average of the frozen features of
    /// the given raw inputs. The projection and cutoff stay fixed.
    pub fn set_class_mean<'a, I>(&mut self, class: ClassId, inputs: I) -> Result<()>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut sum = vec![0.0; self.backbone.output_dim()];
        let mut count = 0u64;
        for input in inputs {
            let f = self.backbone.forward(input)?;
            for (s, v) in sum.iter_mut().zip(f.as_slice()) {
                *s += v;
            }
            count += 1;
        }
        if count == 0 {
            return Err(Error::EmptyData(format!("no samples for class `{class}`")));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        self.store.set_prototype(class, mean, count)
    }

    /// Smallest projected distance from the input's frozen feature to any
    /// class mean.
    pub fn min_distance(&self, input: &[f64]) -> Result<f64> {
        if self.store.is_empty() {
            return Err(Error::EmptyModel);
        }
        let f = self.embed(input)?;
        let mut best = f64::INFINITY;
        for (_, proto) in self.store.iter() {
            best = best.min(metric_distance(&self.metric, &f, &proto.mean)?);
        }
        Ok(best)
    }

    pub fn set_tau(&mut self, tau: f64) -> Result<()> {
        let params = NnoParams { tau, ..self.params };
        params.validate()?;
        self.params = params;
        Ok(())
    }

    pub fn classify(&self, input: &[f64]) -> Result<Prediction> {
        let f = self.embed(input)?;
        nno_predict(&self.params, &self.metric, &self.store, &f)
    }
}
