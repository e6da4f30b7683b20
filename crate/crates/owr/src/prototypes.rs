//! Per-class mean prototypes with streaming updates and probability scoring.
//!
//! Scores are `exp(-||f - mu_k|| / 2)`: strictly positive, equal to one only
//! at the prototype itself, and deliberately not clamped.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::ClassId;
use crate::error::{Error, Result};

pub(crate) fn euclidean_distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Running mean of class `class_id` with the number of absorbed samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassPrototype {
    pub class_id: ClassId,
    pub mean: Vec<f64>,
    pub count: u64,
}

/// The set of class prototypes: keys are exactly the classes learned so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeStore {
    prototypes: BTreeMap<ClassId, ClassPrototype>,
    dim: usize,
}

impl PrototypeStore {
    pub fn new(dim: usize) -> Self {
        PrototypeStore {
            prototypes: BTreeMap::new(),
            dim,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.prototypes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prototypes.is_empty()
    }

    pub fn contains(&self, class: &ClassId) -> bool {
        self.prototypes.contains_key(class)
    }

    pub fn get(&self, class: &ClassId) -> Option<&ClassPrototype> {
        self.prototypes.get(class)
    }

    pub fn class_ids(&self) -> impl Iterator<Item = &ClassId> {
        self.prototypes.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ClassId, &ClassPrototype)> {
        self.prototypes.iter()
    }

    /// Resets every prototype's absorbed-sample count to zero, keeping means.
    /// The next batch containing a class then replaces its mean outright.
    pub fn reset_counts(&mut self) {
        for proto in self.prototypes.values_mut() {
            proto.count = 0;
        }
    }

    /// Euclidean distance between `f` and the class mean.
    pub fn distance(&self, class: &ClassId, f: &[f64]) -> Result<f64> {
        let proto = self
            .prototypes
            .get(class)
            .ok_or_else(|| Error::MissingClass(class.clone()))?;
        if f.len() != self.dim {
            return Err(Error::InputShape {
                expected: self.dim,
                got: f.len(),
            });
        }
        Ok(euclidean_distance(&proto.mean, f))
    }

    /// Class-specific probability score `exp(-d_k(f) / 2)`, in (0, 1].
    pub fn probability_score(&self, class: &ClassId, f: &[f64]) -> Result<f64> {
        Ok((-0.5 * self.distance(class, f)?).exp())
    }

    /// Probability score for every known class.
    pub fn scores_all(&self, f: &[f64]) -> Result<BTreeMap<ClassId, f64>> {
        if self.prototypes.is_empty() {
            return Err(Error::EmptyModel);
        }
        let mut scores = BTreeMap::new();
        for class in self.prototypes.keys() {
            scores.insert(class.clone(), self.probability_score(class, f)?);
        }
        Ok(scores)
    }

    /// Folds a batch of features into the running means:
    /// `mu_k <- (n_k*mu_k + n_B*mu_B) / (n_k + n_B)`, `n_k <- n_k + n_B`,
    /// where `mu_B`/`n_B` are the batch mean and count for class k. Classes
    /// absent from the batch are untouched; a new class enters with the
    /// batch mean.
    pub fn update_means<'a, I>(&mut self, batch: I) -> Result<()>
    where
        I: IntoIterator<Item = (&'a ClassId, &'a [f64])>,
    {
        let mut sums: BTreeMap<&ClassId, (Vec<f64>, u64)> = BTreeMap::new();
        for (class, feature) in batch {
            if feature.len() != self.dim {
                return Err(Error::InputShape {
                    expected: self.dim,
                    got: feature.len(),
                });
            }
            if feature.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("feature of class `{class}`")));
            }
            let entry = sums
                .entry(class)
                .or_insert_with(|| (vec![0.0; self.dim], 0));
            for (s, v) in entry.0.iter_mut().zip(feature) {
                *s += v;
            }
            entry.1 += 1;
        }

        for (class, (sum, batch_count)) in sums {
            let batch_mean: Vec<f64> = sum.iter().map(|s| s / batch_count as f64).collect();
            match self.prototypes.get_mut(class) {
                Some(proto) => {
                    let n = proto.count as f64;
                    let nb = batch_count as f64;
                    for (m, b) in proto.mean.iter_mut().zip(&batch_mean) {
                        *m = (n * *m + nb * b) / (n + nb);
                    }
                    proto.count += batch_count;
                }
                None => {
                    self.prototypes.insert(
                        class.clone(),
                        ClassPrototype {
                            class_id: class.clone(),
                            mean: batch_mean,
                            count: batch_count,
                        },
                    );
                }
            }
        }
        Ok(())
    }

    /// Replaces one class's prototype outright (used by the offline
    /// mean-recomputation option and the frozen baselines).
    pub fn set_prototype(&mut self, class: ClassId, mean: Vec<f64>, count: u64) -> Result<()> {
        if mean.len() != self.dim {
            return Err(Error::InputShape {
                expected: self.dim,
                got: mean.len(),
            });
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("prototype of class `{class}`")));
        }
        self.prototypes.insert(
            class.clone(),
            ClassPrototype {
                class_id: class,
                mean,
                count,
            },
        );
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        for (class, proto) in &self.prototypes {
            if proto.mean.len() != self.dim {
                return Err(Error::Schema(format!(
                    "prototype `{class}` has dim {}, store dim is {}",
                    proto.mean.len(),
                    self.dim
                )));
            }
            if proto.mean.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("prototype of class `{class}`")));
            }
            if proto.class_id != *class {
                return Err(Error::Schema(format!(
                    "prototype key `{class}` disagrees with record"
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cid(s: &str) -> ClassId {
        ClassId::from(s)
    }

    fn store_with(entries: &[(&str, Vec<f64>, u64)]) -> PrototypeStore {
        let dim = entries[0].1.len();
        let mut store = PrototypeStore::new(dim);
        for (id, mean, count) in entries {
            store.set_prototype(cid(id), mean.clone(), *count).unwrap();
        }
        store
    }

    #[test]
    fn distance_zero_at_mean() {
        let store = store_with(&[("a", vec![1.0, 2.0], 1)]);
        assert_eq!(store.distance(&cid("a"), &[1.0, 2.0]).unwrap(), 0.0);
    }

    #[test]
    fn distance_is_euclidean() {
        let store = store_with(&[("a", vec![0.0, 0.0], 1)]);
        assert!((store.distance(&cid("a"), &[3.0, 4.0]).unwrap() - 5.0).abs() < 1e-15);
    }

    #[test]
    fn distance_unknown_class_errors() {
        let store = store_with(&[("a", vec![0.0], 1)]);
        assert!(matches!(
            store.distance(&cid("zz"), &[0.0]),
            Err(Error::MissingClass(_))
        ));
    }

    #[test]
    fn score_one_at_mean_and_decreasing() {
        let store = store_with(&[("a", vec![0.0, 0.0], 1)]);
        assert_eq!(
            store.probability_score(&cid("a"), &[0.0, 0.0]).unwrap(),
            1.0
        );
        // ||f - mu|| = 2 -> e^{-1}
        let s = store.probability_score(&cid("a"), &[2.0, 0.0]).unwrap();
        assert!((s - (-1.0f64).exp()).abs() < 1e-12);
        // ||f - mu|| = 20 -> e^{-10}
        let s = store.probability_score(&cid("a"), &[20.0, 0.0]).unwrap();
        assert!((s - (-10.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn scores_all_matches_per_class_calls() {
        let store = store_with(&[("a", vec![0.0, 0.0], 1), ("b", vec![3.0, 1.0], 1)]);
        let f = [1.0, -2.0];
        let all = store.scores_all(&f).unwrap();
        assert_eq!(all.len(), 2);
        for (class, score) in &all {
            assert_eq!(*score, store.probability_score(class, &f).unwrap());
        }
    }

    #[test]
    fn scores_all_on_empty_store_errors() {
        let store = PrototypeStore::new(2);
        assert!(matches!(
            store.scores_all(&[0.0, 0.0]),
            Err(Error::EmptyModel)
        ));
    }

    #[test]
    fn update_weighted_average() {
        // n=2 at (0,0); batch of two with mean (1,1) -> (0.5, 0.5), n=4
        let mut store = store_with(&[("a", vec![0.0, 0.0], 2)]);
        let a = cid("a");
        let f1 = vec![2.0, 0.0];
        let f2 = vec![0.0, 2.0];
        store
            .update_means([(&a, f1.as_slice()), (&a, f2.as_slice())])
            .unwrap();
        let proto = store.get(&a).unwrap();
        assert_eq!(proto.mean, vec![0.5, 0.5]);
        assert_eq!(proto.count, 4);
    }

    #[test]
    fn new_class_enters_with_batch_mean() {
        let mut store = PrototypeStore::new(2);
        let k = cid("new");
        let f1 = vec![2.0, 0.0];
        let f2 = vec![0.0, 2.0];
        store
            .update_means([(&k, f1.as_slice()), (&k, f2.as_slice())])
            .unwrap();
        let proto = store.get(&k).unwrap();
        assert_eq!(proto.mean, vec![1.0, 1.0]);
        assert_eq!(proto.count, 2);
    }

    #[test]
    fn classes_absent_from_batch_are_unchanged() {
        let mut store = store_with(&[("a", vec![5.0, 5.0], 3), ("b", vec![0.0, 0.0], 1)]);
        let b = cid("b");
        let f = vec![1.0, 1.0];
        store.update_means([(&b, f.as_slice())]).unwrap();
        let proto = store.get(&cid("a")).unwrap();
        assert_eq!(proto.mean, vec![5.0, 5.0]);
        assert_eq!(proto.count, 3);
    }

    #[test]
    fn non_finite_feature_is_rejected() {
        let mut store = PrototypeStore::new(1);
        let k = cid("a");
        let f = vec![f64::NAN];
        assert!(matches!(
            store.update_means([(&k, f.as_slice())]),
            Err(Error::NonFinite(_))
        ));
    }
}
