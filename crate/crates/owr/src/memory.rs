//! Fixed-capacity exemplar memory with relevance-based pruning.
//!
//! A sample's relevance is its embedded distance to its class mean: the
//! smaller the distance, the more relevant the exemplar. Raw inputs are
//! stored (not features) so exemplars can be re-embedded after the network
//! changes; distances are refreshed via [`ExemplarMemory::rescore`] before
//! pruning.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::{ClassId, LabeledSample};
use crate::embedding::EmbeddingNetwork;
use crate::error::{Error, Result};
use crate::prototypes::PrototypeStore;

/// One stored sample with its last computed relevance distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredExemplar {
    pub sample: LabeledSample,
    pub relevance_distance: f64,
}

/// Relevance of a sample under the current network and means: the embedded
/// distance to its own class mean.
pub fn relevance(
    store: &PrototypeStore,
    net: &EmbeddingNetwork,
    sample: &LabeledSample,
) -> Result<f64> {
    let feature = net.forward(&sample.input)?;
    store.distance(&sample.label, &feature)
}

/// Bounded per-class exemplar store. Within a class, exemplars are kept in
/// non-decreasing relevance distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExemplarMemory {
    capacity: usize,
    per_class: BTreeMap<ClassId, Vec<StoredExemplar>>,
}

impl ExemplarMemory {
    pub fn new(capacity: usize) -> Self {
        ExemplarMemory {
            capacity,
            per_class: BTreeMap::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn total_len(&self) -> usize {
        self.per_class.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total_len() == 0
    }

    pub fn num_classes(&self) -> usize {
        self.per_class.len()
    }

    pub fn contains_class(&self, class: &ClassId) -> bool {
        self.per_class.contains_key(class)
    }

    pub fn class_len(&self, class: &ClassId) -> usize {
        self.per_class.get(class).map_or(0, Vec::len)
    }

    pub fn class_exemplars(&self, class: &ClassId) -> Option<&[StoredExemplar]> {
        self.per_class.get(class).map(Vec::as_slice)
    }

    /// All stored samples in deterministic order (class order, then
    /// ascending relevance distance within each class).
    pub fn iter_samples(&self) -> impl Iterator<Item = &LabeledSample> {
        self.per_class.values().flatten().map(|e| &e.sample)
    }

    /// Inserts a class with its scored samples, sorted ascending by
    /// distance. The class may temporarily exceed the per-class quota until
    /// the next prune.
    pub fn admit_class(
        &mut self,
        class: ClassId,
        mut scored: Vec<(LabeledSample, f64)>,
    ) -> Result<()> {
        if self.per_class.contains_key(&class) {
            return Err(Error::DuplicateClass(class));
        }
        scored.sort_by(|a, b| a.1.total_cmp(&b.1));
        let exemplars = scored
            .into_iter()
            .map(|(sample, relevance_distance)| StoredExemplar {
                sample,
                relevance_distance,
            })
            .collect();
        self.per_class.insert(class, exemplars);
        Ok(())
    }

    /// Drops a class and returns its exemplars, if present.
    pub fn remove_class(&mut self, class: &ClassId) -> Option<Vec<StoredExemplar>> {
        self.per_class.remove(class)
    }

    /// Recomputes every stored distance with the current network and means,
    /// restoring the per-class sort order.
    pub fn rescore(&mut self, store: &PrototypeStore, net: &EmbeddingNetwork) -> Result<()> {
        for exemplars in self.per_class.values_mut() {
            for e in exemplars.iter_mut() {
                e.relevance_distance = relevance(store, net, &e.sample)?;
            }
            exemplars.sort_by(|a, b| a.relevance_distance.total_cmp(&b.relevance_distance));
        }
        Ok(())
    }

    /// Keeps, for each class, the `capacity / known_class_count` samples
    /// with the smallest relevance distance.
    pub fn prune(&mut self, known_class_count: usize) {
        if known_class_count == 0 {
            return;
        }
        let quota = self.capacity / known_class_count;
        for exemplars in self.per_class.values_mut() {
            exemplars.truncate(quota);
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (class, exemplars) in &self.per_class {
            for pair in exemplars.windows(2) {
                if pair[0].relevance_distance > pair[1].relevance_distance {
                    return Err(Error::Schema(format!(
                        "memory class `{class}` is not sorted by relevance"
                    )));
                }
            }
            for e in exemplars {
                if e.sample.label != *class {
                    return Err(Error::Schema(format!(
                        "memory class `{class}` holds a sample labeled `{}`",
                        e.sample.label
                    )));
                }
                if !e.relevance_distance.is_finite() || e.relevance_distance < 0.0 {
                    return Err(Error::NonFinite(format!(
                        "memory class `{class}` relevance"
                    )));
                }
                if e.sample.input.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!("memory class `{class}` sample")));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn cid(s: &str) -> ClassId {
        ClassId::from(s)
    }

    fn scored(class: &str, distances: &[f64]) -> Vec<(LabeledSample, f64)> {
        distances
            .iter()
            .enumerate()
            .map(|(i, &d)| (LabeledSample::new(vec![i as f64], class), d))
            .collect()
    }

    #[test]
    fn admit_sorts_ascending() {
        let mut mem = ExemplarMemory::new(10);
        mem.admit_class(cid("a"), scored("a", &[0.9, 0.1, 0.5]))
            .unwrap();
        let ds: Vec<f64> = mem
            .class_exemplars(&cid("a"))
            .unwrap()
            .iter()
            .map(|e| e.relevance_distance)
            .collect();
        assert_eq!(ds, vec![0.1, 0.5, 0.9]);
    }

    #[test]
    fn admit_empty_list_is_fine() {
        let mut mem = ExemplarMemory::new(10);
        mem.admit_class(cid("a"), Vec::new()).unwrap();
        assert!(mem.contains_class(&cid("a")));
        assert_eq!(mem.class_len(&cid("a")), 0);
    }

    #[test]
    fn duplicate_class_is_rejected() {
        let mut mem = ExemplarMemory::new(10);
        mem.admit_class(cid("a"), Vec::new()).unwrap();
        assert!(matches!(
            mem.admit_class(cid("a"), Vec::new()),
            Err(Error::DuplicateClass(_))
        ));
    }

    #[test]
    fn insertion_order_does_not_affect_stored_order() {
        let mut rng = SplitMix64::new(40);
        for _ in 0..20 {
            let mut distances: Vec<f64> = (0..10).map(|_| rng.next_f64()).collect();
            let mut mem1 = ExemplarMemory::new(100);
            mem1.admit_class(cid("a"), scored("a", &distances)).unwrap();
            rng.shuffle(&mut distances);
            let mut mem2 = ExemplarMemory::new(100);
            mem2.admit_class(cid("a"), scored("a", &distances)).unwrap();

            // sort oracle
            let mut want: Vec<f64> = distances.clone();
            want.sort_by(f64::total_cmp);
            let got1: Vec<f64> = mem1
                .class_exemplars(&cid("a"))
                .unwrap()
                .iter()
                .map(|e| e.relevance_distance)
                .collect();
            let got2: Vec<f64> = mem2
                .class_exemplars(&cid("a"))
                .unwrap()
                .iter()
                .map(|e| e.relevance_distance)
                .collect();
            assert_eq!(got1, want);
            assert_eq!(got2, want);
        }
    }

    #[test]
    fn prune_keeps_lowest_distances() {
        let mut mem = ExemplarMemory::new(6);
        mem.admit_class(cid("a"), scored("a", &[0.1, 0.5, 0.9]))
            .unwrap();
        mem.admit_class(cid("b"), scored("b", &[0.2])).unwrap();
        mem.admit_class(cid("c"), scored("c", &[0.3, 0.4, 0.6]))
            .unwrap();
        mem.prune(3); // quota 2
        let ds: Vec<f64> = mem
            .class_exemplars(&cid("a"))
            .unwrap()
            .iter()
            .map(|e| e.relevance_distance)
            .collect();
        assert_eq!(ds, vec![0.1, 0.5]);
        assert_eq!(mem.class_len(&cid("b")), 1); // fewer than quota: unchanged
        assert!(mem.total_len() <= 6);
    }

    #[test]
    fn prune_is_idempotent() {
        let mut mem = ExemplarMemory::new(4);
        mem.admit_class(cid("a"), scored("a", &[0.4, 0.2, 0.6, 0.8, 0.1]))
            .unwrap();
        mem.prune(2);
        let once: Vec<f64> = mem
            .class_exemplars(&cid("a"))
            .unwrap()
            .iter()
            .map(|e| e.relevance_distance)
            .collect();
        mem.prune(2);
        let twice: Vec<f64> = mem
            .class_exemplars(&cid("a"))
            .unwrap()
            .iter()
            .map(|e| e.relevance_distance)
            .collect();
        assert_eq!(once, twice);
        assert_eq!(once, vec![0.1, 0.2]);
    }

    #[test]
    fn relevance_equals_embedded_prototype_distance() {
        let mut rng = SplitMix64::new(50);
        let net = EmbeddingNetwork::new(2, &[4], 3, &mut rng).unwrap();
        let mut store = PrototypeStore::new(3);
        let sample = LabeledSample::new(vec![0.7, -0.3], "a");
        let feature = net.forward(&sample.input).unwrap();
        store
            .set_prototype(cid("a"), feature.as_slice().to_vec(), 1)
            .unwrap();
        // feature equals its own mean: maximal relevance
        assert_eq!(relevance(&store, &net, &sample).unwrap(), 0.0);

        let other = LabeledSample::new(vec![2.0, 2.0], "a");
        let f2 = net.forward(&other.input).unwrap();
        let want = store.distance(&cid("a"), &f2).unwrap();
        assert_eq!(relevance(&store, &net, &other).unwrap(), want);
    }

    #[test]
    fn relevance_unknown_label_errors() {
        let mut rng = SplitMix64::new(51);
        let net = EmbeddingNetwork::new(2, &[3], 2, &mut rng).unwrap();
        let store = PrototypeStore::new(2);
        let sample = LabeledSample::new(vec![0.0, 0.0], "nope");
        assert!(matches!(
            relevance(&store, &net, &sample),
            Err(Error::MissingClass(_))
        ));
    }
}
