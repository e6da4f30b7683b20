//! Ratio-constrained batch sampler.
//!
//! Each batch draws a fixed share of exemplars from memory and fills the
//! remainder from the new training data, so rehearsal pressure stays
//! constant no matter how the two pools are sized.

use serde::{Deserialize, Serialize};

use crate::dataset::LabeledSample;
use crate::error::{Error, Result};
use crate::memory::ExemplarMemory;
use crate::rng::SplitMix64;

/// Batch size and the fraction of each batch drawn from memory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BatchSpec {
    pub batch_size: usize,
    pub memory_ratio: f64,
}

impl Default for BatchSpec {
    fn default() -> Self {
        BatchSpec {
            batch_size: 64,
            memory_ratio: 0.4,
        }
    }
}

impl BatchSpec {
    /// Target number of memory samples per batch: `floor(ratio * batch_size)`.
    pub fn memory_share(&self) -> usize {
        (self.memory_ratio * self.batch_size as f64).floor() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.memory_ratio) {
            return Err(Error::Config("memory_ratio must be in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Draws one batch: `min(floor(ratio*b), |mem|)` exemplars uniformly without
/// replacement from memory, the rest from `new_data` (without replacement
/// when it is large enough, with replacement otherwise). When `new_data` is
/// empty the whole batch falls back to memory. Deterministic for a fixed
/// generator state.
pub fn sample_batch(
    memory: &ExemplarMemory,
    new_data: &[LabeledSample],
    spec: &BatchSpec,
    rng: &mut SplitMix64,
) -> Result<Vec<LabeledSample>> {
    spec.validate()?;
    if new_data.is_empty() && memory.is_empty() {
        return Err(Error::EmptyData("both batch sources are empty".into()));
    }

    let mem_samples: Vec<&LabeledSample> = memory.iter_samples().collect();
    let want_mem = if new_data.is_empty() {
        spec.batch_size
    } else {
        spec.memory_share()
    };
    let from_mem = want_mem.min(mem_samples.len());

    let mut batch = Vec::with_capacity(spec.batch_size);
    if from_mem > 0 {
        for idx in rng.sample_indices(mem_samples.len(), from_mem) {
            batch.push(mem_samples[idx].clone());
        }
    }

    let remainder = spec.batch_size - batch.len();
    if remainder > 0 {
        if new_data.is_empty() {
            // memory-only fallback: top up with replacement
            for _ in 0..remainder {
                batch.push(mem_samples[rng.next_index(mem_samples.len())].clone());
            }
        } else if new_data.len() >= remainder {
            for idx in rng.sample_indices(new_data.len(), remainder) {
                batch.push(new_data[idx].clone());
            }
        } else {
            for _ in 0..remainder {
                batch.push(new_data[rng.next_index(new_data.len())].clone());
            }
        }
    }
    Ok(batch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::ClassId;

    fn mem_with(classes: &[(&str, usize)]) -> ExemplarMemory {
        let mut mem = ExemplarMemory::new(10_000);
        for (class, n) in classes {
            let scored: Vec<(LabeledSample, f64)> = (0..*n)
                .map(|i| (LabeledSample::new(vec![i as f64, -1.0], *class), i as f64))
                .collect();
            mem.admit_class(ClassId::from(*class), scored).unwrap();
        }
        mem
    }

    fn new_data(n: usize) -> Vec<LabeledSample> {
        (0..n)
            .map(|i| LabeledSample::new(vec![i as f64, 1.0], "new"))
            .collect()
    }

    fn count_memory(batch: &[LabeledSample]) -> usize {
        batch.iter().filter(|s| s.input[1] < 0.0).count()
    }

    #[test]
    fn default_ratio_composition() {
        // b=10, ratio=0.4, ample data -> 4 memory + 6 new
        let mem = mem_with(&[("a", 20), ("b", 20)]);
        let data = new_data(50);
        let spec = BatchSpec {
            batch_size: 10,
            memory_ratio: 0.4,
        };
        let mut rng = SplitMix64::new(1);
        let batch = sample_batch(&mem, &data, &spec, &mut rng).unwrap();
        assert_eq!(batch.len(), 10);
        assert_eq!(count_memory(&batch), 4);
    }

    #[test]
    fn empty_memory_draws_everything_from_new_data() {
        let mem = ExemplarMemory::new(100);
        let data = new_data(30);
        let spec = BatchSpec {
            batch_size: 8,
            memory_ratio: 0.4,
        };
        let mut rng = SplitMix64::new(2);
        let batch = sample_batch(&mem, &data, &spec, &mut rng).unwrap();
        assert_eq!(batch.len(), 8);
        assert_eq!(count_memory(&batch), 0);
    }

    #[test]
    fn zero_ratio_disables_rehearsal() {
        let mem = mem_with(&[("a", 20)]);
        let data = new_data(30);
        let spec = BatchSpec {
            batch_size: 8,
            memory_ratio: 0.0,
        };
        let mut rng = SplitMix64::new(3);
        let batch = sample_batch(&mem, &data, &spec, &mut rng).unwrap();
        assert_eq!(count_memory(&batch), 0);
    }

    #[test]
    fn small_memory_caps_the_share() {
        let mem = mem_with(&[("a", 3)]);
        let data = new_data(100);
        let spec = BatchSpec {
            batch_size: 20,
            memory_ratio: 0.5,
        };
        let mut rng = SplitMix64::new(4);
        let batch = sample_batch(&mem, &data, &spec, &mut rng).unwrap();
        assert_eq!(batch.len(), 20);
        assert_eq!(count_memory(&batch), 3);
    }

    #[test]
    fn small_new_data_is_drawn_with_replacement() {
        let mem = mem_with(&[("a", 4)]);
        let data = new_data(2);
        let spec = BatchSpec {
            batch_size: 12,
            memory_ratio: 0.25,
        };
        let mut rng = SplitMix64::new(5);
        let batch = sample_batch(&mem, &data, &spec, &mut rng).unwrap();
        assert_eq!(batch.len(), 12);
        assert_eq!(count_memory(&batch), 3);
    }

    #[test]
    fn empty_new_data_falls_back_to_memory() {
        let mem = mem_with(&[("a", 5)]);
        let spec = BatchSpec {
            batch_size: 9,
            memory_ratio: 0.4,
        };
        let mut rng = SplitMix64::new(6);
        let batch = sample_batch(&mem, &[], &spec, &mut rng).unwrap();
        assert_eq!(batch.len(), 9);
        assert_eq!(count_memory(&batch), 9);
    }

    #[test]
    fn both_sources_empty_is_an_error() {
        let mem = ExemplarMemory::new(10);
        let spec = BatchSpec::default();
        let mut rng = SplitMix64::new(7);
        assert!(matches!(
            sample_batch(&mem, &[], &spec, &mut rng),
            Err(Error::EmptyData(_))
        ));
    }

    #[test]
    fn same_seed_same_batch() {
        let mem = mem_with(&[("a", 10), ("b", 10)]);
        let data = new_data(40);
        let spec = BatchSpec {
            batch_size: 16,
            memory_ratio: 0.4,
        };
        let b1 = sample_batch(&mem, &data, &spec, &mut SplitMix64::new(99)).unwrap();
        let b2 = sample_batch(&mem, &data, &spec, &mut SplitMix64::new(99)).unwrap();
        assert_eq!(b1, b2);
    }

    #[test]
    fn memory_part_has_no_duplicates() {
        let mem = mem_with(&[("a", 12)]);
        let data = new_data(40);
        let spec = BatchSpec {
            batch_size: 20,
            memory_ratio: 0.5,
        };
        let mut rng = SplitMix64::new(8);
        let batch = sample_batch(&mem, &data, &spec, &mut rng).unwrap();
        let mem_part: Vec<&LabeledSample> = batch.iter().filter(|s| s.input[1] < 0.0).collect();
        assert_eq!(mem_part.len(), 10);
        for i in 0..mem_part.len() {
            for j in i + 1..mem_part.len() {
                assert_ne!(mem_part[i], mem_part[j]);
            }
        }
    }
}
