//! Label oracles: the seam through which a rejected sample's label and
//! training data enter the system.
//!
//! [`GroundTruthOracle`] answers from held-out per-class pools, never
//! returning the same pool sample twice. [`NoisyWebOracle`] simulates a web
//! image search: a fraction of returned samples are mislabeled look-alikes
//! drawn from other classes, and every returned input carries an additive
//! domain shift. [`HumanVerifiedOracle`] adds an interactive confirmation
//! prompt in front of any inner oracle.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use crate::dataset::{ClassId, Dataset, LabeledSample};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// What an oracle hands back for one query: the semantic label of the
/// queried sample plus training data for that label. Every returned sample
/// carries the returned label.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleResponse {
    pub label: ClassId,
    pub samples: Vec<LabeledSample>,
}

/// Supplies the label and training data for a sample the model rejected.
pub trait LabelOracle {
    fn query(&mut self, input: &[f64]) -> Result<OracleResponse>;
}

impl LabelOracle for Box<dyn LabelOracle> {
    fn query(&mut self, input: &[f64]) -> Result<OracleResponse> {
        self.as_mut().query(input)
    }
}

/// Per-class pools with consumed-sample tracking.
#[derive(Debug, Clone)]
struct PoolSet {
    pools: BTreeMap<ClassId, Vec<LabeledSample>>,
    consumed: BTreeMap<ClassId, Vec<bool>>,
}

impl PoolSet {
    fn new(dataset: &Dataset) -> Self {
        let mut pools: BTreeMap<ClassId, Vec<LabeledSample>> = BTreeMap::new();
        for s in dataset.samples() {
            pools.entry(s.label.clone()).or_default().push(s.clone());
        }
        let consumed = pools
            .iter()
            .map(|(k, v)| (k.clone(), vec![false; v.len()]))
            .collect();
        PoolSet { pools, consumed }
    }

    /// Exact-match lookup of the queried input's true label. Marks the
    /// matched sample consumed so it is never returned as training data.
    fn identify(&mut self, input: &[f64]) -> Result<ClassId> {
        for (class, samples) in &self.pools {
            if let Some(idx) = samples.iter().position(|s| s.input == input) {
                let class = class.clone();
                self.consumed.get_mut(&class).unwrap()[idx] = true;
                return Ok(class);
            }
        }
        Err(Error::OracleLookup)
    }

    /// Next unconsumed sample of the class, in pool order.
    fn next_unconsumed(&mut self, class: &ClassId) -> Option<LabeledSample> {
        let samples = self.pools.get(class)?;
        let consumed = self.consumed.get_mut(class)?;
        let idx = consumed.iter().position(|&c| !c)?;
        consumed[idx] = true;
        Some(samples[idx].clone())
    }

    fn remaining(&self, class: &ClassId) -> usize {
        self.consumed
            .get(class)
            .map_or(0, |c| c.iter().filter(|&&x| !x).count())
    }

    /// A uniformly random sample from any class other than `exclude`.
    /// Does not consume: mislabeled look-alikes may repeat.
    fn random_other(&self, exclude: &ClassId, rng: &mut SplitMix64) -> Option<LabeledSample> {
        let others: Vec<&ClassId> = self.pools.keys().filter(|k| *k != exclude).collect();
        if others.is_empty() {
            return None;
        }
        let class = others[rng.next_index(others.len())];
        let pool = &self.pools[class];
        if pool.is_empty() {
            return None;
        }
        Some(pool[rng.next_index(pool.len())].clone())
    }
}

/// Answers queries with the true label and fresh held-out samples.
#[derive(Debug, Clone)]
pub struct GroundTruthOracle {
    pool: PoolSet,
    n_query: usize,
}

impl GroundTruthOracle {
    /// `n_query` caps how many training samples one query returns.
    pub fn new(pool_data: &Dataset, n_query: usize) -> Self {
        GroundTruthOracle {
            pool: PoolSet::new(pool_data),
            n_query,
        }
    }

    pub fn remaining(&self, class: &ClassId) -> usize {
        self.pool.remaining(class)
    }
}

impl LabelOracle for GroundTruthOracle {
    fn query(&mut self, input: &[f64]) -> Result<OracleResponse> {
        let label = self.pool.identify(input)?;
        if self.n_query > 0 && self.pool.remaining(&label) == 0 {
            return Err(Error::ExhaustedPool(label));
        }
        let mut samples = Vec::with_capacity(self.n_query);
        for _ in 0..self.n_query {
            match self.pool.next_unconsumed(&label) {
                Some(s) => samples.push(s),
                None => break,
            }
        }
        Ok(OracleResponse { label, samples })
    }
}

/// Simulated web-search oracle. With probability `label_noise_rate` a
/// returned training sample is a mislabeled look-alike: its input comes
/// from a uniformly random other class while still carrying the returned
/// label. Every returned input is additionally perturbed by isotropic
/// Gaussian noise of magnitude `feature_shift`, standing in for the domain
/// gap between web imagery and the deployment inputs. With zero noise and
/// zero shift this behaves exactly like [`GroundTruthOracle`].
#[derive(Debug, Clone)]
pub struct NoisyWebOracle {
    pool: PoolSet,
    n_query: usize,
    label_noise_rate: f64,
    feature_shift: f64,
    rng: SplitMix64,
}

impl NoisyWebOracle {
    pub fn new(
        pool_data: &Dataset,
        n_query: usize,
        label_noise_rate: f64,
        feature_shift: f64,
        seed: u64,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&label_noise_rate) {
            return Err(Error::Config("label_noise_rate must be in [0, 1]".into()));
        }
        if !(feature_shift.is_finite() && feature_shift >= 0.0) {
            return Err(Error::Config("feature_shift must be non-negative".into()));
        }
        Ok(NoisyWebOracle {
            pool: PoolSet::new(pool_data),
            n_query,
            label_noise_rate,
            feature_shift,
            rng: SplitMix64::new(seed),
        })
    }
}

impl LabelOracle for NoisyWebOracle {
    fn query(&mut self, input: &[f64]) -> Result<OracleResponse> {
        let label = self.pool.identify(input)?;
        if self.n_query > 0 && self.pool.remaining(&label) == 0 {
            return Err(Error::ExhaustedPool(label.clone()));
        }
        let mut samples = Vec::with_capacity(self.n_query);
        for _ in 0..self.n_query {
            let flip = self.label_noise_rate > 0.0 && self.rng.next_f64() < self.label_noise_rate;
            let base = if flip {
                match self.pool.random_other(&label, &mut self.rng) {
                    Some(s) => Some(s),
                    None => self.pool.next_unconsumed(&label),
                }
            } else {
                self.pool.next_unconsumed(&label)
            };
            let Some(base) = base else { break };
            let mut point = base.input;
            if self.feature_shift > 0.0 {
                for v in point.iter_mut() {
                    *v += self.feature_shift * self.rng.next_gaussian();
                }
            }
            samples.push(LabeledSample::new(point, label.clone()));
        }
        Ok(OracleResponse { label, samples })
    }
}

/// Interactive wrapper: prints the inner oracle's proposed label and waits
/// for confirmation on the input stream. An empty line or `y` accepts; any
/// other text is taken as the corrected label and the returned samples are
/// relabeled accordingly.
pub struct HumanVerifiedOracle<O, R, W> {
    inner: O,
    input: R,
    output: W,
}

impl<O: LabelOracle, R: BufRead, W: Write> HumanVerifiedOracle<O, R, W> {
    pub fn new(inner: O, input: R, output: W) -> Self {
        HumanVerifiedOracle {
            inner,
            input,
            output,
        }
    }
}

impl<O: LabelOracle, R: BufRead, W: Write> LabelOracle for HumanVerifiedOracle<O, R, W> {
    fn query(&mut self, input: &[f64]) -> Result<OracleResponse> {
        let mut response = self.inner.query(input)?;
        writeln!(
            self.output,
            "proposed label `{}` ({} samples); accept? [Y/corrected label]",
            response.label,
            response.samples.len()
        )?;
        self.output.flush()?;
        let mut line = String::new();
        self.input.read_line(&mut line)?;
        let answer = line.trim();
        if !answer.is_empty() && !answer.eq_ignore_ascii_case("y") {
            let corrected = ClassId::from(answer);
            for s in &mut response.samples {
                s.label = corrected.clone();
            }
            response.label = corrected;
        }
        Ok(response)
    }
}
