//! Synthetic benchmark generation: isotropic Gaussian clusters with a
//! guaranteed minimum separation between class centers.

use crate::dataset::{ClassId, Dataset, LabeledSample};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

const CENTER_ATTEMPTS: usize = 10_000;

/// Rejection-samples `num` centers in the box `[-half_width, half_width]^dim`
/// so that every pair is at least `min_separation` apart.
fn place_centers(
    num: usize,
    dim: usize,
    min_separation: f64,
    half_width: f64,
    rng: &mut SplitMix64,
) -> Result<Vec<Vec<f64>>> {
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(num);
    for k in 0..num {
        let mut placed = false;
        for _ in 0..CENTER_ATTEMPTS {
            let candidate: Vec<f64> = (0..dim)
                .map(|_| (rng.next_f64() * 2.0 - 1.0) * half_width)
                .collect();
            let ok = centers
                .iter()
                .all(|c| crate::prototypes::euclidean_distance(c, &candidate) >= min_separation);
            if ok {
                centers.push(candidate);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Generation(format!(
                "could not place center {k} of {num} with separation {min_separation}"
            )));
        }
    }
    Ok(centers)
}

/// Cluster centers paired with their class labels, in label order.
pub type LabeledCenters = Vec<(ClassId, Vec<f64>)>;

/// Like [`generate_synthetic`], but also returns the true cluster centers
/// in label order.
pub fn generate_synthetic_with_centers(
    num_classes: usize,
    samples_per_class: usize,
    dim: usize,
    cluster_sigma: f64,
    min_center_separation: f64,
    seed: u64,
) -> Result<(Dataset, LabeledCenters)> {
    if num_classes == 0 || samples_per_class == 0 || dim == 0 {
        return Err(Error::Config(
            "num_classes, samples_per_class and dim must be positive".into(),
        ));
    }
    if !(cluster_sigma.is_finite() && cluster_sigma > 0.0) {
        return Err(Error::Config("cluster_sigma must be positive".into()));
    }
    if !(min_center_separation.is_finite() && min_center_separation > 0.0) {
        return Err(Error::Config(
            "min_center_separation must be positive".into(),
        ));
    }

    let mut rng = SplitMix64::new(seed);
    // box sized for a moderately dense packing: clusters get neighbors at a
    // few multiples of the minimum separation rather than drifting apart
    let half_width =
        0.6 * min_center_separation * (num_classes as f64).powf(1.0 / dim as f64).max(2.0);
    let centers = place_centers(
        num_classes,
        dim,
        min_center_separation,
        half_width,
        &mut rng,
    )?;

    let mut samples = Vec::with_capacity(num_classes * samples_per_class);
    let mut labeled_centers = Vec::with_capacity(num_classes);
    for (k, center) in centers.into_iter().enumerate() {
        let label = ClassId::from(format!("c{k}"));
        for _ in 0..samples_per_class {
            let point: Vec<f64> = center
                .iter()
                .map(|c| c + cluster_sigma * rng.next_gaussian())
                .collect();
            samples.push(LabeledSample::new(point, label.clone()));
        }
        labeled_centers.push((label, center));
    }
    Ok((Dataset::new(samples)?, labeled_centers))
}

/// Generates `num_classes` Gaussian clusters (`samples_per_class` points
/// each, standard deviation `cluster_sigma`) whose centers are pairwise at
/// least `min_center_separation` apart. Labels are `c0..c{n-1}`.
/// Deterministic for a fixed seed.
pub fn generate_synthetic(
    num_classes: usize,
    samples_per_class: usize,
    dim: usize,
    cluster_sigma: f64,
    min_center_separation: f64,
    seed: u64,
) -> Result<Dataset> {
    generate_synthetic_with_centers(
        num_classes,
        samples_per_class,
        dim,
        cluster_sigma,
        min_center_separation,
        seed,
    )
    .map(|(ds, _)| ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    #[test]
    fn deterministic_per_seed() {
        let a = generate_synthetic(4, 10, 2, 0.2, 1.0, 42).unwrap();
        let b = generate_synthetic(4, 10, 2, 0.2, 1.0, 42).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(4, 10, 2, 0.2, 1.0, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn per_class_counts_are_exact() {
        let ds = generate_synthetic(5, 17, 3, 0.3, 2.0, 7).unwrap();
        let mut counts: BTreeMap<_, usize> = BTreeMap::new();
        for s in ds.samples() {
            *counts.entry(s.label.clone()).or_default() += 1;
        }
        assert_eq!(counts.len(), 5);
        assert!(counts.values().all(|&n| n == 17));
    }

    #[test]
    fn empirical_means_within_three_standard_errors() {
        let sigma = 0.2;
        let n = 400;
        let tol = 3.0 * sigma / (n as f64).sqrt();
        let mut failures = 0;
        let mut checks = 0;
        for seed in 1..=10u64 {
            let (ds, centers) =
                generate_synthetic_with_centers(3, n, 2, sigma, 4.0 * sigma, seed).unwrap();
            let mut sums: BTreeMap<ClassId, Vec<f64>> = BTreeMap::new();
            for s in ds.samples() {
                let entry = sums.entry(s.label.clone()).or_insert(vec![0.0; 2]);
                for (a, b) in entry.iter_mut().zip(&s.input) {
                    *a += b;
                }
            }
            for (label, center) in &centers {
                let mean: Vec<f64> = sums[label].iter().map(|v| v / n as f64).collect();
                for (m, c) in mean.iter().zip(center) {
                    checks += 1;
                    if (m - c).abs() > tol {
                        failures += 1;
                    }
                }
            }
        }
        // a 3-sigma bound fails ~0.3% of the time; allow a small margin
        assert!(
            (failures as f64) <= 0.05 * checks as f64,
            "{failures}/{checks} coordinates outside 3 standard errors"
        );
    }

    #[test]
    fn centers_respect_min_separation() {
        let (_, centers) = generate_synthetic_with_centers(8, 5, 2, 0.1, 1.0, 9).unwrap();
        for i in 0..centers.len() {
            for j in i + 1..centers.len() {
                let d = crate::prototypes::euclidean_distance(&centers[i].1, &centers[j].1);
                assert!(d >= 1.0, "centers {i} and {j} only {d} apart");
            }
        }
    }

    #[test]
    fn infeasible_packing_errors_out() {
        // 10 points with unit separation cannot fit in [-1, 1]
        let mut rng = SplitMix64::new(5);
        let got = place_centers(10, 1, 1.0, 1.0, &mut rng);
        assert!(matches!(got, Err(Error::Generation(_))));
    }
}
