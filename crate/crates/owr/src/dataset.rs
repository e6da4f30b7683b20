//! Labeled datasets, CSV ingestion and the open-world class split.
//!
//! The canonical on-disk format is a CSV file with header
//! `label,f0,f1,...,f{d-1}` followed by one numeric row per sample. Labels
//! are arbitrary strings without commas; feature values must be finite.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// Semantic label of a sample or class.
///
/// Ordered lexicographically; everywhere a tie between classes must be broken,
/// the smallest `ClassId` wins.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassId(String);

impl ClassId {
    pub fn new(id: impl Into<String>) -> Self {
        ClassId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ClassId {
    fn from(s: &str) -> Self {
        ClassId(s.to_owned())
    }
}

impl From<String> for ClassId {
    fn from(s: String) -> Self {
        ClassId(s)
    }
}

/// One raw input vector together with its semantic label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub input: Vec<f64>,
    pub label: ClassId,
}

impl LabeledSample {
    pub fn new(input: Vec<f64>, label: impl Into<ClassId>) -> Self {
        LabeledSample {
            input,
            label: label.into(),
        }
    }
}

/// An in-memory dataset: samples sharing one input dimensionality.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<LabeledSample>,
    dim: usize,
}

impl Dataset {
    /// Builds a dataset, validating dimensional consistency and finiteness.
    pub fn new(samples: Vec<LabeledSample>) -> Result<Self> {
        let dim = match samples.first() {
            Some(s) => s.input.len(),
            None => return Err(Error::EmptyData("dataset has no samples".into())),
        };
        for (i, s) in samples.iter().enumerate() {
            if s.input.len() != dim {
                return Err(Error::Schema(format!(
                    "sample {i} has {} features, expected {dim}",
                    s.input.len()
                )));
            }
            if s.input.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("sample {i}")));
            }
            if s.label.as_str().is_empty() {
                return Err(Error::Schema(format!("sample {i} has an empty label")));
            }
        }
        Ok(Dataset { samples, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[LabeledSample] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<LabeledSample> {
        self.samples
    }

    /// Distinct labels present, in sorted order.
    pub fn class_ids(&self) -> BTreeSet<ClassId> {
        self.samples.iter().map(|s| s.label.clone()).collect()
    }

    /// Parses the canonical CSV format. Row order is preserved.
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::EmptyData("csv file is empty".into()))?;
        let dim = parse_header(header)?;

        let mut samples = Vec::new();
        for (idx, line) in lines {
            let line_no = idx + 1; // 1-based, header is line 1
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            let label = fields.next().unwrap_or("");
            if label.is_empty() {
                return Err(Error::Parse {
                    line: line_no,
                    msg: "empty label".into(),
                });
            }
            let mut input = Vec::with_capacity(dim);
            for field in fields {
                let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                    line: line_no,
                    msg: format!("`{field}` is not a number"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Parse {
                        line: line_no,
                        msg: format!("`{field}` is not finite"),
                    });
                }
                input.push(v);
            }
            if input.len() != dim {
                return Err(Error::Schema(format!(
                    "line {line_no} has {} features, header declares {dim}",
                    input.len()
                )));
            }
            samples.push(LabeledSample::new(input, label));
        }
        if samples.is_empty() {
            return Err(Error::EmptyData("csv file has a header but no rows".into()));
        }
        Ok(Dataset { samples, dim })
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_csv_str(&text)
    }

    /// Serializes to the canonical CSV format. The float formatting
    /// round-trips exactly through `from_csv_str`.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("label");
        for i in 0..self.dim {
            out.push_str(&format!(",f{i}"));
        }
        out.push('\n');
        for s in &self.samples {
            out.push_str(s.label.as_str());
            for v in &s.input {
                out.push(',');
                out.push_str(&format!("{v}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        for s in &self.samples {
            if s.label.as_str().contains([',', '\n', '\r']) {
                return Err(Error::Schema(format!(
                    "label `{}` contains a separator and cannot be written as csv",
                    s.label
                )));
            }
        }
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }
}

fn parse_header(header: &str) -> Result<usize> {
    let mut fields = header.split(',');
    if fields.next() != Some("label") {
        return Err(Error::Schema("header must start with `label`".into()));
    }
    let mut dim = 0usize;
    for field in fields {
        let expected = format!("f{dim}");
        if field != expected {
            return Err(Error::Schema(format!(
                "header column {} is `{field}`, expected `{expected}`",
                dim + 1
            )));
        }
        dim += 1;
    }
    if dim == 0 {
        return Err(Error::Schema("header declares no feature columns".into()));
    }
    Ok(dim)
}

/// Class-level partition of a dataset for the incremental protocol.
///
/// Classes are split into three disjoint groups: the initial known set, the
/// classes revealed one per incremental step (in `incremental_classes`
/// order), and classes that stay unknown forever. Each initial/incremental
/// class is further split into train and test samples; never-known classes
/// contribute all of their samples to the test side.
#[derive(Debug, Clone)]
pub struct OpenWorldSplit {
    pub initial_classes: Vec<ClassId>,
    pub incremental_classes: Vec<ClassId>,
    pub never_known_classes: Vec<ClassId>,
    pub train_by_class: BTreeMap<ClassId, Vec<LabeledSample>>,
    pub test_by_class: BTreeMap<ClassId, Vec<LabeledSample>>,
    pub dim: usize,
}

impl OpenWorldSplit {
    /// The initial training set covering exactly the initial classes.
    pub fn initial_train(&self) -> Result<Dataset> {
        let mut samples = Vec::new();
        for class in &self.initial_classes {
            samples.extend(self.train_by_class[class].iter().cloned());
        }
        Dataset::new(samples)
    }

    /// Test samples of the given classes, concatenated in class order.
    pub fn test_samples_of(&self, classes: &[ClassId]) -> Vec<LabeledSample> {
        let mut samples = Vec::new();
        for class in classes {
            if let Some(xs) = self.test_by_class.get(class) {
                samples.extend(xs.iter().cloned());
            }
        }
        samples
    }
}

/// Splits a dataset into initial / incremental / never-known classes with
/// per-class train/test sub-splits. Deterministic for a fixed seed.
pub fn split_open_world(
    dataset: &Dataset,
    num_known_initial: usize,
    num_known_total: usize,
    test_fraction: f64,
    seed: u64,
) -> Result<OpenWorldSplit> {
    if num_known_initial == 0 {
        return Err(Error::Config("num_known_initial must be >= 1".into()));
    }
    if num_known_total < num_known_initial {
        return Err(Error::Config(
            "num_known_total must be >= num_known_initial".into(),
        ));
    }
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::Config("test_fraction must be in [0, 1)".into()));
    }
    let mut classes: Vec<ClassId> = dataset.class_ids().into_iter().collect();
    if classes.len() < num_known_total {
        return Err(Error::Config(format!(
            "dataset has {} classes, but num_known_total is {num_known_total}",
            classes.len()
        )));
    }

    let mut rng = SplitMix64::new(seed);
    rng.shuffle(&mut classes);

    let initial_classes: Vec<ClassId> = classes[..num_known_initial].to_vec();
    let incremental_classes: Vec<ClassId> = classes[num_known_initial..num_known_total].to_vec();
    let never_known_classes: Vec<ClassId> = classes[num_known_total..].to_vec();

    let mut by_class: BTreeMap<ClassId, Vec<LabeledSample>> = BTreeMap::new();
    for s in dataset.samples() {
        by_class.entry(s.label.clone()).or_default().push(s.clone());
    }

    let mut train_by_class = BTreeMap::new();
    let mut test_by_class = BTreeMap::new();
    for class in classes.iter() {
        let mut samples = by_class.remove(class).unwrap_or_default();
        rng.shuffle(&mut samples);
        if never_known_classes.contains(class) {
            train_by_class.insert(class.clone(), Vec::new());
            test_by_class.insert(class.clone(), samples);
            continue;
        }
        let n = samples.len();
        let mut n_test = (n as f64 * test_fraction).round() as usize;
        if test_fraction > 0.0 && n > 1 {
            n_test = n_test.clamp(1, n - 1);
        } else {
            n_test = n_test.min(n.saturating_sub(1));
        }
        let test = samples.split_off(n - n_test);
        train_by_class.insert(class.clone(), samples);
        test_by_class.insert(class.clone(), test);
    }

    Ok(OpenWorldSplit {
        initial_classes,
        incremental_classes,
        never_known_classes,
        train_by_class,
        test_by_class,
        dim: dataset.dim(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_dataset(classes: usize, per_class: usize) -> Dataset {
        let mut samples = Vec::new();
        for c in 0..classes {
            for i in 0..per_class {
                samples.push(LabeledSample::new(
                    vec![c as f64, i as f64],
                    format!("c{c}").as_str(),
                ));
            }
        }
        Dataset::new(samples).unwrap()
    }

    #[test]
    fn parses_two_row_file() {
        let ds = Dataset::from_csv_str("label,f0,f1\nA,1.0,2.0\nB,3.5,-1\n").unwrap();
        assert_eq!(ds.dim(), 2);
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.samples()[0].label, ClassId::from("A"));
        assert_eq!(ds.samples()[1].input, vec![3.5, -1.0]);
    }

    #[test]
    fn malformed_numeric_names_line() {
        let err = Dataset::from_csv_str("label,f0,f1\nA,1.0,x\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn empty_body_is_an_error() {
        assert!(matches!(
            Dataset::from_csv_str("label,f0,f1\n"),
            Err(Error::EmptyData(_))
        ));
    }

    #[test]
    fn inconsistent_width_is_schema_error() {
        assert!(matches!(
            Dataset::from_csv_str("label,f0,f1\nA,1.0,2.0\nB,3.0\n"),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn bad_header_is_schema_error() {
        assert!(matches!(
            Dataset::from_csv_str("label,x0\nA,1.0\n"),
            Err(Error::Schema(_))
        ));
        assert!(matches!(
            Dataset::from_csv_str("label\nA\n"),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let ds = Dataset::new(vec![
            LabeledSample::new(vec![0.1, -0.0, 1.0 / 3.0], "a"),
            LabeledSample::new(vec![1e-300, 2e17, -5.5], "b"),
        ])
        .unwrap();
        let back = Dataset::from_csv_str(&ds.to_csv_string()).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn split_exhaustive_known() {
        let ds = toy_dataset(6, 10);
        let split = split_open_world(&ds, 3, 6, 0.2, 1).unwrap();
        assert_eq!(split.initial_classes.len(), 3);
        assert_eq!(split.incremental_classes.len(), 3);
        assert!(split.never_known_classes.is_empty());
    }

    #[test]
    fn split_with_never_known() {
        let ds = toy_dataset(6, 10);
        let split = split_open_world(&ds, 3, 3, 0.2, 1).unwrap();
        assert_eq!(split.never_known_classes.len(), 3);
        for class in &split.never_known_classes {
            assert!(split.train_by_class[class].is_empty());
            assert_eq!(split.test_by_class[class].len(), 10);
        }
    }

    #[test]
    fn split_partition_is_disjoint_and_complete() {
        let ds = toy_dataset(7, 8);
        let split = split_open_world(&ds, 2, 5, 0.25, 9).unwrap();
        let mut all: Vec<ClassId> = split
            .initial_classes
            .iter()
            .chain(&split.incremental_classes)
            .chain(&split.never_known_classes)
            .cloned()
            .collect();
        all.sort();
        let expect: Vec<ClassId> = ds.class_ids().into_iter().collect();
        assert_eq!(all, expect);

        // train/test sub-splits are disjoint and cover each class
        for class in &expect {
            let train = &split.train_by_class[class];
            let test = &split.test_by_class[class];
            assert_eq!(train.len() + test.len(), 8);
        }
    }

    #[test]
    fn split_is_deterministic_per_seed() {
        let ds = toy_dataset(6, 10);
        let a = split_open_world(&ds, 3, 6, 0.2, 5).unwrap();
        let b = split_open_world(&ds, 3, 6, 0.2, 5).unwrap();
        assert_eq!(a.initial_classes, b.initial_classes);
        assert_eq!(a.train_by_class, b.train_by_class);
        assert_eq!(a.test_by_class, b.test_by_class);
    }
}
