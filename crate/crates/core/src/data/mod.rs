//! Datasets, the line-oriented text formats, synthetic corpora, and
//! class-disjoint client partitioning.

mod io;
mod partition;
mod skew;
mod synthetic;
pub(crate) mod textfmt;

pub use io::{
    load_dataset, read_attributes, read_features, read_split, save_dataset, write_attributes,
    write_features, write_split, DatasetPaths, Split,
};
pub use partition::{
    partition_even, partition_uneven, validate_partitions, ClientPartition, SplitKind,
};
pub use skew::partition_skew;
pub use synthetic::{make_synthetic, make_synthetic_with_truth, SyntheticData, SyntheticSpec};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Feature rows with their global class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFeatures {
    pub features: Matrix<f32>,
    pub labels: Vec<usize>,
}

impl LabeledFeatures {
    pub fn new(features: Matrix<f32>, labels: Vec<usize>) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::invalid(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        Ok(LabeledFeatures { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// A zero-shot dataset.
///
/// `train` is the training view and only ever holds seen-class rows; `test`
/// holds the evaluation rows (the unseen-class rows are the ones the metric
/// reads). Class ids index `class_names` and the rows of `attributes`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: LabeledFeatures,
    pub test: LabeledFeatures,
    pub class_names: Vec<String>,
    /// C × m, one ground-truth attribute vector per class.
    pub attributes: Matrix<f32>,
    pub seen_classes: Vec<usize>,
    pub unseen_classes: Vec<usize>,
}

impl Dataset {
    pub fn new(
        train: LabeledFeatures,
        test: LabeledFeatures,
        class_names: Vec<String>,
        attributes: Matrix<f32>,
        seen_classes: Vec<usize>,
        unseen_classes: Vec<usize>,
    ) -> Result<Self> {
        let ds = Dataset {
            train,
            test,
            class_names,
            attributes,
            seen_classes,
            unseen_classes,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.num_classes();
        if self.attributes.rows() != c {
            return Err(Error::invalid(format!(
                "{} attribute rows for {c} classes",
                self.attributes.rows()
            )));
        }
        if !self.attributes.is_finite() {
            return Err(Error::invalid("attribute matrix has non-finite entries"));
        }
        check_class_set(&self.seen_classes, c, "seen")?;
        check_class_set(&self.unseen_classes, c, "unseen")?;
        if let Some(x) = self
            .seen_classes
            .iter()
            .find(|k| self.unseen_classes.binary_search(k).is_ok())
        {
            return Err(Error::invalid(format!("class {x} is both seen and unseen")));
        }
        if self.train.features.cols() != self.test.features.cols() && !self.test.is_empty() {
            return Err(Error::invalid("train and test feature widths differ"));
        }
        for (i, &l) in self.train.labels.iter().enumerate() {
            if !self.is_seen(l) {
                return Err(Error::invalid(format!(
                    "train row {i} has label {l}, which is not a seen class"
                )));
            }
        }
        for (i, &l) in self.test.labels.iter().enumerate() {
            if !self.is_seen(l) && !self.is_unseen(l) {
                return Err(Error::invalid(format!(
                    "test row {i} has label {l} outside the seen and unseen sets"
                )));
            }
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.train.features.cols()
    }

    pub fn attr_dim(&self) -> usize {
        self.attributes.cols()
    }

    pub fn is_seen(&self, class: usize) -> bool {
        self.seen_classes.binary_search(&class).is_ok()
    }

    pub fn is_unseen(&self, class: usize) -> bool {
        self.unseen_classes.binary_search(&class).is_ok()
    }

    /// Position of a seen class in `seen_classes`; classifier heads use it as
    /// their output index.
    pub fn seen_index(&self, class: usize) -> Option<usize> {
        self.seen_classes.binary_search(&class).ok()
    }

    pub fn attribute(&self, class: usize) -> &[f32] {
        self.attributes.row(class)
    }

    /// Ground-truth attribute rows for a list of labels.
    pub fn attributes_for(&self, labels: &[usize]) -> Matrix<f32> {
        self.attributes.select_rows(labels)
    }

    /// Test rows whose label is an unseen class.
    pub fn unseen_test(&self) -> LabeledFeatures {
        let idx: Vec<usize> = (0..self.test.len())
            .filter(|&i| self.is_unseen(self.test.labels[i]))
            .collect();
        LabeledFeatures {
            features: self.test.features.select_rows(&idx),
            labels: idx.iter().map(|&i| self.test.labels[i]).collect(),
        }
    }
}

fn check_class_set(set: &[usize], c: usize, name: &str) -> Result<()> {
    if !set.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::invalid(format!(
            "{name} classes must be strictly ascending without duplicates"
        )));
    }
    if let Some(bad) = set.iter().find(|&&k| k >= c) {
        return Err(Error::invalid(format!(
            "{name} class {bad} out of range for {c} classes"
        )));
    }
    Ok(())
}
