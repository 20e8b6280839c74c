use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::rng::RngStream;

use super::{Dataset, LabeledFeatures};

/// Shape of a synthetic zero-shot corpus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub seen_count: usize,
    pub unseen_count: usize,
    pub attr_dim: usize,
    pub feature_dim: usize,
    pub rows_per_class: usize,
    /// Standard deviation of the per-row feature noise.
    pub noise_scale: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            seen_count: 20,
            unseen_count: 5,
            attr_dim: 16,
            feature_dim: 32,
            rows_per_class: 50,
            noise_scale: 0.05,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.seen_count == 0
            || self.unseen_count == 0
            || self.attr_dim == 0
            || self.feature_dim == 0
            || self.rows_per_class == 0
        {
            return Err(Error::invalid(format!(
                "synthetic counts must all be positive: {self:?}"
            )));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::invalid(
                "noise_scale must be finite and non-negative",
            ));
        }
        Ok(())
    }
}

/// A synthetic dataset together with the projection that generated it.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub dataset: Dataset,
    /// d × m map from attributes to class-mean features.
    pub projection: Matrix<f32>,
}

pub fn make_synthetic(spec: &SyntheticSpec, rng: &mut RngStream) -> Result<Dataset> {
    make_synthetic_with_truth(spec, rng).map(|s| s.dataset)
}

/// Classes `0..seen_count` are seen, the rest unseen. Attributes are
/// uniform on `[0,1)^m`; the projection has entries uniform on
/// `[0, 1/sqrt(m))` so class means are non-negative and of order one. Each
/// row is `projection · a_c + noise`. Seen rows form the training view and
/// unseen rows the test view.
pub fn make_synthetic_with_truth(
    spec: &SyntheticSpec,
    rng: &mut RngStream,
) -> Result<SyntheticData> {
    spec.validate()?;
    let classes = spec.seen_count + spec.unseen_count;
    let (m, d) = (spec.attr_dim, spec.feature_dim);
    let attr_data: Vec<f32> = (0..classes * m).map(|_| rng.uniform()).collect();
    let attributes = Matrix::from_vec(classes, m, attr_data)?;
    let scale = 1.0 / (m as f32).sqrt();
    let proj_data: Vec<f32> = (0..d * m).map(|_| rng.uniform::<f32>() * scale).collect();
    let projection = Matrix::from_vec(d, m, proj_data)?;

    let means: Vec<Vec<f32>> = (0..classes)
        .map(|c| {
            let a = attributes.row(c);
            (0..d)
                .map(|i| {
                    projection
                        .row(i)
                        .iter()
                        .zip(a)
                        .fold(0.0f32, |acc, (w, x)| acc + w * x)
                })
                .collect()
        })
        .collect();

    let noise = spec.noise_scale as f32;
    let mut sample = |class_ids: std::ops::Range<usize>| -> Result<LabeledFeatures> {
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for c in class_ids {
            for _ in 0..spec.rows_per_class {
                for &mu in &means[c] {
                    let eta = if noise > 0.0 {
                        rng.normal::<f32>() * noise
                    } else {
                        0.0
                    };
                    data.push(mu + eta);
                }
                labels.push(c);
            }
        }
        LabeledFeatures::new(Matrix::from_vec(labels.len(), d, data)?, labels)
    };
    let train = sample(0..spec.seen_count)?;
    let test = sample(spec.seen_count..classes)?;
    let class_names = (0..classes).map(|c| format!("class_{c:03}")).collect();
    let dataset = Dataset::new(
        train,
        test,
        class_names,
        attributes,
        (0..spec.seen_count).collect(),
        (spec.seen_count..classes).collect(),
    )?;
    Ok(SyntheticData {
        dataset,
        projection,
    })
}
