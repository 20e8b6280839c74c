//! Client-side training: the frozen supervising classifier and the local
//! conditional WGAN-GP loop.

use crate::data::{ClientPartition, Dataset};
use crate::error::{Error, Result};
use crate::numerics::{
    critic_objective, generator_objective, softmax_cross_entropy, AdamConfig, AdamState, GanModel,
    Linear, Matrix,
};
use crate::rng::RngStream;
use crate::semantics::Conditioner;

use super::config::{AggregationMode, FedConfig};
use super::server::Upload;

/// Everything one client owns. Nothing here is ever shared with the server
/// except what [`ClientState::upload`] returns.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub partition: ClientPartition,
    pub model: GanModel,
    /// Supervises the classification term; frozen after pretraining. Its
    /// outputs index the global seen-class list.
    pub cls_head: Linear,
    pub generator_opt: AdamState,
    pub discriminator_opt: AdamState,
    pub rng: RngStream,
}

/// Mean losses over one call to [`local_train`].
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LocalLosses {
    /// Critic loss including the weighted gradient penalty.
    pub critic: f64,
    /// `-mean D(fake)` at the generator steps.
    pub generator: f64,
    /// Classifier cross-entropy on generated features.
    pub classification: f64,
    pub generator_steps: usize,
}

impl ClientState {
    pub fn new(
        partition: ClientPartition,
        model: GanModel,
        cls_head: Linear,
        learning_rate: f64,
        rng: RngStream,
    ) -> Result<Self> {
        let opt = AdamConfig::gan(learning_rate);
        Ok(ClientState {
            generator_opt: AdamState::new(&model.generator, opt)?,
            discriminator_opt: AdamState::new(&model.discriminator, opt)?,
            partition,
            model,
            cls_head,
            rng,
        })
    }

    pub fn client_id(&self) -> usize {
        self.partition.client_id
    }

    /// The parameters this client transmits in the given mode.
    pub fn upload(&self, mode: AggregationMode) -> Upload {
        Upload {
            client_id: self.client_id(),
            generator: self.model.generator.clone(),
            discriminator: match mode {
                AggregationMode::Holistic => Some(self.model.discriminator.clone()),
                AggregationMode::GeneratorOnly => None,
            },
        }
    }
}

fn seen_targets(dataset: &Dataset, labels: &[usize]) -> Result<Vec<usize>> {
    labels
        .iter()
        .map(|&l| {
            dataset
                .seen_index(l)
                .ok_or_else(|| Error::invalid(format!("label {l} is not a seen class")))
        })
        .collect()
}

/// Shuffled mini-batches over `rows`. The last batch may be short; a client
/// with fewer rows than `batch_size` gets one batch drawn with replacement.
fn epoch_batches(rows: &[usize], batch_size: usize, rng: &mut RngStream) -> Vec<Vec<usize>> {
    if rows.len() < batch_size {
        return vec![(0..batch_size)
            .map(|_| rows[rng.below(rows.len())])
            .collect()];
    }
    let mut order = rows.to_vec();
    rng.shuffle(&mut order);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// Train a linear softmax classifier on the client's real features. Outputs
/// span the global seen-class list so all clients share one label space.
pub fn pretrain_local_classifier(
    dataset: &Dataset,
    partition: &ClientPartition,
    epochs: usize,
    learning_rate: f64,
    batch_size: usize,
    rng: &mut RngStream,
) -> Result<Linear> {
    if partition.row_indices.is_empty() {
        return Err(Error::invalid(format!(
            "client {} has no rows to pretrain on",
            partition.client_id
        )));
    }
    let mut head = Linear::zeros(dataset.feature_dim(), dataset.seen_classes.len());
    let mut opt = AdamState::new(&head, AdamConfig::standard(learning_rate))?;
    for _ in 0..epochs {
        for batch in epoch_batches(&partition.row_indices, batch_size, rng) {
            let x = dataset.train.features.select_rows(&batch);
            let labels: Vec<usize> = batch.iter().map(|&r| dataset.train.labels[r]).collect();
            let targets = seen_targets(dataset, &labels)?;
            let logits = head.forward(&x)?;
            let (_, grad) = softmax_cross_entropy(&logits, &targets)?;
            let (grads, _) = head.backward(&x, &grad)?;
            opt.step(&mut head, &grads)?;
        }
    }
    Ok(head)
}

fn noise(rows: usize, cols: usize, rng: &mut RngStream) -> Matrix {
    Matrix::from_vec(rows, cols, rng.normals(rows * cols)).expect("sized above")
}

fn finite(value: f32, what: &str) -> Result<f32> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::numeric(what, format!("loss is {value}")))
    }
}

/// Run `local_epochs` of adversarial training on the client's rows.
///
/// Per batch: `n_critic` critic updates on `mean D(fake) - mean D(real) + λ·GP`
/// followed by one generator update on `-mean D(fake) + β·CE`. The generator is
/// conditioned through `conditioner` (augmented or not); the critic always
/// sees the ground-truth attribute vector. The classifier head is read only.
pub fn local_train(
    state: &mut ClientState,
    dataset: &Dataset,
    conditioner: &Conditioner<'_>,
    config: &FedConfig,
) -> Result<LocalLosses> {
    if state.partition.row_indices.is_empty() {
        return Err(Error::invalid("client has no rows"));
    }
    let arch = state.model.arch;
    if conditioner.condition_dim() != arch.condition_dim {
        return Err(Error::invalid(format!(
            "condition width {} does not match the generator's {}",
            conditioner.condition_dim(),
            arch.condition_dim
        )));
    }
    if dataset.feature_dim() != arch.feature_dim || dataset.attr_dim() != arch.attr_dim {
        return Err(Error::invalid("dataset widths do not match the model"));
    }
    let gp_lambda = config.gp_lambda as f32;
    let beta = config.beta as f32;
    let ClientState {
        partition,
        model,
        cls_head,
        generator_opt,
        discriminator_opt,
        rng,
    } = state;

    let mut critic_sum = 0.0f64;
    let mut critic_steps = 0usize;
    let mut gen_sum = 0.0f64;
    let mut cls_sum = 0.0f64;
    let mut gen_steps = 0usize;
    for _ in 0..config.local_epochs {
        for batch in epoch_batches(&partition.row_indices, config.batch_size, rng) {
            let b = batch.len();
            let x_real = dataset.train.features.select_rows(&batch);
            let labels: Vec<usize> = batch.iter().map(|&r| dataset.train.labels[r]).collect();
            let a_g = dataset.attributes_for(&labels);
            let targets = seen_targets(dataset, &labels)?;

            for _ in 0..config.n_critic {
                let z = noise(b, arch.noise_dim, rng);
                let cond = conditioner.conditions(&labels, rng)?;
                let x_fake = model.generate(&z, &cond)?;
                let mix: Vec<f32> = (0..b).map(|_| rng.uniform()).collect();
                let (parts, grads) = critic_objective(
                    &model.discriminator,
                    &x_real,
                    &x_fake,
                    &a_g,
                    &mix,
                    gp_lambda,
                )?;
                critic_sum += f64::from(finite(parts.total, "critic step")?);
                critic_steps += 1;
                discriminator_opt.step(&mut model.discriminator, &grads)?;
            }

            let z = noise(b, arch.noise_dim, rng);
            let cond = conditioner.conditions(&labels, rng)?;
            let (parts, grads) =
                generator_objective(model, cls_head, &z, &cond, &a_g, &targets, beta)?;
            finite(parts.total, "generator step")?;
            gen_sum += f64::from(parts.adversarial);
            cls_sum += f64::from(parts.classification);
            gen_steps += 1;
            generator_opt.step(&mut model.generator, &grads)?;
        }
    }
    let mean = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
    Ok(LocalLosses {
        critic: mean(critic_sum, critic_steps),
        generator: mean(gen_sum, gen_steps),
        classification: mean(cls_sum, gen_steps),
        generator_steps: gen_steps,
    })
}

/// Predicted global class ids (argmax, ties to the lowest output index).
pub(crate) fn argmax_rows(logits: &Matrix) -> Vec<usize> {
    logits
        .iter_rows()
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_synthetic, partition_even, SyntheticSpec};

    fn toy() -> Dataset {
        let spec = SyntheticSpec {
            seen_count: 4,
            unseen_count: 2,
            attr_dim: 4,
            feature_dim: 6,
            rows_per_class: 10,
            noise_scale: 0.05,
        };
        make_synthetic(&spec, &mut RngStream::from_seed(3, "data")).unwrap()
    }

    #[test]
    fn single_class_client_predicts_its_class() {
        let ds = toy();
        let part = ClientPartition {
            client_id: 0,
            class_subset: vec![2],
            row_indices: (0..ds.train.len())
                .filter(|&i| ds.train.labels[i] == 2)
                .collect(),
        };
        let head =
            pretrain_local_classifier(&ds, &part, 5, 1e-2, 64, &mut RngStream::from_seed(0, "c"))
                .unwrap();
        let x = ds.train.features.select_rows(&part.row_indices);
        let pred = argmax_rows(&head.forward(&x).unwrap());
        assert!(pred.iter().all(|&p| p == ds.seen_index(2).unwrap()));
    }

    #[test]
    fn separable_two_class_toy_is_learned() {
        // Two well-separated clusters in 2-D.
        let mut rng = RngStream::from_seed(4, "sep");
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..60 {
            let c = i % 2;
            let centre = if c == 0 { [2.0f32, 0.5] } else { [0.5, 2.0] };
            rows.push(vec![
                centre[0] + 0.2 * rng.normal::<f32>(),
                centre[1] + 0.2 * rng.normal::<f32>(),
            ]);
            labels.push(c);
        }
        let train =
            crate::data::LabeledFeatures::new(Matrix::from_rows(&rows).unwrap(), labels).unwrap();
        let test = crate::data::LabeledFeatures::new(Matrix::zeros(0, 2), vec![]).unwrap();
        let ds = Dataset::new(
            train,
            test,
            vec!["a".into(), "b".into(), "u".into()],
            Matrix::identity(3),
            vec![0, 1],
            vec![2],
        )
        .unwrap();
        let part = ClientPartition {
            client_id: 0,
            class_subset: vec![0, 1],
            row_indices: (0..60).collect(),
        };
        let head = pretrain_local_classifier(&ds, &part, 50, 1e-2, 64, &mut rng).unwrap();
        let pred = argmax_rows(&head.forward(&ds.train.features).unwrap());
        let correct = pred
            .iter()
            .zip(&ds.train.labels)
            .filter(|(p, l)| p == l)
            .count();
        assert!(correct as f64 / 60.0 >= 0.95);
    }

    #[test]
    fn empty_partition_is_rejected() {
        let ds = toy();
        let part = ClientPartition {
            client_id: 0,
            class_subset: vec![],
            row_indices: vec![],
        };
        assert!(pretrain_local_classifier(
            &ds,
            &part,
            1,
            1e-2,
            8,
            &mut RngStream::from_seed(0, "c")
        )
        .is_err());
    }

    #[test]
    fn small_clients_sample_full_batches_with_replacement() {
        let mut rng = RngStream::from_seed(0, "b");
        let batches = epoch_batches(&[3, 7, 9], 8, &mut rng);
        assert_eq!(batches.len(), 1);
        assert_eq!(batches[0].len(), 8);
        assert!(batches[0].iter().all(|r| [3, 7, 9].contains(r)));
        let batches = epoch_batches(&(0..10).collect::<Vec<_>>(), 4, &mut rng);
        assert_eq!(
            batches.iter().map(Vec::len).collect::<Vec<_>>(),
            vec![4, 4, 2]
        );
    }

    #[test]
    fn partition_rows_feed_training() {
        let ds = toy();
        let parts = partition_even(&ds, 2, &mut RngStream::from_seed(0, "p")).unwrap();
        assert!(parts.iter().all(|p| !p.row_indices.is_empty()));
    }
}
