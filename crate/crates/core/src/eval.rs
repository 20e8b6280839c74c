//! Unseen-class evaluation: synthesize pseudo-features with the server
//! generator, fit a softmax classifier on them alone, and score it on the
//! real unseen rows with class-balanced top-1 accuracy.

use crate::data::Dataset;
use crate::digest::Fingerprint;
use crate::error::{Error, Result};
use crate::numerics::{softmax_cross_entropy, AdamConfig, AdamState, Linear, Matrix, MlpParams};
use crate::rng::RngStream;
use crate::semantics::{Conditioner, EmbeddingTable, SkaConfig};

/// Rows above which classifier training switches from full-batch to shuffled
/// mini-batches of this size.
const FULL_BATCH_LIMIT: usize = 10_000;

/// Generated training set for the unseen classes.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoSet {
    pub features: Matrix,
    /// Global class ids, `per_class` consecutive rows per unseen class.
    pub labels: Vec<usize>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub generator_digest: String,
    pub ska_enabled: bool,
    pub gamma: f64,
    pub per_class: usize,
    pub stream: String,
}

impl PseudoSet {
    pub fn digest(&self) -> String {
        Fingerprint::new()
            .tag(&self.provenance.generator_digest)
            .floats(self.features.as_slice())
            .indices(&self.labels)
            .finish()
    }
}

pub fn generator_digest(generator: &MlpParams) -> String {
    use crate::numerics::ParamSet;
    let mut fp = Fingerprint::new();
    for t in generator.tensors() {
        fp.floats(t);
    }
    fp.finish()
}

/// Draw `per_class` features `G(z, cond_c)` for every unseen class, with
/// fresh noise per row. The condition is `a_g(c)` or, with augmentation,
/// `[a_c(c) + z_c, a_g(c)]`.
pub fn synthesize_features(
    generator: &MlpParams,
    dataset: &Dataset,
    embeddings: Option<&EmbeddingTable>,
    per_class: usize,
    ska: &SkaConfig,
    rng: &mut RngStream,
) -> Result<PseudoSet> {
    if per_class == 0 {
        return Err(Error::invalid("per-class sample count must be positive"));
    }
    if dataset.unseen_classes.is_empty() {
        return Err(Error::invalid("dataset has no unseen classes"));
    }
    let conditioner = Conditioner::new(dataset, embeddings, *ska, &dataset.unseen_classes)?;
    let cond_dim = conditioner.condition_dim();
    let input = generator.dims().input;
    if input <= cond_dim {
        return Err(Error::invalid(format!(
            "generator input width {input} leaves no room for noise beside a {cond_dim}-wide condition"
        )));
    }
    let noise_dim = input - cond_dim;
    let stream = rng.label().to_string();
    let mut parts = Vec::with_capacity(dataset.unseen_classes.len());
    let mut labels = Vec::with_capacity(per_class * dataset.unseen_classes.len());
    for &class in &dataset.unseen_classes {
        let class_labels = vec![class; per_class];
        let cond = conditioner.conditions(&class_labels, rng)?;
        let z = Matrix::from_vec(per_class, noise_dim, rng.normals(per_class * noise_dim))?;
        parts.push(generator.forward(&z.hcat(&cond)?)?);
        labels.extend(class_labels);
    }
    Ok(PseudoSet {
        features: Matrix::vstack(&parts)?,
        labels,
        provenance: Provenance {
            generator_digest: generator_digest(generator),
            ska_enabled: ska.enabled,
            gamma: ska.gamma,
            per_class,
            stream,
        },
    })
}

/// Something that maps feature rows to global class ids.
pub trait Classify {
    fn predict(&self, features: &Matrix) -> Result<Vec<usize>>;
}

/// Linear softmax classifier over a fixed class list.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxClassifier {
    pub linear: Linear,
    /// Ascending global ids; output `i` scores `classes[i]`.
    pub classes: Vec<usize>,
}

impl Classify for SoftmaxClassifier {
    /// Argmax with ties going to the lowest class id.
    fn predict(&self, features: &Matrix) -> Result<Vec<usize>> {
        let logits = self.linear.forward(features)?;
        Ok(crate::fed::argmax_rows(&logits)
            .into_iter()
            .map(|i| self.classes[i])
            .collect())
    }
}

/// Fit a linear softmax classifier to pseudo-features only, with Adam.
pub fn train_softmax_classifier(
    pseudo: &PseudoSet,
    epochs: usize,
    learning_rate: f64,
    rng: &mut RngStream,
) -> Result<SoftmaxClassifier> {
    if pseudo.labels.is_empty() {
        return Err(Error::invalid("empty pseudo set"));
    }
    let mut classes = pseudo.labels.clone();
    classes.sort_unstable();
    classes.dedup();
    let targets: Vec<usize> = pseudo
        .labels
        .iter()
        .map(|l| {
            classes
                .binary_search(l)
                .expect("class list built from labels")
        })
        .collect();
    let mut linear = Linear::zeros(pseudo.features.cols(), classes.len());
    let mut opt = AdamState::new(&linear, AdamConfig::standard(learning_rate))?;
    let n = targets.len();
    for _ in 0..epochs {
        if n <= FULL_BATCH_LIMIT {
            let logits = linear.forward(&pseudo.features)?;
            let (_, grad) = softmax_cross_entropy(&logits, &targets)?;
            let (grads, _) = linear.backward(&pseudo.features, &grad)?;
            opt.step(&mut linear, &grads)?;
            continue;
        }
        let mut order: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut order);
        for chunk in order.chunks(FULL_BATCH_LIMIT) {
            let x = pseudo.features.select_rows(chunk);
            let t: Vec<usize> = chunk.iter().map(|&i| targets[i]).collect();
            let (_, grad) = softmax_cross_entropy(&linear.forward(&x)?, &t)?;
            let (grads, _) = linear.backward(&x, &grad)?;
            opt.step(&mut linear, &grads)?;
        }
    }
    Ok(SoftmaxClassifier { linear, classes })
}

/// Class-balanced top-1: accuracy per class, then the unweighted mean.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassAccuracy {
    pub mean: f64,
    /// `(class id, accuracy)` in `class_set` order.
    pub per_class: Vec<(usize, f64)>,
}

pub fn per_class_top1(
    classifier: &dyn Classify,
    features: &Matrix,
    labels: &[usize],
    class_set: &[usize],
) -> Result<ClassAccuracy> {
    if features.rows() != labels.len() {
        return Err(Error::invalid("feature rows and labels differ in length"));
    }
    if class_set.is_empty() {
        return Err(Error::invalid("empty class set"));
    }
    let slot = |l: usize| class_set.iter().position(|&c| c == l);
    let mut hits = vec![0usize; class_set.len()];
    let mut totals = vec![0usize; class_set.len()];
    let predictions = classifier.predict(features)?;
    for (&label, &pred) in labels.iter().zip(&predictions) {
        let s = slot(label)
            .ok_or_else(|| Error::invalid(format!("test label {label} is not in the class set")))?;
        totals[s] += 1;
        if pred == label {
            hits[s] += 1;
        }
    }
    let mut per_class = Vec::with_capacity(class_set.len());
    for (s, &class) in class_set.iter().enumerate() {
        if totals[s] == 0 {
            return Err(Error::invalid(format!(
                "class {class} has no test rows; per-class accuracy is undefined"
            )));
        }
        per_class.push((class, hits[s] as f64 / totals[s] as f64));
    }
    let mean = per_class.iter().map(|(_, a)| a).sum::<f64>() / per_class.len() as f64;
    Ok(ClassAccuracy { mean, per_class })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub synth_per_class: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub ska: SkaConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub accuracy: ClassAccuracy,
    pub pseudo_digest: String,
    pub generator_digest: String,
}

/// Synthesize, train on pseudo-features, then score on the real unseen test
/// rows. The real unseen rows are read only after the classifier is fixed.
pub fn evaluate_unseen(
    generator: &MlpParams,
    dataset: &Dataset,
    embeddings: Option<&EmbeddingTable>,
    config: &EvalConfig,
    rng: &mut RngStream,
) -> Result<EvalReport> {
    let pseudo = synthesize_features(
        generator,
        dataset,
        embeddings,
        config.synth_per_class,
        &config.ska,
        rng,
    )?;
    let classifier = train_softmax_classifier(&pseudo, config.epochs, config.learning_rate, rng)?;
    let test = dataset.unseen_test();
    if test.is_empty() {
        return Err(Error::invalid("dataset has no unseen test rows"));
    }
    let accuracy = per_class_top1(
        &classifier,
        &test.features,
        &test.labels,
        &dataset.unseen_classes,
    )?;
    Ok(EvalReport {
        accuracy,
        pseudo_digest: pseudo.digest(),
        generator_digest: pseudo.provenance.generator_digest,
    })
}
