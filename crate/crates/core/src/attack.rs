//! Gradient-leakage (DLG) inversion at feature level.
//!
//! Two victims: the conditional critic, whose training gradients expose
//! `(feature, attribute)` rows, and a softmax classifier, whose gradients
//! expose `(feature, label)` rows. Inversion optimises dummy rows so their
//! gradients match the observed ones. Estimates are always feature-space
//! vectors; nothing here maps back to images.

use crate::error::{Error, Result};
use crate::numerics::{
    mlp_backward, softmax_cross_entropy, AdamConfig, AdamState, Linear, LinearGrads, Matrix,
    MlpGrads, MlpParams, OutputActivation, VecParams,
};
use crate::rng::RngStream;

/// Largest batch the capture step accepts.
pub const MAX_ATTACK_BATCH: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetKind {
    /// High-level transfer: a classifier trained on `(feature, label)`.
    FeatureAndLabel,
    /// Mid-level transfer: a critic trained on `(feature, attribute)`.
    FeatureAndAttribute,
}

impl TargetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TargetKind::FeatureAndLabel => "feature_and_label",
            TargetKind::FeatureAndAttribute => "feature_and_attribute",
        }
    }
}

/// The model whose gradients leak.
#[derive(Debug, Clone, Copy)]
pub enum Victim<'a> {
    /// Critic over `[feature | attribute]` rows, `feature_dim` columns first.
    Critic {
        model: &'a MlpParams,
        feature_dim: usize,
    },
    Classifier {
        model: &'a Linear,
    },
}

impl Victim<'_> {
    pub fn kind(&self) -> TargetKind {
        match self {
            Victim::Critic { .. } => TargetKind::FeatureAndAttribute,
            Victim::Classifier { .. } => TargetKind::FeatureAndLabel,
        }
    }
}

/// A private training batch.
#[derive(Debug, Clone, PartialEq)]
pub enum PrivateBatch {
    Attributes {
        features: Matrix,
        attributes: Matrix,
    },
    Labels {
        features: Matrix,
        labels: Vec<usize>,
    },
}

impl PrivateBatch {
    pub fn features(&self) -> &Matrix {
        match self {
            PrivateBatch::Attributes { features, .. } | PrivateBatch::Labels { features, .. } => {
                features
            }
        }
    }
}

/// Exactly what the client would transmit for one step on the batch.
#[derive(Debug, Clone, PartialEq)]
pub enum GradientBundle {
    Critic(MlpGrads),
    Classifier(LinearGrads),
}

/// Gradients of one training step on `batch`: for the critic, the real-data
/// term `-mean D([x, a])`; for the classifier, mean softmax cross-entropy.
pub fn capture_gradients(victim: &Victim<'_>, batch: &PrivateBatch) -> Result<GradientBundle> {
    let rows = batch.features().rows();
    if rows == 0 || rows > MAX_ATTACK_BATCH {
        return Err(Error::invalid(format!(
            "attack batch must hold 1..={MAX_ATTACK_BATCH} rows, got {rows}"
        )));
    }
    match (victim, batch) {
        (
            Victim::Critic { model, feature_dim },
            PrivateBatch::Attributes {
                features,
                attributes,
            },
        ) => {
            check_critic(model, *feature_dim)?;
            if features.cols() != *feature_dim || attributes.rows() != rows {
                return Err(Error::invalid(
                    "batch does not match the critic's input split",
                ));
            }
            let input = features.hcat(attributes)?;
            let out_grad = Matrix::from_vec(rows, 1, vec![-1.0 / rows as f32; rows])?;
            Ok(GradientBundle::Critic(
                mlp_backward(model, &input, &out_grad)?.0,
            ))
        }
        (Victim::Classifier { model }, PrivateBatch::Labels { features, labels }) => {
            let (_, grad) = softmax_cross_entropy(&model.forward(features)?, labels)?;
            Ok(GradientBundle::Classifier(
                model.backward(features, &grad)?.0,
            ))
        }
        _ => Err(Error::invalid("batch kind does not match the victim")),
    }
}

fn check_critic(model: &MlpParams, feature_dim: usize) -> Result<()> {
    let dims = model.dims();
    if dims.output != 1 || model.output_activation != OutputActivation::None {
        return Err(Error::invalid("critic must have one linear output"));
    }
    if feature_dim == 0 || feature_dim >= dims.input {
        return Err(Error::invalid(
            "feature width must leave a non-empty attribute block",
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DlgConfig {
    pub steps: usize,
    pub learning_rate: f64,
    /// Rows in the dummy batch; must equal the victim batch size.
    pub batch: usize,
    /// Record the residual every this many steps (and at the first and last).
    pub log_every: usize,
}

impl Default for DlgConfig {
    fn default() -> Self {
        DlgConfig {
            steps: 2000,
            learning_rate: 0.05,
            batch: 1,
            log_every: 100,
        }
    }
}

/// Outcome of one inversion.
#[derive(Debug, Clone, PartialEq)]
pub struct LeakageReport {
    pub kind: TargetKind,
    /// `(component, cosine)` between estimate and truth, e.g. `attribute`.
    pub cosines: Vec<(String, f64)>,
    /// `(step, best residual so far)`; non-increasing.
    pub residuals: Vec<(usize, f64)>,
    pub iterations: usize,
    pub feature_estimate: Matrix<f64>,
    /// Attribute rows or per-class label probabilities.
    pub condition_estimate: Matrix<f64>,
}

impl LeakageReport {
    pub fn cosine(&self, component: &str) -> Option<f64> {
        self.cosines
            .iter()
            .find(|(c, _)| c == component)
            .map(|(_, v)| *v)
    }

    pub fn final_residual(&self) -> f64 {
        self.residuals.last().map_or(f64::NAN, |r| r.1)
    }
}

/// Residual and its gradient with respect to the dummy rows.
trait Matcher {
    fn width(&self) -> usize;
    fn residual(&self, dummy: &[f64], grad: &mut [f64]) -> f64;
}

/// Critic, dummy rows `u_r = [x'_r | a'_r]`. With `p = W1 u + b1`,
/// `s = w2 ⊙ φ'(p)`, the transmitted gradients are
/// `gW2 = -mean φ(p)`, `gb1 = -mean s`, `gW1 = -mean s uᵀ`, `gb2 = -1`.
struct CriticMatcher {
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    slope: f64,
    hidden: usize,
    input: usize,
    rows: usize,
    obs_w1: Vec<f64>,
    obs_b1: Vec<f64>,
    obs_w2: Vec<f64>,
}

impl CriticMatcher {
    fn new(model: &MlpParams, obs: &MlpGrads, rows: usize) -> Self {
        let f = |v: &[f32]| v.iter().map(|&x| f64::from(x)).collect::<Vec<_>>();
        let dims = model.dims();
        CriticMatcher {
            w1: f(model.layer1_weights.as_slice()),
            b1: f(&model.layer1_bias),
            w2: f(model.layer2_weights.as_slice()),
            slope: model.hidden_activation.slope_at(-1.0),
            hidden: dims.hidden,
            input: dims.input,
            rows,
            obs_w1: f(obs.layer1_weights.as_slice()),
            obs_b1: f(&obs.layer1_bias),
            obs_w2: f(obs.layer2_weights.as_slice()),
        }
    }
}

impl Matcher for CriticMatcher {
    fn width(&self) -> usize {
        self.input
    }

    fn residual(&self, dummy: &[f64], grad: &mut [f64]) -> f64 {
        let (h, n, b) = (self.hidden, self.input, self.rows as f64);
        let mut pre = vec![0.0; self.rows * h];
        for r in 0..self.rows {
            let u = &dummy[r * n..(r + 1) * n];
            for k in 0..h {
                let row = &self.w1[k * n..(k + 1) * n];
                pre[r * h + k] = self.b1[k] + row.iter().zip(u).map(|(w, x)| w * x).sum::<f64>();
            }
        }
        let deriv = |p: f64| if p > 0.0 { 1.0 } else { self.slope };
        let mut e_w2 = self.obs_w2.iter().map(|o| -o).collect::<Vec<_>>();
        let mut e_b1 = self.obs_b1.iter().map(|o| -o).collect::<Vec<_>>();
        let mut e_w1 = self.obs_w1.iter().map(|o| -o).collect::<Vec<_>>();
        for r in 0..self.rows {
            let u = &dummy[r * n..(r + 1) * n];
            for k in 0..h {
                let p = pre[r * h + k];
                let s = self.w2[k] * deriv(p);
                e_w2[k] -= p * deriv(p) / b;
                e_b1[k] -= s / b;
                for j in 0..n {
                    e_w1[k * n + j] -= s * u[j] / b;
                }
            }
        }
        grad.iter_mut().for_each(|g| *g = 0.0);
        for r in 0..self.rows {
            let g = &mut grad[r * n..(r + 1) * n];
            for k in 0..h {
                let d = deriv(pre[r * h + k]);
                let s = self.w2[k] * d;
                let row = &self.w1[k * n..(k + 1) * n];
                let err_row = &e_w1[k * n..(k + 1) * n];
                for j in 0..n {
                    g[j] += -2.0 / b * (row[j] * d * e_w2[k] + err_row[j] * s);
                }
            }
        }
        let sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
        sq(&e_w2) + sq(&e_b1) + sq(&e_w1)
    }
}

/// Classifier, dummy rows `[x'_r | ℓ_r]` where `t_r = softmax(ℓ_r)` is the
/// soft dummy label. Transmitted: `gW = mean q xᵀ`, `gb = mean q`,
/// `q = softmax(W x + b) - t`.
struct ClassifierMatcher {
    w: Vec<f64>,
    bias: Vec<f64>,
    classes: usize,
    features: usize,
    rows: usize,
    obs_w: Vec<f64>,
    obs_b: Vec<f64>,
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// `J r` for the softmax Jacobian `diag(p) - p pᵀ`.
fn softmax_vjp(p: &[f64], r: &[f64]) -> Vec<f64> {
    let pr: f64 = p.iter().zip(r).map(|(a, b)| a * b).sum();
    p.iter().zip(r).map(|(pi, ri)| pi * (ri - pr)).collect()
}

impl Matcher for ClassifierMatcher {
    fn width(&self) -> usize {
        self.features + self.classes
    }

    fn residual(&self, dummy: &[f64], grad: &mut [f64]) -> f64 {
        let (c, d, b) = (self.classes, self.features, self.rows as f64);
        let w = self.width();
        let mut probs = Vec::with_capacity(self.rows);
        let mut targets = Vec::with_capacity(self.rows);
        let mut e_w: Vec<f64> = self.obs_w.iter().map(|o| -o).collect();
        let mut e_b: Vec<f64> = self.obs_b.iter().map(|o| -o).collect();
        for r in 0..self.rows {
            let x = &dummy[r * w..r * w + d];
            let z: Vec<f64> = (0..c)
                .map(|k| {
                    self.bias[k]
                        + self.w[k * d..(k + 1) * d]
                            .iter()
                            .zip(x)
                            .map(|(a, b)| a * b)
                            .sum::<f64>()
                })
                .collect();
            let p = softmax(&z);
            let t = softmax(&dummy[r * w + d..(r + 1) * w]);
            for k in 0..c {
                let q = p[k] - t[k];
                e_b[k] += q / b;
                for j in 0..d {
                    e_w[k * d + j] += q * x[j] / b;
                }
            }
            probs.push(p);
            targets.push(t);
        }
        grad.iter_mut().for_each(|g| *g = 0.0);
        for r in 0..self.rows {
            let x = &dummy[r * w..r * w + d];
            let (p, t) = (&probs[r], &targets[r]);
            // dR/dq_k for this row.
            let dq: Vec<f64> = (0..c)
                .map(|k| 2.0 / b * (e_b[k] + (0..d).map(|j| e_w[k * d + j] * x[j]).sum::<f64>()))
                .collect();
            let dz = softmax_vjp(p, &dq);
            let dl = softmax_vjp(t, &dq);
            let g = &mut grad[r * w..(r + 1) * w];
            for j in 0..d {
                let mut acc = 0.0;
                for k in 0..c {
                    acc += 2.0 / b * e_w[k * d + j] * (p[k] - t[k]) + self.w[k * d + j] * dz[k];
                }
                g[j] = acc;
            }
            for k in 0..c {
                g[d + k] = -dl[k];
            }
        }
        let sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
        sq(&e_w) + sq(&e_b)
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

/// Mean row-wise cosine over a column block.
fn block_cosine(est: &Matrix<f64>, truth: &Matrix<f64>) -> f64 {
    let n = est.rows();
    (0..n)
        .map(|r| cosine(est.row(r), truth.row(r)))
        .sum::<f64>()
        / n as f64
}

/// Reconstruct the private batch from its gradients by Adam on dummy rows
/// drawn from N(0, 1). `truth` is only used to score the estimate.
pub fn dlg_invert(
    victim: &Victim<'_>,
    observed: &GradientBundle,
    truth: &PrivateBatch,
    config: &DlgConfig,
    rng: &mut RngStream,
) -> Result<LeakageReport> {
    if config.batch == 0 || config.batch > MAX_ATTACK_BATCH {
        return Err(Error::invalid("dummy batch must hold 1..=4 rows"));
    }
    if truth.features().rows() != config.batch {
        return Err(Error::invalid(
            "dummy batch size differs from the private batch",
        ));
    }
    let matcher: Box<dyn Matcher> = match (victim, observed) {
        (Victim::Critic { model, feature_dim }, GradientBundle::Critic(g)) => {
            check_critic(model, *feature_dim)?;
            if g.layer1_weights.shape() != model.layer1_weights.shape() {
                return Err(Error::invalid("gradient bundle does not match the critic"));
            }
            Box::new(CriticMatcher::new(model, g, config.batch))
        }
        (Victim::Classifier { model }, GradientBundle::Classifier(g)) => {
            if g.weights.shape() != model.weights.shape() {
                return Err(Error::invalid(
                    "gradient bundle does not match the classifier",
                ));
            }
            let f = |v: &[f32]| v.iter().map(|&x| f64::from(x)).collect::<Vec<_>>();
            Box::new(ClassifierMatcher {
                w: f(model.weights.as_slice()),
                bias: f(&model.bias),
                classes: model.output_dim(),
                features: model.input_dim(),
                rows: config.batch,
                obs_w: f(g.weights.as_slice()),
                obs_b: f(&g.bias),
            })
        }
        _ => {
            return Err(Error::invalid(
                "gradient bundle kind does not match the victim",
            ))
        }
    };
    let width = matcher.width();
    let mut dummy = VecParams {
        values: vec![rng.normals::<f64>(config.batch * width)],
    };
    let mut grad = VecParams {
        values: vec![vec![0.0; config.batch * width]],
    };
    let mut opt = AdamState::new(&dummy, AdamConfig::standard(config.learning_rate))?;
    let mut best = dummy.values[0].clone();
    let mut best_residual = f64::INFINITY;
    let mut residuals = Vec::new();
    for step in 0..=config.steps {
        let r = matcher.residual(&dummy.values[0], &mut grad.values[0]);
        if !r.is_finite() {
            return Err(Error::numeric(
                "gradient inversion",
                format!("residual is {r} at step {step}"),
            ));
        }
        if r < best_residual {
            best_residual = r;
            best.clone_from(&dummy.values[0]);
        }
        if step == 0
            || step == config.steps
            || (config.log_every > 0 && step % config.log_every == 0)
        {
            residuals.push((step, best_residual));
        }
        if step < config.steps {
            opt.step(&mut dummy, &grad)?;
        }
    }

    let est = Matrix::from_vec(config.batch, width, best)?;
    let feature_dim = match victim {
        Victim::Critic { feature_dim, .. } => *feature_dim,
        Victim::Classifier { model } => model.input_dim(),
    };
    let feature_estimate = est.col_range(0, feature_dim);
    let tail = est.col_range(feature_dim, width);
    let truth_features: Matrix<f64> = truth.features().convert();
    let mut cosines = vec![(
        "feature".to_string(),
        block_cosine(&feature_estimate, &truth_features),
    )];
    let condition_estimate = match truth {
        PrivateBatch::Attributes { attributes, .. } => {
            cosines.push((
                "attribute".to_string(),
                block_cosine(&tail, &attributes.convert()),
            ));
            tail
        }
        PrivateBatch::Labels { labels, .. } => {
            let mut probs = Matrix::zeros(tail.rows(), tail.cols());
            let mut onehot = Matrix::zeros(tail.rows(), tail.cols());
            for r in 0..tail.rows() {
                probs.row_mut(r).copy_from_slice(&softmax(tail.row(r)));
                onehot[(r, labels[r])] = 1.0;
            }
            cosines.push(("label".to_string(), block_cosine(&probs, &onehot)));
            probs
        }
    };
    Ok(LeakageReport {
        kind: victim.kind(),
        cosines,
        residuals,
        iterations: config.steps,
        feature_estimate,
        condition_estimate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{mlp_init, HiddenActivation, MlpDims};

    fn critic(d: usize, m: usize, seed: u64) -> MlpParams {
        mlp_init(
            MlpDims::new(d + m, 32, 1),
            HiddenActivation::LeakyRelu(0.2),
            OutputActivation::None,
            &mut RngStream::from_seed(seed, "critic"),
        )
        .unwrap()
    }

    fn private(d: usize, m: usize, seed: u64) -> PrivateBatch {
        let mut rng = RngStream::from_seed(seed, "private");
        PrivateBatch::Attributes {
            features: Matrix::from_vec(1, d, (0..d).map(|_| rng.uniform::<f32>()).collect())
                .unwrap(),
            attributes: Matrix::from_vec(1, m, (0..m).map(|_| rng.uniform::<f32>()).collect())
                .unwrap(),
        }
    }

    /// Residual gradient against central differences.
    fn check_matcher(m: &dyn Matcher, point: &[f64]) {
        let mut g = vec![0.0; point.len()];
        m.residual(point, &mut g);
        let mut scratch = vec![0.0; point.len()];
        for i in 0..point.len() {
            let h = 1e-6;
            let mut p = point.to_vec();
            p[i] += h;
            let up = m.residual(&p, &mut scratch);
            p[i] -= 2.0 * h;
            let down = m.residual(&p, &mut scratch);
            let fd = (up - down) / (2.0 * h);
            assert!(
                (fd - g[i]).abs() <= 1e-5 * (1.0 + fd.abs()),
                "coord {i}: {fd} vs {}",
                g[i]
            );
        }
    }

    #[test]
    fn critic_residual_gradient_matches_differences() {
        let model = critic(4, 3, 1);
        let batch = private(4, 3, 2);
        let GradientBundle::Critic(g) = capture_gradients(
            &Victim::Critic {
                model: &model,
                feature_dim: 4,
            },
            &batch,
        )
        .unwrap() else {
            unreachable!()
        };
        let m = CriticMatcher::new(&model, &g, 1);
        let point = RngStream::from_seed(3, "pt").normals::<f64>(7);
        check_matcher(&m, &point);
    }

    #[test]
    fn classifier_residual_gradient_matches_differences() {
        let mut rng = RngStream::from_seed(4, "cls");
        let model = Linear::init(5, 3, &mut rng).unwrap();
        let batch = PrivateBatch::Labels {
            features: Matrix::from_vec(2, 5, rng.normals(10)).unwrap(),
            labels: vec![2, 0],
        };
        let GradientBundle::Classifier(g) =
            capture_gradients(&Victim::Classifier { model: &model }, &batch).unwrap()
        else {
            unreachable!()
        };
        let f = |v: &[f32]| v.iter().map(|&x| f64::from(x)).collect::<Vec<_>>();
        let m = ClassifierMatcher {
            w: f(model.weights.as_slice()),
            bias: f(&model.bias),
            classes: 3,
            features: 5,
            rows: 2,
            obs_w: f(g.weights.as_slice()),
            obs_b: f(&g.bias),
        };
        check_matcher(&m, &rng.normals::<f64>(16));
    }

    #[test]
    fn zeroed_critic_leaks_nothing() {
        // All pre-activations and output weights zero: only the constant
        // output-bias gradient remains.
        let mut model = critic(3, 2, 5);
        model.layer1_weights = Matrix::zeros(32, 5);
        model.layer2_weights = Matrix::zeros(1, 32);
        let bundle = capture_gradients(
            &Victim::Critic {
                model: &model,
                feature_dim: 3,
            },
            &private(3, 2, 1),
        )
        .unwrap();
        let GradientBundle::Critic(g) = bundle else {
            unreachable!()
        };
        assert!(g.layer1_weights.as_slice().iter().all(|&v| v == 0.0));
        assert!(g.layer1_bias.iter().all(|&v| v == 0.0));
        assert!(g.layer2_weights.as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(g.layer2_bias, vec![-1.0]);
    }

    #[test]
    fn bundle_is_the_backward_pass() {
        let model = critic(3, 2, 5);
        let batch = private(3, 2, 1);
        let PrivateBatch::Attributes {
            features,
            attributes,
        } = &batch
        else {
            unreachable!()
        };
        let direct = mlp_backward(
            &model,
            &features.hcat(attributes).unwrap(),
            &Matrix::from_vec(1, 1, vec![-1.0]).unwrap(),
        )
        .unwrap()
        .0;
        let victim = Victim::Critic {
            model: &model,
            feature_dim: 3,
        };
        assert_eq!(
            capture_gradients(&victim, &batch).unwrap(),
            GradientBundle::Critic(direct)
        );
        assert_eq!(
            capture_gradients(&victim, &batch).unwrap(),
            capture_gradients(&victim, &batch).unwrap()
        );
    }

    #[test]
    fn oversized_batch_is_rejected() {
        let model = critic(3, 2, 5);
        let batch = PrivateBatch::Attributes {
            features: Matrix::zeros(5, 3),
            attributes: Matrix::zeros(5, 2),
        };
        assert!(capture_gradients(
            &Victim::Critic {
                model: &model,
                feature_dim: 3
            },
            &batch
        )
        .is_err());
    }

    #[test]
    fn zero_steps_echo_the_initialisation() {
        let model = critic(4, 3, 1);
        let batch = private(4, 3, 2);
        let victim = Victim::Critic {
            model: &model,
            feature_dim: 4,
        };
        let g = capture_gradients(&victim, &batch).unwrap();
        let cfg = DlgConfig {
            steps: 0,
            ..DlgConfig::default()
        };
        let report = dlg_invert(
            &victim,
            &g,
            &batch,
            &cfg,
            &mut RngStream::from_seed(7, "dlg"),
        )
        .unwrap();
        let init = RngStream::from_seed(7, "dlg").normals::<f64>(7);
        assert_eq!(report.feature_estimate.as_slice(), &init[..4]);
        assert_eq!(report.residuals.len(), 1);
        assert!(report.residuals[0].1 > 0.0);
    }

    #[test]
    fn residual_log_never_increases_and_attribute_is_recovered() {
        let model = critic(16, 8, 11);
        let batch = private(16, 8, 12);
        let victim = Victim::Critic {
            model: &model,
            feature_dim: 16,
        };
        let g = capture_gradients(&victim, &batch).unwrap();
        let report = dlg_invert(
            &victim,
            &g,
            &batch,
            &DlgConfig::default(),
            &mut RngStream::from_seed(13, "dlg"),
        )
        .unwrap();
        assert!(report.residuals.windows(2).all(|w| w[1].1 <= w[0].1));
        assert!(report.final_residual() <= report.residuals[0].1);
        let cos = report.cosine("attribute").unwrap();
        assert!((-1.0..=1.0).contains(&cos));
        assert_eq!(report.kind, TargetKind::FeatureAndAttribute);
    }
}
