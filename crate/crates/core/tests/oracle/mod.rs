//! A separate scalar forward pass for the training objectives, written from
//! the definitions, and central-difference checks against it.

#![allow(dead_code)]

use fzsl_core::numerics::{
    critic_objective, generator_objective, GanArch, GanModel, Linear, Matrix, MlpGrads, MlpParams,
    ParamSet,
};
use fzsl_core::RngStream;

pub const H: f64 = 1e-4;
pub const TOL: f64 = 1e-4;
const SLOPE: f64 = 0.2f32 as f64;

pub fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        SLOPE * x
    }
}

pub fn leaky_slope(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        SLOPE
    }
}

/// Hidden pre-activations and output of a two-layer net on one row.
pub fn net(p: &MlpParams<f64>, x: &[f64], relu_out: bool) -> (Vec<f64>, Vec<f64>) {
    let (w1, w2) = (&p.layer1_weights, &p.layer2_weights);
    let pre: Vec<f64> = (0..w1.rows())
        .map(|k| p.layer1_bias[k] + (0..w1.cols()).map(|j| w1[(k, j)] * x[j]).sum::<f64>())
        .collect();
    let out = (0..w2.rows())
        .map(|o| {
            let z = p.layer2_bias[o]
                + (0..w2.cols())
                    .map(|k| w2[(o, k)] * leaky(pre[k]))
                    .sum::<f64>();
            if relu_out {
                z.max(0.0)
            } else {
                z
            }
        })
        .collect();
    (pre, out)
}

pub fn row_cat(a: &Matrix<f64>, b: &Matrix<f64>, r: usize) -> Vec<f64> {
    a.row(r).iter().chain(b.row(r)).copied().collect()
}

pub struct CriticCase {
    pub real: Matrix<f64>,
    pub fake: Matrix<f64>,
    pub a_g: Matrix<f64>,
    pub mix: Vec<f64>,
    pub lambda: f64,
}

pub fn critic_loss(d: &MlpParams<f64>, c: &CriticCase) -> f64 {
    let batch = c.real.rows();
    let feat = c.real.cols();
    let mut total = 0.0;
    for r in 0..batch {
        let (_, fake) = net(d, &row_cat(&c.fake, &c.a_g, r), false);
        let (_, real) = net(d, &row_cat(&c.real, &c.a_g, r), false);
        let hat: Vec<f64> = (0..feat)
            .map(|j| c.mix[r] * c.real[(r, j)] + (1.0 - c.mix[r]) * c.fake[(r, j)])
            .chain(c.a_g.row(r).iter().copied())
            .collect();
        let (pre, _) = net(d, &hat, false);
        let grad_sq: f64 = (0..feat)
            .map(|j| {
                let g: f64 = (0..pre.len())
                    .map(|k| {
                        d.layer2_weights[(0, k)] * leaky_slope(pre[k]) * d.layer1_weights[(k, j)]
                    })
                    .sum();
                g * g
            })
            .sum();
        let gap = grad_sq.sqrt() - 1.0;
        total += fake[0] - real[0] + c.lambda * gap * gap;
    }
    total / batch as f64
}

pub struct GeneratorCase {
    pub critic: MlpParams<f64>,
    pub cls: Linear<f64>,
    pub noise: Matrix<f64>,
    pub cond: Matrix<f64>,
    pub a_g: Matrix<f64>,
    pub labels: Vec<usize>,
    pub beta: f64,
}

pub fn generator_loss(g: &MlpParams<f64>, c: &GeneratorCase) -> f64 {
    let batch = c.noise.rows();
    let mut total = 0.0;
    for r in 0..batch {
        let (_, x) = net(g, &row_cat(&c.noise, &c.cond, r), true);
        let d_in: Vec<f64> = x.iter().chain(c.a_g.row(r)).copied().collect();
        let (_, score) = net(&c.critic, &d_in, false);
        let logits: Vec<f64> = (0..c.cls.weights.rows())
            .map(|o| {
                c.cls.bias[o]
                    + (0..x.len())
                        .map(|j| c.cls.weights[(o, j)] * x[j])
                        .sum::<f64>()
            })
            .collect();
        let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = top + logits.iter().map(|l| (l - top).exp()).sum::<f64>().ln();
        total += -score[0] + c.beta * (lse - logits[c.labels[r]]);
    }
    total / batch as f64
}

/// Largest relative disagreement between `analytic` and central differences
/// of `loss` over every parameter of `params`.
pub fn worst_error(
    params: &MlpParams<f64>,
    analytic: &MlpGrads<f64>,
    loss: impl Fn(&MlpParams<f64>) -> f64,
) -> (f64, String) {
    let mut worst = (0.0, String::new());
    let names = params.tensor_names();
    for (t, grad) in analytic.tensors().into_iter().enumerate() {
        for (i, &a) in grad.iter().enumerate() {
            let mut plus = params.clone();
            plus.tensors_mut()[t][i] += H;
            let mut minus = params.clone();
            minus.tensors_mut()[t][i] -= H;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * H);
            let scale = a.abs().max(numeric.abs()).max(1e-6);
            let rel = (a - numeric).abs() / scale;
            if rel > worst.0 {
                worst = (
                    rel,
                    format!("{}[{i}]: analytic {a}, numeric {numeric}", names[t]),
                );
            }
        }
    }
    worst
}

pub fn arch() -> GanArch {
    GanArch {
        feature_dim: 12,
        attr_dim: 6,
        condition_dim: 10,
        noise_dim: 6,
        hidden_dim: 16,
    }
}

pub fn matrix(rows: usize, cols: usize, rng: &mut RngStream) -> Matrix<f64> {
    Matrix::from_vec(rows, cols, rng.normals(rows * cols)).unwrap()
}

/// Worst relative error of the critic objective's gradient on a random
/// problem of the given seed.
pub fn check_critic(seed: u64) -> (f64, String) {
    let mut rng = RngStream::from_seed(seed, "critic-fd");
    let model = GanModel::<f64>::init(arch(), &mut rng).unwrap();
    let batch = 6;
    let case = CriticCase {
        real: matrix(batch, 12, &mut rng),
        fake: matrix(batch, 12, &mut rng),
        a_g: matrix(batch, 6, &mut rng),
        mix: (0..batch).map(|_| rng.uniform()).collect(),
        lambda: 10.0,
    };
    let d = &model.discriminator;
    let (parts, grads) =
        critic_objective(d, &case.real, &case.fake, &case.a_g, &case.mix, case.lambda).unwrap();
    let value = critic_loss(d, &case);
    if (parts.total - value).abs() > 1e-10 {
        return (
            f64::INFINITY,
            format!("loss {} vs oracle {value}", parts.total),
        );
    }
    worst_error(d, &grads, |p| critic_loss(p, &case))
}

/// Same for the generator objective, adversarial plus classification term.
pub fn check_generator(seed: u64) -> (f64, String) {
    let mut rng = RngStream::from_seed(seed, "generator-fd");
    let model = GanModel::<f64>::init(arch(), &mut rng).unwrap();
    let batch = 6;
    let classes = 5;
    let case = GeneratorCase {
        critic: model.discriminator.clone(),
        cls: Linear::init(12, classes, &mut rng).unwrap(),
        noise: matrix(batch, 6, &mut rng),
        cond: matrix(batch, 10, &mut rng),
        a_g: matrix(batch, 6, &mut rng),
        labels: (0..batch).map(|_| rng.below(classes)).collect(),
        beta: 0.7,
    };
    let (parts, grads) = generator_objective(
        &model,
        &case.cls,
        &case.noise,
        &case.cond,
        &case.a_g,
        &case.labels,
        case.beta,
    )
    .unwrap();
    let value = generator_loss(&model.generator, &case);
    if (parts.total - value).abs() > 1e-10 {
        return (
            f64::INFINITY,
            format!("loss {} vs oracle {value}", parts.total),
        );
    }
    worst_error(&model.generator, &grads, |p| generator_loss(p, &case))
}
