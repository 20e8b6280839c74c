//! Conditional WGAN-GP pieces: the generator/discriminator pair and the two
//! training objectives with their analytic gradients.

use crate::error::{Error, Result};
use crate::rng::RngStream;

use super::{
    cast, mlp_init, softmax_cross_entropy, HiddenActivation, Linear, Matrix, MlpDims, MlpGrads,
    MlpParams, OutputActivation, ParamSet, Scalar,
};

/// Shapes of a generator/discriminator pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GanArch {
    pub feature_dim: usize,
    /// Width of the ground-truth attribute vector, the discriminator condition.
    pub attr_dim: usize,
    /// Width of the generator condition (`attr_dim`, or `embed_dim + attr_dim` with augmentation).
    pub condition_dim: usize,
    pub noise_dim: usize,
    pub hidden_dim: usize,
}

impl GanArch {
    pub fn generator_dims(&self) -> MlpDims {
        MlpDims::new(
            self.noise_dim + self.condition_dim,
            self.hidden_dim,
            self.feature_dim,
        )
    }

    pub fn discriminator_dims(&self) -> MlpDims {
        MlpDims::new(self.feature_dim + self.attr_dim, self.hidden_dim, 1)
    }

    pub fn generator_param_count(&self) -> usize {
        let d = self.generator_dims();
        d.hidden * (d.input + 1) + d.output * (d.hidden + 1)
    }

    pub fn discriminator_param_count(&self) -> usize {
        let d = self.discriminator_dims();
        d.hidden * (d.input + 1) + d.output * (d.hidden + 1)
    }
}

pub(crate) const HIDDEN: HiddenActivation = HiddenActivation::LeakyRelu(0.2);

#[derive(Debug, Clone, PartialEq)]
pub struct GanModel<T = f32> {
    pub generator: MlpParams<T>,
    pub discriminator: MlpParams<T>,
    pub arch: GanArch,
}

impl<T: Scalar> GanModel<T> {
    /// LeakyReLU(0.2) hidden layers, ReLU generator output (features are
    /// non-negative), linear critic output.
    pub fn init(arch: GanArch, rng: &mut RngStream) -> Result<Self> {
        let generator = mlp_init(arch.generator_dims(), HIDDEN, OutputActivation::Relu, rng)?;
        let discriminator = mlp_init(
            arch.discriminator_dims(),
            HIDDEN,
            OutputActivation::None,
            rng,
        )?;
        Ok(GanModel {
            generator,
            discriminator,
            arch,
        })
    }

    /// Rebuild from explicit parameters, checking them against `arch`.
    pub fn from_parts(
        arch: GanArch,
        generator: MlpParams<T>,
        discriminator: MlpParams<T>,
    ) -> Result<Self> {
        if generator.dims() != arch.generator_dims()
            || discriminator.dims() != arch.discriminator_dims()
        {
            return Err(Error::invalid("parameters do not match the architecture"));
        }
        Ok(GanModel {
            generator,
            discriminator,
            arch,
        })
    }

    pub fn num_params(&self) -> usize {
        self.generator.num_params() + self.discriminator.num_params()
    }

    /// `G([noise | condition])`.
    pub fn generate(&self, noise: &Matrix<T>, condition: &Matrix<T>) -> Result<Matrix<T>> {
        self.generator.forward(&noise.hcat(condition)?)
    }

    pub fn convert<U: Scalar>(&self) -> GanModel<U> {
        GanModel {
            generator: self.generator.convert(),
            discriminator: self.discriminator.convert(),
            arch: self.arch,
        }
    }
}

fn check_critic(d: &MlpParams<impl Scalar>, feature_dim: usize, attr_dim: usize) -> Result<()> {
    let dims = d.dims();
    if dims.output != 1 || d.output_activation != OutputActivation::None {
        return Err(Error::invalid(
            "critic must have a single linear output unit",
        ));
    }
    if dims.input != feature_dim + attr_dim {
        return Err(Error::invalid(format!(
            "critic input width {} != features {feature_dim} + condition {attr_dim}",
            dims.input
        )));
    }
    Ok(())
}

/// Gradient penalty with a fresh interpolation coefficient per row drawn
/// uniformly from `[0, 1)`.
pub fn gradient_penalty<T: Scalar>(
    d: &MlpParams<T>,
    x_real: &Matrix<T>,
    x_fake: &Matrix<T>,
    a_g: &Matrix<T>,
    rng: &mut RngStream,
) -> Result<(T, MlpGrads<T>)> {
    let mix: Vec<T> = (0..x_real.rows()).map(|_| rng.uniform()).collect();
    gradient_penalty_with_mix(d, x_real, x_fake, a_g, &mix)
}

/// `mean_r (‖∇_x D(x̂_r, a_r)‖ - 1)²` with `x̂_r = mix_r·real_r + (1 - mix_r)·fake_r`,
/// and its gradient with respect to the critic parameters.
///
/// For a two-layer critic with a piecewise-linear hidden activation,
/// `∇_x D = W1_xᵀ (φ'(pre) ⊙ w2)`; `φ'` is locally constant, so the penalty
/// depends on the parameters only through `W1_x` and `w2`.
pub fn gradient_penalty_with_mix<T: Scalar>(
    d: &MlpParams<T>,
    x_real: &Matrix<T>,
    x_fake: &Matrix<T>,
    a_g: &Matrix<T>,
    mix: &[T],
) -> Result<(T, MlpGrads<T>)> {
    let (batch, feat) = x_real.shape();
    if x_fake.shape() != (batch, feat) || a_g.rows() != batch || mix.len() != batch {
        return Err(Error::invalid(format!(
            "gradient penalty shapes: real {:?}, fake {:?}, condition {:?}, mix {}",
            x_real.shape(),
            x_fake.shape(),
            a_g.shape(),
            mix.len()
        )));
    }
    if batch == 0 {
        return Err(Error::invalid("gradient penalty on an empty batch"));
    }
    check_critic(d, feat, a_g.cols())?;

    let mut x_hat = Matrix::zeros(batch, feat);
    for r in 0..batch {
        let e = mix[r];
        for j in 0..feat {
            x_hat[(r, j)] = e * x_real[(r, j)] + (T::one() - e) * x_fake[(r, j)];
        }
    }
    let input = x_hat.hcat(a_g)?;
    let trace = d.trace(&input);

    let hidden = d.dims().hidden;
    let inv_batch: T = cast(1.0 / batch as f64);
    let two: T = cast(2.0);
    let mut grads = MlpGrads::zeros_like(d);
    let mut penalty = T::zero();
    let mut slope = vec![T::zero(); hidden];
    let mut s = vec![T::zero(); hidden];
    let mut g = vec![T::zero(); feat];
    let mut v = vec![T::zero(); feat];
    for r in 0..batch {
        for k in 0..hidden {
            slope[k] = d.hidden_activation.slope_at(trace.pre_hidden[(r, k)]);
            s[k] = slope[k] * d.layer2_weights[(0, k)];
        }
        for (j, gj) in g.iter_mut().enumerate() {
            let mut acc = T::zero();
            for (k, &sk) in s.iter().enumerate() {
                acc = acc + d.layer1_weights[(k, j)] * sk;
            }
            *gj = acc;
        }
        let norm = g.iter().fold(T::zero(), |a, &b| a + b * b).sqrt();
        let gap = norm - T::one();
        penalty = penalty + gap * gap;
        // d/dg (‖g‖-1)² = 2 (‖g‖-1) g/‖g‖; use the zero subgradient at g = 0.
        let coef = if norm > T::zero() {
            two * gap / norm * inv_batch
        } else {
            T::zero()
        };
        for (vj, &gj) in v.iter_mut().zip(&g) {
            *vj = coef * gj;
        }
        for k in 0..hidden {
            let row = grads.layer1_weights.row_mut(k);
            let mut back = T::zero();
            for j in 0..feat {
                row[j] = row[j] + s[k] * v[j];
                back = back + d.layer1_weights[(k, j)] * v[j];
            }
            grads.layer2_weights[(0, k)] = grads.layer2_weights[(0, k)] + back * slope[k];
        }
    }
    Ok((penalty * inv_batch, grads))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticParts<T = f32> {
    /// `mean D(fake) - mean D(real)`.
    pub wasserstein: T,
    pub penalty: T,
    pub total: T,
}

/// Critic loss `mean D(fake) - mean D(real) + λ·GP` with `x_fake` held fixed,
/// and its gradient with respect to the critic parameters.
pub fn critic_objective<T: Scalar>(
    d: &MlpParams<T>,
    x_real: &Matrix<T>,
    x_fake: &Matrix<T>,
    a_g: &Matrix<T>,
    mix: &[T],
    gp_lambda: T,
) -> Result<(CriticParts<T>, MlpGrads<T>)> {
    let batch = x_real.rows();
    check_critic(d, x_real.cols(), a_g.cols())?;
    let real_in = x_real.hcat(a_g)?;
    let fake_in = x_fake.hcat(a_g)?;
    let real_trace = d.trace(&real_in);
    let fake_trace = d.trace(&fake_in);
    let (wasserstein, _) =
        super::wasserstein_losses(real_trace.out.as_slice(), fake_trace.out.as_slice())?;

    let inv_batch: T = cast(1.0 / batch as f64);
    let up_fake = Matrix::from_vec(batch, 1, vec![inv_batch; batch])?;
    let up_real = Matrix::from_vec(batch, 1, vec![-inv_batch; batch])?;
    let (mut grads, _) = d.backward_from_trace(&fake_in, &fake_trace, &up_fake);
    let (real_grads, _) = d.backward_from_trace(&real_in, &real_trace, &up_real);
    grads.add_scaled(&real_grads, T::one());

    let (penalty, gp_grads) = gradient_penalty_with_mix(d, x_real, x_fake, a_g, mix)?;
    grads.add_scaled(&gp_grads, gp_lambda);
    Ok((
        CriticParts {
            wasserstein,
            penalty,
            total: wasserstein + gp_lambda * penalty,
        },
        grads,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorParts<T = f32> {
    /// `-mean D(G(z, c), a_g)`.
    pub adversarial: T,
    /// Cross-entropy of the frozen classifier on the generated features.
    pub classification: T,
    pub total: T,
}

/// Generator loss `-mean D(G(z, c), a_g) + β·CE(cls(G(z, c)), y)` and its
/// gradient with respect to the generator parameters. The critic and the
/// classifier are treated as constants.
#[allow(clippy::too_many_arguments)]
pub fn generator_objective<T: Scalar>(
    model: &GanModel<T>,
    classifier: &Linear<T>,
    noise: &Matrix<T>,
    condition: &Matrix<T>,
    a_g: &Matrix<T>,
    labels: &[usize],
    beta: T,
) -> Result<(GeneratorParts<T>, MlpGrads<T>)> {
    let batch = noise.rows();
    if condition.rows() != batch || a_g.rows() != batch || labels.len() != batch {
        return Err(Error::invalid("generator objective batch mismatch"));
    }
    let g = &model.generator;
    let d = &model.discriminator;
    let g_in = noise.hcat(condition)?;
    g.check_input(&g_in)?;
    let g_trace = g.trace(&g_in);
    let fake = &g_trace.out;
    check_critic(d, fake.cols(), a_g.cols())?;

    let d_in = fake.hcat(a_g)?;
    let d_trace = d.trace(&d_in);
    let (_, adversarial) =
        super::wasserstein_losses(d_trace.out.as_slice(), d_trace.out.as_slice())?;
    let inv_batch: T = cast(1.0 / batch as f64);
    let up = Matrix::from_vec(batch, 1, vec![-inv_batch; batch])?;
    let (_, d_input_grad) = d.backward_from_trace(&d_in, &d_trace, &up);
    let mut fake_grad = d_input_grad.col_range(0, fake.cols());

    let logits = classifier.forward(fake)?;
    let (classification, logit_grad) = softmax_cross_entropy(&logits, labels)?;
    let (_, cls_input_grad) = classifier.backward(fake, &logit_grad)?;
    for (dst, &src) in fake_grad
        .as_mut_slice()
        .iter_mut()
        .zip(cls_input_grad.as_slice())
    {
        *dst = *dst + beta * src;
    }
    let (grads, _) = g.backward_from_trace(&g_in, &g_trace, &fake_grad);
    Ok((
        GeneratorParts {
            adversarial,
            classification,
            total: adversarial + beta * classification,
        },
        grads,
    ))
}
