//! Deterministic dense numerics: matrices, two-layer MLPs with hand-written
//! reverse mode, Adam, softmax cross-entropy and the WGAN-GP losses.
//!
//! Everything is generic over [`Scalar`]. Training runs in `f32`; the same
//! code instantiated at `f64` is what the finite-difference checks exercise.
//! All reductions sum left to right in index order.

mod adam;
mod gan;
mod linear;
mod loss;
mod matrix;
mod mlp;

pub use adam::{AdamConfig, AdamState};
pub use gan::{
    critic_objective, generator_objective, gradient_penalty, gradient_penalty_with_mix,
    CriticParts, GanArch, GanModel, GeneratorParts,
};
pub use linear::{Linear, LinearGrads};
pub use loss::{softmax_cross_entropy, wasserstein_losses};
pub use matrix::Matrix;
pub use mlp::{
    mlp_backward, mlp_forward, mlp_init, HiddenActivation, MlpDims, MlpGrads, MlpParams,
    OutputActivation,
};

use std::fmt::Debug;

/// Floating-point element type.
pub trait Scalar:
    num_traits::Float + num_traits::FromPrimitive + Default + Debug + Send + Sync + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[inline]
pub(crate) fn cast<T: Scalar>(v: f64) -> T {
    T::from(v).expect("f64 converts into every scalar type")
}

/// A bundle of named parameter tensors that an optimiser can walk.
pub trait ParamSet<T: Scalar> {
    fn tensors(&self) -> Vec<&[T]>;
    fn tensors_mut(&mut self) -> Vec<&mut [T]>;
    fn tensor_names(&self) -> Vec<&'static str>;

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// Plain list of vectors, used for free-standing optimisation variables.
#[derive(Debug, Clone, PartialEq)]
pub struct VecParams<T> {
    pub values: Vec<Vec<T>>,
}

impl<T: Scalar> ParamSet<T> for VecParams<T> {
    fn tensors(&self) -> Vec<&[T]> {
        self.values.iter().map(|v| v.as_slice()).collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        self.values.iter_mut().map(|v| v.as_mut_slice()).collect()
    }

    fn tensor_names(&self) -> Vec<&'static str> {
        vec!["variable"; self.values.len()]
    }
}

pub(crate) fn check_finite<T: Scalar>(values: &[T], what: &str) -> crate::Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(crate::Error::invalid(format!(
            "{what} contains a non-finite value"
        )))
    }
}
