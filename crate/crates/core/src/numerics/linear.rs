use crate::error::{Error, Result};
use crate::rng::RngStream;

use super::matrix::dot;
use super::{cast, Matrix, ParamSet, Scalar};

/// Affine map `x ↦ W x + b`; the softmax classifiers are built on this.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T = f32> {
    /// out × in
    pub weights: Matrix<T>,
    pub bias: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearGrads<T = f32> {
    pub weights: Matrix<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn zeros(input: usize, output: usize) -> Self {
        Linear {
            weights: Matrix::zeros(output, input),
            bias: vec![T::zero(); output],
        }
    }

    /// Weights ~ N(0, 1/fan_in), zero bias.
    pub fn init(input: usize, output: usize, rng: &mut RngStream) -> Result<Self> {
        if input == 0 || output == 0 {
            return Err(Error::invalid("linear layer dimensions must be positive"));
        }
        let scale: T = cast(1.0 / (input as f64).sqrt());
        let data = (0..input * output)
            .map(|_| rng.normal::<T>() * scale)
            .collect();
        Ok(Linear {
            weights: Matrix::from_vec(output, input, data)?,
            bias: vec![T::zero(); output],
        })
    }

    pub fn input_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn forward(&self, input: &Matrix<T>) -> Result<Matrix<T>> {
        if input.cols() != self.input_dim() {
            return Err(Error::invalid(format!(
                "linear input width {} != {}",
                input.cols(),
                self.input_dim()
            )));
        }
        let mut out = Matrix::zeros(input.rows(), self.output_dim());
        for r in 0..input.rows() {
            let x = input.row(r);
            for o in 0..self.output_dim() {
                out[(r, o)] = self.bias[o] + dot(self.weights.row(o), x);
            }
        }
        Ok(out)
    }

    /// Gradients for upstream `output_gradient`; returns `(param grads, input grad)`.
    pub fn backward(
        &self,
        input: &Matrix<T>,
        output_gradient: &Matrix<T>,
    ) -> Result<(LinearGrads<T>, Matrix<T>)> {
        if input.cols() != self.input_dim()
            || output_gradient.shape() != (input.rows(), self.output_dim())
        {
            return Err(Error::invalid("linear backward shape mismatch"));
        }
        let mut grads = LinearGrads {
            weights: Matrix::zeros(self.output_dim(), self.input_dim()),
            bias: vec![T::zero(); self.output_dim()],
        };
        let mut input_grad = Matrix::zeros(input.rows(), self.input_dim());
        for r in 0..input.rows() {
            let x = input.row(r);
            for o in 0..self.output_dim() {
                let g = output_gradient[(r, o)];
                for (w, &xj) in grads.weights.row_mut(o).iter_mut().zip(x) {
                    *w = *w + g * xj;
                }
                grads.bias[o] = grads.bias[o] + g;
            }
            for j in 0..self.input_dim() {
                let mut acc = T::zero();
                for o in 0..self.output_dim() {
                    acc = acc + output_gradient[(r, o)] * self.weights[(o, j)];
                }
                input_grad[(r, j)] = acc;
            }
        }
        Ok((grads, input_grad))
    }

    pub fn convert<U: Scalar>(&self) -> Linear<U> {
        Linear {
            weights: self.weights.convert(),
            bias: self
                .bias
                .iter()
                .map(|&b| U::from(b).expect("float"))
                .collect(),
        }
    }
}

macro_rules! impl_linear_params {
    ($ty:ident) => {
        impl<T: Scalar> ParamSet<T> for $ty<T> {
            fn tensors(&self) -> Vec<&[T]> {
                vec![self.weights.as_slice(), &self.bias]
            }

            fn tensors_mut(&mut self) -> Vec<&mut [T]> {
                vec![self.weights.as_mut_slice(), &mut self.bias]
            }

            fn tensor_names(&self) -> Vec<&'static str> {
                vec!["linear.weights", "linear.bias"]
            }
        }
    };
}

impl_linear_params!(Linear);
impl_linear_params!(LinearGrads);
