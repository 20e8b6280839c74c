use crate::error::{Error, Result};
use crate::rng::RngStream;

use super::matrix::dot;
use super::{cast, check_finite, Matrix, ParamSet, Scalar};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HiddenActivation {
    LeakyRelu(f32),
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputActivation {
    None,
    Relu,
    Sigmoid,
}

impl HiddenActivation {
    #[inline]
    fn apply<T: Scalar>(self, x: T) -> T {
        if x > T::zero() {
            return x;
        }
        match self {
            HiddenActivation::LeakyRelu(slope) => x * cast(f64::from(slope)),
            HiddenActivation::Relu => T::zero(),
        }
    }

    /// Derivative at the pre-activation `x`; piecewise constant.
    #[inline]
    pub(crate) fn slope_at<T: Scalar>(self, x: T) -> T {
        if x > T::zero() {
            return T::one();
        }
        match self {
            HiddenActivation::LeakyRelu(slope) => cast(f64::from(slope)),
            HiddenActivation::Relu => T::zero(),
        }
    }
}

impl OutputActivation {
    #[inline]
    fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            OutputActivation::None => x,
            OutputActivation::Relu => x.max(T::zero()),
            OutputActivation::Sigmoid => T::one() / (T::one() + (-x).exp()),
        }
    }

    #[inline]
    fn derivative<T: Scalar>(self, pre: T, out: T) -> T {
        match self {
            OutputActivation::None => T::one(),
            OutputActivation::Relu => {
                if pre > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            OutputActivation::Sigmoid => out * (T::one() - out),
        }
    }
}

/// Widths of a two-layer perceptron.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MlpDims {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
}

impl MlpDims {
    pub fn new(input: usize, hidden: usize, output: usize) -> Self {
        MlpDims {
            input,
            hidden,
            output,
        }
    }
}

/// `out = act2(W2 · act1(W1 · x + b1) + b2)`, applied row-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams<T = f32> {
    /// hidden × in
    pub layer1_weights: Matrix<T>,
    pub layer1_bias: Vec<T>,
    /// out × hidden
    pub layer2_weights: Matrix<T>,
    pub layer2_bias: Vec<T>,
    pub hidden_activation: HiddenActivation,
    pub output_activation: OutputActivation,
}

/// Gradients shaped like [`MlpParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads<T = f32> {
    pub layer1_weights: Matrix<T>,
    pub layer1_bias: Vec<T>,
    pub layer2_weights: Matrix<T>,
    pub layer2_bias: Vec<T>,
}

const TENSOR_NAMES: [&str; 4] = [
    "layer1.weights",
    "layer1.bias",
    "layer2.weights",
    "layer2.bias",
];

/// Initialise with weights ~ N(0, 1/fan_in) and zero biases.
pub fn mlp_init<T: Scalar>(
    dims: MlpDims,
    hidden_activation: HiddenActivation,
    output_activation: OutputActivation,
    rng: &mut RngStream,
) -> Result<MlpParams<T>> {
    if dims.input == 0 || dims.hidden == 0 || dims.output == 0 {
        return Err(Error::invalid(format!(
            "mlp dimensions must be positive, got {dims:?}"
        )));
    }
    let mut layer = |rows: usize, fan_in: usize| {
        let scale: T = cast(1.0 / (fan_in as f64).sqrt());
        let data = (0..rows * fan_in)
            .map(|_| rng.normal::<T>() * scale)
            .collect();
        Matrix::from_vec(rows, fan_in, data).expect("sized above")
    };
    let layer1_weights = layer(dims.hidden, dims.input);
    let layer2_weights = layer(dims.output, dims.hidden);
    Ok(MlpParams {
        layer1_weights,
        layer1_bias: vec![T::zero(); dims.hidden],
        layer2_weights,
        layer2_bias: vec![T::zero(); dims.output],
        hidden_activation,
        output_activation,
    })
}

pub fn mlp_forward<T: Scalar>(params: &MlpParams<T>, input: &Matrix<T>) -> Result<Matrix<T>> {
    params.check_input(input)?;
    check_finite(input.as_slice(), "mlp input")?;
    Ok(params.trace(input).out)
}

/// Exact reverse-mode gradients of [`mlp_forward`] for the given upstream
/// gradient. Returns `(parameter gradients, input gradient)`.
pub fn mlp_backward<T: Scalar>(
    params: &MlpParams<T>,
    input: &Matrix<T>,
    output_gradient: &Matrix<T>,
) -> Result<(MlpGrads<T>, Matrix<T>)> {
    params.check_input(input)?;
    if output_gradient.shape() != (input.rows(), params.dims().output) {
        return Err(Error::invalid(format!(
            "output gradient shape {:?} does not match batch {} x {}",
            output_gradient.shape(),
            input.rows(),
            params.dims().output
        )));
    }
    let trace = params.trace(input);
    Ok(params.backward_from_trace(input, &trace, output_gradient))
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub(crate) struct MlpTrace<T> {
    pub pre_hidden: Matrix<T>,
    pub hidden: Matrix<T>,
    pub pre_out: Matrix<T>,
    pub out: Matrix<T>,
}

impl<T: Scalar> MlpParams<T> {
    pub fn dims(&self) -> MlpDims {
        MlpDims {
            input: self.layer1_weights.cols(),
            hidden: self.layer1_weights.rows(),
            output: self.layer2_weights.rows(),
        }
    }

    pub fn forward(&self, input: &Matrix<T>) -> Result<Matrix<T>> {
        mlp_forward(self, input)
    }

    pub(crate) fn check_input(&self, input: &Matrix<T>) -> Result<()> {
        let want = self.dims().input;
        if input.cols() != want {
            return Err(Error::invalid(format!(
                "input width {} does not match layer1 input width {want}",
                input.cols()
            )));
        }
        Ok(())
    }

    pub(crate) fn trace(&self, input: &Matrix<T>) -> MlpTrace<T> {
        let dims = self.dims();
        let batch = input.rows();
        let mut pre_hidden = Matrix::zeros(batch, dims.hidden);
        let mut hidden = Matrix::zeros(batch, dims.hidden);
        let mut pre_out = Matrix::zeros(batch, dims.output);
        let mut out = Matrix::zeros(batch, dims.output);
        for r in 0..batch {
            let x = input.row(r);
            for k in 0..dims.hidden {
                let z = self.layer1_bias[k] + dot(self.layer1_weights.row(k), x);
                pre_hidden[(r, k)] = z;
                hidden[(r, k)] = self.hidden_activation.apply(z);
            }
            let h = hidden.row(r);
            for o in 0..dims.output {
                let z = self.layer2_bias[o] + dot(self.layer2_weights.row(o), h);
                pre_out[(r, o)] = z;
                out[(r, o)] = self.output_activation.apply(z);
            }
        }
        MlpTrace {
            pre_hidden,
            hidden,
            pre_out,
            out,
        }
    }

    pub(crate) fn backward_from_trace(
        &self,
        input: &Matrix<T>,
        trace: &MlpTrace<T>,
        output_gradient: &Matrix<T>,
    ) -> (MlpGrads<T>, Matrix<T>) {
        let dims = self.dims();
        let batch = input.rows();
        let mut grads = MlpGrads::zeros_like(self);
        let mut input_grad = Matrix::zeros(batch, dims.input);
        let mut d_hidden = vec![T::zero(); dims.hidden];
        let mut d_out = vec![T::zero(); dims.output];
        for r in 0..batch {
            for o in 0..dims.output {
                d_out[o] = output_gradient[(r, o)]
                    * self
                        .output_activation
                        .derivative(trace.pre_out[(r, o)], trace.out[(r, o)]);
            }
            let h = trace.hidden.row(r);
            for (o, &g) in d_out.iter().enumerate() {
                let w_row = grads.layer2_weights.row_mut(o);
                for (w, &hk) in w_row.iter_mut().zip(h) {
                    *w = *w + g * hk;
                }
                grads.layer2_bias[o] = grads.layer2_bias[o] + g;
            }
            for (k, dh) in d_hidden.iter_mut().enumerate() {
                let mut acc = T::zero();
                for (o, &g) in d_out.iter().enumerate() {
                    acc = acc + g * self.layer2_weights[(o, k)];
                }
                *dh = acc * self.hidden_activation.slope_at(trace.pre_hidden[(r, k)]);
            }
            let x = input.row(r);
            for (k, &g) in d_hidden.iter().enumerate() {
                let w_row = grads.layer1_weights.row_mut(k);
                for (w, &xj) in w_row.iter_mut().zip(x) {
                    *w = *w + g * xj;
                }
                grads.layer1_bias[k] = grads.layer1_bias[k] + g;
            }
            let gx = input_grad.row_mut(r);
            for (j, gxj) in gx.iter_mut().enumerate() {
                let mut acc = T::zero();
                for (k, &g) in d_hidden.iter().enumerate() {
                    acc = acc + g * self.layer1_weights[(k, j)];
                }
                *gxj = acc;
            }
        }
        (grads, input_grad)
    }

    pub fn convert<U: Scalar>(&self) -> MlpParams<U> {
        let v = |x: &[T]| x.iter().map(|&a| U::from(a).expect("float")).collect();
        MlpParams {
            layer1_weights: self.layer1_weights.convert(),
            layer1_bias: v(&self.layer1_bias),
            layer2_weights: self.layer2_weights.convert(),
            layer2_bias: v(&self.layer2_bias),
            hidden_activation: self.hidden_activation,
            output_activation: self.output_activation,
        }
    }

    pub fn same_shape(&self, other: &MlpParams<T>) -> bool {
        self.dims() == other.dims()
    }
}

impl<T: Scalar> MlpGrads<T> {
    pub fn zeros_like(params: &MlpParams<T>) -> Self {
        let d = params.dims();
        MlpGrads {
            layer1_weights: Matrix::zeros(d.hidden, d.input),
            layer1_bias: vec![T::zero(); d.hidden],
            layer2_weights: Matrix::zeros(d.output, d.hidden),
            layer2_bias: vec![T::zero(); d.output],
        }
    }

    /// `self += scale * other`, element-wise.
    pub fn add_scaled(&mut self, other: &MlpGrads<T>, scale: T) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = *d + scale * s;
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|v| *v == T::zero()))
    }
}

impl<T: Scalar> ParamSet<T> for MlpParams<T> {
    fn tensors(&self) -> Vec<&[T]> {
        vec![
            self.layer1_weights.as_slice(),
            &self.layer1_bias,
            self.layer2_weights.as_slice(),
            &self.layer2_bias,
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        vec![
            self.layer1_weights.as_mut_slice(),
            &mut self.layer1_bias,
            self.layer2_weights.as_mut_slice(),
            &mut self.layer2_bias,
        ]
    }

    fn tensor_names(&self) -> Vec<&'static str> {
        TENSOR_NAMES.to_vec()
    }
}

impl<T: Scalar> ParamSet<T> for MlpGrads<T> {
    fn tensors(&self) -> Vec<&[T]> {
        vec![
            self.layer1_weights.as_slice(),
            &self.layer1_bias,
            self.layer2_weights.as_slice(),
            &self.layer2_bias,
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        vec![
            self.layer1_weights.as_mut_slice(),
            &mut self.layer1_bias,
            self.layer2_weights.as_mut_slice(),
            &mut self.layer2_bias,
        ]
    }

    fn tensor_names(&self) -> Vec<&'static str> {
        TENSOR_NAMES.to_vec()
    }
}
