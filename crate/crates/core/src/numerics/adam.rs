use crate::error::{Error, Result};

use super::{cast, ParamSet, Scalar};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    /// GAN-friendly defaults: β = (0.5, 0.999), ε = 1e-8.
    pub fn gan(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            beta1: 0.5,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn standard(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.beta1 > 0.0
            && self.beta1 < 1.0
            && self.beta2 > 0.0
            && self.beta2 < 1.0
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "invalid Adam hyperparameters {self:?}"
            )))
        }
    }
}

/// Adam moments for one parameter bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T = f32> {
    pub step_count: u64,
    pub first_moment: Vec<Vec<T>>,
    pub second_moment: Vec<Vec<T>>,
    pub config: AdamConfig,
}

impl<T: Scalar> AdamState<T> {
    pub fn new<P: ParamSet<T>>(params: &P, config: AdamConfig) -> Result<Self> {
        config.validate()?;
        let zeros: Vec<Vec<T>> = params
            .tensors()
            .iter()
            .map(|t| vec![T::zero(); t.len()])
            .collect();
        Ok(AdamState {
            step_count: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
            config,
        })
    }

    /// One bias-corrected Adam update. On error nothing is modified.
    pub fn step<P, G>(&mut self, params: &mut P, grads: &G) -> Result<()>
    where
        P: ParamSet<T>,
        G: ParamSet<T>,
    {
        let grad_tensors = grads.tensors();
        let names = params.tensor_names();
        {
            let shapes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
            let gshapes: Vec<usize> = grad_tensors.iter().map(|t| t.len()).collect();
            let mshapes: Vec<usize> = self.first_moment.iter().map(Vec::len).collect();
            if shapes != gshapes || shapes != mshapes {
                return Err(Error::invalid(format!(
                    "Adam shape mismatch: params {shapes:?}, grads {gshapes:?}, moments {mshapes:?}"
                )));
            }
        }
        for (i, g) in grad_tensors.iter().enumerate() {
            if let Some(pos) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::numeric(
                    format!("adam step, tensor {}", names.get(i).copied().unwrap_or("?")),
                    format!("non-finite gradient at index {pos}"),
                ));
            }
        }

        self.step_count += 1;
        let c = self.config;
        let t = self.step_count as i32;
        let beta1: T = cast(c.beta1);
        let beta2: T = cast(c.beta2);
        let one = T::one();
        let correction1: T = cast(1.0 - c.beta1.powi(t));
        let correction2: T = cast(1.0 - c.beta2.powi(t));
        let lr: T = cast(c.learning_rate);
        let eps: T = cast(c.epsilon);
        for (((p, g), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(&grad_tensors)
            .zip(self.first_moment.iter_mut())
            .zip(self.second_moment.iter_mut())
        {
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = beta1 * m[i] + (one - beta1) * gi;
                v[i] = beta2 * v[i] + (one - beta2) * gi * gi;
                let m_hat = m[i] / correction1;
                let v_hat = v[i] / correction2;
                p[i] = p[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
