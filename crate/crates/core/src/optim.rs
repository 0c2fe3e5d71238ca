//! Adam with bias correction.

use alloc::format;
use alloc::vec::Vec;

use crate::error::CoreError;
use crate::fmath;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            ..AdamConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), CoreError> {
        if !(self.learning_rate > 0.0) {
            return Err(CoreError::invalid("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(CoreError::invalid("betas must be in [0, 1)"));
        }
        if !(self.epsilon > 0.0) {
            return Err(CoreError::invalid("epsilon must be positive"));
        }
        Ok(())
    }
}

/// First/second moment estimates for one fixed list of parameter tensors.
/// The parameter order given to [`OptimizerState::new`] must be kept for
/// every subsequent [`OptimizerState::step`].
#[derive(Debug, Clone)]
pub struct OptimizerState {
    config: AdamConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
    beta1_pow: f64,
    beta2_pow: f64,
}

impl OptimizerState {
    pub fn new(params: &[&Tensor], config: AdamConfig) -> Result<Self, CoreError> {
        config.validate()?;
        let m = params
            .iter()
            .map(|p| Tensor::zeros(p.shape().to_vec()))
            .collect::<Result<Vec<_>, _>>()?;
        let v = m.clone();
        Ok(OptimizerState {
            config,
            m,
            v,
            step: 0,
            beta1_pow: 1.0,
            beta2_pow: 1.0,
        })
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update. `grads[i]` may be `None` when parameter `i`
    /// received no gradient this step (treated as zero: moments still decay).
    pub fn step(
        &mut self,
        params: &mut [&mut Tensor],
        grads: &[Option<&Tensor>],
    ) -> Result<(), CoreError> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(CoreError::invalid(format!(
                "optimizer holds {} parameters, got {} params / {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, p) in params.iter().enumerate() {
            if p.shape() != self.m[i].shape() {
                return Err(CoreError::shape(format!(
                    "parameter {i}: {:?} vs optimizer state {:?}",
                    p.shape(),
                    self.m[i].shape()
                )));
            }
            if let Some(g) = grads[i] {
                if g.shape() != p.shape() {
                    return Err(CoreError::shape(format!(
                        "gradient {i}: {:?} vs parameter {:?}",
                        g.shape(),
                        p.shape()
                    )));
                }
            }
        }
        self.step += 1;
        self.beta1_pow *= self.config.beta1;
        self.beta2_pow *= self.config.beta2;
        let c = &self.config;
        let m_corr = 1.0 - self.beta1_pow;
        let v_corr = 1.0 - self.beta2_pow;
        for i in 0..params.len() {
            let md = self.m[i].data_mut();
            let vd = self.v[i].data_mut();
            let pd = params[i].data_mut();
            match grads[i] {
                Some(gt) => {
                    for ((m, v), (p, &g)) in md
                        .iter_mut()
                        .zip(vd.iter_mut())
                        .zip(pd.iter_mut().zip(gt.data()))
                    {
                        *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                        *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                        let m_hat = *m / m_corr;
                        let v_hat = *v / v_corr;
                        *p -= c.learning_rate * m_hat / (fmath::sqrt(v_hat) + c.epsilon);
                    }
                }
                None => {
                    for ((m, v), p) in md.iter_mut().zip(vd.iter_mut()).zip(pd.iter_mut()) {
                        *m *= c.beta1;
                        *v *= c.beta2;
                        let m_hat = *m / m_corr;
                        let v_hat = *v / v_corr;
                        *p -= c.learning_rate * m_hat / (fmath::sqrt(v_hat) + c.epsilon);
                    }
                }
            }
        }
        Ok(())
    }
}
