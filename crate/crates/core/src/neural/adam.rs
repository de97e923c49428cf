use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{Gradients, Network};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState {
    config: AdamConfig,
    step: u64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl AdamState {
    pub fn new(net: &Network, config: AdamConfig) -> Self {
        let zeros = || {
            net.params()
                .iter()
                .map(|p| Array2::zeros(p.raw_dim()))
                .collect()
        };
        Self {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.config.learning_rate = lr;
    }
}

/// One bias-corrected Adam update. Rejects non-finite gradients without
/// touching the parameters or the moments.
pub fn adam_step(net: &mut Network, state: &mut AdamState, grads: &Gradients) -> Result<()> {
    if !grads.is_finite() {
        return Err(Error::NonFinite("gradients".into()));
    }
    if grads.values().len() != state.m.len() {
        return Err(Error::shape("gradient tensors", state.m.len(), grads.values().len()));
    }
    let AdamConfig {
        learning_rate,
        beta1,
        beta2,
        epsilon,
    } = state.config;
    state.step += 1;
    let c1 = 1.0 - beta1.powi(state.step as i32);
    let c2 = 1.0 - beta2.powi(state.step as i32);
    for (((p, g), m), v) in net
        .params_mut()
        .iter_mut()
        .zip(grads.values())
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        ndarray::Zip::from(p)
            .and(g)
            .and(m)
            .and(v)
            .for_each(|p, &g, m, v| {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{HeadKind, NetworkConfig};

    fn tiny() -> Network {
        let cfg = NetworkConfig::scaled(3, 2, HeadKind::Softmax, 4, 1, 1, 2);
        Network::new(cfg, 0).unwrap()
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut net = tiny();
        let before = net.params().to_vec();
        let mut state = AdamState::new(&net, AdamConfig::default());
        let zero = Gradients::zeros_like(&net);
        adam_step(&mut net, &mut state, &zero).unwrap();
        assert_eq!(net.params(), &before[..]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut net = tiny();
        let before = net.params()[0][[0, 0]];
        let cfg = AdamConfig {
            learning_rate: 0.1,
            ..Default::default()
        };
        let mut state = AdamState::new(&net, cfg);
        let mut g = Gradients::zeros_like(&net);
        g.values_mut()[0][[0, 0]] = 3.0;
        adam_step(&mut net, &mut state, &g).unwrap();
        let moved = before - net.params()[0][[0, 0]];
        assert!((moved - 0.1).abs() < 1e-8, "{moved}");
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut net = tiny();
        let before = net.params().to_vec();
        let mut state = AdamState::new(&net, AdamConfig::default());
        let mut g = Gradients::zeros_like(&net);
        g.values_mut()[1][[0, 0]] = f64::NAN;
        assert!(matches!(adam_step(&mut net, &mut state, &g), Err(Error::NonFinite(_))));
        assert_eq!(net.params(), &before[..]);
        assert_eq!(state.steps(), 0);
    }
}
