use super::{AdamConfig, TrainError};
use crate::models::ParameterStore;

/// First and second moments per parameter tensor, in store order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    names: Vec<String>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    pub fn new(params: &ParameterStore) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Self { names: params.names(), m: zeros.clone(), v: zeros, t: 0 }
    }

    pub fn timestep(&self) -> u64 {
        self.t
    }

    pub fn second_moments(&self) -> impl Iterator<Item = &[f64]> {
        self.v.iter().map(Vec::as_slice)
    }
}

/// Bias-corrected Adam: `theta -= lr * m_hat / (sqrt(v_hat) + eps)`.
pub fn adam_step(
    params: &mut ParameterStore,
    grads: &ParameterStore,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<(), TrainError> {
    if params.names() != state.names || grads.names() != state.names {
        return Err(TrainError::Shape("parameter, gradient and optimizer names differ".into()));
    }
    for ((_, p), (_, g)) in params.iter().zip(grads.iter()) {
        if p.shape() != g.shape() {
            return Err(TrainError::Shape(format!(
                "gradient shape {:?} does not match parameter {:?}",
                g.shape(),
                p.shape()
            )));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (i, ((_, p), (_, g))) in params.iter_mut().zip(grads.iter()).enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, (theta, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            *theta -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}
