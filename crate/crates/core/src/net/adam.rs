use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::params::{ParamGrads, ParamSet};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self { learning_rate, ..Self::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-4, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// First and second moment estimates for every parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T> {
    pub config: AdamConfig,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    step: u64,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(params: &ParamSet<T>, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<T>> = params.sizes().into_iter().map(|n| vec![T::zero(); n]).collect();
        Self { config, m: zeros.clone(), v: zeros, step: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update. Non-finite gradients abort the step
/// before anything is modified.
pub fn adam_step<T: Scalar>(
    params: &mut ParamSet<T>,
    grads: &ParamGrads<T>,
    state: &mut OptimizerState<T>,
) -> Result<()> {
    let sizes = params.sizes();
    let gsizes: Vec<usize> = grads.blocks().iter().map(|g| g.len()).collect();
    if sizes != gsizes {
        return Err(Error::shape(&sizes, &gsizes));
    }
    let msizes: Vec<usize> = state.m.iter().map(|m| m.len()).collect();
    if sizes != msizes {
        return Err(Error::shape(&sizes, &msizes));
    }
    if let Some((bi, _)) = grads.blocks().iter().enumerate().find(|(_, g)| g.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite(format!("gradient of block {}", params.blocks()[bi].name)));
    }
    state.step += 1;
    let cfg = state.config;
    let t = state.step as i32;
    let b1 = T::of(cfg.beta1);
    let b2 = T::of(cfg.beta2);
    let one_b1 = T::of(1.0 - cfg.beta1);
    let one_b2 = T::of(1.0 - cfg.beta2);
    let corr1 = T::of(1.0 / (1.0 - cfg.beta1.powi(t)));
    let corr2 = T::of(1.0 / (1.0 - cfg.beta2.powi(t)));
    let lr = T::of(cfg.learning_rate);
    let eps = T::of(cfg.epsilon);
    for (bi, block) in params.blocks_mut().iter_mut().enumerate() {
        let g = &grads.blocks()[bi];
        let m = &mut state.m[bi];
        let v = &mut state.v[bi];
        for i in 0..block.data.len() {
            m[i] = b1 * m[i] + one_b1 * g[i];
            v[i] = b2 * v[i] + one_b2 * g[i] * g[i];
            let mhat = m[i] * corr1;
            let vhat = v[i] * corr2;
            block.data[i] = block.data[i] - lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(values: Vec<f64>) -> ParamSet<f64> {
        let mut p = ParamSet::new();
        let n = values.len();
        p.push("w", &[n], values);
        p
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut p = set(vec![1.0, -2.0, 3.5]);
        let before = p.clone();
        let mut st = OptimizerState::new(&p, AdamConfig::default());
        adam_step(&mut p, &ParamGrads(vec![vec![0.0; 3]]), &mut st).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn first_step_is_normalized_gradient() {
        let g = vec![0.5, -3.0, 1e-3, 0.0];
        let mut p = set(vec![0.0; 4]);
        let cfg = AdamConfig::with_learning_rate(1e-2);
        let mut st = OptimizerState::new(&p, cfg);
        adam_step(&mut p, &ParamGrads(vec![g.clone()]), &mut st).unwrap();
        for (w, gi) in p.blocks()[0].data.iter().zip(&g) {
            let want = -cfg.learning_rate * gi / (gi.abs() + cfg.epsilon);
            assert!((w - want).abs() < 1e-9, "{w} vs {want}");
        }
    }

    #[test]
    fn non_finite_gradient_aborts_without_mutation() {
        let mut p = set(vec![1.0, 2.0]);
        let before = p.clone();
        let mut st = OptimizerState::new(&p, AdamConfig::default());
        let err = adam_step(&mut p, &ParamGrads(vec![vec![0.1, f64::NAN]]), &mut st);
        assert!(matches!(err, Err(Error::NonFinite(_))));
        assert_eq!(p, before);
        assert_eq!(st.step_count(), 0);
    }

    #[test]
    fn repeated_runs_are_bit_identical() {
        let run = || {
            let mut p = set(vec![0.3, -0.1]);
            let mut st = OptimizerState::new(&p, AdamConfig::default());
            for k in 0..50 {
                let g = ParamGrads(vec![vec![(k as f64).sin(), (k as f64 * 0.7).cos()]]);
                adam_step(&mut p, &g, &mut st).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = set(vec![1.0, 2.0]);
        let mut st = OptimizerState::new(&p, AdamConfig::default());
        assert!(adam_step(&mut p, &ParamGrads(vec![vec![0.1]]), &mut st).is_err());
    }
}
