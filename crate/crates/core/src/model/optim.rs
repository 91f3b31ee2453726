use crate::error::{Result, SumError};
use crate::tensor::ParamStore;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moments per stored parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.ids().map(|id| vec![0.0; store.get(id).numel()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

/// Bias-corrected Adam. `grads` is aligned with the store; a `None` entry
/// leaves that parameter and its moments untouched.
pub fn adam_step(store: &mut ParamStore, grads: &[Option<Vec<f64>>], state: &mut AdamState, lr: f64) -> Result<()> {
    if grads.len() != store.len() || state.m.len() != store.len() {
        return Err(SumError::shape(format!(
            "adam: {} gradients / {} moments for {} parameters",
            grads.len(),
            state.m.len(),
            store.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    let ids: Vec<_> = store.ids().collect();
    for (k, id) in ids.into_iter().enumerate() {
        let Some(g) = &grads[k] else { continue };
        let p = store.get_mut(id).data_mut();
        if g.len() != p.len() {
            return Err(SumError::shape(format!(
                "adam: gradient of {} values for a parameter of {}",
                g.len(),
                p.len()
            )));
        }
        let (m, v) = (&mut state.m[k], &mut state.v[k]);
        for i in 0..p.len() {
            m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
            v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
            let mh = m[i] / c1;
            let vh = v[i] / c2;
            p[i] -= lr * mh / (vh.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

/// Step decay: `lr0 * factor^floor((epoch - 1) / every)` for 1-based epochs.
pub fn lr_at_epoch(lr0: f64, factor: f64, every: usize, epoch: usize) -> f64 {
    lr0 * factor.powi((epoch.saturating_sub(1) / every.max(1)) as i32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn one(v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("x", Tensor::new(&[1], vec![v]).unwrap()).unwrap();
        s
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient() {
        for g in [3.0, -0.02, 1e3] {
            let mut s = one(1.0);
            let mut st = AdamState::new(&s);
            adam_step(&mut s, &[Some(vec![g])], &mut st, 0.01).unwrap();
            let moved = s.get(s.find("x").unwrap()).data()[0] - 1.0;
            assert!((moved + 0.01 * g.signum()).abs() < 1e-6, "{moved}");
        }
    }

    #[test]
    fn zero_gradient_keeps_parameters() {
        let mut s = one(0.7);
        let mut st = AdamState::new(&s);
        adam_step(&mut s, &[Some(vec![0.0])], &mut st, 0.1).unwrap();
        assert_eq!(s.get(s.find("x").unwrap()).data()[0], 0.7);
    }

    #[test]
    fn quadratic_decreases() {
        // f(x) = (x - 3)^2
        let mut s = one(0.0);
        let mut st = AdamState::new(&s);
        let id = s.find("x").unwrap();
        let f = |x: f64| (x - 3.0) * (x - 3.0);
        let f0 = f(0.0);
        for _ in 0..2 {
            let x = s.get(id).data()[0];
            adam_step(&mut s, &[Some(vec![2.0 * (x - 3.0)])], &mut st, 0.1).unwrap();
        }
        assert!(f(s.get(id).data()[0]) < f0);
    }

    #[test]
    fn step_decay_schedule() {
        let lrs: Vec<f64> = (1..=9).map(|e| lr_at_epoch(1e-4, 0.1, 4, e)).collect();
        for e in 0..4 {
            assert!((lrs[e] - 1e-4).abs() < 1e-18);
        }
        for e in 4..8 {
            assert!((lrs[e] - 1e-5).abs() < 1e-18);
        }
        assert!((lrs[8] - 1e-6).abs() < 1e-18);
    }
}
