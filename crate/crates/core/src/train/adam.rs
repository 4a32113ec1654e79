use std::collections::BTreeMap;

use super::{TrainConfig, TrainError};
use crate::models::ModelParams;

/// First and second moment buffers, kept in `f64`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub first: BTreeMap<String, Vec<f64>>,
    pub second: BTreeMap<String, Vec<f64>>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// One bias-corrected Adam update of every parameter that has a gradient.
pub fn adam_step(
    params: &mut ModelParams<f32>,
    grads: &BTreeMap<String, Vec<f32>>,
    state: &mut AdamState,
    cfg: &TrainConfig,
) -> Result<(), TrainError> {
    for (name, g) in grads {
        let p = params
            .get(name)
            .ok_or_else(|| TrainError::Config(format!("gradient for unknown parameter {name}")))?;
        if p.len() != g.len() {
            return Err(TrainError::Config(format!(
                "gradient for {name} has {} entries, parameter has {}",
                g.len(),
                p.len()
            )));
        }
        for buf in [&state.first, &state.second] {
            if let Some(m) = buf.get(name) {
                if m.len() != g.len() {
                    return Err(TrainError::Config(format!(
                        "moment buffer for {name} has {} entries, parameter has {}",
                        m.len(),
                        g.len()
                    )));
                }
            }
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let correction1 = 1.0 - b1.powi(t);
    let correction2 = 1.0 - b2.powi(t);
    for (name, g) in grads {
        let m = state
            .first
            .entry(name.clone())
            .or_insert_with(|| vec![0.0; g.len()]);
        let v = state
            .second
            .entry(name.clone())
            .or_insert_with(|| vec![0.0; g.len()]);
        let p = params.get_mut(name).expect("checked above").data_mut();
        for i in 0..g.len() {
            let gi = g[i] as f64;
            m[i] = b1 * m[i] + (1.0 - b1) * gi;
            v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
            let m_hat = m[i] / correction1;
            let v_hat = v[i] / correction2;
            let update = cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_epsilon);
            p[i] = (p[i] as f64 - update) as f32;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    fn one_param(v: &[f32]) -> ModelParams<f32> {
        ModelParams::from_map(BTreeMap::from([(
            "w".to_string(),
            Tensor::new(vec![v.len()], v.to_vec()).unwrap(),
        )]))
    }

    fn grads(g: &[f32]) -> BTreeMap<String, Vec<f32>> {
        BTreeMap::from([("w".to_string(), g.to_vec())])
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let cfg = TrainConfig {
            learning_rate: 1e-3,
            ..Default::default()
        };
        let mut p = one_param(&[1.0, 1.0, 1.0]);
        let mut st = AdamState::new();
        adam_step(&mut p, &grads(&[0.5, -2.0, 0.0]), &mut st, &cfg).unwrap();
        let d = p.get("w").unwrap().data();
        // m̂ = g, v̂ = g², so the step is lr·g/(|g| + ε)
        assert!((d[0] - (1.0 - 1e-3)).abs() < 1e-7);
        assert!((d[1] - (1.0 + 1e-3)).abs() < 1e-7);
        assert_eq!(d[2], 1.0);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let cfg = TrainConfig::default();
        let mut p = one_param(&[0.25, -3.0]);
        let before = p.clone();
        let mut st = AdamState::new();
        for _ in 0..3 {
            adam_step(&mut p, &grads(&[0.0, 0.0]), &mut st, &cfg).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn two_steps_match_scalar_recurrence() {
        let cfg = TrainConfig {
            learning_rate: 0.1,
            ..Default::default()
        };
        let g = 0.3f64;
        let mut p = one_param(&[2.0]);
        let mut st = AdamState::new();
        adam_step(&mut p, &grads(&[g as f32]), &mut st, &cfg).unwrap();
        adam_step(&mut p, &grads(&[g as f32]), &mut st, &cfg).unwrap();

        let g = g as f32 as f64;
        let (b1, b2, eps, lr) = (0.9f64, 0.999f64, 1e-8f64, 0.1f64);
        let mut x = 2.0f32;
        let (mut m, mut v) = (0.0, 0.0);
        for t in 1..=2 {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            x = (x as f64 - lr * mh / (vh.sqrt() + eps)) as f32;
        }
        assert_eq!(p.get("w").unwrap().data()[0], x);
    }

    #[test]
    fn shape_mismatch() {
        let cfg = TrainConfig::default();
        let mut p = one_param(&[1.0, 2.0]);
        let mut st = AdamState::new();
        assert!(adam_step(&mut p, &grads(&[1.0]), &mut st, &cfg).is_err());
        st.first.insert("w".into(), vec![0.0; 5]);
        assert!(adam_step(&mut p, &grads(&[1.0, 1.0]), &mut st, &cfg).is_err());
    }
}
