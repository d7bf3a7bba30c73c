//! Adam, binary cross-entropy and the L2-regularised training objective.

use serde::{Deserialize, Serialize};

use crate::autodiff::bce_mean;
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for a fixed, ordered list of parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    /// Number of completed steps.
    pub t: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new<'a>(config: AdamConfig, shapes: impl IntoIterator<Item = &'a Shape>) -> Self {
        let zeros: Vec<Tensor> = shapes
            .into_iter()
            .map(|s| Tensor::zeros(s.dims().to_vec()).expect("valid shape"))
            .collect();
        AdamState {
            config,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Starts a new step; call [`AdamState::update`] for every parameter
    /// afterwards.
    pub fn begin_step(&mut self) {
        self.t += 1;
    }

    /// Bias-corrected update of parameter `index` in place. The arithmetic
    /// runs in `f64`; moments and parameters are stored as `f32`.
    pub fn update(&mut self, index: usize, param: &mut Tensor, grad: &Tensor) -> Result<()> {
        assert!(self.t > 0, "begin_step must precede update");
        let (m, v) = (&mut self.m[index], &mut self.v[index]);
        if param.shape() != grad.shape() || param.shape() != m.shape() {
            return Err(Error::ShapeMismatch(format!(
                "adam parameter {index}: param {}, grad {}, state {}",
                param.shape(),
                grad.shape(),
                m.shape()
            )));
        }
        let c = self.config;
        let t = self.t as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let step = c.lr / bc1;
        for (((p, &g), mi), vi) in param
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            let g = g as f64;
            let m_new = c.beta1 * *mi as f64 + (1.0 - c.beta1) * g;
            let v_new = c.beta2 * *vi as f64 + (1.0 - c.beta2) * g * g;
            *mi = m_new as f32;
            *vi = v_new as f32;
            *p = (*p as f64 - step * m_new / ((v_new / bc2).sqrt() + c.eps)) as f32;
        }
        Ok(())
    }
}

/// One Adam step over aligned parameter and gradient lists.
pub fn adam_step(params: &mut [Tensor], grads: &[Tensor], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::ShapeMismatch(format!(
            "adam: {} params, {} grads, {} state slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.begin_step();
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        state.update(i, p, g)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub l2_scale: f64,
    pub clip_eps: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            l2_scale: 0.001,
            clip_eps: 1e-7,
        }
    }
}

/// Mean binary cross-entropy with predictions clipped to `[eps, 1 - eps]`.
pub fn bce_loss(pred: &Tensor, target: &Tensor, eps: f64) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::ShapeMismatch(format!(
            "bce prediction {} vs target {}",
            pred.shape(),
            target.shape()
        )));
    }
    if !pred.all_finite() || !target.all_finite() {
        return Err(Error::NonFinite("bce input".into()));
    }
    if target.data().iter().any(|&y| !(0.0..=1.0).contains(&y)) {
        return Err(Error::ShapeMismatch("bce targets must lie in [0, 1]".into()));
    }
    Ok(bce_mean(pred, target, eps))
}

pub fn total_loss(data_loss: f64, penalties: &[f64]) -> f64 {
    data_loss + penalties.iter().sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnops::l2_penalty;

    #[test]
    fn bce_examples() {
        let y = Tensor::from_vec([4], vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let perfect = bce_loss(&y, &y, 1e-7).unwrap();
        assert!(perfect <= -(1.0f64 - 1e-7).ln() + 1e-12, "{perfect}");

        let half = Tensor::full([4], 0.5).unwrap();
        assert!((bce_loss(&half, &y, 1e-7).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);

        let short = Tensor::zeros([3]).unwrap();
        assert!(bce_loss(&short, &y, 1e-7).is_err());
        let nan = Tensor::from_vec([4], vec![f32::NAN, 0.0, 0.0, 0.0]).unwrap();
        assert!(matches!(bce_loss(&nan, &y, 1e-7), Err(Error::NonFinite(_))));
    }

    #[test]
    fn total_loss_examples() {
        assert_eq!(total_loss(0.5, &[]), 0.5);
        assert!((total_loss(0.5, &[0.1, 0.2]) - 0.8).abs() < 1e-12);

        let w = Tensor::from_vec([2, 2], vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        let mut hand = 0.0;
        for v in [1.0f64, -2.0, 0.5, 3.0] {
            hand += v * v;
        }
        assert!((l2_penalty(&w, 0.001) - 0.001 * hand).abs() < 1e-15);
        assert!((total_loss(0.5, &[l2_penalty(&w, 0.001)]) - (0.5 + 0.01425)).abs() < 1e-12);
    }

    #[test]
    fn first_step_moves_by_lr() {
        for g in [1.0f32, -3.0, 0.25] {
            let mut params = vec![Tensor::full([3], 0.7).unwrap()];
            let grads = vec![Tensor::full([3], g).unwrap()];
            let mut state = AdamState::new(AdamConfig::default(), [params[0].shape()]);
            adam_step(&mut params, &grads, &mut state).unwrap();
            for &p in params[0].data() {
                let delta = p as f64 - 0.7f32 as f64;
                assert!((delta + 0.001 * (g as f64).signum()).abs() < 1e-6, "{delta}");
            }
            assert_eq!(state.t, 1);
        }
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let init = Tensor::from_vec([3], vec![0.1, -0.2, 0.3]).unwrap();
        let mut params = vec![init.clone()];
        let grads = vec![Tensor::zeros([3]).unwrap()];
        let mut state = AdamState::new(AdamConfig::default(), [init.shape()]);
        for _ in 0..100 {
            adam_step(&mut params, &grads, &mut state).unwrap();
        }
        assert_eq!(params[0], init);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut params = vec![Tensor::zeros([3]).unwrap()];
        let grads = vec![Tensor::zeros([2]).unwrap()];
        let mut state = AdamState::new(AdamConfig::default(), [params[0].shape()]);
        assert!(adam_step(&mut params, &grads, &mut state).is_err());
        assert!(adam_step(&mut params, &[], &mut state).is_err());
    }

    #[test]
    fn minimises_square() {
        // Scalar reference in f64.
        let cfg = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        let (mut x, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        let mut reference = Vec::new();
        for t in 1..=50 {
            let g = 2.0 * x;
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
            let mh = m / (1.0 - cfg.beta1.powi(t));
            let vh = v / (1.0 - cfg.beta2.powi(t));
            x -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
            reference.push(x);
        }

        let mut params = vec![Tensor::full([1], 1.0).unwrap()];
        let mut state = AdamState::new(cfg, [params[0].shape()]);
        for (step, want) in reference.iter().enumerate() {
            let g = Tensor::full([1], 2.0 * params[0].data()[0]).unwrap();
            adam_step(&mut params, &[g], &mut state).unwrap();
            let got = params[0].data()[0] as f64;
            assert!((got - want).abs() < 1e-5, "step {step}: {got} vs {want}");
        }
        assert!(params[0].data()[0].abs() < 0.5);
        // Trend over the first steps is monotone towards zero.
        assert!(reference[..10].windows(2).all(|w| w[1] < w[0]));
    }
}
