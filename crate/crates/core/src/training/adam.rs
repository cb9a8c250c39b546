use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Mask, ModelParams, ParamGroup};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam over a fixed list of parameter slices.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn moments(&self) -> (&[Vec<f64>], &[Vec<f64>]) {
        (&self.first, &self.second)
    }

    /// One update. `active[i]`, when given, restricts which entries of slice
    /// `i` may change; inactive entries keep both value and moments.
    pub fn step_slices(
        &mut self,
        params: &mut [&mut [f64]],
        grads: &[&[f64]],
        active: &[Option<&[bool]>],
    ) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Dimension {
                context: "adam slices".into(),
                expected: params.len(),
                actual: grads.len(),
            });
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.second = self.first.clone();
        }
        if self.first.len() != params.len() {
            return Err(Error::Dimension {
                context: "adam state".into(),
                expected: self.first.len(),
                actual: params.len(),
            });
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if p.len() != g.len() || p.len() != self.first[i].len() {
                return Err(Error::Dimension {
                    context: format!("adam slice {i}"),
                    expected: self.first[i].len(),
                    actual: g.len(),
                });
            }
            let act = active.get(i).copied().flatten();
            let m = &mut self.first[i];
            let v = &mut self.second[i];
            for j in 0..p.len() {
                if act.is_some_and(|a| !a[j]) {
                    continue;
                }
                let gj = g[j];
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Updates the tensors of `params` in the `trainable` groups. When
    /// `encoder_active` is given, encoder weights outside it never move.
    pub fn step_params(
        &mut self,
        params: &mut ModelParams,
        grads: &ModelParams,
        trainable: &[ParamGroup],
        encoder_active: Option<&Mask>,
    ) -> Result<()> {
        let offsets: Vec<usize> = params
            .theta
            .blocks()
            .iter()
            .map(|b| b.offset)
            .collect();
        let grad_tensors = grads.tensors();
        let mut p_slices: Vec<&mut [f64]> = Vec::new();
        let mut g_slices: Vec<&[f64]> = Vec::new();
        let mut active: Vec<Option<&[bool]>> = Vec::new();
        let mut enc_block = 0;
        for (pt, gt) in params.tensors_mut().into_iter().zip(grad_tensors.iter()) {
            let is_encoder = pt.group == ParamGroup::Encoder;
            if trainable.contains(&pt.group) {
                let act = if is_encoder {
                    encoder_active.map(|m| {
                        let off = offsets[enc_block];
                        &m.bits()[off..off + pt.data.len()]
                    })
                } else {
                    None
                };
                p_slices.push(pt.data);
                g_slices.push(gt.data);
                active.push(act);
            }
            if is_encoder {
                enc_block += 1;
            }
        }
        self.step_slices(&mut p_slices, &g_slices, &active)
    }
}

/// Single Adam update on flat slices.
pub fn adam_step(state: &mut Adam, grads: &[f64], params: &mut [f64]) -> Result<()> {
    state.step_slices(&mut [params], &[grads], &[None])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut adam = Adam::new(AdamConfig::with_lr(0.1));
        let mut w = vec![1.0, -2.0];
        adam_step(&mut adam, &[0.0, 0.0], &mut w).unwrap();
        assert_eq!(w, vec![1.0, -2.0]);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut adam = Adam::new(AdamConfig::with_lr(0.01));
        let mut w = vec![0.5, 0.5, 0.5];
        adam_step(&mut adam, &[3.0, -0.2, 1e-3], &mut w).unwrap();
        assert!((w[0] - (0.5 - 0.01)).abs() < 1e-9);
        assert!((w[1] - (0.5 + 0.01)).abs() < 1e-9);
        assert!((w[2] - (0.5 - 0.01)).abs() < 1e-7);
    }

    /// Independent scalar reference written directly from the update rule.
    fn scalar_adam(w0: f64, lr: f64, steps: usize) -> Vec<f64> {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let (mut m, mut v, mut w) = (0.0, 0.0, w0);
        let mut out = Vec::new();
        for t in 1..=steps {
            let g = 2.0 * w;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t as i32));
            let vh = v / (1.0 - b2.powi(t as i32));
            w -= lr * mh / (vh.sqrt() + eps);
            out.push(w);
        }
        out
    }

    #[test]
    fn matches_scalar_reference_on_quadratic() {
        let expected = scalar_adam(1.0, 0.1, 5);
        let mut adam = Adam::new(AdamConfig::with_lr(0.1));
        let mut w = vec![1.0];
        for e in expected {
            let g = 2.0 * w[0];
            adam_step(&mut adam, &[g], &mut w).unwrap();
            assert!((w[0] - e).abs() < 1e-12);
        }
    }

    #[test]
    fn inactive_entries_are_frozen() {
        let mut adam = Adam::new(AdamConfig::with_lr(0.1));
        let mut w = vec![1.0, 1.0];
        let active = [true, false];
        for _ in 0..3 {
            let mut slices: Vec<&mut [f64]> = vec![&mut w];
            adam.step_slices(&mut slices, &[&[1.0, 1.0]], &[Some(&active)])
                .unwrap();
        }
        assert!(w[0] < 1.0);
        assert_eq!(w[1], 1.0);
    }
}
