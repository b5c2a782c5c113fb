//! Adam for the embedding and toy-network optimizers, plus the history-gradient
//! update used for latent steps.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Textbook Adam with bias correction `1 - beta^k`.
#[derive(Debug, Clone)]
pub struct Adam {
    pub params: AdamParams,
    pub lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    k: u32,
}

impl Adam {
    pub fn new(dim: usize, lr: f64, params: AdamParams) -> Self {
        Adam {
            params,
            lr,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            k: 0,
        }
    }

    pub fn reset(&mut self) {
        self.m.iter_mut().for_each(|x| *x = 0.0);
        self.v.iter_mut().for_each(|x| *x = 0.0);
        self.k = 0;
    }

    pub fn steps_taken(&self) -> u32 {
        self.k
    }

    /// The displacement `-lr * m_hat / (sqrt(v_hat) + eps)` for gradient `g`,
    /// committing the moment update.
    pub fn delta(&mut self, g: &[f64]) -> Vec<f64> {
        let AdamParams { beta1, beta2, eps } = self.params;
        self.k += 1;
        let c1 = 1.0 - beta1.powi(self.k as i32);
        let c2 = 1.0 - beta2.powi(self.k as i32);
        g.iter()
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
            .map(|(gi, (m, v))| {
                *m = beta1 * *m + (1.0 - beta1) * gi;
                *v = beta2 * *v + (1.0 - beta2) * gi * gi;
                -self.lr * (*m / c1) / ((*v / c2).sqrt() + eps)
            })
            .collect()
    }

    pub fn step(&mut self, x: &mut [f64], g: &[f64]) {
        for (xi, d) in x.iter_mut().zip(self.delta(g)) {
            *xi += d;
        }
    }

    /// Moment state, for snapshot and restore around a rejected step.
    pub fn state(&self) -> (Vec<f64>, Vec<f64>, u32) {
        (self.m.clone(), self.v.clone(), self.k)
    }

    pub fn restore(&mut self, state: (Vec<f64>, Vec<f64>, u32)) {
        (self.m, self.v, self.k) = state;
    }
}

/// History-gradient step: the new moments are normalized by the constant
/// factors `1 - beta1` and `1 - beta2` (not the step-dependent Adam factors),
/// and the running moments store the plain exponential averages.
#[derive(Debug, Clone)]
pub struct HistoryGradient {
    pub params: AdamParams,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl HistoryGradient {
    pub fn new(dim: usize, params: AdamParams) -> Self {
        HistoryGradient {
            params,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
        }
    }

    /// Returns `m_hat / (sqrt(v_hat) + eps)`; the caller scales by its step size.
    pub fn direction(&mut self, g: &[f64]) -> Vec<f64> {
        let AdamParams { beta1, beta2, eps } = self.params;
        g.iter()
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
            .map(|(gi, (m, v))| {
                *m = beta1 * *m + (1.0 - beta1) * gi;
                *v = beta2 * *v + (1.0 - beta2) * gi * gi;
                let m_hat = *m / (1.0 - beta1);
                let v_hat = *v / (1.0 - beta2);
                m_hat / (v_hat.sqrt() + eps)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_history_step_is_sign_like() {
        let g = [0.3, -2.0, 1e-3, 0.0];
        let mut h = HistoryGradient::new(4, AdamParams::default());
        let d = h.direction(&g);
        for (di, gi) in d.iter().zip(&g) {
            assert!((di - gi / (gi.abs() + 1e-8)).abs() <= 1e-12);
        }
    }

    #[test]
    fn first_adam_step_has_magnitude_lr() {
        let mut a = Adam::new(3, 0.01, AdamParams::default());
        let d = a.delta(&[5.0, -0.2, 3e-4]);
        for (di, s) in d.iter().zip([-1.0, 1.0, -1.0]) {
            assert!((di - s * 0.01).abs() < 1e-6);
        }
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut x = vec![3.0, -2.0];
        let mut a = Adam::new(2, 0.05, AdamParams::default());
        for _ in 0..2000 {
            let g: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
            a.step(&mut x, &g);
        }
        assert!(x.iter().all(|v| v.abs() < 1e-2));
    }

    #[test]
    fn restore_rewinds_state() {
        let mut a = Adam::new(2, 0.1, AdamParams::default());
        a.delta(&[1.0, 2.0]);
        let snap = a.state();
        let first = a.delta(&[0.5, 0.5]);
        a.restore(snap);
        assert_eq!(a.delta(&[0.5, 0.5]), first);
    }
}
