use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Variance-preserving noise schedule with `t = 1..=T` (index 0 is the clean
/// signal, `alpha_bar(0) = 1`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleSpec {
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        ScheduleSpec {
            steps: 1000,
            beta_min: 1e-4,
            beta_max: 2e-2,
        }
    }
}

pub fn make_vp_schedule(steps: usize, beta_min: f64, beta_max: f64) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::Parameter("schedule needs at least one step".into()));
    }
    if !(0.0 < beta_min && beta_min <= beta_max && beta_max < 1.0) {
        return Err(Error::Parameter(format!(
            "schedule needs 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]"
        )));
    }
    let betas: Vec<f64> = (0..steps)
        .map(|i| {
            if steps == 1 {
                beta_min
            } else {
                beta_min + (beta_max - beta_min) * i as f64 / (steps - 1) as f64
            }
        })
        .collect();
    NoiseSchedule::from_betas(betas)
}

impl NoiseSchedule {
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() || betas.iter().any(|b| !(0.0 < *b && *b < 1.0)) {
            return Err(Error::Parameter("every beta must lie in (0, 1)".into()));
        }
        let mut alpha_bars = Vec::with_capacity(betas.len());
        let mut acc = 1.0;
        for b in &betas {
            acc *= 1.0 - b;
            alpha_bars.push(acc);
        }
        Ok(NoiseSchedule { betas, alpha_bars })
    }

    pub fn from_spec(spec: &ScheduleSpec) -> Result<Self> {
        make_vp_schedule(spec.steps, spec.beta_min, spec.beta_max)
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::Parameter(format!(
                "step {t} outside 1..={}",
                self.steps()
            )));
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.betas[t - 1]
    }

    /// Cumulative product; `alpha_bar(0) == 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    /// `nfe` evenly spaced steps `t_1 < ... < t_nfe = T`, ascending.
    pub fn timesteps(&self, nfe: usize) -> Result<Vec<usize>> {
        let total = self.steps();
        if nfe == 0 || nfe > total {
            return Err(Error::Parameter(format!(
                "nfe must lie in 1..={total}, got {nfe}"
            )));
        }
        Ok((1..=nfe).map(|i| i * total / nfe).collect())
    }
}

/// Posterior-mean denoising `(z_t - sqrt(1 - ab) eps) / sqrt(ab)`.
pub fn tweedie(
    schedule: &NoiseSchedule,
    z_t: &[f64],
    t: usize,
    eps_hat: &[f64],
) -> Result<Vec<f64>> {
    schedule.check_step(t)?;
    if z_t.len() != eps_hat.len() {
        return Err(Error::dim("tweedie", z_t.len(), eps_hat.len()));
    }
    Ok(tweedie_ab(schedule.alpha_bar(t), z_t, eps_hat))
}

pub(crate) fn tweedie_ab(alpha_bar: f64, z_t: &[f64], eps_hat: &[f64]) -> Vec<f64> {
    let (a, b) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    z_t.iter()
        .zip(eps_hat)
        .map(|(z, e)| (z - b * e) / a)
        .collect()
}
