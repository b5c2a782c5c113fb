use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{EpsilonModel, NoiseSchedule};
use crate::adam::{Adam, AdamParams};
use crate::diffmap::{Dense, DiffMap, TanhMlp};
use crate::error::{Error, Result};

/// Network size and optimizer settings for [`train_toy_denoiser`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyArch {
    pub hidden: usize,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
}

impl Default for ToyArch {
    fn default() -> Self {
        ToyArch {
            hidden: 32,
            epochs: 200,
            batch: 64,
            lr: 1e-2,
        }
    }
}

/// One-hidden-layer tanh network `h(z_t, sqrt(ab), sqrt(1 - ab), C)` that
/// predicts the clean latent; the noise estimate is `(z_t - sqrt(ab) h) / sqrt(1 - ab)`.
#[derive(Debug, Clone)]
pub struct ToyDenoiser {
    net: TanhMlp,
    dim: usize,
    embedding_dim: usize,
    schedule: Arc<NoiseSchedule>,
}

#[derive(Debug, Clone)]
pub struct TrainedDenoiser {
    pub model: ToyDenoiser,
    /// Mean training loss per epoch.
    pub loss_history: Vec<f64>,
}

impl ToyDenoiser {
    pub fn init(
        dim: usize,
        embedding_dim: usize,
        hidden: usize,
        schedule: Arc<NoiseSchedule>,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_in = dim + 2 + embedding_dim;
        let mut layer = |rows: usize, cols: usize| {
            let s = (1.0 / cols as f64).sqrt();
            let data = (0..rows * cols)
                .map(|_| {
                    let g: f64 = StandardNormal.sample(&mut rng);
                    s * g
                })
                .collect();
            Dense::new(rows, cols, data).expect("layer shape")
        };
        let (w1, w2) = (layer(hidden, n_in), layer(dim, hidden));
        ToyDenoiser {
            net: TanhMlp::new(w1, vec![0.0; hidden], w2, vec![0.0; dim]).expect("mlp shape"),
            dim,
            embedding_dim,
            schedule,
        }
    }

    pub fn params(&self) -> Vec<f64> {
        self.net.params()
    }

    pub fn hidden(&self) -> usize {
        self.net.w1.rows
    }

    /// Rebuilds a network from the flat layout of [`ToyDenoiser::params`].
    pub fn with_params(&self, p: &[f64]) -> Result<Self> {
        let (h, n_in, n_out) = (self.net.w1.rows, self.net.w1.cols, self.net.w2.rows);
        let expected = h * n_in + h + n_out * h + n_out;
        if p.len() != expected {
            return Err(Error::dim("toy denoiser parameters", expected, p.len()));
        }
        let (w1, rest) = p.split_at(h * n_in);
        let (b1, rest) = rest.split_at(h);
        let (w2, b2) = rest.split_at(n_out * h);
        let net = TanhMlp::new(
            Dense::new(h, n_in, w1.to_vec())?,
            b1.to_vec(),
            Dense::new(n_out, h, w2.to_vec())?,
            b2.to_vec(),
        )?;
        Ok(ToyDenoiser {
            net,
            ..self.clone()
        })
    }

    fn input(&self, z: &[f64], t: usize, c: &[f64]) -> (Vec<f64>, f64, f64) {
        let ab = self.schedule.alpha_bar(t);
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        let mut x = Vec::with_capacity(self.dim + 2 + self.embedding_dim);
        x.extend_from_slice(z);
        x.push(a);
        x.push(b);
        x.extend_from_slice(c);
        (x, a, b)
    }

    /// Gradient of `<gout, h(x)>` with respect to the flat parameters.
    fn param_grad(&self, x: &[f64], gout: &[f64], acc: &mut [f64]) {
        let net = &self.net;
        let (h, n_in) = (net.w1.rows, net.w1.cols);
        let mut hid = net.w1.matvec(x);
        for (v, bi) in hid.iter_mut().zip(&net.b1) {
            *v = (*v + bi).tanh();
        }
        let mut gh = net.w2.matvec_t(gout);
        for (g, hv) in gh.iter_mut().zip(&hid) {
            *g *= 1.0 - hv * hv;
        }
        let (gw1, rest) = acc.split_at_mut(h * n_in);
        let (gb1, rest) = rest.split_at_mut(h);
        let (gw2, gb2) = rest.split_at_mut(gout.len() * h);
        for i in 0..h {
            gb1[i] += gh[i];
            for j in 0..n_in {
                gw1[i * n_in + j] += gh[i] * x[j];
            }
        }
        for (o, go) in gout.iter().enumerate() {
            gb2[o] += go;
            for i in 0..h {
                gw2[o * h + i] += go * hid[i];
            }
        }
    }
}

impl EpsilonModel for ToyDenoiser {
    fn latent_dim(&self) -> usize {
        self.dim
    }
    fn embedding_dim(&self) -> usize {
        self.embedding_dim
    }
    fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }
    fn predict(&self, z: &[f64], t: usize, c: &[f64]) -> Vec<f64> {
        let (x, a, b) = self.input(z, t, c);
        let h = self.net.eval(&x);
        z.iter().zip(&h).map(|(zi, hi)| (zi - a * hi) / b).collect()
    }
    fn vjp_z(&self, z: &[f64], t: usize, c: &[f64], u: &[f64]) -> Vec<f64> {
        let (x, a, b) = self.input(z, t, c);
        let back = self.net.pullback(&x, u);
        u.iter()
            .zip(&back[..self.dim])
            .map(|(ui, bi)| (ui - a * bi) / b)
            .collect()
    }
    fn vjp_c(&self, z: &[f64], t: usize, c: &[f64], u: &[f64]) -> Vec<f64> {
        let (x, a, b) = self.input(z, t, c);
        let back = self.net.pullback(&x, u);
        back[self.dim + 2..].iter().map(|bi| -a * bi / b).collect()
    }
}

/// Fits a [`ToyDenoiser`] by minibatch Adam on the noise-matching loss
/// `|eps - eps_theta(sqrt(ab) z0 + sqrt(1 - ab) eps, t, C)|^2`.
///
/// `conditions` pairs each sample with an embedding; when absent every sample
/// is trained under the null embedding.
pub fn train_toy_denoiser(
    dataset: &[Vec<f64>],
    conditions: Option<&[Vec<f64>]>,
    embedding_dim: usize,
    schedule: Arc<NoiseSchedule>,
    arch: &ToyArch,
    seed: u64,
) -> Result<TrainedDenoiser> {
    let dim = dataset
        .first()
        .ok_or_else(|| Error::Parameter("training set is empty".into()))?
        .len();
    if let Some(bad) = dataset.iter().find(|s| s.len() != dim) {
        return Err(Error::dim("training sample", dim, bad.len()));
    }
    if let Some(cs) = conditions {
        if cs.len() != dataset.len() {
            return Err(Error::dim("training conditions", dataset.len(), cs.len()));
        }
        if let Some(bad) = cs.iter().find(|c| c.len() != embedding_dim) {
            return Err(Error::dim("training condition", embedding_dim, bad.len()));
        }
    }
    if arch.hidden == 0 || arch.batch == 0 || !(arch.lr > 0.0) {
        return Err(Error::Parameter(
            "toy architecture needs hidden, batch and lr > 0".into(),
        ));
    }
    let mut model = ToyDenoiser::init(dim, embedding_dim, arch.hidden, schedule.clone(), seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut params = model.params();
    let mut opt = Adam::new(params.len(), arch.lr, AdamParams::default());
    let null = vec![0.0; embedding_dim];
    let steps_per_epoch = dataset.len().div_ceil(arch.batch);
    let mut loss_history = Vec::with_capacity(arch.epochs);

    for epoch in 0..arch.epochs {
        // linear decay to a tenth of the base rate damps the minibatch noise
        opt.lr = arch.lr * (1.0 - 0.9 * epoch as f64 / arch.epochs as f64);
        let mut epoch_loss = 0.0;
        for _ in 0..steps_per_epoch {
            let mut grad = vec![0.0; params.len()];
            let mut batch_loss = 0.0;
            for _ in 0..arch.batch {
                let idx = rng.random_range(0..dataset.len());
                let z0 = &dataset[idx];
                let c = conditions.map_or(&null, |cs| &cs[idx]);
                let t = rng.random_range(1..=schedule.steps());
                let ab = schedule.alpha_bar(t);
                let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
                let eps: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                let zt: Vec<f64> = z0.iter().zip(&eps).map(|(x, e)| a * x + b * e).collect();
                let pred = model.predict(&zt, t, c);
                // d/dh of |pred - eps|^2 with pred = (z - a h) / b
                let mut gout = Vec::with_capacity(dim);
                for (p, e) in pred.iter().zip(&eps) {
                    batch_loss += (p - e) * (p - e);
                    gout.push(-2.0 * a / b * (p - e) / arch.batch as f64);
                }
                let (x, _, _) = model.input(&zt, t, c);
                model.param_grad(&x, &gout, &mut grad);
            }
            batch_loss /= arch.batch as f64;
            if !batch_loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Training { epoch });
            }
            epoch_loss += batch_loss / steps_per_epoch as f64;
            opt.step(&mut params, &grad);
            model = model.with_params(&params)?;
        }
        log::debug!("toy denoiser epoch {epoch}: loss {epoch_loss:.6e}");
        loss_history.push(epoch_loss);
    }
    Ok(TrainedDenoiser {
        model,
        loss_history,
    })
}
