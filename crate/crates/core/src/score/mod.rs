//! Noise schedules, epsilon-prediction models and Tweedie denoising.
//!
//! The analytic models (a diagonal Gaussian and a conditional Gaussian
//! mixture) predict the exact minimum-MSE noise for their prior, so every
//! downstream oracle can be computed in closed form. The conditioning vector
//! `C` reweights mixture components through `softmax(log pi_i + <C, tag_i>)`.

mod gmm;
mod schedule;
mod toy;

pub use gmm::{Component, ConditionalGmm, GaussianPrior, GmmSpec};
pub use schedule::{make_vp_schedule, tweedie, NoiseSchedule, ScheduleSpec};
pub use toy::{train_toy_denoiser, ToyArch, ToyDenoiser, TrainedDenoiser};

use std::sync::Arc;

use crate::diffmap::{DiffMap, Shape};
use crate::error::{ensure_len, Result};

/// Noise predictor `eps(z_t, t, C)` with pullbacks in `z_t` and `C`.
///
/// Callers of the unchecked methods guarantee lengths and `1 <= t <= T`;
/// [`epsilon_predict`] is the checked entry point.
pub trait EpsilonModel: Send + Sync {
    fn latent_dim(&self) -> usize;
    fn embedding_dim(&self) -> usize;
    fn schedule(&self) -> &NoiseSchedule;

    fn predict(&self, z: &[f64], t: usize, c: &[f64]) -> Vec<f64>;
    fn vjp_z(&self, z: &[f64], t: usize, c: &[f64], u: &[f64]) -> Vec<f64>;
    fn vjp_c(&self, z: &[f64], t: usize, c: &[f64], u: &[f64]) -> Vec<f64>;
}

pub fn epsilon_predict(
    model: &dyn EpsilonModel,
    z_t: &[f64],
    t: usize,
    c: &[f64],
) -> Result<Vec<f64>> {
    model.schedule().check_step(t)?;
    ensure_len("latent", model.latent_dim(), z_t)?;
    ensure_len("embedding", model.embedding_dim(), c)?;
    Ok(model.predict(z_t, t, c))
}

/// Conditioning vector `C` and where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub c: Vec<f64>,
    pub origin: EmbeddingOrigin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingOrigin {
    Null,
    Tuned,
    Fixed,
}

impl Embedding {
    /// The uninformative condition: all zeros.
    pub fn null(dim: usize) -> Self {
        Embedding {
            c: vec![0.0; dim],
            origin: EmbeddingOrigin::Null,
        }
    }

    pub fn fixed(c: Vec<f64>) -> Self {
        Embedding {
            c,
            origin: EmbeddingOrigin::Fixed,
        }
    }
}

/// The shipped model family.
#[derive(Debug, Clone)]
pub enum ScoreModel {
    GaussianAnalytic(GaussianPrior),
    GmmConditional(ConditionalGmm),
    LearnedToy(ToyDenoiser),
}

macro_rules! dispatch {
    ($self:ident, $m:ident => $e:expr) => {
        match $self {
            ScoreModel::GaussianAnalytic($m) => $e,
            ScoreModel::GmmConditional($m) => $e,
            ScoreModel::LearnedToy($m) => $e,
        }
    };
}

impl EpsilonModel for ScoreModel {
    fn latent_dim(&self) -> usize {
        dispatch!(self, m => m.latent_dim())
    }
    fn embedding_dim(&self) -> usize {
        dispatch!(self, m => m.embedding_dim())
    }
    fn schedule(&self) -> &NoiseSchedule {
        dispatch!(self, m => m.schedule())
    }
    fn predict(&self, z: &[f64], t: usize, c: &[f64]) -> Vec<f64> {
        dispatch!(self, m => m.predict(z, t, c))
    }
    fn vjp_z(&self, z: &[f64], t: usize, c: &[f64], u: &[f64]) -> Vec<f64> {
        dispatch!(self, m => m.vjp_z(z, t, c, u))
    }
    fn vjp_c(&self, z: &[f64], t: usize, c: &[f64], u: &[f64]) -> Vec<f64> {
        dispatch!(self, m => m.vjp_c(z, t, c, u))
    }
}

impl<M: EpsilonModel + ?Sized> EpsilonModel for Arc<M> {
    fn latent_dim(&self) -> usize {
        (**self).latent_dim()
    }
    fn embedding_dim(&self) -> usize {
        (**self).embedding_dim()
    }
    fn schedule(&self) -> &NoiseSchedule {
        (**self).schedule()
    }
    fn predict(&self, z: &[f64], t: usize, c: &[f64]) -> Vec<f64> {
        (**self).predict(z, t, c)
    }
    fn vjp_z(&self, z: &[f64], t: usize, c: &[f64], u: &[f64]) -> Vec<f64> {
        (**self).vjp_z(z, t, c, u)
    }
    fn vjp_c(&self, z: &[f64], t: usize, c: &[f64], u: &[f64]) -> Vec<f64> {
        (**self).vjp_c(z, t, c, u)
    }
}

/// `z_t -> eps(z_t, t, C)` with `t` and `C` frozen.
pub struct EpsilonInLatent<'a> {
    pub model: &'a dyn EpsilonModel,
    pub t: usize,
    pub c: Vec<f64>,
}

impl DiffMap for EpsilonInLatent<'_> {
    fn input_shape(&self) -> Shape {
        Shape::flat(self.model.latent_dim())
    }
    fn output_shape(&self) -> Shape {
        Shape::flat(self.model.latent_dim())
    }
    fn eval(&self, x: &[f64]) -> Vec<f64> {
        self.model.predict(x, self.t, &self.c)
    }
    fn pullback(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        self.model.vjp_z(x, self.t, &self.c, u)
    }
}

/// `C -> eps(z_t, t, C)` with `z_t` and `t` frozen.
pub struct EpsilonInEmbedding<'a> {
    pub model: &'a dyn EpsilonModel,
    pub t: usize,
    pub z: Vec<f64>,
}

impl DiffMap for EpsilonInEmbedding<'_> {
    fn input_shape(&self) -> Shape {
        Shape::flat(self.model.embedding_dim())
    }
    fn output_shape(&self) -> Shape {
        Shape::flat(self.model.latent_dim())
    }
    fn eval(&self, c: &[f64]) -> Vec<f64> {
        self.model.predict(&self.z, self.t, c)
    }
    fn pullback(&self, c: &[f64], u: &[f64]) -> Vec<f64> {
        self.model.vjp_c(&self.z, self.t, c, u)
    }
}
