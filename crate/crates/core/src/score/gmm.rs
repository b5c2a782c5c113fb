use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{EpsilonModel, NoiseSchedule};
use crate::diffmap::random_unit;
use crate::error::{Error, Result};
use crate::vecops::dot;

/// Diagonal Gaussian prior `N(mean, diag(var))`; ignores the embedding.
#[derive(Debug, Clone)]
pub struct GaussianPrior {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub embedding_dim: usize,
    schedule: Arc<NoiseSchedule>,
}

impl GaussianPrior {
    pub fn new(
        mean: Vec<f64>,
        var: Vec<f64>,
        embedding_dim: usize,
        schedule: Arc<NoiseSchedule>,
    ) -> Result<Self> {
        if mean.len() != var.len() {
            return Err(Error::dim("gaussian prior variance", mean.len(), var.len()));
        }
        if var.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Parameter("prior variances must be positive".into()));
        }
        Ok(GaussianPrior {
            mean,
            var,
            embedding_dim,
            schedule,
        })
    }

    pub fn standard(dim: usize, embedding_dim: usize, schedule: Arc<NoiseSchedule>) -> Self {
        GaussianPrior {
            mean: vec![0.0; dim],
            var: vec![1.0; dim],
            embedding_dim,
            schedule,
        }
    }

    /// `E[z_0 | z_t]` by Gaussian conditioning.
    pub fn posterior_mean(&self, z: &[f64], t: usize) -> Vec<f64> {
        let ab = self.schedule.alpha_bar(t);
        let a = ab.sqrt();
        z.iter()
            .zip(self.mean.iter().zip(&self.var))
            .map(|(zi, (m, s2))| m + a * s2 / (ab * s2 + 1.0 - ab) * (zi - a * m))
            .collect()
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.var)
            .map(|(m, v)| {
                let g: f64 = StandardNormal.sample(rng);
                m + v.sqrt() * g
            })
            .collect()
    }
}

impl EpsilonModel for GaussianPrior {
    fn latent_dim(&self) -> usize {
        self.mean.len()
    }
    fn embedding_dim(&self) -> usize {
        self.embedding_dim
    }
    fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }
    fn predict(&self, z: &[f64], t: usize, _c: &[f64]) -> Vec<f64> {
        let ab = self.schedule.alpha_bar(t);
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        z.iter()
            .zip(self.mean.iter().zip(&self.var))
            .map(|(zi, (m, s2))| b * (zi - a * m) / (ab * s2 + 1.0 - ab))
            .collect()
    }
    fn vjp_z(&self, _z: &[f64], t: usize, _c: &[f64], u: &[f64]) -> Vec<f64> {
        let ab = self.schedule.alpha_bar(t);
        let b = (1.0 - ab).sqrt();
        u.iter()
            .zip(&self.var)
            .map(|(ui, s2)| b * ui / (ab * s2 + 1.0 - ab))
            .collect()
    }
    fn vjp_c(&self, _z: &[f64], _t: usize, _c: &[f64], _u: &[f64]) -> Vec<f64> {
        vec![0.0; self.embedding_dim]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub mean: Vec<f64>,
    /// Per-coordinate variance.
    pub var: Vec<f64>,
    /// Base mixture weight (unnormalized is fine).
    pub weight: f64,
    /// Unit vector the embedding is scored against.
    pub tag: Vec<f64>,
}

/// Mixture of diagonal Gaussians whose weights depend on the embedding.
#[derive(Debug, Clone)]
pub struct ConditionalGmm {
    components: Vec<Component>,
    log_weights: Vec<f64>,
    dim: usize,
    embedding_dim: usize,
    schedule: Arc<NoiseSchedule>,
}

/// Per-component quantities at one `(z_t, t, C)`.
struct Terms {
    resp: Vec<f64>,
    /// `(z - a mu_i) / v_i`
    g: Vec<Vec<f64>>,
    /// `a^2 s_i^2 + 1 - a^2`
    v: Vec<Vec<f64>>,
    log_norm: f64,
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn softmax(xs: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(xs);
    xs.iter().map(|x| (x - lse).exp()).collect()
}

impl ConditionalGmm {
    pub fn new(components: Vec<Component>, schedule: Arc<NoiseSchedule>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::Parameter("mixture needs at least one component".into()))?;
        let (dim, embedding_dim) = (first.mean.len(), first.tag.len());
        for c in &components {
            if c.mean.len() != dim || c.var.len() != dim {
                return Err(Error::dim(
                    "mixture component",
                    dim,
                    c.mean.len().max(c.var.len()),
                ));
            }
            if c.tag.len() != embedding_dim {
                return Err(Error::dim("mixture tag", embedding_dim, c.tag.len()));
            }
            if !(c.weight > 0.0) || c.var.iter().any(|v| !(*v > 0.0)) {
                return Err(Error::Parameter(
                    "mixture weights and variances must be positive".into(),
                ));
            }
        }
        let log_weights = components.iter().map(|c| c.weight.ln()).collect();
        Ok(ConditionalGmm {
            components,
            log_weights,
            dim,
            embedding_dim,
            schedule,
        })
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    /// Mixture weights under embedding `c`.
    pub fn weights(&self, c: &[f64]) -> Vec<f64> {
        let logits: Vec<f64> = self
            .components
            .iter()
            .zip(&self.log_weights)
            .map(|(comp, lw)| lw + dot(c, &comp.tag))
            .collect();
        softmax(&logits)
    }

    fn terms(&self, z: &[f64], t: usize, c: &[f64]) -> Terms {
        let ab = self.schedule.alpha_bar(t);
        let a = ab.sqrt();
        let mut logits = Vec::with_capacity(self.components.len());
        let mut g = Vec::with_capacity(self.components.len());
        let mut v = Vec::with_capacity(self.components.len());
        for (comp, lw) in self.components.iter().zip(&self.log_weights) {
            let vi: Vec<f64> = comp.var.iter().map(|s2| ab * s2 + 1.0 - ab).collect();
            let mut log_n = 0.0;
            let gi: Vec<f64> = z
                .iter()
                .zip(comp.mean.iter().zip(&vi))
                .map(|(zd, (md, vd))| {
                    let diff = zd - a * md;
                    log_n -= 0.5 * (diff * diff / vd + (2.0 * PI * vd).ln());
                    diff / vd
                })
                .collect();
            logits.push(lw + dot(c, &comp.tag) + log_n);
            g.push(gi);
            v.push(vi);
        }
        let cond: Vec<f64> = self
            .components
            .iter()
            .zip(&self.log_weights)
            .map(|(comp, lw)| lw + dot(c, &comp.tag))
            .collect();
        Terms {
            resp: softmax(&logits),
            g,
            v,
            log_norm: log_sum_exp(&logits) - log_sum_exp(&cond),
        }
    }

    /// Posterior responsibilities `p(i | z_t, C)`.
    pub fn responsibilities(&self, z: &[f64], t: usize, c: &[f64]) -> Vec<f64> {
        self.terms(z, t, c).resp
    }

    /// `log p_t(z_t | C)`.
    pub fn log_density(&self, z: &[f64], t: usize, c: &[f64]) -> f64 {
        self.terms(z, t, c).log_norm
    }

    /// Draw from the clean mixture; `component` forces the mixture label.
    pub fn sample(&self, rng: &mut ChaCha8Rng, c: &[f64], component: Option<usize>) -> Vec<f64> {
        let idx = component.unwrap_or_else(|| {
            let w = self.weights(c);
            let u: f64 = rng.random();
            let mut acc = 0.0;
            w.iter()
                .position(|wi| {
                    acc += wi;
                    u < acc
                })
                .unwrap_or(w.len() - 1)
        });
        let comp = &self.components[idx.min(self.components.len() - 1)];
        comp.mean
            .iter()
            .zip(&comp.var)
            .map(|(m, v)| {
                let g: f64 = StandardNormal.sample(rng);
                m + v.sqrt() * g
            })
            .collect()
    }
}

impl EpsilonModel for ConditionalGmm {
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
        let b = (1.0 - self.schedule.alpha_bar(t)).sqrt();
        let terms = self.terms(z, t, c);
        let mut out = vec![0.0; self.dim];
        for (r, gi) in terms.resp.iter().zip(&terms.g) {
            for (o, gd) in out.iter_mut().zip(gi) {
                *o += b * r * gd;
            }
        }
        out
    }

    fn vjp_z(&self, z: &[f64], t: usize, c: &[f64], u: &[f64]) -> Vec<f64> {
        let b = (1.0 - self.schedule.alpha_bar(t)).sqrt();
        let terms = self.terms(z, t, c);
        let mut g_bar = vec![0.0; self.dim];
        for (r, gi) in terms.resp.iter().zip(&terms.g) {
            for (gb, gd) in g_bar.iter_mut().zip(gi) {
                *gb += r * gd;
            }
        }
        let mut out = vec![0.0; self.dim];
        for ((r, gi), vi) in terms.resp.iter().zip(&terms.g).zip(&terms.v) {
            let gu = dot(gi, u);
            for d in 0..self.dim {
                out[d] += b * r * ((g_bar[d] - gi[d]) * gu + u[d] / vi[d]);
            }
        }
        out
    }

    fn vjp_c(&self, z: &[f64], t: usize, c: &[f64], u: &[f64]) -> Vec<f64> {
        let b = (1.0 - self.schedule.alpha_bar(t)).sqrt();
        let terms = self.terms(z, t, c);
        let mut tag_bar = vec![0.0; self.embedding_dim];
        for (r, comp) in terms.resp.iter().zip(&self.components) {
            for (tb, td) in tag_bar.iter_mut().zip(&comp.tag) {
                *tb += r * td;
            }
        }
        let mut out = vec![0.0; self.embedding_dim];
        for ((r, gi), comp) in terms.resp.iter().zip(&terms.g).zip(&self.components) {
            let w = b * r * dot(gi, u);
            for ((o, td), tb) in out.iter_mut().zip(&comp.tag).zip(&tag_bar) {
                *o += w * (td - tb);
            }
        }
        out
    }
}

fn default_var() -> f64 {
    1.0
}

/// Serializable mixture description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum GmmSpec {
    Explicit {
        components: Vec<Component>,
    },
    /// Means are `separation` times seeded random unit vectors, tags are
    /// seeded random unit vectors, all components share `var`.
    Random {
        components: usize,
        dim: usize,
        embedding_dim: usize,
        separation: f64,
        #[serde(default = "default_var")]
        var: f64,
        #[serde(default)]
        weights: Option<Vec<f64>>,
        #[serde(default)]
        seed: u64,
    },
}

impl GmmSpec {
    pub fn build(&self, schedule: Arc<NoiseSchedule>) -> Result<ConditionalGmm> {
        match self {
            GmmSpec::Explicit { components } => ConditionalGmm::new(components.clone(), schedule),
            GmmSpec::Random {
                components,
                dim,
                embedding_dim,
                separation,
                var,
                weights,
                seed,
            } => {
                if let Some(w) = weights {
                    if w.len() != *components {
                        return Err(Error::dim("mixture weights", components, w.len()));
                    }
                }
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let comps = (0..*components)
                    .map(|i| Component {
                        mean: random_unit(&mut rng, *dim)
                            .into_iter()
                            .map(|m| m * separation)
                            .collect(),
                        var: vec![*var; *dim],
                        weight: weights.as_ref().map_or(1.0, |w| w[i]),
                        tag: random_unit(&mut rng, *embedding_dim),
                    })
                    .collect();
                ConditionalGmm::new(comps, schedule)
            }
        }
    }
}
