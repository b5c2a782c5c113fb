//! DDIM transitions and the measurement gradients shared by the samplers.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::codec::LatentCodec;
use crate::diffmap::DiffMap;
use crate::error::{ensure_len, Error, Result};
use crate::operators::{LinearOperator, Measurement};
use crate::score::{EpsilonModel, NoiseSchedule};
use crate::vecops::{dot, norm};

/// Everything a sampler needs besides its configuration.
#[derive(Clone, Copy)]
pub struct Problem<'a> {
    pub model: &'a dyn EpsilonModel,
    pub codec: &'a LatentCodec,
    pub op: &'a LinearOperator,
    pub y: &'a Measurement,
}

impl<'a> Problem<'a> {
    pub fn new(
        model: &'a dyn EpsilonModel,
        codec: &'a LatentCodec,
        op: &'a LinearOperator,
        y: &'a Measurement,
    ) -> Result<Self> {
        if codec.latent_dim() != model.latent_dim() {
            return Err(Error::dim(
                "model latent",
                codec.latent_dim(),
                model.latent_dim(),
            ));
        }
        if codec.image_dim() != op.input_len() {
            return Err(Error::dim(
                "operator input",
                codec.image_dim(),
                op.input_len(),
            ));
        }
        ensure_len("measurement", op.output_len(), &y.y)?;
        Ok(Problem {
            model,
            codec,
            op,
            y,
        })
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        self.model.schedule()
    }

    pub fn decode(&self, z: &[f64]) -> Vec<f64> {
        self.codec.decoder().eval(z)
    }

    /// `A x - y`
    pub fn residual(&self, x: &[f64]) -> Vec<f64> {
        self.op
            .eval(x)
            .iter()
            .zip(&self.y.y)
            .map(|(a, b)| a - b)
            .collect()
    }

    /// `|A D(z) - y|`
    pub fn data_misfit(&self, z: &[f64]) -> f64 {
        norm(&self.residual(&self.decode(z)))
    }
}

/// `sqrt(alpha_bar_t)`, `sqrt(1 - alpha_bar_t)`.
pub(crate) fn coefficients(schedule: &NoiseSchedule, t: usize) -> (f64, f64) {
    let ab = schedule.alpha_bar(t);
    (ab.sqrt(), (1.0 - ab).sqrt())
}

/// Noise estimate and Tweedie denoised latent at `(z_t, t, C)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Denoised {
    pub eps: Vec<f64>,
    pub z0: Vec<f64>,
}

pub fn denoise(model: &dyn EpsilonModel, z: &[f64], t: usize, c: &[f64]) -> Denoised {
    let eps = model.predict(z, t, c);
    let (a, b) = coefficients(model.schedule(), t);
    let z0 = z
        .iter()
        .zip(&eps)
        .map(|(zi, ei)| (zi - b * ei) / a)
        .collect();
    Denoised { eps, z0 }
}

/// Pulls a cotangent on the Tweedie estimate back to `z_t`:
/// `(u - sqrt(1 - ab) J_eps^T u) / sqrt(ab)`.
pub fn tweedie_pullback(
    model: &dyn EpsilonModel,
    z: &[f64],
    t: usize,
    c: &[f64],
    u: &[f64],
) -> Vec<f64> {
    let (a, b) = coefficients(model.schedule(), t);
    let je = model.vjp_z(z, t, c, u);
    u.iter()
        .zip(&je)
        .map(|(ui, ji)| (ui - b * ji) / a)
        .collect()
}

/// Standard deviation of the fresh noise in a DDIM step from `t` to `t_prev`.
pub fn ddim_sigma(schedule: &NoiseSchedule, t: usize, t_prev: usize, eta: f64) -> f64 {
    let (ab, ab_prev) = (schedule.alpha_bar(t), schedule.alpha_bar(t_prev));
    eta * ((1.0 - ab_prev) / (1.0 - ab)).sqrt() * (1.0 - ab / ab_prev).sqrt()
}

/// `sqrt(ab_prev) z0 + sqrt(1 - ab_prev - sigma^2) eps + sigma g`.
///
/// The generator is only touched when `eta > 0`.
pub fn ddim_transition(
    schedule: &NoiseSchedule,
    z0: &[f64],
    eps: &[f64],
    t: usize,
    t_prev: usize,
    eta: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    schedule.check_step(t)?;
    if t_prev >= t {
        return Err(Error::Parameter(format!(
            "ddim step must decrease t: {t} -> {t_prev}"
        )));
    }
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::Parameter(format!(
            "eta must lie in [0, 1], got {eta}"
        )));
    }
    ensure_len("ddim noise estimate", z0.len(), eps)?;
    let ab_prev = schedule.alpha_bar(t_prev);
    let sigma = ddim_sigma(schedule, t, t_prev, eta);
    let a_prev = ab_prev.sqrt();
    let dir = (1.0 - ab_prev - sigma * sigma).max(0.0).sqrt();
    Ok(z0
        .iter()
        .zip(eps)
        .map(|(x, e)| {
            let mut v = a_prev * x + dir * e;
            if sigma > 0.0 {
                let g: f64 = StandardNormal.sample(rng);
                v += sigma * g;
            }
            v
        })
        .collect())
}

/// Gradient with respect to the denoised latent `w` of `|A D(w) - y|`, and the
/// norm itself. The gradient is zero where the residual vanishes.
pub fn misfit_grad_latent(problem: &Problem, w: &[f64]) -> (Vec<f64>, f64) {
    let r = problem.residual(&problem.decode(w));
    let rn = norm(&r);
    if rn == 0.0 {
        return (vec![0.0; w.len()], 0.0);
    }
    let unit: Vec<f64> = r.iter().map(|v| v / rn).collect();
    let ux = problem.op.pullback(&[], &unit);
    (problem.codec.decoder().pullback(w, &ux), rn)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodGrad {
    pub grad: Vec<f64>,
    /// `|A D(z0_hat) - y|`
    pub residual: f64,
}

/// Gradient with respect to `z_t` of `|A D(z0_hat(z_t)) - y|` (not squared).
pub fn likelihood_grad(
    problem: &Problem,
    z_t: &[f64],
    t: usize,
    c: &[f64],
) -> Result<LikelihoodGrad> {
    problem.schedule().check_step(t)?;
    ensure_len("latent", problem.model.latent_dim(), z_t)?;
    ensure_len("embedding", problem.model.embedding_dim(), c)?;
    let d = denoise(problem.model, z_t, t, c);
    let (u, residual) = misfit_grad_latent(problem, &d.z0);
    Ok(LikelihoodGrad {
        grad: tweedie_pullback(problem.model, z_t, t, c, &u),
        residual,
    })
}

/// Which anchor the fixed-point penalty compares the denoised latent against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixedPoint {
    /// `E(D(w))`
    Autoencode,
    /// `E(A^T y + (I - A^T A) D(w))`
    Glued,
}

/// `|w - E(anchor(w))|` and its gradient in `w`.
pub fn fixed_point_penalty_grad(problem: &Problem, w: &[f64], form: FixedPoint) -> (Vec<f64>, f64) {
    let dec = problem.codec.decoder();
    let enc = problem.codec.encoder();
    let x = dec.eval(w);
    let anchor = match form {
        FixedPoint::Autoencode => x,
        FixedPoint::Glued => {
            let aty = problem.op.pullback(&[], &problem.y.y);
            let ata = problem.op.normal(&x);
            x.iter()
                .zip(&ata)
                .zip(&aty)
                .map(|((xi, ni), ti)| (xi - ni) + ti)
                .collect()
        }
    };
    let q: Vec<f64> = w
        .iter()
        .zip(enc.eval(&anchor))
        .map(|(wi, ei)| wi - ei)
        .collect();
    let qn = norm(&q);
    if qn == 0.0 {
        return (vec![0.0; w.len()], 0.0);
    }
    let u: Vec<f64> = q.iter().map(|v| v / qn).collect();
    let mut back = enc.pullback(&anchor, &u);
    if form == FixedPoint::Glued {
        let ata = problem.op.normal(&back);
        for (b, n) in back.iter_mut().zip(&ata) {
            *b -= n;
        }
    }
    let through = dec.pullback(w, &back);
    (u.iter().zip(&through).map(|(ui, ti)| ui - ti).collect(), qn)
}

/// Gauss-Newton Hessian-vector product of `|A D(w) - y|` at `w`:
/// `J_D^T A^T (I - r r^T / |r|^2) A J_D v / |r|` (exact when `D` is linear).
pub(crate) fn misfit_hvp(problem: &Problem, w: &[f64], v: &[f64]) -> Vec<f64> {
    let dec = problem.codec.decoder();
    let r = problem.residual(&dec.eval(w));
    let rn = norm(&r);
    if rn == 0.0 {
        return vec![0.0; w.len()];
    }
    let av = problem.op.eval(&dec.push_forward(w, v));
    let proj = dot(&r, &av) / (rn * rn);
    let perp: Vec<f64> = av
        .iter()
        .zip(&r)
        .map(|(a, ri)| (a - proj * ri) / rn)
        .collect();
    dec.pullback(w, &problem.op.pullback(&[], &perp))
}
