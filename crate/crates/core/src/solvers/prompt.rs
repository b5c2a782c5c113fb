//! Prompt tuning: Adam on the embedding `C` to reduce the data misfit of the
//! decoded posterior-mean estimate.

use crate::adam::{Adam, AdamParams};
use crate::diffmap::DiffMap;
use crate::error::{ensure_len, Error, Result};
use crate::vecops::{all_finite, norm};

use super::config::PromptConfig;
use super::guidance::{coefficients, denoise, misfit_grad_latent, misfit_hvp, Problem};

/// `L(C) = |A D(z0'(C)) - y|^2` and its gradient in `C`.
///
/// With `conditional_mean`, `z0' = z0 - rho_shift * grad_w |A D(w) - y|` at
/// `w = z0`; otherwise `z0' = z0`.
pub fn prompt_loss_and_grad(
    problem: &Problem,
    z_t: &[f64],
    t: usize,
    c: &[f64],
    cfg: &PromptConfig,
) -> (f64, Vec<f64>) {
    let model = problem.model;
    let d = denoise(model, z_t, t, c);
    let z0p = if cfg.conditional_mean {
        let (h, _) = misfit_grad_latent(problem, &d.z0);
        d.z0.iter()
            .zip(&h)
            .map(|(z, hi)| z - cfg.rho_shift * hi)
            .collect()
    } else {
        d.z0.clone()
    };
    let r = problem.residual(&problem.decode(&z0p));
    let loss = r.iter().map(|v| v * v).sum::<f64>();
    let two_r: Vec<f64> = r.iter().map(|v| 2.0 * v).collect();
    let mut u = problem
        .codec
        .decoder()
        .pullback(&z0p, &problem.op.pullback(&[], &two_r));
    if cfg.conditional_mean {
        let hu = misfit_hvp(problem, &d.z0, &u);
        for (ui, hi) in u.iter_mut().zip(&hu) {
            *ui -= cfg.rho_shift * hi;
        }
    }
    // z0 = (z_t - b eps(C)) / a, so dz0/dC = -(b / a) J_eps,C
    let (a, b) = coefficients(model.schedule(), t);
    let scaled: Vec<f64> = u.iter().map(|v| -b / a * v).collect();
    (loss, model.vjp_c(z_t, t, c, &scaled))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingResult {
    pub c: Vec<f64>,
    /// `L(C^(k-1))` for `k = 1..K`.
    pub loss_history: Vec<f64>,
    /// `L(C^(K))`, absent when `K = 0`.
    pub final_loss: Option<f64>,
    /// Whether the one lr-halving retry was spent.
    pub retried: bool,
}

/// `K` Adam steps on the prompt loss starting from `c_init`.
///
/// If a step increases the loss, it is undone and retried once with half the
/// learning rate; the retry result is accepted whatever it gives. `adam`
/// carries moment state across calls; `None` starts from fresh moments.
pub fn optimize_embedding(
    problem: &Problem,
    z_t: &[f64],
    t: usize,
    c_init: &[f64],
    cfg: &PromptConfig,
    adam_params: &AdamParams,
    adam: Option<&mut Adam>,
) -> Result<EmbeddingResult> {
    problem.schedule().check_step(t)?;
    ensure_len("embedding", problem.model.embedding_dim(), c_init)?;
    let mut c = c_init.to_vec();
    if cfg.iters == 0 {
        return Ok(EmbeddingResult {
            c,
            loss_history: Vec::new(),
            final_loss: None,
            retried: false,
        });
    }
    let mut fresh;
    let adam = match adam {
        Some(a) => a,
        None => {
            fresh = Adam::new(c.len(), cfg.lr, *adam_params);
            &mut fresh
        }
    };
    adam.lr = cfg.lr;
    let mut history = Vec::with_capacity(cfg.iters);
    let mut retried = false;
    let (mut loss, mut grad) = prompt_loss_and_grad(problem, z_t, t, &c, cfg);
    for k in 1..=cfg.iters {
        if !loss.is_finite() || !all_finite(&grad) {
            return Err(Error::Optimization { iteration: k });
        }
        history.push(loss);
        let snapshot = adam.state();
        let mut cand = c.clone();
        adam.step(&mut cand, &grad);
        let (mut next_loss, mut next_grad) = prompt_loss_and_grad(problem, z_t, t, &cand, cfg);
        if next_loss > loss && !retried {
            retried = true;
            adam.restore(snapshot);
            adam.lr = cfg.lr / 2.0;
            cand = c.clone();
            adam.step(&mut cand, &grad);
            (next_loss, next_grad) = prompt_loss_and_grad(problem, z_t, t, &cand, cfg);
            adam.lr = cfg.lr;
            log::debug!(
                "prompt loss rose at t={t}, k={k}; retried with lr {}",
                cfg.lr / 2.0
            );
        }
        c = cand;
        loss = next_loss;
        grad = next_grad;
    }
    if !loss.is_finite() || !all_finite(&c) {
        return Err(Error::Optimization {
            iteration: cfg.iters,
        });
    }
    log::trace!("embedding norm {:.4e} after tuning at t={t}", norm(&c));
    Ok(EmbeddingResult {
        c,
        loss_history: history,
        final_loss: Some(loss),
        retried,
    })
}
