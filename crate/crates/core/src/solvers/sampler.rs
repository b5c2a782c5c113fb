use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::adam::{Adam, HistoryGradient};
use crate::codec::LatentCodec;
use crate::diffmap::DiffMap;
use crate::error::{ensure_len, Error, Result};
use crate::operators::{LinearOperator, Measurement};
use crate::proximal::{apply_gamma, prox_closed_form, prox_gamma, GammaKind, ProxConfig};
use crate::vecops::{all_finite, axpy, norm};

use super::config::{GradType, SolverConfig, SolverKind};
use super::guidance::{
    coefficients, ddim_transition, denoise, fixed_point_penalty_grad, misfit_grad_latent,
    tweedie_pullback, FixedPoint, Problem,
};
use super::prompt::optimize_embedding;
use super::trajectory::{StepRecord, Trajectory};

/// `E(Gamma(D(z0)))`
pub fn project_to_encoder_range(
    codec: &LatentCodec,
    op: &LinearOperator,
    y: &Measurement,
    z0: &[f64],
    kind: GammaKind,
    prox: &ProxConfig,
) -> Result<Vec<f64>> {
    let x = codec.decode(z0)?;
    codec.encode(&apply_gamma(kind, op, y, &x, prox)?)
}

/// Mutable sampler state carried from one step to the next.
#[derive(Debug, Clone)]
pub struct SolverState {
    pub z: Vec<f64>,
    pub c: Vec<f64>,
    history: HistoryGradient,
    prompt_adam: Option<Adam>,
    rng: ChaCha8Rng,
}

impl SolverState {
    /// Starts from `z_T ~ N(0, I)` drawn from the config seed and the null embedding.
    pub fn initial(problem: &Problem, cfg: &SolverConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let z = (0..problem.model.latent_dim())
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        SolverState::from_parts(z, vec![0.0; problem.model.embedding_dim()], cfg, rng)
    }

    /// Starts from an explicit latent and embedding; `seed` drives any
    /// stochastic transitions.
    pub fn with_latent(z: Vec<f64>, c: Vec<f64>, cfg: &SolverConfig, seed: u64) -> Self {
        SolverState::from_parts(z, c, cfg, ChaCha8Rng::seed_from_u64(seed))
    }

    fn from_parts(z: Vec<f64>, c: Vec<f64>, cfg: &SolverConfig, rng: ChaCha8Rng) -> Self {
        let history = HistoryGradient::new(z.len(), cfg.adam);
        let prompt_adam = cfg
            .prompt
            .persist_moments
            .then(|| Adam::new(c.len(), cfg.prompt.lr, cfg.adam));
        SolverState {
            z,
            c,
            history,
            prompt_adam,
            rng,
        }
    }
}

/// Advances `state` from `t` to `t_prev`. `index` is the position of `t` in the
/// sampled timestep sequence (1 for the last step) and drives the projection gate.
pub fn solver_step(
    problem: &Problem,
    cfg: &SolverConfig,
    state: &mut SolverState,
    index: usize,
    t: usize,
    t_prev: usize,
) -> Result<StepRecord> {
    let model = problem.model;
    let schedule = model.schedule();
    schedule.check_step(t)?;
    ensure_len("latent", model.latent_dim(), &state.z)?;
    ensure_len("embedding", model.embedding_dim(), &state.c)?;
    let mut rec = StepRecord {
        step: index,
        t,
        residual: 0.0,
        prompt_loss: None,
        projected: false,
        embedding_norm: 0.0,
        lr_retry: false,
        cg_fallback: false,
    };

    match cfg.solver {
        SolverKind::Dds | SolverKind::Diffpir => {
            let d = denoise(model, &state.z, t, &state.c);
            rec.residual = norm(&problem.residual(&d.z0));
            let x0p = if cfg.solver == SolverKind::Dds {
                let prox = ProxConfig {
                    lambda: cfg.dds_gamma,
                    cg_iters: cfg.dds_cg_iters,
                    cg_tol: cfg.prox.cg_tol,
                };
                prox_gamma(problem.op, problem.y, &d.z0, &prox)?
            } else {
                diffpir_data_step(problem, cfg, &d.z0, t, &mut rec)?
            };
            rec.projected = true;
            state.z = if cfg.solver == SolverKind::Dds {
                ddim_transition(schedule, &x0p, &d.eps, t, t_prev, cfg.eta, &mut state.rng)?
            } else {
                let ab_prev = schedule.alpha_bar(t_prev);
                let (a_prev, b_prev) = (ab_prev.sqrt(), (1.0 - ab_prev).sqrt());
                let zeta = cfg.diffpir.zeta;
                x0p.iter()
                    .zip(&d.eps)
                    .map(|(x, e)| {
                        let g: f64 = if zeta > 0.0 {
                            StandardNormal.sample(&mut state.rng)
                        } else {
                            0.0
                        };
                        a_prev * x + b_prev * ((1.0 - zeta).sqrt() * e + zeta.sqrt() * g)
                    })
                    .collect()
            };
        }
        _ => {
            if cfg.solver.is_p2l() && cfg.prompt.iters > 0 {
                let res = optimize_embedding(
                    problem,
                    &state.z,
                    t,
                    &state.c,
                    &cfg.prompt,
                    &cfg.adam,
                    state.prompt_adam.as_mut(),
                )?;
                state.c = res.c;
                rec.prompt_loss = res.final_loss;
                rec.lr_retry = res.retried;
            }
            let d = denoise(model, &state.z, t, &state.c);
            let (mut u, residual) = misfit_grad_latent(problem, &d.z0);
            rec.residual = residual;
            let penalty = match cfg.solver {
                SolverKind::GmlDps => Some(FixedPoint::Autoencode),
                SolverKind::Psld => Some(FixedPoint::Glued),
                _ => None,
            };
            if let Some(form) = penalty {
                let (gq, _) = fixed_point_penalty_grad(problem, &d.z0, form);
                axpy(cfg.lambda_fix, &gq, &mut u);
            }
            let grad = tweedie_pullback(model, &state.z, t, &state.c, &u);

            let projected =
                if cfg.solver.is_p2l() && cfg.project && index.is_multiple_of(cfg.gamma_proj) {
                    rec.projected = true;
                    Some(project_to_encoder_range(
                        problem.codec,
                        problem.op,
                        problem.y,
                        &d.z0,
                        cfg.gamma_kind,
                        &cfg.prox,
                    )?)
                } else {
                    None
                };
            let base = match &projected {
                Some(p) if cfg.renoise_projected => p,
                _ => &d.z0,
            };
            let mut z_prev =
                ddim_transition(schedule, base, &d.eps, t, t_prev, cfg.eta, &mut state.rng)?;
            let rho = cfg.rho.at(schedule.alpha_bar(t));
            match cfg.effective_grad_type() {
                GradType::Gd => axpy(-rho, &grad, &mut z_prev),
                GradType::Adam => axpy(-rho, &state.history.direction(&grad), &mut z_prev),
            }
            state.z = z_prev;
        }
    }
    rec.embedding_norm = norm(&state.c);
    if !all_finite(&state.z) || !rec.residual.is_finite() {
        return Err(Error::Solver { step: index, t });
    }
    Ok(rec)
}

/// Weight `lambda sigma^2 ab / (1 - ab)` of the DiffPIR data prox.
pub fn diffpir_weight(lambda: f64, sigma_y: f64, alpha_bar: f64) -> f64 {
    lambda * sigma_y * sigma_y * alpha_bar / (1.0 - alpha_bar)
}

fn diffpir_data_step(
    problem: &Problem,
    cfg: &SolverConfig,
    x0: &[f64],
    t: usize,
    rec: &mut StepRecord,
) -> Result<Vec<f64>> {
    let (a, _) = coefficients(problem.schedule(), t);
    let w = diffpir_weight(cfg.diffpir.lambda, problem.y.sigma_y, a * a);
    if let Some(x) = prox_closed_form(problem.op, problem.y, x0, w)? {
        return Ok(x);
    }
    // blur kernels have no closed form here; solve the same prox by CG
    rec.cg_fallback = true;
    let prox = ProxConfig {
        lambda: w.max(1e-8),
        cg_iters: cfg.prox.cg_iters.max(50),
        cg_tol: cfg.prox.cg_tol,
    };
    prox_gamma(problem.op, problem.y, x0, &prox)
}

/// Runs the configured sampler over `nfe` evenly strided timesteps.
pub fn run_solver(problem: &Problem, cfg: &SolverConfig) -> Result<Trajectory> {
    cfg.validate()?;
    if cfg.solver.is_image_space() && !problem.codec.is_identity() {
        return Err(Error::Config(format!(
            "{} runs in image space and needs the identity codec with an image-space model",
            cfg.solver.name()
        )));
    }
    let timesteps = problem.schedule().timesteps(cfg.nfe)?;
    let mut state = SolverState::initial(problem, cfg);
    let mut records = Vec::with_capacity(cfg.nfe);
    for i in (1..=cfg.nfe).rev() {
        let t = timesteps[i - 1];
        let t_prev = if i > 1 { timesteps[i - 2] } else { 0 };
        records.push(solver_step(problem, cfg, &mut state, i, t, t_prev)?);
    }
    let final_image = problem.codec.decoder().eval(&state.z);
    if !all_finite(&final_image) {
        return Err(Error::Solver { step: 0, t: 0 });
    }
    Ok(Trajectory {
        solver: cfg.solver,
        records,
        final_latent: state.z,
        final_image,
        embedding: state.c,
    })
}

/// [`run_solver`] restricted to the two P2L variants.
pub fn run_p2l(problem: &Problem, cfg: &SolverConfig) -> Result<Trajectory> {
    if !cfg.solver.is_p2l() {
        return Err(Error::Config(format!(
            "{} is not a P2L variant",
            cfg.solver.name()
        )));
    }
    run_solver(problem, cfg)
}

/// [`run_solver`] restricted to the comparison methods.
pub fn run_baseline(problem: &Problem, cfg: &SolverConfig) -> Result<Trajectory> {
    if cfg.solver.is_p2l() {
        return Err(Error::Config(format!(
            "{} is not a baseline",
            cfg.solver.name()
        )));
    }
    run_solver(problem, cfg)
}
