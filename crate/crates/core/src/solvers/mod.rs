//! Samplers: the P2L solver (plain and history-gradient variants) with prompt
//! tuning and encoder-range projection, the comparison methods, and patched
//! noise aggregation.
//!
//! All solvers run on a strided timestep sequence `t_i = i T / nfe` and share
//! one [`solver_step`], so a single update can be inspected in isolation.

mod config;
mod guidance;
mod patch;
mod prompt;
mod sampler;
mod trajectory;

pub use config::{DiffPirParams, GradType, PromptConfig, RhoRule, SolverConfig, SolverKind};
pub use guidance::{
    ddim_sigma, ddim_transition, denoise, fixed_point_penalty_grad, likelihood_grad,
    misfit_grad_latent, tweedie_pullback, Denoised, FixedPoint, LikelihoodGrad, Problem,
};
pub use patch::{patched_epsilon, window_starts, PatchWeighting, PatchedEpsilon};
pub use prompt::{optimize_embedding, prompt_loss_and_grad, EmbeddingResult};
pub use sampler::{
    diffpir_weight, project_to_encoder_range, run_baseline, run_p2l, run_solver, solver_step,
    SolverState,
};
pub use trajectory::{StepRecord, Trajectory, TRAJECTORY_COLUMNS};
