//! Oracles shared by the integration tests and the acceptance target.
#![allow(dead_code)]

use std::sync::Arc;

use p2l::codec::LatentCodec;
use p2l::diffmap::Dense;
use p2l::operators::{ImageShape, LinearOperator, Measurement};
use p2l::score::{make_vp_schedule, EpsilonModel, GaussianPrior, NoiseSchedule, ScoreModel};
use p2l::solvers::{
    solver_step, GradType, Problem, RhoRule, SolverConfig, SolverKind, SolverState,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn schedule() -> Arc<NoiseSchedule> {
    Arc::new(make_vp_schedule(1000, 1e-4, 2e-2).unwrap())
}

/// One-dimensional instance: prior `N(M, S2)`, decoder `D`, encoder `E`
/// (with `E D != 1`), `A = I`, measurement `Y`, current latent `Z` at `T`.
pub const M: f64 = 0.3;
pub const S2: f64 = 0.5;
pub const D: f64 = 1.7;
pub const E: f64 = 0.55;
pub const Y: f64 = 0.9;
pub const Z: f64 = 0.4;
pub const T: usize = 500;
pub const T_PREV: usize = 480;
pub const RHO: f64 = 0.8;
pub const SIGMA_Y: f64 = 0.1;

pub struct Scalar {
    pub sched: Arc<NoiseSchedule>,
    pub model: ScoreModel,
    pub image_model: ScoreModel,
    pub codec: LatentCodec,
    pub identity: LatentCodec,
    pub op: LinearOperator,
    pub y: Measurement,
}

impl Scalar {
    pub fn new() -> Self {
        let sched = schedule();
        let prior = GaussianPrior::new(vec![M], vec![S2], 2, sched.clone()).unwrap();
        let image_prior =
            GaussianPrior::new(vec![D * M], vec![D * D * S2], 2, sched.clone()).unwrap();
        let codec = LatentCodec::linear(
            Dense::new(1, 1, vec![E]).unwrap(),
            Dense::new(1, 1, vec![D]).unwrap(),
        )
        .unwrap();
        Scalar {
            sched,
            model: ScoreModel::GaussianAnalytic(prior),
            image_model: ScoreModel::GaussianAnalytic(image_prior),
            codec,
            identity: LatentCodec::identity(1),
            op: LinearOperator::identity(ImageShape::new(1, 1)),
            y: Measurement {
                y: vec![Y],
                sigma_y: SIGMA_Y,
                seed: 0,
                operator: None,
            },
        }
    }

    /// Runs one `solver_step` from `Z` at `T` and returns the new latent.
    pub fn step(&self, cfg: &SolverConfig, seed: u64) -> f64 {
        let (model, codec): (&dyn EpsilonModel, _) = if cfg.solver.is_image_space() {
            (&self.image_model, &self.identity)
        } else {
            (&self.model, &self.codec)
        };
        let problem = Problem::new(model, codec, &self.op, &self.y).unwrap();
        let mut state = SolverState::with_latent(vec![Z], vec![0.0; 2], cfg, seed);
        solver_step(&problem, cfg, &mut state, 7, T, T_PREV).unwrap();
        state.z[0]
    }
}

/// Closed-form Gaussian denoiser: `(z0_hat, eps_hat, d z0_hat / d z_t)` for
/// prior `N(m, s2)`.
pub fn gaussian_denoise(
    sched: &NoiseSchedule,
    z: f64,
    t: usize,
    m: f64,
    s2: f64,
) -> (f64, f64, f64) {
    let ab = sched.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    let k = a * s2 / (ab * s2 + 1.0 - ab);
    let z0 = m + k * (z - a * m);
    (z0, (z - a * z0) / b, k)
}

fn ddim0(sched: &NoiseSchedule, z0: f64, eps: f64) -> f64 {
    let abp = sched.alpha_bar(T_PREV);
    abp.sqrt() * z0 + (1.0 - abp).sqrt() * eps
}

fn cfg(kind: SolverKind) -> SolverConfig {
    let mut c = SolverConfig::preset(kind);
    c.rho = RhoRule::Constant(RHO);
    c.eta = 0.0;
    c
}

/// `(name, |solver - hand|)` for every baseline's single-step update.
pub fn scalar_baseline_errors() -> Vec<(String, f64)> {
    let s = Scalar::new();
    let sched = &*s.sched;
    let (z0, eps, k) = gaussian_denoise(sched, Z, T, M, S2);
    let sign = |v: f64| v.signum();
    let r = D * z0 - Y;
    let ldps_grad = k * D * sign(r);
    let mut out = Vec::new();

    let hand = ddim0(sched, z0, eps) - RHO * ldps_grad;
    out.push((
        "LDPS".into(),
        (s.step(&cfg(SolverKind::Ldps), 0) - hand).abs(),
    ));

    let mut c = cfg(SolverKind::GmlDps);
    c.lambda_fix = 0.0;
    out.push(("GML-DPS penalty off".into(), (s.step(&c, 0) - hand).abs()));

    let lam = 0.1;
    let mut c = cfg(SolverKind::GmlDps);
    c.lambda_fix = lam;
    let q = z0 - E * D * z0;
    let hand_gml = ddim0(sched, z0, eps) - RHO * k * (D * sign(r) + lam * (1.0 - E * D) * sign(q));
    out.push((
        "GML-DPS penalty on".into(),
        (s.step(&c, 0) - hand_gml).abs(),
    ));

    // with A = I the glued anchor is y itself, so the penalty is |w - E y|
    let mut c = cfg(SolverKind::Psld);
    c.lambda_fix = lam;
    let hand_psld = ddim0(sched, z0, eps) - RHO * k * (D * sign(r) + lam * sign(z0 - E * Y));
    out.push((
        "PSLD identity-A collapse".into(),
        (s.step(&c, 0) - hand_psld).abs(),
    ));

    let mut c = cfg(SolverKind::Ldir);
    c.grad_type = GradType::Adam;
    let hand_ldir = ddim0(sched, z0, eps) - RHO * ldps_grad / (ldps_grad.abs() + c.adam.eps);
    out.push((
        "LDIR first-step sign identity".into(),
        (s.step(&c, 0) - hand_ldir).abs(),
    ));

    let (x0, xeps, _) = gaussian_denoise(sched, Z, T, D * M, D * D * S2);
    let mut c = cfg(SolverKind::Diffpir);
    c.diffpir.zeta = 0.3;
    c.diffpir.lambda = 7.0;
    let ab = sched.alpha_bar(T);
    let w = 7.0 * SIGMA_Y * SIGMA_Y * ab / (1.0 - ab);
    let xp = (Y + w * x0) / (1.0 + w);
    let g: f64 = StandardNormal.sample(&mut ChaCha8Rng::seed_from_u64(9));
    let abp = sched.alpha_bar(T_PREV);
    let hand_pir =
        abp.sqrt() * xp + (1.0 - abp).sqrt() * (0.7f64.sqrt() * xeps + 0.3f64.sqrt() * g);
    out.push((
        "DiffPIR identity-A closed form".into(),
        (s.step(&c, 9) - hand_pir).abs(),
    ));

    let c = cfg(SolverKind::Dds);
    let gamma = c.dds_gamma;
    let xp = (Y + gamma * x0) / (1.0 + gamma);
    let hand_dds = abp.sqrt() * xp + (1.0 - abp).sqrt() * xeps;
    out.push(("DDS CG-5 prox".into(), (s.step(&c, 0) - hand_dds).abs()));
    out
}

/// `(name, error)` for the patched-aggregation properties: constant-field
/// equality with the full-size model, exact single-window degeneracy, and
/// an interior uniform weight of 4 at half-patch stride.
pub fn patched_errors() -> Vec<(String, f64)> {
    use p2l::solvers::{patched_epsilon, PatchWeighting};
    let sched = schedule();
    let patch = 4;
    let native =
        ScoreModel::GaussianAnalytic(GaussianPrior::standard(patch * patch, 3, sched.clone()));
    let shape = ImageShape::new(10, 12);
    let full = ScoreModel::GaussianAnalytic(GaussianPrior::standard(shape.len(), 3, sched));
    let c = vec![0.2, -0.1, 0.4];
    let mut out = Vec::new();

    let field = vec![0.37; shape.len()];
    let direct = full.predict(&field, 300, &c);
    for (label, weighting) in [
        ("uniform", PatchWeighting::Uniform),
        ("gaussian", PatchWeighting::Gaussian(0.01)),
    ] {
        let p = patched_epsilon(&native, &field, shape, 300, &c, patch, 2, weighting).unwrap();
        let err = p
            .eps
            .iter()
            .zip(&direct)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        out.push((format!("constant field equality ({label})"), err));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let z: Vec<f64> = (0..patch * patch)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let single = patched_epsilon(
        &native,
        &z,
        ImageShape::new(patch, patch),
        300,
        &c,
        patch,
        2,
        PatchWeighting::Gaussian(0.05),
    )
    .unwrap();
    let expect = native.predict(&z, 300, &c);
    let err = single
        .eps
        .iter()
        .zip(&expect)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    out.push((
        "single window degeneracy".into(),
        if single.windows == 1 {
            err
        } else {
            f64::INFINITY
        },
    ));

    let grid = ImageShape::new(12, 12);
    let zg: Vec<f64> = (0..grid.len())
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let p = patched_epsilon(
        &native,
        &zg,
        grid,
        300,
        &c,
        patch,
        patch / 2,
        PatchWeighting::Uniform,
    )
    .unwrap();
    let mut worst: f64 = 0.0;
    for i in patch / 2..grid.height - patch / 2 {
        for j in patch / 2..grid.width - patch / 2 {
            worst = worst.max((p.weight[i * grid.width + j] - 4.0).abs());
        }
    }
    out.push(("interior uniform weight count 4".into(), worst));
    out
}
