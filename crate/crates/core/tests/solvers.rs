mod common;

use p2l::codec::{make_codec, CodecKind, CodecSpec, LatentCodec};
use p2l::diffmap::{check_vjp, DiffMap, Shape, VjpCheck};
use p2l::harness::gaussian_posterior_oracle;
use p2l::operators::{make_operator, ImageShape, LinearOperator, Measurement, OperatorSpec};
use p2l::score::{Component, ConditionalGmm, EpsilonModel, GaussianPrior, ScoreModel};
use p2l::solvers::{
    fixed_point_penalty_grad, optimize_embedding, prompt_loss_and_grad, run_baseline, run_p2l,
    run_solver, FixedPoint, Problem, PromptConfig, SolverConfig, SolverKind,
};
use p2l::vecops::rel_dist;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Scalar function with an analytic gradient, exposed as a `DiffMap` so
/// `check_vjp` can compare it against finite differences.
struct ScalarFn<F> {
    n: usize,
    f: F,
}

impl<F: Fn(&[f64]) -> (f64, Vec<f64>) + Send + Sync> DiffMap for ScalarFn<F> {
    fn input_shape(&self) -> Shape {
        Shape::flat(self.n)
    }
    fn output_shape(&self) -> Shape {
        Shape::flat(1)
    }
    fn eval(&self, x: &[f64]) -> Vec<f64> {
        vec![(self.f)(x).0]
    }
    fn pullback(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        (self.f)(x).1.into_iter().map(|g| g * u[0]).collect()
    }
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Two well-separated components in 4 latent dimensions with orthogonal tags.
fn two_component_gmm() -> ConditionalGmm {
    let comp = |sign: f64, weight: f64, tag: Vec<f64>| Component {
        mean: vec![2.0 * sign, -sign, 0.5 * sign, 1.5 * sign],
        var: vec![0.3; 4],
        weight,
        tag,
    };
    ConditionalGmm::new(
        vec![
            comp(1.0, 0.7, vec![1.0, 0.0]),
            comp(-1.0, 0.3, vec![0.0, 1.0]),
        ],
        common::schedule(),
    )
    .unwrap()
}

struct Fixture {
    gmm: ScoreModel,
    codec: LatentCodec,
    op: LinearOperator,
    y: Measurement,
}

fn fixture(kind: CodecKind) -> Fixture {
    let gmm = two_component_gmm();
    let codec = make_codec(&CodecSpec::new(kind, 8, 4, 0.05, 3)).unwrap();
    let op = make_operator(
        &OperatorSpec::InpaintRandom { p: 0.3 },
        ImageShape::new(2, 4),
        5,
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let z = gmm.sample(&mut rng, &[0.0, 0.0], Some(1));
    let y = op.measure(&codec.decode(&z).unwrap(), 0.01, 2).unwrap();
    Fixture {
        gmm: ScoreModel::GmmConditional(gmm),
        codec,
        op,
        y,
    }
}

#[test]
fn prompt_gradient_matches_finite_differences() {
    let fx = fixture(CodecKind::LinearPerturbed);
    let problem = Problem::new(&fx.gmm, &fx.codec, &fx.op, &fx.y).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for conditional_mean in [false, true] {
        // below t = 300 the responsibilities saturate and the gradient sits
        // under the rounding noise of the loss
        for t in [300usize, 500, 800] {
            let cfg = PromptConfig {
                conditional_mean,
                ..PromptConfig::default()
            };
            let z = gaussian(&mut rng, 4);
            let map = ScalarFn {
                n: 2,
                f: |c: &[f64]| prompt_loss_and_grad(&problem, &z, t, c, &cfg),
            };
            let c0 = gaussian(&mut rng, 2);
            let report = check_vjp(
                &map,
                &c0,
                &VjpCheck {
                    tol: 1e-5,
                    ..VjpCheck::default()
                },
            )
            .unwrap();
            assert!(
                report.pass,
                "conditional_mean={conditional_mean} t={t}: {}",
                report.max_rel_err
            );
        }
    }
}

#[test]
fn fixed_point_penalty_gradients_match_finite_differences() {
    for (kind, tol) in [
        (CodecKind::LinearPerturbed, 1e-6),
        (CodecKind::MlpTanh, 1e-4),
    ] {
        let fx = fixture(kind);
        let problem = Problem::new(&fx.gmm, &fx.codec, &fx.op, &fx.y).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for form in [FixedPoint::Autoencode, FixedPoint::Glued] {
            let map = ScalarFn {
                n: 4,
                f: |w: &[f64]| {
                    let (g, v) = fixed_point_penalty_grad(&problem, w, form);
                    (v, g)
                },
            };
            let w = gaussian(&mut rng, 4);
            let report = check_vjp(
                &map,
                &w,
                &VjpCheck {
                    tol,
                    ..VjpCheck::default()
                },
            )
            .unwrap();
            assert!(report.pass, "{kind:?} {form:?}: {}", report.max_rel_err);
        }
    }
}

#[test]
fn prompt_tuning_raises_the_true_component_responsibility() {
    let fx = fixture(CodecKind::LinearOrthogonal);
    let ScoreModel::GmmConditional(gmm) = &fx.gmm else {
        unreachable!()
    };
    let problem = Problem::new(&fx.gmm, &fx.codec, &fx.op, &fx.y).unwrap();
    let cfg = PromptConfig {
        iters: 5,
        lr: 1e-2,
        ..PromptConfig::default()
    };
    let null = vec![0.0; 2];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for t in [300usize, 600] {
        let ab = gmm.schedule().alpha_bar(t);
        let z0 = gmm.sample(&mut rng, &null, Some(1));
        let z_t: Vec<f64> = z0
            .iter()
            .map(|v| {
                let g: f64 = StandardNormal.sample(&mut rng);
                ab.sqrt() * v + (1.0 - ab).sqrt() * g
            })
            .collect();
        let res =
            optimize_embedding(&problem, &z_t, t, &null, &cfg, &Default::default(), None).unwrap();
        let before = gmm.responsibilities(&z_t, t, &null)[1];
        let after = gmm.responsibilities(&z_t, t, &res.c)[1];
        assert!(after > before, "t={t}: {after} <= {before}");
        assert!(res.final_loss.unwrap() < res.loss_history[0]);
    }
}

fn linear_gaussian_setup() -> (
    ScoreModel,
    LatentCodec,
    LinearOperator,
    Measurement,
    Vec<f64>,
) {
    let sched = common::schedule();
    let prior = GaussianPrior::standard(8, 2, sched);
    let codec = make_codec(&CodecSpec::new(CodecKind::LinearOrthogonal, 16, 8, 0.0, 1)).unwrap();
    let op = make_operator(
        &OperatorSpec::InpaintRandom { p: 0.3 },
        ImageShape::new(4, 4),
        6,
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let z = gaussian(&mut rng, 8);
    let y = op.measure(&codec.decode(&z).unwrap(), 0.01, 9).unwrap();
    let oracle = gaussian_posterior_oracle(&prior.mean, &prior.var, &codec, &op, &y).unwrap();
    (
        ScoreModel::GaussianAnalytic(prior),
        codec,
        op,
        y,
        oracle.posterior_mean,
    )
}

#[test]
fn p2l_lands_near_the_exact_posterior_mean() {
    let (model, codec, op, y, mean) = linear_gaussian_setup();
    let problem = Problem::new(&model, &codec, &op, &y).unwrap();
    let mut cfg = SolverConfig::preset(SolverKind::P2l);
    cfg.prompt.iters = 0;
    cfg.nfe = 100;
    let traj = run_p2l(&problem, &cfg).unwrap();
    assert!(
        rel_dist(&traj.final_image, &mean) < 0.1,
        "{}",
        rel_dist(&traj.final_image, &mean)
    );
    assert_eq!(traj.records.len(), 100);
    assert!(traj.records.iter().filter(|r| r.projected).count() == 25);
}

#[test]
fn solvers_are_deterministic_per_seed() {
    let fx = fixture(CodecKind::LinearPerturbed);
    let problem = Problem::new(&fx.gmm, &fx.codec, &fx.op, &fx.y).unwrap();
    for kind in [
        SolverKind::P2l,
        SolverKind::P2lAdam,
        SolverKind::Ldir,
        SolverKind::Psld,
    ] {
        let mut cfg = SolverConfig::preset(kind);
        cfg.nfe = 20;
        cfg.eta = 0.5;
        let a = run_solver(&problem, &cfg).unwrap();
        let b = run_solver(&problem, &cfg).unwrap();
        assert_eq!(a.final_latent, b.final_latent, "{kind:?}");
        assert_eq!(a.to_csv(), b.to_csv());
        cfg.seed = 1;
        assert_ne!(
            run_solver(&problem, &cfg).unwrap().final_latent,
            a.final_latent
        );
    }
}

#[test]
fn image_space_solvers_need_the_identity_codec() {
    let (_, codec, op, y, _) = linear_gaussian_setup();
    let image_model =
        ScoreModel::GaussianAnalytic(GaussianPrior::standard(16, 2, common::schedule()));
    let latent_model =
        ScoreModel::GaussianAnalytic(GaussianPrior::standard(8, 2, common::schedule()));
    let identity = LatentCodec::identity(16);
    for kind in [SolverKind::Dps, SolverKind::Dds, SolverKind::Diffpir] {
        let mut cfg = SolverConfig::preset(kind);
        cfg.nfe = 10;
        let latent = Problem::new(&latent_model, &codec, &op, &y).unwrap();
        assert!(run_baseline(&latent, &cfg).is_err());
        let pixel = Problem::new(&image_model, &identity, &op, &y).unwrap();
        let traj = run_baseline(&pixel, &cfg).unwrap();
        assert!(traj.final_image.iter().all(|v| v.is_finite()));
        assert!(run_p2l(&pixel, &cfg).is_err());
    }
}

#[test]
fn diffpir_falls_back_to_cg_for_blur() {
    let sched = common::schedule();
    let model = ScoreModel::GaussianAnalytic(GaussianPrior::standard(16, 2, sched));
    let identity = LatentCodec::identity(16);
    let blur = make_operator(
        &OperatorSpec::GaussianBlur {
            size: 3,
            sigma: 1.0,
            kernel: None,
        },
        ImageShape::new(4, 4),
        0,
    )
    .unwrap();
    let y = blur.measure(&[0.5; 16], 0.05, 1).unwrap();
    let problem = Problem::new(&model, &identity, &blur, &y).unwrap();
    let mut cfg = SolverConfig::preset(SolverKind::Diffpir);
    cfg.nfe = 10;
    let traj = run_baseline(&problem, &cfg).unwrap();
    assert!(traj.records.iter().all(|r| r.cg_fallback));
    let mask = make_operator(
        &OperatorSpec::InpaintRandom { p: 0.5 },
        ImageShape::new(4, 4),
        0,
    )
    .unwrap();
    let y = mask.measure(&[0.5; 16], 0.05, 1).unwrap();
    let problem = Problem::new(&model, &identity, &mask, &y).unwrap();
    let traj = run_baseline(&problem, &cfg).unwrap();
    assert!(traj.records.iter().all(|r| !r.cg_fallback));
}

#[test]
fn problem_rejects_mismatched_dimensions() {
    let (model, _, op, y, _) = linear_gaussian_setup();
    let wrong = make_codec(&CodecSpec::new(CodecKind::LinearOrthogonal, 16, 6, 0.0, 1)).unwrap();
    assert!(Problem::new(&model, &wrong, &op, &y).is_err());
}
