//! Property suites behind the `check` command: adjoint dot tests, finite
//! difference gradient checks, prox against dense solves, and the codec
//! fixed-point analysis.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::codec::{autoencode_iterate, make_codec, CodecKind, CodecSpec, LatentCodec};
use crate::diffmap::{check_vjp, linear_matrix, DiffMap, Shape, VjpCheck};
use crate::error::Result;
use crate::operators::{
    dot_product_check, make_operator, ImageShape, LinearOperator, Measurement, OperatorSpec,
};
use crate::proximal::{prox_gamma, ProxConfig};
use crate::score::{
    make_vp_schedule, train_toy_denoiser, EpsilonInEmbedding, EpsilonInLatent, EpsilonModel,
    GaussianPrior, GmmSpec, NoiseSchedule, ToyArch,
};
use crate::solvers::{likelihood_grad, Problem};
use crate::vecops::rel_dist;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub suite: &'static str,
    pub name: String,
    pub pass: bool,
    /// Worst observed error (or the quantity the check bounds).
    pub value: f64,
    pub tolerance: f64,
}

impl std::fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "[{}] {:<5} {:<48} value {:.3e} (tol {:.1e})",
            self.suite,
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.value,
            self.tolerance
        )
    }
}

fn outcome(
    suite: &'static str,
    name: impl Into<String>,
    value: f64,
    tolerance: f64,
) -> CheckOutcome {
    CheckOutcome {
        suite,
        name: name.into(),
        pass: value <= tolerance,
        value,
        tolerance,
    }
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn default_schedule() -> Arc<NoiseSchedule> {
    Arc::new(make_vp_schedule(1000, 1e-4, 2e-2).expect("default schedule is valid"))
}

/// One spec per operator kind, sized for 8x8 images.
pub fn operator_suite() -> Vec<OperatorSpec> {
    vec![
        OperatorSpec::Identity,
        OperatorSpec::SrAvgpool { factor: 2 },
        OperatorSpec::GaussianBlur {
            size: 5,
            sigma: 1.0,
            kernel: None,
        },
        OperatorSpec::MotionBlur {
            size: 5,
            intensity: 0.5,
        },
        OperatorSpec::InpaintRandom { p: 0.5 },
        OperatorSpec::InpaintFreeform {
            strokes: Default::default(),
            mask: None,
        },
    ]
}

/// Wraps an operator with a deliberately wrong pullback.
struct CorruptedAdjoint<'a>(&'a LinearOperator);

impl DiffMap for CorruptedAdjoint<'_> {
    fn input_shape(&self) -> Shape {
        self.0.input_shape()
    }
    fn output_shape(&self) -> Shape {
        self.0.output_shape()
    }
    fn eval(&self, x: &[f64]) -> Vec<f64> {
        self.0.eval(x)
    }
    fn pullback(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let mut v = self.0.pullback(x, u);
        v[0] += 0.5 * u[u.len() - 1];
        v
    }
}

/// Dot tests over every operator kind plus a corrupted-adjoint sentinel that
/// must be rejected.
pub fn adjoint_suite(trials: usize, seed: u64) -> Result<Vec<CheckOutcome>> {
    let shape = ImageShape::new(8, 8);
    let mut out = Vec::new();
    for spec in operator_suite() {
        let op = make_operator(&spec, shape, seed)?;
        let err = dot_product_check(&op, trials, seed);
        out.push(outcome(
            "adjoint",
            format!("dot test {}", op.kind().name()),
            err,
            1e-8,
        ));
    }
    let blur = make_operator(&operator_suite()[2], shape, seed)?;
    let err = dot_product_check(&CorruptedAdjoint(&blur), trials, seed);
    out.push(CheckOutcome {
        suite: "adjoint",
        name: "corrupted adjoint is rejected".into(),
        pass: err > 1e-8,
        value: err,
        tolerance: 1e-8,
    });
    Ok(out)
}

/// `z_t -> |A D(z0_hat(z_t)) - y|` with [`likelihood_grad`] as its pullback.
struct LikelihoodMap<'a> {
    problem: &'a Problem<'a>,
    t: usize,
    c: Vec<f64>,
}

impl DiffMap for LikelihoodMap<'_> {
    fn input_shape(&self) -> Shape {
        Shape::flat(self.problem.model.latent_dim())
    }
    fn output_shape(&self) -> Shape {
        Shape::flat(1)
    }
    fn eval(&self, z: &[f64]) -> Vec<f64> {
        vec![
            likelihood_grad(self.problem, z, self.t, &self.c)
                .expect("checked inputs")
                .residual,
        ]
    }
    fn pullback(&self, z: &[f64], u: &[f64]) -> Vec<f64> {
        let g = likelihood_grad(self.problem, z, self.t, &self.c).expect("checked inputs");
        g.grad.iter().map(|v| v * u[0]).collect()
    }
}

fn vjp(
    suite: &'static str,
    name: &str,
    map: &dyn DiffMap,
    x: &[f64],
    step: f64,
    tol: f64,
    seed: u64,
) -> Result<CheckOutcome> {
    let cfg = VjpCheck {
        trials: 10,
        step,
        tol,
        seed,
    };
    let r = check_vjp(map, x, &cfg)?;
    Ok(outcome(suite, name, r.max_rel_err, tol))
}

/// Finite-difference checks of every shipped pullback: codecs, score models
/// in `z_t` and `C`, and the full likelihood chain on a linear configuration.
pub fn gradient_suite(seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sched = default_schedule();
    let mut out = Vec::new();
    let (n, k) = (16, 6);

    for (kind, step, tol) in [
        (CodecKind::LinearOrthogonal, 1e-5, 1e-6),
        (CodecKind::LinearPerturbed, 1e-5, 1e-6),
        (CodecKind::MlpTanh, 1e-5, 1e-4),
    ] {
        let codec = make_codec(&CodecSpec::new(kind, n, k, 0.05, seed))?;
        let x = gaussian(&mut rng, n);
        let z = gaussian(&mut rng, k);
        let name = format!("{kind:?}").to_lowercase();
        out.push(vjp(
            "gradient",
            &format!("encoder {name}"),
            &**codec.encoder(),
            &x,
            step,
            tol,
            seed,
        )?);
        out.push(vjp(
            "gradient",
            &format!("decoder {name}"),
            &**codec.decoder(),
            &z,
            step,
            tol,
            seed,
        )?);
    }

    let edim = 4;
    let gmm = GmmSpec::Random {
        components: 3,
        dim: k,
        embedding_dim: edim,
        separation: 2.0,
        var: 0.5,
        weights: None,
        seed,
    }
    .build(sched.clone())?;
    let toy_data: Vec<Vec<f64>> = (0..64).map(|_| gaussian(&mut rng, k)).collect();
    let arch = ToyArch {
        hidden: 8,
        epochs: 5,
        ..ToyArch::default()
    };
    let toy = train_toy_denoiser(&toy_data, None, edim, sched.clone(), &arch, seed)?.model;
    let gauss = GaussianPrior::standard(k, edim, sched.clone());
    let models: [(&str, &dyn EpsilonModel, f64); 3] = [
        ("gaussian", &gauss, 1e-6),
        ("gmm", &gmm, 1e-6),
        ("toy", &toy, 1e-4),
    ];
    for (name, model, tol) in models {
        for t in [50usize, 500, 950] {
            let z = gaussian(&mut rng, k);
            let c = gaussian(&mut rng, edim);
            let in_z = EpsilonInLatent {
                model,
                t,
                c: c.clone(),
            };
            out.push(vjp(
                "gradient",
                &format!("{name} score wrt z_t (t={t})"),
                &in_z,
                &z,
                1e-5,
                tol,
                seed,
            )?);
            let in_c = EpsilonInEmbedding { model, t, z };
            out.push(vjp(
                "gradient",
                &format!("{name} score wrt C (t={t})"),
                &in_c,
                &c,
                1e-5,
                tol,
                seed,
            )?);
        }
    }

    let shape = ImageShape::new(4, 4);
    let codec = make_codec(&CodecSpec::new(
        CodecKind::LinearPerturbed,
        n,
        k,
        0.05,
        seed,
    ))?;
    for spec in [
        OperatorSpec::SrAvgpool { factor: 2 },
        OperatorSpec::InpaintRandom { p: 0.5 },
    ] {
        let op = make_operator(&spec, shape, seed)?;
        let y = Measurement::noiseless(gaussian(&mut rng, op.output_len()));
        for (name, model) in [("gaussian", &gauss as &dyn EpsilonModel), ("gmm", &gmm)] {
            let problem = Problem::new(model, &codec, &op, &y)?;
            let map = LikelihoodMap {
                problem: &problem,
                t: 400,
                c: gaussian(&mut rng, edim),
            };
            let z = gaussian(&mut rng, k);
            let label = format!("likelihood chain {name} {}", op.kind().name());
            out.push(vjp("gradient", &label, &map, &z, 1e-5, 1e-5, seed)?);
        }
    }
    Ok(out)
}

fn dense_prox(a: &DMatrix<f64>, y: &[f64], anchor: &[f64], lambda: f64) -> Vec<f64> {
    let n = a.ncols();
    let m = a.transpose() * a + DMatrix::identity(n, n) * lambda;
    let rhs =
        a.transpose() * DVector::from_column_slice(y) + DVector::from_column_slice(anchor) * lambda;
    m.cholesky()
        .expect("normal matrix is SPD")
        .solve(&rhs)
        .iter()
        .copied()
        .collect()
}

/// Prox against dense normal-equation solves on 8x8 images, and its
/// large- and small-lambda limits.
pub fn prox_suite(seed: u64) -> Result<Vec<CheckOutcome>> {
    let shape = ImageShape::new(8, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let converged = |lambda: f64| ProxConfig {
        lambda,
        cg_iters: 400,
        cg_tol: 1e-13,
    };
    for spec in operator_suite() {
        let op = make_operator(&spec, shape, seed)?;
        let a = linear_matrix(&op);
        let y = Measurement::noiseless(gaussian(&mut rng, op.output_len()));
        let anchor = gaussian(&mut rng, shape.len());
        let name = op.kind().name();
        let mut worst: f64 = 0.0;
        for lambda in [0.1, 1.0, 10.0] {
            let x = prox_gamma(&op, &y, &anchor, &converged(lambda))?;
            worst = worst.max(rel_dist(&x, &dense_prox(&a, &y.y, &anchor, lambda)));
        }
        out.push(outcome(
            "prox",
            format!("prox vs dense solve {name}"),
            worst,
            1e-6,
        ));

        let x = prox_gamma(&op, &y, &anchor, &converged(1e6))?;
        let gap = x
            .iter()
            .zip(&anchor)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        out.push(outcome(
            "prox",
            format!("lambda=1e6 stays at anchor {name}"),
            gap,
            1e-4,
        ));

        if op.kind().is_mask() {
            let x = prox_gamma(&op, &y, &anchor, &converged(1e-6))?;
            let ax = op.forward(&x)?;
            let gap = ax
                .iter()
                .zip(&y.y)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            out.push(outcome(
                "prox",
                format!("lambda=1e-6 matches measurement {name}"),
                gap,
                1e-4,
            ));
        }
    }
    Ok(out)
}

/// Result of iterating `x -> D(E(x))` for one codec over many seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointCurve {
    /// Mean over seeds of the per-iteration distance `|x_{j+1} - x_j|`.
    pub mean_distance: Vec<f64>,
}

pub fn fixed_point_curve(codec: &LatentCodec, seeds: u64, iters: usize) -> Result<FixedPointCurve> {
    let n = codec.image_dim();
    let mut mean = vec![0.0; iters];
    for s in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let x0 = gaussian(&mut rng, n);
        for (m, d) in mean.iter_mut().zip(autoencode_iterate(codec, &x0, iters)?) {
            *m += d / seeds as f64;
        }
    }
    Ok(FixedPointCurve {
        mean_distance: mean,
    })
}

/// Imperfect codecs keep drifting under repeated autoencoding; orthogonal
/// codecs reach their fixed point after one pass.
pub fn fixed_point_suite(seed: u64) -> Result<Vec<CheckOutcome>> {
    let (n, k, seeds, iters) = (64, 16, 32, 25);
    let mut out = Vec::new();
    let imperfect = make_codec(&CodecSpec::new(
        CodecKind::LinearPerturbed,
        n,
        k,
        0.05,
        seed,
    ))?;
    let curve = fixed_point_curve(&imperfect, seeds, iters)?;
    let tail = &curve.mean_distance[iters - 12..];
    let worst_drop = tail.windows(2).map(|w| w[0] - w[1]).fold(0.0f64, f64::max);
    out.push(CheckOutcome {
        suite: "fixed-point",
        name: "imperfect codec distance non-decreasing".into(),
        pass: worst_drop <= 0.0,
        value: worst_drop,
        tolerance: 0.0,
    });
    let exact = make_codec(&CodecSpec::new(
        CodecKind::LinearOrthogonal,
        n,
        k,
        0.0,
        seed,
    ))?;
    let curve = fixed_point_curve(&exact, seeds, iters)?;
    let after_first = curve.mean_distance[1..]
        .iter()
        .copied()
        .fold(0.0f64, f64::max);
    out.push(outcome(
        "fixed-point",
        "orthogonal codec fixed after one pass",
        after_first,
        1e-10,
    ));
    Ok(out)
}

/// Every suite, with the elapsed time of each.
pub fn run_checks(seed: u64) -> Result<Vec<(CheckOutcome, f64)>> {
    type Suite = fn(u64) -> Result<Vec<CheckOutcome>>;
    let suites: [Suite; 4] = [
        |s| adjoint_suite(100, s),
        gradient_suite,
        prox_suite,
        fixed_point_suite,
    ];
    let mut out = Vec::new();
    for suite in suites {
        let start = Instant::now();
        let results = suite(seed)?;
        let secs = start.elapsed().as_secs_f64();
        out.extend(results.into_iter().map(|r| (r, secs)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vecops::norm;

    #[test]
    fn adjoint_suite_passes_and_catches_the_sentinel() {
        let results = adjoint_suite(20, 3).unwrap();
        assert!(results.iter().all(|r| r.pass), "{results:#?}");
        assert!(results.last().unwrap().value > 1e-3);
    }

    #[test]
    fn fixed_point_orthogonal_is_exact() {
        let codec =
            make_codec(&CodecSpec::new(CodecKind::LinearOrthogonal, 16, 4, 0.0, 1)).unwrap();
        let curve = fixed_point_curve(&codec, 4, 5).unwrap();
        assert!(curve.mean_distance[0] > 0.0);
        assert!(curve.mean_distance[1..].iter().all(|d| *d <= 1e-10));
        assert_eq!(norm(&[3.0, 4.0]), 5.0);
    }
}
