//! Experiment driver: configuration, seeded synthesis of ground truths and
//! measurements, oracle posteriors, metrics and report files.

mod check;
mod oracle;
mod report;

pub use check::{
    adjoint_suite, fixed_point_curve, fixed_point_suite, gradient_suite, operator_suite,
    prox_suite, run_checks, CheckOutcome, FixedPointCurve,
};
pub use oracle::{gaussian_posterior_oracle, psnr, OracleResult, PSNR_CAP};
pub use report::{
    read_pfm, read_png16, summary_csv, write_pfm, write_png16, SummaryRow, SUMMARY_COLUMNS,
    SUMMARY_NOTE,
};

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::codec::{make_codec, CodecSpec, LatentCodec};
use crate::diffmap::{linear_matrix, DiffMap};
use crate::error::{Error, Result};
use crate::operators::{make_operator, ImageShape, LinearOperator, Measurement, OperatorSpec};
use crate::score::{
    make_vp_schedule, train_toy_denoiser, Component, ConditionalGmm, EpsilonModel, GaussianPrior,
    GmmSpec, NoiseSchedule, ScheduleSpec, ScoreModel, ToyArch,
};
use crate::solvers::{run_solver, Problem, SolverConfig, Trajectory};
use crate::vecops::{mse, norm, rel_dist};

/// Environment variable that overrides the configured output directory.
pub const OUTPUT_DIR_ENV: &str = "P2L_OUTPUT_DIR";

fn default_embedding_dim() -> usize {
    8
}
fn default_train_samples() -> usize {
    512
}

/// Score-model description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    GaussianAnalytic {
        dim: usize,
        #[serde(default)]
        mean: Option<Vec<f64>>,
        #[serde(default)]
        var: Option<Vec<f64>>,
        #[serde(default = "default_embedding_dim")]
        embedding_dim: usize,
    },
    GmmConditional {
        gmm: GmmSpec,
    },
    /// Network trained on samples of `prior`, which also supplies ground truths.
    LearnedToy {
        prior: GmmSpec,
        #[serde(default = "default_train_samples")]
        train_samples: usize,
        #[serde(default)]
        arch: ToyArch,
        #[serde(default)]
        seed: u64,
    },
}

/// Source of ground-truth latents.
#[derive(Debug, Clone)]
pub enum Prior {
    Gaussian(GaussianPrior),
    Mixture(ConditionalGmm),
}

impl Prior {
    /// Draws a latent; `component` pins the mixture component.
    pub fn sample(&self, rng: &mut ChaCha8Rng, component: Option<usize>) -> Result<Vec<f64>> {
        match self {
            Prior::Gaussian(g) => Ok(g.sample(rng)),
            Prior::Mixture(m) => {
                if let Some(i) = component {
                    if i >= m.components().len() {
                        return Err(Error::Config(format!(
                            "dataset.component {i} out of range for {} components",
                            m.components().len()
                        )));
                    }
                }
                Ok(m.sample(rng, &vec![0.0; m.embedding_dim()], component))
            }
        }
    }

    fn components(&self) -> Vec<Component> {
        match self {
            Prior::Gaussian(g) => vec![Component {
                mean: g.mean.clone(),
                var: g.var.clone(),
                weight: 1.0,
                tag: vec![0.0; g.embedding_dim],
            }],
            Prior::Mixture(m) => m.components().to_vec(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BuiltModel {
    pub score: Arc<ScoreModel>,
    pub prior: Prior,
}

pub fn build_model(spec: &ModelSpec, schedule: Arc<NoiseSchedule>) -> Result<BuiltModel> {
    match spec {
        ModelSpec::GaussianAnalytic {
            dim,
            mean,
            var,
            embedding_dim,
        } => {
            let g = GaussianPrior::new(
                mean.clone().unwrap_or_else(|| vec![0.0; *dim]),
                var.clone().unwrap_or_else(|| vec![1.0; *dim]),
                *embedding_dim,
                schedule,
            )?;
            if g.mean.len() != *dim {
                return Err(Error::dim("gaussian model", dim, g.mean.len()));
            }
            Ok(BuiltModel {
                score: Arc::new(ScoreModel::GaussianAnalytic(g.clone())),
                prior: Prior::Gaussian(g),
            })
        }
        ModelSpec::GmmConditional { gmm } => {
            let m = gmm.build(schedule)?;
            Ok(BuiltModel {
                score: Arc::new(ScoreModel::GmmConditional(m.clone())),
                prior: Prior::Mixture(m),
            })
        }
        ModelSpec::LearnedToy {
            prior,
            train_samples,
            arch,
            seed,
        } => {
            let m = prior.build(schedule.clone())?;
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let null = vec![0.0; m.embedding_dim()];
            let data: Vec<Vec<f64>> = (0..*train_samples)
                .map(|_| m.sample(&mut rng, &null, None))
                .collect();
            let trained =
                train_toy_denoiser(&data, None, m.embedding_dim(), schedule, arch, *seed)?;
            Ok(BuiltModel {
                score: Arc::new(ScoreModel::LearnedToy(trained.model)),
                prior: Prior::Mixture(m),
            })
        }
    }
}

/// Pushes a latent prior through a linear decoder, keeping per-pixel
/// variances (the diagonal of `D Sigma D^T`) so the image-space prior is
/// full rank.
pub fn image_space_prior(
    prior: &Prior,
    codec: &LatentCodec,
    schedule: Arc<NoiseSchedule>,
) -> Result<ConditionalGmm> {
    if !codec.is_linear() {
        return Err(Error::Config(
            "an image-space model can only be derived through a linear codec; set image_model"
                .into(),
        ));
    }
    let d = linear_matrix(&**codec.decoder());
    let offset = codec.decoder().eval(&vec![0.0; codec.latent_dim()]);
    let comps = prior
        .components()
        .into_iter()
        .map(|c| {
            let mean: Vec<f64> = d
                .row_iter()
                .zip(&offset)
                .map(|(row, o)| row.iter().zip(&c.mean).map(|(a, m)| a * m).sum::<f64>() + o)
                .collect();
            let var: Vec<f64> = d
                .row_iter()
                .map(|row| {
                    row.iter()
                        .zip(&c.var)
                        .map(|(a, v)| a * a * v)
                        .sum::<f64>()
                        .max(1e-6)
                })
                .collect();
            Component { mean, var, ..c }
        })
        .collect();
    ConditionalGmm::new(comps, schedule)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub n_instances: usize,
    #[serde(default)]
    pub seed: u64,
    /// Use one operator draw (mask, motion path) for every instance.
    #[serde(default)]
    pub fixed_operator: bool,
    /// Draw every ground truth from this mixture component instead of the
    /// whole prior.
    #[serde(default)]
    pub component: Option<usize>,
}

fn default_hi() -> f64 {
    1.0
}
fn default_image_count() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageOutput {
    /// How many instances get PNG output.
    #[serde(default = "default_image_count")]
    pub count: usize,
    /// Values mapped to black and white before clamping.
    #[serde(default)]
    pub lo: f64,
    #[serde(default = "default_hi")]
    pub hi: f64,
}

impl Default for ImageOutput {
    fn default() -> Self {
        ImageOutput {
            count: default_image_count(),
            lo: 0.0,
            hi: default_hi(),
        }
    }
}

fn default_name() -> String {
    "experiment".into()
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("p2l_output")
}
fn default_peak() -> f64 {
    1.0
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub image: ImageShape,
    pub operator: OperatorSpec,
    pub codec: CodecSpec,
    pub model: ModelSpec,
    /// Prior for the image-space solvers; derived from `model` through a
    /// linear codec when absent.
    #[serde(default)]
    pub image_model: Option<ModelSpec>,
    #[serde(default)]
    pub schedule: ScheduleSpec,
    /// Solver entries: a `solver` key, optional `label`, and overrides of
    /// that solver's preset.
    pub solvers: Vec<Value>,
    pub dataset: DatasetSpec,
    pub sigma_y: f64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_peak")]
    pub psnr_peak: f64,
    #[serde(default)]
    pub images: ImageOutput,
    #[serde(default = "default_true")]
    pub write_trajectories: bool,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Parsed solver entries with unique labels.
    pub fn solver_entries(&self) -> Result<Vec<(String, SolverConfig)>> {
        let mut out: Vec<(String, SolverConfig)> = Vec::with_capacity(self.solvers.len());
        for v in &self.solvers {
            let cfg = SolverConfig::from_value(v)?;
            let base = v
                .get("label")
                .and_then(Value::as_str)
                .map(str::to_string)
                .unwrap_or_else(|| cfg.solver.name().to_string());
            if base.is_empty()
                || !base
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || "_-.".contains(c))
            {
                return Err(Error::Config(format!(
                    "solver label {base:?} must be non-empty [A-Za-z0-9_.-]"
                )));
            }
            let mut label = base.clone();
            let mut n = 2;
            while out.iter().any(|(l, _)| *l == label) {
                label = format!("{base}_{n}");
                n += 1;
            }
            out.push((label, cfg));
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dataset.n_instances == 0 {
            return Err(Error::Config("dataset.n_instances must be >= 1".into()));
        }
        if self.solvers.is_empty() {
            return Err(Error::Config(
                "at least one solver entry is required".into(),
            ));
        }
        if self.codec.n != self.image.len() {
            return Err(Error::Config(format!(
                "codec image dimension {} does not match image {}x{}",
                self.codec.n, self.image.height, self.image.width
            )));
        }
        if !(self.sigma_y >= 0.0) {
            return Err(Error::Config("sigma_y must be >= 0".into()));
        }
        if !(self.psnr_peak > 0.0) || !(self.images.hi > self.images.lo) {
            return Err(Error::Config(
                "psnr_peak must be positive and images.lo < images.hi".into(),
            ));
        }
        self.solver_entries()?;
        Ok(())
    }

    /// The configured output directory unless [`OUTPUT_DIR_ENV`] is set.
    pub fn resolved_output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_DIR_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => self.output_dir.clone(),
        }
    }
}

/// Deterministic child seed for stream `stream` of `seed` (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Everything the solvers of one experiment share.
pub struct Setup {
    pub config: ExperimentConfig,
    pub schedule: Arc<NoiseSchedule>,
    pub codec: LatentCodec,
    pub model: BuiltModel,
    pub image_model: Option<Arc<ScoreModel>>,
    pub solvers: Vec<(String, SolverConfig)>,
}

impl Setup {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let s = config.schedule;
        let schedule = Arc::new(make_vp_schedule(s.steps, s.beta_min, s.beta_max)?);
        let codec = make_codec(&config.codec)?;
        let model = build_model(&config.model, schedule.clone())?;
        if model.score.latent_dim() != codec.latent_dim() {
            return Err(Error::Config(format!(
                "model latent dimension {} does not match codec latent dimension {}",
                model.score.latent_dim(),
                codec.latent_dim()
            )));
        }
        let solvers = config.solver_entries()?;
        let image_model = if solvers.iter().any(|(_, c)| c.solver.is_image_space()) {
            let m = match &config.image_model {
                Some(spec) => build_model(spec, schedule.clone())?.score,
                None => Arc::new(ScoreModel::GmmConditional(image_space_prior(
                    &model.prior,
                    &codec,
                    schedule.clone(),
                )?)),
            };
            if m.latent_dim() != config.image.len() {
                return Err(Error::Config(
                    "image_model dimension must equal the pixel count".into(),
                ));
            }
            Some(m)
        } else {
            None
        };
        Ok(Setup {
            config,
            schedule,
            codec,
            model,
            image_model,
            solvers,
        })
    }

    /// Ground truth, operator and measurement for instance `index`.
    pub fn instance(&self, index: usize) -> Result<Instance> {
        let cfg = &self.config;
        let seed = derive_seed(cfg.dataset.seed, index as u64);
        let op_seed = if cfg.dataset.fixed_operator {
            derive_seed(cfg.dataset.seed, u64::MAX)
        } else {
            derive_seed(seed, 1)
        };
        let op = make_operator(&cfg.operator, cfg.image, op_seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 2));
        let z_true = self.model.prior.sample(&mut rng, cfg.dataset.component)?;
        let x_true = self.codec.decode(&z_true)?;
        let y = op.measure(&x_true, cfg.sigma_y, derive_seed(seed, 3))?;
        let oracle = match &self.model.prior {
            Prior::Gaussian(g) if self.codec.is_linear() && cfg.sigma_y > 0.0 => Some(
                gaussian_posterior_oracle(&g.mean, &g.var, &self.codec, &op, &y)?,
            ),
            _ => None,
        };
        Ok(Instance {
            index,
            seed,
            op,
            z_true,
            x_true,
            y,
            oracle,
        })
    }

    /// Runs solver entry `which` on `inst`.
    pub fn solve(&self, inst: &Instance, which: usize) -> Result<Trajectory> {
        let (_, base) = &self.solvers[which];
        let mut cfg = base.clone();
        cfg.seed = derive_seed(inst.seed ^ base.seed, 4);
        if cfg.solver.is_image_space() {
            let model = self
                .image_model
                .as_ref()
                .expect("image model built when needed");
            let identity = LatentCodec::identity(self.config.image.len());
            run_solver(&Problem::new(&**model, &identity, &inst.op, &inst.y)?, &cfg)
        } else {
            run_solver(
                &Problem::new(&*self.model.score, &self.codec, &inst.op, &inst.y)?,
                &cfg,
            )
        }
    }
}

pub struct Instance {
    pub index: usize,
    pub seed: u64,
    pub op: LinearOperator,
    pub z_true: Vec<f64>,
    pub x_true: Vec<f64>,
    pub y: Measurement,
    pub oracle: Option<OracleResult>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverMetrics {
    pub mse: f64,
    pub psnr: f64,
    /// `|A x - y|` for the final image.
    pub residual: f64,
    /// `|x - oracle| / |oracle|` when the oracle exists.
    pub oracle_rel: Option<f64>,
}

pub fn metrics(inst: &Instance, x: &[f64], peak: f64) -> Result<SolverMetrics> {
    let ax = inst.op.forward(x)?;
    Ok(SolverMetrics {
        mse: mse(x, &inst.x_true),
        psnr: psnr(x, &inst.x_true, peak)?,
        residual: norm(
            &ax.iter()
                .zip(&inst.y.y)
                .map(|(a, b)| a - b)
                .collect::<Vec<_>>(),
        ),
        oracle_rel: inst.oracle.as_ref().map(|o| rel_dist(x, &o.posterior_mean)),
    })
}

pub struct InstanceOutcome {
    pub instance: Instance,
    /// One entry per solver, in configuration order.
    pub runs: Vec<Result<(Trajectory, SolverMetrics)>>,
}

pub struct ExperimentReport {
    pub rows: Vec<SummaryRow>,
    pub outcomes: Vec<InstanceOutcome>,
    pub output_dir: PathBuf,
    pub failures: usize,
}

/// Runs every instance (in parallel) and every solver, without writing files.
pub fn evaluate(setup: &Setup) -> Result<Vec<InstanceOutcome>> {
    let peak = setup.config.psnr_peak;
    (0..setup.config.dataset.n_instances)
        .into_par_iter()
        .map(|i| {
            let instance = setup.instance(i)?;
            let runs = (0..setup.solvers.len())
                .map(|j| {
                    let traj = setup.solve(&instance, j)?;
                    let m = metrics(&instance, &traj.final_image, peak)?;
                    Ok((traj, m))
                })
                .collect();
            Ok(InstanceOutcome { instance, runs })
        })
        .collect()
}

pub fn summarize(setup: &Setup, outcomes: &[InstanceOutcome]) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    for (j, (label, _)) in setup.solvers.iter().enumerate() {
        let ok: Vec<&SolverMetrics> = outcomes
            .iter()
            .filter_map(|o| o.runs[j].as_ref().ok().map(|(_, m)| m))
            .collect();
        let col = |f: &dyn Fn(&SolverMetrics) -> f64| ok.iter().map(|m| f(m)).collect::<Vec<_>>();
        rows.push(SummaryRow::from_values(label, "mse", &col(&|m| m.mse)));
        rows.push(SummaryRow::from_values(label, "psnr", &col(&|m| m.psnr)));
        rows.push(SummaryRow::from_values(
            label,
            "residual",
            &col(&|m| m.residual),
        ));
        let oracle: Vec<f64> = ok.iter().filter_map(|m| m.oracle_rel).collect();
        if !oracle.is_empty() {
            rows.push(SummaryRow::from_values(label, "oracle_rel_dist", &oracle));
        }
        let failed = outcomes.iter().filter(|o| o.runs[j].is_err()).count();
        rows.push(SummaryRow {
            solver: label.clone(),
            metric: "failures".into(),
            mean: failed as f64,
            std: 0.0,
            count: outcomes.len(),
        });
    }
    rows
}

/// Runs the experiment and writes `summary.csv`, per-instance trajectory CSVs,
/// PNG images and the operator kernel or mask as PFM.
pub fn run_experiment(config: ExperimentConfig) -> Result<ExperimentReport> {
    let out = config.resolved_output_dir();
    let setup = Setup::new(config)?;
    let outcomes = evaluate(&setup)?;
    let rows = summarize(&setup, &outcomes);
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let summary = out.join("summary.csv");
    fs::write(&summary, summary_csv(&rows)).map_err(|e| Error::io(&summary, e))?;

    let cfg = &setup.config;
    let mut failures = 0;
    for o in &outcomes {
        let i = o.instance.index;
        for (j, run) in o.runs.iter().enumerate() {
            let label = &setup.solvers[j].0;
            match run {
                Ok((traj, _)) => {
                    if cfg.write_trajectories {
                        let dir = out.join("trajectories");
                        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                        traj.write_csv(&dir.join(format!("{label}_{i:03}.csv")))?;
                    }
                    if i < cfg.images.count {
                        emit_image(&out, &format!("{i:03}_{label}.png"), &traj.final_image, cfg)?;
                    }
                }
                Err(e) => {
                    failures += 1;
                    log::warn!("instance {i}, solver {label}: {e}");
                }
            }
        }
        if i < cfg.images.count {
            emit_image(&out, &format!("{i:03}_truth.png"), &o.instance.x_true, cfg)?;
            emit_image(
                &out,
                &format!("{i:03}_measurement.png"),
                &o.instance.op.adjoint(&o.instance.y.y)?,
                cfg,
            )?;
        }
    }
    if let Some(first) = outcomes.first() {
        export_operator(&first.instance.op, &out.join("operator.pfm"))?;
    }
    if failures == outcomes.len() * setup.solvers.len() {
        return Err(Error::Config(format!("all {failures} solver runs failed")));
    }
    Ok(ExperimentReport {
        rows,
        outcomes,
        output_dir: out,
        failures,
    })
}

fn emit_image(dir: &Path, name: &str, data: &[f64], cfg: &ExperimentConfig) -> Result<()> {
    let images = dir.join("images");
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    write_png16(
        &images.join(name),
        data,
        cfg.image,
        cfg.images.lo,
        cfg.images.hi,
    )
}

/// Image of an operator: the blur kernel, the keep mask (1 = observed), or
/// for pooling and identity the response `A^T A` to a centred impulse.
pub fn operator_image(op: &LinearOperator) -> (Vec<f64>, ImageShape) {
    if let Some(k) = op.kernel() {
        return (k.data.clone(), ImageShape::new(k.size, k.size));
    }
    let shape = op.image_shape();
    if let Some(m) = op.mask() {
        return (m.iter().map(|k| *k as u8 as f64).collect(), shape);
    }
    let mut impulse = vec![0.0; shape.len()];
    impulse[(shape.height / 2) * shape.width + shape.width / 2] = 1.0;
    (op.normal(&impulse), shape)
}

/// Writes [`operator_image`] as PFM.
pub fn export_operator(op: &LinearOperator, path: &Path) -> Result<()> {
    let (data, shape) = operator_image(op);
    write_pfm(path, &data, shape)
}
