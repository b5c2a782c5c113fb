//! Linear degradation operators `A` and measurement synthesis.
//!
//! Each operator's transpose is its [`DiffMap::pullback`]; nothing else in the
//! crate computes `A^T` by hand.

mod kernels;

pub use kernels::{
    freeform_keep_mask, gaussian_kernel, motion_kernel, random_keep_mask, Kernel, StrokeParams,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffmap::{random_unit, DiffMap, Shape};
use crate::error::{ensure_len, Error, Result};
use crate::vecops::dot;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageShape {
    pub height: usize,
    pub width: usize,
}

impl ImageShape {
    pub fn new(height: usize, width: usize) -> Self {
        ImageShape { height, width }
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    Identity,
    SrAvgpool,
    GaussianBlur,
    MotionBlur,
    InpaintRandom,
    InpaintFreeform,
}

impl OperatorKind {
    pub fn name(self) -> &'static str {
        match self {
            OperatorKind::Identity => "identity",
            OperatorKind::SrAvgpool => "sr_avgpool",
            OperatorKind::GaussianBlur => "gaussian_blur",
            OperatorKind::MotionBlur => "motion_blur",
            OperatorKind::InpaintRandom => "inpaint_random",
            OperatorKind::InpaintFreeform => "inpaint_freeform",
        }
    }

    pub fn is_mask(self) -> bool {
        matches!(
            self,
            OperatorKind::InpaintRandom | OperatorKind::InpaintFreeform
        )
    }
}

fn default_blur_size() -> usize {
    9
}
fn default_sigma() -> f64 {
    1.5
}
fn default_intensity() -> f64 {
    0.5
}
fn default_drop() -> f64 {
    0.8
}

/// Serializable operator description; `seed` randomizes motion kernels and masks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OperatorSpec {
    Identity,
    SrAvgpool {
        factor: usize,
    },
    GaussianBlur {
        #[serde(default = "default_blur_size")]
        size: usize,
        #[serde(default = "default_sigma")]
        sigma: f64,
        /// Explicit kernel rows; overrides `size`/`sigma` when present.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        kernel: Option<Vec<Vec<f64>>>,
    },
    MotionBlur {
        #[serde(default = "default_blur_size")]
        size: usize,
        #[serde(default = "default_intensity")]
        intensity: f64,
    },
    InpaintRandom {
        #[serde(default = "default_drop")]
        p: f64,
    },
    InpaintFreeform {
        #[serde(flatten)]
        strokes: StrokeParams,
        /// Explicit keep mask (row-major, `true` = observed).
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mask: Option<Vec<bool>>,
    },
}

#[derive(Debug, Clone, PartialEq)]
enum Action {
    Identity,
    AvgPool { factor: usize },
    Convolve { kernel: Kernel },
    Gather { keep: Vec<usize>, mask: Vec<bool> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearOperator {
    kind: OperatorKind,
    shape: ImageShape,
    action: Action,
}

pub fn make_operator(spec: &OperatorSpec, shape: ImageShape, seed: u64) -> Result<LinearOperator> {
    if shape.is_empty() {
        return Err(Error::Parameter("image shape must be non-empty".into()));
    }
    match spec {
        OperatorSpec::Identity => Ok(LinearOperator {
            kind: OperatorKind::Identity,
            shape,
            action: Action::Identity,
        }),
        OperatorSpec::SrAvgpool { factor } => LinearOperator::avgpool(shape, *factor),
        OperatorSpec::GaussianBlur {
            size,
            sigma,
            kernel,
        } => {
            let kernel = match kernel {
                Some(rows) => Kernel::from_rows(rows)?,
                None => gaussian_kernel(*size, *sigma)?,
            };
            LinearOperator::blur(OperatorKind::GaussianBlur, shape, kernel)
        }
        OperatorSpec::MotionBlur { size, intensity } => LinearOperator::blur(
            OperatorKind::MotionBlur,
            shape,
            motion_kernel(*size, *intensity, seed)?,
        ),
        OperatorSpec::InpaintRandom { p } => LinearOperator::inpaint(
            OperatorKind::InpaintRandom,
            shape,
            random_keep_mask(shape.len(), *p, seed)?,
        ),
        OperatorSpec::InpaintFreeform { strokes, mask } => {
            let mask = match mask {
                Some(m) => m.clone(),
                None => freeform_keep_mask(shape.height, shape.width, strokes, seed)?,
            };
            LinearOperator::inpaint(OperatorKind::InpaintFreeform, shape, mask)
        }
    }
}

impl LinearOperator {
    pub fn identity(shape: ImageShape) -> Self {
        LinearOperator {
            kind: OperatorKind::Identity,
            shape,
            action: Action::Identity,
        }
    }

    pub fn avgpool(shape: ImageShape, factor: usize) -> Result<Self> {
        if factor == 0
            || !shape.height.is_multiple_of(factor)
            || !shape.width.is_multiple_of(factor)
        {
            return Err(Error::Parameter(format!(
                "pooling factor {factor} must divide image shape {}x{}",
                shape.height, shape.width
            )));
        }
        Ok(LinearOperator {
            kind: OperatorKind::SrAvgpool,
            shape,
            action: Action::AvgPool { factor },
        })
    }

    pub fn blur(kind: OperatorKind, shape: ImageShape, kernel: Kernel) -> Result<Self> {
        if !matches!(kind, OperatorKind::GaussianBlur | OperatorKind::MotionBlur) {
            return Err(Error::Parameter(format!(
                "{} is not a blur kind",
                kind.name()
            )));
        }
        Ok(LinearOperator {
            kind,
            shape,
            action: Action::Convolve { kernel },
        })
    }

    pub fn inpaint(kind: OperatorKind, shape: ImageShape, mask: Vec<bool>) -> Result<Self> {
        if !kind.is_mask() {
            return Err(Error::Parameter(format!(
                "{} is not an inpainting kind",
                kind.name()
            )));
        }
        if mask.len() != shape.len() {
            return Err(Error::dim("inpainting mask", shape.len(), mask.len()));
        }
        let keep = mask
            .iter()
            .enumerate()
            .filter(|(_, k)| **k)
            .map(|(i, _)| i)
            .collect();
        Ok(LinearOperator {
            kind,
            shape,
            action: Action::Gather { keep, mask },
        })
    }

    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    pub fn image_shape(&self) -> ImageShape {
        self.shape
    }

    pub fn input_len(&self) -> usize {
        self.shape.len()
    }

    pub fn output_len(&self) -> usize {
        match &self.action {
            Action::AvgPool { factor } => self.shape.len() / (factor * factor),
            Action::Gather { keep, .. } => keep.len(),
            _ => self.shape.len(),
        }
    }

    /// Measurement-space grid, when the output is itself an image.
    pub fn output_grid(&self) -> Option<ImageShape> {
        match &self.action {
            Action::AvgPool { factor } => Some(ImageShape::new(
                self.shape.height / factor,
                self.shape.width / factor,
            )),
            Action::Gather { .. } => None,
            _ => Some(self.shape),
        }
    }

    pub fn kernel(&self) -> Option<&Kernel> {
        match &self.action {
            Action::Convolve { kernel } => Some(kernel),
            _ => None,
        }
    }

    /// Keep mask (`true` = observed) for inpainting operators.
    pub fn mask(&self) -> Option<&[bool]> {
        match &self.action {
            Action::Gather { mask, .. } => Some(mask),
            _ => None,
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        ensure_len("operator input", self.input_len(), x)?;
        Ok(self.eval(x))
    }

    /// `A^T u`, obtained from the pullback at the origin.
    pub fn adjoint(&self, u: &[f64]) -> Result<Vec<f64>> {
        ensure_len("operator cotangent", self.output_len(), u)?;
        Ok(self.pullback(&[], u))
    }

    /// The constant `c` with `A A^T = c I`, for operators whose rows are
    /// orthogonal with equal norms.
    pub fn row_gram(&self) -> Option<f64> {
        match &self.action {
            Action::Identity | Action::Gather { .. } => Some(1.0),
            Action::AvgPool { factor } => Some(1.0 / (factor * factor) as f64),
            Action::Convolve { .. } => None,
        }
    }

    /// `A^T A x`
    pub fn normal(&self, x: &[f64]) -> Vec<f64> {
        self.pullback(&[], &self.eval(x))
    }

    /// Noisy measurement `A x + sigma_y g`.
    pub fn measure(&self, x: &[f64], sigma_y: f64, seed: u64) -> Result<Measurement> {
        let mut m = add_noise(&self.forward(x)?, sigma_y, seed)?;
        m.operator = Some(self.kind);
        Ok(m)
    }
}

fn reflect(mut p: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    while p < 0 || p >= n {
        if p < 0 {
            p = -p;
        }
        if p >= n {
            p = 2 * (n - 1) - p;
        }
    }
    p as usize
}

impl DiffMap for LinearOperator {
    fn input_shape(&self) -> Shape {
        Shape::grid(self.shape.height, self.shape.width)
    }

    fn output_shape(&self) -> Shape {
        match self.output_grid() {
            Some(g) => Shape::grid(g.height, g.width),
            None => Shape::flat(self.output_len()),
        }
    }

    fn eval(&self, x: &[f64]) -> Vec<f64> {
        let ImageShape {
            height: h,
            width: w,
        } = self.shape;
        match &self.action {
            Action::Identity => x.to_vec(),
            Action::AvgPool { factor } => {
                let f = *factor;
                let (oh, ow) = (h / f, w / f);
                let norm = 1.0 / (f * f) as f64;
                let mut out = vec![0.0; oh * ow];
                for i in 0..h {
                    for j in 0..w {
                        out[(i / f) * ow + j / f] += x[i * w + j] * norm;
                    }
                }
                out
            }
            Action::Convolve { kernel } => {
                let (k, r) = (kernel.size, kernel.radius() as isize);
                let mut out = vec![0.0; h * w];
                for i in 0..h {
                    for j in 0..w {
                        let mut acc = 0.0;
                        for a in 0..k {
                            let si = reflect(i as isize + r - a as isize, h);
                            for b in 0..k {
                                let sj = reflect(j as isize + r - b as isize, w);
                                acc += kernel.at(a, b) * x[si * w + sj];
                            }
                        }
                        out[i * w + j] = acc;
                    }
                }
                out
            }
            Action::Gather { keep, .. } => keep.iter().map(|&i| x[i]).collect(),
        }
    }

    fn pullback(&self, _x: &[f64], u: &[f64]) -> Vec<f64> {
        let ImageShape {
            height: h,
            width: w,
        } = self.shape;
        match &self.action {
            Action::Identity => u.to_vec(),
            Action::AvgPool { factor } => {
                let f = *factor;
                let ow = w / f;
                let norm = 1.0 / (f * f) as f64;
                let mut out = vec![0.0; h * w];
                for i in 0..h {
                    for j in 0..w {
                        out[i * w + j] = u[(i / f) * ow + j / f] * norm;
                    }
                }
                out
            }
            Action::Convolve { kernel } => {
                let (k, r) = (kernel.size, kernel.radius() as isize);
                let mut out = vec![0.0; h * w];
                for i in 0..h {
                    for j in 0..w {
                        let ui = u[i * w + j];
                        if ui == 0.0 {
                            continue;
                        }
                        for a in 0..k {
                            let si = reflect(i as isize + r - a as isize, h);
                            for b in 0..k {
                                let sj = reflect(j as isize + r - b as isize, w);
                                out[si * w + sj] += kernel.at(a, b) * ui;
                            }
                        }
                    }
                }
                out
            }
            Action::Gather { keep, .. } => {
                let mut out = vec![0.0; h * w];
                for (&i, v) in keep.iter().zip(u) {
                    out[i] = *v;
                }
                out
            }
        }
    }

    fn push_forward(&self, _x: &[f64], v: &[f64]) -> Vec<f64> {
        self.eval(v)
    }
}

/// Max over random `(x, u)` of `|<Ax,u> - <x,A^T u>| / (|<Ax,u>| + eps)`.
pub fn dot_product_check(map: &dyn DiffMap, trials: usize, seed: u64) -> f64 {
    let (n, m) = (map.input_shape().len(), map.output_shape().len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let zero = vec![0.0; n];
    let mut worst: f64 = 0.0;
    for _ in 0..trials.max(1) {
        let x = random_unit(&mut rng, n);
        let u = random_unit(&mut rng, m);
        let lhs = dot(&map.eval(&x), &u);
        let rhs = dot(&x, &map.pullback(&zero, &u));
        worst = worst.max((lhs - rhs).abs() / (lhs.abs() + f64::EPSILON));
    }
    worst
}

/// Noisy observation `y` of a clean measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub y: Vec<f64>,
    pub sigma_y: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub operator: Option<OperatorKind>,
}

impl Measurement {
    pub fn noiseless(y: Vec<f64>) -> Self {
        Measurement {
            y,
            sigma_y: 0.0,
            seed: 0,
            operator: None,
        }
    }
}

pub fn add_noise(y_clean: &[f64], sigma_y: f64, seed: u64) -> Result<Measurement> {
    if !(sigma_y >= 0.0) || !sigma_y.is_finite() {
        return Err(Error::Parameter(format!(
            "sigma_y must be finite and >= 0, got {sigma_y}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y = if sigma_y == 0.0 {
        y_clean.to_vec()
    } else {
        y_clean
            .iter()
            .map(|v| {
                let g: f64 = StandardNormal.sample(&mut rng);
                v + sigma_y * g
            })
            .collect()
    };
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("measurement".into()));
    }
    Ok(Measurement {
        y,
        sigma_y,
        seed,
        operator: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffmap::linear_matrix;

    fn sq(n: usize) -> ImageShape {
        ImageShape::new(n, n)
    }

    #[test]
    fn avgpool_is_block_mean_and_adjoint_spreads() {
        let op = make_operator(&OperatorSpec::SrAvgpool { factor: 2 }, sq(2), 0).unwrap();
        assert_eq!(op.forward(&[1.0, 3.0, 5.0, 7.0]).unwrap(), vec![4.0]);
        assert_eq!(op.adjoint(&[4.0]).unwrap(), vec![1.0; 4]);
        assert!(make_operator(&OperatorSpec::SrAvgpool { factor: 3 }, sq(4), 0).is_err());
    }

    #[test]
    fn delta_kernel_is_identity() {
        let spec = OperatorSpec::GaussianBlur {
            size: 1,
            sigma: 1.0,
            kernel: Some(vec![vec![1.0]]),
        };
        let op = make_operator(&spec, sq(4), 0).unwrap();
        let x: Vec<f64> = (0..16).map(|i| i as f64).collect();
        assert_eq!(op.forward(&x).unwrap(), x);
    }

    #[test]
    fn even_or_unnormalized_kernels_rejected() {
        let even = OperatorSpec::GaussianBlur {
            size: 2,
            sigma: 1.0,
            kernel: Some(vec![vec![0.25; 2]; 2]),
        };
        assert!(make_operator(&even, sq(4), 0).is_err());
        let bad = OperatorSpec::GaussianBlur {
            size: 1,
            sigma: 1.0,
            kernel: Some(vec![vec![2.0]]),
        };
        assert!(make_operator(&bad, sq(4), 0).is_err());
        assert!(make_operator(
            &OperatorSpec::GaussianBlur {
                size: 4,
                sigma: 1.0,
                kernel: None
            },
            sq(8),
            0
        )
        .is_err());
    }

    #[test]
    fn inpaint_keep_all_is_identity() {
        let op = make_operator(&OperatorSpec::InpaintRandom { p: 0.0 }, sq(3), 4).unwrap();
        let x: Vec<f64> = (0..9).map(|i| i as f64 * 0.5).collect();
        assert_eq!(op.forward(&x).unwrap(), x);
        assert!(make_operator(&OperatorSpec::InpaintRandom { p: 1.5 }, sq(3), 4).is_err());
    }

    #[test]
    fn inpaint_adjoint_is_mask_transpose() {
        let op = LinearOperator::inpaint(
            OperatorKind::InpaintFreeform,
            ImageShape::new(1, 2),
            vec![true, false],
        )
        .unwrap();
        assert_eq!(op.adjoint(&[5.0]).unwrap(), vec![5.0, 0.0]);
        assert!(op.adjoint(&[5.0, 1.0]).is_err());
    }

    #[test]
    fn blur_adjoint_matches_dense_transpose() {
        let op = make_operator(
            &OperatorSpec::GaussianBlur {
                size: 3,
                sigma: 0.8,
                kernel: None,
            },
            sq(8),
            0,
        )
        .unwrap();
        let a = linear_matrix(&op);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let u = random_unit(&mut rng, 64);
        let oracle = a.transpose() * nalgebra::DVector::from_column_slice(&u);
        let got = op.adjoint(&u).unwrap();
        for i in 0..64 {
            assert!((got[i] - oracle[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn reflect_padding_mirrors_without_edge_repeat() {
        assert_eq!(reflect(-1, 5), 1);
        assert_eq!(reflect(-2, 5), 2);
        assert_eq!(reflect(5, 5), 3);
        assert_eq!(reflect(6, 5), 2);
        assert_eq!(reflect(-7, 3), 1);
        assert_eq!(reflect(3, 1), 0);
    }

    #[test]
    fn mask_normal_operator_is_a_projector() {
        let op = make_operator(&OperatorSpec::InpaintRandom { p: 0.5 }, sq(6), 9).unwrap();
        let ata = linear_matrix(&op).transpose() * linear_matrix(&op);
        for i in 0..36 {
            for j in 0..36 {
                let v = ata[(i, j)];
                if i != j {
                    assert_eq!(v, 0.0);
                } else {
                    assert!(v == 0.0 || v == 1.0);
                }
            }
        }
    }

    #[test]
    fn noise_zero_sigma_and_determinism() {
        let y = vec![0.25; 10];
        assert_eq!(add_noise(&y, 0.0, 3).unwrap().y, y);
        assert_eq!(
            add_noise(&y, 0.1, 3).unwrap(),
            add_noise(&y, 0.1, 3).unwrap()
        );
        assert!(add_noise(&y, -0.1, 3).is_err());
    }

    #[test]
    fn noise_sample_std_within_chi_square_band() {
        let clean = vec![0.0; 10_000];
        let m = add_noise(&clean, 0.01, 2024).unwrap();
        let mean = m.y.iter().sum::<f64>() / 1e4;
        let var = m.y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (1e4 - 1.0);
        let std = var.sqrt();
        assert!((0.0097..=0.0103).contains(&std), "{std}");
    }

    #[test]
    fn spec_roundtrips_through_json() {
        let spec = OperatorSpec::InpaintFreeform {
            strokes: StrokeParams::default(),
            mask: None,
        };
        let s = serde_json::to_string(&spec).unwrap();
        assert_eq!(serde_json::from_str::<OperatorSpec>(&s).unwrap(), spec);
        let g: OperatorSpec = serde_json::from_str(r#"{"kind":"gaussian_blur"}"#).unwrap();
        assert_eq!(
            g,
            OperatorSpec::GaussianBlur {
                size: 9,
                sigma: 1.5,
                kernel: None
            }
        );
    }
}
