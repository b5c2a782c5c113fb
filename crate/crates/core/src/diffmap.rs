//! Differentiable maps with hand-written vector-Jacobian products.
//!
//! Every map used by the solvers (degradation operators, decoders, encoders,
//! noise predictors viewed as a function of one argument) implements
//! [`DiffMap`]. Adjoints of linear operators are simply `vjp` evaluated at an
//! arbitrary point, so an operator only has to get its pullback right once and
//! [`check_vjp`] certifies it against central differences.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{ensure_len, Error, Result};
use crate::vecops::{all_finite, dot, norm};

/// Dimension descriptor; the flat length is the product of the extents.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Shape(pub Vec<usize>);

impl Shape {
    pub fn flat(n: usize) -> Self {
        Shape(vec![n])
    }

    pub fn grid(height: usize, width: usize) -> Self {
        Shape(vec![height, width])
    }

    pub fn len(&self) -> usize {
        self.0.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let dims: Vec<String> = self.0.iter().map(|d| d.to_string()).collect();
        write!(f, "[{}]", dims.join("x"))
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// A map `R^a -> R^b` together with its pullback `u -> J(x)^T u`.
///
/// Implementations must be pure: `eval` and `pullback` may be called
/// concurrently from several threads.
pub trait DiffMap: Send + Sync {
    fn input_shape(&self) -> Shape;
    fn output_shape(&self) -> Shape;

    /// Forward evaluation. Callers guarantee `x.len() == input_shape().len()`.
    fn eval(&self, x: &[f64]) -> Vec<f64>;

    /// `J(x)^T u`. Callers guarantee both lengths.
    fn pullback(&self, x: &[f64], u: &[f64]) -> Vec<f64>;

    /// Directional derivative `J(x) v`.
    ///
    /// The default is a symmetric difference of `eval`, which is exact (up to
    /// rounding) for affine maps. Maps with a cheap exact form override it.
    fn push_forward(&self, x: &[f64], v: &[f64]) -> Vec<f64> {
        let h = 1e-6 * (1.0 + norm(x)) / norm(v).max(f64::MIN_POSITIVE);
        let xp: Vec<f64> = x.iter().zip(v).map(|(a, b)| a + h * b).collect();
        let xm: Vec<f64> = x.iter().zip(v).map(|(a, b)| a - h * b).collect();
        let fp = self.eval(&xp);
        let fm = self.eval(&xm);
        fp.iter()
            .zip(&fm)
            .map(|(p, m)| (p - m) / (2.0 * h))
            .collect()
    }
}

impl<T: DiffMap + ?Sized> DiffMap for Arc<T> {
    fn input_shape(&self) -> Shape {
        (**self).input_shape()
    }
    fn output_shape(&self) -> Shape {
        (**self).output_shape()
    }
    fn eval(&self, x: &[f64]) -> Vec<f64> {
        (**self).eval(x)
    }
    fn pullback(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        (**self).pullback(x, u)
    }
    fn push_forward(&self, x: &[f64], v: &[f64]) -> Vec<f64> {
        (**self).push_forward(x, v)
    }
}

impl<T: DiffMap + ?Sized> DiffMap for &T {
    fn input_shape(&self) -> Shape {
        (**self).input_shape()
    }
    fn output_shape(&self) -> Shape {
        (**self).output_shape()
    }
    fn eval(&self, x: &[f64]) -> Vec<f64> {
        (**self).eval(x)
    }
    fn pullback(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        (**self).pullback(x, u)
    }
    fn push_forward(&self, x: &[f64], v: &[f64]) -> Vec<f64> {
        (**self).push_forward(x, v)
    }
}

fn check_input(map: &dyn DiffMap, x: &[f64]) -> Result<()> {
    let shape = map.input_shape();
    if x.len() != shape.len() {
        return Err(Error::dim("map input", shape, format!("[{}]", x.len())));
    }
    Ok(())
}

fn check_cotangent(map: &dyn DiffMap, u: &[f64]) -> Result<()> {
    let shape = map.output_shape();
    if u.len() != shape.len() {
        return Err(Error::dim("map cotangent", shape, format!("[{}]", u.len())));
    }
    Ok(())
}

/// Shape-checked forward evaluation.
pub fn apply(map: &dyn DiffMap, x: &[f64]) -> Result<Vec<f64>> {
    check_input(map, x)?;
    Ok(map.eval(x))
}

/// Shape-checked vector-Jacobian product.
pub fn vjp(map: &dyn DiffMap, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
    check_input(map, x)?;
    check_cotangent(map, u)?;
    Ok(map.pullback(x, u))
}

/// `outer ∘ inner`.
#[derive(Clone)]
pub struct Composed {
    outer: Arc<dyn DiffMap>,
    inner: Arc<dyn DiffMap>,
}

pub fn compose(outer: Arc<dyn DiffMap>, inner: Arc<dyn DiffMap>) -> Result<Composed> {
    let (mid_out, mid_in) = (inner.output_shape(), outer.input_shape());
    if mid_out.len() != mid_in.len() {
        return Err(Error::dim("compose", mid_in, mid_out));
    }
    Ok(Composed { outer, inner })
}

impl DiffMap for Composed {
    fn input_shape(&self) -> Shape {
        self.inner.input_shape()
    }
    fn output_shape(&self) -> Shape {
        self.outer.output_shape()
    }
    fn eval(&self, x: &[f64]) -> Vec<f64> {
        self.outer.eval(&self.inner.eval(x))
    }
    fn pullback(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let mid = self.inner.eval(x);
        self.inner.pullback(x, &self.outer.pullback(&mid, u))
    }
    fn push_forward(&self, x: &[f64], v: &[f64]) -> Vec<f64> {
        let mid = self.inner.eval(x);
        self.outer
            .push_forward(&mid, &self.inner.push_forward(x, v))
    }
}

#[derive(Debug, Clone)]
pub struct Identity {
    pub dim: usize,
}

impl DiffMap for Identity {
    fn input_shape(&self) -> Shape {
        Shape::flat(self.dim)
    }
    fn output_shape(&self) -> Shape {
        Shape::flat(self.dim)
    }
    fn eval(&self, x: &[f64]) -> Vec<f64> {
        x.to_vec()
    }
    fn pullback(&self, _x: &[f64], u: &[f64]) -> Vec<f64> {
        u.to_vec()
    }
    fn push_forward(&self, _x: &[f64], v: &[f64]) -> Vec<f64> {
        v.to_vec()
    }
}

/// `x -> factor * x`
#[derive(Debug, Clone)]
pub struct Scale {
    pub dim: usize,
    pub factor: f64,
}

impl DiffMap for Scale {
    fn input_shape(&self) -> Shape {
        Shape::flat(self.dim)
    }
    fn output_shape(&self) -> Shape {
        Shape::flat(self.dim)
    }
    fn eval(&self, x: &[f64]) -> Vec<f64> {
        x.iter().map(|v| v * self.factor).collect()
    }
    fn pullback(&self, _x: &[f64], u: &[f64]) -> Vec<f64> {
        u.iter().map(|v| v * self.factor).collect()
    }
    fn push_forward(&self, _x: &[f64], v: &[f64]) -> Vec<f64> {
        self.pullback(&[], v)
    }
}

/// `x -> x + offset`
#[derive(Debug, Clone)]
pub struct Shift {
    pub offset: Vec<f64>,
}

impl DiffMap for Shift {
    fn input_shape(&self) -> Shape {
        Shape::flat(self.offset.len())
    }
    fn output_shape(&self) -> Shape {
        Shape::flat(self.offset.len())
    }
    fn eval(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.offset).map(|(a, b)| a + b).collect()
    }
    fn pullback(&self, _x: &[f64], u: &[f64]) -> Vec<f64> {
        u.to_vec()
    }
    fn push_forward(&self, _x: &[f64], v: &[f64]) -> Vec<f64> {
        v.to_vec()
    }
}

/// Elementwise `tanh`.
#[derive(Debug, Clone)]
pub struct Tanh {
    pub dim: usize,
}

impl DiffMap for Tanh {
    fn input_shape(&self) -> Shape {
        Shape::flat(self.dim)
    }
    fn output_shape(&self) -> Shape {
        Shape::flat(self.dim)
    }
    fn eval(&self, x: &[f64]) -> Vec<f64> {
        x.iter().map(|v| v.tanh()).collect()
    }
    fn pullback(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(u)
            .map(|(xi, ui)| {
                let t = xi.tanh();
                (1.0 - t * t) * ui
            })
            .collect()
    }
    fn push_forward(&self, x: &[f64], v: &[f64]) -> Vec<f64> {
        self.pullback(x, v)
    }
}

/// Row-major dense matrix acting as a linear map `R^cols -> R^rows`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Dense {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim("dense matrix", rows * cols, data.len()));
        }
        Ok(Dense { rows, cols, data })
    }

    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let mut data = Vec::with_capacity(m.nrows() * m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                data.push(m[(i, j)]);
            }
        }
        Dense {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    pub fn transpose(&self) -> Dense {
        let mut data = vec![0.0; self.data.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        Dense {
            rows: self.cols,
            cols: self.rows,
            data,
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        self.data
            .chunks_exact(self.cols)
            .map(|row| dot(row, x))
            .collect()
    }

    pub fn matvec_t(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (row, ui) in self.data.chunks_exact(self.cols).zip(u) {
            if *ui != 0.0 {
                for (o, r) in out.iter_mut().zip(row) {
                    *o += r * ui;
                }
            }
        }
        out
    }
}

impl DiffMap for Dense {
    fn input_shape(&self) -> Shape {
        Shape::flat(self.cols)
    }
    fn output_shape(&self) -> Shape {
        Shape::flat(self.rows)
    }
    fn eval(&self, x: &[f64]) -> Vec<f64> {
        self.matvec(x)
    }
    fn pullback(&self, _x: &[f64], u: &[f64]) -> Vec<f64> {
        self.matvec_t(u)
    }
    fn push_forward(&self, _x: &[f64], v: &[f64]) -> Vec<f64> {
        self.matvec(v)
    }
}

/// One-hidden-layer perceptron `W2 tanh(W1 x + b1) + b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct TanhMlp {
    pub w1: Dense,
    pub b1: Vec<f64>,
    pub w2: Dense,
    pub b2: Vec<f64>,
}

impl TanhMlp {
    pub fn new(w1: Dense, b1: Vec<f64>, w2: Dense, b2: Vec<f64>) -> Result<Self> {
        ensure_len("mlp hidden bias", w1.rows, &b1)?;
        ensure_len("mlp output bias", w2.rows, &b2)?;
        if w2.cols != w1.rows {
            return Err(Error::dim("mlp layers", w1.rows, w2.cols));
        }
        Ok(TanhMlp { w1, b1, w2, b2 })
    }

    fn hidden(&self, x: &[f64]) -> Vec<f64> {
        let mut h = self.w1.matvec(x);
        for (hi, bi) in h.iter_mut().zip(&self.b1) {
            *hi = (*hi + bi).tanh();
        }
        h
    }

    /// Flat parameter vector: w1, b1, w2, b2.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.w1.data.clone();
        p.extend_from_slice(&self.b1);
        p.extend_from_slice(&self.w2.data);
        p.extend_from_slice(&self.b2);
        p
    }
}

impl DiffMap for TanhMlp {
    fn input_shape(&self) -> Shape {
        Shape::flat(self.w1.cols)
    }
    fn output_shape(&self) -> Shape {
        Shape::flat(self.w2.rows)
    }
    fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.w2.matvec(&self.hidden(x));
        for (o, b) in out.iter_mut().zip(&self.b2) {
            *o += b;
        }
        out
    }
    fn pullback(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let h = self.hidden(x);
        let mut gh = self.w2.matvec_t(u);
        for (g, hi) in gh.iter_mut().zip(&h) {
            *g *= 1.0 - hi * hi;
        }
        self.w1.matvec_t(&gh)
    }
    fn push_forward(&self, x: &[f64], v: &[f64]) -> Vec<f64> {
        let h = self.hidden(x);
        let mut dh = self.w1.matvec(v);
        for (d, hi) in dh.iter_mut().zip(&h) {
            *d *= 1.0 - hi * hi;
        }
        self.w2.matvec(&dh)
    }
}

/// Materialize a linear map as a dense matrix by pushing unit vectors through
/// `eval` (column by column). For affine maps the offset is removed first.
pub fn linear_matrix(map: &dyn DiffMap) -> DMatrix<f64> {
    let n = map.input_shape().len();
    let m = map.output_shape().len();
    let zero = vec![0.0; n];
    let f0 = map.eval(&zero);
    let mut out = DMatrix::zeros(m, n);
    let mut e = zero.clone();
    for j in 0..n {
        e[j] = 1.0;
        let col = map.eval(&e);
        for i in 0..m {
            out[(i, j)] = col[i] - f0[i];
        }
        e[j] = 0.0;
    }
    out
}

#[derive(Debug, Clone, Copy)]
pub struct VjpCheck {
    pub trials: usize,
    pub step: f64,
    pub tol: f64,
    pub seed: u64,
}

impl Default for VjpCheck {
    fn default() -> Self {
        VjpCheck {
            trials: 10,
            step: 1e-5,
            tol: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VjpReport {
    pub max_rel_err: f64,
    pub pass: bool,
}

pub(crate) fn random_unit(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    let s = norm(&v).max(f64::MIN_POSITIVE);
    v.into_iter().map(|x| x / s).collect()
}

/// Compares `<u, (f(x+hd) - f(x-hd)) / 2h>` against `<vjp(x, u), d>` for
/// random unit `u`, `d`.
pub fn check_vjp(map: &dyn DiffMap, x: &[f64], cfg: &VjpCheck) -> Result<VjpReport> {
    if !(cfg.step > 0.0) || cfg.trials == 0 {
        return Err(Error::Parameter(format!(
            "check_vjp needs step > 0 and trials >= 1 (got step {}, trials {})",
            cfg.step, cfg.trials
        )));
    }
    check_input(map, x)?;
    let (n, m) = (map.input_shape().len(), map.output_shape().len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut max_rel_err: f64 = 0.0;
    for _ in 0..cfg.trials {
        let u = random_unit(&mut rng, m);
        let d = random_unit(&mut rng, n);
        let xp: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + cfg.step * b).collect();
        let xm: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a - cfg.step * b).collect();
        let (fp, fm) = (map.eval(&xp), map.eval(&xm));
        if !all_finite(&fp) || !all_finite(&fm) {
            return Err(Error::Numeric("forward output during check_vjp".into()));
        }
        let fd: f64 = u
            .iter()
            .zip(fp.iter().zip(&fm))
            .map(|(ui, (p, q))| ui * (p - q))
            .sum::<f64>()
            / (2.0 * cfg.step);
        let back = map.pullback(x, &u);
        if !all_finite(&back) {
            return Err(Error::Numeric("vjp output during check_vjp".into()));
        }
        let an = dot(&back, &d);
        let denom = fd.abs().max(an.abs()).max(1e-12);
        max_rel_err = max_rel_err.max((fd - an).abs() / denom);
    }
    Ok(VjpReport {
        max_rel_err,
        pass: max_rel_err <= cfg.tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arc<M: DiffMap + 'static>(m: M) -> Arc<dyn DiffMap> {
        Arc::new(m)
    }

    #[test]
    fn apply_examples() {
        let s = Scale {
            dim: 1,
            factor: 2.0,
        };
        assert_eq!(apply(&s, &[3.0]).unwrap(), vec![6.0]);
        let id = Identity { dim: 3 };
        assert_eq!(apply(&id, &[1.0, 2.0, 3.0]).unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(apply(&Tanh { dim: 1 }, &[0.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn shape_errors_name_both_shapes() {
        let s = Scale {
            dim: 2,
            factor: 2.0,
        };
        let err = apply(&s, &[1.0]).unwrap_err().to_string();
        assert!(err.contains("[2]") && err.contains("[1]"), "{err}");
        assert!(vjp(&s, &[1.0, 2.0], &[1.0]).is_err());
        assert!(compose(arc(Identity { dim: 3 }), arc(Identity { dim: 2 })).is_err());
    }

    #[test]
    fn vjp_examples() {
        let s = Scale {
            dim: 1,
            factor: 2.0,
        };
        assert_eq!(vjp(&s, &[17.0], &[3.0]).unwrap(), vec![6.0]);
        let t = Tanh { dim: 3 };
        assert_eq!(vjp(&t, &[0.3, -1.0, 2.0], &[0.0; 3]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn tanh_vjp_matches_central_difference() {
        let x = 0.5f64;
        let h = 1e-5;
        let fd = ((x + h).tanh() - (x - h).tanh()) / (2.0 * h);
        let got = vjp(&Tanh { dim: 1 }, &[x], &[1.0]).unwrap()[0];
        assert!((got - fd).abs() / fd.abs() <= 1e-6);
        assert!((got - (1.0 - x.tanh().powi(2))).abs() < 1e-15);
    }

    #[test]
    fn compose_affine_chain() {
        let f = arc(Scale {
            dim: 1,
            factor: 2.0,
        });
        let g = arc(Shift { offset: vec![1.0] });
        let c = compose(f, g).unwrap();
        assert_eq!(apply(&c, &[1.0]).unwrap(), vec![4.0]);
        assert_eq!(vjp(&c, &[-7.0], &[1.0]).unwrap(), vec![2.0]);
    }

    #[test]
    fn compose_with_identity_is_transparent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_mlp(&mut rng, 4, 6, 3);
        let c = compose(arc(Identity { dim: 3 }), arc(m.clone())).unwrap();
        let x = random_unit(&mut rng, 4);
        let u = random_unit(&mut rng, 3);
        assert_eq!(c.eval(&x), m.eval(&x));
        assert_eq!(c.pullback(&x, &u), m.pullback(&x, &u));
    }

    #[test]
    fn composed_vjp_matches_dense_jacobian_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random_dense(&mut rng, 8, 8);
        let d = random_dense(&mut rng, 8, 8);
        let c = compose(arc(a.clone()), arc(d.clone())).unwrap();
        let u = random_unit(&mut rng, 8);
        let oracle =
            (a.to_matrix() * d.to_matrix()).transpose() * DMatrix::from_column_slice(8, 1, &u);
        let got = c.pullback(&[0.0; 8], &u);
        for i in 0..8 {
            assert!((got[i] - oracle[(i, 0)]).abs() < 1e-12);
        }
    }

    #[test]
    fn check_vjp_linear_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_dense(&mut rng, 5, 7);
        let x = random_unit(&mut rng, 7);
        let r = check_vjp(
            &a,
            &x,
            &VjpCheck {
                tol: 1e-10,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(r.max_rel_err <= 1e-10, "{r:?}");
        assert!(r.pass);
    }

    #[test]
    fn check_vjp_mlp_passes() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = random_mlp(&mut rng, 6, 10, 4);
        let x = random_unit(&mut rng, 6);
        let r = check_vjp(
            &m,
            &x,
            &VjpCheck {
                step: 1e-5,
                tol: 1e-4,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(r.pass, "{r:?}");
    }

    struct Miscaled(Tanh);

    impl DiffMap for Miscaled {
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
            self.0
                .pullback(x, u)
                .into_iter()
                .map(|v| v * 1.01)
                .collect()
        }
    }

    #[test]
    fn check_vjp_detects_wrong_pullback() {
        let m = Miscaled(Tanh { dim: 4 });
        let r = check_vjp(
            &m,
            &[0.1, 0.2, -0.3, 0.4],
            &VjpCheck {
                tol: 1e-4,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(!r.pass);
    }

    #[test]
    fn check_vjp_rejects_bad_settings_and_nan() {
        let t = Tanh { dim: 1 };
        assert!(check_vjp(
            &t,
            &[0.0],
            &VjpCheck {
                step: 0.0,
                ..Default::default()
            }
        )
        .is_err());
        assert!(check_vjp(
            &t,
            &[0.0],
            &VjpCheck {
                trials: 0,
                ..Default::default()
            }
        )
        .is_err());
        let s = Scale {
            dim: 1,
            factor: f64::INFINITY,
        };
        assert!(matches!(
            check_vjp(&s, &[1.0], &VjpCheck::default()),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn mlp_push_forward_matches_default_difference() {
        struct NoJvp(TanhMlp);
        impl DiffMap for NoJvp {
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
                self.0.pullback(x, u)
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random_mlp(&mut rng, 5, 7, 3);
        let x = random_unit(&mut rng, 5);
        let v = random_unit(&mut rng, 5);
        let exact = m.push_forward(&x, &v);
        let approx = NoJvp(m).push_forward(&x, &v);
        for (a, b) in exact.iter().zip(&approx) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    pub(crate) fn random_dense(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Dense {
        let data = (0..rows * cols)
            .map(|_| StandardNormal.sample(rng))
            .collect();
        Dense::new(rows, cols, data).unwrap()
    }

    pub(crate) fn random_mlp(
        rng: &mut ChaCha8Rng,
        n_in: usize,
        hidden: usize,
        n_out: usize,
    ) -> TanhMlp {
        let w1 = random_dense(rng, hidden, n_in);
        let b1 = random_unit(rng, hidden);
        let w2 = random_dense(rng, n_out, hidden);
        let b2 = random_unit(rng, n_out);
        TanhMlp::new(w1, b1, w2, b2).unwrap()
    }
}
