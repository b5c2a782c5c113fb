//! Conjugate gradients and the two data-consistency maps: the proximal step
//! `argmin_x 1/2 |y - A x|^2 + lambda/2 |x - anchor|^2` and subspace gluing
//! `A^T y + (I - A^T A) anchor`.

use serde::{Deserialize, Serialize};

use crate::diffmap::DiffMap;
use crate::error::{ensure_len, Error, Result};
use crate::operators::{LinearOperator, Measurement};
use crate::vecops::{all_finite, dot, norm};

#[derive(Debug, Clone, PartialEq)]
pub struct CgOutput {
    pub x: Vec<f64>,
    /// Relative residual `|b - M x| / |b|`: entry 0 is the starting point,
    /// entry `k` follows iteration `k`.
    pub residual_history: Vec<f64>,
}

impl CgOutput {
    pub fn iterations(&self) -> usize {
        self.residual_history.len() - 1
    }
}

/// Conjugate gradients for `M x = b` with `M` symmetric positive definite.
///
/// Stops after `iters` iterations or once the relative residual reaches `tol`.
pub fn cg_solve<F>(apply: F, b: &[f64], x_init: &[f64], iters: usize, tol: f64) -> Result<CgOutput>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    ensure_len("cg initial point", b.len(), x_init)?;
    if !(tol > 0.0) {
        return Err(Error::Parameter(format!(
            "cg tolerance must be positive, got {tol}"
        )));
    }
    let b_norm = norm(b);
    let scale = if b_norm > 0.0 { b_norm } else { 1.0 };
    let mut x = x_init.to_vec();
    let mx = apply(&x);
    ensure_len("cg operator output", b.len(), &mx)?;
    let mut r: Vec<f64> = b.iter().zip(&mx).map(|(bi, mi)| bi - mi).collect();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let mut history = vec![rr.sqrt() / scale];
    if !rr.is_finite() {
        return Err(Error::Numeric("cg initial residual".into()));
    }

    for iteration in 1..=iters {
        if rr.sqrt() / scale <= tol {
            break;
        }
        let mp = apply(&p);
        let curvature = dot(&p, &mp);
        if !(curvature > 0.0) {
            if curvature.is_nan() {
                return Err(Error::Numeric(format!(
                    "cg curvature at iteration {iteration}"
                )));
            }
            return Err(Error::NotSpd {
                iteration,
                curvature,
            });
        }
        let alpha = rr / curvature;
        for ((xi, ri), (pi, mpi)) in x.iter_mut().zip(r.iter_mut()).zip(p.iter().zip(&mp)) {
            *xi += alpha * pi;
            *ri -= alpha * mpi;
        }
        if !all_finite(&x) {
            return Err(Error::Numeric(format!(
                "cg iterate at iteration {iteration}"
            )));
        }
        let rr_new = dot(&r, &r);
        history.push(rr_new.sqrt() / scale);
        let beta = rr_new / rr;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
        rr = rr_new;
    }
    Ok(CgOutput {
        x,
        residual_history: history,
    })
}

fn default_lambda() -> f64 {
    1.0
}
fn default_cg_iters() -> usize {
    10
}
fn default_cg_tol() -> f64 {
    1e-6
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProxConfig {
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_cg_iters")]
    pub cg_iters: usize,
    #[serde(default = "default_cg_tol")]
    pub cg_tol: f64,
}

impl Default for ProxConfig {
    fn default() -> Self {
        ProxConfig {
            lambda: default_lambda(),
            cg_iters: default_cg_iters(),
            cg_tol: default_cg_tol(),
        }
    }
}

impl ProxConfig {
    pub fn with_lambda(lambda: f64) -> Self {
        ProxConfig {
            lambda,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) || self.cg_iters == 0 || !(self.cg_tol > 0.0) {
            return Err(Error::Parameter(format!(
                "prox needs lambda > 0, cg_iters >= 1, cg_tol > 0; got {:?}",
                self
            )));
        }
        Ok(())
    }
}

/// Right-hand side `A^T y + lambda * anchor` of the prox normal equations.
pub fn prox_rhs(
    op: &LinearOperator,
    y: &Measurement,
    anchor: &[f64],
    lambda: f64,
) -> Result<Vec<f64>> {
    ensure_len("prox anchor", op.input_len(), anchor)?;
    let mut rhs = op.adjoint(&y.y)?;
    for (r, a) in rhs.iter_mut().zip(anchor) {
        *r += lambda * a;
    }
    Ok(rhs)
}

/// Proximal data-consistency step solved by CG warm-started at the anchor.
pub fn prox_gamma(
    op: &LinearOperator,
    y: &Measurement,
    anchor: &[f64],
    cfg: &ProxConfig,
) -> Result<Vec<f64>> {
    Ok(prox_gamma_cg(op, y, anchor, cfg)?.x)
}

/// [`prox_gamma`] with the CG diagnostics.
pub fn prox_gamma_cg(
    op: &LinearOperator,
    y: &Measurement,
    anchor: &[f64],
    cfg: &ProxConfig,
) -> Result<CgOutput> {
    cfg.validate()?;
    let rhs = prox_rhs(op, y, anchor, cfg.lambda)?;
    let lambda = cfg.lambda;
    cg_solve(
        |v| {
            let mut out = op.normal(v);
            for (o, vi) in out.iter_mut().zip(v) {
                *o += lambda * vi;
            }
            out
        },
        &rhs,
        anchor,
        cfg.cg_iters,
        cfg.cg_tol,
    )
}

/// Exact prox for operators with `A A^T = c I`, written as
/// `anchor + A^T (y - A anchor) / (lambda + c)`, which stays finite as
/// `lambda -> 0` (where it becomes gluing). Returns `None` for operators
/// without that structure.
pub fn prox_closed_form(
    op: &LinearOperator,
    y: &Measurement,
    anchor: &[f64],
    lambda: f64,
) -> Result<Option<Vec<f64>>> {
    if !(lambda >= 0.0) {
        return Err(Error::Parameter(format!(
            "prox lambda must be nonnegative, got {lambda}"
        )));
    }
    ensure_len("prox anchor", op.input_len(), anchor)?;
    ensure_len("measurement", op.output_len(), &y.y)?;
    let Some(c) = op.row_gram() else {
        return Ok(None);
    };
    let residual: Vec<f64> =
        y.y.iter()
            .zip(op.eval(anchor))
            .map(|(yi, ai)| yi - ai)
            .collect();
    let back = op.pullback(&[], &residual);
    Ok(Some(
        anchor
            .iter()
            .zip(&back)
            .map(|(a, b)| a + b / (lambda + c))
            .collect(),
    ))
}

/// Subspace gluing `A^T y + anchor - A^T A anchor`.
pub fn glue_gamma(op: &LinearOperator, y: &Measurement, anchor: &[f64]) -> Result<Vec<f64>> {
    ensure_len("glue anchor", op.input_len(), anchor)?;
    let aty = op.adjoint(&y.y)?;
    let ata = op.normal(anchor);
    Ok(aty
        .iter()
        .zip(anchor.iter().zip(&ata))
        .map(|(t, (a, n))| (a - n) + t)
        .collect())
}

/// Which data-consistency map to use inside the projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaKind {
    #[default]
    Prox,
    Glue,
}

pub fn apply_gamma(
    kind: GammaKind,
    op: &LinearOperator,
    y: &Measurement,
    anchor: &[f64],
    cfg: &ProxConfig,
) -> Result<Vec<f64>> {
    match kind {
        GammaKind::Prox => prox_gamma(op, y, anchor, cfg),
        GammaKind::Glue => glue_gamma(op, y, anchor),
    }
}
