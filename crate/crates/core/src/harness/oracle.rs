use nalgebra::{DMatrix, DVector};

use crate::codec::LatentCodec;
use crate::diffmap::{compose, linear_matrix, DiffMap};
use crate::error::{ensure_len, Error, Result};
use crate::operators::{LinearOperator, Measurement};

/// Closed-form posterior for `z ~ N(mu, diag(var))`, `x = D z`,
/// `y | x ~ N(A x, sigma^2 I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    /// Image-space posterior mean `D mean_z`.
    pub posterior_mean: Vec<f64>,
    pub latent_mean: Vec<f64>,
    /// Diagonal of the image-space posterior covariance `D Cov D^T`.
    pub posterior_cov_diag: Vec<f64>,
    /// `log p(y)` under the linear-Gaussian model.
    pub log_evidence: f64,
}

pub fn gaussian_posterior_oracle(
    prior_mean: &[f64],
    prior_var: &[f64],
    codec: &LatentCodec,
    op: &LinearOperator,
    y: &Measurement,
) -> Result<OracleResult> {
    if !codec.is_linear() {
        return Err(Error::Parameter(
            "posterior oracle needs a linear codec".into(),
        ));
    }
    let k = codec.latent_dim();
    ensure_len("prior mean", k, prior_mean)?;
    ensure_len("prior variance", k, prior_var)?;
    ensure_len("measurement", op.output_len(), &y.y)?;
    let sigma2 = y.sigma_y * y.sigma_y;
    if !(sigma2 > 0.0) {
        return Err(Error::Parameter(
            "posterior oracle needs sigma_y > 0".into(),
        ));
    }
    if prior_var.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::Parameter("prior variances must be positive".into()));
    }
    let op_map: std::sync::Arc<dyn DiffMap> = std::sync::Arc::new(op.clone());
    let ad = linear_matrix(&compose(op_map, codec.decoder().clone())?);
    let d = linear_matrix(&**codec.decoder());
    let dz = d.ncols();
    let offset = DVector::from_vec(codec.decoder().eval(&vec![0.0; dz]));
    let ad_offset = DVector::from_vec(op.eval(offset.as_slice()));

    let mu = DVector::from_column_slice(prior_mean);
    let yv = DVector::from_column_slice(&y.y) - &ad_offset;
    let prior_prec = DMatrix::from_diagonal(&DVector::from_iterator(
        k,
        prior_var.iter().map(|v| 1.0 / v),
    ));
    let precision = &prior_prec + ad.transpose() * &ad / sigma2;
    let chol = precision
        .cholesky()
        .ok_or_else(|| Error::Numeric("posterior precision is not positive definite".into()))?;
    let rhs = &prior_prec * &mu + ad.transpose() * &yv / sigma2;
    let mean_z = chol.solve(&rhs);
    let cov = chol.inverse();
    let x_mean = &d * &mean_z + &offset;
    let img_cov = &d * &cov * d.transpose();

    // y ~ N(AD mu, AD Sigma (AD)^T + sigma^2 I)
    let m = ad.nrows();
    let sigma_prior = DMatrix::from_diagonal(&DVector::from_column_slice(prior_var));
    let marg = &ad * sigma_prior * ad.transpose() + DMatrix::identity(m, m) * sigma2;
    let marg_chol = marg
        .cholesky()
        .ok_or_else(|| Error::Numeric("marginal covariance is not positive definite".into()))?;
    let resid = &yv - &ad * &mu;
    let quad = resid.dot(&marg_chol.solve(&resid));
    let logdet = 2.0 * marg_chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let log_evidence = -0.5 * (quad + logdet + m as f64 * (2.0 * std::f64::consts::PI).ln());

    Ok(OracleResult {
        posterior_mean: x_mean.as_slice().to_vec(),
        latent_mean: mean_z.as_slice().to_vec(),
        posterior_cov_diag: img_cov.diagonal().as_slice().to_vec(),
        log_evidence,
    })
}

/// `10 log10(peak^2 / MSE)`, capped at [`PSNR_CAP`] for identical inputs.
pub fn psnr(x: &[f64], x_ref: &[f64], peak: f64) -> Result<f64> {
    ensure_len("psnr reference", x.len(), x_ref)?;
    if !(peak > 0.0) {
        return Err(Error::Parameter(format!(
            "psnr peak must be positive, got {peak}"
        )));
    }
    let mse = crate::vecops::mse(x, x_ref);
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP))
}

pub const PSNR_CAP: f64 = 99.0;
