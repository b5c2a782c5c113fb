//! Noise prediction on latents larger than the model's native size by
//! averaging overlapping windows.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::operators::ImageShape;
use crate::score::EpsilonModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatchWeighting {
    Uniform,
    /// Separable Gaussian over the window with the given variance, in
    /// coordinates normalized by the window width.
    Gaussian(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchedEpsilon {
    pub eps: Vec<f64>,
    /// Accumulated window weight per latent cell.
    pub weight: Vec<f64>,
    pub windows: usize,
}

/// Window offsets along one axis; the last window is clamped to the edge.
pub fn window_starts(extent: usize, patch: usize, stride: usize) -> Vec<usize> {
    let mut starts: Vec<usize> = (0..)
        .map(|i| i * stride)
        .take_while(|s| s + patch <= extent)
        .collect();
    if starts.last().is_none_or(|&s| s + patch < extent) {
        starts.push(extent - patch);
    }
    starts
}

fn profile(patch: usize, weighting: PatchWeighting) -> Vec<f64> {
    match weighting {
        PatchWeighting::Uniform => vec![1.0; patch],
        PatchWeighting::Gaussian(var) => {
            let mid = (patch as f64 - 1.0) / 2.0;
            let w = patch as f64;
            (0..patch)
                .map(|x| {
                    let d = x as f64 - mid;
                    (-(d * d) / (w * w) / (2.0 * var)).exp() / (2.0 * PI * var).sqrt()
                })
                .collect()
        }
    }
}

/// Evaluates `model` (native size `patch x patch`) on every window of the
/// `shape` latent grid and returns the weight-normalized aggregate.
#[allow(clippy::too_many_arguments)]
pub fn patched_epsilon(
    model: &dyn EpsilonModel,
    z_t: &[f64],
    shape: ImageShape,
    t: usize,
    c: &[f64],
    patch: usize,
    stride: usize,
    weighting: PatchWeighting,
) -> Result<PatchedEpsilon> {
    ensure_len("patched latent", shape.len(), z_t)?;
    ensure_len("embedding", model.embedding_dim(), c)?;
    model.schedule().check_step(t)?;
    if patch == 0 || stride == 0 {
        return Err(Error::Parameter("patch and stride must be positive".into()));
    }
    if stride > patch {
        return Err(Error::Parameter(format!(
            "stride {stride} exceeds patch {patch}: windows would leave gaps"
        )));
    }
    if patch > shape.height || patch > shape.width {
        return Err(Error::Parameter(format!(
            "patch {patch} exceeds latent grid {}x{}",
            shape.height, shape.width
        )));
    }
    if model.latent_dim() != patch * patch {
        return Err(Error::dim(
            "model native size",
            patch * patch,
            model.latent_dim(),
        ));
    }
    if let PatchWeighting::Gaussian(v) = weighting {
        if !(v > 0.0) {
            return Err(Error::Parameter(
                "gaussian patch variance must be positive".into(),
            ));
        }
    }
    let prof = profile(patch, weighting);
    let (rows, cols) = (
        window_starts(shape.height, patch, stride),
        window_starts(shape.width, patch, stride),
    );
    if rows.len() * cols.len() == 1 {
        return Ok(PatchedEpsilon {
            eps: model.predict(z_t, t, c),
            weight: (0..patch * patch)
                .map(|k| prof[k / patch] * prof[k % patch])
                .collect(),
            windows: 1,
        });
    }
    let mut acc = vec![0.0; shape.len()];
    let mut weight = vec![0.0; shape.len()];
    let mut window = vec![0.0; patch * patch];
    for &r0 in &rows {
        for &c0 in &cols {
            for i in 0..patch {
                let src = (r0 + i) * shape.width + c0;
                window[i * patch..(i + 1) * patch].copy_from_slice(&z_t[src..src + patch]);
            }
            let eps = model.predict(&window, t, c);
            for i in 0..patch {
                for j in 0..patch {
                    let w = prof[i] * prof[j];
                    let idx = (r0 + i) * shape.width + c0 + j;
                    acc[idx] += w * eps[i * patch + j];
                    weight[idx] += w;
                }
            }
        }
    }
    let eps = acc.iter().zip(&weight).map(|(a, w)| a / w).collect();
    Ok(PatchedEpsilon {
        eps,
        weight,
        windows: rows.len() * cols.len(),
    })
}
