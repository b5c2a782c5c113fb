//! Blur kernels and inpainting masks.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Square, odd-sized, row-major convolution kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub size: usize,
    pub data: Vec<f64>,
}

impl Kernel {
    pub fn new(size: usize, data: Vec<f64>) -> Result<Self> {
        if size == 0 || size.is_multiple_of(2) {
            return Err(Error::Parameter(format!(
                "kernel size must be odd, got {size}"
            )));
        }
        if data.len() != size * size {
            return Err(Error::dim("kernel data", size * size, data.len()));
        }
        if data.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Parameter(
                "kernel entries must be finite and nonnegative".into(),
            ));
        }
        let total: f64 = data.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Parameter(format!(
                "kernel must sum to 1, sums to {total}"
            )));
        }
        Ok(Kernel { size, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let size = rows.len();
        if rows.iter().any(|r| r.len() != size) {
            return Err(Error::Parameter("kernel must be square".into()));
        }
        Kernel::new(size, rows.concat())
    }

    pub fn radius(&self) -> usize {
        self.size / 2
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.size + col]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }
}

fn normalize(mut data: Vec<f64>) -> Vec<f64> {
    let total: f64 = data.iter().sum();
    for v in &mut data {
        *v /= total;
    }
    data
}

pub fn gaussian_kernel(size: usize, sigma: f64) -> Result<Kernel> {
    if size == 0 || size.is_multiple_of(2) {
        return Err(Error::Parameter(format!(
            "kernel size must be odd, got {size}"
        )));
    }
    if !(sigma > 0.0) {
        return Err(Error::Parameter(format!(
            "gaussian sigma must be positive, got {sigma}"
        )));
    }
    let r = (size / 2) as f64;
    let mut data = Vec::with_capacity(size * size);
    for i in 0..size {
        for j in 0..size {
            let (di, dj) = (i as f64 - r, j as f64 - r);
            data.push((-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp());
        }
    }
    Ok(Kernel {
        size,
        data: normalize(data),
    })
}

/// Rasterized random-walk blur trajectory.
///
/// The walk starts along a seeded heading (scaled by `intensity`), and the
/// heading drifts by Gaussian increments proportional to `intensity`. With
/// `intensity == 0` the path is the horizontal segment through the centre row.
pub fn motion_kernel(size: usize, intensity: f64, seed: u64) -> Result<Kernel> {
    if size == 0 || size.is_multiple_of(2) {
        return Err(Error::Parameter(format!(
            "kernel size must be odd, got {size}"
        )));
    }
    if !(0.0..=1.0).contains(&intensity) {
        return Err(Error::Parameter(format!(
            "motion intensity must lie in [0, 1], got {intensity}"
        )));
    }
    if size == 1 {
        return Kernel::new(1, vec![1.0]);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let substeps = 8 * size;
    let radius = (size / 2) as f64;
    let step = 2.0 * radius / substeps as f64;

    let mut heading = intensity * rng.random_range(-PI..PI);
    let mut pts = Vec::with_capacity(substeps + 1);
    let (mut px, mut py) = (0.0f64, 0.0f64);
    pts.push((px, py));
    for _ in 0..substeps {
        let g: f64 = StandardNormal.sample(&mut rng);
        heading += intensity * (PI / 4.0) * g;
        px += step * heading.cos();
        py += step * heading.sin();
        pts.push((px, py));
    }
    let count = pts.len() as f64;
    let (mx, my) = pts
        .iter()
        .fold((0.0, 0.0), |(a, b), (x, y)| (a + x / count, b + y / count));
    let extent = pts
        .iter()
        .map(|(x, y)| (x - mx).abs().max((y - my).abs()))
        .fold(0.0f64, f64::max);
    let shrink = if extent > radius {
        radius / extent
    } else {
        1.0
    };

    let mut data = vec![0.0; size * size];
    let last = (size - 1) as f64;
    for (x, y) in pts {
        let col = ((x - mx) * shrink + radius).clamp(0.0, last);
        let row = ((y - my) * shrink + radius).clamp(0.0, last);
        splat(&mut data, size, row, col);
    }
    Ok(Kernel {
        size,
        data: normalize(data),
    })
}

fn splat(data: &mut [f64], size: usize, row: f64, col: f64) {
    let (r0, c0) = (row.floor() as usize, col.floor() as usize);
    let (fr, fc) = (row - r0 as f64, col - c0 as f64);
    let r1 = (r0 + 1).min(size - 1);
    let c1 = (c0 + 1).min(size - 1);
    data[r0 * size + c0] += (1.0 - fr) * (1.0 - fc);
    data[r0 * size + c1] += (1.0 - fr) * fc;
    data[r1 * size + c0] += fr * (1.0 - fc);
    data[r1 * size + c1] += fr * fc;
}

/// Keep mask where every pixel survives independently with probability `1 - p`.
pub fn random_keep_mask(len: usize, p: f64, seed: u64) -> Result<Vec<bool>> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Parameter(format!(
            "drop probability must lie in [0, 1], got {p}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..len).map(|_| rng.random::<f64>() >= p).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StrokeParams {
    pub min_drop: f64,
    pub max_drop: f64,
    pub brush_radius: f64,
}

impl Default for StrokeParams {
    fn default() -> Self {
        StrokeParams {
            min_drop: 0.10,
            max_drop: 0.20,
            brush_radius: 1.5,
        }
    }
}

/// Free-form mask built from thick random strokes. The dropped fraction is
/// drawn uniformly in `[min_drop, max_drop]` and painting stops once reached.
pub fn freeform_keep_mask(
    height: usize,
    width: usize,
    params: &StrokeParams,
    seed: u64,
) -> Result<Vec<bool>> {
    let StrokeParams {
        min_drop,
        max_drop,
        brush_radius,
    } = *params;
    if !(0.0 <= min_drop && min_drop <= max_drop && max_drop <= 1.0) {
        return Err(Error::Parameter(format!(
            "free-form drop range must satisfy 0 <= min <= max <= 1, got [{min_drop}, {max_drop}]"
        )));
    }
    if !(brush_radius > 0.0) {
        return Err(Error::Parameter("brush radius must be positive".into()));
    }
    let n = height * width;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frac = if max_drop > min_drop {
        rng.random_range(min_drop..=max_drop)
    } else {
        min_drop
    };
    let target = (frac * n as f64).round() as usize;
    let mut dropped = vec![false; n];
    let mut count = 0usize;
    let extent = height.min(width) as f64;

    let paint = |cy: f64, cx: f64, dropped: &mut Vec<bool>, count: &mut usize| {
        let r = brush_radius;
        let (y0, y1) = (
            (cy - r).floor().max(0.0) as usize,
            (cy + r).ceil().min(height as f64 - 1.0) as usize,
        );
        let (x0, x1) = (
            (cx - r).floor().max(0.0) as usize,
            (cx + r).ceil().min(width as f64 - 1.0) as usize,
        );
        for yy in y0..=y1 {
            for xx in x0..=x1 {
                if *count >= target {
                    return;
                }
                let (dy, dx) = (yy as f64 - cy, xx as f64 - cx);
                if dy * dy + dx * dx <= r * r && !dropped[yy * width + xx] {
                    dropped[yy * width + xx] = true;
                    *count += 1;
                }
            }
        }
    };

    while count < target {
        let mut y = rng.random_range(0.0..height as f64);
        let mut x = rng.random_range(0.0..width as f64);
        let vertices = rng.random_range(3..8);
        for _ in 0..vertices {
            let angle = rng.random_range(0.0..2.0 * PI);
            let length = rng.random_range(extent / 8.0..=extent / 3.0);
            let samples = (2.0 * length).ceil() as usize;
            for s in 0..=samples {
                let f = s as f64 / samples as f64;
                let py = (y + f * length * angle.sin()).clamp(0.0, height as f64 - 1.0);
                let px = (x + f * length * angle.cos()).clamp(0.0, width as f64 - 1.0);
                paint(py, px, &mut dropped, &mut count);
            }
            y = (y + length * angle.sin()).clamp(0.0, height as f64 - 1.0);
            x = (x + length * angle.cos()).clamp(0.0, width as f64 - 1.0);
            if count >= target {
                break;
            }
        }
    }
    Ok(dropped.into_iter().map(|d| !d).collect())
}
