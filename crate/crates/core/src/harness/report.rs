use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use image::{ImageBuffer, Luma};

use crate::error::{Error, Result};
use crate::operators::ImageShape;

/// Writes `data` as a 16-bit grayscale PNG after mapping `[lo, hi]` to
/// `[0, 1]` and clamping.
pub fn write_png16(path: &Path, data: &[f64], shape: ImageShape, lo: f64, hi: f64) -> Result<()> {
    if data.len() != shape.len() {
        return Err(Error::dim("png pixels", shape.len(), data.len()));
    }
    if !(hi > lo) {
        return Err(Error::Parameter(format!(
            "display range must satisfy lo < hi, got [{lo}, {hi}]"
        )));
    }
    let pixels: Vec<u16> = data
        .iter()
        .map(|v| {
            let u = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
            let u = if u.is_nan() { 0.0 } else { u };
            (u * 65535.0).round() as u16
        })
        .collect();
    let img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(shape.width as u32, shape.height as u32, pixels)
            .expect("buffer matches shape");
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads a 16-bit grayscale PNG back to `[0, 1]` values.
pub fn read_png16(path: &Path) -> Result<(Vec<f64>, ImageShape)> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let gray = img.into_luma16();
    let shape = ImageShape::new(gray.height() as usize, gray.width() as usize);
    Ok((
        gray.into_raw()
            .into_iter()
            .map(|p| p as f64 / 65535.0)
            .collect(),
        shape,
    ))
}

/// Writes a single-channel little-endian PFM (rows stored bottom to top).
pub fn write_pfm(path: &Path, data: &[f64], shape: ImageShape) -> Result<()> {
    if data.len() != shape.len() {
        return Err(Error::dim("pfm pixels", shape.len(), data.len()));
    }
    let mut bytes = format!("Pf\n{} {}\n-1.0\n", shape.width, shape.height).into_bytes();
    for row in (0..shape.height).rev() {
        for v in &data[row * shape.width..(row + 1) * shape.width] {
            bytes.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

/// Reads a single-channel PFM written by [`write_pfm`] (either endianness).
pub fn read_pfm(path: &Path) -> Result<(Vec<f64>, ImageShape)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = || Error::Parameter(format!("{}: malformed PFM", path.display()));
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad());
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "Pf" {
        return Err(bad());
    }
    let width: usize = fields[1].parse().map_err(|_| bad())?;
    let height: usize = fields[2].parse().map_err(|_| bad())?;
    let scale: f64 = fields[3].parse().map_err(|_| bad())?;
    let body = bytes.get(pos..pos + 4 * width * height).ok_or_else(bad)?;
    let vals: Vec<f64> = body
        .chunks_exact(4)
        .map(|c| {
            let arr: [u8; 4] = c.try_into().expect("chunk of 4");
            if scale < 0.0 {
                f32::from_le_bytes(arr) as f64
            } else {
                f32::from_be_bytes(arr) as f64
            }
        })
        .collect();
    let mut data = vec![0.0; width * height];
    for (r, row) in vals.chunks_exact(width).enumerate() {
        let dst = height - 1 - r;
        data[dst * width..(dst + 1) * width].copy_from_slice(row);
    }
    Ok((data, ImageShape::new(height, width)))
}

pub const SUMMARY_COLUMNS: [&str; 5] = ["solver", "metric", "mean", "std", "count"];

pub const SUMMARY_NOTE: &str =
    "# FID and LPIPS are not computed; metrics are MSE, PSNR, final data misfit and distance to the closed-form posterior mean";

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub solver: String,
    pub metric: String,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub count: usize,
}

impl SummaryRow {
    pub fn from_values(solver: &str, metric: &str, values: &[f64]) -> Self {
        let n = values.len();
        let mean = if n == 0 {
            f64::NAN
        } else {
            values.iter().sum::<f64>() / n as f64
        };
        let std = if n == 0 {
            f64::NAN
        } else {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64).sqrt()
        };
        SummaryRow {
            solver: solver.to_string(),
            metric: metric.to_string(),
            mean,
            std,
            count: n,
        }
    }
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::new();
    writeln!(out, "{SUMMARY_NOTE}").expect("string write");
    writeln!(out, "{}", SUMMARY_COLUMNS.join(",")).expect("string write");
    for r in rows {
        writeln!(
            out,
            "{},{},{:.10e},{:.10e},{}",
            r.solver, r.metric, r.mean, r.std, r.count
        )
        .expect("string write");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_roundtrip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.png");
        let shape = ImageShape::new(3, 5);
        write_png16(&p, &[0.5; 15], shape, 0.0, 1.0).unwrap();
        let (back, s) = read_png16(&p).unwrap();
        assert_eq!(s, shape);
        assert!(back.iter().all(|v| (v - 0.5).abs() <= 1.0 / 65535.0));
    }

    #[test]
    fn out_of_range_values_clamp() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.png");
        write_png16(&p, &[1.5, -0.5], ImageShape::new(1, 2), 0.0, 1.0).unwrap();
        assert_eq!(read_png16(&p).unwrap().0, vec![1.0, 0.0]);
    }

    #[test]
    fn checkerboard_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.png");
        let shape = ImageShape::new(6, 6);
        let data: Vec<f64> = (0..36).map(|i| ((i / 6 + i % 6) % 2) as f64).collect();
        write_png16(&p, &data, shape, 0.0, 1.0).unwrap();
        assert_eq!(read_png16(&p).unwrap().0, data);
    }

    #[test]
    fn pfm_roundtrip_preserves_orientation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("k.pfm");
        let shape = ImageShape::new(2, 3);
        let data = vec![0.0, 0.25, 0.5, 0.75, 1.0, 1.25];
        write_pfm(&p, &data, shape).unwrap();
        assert_eq!(read_pfm(&p).unwrap(), (data, shape));
    }

    #[test]
    fn summary_stats() {
        let r = SummaryRow::from_values("p2l", "mse", &[1.0, 3.0]);
        assert_eq!((r.mean, r.std, r.count), (2.0, 1.0, 2));
        let csv = summary_csv(&[r]);
        assert!(csv.starts_with("# FID and LPIPS"));
        assert_eq!(csv.lines().nth(1).unwrap(), "solver,metric,mean,std,count");
    }
}
