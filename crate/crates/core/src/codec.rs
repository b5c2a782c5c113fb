//! Encoder/decoder pairs `E: R^n -> R^k`, `D: R^k -> R^n` with controllable
//! autoencoding error, and the repeated-autoencoding experiment.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffmap::{Dense, DiffMap, Identity, TanhMlp};
use crate::error::{ensure_len, Error, Result};
use crate::vecops::{all_finite, norm, sub};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodecKind {
    LinearOrthogonal,
    LinearPerturbed,
    MlpTanh,
}

fn default_hidden() -> usize {
    32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodecSpec {
    pub kind: CodecKind,
    pub n: usize,
    pub k: usize,
    #[serde(default)]
    pub imperfection: f64,
    #[serde(default)]
    pub seed: u64,
    /// Hidden width of the `mlp_tanh` maps.
    #[serde(default = "default_hidden")]
    pub hidden: usize,
}

impl CodecSpec {
    pub fn new(kind: CodecKind, n: usize, k: usize, imperfection: f64, seed: u64) -> Self {
        CodecSpec {
            kind,
            n,
            k,
            imperfection,
            seed,
            hidden: default_hidden(),
        }
    }
}

#[derive(Debug, Clone)]
enum Maps {
    Linear { encoder: Dense, decoder: Dense },
    Mlp { encoder: TanhMlp, decoder: TanhMlp },
    Identity { dim: usize },
}

/// An autoencoder pair. Cheap to clone; the maps are shared.
#[derive(Clone)]
pub struct LatentCodec {
    kind: Option<CodecKind>,
    imperfection: f64,
    maps: Arc<Maps>,
    encoder: Arc<dyn DiffMap>,
    decoder: Arc<dyn DiffMap>,
}

impl std::fmt::Debug for LatentCodec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LatentCodec")
            .field("kind", &self.kind)
            .field("n", &self.image_dim())
            .field("k", &self.latent_dim())
            .field("imperfection", &self.imperfection)
            .finish()
    }
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> DMatrix<f64> {
    let normal = Normal::new(0.0, std).expect("std is positive");
    DMatrix::from_fn(rows, cols, |_, _| normal.sample(rng))
}

/// `n x k` matrix with orthonormal columns.
fn orthonormal_columns(rng: &mut ChaCha8Rng, n: usize, k: usize) -> DMatrix<f64> {
    let g = gaussian_matrix(rng, n, k, 1.0);
    let qr = g.qr();
    let mut q = qr.q();
    // fix column signs against the diagonal of R so the basis is a
    // deterministic function of the draw
    let r = qr.r();
    for j in 0..k {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

fn random_mlp(rng: &mut ChaCha8Rng, n_in: usize, hidden: usize, n_out: usize) -> TanhMlp {
    let w1 = Dense::from_matrix(&gaussian_matrix(
        rng,
        hidden,
        n_in,
        1.0 / (n_in as f64).sqrt(),
    ));
    let b1 = (0..hidden)
        .map(|_| {
            let g: f64 = StandardNormal.sample(rng);
            0.1 * g
        })
        .collect::<Vec<f64>>();
    let w2 = Dense::from_matrix(&gaussian_matrix(
        rng,
        n_out,
        hidden,
        1.0 / (hidden as f64).sqrt(),
    ));
    let b2 = vec![0.0; n_out];
    TanhMlp::new(w1, b1, w2, b2).expect("shapes are consistent by construction")
}

pub fn make_codec(spec: &CodecSpec) -> Result<LatentCodec> {
    let CodecSpec {
        kind,
        n,
        k,
        imperfection,
        seed,
        hidden,
    } = *spec;
    if k == 0 || k >= n {
        return Err(Error::Parameter(format!(
            "codec needs 1 <= k < n, got k = {k}, n = {n}"
        )));
    }
    if !(imperfection >= 0.0) || !imperfection.is_finite() {
        return Err(Error::Parameter(format!(
            "imperfection must be >= 0, got {imperfection}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let maps = match kind {
        CodecKind::LinearOrthogonal | CodecKind::LinearPerturbed => {
            let q = orthonormal_columns(&mut rng, n, k);
            let mut d = q.clone();
            if kind == CodecKind::LinearPerturbed && imperfection > 0.0 {
                let p = gaussian_matrix(&mut rng, n, k, 1.0);
                let spectral = p.singular_values().max();
                d += p * (imperfection / spectral);
            }
            Maps::Linear {
                encoder: Dense::from_matrix(&q.transpose()),
                decoder: Dense::from_matrix(&d),
            }
        }
        CodecKind::MlpTanh => {
            if hidden == 0 {
                return Err(Error::Parameter(
                    "mlp codec needs a positive hidden width".into(),
                ));
            }
            Maps::Mlp {
                encoder: random_mlp(&mut rng, n, hidden, k),
                decoder: random_mlp(&mut rng, k, hidden, n),
            }
        }
    };
    Ok(LatentCodec::from_maps(Some(kind), imperfection, maps))
}

impl LatentCodec {
    fn from_maps(kind: Option<CodecKind>, imperfection: f64, maps: Maps) -> Self {
        let (encoder, decoder): (Arc<dyn DiffMap>, Arc<dyn DiffMap>) = match &maps {
            Maps::Linear { encoder, decoder } => {
                (Arc::new(encoder.clone()), Arc::new(decoder.clone()))
            }
            Maps::Mlp { encoder, decoder } => {
                (Arc::new(encoder.clone()), Arc::new(decoder.clone()))
            }
            Maps::Identity { dim } => (
                Arc::new(Identity { dim: *dim }),
                Arc::new(Identity { dim: *dim }),
            ),
        };
        LatentCodec {
            kind,
            imperfection,
            maps: Arc::new(maps),
            encoder,
            decoder,
        }
    }

    /// `E = D = I` on `R^n`; the latent space is the image space.
    pub fn identity(n: usize) -> Self {
        LatentCodec::from_maps(None, 0.0, Maps::Identity { dim: n })
    }

    /// Linear codec from explicit matrices (`encoder` is `k x n`, `decoder` is `n x k`).
    pub fn linear(encoder: Dense, decoder: Dense) -> Result<Self> {
        if encoder.rows != decoder.cols || encoder.cols != decoder.rows {
            return Err(Error::dim(
                "linear codec",
                format!("decoder {}x{}", encoder.cols, encoder.rows),
                format!("{}x{}", decoder.rows, decoder.cols),
            ));
        }
        Ok(LatentCodec::from_maps(
            None,
            0.0,
            Maps::Linear { encoder, decoder },
        ))
    }

    pub fn kind(&self) -> Option<CodecKind> {
        self.kind
    }

    pub fn imperfection(&self) -> f64 {
        self.imperfection
    }

    pub fn is_identity(&self) -> bool {
        matches!(*self.maps, Maps::Identity { .. })
    }

    pub fn is_linear(&self) -> bool {
        !matches!(*self.maps, Maps::Mlp { .. })
    }

    pub fn image_dim(&self) -> usize {
        self.decoder.output_shape().len()
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.output_shape().len()
    }

    pub fn encoder(&self) -> &Arc<dyn DiffMap> {
        &self.encoder
    }

    pub fn decoder(&self) -> &Arc<dyn DiffMap> {
        &self.decoder
    }

    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        ensure_len("encoder input", self.image_dim(), x)?;
        Ok(self.encoder.eval(x))
    }

    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>> {
        ensure_len("decoder input", self.latent_dim(), z)?;
        Ok(self.decoder.eval(z))
    }

    /// Encoder parameters followed by decoder parameters, row-major.
    pub fn weights(&self) -> Vec<f64> {
        match &*self.maps {
            Maps::Linear { encoder, decoder } => {
                [encoder.data.as_slice(), decoder.data.as_slice()].concat()
            }
            Maps::Mlp { encoder, decoder } => [encoder.params(), decoder.params()].concat(),
            Maps::Identity { .. } => Vec::new(),
        }
    }
}

/// Writes `values` as consecutive little-endian `f64`s.
pub fn write_f64_le(path: &Path, values: &[f64]) -> Result<()> {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_f64_le(path: &Path) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Parameter(format!(
            "{}: length {} is not a multiple of 8",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

/// Iterates `x_{i+1} = D(E(x_i))` and returns `|x_{i+1} - x_i|` for each step.
pub fn autoencode_iterate(codec: &LatentCodec, x0: &[f64], iters: usize) -> Result<Vec<f64>> {
    if iters == 0 {
        return Err(Error::Parameter(
            "autoencode_iterate needs iters >= 1".into(),
        ));
    }
    ensure_len("autoencode start", codec.image_dim(), x0)?;
    let mut x = x0.to_vec();
    let mut distances = Vec::with_capacity(iters);
    for i in 0..iters {
        let next = codec.decoder.eval(&codec.encoder.eval(&x));
        if !all_finite(&next) {
            return Err(Error::Numeric(format!("autoencoding iterate {}", i + 1)));
        }
        distances.push(norm(&sub(&next, &x)));
        x = next;
    }
    Ok(distances)
}
