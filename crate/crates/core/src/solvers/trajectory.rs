use std::fmt::Write as _;
use std::path::Path;

use super::config::SolverKind;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    /// Position in the sampled timestep sequence, counting down to 1.
    pub step: usize,
    pub t: usize,
    /// `|A D(z0_hat) - y|` at this step.
    pub residual: f64,
    /// Prompt loss after tuning; `None` when no tuning ran.
    pub prompt_loss: Option<f64>,
    /// Whether the data-consistency projection was applied.
    pub projected: bool,
    pub embedding_norm: f64,
    /// Whether prompt tuning had to halve its learning rate.
    pub lr_retry: bool,
    /// Whether a closed-form data step fell back to CG.
    pub cg_fallback: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub solver: SolverKind,
    pub records: Vec<StepRecord>,
    pub final_latent: Vec<f64>,
    /// `D(z_0)`
    pub final_image: Vec<f64>,
    pub embedding: Vec<f64>,
}

pub const TRAJECTORY_COLUMNS: [&str; 5] = [
    "step",
    "residual",
    "prompt_loss",
    "projected",
    "embedding_norm",
];

impl Trajectory {
    pub fn final_residual(&self) -> Option<f64> {
        self.records.last().map(|r| r.residual)
    }

    pub fn to_csv(&self) -> String {
        let mut out = TRAJECTORY_COLUMNS.join(",");
        out.push('\n');
        for r in &self.records {
            let loss = r
                .prompt_loss
                .map(|v| format!("{v:.10e}"))
                .unwrap_or_default();
            writeln!(
                out,
                "{},{:.10e},{},{},{:.10e}",
                r.t, r.residual, loss, r.projected as u8, r.embedding_norm
            )
            .expect("writing to a string");
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}
