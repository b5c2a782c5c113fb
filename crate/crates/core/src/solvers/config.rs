use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::adam::AdamParams;
use crate::error::{Error, Result};
use crate::proximal::{GammaKind, ProxConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    P2l,
    P2lAdam,
    Ldps,
    GmlDps,
    Psld,
    Ldir,
    Dps,
    Dds,
    Diffpir,
}

impl SolverKind {
    pub const ALL: [SolverKind; 9] = [
        SolverKind::P2l,
        SolverKind::P2lAdam,
        SolverKind::Ldps,
        SolverKind::GmlDps,
        SolverKind::Psld,
        SolverKind::Ldir,
        SolverKind::Dps,
        SolverKind::Dds,
        SolverKind::Diffpir,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SolverKind::P2l => "p2l",
            SolverKind::P2lAdam => "p2l_adam",
            SolverKind::Ldps => "ldps",
            SolverKind::GmlDps => "gml_dps",
            SolverKind::Psld => "psld",
            SolverKind::Ldir => "ldir",
            SolverKind::Dps => "dps",
            SolverKind::Dds => "dds",
            SolverKind::Diffpir => "diffpir",
        }
    }

    /// Solvers that run directly on pixels with an image-space prior.
    pub fn is_image_space(self) -> bool {
        matches!(
            self,
            SolverKind::Dps | SolverKind::Dds | SolverKind::Diffpir
        )
    }

    pub fn is_p2l(self) -> bool {
        matches!(self, SolverKind::P2l | SolverKind::P2lAdam)
    }
}

/// Step size `rho_t` for the measurement-gradient update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RhoRule {
    Constant(f64),
    /// `c * alpha_bar_t`
    AlphaBarScaled(f64),
}

impl RhoRule {
    pub fn at(self, alpha_bar_t: f64) -> f64 {
        match self {
            RhoRule::Constant(c) => c,
            RhoRule::AlphaBarScaled(c) => c * alpha_bar_t,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradType {
    Gd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PromptConfig {
    /// Adam iterations per diffusion step (`K`).
    pub iters: usize,
    pub lr: f64,
    /// Decode the measurement-shifted posterior mean instead of Tweedie's.
    pub conditional_mean: bool,
    /// Step of the measurement shift applied before decoding.
    pub rho_shift: f64,
    /// Keep the Adam moments across diffusion steps instead of resetting them.
    pub persist_moments: bool,
}

impl Default for PromptConfig {
    fn default() -> Self {
        PromptConfig {
            iters: 5,
            lr: 1e-4,
            conditional_mean: true,
            rho_shift: 1.0,
            persist_moments: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffPirParams {
    pub zeta: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub solver: SolverKind,
    pub nfe: usize,
    pub eta: f64,
    pub rho: RhoRule,
    /// Project every `gamma_proj`-th step (counted along the sampled
    /// timestep sequence).
    pub gamma_proj: usize,
    pub project: bool,
    pub gamma_kind: GammaKind,
    pub prox: ProxConfig,
    pub prompt: PromptConfig,
    pub grad_type: GradType,
    pub adam: AdamParams,
    /// Weight of the fixed-point penalty for GML-DPS and PSLD.
    pub lambda_fix: f64,
    pub dds_gamma: f64,
    pub dds_cg_iters: usize,
    pub diffpir: DiffPirParams,
    /// Renoise the projected estimate (gated listing); `false` renoises the
    /// raw Tweedie estimate.
    pub renoise_projected: bool,
    pub seed: u64,
}

impl SolverConfig {
    /// Default settings per solver.
    pub fn preset(solver: SolverKind) -> Self {
        let mut cfg = SolverConfig {
            solver,
            nfe: 50,
            eta: 0.0,
            rho: RhoRule::Constant(1.0),
            gamma_proj: 4,
            project: true,
            gamma_kind: GammaKind::Prox,
            prox: ProxConfig::default(),
            prompt: PromptConfig::default(),
            grad_type: GradType::Gd,
            adam: AdamParams::default(),
            lambda_fix: 0.1,
            dds_gamma: 1.0,
            dds_cg_iters: 5,
            diffpir: DiffPirParams {
                zeta: 0.3,
                lambda: 7.0,
            },
            renoise_projected: true,
            seed: 0,
        };
        match solver {
            SolverKind::P2l => {}
            SolverKind::P2lAdam => {
                cfg.grad_type = GradType::Adam;
                cfg.rho = RhoRule::Constant(0.05);
            }
            SolverKind::Ldir => {
                cfg.grad_type = GradType::Adam;
                cfg.rho = RhoRule::Constant(0.05);
            }
            SolverKind::Dds | SolverKind::Diffpir => {
                cfg.eta = 1.0;
            }
            _ => {}
        }
        if !solver.is_p2l() {
            cfg.prompt.iters = 0;
            cfg.project = false;
        }
        cfg
    }

    /// Builds a config from a JSON object: the `solver` key selects the
    /// preset and every other key overrides it (nested objects merge).
    pub fn from_value(value: &Value) -> Result<Self> {
        let kind: SolverKind = serde_json::from_value(
            value
                .get("solver")
                .cloned()
                .ok_or_else(|| Error::Config("solver entry without a \"solver\" key".into()))?,
        )
        .map_err(|e| Error::Config(format!("solver kind: {e}")))?;
        let mut base = serde_json::to_value(SolverConfig::preset(kind)).expect("config serializes");
        merge(&mut base, value);
        let cfg: SolverConfig = serde_json::from_value(base)
            .map_err(|e| Error::Config(format!("solver config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Parameter(format!("{}: {msg}", self.solver.name())));
        if self.nfe == 0 {
            return bad("nfe must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return bad("eta must lie in [0, 1]");
        }
        if self.gamma_proj == 0 {
            return bad("gamma_proj must be >= 1");
        }
        if !(self.prompt.lr > 0.0) && self.prompt.iters > 0 {
            return bad("prompt lr must be positive");
        }
        if !(0.0..=1.0).contains(&self.diffpir.zeta) {
            return bad("diffpir zeta must lie in [0, 1]");
        }
        if self.lambda_fix < 0.0 || !(self.dds_gamma > 0.0) || self.diffpir.lambda < 0.0 {
            return bad("penalty weights must be nonnegative and dds_gamma positive");
        }
        if self.project || self.solver == SolverKind::Dds {
            self.prox.validate()?;
        }
        Ok(())
    }

    /// Gradient rule actually used for the latent update.
    pub fn effective_grad_type(&self) -> GradType {
        match self.solver {
            SolverKind::P2lAdam | SolverKind::Ldir => GradType::Adam,
            SolverKind::P2l => self.grad_type,
            _ => GradType::Gd,
        }
    }
}

/// Keys holding parameter structs, which merge field by field; every other
/// key (including the externally tagged `rho`) is replaced wholesale.
const NESTED: [&str; 4] = ["prox", "prompt", "adam", "diffpir"];

fn merge(base: &mut Value, over: &Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot)
                        if NESTED.contains(&k.as_str()) && slot.is_object() && v.is_object() =>
                    {
                        merge(slot, v)
                    }
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, o) => *b = o.clone(),
    }
}
