use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use p2l::harness::{
    operator_image, run_checks, run_experiment, write_pfm, write_png16, ExperimentConfig,
    OUTPUT_DIR_ENV,
};
use p2l::operators::{make_operator, ImageShape, OperatorSpec};

#[derive(Parser)]
#[command(
    name = "p2l",
    version,
    about = "Latent diffusion solvers for linear inverse problems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config file.
    Run {
        config: PathBuf,
        /// Overrides the configured output directory.
        #[arg(long, env = OUTPUT_DIR_ENV)]
        output_dir: Option<PathBuf>,
    },
    /// Run the property suites: dot tests, gradient checks, prox oracle and
    /// fixed-point analysis.
    Check {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write an operator's kernel or mask as a 16-bit PNG and a PFM.
    Kernel {
        /// Operator spec as inline JSON or a path to a JSON file, e.g.
        /// '{"kind":"motion_blur","size":9,"intensity":0.5}'.
        spec: String,
        #[arg(long, default_value_t = 32)]
        height: usize,
        #[arg(long, default_value_t = 32)]
        width: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output path stem; `.png` and `.pfm` are appended.
        #[arg(long, default_value = "operator")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            log::error!("{e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, Box<dyn std::error::Error>> {
    match cli.command {
        Command::Run { config, output_dir } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(dir) = output_dir {
                cfg.output_dir = dir;
            }
            let report = run_experiment(cfg)?;
            for row in &report.rows {
                println!(
                    "{:<16} {:<16} {:>14.6e} ± {:.3e} (n={})",
                    row.solver, row.metric, row.mean, row.std, row.count
                );
            }
            log::info!("wrote {}", report.output_dir.display());
            if report.failures > 0 {
                log::warn!("{} solver runs failed", report.failures);
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Check { seed } => {
            let results = run_checks(seed)?;
            let failed = results.iter().filter(|(r, _)| !r.pass).count();
            for (r, _) in &results {
                println!("{r}");
            }
            println!("{} checks, {failed} failed", results.len());
            Ok(if failed == 0 {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
        Command::Kernel {
            spec,
            height,
            width,
            seed,
            out,
        } => {
            let text = match std::fs::read_to_string(&spec) {
                Ok(t) => t,
                Err(_) => spec,
            };
            let spec: OperatorSpec = serde_json::from_str(&text)?;
            let op = make_operator(&spec, ImageShape::new(height, width), seed)?;
            let (data, shape) = operator_image(&op);
            let hi = data
                .iter()
                .copied()
                .fold(0.0f64, f64::max)
                .max(f64::MIN_POSITIVE);
            let png = out.with_extension("png");
            let pfm = out.with_extension("pfm");
            write_png16(&png, &data, shape, 0.0, hi)?;
            write_pfm(&pfm, &data, shape)?;
            println!(
                "{} {}x{} -> {}, {}",
                op.kind().name(),
                shape.height,
                shape.width,
                png.display(),
                pfm.display()
            );
            Ok(ExitCode::SUCCESS)
        }
    }
}
