use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use obsbundle_cli::{
    cmd_classify, cmd_converge, cmd_lax, cmd_simulate, cmd_validate, CliError, CliResult, RunConfig, SimulateOutputs,
    ValidateOptions,
};
use obsbundle_core::lax::{LaxRunOptions, TodaParams};

#[derive(Parser)]
#[command(name = "obsbundle", version, about = "Geometric integrator for observation-induced fiber bundles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate a configured system and write trajectory and diagnostics.
    Simulate {
        config: PathBuf,
        #[arg(long)]
        trajectory: Option<PathBuf>,
        #[arg(long)]
        diagnostics: Option<PathBuf>,
    },
    /// Measure constraint and global convergence orders.
    Converge {
        config: PathBuf,
        #[arg(long, default_value_t = 4)]
        levels: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Classify the configured constraint on sampled surface points.
    Classify {
        config: PathBuf,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Flaschka spectrum drift and zero-curvature residuals of the Toda Lax pair.
    Lax {
        #[arg(long, default_value_t = 4)]
        n: usize,
        #[arg(long, default_value_t = 10.0)]
        t_final: f64,
        #[arg(long, default_value_t = 1e-3, allow_negative_numbers = true)]
        dt: f64,
        #[arg(long, default_value_t = TodaParams::default().delta0)]
        delta0: f64,
        #[arg(long, default_value_t = TodaParams::default().alpha_noise)]
        alpha_noise: f64,
        #[arg(long, default_value_t = TodaParams::default().beta_weight)]
        beta_weight: f64,
        #[arg(long, default_value_t = TodaParams::default().kappa)]
        kappa: f64,
        #[arg(long, default_value_t = TodaParams::default().alpha_momentum)]
        alpha_momentum: f64,
        /// Initial momenta, comma separated.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        p0: Option<Vec<f64>>,
        /// Initial observation errors, comma separated.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        eps0: Option<Vec<f64>>,
        /// Spectral parameters, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "0,0.5,1", allow_negative_numbers = true)]
        lambdas: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample-based properness conditions on a radial grid.
    Validate {
        config: PathBuf,
        #[arg(long, default_value_t = ValidateOptions::default().grid)]
        grid: usize,
        #[arg(long, default_value_t = ValidateOptions::default().radius)]
        radius: f64,
        #[arg(long, default_value_t = ValidateOptions::default().fit_min_distance)]
        fit_min_distance: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> CliResult<serde_json::Value> {
    match cli.command {
        Command::Simulate {
            config,
            trajectory,
            diagnostics,
        } => cmd_simulate(
            &RunConfig::load(&config)?,
            SimulateOutputs {
                trajectory: trajectory.as_deref(),
                diagnostics: diagnostics.as_deref(),
            },
        ),
        Command::Converge { config, levels, out } => cmd_converge(&RunConfig::load(&config)?, levels, out.as_deref()),
        Command::Classify {
            config,
            samples,
            seed,
            out,
        } => cmd_classify(&RunConfig::load(&config)?, samples, seed, out.as_deref()),
        Command::Lax {
            n,
            t_final,
            dt,
            delta0,
            alpha_noise,
            beta_weight,
            kappa,
            alpha_momentum,
            p0,
            eps0,
            lambdas,
            out,
        } => {
            let opts = LaxRunOptions {
                params: TodaParams {
                    n,
                    delta0,
                    alpha_noise,
                    beta_weight,
                    kappa,
                    alpha_momentum,
                },
                q0: None,
                p0,
                eps0,
                t_final,
                dt,
                lambdas,
            };
            cmd_lax(&opts, out.as_deref())
        }
        Command::Validate {
            config,
            grid,
            radius,
            fit_min_distance,
            out,
        } => cmd_validate(
            &RunConfig::load(&config)?,
            &ValidateOptions {
                grid,
                radius,
                fit_min_distance,
            },
            out.as_deref(),
        ),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(summary) => {
            println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            report(&e);
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn report(e: &CliError) {
    eprintln!("error[{}]: {e}", e.category());
    if let CliError::Run(obsbundle_core::BundleError::Aborted { source, .. }) = e {
        eprintln!("  caused by [{}]: {source}", source.category());
    }
}
