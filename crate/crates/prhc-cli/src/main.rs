use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use prhc::validate::Suite;
use prhc_cli::{cmd_compare, cmd_openloop_study, cmd_rhc, cmd_validate, CliError, Experiment, ExperimentConfig, Mode};

#[derive(Parser)]
#[command(name = "prhc", version, about = "Certified reduced-order receding horizon control experiments")]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for randomized suites, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Workers for sweeps.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Value function error and certificate against the basis size.
    OpenloopStudy,
    /// Closed loop with the full-order or the certified reduced model.
    Rhc {
        #[arg(long, value_enum)]
        mode: ModeArg,
    },
    /// Relative errors and speed-up of the reduced run against the full-order run.
    Compare,
    /// Oracle suite on small instances.
    Validate {
        #[arg(value_parser = parse_suite)]
        suite: Suite,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Fom,
    Rom,
}

fn parse_suite(s: &str) -> Result<Suite, String> {
    s.parse().map_err(|e: prhc::Error| e.to_string())
}

fn load(cli: &Cli) -> Result<Experiment, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| prhc_cli::ConfigError::Invalid("--config is required for this command".into()))?;
    let mut config = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let exp = Experiment::new(config, cli.out.as_deref())?;
    let r = exp.resolved();
    eprintln!(
        "config {} (hash {}): {} dofs, tau {}, sampling {} ({} steps), horizon {} ({} steps), eta_H {:.6}, eta_V {:.6}, |B| {:.6}",
        path.display(),
        &r.config_hash[..12],
        r.dofs,
        r.tau,
        r.sampling_time,
        r.sampling_steps,
        r.horizon,
        r.horizon_steps,
        r.shift,
        r.coercivity,
        r.input_norm
    );
    Ok(exp)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::OpenloopStudy => {
            let exp = load(cli)?;
            let rows = cmd_openloop_study(&exp, cli.threads)?;
            println!("horizon,lambda,r,e_value,delta_value,effectivity");
            for r in &rows {
                println!("{},{},{},{:.3e},{:.3e},{:.3e}", r.horizon, r.lambda, r.dim, r.error, r.bound, r.effectivity);
            }
        }
        Command::Rhc { mode } => {
            let exp = load(cli)?;
            let mode = match mode {
                ModeArg::Fom => Mode::Fom,
                ModeArg::Rom => Mode::Rom,
            };
            let run = cmd_rhc(&exp, mode)?;
            let s = &run.summary;
            println!(
                "{}: J = {:.6}, |y(T)|_H = {:.3e}, decay rate {:.3}, FOM gradients {}, updates {}, r = {}, {:.2} s -> {}",
                s.mode,
                s.total_cost,
                s.final_norm,
                s.decay_rate,
                s.fom_gradient_evals,
                s.model_updates,
                s.final_dim,
                s.wall_seconds,
                run.dir.display()
            );
        }
        Command::Compare => {
            let exp = load(cli)?;
            let c = cmd_compare(&exp)?;
            println!(
                "e_J {:.3e}, e_u {:.3e}, e_y {:.3e}, e_alpha {}, speed-up {:.2}, FOM gradient ratio {:.1}",
                c.relative_cost_error,
                c.relative_control_error,
                c.relative_state_error,
                c.relative_index_error.map_or("n/a".into(), |v| format!("{v:.3e}")),
                c.speed_up,
                c.gradient_ratio
            );
        }
        Command::Validate { suite } => {
            let seed = match (&cli.config, cli.seed) {
                (_, Some(s)) => s,
                (Some(path), None) => ExperimentConfig::load(path)?.seed,
                (None, None) => prhc::validate::SuiteOptions::default().seed,
            };
            let report = cmd_validate(*suite, seed)?;
            println!("{report}");
            if !report.passed() {
                return Err(CliError::Failed(format!("suite {suite} failed")));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
