use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use softrod::control::check_convergence_conditions;
use softrod::discretize::{check_cfl, Scheme};
use softrod::harness::{emit_csv, run_closed_loop, FeedbackSource, RunConfig};
use softrod::rod::make_initial_state;

#[derive(Parser)]
#[command(name = "softrod", version, about = "Cosserat rod tracking control and state estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one closed-loop simulation and write CSV output.
    Run {
        /// `key = value` configuration file; defaults apply without one.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory (overrides `out_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Simulated time in seconds.
        #[arg(long)]
        duration: Option<f64>,
        /// Controller input: `true` or `estimated`.
        #[arg(long)]
        feedback: Option<FeedbackSource>,
        /// Time stepper: `rk4` or `euler`.
        #[arg(long)]
        scheme: Option<Scheme>,
    },
    /// Check the initial-condition requirements and the CFL bound only.
    Check {
        /// `key = value` configuration file; defaults apply without one.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run once per override list, e.g. `k_p=2,k_v=3 seed=4`.
    Sweep {
        /// Base configuration each override list is applied to.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Root directory; runs write to `run_000`, `run_001`, ... below it.
        #[arg(long)]
        out: Option<PathBuf>,
        /// One argument per run: `key=value` pairs separated by commas or spaces.
        #[arg(required = true)]
        overrides: Vec<String>,
    },
}

fn load(path: Option<&PathBuf>) -> softrod::Result<RunConfig> {
    match path {
        Some(p) => RunConfig::from_file(p),
        None => Ok(RunConfig::default()),
    }
}

fn run_one(cfg: &RunConfig, dir: &std::path::Path) -> softrod::Result<bool> {
    let out = run_closed_loop(cfg)?;
    emit_csv(&out, dir)?;
    if let Some(last) = out.records.last() {
        println!(
            "{}: t = {:.3}, tracking [{:.3e} {:.3e} {:.3e} {:.3e}]",
            dir.display(),
            last.t,
            last.tracking[0],
            last.tracking[1],
            last.tracking[2],
            last.tracking[3]
        );
    }
    if let Some(err) = &out.failure {
        eprintln!("run failed: {err}");
    }
    Ok(out.succeeded())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out, seed, duration, feedback, scheme } => load(config.as_ref()).and_then(|mut cfg| {
            if let Some(v) = seed {
                cfg.seed = v;
            }
            if let Some(v) = duration {
                cfg.duration = v;
            }
            if let Some(v) = feedback {
                cfg.feedback = v;
            }
            if let Some(v) = scheme {
                cfg.scheme = v;
            }
            if let Some(dir) = &out {
                cfg.out_dir = dir.display().to_string();
            }
            cfg.validate()?;
            let dir = PathBuf::from(&cfg.out_dir);
            run_one(&cfg, &dir)
        }),
        Command::Check { config } => load(config.as_ref()).and_then(|cfg| {
            let grid = cfg.grid()?;
            let params = cfg.params()?;
            let x0 = make_initial_state(&grid, cfg.scenario);
            let report = check_convergence_conditions(&x0, &cfg.trajectory()?, &grid, &cfg.gains(grid.n_nodes())?);
            let cfl = check_cfl(&params, &grid, cfg.dt);
            println!(
                "initial conditions: {} (attitude margin {:.6e}, rate margin {:.6e})",
                if report.all_hold() { "hold" } else { "violated" },
                report.min_attitude_margin(),
                report.min_rate_margin()
            );
            if !report.all_hold() {
                println!("failing nodes: {:?}", report.failing_nodes());
            }
            println!(
                "cfl: dt = {:e}, bound = {:.6e} ({})",
                cfl.dt,
                cfl.dt_max,
                if cfl.passes { "ok" } else { "exceeded" }
            );
            Ok(report.all_hold() && cfl.passes)
        }),
        Command::Sweep { config, out, overrides } => load(config.as_ref()).and_then(|base| {
            let root = out.unwrap_or_else(|| PathBuf::from(&base.out_dir));
            let mut all_ok = true;
            for (i, item) in overrides.iter().enumerate() {
                let mut cfg = base.clone();
                cfg.apply_overrides(item)?;
                let dir = root.join(format!("run_{i:03}"));
                cfg.out_dir = dir.display().to_string();
                cfg.validate()?;
                all_ok &= run_one(&cfg, &dir)?;
            }
            Ok(all_ok)
        }),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
