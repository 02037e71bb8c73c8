use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use tdacm::scenario::{load_config, run, RunLog, RunSummary, ScenarioConfig, TerminationReason};

const OUT_DIR_ENV: &str = "TDACM_OUT_DIR";

#[derive(Parser)]
#[command(name = "tdacm", version, about = "Aerial continuum manipulator simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scenario and write its CSV log and summary.
    Run {
        config: PathBuf,
        /// Output directory (defaults to $TDACM_OUT_DIR, then ./out).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Multiplicative model perturbation factor.
        #[arg(long)]
        perturb: Option<f64>,
    },
    /// Parse and validate a scenario file.
    Validate { config: PathBuf },
    /// Run the scenario once per perturbation factor.
    Sweep {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        perturb_grid: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn with_overrides(mut cfg: ScenarioConfig, seed: Option<u64>, perturb: Option<f64>) -> tdacm::Result<ScenarioConfig> {
    if let Some(s) = seed {
        cfg.perturbation.seed = s;
    }
    if let Some(f) = perturb {
        cfg.perturbation.factor = f;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_outputs(dir: &Path, stem: &str, cfg: &ScenarioConfig, log: &RunLog, summary: &RunSummary) -> tdacm::Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let ns = cfg.rod_dof();
    let na = cfg.rod.tendon_count;
    let csv = dir.join(format!("{stem}.csv"));
    log.write_csv(fs::File::create(&csv)?, ns, na)?;
    fs::write(dir.join(format!("{stem}.summary.jsonl")), summary.to_json_line() + "\n")?;
    Ok(csv)
}

fn exit_for(reason: TerminationReason) -> ExitCode {
    match reason {
        TerminationReason::Converged => ExitCode::SUCCESS,
        _ => ExitCode::from(2),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn execute(command: Command) -> tdacm::Result<ExitCode> {
    match command {
        Command::Validate { config } => {
            let cfg = load_config(&config)?;
            println!("{}: ok ({} coordinates, dt {} s)", config.display(), 6 + cfg.rod_dof(), cfg.dt());
            Ok(ExitCode::SUCCESS)
        }
        Command::Run {
            config,
            out,
            seed,
            perturb,
        } => {
            let cfg = with_overrides(load_config(&config)?, seed, perturb)?;
            let (log, summary) = run(&cfg);
            let csv = write_outputs(&out_dir(out), &cfg.name, &cfg, &log, &summary)?;
            println!("{}", summary.to_json_line());
            log::info!("wrote {}", csv.display());
            Ok(exit_for(summary.reason))
        }
        Command::Sweep {
            config,
            perturb_grid,
            out,
            seed,
        } => {
            let base = load_config(&config)?;
            let cfgs = perturb_grid
                .iter()
                .map(|&f| {
                    let mut c = with_overrides(base.clone(), seed, Some(f))?;
                    c.name = format!("{}_p{f}", base.name);
                    Ok(c)
                })
                .collect::<tdacm::Result<Vec<_>>>()?;
            let results: Vec<(RunLog, RunSummary)> = cfgs.par_iter().map(run).collect();
            let dir = out_dir(out);
            let mut lines = String::new();
            println!("{:>8} {:>12} {:>12} {:>6} {}", "factor", "rmse0", "rmse_final", "steps", "reason");
            for (cfg, (log, summary)) in cfgs.iter().zip(&results) {
                write_outputs(&dir, &cfg.name, cfg, log, summary)?;
                lines += &(summary.to_json_line() + "\n");
                println!(
                    "{:>8} {:>12.5} {:>12.5} {:>6} {}",
                    cfg.perturbation.factor, summary.initial_rmse, summary.final_rmse, summary.steps, summary.reason
                );
            }
            fs::write(dir.join(format!("{}.sweep.jsonl", base.name)), lines)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}
