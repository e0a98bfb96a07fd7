use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;

use secure_platoon::scenario::{
    load_gains, prepare_design, run_condition, run_reliability_sweep, sweep_csv, synth_command, ScenarioConfig,
};
use secure_platoon::{Error, Result};

#[derive(Parser)]
#[command(name = "secure-platoon", version, about = "Secure state estimation for CACC platoons under sensor attacks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the sensor catalog and synthesize observer gains.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "gains.json")]
        out: PathBuf,
    },
    /// Simulate one scenario and write trace.csv, summary.json and spectrum.csv.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Gains from `synth`; falls back to `gains_path` in the config.
        #[arg(long)]
        gains: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Reliability metrics over attack amplitudes and seeds.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        gains: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', required = true)]
        amplitudes: Vec<f64>,
        #[arg(long, default_value_t = 10)]
        reps: usize,
        /// CSV destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn resolve_gains(config: &ScenarioConfig, config_path: &Path, cli: Option<PathBuf>) -> Option<PathBuf> {
    cli.or_else(|| {
        config.gains_path.as_ref().map(|p| {
            let p = PathBuf::from(p);
            if p.is_absolute() {
                p
            } else {
                config_path.parent().unwrap_or(Path::new(".")).join(p)
            }
        })
    })
}

fn read_gains(path: Option<PathBuf>) -> Result<Option<secure_platoon::synthesis::GainSet>> {
    match path {
        Some(p) if p.exists() => load_gains(&p).map(Some),
        Some(p) => Err(Error::InvalidConfig(format!(
            "gains file {} not found: run `secure-platoon synth --config <file> --out {}` first",
            p.display(),
            p.display()
        ))),
        None => Ok(None),
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { config, out } => {
            let cfg = ScenarioConfig::load(&config)?;
            let file = synth_command(&cfg)?;
            std::fs::write(&out, serde_json::to_string_pretty(&file)?)?;
            info!("{} observers, margin {:.3e}", file.gains.gains.len(), file.gains.margin);
            println!("wrote {}", out.display());
        }
        Command::Run { config, gains, seed, out_dir } => {
            let mut cfg = ScenarioConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let design = if cfg.condition.is_secured() {
                let path = resolve_gains(&cfg, &config, gains);
                let g = read_gains(path)?.ok_or_else(|| {
                    Error::InvalidConfig("secured condition needs gains: run `secure-platoon synth` and pass --gains".into())
                })?;
                Some(prepare_design(&cfg, Some(g))?)
            } else {
                None
            };
            let result = run_condition(&cfg, design.as_ref())?;
            result.write_outputs(&out_dir)?;
            let s = &result.summary;
            println!(
                "NC={} RMS_e={:.4} RC={:.4} MSDV={:.4}{}",
                s.safety.nc,
                s.safety.rms_e,
                s.comfort.rc,
                s.comfort.msdv_x,
                s.reliability.as_ref().map(|r| format!(" FP={} F1={:.4}", r.fp, r.f1)).unwrap_or_default()
            );
        }
        Command::Sweep { config, gains, amplitudes, reps, out } => {
            let cfg = ScenarioConfig::load(&config)?;
            let path = resolve_gains(&cfg, &config, gains);
            let design = prepare_design(&cfg, read_gains(path)?)?;
            let rows = run_reliability_sweep(&cfg, &design, &amplitudes, reps)?;
            let csv = sweep_csv(&rows);
            match out {
                Some(p) => std::fs::write(p, csv)?,
                None => print!("{csv}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
