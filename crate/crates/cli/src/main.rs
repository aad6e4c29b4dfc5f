use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pointsim::harness::{
    artifacts::render_summary, compare, read_run, run_scenario, scenarios, write_run, ConfigError, Mode,
    RunOptions, ScenarioConfig,
};

use pointsim_cli::{run_status, EXIT_CONFIG};

#[derive(Parser)]
#[command(name = "pointsim", version, about = "Deterministic IP-over-ICN simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario in one mode and write its artifacts.
    Run {
        /// Scenario file, or the name of a shipped scenario.
        #[arg(long)]
        scenario: String,
        #[arg(long, value_parser = ["icn", "ip"])]
        mode: String,
        /// Overrides the seed in the scenario params.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Skip metric samples (the event log is unaffected).
        #[arg(long)]
        no_samples: bool,
    },
    /// Compare the artifacts of two runs of the same config and seed.
    Compare { a: PathBuf, b: PathBuf },
    /// Check a scenario file and print its effective config.
    Validate { file: String },
}

fn load(arg: &str) -> Result<ScenarioConfig, ConfigError> {
    let path = Path::new(arg);
    if !path.exists() {
        if let Some(cfg) = scenarios::shipped(arg) {
            return cfg;
        }
    }
    ScenarioConfig::load(path)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Run { scenario, mode, seed, out, no_samples } => {
            let mut cfg = match load(&scenario) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_CONFIG);
                }
            };
            if let Some(s) = seed {
                cfg = cfg.with_seed(s);
            }
            let mode: Mode = mode.parse().expect("checked by clap");
            let run = match run_scenario(&cfg, mode, RunOptions { samples: !no_samples }) {
                Ok(r) => r,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_CONFIG);
                }
            };
            if let Err(e) = write_run(&run, &out) {
                eprintln!("error: {e}");
                return ExitCode::from(EXIT_CONFIG);
            }
            print!("{}", render_summary(&run.summary, &run.violations));
            for v in &run.violations {
                eprintln!("invariant violated: {v}");
            }
            ExitCode::from(run_status(&run))
        }
        Cmd::Compare { a, b } => {
            let runs = read_run(&a).and_then(|ra| Ok((ra, read_run(&b)?)));
            let (ra, rb) = match runs {
                Ok(r) => r,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_CONFIG);
                }
            };
            match compare(&ra, &rb) {
                Ok(report) => {
                    print!("{}", report.render());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(EXIT_CONFIG)
                }
            }
        }
        Cmd::Validate { file } => match load(&file) {
            Ok(cfg) => {
                println!("{}", serde_json_pretty(&cfg));
                println!("config hash {}", cfg.config_hash());
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(EXIT_CONFIG)
            }
        },
    }
}

fn serde_json_pretty(cfg: &ScenarioConfig) -> String {
    format!("{:#}", cfg.effective())
}
