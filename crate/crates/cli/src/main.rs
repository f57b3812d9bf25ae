use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use silosim::classify::{classify, ClassifierParams};
use silosim::engine::{run_system, RunOptions};
use silosim::error::ConfigError;
use silosim::harness::{emit_plot_data, read_summary, run_sweep, SweepSpec};
use silosim::io::{load_trajectory, save_trajectory};
use silosim::model::{BackendConfig, BackendKind, Probability, SystemConfig};

const EXIT_RUN_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(name = "silosim", version, about = "Silo formation among mirroring agents")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one system and classify it.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        /// Output directory for trajectory.jsonl and classification.json.
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Record every agent's answer embedding in each snapshot.
        #[arg(long)]
        dump_embeddings: bool,
    },
    /// Run a (p, k) grid with replicates.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.2, 0.5, 0.9])]
        p_values: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = vec![3usize, 15, 29])]
        k_values: Vec<usize>,
        #[arg(long, default_value_t = 8)]
        replicates: u32,
        /// Concurrent runs; capped by SILOSIM_THREADS when set.
        #[arg(long)]
        parallelism: Option<usize>,
        /// Extra attempts for runs failing with transport errors.
        #[arg(long, default_value_t = 2)]
        retries: u32,
        #[arg(long, default_value = "sweep")]
        out: PathBuf,
    },
    /// Classify a stored trajectory and print the report as JSON.
    Classify {
        trajectory: PathBuf,
        /// Take classifier settings from this config file.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        m: Option<usize>,
        #[arg(long = "W")]
        window: Option<usize>,
        /// Also write the report to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Regenerate the figure CSVs from a summary.csv.
    Plotdata {
        summary: PathBuf,
        /// Defaults to the directory holding the summary.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Clone, Default)]
struct Overrides {
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long = "T")]
    t_final: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Replace the backend with the defaults of this kind (synthetic, gmm, llm).
    #[arg(long)]
    backend: Option<String>,
}

impl Overrides {
    fn apply(&self, mut config: SystemConfig) -> Result<SystemConfig, ConfigError> {
        if let Some(p) = self.p {
            config.p = Probability::new(p)?;
        }
        if let Some(k) = self.k {
            config.k = k;
        }
        if let Some(n) = self.n {
            config.n = n;
        }
        if let Some(t) = self.t_final {
            config.t_final = t;
        }
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(kind) = &self.backend {
            let kind: BackendKind = kind.parse()?;
            if kind != config.backend.kind() {
                config.backend = BackendConfig::default_for(kind);
            }
        }
        config.validate()?;
        Ok(config)
    }
}

enum Failure {
    Config(String),
    Run(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

fn load_config(path: &Path, overrides: &Overrides) -> Result<SystemConfig, Failure> {
    Ok(overrides.apply(SystemConfig::from_path(path)?)?)
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Failure::Run(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, contents).map_err(|e| Failure::Run(format!("{}: {e}", path.display())))
}

fn thread_cap() -> Option<usize> {
    std::env::var("SILOSIM_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&v| v > 0)
}

fn execute(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run {
            config,
            overrides,
            out,
            dump_embeddings,
        } => {
            let config = load_config(&config, &overrides)?;
            let options = RunOptions {
                record_embeddings: dump_embeddings,
            };
            let traj = run_system(&config, options).map_err(|e| Failure::Run(e.to_string()))?;
            let traj_path = out.join("trajectory.jsonl");
            save_trajectory(&traj.snapshots, &traj_path).map_err(|e| Failure::Run(e.to_string()))?;
            info!("wrote {}", traj_path.display());
            let report = classify(&traj, &config.classifier_params())
                .map_err(|e| Failure::Run(format!("classification failed: {e}")))?;
            let json = serde_json::to_string_pretty(&report).expect("report serializes");
            write_file(&out.join("classification.json"), &(json.clone() + "\n"))?;
            println!("{json}");
            Ok(())
        }
        Command::Sweep {
            config,
            overrides,
            p_values,
            k_values,
            replicates,
            parallelism,
            retries,
            out,
        } => {
            let base = load_config(&config, &overrides)?;
            let available = std::thread::available_parallelism().map_or(1, |n| n.get());
            let mut threads = parallelism.unwrap_or(available);
            if let Some(cap) = thread_cap() {
                threads = threads.min(cap);
            }
            let spec = SweepSpec {
                p_values: p_values
                    .into_iter()
                    .map(Probability::new)
                    .collect::<Result<_, _>>()?,
                k_values,
                replicates,
                parallelism: threads.max(1),
                retries,
                ..SweepSpec::new(base, out)
            };
            let outcome = run_sweep(&spec).map_err(|e| match e {
                silosim::error::HarnessError::Config(c) => Failure::Config(c.to_string()),
                other => Failure::Run(other.to_string()),
            })?;
            println!(
                "{} runs, {} failed; summary in {}",
                outcome.rows.len(),
                outcome.failures(),
                spec.output_dir.join(silosim::harness::SUMMARY_FILE).display()
            );
            if outcome.failures() > 0 {
                return Err(Failure::Run(format!("{} runs failed", outcome.failures())));
            }
            Ok(())
        }
        Command::Classify {
            trajectory,
            config,
            m,
            window,
            out,
        } => {
            let traj = load_trajectory(&trajectory).map_err(|e| Failure::Run(e.to_string()))?;
            let t_final = traj.final_tick().unwrap_or(0);
            let mut params = match config {
                Some(path) => SystemConfig::from_path(&path)?.classifier.resolve(t_final),
                None => ClassifierParams::for_horizon(t_final),
            };
            if let Some(m) = m {
                params.m = m;
                if window.is_none() {
                    params.window = 2 * m;
                }
            }
            if let Some(w) = window {
                params.window = w;
            }
            let report = classify(&traj, &params).map_err(|e| Failure::Run(e.to_string()))?;
            let json = serde_json::to_string_pretty(&report).expect("report serializes");
            if let Some(path) = out {
                write_file(&path, &(json.clone() + "\n"))?;
            }
            println!("{json}");
            Ok(())
        }
        Command::Plotdata { summary, out } => {
            let rows = read_summary(&summary).map_err(|e| Failure::Run(e.to_string()))?;
            let dir = out.unwrap_or_else(|| {
                summary
                    .parent()
                    .map(Path::to_path_buf)
                    .unwrap_or_else(|| PathBuf::from("."))
            });
            let files = emit_plot_data(&rows, &dir).map_err(|e| Failure::Run(e.to_string()))?;
            for f in files {
                println!("{}", f.display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Run(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_RUN_FAILURE)
        }
    }
}
