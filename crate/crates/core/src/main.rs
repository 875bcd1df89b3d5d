use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use bvlens::runner::{
    bounds_check, emit_csv, emit_json, emit_plot_csv, linear_check, parse_csv_file,
    resolve_master_seed, run_sweep, CheckReport, ExperimentConfig, RunnerError,
};

#[derive(Parser)]
#[command(name = "bvlens", version, about = "Bias/variance measurement toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a width sweep from a config file and write CSV/JSON results.
    Sweep {
        /// Path to a flat key-value config file.
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides the config's out_dir).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads for grid cells; results do not depend on this.
        #[arg(long)]
        jobs: Option<usize>,
        /// Record real per-width wall times. Off by default so that
        /// repeated runs produce byte-identical outputs.
        #[arg(long)]
        timings: bool,
    },
    /// Verify the linear-model variance identities and the GD solution.
    LinearCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for the JSON report (printed to stdout regardless).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Verify the 4x risk bound and the concentration bound.
    BoundsCheck {
        #[arg(long, default_value_t = 10_000)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Convert a results CSV into a tidy long-format CSV for plotting.
    EmitPlot {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(ok) => {
            if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<bool, RunnerError> {
    match cli.command {
        Command::Sweep {
            config,
            out,
            jobs,
            timings,
        } => {
            if let Some(n) = jobs {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global()
                    .map_err(|e| RunnerError::Config(format!("--jobs: {e}")))?;
            }
            let mut cfg = ExperimentConfig::from_file(&config)?;
            if let Some(dir) = out {
                cfg.out_dir = dir;
            }
            if timings {
                cfg.record_timings = true;
            }
            let rows = run_sweep(&cfg)?;
            let csv_path = cfg.out_dir.join("results.csv");
            let json_path = cfg.out_dir.join("results.json");
            emit_csv(&rows, &csv_path)?;
            emit_json(&rows, &json_path)?;

            let mut ok = true;
            for row in &rows {
                match &row.error {
                    Some(msg) => {
                        ok = false;
                        println!("width {:>6}: FAILED ({msg})", row.width);
                    }
                    None => {
                        let additive = (row.var_opt + row.var_samp - row.e_variance).abs()
                            <= 1e-10 * row.e_variance.max(1.0);
                        if !additive {
                            ok = false;
                        }
                        println!(
                            "width {:>6}: bias {:.5}  variance {:.5}  (opt {:.5} + samp {:.5})  test {:.5}{}",
                            row.width,
                            row.e_bias,
                            row.e_variance,
                            row.var_opt,
                            row.var_samp,
                            row.test_error,
                            if additive { "" } else { "  [ADDITIVITY VIOLATED]" },
                        );
                    }
                }
            }
            println!("wrote {} and {}", csv_path.display(), json_path.display());
            Ok(ok)
        }
        Command::LinearCheck { seed, out } => {
            let seed = resolve_master_seed(seed)?;
            let report = linear_check(seed)?;
            print_report(&report);
            if let Some(dir) = out {
                let path = dir.join("linear_check.json");
                let text = serde_json::to_string_pretty(&report)
                    .map_err(|e| RunnerError::Csv(format!("json: {e}")))?;
                std::fs::create_dir_all(&dir).map_err(|source| RunnerError::Io {
                    path: dir.display().to_string(),
                    source,
                })?;
                std::fs::write(&path, text).map_err(|source| RunnerError::Io {
                    path: path.display().to_string(),
                    source,
                })?;
                println!("wrote {}", path.display());
            }
            Ok(report.all_pass())
        }
        Command::BoundsCheck { instances, seed } => {
            let seed = resolve_master_seed(seed)?;
            let report = bounds_check(seed, instances)?;
            print_report(&report);
            Ok(report.all_pass())
        }
        Command::EmitPlot { csv, out } => {
            let rows = parse_csv_file(&csv)?;
            emit_plot_csv(&rows, &out)?;
            println!("wrote {}", out.display());
            Ok(true)
        }
    }
}

fn print_report(report: &CheckReport) {
    println!("{} (seed {})", report.name, report.master_seed);
    for line in &report.lines {
        println!(
            "  [{}] {}: {}",
            if line.pass { "PASS" } else { "FAIL" },
            line.name,
            line.detail
        );
    }
}
