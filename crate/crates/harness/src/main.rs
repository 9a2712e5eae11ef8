use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use qrc_harness::config::ExperimentConfig;
use qrc_harness::depth::{depth_table, depth_table_to_csv};
use qrc_harness::export::{
    ph_samples_to_csv, ExportFormat,
};
use qrc_harness::grid::{grid_search, GridOutcome};
use qrc_harness::run::run_experiment;
use qrc_harness::{data, HarnessError};

#[derive(Parser)]
#[command(
    name = "qrc",
    version,
    about = "Classical and quantum reservoir-computing benchmarks on chaotic systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset: trajectory CSV + JSON sidecar, or a directory of
    /// shear-flow ensemble series
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config's seed list with a single master seed
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Deterministic hyperparameter grid search with recycle validation
    Tune {
        #[arg(long)]
        config: PathBuf,
        /// Output file for the validation table (stdout when omitted)
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "csv")]
        format: ExportFormat,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train per seed and evaluate the configured metrics
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "csv")]
        format: ExportFormat,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Step-circuit depth table across the C1-C5 configurations
    Depth {
        /// Input dimension encoded by the circuits
        #[arg(long, default_value_t = 10)]
        n_u: usize,
        #[arg(long, default_value_t = 4)]
        min_qubits: usize,
        #[arg(long, default_value_t = 11)]
        max_qubits: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "csv")]
        format: ExportFormat,
    },
    /// Linear memory-capacity study over the hyperparameter grid
    Mc {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "csv")]
        format: ExportFormat,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = ExperimentConfig::from_path(path)?;
    if let Some(seed) = seed {
        cfg.seeds = vec![seed];
    }
    Ok(cfg)
}

fn emit(text: &str, out: Option<&Path>) -> Result<(), HarnessError> {
    match out {
        None => {
            print!("{text}");
            Ok(())
        }
        Some(path) => std::fs::write(path, text).map_err(|e| HarnessError::Io {
            path: path.display().to_string(),
            source: e,
        }),
    }
}

fn dispatch(command: Command) -> Result<(), HarnessError> {
    match command {
        Command::Generate { config, out, seed } => generate(&config, &out, seed),
        Command::Tune {
            config,
            out,
            format,
            seed,
        } => {
            let cfg = load_config(&config, seed)?;
            let outcome = grid_search(&cfg)?;
            report_tune(&outcome);
            let text = match format {
                ExportFormat::Csv => grid_table_csv(&outcome),
                ExportFormat::Json => serde_json::to_string_pretty(&outcome)
                    .map_err(|e| HarnessError::Format(e.to_string()))?,
            };
            emit(&text, out.as_deref())
        }
        Command::Run {
            config,
            out,
            format,
            seed,
        } => {
            let cfg = load_config(&config, seed)?;
            let hyper = match cfg.hyperparams {
                Some(h) => h,
                None => {
                    let tuned = grid_search(&cfg)?;
                    report_tune(&tuned);
                    tuned.best
                }
            };
            let outcome = run_experiment(&cfg, &hyper)?;
            if !outcome.ph_samples.is_empty() {
                if let Some(path) = out.as_deref() {
                    let ph_path = sibling(path, "_ph.csv");
                    emit(&ph_samples_to_csv(&outcome.ph_samples), Some(&ph_path))?;
                }
            }
            if !outcome.pooled_scores.is_empty() {
                let rows: Vec<_> = outcome
                    .pooled_scores
                    .iter()
                    .map(|(pt, s)| (*pt, cfg.reservoir.reservoir_size(), s.clone()))
                    .collect();
                let table = qrc_harness::export::score_table_to_csv(&rows);
                if let Some(path) = out.as_deref() {
                    emit(&table, Some(&sibling(path, "_fscore.csv")))?;
                } else {
                    print!("{table}");
                }
            }
            let text = match format {
                ExportFormat::Csv => qrc_harness::export::records_to_csv(&outcome.records),
                ExportFormat::Json => serde_json::to_string_pretty(&outcome.records)
                    .map_err(|e| HarnessError::Format(e.to_string()))?,
            };
            emit(&text, out.as_deref())
        }
        Command::Depth {
            n_u,
            min_qubits,
            max_qubits,
            out,
            format,
        } => {
            let rows = depth_table(n_u, min_qubits, max_qubits)?;
            let text = match format {
                ExportFormat::Csv => depth_table_to_csv(&rows),
                ExportFormat::Json => serde_json::to_string_pretty(&rows)
                    .map_err(|e| HarnessError::Format(e.to_string()))?,
            };
            emit(&text, out.as_deref())
        }
        Command::Mc {
            config,
            out,
            format,
            seed,
        } => {
            let mut cfg = load_config(&config, seed)?;
            cfg.metrics = vec![qrc_harness::config::MetricKind::Mc];
            // beta enters through the per-delay grid inside the capacity
            // computation, so the sweep collapses that axis
            let mut records = Vec::new();
            let first_beta = cfg.effective_grid()?.beta[0];
            for point in qrc_harness::grid::grid_points(&cfg)? {
                if point.beta != first_beta {
                    continue;
                }
                let outcome = run_experiment(&cfg, &point)?;
                records.extend(outcome.records);
            }
            let text = match format {
                ExportFormat::Csv => qrc_harness::export::records_to_csv(&records),
                ExportFormat::Json => serde_json::to_string_pretty(&records)
                    .map_err(|e| HarnessError::Format(e.to_string()))?,
            };
            emit(&text, out.as_deref())
        }
    }
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    path.with_file_name(format!("{stem}{suffix}"))
}

fn report_tune(outcome: &GridOutcome) {
    let h = &outcome.best;
    eprintln!(
        "best point: sigma_in={:?} rho={:?} density={:?} eps={} beta={:e} \
         (mean validation VPT {:.3} LT over {} points)",
        h.sigma_in,
        h.rho,
        h.density,
        h.eps,
        h.beta,
        outcome.best_score,
        outcome.table.len(),
    );
}

fn grid_table_csv(outcome: &GridOutcome) -> String {
    let mut out = String::from("sigma_in,rho,density,eps,beta,score\n");
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.16e}")).unwrap_or_default();
    for p in &outcome.table {
        out.push_str(&format!(
            "{},{},{},{:.16e},{:.16e},{:.16e}\n",
            opt(p.hyper.sigma_in),
            opt(p.hyper.rho),
            opt(p.hyper.density),
            p.hyper.eps,
            p.hyper.beta,
            p.score
        ));
    }
    out
}

fn generate(config: &Path, out: &Path, seed: Option<u64>) -> Result<(), HarnessError> {
    let cfg = load_config(config, seed)?;
    match &cfg.system {
        qrc_core::dynamics::SystemId::Mfe { .. } => {
            std::fs::create_dir_all(out).map_err(|e| HarnessError::Io {
                path: out.display().to_string(),
                source: e,
            })?;
            let master = cfg.seeds[0];
            let ensemble = qrc_core::dynamics::generate_mfe_ensemble::<f64>(
                cfg.ensemble_count,
                cfg.ensemble_length_lt,
                cfg.laminar_threshold,
                master,
            )?;
            for (i, series) in ensemble.series.iter().enumerate() {
                let path = out.join(format!("series_{i:04}.csv"));
                series.save_csv(&path, Some(&cfg.system), Some(master))?;
            }
            let manifest = serde_json::json!({
                "retained": ensemble.retained_count,
                "discarded": ensemble.discarded_count,
                "k_e": ensemble.k_e,
                "k_l": ensemble.k_l,
                "seed": master,
            });
            std::fs::write(
                out.join("ensemble.json"),
                serde_json::to_string_pretty(&manifest)
                    .map_err(|e| HarnessError::Format(e.to_string()))?,
            )
            .map_err(|e| HarnessError::Io {
                path: out.display().to_string(),
                source: e,
            })?;
            eprintln!(
                "retained {} of {} series ({} laminarized)",
                ensemble.retained_count,
                cfg.ensemble_count,
                ensemble.discarded_count
            );
            Ok(())
        }
        system => {
            let data = data::prepare_lorenz(&cfg)?;
            data.traj.save_csv(out, Some(system), None)?;
            eprintln!(
                "wrote {} rows of {} ({} + sidecar)",
                data.traj.rows(),
                data.traj.dim(),
                out.display()
            );
            Ok(())
        }
    }
}
