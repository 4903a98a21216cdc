use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use attractor_core::dynamics::{load_trajectory, save_trajectory, DynamicsError};
use attractor_core::eval::EvalError;
use attractor_core::experiment::{
    dump_rollouts, run_sweep_with, ExperimentError, Preset, SweepOptions, SweepSpec,
};
use attractor_core::gradcheck::run_suite;
use attractor_core::models::{load_checkpoint, ModelError};
use attractor_core::train::{write_loss_curve, TrainError};
use attractor_core::{evaluate, train, Attractor, ModelConfig, ModelKind, SeededSampler, SequenceModel, TrainConfig};

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_DIVERGED: u8 = 3;

#[derive(Parser)]
#[command(name = "attractor", version, about = "RNN vs Transformer few-shot attractor benchmark")]
struct Cli {
    /// Seed for sampling initials, weights and dropout masks.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Sweep cells run concurrently.
    #[arg(long, global = true, default_value_t = 1)]
    parallelism: usize,
    /// TOML sweep spec; its attractor tables also apply to other commands.
    #[arg(long, global = true, conflicts_with = "preset")]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    preset: Option<PresetArg>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    PaperMain,
    PaperDropout,
    FigureEight,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::PaperMain => Preset::PaperMain,
            PresetArg::PaperDropout => Preset::PaperDropout,
            PresetArg::FigureEight => Preset::FigureEight,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Rnn,
    Transformer,
}

#[derive(Subcommand)]
enum Command {
    /// Write ground-truth trajectories from random initials.
    Generate {
        #[arg(long, default_value = "point")]
        attractor: String,
        #[arg(long, default_value_t = 1)]
        n: usize,
    },
    /// Train on every trajectory file in a directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "rnn")]
        model: ModelArg,
        #[arg(long, default_value_t = 0.0)]
        dropout: f64,
        #[arg(long, default_value_t = 25_000)]
        epochs: usize,
        #[arg(long)]
        checkpoint_every: Option<usize>,
    },
    /// Score a checkpoint with DTW against fresh ground truth.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        attractor: String,
        #[arg(long, default_value_t = 10)]
        n_inits: usize,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Run a sweep from --config or --preset (default: paper-main).
    Sweep {
        /// Override the spec's epoch count.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Write generated and reference trajectories for plotting.
    DumpRollouts {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        attractor: String,
        #[arg(long, default_value_t = 10)]
        n_inits: usize,
    },
    /// Run the gradient-check suite; fails if any check exceeds 1e-4.
    Gradcheck,
}

fn load_spec(cli: &Cli) -> Result<SweepSpec> {
    if let Some(path) = &cli.config {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        return Ok(SweepSpec::from_toml(&text)?);
    }
    Ok(SweepSpec::preset(cli.preset.map(Preset::from).unwrap_or(Preset::PaperMain)))
}

fn attractor(cli: &Cli, name: &str) -> Result<Attractor> {
    Ok(load_spec(cli)?.attractor(name)?)
}

fn trajectory_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "txt"))
        .collect();
    files.sort();
    Ok(files)
}

fn run(cli: &Cli) -> Result<u8> {
    let seed = cli.seed.unwrap_or(0);
    match &cli.command {
        Command::Generate { attractor: name, n } => {
            let a = attractor(cli, name)?;
            let set = a.training_set(*n, &mut SeededSampler::new(seed))?;
            fs::create_dir_all(&cli.out)?;
            for (i, traj) in set.iter().enumerate() {
                save_trajectory(traj, &cli.out.join(format!("{}_{i:03}.txt", a.name())))?;
            }
            println!("wrote {} trajectories to {}", set.len(), cli.out.display());
        }
        Command::Train {
            data,
            model,
            dropout,
            epochs,
            checkpoint_every,
        } => {
            let files = trajectory_files(data)?;
            if files.is_empty() {
                return Err(ExperimentError::Config(format!("no .txt trajectories in {}", data.display())).into());
            }
            let dataset = files.iter().map(|p| load_trajectory(p)).collect::<Result<Vec<_>, _>>()?;
            let config = match model {
                ModelArg::Rnn => ModelConfig::rnn(seed),
                ModelArg::Transformer => ModelConfig::transformer(seed, *dropout),
            };
            if config.kind == ModelKind::Rnn && *dropout != 0.0 {
                return Err(ExperimentError::Config("the RNN has no dropout".into()).into());
            }
            let cfg = TrainConfig {
                epochs: *epochs,
                adam: load_spec(cli)?.adam,
                seed,
                checkpoint_every: *checkpoint_every,
                checkpoint_dir: Some(cli.out.clone()),
                ..TrainConfig::default()
            };
            fs::create_dir_all(&cli.out)?;
            let result = match train(SequenceModel::new(config)?, &dataset, &cfg) {
                Err(TrainError::Diverged { epoch }) => {
                    eprintln!("training diverged at epoch {epoch}");
                    return Ok(EXIT_DIVERGED);
                }
                other => other?,
            };
            let curve = cli.out.join("loss.csv");
            write_loss_curve(&result.loss_curve, fs::File::create(&curve)?)?;
            println!(
                "trained {} on {} sequences: final loss {:.6e}, {:.1}s; checkpoint {}",
                config.kind,
                dataset.len(),
                result.final_loss(),
                result.wall_time_s,
                cli.out.join("final.json").display()
            );
        }
        Command::Evaluate {
            checkpoint,
            attractor: name,
            n_inits,
            steps,
        } => {
            let a = attractor(cli, name)?;
            let model = load_checkpoint(checkpoint)?;
            let report = evaluate(
                &model,
                &a,
                *n_inits,
                steps.unwrap_or(a.steps()),
                &mut SeededSampler::new(seed),
            )?;
            let record = serde_json::json!({
                "checkpoint": checkpoint,
                "model": model.config(),
                "attractor_config": a,
                "report": report,
            });
            let text = serde_json::to_string_pretty(&record)?;
            fs::create_dir_all(&cli.out)?;
            fs::write(cli.out.join("eval.json"), &text)?;
            println!("{text}");
        }
        Command::Sweep { epochs } => {
            let mut spec = load_spec(cli)?;
            if let Some(e) = epochs {
                spec.epochs = *e;
            }
            if let Some(s) = cli.seed {
                spec.seeds = vec![s];
            }
            spec.validate()?;
            let opts = SweepOptions {
                parallelism: cli.parallelism,
                out_dir: cli.out.clone(),
                save_checkpoints: true,
            };
            let outcome = run_sweep_with(&spec, &opts, &|row, done, total| {
                eprintln!(
                    "[{done}/{total}] {} {} dropout={} n_train={} seed={}: dtw {:.3} +- {:.3} ({:.1}s)",
                    row.attractor, row.model, row.dropout, row.n_train, row.seed, row.mean_dtw, row.se_dtw, row.wall_time_s
                );
            })?;
            println!(
                "{} rows ({} resumed) in {}",
                outcome.rows.len(),
                outcome.resumed,
                cli.out.display()
            );
            if !outcome.all_seeds_diverged.is_empty() {
                for cell in &outcome.all_seeds_diverged {
                    eprintln!("training diverged for every seed: {cell}");
                }
                return Ok(EXIT_DIVERGED);
            }
        }
        Command::DumpRollouts {
            checkpoint,
            attractor: name,
            n_inits,
        } => {
            let a = attractor(cli, name)?;
            let model = load_checkpoint(checkpoint)?;
            let files = dump_rollouts(&model, &a, *n_inits, &mut SeededSampler::new(seed), &cli.out)?;
            println!("wrote {} files to {}", files.len(), cli.out.display());
        }
        Command::Gradcheck => {
            let report = run_suite(seed)?;
            for e in &report.entries {
                let verdict = if e.max_rel_error < report.tolerance { "ok" } else { "FAIL" };
                println!(
                    "{:<18} trials={:<4} max_rel={:.3e} max_abs={:.3e} {verdict}",
                    e.name, e.trials, e.max_rel_error, e.max_abs_error
                );
            }
            if !report.passed() {
                return Ok(EXIT_FAILURE);
            }
            println!("all gradient checks below {:e}", report.tolerance);
        }
    }
    Ok(0)
}

fn is_config_error(err: &anyhow::Error) -> bool {
    err.chain().any(|cause| {
        matches!(cause.downcast_ref::<ExperimentError>(), Some(ExperimentError::Config(_)))
            || matches!(cause.downcast_ref::<ModelError>(), Some(ModelError::Config(_)))
            || matches!(cause.downcast_ref::<DynamicsError>(), Some(DynamicsError::Domain(_)))
            || matches!(cause.downcast_ref::<TrainError>(), Some(TrainError::Contract(_)))
            || matches!(cause.downcast_ref::<EvalError>(), Some(EvalError::Contract(_)))
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(if is_config_error(&err) { EXIT_CONFIG } else { EXIT_FAILURE })
        }
    }
}
