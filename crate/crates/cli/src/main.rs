use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use cmdm::harness::{self, Stage, SweepSpec};
use cmdm::io::ExperimentConfig;
use cmdm::{CmdmError, Result};

/// Cascaded multi-path shortcut diffusion experiments on synthetic paired
/// image tasks.
#[derive(Parser)]
#[command(name = "cmdm", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment configuration; defaults apply to missing keys.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration value, e.g. `--set sampler.n_paths=5`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Output directory (same as `--set output_dir=...`).
    #[arg(short, long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses every core. Results do not depend on it.
    #[arg(long, default_value_t = 0, global = true)]
    threads: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the paired dataset and its manifest.
    GenData,
    /// Train the prior generator and the noise predictor (resumable).
    Train {
        #[arg(long, value_enum, default_value_t = StageArg::All)]
        stage: StageArg,
    },
    /// Translate the test split and write images, metrics and a report.
    Infer,
    /// Sweep sampler settings over the test split.
    Ablate {
        /// Shortcut start times, comma separated.
        #[arg(long = "t-s", value_delimiter = ',')]
        t_s: Vec<usize>,
        /// Path counts, comma separated.
        #[arg(long, value_delimiter = ',')]
        n_paths: Vec<usize>,
        /// Cascade counts, comma separated.
        #[arg(long, value_delimiter = ',')]
        n_cascades: Vec<usize>,
    },
    /// Summarise every artifact in the output directory as Markdown.
    Report,
    /// Print the resolved configuration as TOML.
    ShowConfig,
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    Prior,
    Denoiser,
    All,
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let mut overrides = c.overrides.clone();
    if let Some(out) = &c.out {
        let s = out
            .to_str()
            .ok_or_else(|| CmdmError::InvalidArgument("output path is not UTF-8".into()))?;
        overrides.push(format!("output_dir={s:?}"));
    }
    match &c.config {
        Some(path) => ExperimentConfig::load_with_overrides(path, &overrides),
        None => ExperimentConfig::from_toml_with_overrides("", &overrides),
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.common)?;
    cmdm::par::with_threads(cli.common.threads, || match cli.command {
        Command::GenData => {
            let s = harness::cmd_gen_data(&cfg)?;
            let c = &s.manifest.split_counts;
            let verb = if s.generated {
                "generated"
            } else {
                "already present"
            };
            println!(
                "dataset {verb}: {} ({} train / {} val / {} test) in {:.1}s",
                s.dir.display(),
                c.train,
                c.val,
                c.test,
                s.seconds
            );
            Ok(())
        }
        Command::Train { stage } => {
            let stages: &[Stage] = match stage {
                StageArg::Prior => &[Stage::Prior],
                StageArg::Denoiser => &[Stage::Denoiser],
                StageArg::All => &[Stage::Prior, Stage::Denoiser],
            };
            for o in harness::cmd_train(&cfg, stages)? {
                println!(
                    "{}: steps {} -> {}, recent loss {}, {:.1}s",
                    o.stage.as_str(),
                    o.start_step,
                    o.end_step,
                    o.recent_loss.map_or("-".into(), |l| format!("{l:.5}")),
                    o.seconds
                );
            }
            Ok(())
        }
        Command::Infer => {
            let r = harness::cmd_infer(&cfg)?;
            println!(
                "{} images: median PSNR {:.3} dB, SSIM {:.4}, MAE {:.5}",
                r.n_images, r.summary.median_psnr, r.summary.median_ssim, r.summary.median_mae
            );
            if let Some(p) = &r.prior_summary {
                println!("prior only: median PSNR {:.3} dB", p.median_psnr);
            }
            if let Some(m) = r.correlation.median {
                println!(
                    "uncertainty vs |error|: median r {m:.3} (shuffled control {:.3})",
                    r.correlation.median_shuffled.unwrap_or(f64::NAN)
                );
            }
            println!(
                "report: {}",
                harness::infer_dir(&cfg).join("report.json").display()
            );
            Ok(())
        }
        Command::Ablate {
            t_s,
            n_paths,
            n_cascades,
        } => {
            let rows = harness::cmd_ablate(
                &cfg,
                &SweepSpec {
                    t_s,
                    n_paths,
                    n_cascades,
                },
            )?;
            println!("t_s,n_paths,n_cascades,median_psnr,median_ssim,median_mae,wall_s");
            for r in rows {
                println!(
                    "{},{},{},{:.3},{:.4},{:.5},{:.2}",
                    r.t_s,
                    r.n_paths,
                    r.n_cascades,
                    r.median_psnr,
                    r.median_ssim,
                    r.median_mae,
                    r.wall_s
                );
            }
            Ok(())
        }
        Command::Report => {
            print!("{}", harness::cmd_report(&cfg)?);
            Ok(())
        }
        Command::ShowConfig => {
            print!("{}", cfg.to_toml_string());
            Ok(())
        }
    })
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
