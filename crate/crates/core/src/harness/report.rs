use std::fmt::Write;

use super::{
    ablate_dir, data_dir, infer_dir, read_csv, read_json, train_dir, AblationRow, LossRow,
    Manifest, RunReport,
};
use crate::error::{CmdmError, Result};
use crate::io::ExperimentConfig;
use crate::sampler::BaselineMode;

fn found<T>(r: Result<T>) -> Result<Option<T>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(CmdmError::NotFound(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_owned(), |v| format!("{v:.4}"))
}

/// Collects whatever artifacts exist under the output directory into
/// `report.md` and returns its text.
pub fn cmd_report(cfg: &ExperimentConfig) -> Result<String> {
    let mut md = String::new();
    let w = &mut md;
    writeln!(w, "# Experiment report\n").ok();
    writeln!(w, "- config hash: `{}`", cfg.config_hash()).ok();
    writeln!(w, "- task: {}, image size {}", cfg.task, cfg.image_size).ok();
    writeln!(w, "- master seed: {}\n", cfg.master_seed).ok();
    let mut any = false;

    if let Some(m) = found(read_json::<Manifest>(&data_dir(cfg).join("manifest.json")))? {
        any = true;
        let c = &m.split_counts;
        writeln!(w, "## Dataset\n").ok();
        writeln!(
            w,
            "{} pairs ({} train / {} val / {} test), seed {}, data hash `{}`\n",
            m.entries.len(),
            c.train,
            c.val,
            c.test,
            m.dataset_seed,
            m.data_hash
        )
        .ok();
    }

    let mut curves = Vec::new();
    for stage in ["prior", "denoiser"] {
        if let Some(rows) = found(read_csv::<LossRow>(
            &train_dir(cfg).join(format!("{stage}_loss.csv")),
        ))? {
            if let (Some(first), Some(last)) = (rows.first(), rows.last()) {
                let tail = &rows[rows.len().saturating_sub(100)..];
                let avg = tail.iter().map(|r| r.loss).sum::<f64>() / tail.len() as f64;
                curves.push(format!(
                    "| {stage} | {} | {:.5} | {avg:.5} |",
                    last.step + 1,
                    first.loss
                ));
            }
        }
    }
    if !curves.is_empty() {
        any = true;
        writeln!(
            w,
            "## Training\n\n| model | steps | first loss | last-100 mean |\n|---|---|---|---|"
        )
        .ok();
        for c in curves {
            writeln!(w, "{c}").ok();
        }
        writeln!(w).ok();
    }

    let mut runs = Vec::new();
    for mode in [BaselineMode::Cmdm, BaselineMode::PureNoise] {
        let mut c = cfg.clone();
        c.sampler.baseline_mode = mode;
        if let Some(r) = found(read_json::<RunReport>(&infer_dir(&c).join("report.json")))? {
            runs.push(r);
        }
    }
    if !runs.is_empty() {
        any = true;
        writeln!(
            w,
            "## Inference\n\n| mode | t_s | N_p | N_c | images | median PSNR | median SSIM | median MAE | prior PSNR | corr | shuffled corr | seconds |\n|---|---|---|---|---|---|---|---|---|---|---|---|"
        )
        .ok();
        for r in &runs {
            let s = &r.sampler;
            writeln!(
                w,
                "| {} | {} | {} | {} | {} | {:.3} | {:.4} | {:.5} | {} | {} | {} | {:.1} |",
                s.baseline_mode.as_str(),
                // Pure-noise chains always start at T.
                if matches!(s.baseline_mode, BaselineMode::PureNoise) {
                    "T".to_owned()
                } else {
                    s.t_s.to_string()
                },
                s.n_paths,
                s.n_cascades,
                r.n_images,
                r.summary.median_psnr,
                r.summary.median_ssim,
                r.summary.median_mae,
                opt(r.prior_summary.as_ref().map(|p| p.median_psnr)),
                opt(r.correlation.median),
                opt(r.correlation.median_shuffled),
                r.timings.total_s
            )
            .ok();
        }
        writeln!(w).ok();
    }

    if let Some(rows) = found(read_csv::<AblationRow>(
        &ablate_dir(cfg).join("ablation.csv"),
    ))? {
        any = true;
        writeln!(
            w,
            "## Ablation\n\n| mode | t_s | N_p | N_c | median PSNR | median SSIM | median MAE | seconds |\n|---|---|---|---|---|---|---|---|"
        )
        .ok();
        for r in rows {
            writeln!(
                w,
                "| {} | {} | {} | {} | {:.3} | {:.4} | {:.5} | {:.1} |",
                r.baseline_mode.as_str(),
                r.t_s,
                r.n_paths,
                r.n_cascades,
                r.median_psnr,
                r.median_ssim,
                r.median_mae,
                r.wall_s
            )
            .ok();
        }
        writeln!(w).ok();
    }

    if !any {
        return Err(CmdmError::NotFound(format!(
            "no artifacts under {}",
            cfg.output_dir.display()
        )));
    }
    std::fs::write(cfg.output_dir.join("report.md"), &md)?;
    Ok(md)
}
