use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use splitsense::band_analysis::{
    analysis_csv, patch_mean_spectrum, recommend_range, reflectance_difference, PatchSpec,
};
use splitsense::detector::{self, heatmap, mean_reflectance_report, reflectance_csv};
use splitsense::hsi_io::{read_envi, write_envi, Interleave};
use splitsense::pgm::write_pgm;
use splitsense::pipeline::{
    extract_dataset, load_roi_files, load_rois, read_json, score_rois, to_json, write_text, ExtractOptions, RoiIndex,
};
use splitsense::preprocess::{calibrate, RoiSpec, RoiTensor};
use splitsense::synth::{gen_dataset, SynthConfig};
use splitsense::trainer::{
    history_csv, load_checkpoint, save_checkpoint, split_dataset, train_with_progress, DatasetSplit, TrainConfig,
};
use splitsense::Label;

use crate::{
    BandsArgs, BandsCommand, CalibrateArgs, Cli, Command, ExtractArgs, InterleaveArg, ReportArgs, ScoreArgs, SplitArg,
    SynthArgs, ThresholdArgs, TrainArgs,
};

const SPLIT_FILE: &str = "split.json";
const LOSS_FILE: &str = "loss.csv";

pub fn dispatch(cli: &Cli) -> Result<()> {
    let log = |msg: String| {
        if !cli.quiet {
            eprintln!("{msg}");
        }
    };
    match &cli.command {
        Command::Synth(a) => synth(a, &log),
        Command::Calibrate(a) => calibrate_cmd(a, &log),
        Command::ExtractRoi(a) => extract(a, &log),
        Command::Bands(BandsCommand::Analyze(a)) => bands(a, &log),
        Command::Train(a) => train(a, &log),
        Command::Score(a) => score(a, &log),
        Command::Threshold(a) => threshold(a, &log),
        Command::Report(a) => report(a, &log),
    }
}

fn synth(a: &SynthArgs, log: &dyn Fn(String)) -> Result<()> {
    let config = SynthConfig {
        width: a.size,
        height: a.size,
        bands: a.bands,
        seed: a.seed,
        ..SynthConfig::default()
    };
    let manifest = gen_dataset(&config, a.normal, a.anomalous, &a.out)?;
    log(format!(
        "wrote {} samples to {}",
        manifest.samples.len(),
        a.out.display()
    ));
    Ok(())
}

fn calibrate_cmd(a: &CalibrateArgs, log: &dyn Fn(String)) -> Result<()> {
    let raw = read_envi(&a.raw)?;
    let dark = read_envi(&a.dark)?;
    let white = read_envi(&a.white)?;
    let result = calibrate(&raw, &dark, &white).with_context(|| format!("calibrating {}", a.raw.display()))?;
    let interleave = match a.interleave {
        InterleaveArg::Bsq => Interleave::Bsq,
        InterleaveArg::Bil => Interleave::Bil,
    };
    write_envi(&a.out, &result.cube, interleave)?;
    if result.degenerate_elements > 0 {
        log(format!(
            "warning: {} elements had white == dark and were set to 0",
            result.degenerate_elements
        ));
    }
    Ok(())
}

fn extract(a: &ExtractArgs, log: &dyn Fn(String)) -> Result<()> {
    let options = ExtractOptions {
        spec: RoiSpec {
            lo_nm: a.lo_nm,
            hi_nm: a.hi_nm,
            bands: a.bands,
            size: a.size,
        },
        rgb_dims: a.rgb_size,
        write_rgb: a.write_rgb,
    };
    let index = extract_dataset(&a.data, &a.out, &options)?;
    log(format!("extracted {} ROIs into {}", index.rois.len(), a.out.display()));
    Ok(())
}

#[derive(Serialize)]
struct RangeReport {
    lo_nm: f64,
    hi_nm: f64,
    width_nm: f64,
}

fn bands(a: &BandsArgs, log: &dyn Fn(String)) -> Result<()> {
    let normal_cube = read_envi(&a.cube)?;
    let anomalous_cube = match &a.anomalous_cube {
        Some(p) => Some(read_envi(p)?),
        None => None,
    };
    let patch = |(x, y): (usize, usize)| PatchSpec::new(x, y, a.patch_size);
    let normal = patch_mean_spectrum(&normal_cube, patch(a.normal_patch)).context("intact patch")?;
    let anomalous = patch_mean_spectrum(
        anomalous_cube.as_ref().unwrap_or(&normal_cube),
        patch(a.anomalous_patch),
    )
    .context("split patch")?;
    let diff = reflectance_difference(&normal, &anomalous)?;
    let (lo, hi) = recommend_range(&diff, a.width)?;
    write_text(&a.out, &analysis_csv(&normal, &anomalous, &diff))?;
    if let Some(json) = &a.json {
        write_text(
            json,
            &to_json(&RangeReport {
                lo_nm: lo,
                hi_nm: hi,
                width_nm: a.width,
            }),
        )?;
    }
    println!("recommended range: {lo} - {hi} nm");
    log(format!("wrote {}", a.out.display()));
    Ok(())
}

fn train(a: &TrainArgs, log: &dyn Fn(String)) -> Result<()> {
    let mut config = match &a.config {
        Some(p) => TrainConfig::read(p)?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    if let Some(epochs) = a.epochs {
        config.epochs = epochs;
    }
    config.validate()?;
    let index = RoiIndex::read(&a.rois)?;
    // Unlabeled ROIs are taken to be intact fruit.
    let items: Vec<(String, Label)> = index
        .rois
        .iter()
        .map(|e| (e.id.clone(), e.label.unwrap_or(Label::Normal)))
        .collect();
    let split = split_dataset(&items, a.split_ratio, config.seed)?;
    let data: Vec<RoiTensor> = load_rois(&a.rois, &index, Some(&split.train))?
        .into_iter()
        .map(|(_, roi, _)| roi)
        .collect();
    log(format!("training on {} ROIs for {} epochs", data.len(), config.epochs));
    let every = (config.epochs / 20).max(1);
    let ckpt = train_with_progress(&config, &data, |r| {
        if r.epoch % every == 0 || r.epoch + 1 == config.epochs {
            log(format!(
                "epoch {:>5}  beta {:.3}  recon {:.2}  kl {:.3}  total {:.2}",
                r.epoch, r.beta, r.recon, r.kl, r.total
            ));
        }
    })?;
    save_checkpoint(&ckpt, &a.out)?;
    write_text(&a.out.join(LOSS_FILE), &history_csv(&ckpt.history))?;
    write_text(&a.out.join(SPLIT_FILE), &to_json(&split))?;
    log(format!("saved checkpoint to {}", a.out.display()));
    Ok(())
}

fn selected_ids(checkpoint: &Path, split: SplitArg) -> Result<Option<Vec<String>>> {
    if split == SplitArg::All {
        return Ok(None);
    }
    let path = checkpoint.join(SPLIT_FILE);
    let s: DatasetSplit = read_json(&path).with_context(|| "--split needs the split saved by train")?;
    Ok(Some(if split == SplitArg::Train { s.train } else { s.test }))
}

fn score(a: &ScoreArgs, log: &dyn Fn(String)) -> Result<()> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let items = match &a.rois {
        Some(dir) => {
            let index = RoiIndex::read(dir)?;
            let ids = selected_ids(&a.checkpoint, a.split)?;
            load_rois(dir, &index, ids.as_deref())?
        }
        None => a
            .roi
            .par_iter()
            .map(|h| {
                let mask = sibling_mask(h);
                let roi = load_roi_files(h, mask.as_deref())?;
                Ok((stem(h), roi, None))
            })
            .collect::<Result<Vec<_>>>()?,
    };
    let records = score_rois(&ckpt, &items, a.theta)?;
    write_text(&a.out, &detector::scores_csv(&records))?;
    log(format!("scored {} ROIs into {}", records.len(), a.out.display()));
    Ok(())
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

fn sibling_mask(header: &Path) -> Option<PathBuf> {
    let p = header.with_file_name(format!("{}_mask.pgm", stem(header)));
    p.is_file().then_some(p)
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ThresholdConfig {
    seed: u64,
}

fn threshold(a: &ThresholdArgs, log: &dyn Fn(String)) -> Result<()> {
    let mut config = match &a.config {
        Some(p) => read_json::<ThresholdConfig>(p)?,
        None => ThresholdConfig::default(),
    };
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    let text = std::fs::read_to_string(&a.scores).with_context(|| format!("reading {}", a.scores.display()))?;
    let records = detector::parse_scores_csv(&text).with_context(|| a.scores.display().to_string())?;
    if records.iter().any(|r| r.label.is_none()) {
        bail!(
            "{}: every record needs a label for threshold selection",
            a.scores.display()
        );
    }
    let report = detector::calibrate_threshold(&records, config.seed)?;
    write_text(&a.out, &report.to_json())?;
    let accuracy = report.validation.map_or(f64::NAN, |m| m.accuracy);
    println!(
        "theta {}  calibration F1 {:.4}  validation accuracy {:.4}",
        report.theta, report.f1, accuracy
    );
    log(format!("wrote {}", a.out.display()));
    Ok(())
}

fn report(a: &ReportArgs, log: &dyn Fn(String)) -> Result<()> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let index = RoiIndex::read(&a.rois)?;
    let ids = selected_ids(&a.checkpoint, a.split)?;
    let items = load_rois(&a.rois, &index, ids.as_deref())?;
    std::fs::create_dir_all(&a.out).with_context(|| a.out.display().to_string())?;
    let recon: Vec<Vec<f32>> = items
        .par_iter()
        .map(|(id, roi, _)| {
            let xhat = detector::reconstruction(&ckpt.params, id, roi)?;
            let h = heatmap(roi.data(), &xhat, roi.channels(), roi.mask(), a.percentile)?;
            write_pgm(&a.out.join(format!("{id}_error.pgm")), &h.error_image())?;
            write_pgm(&a.out.join(format!("{id}_highlight.pgm")), &h.highlight.to_gray())?;
            Ok(xhat)
        })
        .collect::<Result<_>>()?;
    let labeled: Vec<(&RoiTensor, &[f32], Label)> = items
        .iter()
        .zip(&recon)
        .filter_map(|((_, roi, label), x)| label.map(|l| (roi, x.as_slice(), l)))
        .collect();
    let profiles = mean_reflectance_report(&labeled);
    write_text(&a.out.join("reflectance.csv"), &reflectance_csv(&profiles))?;
    log(format!(
        "wrote {} heatmap pairs and reflectance.csv to {}",
        items.len(),
        a.out.display()
    ));
    Ok(())
}
