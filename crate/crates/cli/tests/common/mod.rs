#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use splitsense::detector::ScoreRecord;
use splitsense::trainer::TrainConfig;
use splitsense::Label;

pub fn splitsense(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_splitsense"))
        .args(args)
        .env("SPLITSENSE_THREADS", "2")
        .output()
        .expect("binary runs")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

pub fn ok(args: &[&str]) -> Output {
    let out = splitsense(args);
    assert_eq!(
        code(&out),
        0,
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Small model for ROIs of 4 bands at 16x16.
pub fn tiny_train_config() -> TrainConfig {
    TrainConfig {
        epochs: 4,
        batch_size: 4,
        latent_dim: 4,
        seed: 11,
        in_channels: 4,
        spatial: 16,
        channel_widths: vec![4, 8],
        ..TrainConfig::default()
    }
}

/// Exhaustive F1 sweep over observed losses and midpoints.
pub fn best_f1(records: &[ScoreRecord]) -> f64 {
    let mut losses: Vec<f64> = records.iter().map(|r| r.recon_loss).collect();
    losses.sort_by(f64::total_cmp);
    let mut candidates = losses.clone();
    candidates.extend(losses.windows(2).map(|w| (w[0] + w[1]) / 2.0));
    let mut best: f64 = 0.0;
    for theta in candidates {
        let (mut tp, mut fp, mut fneg) = (0u32, 0u32, 0u32);
        for r in records {
            match (r.label == Some(Label::Anomalous), r.recon_loss > theta) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fneg += 1,
                _ => {}
            }
        }
        if tp > 0 {
            best = best.max(2.0 * tp as f64 / (2 * tp + fp + fneg) as f64);
        }
    }
    best
}
