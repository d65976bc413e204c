#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use splitsense::band_analysis::Spectrum;
use splitsense::detector::ScoreRecord;
use splitsense::vae::{backward, forward, sample_loss, ForwardTrace, VaeConfig, VaeParams};
use splitsense::Label;

/// Model used for finite-difference checks: 2 bands, 8x8, widths 2-4, S = 4.
pub fn gradcheck_config() -> VaeConfig {
    VaeConfig {
        in_channels: 2,
        spatial: 8,
        channel_widths: vec![2, 4],
        latent_dim: 4,
        ..VaeConfig::default()
    }
}

pub struct GradCheck {
    pub checked: usize,
    pub skipped: usize,
    pub worst: f64,
    pub failures: Vec<(String, f64, f64)>,
}

fn relu_pattern(trace: &ForwardTrace<f64>) -> Vec<bool> {
    let n = trace.dec_out.len();
    trace
        .enc_out
        .iter()
        .chain(&trace.dec_out[..n - 1])
        .flatten()
        .map(|&v| v > 0.0)
        .collect()
}

/// Central differences with step `h` on `per_tensor` random coordinates of
/// every tensor. Coordinates whose perturbation flips a ReLU are skipped
/// and replaced. Inputs are binary so the L1 term stays smooth.
pub fn gradient_check(seed: u64, per_tensor: usize, h: f64, tol: f64) -> GradCheck {
    let config = gradcheck_config();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut params = VaeParams::<f64>::init(&config, seed).unwrap();
    // Nonzero biases exercise the bias gradients too.
    for spec in params.layout().to_vec() {
        if spec.kind == splitsense::vae::ParamKind::Bias {
            for v in &mut params.as_mut_slice()[spec.offset..spec.offset + spec.len] {
                *v = rng.gen_range(-0.1..0.1);
            }
        }
    }
    let x: Vec<f64> = (0..config.input_len())
        .map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 })
        .collect();
    let eps: Vec<f64> = (0..config.latent_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let beta = 0.7;

    let base = forward(&params, &x, &eps).unwrap();
    let pattern = relu_pattern(&base);
    let mut grad = vec![0.0; params.len()];
    backward(&params, &base, &x, beta, &mut grad);

    let mut out = GradCheck {
        checked: 0,
        skipped: 0,
        worst: 0.0,
        failures: Vec::new(),
    };
    for spec in params.layout().to_vec() {
        let mut done = 0;
        let mut attempts = 0;
        while done < per_tensor.min(spec.len) && attempts < 50 * per_tensor {
            attempts += 1;
            let i = spec.offset + rng.gen_range(0..spec.len);
            let orig = params.as_slice()[i];
            let mut eval = |v: f64| {
                params.as_mut_slice()[i] = v;
                let t = forward(&params, &x, &eps).unwrap();
                (sample_loss(&t, &x, beta).total, relu_pattern(&t) == pattern)
            };
            let (plus, same_p) = eval(orig + h);
            let (minus, same_m) = eval(orig - h);
            params.as_mut_slice()[i] = orig;
            if !(same_p && same_m) {
                out.skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * h);
            let analytic = grad[i];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
            out.worst = out.worst.max(rel);
            if rel >= tol {
                out.failures.push((spec.name.clone(), analytic, numeric));
            }
            out.checked += 1;
            done += 1;
        }
    }
    out
}

/// Exhaustive threshold sweep written independently of the library: every
/// observed loss and every midpoint of adjacent distinct losses is tried.
pub fn brute_force_threshold(records: &[ScoreRecord]) -> (f64, f64) {
    let mut values: Vec<f64> = records.iter().map(|r| r.recon_loss).collect();
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    values.dedup();
    let mut candidates = values.clone();
    for w in values.windows(2) {
        candidates.push((w[0] + w[1]) / 2.0);
    }
    candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut best = (f64::NAN, -1.0);
    for &theta in &candidates {
        let (mut tp, mut fp, mut fneg) = (0.0, 0.0, 0.0);
        for r in records {
            let flagged = r.recon_loss > theta;
            match (r.label == Some(Label::Anomalous), flagged) {
                (true, true) => tp += 1.0,
                (false, true) => fp += 1.0,
                (true, false) => fneg += 1.0,
                _ => {}
            }
        }
        let f1 = if tp == 0.0 {
            0.0
        } else {
            2.0 * tp / (2.0 * tp + fp + fneg)
        };
        if f1 > best.1 + 1e-12 {
            best = (theta, f1);
        }
    }
    best
}

/// Window search by direct enumeration of all band pairs.
pub fn brute_force_window(diff: &Spectrum, width: f64) -> Option<(f64, f64)> {
    let wl = &diff.wavelengths;
    let tol = 1e-9 * (wl[wl.len() - 1] - wl[0]).abs().max(1.0);
    let mut best: Option<(f64, f64, f64)> = None;
    for i in 0..wl.len() {
        let Some(j) = (i + 1..wl.len()).find(|&j| wl[j] - wl[i] >= width - tol) else {
            continue;
        };
        let mut area = 0.0;
        for k in i..j {
            area += (wl[k + 1] - wl[k]) * (diff.values[k] + diff.values[k + 1]) / 2.0;
        }
        if best.is_none_or(|b| area > b.0 + 1e-12 * b.0.abs().max(1.0)) {
            best = Some((area, wl[i], wl[j]));
        }
    }
    best.map(|b| (b.1, b.2))
}
