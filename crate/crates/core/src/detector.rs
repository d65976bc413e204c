//! Anomaly scoring by reconstruction loss, F1-optimal thresholding, and the
//! per-pixel and per-band diagnostics built on reconstructions.

use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pgm::GrayImage;
use crate::preprocess::{ForegroundMask, RoiTensor};
use crate::vae::{forward, recon_l1, reconstruct, VaeError, VaeParams};
use crate::{stream_seed, Label};

pub const DEFAULT_PERCENTILE: f64 = 95.0;

#[derive(Debug, Error, PartialEq)]
pub enum DetectorError {
    #[error("ROI '{id}' does not fit the model: {message}")]
    ShapeMismatch { id: String, message: String },
    #[error("records must contain both normal and anomalous labels")]
    OneClassOnly,
    #[error("no records")]
    Empty,
    #[error("foreground mask is empty")]
    EmptyMask,
    #[error("scores CSV line {line}: {message}")]
    Csv { line: usize, message: String },
    #[error(transparent)]
    Model(#[from] VaeError),
}

pub type Result<T, E = DetectorError> = std::result::Result<T, E>;

/// Decision of the threshold rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Normal,
    Anomalous,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Normal => "Normal",
            Status::Anomalous => "Anomalous",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub id: String,
    /// Summed absolute reconstruction error.
    pub recon_loss: f64,
    pub regularity: Option<f64>,
    pub label: Option<Label>,
    pub status: Option<Status>,
}

impl ScoreRecord {
    pub fn new(id: impl Into<String>, recon_loss: f64, label: Option<Label>) -> Self {
        ScoreRecord {
            id: id.into(),
            recon_loss,
            regularity: None,
            label,
            status: None,
        }
    }
}

/// Latent used when scoring: the posterior mean, or a seeded draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpsMode {
    Zero,
    Seeded(u64),
}

fn check_roi(params: &VaeParams<f32>, id: &str, roi: &RoiTensor) -> Result<()> {
    let c = params.config();
    if roi.channels() != c.in_channels || roi.size() != c.spatial {
        return Err(DetectorError::ShapeMismatch {
            id: id.to_string(),
            message: format!(
                "{}x{}x{} ROI for a {}x{}x{} model",
                roi.channels(),
                roi.size(),
                roi.size(),
                c.in_channels,
                c.spatial,
                c.spatial
            ),
        });
    }
    Ok(())
}

/// Reconstruction of `roi` through the latent mean.
pub fn reconstruction(params: &VaeParams<f32>, id: &str, roi: &RoiTensor) -> Result<Vec<f32>> {
    check_roi(params, id, roi)?;
    Ok(reconstruct(params, roi.data())?.0)
}

pub fn score(
    params: &VaeParams<f32>,
    id: &str,
    roi: &RoiTensor,
    label: Option<Label>,
    eps_mode: EpsMode,
) -> Result<ScoreRecord> {
    check_roi(params, id, roi)?;
    let loss = match eps_mode {
        EpsMode::Zero => recon_l1(roi.data(), &reconstruct(params, roi.data())?.0),
        EpsMode::Seeded(seed) => {
            let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
            let eps: Vec<f32> = (0..params.config().latent_dim)
                .map(|_| rng.sample(StandardNormal))
                .collect();
            let trace = forward(params, roi.data(), &eps)?;
            recon_l1(roi.data(), trace.reconstruction())
        }
    };
    Ok(ScoreRecord::new(id, loss, label))
}

/// Scores many ROIs concurrently with `z = mu`; output keeps input order.
pub fn score_all(params: &VaeParams<f32>, items: &[(String, RoiTensor, Option<Label>)]) -> Result<Vec<ScoreRecord>> {
    items
        .par_iter()
        .map(|(id, roi, label)| score(params, id, roi, *label, EpsMode::Zero))
        .collect()
}

/// Min-max normalizes losses over the batch; a constant batch maps to 0.
pub fn regularity(records: &mut [ScoreRecord]) {
    let lo = records.iter().map(|r| r.recon_loss).fold(f64::INFINITY, f64::min);
    let hi = records.iter().map(|r| r.recon_loss).fold(f64::NEG_INFINITY, f64::max);
    for r in records.iter_mut() {
        r.regularity = Some(if hi > lo { (r.recon_loss - lo) / (hi - lo) } else { 0.0 });
    }
}

/// Anomalous iff the loss strictly exceeds `theta`.
pub fn classify(recon_loss: f64, theta: f64) -> Status {
    if recon_loss > theta {
        Status::Anomalous
    } else {
        Status::Normal
    }
}

pub fn apply_threshold(records: &mut [ScoreRecord], theta: f64) {
    for r in records.iter_mut() {
        r.status = Some(classify(r.recon_loss, theta));
    }
}

/// Confusion counts with anomalous as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    fn tally<'a>(records: impl IntoIterator<Item = &'a ScoreRecord>, theta: f64) -> Self {
        let mut c = Confusion::default();
        for r in records {
            match (r.label, classify(r.recon_loss, theta)) {
                (Some(Label::Anomalous), Status::Anomalous) => c.tp += 1,
                (Some(Label::Anomalous), Status::Normal) => c.fn_ += 1,
                (Some(Label::Normal), Status::Anomalous) => c.fp += 1,
                (Some(Label::Normal), Status::Normal) => c.tn += 1,
                (None, _) => {}
            }
        }
        c
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// `2PR / (P + R)`, evaluated as `2tp / (2tp + fp + fn)` so equal scores
    /// compare equal exactly.
    pub fn f1(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.tp + self.tn + self.fp + self.fn_)
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub confusion: Confusion,
}

fn has_both(records: &[ScoreRecord]) -> bool {
    records.iter().any(|r| r.label == Some(Label::Normal)) && records.iter().any(|r| r.label == Some(Label::Anomalous))
}

/// Fraction of labeled records classified correctly; defined for any labels.
pub fn accuracy(records: &[ScoreRecord], theta: f64) -> f64 {
    Confusion::tally(records, theta).accuracy()
}

pub fn evaluate(records: &[ScoreRecord], theta: f64) -> Result<Metrics> {
    if !has_both(records) {
        return Err(DetectorError::OneClassOnly);
    }
    let c = Confusion::tally(records, theta);
    Ok(Metrics {
        precision: c.precision(),
        recall: c.recall(),
        f1: c.f1(),
        accuracy: c.accuracy(),
        confusion: c,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub theta: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub theta: f64,
    pub f1: f64,
    pub curve: Vec<CurvePoint>,
    pub calibration_ids: Vec<String>,
    pub validation_ids: Vec<String>,
    /// Metrics of `theta` on the validation records, when there are any.
    #[serde(default)]
    pub validation: Option<Metrics>,
}

impl ThresholdReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

/// Candidate thresholds: distinct observed losses and the midpoints between
/// neighbours, ascending.
pub fn candidate_thresholds(records: &[ScoreRecord]) -> Vec<f64> {
    let mut losses: Vec<f64> = records.iter().map(|r| r.recon_loss).collect();
    losses.sort_by(f64::total_cmp);
    losses.dedup();
    let mut out = Vec::with_capacity(2 * losses.len());
    for (i, &l) in losses.iter().enumerate() {
        if i > 0 {
            out.push(losses[i - 1] + (l - losses[i - 1]) / 2.0);
        }
        out.push(l);
    }
    out
}

/// F1-maximizing threshold over [`candidate_thresholds`]; ties keep the
/// smallest. All records count as calibration records.
pub fn select_threshold(records: &[ScoreRecord]) -> Result<ThresholdReport> {
    if !has_both(records) {
        return Err(DetectorError::OneClassOnly);
    }
    let curve: Vec<CurvePoint> = candidate_thresholds(records)
        .into_iter()
        .map(|theta| {
            let c = Confusion::tally(records, theta);
            CurvePoint {
                theta,
                precision: c.precision(),
                recall: c.recall(),
                f1: c.f1(),
            }
        })
        .collect();
    let mut best = curve[0];
    for p in &curve[1..] {
        if p.f1 > best.f1 {
            best = *p;
        }
    }
    Ok(ThresholdReport {
        theta: best.theta,
        f1: best.f1,
        curve,
        calibration_ids: records.iter().map(|r| r.id.clone()).collect(),
        validation_ids: Vec::new(),
        validation: None,
    })
}

/// Splits labeled records into calibration and validation halves, per label,
/// by a seeded shuffle. The calibration half takes the extra item of an odd
/// class. Both halves keep input order.
pub fn stratified_halves(records: &[ScoreRecord], seed: u64) -> (Vec<ScoreRecord>, Vec<ScoreRecord>) {
    let mut in_calibration = vec![false; records.len()];
    for (stream, label) in [(0u64, Label::Normal), (1, Label::Anomalous)] {
        let mut idx: Vec<usize> = (0..records.len())
            .filter(|&i| records[i].label == Some(label))
            .collect();
        idx.shuffle(&mut Xoshiro256PlusPlus::seed_from_u64(stream_seed(seed, stream)));
        for &i in &idx[..idx.len().div_ceil(2)] {
            in_calibration[i] = true;
        }
    }
    let (mut cal, mut val) = (Vec::new(), Vec::new());
    for (r, &c) in records.iter().zip(&in_calibration) {
        if r.label.is_some() {
            if c { &mut cal } else { &mut val }.push(r.clone());
        }
    }
    (cal, val)
}

/// Picks theta on one stratified half and evaluates it on the other.
pub fn calibrate_threshold(records: &[ScoreRecord], seed: u64) -> Result<ThresholdReport> {
    let (cal, val) = stratified_halves(records, seed);
    let mut report = select_threshold(&cal)?;
    report.validation_ids = val.iter().map(|r| r.id.clone()).collect();
    report.validation = Some(evaluate(&val, report.theta)?);
    Ok(report)
}

fn fmt_opt<T: fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map_or(String::new(), |v| v.to_string())
}

/// CSV with columns id, recon_loss, regularity, label, status; absent values
/// are empty fields.
pub fn scores_csv(records: &[ScoreRecord]) -> String {
    let mut out = String::from("id,recon_loss,regularity,label,status\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.id,
            r.recon_loss,
            fmt_opt(&r.regularity),
            fmt_opt(&r.label),
            fmt_opt(&r.status)
        ));
    }
    out
}

pub fn parse_scores_csv(text: &str) -> Result<Vec<ScoreRecord>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let err = |line: usize, message: String| DetectorError::Csv {
        line: line + 1,
        message,
    };
    match lines.next() {
        Some((_, h)) if h.trim() == "id,recon_loss,regularity,label,status" => {}
        Some((i, h)) => return Err(err(i, format!("unexpected header '{h}'"))),
        None => return Err(DetectorError::Empty),
    }
    lines
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 5 {
                return Err(err(i, format!("expected 5 fields, found {}", f.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| err(i, format!("'{s}': {e}")));
            let recon_loss = num(f[1])?;
            if !(recon_loss >= 0.0) {
                return Err(err(i, format!("negative or invalid loss {recon_loss}")));
            }
            let regularity = if f[2].is_empty() { None } else { Some(num(f[2])?) };
            let label = if f[3].is_empty() {
                None
            } else {
                Some(f[3].parse::<Label>().map_err(|m| err(i, m))?)
            };
            let status = match f[4] {
                "" => None,
                "Normal" => Some(Status::Normal),
                "Anomalous" => Some(Status::Anomalous),
                other => return Err(err(i, format!("unknown status '{other}'"))),
            };
            Ok(ScoreRecord {
                id: f[0].to_string(),
                recon_loss,
                regularity,
                label,
                status,
            })
        })
        .collect()
}

/// Per-pixel reconstruction error and the pixels above a percentile of it.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub size: usize,
    /// Band-mean `|x - x_hat|`, row-major.
    pub error: Vec<f64>,
    pub highlight: ForegroundMask,
    pub percentile: f64,
    /// Errors strictly above this value are highlighted.
    pub cutoff: f64,
}

impl Heatmap {
    /// Error map scaled linearly so its maximum maps to 255.
    pub fn error_image(&self) -> GrayImage {
        let max = self.error.iter().cloned().fold(0.0, f64::max);
        let pixels = self
            .error
            .iter()
            .map(|&e| if max > 0.0 { (e / max * 255.0).round() as u8 } else { 0 })
            .collect();
        GrayImage {
            width: self.size,
            height: self.size,
            pixels,
        }
    }
}

/// The highlight holds in-mask pixels whose error exceeds the in-mask value
/// at rank `ceil(percentile * n / 100)`; percentile 0 selects the whole mask.
pub fn heatmap(x: &[f32], x_hat: &[f32], channels: usize, mask: &ForegroundMask, percentile: f64) -> Result<Heatmap> {
    let size = mask.width;
    let plane = size * size;
    if mask.height != size || channels == 0 || x.len() != channels * plane || x_hat.len() != x.len() {
        return Err(DetectorError::ShapeMismatch {
            id: "heatmap".into(),
            message: format!(
                "{} and {} values for {channels} bands of {size}x{size}",
                x.len(),
                x_hat.len()
            ),
        });
    }
    let mut error = vec![0.0f64; plane];
    for b in 0..channels {
        for (p, e) in error.iter_mut().enumerate() {
            *e += (x[b * plane + p] as f64 - x_hat[b * plane + p] as f64).abs();
        }
    }
    for e in &mut error {
        *e /= channels as f64;
    }
    let mut inside: Vec<f64> = (0..plane).filter(|&p| mask.bits[p]).map(|p| error[p]).collect();
    if inside.is_empty() {
        return Err(DetectorError::EmptyMask);
    }
    inside.sort_by(f64::total_cmp);
    let p = percentile.clamp(0.0, 100.0);
    let rank = (p * inside.len() as f64 / 100.0).ceil() as usize;
    let cutoff = if rank == 0 { f64::NEG_INFINITY } else { inside[rank - 1] };
    let bits = (0..plane).map(|i| mask.bits[i] && error[i] > cutoff).collect();
    Ok(Heatmap {
        size,
        error,
        highlight: ForegroundMask {
            height: size,
            width: size,
            bits,
        },
        percentile: p,
        cutoff,
    })
}

/// Mean ground-truth and reconstructed reflectance per band for one label,
/// over the foreground pixels of all its samples.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReflectanceProfile {
    pub label: Label,
    pub wavelengths: Vec<f64>,
    pub truth: Vec<f64>,
    pub reconstructed: Vec<f64>,
}

/// One profile per label present, normal first. Each item pairs a ROI with
/// its reconstruction.
pub fn mean_reflectance_report(items: &[(&RoiTensor, &[f32], Label)]) -> Vec<ReflectanceProfile> {
    let mut out = Vec::new();
    for label in [Label::Normal, Label::Anomalous] {
        let group: Vec<_> = items.iter().filter(|(_, _, l)| *l == label).collect();
        let Some(first) = group.first() else { continue };
        let bands = first.0.channels();
        let (mut truth, mut recon) = (vec![0.0f64; bands], vec![0.0f64; bands]);
        let mut count = 0usize;
        for (roi, xhat, _) in &group {
            let plane = roi.size() * roi.size();
            let fg: Vec<usize> = (0..plane).filter(|&p| roi.mask().bits[p]).collect();
            count += fg.len();
            for b in 0..bands {
                for &p in &fg {
                    truth[b] += roi.data()[b * plane + p] as f64;
                    recon[b] += xhat[b * plane + p] as f64;
                }
            }
        }
        let n = count.max(1) as f64;
        out.push(ReflectanceProfile {
            label,
            wavelengths: first.0.wavelengths().to_vec(),
            truth: truth.into_iter().map(|v| v / n).collect(),
            reconstructed: recon.into_iter().map(|v| v / n).collect(),
        });
    }
    out
}

/// CSV with columns label, wavelength, truth, reconstructed.
pub fn reflectance_csv(profiles: &[ReflectanceProfile]) -> String {
    let mut out = String::from("label,wavelength,truth,reconstructed\n");
    for p in profiles {
        for k in 0..p.wavelengths.len() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                p.label, p.wavelengths[k], p.truth[k], p.reconstructed[k]
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn recs(pairs: &[(f64, Label)]) -> Vec<ScoreRecord> {
        pairs
            .iter()
            .enumerate()
            .map(|(i, &(l, lab))| ScoreRecord::new(format!("s{i}"), l, Some(lab)))
            .collect()
    }

    use Label::{Anomalous as A, Normal as N};

    #[test]
    fn separable_threshold_is_smallest_perfect_candidate() {
        let r = recs(&[(1.0, N), (2.0, N), (3.0, N), (5.0, A), (6.0, A)]);
        let rep = select_threshold(&r).unwrap();
        assert_eq!(rep.theta, 3.0);
        assert_eq!(rep.f1, 1.0);
        assert_eq!(rep.curve.len(), 9);
    }

    #[test]
    fn interleaved_threshold() {
        let r = recs(&[(1.0, N), (2.0, A), (3.0, N), (4.0, A)]);
        let rep = select_threshold(&r).unwrap();
        assert_eq!(rep.theta, 1.0);
        assert!((rep.f1 - 0.8).abs() < 1e-12);
        assert_eq!(rep.curve.len(), 7);
    }

    #[test]
    fn one_class_is_rejected() {
        let r = recs(&[(1.0, N), (2.0, N)]);
        assert_eq!(select_threshold(&r), Err(DetectorError::OneClassOnly));
        assert_eq!(evaluate(&r, 1.5), Err(DetectorError::OneClassOnly));
        assert_eq!(accuracy(&r, 1.5), 0.5);
    }

    #[test]
    fn classification_boundary() {
        assert_eq!(classify(1928.7, 1928.6), Status::Anomalous);
        assert_eq!(classify(1928.6, 1928.6), Status::Normal);
        assert_eq!(classify(0.0, 0.5), Status::Normal);
    }

    #[test]
    fn evaluation_counts() {
        let mut pairs: Vec<(f64, Label)> = (0..15).map(|i| (100.0 + i as f64, N)).collect();
        pairs.extend((0..53).map(|i| (3000.0 + i as f64, A)));
        pairs.extend([(1000.0, A), (1001.0, A)]);
        let m = evaluate(&recs(&pairs), 1928.6).unwrap();
        assert_eq!(
            m.confusion,
            Confusion {
                tp: 53,
                fp: 0,
                tn: 15,
                fn_: 2
            }
        );
        assert!((m.accuracy - 68.0 / 70.0).abs() < 1e-12);

        let low = evaluate(&recs(&pairs), -1.0).unwrap();
        assert_eq!(low.recall, 1.0);
        assert!((low.precision - 55.0 / 70.0).abs() < 1e-12);
    }

    #[test]
    fn regularity_rules() {
        let mut r = recs(&[(1000.0, N), (1500.0, N), (2000.0, A)]);
        regularity(&mut r);
        let v: Vec<f64> = r.iter().map(|x| x.regularity.unwrap()).collect();
        assert_eq!(v, vec![0.0, 0.5, 1.0]);
        let mut one = recs(&[(7.0, N)]);
        regularity(&mut one);
        assert_eq!(one[0].regularity, Some(0.0));
        let mut same = recs(&[(7.0, N), (7.0, A)]);
        regularity(&mut same);
        assert!(same.iter().all(|x| x.regularity == Some(0.0)));
    }

    #[test]
    fn halves_are_stratified_and_seeded() {
        let mut pairs: Vec<(f64, Label)> = (0..20).map(|i| (i as f64, N)).collect();
        pairs.extend((0..40).map(|i| (100.0 + i as f64, A)));
        let r = recs(&pairs);
        let (cal, val) = stratified_halves(&r, 3);
        let count = |v: &[ScoreRecord], l| v.iter().filter(|x| x.label == Some(l)).count();
        assert_eq!((count(&cal, N), count(&cal, A)), (10, 20));
        assert_eq!((count(&val, N), count(&val, A)), (10, 20));
        assert!(cal.iter().all(|c| val.iter().all(|v| v.id != c.id)));
        assert_eq!(stratified_halves(&r, 3), (cal.clone(), val));
        assert_ne!(stratified_halves(&r, 4).0, cal);

        let rep = calibrate_threshold(&r, 3).unwrap();
        assert_eq!(rep.validation.unwrap().accuracy, 1.0);
        assert_eq!(rep.calibration_ids.len() + rep.validation_ids.len(), 60);
    }

    #[test]
    fn csv_round_trip() {
        let mut r = recs(&[(1.5, N), (2.25, A)]);
        r.push(ScoreRecord::new("u", 0.125, None));
        regularity(&mut r);
        apply_threshold(&mut r[..2], 2.0);
        let text = scores_csv(&r);
        assert!(text.starts_with("id,recon_loss,regularity,label,status\ns0,1.5,"));
        assert!(text.contains(",anomalous,Anomalous\n"));
        assert!(text.ends_with("u,0.125,0,,\n"));
        assert_eq!(parse_scores_csv(&text).unwrap(), r);
        assert!(parse_scores_csv("id,x\n").is_err());
        assert!(parse_scores_csv("id,recon_loss,regularity,label,status\na,-1,,,\n").is_err());
    }

    #[test]
    fn heatmap_rules() {
        let size = 20;
        let mask = ForegroundMask::filled(size, size, true);
        let x = vec![0.5f32; 2 * size * size];
        let same = heatmap(&x, &x, 2, &mask, 95.0).unwrap();
        assert!(same.error.iter().all(|&e| e == 0.0));
        assert_eq!(same.highlight.count(), 0);

        let mut y = x.clone();
        for b in 0..2 {
            for r in 5..15 {
                for c in 5..15 {
                    y[b * size * size + r * size + c] = 0.5 + 0.01 * (r * size + c) as f32 / 400.0 + 0.1;
                }
            }
        }
        let h = heatmap(&x, &y, 2, &mask, 95.0).unwrap();
        assert!(h.highlight.count() > 0 && h.highlight.count() <= 20);
        for r in 0..size {
            for c in 0..size {
                if h.highlight.get(r, c) {
                    assert!((5..15).contains(&r) && (5..15).contains(&c));
                }
            }
        }
        let all = heatmap(&x, &y, 2, &mask, 0.0).unwrap();
        assert_eq!(all.highlight, mask);

        let empty = ForegroundMask::filled(size, size, false);
        assert_eq!(heatmap(&x, &y, 2, &empty, 95.0), Err(DetectorError::EmptyMask));
        assert_eq!(h.error_image().pixels.iter().copied().max(), Some(255));
    }

    #[test]
    fn reflectance_constants() {
        let mut bits = vec![true; 16];
        bits[0] = false;
        let mask = ForegroundMask::new(4, 4, bits).unwrap();
        let data: Vec<f32> = (0..32).map(|i| if i % 16 == 0 { 0.0 } else { 0.4 }).collect();
        let roi = RoiTensor::new(data, 4, vec![530.0, 540.0], mask).unwrap();
        let recon: Vec<f32> = vec![0.5; 32];
        let rep = mean_reflectance_report(&[(&roi, &recon, Label::Normal)]);
        assert_eq!(rep.len(), 1);
        assert!(rep[0].truth.iter().all(|&v| (v - 0.4).abs() < 1e-6));
        assert!(rep[0].reconstructed.iter().all(|&v| (v - 0.5).abs() < 1e-12));
        let same = mean_reflectance_report(&[(&roi, roi.data(), Label::Anomalous)]);
        assert_eq!(same[0].truth, same[0].reconstructed);
        assert!(reflectance_csv(&rep).starts_with("label,wavelength,truth,reconstructed\nnormal,530,"));
    }
}
