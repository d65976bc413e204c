//! End-to-end glue: dataset directories to ROI sets, training and scoring
//! over ROI sets, and the in-memory synthetic experiment.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detector::{self, DetectorError, ScoreRecord, ThresholdReport};
use crate::hsi_io::{read_envi, write_envi, HsiError, Interleave};
use crate::pgm::{write_ppm, PgmError};
use crate::preprocess::{
    extract_rgb, extract_roi, read_annotations, scale_bbox, ForegroundMask, PreprocessError, RoiSpec, RoiTensor,
};
use crate::synth::{dataset_specs, gen_sample, SynthConfig, SynthError, SynthManifest};
use crate::trainer::{self, Checkpoint, TrainConfig, TrainError};
use crate::Label;

pub const ROI_INDEX: &str = "rois.json";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Hsi(#[from] HsiError),
    #[error(transparent)]
    Pgm(#[from] PgmError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("{path}: {message}")]
    Data { path: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn data_err(path: &Path, message: impl ToString) -> PipelineError {
    PipelineError::Data {
        path: path.display().to_string(),
        message: message.to_string(),
    }
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| data_err(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, text).map_err(io_err(path))
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable") + "\n"
}

/// One ROI stored on disk: an ENVI cube plus its foreground mask.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoiEntry {
    pub id: String,
    #[serde(default)]
    pub label: Option<Label>,
    pub header: String,
    pub mask: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoiIndex {
    pub spec: RoiSpec,
    pub rois: Vec<RoiEntry>,
}

impl RoiIndex {
    pub fn read(dir: &Path) -> Result<Self> {
        read_json(&dir.join(ROI_INDEX))
    }

    pub fn labels(&self) -> Vec<(String, Label)> {
        self.rois
            .iter()
            .filter_map(|e| e.label.map(|l| (e.id.clone(), l)))
            .collect()
    }
}

pub fn save_roi(dir: &Path, id: &str, label: Option<Label>, roi: &RoiTensor) -> Result<RoiEntry> {
    let header = format!("{id}.hdr");
    let mask = format!("{id}_mask.pgm");
    write_envi(&dir.join(&header), &roi.to_cube(), Interleave::Bsq)?;
    roi.mask().write(&dir.join(&mask))?;
    Ok(RoiEntry {
        id: id.to_string(),
        label,
        header,
        mask,
    })
}

/// Loads a ROI cube; its mask is read from `mask` when given, otherwise
/// recovered from the nonzero pixels.
pub fn load_roi_files(header: &Path, mask: Option<&Path>) -> Result<RoiTensor> {
    let cube = read_envi(header)?;
    Ok(match mask {
        Some(m) => RoiTensor::from_cube(&cube, ForegroundMask::read(m)?)?,
        None => RoiTensor::from_masked_cube(&cube)?,
    })
}

pub fn load_roi(dir: &Path, entry: &RoiEntry) -> Result<RoiTensor> {
    load_roi_files(&dir.join(&entry.header), Some(&dir.join(&entry.mask)))
}

/// Loads the selected ids (all when `ids` is `None`) in index order.
pub fn load_rois(
    dir: &Path,
    index: &RoiIndex,
    ids: Option<&[String]>,
) -> Result<Vec<(String, RoiTensor, Option<Label>)>> {
    let chosen: Vec<&RoiEntry> = match ids {
        None => index.rois.iter().collect(),
        Some(ids) => {
            let by_id: HashMap<&str, &RoiEntry> = index.rois.iter().map(|e| (e.id.as_str(), e)).collect();
            ids.iter()
                .map(|id| {
                    by_id
                        .get(id.as_str())
                        .copied()
                        .ok_or_else(|| data_err(&dir.join(ROI_INDEX), format!("no ROI with id '{id}'")))
                })
                .collect::<Result<_>>()?
        }
    };
    chosen
        .par_iter()
        .map(|e| Ok((e.id.clone(), load_roi(dir, e)?, e.label)))
        .collect()
}

/// Options of [`extract_dataset`].
#[derive(Debug, Clone, Default)]
pub struct ExtractOptions {
    pub spec: RoiSpec,
    /// Size `(height, width)` of the images the boxes were drawn on; the cube
    /// size when absent.
    pub rgb_dims: Option<(usize, usize)>,
    pub write_rgb: bool,
}

/// Turns an annotated capture directory (`annotations.json`, cubes, masks,
/// optional `manifest.json` labels) into a ROI directory with `rois.json`.
pub fn extract_dataset(data_dir: &Path, out_dir: &Path, options: &ExtractOptions) -> Result<RoiIndex> {
    let annotations = read_annotations(&data_dir.join("annotations.json"))?;
    let manifest_path = data_dir.join("manifest.json");
    let labels: HashMap<String, Label> = if manifest_path.is_file() {
        SynthManifest::read(&manifest_path)?
            .samples
            .into_iter()
            .map(|s| (s.id, s.label))
            .collect()
    } else {
        HashMap::new()
    };
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let rois = annotations
        .par_iter()
        .map(|a| {
            let cube = read_envi(&data_dir.join(format!("{}.hdr", a.id)))?;
            let mask = ForegroundMask::read(&data_dir.join(&a.mask_path))?;
            let rgb_dims = options.rgb_dims.unwrap_or((cube.height(), cube.width()));
            let bbox = scale_bbox(a.bounding_box(), rgb_dims, (cube.height(), cube.width()));
            if options.write_rgb {
                let rgb = extract_rgb(&cube)?;
                write_ppm(
                    &out_dir.join(format!("{}_rgb.ppm", a.id)),
                    rgb.width,
                    rgb.height,
                    &rgb.pixels,
                )?;
            }
            let roi = extract_roi(&cube, &mask, bbox, &options.spec)?;
            save_roi(out_dir, &a.id, labels.get(&a.id).copied(), &roi)
        })
        .collect::<Result<Vec<_>>>()?;
    let index = RoiIndex {
        spec: options.spec,
        rois,
    };
    write_text(&out_dir.join(ROI_INDEX), &to_json(&index))?;
    Ok(index)
}

/// Scores ROIs, fills in regularity over the batch, and applies `theta`
/// when given.
pub fn score_rois(
    ckpt: &Checkpoint,
    items: &[(String, RoiTensor, Option<Label>)],
    theta: Option<f64>,
) -> Result<Vec<ScoreRecord>> {
    let mut records = detector::score_all(&ckpt.params, items)?;
    detector::regularity(&mut records);
    if let Some(t) = theta {
        detector::apply_threshold(&mut records, t);
    }
    Ok(records)
}

/// Settings of the synthetic end-to-end experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub synth: SynthConfig,
    pub n_normal: usize,
    pub n_anomalous: usize,
    pub n_train: usize,
    pub roi: RoiSpec,
    pub train: TrainConfig,
    pub threshold_seed: u64,
}

impl Experiment {
    /// 120 normal + 40 split fruit, 100 normals trained for 300 epochs in
    /// batches of 16.
    pub fn standard(seed: u64) -> Self {
        Experiment {
            synth: SynthConfig {
                seed,
                ..SynthConfig::default()
            },
            n_normal: 120,
            n_anomalous: 40,
            n_train: 100,
            roi: RoiSpec::default(),
            train: TrainConfig {
                epochs: 300,
                batch_size: 16,
                beta_max: 10.0,
                seed,
                ..TrainConfig::default()
            },
            threshold_seed: seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub checkpoint: Checkpoint,
    pub train_ids: Vec<String>,
    /// Every held-out record, thresholded.
    pub records: Vec<ScoreRecord>,
    pub report: ThresholdReport,
    pub scores_csv: String,
    pub report_json: String,
}

/// Generates the data in memory, trains on normals only, scores the rest and
/// calibrates the threshold on one stratified half of it.
pub fn run_experiment(exp: &Experiment, mut progress: impl FnMut(&trainer::EpochRecord)) -> Result<ExperimentOutcome> {
    let specs = dataset_specs(exp.synth.seed, exp.n_normal, exp.n_anomalous);
    let rois: Vec<RoiTensor> = specs
        .par_iter()
        .map(|s| {
            let sample = gen_sample(&exp.synth, s.label, s.seed)?;
            Ok(extract_roi(&sample.cube, &sample.mask, sample.bbox, &exp.roi)?)
        })
        .collect::<Result<_>>()?;
    let items: Vec<(String, Label)> = specs.iter().map(|s| (s.id.clone(), s.label)).collect();
    let ratio = if exp.n_normal == 0 {
        0.0
    } else {
        exp.n_train as f64 / exp.n_normal as f64
    };
    let split = trainer::split_dataset(&items, ratio, exp.train.seed)?;
    let position: HashMap<&str, usize> = specs.iter().enumerate().map(|(i, s)| (s.id.as_str(), i)).collect();
    let train_set: Vec<RoiTensor> = split
        .train
        .iter()
        .map(|id| rois[position[id.as_str()]].clone())
        .collect();
    let checkpoint = trainer::train_with_progress(&exp.train, &train_set, &mut progress)?;
    drop(train_set);

    let test: Vec<(String, RoiTensor, Option<Label>)> = split
        .test
        .iter()
        .map(|id| {
            let i = position[id.as_str()];
            (id.clone(), rois[i].clone(), Some(specs[i].label))
        })
        .collect();
    let mut records = score_rois(&checkpoint, &test, None)?;
    let report = detector::calibrate_threshold(&records, exp.threshold_seed)?;
    detector::apply_threshold(&mut records, report.theta);
    Ok(ExperimentOutcome {
        scores_csv: detector::scores_csv(&records),
        report_json: report.to_json(),
        checkpoint,
        train_ids: split.train,
        records,
        report,
    })
}
