mod common;

use std::fs;
use std::path::{Path, PathBuf};

use common::{best_f1, ok, p, tiny_train_config};
use splitsense::detector::{calibrate_threshold, parse_scores_csv, scores_csv, ThresholdReport};
use splitsense::pipeline::{extract_dataset, load_rois, score_rois, to_json, ExtractOptions, RoiIndex};
use splitsense::preprocess::RoiSpec;
use splitsense::synth::{gen_dataset, SynthConfig};
use splitsense::trainer::{history_csv, load_checkpoint, split_dataset, train, DatasetSplit};
use splitsense::Label;

fn files(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            out.extend(files(&path));
        } else {
            out.push(path);
        }
    }
    out.sort();
    out
}

fn assert_same_tree(a: &Path, b: &Path) {
    let fa = files(a);
    let fb = files(b);
    let rel = |root: &Path, v: &[PathBuf]| -> Vec<PathBuf> {
        v.iter().map(|f| f.strip_prefix(root).unwrap().to_path_buf()).collect()
    };
    assert_eq!(rel(a, &fa), rel(b, &fb));
    for (x, y) in fa.iter().zip(&fb) {
        assert!(fs::read(x).unwrap() == fs::read(y).unwrap(), "{} differs", x.display());
    }
}

struct Run {
    _tmp: tempfile::TempDir,
    root: PathBuf,
}

impl Run {
    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }
}

/// synth -> extract-roi -> train -> score -> threshold, all through the binary.
fn cli_chain() -> Run {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().to_path_buf();
    let data = root.join("data");
    let rois = root.join("rois");
    let ckpt = root.join("ckpt");
    let config = root.join("train.json");
    fs::write(&config, to_json(&tiny_train_config())).unwrap();
    ok(&[
        "-q",
        "synth",
        "--normal",
        "8",
        "--anomalous",
        "4",
        "--seed",
        "3",
        "--size",
        "48",
        "--bands",
        "120",
        "--out",
        p(&data),
    ]);
    ok(&[
        "-q",
        "extract-roi",
        "--data",
        p(&data),
        "--out",
        p(&rois),
        "--bands",
        "4",
        "--size",
        "16",
    ]);
    ok(&[
        "-q",
        "train",
        "--rois",
        p(&rois),
        "--out",
        p(&ckpt),
        "--config",
        p(&config),
        "--split-ratio",
        "0.75",
    ]);
    let scores = root.join("scores.csv");
    ok(&[
        "-q",
        "score",
        "--checkpoint",
        p(&ckpt),
        "--rois",
        p(&rois),
        "--split",
        "test",
        "--out",
        p(&scores),
    ]);
    let thr = root.join("threshold.json");
    ok(&[
        "-q",
        "threshold",
        "--scores",
        p(&scores),
        "--seed",
        "5",
        "--out",
        p(&thr),
    ]);
    Run { _tmp: tmp, root }
}

#[test]
fn cli_outputs_equal_library_outputs() {
    let run = cli_chain();
    let lib = tempfile::tempdir().unwrap();

    let synth = SynthConfig {
        width: 48,
        height: 48,
        bands: 120,
        seed: 3,
        ..SynthConfig::default()
    };
    gen_dataset(&synth, 8, 4, &lib.path().join("data")).unwrap();
    assert_same_tree(&run.path("data"), &lib.path().join("data"));

    let options = ExtractOptions {
        spec: RoiSpec {
            lo_nm: 530.0,
            hi_nm: 550.0,
            bands: 4,
            size: 16,
        },
        rgb_dims: None,
        write_rgb: false,
    };
    let index = extract_dataset(&run.path("data"), &lib.path().join("rois"), &options).unwrap();
    assert_same_tree(&run.path("rois"), &lib.path().join("rois"));
    assert_eq!(index.rois.len(), 12);

    let config = tiny_train_config();
    let items: Vec<(String, Label)> = index.rois.iter().map(|e| (e.id.clone(), e.label.unwrap())).collect();
    let split = split_dataset(&items, 0.75, config.seed).unwrap();
    let saved: DatasetSplit = serde_json::from_slice(&fs::read(run.path("ckpt/split.json")).unwrap()).unwrap();
    assert_eq!(saved, split);
    assert_eq!(split.train.len(), 6);

    let rois = run.path("rois");
    let train_data: Vec<_> = load_rois(&rois, &index, Some(&split.train))
        .unwrap()
        .into_iter()
        .map(|(_, r, _)| r)
        .collect();
    let expected = train(&config, &train_data).unwrap();
    let ckpt = load_checkpoint(&run.path("ckpt")).unwrap();
    assert_eq!(ckpt.params.as_slice(), expected.params.as_slice());
    assert_eq!(
        fs::read_to_string(run.path("ckpt/loss.csv")).unwrap(),
        history_csv(&expected.history)
    );

    let test = load_rois(&rois, &RoiIndex::read(&rois).unwrap(), Some(&split.test)).unwrap();
    let records = score_rois(&expected, &test, None).unwrap();
    let csv = fs::read_to_string(run.path("scores.csv")).unwrap();
    assert_eq!(csv, scores_csv(&records));

    let report = calibrate_threshold(&parse_scores_csv(&csv).unwrap(), 5).unwrap();
    let json = fs::read_to_string(run.path("threshold.json")).unwrap();
    assert_eq!(json, report.to_json());

    // The chosen F1 is the best achievable on the calibration half.
    let parsed: ThresholdReport = serde_json::from_str(&json).unwrap();
    let calibration: Vec<_> = records
        .iter()
        .filter(|r| parsed.calibration_ids.contains(&r.id))
        .cloned()
        .collect();
    assert_eq!(calibration.len(), parsed.calibration_ids.len());
    assert!((parsed.f1 - best_f1(&calibration)).abs() < 1e-12);
    assert!(parsed
        .calibration_ids
        .iter()
        .all(|id| !parsed.validation_ids.contains(id)));
}

#[test]
fn reruns_are_byte_identical() {
    let a = cli_chain();
    let b = cli_chain();
    for name in ["data", "rois", "ckpt"] {
        assert_same_tree(&a.path(name), &b.path(name));
    }
    for name in ["scores.csv", "threshold.json"] {
        assert_eq!(fs::read(a.path(name)).unwrap(), fs::read(b.path(name)).unwrap());
    }
}

#[test]
fn report_writes_heatmaps_and_spectra() {
    let run = cli_chain();
    let out = run.path("report");
    ok(&[
        "-q",
        "report",
        "--checkpoint",
        p(&run.path("ckpt")),
        "--rois",
        p(&run.path("rois")),
        "--split",
        "test",
        "--percentile",
        "90",
        "--out",
        p(&out),
    ]);
    let split: DatasetSplit = serde_json::from_slice(&fs::read(run.path("ckpt/split.json")).unwrap()).unwrap();
    for id in &split.test {
        for suffix in ["error", "highlight"] {
            let pgm = fs::read(out.join(format!("{id}_{suffix}.pgm"))).unwrap();
            assert!(pgm.starts_with(b"P5"));
        }
    }
    let csv = fs::read_to_string(out.join("reflectance.csv")).unwrap();
    // 4 bands for each of the two labels, plus a header.
    assert_eq!(csv.lines().count(), 1 + 2 * 4);
}

#[test]
fn scoring_single_roi_files_matches_directory_scoring() {
    let run = cli_chain();
    let ckpt = run.path("ckpt");
    let all = run.path("all.csv");
    ok(&[
        "-q",
        "score",
        "--checkpoint",
        p(&ckpt),
        "--rois",
        p(&run.path("rois")),
        "--out",
        p(&all),
    ]);
    let index = RoiIndex::read(&run.path("rois")).unwrap();
    let header = run.path("rois").join(&index.rois[0].header);
    let one = run.path("one.csv");
    ok(&[
        "-q",
        "score",
        "--checkpoint",
        p(&ckpt),
        "--roi",
        p(&header),
        "--theta",
        "0",
        "--out",
        p(&one),
    ]);
    let all = parse_scores_csv(&fs::read_to_string(all).unwrap()).unwrap();
    let one = parse_scores_csv(&fs::read_to_string(one).unwrap()).unwrap();
    assert_eq!(one.len(), 1);
    assert_eq!(one[0].id, index.rois[0].id);
    assert_eq!(
        one[0].recon_loss,
        all.iter().find(|r| r.id == one[0].id).unwrap().recon_loss
    );
}
