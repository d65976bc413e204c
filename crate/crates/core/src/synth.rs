//! Synthetic hyperspectral tomatoes.
//!
//! A fruit is a shaded disk whose spectrum follows a logistic rise from dark
//! green/blue to bright red/NIR. Split fruit carry a thin curved crack whose
//! reflectance is lifted by a triangular bump in the green. Geometry, noise
//! and crack shape come from independent seeded streams, so a normal and an
//! anomalous sample with the same seed differ only on the crack pixels.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hsi_io::{even_grid, write_envi, EnviHeader, HsiCube, HsiError, Interleave, Provenance};
use crate::preprocess::{Annotation, BoundingBox, ForegroundMask, PreprocessError};
use crate::{stream_seed, Label};

const STREAM_GEOMETRY: u64 = 0;
const STREAM_NOISE: u64 = 1;
const STREAM_CRACK: u64 = 2;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Hsi(#[from] HsiError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = SynthError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    pub bands: usize,
    pub lo_nm: f64,
    pub hi_nm: f64,
    /// Fruit radius range in pixels at the default 256 x 256 size; scaled
    /// with the smaller image side otherwise.
    pub radius_range: (f64, f64),
    /// Logistic profile `floor + gain / (1 + exp(-(nm - center) / width))`.
    pub profile_floor: f64,
    pub profile_gain: f64,
    pub profile_center_nm: f64,
    pub profile_width_nm: f64,
    /// Per-fruit multiplicative brightness jitter, `1 ± this`.
    pub brightness_jitter: f64,
    /// Relative darkening at the rim: shading `1 - shade * (d / r)^2`.
    pub shade: f64,
    pub background: f64,
    /// Crack stroke width as a fraction of the radius.
    pub crack_width: (f64, f64),
    /// Crack chord length as a fraction of the radius.
    pub crack_length: (f64, f64),
    /// Control-point offset as a fraction of the half chord.
    pub crack_curvature: f64,
    /// Triangular reflectance lift `[lo, peak, hi]` in nm.
    pub delta_nm: (f64, f64, f64),
    pub delta_amplitude: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            width: 256,
            height: 256,
            bands: 448,
            lo_nm: 400.0,
            hi_nm: 1000.0,
            radius_range: (70.0, 100.0),
            profile_floor: 0.06,
            profile_gain: 0.64,
            profile_center_nm: 600.0,
            profile_width_nm: 12.0,
            brightness_jitter: 0.08,
            shade: 0.3,
            background: 0.03,
            crack_width: (0.085, 0.085),
            crack_length: (0.8, 1.4),
            crack_curvature: 0.6,
            delta_nm: (520.0, 540.0, 600.0),
            delta_amplitude: 0.25,
            noise_sigma: 0.01,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SynthError::InvalidConfig(m.into()));
        if self.width < 8 || self.height < 8 || self.bands < 2 {
            return bad("image must be at least 8x8 with 2 bands");
        }
        if !(self.hi_nm > self.lo_nm) {
            return bad("wavelength range must increase");
        }
        let (r0, r1) = self.radius_range;
        if !(r0 > 0.0 && r1 >= r0 && 2.0 * r1 * self.scale() < self.width.min(self.height) as f64) {
            return bad("radius range must be positive and fit the image");
        }
        let (lo, peak, hi) = self.delta_nm;
        if !(lo < peak && peak < hi) {
            return bad("delta band must satisfy lo < peak < hi");
        }
        if !(self.noise_sigma >= 0.0) || !(self.delta_amplitude >= 0.0) {
            return bad("noise and delta must be non-negative");
        }
        if !(self.crack_width.0 > 0.0 && self.crack_width.1 >= self.crack_width.0)
            || !(self.crack_length.0 > 0.0 && self.crack_length.1 >= self.crack_length.0 && self.crack_length.1 < 1.8)
        {
            return bad("crack width/length ranges are invalid");
        }
        Ok(())
    }

    fn scale(&self) -> f64 {
        self.width.min(self.height) as f64 / 256.0
    }

    pub fn wavelengths(&self) -> Vec<f64> {
        even_grid(self.lo_nm, self.hi_nm, self.bands)
    }

    pub fn profile(&self, nm: f64) -> f64 {
        self.profile_floor + self.profile_gain / (1.0 + (-(nm - self.profile_center_nm) / self.profile_width_nm).exp())
    }

    /// Reflectance lift on crack pixels.
    pub fn delta(&self, nm: f64) -> f64 {
        let (lo, peak, hi) = self.delta_nm;
        let a = self.delta_amplitude;
        if nm <= lo || nm >= hi {
            0.0
        } else if nm <= peak {
            a * (nm - lo) / (peak - lo)
        } else {
            a * (hi - nm) / (hi - peak)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    pub cube: HsiCube,
    pub mask: ForegroundMask,
    pub bbox: BoundingBox,
    pub label: Label,
    /// Crack pixels; present only for anomalous samples.
    pub crack: Option<ForegroundMask>,
}

struct Fruit {
    cx: f64,
    cy: f64,
    radius: f64,
    brightness: f64,
}

fn draw_fruit(config: &SynthConfig, rng: &mut Xoshiro256PlusPlus) -> Fruit {
    let s = config.scale();
    let radius = s * rng.gen_range(config.radius_range.0..=config.radius_range.1);
    let slack_x = (config.width as f64 / 2.0 - radius - 2.0).max(0.0).min(20.0 * s);
    let slack_y = (config.height as f64 / 2.0 - radius - 2.0).max(0.0).min(20.0 * s);
    let cx = (config.width as f64 - 1.0) / 2.0 + rng.gen_range(-1.0..=1.0) * slack_x;
    let cy = (config.height as f64 - 1.0) / 2.0 + rng.gen_range(-1.0..=1.0) * slack_y;
    let j = config.brightness_jitter;
    let brightness = 1.0 + rng.gen_range(-j..=j);
    Fruit {
        cx,
        cy,
        radius,
        brightness,
    }
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (qx, qy) = (a.0 + t * dx - p.0, a.1 + t * dy - p.1);
    (qx * qx + qy * qy).sqrt()
}

/// Quadratic Bézier stroke rasterized inside the fruit.
fn draw_crack(
    config: &SynthConfig,
    fruit: &Fruit,
    mask: &ForegroundMask,
    rng: &mut Xoshiro256PlusPlus,
) -> ForegroundMask {
    let r = fruit.radius;
    let width = r * rng.gen_range(config.crack_width.0..=config.crack_width.1);
    let half = 0.5 * r * rng.gen_range(config.crack_length.0..=config.crack_length.1);
    let off = r * rng.gen_range(0.0..0.2);
    let off_angle = rng.gen_range(0.0..std::f64::consts::TAU);
    let angle = rng.gen_range(0.0..std::f64::consts::PI);
    let bend = half * rng.gen_range(-config.crack_curvature..=config.crack_curvature);
    let (cx, cy) = (fruit.cx + off * off_angle.cos(), fruit.cy + off * off_angle.sin());
    let (dx, dy) = (angle.cos(), angle.sin());
    let p0 = (cx - half * dx, cy - half * dy);
    let p2 = (cx + half * dx, cy + half * dy);
    let p1 = (cx - bend * dy, cy + bend * dx);

    const STEPS: usize = 64;
    let curve: Vec<(f64, f64)> = (0..=STEPS)
        .map(|i| {
            let t = i as f64 / STEPS as f64;
            let (a, b, c) = ((1.0 - t) * (1.0 - t), 2.0 * (1.0 - t) * t, t * t);
            (a * p0.0 + b * p1.0 + c * p2.0, a * p0.1 + b * p1.1 + c * p2.1)
        })
        .collect();
    let reach = width / 2.0;
    let xs = curve.iter().map(|p| p.0);
    let ys = curve.iter().map(|p| p.1);
    let x_lo = (xs.clone().fold(f64::INFINITY, f64::min) - reach).floor().max(0.0) as usize;
    let x_hi = ((xs.fold(f64::NEG_INFINITY, f64::max) + reach).ceil() as usize).min(config.width - 1);
    let y_lo = (ys.clone().fold(f64::INFINITY, f64::min) - reach).floor().max(0.0) as usize;
    let y_hi = ((ys.fold(f64::NEG_INFINITY, f64::max) + reach).ceil() as usize).min(config.height - 1);

    let mut crack = ForegroundMask::filled(config.height, config.width, false);
    for row in y_lo..=y_hi {
        for col in x_lo..=x_hi {
            if !mask.get(row, col) {
                continue;
            }
            let p = (col as f64, row as f64);
            let d = curve
                .windows(2)
                .map(|s| segment_distance(p, s[0], s[1]))
                .fold(f64::INFINITY, f64::min);
            if d <= reach {
                crack.bits[row * config.width + col] = true;
            }
        }
    }
    crack
}

/// One capture; fully determined by `(config, label, seed)`.
pub fn gen_sample(config: &SynthConfig, label: Label, seed: u64) -> Result<SynthSample> {
    config.validate()?;
    let (w, h) = (config.width, config.height);
    let mut geo = Xoshiro256PlusPlus::seed_from_u64(stream_seed(seed, STREAM_GEOMETRY));
    let fruit = draw_fruit(config, &mut geo);

    let mut bits = vec![false; w * h];
    let mut shading = vec![0.0f64; w * h];
    for row in 0..h {
        for col in 0..w {
            let d2 = (col as f64 - fruit.cx).powi(2) + (row as f64 - fruit.cy).powi(2);
            let r2 = fruit.radius * fruit.radius;
            if d2 <= r2 {
                bits[row * w + col] = true;
                shading[row * w + col] = fruit.brightness * (1.0 - config.shade * d2 / r2);
            }
        }
    }
    let mask = ForegroundMask::new(h, w, bits)?;
    let crack = (label == Label::Anomalous).then(|| {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(stream_seed(seed, STREAM_CRACK));
        draw_crack(config, &fruit, &mask, &mut rng)
    });

    let wavelengths = config.wavelengths();
    let mut noise_rng = Xoshiro256PlusPlus::seed_from_u64(stream_seed(seed, STREAM_NOISE));
    let noise = Normal::new(0.0, config.noise_sigma).expect("validated sigma");
    let mut data = Vec::with_capacity(w * h * config.bands);
    for &nm in &wavelengths {
        let p = config.profile(nm);
        let lift = config.delta(nm);
        for (i, &shade) in shading.iter().enumerate() {
            let base = if mask.bits[i] { shade * p } else { config.background };
            let cracked = crack.as_ref().is_some_and(|c| c.bits[i]);
            let v = base + if cracked { lift } else { 0.0 } + noise.sample(&mut noise_rng);
            data.push(v.clamp(0.0, 1.0) as f32);
        }
    }
    let mut header = EnviHeader::new(w, h, wavelengths)?;
    header.provenance = Provenance::Calibrated;
    let cube = HsiCube::new(header, data, Provenance::Calibrated)?;

    let x0 = (fruit.cx - fruit.radius).floor().max(0.0) as usize;
    let y0 = (fruit.cy - fruit.radius).floor().max(0.0) as usize;
    let x1 = ((fruit.cx + fruit.radius).ceil() as usize).min(w - 1);
    let y1 = ((fruit.cy + fruit.radius).ceil() as usize).min(h - 1);
    let bbox = BoundingBox::new(x0, y0, y1 - y0 + 1, x1 - x0 + 1);
    Ok(SynthSample {
        cube,
        mask,
        bbox,
        label,
        crack,
    })
}

/// Identity of one generated sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSpec {
    pub id: String,
    pub label: Label,
    pub seed: u64,
}

/// Ids and per-sample seeds of a dataset: normals `n0000..`, then
/// anomalous `a0000..`, seeded by position.
pub fn dataset_specs(seed: u64, n_normal: usize, n_anomalous: usize) -> Vec<SampleSpec> {
    let normals = (0..n_normal).map(|i| (format!("n{i:04}"), Label::Normal));
    let anomalous = (0..n_anomalous).map(|i| (format!("a{i:04}"), Label::Anomalous));
    normals
        .chain(anomalous)
        .enumerate()
        .map(|(k, (id, label))| SampleSpec {
            id,
            label,
            seed: stream_seed(seed, k as u64),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub label: Label,
    pub seed: u64,
    pub header: String,
    pub raw: String,
    pub mask: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crack: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthManifest {
    pub seed: u64,
    pub config: SynthConfig,
    pub samples: Vec<ManifestEntry>,
}

impl SynthManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|e| SynthError::InvalidConfig(format!("{}: {e}", path.display())))
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SynthError + '_ {
    move |source| SynthError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_file(path: PathBuf, bytes: &[u8]) -> Result<()> {
    fs::write(&path, bytes).map_err(io_err(&path))
}

/// Writes every sample as `{id}.hdr`/`{id}.raw` (BSQ f32), `{id}_mask.pgm`,
/// `{id}_crack.pgm` for split fruit, plus `annotations.json` and
/// `manifest.json`. Samples are generated in parallel; output bytes do not
/// depend on scheduling.
pub fn gen_dataset(config: &SynthConfig, n_normal: usize, n_anomalous: usize, out_dir: &Path) -> Result<SynthManifest> {
    config.validate()?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let specs = dataset_specs(config.seed, n_normal, n_anomalous);
    let written: Vec<(ManifestEntry, Annotation)> = specs
        .par_iter()
        .map(|spec| {
            let sample = gen_sample(config, spec.label, spec.seed)?;
            let header = format!("{}.hdr", spec.id);
            write_envi(&out_dir.join(&header), &sample.cube, Interleave::Bsq)?;
            let mask = format!("{}_mask.pgm", spec.id);
            sample.mask.write(&out_dir.join(&mask))?;
            let crack = match &sample.crack {
                Some(c) => {
                    let name = format!("{}_crack.pgm", spec.id);
                    c.write(&out_dir.join(&name))?;
                    Some(name)
                }
                None => None,
            };
            let b = sample.bbox;
            Ok((
                ManifestEntry {
                    id: spec.id.clone(),
                    label: spec.label,
                    seed: spec.seed,
                    header,
                    raw: format!("{}.raw", spec.id),
                    mask: mask.clone(),
                    crack,
                },
                Annotation {
                    id: spec.id.clone(),
                    bbox: [b.x0, b.y0, b.h, b.w],
                    mask_path: mask,
                },
            ))
        })
        .collect::<Result<_>>()?;
    let (samples, annotations): (Vec<_>, Vec<_>) = written.into_iter().unzip();
    write_file(out_dir.join("annotations.json"), pretty(&annotations).as_bytes())?;
    let manifest = SynthManifest {
        seed: config.seed,
        config: config.clone(),
        samples,
    };
    write_file(out_dir.join("manifest.json"), pretty(&manifest).as_bytes())?;
    Ok(manifest)
}

fn pretty<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable") + "\n"
}
