//! Hyperspectral split detection for tomatoes.
//!
//! The crate covers the whole chain: ENVI cube I/O ([`hsi_io`]), calibration
//! and ROI extraction ([`preprocess`]), band-window analysis
//! ([`band_analysis`]), the convolutional VAE ([`vae`]), its training loop and
//! checkpoints ([`trainer`]), reconstruction-loss scoring and thresholding
//! ([`detector`]), and a synthetic data generator ([`synth`]).

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod band_analysis;
pub mod detector;
pub mod hsi_io;
pub mod pgm;
pub mod pipeline;
pub mod preprocess;
pub mod synth;
pub mod trainer;
pub mod vae;

use serde::{Deserialize, Serialize};

/// Ground-truth class of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Normal,
    Anomalous,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Normal => "normal",
            Label::Anomalous => "anomalous",
        }
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "normal" => Ok(Label::Normal),
            "anomalous" => Ok(Label::Anomalous),
            other => Err(format!("unknown label '{other}'")),
        }
    }
}

/// Independent seed for stream `stream` of a run seeded with `base`
/// (splitmix64 finalizer over both words).
pub fn stream_seed(base: u64, stream: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(mix(base) ^ stream)
}
