//! Patch reflectance analysis used to pick the split-sensitive band window:
//! mean spectra of intact and split patches, their absolute difference, and
//! the fixed-width window that captures most of it.

use serde::Serialize;
use thiserror::Error;

use crate::hsi_io::HsiCube;

pub const DEFAULT_PATCH_SIZE: usize = 5;

#[derive(Debug, Error, PartialEq)]
pub enum BandAnalysisError {
    #[error("patch at ({x}, {y}) of size {size} leaves the {width}x{height} image")]
    PatchOutOfBounds {
        x: usize,
        y: usize,
        size: usize,
        width: usize,
        height: usize,
    },
    #[error("spectra are sampled on different wavelength grids")]
    GridMismatch,
    #[error("window width {width} nm exceeds the {span} nm spectral span")]
    WidthTooLarge { width: f64, span: f64 },
    #[error("spectrum is empty")]
    Empty,
}

/// Square patch with top-left corner at column `x`, row `y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchSpec {
    pub x: usize,
    pub y: usize,
    pub size: usize,
}

impl PatchSpec {
    pub fn new(x: usize, y: usize, size: usize) -> Self {
        PatchSpec { x, y, size }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Spectrum {
    pub wavelengths: Vec<f64>,
    pub values: Vec<f64>,
}

pub fn patch_mean_spectrum(cube: &HsiCube, patch: PatchSpec) -> Result<Spectrum, BandAnalysisError> {
    let (width, height) = (cube.width(), cube.height());
    if patch.size == 0 || patch.x + patch.size > width || patch.y + patch.size > height {
        return Err(BandAnalysisError::PatchOutOfBounds {
            x: patch.x,
            y: patch.y,
            size: patch.size,
            width,
            height,
        });
    }
    let count = (patch.size * patch.size) as f64;
    let values = (0..cube.bands())
        .map(|b| {
            let plane = cube.band(b);
            let mut sum = 0.0f64;
            for row in patch.y..patch.y + patch.size {
                for &v in &plane[row * width + patch.x..row * width + patch.x + patch.size] {
                    sum += v as f64;
                }
            }
            sum / count
        })
        .collect();
    Ok(Spectrum {
        wavelengths: cube.wavelengths().to_vec(),
        values,
    })
}

/// Per-wavelength `|a - b|`.
pub fn reflectance_difference(a: &Spectrum, b: &Spectrum) -> Result<Spectrum, BandAnalysisError> {
    if a.wavelengths != b.wavelengths || a.values.len() != b.values.len() {
        return Err(BandAnalysisError::GridMismatch);
    }
    Ok(Spectrum {
        wavelengths: a.wavelengths.clone(),
        values: a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()).collect(),
    })
}

/// Trapezoidal integral of `values` over `wavelengths[lo..=hi]`.
pub fn trapezoid(wavelengths: &[f64], values: &[f64], lo: usize, hi: usize) -> f64 {
    (lo..hi)
        .map(|k| 0.5 * (values[k] + values[k + 1]) * (wavelengths[k + 1] - wavelengths[k]))
        .sum()
}

/// Grid-aligned window `[λ_i, λ_j]` with the largest integrated difference,
/// where `j` is the first band at least `width` nm past `i`. Ties keep the
/// lower window.
pub fn recommend_range(diff: &Spectrum, width: f64) -> Result<(f64, f64), BandAnalysisError> {
    let wl = &diff.wavelengths;
    if wl.is_empty() {
        return Err(BandAnalysisError::Empty);
    }
    let span = wl[wl.len() - 1] - wl[0];
    let tol = 1e-9 * span.abs().max(1.0);
    if !(width > 0.0) || width > span + tol {
        return Err(BandAnalysisError::WidthTooLarge { width, span });
    }

    let mut best: Option<(f64, usize, usize)> = None;
    let mut j = 0;
    for i in 0..wl.len() {
        j = j.max(i + 1);
        while j < wl.len() && wl[j] - wl[i] < width - tol {
            j += 1;
        }
        if j >= wl.len() {
            break;
        }
        let score = trapezoid(wl, &diff.values, i, j);
        let better = match best {
            None => true,
            Some((b, _, _)) => score > b + 1e-12 * b.abs().max(1.0),
        };
        if better {
            best = Some((score, i, j));
        }
    }
    let (_, i, j) = best.expect("width within span admits at least one window");
    Ok((wl[i], wl[j]))
}

/// CSV with one row per band: wavelength, mean_normal, mean_anomalous, abs_diff.
pub fn analysis_csv(normal: &Spectrum, anomalous: &Spectrum, diff: &Spectrum) -> String {
    let mut out = String::from("wavelength,mean_normal,mean_anomalous,abs_diff\n");
    for k in 0..diff.wavelengths.len() {
        out.push_str(&format!(
            "{},{},{},{}\n",
            diff.wavelengths[k], normal.values[k], anomalous.values[k], diff.values[k]
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hsi_io::{EnviHeader, Provenance};

    fn spectrum(wl: Vec<f64>, f: impl Fn(f64) -> f64) -> Spectrum {
        let values = wl.iter().map(|&w| f(w)).collect();
        Spectrum {
            wavelengths: wl,
            values,
        }
    }

    fn nm_grid(lo: u32, hi: u32) -> Vec<f64> {
        (lo..=hi).map(f64::from).collect()
    }

    #[test]
    fn patch_means() {
        let h = EnviHeader::new(4, 4, vec![500.0, 600.0]).unwrap();
        let c = HsiCube::new(h, vec![0.3; 32], Provenance::Calibrated).unwrap();
        let s = patch_mean_spectrum(&c, PatchSpec::new(1, 1, 3)).unwrap();
        assert!(s.values.iter().all(|&v| (v - 0.3).abs() < 1e-7));

        let h = EnviHeader::new(2, 2, vec![500.0]).unwrap();
        let c = HsiCube::new(h, vec![0.1, 0.2, 0.3, 0.4], Provenance::Calibrated).unwrap();
        let s = patch_mean_spectrum(&c, PatchSpec::new(0, 0, 2)).unwrap();
        assert!((s.values[0] - 0.25).abs() < 1e-7);

        assert!(matches!(
            patch_mean_spectrum(&c, PatchSpec::new(1, 0, 2)),
            Err(BandAnalysisError::PatchOutOfBounds { .. })
        ));
    }

    #[test]
    fn differences() {
        let a = spectrum(vec![500.0, 510.0], |_| 0.6);
        let b = spectrum(vec![500.0, 510.0], |_| 0.2);
        let d = reflectance_difference(&a, &a).unwrap();
        assert!(d.values.iter().all(|&v| v == 0.0));
        let d = reflectance_difference(&a, &b).unwrap();
        assert!(d.values.iter().all(|&v| (v - 0.4).abs() < 1e-12));
        let c = spectrum(vec![500.0, 511.0], |_| 0.2);
        assert_eq!(reflectance_difference(&a, &c), Err(BandAnalysisError::GridMismatch));
    }

    #[test]
    fn window_recommendations() {
        let indicator = spectrum(
            nm_grid(400, 700),
            |w| if (530.0..=550.0).contains(&w) { 1.0 } else { 0.0 },
        );
        assert_eq!(recommend_range(&indicator, 20.0).unwrap(), (530.0, 550.0));

        let flat = spectrum(nm_grid(400, 700), |_| 0.3);
        assert_eq!(recommend_range(&flat, 20.0).unwrap(), (400.0, 420.0));

        let tri = spectrum(nm_grid(500, 580), |w| 40.0 - (w - 540.0).abs());
        assert_eq!(recommend_range(&tri, 20.0).unwrap(), (530.0, 550.0));

        assert!(matches!(
            recommend_range(&tri, 81.0),
            Err(BandAnalysisError::WidthTooLarge { .. })
        ));
        assert_eq!(recommend_range(&tri, 80.0).unwrap(), (500.0, 580.0));
    }

    #[test]
    fn csv_layout() {
        let a = spectrum(vec![500.0], |_| 0.5);
        let b = spectrum(vec![500.0], |_| 0.25);
        let d = reflectance_difference(&a, &b).unwrap();
        assert_eq!(
            analysis_csv(&a, &b, &d),
            "wavelength,mean_normal,mean_anomalous,abs_diff\n500,0.5,0.25,0.25\n"
        );
    }
}
