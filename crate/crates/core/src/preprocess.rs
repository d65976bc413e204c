//! Cube preprocessing: white/dark calibration, RGB compositing, box scaling,
//! background masking, crop-and-resize, band slicing and dihedral
//! augmentation, ending in the fixed-shape [`RoiTensor`] the VAE consumes.
//!
//! Boxes use raster convention: `x0` is the column and `y0` the row of the
//! top-left corner. A box given with a bottom-left origin converts as
//! `y0_top = image_height - y0_bottom - h`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hsi_io::{nearest_index, EnviHeader, HsiCube, HsiError, Provenance};
use crate::pgm::{self, GrayImage, PgmError};

/// Spectral channel count of a ROI.
pub const ROI_BANDS: usize = 16;
/// Spatial side of a ROI.
pub const ROI_SIZE: usize = 210;
/// Band window (nm) that best separates split from intact skin.
pub const SPLIT_BAND_RANGE: (f64, f64) = (530.0, 550.0);
/// Composite wavelengths (nm) in R, G, B order.
pub const RGB_WAVELENGTHS: [f64; 3] = [650.45, 540.62, 460.27];

/// |white - dark| below this is treated as a dead reference element.
const DEGENERATE_REFERENCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("cube spans {min}..{max} nm, which does not cover {lo}..{hi} nm")]
    WavelengthOutOfRange { min: f64, max: f64, lo: f64, hi: f64 },
    #[error("bounding box {0:?} is empty")]
    EmptyBox(BoundingBox),
    #[error("bounding box {bbox:?} exceeds {width}x{height} image")]
    BoxOutOfBounds {
        bbox: BoundingBox,
        width: usize,
        height: usize,
    },
    #[error("cube has {available} bands, {required} required")]
    InsufficientBands { available: usize, required: usize },
    #[error("ROI invariant violated: {0}")]
    InvalidRoi(String),
    #[error(transparent)]
    Hsi(#[from] HsiError),
    #[error(transparent)]
    Pgm(#[from] PgmError),
    #[error("annotation file {path}: {message}")]
    Annotation { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, PreprocessError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    /// Column of the top-left corner.
    pub x0: usize,
    /// Row of the top-left corner.
    pub y0: usize,
    pub h: usize,
    pub w: usize,
}

impl BoundingBox {
    pub fn new(x0: usize, y0: usize, h: usize, w: usize) -> Self {
        BoundingBox { x0, y0, h, w }
    }

    pub fn fits(&self, width: usize, height: usize) -> bool {
        self.x0 + self.w <= width && self.y0 + self.h <= height
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleFactors {
    /// W_hsi / W_rgb.
    pub alpha1: f64,
    /// H_hsi / H_rgb.
    pub alpha2: f64,
}

impl ScaleFactors {
    pub fn between(rgb_dims: (usize, usize), hsi_dims: (usize, usize)) -> Self {
        ScaleFactors {
            alpha1: hsi_dims.1 as f64 / rgb_dims.1 as f64,
            alpha2: hsi_dims.0 as f64 / rgb_dims.0 as f64,
        }
    }
}

/// Binary fruit/background mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForegroundMask {
    pub height: usize,
    pub width: usize,
    pub bits: Vec<bool>,
}

impl ForegroundMask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(PreprocessError::DimensionMismatch(format!(
                "mask {}x{} holds {} bits",
                width,
                height,
                bits.len()
            )));
        }
        Ok(ForegroundMask { height, width, bits })
    }

    pub fn filled(height: usize, width: usize, value: bool) -> Self {
        ForegroundMask {
            height,
            width,
            bits: vec![value; height * width],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn from_gray(image: &GrayImage) -> Self {
        ForegroundMask {
            height: image.height,
            width: image.width,
            bits: image.pixels.iter().map(|&p| p != 0).collect(),
        }
    }

    pub fn to_gray(&self) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            pixels: self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect(),
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(Self::from_gray(&pgm::read_pgm(path)?))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        Ok(pgm::write_pgm(path, &self.to_gray())?)
    }
}

/// Calibrated cube plus the number of elements whose references coincided.
#[derive(Debug, Clone)]
pub struct Calibration {
    pub cube: HsiCube,
    pub degenerate_elements: usize,
}

/// Flat-field correction `(raw - dark) / (white - dark)`, clamped to [0, 1].
/// Elements whose references coincide are set to 0 and counted.
pub fn calibrate(raw: &HsiCube, dark: &HsiCube, white: &HsiCube) -> Result<Calibration> {
    if !raw.same_geometry(dark) || !raw.same_geometry(white) {
        return Err(PreprocessError::DimensionMismatch(
            "raw, dark and white cubes must share dimensions and wavelengths".into(),
        ));
    }
    let mut degenerate = 0;
    let data: Vec<f32> = raw
        .data()
        .iter()
        .zip(dark.data())
        .zip(white.data())
        .map(|((&i, &d), &w)| {
            let denom = w as f64 - d as f64;
            if denom.abs() < DEGENERATE_REFERENCE {
                degenerate += 1;
                0.0
            } else {
                ((i as f64 - d as f64) / denom).clamp(0.0, 1.0) as f32
            }
        })
        .collect();
    let cube = HsiCube::new(raw.header().clone(), data, Provenance::Calibrated)?;
    Ok(Calibration {
        cube,
        degenerate_elements: degenerate,
    })
}

/// 8-bit RGB composite, interleaved row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
    /// Source band indices in R, G, B order.
    pub bands: [usize; 3],
}

fn check_span(wavelengths: &[f64], lo: f64, hi: f64) -> Result<()> {
    let min = wavelengths[0];
    let max = *wavelengths.last().unwrap();
    if min > lo || max < hi {
        return Err(PreprocessError::WavelengthOutOfRange { min, max, lo, hi });
    }
    Ok(())
}

pub fn extract_rgb(cube: &HsiCube) -> Result<RgbImage> {
    let [red, _, blue] = RGB_WAVELENGTHS;
    check_span(cube.wavelengths(), blue, red)?;
    let bands = RGB_WAVELENGTHS.map(|t| nearest_index(cube.wavelengths(), t));
    let n = cube.width() * cube.height();
    let mut pixels = Vec::with_capacity(3 * n);
    let planes = bands.map(|i| cube.band(i));
    for p in 0..n {
        for plane in &planes {
            pixels.push((255.0 * plane[p].clamp(0.0, 1.0)).round() as u8);
        }
    }
    Ok(RgbImage {
        width: cube.width(),
        height: cube.height(),
        pixels,
        bands,
    })
}

/// Maps a box from RGB-composite coordinates into cube coordinates.
/// Dimensions are `(height, width)`.
pub fn scale_bbox(b: BoundingBox, rgb_dims: (usize, usize), hsi_dims: (usize, usize)) -> BoundingBox {
    let s = ScaleFactors::between(rgb_dims, hsi_dims);
    let (height, width) = hsi_dims;
    let scaled = |v: usize, a: f64| (v as f64 * a).round() as usize;
    let x0 = scaled(b.x0, s.alpha1).min(width - 1);
    let y0 = scaled(b.y0, s.alpha2).min(height - 1);
    let w = scaled(b.w, s.alpha1).clamp(1, width - x0);
    let h = scaled(b.h, s.alpha2).clamp(1, height - y0);
    BoundingBox { x0, y0, h, w }
}

/// Zeroes every band at background pixels.
pub fn apply_mask(cube: &HsiCube, mask: &ForegroundMask) -> Result<HsiCube> {
    if mask.height != cube.height() || mask.width != cube.width() {
        return Err(PreprocessError::DimensionMismatch(format!(
            "mask {}x{} vs cube {}x{}",
            mask.width,
            mask.height,
            cube.width(),
            cube.height()
        )));
    }
    let n = mask.bits.len();
    let data = cube
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| if mask.bits[i % n] { v } else { 0.0 })
        .collect();
    Ok(HsiCube::new(cube.header().clone(), data, cube.provenance())?)
}

/// Corner-aligned source coordinate for output index `i`.
fn source_coord(i: usize, input: usize, output: usize) -> f64 {
    if output == 1 || input == 1 {
        0.0
    } else {
        (i * (input - 1)) as f64 / (output - 1) as f64
    }
}

/// Bilinear resample of one row-major plane, corner-aligned.
pub fn resize_bilinear(plane: &[f32], width: usize, height: usize, out_w: usize, out_h: usize) -> Vec<f32> {
    if width == out_w && height == out_h {
        return plane.to_vec();
    }
    let xs: Vec<(usize, usize, f32)> = (0..out_w)
        .map(|j| {
            let c = source_coord(j, width, out_w);
            let x0 = (c.floor() as usize).min(width - 1);
            let x1 = (x0 + 1).min(width - 1);
            (x0, x1, (c - x0 as f64) as f32)
        })
        .collect();
    let mut out = Vec::with_capacity(out_w * out_h);
    for i in 0..out_h {
        let r = source_coord(i, height, out_h);
        let y0 = (r.floor() as usize).min(height - 1);
        let y1 = (y0 + 1).min(height - 1);
        let ty = (r - y0 as f64) as f32;
        let row0 = &plane[y0 * width..(y0 + 1) * width];
        let row1 = &plane[y1 * width..(y1 + 1) * width];
        for &(x0, x1, tx) in &xs {
            let top = row0[x0] + (row0[x1] - row0[x0]) * tx;
            let bottom = row1[x0] + (row1[x1] - row1[x0]) * tx;
            out.push(top + (bottom - top) * ty);
        }
    }
    out
}

fn crop_plane(plane: &[f32], width: usize, b: &BoundingBox) -> Vec<f32> {
    let mut out = Vec::with_capacity(b.w * b.h);
    for row in b.y0..b.y0 + b.h {
        out.extend_from_slice(&plane[row * width + b.x0..row * width + b.x0 + b.w]);
    }
    out
}

fn check_box(b: &BoundingBox, width: usize, height: usize) -> Result<()> {
    if b.w == 0 || b.h == 0 {
        return Err(PreprocessError::EmptyBox(*b));
    }
    if !b.fits(width, height) {
        return Err(PreprocessError::BoxOutOfBounds {
            bbox: *b,
            width,
            height,
        });
    }
    Ok(())
}

/// Crops every band to `bbox` and resamples it to `out_size` x `out_size`.
pub fn crop_resize(cube: &HsiCube, bbox: BoundingBox, out_size: usize) -> Result<HsiCube> {
    check_box(&bbox, cube.width(), cube.height())?;
    let calibrated = cube.provenance() == Provenance::Calibrated;
    let mut data = Vec::with_capacity(cube.bands() * out_size * out_size);
    for b in 0..cube.bands() {
        let cropped = crop_plane(cube.band(b), cube.width(), &bbox);
        let resized = resize_bilinear(&cropped, bbox.w, bbox.h, out_size, out_size);
        if calibrated {
            data.extend(resized.into_iter().map(|v| v.clamp(0.0, 1.0)));
        } else {
            data.extend(resized);
        }
    }
    let header = EnviHeader::new(out_size, out_size, cube.wavelengths().to_vec())?;
    Ok(HsiCube::new(header, data, cube.provenance())?)
}

/// Crops a mask to `bbox` and resamples it by nearest neighbour.
pub fn crop_resize_mask(mask: &ForegroundMask, bbox: BoundingBox, out_size: usize) -> Result<ForegroundMask> {
    check_box(&bbox, mask.width, mask.height)?;
    let nearest = |i: usize, input: usize| (source_coord(i, input, out_size).round() as usize).min(input - 1);
    let mut bits = Vec::with_capacity(out_size * out_size);
    for i in 0..out_size {
        let row = bbox.y0 + nearest(i, bbox.h);
        for j in 0..out_size {
            let col = bbox.x0 + nearest(j, bbox.w);
            bits.push(mask.get(row, col));
        }
    }
    ForegroundMask::new(out_size, out_size, bits)
}

/// A contiguous run of bands picked for the model input.
#[derive(Debug, Clone, PartialEq)]
pub struct BandSelection {
    pub start: usize,
    pub count: usize,
    pub wavelengths: Vec<f64>,
}

impl BandSelection {
    pub fn indices(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.count
    }
}

/// Chooses exactly `count` contiguous bands for the window `[lo, hi]` nm.
///
/// When the window holds a different number of bands, the run is re-centred
/// on the band nearest the window midpoint (even counts take the extra band
/// below the centre).
pub fn slice_bands(wavelengths: &[f64], lo: f64, hi: f64, count: usize) -> Result<BandSelection> {
    if wavelengths.len() < count || count == 0 {
        return Err(PreprocessError::InsufficientBands {
            available: wavelengths.len(),
            required: count,
        });
    }
    check_span(wavelengths, lo, hi)?;
    let inside: Vec<usize> = (0..wavelengths.len())
        .filter(|&i| wavelengths[i] >= lo && wavelengths[i] <= hi)
        .collect();
    let start = if inside.len() == count {
        inside[0]
    } else {
        let centre = nearest_index(wavelengths, 0.5 * (lo + hi));
        centre.saturating_sub(count / 2).min(wavelengths.len() - count)
    };
    Ok(BandSelection {
        start,
        count,
        wavelengths: wavelengths[start..start + count].to_vec(),
    })
}

/// Materializes a band selection as its own cube.
pub fn select_bands(cube: &HsiCube, selection: &BandSelection) -> Result<HsiCube> {
    let n = cube.width() * cube.height();
    let data = cube.data()[selection.start * n..(selection.start + selection.count) * n].to_vec();
    let header = EnviHeader::new(cube.width(), cube.height(), selection.wavelengths.clone())?;
    Ok(HsiCube::new(header, data, cube.provenance())?)
}

/// Model input: a masked, band-sliced, square reflectance crop, stored
/// `[band][row][col]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiTensor {
    channels: usize,
    size: usize,
    data: Vec<f32>,
    wavelengths: Vec<f64>,
    mask: ForegroundMask,
}

impl RoiTensor {
    /// Checks shape, range and that background pixels are zero in every band.
    pub fn new(data: Vec<f32>, size: usize, wavelengths: Vec<f64>, mask: ForegroundMask) -> Result<Self> {
        let channels = wavelengths.len();
        if channels == 0 || size == 0 || data.len() != channels * size * size {
            return Err(PreprocessError::InvalidRoi(format!(
                "{} values for {channels} bands of {size}x{size}",
                data.len()
            )));
        }
        if mask.width != size || mask.height != size {
            return Err(PreprocessError::InvalidRoi("mask shape differs from ROI".into()));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(PreprocessError::InvalidRoi(format!("value {v} outside [0, 1]")));
        }
        let n = size * size;
        for (i, &v) in data.iter().enumerate() {
            if v != 0.0 && !mask.bits[i % n] {
                return Err(PreprocessError::InvalidRoi("nonzero background pixel".into()));
            }
        }
        Ok(RoiTensor {
            channels,
            size,
            data,
            wavelengths,
            mask,
        })
    }

    /// Builds a ROI from a cube already masked to its foreground. The mask is
    /// recovered as pixels that are nonzero in any band.
    pub fn from_masked_cube(cube: &HsiCube) -> Result<Self> {
        if cube.width() != cube.height() {
            return Err(PreprocessError::InvalidRoi("ROI cubes must be square".into()));
        }
        let n = cube.width() * cube.height();
        let mut bits = vec![false; n];
        for b in 0..cube.bands() {
            for (bit, &v) in bits.iter_mut().zip(cube.band(b)) {
                *bit |= v != 0.0;
            }
        }
        let mask = ForegroundMask::new(cube.height(), cube.width(), bits)?;
        Self::new(cube.data().to_vec(), cube.width(), cube.wavelengths().to_vec(), mask)
    }

    /// Builds a ROI from a cube and an explicit mask, zeroing the background.
    pub fn from_cube(cube: &HsiCube, mask: ForegroundMask) -> Result<Self> {
        let masked = apply_mask(cube, &mask)?;
        Self::new(masked.into_data(), cube.width(), cube.wavelengths().to_vec(), mask)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn wavelengths(&self) -> &[f64] {
        &self.wavelengths
    }

    pub fn mask(&self) -> &ForegroundMask {
        &self.mask
    }

    pub fn band(&self, b: usize) -> &[f32] {
        let n = self.size * self.size;
        &self.data[b * n..(b + 1) * n]
    }

    pub fn to_cube(&self) -> HsiCube {
        let header =
            EnviHeader::new(self.size, self.size, self.wavelengths.clone()).expect("ROI wavelengths are validated");
        HsiCube::new(header, self.data.clone(), Provenance::Calibrated).expect("ROI values are in [0, 1]")
    }

    fn permute(&self, map: impl Fn(usize, usize) -> (usize, usize)) -> RoiTensor {
        let s = self.size;
        let n = s * s;
        let mut data = vec![0f32; self.data.len()];
        let mut bits = vec![false; n];
        for row in 0..s {
            for col in 0..s {
                let (sr, sc) = map(row, col);
                bits[row * s + col] = self.mask.bits[sr * s + sc];
                for b in 0..self.channels {
                    data[b * n + row * s + col] = self.data[b * n + sr * s + sc];
                }
            }
        }
        RoiTensor {
            channels: self.channels,
            size: s,
            data,
            wavelengths: self.wavelengths.clone(),
            mask: ForegroundMask {
                height: s,
                width: s,
                bits,
            },
        }
    }

    /// Quarter turn counter-clockwise.
    pub fn rotate90(&self) -> RoiTensor {
        let last = self.size - 1;
        self.permute(|row, col| (col, last - row))
    }

    /// Mirror across the vertical axis.
    pub fn flip_horizontal(&self) -> RoiTensor {
        let last = self.size - 1;
        self.permute(|row, col| (row, last - col))
    }
}

/// The eight dihedral variants: rotations by 0, 90, 180 and 270 degrees,
/// each followed by its horizontal mirror.
pub fn augment(roi: &RoiTensor) -> Vec<RoiTensor> {
    let mut out = Vec::with_capacity(8);
    let mut current = roi.clone();
    for _ in 0..4 {
        let flipped = current.flip_horizontal();
        let next = current.rotate90();
        out.push(current);
        out.push(flipped);
        current = next;
    }
    out
}

/// Settings for turning an annotated capture into a ROI.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoiSpec {
    pub lo_nm: f64,
    pub hi_nm: f64,
    pub bands: usize,
    pub size: usize,
}

impl Default for RoiSpec {
    fn default() -> Self {
        RoiSpec {
            lo_nm: SPLIT_BAND_RANGE.0,
            hi_nm: SPLIT_BAND_RANGE.1,
            bands: ROI_BANDS,
            size: ROI_SIZE,
        }
    }
}

/// Full chain for one fruit: band slice, background mask, crop, resize and
/// re-mask at the output resolution.
///
/// `bbox` is in cube coordinates (already passed through [`scale_bbox`]).
pub fn extract_roi(cube: &HsiCube, mask: &ForegroundMask, bbox: BoundingBox, spec: &RoiSpec) -> Result<RoiTensor> {
    let selection = slice_bands(cube.wavelengths(), spec.lo_nm, spec.hi_nm, spec.bands)?;
    let sliced = select_bands(cube, &selection)?;
    let masked = apply_mask(&sliced, mask)?;
    let resized = crop_resize(&masked, bbox, spec.size)?;
    let roi_mask = crop_resize_mask(mask, bbox, spec.size)?;
    RoiTensor::from_cube(&resized, roi_mask)
}

/// One entry of a capture's annotation sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Annotation {
    pub id: String,
    /// `[x0, y0, h, w]` in RGB-composite coordinates.
    pub bbox: [usize; 4],
    pub mask_path: String,
}

impl Annotation {
    pub fn bounding_box(&self) -> BoundingBox {
        let [x0, y0, h, w] = self.bbox;
        BoundingBox { x0, y0, h, w }
    }
}

pub fn read_annotations(path: &Path) -> Result<Vec<Annotation>> {
    let err = |message: String| PreprocessError::Annotation {
        path: path.display().to_string(),
        message,
    };
    let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| err(e.to_string()))
}
