//! ENVI hyperspectral cube container: header parsing, binary decoding and
//! encoding, and the immutable in-memory cube model.
//!
//! Only the subset emitted by line-scan camera tooling is supported:
//! `bsq`/`bil` interleave (plus `bip` for reading), data types 4 (`f32`)
//! and 12 (`u16`), little-endian payloads.
//!
//! In memory every cube is band-sequential `f32`, indexed `[band][row][col]`,
//! regardless of the interleave it was stored with.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HsiError {
    #[error("missing header key `{0}`")]
    MissingKey(String),
    #[error("malformed value for header key `{key}`: {value}")]
    BadValue { key: String, value: String },
    #[error("unsupported interleave `{0}`")]
    UnsupportedInterleave(String),
    #[error("unsupported data type {0}")]
    UnsupportedDataType(String),
    #[error("unsupported byte order {0} (only little-endian 0 is supported)")]
    UnsupportedByteOrder(String),
    #[error("wavelengths are not strictly increasing")]
    NonMonotonicWavelengths,
    #[error("header declares {bands} bands but lists {wavelengths} wavelengths")]
    LengthMismatch { bands: usize, wavelengths: usize },
    #[error("dimensions must be at least 1 (samples={samples}, lines={lines}, bands={bands})")]
    EmptyDimension { samples: usize, lines: usize, bands: usize },
    #[error("payload size mismatch: expected {expected} bytes, got {actual}")]
    SizeMismatch { expected: usize, actual: usize },
    #[error("calibrated cube holds value {value} outside [0, 1]")]
    OutOfRange { value: f32 },
    #[error("no binary payload found next to {0}")]
    MissingPayload(PathBuf),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, HsiError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interleave {
    Bsq,
    Bil,
    Bip,
}

impl Interleave {
    pub fn as_str(self) -> &'static str {
        match self {
            Interleave::Bsq => "bsq",
            Interleave::Bil => "bil",
            Interleave::Bip => "bip",
        }
    }
}

impl std::str::FromStr for Interleave {
    type Err = HsiError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bsq" => Ok(Interleave::Bsq),
            "bil" => Ok(Interleave::Bil),
            "bip" => Ok(Interleave::Bip),
            other => Err(HsiError::UnsupportedInterleave(other.to_string())),
        }
    }
}

impl fmt::Display for Interleave {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// ENVI `data type` codes understood by this crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataType {
    /// Code 4.
    F32,
    /// Code 12.
    U16,
}

impl DataType {
    pub fn code(self) -> u32 {
        match self {
            DataType::F32 => 4,
            DataType::U16 => 12,
        }
    }

    pub fn bytes_per_sample(self) -> usize {
        match self {
            DataType::F32 => 4,
            DataType::U16 => 2,
        }
    }
}

/// Whether cube values are raw digital numbers or calibrated reflectance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Provenance {
    #[default]
    Raw,
    Calibrated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnviHeader {
    /// Width in pixels.
    pub samples: usize,
    /// Height in pixels.
    pub lines: usize,
    pub bands: usize,
    pub interleave: Interleave,
    pub data_type: DataType,
    pub byte_order: u8,
    pub header_offset: usize,
    /// Band centers in nanometers.
    pub wavelengths: Vec<f64>,
    pub reflectance_scale: Option<f64>,
    pub provenance: Provenance,
}

impl EnviHeader {
    /// Builds a header for an in-memory `f32` cube, checking the invariants.
    pub fn new(samples: usize, lines: usize, wavelengths: Vec<f64>) -> Result<Self> {
        let header = EnviHeader {
            samples,
            lines,
            bands: wavelengths.len(),
            interleave: Interleave::Bsq,
            data_type: DataType::F32,
            byte_order: 0,
            header_offset: 0,
            wavelengths,
            reflectance_scale: None,
            provenance: Provenance::Raw,
        };
        header.validate()?;
        Ok(header)
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 || self.lines == 0 || self.bands == 0 {
            return Err(HsiError::EmptyDimension {
                samples: self.samples,
                lines: self.lines,
                bands: self.bands,
            });
        }
        if self.wavelengths.len() != self.bands {
            return Err(HsiError::LengthMismatch {
                bands: self.bands,
                wavelengths: self.wavelengths.len(),
            });
        }
        if self.wavelengths.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(HsiError::NonMonotonicWavelengths);
        }
        Ok(())
    }

    pub fn pixels(&self) -> usize {
        self.samples * self.lines
    }

    pub fn element_count(&self) -> usize {
        self.samples * self.lines * self.bands
    }
}

/// Evenly spaced band centers from `lo` to `hi` inclusive.
pub fn even_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        n => {
            let step = (hi - lo) / (n - 1) as f64;
            (0..n).map(|i| lo + i as f64 * step).collect()
        }
    }
}

/// Index of the band whose center is closest to `target` nm. Ties go to the
/// lower index.
pub fn nearest_band(header: &EnviHeader, target: f64) -> usize {
    nearest_index(&header.wavelengths, target)
}

pub(crate) fn nearest_index(wavelengths: &[f64], target: f64) -> usize {
    let mut best = 0;
    let mut best_dist = f64::INFINITY;
    for (i, &w) in wavelengths.iter().enumerate() {
        let d = (w - target).abs();
        if d < best_dist {
            best = i;
            best_dist = d;
        }
    }
    best
}

/// Hyperspectral cube held band-sequentially as `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct HsiCube {
    header: EnviHeader,
    data: Vec<f32>,
}

impl HsiCube {
    pub fn new(mut header: EnviHeader, data: Vec<f32>, provenance: Provenance) -> Result<Self> {
        header.validate()?;
        if data.len() != header.element_count() {
            return Err(HsiError::SizeMismatch {
                expected: header.element_count(),
                actual: data.len(),
            });
        }
        if provenance == Provenance::Calibrated {
            if let Some(&value) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(HsiError::OutOfRange { value });
            }
        }
        // The in-memory model is always f32 band-sequential.
        header.interleave = Interleave::Bsq;
        header.data_type = DataType::F32;
        header.header_offset = 0;
        header.reflectance_scale = None;
        header.provenance = provenance;
        Ok(HsiCube { header, data })
    }

    pub fn header(&self) -> &EnviHeader {
        &self.header
    }

    pub fn width(&self) -> usize {
        self.header.samples
    }

    pub fn height(&self) -> usize {
        self.header.lines
    }

    pub fn bands(&self) -> usize {
        self.header.bands
    }

    pub fn wavelengths(&self) -> &[f64] {
        &self.header.wavelengths
    }

    pub fn provenance(&self) -> Provenance {
        self.header.provenance
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn band(&self, b: usize) -> &[f32] {
        let n = self.header.pixels();
        &self.data[b * n..(b + 1) * n]
    }

    pub fn get(&self, band: usize, row: usize, col: usize) -> f32 {
        self.data[(band * self.header.lines + row) * self.header.samples + col]
    }

    /// Spectrum of one pixel.
    pub fn pixel_spectrum(&self, row: usize, col: usize) -> Vec<f32> {
        (0..self.bands()).map(|b| self.get(b, row, col)).collect()
    }

    pub fn same_geometry(&self, other: &HsiCube) -> bool {
        self.width() == other.width() && self.height() == other.height() && self.wavelengths() == other.wavelengths()
    }
}

fn normalize_key(key: &str) -> String {
    key.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_ascii_lowercase()
}

fn split_entries(text: &str) -> HashMap<String, String> {
    let mut entries = HashMap::new();
    let mut lines = text.lines();
    while let Some(line) = lines.next() {
        let Some((key, value)) = line.split_once('=') else {
            continue;
        };
        let mut value = value.trim().to_string();
        if value.starts_with('{') {
            while !value.contains('}') {
                match lines.next() {
                    Some(next) => {
                        value.push(' ');
                        value.push_str(next.trim());
                    }
                    None => break,
                }
            }
        }
        entries.insert(normalize_key(key), value);
    }
    entries
}

fn unbrace(value: &str) -> &str {
    value.trim().trim_start_matches('{').trim_end_matches('}').trim()
}

fn parse_number<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| HsiError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
    })
}

/// Parses ENVI header text.
pub fn parse_envi_header(text: &str) -> Result<EnviHeader> {
    let entries = split_entries(text);
    let required =
        |key: &str| -> Result<&String> { entries.get(key).ok_or_else(|| HsiError::MissingKey(key.to_string())) };

    let samples: usize = parse_number("samples", required("samples")?)?;
    let lines: usize = parse_number("lines", required("lines")?)?;
    let bands: usize = parse_number("bands", required("bands")?)?;
    let interleave: Interleave = required("interleave")?.parse()?;
    let data_type = match required("data type")?.trim() {
        "4" => DataType::F32,
        "12" => DataType::U16,
        other => return Err(HsiError::UnsupportedDataType(other.to_string())),
    };
    let byte_order = match required("byte order")?.trim() {
        "0" => 0u8,
        other => return Err(HsiError::UnsupportedByteOrder(other.to_string())),
    };
    let wavelength_text = required("wavelength")?;

    let unit_scale = match entries.get("wavelength units").map(|u| u.to_ascii_lowercase()) {
        Some(u) if u.starts_with("micro") => 1000.0,
        _ => 1.0,
    };
    let wavelengths = unbrace(wavelength_text)
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_number::<f64>("wavelength", s).map(|w| w * unit_scale))
        .collect::<Result<Vec<_>>>()?;

    let header_offset = match entries.get("header offset") {
        Some(v) => parse_number("header offset", v)?,
        None => 0,
    };
    let reflectance_scale = match entries.get("reflectance scale factor") {
        Some(v) => {
            let s: f64 = parse_number("reflectance scale factor", v)?;
            if !(s > 0.0) {
                return Err(HsiError::BadValue {
                    key: "reflectance scale factor".into(),
                    value: v.clone(),
                });
            }
            Some(s)
        }
        None => None,
    };
    let provenance = match entries.get("provenance").map(|p| p.trim().to_ascii_lowercase()) {
        Some(p) if p == "calibrated" => Provenance::Calibrated,
        _ => Provenance::Raw,
    };

    let header = EnviHeader {
        samples,
        lines,
        bands,
        interleave,
        data_type,
        byte_order,
        header_offset,
        wavelengths,
        reflectance_scale,
        provenance,
    };
    header.validate()?;
    Ok(header)
}

/// File-order index of canonical element (band, row, col).
fn file_index(interleave: Interleave, h: &EnviHeader, band: usize, row: usize, col: usize) -> usize {
    let (s, l, b) = (h.samples, h.lines, h.bands);
    match interleave {
        Interleave::Bsq => (band * l + row) * s + col,
        Interleave::Bil => (row * b + band) * s + col,
        Interleave::Bip => (row * s + col) * b + band,
    }
}

/// Decodes a raw payload into a canonical cube.
pub fn read_cube(header: &EnviHeader, bytes: &[u8]) -> Result<HsiCube> {
    header.validate()?;
    let n = header.element_count();
    let bps = header.data_type.bytes_per_sample();
    let expected = header.header_offset + n * bps;
    if bytes.len() != expected {
        return Err(HsiError::SizeMismatch {
            expected,
            actual: bytes.len(),
        });
    }
    let payload = &bytes[header.header_offset..];
    let decode = |i: usize| -> f32 {
        let at = i * bps;
        match header.data_type {
            DataType::F32 => f32::from_le_bytes(payload[at..at + 4].try_into().unwrap()),
            DataType::U16 => {
                let raw = u16::from_le_bytes(payload[at..at + 2].try_into().unwrap()) as f64;
                match header.reflectance_scale {
                    Some(scale) => (raw / scale) as f32,
                    None => raw as f32,
                }
            }
        }
    };

    let mut data = vec![0f32; n];
    if header.interleave == Interleave::Bsq {
        for (i, v) in data.iter_mut().enumerate() {
            *v = decode(i);
        }
    } else {
        let mut i = 0;
        for band in 0..header.bands {
            for row in 0..header.lines {
                for col in 0..header.samples {
                    data[i] = decode(file_index(header.interleave, header, band, row, col));
                    i += 1;
                }
            }
        }
    }
    let provenance = header.provenance;
    if provenance == Provenance::Calibrated {
        if let Some(&value) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(HsiError::OutOfRange { value });
        }
    }
    HsiCube::new(header.clone(), data, provenance)
}

/// Encodes a cube as an `f32` ENVI header and payload.
pub fn write_cube(cube: &HsiCube, interleave: Interleave) -> Result<(String, Vec<u8>)> {
    if interleave == Interleave::Bip {
        return Err(HsiError::UnsupportedInterleave("bip (write)".into()));
    }
    let h = cube.header();
    let wavelengths = h
        .wavelengths
        .iter()
        .map(|w| format!("{w:?}"))
        .collect::<Vec<_>>()
        .join(", ");
    let mut text = String::from("ENVI\n");
    text.push_str(&format!("samples = {}\n", h.samples));
    text.push_str(&format!("lines = {}\n", h.lines));
    text.push_str(&format!("bands = {}\n", h.bands));
    text.push_str("header offset = 0\n");
    text.push_str("file type = ENVI Standard\n");
    text.push_str("data type = 4\n");
    text.push_str(&format!("interleave = {interleave}\n"));
    text.push_str("byte order = 0\n");
    if h.provenance == Provenance::Calibrated {
        text.push_str("provenance = calibrated\n");
    }
    text.push_str("wavelength units = Nanometers\n");
    text.push_str(&format!("wavelength = {{{wavelengths}}}\n"));

    let mut bytes = vec![0u8; h.element_count() * 4];
    let data = cube.data();
    let mut i = 0;
    for band in 0..h.bands {
        for row in 0..h.lines {
            for col in 0..h.samples {
                let at = file_index(interleave, h, band, row, col) * 4;
                bytes[at..at + 4].copy_from_slice(&data[i].to_le_bytes());
                i += 1;
            }
        }
    }
    Ok((text, bytes))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HsiError + '_ {
    move |source| HsiError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Locates the binary file that belongs to a `.hdr` file.
pub fn payload_path(header_path: &Path) -> Result<PathBuf> {
    for ext in ["raw", "img", "dat", "bsq", "bil"] {
        let candidate = header_path.with_extension(ext);
        if candidate.is_file() {
            return Ok(candidate);
        }
    }
    let bare = header_path.with_extension("");
    if bare.is_file() {
        return Ok(bare);
    }
    Err(HsiError::MissingPayload(header_path.to_path_buf()))
}

/// Reads a cube from a `.hdr` path and its sibling payload.
pub fn read_envi(header_path: &Path) -> Result<HsiCube> {
    let text = fs::read_to_string(header_path).map_err(io_err(header_path))?;
    let header = parse_envi_header(&text)?;
    let payload = payload_path(header_path)?;
    let bytes = fs::read(&payload).map_err(io_err(&payload))?;
    read_cube(&header, &bytes)
}

/// Writes `<stem>.hdr` and `<stem>.raw`.
pub fn write_envi(header_path: &Path, cube: &HsiCube, interleave: Interleave) -> Result<()> {
    let (text, bytes) = write_cube(cube, interleave)?;
    fs::write(header_path, text).map_err(io_err(header_path))?;
    let payload = header_path.with_extension("raw");
    fs::write(&payload, bytes).map_err(io_err(&payload))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header_text(wavelength: Option<&str>) -> String {
        let mut t =
            String::from("ENVI\nsamples = 2\nlines = 2\nbands = 2\ninterleave = bsq\ndata type = 4\nbyte order = 0\n");
        if let Some(w) = wavelength {
            t.push_str(&format!("wavelength = {w}\n"));
        }
        t
    }

    #[test]
    fn parses_minimal_header() {
        let h = parse_envi_header(&header_text(Some("{500.0, 510.0}"))).unwrap();
        assert_eq!((h.samples, h.lines, h.bands), (2, 2, 2));
        assert_eq!(h.interleave, Interleave::Bsq);
        assert_eq!(h.data_type, DataType::F32);
        assert_eq!(h.wavelengths, vec![500.0, 510.0]);
    }

    #[test]
    fn missing_wavelength_block() {
        match parse_envi_header(&header_text(None)) {
            Err(HsiError::MissingKey(k)) => assert_eq!(k, "wavelength"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn descending_wavelengths_rejected() {
        assert!(matches!(
            parse_envi_header(&header_text(Some("{510.0, 500.0}"))),
            Err(HsiError::NonMonotonicWavelengths)
        ));
    }

    #[test]
    fn wavelength_count_must_match_bands() {
        assert!(matches!(
            parse_envi_header(&header_text(Some("{500.0}"))),
            Err(HsiError::LengthMismatch {
                bands: 2,
                wavelengths: 1
            })
        ));
    }

    #[test]
    fn multiline_blocks_and_case_insensitive_keys() {
        let text = "ENVI\nSamples = 1\nLINES = 1\nBands= 3\nInterleave = BIL\nData Type = 12\n\
                    Byte Order = 0\nreflectance scale factor = 10000\nWavelength = {\n 400.5,\n 401.5,\n 402.5 }\n";
        let h = parse_envi_header(text).unwrap();
        assert_eq!(h.interleave, Interleave::Bil);
        assert_eq!(h.data_type, DataType::U16);
        assert_eq!(h.reflectance_scale, Some(10000.0));
        assert_eq!(h.wavelengths, vec![400.5, 401.5, 402.5]);
    }

    #[test]
    fn unsupported_values() {
        let t = header_text(Some("{500, 510}")).replace("bsq", "xyz");
        assert!(matches!(parse_envi_header(&t), Err(HsiError::UnsupportedInterleave(_))));
        let t = header_text(Some("{500, 510}")).replace("data type = 4", "data type = 5");
        assert!(matches!(parse_envi_header(&t), Err(HsiError::UnsupportedDataType(_))));
        let t = header_text(Some("{500, 510}")).replace("byte order = 0", "byte order = 1");
        assert!(matches!(parse_envi_header(&t), Err(HsiError::UnsupportedByteOrder(_))));
    }

    fn le_bytes(values: &[f32]) -> Vec<u8> {
        values.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    #[test]
    fn reads_bsq_by_hand() {
        // 2 samples x 1 line x 2 bands: band0 = (1, 2), band1 = (3, 4).
        let mut h = EnviHeader::new(2, 1, vec![500.0, 510.0]).unwrap();
        h.interleave = Interleave::Bsq;
        let bytes: Vec<u8> = vec![
            0x00, 0x00, 0x80, 0x3f, // 1.0
            0x00, 0x00, 0x00, 0x40, // 2.0
            0x00, 0x00, 0x40, 0x40, // 3.0
            0x00, 0x00, 0x80, 0x40, // 4.0
        ];
        let cube = read_cube(&h, &bytes).unwrap();
        assert_eq!(cube.band(0), &[1.0, 2.0]);
        assert_eq!(cube.band(1), &[3.0, 4.0]);
    }

    #[test]
    fn bil_matches_bsq() {
        let mut h = EnviHeader::new(2, 1, vec![500.0, 510.0]).unwrap();
        let bsq = read_cube(&h, &le_bytes(&[1.0, 2.0, 3.0, 4.0])).unwrap();
        // BIL with a single line is band0 row, then band1 row.
        h.interleave = Interleave::Bil;
        let bil = read_cube(&h, &le_bytes(&[1.0, 2.0, 3.0, 4.0])).unwrap();
        assert_eq!(bsq, bil);
        // Two lines: BIL permutes rows and bands.
        let mut h2 = EnviHeader::new(2, 2, vec![500.0, 510.0]).unwrap();
        let bsq = read_cube(&h2, &le_bytes(&[1., 2., 3., 4., 5., 6., 7., 8.])).unwrap();
        h2.interleave = Interleave::Bil;
        let bil = read_cube(&h2, &le_bytes(&[1., 2., 5., 6., 3., 4., 7., 8.])).unwrap();
        assert_eq!(bsq, bil);
        h2.interleave = Interleave::Bip;
        let bip = read_cube(&h2, &le_bytes(&[1., 5., 2., 6., 3., 7., 4., 8.])).unwrap();
        assert_eq!(bsq, bip);
    }

    #[test]
    fn short_payload() {
        let h = EnviHeader::new(2, 1, vec![500.0, 510.0]).unwrap();
        let err = read_cube(&h, &le_bytes(&[1.0, 2.0, 3.0])).unwrap_err();
        assert!(matches!(
            err,
            HsiError::SizeMismatch {
                expected: 16,
                actual: 12
            }
        ));
    }

    #[test]
    fn u16_with_and_without_scale() {
        let mut h = EnviHeader::new(2, 1, vec![500.0]).unwrap();
        h.data_type = DataType::U16;
        let bytes: Vec<u8> = [5000u16, 10000].iter().flat_map(|v| v.to_le_bytes()).collect();
        let raw = read_cube(&h, &bytes).unwrap();
        assert_eq!(raw.data(), &[5000.0, 10000.0]);
        h.reflectance_scale = Some(10000.0);
        let scaled = read_cube(&h, &bytes).unwrap();
        assert_eq!(scaled.data(), &[0.5, 1.0]);
    }

    #[test]
    fn header_offset_is_skipped() {
        let mut h = EnviHeader::new(1, 1, vec![500.0]).unwrap();
        h.header_offset = 3;
        let mut bytes = vec![9, 9, 9];
        bytes.extend(2.5f32.to_le_bytes());
        assert_eq!(read_cube(&h, &bytes).unwrap().data(), &[2.5]);
    }

    #[test]
    fn nearest_band_cases() {
        let h = EnviHeader::new(1, 1, vec![400.0, 450.0, 500.0]).unwrap();
        assert_eq!(nearest_band(&h, 460.0), 1);
        assert_eq!(nearest_band(&h, 425.0), 0);
        assert_eq!(nearest_band(&h, 9999.0), 2);
    }

    #[test]
    fn nearest_band_on_camera_grid() {
        let grid = even_grid(400.0, 1000.0, 448);
        let h = EnviHeader::new(1, 1, grid.clone()).unwrap();
        // Brute force: the index whose distance is minimal over the whole grid.
        let brute = |t: f64| {
            let dists: Vec<f64> = grid.iter().map(|w| (w - t).abs()).collect();
            let min = dists.iter().cloned().fold(f64::INFINITY, f64::min);
            dists.iter().position(|&d| d == min).unwrap()
        };
        assert_eq!(brute(540.62), 105);
        assert_eq!(nearest_band(&h, 540.62), 105);
        for t in [650.45, 460.27, 400.0, 1000.0, 733.3] {
            assert_eq!(nearest_band(&h, t), brute(t));
        }
    }

    #[test]
    fn calibrated_cubes_reject_out_of_range() {
        let h = EnviHeader::new(1, 1, vec![500.0]).unwrap();
        assert!(matches!(
            HsiCube::new(h, vec![1.5], Provenance::Calibrated),
            Err(HsiError::OutOfRange { .. })
        ));
    }

    #[test]
    fn bip_write_unsupported() {
        let h = EnviHeader::new(1, 1, vec![500.0]).unwrap();
        let cube = HsiCube::new(h, vec![0.5], Provenance::Raw).unwrap();
        assert!(write_cube(&cube, Interleave::Bip).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let h = EnviHeader::new(3, 2, vec![500.0, 505.5]).unwrap();
        let data: Vec<f32> = (0..12).map(|i| i as f32 / 12.0).collect();
        let cube = HsiCube::new(h, data, Provenance::Calibrated).unwrap();
        let path = dir.path().join("cube.hdr");
        write_envi(&path, &cube, Interleave::Bil).unwrap();
        let back = read_envi(&path).unwrap();
        assert_eq!(back, cube);
        assert_eq!(back.provenance(), Provenance::Calibrated);
    }
}
