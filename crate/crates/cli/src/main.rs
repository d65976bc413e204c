//! `splitsense` command-line front end.

mod commands;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "splitsense", version, about = "Hyperspectral tomato split detection")]
pub struct Cli {
    /// Suppress progress output on stderr.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset of ENVI cubes, masks and annotations.
    Synth(SynthArgs),
    /// Convert a raw cube to reflectance with dark and white references.
    Calibrate(CalibrateArgs),
    /// Cut model-ready ROI cubes out of an annotated dataset.
    ExtractRoi(ExtractArgs),
    /// Spectral band analysis.
    #[command(subcommand)]
    Bands(BandsCommand),
    /// Train the VAE on the normal ROIs of a ROI directory.
    Train(TrainArgs),
    /// Score ROIs by reconstruction loss.
    Score(ScoreArgs),
    /// Pick the F1-optimal threshold on a calibration half of a scores CSV.
    Threshold(ThresholdArgs),
    /// Write per-pixel error heatmaps and mean reflectance spectra.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 120)]
    pub normal: usize,
    #[arg(long, default_value_t = 40)]
    pub anomalous: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Image side in pixels.
    #[arg(long, default_value_t = 256)]
    pub size: usize,
    #[arg(long, default_value_t = 448)]
    pub bands: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum InterleaveArg {
    Bsq,
    Bil,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub raw: PathBuf,
    #[arg(long)]
    pub dark: PathBuf,
    #[arg(long)]
    pub white: PathBuf,
    /// Output header path; the payload goes next to it as `.raw`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = InterleaveArg::Bsq)]
    pub interleave: InterleaveArg,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Directory with annotations.json, cubes and masks.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 530.0)]
    pub lo_nm: f64,
    #[arg(long, default_value_t = 550.0)]
    pub hi_nm: f64,
    #[arg(long, default_value_t = 16)]
    pub bands: usize,
    #[arg(long, default_value_t = 210)]
    pub size: usize,
    /// Size of the RGB images the boxes were drawn on, as HEIGHTxWIDTH.
    #[arg(long, value_parser = parse_dims)]
    pub rgb_size: Option<(usize, usize)>,
    /// Also write each capture's RGB composite as PPM.
    #[arg(long)]
    pub write_rgb: bool,
}

#[derive(Debug, Subcommand)]
pub enum BandsCommand {
    /// Compare intact and split patches and recommend a band window.
    Analyze(BandsArgs),
}

#[derive(Debug, Args)]
pub struct BandsArgs {
    /// Cube holding the intact patch.
    #[arg(long)]
    pub cube: PathBuf,
    /// Cube holding the split patch; defaults to --cube.
    #[arg(long)]
    pub anomalous_cube: Option<PathBuf>,
    /// Top-left corner of the intact patch, as X,Y.
    #[arg(long, value_parser = parse_point)]
    pub normal_patch: (usize, usize),
    /// Top-left corner of the split patch, as X,Y.
    #[arg(long, value_parser = parse_point)]
    pub anomalous_patch: (usize, usize),
    #[arg(long, default_value_t = 5)]
    pub patch_size: usize,
    /// Window width in nm.
    #[arg(long, default_value_t = 20.0)]
    pub width: f64,
    /// Per-band CSV output.
    #[arg(long)]
    pub out: PathBuf,
    /// Recommended window as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub rois: PathBuf,
    /// Checkpoint directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Training config JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the config epoch count.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Fraction of normal ROIs used for training.
    #[arg(long, default_value_t = 0.8)]
    pub split_ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    All,
    Train,
    Test,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// ROI directory with rois.json.
    #[arg(long, conflicts_with = "roi", required_unless_present = "roi")]
    pub rois: Option<PathBuf>,
    /// Individual ROI header(s).
    #[arg(long)]
    pub roi: Vec<PathBuf>,
    /// Which ROIs of the directory to score, using the checkpoint's split.
    #[arg(long, value_enum, default_value_t = SplitArg::All)]
    pub split: SplitArg,
    /// Also classify against this threshold.
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ThresholdArgs {
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Threshold config JSON (`{"seed": ...}`).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub rois: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::All)]
    pub split: SplitArg,
    #[arg(long, default_value_t = 95.0)]
    pub percentile: f64,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_pair(s: &str, sep: char) -> Result<(usize, usize), String> {
    let (a, b) = s
        .split_once(sep)
        .ok_or_else(|| format!("expected two integers separated by '{sep}'"))?;
    let num = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("'{v}': {e}"));
    Ok((num(a)?, num(b)?))
}

fn parse_point(s: &str) -> Result<(usize, usize), String> {
    parse_pair(s, ',')
}

fn parse_dims(s: &str) -> Result<(usize, usize), String> {
    parse_pair(s, 'x')
}

/// Exit code for a parsed or rejected command line: 0 success, 1 usage
/// error, 2 data error.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match commands::dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn configure_threads() {
    let Ok(value) = std::env::var("SPLITSENSE_THREADS") else {
        return;
    };
    match value.trim().parse::<usize>() {
        Ok(n) if n > 0 => {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
        _ => eprintln!("warning: ignoring SPLITSENSE_THREADS={value}"),
    }
}

fn main() -> ExitCode {
    configure_threads();
    ExitCode::from(run(std::env::args_os()))
}
