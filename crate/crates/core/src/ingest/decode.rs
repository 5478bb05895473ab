//! Frame decoders.
//!
//! [`FfmpegDecoder`] shells out to `ffprobe`/`ffmpeg` for real containers.
//! [`StoryboardDecoder`] renders synthetic recordings described by a small
//! JSON file, which is what fixtures and offline demos use.

use std::path::{Path, PathBuf};
use std::process::Command;

use image::{Rgb, RgbImage};
use serde::Deserialize;

use super::IngestError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VideoInfo {
    pub duration_s: f64,
    pub width: u32,
    pub height: u32,
}

pub trait FrameDecoder: Send + Sync {
    fn probe(&self, path: &Path) -> Result<VideoInfo, IngestError>;

    /// Decodes one full-resolution frame for each timestamp, in order.
    fn decode(&self, path: &Path, timestamps: &[f64]) -> Result<Vec<RgbImage>, IngestError>;
}

/// Picks the storyboard decoder for `.json` recordings and ffmpeg otherwise.
pub fn decoder_for(path: &Path) -> Box<dyn FrameDecoder> {
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("json") => Box::new(StoryboardDecoder),
        _ => Box::new(FfmpegDecoder::default()),
    }
}

fn decode_err(path: &Path, message: impl Into<String>) -> IngestError {
    IngestError::Decode { path: path.to_path_buf(), message: message.into() }
}

#[derive(Debug, Clone)]
pub struct FfmpegDecoder {
    pub ffmpeg: PathBuf,
    pub ffprobe: PathBuf,
}

impl Default for FfmpegDecoder {
    fn default() -> Self {
        Self { ffmpeg: "ffmpeg".into(), ffprobe: "ffprobe".into() }
    }
}

#[derive(Deserialize)]
struct ProbeOutput {
    #[serde(default)]
    streams: Vec<ProbeStream>,
    format: Option<ProbeFormat>,
}

#[derive(Deserialize)]
struct ProbeStream {
    width: Option<u32>,
    height: Option<u32>,
}

#[derive(Deserialize)]
struct ProbeFormat {
    duration: Option<String>,
}

impl FfmpegDecoder {
    fn run(&self, program: &Path, args: &[&std::ffi::OsStr], path: &Path) -> Result<Vec<u8>, IngestError> {
        let output = Command::new(program)
            .args(args)
            .output()
            .map_err(|e| decode_err(path, format!("failed to run {}: {e}", program.display())))?;
        if !output.status.success() {
            let stderr = String::from_utf8_lossy(&output.stderr);
            return Err(decode_err(path, format!("{} exited with {}: {}", program.display(), output.status, stderr.trim())));
        }
        Ok(output.stdout)
    }
}

pub(crate) fn parse_probe(path: &Path, json: &[u8]) -> Result<VideoInfo, IngestError> {
    let probe: ProbeOutput =
        serde_json::from_slice(json).map_err(|e| decode_err(path, format!("unreadable probe output: {e}")))?;
    let stream = probe
        .streams
        .iter()
        .find(|s| s.width.is_some() && s.height.is_some())
        .ok_or_else(|| decode_err(path, "no video stream"))?;
    let duration_s = probe
        .format
        .and_then(|f| f.duration)
        .and_then(|d| d.parse::<f64>().ok())
        .filter(|d| d.is_finite() && *d > 0.0)
        .ok_or_else(|| decode_err(path, "unknown duration"))?;
    Ok(VideoInfo { duration_s, width: stream.width.unwrap_or(0), height: stream.height.unwrap_or(0) })
}

impl FrameDecoder for FfmpegDecoder {
    fn probe(&self, path: &Path) -> Result<VideoInfo, IngestError> {
        let out = self.run(
            &self.ffprobe,
            &[
                "-v".as_ref(),
                "error".as_ref(),
                "-select_streams".as_ref(),
                "v:0".as_ref(),
                "-show_entries".as_ref(),
                "stream=width,height:format=duration".as_ref(),
                "-of".as_ref(),
                "json".as_ref(),
                path.as_os_str(),
            ],
            path,
        )?;
        parse_probe(path, &out)
    }

    fn decode(&self, path: &Path, timestamps: &[f64]) -> Result<Vec<RgbImage>, IngestError> {
        timestamps
            .iter()
            .map(|t| {
                let seek = format!("{t:.3}");
                let png = self.run(
                    &self.ffmpeg,
                    &[
                        "-v".as_ref(),
                        "error".as_ref(),
                        "-ss".as_ref(),
                        seek.as_ref(),
                        "-i".as_ref(),
                        path.as_os_str(),
                        "-frames:v".as_ref(),
                        "1".as_ref(),
                        "-f".as_ref(),
                        "image2pipe".as_ref(),
                        "-vcodec".as_ref(),
                        "png".as_ref(),
                        "-".as_ref(),
                    ],
                    path,
                )?;
                if png.is_empty() {
                    return Err(IngestError::OutOfRange { timestamp_s: *t, duration_s: f64::NAN });
                }
                image::load_from_memory(&png)
                    .map(|img| img.to_rgb8())
                    .map_err(|e| decode_err(path, format!("frame at {t}s: {e}")))
            })
            .collect()
    }
}

/// A synthetic recording: a canvas size, a duration and a list of scenes,
/// each painting the canvas a flat colour from its start time onwards.
#[derive(Debug, Clone, PartialEq, Deserialize, serde::Serialize)]
pub struct Storyboard {
    pub width: u32,
    pub height: u32,
    pub duration_s: f64,
    #[serde(default)]
    pub scenes: Vec<Scene>,
}

#[derive(Debug, Clone, PartialEq, Deserialize, serde::Serialize)]
pub struct Scene {
    pub start_s: f64,
    pub rgb: [u8; 3],
}

impl Storyboard {
    pub fn load(path: &Path) -> Result<Self, IngestError> {
        let text = std::fs::read_to_string(path).map_err(|e| decode_err(path, e.to_string()))?;
        let board: Storyboard =
            serde_json::from_str(&text).map_err(|e| decode_err(path, format!("not a storyboard: {e}")))?;
        if board.width == 0 || board.height == 0 || board.duration_s.is_nan() || board.duration_s <= 0.0 {
            return Err(decode_err(path, "storyboard needs positive width, height and duration"));
        }
        Ok(board)
    }

    /// Renders the frame at `t`: the active scene colour plus a dark progress
    /// bar along the top edge so consecutive frames differ.
    pub fn render(&self, t: f64) -> RgbImage {
        let rgb = self
            .scenes
            .iter()
            .rfind(|s| s.start_s <= t)
            .map(|s| s.rgb)
            .unwrap_or([255, 255, 255]);
        let bar_h = (self.height / 20).max(1);
        let bar_w = ((t / self.duration_s).clamp(0.0, 1.0) * f64::from(self.width)).round() as u32;
        RgbImage::from_fn(self.width, self.height, |x, y| {
            if y < bar_h && x < bar_w {
                Rgb([32, 32, 32])
            } else {
                Rgb(rgb)
            }
        })
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct StoryboardDecoder;

impl FrameDecoder for StoryboardDecoder {
    fn probe(&self, path: &Path) -> Result<VideoInfo, IngestError> {
        let b = Storyboard::load(path)?;
        Ok(VideoInfo { duration_s: b.duration_s, width: b.width, height: b.height })
    }

    fn decode(&self, path: &Path, timestamps: &[f64]) -> Result<Vec<RgbImage>, IngestError> {
        let b = Storyboard::load(path)?;
        timestamps
            .iter()
            .map(|&t| {
                if t < 0.0 || t > b.duration_s + 1e-6 {
                    Err(IngestError::OutOfRange { timestamp_s: t, duration_s: b.duration_s })
                } else {
                    Ok(b.render(t))
                }
            })
            .collect()
    }
}
