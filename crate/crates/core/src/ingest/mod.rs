//! Sampling a recording into timestamped frames, segments and batches.

mod decode;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::{ImageFormat, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use decode::{decoder_for, FfmpegDecoder, FrameDecoder, Scene, Storyboard, StoryboardDecoder, VideoInfo};

pub const DEFAULT_INTERVAL_S: f64 = 5.0;
pub const DEFAULT_BATCH_SIZE: usize = 20;
pub const DEFAULT_MAX_SEGMENTS: usize = 3;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("cannot decode {}: {message}", path.display())]
    Decode { path: PathBuf, message: String },
    #[error("crop {crop} does not fit inside a {width}x{height} frame")]
    InvalidCrop { crop: CropRect, width: u32, height: u32 },
    #[error("timestamp {timestamp_s}s is beyond the end of the recording ({duration_s}s)")]
    OutOfRange { timestamp_s: f64, duration_s: f64 },
    #[error("failed to encode frame at {timestamp_s}s: {message}")]
    Encode { timestamp_s: f64, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Pixel rectangle kept from every frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropRect {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

impl CropRect {
    pub fn fits(&self, width: u32, height: u32) -> bool {
        self.width > 0
            && self.height > 0
            && u64::from(self.x) + u64::from(self.width) <= u64::from(width)
            && u64::from(self.y) + u64::from(self.height) <= u64::from(height)
    }
}

impl fmt::Display for CropRect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{}", self.x, self.y, self.width, self.height)
    }
}

impl FromStr for CropRect {
    type Err = String;

    /// Parses `X,Y,W,H`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts = s
            .split(',')
            .map(|p| p.trim().parse::<u32>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| format!("crop must be X,Y,W,H: {e}"))?;
        match parts[..] {
            [x, y, width, height] if width > 0 && height > 0 => Ok(CropRect { x, y, width, height }),
            [_, _, _, _] => Err("crop width and height must be positive".into()),
            _ => Err(format!("crop must have four components, got {}", parts.len())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub interval_s: f64,
    pub batch_size: usize,
    pub max_segments: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub crop: Option<CropRect>,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            interval_s: DEFAULT_INTERVAL_S,
            batch_size: DEFAULT_BATCH_SIZE,
            max_segments: DEFAULT_MAX_SEGMENTS,
            crop: None,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<(), IngestError> {
        if !(self.interval_s.is_finite() && interval_ms(self.interval_s) >= 1) {
            return Err(IngestError::InvalidInput(format!(
                "interval must be at least 1 ms, got {}s",
                self.interval_s
            )));
        }
        if self.batch_size == 0 {
            return Err(IngestError::InvalidInput("batch size must be at least 1".into()));
        }
        if self.max_segments == 0 {
            return Err(IngestError::InvalidInput("max segments must be at least 1".into()));
        }
        if let Some(crop) = self.crop {
            if crop.width == 0 || crop.height == 0 {
                return Err(IngestError::InvalidInput(format!("crop {crop} has an empty side")));
            }
        }
        Ok(())
    }
}

/// One sampled screen frame, PNG encoded.
#[derive(Clone, PartialEq)]
pub struct Frame {
    pub timestamp_s: f64,
    pub image: Vec<u8>,
    pub width: u32,
    pub height: u32,
}

impl fmt::Debug for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Frame")
            .field("timestamp_s", &self.timestamp_s)
            .field("width", &self.width)
            .field("height", &self.height)
            .field("png_bytes", &self.image.len())
            .finish()
    }
}

/// Consecutive frames sent to the vision model in one call.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub index: usize,
    pub frames: Vec<Frame>,
}

/// Sampling schedule for one recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FramePlan {
    pub timestamps: Vec<f64>,
    pub duration_s: f64,
    /// Half-open `[start, end)` index ranges into `timestamps`, one per segment.
    pub segment_bounds: Vec<(usize, usize)>,
    pub batch_size: usize,
}

impl FramePlan {
    pub fn frame_count(&self) -> usize {
        self.timestamps.len()
    }

    pub fn segment_sizes(&self) -> Vec<usize> {
        self.segment_bounds.iter().map(|(s, e)| e - s).collect()
    }

    pub fn batches_per_segment(&self) -> Vec<usize> {
        self.segment_sizes()
            .into_iter()
            .map(|n| n.div_ceil(self.batch_size))
            .collect()
    }
}

// Sampling is done on an integer millisecond grid so that decimal intervals
// such as 0.1 s land exactly on their multiples.
fn interval_ms(interval_s: f64) -> u64 {
    (interval_s * 1000.0).round().max(0.0) as u64
}

fn duration_ms(duration_s: f64) -> u64 {
    (duration_s * 1000.0 + 1e-6).floor() as u64
}

/// Builds the sampling schedule: a frame at every multiple of the interval
/// from zero up to and including the duration, split into at most
/// `max_segments` contiguous near-equal segments.
pub fn plan_sampling(duration_s: f64, config: &SamplingConfig) -> Result<FramePlan, IngestError> {
    if !(duration_s.is_finite() && duration_s > 0.0) {
        return Err(IngestError::InvalidInput(format!(
            "duration must be positive, got {duration_s}"
        )));
    }
    config.validate()?;

    let step = interval_ms(config.interval_s);
    let count = duration_ms(duration_s) / step + 1;
    let timestamps = (0..count).map(|k| (k * step) as f64 / 1000.0).collect::<Vec<_>>();

    let n = timestamps.len();
    let segments = config.max_segments.min(n.div_ceil(config.batch_size)).max(1);
    Ok(FramePlan {
        segment_bounds: split_contiguous(n, segments),
        timestamps,
        duration_s,
        batch_size: config.batch_size,
    })
}

/// Splits `0..n` into `parts` contiguous ranges whose sizes differ by at most
/// one; the earliest ranges take the remainder.
pub fn split_contiguous(n: usize, parts: usize) -> Vec<(usize, usize)> {
    let parts = parts.max(1);
    let base = n / parts;
    let extra = n % parts;
    let mut start = 0;
    (0..parts)
        .map(|i| {
            let len = base + usize::from(i < extra);
            let range = (start, start + len);
            start += len;
            range
        })
        .collect()
}

/// Chunks frames into consecutive batches of `batch_size`; the last one may
/// be shorter.
pub fn batch_frames(segment_frames: Vec<Frame>, batch_size: usize) -> Vec<Batch> {
    assert!(batch_size >= 1, "batch size must be at least 1");
    let mut batches = Vec::with_capacity(segment_frames.len().div_ceil(batch_size));
    let mut iter = segment_frames.into_iter().peekable();
    while iter.peek().is_some() {
        let frames = iter.by_ref().take(batch_size).collect();
        batches.push(Batch { index: batches.len(), frames });
    }
    batches
}

/// Decodes one frame per planned timestamp, optionally cropped.
pub fn extract_frames(
    decoder: &dyn FrameDecoder,
    recording_path: &Path,
    plan: &FramePlan,
    crop: Option<CropRect>,
) -> Result<Vec<Frame>, IngestError> {
    let info = decoder.probe(recording_path)?;
    if let Some(crop) = crop {
        if !crop.fits(info.width, info.height) {
            return Err(IngestError::InvalidCrop { crop, width: info.width, height: info.height });
        }
    }
    if let Some(&late) = plan.timestamps.iter().find(|&&t| t > info.duration_s + 1e-6) {
        return Err(IngestError::OutOfRange { timestamp_s: late, duration_s: info.duration_s });
    }

    let images = decoder.decode(recording_path, &plan.timestamps)?;
    if images.len() != plan.timestamps.len() {
        return Err(IngestError::Decode {
            path: recording_path.to_path_buf(),
            message: format!(
                "decoder returned {} frames for {} timestamps",
                images.len(),
                plan.timestamps.len()
            ),
        });
    }

    plan.timestamps
        .iter()
        .zip(images)
        .map(|(&timestamp_s, img)| {
            let img = match crop {
                Some(c) => image::imageops::crop_imm(&img, c.x, c.y, c.width, c.height).to_image(),
                None => img,
            };
            encode_frame(timestamp_s, &img)
        })
        .collect()
}

fn encode_frame(timestamp_s: f64, img: &RgbImage) -> Result<Frame, IngestError> {
    let mut png = std::io::Cursor::new(Vec::new());
    img.write_to(&mut png, ImageFormat::Png).map_err(|e| IngestError::Encode {
        timestamp_s,
        message: e.to_string(),
    })?;
    Ok(Frame { timestamp_s, image: png.into_inner(), width: img.width(), height: img.height() })
}

/// File name used for a cached frame: `f<k>_<timestamp_s>.png`.
pub fn frame_file_name(index: usize, timestamp_s: f64) -> String {
    format!("f{index}_{timestamp_s}.png")
}

/// Writes frames under `dir`, creating it if needed.
pub fn write_frame_cache(dir: &Path, frames: &[Frame]) -> Result<(), IngestError> {
    std::fs::create_dir_all(dir)?;
    for (k, frame) in frames.iter().enumerate() {
        std::fs::write(dir.join(frame_file_name(k, frame.timestamp_s)), &frame.image)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(interval_s: f64) -> SamplingConfig {
        SamplingConfig { interval_s, ..Default::default() }
    }

    #[test]
    fn hundred_seconds_gives_twenty_one_frames() {
        let plan = plan_sampling(100.0, &cfg(5.0)).unwrap();
        assert_eq!(plan.timestamps.len(), 21);
        assert_eq!(plan.timestamps[0], 0.0);
        assert_eq!(*plan.timestamps.last().unwrap(), 100.0);
        assert!(plan.timestamps.windows(2).all(|w| w[1] - w[0] == 5.0));
    }

    #[test]
    fn one_hour_splits_into_three_segments() {
        let plan = plan_sampling(3600.0, &SamplingConfig::default()).unwrap();
        assert_eq!(plan.frame_count(), 721);
        assert_eq!(plan.segment_sizes(), vec![241, 240, 240]);
        assert_eq!(plan.segment_bounds, vec![(0, 241), (241, 481), (481, 721)]);
        assert_eq!(plan.batches_per_segment(), vec![13, 12, 12]);
    }

    #[test]
    fn shorter_than_one_interval() {
        let plan = plan_sampling(3.0, &cfg(5.0)).unwrap();
        assert_eq!(plan.timestamps, vec![0.0]);
        assert_eq!(plan.segment_bounds, vec![(0, 1)]);
    }

    #[test]
    fn short_recording_uses_fewer_segments() {
        // 30 frames fit in two batches of 20, so only two segments are used.
        let plan = plan_sampling(145.0, &SamplingConfig::default()).unwrap();
        assert_eq!(plan.frame_count(), 30);
        assert_eq!(plan.segment_sizes(), vec![15, 15]);
    }

    #[test]
    fn decimal_interval_lands_on_multiples() {
        let plan = plan_sampling(0.3, &cfg(0.1)).unwrap();
        assert_eq!(plan.timestamps, vec![0.0, 0.1, 0.2, 0.3]);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(plan_sampling(0.0, &cfg(5.0)), Err(IngestError::InvalidInput(_))));
        assert!(matches!(plan_sampling(-1.0, &cfg(5.0)), Err(IngestError::InvalidInput(_))));
        assert!(matches!(plan_sampling(f64::NAN, &cfg(5.0)), Err(IngestError::InvalidInput(_))));
        assert!(matches!(plan_sampling(10.0, &cfg(0.0)), Err(IngestError::InvalidInput(_))));
        let zero_batch = SamplingConfig { batch_size: 0, ..Default::default() };
        assert!(plan_sampling(10.0, &zero_batch).is_err());
        let zero_segments = SamplingConfig { max_segments: 0, ..Default::default() };
        assert!(plan_sampling(10.0, &zero_segments).is_err());
    }

    #[test]
    fn plan_json_keys() {
        let plan = plan_sampling(10.0, &cfg(5.0)).unwrap();
        let v = serde_json::to_value(&plan).unwrap();
        assert_eq!(v["timestamps"], serde_json::json!([0.0, 5.0, 10.0]));
        assert_eq!(v["duration_s"], 10.0);
        assert_eq!(v["segment_bounds"], serde_json::json!([[0, 3]]));
        assert_eq!(v["batch_size"], 20);
    }

    fn dummy_frames(n: usize) -> Vec<Frame> {
        (0..n)
            .map(|k| Frame { timestamp_s: k as f64, image: vec![k as u8], width: 1, height: 1 })
            .collect()
    }

    #[test]
    fn batching_examples() {
        let sizes = |n| batch_frames(dummy_frames(n), 20).iter().map(|b| b.frames.len()).collect::<Vec<_>>();
        assert_eq!(sizes(45), vec![20, 20, 5]);
        assert_eq!(sizes(20), vec![20]);
        assert!(sizes(0).is_empty());
        let batches = batch_frames(dummy_frames(45), 20);
        assert_eq!(batches.iter().map(|b| b.index).collect::<Vec<_>>(), vec![0, 1, 2]);
    }

    #[test]
    fn crop_parsing() {
        assert_eq!(
            "0,0,800,600".parse::<CropRect>().unwrap(),
            CropRect { x: 0, y: 0, width: 800, height: 600 }
        );
        assert!("1,2,3".parse::<CropRect>().is_err());
        assert!("0,0,0,10".parse::<CropRect>().is_err());
        assert!("a,b,c,d".parse::<CropRect>().is_err());
    }

    #[test]
    fn crop_bounds() {
        let c = CropRect { x: 1900, y: 0, width: 200, height: 100 };
        assert!(!c.fits(1920, 1080));
        assert!(CropRect { x: 0, y: 0, width: 1920, height: 1080 }.fits(1920, 1080));
    }

    #[test]
    fn frame_names() {
        assert_eq!(frame_file_name(3, 15.0), "f3_15.png");
        assert_eq!(frame_file_name(1, 0.5), "f1_0.5.png");
    }

    proptest! {
        #[test]
        fn timestamp_count_follows_floor_rule(duration_ms in 1u64..20_000_000, interval_ms in 1u64..60_000) {
            let config = SamplingConfig { interval_s: interval_ms as f64 / 1000.0, ..Default::default() };
            let plan = plan_sampling(duration_ms as f64 / 1000.0, &config).unwrap();
            prop_assert_eq!(plan.timestamps.len() as u64, duration_ms / interval_ms + 1);
            prop_assert!(*plan.timestamps.last().unwrap() <= plan.duration_s);
        }

        #[test]
        fn segments_partition_indices(n in 1usize..5000, batch in 1usize..64, max_segments in 1usize..8) {
            let parts = max_segments.min(n.div_ceil(batch));
            let bounds = split_contiguous(n, parts);
            prop_assert_eq!(bounds.len(), parts);
            prop_assert_eq!(bounds[0].0, 0);
            prop_assert_eq!(bounds.last().unwrap().1, n);
            prop_assert!(bounds.windows(2).all(|w| w[0].1 == w[1].0));
            let sizes: Vec<_> = bounds.iter().map(|(s, e)| e - s).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        }

        #[test]
        fn batching_is_pure_reshaping(n in 0usize..200, batch in 1usize..50) {
            let frames = dummy_frames(n);
            let batches = batch_frames(frames.clone(), batch);
            prop_assert!(batches.iter().rev().skip(1).all(|b| b.frames.len() == batch));
            let flat: Vec<Frame> = batches.into_iter().flat_map(|b| b.frames).collect();
            prop_assert_eq!(flat, frames);
        }
    }
}
