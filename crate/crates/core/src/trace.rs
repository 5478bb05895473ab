//! Phase one: reconstructing an action trace from sampled frames.
//!
//! Each segment of a recording is handled by its own worker. Within a
//! segment, batches go to the vision model strictly in order and every call
//! carries the actions found so far in that segment, so the model only
//! reports what is new. Segment results are merged afterwards with a small
//! deduplication window to absorb repeats at segment boundaries.

use std::fmt;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::ingest::{self, batch_frames, Frame, FrameDecoder, FramePlan, IngestError, SamplingConfig};
use crate::providers::{ChatProvider, ChatRequest, ImageAttachment};
use crate::response::{self, complete_parsed, ModelCallError, ResponseError};

/// Vision prompt. Kept byte-for-byte; the model output schema below is what
/// [`parse_phase1_response`] reads.
pub const PHASE1_TEMPLATE: &str = r#"You are an assistant for workflow analysis. Given a sequence of frames from a task video and a list of prior identified actions, analyze the frames and identify any new user actions that are not already described in the prior actions. If you find new actions, add them to the new_actions. If no new actions are identified, return empty new_actions.

You will be provided with a batch of frames and a list of prior actions. For each action, you need to identify all of the details, such as the formatting, "cell content", "formula", and the specific action. Notice that some actions may have different outcomes based on the content of the sheet. For example, if the user switches to a different sheet, it may create a new sheet in addition to switching to it.

For some actions not shown on the frames, you need to predict them by comparing the difference between the frames. For example, whether the styles, formatting, or content of the cells have changed. If the user has changed the content of a cell, you need to speculate the possible actions that may lead to the changes and add the actions to the new_actions.

If the content of the sheet has changed (not cell formats), you need to record the entire sheet in Markdown format. Remember to include the workbook name and sheet name.

Your response should be a JSON object with the following structure:
{
    "new_action_detected": true/false,
    "new_actions": [
        "action1",
        "action2",
        ...
    ],
    "sheet_changes": true/false,
    "sheet_details": "use Markdown format to record the entire sheet"
}"#;

/// How many previously merged actions an incoming action is compared to.
pub const DEDUP_WINDOW: usize = 5;

/// Segments needing more batches than this are rejected rather than sent.
pub const MAX_BATCHES_PER_SEGMENT: usize = 40;

/// A system/user message pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub system: String,
    pub user: String,
}

impl fmt::Display for Prompt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\n\n{}", self.system, self.user)
    }
}

/// Renders the prior-actions block: a numbered list, or `none`.
pub fn prior_actions_block(prior_actions: &[String]) -> String {
    let mut out = String::from("Prior actions:\n");
    if prior_actions.is_empty() {
        out.push_str("none");
    } else {
        let lines: Vec<String> = prior_actions.iter().enumerate().map(|(i, a)| format!("{}. {a}", i + 1)).collect();
        out.push_str(&lines.join("\n"));
    }
    out
}

pub fn build_phase1_prompt(prior_actions: &[String]) -> Prompt {
    Prompt { system: PHASE1_TEMPLATE.to_owned(), user: prior_actions_block(prior_actions) }
}

fn frames_block(segment_index: usize, batch_index: usize, frames: &[Frame]) -> String {
    let mut out = format!("Frames in this batch (segment {segment_index}, batch {batch_index}), in order:");
    for (i, f) in frames.iter().enumerate() {
        out.push_str(&format!("\n- image {} at {}s", i + 1, f.timestamp_s));
    }
    out
}

/// Parsed result of one vision call.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchObservation {
    pub new_action_detected: bool,
    pub new_actions: Vec<String>,
    pub sheet_changes: bool,
    pub sheet_details: String,
    #[serde(default)]
    pub segment_index: usize,
    #[serde(default)]
    pub batch_index: usize,
}

impl BatchObservation {
    pub fn with_actions<I, S>(actions: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let new_actions: Vec<String> = actions.into_iter().map(Into::into).collect();
        Self { new_action_detected: !new_actions.is_empty(), new_actions, ..Default::default() }
    }

    /// The model-facing JSON shape.
    pub fn to_model_json(&self) -> String {
        json!({
            "new_action_detected": self.new_action_detected,
            "new_actions": self.new_actions,
            "sheet_changes": self.sheet_changes,
            "sheet_details": self.sheet_details,
        })
        .to_string()
    }
}

/// Reads a vision response. Indices are left at zero for the caller to set.
pub fn parse_phase1_response(raw: &str) -> Result<BatchObservation, ResponseError> {
    let obj = response::require_object(raw)?;
    let new_actions: Vec<String> = response::require_string_list(&obj, "new_actions")?
        .into_iter()
        .filter(|a| !a.trim().is_empty())
        .collect();
    let detected = response::require_bool(&obj, "new_action_detected")?;
    let sheet_changes = response::require_bool(&obj, "sheet_changes")?;
    let details = response::optional_string(&obj, "sheet_details")?;

    if detected != !new_actions.is_empty() {
        tracing::debug!(detected, count = new_actions.len(), "new_action_detected disagrees with new_actions");
    }
    let sheet_details = match (sheet_changes, details) {
        (false, _) => String::new(),
        (true, Some(d)) => d,
        (true, None) => return Err(ResponseError::schema("sheet_details", "missing while sheet_changes is true")),
    };
    Ok(BatchObservation {
        new_action_detected: !new_actions.is_empty(),
        new_actions,
        sheet_changes,
        sheet_details,
        segment_index: 0,
        batch_index: 0,
    })
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("segment {segment} needs {batches} batches, more than the limit of {limit}")]
    SegmentOverflow { segment: usize, batches: usize, limit: usize },
    #[error("segment {segment}, batch {batch}: {source}")]
    Batch {
        segment: usize,
        batch: usize,
        #[source]
        source: ModelCallError,
    },
    #[error("segment {segment} has no frames")]
    EmptySegment { segment: usize },
}

/// Runs the batches of one segment sequentially, threading prior actions.
pub fn run_segment(
    segment_index: usize,
    segment_frames: Vec<Frame>,
    config: &SamplingConfig,
    provider: &dyn ChatProvider,
) -> Result<Vec<BatchObservation>, TraceError> {
    if segment_frames.is_empty() {
        return Err(TraceError::EmptySegment { segment: segment_index });
    }
    let batches = batch_frames(segment_frames, config.batch_size);
    if batches.len() > MAX_BATCHES_PER_SEGMENT {
        return Err(TraceError::SegmentOverflow {
            segment: segment_index,
            batches: batches.len(),
            limit: MAX_BATCHES_PER_SEGMENT,
        });
    }

    let mut prior: Vec<String> = Vec::new();
    let mut observations = Vec::with_capacity(batches.len());
    for batch in batches {
        let prompt = build_phase1_prompt(&prior);
        let user = format!("{}\n\n{}", prompt.user, frames_block(segment_index, batch.index, &batch.frames));
        let images = batch
            .frames
            .into_iter()
            .map(|f| ImageAttachment { timestamp_s: f.timestamp_s, png: f.image })
            .collect();
        let request = ChatRequest::vision(prompt.system, user, images);
        let mut obs = complete_parsed(provider, &request, parse_phase1_response).map_err(|source| {
            TraceError::Batch { segment: segment_index, batch: batch.index, source }
        })?;
        obs.segment_index = segment_index;
        obs.batch_index = batch.index;
        prior.extend(obs.new_actions.iter().cloned());
        observations.push(obs);
    }
    Ok(observations)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceAction {
    pub text: String,
    pub segment: usize,
    pub batch: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SheetSnapshot {
    pub segment: usize,
    pub batch: usize,
    pub markdown: String,
}

/// Merged phase-one output for a session.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionTrace {
    pub actions: Vec<TraceAction>,
    pub snapshots: Vec<SheetSnapshot>,
    /// Owning session; not part of `trace.json`.
    #[serde(skip)]
    pub source_session: String,
}

impl ActionTrace {
    pub fn action_texts(&self) -> Vec<&str> {
        self.actions.iter().map(|a| a.text.as_str()).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serializes")
    }
}

/// Lowercased, whitespace collapsed, trailing punctuation removed.
pub fn normalize_action(text: &str) -> String {
    let collapsed = text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    collapsed
        .trim_end_matches(|c: char| c.is_ascii_punctuation() || c.is_whitespace())
        .to_owned()
}

/// Concatenates segment observations in order, dropping any action whose
/// normalized text matches one of the last [`DEDUP_WINDOW`] merged actions.
pub fn merge_segments(per_segment: &[Vec<BatchObservation>]) -> ActionTrace {
    let mut trace = ActionTrace::default();
    let mut recent: Vec<String> = Vec::new();
    for obs in per_segment.iter().flatten() {
        for text in &obs.new_actions {
            let norm = normalize_action(text);
            let window_start = recent.len().saturating_sub(DEDUP_WINDOW);
            if recent[window_start..].contains(&norm) {
                continue;
            }
            recent.push(norm);
            trace.actions.push(TraceAction {
                text: text.clone(),
                segment: obs.segment_index,
                batch: obs.batch_index,
            });
        }
        if obs.sheet_changes && !obs.sheet_details.trim().is_empty() {
            trace.snapshots.push(SheetSnapshot {
                segment: obs.segment_index,
                batch: obs.batch_index,
                markdown: obs.sheet_details.clone(),
            });
        }
    }
    trace
}

/// Timings for one analysis, in milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageTimings {
    pub extract_ms: u64,
    pub trace_ms: u64,
}

/// Samples and decodes the recording.
pub fn extract_stage(
    decoder: &dyn FrameDecoder,
    recording_path: &Path,
    config: &SamplingConfig,
) -> Result<(FramePlan, Vec<Frame>), TraceError> {
    config.validate()?;
    let info = decoder.probe(recording_path)?;
    let plan = ingest::plan_sampling(info.duration_s, config)?;
    let frames = ingest::extract_frames(decoder, recording_path, &plan, config.crop)?;
    Ok((plan, frames))
}

/// Runs every segment (concurrently when there is more than one) and merges.
pub fn trace_stage(
    plan: &FramePlan,
    frames: Vec<Frame>,
    config: &SamplingConfig,
    provider: &dyn ChatProvider,
) -> Result<ActionTrace, TraceError> {
    for (segment, batches) in plan.batches_per_segment().into_iter().enumerate() {
        if batches > MAX_BATCHES_PER_SEGMENT {
            return Err(TraceError::SegmentOverflow { segment, batches, limit: MAX_BATCHES_PER_SEGMENT });
        }
    }

    let mut frames = frames.into_iter();
    let segments: Vec<Vec<Frame>> = plan
        .segment_bounds
        .iter()
        .map(|(start, end)| frames.by_ref().take(end - start).collect())
        .collect();

    let results: Vec<Result<Vec<BatchObservation>, TraceError>> = if segments.len() == 1 {
        segments.into_iter().map(|f| run_segment(0, f, config, provider)).collect()
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = segments
                .into_iter()
                .enumerate()
                .map(|(i, f)| scope.spawn(move || run_segment(i, f, config, provider)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("segment worker panicked"))
                .collect()
        })
    };
    let per_segment = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(merge_segments(&per_segment))
}

/// Everything phase one produces for a recording.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub plan: FramePlan,
    pub trace: ActionTrace,
    pub timings: StageTimings,
}

pub fn analyze_recording(
    recording_path: &Path,
    config: &SamplingConfig,
    provider: &dyn ChatProvider,
    decoder: &dyn FrameDecoder,
) -> Result<Analysis, TraceError> {
    let started = Instant::now();
    let (plan, frames) = extract_stage(decoder, recording_path, config)?;
    let extract_ms = started.elapsed().as_millis() as u64;
    let started = Instant::now();
    let trace = trace_stage(&plan, frames, config, provider)?;
    let trace_ms = started.elapsed().as_millis() as u64;
    Ok(Analysis { plan, trace, timings: StageTimings { extract_ms, trace_ms } })
}
