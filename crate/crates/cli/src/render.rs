use std::fmt::Write;
use std::path::Path;

use serde_json::{Value, json};
use taskreflect_core::advisor::WorkflowAssessment;
use taskreflect_service::SessionRecord;

fn counts(record: &SessionRecord) -> (usize, usize) {
    (
        record.trace.as_ref().map_or(0, |t| t.actions.len()),
        record.queue.as_ref().map_or(0, |q| q.items.len()),
    )
}

pub fn summary_text(record: &SessionRecord, dir: &Path) -> String {
    let (actions, suggestions) = counts(record);
    let c = &record.config;
    let mut out = String::new();
    let _ = writeln!(out, "session      {}", record.session_id);
    let _ = writeln!(out, "directory    {}", dir.display());
    let _ = writeln!(out, "state        {}", record.state);
    let _ = write!(out, "sampling     interval={} batch={} segments={}", c.interval_s, c.batch_size, c.max_segments);
    if let Some(crop) = c.crop {
        let _ = write!(out, " crop={crop}");
    }
    out.push('\n');
    if let Some(s) = &record.sampling {
        let sizes: Vec<String> = s.segment_sizes.iter().map(|n| n.to_string()).collect();
        let batches: Vec<String> = s.batches_per_segment.iter().map(|n| n.to_string()).collect();
        let _ = writeln!(
            out,
            "frames       {} (segments {}, batches {})",
            s.frame_count,
            sizes.join("/"),
            batches.join("/")
        );
    }
    let _ = writeln!(out, "actions      {actions}");
    let _ = writeln!(out, "suggestions  {suggestions}");
    let timings: Vec<String> = ["extract", "trace", "advise"]
        .iter()
        .filter_map(|stage| record.timings.get(*stage).map(|ms| format!("{stage}={ms}ms")))
        .collect();
    let _ = writeln!(out, "timings      {}", if timings.is_empty() { "-".to_owned() } else { timings.join(" ") });
    if let Some(detail) = &record.error_detail {
        let _ = writeln!(out, "error        {detail}");
    }
    out
}

pub fn summary_json(record: &SessionRecord, dir: &Path) -> Value {
    let (actions, suggestions) = counts(record);
    json!({
        "session_id": record.session_id,
        "directory": dir,
        "state": record.state,
        "config": record.config,
        "sampling": record.sampling,
        "action_count": actions,
        "suggestion_count": suggestions,
        "timings_ms": record.timings,
        "error_detail": record.error_detail,
    })
}

/// One suggestion card as markdown.
pub fn suggestion_markdown(index: usize, total: usize, item: &WorkflowAssessment) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "## Suggestion {} of {}\n", index + 1, total);
    if !item.action_list.is_empty() {
        let _ = writeln!(out, "**Observed actions**\n");
        for action in &item.action_list {
            let _ = writeln!(out, "- {action}");
        }
        out.push('\n');
    }
    let _ = writeln!(out, "**Why this could be faster**\n\n{}\n", item.reason.trim());
    let _ = writeln!(out, "**Suggested steps**\n\n{}\n", item.steps().trim());
    if let Some(benefit) = item.benefit() {
        let _ = writeln!(out, "**Benefit:** {benefit}\n");
    }
    out
}
