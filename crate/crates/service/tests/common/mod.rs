#![allow(dead_code)]

use std::path::{Path, PathBuf};

use serde_json::json;
use taskreflect_core::advisor::{self, WorkflowAssessment};
use taskreflect_core::providers::{MockProvider, MockScript, ScriptEntry};
use taskreflect_core::trace::BatchObservation;

/// A 60 s synthetic recording: 13 frames at the default interval, one batch.
pub fn write_recording(dir: &Path) -> PathBuf {
    let path = dir.join("recording.json");
    let board = json!({
        "width": 320,
        "height": 240,
        "duration_s": 60.0,
        "scenes": [
            {"start_s": 0.0, "rgb": [255, 255, 255]},
            {"start_s": 30.0, "rgb": [200, 220, 255]}
        ]
    });
    std::fs::write(&path, board.to_string()).unwrap();
    path
}

pub fn suboptimal(i: usize) -> WorkflowAssessment {
    WorkflowAssessment {
        action_list: vec![format!("It looks like you formatted block {i} by hand")],
        optimal: false,
        reason: format!("You repeated the same formatting {} times.", i + 2),
        suggestion: format!("Use `Format Painter` on block {i}.\nBenefit: Original: {} steps, Suggested: 2 steps", i + 4),
    }
}

pub fn optimal() -> WorkflowAssessment {
    WorkflowAssessment {
        action_list: vec!["It looks like you saved the file".into()],
        optimal: true,
        reason: String::new(),
        suggestion: String::new(),
    }
}

pub fn phase1_reply() -> String {
    let mut obs = BatchObservation::with_actions(["Applied bold to the header row A3:E3", "Renamed Sheet1 to Accounts"]);
    obs.sheet_changes = true;
    obs.sheet_details = "| A | B |\n|---|---|\n| Name | Total |".into();
    obs.to_model_json()
}

pub fn phase2_reply(suboptimal_count: usize) -> String {
    let mut items: Vec<_> = (0..suboptimal_count).map(suboptimal).collect();
    items.insert(items.len().min(1), optimal());
    advisor::to_model_json(&items)
}

pub fn script(suboptimal_count: usize) -> MockScript {
    MockScript::new([phase1_reply()], [phase2_reply(suboptimal_count)])
}

pub fn mock(suboptimal_count: usize) -> MockProvider {
    MockProvider::new(script(suboptimal_count))
}

pub fn failing_vision() -> MockProvider {
    MockProvider::new(MockScript {
        vision: vec![ScriptEntry::Failure { error: "scripted outage".into() }],
        text: vec![],
    })
}
