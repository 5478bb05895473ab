//! Keyword auto-rater and a seeded synthetic benchmark corpus.
//!
//! The auto-rater is only meant for synthetic fixtures whose action phrasing
//! is known; real evaluations take rater verdicts as input.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{SessionAnnotation, TaskLabel};

/// Lowercase substrings that credit a label.
const RULES: &[(TaskLabel, &[&str])] = &[
    (TaskLabel::OpenFile, &["opened the", "open file", "opened file"]),
    (TaskLabel::AddRow, &["inserted a new row", "inserted a row", "added a row", "added a new row", "insert row"]),
    (TaskLabel::AddValues, &["entered", "typed", "filled in"]),
    (TaskLabel::EditFormula, &["formula", "=sum("]),
    (TaskLabel::Bold, &["bold"]),
    (TaskLabel::CellFillColor, &["fill color", "fill colour", "highlighted"]),
    (TaskLabel::SwitchSheet, &["switched to", "navigated to the"]),
    (TaskLabel::ResizeColumn, &["resized", "column width", "widened"]),
    (TaskLabel::CopyPaste, &["copied", "pasted"]),
    (TaskLabel::ChangeFontColor, &["font color", "font colour", "text color"]),
    (TaskLabel::NewSheet, &["new sheet", "new worksheet", "added a sheet"]),
    (TaskLabel::RenameSheet, &["renamed"]),
    (TaskLabel::ShareLink, &["share"]),
    (TaskLabel::NewWorkbook, &["new workbook", "blank workbook"]),
];

pub fn auto_rate<S: AsRef<str>>(actions: &[S]) -> BTreeSet<TaskLabel> {
    let mut labels = BTreeSet::new();
    for action in actions {
        let lower = action.as_ref().to_lowercase();
        for (label, keys) in RULES {
            if keys.iter().any(|k| lower.contains(k)) {
                labels.insert(*label);
            }
        }
    }
    labels
}

/// A phrase a vision model might emit for the task, matching exactly one rule.
pub fn canonical_phrase(label: TaskLabel) -> &'static str {
    match label {
        TaskLabel::OpenFile => "Opened the Budget workbook from the link in the email",
        TaskLabel::AddRow => "Inserted a new row above Total in the Budget sheet",
        TaskLabel::AddValues => "Entered 120 in C5 and 95 in D5",
        TaskLabel::EditFormula => "Changed the formula in F7 to =SUM(B7:E7)",
        TaskLabel::Bold => "Applied bold to the header row A3:E3",
        TaskLabel::CellFillColor => "Set the fill color of A3 to light blue",
        TaskLabel::SwitchSheet => "Switched to the Address History sheet",
        TaskLabel::ResizeColumn => "Resized column A to fit the street names",
        TaskLabel::CopyPaste => "Copied B4:E4 and pasted it into B8:E8",
        TaskLabel::ChangeFontColor => "Changed the font color of the Total row to red",
        TaskLabel::NewSheet => "Created a new sheet with the plus button",
        TaskLabel::RenameSheet => "Renamed Sheet1 to Accounts",
        TaskLabel::ShareLink => "Clicked Share and sent a link to the workbook by email",
        TaskLabel::NewWorkbook => "Started a new workbook from the start screen",
    }
}

const FILLER: &[&str] = &["Scrolled down the sheet", "Selected cell C4", "Hovered over the ribbon"];

/// Seeding parameters for [`generate_corpus`].
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSpec {
    pub seed: u64,
    pub sessions: usize,
    /// Chance that a session performed a given task.
    pub performed_rate: f64,
    /// Miss rate applied to every task without an override.
    pub base_miss_rate: f64,
    /// Per-task miss-rate overrides.
    pub miss_overrides: BTreeMap<TaskLabel, f64>,
    /// Per-task exact counts of sessions that performed the task.
    pub performed_overrides: BTreeMap<TaskLabel, usize>,
}

impl Default for CorpusSpec {
    /// 25 sessions, 10% misses, and bold performed in 12 sessions with 7 missed.
    fn default() -> Self {
        Self {
            seed: 0x5eed,
            sessions: 25,
            performed_rate: 0.9,
            base_miss_rate: 0.10,
            miss_overrides: [(TaskLabel::Bold, 7.0 / 12.0)].into(),
            performed_overrides: [(TaskLabel::Bold, 12)].into(),
        }
    }
}

impl CorpusSpec {
    pub fn miss_rate(&self, label: TaskLabel) -> f64 {
        self.miss_overrides.get(&label).copied().unwrap_or(self.base_miss_rate)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSession {
    pub session_id: String,
    pub truth: BTreeSet<TaskLabel>,
    /// Action strings as a trace would contain them.
    pub actions: Vec<String>,
}

impl SyntheticSession {
    /// Annotation with `predicted` filled in by the auto-rater.
    pub fn annotate(&self) -> SessionAnnotation {
        SessionAnnotation {
            session_id: self.session_id.clone(),
            truth: self.truth.clone(),
            predicted: auto_rate(&self.actions),
        }
    }
}

/// Generates a corpus where, for every task, exactly
/// `round(miss_rate · performed)` of the sessions that performed it have no
/// trace action for it.
pub fn generate_corpus(spec: &CorpusSpec) -> Vec<SyntheticSession> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.sessions;
    let mut truth = vec![BTreeSet::new(); n];
    let mut detected = vec![BTreeSet::new(); n];

    for label in TaskLabel::ALL {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let performers: Vec<usize> = match spec.performed_overrides.get(&label) {
            Some(&count) => order.into_iter().take(count.min(n)).collect(),
            None => order.into_iter().filter(|_| rng.random_bool(spec.performed_rate)).collect(),
        };
        let misses = (spec.miss_rate(label) * performers.len() as f64).round() as usize;
        for (rank, &s) in performers.iter().enumerate() {
            truth[s].insert(label);
            if rank >= misses {
                detected[s].insert(label);
            }
        }
    }

    (0..n)
        .map(|s| {
            let mut actions: Vec<String> = Vec::new();
            for label in &detected[s] {
                if rng.random_bool(0.3) {
                    actions.push(FILLER[rng.random_range(0..FILLER.len())].to_owned());
                }
                actions.push(canonical_phrase(*label).to_owned());
            }
            SyntheticSession { session_id: format!("synthetic-{s:02}"), truth: truth[s].clone(), actions }
        })
        .collect()
}
