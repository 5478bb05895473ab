//! Evaluation harness: action-recognition scores, rater agreement, per-task
//! miss rates and the recording-length versus runtime fit.

pub mod files;
pub mod synthetic;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

fn invalid(msg: impl Into<String>) -> MetricsError {
    MetricsError::InvalidInput(msg.into())
}

/// The benchmark's fourteen spreadsheet tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskLabel {
    OpenFile,
    AddRow,
    AddValues,
    EditFormula,
    Bold,
    CellFillColor,
    SwitchSheet,
    ResizeColumn,
    CopyPaste,
    ChangeFontColor,
    NewSheet,
    RenameSheet,
    ShareLink,
    NewWorkbook,
}

impl TaskLabel {
    pub const ALL: [TaskLabel; 14] = [
        TaskLabel::OpenFile,
        TaskLabel::AddRow,
        TaskLabel::AddValues,
        TaskLabel::EditFormula,
        TaskLabel::Bold,
        TaskLabel::CellFillColor,
        TaskLabel::SwitchSheet,
        TaskLabel::ResizeColumn,
        TaskLabel::CopyPaste,
        TaskLabel::ChangeFontColor,
        TaskLabel::NewSheet,
        TaskLabel::RenameSheet,
        TaskLabel::ShareLink,
        TaskLabel::NewWorkbook,
    ];

    pub const COUNT: usize = Self::ALL.len();

    pub fn name(self) -> &'static str {
        match self {
            TaskLabel::OpenFile => "open_file",
            TaskLabel::AddRow => "add_row",
            TaskLabel::AddValues => "add_values",
            TaskLabel::EditFormula => "edit_formula",
            TaskLabel::Bold => "bold",
            TaskLabel::CellFillColor => "cell_fill_color",
            TaskLabel::SwitchSheet => "switch_sheet",
            TaskLabel::ResizeColumn => "resize_column",
            TaskLabel::CopyPaste => "copy_paste",
            TaskLabel::ChangeFontColor => "change_font_color",
            TaskLabel::NewSheet => "new_sheet",
            TaskLabel::RenameSheet => "rename_sheet",
            TaskLabel::ShareLink => "share_link",
            TaskLabel::NewWorkbook => "new_workbook",
        }
    }
}

impl fmt::Display for TaskLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskLabel {
    type Err = MetricsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TaskLabel::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| invalid(format!("unknown task label `{s}`")))
    }
}

/// Ground truth and rater-credited tasks for one session.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionAnnotation {
    pub session_id: String,
    pub truth: BTreeSet<TaskLabel>,
    pub predicted: BTreeSet<TaskLabel>,
}

/// Per-session confusion counts over the label universe. Ratios with a zero
/// denominator are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub accuracy: f64,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn score_session(annotation: &SessionAnnotation) -> ScoreReport {
    let tp = annotation.truth.intersection(&annotation.predicted).count();
    let fp = annotation.predicted.difference(&annotation.truth).count();
    let fn_ = annotation.truth.difference(&annotation.predicted).count();
    let tn = TaskLabel::COUNT - tp - fp - fn_;
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        (Some(_), Some(_)) => Some(0.0),
        _ => None,
    };
    ScoreReport { tp, fp, fn_, tn, precision, recall, f1, accuracy: (tp + tn) as f64 / TaskLabel::COUNT as f64 }
}

/// Mean and sample standard deviation over the sessions where the metric
/// is defined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    pub n: usize,
    pub excluded: usize,
}

impl MeanSd {
    pub fn of(values: impl IntoIterator<Item = Option<f64>>) -> Self {
        let mut defined = Vec::new();
        let mut excluded = 0;
        for v in values {
            match v {
                Some(x) => defined.push(x),
                None => excluded += 1,
            }
        }
        let n = defined.len();
        if n == 0 {
            return MeanSd { mean: None, sd: None, n, excluded };
        }
        let mean = defined.iter().sum::<f64>() / n as f64;
        let sd = if n == 1 {
            0.0
        } else {
            (defined.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        MeanSd { mean: Some(mean), sd: Some(sd), n, excluded }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub sessions: usize,
    pub precision: MeanSd,
    pub recall: MeanSd,
    pub f1: MeanSd,
    pub accuracy: MeanSd,
}

/// Unweighted per-session means.
pub fn aggregate_scores(reports: &[ScoreReport]) -> Result<AggregateReport, MetricsError> {
    if reports.is_empty() {
        return Err(invalid("no score reports to aggregate"));
    }
    Ok(AggregateReport {
        sessions: reports.len(),
        precision: MeanSd::of(reports.iter().map(|r| r.precision)),
        recall: MeanSd::of(reports.iter().map(|r| r.recall)),
        f1: MeanSd::of(reports.iter().map(|r| r.f1)),
        accuracy: MeanSd::of(reports.iter().map(|r| Some(r.accuracy))),
    })
}

fn check_pair(a: &[bool], b: &[bool]) -> Result<(), MetricsError> {
    if a.is_empty() || b.is_empty() {
        return Err(invalid("rater vectors must not be empty"));
    }
    if a.len() != b.len() {
        return Err(invalid(format!("rater vectors differ in length ({} vs {})", a.len(), b.len())));
    }
    Ok(())
}

pub fn percent_agreement(a: &[bool], b: &[bool]) -> Result<f64, MetricsError> {
    check_pair(a, b)?;
    let agree = a.iter().zip(b).filter(|(x, y)| x == y).count();
    Ok(agree as f64 / a.len() as f64)
}

/// Two-rater binary agreement: observed share, mean positive marginal,
/// chance agreement and Gwet's AC1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub n: usize,
    pub pa: f64,
    pub pi: f64,
    pub pe: f64,
    pub ac1: f64,
}

pub fn gwet_ac1(a: &[bool], b: &[bool]) -> Result<AgreementReport, MetricsError> {
    let pa = percent_agreement(a, b)?;
    let n = a.len() as f64;
    let positives = |v: &[bool]| v.iter().filter(|&&x| x).count() as f64 / n;
    let pi = (positives(a) + positives(b)) / 2.0;
    // 2π(1−π) peaks at 0.5, so the denominator is never zero.
    let pe = 2.0 * pi * (1.0 - pi);
    Ok(AgreementReport { n: a.len(), pa, pi, pe, ac1: (pa - pe) / (1.0 - pe) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MissCount {
    pub misses: usize,
    pub sessions: usize,
}

impl MissCount {
    pub fn rate(&self) -> f64 {
        self.misses as f64 / self.sessions as f64
    }
}

/// For each label that appears in some session's truth: how many of those
/// sessions failed to credit it.
pub fn miss_counts_by_action(annotations: &[SessionAnnotation]) -> BTreeMap<TaskLabel, MissCount> {
    let mut counts: BTreeMap<TaskLabel, MissCount> = BTreeMap::new();
    for ann in annotations {
        for &label in &ann.truth {
            let entry = counts.entry(label).or_insert(MissCount { misses: 0, sessions: 0 });
            entry.sessions += 1;
            if !ann.predicted.contains(&label) {
                entry.misses += 1;
            }
        }
    }
    counts
}

pub fn miss_rate_by_action(annotations: &[SessionAnnotation]) -> BTreeMap<TaskLabel, f64> {
    miss_counts_by_action(annotations).into_iter().map(|(l, c)| (l, c.rate())).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n: usize,
}

/// Ordinary least squares of runtime on duration.
pub fn fit_duration_runtime(points: &[(f64, f64)]) -> Result<FitReport, MetricsError> {
    if points.len() < 2 {
        return Err(invalid("need at least two points"));
    }
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(invalid("points must be finite"));
    }
    let n = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|(x, _)| (x - mean_x).powi(2)).sum();
    let sxy: f64 = points.iter().map(|(x, y)| (x - mean_x) * (y - mean_y)).sum();
    if sxx <= f64::EPSILON * mean_x.abs().max(1.0) {
        return Err(invalid("durations are all equal; slope is undefined"));
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let ss_res: f64 = points.iter().map(|(x, y)| (y - (intercept + slope * x)).powi(2)).sum();
    let ss_tot: f64 = points.iter().map(|(_, y)| (y - mean_y).powi(2)).sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { (1.0 - ss_res / ss_tot).clamp(0.0, 1.0) };
    Ok(FitReport { slope, intercept, r_squared, n: points.len() })
}
