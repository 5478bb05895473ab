//! Evaluation input files and report rendering.
//!
//! * annotations: JSON lines, `{session_id, truth: [label…], predicted: [label…]}`
//! * rater verdicts: `{items: [{id, rater_a, rater_b, session?}]}`
//! * timings: `{points: [{duration_min, runtime_min}]}`

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    aggregate_scores, fit_duration_runtime, gwet_ac1, miss_counts_by_action, score_session, AgreementReport,
    AggregateReport, FitReport, MeanSd, MetricsError, MissCount, ScoreReport, SessionAnnotation, TaskLabel,
};

#[derive(Debug, Error)]
pub enum EvalFileError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}:{line}:{column}: {message}", path.display())]
    Format { path: PathBuf, line: usize, column: usize, message: String },
    #[error("{}: {source}", path.display())]
    Metrics {
        path: PathBuf,
        #[source]
        source: MetricsError,
    },
}

fn read(path: &Path) -> Result<String, EvalFileError> {
    std::fs::read_to_string(path).map_err(|source| EvalFileError::Io { path: path.to_path_buf(), source })
}

fn format_err(path: &Path, line_offset: usize, e: serde_json::Error) -> EvalFileError {
    // serde appends its own " at line L column C"; the variant carries the file position instead.
    let mut message = e.to_string();
    if let Some(at) = message.rfind(" at line ") {
        message.truncate(at);
    }
    EvalFileError::Format { path: path.to_path_buf(), line: line_offset + e.line(), column: e.column(), message }
}

/// Parses JSON-lines annotations. Blank lines are skipped.
pub fn parse_annotations(path: &Path, text: &str) -> Result<Vec<SessionAnnotation>, EvalFileError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| format_err(path, i, e)))
        .collect()
}

pub fn load_annotations(path: &Path) -> Result<Vec<SessionAnnotation>, EvalFileError> {
    parse_annotations(path, &read(path)?)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub id: String,
    pub rater_a: bool,
    pub rater_b: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictFile {
    pub items: Vec<Verdict>,
}

pub fn load_verdicts(path: &Path) -> Result<VerdictFile, EvalFileError> {
    serde_json::from_str(&read(path)?).map_err(|e| format_err(path, 0, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingPoint {
    pub duration_min: f64,
    pub runtime_min: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingFile {
    pub points: Vec<TimingPoint>,
}

pub fn load_timings(path: &Path) -> Result<TimingFile, EvalFileError> {
    serde_json::from_str(&read(path)?).map_err(|e| format_err(path, 0, e))
}

/// Agreement pooled over all verdicts, plus per-session means when verdicts
/// carry a session id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementSummary {
    pub pooled: AgreementReport,
    #[serde(skip_serializing_if = "BTreeMap::is_empty", default)]
    pub per_session: BTreeMap<String, AgreementReport>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub session_pa: Option<MeanSd>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub session_ac1: Option<MeanSd>,
}

pub fn summarize_agreement(verdicts: &VerdictFile) -> Result<AgreementSummary, MetricsError> {
    let a: Vec<bool> = verdicts.items.iter().map(|v| v.rater_a).collect();
    let b: Vec<bool> = verdicts.items.iter().map(|v| v.rater_b).collect();
    let pooled = gwet_ac1(&a, &b)?;

    let mut grouped: BTreeMap<String, (Vec<bool>, Vec<bool>)> = BTreeMap::new();
    for v in verdicts.items.iter() {
        if let Some(s) = &v.session {
            let entry = grouped.entry(s.clone()).or_default();
            entry.0.push(v.rater_a);
            entry.1.push(v.rater_b);
        }
    }
    let per_session = grouped
        .into_iter()
        .map(|(s, (a, b))| gwet_ac1(&a, &b).map(|r| (s, r)))
        .collect::<Result<BTreeMap<_, _>, _>>()?;
    let (session_pa, session_ac1) = if per_session.is_empty() {
        (None, None)
    } else {
        (
            Some(MeanSd::of(per_session.values().map(|r| Some(r.pa)))),
            Some(MeanSd::of(per_session.values().map(|r| Some(r.ac1)))),
        )
    };
    Ok(AgreementSummary { pooled, per_session, session_pa, session_ac1 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissRow {
    pub label: TaskLabel,
    pub misses: usize,
    pub sessions: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scores: AggregateReport,
    pub sessions: Vec<(String, ScoreReport)>,
    /// Highest miss rate first.
    pub miss_rates: Vec<MissRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub agreement: Option<AgreementSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub runtime_fit: Option<FitReport>,
}

pub fn miss_table(counts: &BTreeMap<TaskLabel, MissCount>) -> Vec<MissRow> {
    let mut rows: Vec<MissRow> = counts
        .iter()
        .map(|(&label, c)| MissRow { label, misses: c.misses, sessions: c.sessions, rate: c.rate() })
        .collect();
    rows.sort_by(|x, y| y.rate.total_cmp(&x.rate).then(x.label.cmp(&y.label)));
    rows
}

/// Scores annotations and attaches optional agreement and runtime analyses.
pub fn evaluate(
    annotations: &[SessionAnnotation],
    verdicts: Option<&VerdictFile>,
    timings: Option<&TimingFile>,
) -> Result<EvalReport, MetricsError> {
    let sessions: Vec<(String, ScoreReport)> =
        annotations.iter().map(|a| (a.session_id.clone(), score_session(a))).collect();
    let reports: Vec<ScoreReport> = sessions.iter().map(|(_, r)| *r).collect();
    let scores = aggregate_scores(&reports)?;
    let agreement = verdicts.map(summarize_agreement).transpose()?;
    let runtime_fit = timings
        .map(|t| {
            let pts: Vec<(f64, f64)> = t.points.iter().map(|p| (p.duration_min, p.runtime_min)).collect();
            fit_duration_runtime(&pts)
        })
        .transpose()?;
    Ok(EvalReport {
        scores,
        sessions,
        miss_rates: miss_table(&miss_counts_by_action(annotations)),
        agreement,
        runtime_fit,
    })
}

fn pct(m: &MeanSd) -> String {
    match (m.mean, m.sd) {
        (Some(mean), Some(sd)) => {
            let mut s = format!("{:6.1}% ± {:4.1}%  (n={})", mean * 100.0, sd * 100.0, m.n);
            if m.excluded > 0 {
                let _ = write!(s, ", {} excluded", m.excluded);
            }
            s
        }
        _ => format!("   n/a            ({} excluded)", m.excluded),
    }
}

/// Plain-text rendering of a report.
pub fn render_text(report: &EvalReport) -> String {
    let mut out = String::new();
    let s = &report.scores;
    let _ = writeln!(out, "sessions   {}", s.sessions);
    let _ = writeln!(out, "precision  {}", pct(&s.precision));
    let _ = writeln!(out, "recall     {}", pct(&s.recall));
    let _ = writeln!(out, "f1         {}", pct(&s.f1));
    let _ = writeln!(out, "accuracy   {}", pct(&s.accuracy));
    if !report.miss_rates.is_empty() {
        let _ = writeln!(out, "\n{:<18} {:>7} {:>9} {:>8}", "task", "missed", "sessions", "rate");
        for row in &report.miss_rates {
            let _ = writeln!(
                out,
                "{:<18} {:>7} {:>9} {:>7.1}%",
                row.label.name(),
                row.misses,
                row.sessions,
                row.rate * 100.0
            );
        }
    }
    if let Some(a) = &report.agreement {
        let p = &a.pooled;
        let _ = writeln!(
            out,
            "\nagreement  pa={:.3} pi={:.3} pe={:.3} ac1={:.3} (n={})",
            p.pa, p.pi, p.pe, p.ac1, p.n
        );
        if let (Some(pa), Some(ac1)) = (&a.session_pa, &a.session_ac1) {
            let _ = writeln!(out, "per-session pa  {}", pct(pa));
            let _ = writeln!(
                out,
                "per-session ac1 {:.3} ± {:.3}",
                ac1.mean.unwrap_or(f64::NAN),
                ac1.sd.unwrap_or(f64::NAN)
            );
        }
    }
    if let Some(f) = &report.runtime_fit {
        let _ = writeln!(
            out,
            "\nruntime    {:.4} min/min · duration + {:.4} min, R²={:.3} (n={})",
            f.slope, f.intercept, f.r_squared, f.n
        );
    }
    out
}
