//! Phase two: turning an action trace into ranked workflow suggestions.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::providers::{ChatProvider, ChatRequest};
use crate::response::{self, complete_parsed, ModelCallError, ResponseError};
use crate::trace::{ActionTrace, Prompt};

pub const PHASE2_TEMPLATE: &str = r#"You are a workflow efficiency expert. Analyze user actions from Excel task videos and identify suboptimal workflows.

Instructions:
1. Group related actions into workflows (steps accomplishing a specific task)
2. For each workflow, set "Optimal" to true/false based on efficiency
3. For suboptimal workflows ("Optimal": false):
   - "ActionList": List actions starting with "It looks like you..."
   - "Reason": Main inefficiency (be specific) starting with "You ..."
   - "Suggestion": Provide ONE actionable solution using Excel features:
     - Give step-by-step instructions with exact Ribbon paths/shortcuts
     - Include detailed examples with realistic sheet/column names
     - Prioritize automation over manual repetition
     - Provide complete formulas with explanations when applicable
     - End with "Benefit:" explaining concrete improvements (time saved, fewer steps, error reduction)
     - Compare before/after: "Original: X steps, Suggested: Y steps"

4. Focus on efficiency and maintainability, not just task completion
5. Only include 3 most impactful suboptimal workflows and rank them by importance
6. Use proper formatting: backticks (`) around Excel functions, formulas, keyboard shortcuts, and feature names, and triple backticks (```) for multi-line formulas or step-by-step code examples
7. Create plausible placeholders for unclear data references

Output JSON format:
{
    "Workflows": [
        {
            "ActionList": ["Action 1", "Action 2"],
            "Optimal": true/false,
            "Reason": "Brief explanation",
            "Suggestion": "Step-by-step actionable solution"
        }
    ]
}"#;

/// Most suggestions a session will ever hold.
pub const MAX_SUGGESTIONS: usize = 3;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkflowAssessment {
    #[serde(rename = "ActionList")]
    pub action_list: Vec<String>,
    #[serde(rename = "Optimal")]
    pub optimal: bool,
    #[serde(rename = "Reason", default)]
    pub reason: String,
    #[serde(rename = "Suggestion", default)]
    pub suggestion: String,
}

/// A deviation from the phrasing the prompt asks for. Never fatal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StyleLint {
    ActionPrefix { index: usize },
    ReasonPrefix,
    MissingBenefit,
}

impl WorkflowAssessment {
    /// The trailing `Benefit:` statement, if the suggestion has one.
    pub fn benefit(&self) -> Option<&str> {
        let at = self.suggestion.rfind("Benefit:")?;
        Some(self.suggestion[at + "Benefit:".len()..].trim()).filter(|s| !s.is_empty())
    }

    /// Suggestion text with the benefit statement removed.
    pub fn steps(&self) -> &str {
        match self.suggestion.rfind("Benefit:") {
            Some(at) => self.suggestion[..at].trim_end(),
            None => self.suggestion.trim_end(),
        }
    }

    pub fn lint(&self) -> Vec<StyleLint> {
        if self.optimal {
            return Vec::new();
        }
        let mut lints: Vec<StyleLint> = self
            .action_list
            .iter()
            .enumerate()
            .filter(|(_, a)| !a.trim_start().starts_with("It looks like you"))
            .map(|(index, _)| StyleLint::ActionPrefix { index })
            .collect();
        if !self.reason.trim_start().starts_with("You") {
            lints.push(StyleLint::ReasonPrefix);
        }
        if self.benefit().is_none() {
            lints.push(StyleLint::MissingBenefit);
        }
        lints
    }
}

#[derive(Debug, Error)]
pub enum AdvisorError {
    #[error("the trace has no actions to analyze")]
    NothingToAnalyze,
    #[error(transparent)]
    Call(#[from] ModelCallError),
}

pub fn build_phase2_prompt(trace: &ActionTrace) -> Result<Prompt, AdvisorError> {
    if trace.actions.is_empty() {
        return Err(AdvisorError::NothingToAnalyze);
    }
    let mut user = String::from("Observed user actions, in order:\n");
    let lines: Vec<String> = trace.actions.iter().enumerate().map(|(i, a)| format!("{}. {}", i + 1, a.text)).collect();
    user.push_str(&lines.join("\n"));
    user.push_str("\n\nSheet snapshots:\n");
    if trace.snapshots.is_empty() {
        user.push_str("none");
    } else {
        let blocks: Vec<String> = trace
            .snapshots
            .iter()
            .map(|s| format!("[segment {}, batch {}]\n{}", s.segment, s.batch, s.markdown.trim_end()))
            .collect();
        user.push_str(&blocks.join("\n\n"));
    }
    Ok(Prompt { system: PHASE2_TEMPLATE.to_owned(), user })
}

/// Reads a text-model response into assessments, keeping model order.
pub fn parse_phase2_response(raw: &str) -> Result<Vec<WorkflowAssessment>, ResponseError> {
    let obj = response::require_object(raw)?;
    let workflows = match obj.get("Workflows") {
        Some(Value::Array(items)) => items,
        Some(other) => {
            return Err(ResponseError::schema("Workflows", format!("expected a list, got {}", response::kind(other))))
        }
        None => return Err(ResponseError::schema("Workflows", "missing")),
    };

    workflows
        .iter()
        .enumerate()
        .map(|(i, entry)| {
            let at = |field: &str| format!("Workflows[{i}].{field}");
            let Value::Object(entry) = entry else {
                return Err(ResponseError::schema(format!("Workflows[{i}]"), "expected an object"));
            };
            let rebase = |e: ResponseError| match e {
                ResponseError::Schema { field, message } => ResponseError::Schema { field: format!("Workflows[{i}].{field}"), message },
                other => other,
            };
            let action_list = response::require_string_list(entry, "ActionList").map_err(rebase)?;
            let optimal = response::require_bool(entry, "Optimal").map_err(rebase)?;
            let reason = response::optional_string(entry, "Reason").map_err(rebase)?;
            let suggestion = response::optional_string(entry, "Suggestion").map_err(rebase)?;
            let is_blank = |s: &Option<String>| s.as_deref().is_none_or(|s| s.trim().is_empty());
            if !optimal && is_blank(&reason) {
                return Err(ResponseError::schema(at("Reason"), "required for a suboptimal workflow"));
            }
            if !optimal && is_blank(&suggestion) {
                return Err(ResponseError::schema(at("Suggestion"), "required for a suboptimal workflow"));
            }
            let assessment = WorkflowAssessment {
                action_list,
                optimal,
                reason: reason.unwrap_or_default(),
                suggestion: suggestion.unwrap_or_default(),
            };
            for lint in assessment.lint() {
                tracing::warn!(workflow = i, ?lint, "suggestion deviates from the requested phrasing");
            }
            Ok(assessment)
        })
        .collect()
}

/// Serializes assessments in the model's output shape.
pub fn to_model_json(assessments: &[WorkflowAssessment]) -> String {
    serde_json::json!({ "Workflows": assessments }).to_string()
}

/// Suboptimal workflows in model rank order, revealed one at a time.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuggestionQueue {
    pub items: Vec<WorkflowAssessment>,
    pub revealed: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Reveal {
    Item { index: usize, assessment: WorkflowAssessment },
    Exhausted,
}

impl SuggestionQueue {
    pub fn next_suggestion(&mut self) -> Reveal {
        match self.items.get(self.revealed) {
            Some(item) => {
                let index = self.revealed;
                self.revealed += 1;
                Reveal::Item { index, assessment: item.clone() }
            }
            None => Reveal::Exhausted,
        }
    }

    pub fn revealed_items(&self) -> &[WorkflowAssessment] {
        &self.items[..self.revealed.min(self.items.len())]
    }

    pub fn remaining(&self) -> usize {
        self.items.len().saturating_sub(self.revealed)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("queue serializes")
    }
}

/// Keeps suboptimal workflows in order, capped at [`MAX_SUGGESTIONS`].
pub fn select_recommendations(assessments: Vec<WorkflowAssessment>) -> SuggestionQueue {
    let suboptimal: Vec<_> = assessments.into_iter().filter(|a| !a.optimal).collect();
    if suboptimal.len() > MAX_SUGGESTIONS {
        tracing::info!(returned = suboptimal.len(), "model exceeded the suggestion cap; truncating");
    }
    SuggestionQueue { items: suboptimal.into_iter().take(MAX_SUGGESTIONS).collect(), revealed: 0 }
}

/// One text-model call: prompt, parse (with one re-ask), select.
pub fn advise(trace: &ActionTrace, provider: &dyn ChatProvider) -> Result<SuggestionQueue, AdvisorError> {
    let prompt = build_phase2_prompt(trace)?;
    let request = ChatRequest::text(prompt.system, prompt.user);
    let assessments = complete_parsed(provider, &request, parse_phase2_response)?;
    Ok(select_recommendations(assessments))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::{MockProvider, MockScript};
    use crate::trace::{SheetSnapshot, TraceAction};
    use proptest::prelude::*;

    fn trace(actions: &[&str]) -> ActionTrace {
        ActionTrace {
            actions: actions.iter().map(|t| TraceAction { text: (*t).into(), segment: 0, batch: 0 }).collect(),
            ..Default::default()
        }
    }

    fn subopt(n: usize) -> WorkflowAssessment {
        WorkflowAssessment {
            action_list: vec![format!("It looks like you did thing {n}")],
            optimal: false,
            reason: format!("You repeated step {n}"),
            suggestion: format!("Use `FEATURE{n}`.\nBenefit: Original: 4 steps, Suggested: 2 steps"),
        }
    }

    fn opt() -> WorkflowAssessment {
        WorkflowAssessment { action_list: vec!["It looks like you saved".into()], optimal: true, ..Default::default() }
    }

    #[test]
    fn prompt_lists_actions_in_order() {
        let p = build_phase2_prompt(&trace(&["Typed 5 in B2", "Bolded A1"])).unwrap();
        assert!(p.user.contains("1. Typed 5 in B2\n2. Bolded A1"));
        assert!(p.system.contains("Only include 3 most impactful suboptimal workflows and rank them by importance"));
        assert!(p.user.ends_with("Sheet snapshots:\nnone"));
    }

    #[test]
    fn prompt_labels_snapshots() {
        let mut t = trace(&["A"]);
        t.snapshots.push(SheetSnapshot { segment: 1, batch: 2, markdown: "| Budget |\n".into() });
        let p = build_phase2_prompt(&t).unwrap();
        assert!(p.user.ends_with("Sheet snapshots:\n[segment 1, batch 2]\n| Budget |"));
    }

    #[test]
    fn empty_trace_has_nothing_to_analyze() {
        assert!(matches!(build_phase2_prompt(&ActionTrace::default()), Err(AdvisorError::NothingToAnalyze)));
    }

    #[test]
    fn parses_minimal_instance() {
        let raw = r#"{"Workflows":[{"ActionList":["It looks like you used Find & Replace 4 times"],"Optimal":false,"Reason":"You repeated a manual edit","Suggestion":"Use a formula… Benefit: fewer steps"}]}"#;
        let parsed = parse_phase2_response(raw).unwrap();
        assert_eq!(parsed.len(), 1);
        assert!(!parsed[0].optimal);
        assert_eq!(parsed[0].benefit(), Some("fewer steps"));
        assert!(parsed[0].lint().is_empty());
    }

    #[test]
    fn empty_workflows() {
        assert!(parse_phase2_response(r#"{"Workflows":[]}"#).unwrap().is_empty());
    }

    #[test]
    fn suboptimal_without_suggestion_is_rejected() {
        let err = parse_phase2_response(r#"{"Workflows":[{"ActionList":[],"Optimal":false,"Reason":"You…"}]}"#).unwrap_err();
        assert!(matches!(err, ResponseError::Schema { ref field, .. } if field == "Workflows[0].Suggestion"));
    }

    #[test]
    fn missing_workflows_key() {
        let err = parse_phase2_response(r#"{"workflows":[]}"#).unwrap_err();
        assert!(matches!(err, ResponseError::Schema { ref field, .. } if field == "Workflows"));
    }

    #[test]
    fn optimal_entries_may_omit_text() {
        let parsed = parse_phase2_response(r#"{"Workflows":[{"ActionList":["It looks like you saved"],"Optimal":true}]}"#).unwrap();
        assert_eq!(parsed, vec![opt()]);
    }

    #[test]
    fn nested_field_errors_carry_the_index() {
        let err = parse_phase2_response(
            r#"{"Workflows":[{"ActionList":[],"Optimal":true},{"ActionList":[1],"Optimal":true}]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, ResponseError::Schema { ref field, .. } if field == "Workflows[1].ActionList[0]"));
    }

    #[test]
    fn style_drift_is_only_linted() {
        let a = WorkflowAssessment {
            action_list: vec!["Used Find".into()],
            optimal: false,
            reason: "Manual edits".into(),
            suggestion: "Use Flash Fill".into(),
        };
        let parsed = parse_phase2_response(&to_model_json(std::slice::from_ref(&a))).unwrap();
        assert_eq!(parsed, vec![a.clone()]);
        assert_eq!(
            a.lint(),
            vec![StyleLint::ActionPrefix { index: 0 }, StyleLint::ReasonPrefix, StyleLint::MissingBenefit]
        );
    }

    #[test]
    fn selection_filters_and_caps() {
        let q = select_recommendations(vec![subopt(0), opt(), subopt(1), subopt(2), subopt(3)]);
        assert_eq!(q.items, vec![subopt(0), subopt(1), subopt(2)]);
        assert_eq!(q.revealed, 0);
        assert!(select_recommendations(vec![opt(), opt()]).items.is_empty());
        assert_eq!(select_recommendations(vec![subopt(7)]).items.len(), 1);
    }

    #[test]
    fn reveal_sequence() {
        let mut q = select_recommendations(vec![subopt(0), subopt(1), subopt(2)]);
        let got: Vec<Reveal> = (0..4).map(|_| q.next_suggestion()).collect();
        assert_eq!(got[0], Reveal::Item { index: 0, assessment: subopt(0) });
        assert_eq!(got[2], Reveal::Item { index: 2, assessment: subopt(2) });
        assert_eq!(got[3], Reveal::Exhausted);
        assert_eq!(SuggestionQueue::default().next_suggestion(), Reveal::Exhausted);
    }

    #[test]
    fn revealed_count_survives_reload() {
        let mut q = select_recommendations(vec![subopt(0), subopt(1)]);
        q.next_suggestion();
        let mut reloaded: SuggestionQueue = serde_json::from_str(&q.to_json()).unwrap();
        assert_eq!(reloaded.revealed_items(), &[subopt(0)]);
        assert_eq!(reloaded.next_suggestion(), Reveal::Item { index: 1, assessment: subopt(1) });
    }

    #[test]
    fn suggestions_json_shape() {
        let q = select_recommendations(vec![subopt(0)]);
        let v: Value = serde_json::from_str(&q.to_json()).unwrap();
        assert_eq!(v["revealed"], 0);
        assert_eq!(v["items"][0]["Reason"], "You repeated step 0");
    }

    #[test]
    fn steps_and_benefit_split() {
        let a = subopt(1);
        assert_eq!(a.steps(), "Use `FEATURE1`.");
        assert_eq!(a.benefit(), Some("Original: 4 steps, Suggested: 2 steps"));
    }

    #[test]
    fn advise_reasks_once() {
        let good = to_model_json(&[subopt(0), opt()]);
        let mock = MockProvider::new(MockScript::new(Vec::<&str>::new(), ["Here are my thoughts.".to_owned(), good]));
        let q = advise(&trace(&["A"]), &mock).unwrap();
        assert_eq!(q.items, vec![subopt(0)]);
        assert_eq!(mock.captured().len(), 2);
    }

    fn arb_assessment() -> impl Strategy<Value = WorkflowAssessment> {
        (
            proptest::collection::vec("It looks like you [a-z ]{1,20}", 0..4),
            any::<bool>(),
            "You [a-z ]{1,20}",
            "[a-z][a-z `]{0,29}(\nBenefit: [a-z0-9 ]{1,20})?",
        )
            .prop_map(|(action_list, optimal, reason, suggestion)| WorkflowAssessment {
                action_list,
                optimal,
                reason,
                suggestion,
            })
    }

    proptest! {
        #[test]
        fn assessments_round_trip(items in proptest::collection::vec(arb_assessment(), 0..6)) {
            prop_assert_eq!(parse_phase2_response(&to_model_json(&items)).unwrap(), items);
        }

        #[test]
        fn queue_cap_and_reveal_bijection(items in proptest::collection::vec(arb_assessment(), 0..8), extra in 1usize..5) {
            let k = items.iter().filter(|a| !a.optimal).count();
            let mut q = select_recommendations(items);
            prop_assert_eq!(q.items.len(), k.min(MAX_SUGGESTIONS));
            let expected = q.items.clone();
            let mut seen = Vec::new();
            for _ in 0..expected.len() + extra {
                match q.next_suggestion() {
                    Reveal::Item { assessment, .. } => seen.push(assessment),
                    Reveal::Exhausted => {}
                }
            }
            prop_assert_eq!(seen, expected);
            prop_assert_eq!(q.next_suggestion(), Reveal::Exhausted);
        }
    }
}
