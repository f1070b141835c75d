//! Verifiable rewards: answer accuracy, format consistency, and their
//! weighted combination. All rewards are computable by a deterministic
//! program from the response text and the task label; there is no learned
//! reward model.

use std::collections::BTreeSet;

use crate::error::{CoreError, Result};
use crate::parser;
use crate::policy::Completion;
use crate::task::Task;

/// Weights for the combined reward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardWeights {
    pub lambda_acc: f64,
    pub lambda_fmt: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights { lambda_acc: 1.0, lambda_fmt: 1.0 }
    }
}

/// Per-completion reward components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardBreakdown {
    /// 1.0 iff the extracted answer set equals the gold set.
    pub r_acc: f64,
    /// 1.0 iff the response matches the canonical format.
    pub r_fmt: f64,
    /// `lambda_acc * r_acc + lambda_fmt * r_fmt`.
    pub total: f64,
}

/// Binary accuracy: exact set equality, no partial credit. An empty
/// prediction never matches; an empty gold set is a configuration error.
pub fn reward_accuracy(predicted: &BTreeSet<char>, gold: &BTreeSet<char>) -> Result<f64> {
    if gold.is_empty() {
        return Err(CoreError::Config("empty gold answer set".into()));
    }
    Ok(if predicted == gold { 1.0 } else { 0.0 })
}

/// Binary format reward from the canonical pattern.
pub fn reward_format(text: &str) -> f64 {
    if parser::validate_format(text) {
        1.0
    } else {
        0.0
    }
}

/// Weighted sum of the two rewards.
pub fn combine(r_acc: f64, r_fmt: f64, weights: RewardWeights) -> f64 {
    weights.lambda_acc * r_acc + weights.lambda_fmt * r_fmt
}

/// Grade one completion against its task.
///
/// Accuracy goes through answer extraction, so a malformed response scores
/// `r_acc = 0` regardless of its content.
pub fn grade_completion(
    completion: &Completion,
    task: &Task,
    weights: RewardWeights,
) -> Result<RewardBreakdown> {
    grade_text(&completion.text, task, weights)
}

/// Text-level grading used by both training and evaluation.
pub fn grade_text(text: &str, task: &Task, weights: RewardWeights) -> Result<RewardBreakdown> {
    let r_fmt = reward_format(text);
    let predicted = parser::extract_answer(text, task.option_count());
    let r_acc = reward_accuracy(&predicted, &task.gold)?;
    Ok(RewardBreakdown { r_acc, r_fmt, total: combine(r_acc, r_fmt, weights) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn set(s: &str) -> BTreeSet<char> {
        s.chars().collect()
    }

    fn task(gold: &str) -> Task {
        Task::new(
            "t".into(),
            vec![0.0; 4],
            vec!["w".into(), "x".into(), "y".into(), "z".into()],
            set(gold),
        )
        .unwrap()
    }

    #[test]
    fn accuracy_is_exact_set_equality() {
        assert_eq!(reward_accuracy(&set("D"), &set("D")).unwrap(), 1.0);
        assert_eq!(reward_accuracy(&set("AC"), &set("CA")).unwrap(), 1.0);
        assert_eq!(reward_accuracy(&set(""), &set("B")).unwrap(), 0.0);
        assert_eq!(reward_accuracy(&set("AB"), &set("A")).unwrap(), 0.0);
        assert!(reward_accuracy(&set("A"), &set("")).is_err());
    }

    #[test]
    fn format_reward_follows_validator() {
        assert_eq!(reward_format("<think>the bell rings</think> <answer>D</answer>"), 1.0);
        assert_eq!(reward_format("<think>x</think><answer>D"), 0.0);
        assert_eq!(reward_format(""), 0.0);
    }

    #[test]
    fn combine_is_the_weighted_sum() {
        let w = RewardWeights::default();
        assert_eq!(combine(1.0, 1.0, w), 2.0);
        assert_eq!(combine(0.0, 0.0, RewardWeights { lambda_acc: 3.0, lambda_fmt: 5.0 }), 0.0);
        assert_eq!(combine(1.0, 0.0, w), 1.0);
        assert_eq!(combine(1.0, 1.0, RewardWeights { lambda_acc: 0.5, lambda_fmt: 2.0 }), 2.5);
    }

    #[test]
    fn grading_composes_the_pipeline() {
        let w = RewardWeights::default();
        let t = task("B");
        let good = grade_text("<think>x</think><answer>B</answer>", &t, w).unwrap();
        assert_eq!((good.r_acc, good.r_fmt, good.total), (1.0, 1.0, 2.0));

        let wrong = grade_text("<think>x</think><answer>C</answer>", &t, w).unwrap();
        assert_eq!((wrong.r_acc, wrong.r_fmt, wrong.total), (0.0, 1.0, 1.0));

        // right letter inside a malformed response still scores zero
        let malformed = grade_text("B <answer>B</answer>", &t, w).unwrap();
        assert_eq!((malformed.r_acc, malformed.r_fmt, malformed.total), (0.0, 0.0, 0.0));
    }

    #[test]
    fn matching_gold_never_decreases_total() {
        let w = RewardWeights::default();
        let text = "<think>x</think><answer>B</answer>";
        let mismatch = grade_text(text, &task("C"), w).unwrap();
        let matching = grade_text(text, &task("B"), w).unwrap();
        assert!(matching.total >= mismatch.total);
    }
}
