//! Group-level prediction, accuracy and probability-averaging ensembles.

use serde::{Deserialize, Serialize};

use crate::featurize::{make_batches, FeaturizedGroup};
use crate::model::{predict_group, Model, ModelError};
use crate::tensor::Scalar;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EvalError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("ensemble needs at least one member")]
    NoMembers,
    #[error("ensemble members disagree: {0}")]
    Mismatch(String),
}

/// Scored candidates of one question group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupPrediction {
    pub group_id: String,
    pub example_ids: Vec<String>,
    pub probabilities: Vec<f64>,
    pub chosen: usize,
    /// Index of the candidate labeled 1, when labels are known.
    pub correct: Option<usize>,
}

impl GroupPrediction {
    pub fn new(
        group_id: String,
        example_ids: Vec<String>,
        probabilities: Vec<f64>,
        correct: Option<usize>,
    ) -> Result<Self, EvalError> {
        let chosen = predict_group(&probabilities)?;
        Ok(Self {
            group_id,
            example_ids,
            probabilities,
            chosen,
            correct,
        })
    }

    pub fn chosen_example_id(&self) -> &str {
        &self.example_ids[self.chosen]
    }

    pub fn is_correct(&self) -> Option<bool> {
        self.correct.map(|c| c == self.chosen)
    }
}

/// Runs the model in evaluation mode over every group.
pub fn predict_groups<T: Scalar>(
    model: &Model<T>,
    groups: &[FeaturizedGroup],
    batch_size: usize,
) -> Result<Vec<GroupPrediction>, EvalError> {
    let mut probs = Vec::new();
    for batch in make_batches(groups, batch_size, None) {
        probs.extend(model.predict(&batch)?);
    }
    let mut next = probs.into_iter();
    groups
        .iter()
        .map(|g| {
            let p: Vec<f64> = next.by_ref().take(g.examples.len()).collect();
            GroupPrediction::new(
                g.group_id.clone(),
                g.examples.iter().map(|e| e.example_id.clone()).collect(),
                p,
                g.examples.iter().position(|e| e.label == Some(1)),
            )
        })
        .collect()
}

/// Fraction of labeled groups whose chosen candidate is the correct one;
/// `None` when no group carries labels.
pub fn accuracy(predictions: &[GroupPrediction]) -> Option<f64> {
    let scored: Vec<bool> = predictions.iter().filter_map(GroupPrediction::is_correct).collect();
    if scored.is_empty() {
        return None;
    }
    Some(scored.iter().filter(|&&c| c).count() as f64 / scored.len() as f64)
}

/// Per-candidate arithmetic mean of member probabilities, then the group
/// argmax. Members must cover the same groups and candidates in order.
pub fn average_probabilities(members: &[Vec<GroupPrediction>]) -> Result<Vec<GroupPrediction>, EvalError> {
    let first = members.first().ok_or(EvalError::NoMembers)?;
    let k = members.len() as f64;
    first
        .iter()
        .enumerate()
        .map(|(gi, g)| {
            let mut sum = vec![0.0; g.probabilities.len()];
            for member in members {
                let other = member
                    .get(gi)
                    .filter(|o| o.group_id == g.group_id && o.example_ids == g.example_ids)
                    .ok_or_else(|| EvalError::Mismatch(format!("group {} differs", g.group_id)))?;
                for (s, p) in sum.iter_mut().zip(&other.probabilities) {
                    *s += p;
                }
            }
            GroupPrediction::new(
                g.group_id.clone(),
                g.example_ids.clone(),
                sum.into_iter().map(|s| s / k).collect(),
                g.correct,
            )
        })
        .collect::<Result<Vec<_>, _>>()
        .and_then(|out| {
            if members.iter().any(|m| m.len() != first.len()) {
                Err(EvalError::Mismatch("different group counts".into()))
            } else {
                Ok(out)
            }
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(id: &str, probs: Vec<f64>, correct: Option<usize>) -> GroupPrediction {
        let ids = (0..probs.len()).map(|i| format!("{id}-{i}")).collect();
        GroupPrediction::new(id.into(), ids, probs, correct).unwrap()
    }

    #[test]
    fn perfect_probabilities_score_one() {
        let preds = vec![
            pred("a", vec![0.9, 0.1], Some(0)),
            pred("b", vec![0.2, 0.8], Some(1)),
        ];
        assert_eq!(accuracy(&preds), Some(1.0));
    }

    #[test]
    fn ties_choose_first_candidate() {
        let preds = vec![
            pred("a", vec![0.5, 0.5], Some(0)),
            pred("b", vec![0.5, 0.5], Some(1)),
            pred("c", vec![0.5, 0.5], Some(0)),
        ];
        assert!(preds.iter().all(|p| p.chosen == 0));
        assert!((accuracy(&preds).unwrap() - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn unlabeled_groups_have_no_accuracy() {
        assert_eq!(accuracy(&[pred("a", vec![0.3], None)]), None);
    }

    #[test]
    fn averaging_two_members() {
        let a = vec![pred("g", vec![0.2, 0.9], Some(0))];
        let b = vec![pred("g", vec![0.4, 0.1], Some(0))];
        let avg = average_probabilities(&[a.clone(), b]).unwrap();
        assert!((avg[0].probabilities[0] - 0.3).abs() < 1e-15);
        assert!((avg[0].probabilities[1] - 0.5).abs() < 1e-15);
        assert_eq!(avg[0].chosen, 1);
        assert_eq!(average_probabilities(&[a.clone()]).unwrap(), a);
        assert_eq!(average_probabilities(&[]), Err(EvalError::NoMembers));
    }

    #[test]
    fn mismatched_members_are_rejected() {
        let a = vec![pred("g", vec![0.2, 0.9], None)];
        let b = vec![pred("h", vec![0.2, 0.9], None)];
        assert!(matches!(average_probabilities(&[a, b]), Err(EvalError::Mismatch(_))));
    }
}
