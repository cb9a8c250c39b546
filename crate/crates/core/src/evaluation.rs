//! Accuracy and macro-F1 for task and concept predictions.

use serde::{Deserialize, Serialize};

use crate::data::Example;
use crate::error::{Error, Result};
use crate::model::{predict_all, MaskSet, ModelParams, Prediction};

pub fn accuracy(preds: &[usize], golds: &[usize]) -> Result<f64> {
    check_lengths(preds, golds)?;
    let hits = preds.iter().zip(golds).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Unweighted mean of per-class F1. Classes absent from both predictions and
/// gold labels are left out of the mean; a class with `P + R = 0` scores 0.
pub fn macro_f1(preds: &[usize], golds: &[usize], num_classes: usize) -> Result<f64> {
    check_lengths(preds, golds)?;
    if let Some(&bad) = preds.iter().chain(golds).find(|&&c| c >= num_classes) {
        return Err(Error::config(format!("class {bad} outside 0..{num_classes}")));
    }
    let mut tp = vec![0usize; num_classes];
    let mut pred_n = vec![0usize; num_classes];
    let mut gold_n = vec![0usize; num_classes];
    for (&p, &g) in preds.iter().zip(golds) {
        pred_n[p] += 1;
        gold_n[g] += 1;
        if p == g {
            tp[p] += 1;
        }
    }
    let mut sum = 0.0;
    let mut counted = 0;
    for c in 0..num_classes {
        if pred_n[c] == 0 && gold_n[c] == 0 {
            continue;
        }
        counted += 1;
        let precision = if pred_n[c] > 0 { tp[c] as f64 / pred_n[c] as f64 } else { 0.0 };
        let recall = if gold_n[c] > 0 { tp[c] as f64 / gold_n[c] as f64 } else { 0.0 };
        if precision + recall > 0.0 {
            sum += 2.0 * precision * recall / (precision + recall);
        }
    }
    Ok(sum / counted as f64)
}

fn check_lengths(preds: &[usize], golds: &[usize]) -> Result<()> {
    if preds.is_empty() {
        return Err(Error::config("metrics need at least one prediction"));
    }
    if preds.len() != golds.len() {
        return Err(Error::Dimension {
            context: "predictions vs gold labels".into(),
            expected: golds.len(),
            actual: preds.len(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub accuracy: f64,
    pub macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptScores {
    pub concept: String,
    pub accuracy: f64,
    pub macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub task: Scores,
    pub concepts: Vec<ConceptScores>,
    /// Unweighted mean over concepts.
    pub concept_mean: Scores,
}

impl MetricReport {
    /// Scores from precomputed predictions.
    pub fn from_predictions(
        preds: &[Prediction],
        examples: &[Example],
        concept_names: &[String],
        concept_classes: usize,
        task_classes: usize,
    ) -> Result<Self> {
        let task_pred: Vec<usize> = preds.iter().map(|p| p.task).collect();
        let task_gold: Vec<usize> = examples.iter().map(|e| e.task_label).collect();
        let task = Scores {
            accuracy: accuracy(&task_pred, &task_gold)?,
            macro_f1: macro_f1(&task_pred, &task_gold, task_classes)?,
        };
        let mut concepts = Vec::with_capacity(concept_names.len());
        for (k, name) in concept_names.iter().enumerate() {
            let p: Vec<usize> = preds.iter().map(|pr| pr.concepts[k]).collect();
            let g: Vec<usize> = examples.iter().map(|e| e.concept_labels[k]).collect();
            concepts.push(ConceptScores {
                concept: name.clone(),
                accuracy: accuracy(&p, &g)?,
                macro_f1: macro_f1(&p, &g, concept_classes)?,
            });
        }
        let n = concepts.len().max(1) as f64;
        let concept_mean = Scores {
            accuracy: concepts.iter().map(|c| c.accuracy).sum::<f64>() / n,
            macro_f1: concepts.iter().map(|c| c.macro_f1).sum::<f64>() / n,
        };
        Ok(Self {
            task,
            concepts,
            concept_mean,
        })
    }

    /// Plain-text table with percentages to one decimal.
    pub fn to_table(&self) -> String {
        let mut s = String::from("target          acc(%)  macro-F1(%)\n");
        s += &format!(
            "{:<14} {:>7.1} {:>12.1}\n",
            "task",
            self.task.accuracy * 100.0,
            self.task.macro_f1 * 100.0
        );
        for c in &self.concepts {
            s += &format!(
                "{:<14} {:>7.1} {:>12.1}\n",
                c.concept,
                c.accuracy * 100.0,
                c.macro_f1 * 100.0
            );
        }
        s += &format!(
            "{:<14} {:>7.1} {:>12.1}\n",
            "concepts(mean)",
            self.concept_mean.accuracy * 100.0,
            self.concept_mean.macro_f1 * 100.0
        );
        s
    }
}

/// One prediction pass over `examples`.
pub fn evaluate_split(
    examples: &[Example],
    params: &ModelParams,
    masks: &MaskSet,
    concept_names: &[String],
) -> Result<MetricReport> {
    let preds = predict_all(examples, params, masks)?;
    MetricReport::from_predictions(
        &preds,
        examples,
        concept_names,
        params.concept_classes(),
        params.task_classes(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_cases() {
        assert_eq!(accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(accuracy(&[0, 0], &[1, 1]).unwrap(), 0.0);
        assert_eq!(accuracy(&[1, 1, 0, 1], &[1, 1, 1, 1]).unwrap(), 0.75);
        assert!(accuracy(&[], &[]).is_err());
        assert!(accuracy(&[1], &[1, 2]).is_err());
    }

    #[test]
    fn macro_f1_cases() {
        assert_eq!(macro_f1(&[0, 1, 2], &[0, 1, 2], 3).unwrap(), 1.0);
        // class 0: P=1, R=1/2 -> 2/3; class 1: P=2/3, R=1 -> 0.8
        let m = macro_f1(&[0, 1, 1, 1], &[0, 0, 1, 1], 2).unwrap();
        assert!((m - (2.0 / 3.0 + 0.8) / 2.0).abs() < 1e-15);
        assert!((m - 0.733_333_333_333_333_3).abs() < 1e-12);
        assert_eq!(macro_f1(&[1, 1, 1], &[0, 0, 0], 2).unwrap(), 0.0);
        // class 2 never appears and is excluded from the mean
        assert_eq!(macro_f1(&[0, 1], &[0, 1], 3).unwrap(), 1.0);
        assert!(macro_f1(&[], &[], 2).is_err());
        assert!(macro_f1(&[3], &[0], 2).is_err());
    }

    proptest::proptest! {
        #[test]
        fn permutation_invariant(pairs in proptest::collection::vec((0usize..4, 0usize..4), 1..60), rot in 0usize..60) {
            let (p, g): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
            let r = rot % p.len();
            let mut p2 = p.clone();
            let mut g2 = g.clone();
            p2.rotate_left(r);
            g2.rotate_left(r);
            proptest::prop_assert_eq!(accuracy(&p, &g).unwrap(), accuracy(&p2, &g2).unwrap());
            let a = macro_f1(&p, &g, 4).unwrap();
            let b = macro_f1(&p2, &g2, 4).unwrap();
            proptest::prop_assert!((a - b).abs() < 1e-12);
            proptest::prop_assert!((0.0..=1.0).contains(&a));
        }

        #[test]
        fn perfect_predictions_give_macro_equal_accuracy(g in proptest::collection::vec(0usize..5, 1..40)) {
            proptest::prop_assert_eq!(macro_f1(&g, &g, 5).unwrap(), accuracy(&g, &g).unwrap());
        }
    }
}
