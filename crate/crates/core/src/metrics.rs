//! Phrase-level precision/recall/F1, token accuracy, and confusion diagnostics.

use std::collections::HashSet;

use serde::Serialize;

use crate::bea::Posterior;
use crate::error::{Error, Result};
use crate::spans::EntitySpan;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Score {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Score {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            precision,
            recall,
            f1,
            tp,
            fp,
            fn_,
        }
    }
}

/// Micro-averaged exact-match span F1 over a corpus of sentences.
pub fn entity_f1<P, G>(pred: &[P], gold: &[G]) -> Result<Score>
where
    P: AsRef<[EntitySpan]>,
    G: AsRef<[EntitySpan]>,
{
    if pred.len() != gold.len() {
        return Err(Error::LengthMismatch {
            expected: gold.len(),
            found: pred.len(),
        });
    }
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (p, g) in pred.iter().zip(gold) {
        let g: HashSet<&EntitySpan> = g.as_ref().iter().collect();
        let p: HashSet<&EntitySpan> = p.as_ref().iter().collect();
        let hits = p.intersection(&g).count();
        tp += hits;
        fp += p.len() - hits;
        fn_ += g.len() - hits;
    }
    Ok(Score::from_counts(tp, fp, fn_))
}

/// Fraction of equal positions. Two empty sequences score 1.
pub fn token_accuracy<T: PartialEq>(pred: &[T], gold: &[T]) -> Result<f64> {
    if pred.len() != gold.len() {
        return Err(Error::LengthMismatch {
            expected: gold.len(),
            found: pred.len(),
        });
    }
    if gold.is_empty() {
        return Ok(1.0);
    }
    let hits = pred.iter().zip(gold).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / gold.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SourceConfusion {
    /// Row-normalized expected confusion, `matrix[true][predicted]`.
    pub matrix: Vec<Vec<f64>>,
    pub mean_recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfusionReport {
    pub sources: Vec<SourceConfusion>,
}

pub fn confusion_report(posterior: &Posterior) -> ConfusionReport {
    let matrices = posterior.state.normalized_confusions();
    ConfusionReport {
        sources: matrices
            .into_iter()
            .zip(&posterior.mean_recall)
            .map(|(m, &mean_recall)| SourceConfusion {
                matrix: m.outer_iter().map(|row| row.to_vec()).collect(),
                mean_recall,
            })
            .collect(),
    }
}
