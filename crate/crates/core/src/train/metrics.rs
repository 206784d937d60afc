//! Decoding metrics: Levenshtein distance between label sequences and the
//! length-normalized mean edit distance over a test set.

use serde::{Deserialize, Serialize};

use crate::ctc::LabelSequence;

/// Levenshtein distance with unit insert/delete/substitute costs.
pub fn edit_distance(a: &LabelSequence, b: &LabelSequence) -> usize {
    let (a, b) = (a.as_slice(), b.as_slice());
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, &ca) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let sub = diag + usize::from(ca != cb);
            diag = row[j + 1];
            row[j + 1] = sub.min(row[j] + 1).min(diag + 1);
        }
    }
    row[b.len()]
}

/// Mean over (decoded, truth) pairs of ED/|truth|. Truths must be
/// non-empty; the ratio may exceed 1 when the decode is longer than the
/// truth.
pub fn mean_normalized_edit_distance(pairs: &[(LabelSequence, LabelSequence)]) -> f64 {
    debug_assert!(pairs.iter().all(|(_, t)| !t.is_empty()));
    if pairs.is_empty() {
        return 0.0;
    }
    let total: f64 = pairs
        .iter()
        .map(|(d, t)| edit_distance(d, t) as f64 / t.len() as f64)
        .sum();
    total / pairs.len() as f64
}

/// One evaluation record. `seconds` is wall clock and therefore excluded
/// from the serialized log so that identical configurations produce
/// byte-identical metrics files.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Metrics {
    pub iteration: usize,
    /// Mean per-sample training loss over the preceding interval.
    pub loss: f64,
    /// Mean normalized edit distance over the test set.
    pub cled: f64,
    #[serde(skip)]
    pub seconds: f64,
}
