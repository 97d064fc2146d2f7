//! Accuracy, selective prediction, RMSE and rank correlation.

use serde::{Deserialize, Serialize};

/// Coverage and accuracy over the records whose confidence reaches a
/// threshold. `accuracy` is `None` when nothing is covered.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Selective {
    pub threshold: f64,
    pub coverage: f64,
    pub accuracy: Option<f64>,
}

pub fn accuracy(correct: &[bool]) -> Option<f64> {
    if correct.is_empty() {
        return None;
    }
    Some(correct.iter().filter(|&&c| c).count() as f64 / correct.len() as f64)
}

pub fn selective(confidence: &[f64], correct: &[bool], threshold: f64) -> Selective {
    assert_eq!(confidence.len(), correct.len());
    let covered: Vec<bool> = confidence
        .iter()
        .zip(correct)
        .filter(|(&c, _)| c >= threshold)
        .map(|(_, &ok)| ok)
        .collect();
    let coverage = if confidence.is_empty() { 0.0 } else { covered.len() as f64 / confidence.len() as f64 };
    Selective { threshold, coverage, accuracy: accuracy(&covered) }
}

/// Root mean squared difference over all steps and output dimensions.
pub fn rmse(a: &[Vec<f64>], b: &[Vec<f64>]) -> Option<f64> {
    assert_eq!(a.len(), b.len());
    let mut sum = 0.0;
    let mut n = 0usize;
    for (x, y) in a.iter().zip(b) {
        for (p, q) in x.iter().zip(y) {
            sum += (p - q) * (p - q);
            n += 1;
        }
    }
    (n > 0).then(|| (sum / n as f64).sqrt())
}

/// Square root of the mean of per-step, per-dimension variances.
pub fn rms_spread(variances: &[Vec<f64>]) -> Option<f64> {
    let n: usize = variances.iter().map(Vec::len).sum();
    (n > 0).then(|| (variances.iter().flatten().sum::<f64>() / n as f64).sqrt())
}

/// Ranks starting at 1; ties share their average rank.
pub fn ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    if x.len() < 2 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

/// Spearman rank correlation; `None` when either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    pearson(&ranks(x), &ranks(y))
}
