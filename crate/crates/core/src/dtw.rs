//! Dynamic time warping distance and the 1-NN classifier built on it.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::{Dataset, WindowedSequence};
use crate::error::CoreError;
use crate::fmath;

/// Classic DTW with symmetric unit steps (match, insert, delete), Euclidean
/// local distance, and no warping band. `O(t_a * t_b)` time, `O(t_b)` memory.
pub fn dtw_distance(a: &WindowedSequence, b: &WindowedSequence) -> Result<f64, CoreError> {
    if a.dim() != b.dim() {
        return Err(CoreError::shape(format!(
            "step dimensions differ: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    let (ta, tb) = (a.steps(), b.steps());
    let mut prev = vec![f64::INFINITY; tb + 1];
    let mut curr = vec![f64::INFINITY; tb + 1];
    prev[0] = 0.0;
    for i in 1..=ta {
        curr[0] = f64::INFINITY;
        let ra = a.step(i - 1);
        for j in 1..=tb {
            let rb = b.step(j - 1);
            let mut sq = 0.0;
            for (x, y) in ra.iter().zip(rb) {
                let d = x - y;
                sq += d * d;
            }
            let local = fmath::sqrt(sq);
            let best = prev[j - 1].min(prev[j]).min(curr[j - 1]);
            curr[j] = local + best;
        }
        core::mem::swap(&mut prev, &mut curr);
    }
    Ok(prev[tb])
}

/// Distance from `query` to the nearest training pixel of each class.
/// Classes with no training pixel get infinity.
pub fn class_distances(train: &Dataset, query: &WindowedSequence) -> Result<Vec<f64>, CoreError> {
    let mut best = vec![f64::INFINITY; train.class_count()];
    for p in &train.pixels {
        let d = dtw_distance(&p.sequence, query)?;
        if d < best[p.label] {
            best[p.label] = d;
        }
    }
    Ok(best)
}

/// 1-NN label under DTW. Ties on distance resolve to the lexicographically
/// smallest pixel id so results do not depend on dataset order.
pub fn knn_dtw_classify(train: &Dataset, query: &WindowedSequence) -> Result<usize, CoreError> {
    if train.is_empty() {
        return Err(CoreError::invalid("empty training set"));
    }
    let mut best: Option<(f64, &str, usize)> = None;
    for p in &train.pixels {
        let d = dtw_distance(&p.sequence, query)?;
        let better = match &best {
            None => true,
            Some((bd, bid, _)) => d < *bd || (d == *bd && p.pixel_id.as_str() < *bid),
        };
        if better {
            best = Some((d, p.pixel_id.as_str(), p.label));
        }
    }
    Ok(best.expect("nonempty train set").2)
}

/// Pseudo-probabilities from inverse nearest-class distances, for ranking
/// metrics. The argmax agrees with [`knn_dtw_classify`] up to distance ties.
pub fn knn_dtw_scores(train: &Dataset, query: &WindowedSequence) -> Result<Vec<f64>, CoreError> {
    let dists = class_distances(train, query)?;
    let mut weights: Vec<f64> = dists
        .iter()
        .map(|&d| if d.is_finite() { 1.0 / (d + 1e-9) } else { 0.0 })
        .collect();
    let sum: f64 = weights.iter().sum();
    if sum <= 0.0 {
        return Err(CoreError::invalid("no finite class distance"));
    }
    for w in weights.iter_mut() {
        *w /= sum;
    }
    Ok(weights)
}
