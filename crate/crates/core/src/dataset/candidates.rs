use std::cmp::Ordering;

use super::{Candidate, DatasetConfig, Detection};

/// Raw detection index for each of the `N_o` slots; slot 0 is background (`None`).
///
/// Detections outside the prior union or with score at or below the threshold
/// are dropped. Survivors are ranked by score (ties: category id, then box
/// corners ascending), the best `N_o - 1` are kept, and the list is padded by
/// cycling through the survivors in rank order.
pub fn select_candidate_sources(detections: &[Detection], config: &DatasetConfig) -> Vec<Option<usize>> {
    let mut survivors: Vec<usize> = detections
        .iter()
        .enumerate()
        .filter(|(_, d)| {
            config.prior_union.contains(&d.category_id) && d.score > config.score_threshold
        })
        .map(|(i, _)| i)
        .collect();
    survivors.sort_by(|&a, &b| rank(&detections[a], &detections[b]));
    survivors.truncate(config.candidates.saturating_sub(1));

    let mut slots = Vec::with_capacity(config.candidates);
    slots.push(None);
    if survivors.is_empty() {
        slots.resize(config.candidates, None);
    } else {
        slots.extend(survivors.iter().cycle().take(config.candidates - 1).map(|&i| Some(i)));
    }
    slots
}

fn rank(a: &Detection, b: &Detection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.category_id.cmp(&b.category_id))
        .then_with(|| {
            a.bbox
                .iter()
                .zip(&b.bbox)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
}

/// Builds the `N_o` candidate slots of one frame with boxes normalized by `image_size = [W, H]`.
pub fn select_candidates(
    detections: &[Detection],
    config: &DatasetConfig,
    image_size: [f64; 2],
) -> Vec<Candidate> {
    let [w, h] = image_size;
    select_candidate_sources(detections, config)
        .into_iter()
        .map(|src| match src {
            None => Candidate::background(config.categories),
            Some(i) => {
                let d = &detections[i];
                let [x1, y1, x2, y2] = d.bbox;
                Candidate {
                    bbox: [
                        (x1 + x2) / (2.0 * w),
                        (y1 + y2) / (2.0 * h),
                        (x2 - x1) / w,
                        (y2 - y1) / h,
                    ],
                    score: d.score,
                    category_id: d.category_id,
                }
            }
        })
        .collect()
}
