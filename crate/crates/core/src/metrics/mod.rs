//! Pixel accuracy and mean IoU over non-void pixels, and matrix heatmaps.

mod heatmap;

use serde::{Deserialize, Serialize};

pub use heatmap::{encode_pgm, render_matrix_heatmap, DEFAULT_BLOCK, DEFAULT_GAMMA};

use crate::confusion::{accumulate_counts, CountMatrix, PixelMask};
use crate::data::{LabelMap, LabelSet};
use crate::error::{Error, Result};

/// Scores as written to `eval` JSON; `per_class_iou` is `null` for classes absent
/// from both prediction and ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub pixel_accuracy: f64,
    pub mean_iou: f64,
    pub per_class_iou: Vec<Option<f64>>,
    pub n_pixels_scored: u64,
}

/// `(prediction, truth)` tallies for scoring; per-image tallies merge by addition.
pub fn evaluation_counts(
    pred: &LabelMap,
    gt: &LabelMap,
    labels: &LabelSet,
    mask: Option<&PixelMask>,
) -> Result<CountMatrix> {
    let full;
    let mask = match mask {
        Some(m) => m,
        None => {
            full = PixelMask::full(gt.height(), gt.width());
            &full
        }
    };
    accumulate_counts(gt, pred, mask, labels)
}

pub fn accuracy_from_counts(counts: &CountMatrix) -> Result<f64> {
    let total = counts.total();
    if total == 0 {
        return Err(Error::NoValidPixels);
    }
    Ok(counts.trace() as f64 / total as f64)
}

/// Per-class `TP / (TP + FP + FN)`, `None` where the union is empty, and their mean.
pub fn iou_from_counts(counts: &CountMatrix) -> Result<(f64, Vec<Option<f64>>)> {
    let n = counts.size();
    let per_class: Vec<Option<f64>> = (0..n)
        .map(|l| {
            let tp = counts.get(l, l);
            let predicted: u64 = (0..n).map(|t| counts.get(l, t)).sum();
            let actual = counts.column_total(l);
            let union = predicted + actual - tp;
            (union > 0).then(|| tp as f64 / union as f64)
        })
        .collect();
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    if present.is_empty() {
        return Err(Error::NoScorableClasses);
    }
    Ok((
        present.iter().sum::<f64>() / present.len() as f64,
        per_class,
    ))
}

pub fn report_from_counts(counts: &CountMatrix) -> Result<EvalReport> {
    let pixel_accuracy = accuracy_from_counts(counts)?;
    let (mean_iou, per_class_iou) = iou_from_counts(counts)?;
    Ok(EvalReport {
        pixel_accuracy,
        mean_iou,
        per_class_iou,
        n_pixels_scored: counts.total(),
    })
}

/// Fraction of non-void ground-truth pixels predicted correctly.
pub fn pixel_accuracy(pred: &LabelMap, gt: &LabelMap, labels: &LabelSet) -> Result<f64> {
    accuracy_from_counts(&evaluation_counts(pred, gt, labels, None)?)
}

pub fn mean_iou(
    pred: &LabelMap,
    gt: &LabelMap,
    labels: &LabelSet,
) -> Result<(f64, Vec<Option<f64>>)> {
    iou_from_counts(&evaluation_counts(pred, gt, labels, None)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn map(v: &[u16]) -> LabelMap {
        LabelMap::new(1, v.len(), v.to_vec()).unwrap()
    }

    #[test]
    fn accuracy_examples() {
        let labels = LabelSet::new(3, None, Some(99)).unwrap();
        let gt = map(&[0, 1, 2, 1]);
        assert_eq!(pixel_accuracy(&gt, &gt, &labels).unwrap(), 1.0);
        assert_eq!(
            pixel_accuracy(&map(&[1, 2, 0, 0]), &gt, &labels).unwrap(),
            0.0
        );
        let gt = map(&[0, 1, 2, 99]);
        assert_eq!(
            pixel_accuracy(&map(&[0, 1, 2, 0]), &gt, &labels).unwrap(),
            1.0
        );
        let all_void = map(&[99, 99]);
        assert!(matches!(
            pixel_accuracy(&map(&[0, 1]), &all_void, &labels),
            Err(Error::NoValidPixels)
        ));
    }

    #[test]
    fn iou_examples() {
        let labels = LabelSet::plain(2).unwrap();
        let gt = map(&[0, 0, 1, 1]);
        assert_eq!(mean_iou(&gt, &gt, &labels).unwrap().0, 1.0);

        let (mean, per) = mean_iou(&map(&[0, 1, 1, 1]), &gt, &labels).unwrap();
        assert_eq!(per, vec![Some(0.5), Some(2.0 / 3.0)]);
        assert!((mean - 7.0 / 12.0).abs() < 1e-15);
        assert!((mean - 0.5833).abs() < 1e-4);

        let labels3 = LabelSet::plain(3).unwrap();
        let (mean, per) = mean_iou(&map(&[0, 1, 1, 1]), &gt, &labels3).unwrap();
        assert_eq!(per[2], None);
        assert!((mean - 7.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn report_mean_matches_entries() {
        let labels = LabelSet::plain(4).unwrap();
        let r = report_from_counts(
            &evaluation_counts(
                &map(&[0, 1, 1, 3, 3]),
                &map(&[0, 0, 1, 3, 1]),
                &labels,
                None,
            )
            .unwrap(),
        )
        .unwrap();
        let present: Vec<f64> = r.per_class_iou.iter().flatten().copied().collect();
        assert!((r.mean_iou - present.iter().sum::<f64>() / present.len() as f64).abs() < 1e-12);
        assert_eq!(r.n_pixels_scored, 5);
        let json = serde_json::to_value(&r).unwrap();
        assert!(json["per_class_iou"][2].is_null());
    }

    fn arb_pair() -> impl Strategy<Value = (Vec<u16>, Vec<u16>)> {
        (1usize..50).prop_flat_map(|n| {
            (
                prop::collection::vec(0u16..4, n),
                prop::collection::vec(0u16..4, n),
            )
        })
    }

    proptest! {
        #[test]
        fn scores_are_permutation_invariant((p, g) in arb_pair()) {
            let labels = LabelSet::plain(4).unwrap();
            let perm = [2u16, 0, 3, 1];
            let pp: Vec<u16> = p.iter().map(|&v| perm[v as usize]).collect();
            let gp: Vec<u16> = g.iter().map(|&v| perm[v as usize]).collect();
            let a = pixel_accuracy(&map(&p), &map(&g), &labels).unwrap();
            let b = pixel_accuracy(&map(&pp), &map(&gp), &labels).unwrap();
            prop_assert_eq!(a, b);
            let (ma, _) = mean_iou(&map(&p), &map(&g), &labels).unwrap();
            let (mb, _) = mean_iou(&map(&pp), &map(&gp), &labels).unwrap();
            prop_assert!((ma - mb).abs() < 1e-12);
        }

        #[test]
        fn accuracy_is_trace_mass((p, g) in arb_pair()) {
            let labels = LabelSet::plain(4).unwrap();
            let counts = accumulate_counts(
                &map(&g), &map(&p), &PixelMask::full(1, g.len()), &labels).unwrap();
            let direct = p.iter().zip(&g).filter(|(a, b)| a == b).count() as f64 / g.len() as f64;
            prop_assert_eq!(counts.trace() as f64 / counts.total() as f64, direct);
            prop_assert_eq!(pixel_accuracy(&map(&p), &map(&g), &labels).unwrap(), direct);
        }
    }
}
