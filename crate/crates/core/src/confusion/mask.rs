//! Ground-truth region borders and their square dilation.

use crate::data::LabelMap;

/// Which pixels take part in statistics (`true` = included).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelMask {
    height: usize,
    width: usize,
    included: Vec<bool>,
}

impl PixelMask {
    pub fn full(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            included: vec![true; height * width],
        }
    }

    pub fn from_included(height: usize, width: usize, included: Vec<bool>) -> Option<Self> {
        (included.len() == height * width).then_some(Self {
            height,
            width,
            included,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn included(&self) -> &[bool] {
        &self.included
    }

    pub fn is_included(&self, site: usize) -> bool {
        self.included[site]
    }

    pub fn n_included(&self) -> usize {
        self.included.iter().filter(|&&b| b).count()
    }

    pub fn n_excluded(&self) -> usize {
        self.included.len() - self.n_included()
    }
}

/// Pixels with at least one 8-connected neighbour of a different label.
///
/// Void is compared like any other label value.
pub fn border_pixels(gt: &LabelMap) -> Vec<bool> {
    let (h, w) = (gt.height(), gt.width());
    let mut border = vec![false; h * w];
    for r in 0..h {
        for c in 0..w {
            let here = gt.get(r, c);
            'scan: for dr in -1isize..=1 {
                for dc in -1isize..=1 {
                    if dr == 0 && dc == 0 {
                        continue;
                    }
                    let (nr, nc) = (r as isize + dr, c as isize + dc);
                    if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                        continue;
                    }
                    if gt.get(nr as usize, nc as usize) != here {
                        border[r * w + c] = true;
                        break 'scan;
                    }
                }
            }
        }
    }
    border
}

/// Sliding-window OR of width `2 * radius + 1` along one line.
fn dilate_line(src: &[bool], dst: &mut [bool], radius: usize) {
    let n = src.len();
    // prefix[i] = number of set entries in src[..i]
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0usize);
    for &b in src {
        prefix.push(prefix.last().unwrap() + b as usize);
    }
    for (i, out) in dst.iter_mut().enumerate() {
        let lo = i.saturating_sub(radius);
        let hi = (i + radius + 1).min(n);
        *out = prefix[hi] > prefix[lo];
    }
}

/// Square (Chebyshev) dilation of `set` by `radius`, done as a row pass then a column pass.
pub fn dilate(set: &[bool], height: usize, width: usize, radius: usize) -> Vec<bool> {
    if radius == 0 {
        return set.to_vec();
    }
    let mut rows = vec![false; height * width];
    for r in 0..height {
        let range = r * width..(r + 1) * width;
        dilate_line(&set[range.clone()], &mut rows[range], radius);
    }
    let mut out = vec![false; height * width];
    let mut col_in = vec![false; height];
    let mut col_out = vec![false; height];
    for c in 0..width {
        for r in 0..height {
            col_in[r] = rows[r * width + c];
        }
        dilate_line(&col_in, &mut col_out, radius);
        for r in 0..height {
            out[r * width + c] = col_out[r];
        }
    }
    out
}

/// Excludes every pixel within Chebyshev distance `radius` of a ground-truth border.
pub fn border_mask(gt: &LabelMap, radius: usize) -> PixelMask {
    let (h, w) = (gt.height(), gt.width());
    let excluded = dilate(&border_pixels(gt), h, w, radius);
    PixelMask {
        height: h,
        width: w,
        included: excluded.into_iter().map(|e| !e).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Exclusion by direct definition: any border pixel within the Chebyshev ball.
    fn brute_force_excluded(gt: &LabelMap, radius: usize) -> Vec<bool> {
        let (h, w) = (gt.height() as isize, gt.width() as isize);
        let is_border = |r: isize, c: isize| {
            let mut any = false;
            for nr in r - 1..=r + 1 {
                for nc in c - 1..=c + 1 {
                    if (nr, nc) != (r, c)
                        && (0..h).contains(&nr)
                        && (0..w).contains(&nc)
                        && gt.get(nr as usize, nc as usize) != gt.get(r as usize, c as usize)
                    {
                        any = true;
                    }
                }
            }
            any
        };
        let rad = radius as isize;
        let mut out = Vec::new();
        for r in 0..h {
            for c in 0..w {
                let mut hit = false;
                for nr in r - rad..=r + rad {
                    for nc in c - rad..=c + rad {
                        if (0..h).contains(&nr) && (0..w).contains(&nc) && is_border(nr, nc) {
                            hit = true;
                        }
                    }
                }
                out.push(hit);
            }
        }
        out
    }

    fn two_band_map() -> LabelMap {
        let labels = (0..25).map(|i| if i % 5 <= 2 { 0 } else { 1 }).collect();
        LabelMap::new(5, 5, labels).unwrap()
    }

    fn excluded_columns(mask: &PixelMask) -> Vec<usize> {
        let mut cols: Vec<usize> = (0..mask.included().len())
            .filter(|&i| !mask.is_included(i))
            .map(|i| i % mask.width())
            .collect();
        cols.sort();
        cols.dedup();
        cols
    }

    #[test]
    fn constant_map_has_no_border() {
        let gt = LabelMap::filled(5, 5, 3).unwrap();
        assert_eq!(border_mask(&gt, 2).n_included(), 25);
    }

    #[test]
    fn radius_zero_excludes_border_columns() {
        let gt = two_band_map();
        let mask = border_mask(&gt, 0);
        assert_eq!(mask.n_excluded(), 10);
        assert_eq!(excluded_columns(&mask), vec![2, 3]);
        let expected: Vec<bool> = brute_force_excluded(&gt, 0);
        assert_eq!(
            mask.included().iter().map(|b| !b).collect::<Vec<_>>(),
            expected
        );
    }

    #[test]
    fn radius_one_excludes_four_columns() {
        let gt = two_band_map();
        let mask = border_mask(&gt, 1);
        assert_eq!(mask.n_excluded(), 20);
        assert_eq!(excluded_columns(&mask), vec![1, 2, 3, 4]);
    }

    #[test]
    fn void_counts_as_a_label() {
        let mut labels = vec![0u16; 9];
        labels[4] = 255;
        let gt = LabelMap::new(3, 3, labels).unwrap();
        assert_eq!(border_mask(&gt, 0).n_excluded(), 9);
    }

    fn arb_label_map() -> impl Strategy<Value = LabelMap> {
        (1usize..9, 1usize..9).prop_flat_map(|(h, w)| {
            prop::collection::vec(0u16..3, h * w).prop_map(move |v| LabelMap::new(h, w, v).unwrap())
        })
    }

    proptest! {
        #[test]
        fn matches_brute_force(gt in arb_label_map(), radius in 0usize..4) {
            let mask = border_mask(&gt, radius);
            let excluded: Vec<bool> = mask.included().iter().map(|b| !b).collect();
            prop_assert_eq!(excluded, brute_force_excluded(&gt, radius));
        }

        #[test]
        fn exclusion_grows_with_radius(gt in arb_label_map(), r1 in 0usize..4, extra in 0usize..3) {
            let small = border_mask(&gt, r1);
            let large = border_mask(&gt, r1 + extra);
            for i in 0..gt.n_sites() {
                prop_assert!(small.is_included(i) || !large.is_included(i));
            }
        }
    }
}
