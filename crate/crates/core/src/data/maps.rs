//! Label sets and the per-pixel containers built on them.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tensor::{load_tensor, store_tensor, Tensor};
use crate::error::{Error, Result};

/// Default tolerance on per-pixel channel sums when loading classifier output.
pub const LOAD_SUM_TOLERANCE: f64 = 1e-4;

/// Remaining mass at or below this is treated as "nothing left" when renormalizing.
pub(crate) const DEGENERATE_MASS: f64 = 1e-12;

/// The label alphabet shared by every map in a dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    names: Option<Vec<String>>,
    #[serde(default)]
    void_id: Option<u16>,
}

impl LabelSet {
    pub fn new(size: usize, names: Option<Vec<String>>, void_id: Option<u16>) -> Result<Self> {
        let set = Self {
            size,
            names,
            void_id,
        };
        set.check()?;
        Ok(set)
    }

    /// A label set with no names and no void label.
    pub fn plain(size: usize) -> Result<Self> {
        Self::new(size, None, None)
    }

    pub(crate) fn check(&self) -> Result<()> {
        if self.size < 2 {
            return Err(Error::InvalidLabelSet(format!(
                "size must be at least 2, got {}",
                self.size
            )));
        }
        if self.size > u16::MAX as usize {
            return Err(Error::InvalidLabelSet(format!(
                "size {} does not fit a u16 label map",
                self.size
            )));
        }
        if let Some(names) = &self.names {
            if names.len() != self.size {
                return Err(Error::InvalidLabelSet(format!(
                    "{} names for {} labels",
                    names.len(),
                    self.size
                )));
            }
        }
        if let Some(v) = self.void_id {
            if (v as usize) < self.size {
                return Err(Error::InvalidLabelSet(format!(
                    "void id {v} collides with a class label"
                )));
            }
        }
        Ok(())
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn names(&self) -> Option<&[String]> {
        self.names.as_deref()
    }

    pub fn void_id(&self) -> Option<u16> {
        self.void_id
    }

    pub fn is_void(&self, label: u16) -> bool {
        self.void_id == Some(label)
    }
}

/// Per-pixel distributions over labels, `height x width x channels`, channels fastest.
///
/// Values are kept in `f64` in memory and written as `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    height: usize,
    width: usize,
    channels: usize,
    values: Vec<f64>,
}

impl ProbabilityMap {
    /// Checks shape and value range. Channel sums are checked by [`validate_probability_map`].
    pub fn new(height: usize, width: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::ShapeMismatch(format!(
                "probability map dims must be positive, got {height}x{width}x{channels}"
            )));
        }
        if values.len() != height * width * channels {
            return Err(Error::ShapeMismatch(format!(
                "{height}x{width}x{channels} map needs {} values, got {}",
                height * width * channels,
                values.len()
            )));
        }
        if let Some(i) = values
            .iter()
            .position(|v| !v.is_finite() || *v < 0.0 || *v > 1.0)
        {
            return Err(Error::InvalidProbabilities(format!(
                "value {} at flat index {i} is outside [0, 1]",
                values[i]
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            values,
        })
    }

    /// Builds a map from rows of per-pixel distributions laid out row-major.
    pub fn from_pixels(height: usize, width: usize, pixels: &[Vec<f64>]) -> Result<Self> {
        let channels = pixels.first().map_or(0, Vec::len);
        if pixels.iter().any(|p| p.len() != channels) {
            return Err(Error::ShapeMismatch("ragged pixel rows".into()));
        }
        Self::new(height, width, channels, pixels.concat())
    }

    pub(crate) fn from_parts_unchecked(
        height: usize,
        width: usize,
        channels: usize,
        values: Vec<f64>,
    ) -> Self {
        debug_assert_eq!(values.len(), height * width * channels);
        Self {
            height,
            width,
            channels,
            values,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn n_sites(&self) -> usize {
        self.height * self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn pixel(&self, site: usize) -> &[f64] {
        &self.values[site * self.channels..(site + 1) * self.channels]
    }

    pub fn pixels(&self) -> std::slice::ChunksExact<'_, f64> {
        self.values.chunks_exact(self.channels)
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_f32(
            vec![self.height as u32, self.width as u32, self.channels as u32],
            self.values.iter().map(|&v| v as f32).collect(),
        )
        .expect("map dims always match its payload")
    }

    /// Reads a 3-D f32 tensor and rejects it if any pixel's sum is off by more than `tol`.
    pub fn from_tensor(tensor: Tensor, tol: f64) -> Result<Self> {
        let (dims, values) = tensor.into_f32()?;
        if dims.len() != 3 {
            return Err(Error::ShapeMismatch(format!(
                "probability map must be 3-D, got dims {dims:?}"
            )));
        }
        let map = Self::new(
            dims[0] as usize,
            dims[1] as usize,
            dims[2] as usize,
            values.into_iter().map(f64::from).collect(),
        )?;
        let bad = validate_probability_map(&map, tol);
        if let Some(first) = bad.first() {
            return Err(Error::InvalidProbabilities(format!(
                "{} pixel(s) have channel sums off by more than {tol}; first at site {} (deviation {:.3e})",
                bad.len(),
                first.site,
                first.deviation
            )));
        }
        Ok(map)
    }

    pub fn load(path: impl AsRef<Path>, tol: f64) -> Result<Self> {
        Self::from_tensor(load_tensor(path)?, tol)
    }

    pub fn store(&self, path: impl AsRef<Path>) -> Result<()> {
        store_tensor(path, &self.to_tensor())
    }
}

/// Per-pixel integer labels, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    labels: Vec<u16>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, labels: Vec<u16>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::ShapeMismatch(format!(
                "label map dims must be positive, got {height}x{width}"
            )));
        }
        if labels.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "{height}x{width} label map needs {} labels, got {}",
                height * width,
                labels.len()
            )));
        }
        Ok(Self {
            height,
            width,
            labels,
        })
    }

    pub fn filled(height: usize, width: usize, label: u16) -> Result<Self> {
        Self::new(height, width, vec![label; height * width])
    }

    /// Every entry must be a class of `labels` or its void id.
    pub fn check_labels(&self, labels: &LabelSet) -> Result<()> {
        match self
            .labels
            .iter()
            .position(|&l| (l as usize) >= labels.size() && !labels.is_void(l))
        {
            Some(site) => Err(Error::InvalidLabel {
                site,
                label: self.labels[site] as u32,
                size: labels.size(),
            }),
            None => Ok(()),
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn n_sites(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn get(&self, row: usize, col: usize) -> u16 {
        self.labels[row * self.width + col]
    }

    pub fn same_dims(&self, height: usize, width: usize) -> bool {
        self.height == height && self.width == width
    }

    /// Classes (not void) that occur at least once.
    pub fn present_classes(&self, labels: &LabelSet) -> Vec<usize> {
        let mut seen = vec![false; labels.size()];
        for &l in &self.labels {
            if !labels.is_void(l) && (l as usize) < seen.len() {
                seen[l as usize] = true;
            }
        }
        (0..labels.size()).filter(|&l| seen[l]).collect()
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_u16(
            vec![self.height as u32, self.width as u32],
            self.labels.clone(),
        )
        .expect("map dims always match its payload")
    }

    pub fn from_tensor(tensor: Tensor) -> Result<Self> {
        let (dims, labels) = tensor.into_u16()?;
        if dims.len() != 2 {
            return Err(Error::ShapeMismatch(format!(
                "label map must be 2-D, got dims {dims:?}"
            )));
        }
        Self::new(dims[0] as usize, dims[1] as usize, labels)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_tensor(load_tensor(path)?)
    }

    pub fn store(&self, path: impl AsRef<Path>) -> Result<()> {
        store_tensor(path, &self.to_tensor())
    }
}

/// A pixel whose channel sum is off by more than the requested tolerance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SumDeviation {
    pub site: usize,
    pub deviation: f64,
}

/// Lists every site whose channel sum differs from 1 by more than `tol`.
pub fn validate_probability_map(probs: &ProbabilityMap, tol: f64) -> Vec<SumDeviation> {
    probs
        .pixels()
        .enumerate()
        .filter_map(|(site, px)| {
            let deviation = (px.iter().sum::<f64>() - 1.0).abs();
            (deviation > tol).then_some(SumDeviation { site, deviation })
        })
        .collect()
}

/// Drops channel `class_id` and renormalizes what is left at every pixel.
///
/// Pixels with no remaining mass become uniform over the surviving channels.
pub fn strip_class_and_renormalize(
    probs: &ProbabilityMap,
    class_id: usize,
) -> Result<ProbabilityMap> {
    let k = probs.channels();
    if class_id >= k {
        return Err(Error::ClassOutOfRange {
            class: class_id,
            size: k,
        });
    }
    if k < 3 {
        return Err(Error::InvalidArgument(format!(
            "stripping a class needs at least 3 channels, map has {k}"
        )));
    }
    let out_k = k - 1;
    let mut values = Vec::with_capacity(probs.n_sites() * out_k);
    for px in probs.pixels() {
        let start = values.len();
        values.extend(
            px.iter()
                .enumerate()
                .filter(|&(c, _)| c != class_id)
                .map(|(_, &v)| v),
        );
        let kept = &mut values[start..];
        let mass: f64 = kept.iter().sum();
        if mass <= DEGENERATE_MASS {
            kept.fill(1.0 / out_k as f64);
        } else {
            kept.iter_mut().for_each(|v| *v /= mass);
        }
    }
    Ok(ProbabilityMap::from_parts_unchecked(
        probs.height(),
        probs.width(),
        out_k,
        values,
    ))
}

/// Index of the largest channel at each pixel; ties go to the lowest index.
pub(crate) fn argmax(px: &[f64]) -> usize {
    let mut best = 0;
    for (c, &v) in px.iter().enumerate().skip(1) {
        if v > px[best] {
            best = c;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn one_pixel(px: &[f64]) -> ProbabilityMap {
        ProbabilityMap::new(1, 1, px.len(), px.to_vec()).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn label_set_invariants() {
        assert!(LabelSet::plain(1).is_err());
        assert!(LabelSet::new(3, Some(vec!["a".into()]), None).is_err());
        assert!(LabelSet::new(3, None, Some(2)).is_err());
        let set = LabelSet::new(3, None, Some(255)).unwrap();
        assert!(set.is_void(255));
        assert!(!set.is_void(2));
    }

    #[test]
    fn label_map_rejects_out_of_range() {
        let set = LabelSet::new(3, None, Some(9)).unwrap();
        let ok = LabelMap::new(1, 3, vec![0, 9, 2]).unwrap();
        assert!(ok.check_labels(&set).is_ok());
        let bad = LabelMap::new(1, 3, vec![0, 3, 2]).unwrap();
        assert!(matches!(
            bad.check_labels(&set),
            Err(Error::InvalidLabel { site: 1, .. })
        ));
    }

    #[test]
    fn strip_renormalizes() {
        let out = strip_class_and_renormalize(&one_pixel(&[0.2, 0.5, 0.3]), 0).unwrap();
        assert!(close(out.pixel(0), &[0.625, 0.375], 1e-12));
    }

    #[test]
    fn strip_degenerate_pixel_is_uniform() {
        let out = strip_class_and_renormalize(&one_pixel(&[1.0, 0.0, 0.0]), 0).unwrap();
        assert_eq!(out.pixel(0), &[0.5, 0.5]);
    }

    #[test]
    fn strip_zero_channel() {
        let out = strip_class_and_renormalize(&one_pixel(&[0.0, 0.6, 0.4]), 0).unwrap();
        assert!(close(out.pixel(0), &[0.6, 0.4], 1e-12));
    }

    #[test]
    fn strip_errors() {
        assert!(matches!(
            strip_class_and_renormalize(&one_pixel(&[0.2, 0.5, 0.3]), 3),
            Err(Error::ClassOutOfRange { class: 3, size: 3 })
        ));
        assert!(strip_class_and_renormalize(&one_pixel(&[0.5, 0.5]), 0).is_err());
    }

    #[test]
    fn validate_one_hot_is_clean() {
        let map = ProbabilityMap::new(2, 1, 3, vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        assert!(validate_probability_map(&map, 1e-6).is_empty());
    }

    #[test]
    fn validate_reports_scaled_pixel() {
        let mut v = vec![0.5; 8];
        v[2] *= 1.01;
        v[3] *= 1.01;
        let map = ProbabilityMap::new(2, 2, 2, v).unwrap();
        let bad = validate_probability_map(&map, 1e-4);
        assert_eq!(bad.len(), 1);
        assert_eq!(bad[0].site, 1);
        assert!((bad[0].deviation - 0.01).abs() < 1e-12);
    }

    #[test]
    fn validate_all_zero_map() {
        let map = ProbabilityMap::new(2, 3, 4, vec![0.0; 24]).unwrap();
        let bad = validate_probability_map(&map, 1e-4);
        assert_eq!(bad.len(), 6);
        assert!(bad.iter().all(|d| d.deviation == 1.0));
    }

    #[test]
    fn load_rejects_unnormalized() {
        let t = Tensor::from_f32(vec![1, 1, 2], vec![0.5, 0.6]).unwrap();
        assert!(matches!(
            ProbabilityMap::from_tensor(t, LOAD_SUM_TOLERANCE),
            Err(Error::InvalidProbabilities(_))
        ));
        let t = Tensor::from_f32(vec![1, 1, 2], vec![0.5, 0.50005]).unwrap();
        assert!(ProbabilityMap::from_tensor(t, LOAD_SUM_TOLERANCE).is_ok());
    }

    #[test]
    fn argmax_tie_break() {
        assert_eq!(argmax(&[0.1, 0.7, 0.2]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }

    fn arb_map() -> impl Strategy<Value = ProbabilityMap> {
        (1usize..4, 1usize..4, 3usize..6).prop_flat_map(|(h, w, k)| {
            prop::collection::vec(prop::collection::vec(0.0f64..1.0, k), h * w).prop_map(
                move |rows| {
                    let pixels: Vec<Vec<f64>> = rows
                        .into_iter()
                        .map(|mut r| {
                            // sprinkle exact zeros so degenerate pixels show up
                            r.iter_mut().for_each(|v| {
                                if *v < 0.3 {
                                    *v = 0.0
                                }
                            });
                            let s: f64 = r.iter().sum();
                            if s > 0.0 {
                                r.iter_mut().for_each(|v| *v /= s);
                            } else {
                                r[0] = 1.0;
                            }
                            r
                        })
                        .collect();
                    ProbabilityMap::from_pixels(h, w, &pixels).unwrap()
                },
            )
        })
    }

    proptest! {
        #[test]
        fn strip_output_is_valid(map in arb_map(), pick in 0usize..16) {
            let class = pick % map.channels();
            let out = strip_class_and_renormalize(&map, class).unwrap();
            prop_assert!(validate_probability_map(&out, 1e-6).is_empty());
        }

        #[test]
        fn strip_preserves_surviving_argmax(map in arb_map(), pick in 0usize..16) {
            let class = pick % map.channels();
            let out = strip_class_and_renormalize(&map, class).unwrap();
            for (site, px) in map.pixels().enumerate() {
                let kept: Vec<f64> = px.iter().enumerate()
                    .filter(|&(c, _)| c != class).map(|(_, &v)| v).collect();
                if kept.iter().sum::<f64>() > DEGENERATE_MASS {
                    prop_assert_eq!(argmax(&kept), argmax(out.pixel(site)));
                }
            }
        }
    }
}
