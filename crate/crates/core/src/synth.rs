//! Synthetic segmentation data drawn from a known confusion process.
//!
//! Each image is a seeded Voronoi partition whose cells take classes from a
//! per-image subset of the label set. At every pixel with ground truth `l` the
//! simulated classifier draws a hard label `c` from column `l` of the true
//! confusion matrix and emits a Dirichlet sample peaked at `c`, with entries
//! swapped if needed so that its argmax is exactly `c`.
//!
//! Randomness comes from ChaCha8 seeded with `spec.seed`. Image `i` (estimation
//! images first, then evaluation) reads stream `i`; border corruption for that
//! image reads stream `i | 1 << 63`, so corrupting borders never changes the
//! draws of any other pixel. Generation is parallel over images and produces the
//! same bytes as a sequential run.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::confusion::{border_pixels, dilate, ConfusionModel, CountMatrix, DEFAULT_FLOOR};
use crate::data::maps::argmax;
use crate::data::{LabelMap, LabelSet, Manifest, ProbabilityMap, Record, Split};
use crate::error::{Error, Result};
use crate::matrix::SquareMatrix;

const CORRUPTION_STREAM: u64 = 1 << 63;

/// Chebyshev radius of the band around ground-truth borders that border noise may corrupt.
pub const CORRUPTION_BAND_RADIUS: usize = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_classes: usize,
    pub height: usize,
    pub width: usize,
    pub n_estimation: usize,
    pub n_evaluation: usize,
    /// Expected Voronoi cell diameter in pixels.
    pub region_scale: f64,
    /// `true_confusion[c][l] = P(C = c | l)`; columns sum to one.
    pub true_confusion: Vec<Vec<f64>>,
    /// Extra Dirichlet concentration on the drawn label; larger means more peaked outputs.
    pub sharpness: f64,
    /// Probability that a pixel within one pixel of a region border gets a random wrong label.
    #[serde(default)]
    pub border_noise: Option<f64>,
    /// Inclusive bounds on the number of classes per image.
    pub subset_size: (usize, usize),
    pub seed: u64,
    #[serde(default = "default_floor")]
    pub floor: f64,
}

fn default_floor() -> f64 {
    DEFAULT_FLOOR
}

impl SynthSpec {
    /// The eight-class benchmark configuration used by the acceptance suite.
    ///
    /// Classes come in pairs `(2k, 2k + 1)`. The first member of a pair is often
    /// reported as its partner (an in-context confusion when both are present),
    /// and every class leaks a little mass onto the others (out-of-context errors).
    pub fn reference() -> Self {
        let n = 8;
        let mut t = vec![vec![0.0; n]; n];
        for l in 0..n {
            let partner = l ^ 1;
            let (own, to_partner) = if l % 2 == 0 {
                (0.50, 0.30)
            } else {
                (0.80, 0.05)
            };
            let leak = (1.0 - own - to_partner) / (n - 2) as f64;
            for (c, row) in t.iter_mut().enumerate() {
                row[l] = if c == l {
                    own
                } else if c == partner {
                    to_partner
                } else {
                    leak
                };
            }
        }
        Self {
            n_classes: n,
            height: 64,
            width: 64,
            n_estimation: 200,
            n_evaluation: 200,
            region_scale: 20.0,
            true_confusion: t,
            sharpness: 20.0,
            border_noise: None,
            subset_size: (3, 5),
            seed: 20_190_601,
            floor: DEFAULT_FLOOR,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSynthSpec(m));
        let n = self.n_classes;
        if !(2..=u16::MAX as usize).contains(&n) {
            return bad(format!("n_classes must be in [2, 65535], got {n}"));
        }
        if self.height == 0 || self.width == 0 {
            return bad("image dims must be positive".into());
        }
        if !(self.region_scale > 0.0 && self.region_scale.is_finite()) {
            return bad(format!(
                "region_scale must be positive, got {}",
                self.region_scale
            ));
        }
        if !(self.sharpness > 0.0 && self.sharpness.is_finite()) {
            return bad(format!(
                "sharpness must be positive, got {}",
                self.sharpness
            ));
        }
        if let Some(rate) = self.border_noise {
            if !(0.0..=1.0).contains(&rate) {
                return bad(format!("border_noise must be in [0, 1], got {rate}"));
            }
        }
        let (lo, hi) = self.subset_size;
        if lo == 0 || lo > hi || hi > n {
            return bad(format!(
                "subset_size ({lo}, {hi}) must satisfy 1 <= lo <= hi <= {n}"
            ));
        }
        if self.floor.is_nan() || self.floor <= 0.0 {
            return bad("floor must be positive".into());
        }
        if self.true_confusion.len() != n || self.true_confusion.iter().any(|r| r.len() != n) {
            return bad(format!("true_confusion must be {n}x{n}"));
        }
        for l in 0..n {
            let mut s = 0.0;
            for c in 0..n {
                let v = self.true_confusion[c][l];
                if !(v >= 0.0 && v.is_finite()) {
                    return bad(format!("true_confusion[{c}][{l}] = {v}"));
                }
                s += v;
            }
            if (s - 1.0).abs() > 1e-9 {
                return bad(format!("true_confusion column {l} sums to {s}"));
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: Self = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn store(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn label_set(&self) -> LabelSet {
        let names = (0..self.n_classes).map(|i| format!("class{i}")).collect();
        LabelSet::new(self.n_classes, Some(names), None).expect("validated spec")
    }

    pub fn true_matrix(&self) -> SquareMatrix {
        SquareMatrix::from_rows(&self.true_confusion).expect("validated spec")
    }

    fn image_count(&self) -> usize {
        self.n_estimation + self.n_evaluation
    }

    fn image_id(&self, index: usize) -> (String, Split) {
        if index < self.n_estimation {
            (format!("est-{index:04}"), Split::Estimation)
        } else {
            (
                format!("eval-{:04}", index - self.n_estimation),
                Split::Evaluation,
            )
        }
    }
}

/// The true confusion with the same empty-cell flooring as estimated models.
pub fn true_confusion(spec: &SynthSpec) -> Result<ConfusionModel> {
    spec.validate()?;
    let n = spec.n_classes;
    let mut m = SquareMatrix::zeros(n);
    for l in 0..n {
        let col: Vec<f64> = (0..n)
            .map(|c| match spec.true_confusion[c][l] {
                v if v > 0.0 => v,
                _ => spec.floor,
            })
            .collect();
        let s: f64 = col.iter().sum();
        for (c, v) in col.into_iter().enumerate() {
            m.set(c, l, v / s);
        }
    }
    ConfusionModel::from_matrix(m, spec.floor)
}

#[derive(Debug, Clone)]
pub struct SynthImage {
    pub id: String,
    pub split: Split,
    pub gt: LabelMap,
    pub probs: ProbabilityMap,
    /// Classes the image was allowed to use.
    pub classes: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub spec: SynthSpec,
    pub labels: LabelSet,
    pub images: Vec<SynthImage>,
}

impl SynthDataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &SynthImage> {
        self.images.iter().filter(move |im| im.split == split)
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn sample_column(column: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (c, &p) in column.iter().enumerate() {
        acc += p;
        if u < acc {
            return c;
        }
    }
    // rounding left u above the running total; take the last class with mass
    column.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Dirichlet draw with extra concentration on `peak`, rearranged so `peak` is the argmax.
fn peaked_distribution(
    peak: usize,
    n: usize,
    background: &Gamma<f64>,
    focus: &Gamma<f64>,
    rng: &mut impl Rng,
) -> Vec<f64> {
    let mut x: Vec<f64> = (0..n)
        .map(|c| {
            if c == peak {
                focus.sample(rng)
            } else {
                background.sample(rng)
            }
        })
        .collect();
    let top = argmax(&x);
    if top != peak {
        x.swap(top, peak);
    }
    let s: f64 = x.iter().sum();
    // quantize through f32 so in-memory data equals what is written to disk
    x.iter().map(|v| (v / s) as f32 as f64).collect()
}

fn voronoi_labels(spec: &SynthSpec, classes: &[usize], rng: &mut impl Rng) -> Vec<u16> {
    let (h, w) = (spec.height, spec.width);
    let cells = ((h * w) as f64 / (spec.region_scale * spec.region_scale)).round() as usize;
    let n_seeds = cells.max(classes.len());
    let seeds: Vec<(f64, f64, u16)> = (0..n_seeds)
        .map(|i| {
            let y = rng.random::<f64>() * h as f64;
            let x = rng.random::<f64>() * w as f64;
            let class = if i < classes.len() {
                classes[i]
            } else {
                classes[rng.random_range(0..classes.len())]
            };
            (y, x, class as u16)
        })
        .collect();
    let mut labels = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let (py, px) = (r as f64 + 0.5, c as f64 + 0.5);
            let mut best = (f64::INFINITY, 0u16);
            for &(y, x, class) in &seeds {
                let d = (y - py).powi(2) + (x - px).powi(2);
                if d < best.0 {
                    best = (d, class);
                }
            }
            labels.push(best.1);
        }
    }
    labels
}

fn generate_image(spec: &SynthSpec, index: usize) -> SynthImage {
    let n = spec.n_classes;
    let mut rng = stream_rng(spec.seed, index as u64);
    let (lo, hi) = spec.subset_size;
    let k = rng.random_range(lo..=hi);
    let classes: Vec<usize> = index::sample(&mut rng, n, k).into_vec();
    let gt_labels = voronoi_labels(spec, &classes, &mut rng);

    let columns: Vec<Vec<f64>> = (0..n)
        .map(|l| (0..n).map(|c| spec.true_confusion[c][l]).collect())
        .collect();
    let background = Gamma::new(1.0, 1.0).expect("valid shape");
    let focus = Gamma::new(1.0 + spec.sharpness, 1.0).expect("validated sharpness");
    let mut values = Vec::with_capacity(gt_labels.len() * n);
    let mut hard = Vec::with_capacity(gt_labels.len());
    for &l in &gt_labels {
        let c = sample_column(&columns[l as usize], &mut rng);
        hard.push(c);
        values.extend(peaked_distribution(c, n, &background, &focus, &mut rng));
    }

    let gt = LabelMap::new(spec.height, spec.width, gt_labels).expect("positive dims");
    if let Some(rate) = spec.border_noise.filter(|&r| r > 0.0) {
        let band = dilate(
            &border_pixels(&gt),
            spec.height,
            spec.width,
            CORRUPTION_BAND_RADIUS,
        );
        let mut noise = stream_rng(spec.seed, index as u64 | CORRUPTION_STREAM);
        for (site, &in_band) in band.iter().enumerate() {
            if !in_band || noise.random::<f64>() >= rate {
                continue;
            }
            let current = hard[site];
            let mut other = noise.random_range(0..n - 1);
            if other >= current {
                other += 1;
            }
            values.swap(site * n + current, site * n + other);
            hard[site] = other;
        }
    }

    let (id, split) = spec.image_id(index);
    SynthImage {
        id,
        split,
        gt,
        probs: ProbabilityMap::from_parts_unchecked(spec.height, spec.width, n, values),
        classes: {
            let mut c = classes;
            c.sort_unstable();
            c
        },
    }
}

/// Generates every image in memory.
pub fn generate(spec: &SynthSpec) -> Result<SynthDataset> {
    spec.validate()?;
    let images = (0..spec.image_count())
        .into_par_iter()
        .map(|i| generate_image(spec, i))
        .collect();
    Ok(SynthDataset {
        spec: spec.clone(),
        labels: spec.label_set(),
        images,
    })
}

fn record_paths(split: Split, id: &str) -> (PathBuf, PathBuf) {
    let dir = Path::new(split.name());
    (
        dir.join(format!("{id}.probs.segt")),
        dir.join(format!("{id}.gt.segt")),
    )
}

/// Writes a generated dataset: `manifest.json`, `spec.json`, `true_confusion.segt`,
/// and per-split tensor directories.
pub fn write_dataset(data: &SynthDataset, out_dir: impl AsRef<Path>) -> Result<Manifest> {
    let out_dir = out_dir.as_ref();
    for split in [Split::Estimation, Split::Evaluation] {
        let dir = out_dir.join(split.name());
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let records: Vec<Record> = data
        .images
        .iter()
        .map(|im| {
            let (probs, gt) = record_paths(im.split, &im.id);
            Record {
                id: im.id.clone(),
                probs,
                gt,
                split: im.split,
            }
        })
        .collect();
    data.images
        .par_iter()
        .zip(&records)
        .try_for_each(|(im, rec)| -> Result<()> {
            im.probs.store(out_dir.join(&rec.probs))?;
            im.gt.store(out_dir.join(&rec.gt))
        })?;
    let manifest = Manifest::new(data.labels.clone(), records, out_dir)?;
    manifest.store(out_dir.join("manifest.json"))?;
    data.spec.store(out_dir.join("spec.json"))?;
    true_confusion(&data.spec)?.store(out_dir.join("true_confusion.segt"), None)?;
    Ok(manifest)
}

/// Generates a dataset and writes it under `out_dir`.
pub fn generate_dataset(spec: &SynthSpec, out_dir: impl AsRef<Path>) -> Result<Manifest> {
    write_dataset(&generate(spec)?, out_dir)
}

/// Draws `per_class` i.i.d. classifier labels for every ground-truth class,
/// returned as single-row ground-truth and prediction maps.
pub fn sample_confusion_pairs(
    true_matrix: &SquareMatrix,
    per_class: usize,
    seed: u64,
) -> Result<(LabelMap, LabelMap)> {
    let n = true_matrix.dim();
    if per_class == 0 {
        return Err(Error::InvalidArgument("per_class must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gt = Vec::with_capacity(n * per_class);
    let mut pred = Vec::with_capacity(n * per_class);
    for l in 0..n {
        let column: Vec<f64> = (0..n).map(|c| true_matrix.get(c, l)).collect();
        for _ in 0..per_class {
            gt.push(l as u16);
            pred.push(sample_column(&column, &mut rng) as u16);
        }
    }
    Ok((
        LabelMap::new(1, gt.len(), gt)?,
        LabelMap::new(1, pred.len(), pred)?,
    ))
}

/// Expected accuracy of the best possible labeling from the hard classifier output,
/// when each image's true class frequencies are known: at a pixel labeled `c` the
/// optimal guess is `argmax_l T[c][l] * n_l`. Enumerates every `(l, c)` pair.
pub fn bayes_optimal_accuracy(
    true_matrix: &SquareMatrix,
    gts: &[&LabelMap],
    labels: &LabelSet,
) -> Result<f64> {
    let n = true_matrix.dim();
    let mut expected_correct = 0.0;
    let mut total = 0u64;
    for gt in gts {
        let mut hist = vec![0u64; n];
        for &l in gt.labels() {
            if !labels.is_void(l) {
                hist[l as usize] += 1;
            }
        }
        total += hist.iter().sum::<u64>();
        for c in 0..n {
            let joint: Vec<f64> = (0..n)
                .map(|l| true_matrix.get(c, l) * hist[l] as f64)
                .collect();
            expected_correct += joint[argmax(&joint)];
        }
    }
    if total == 0 {
        return Err(Error::NoValidPixels);
    }
    Ok(expected_correct / total as f64)
}

/// Empirical hard-label confusion counts of generated images (all non-void pixels).
pub fn hard_label_counts(images: &[&SynthImage], labels: &LabelSet) -> Result<CountMatrix> {
    let mut counts = CountMatrix::zeros(labels.size());
    for im in images {
        let pred: Vec<u16> = im.probs.pixels().map(|px| argmax(px) as u16).collect();
        for (&l, &c) in im.gt.labels().iter().zip(&pred) {
            if !labels.is_void(l) {
                counts.increment(c as usize, l as usize);
            }
        }
    }
    Ok(counts)
}
