//! Dataset-wide confusion probabilities `P(C = c | l)` estimated from annotated images.
//!
//! Counting uses hard (argmax) classifier labels and skips void ground truth
//! and pixels near ground-truth region borders. Empty cells are floored
//! before each column is normalized, so every probability is strictly positive.

mod mask;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use mask::{border_mask, border_pixels, dilate, PixelMask};

use crate::data::{load_tensor, store_tensor, LabelMap, LabelSet, Tensor};
use crate::error::{Error, Result};
use crate::matrix::SquareMatrix;

pub const DEFAULT_FLOOR: f64 = 1e-4;
pub const DEFAULT_BORDER_RADIUS: usize = 2;

/// Tolerance on column sums when accepting a matrix read back from `f32` storage.
const STORED_COLUMN_TOLERANCE: f64 = 1e-5;

/// Raw co-occurrence counts; `get(c, l)` = pixels with ground truth `l` labeled `c`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountMatrix {
    n: usize,
    counts: Vec<u64>,
}

impl CountMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            counts: vec![0; n * n],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::ShapeMismatch("count matrix must be square".into()));
        }
        Ok(Self {
            n,
            counts: rows.concat(),
        })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, predicted: usize, truth: usize) -> u64 {
        self.counts[predicted * self.n + truth]
    }

    pub fn increment(&mut self, predicted: usize, truth: usize) {
        self.counts[predicted * self.n + truth] += 1;
    }

    pub fn column_total(&self, truth: usize) -> u64 {
        (0..self.n).map(|c| self.get(c, truth)).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }
}

/// Tallies `(prediction, ground truth)` pairs over included, non-void pixels.
pub fn accumulate_counts(
    gt: &LabelMap,
    pred: &LabelMap,
    mask: &PixelMask,
    labels: &LabelSet,
) -> Result<CountMatrix> {
    if !pred.same_dims(gt.height(), gt.width()) || !gt.same_dims(mask.height(), mask.width()) {
        return Err(Error::ShapeMismatch(format!(
            "ground truth {}x{}, prediction {}x{}, mask {}x{}",
            gt.height(),
            gt.width(),
            pred.height(),
            pred.width(),
            mask.height(),
            mask.width()
        )));
    }
    let n = labels.size();
    let mut counts = CountMatrix::zeros(n);
    for (site, (&l, &c)) in gt.labels().iter().zip(pred.labels()).enumerate() {
        if !mask.is_included(site) || labels.is_void(l) {
            continue;
        }
        if l as usize >= n {
            return Err(Error::InvalidLabel {
                site,
                label: l as u32,
                size: n,
            });
        }
        if c as usize >= n {
            return Err(Error::InvalidLabel {
                site,
                label: c as u32,
                size: n,
            });
        }
        counts.increment(c as usize, l as usize);
    }
    Ok(counts)
}

pub fn merge_counts(a: &CountMatrix, b: &CountMatrix) -> Result<CountMatrix> {
    if a.n != b.n {
        return Err(Error::ShapeMismatch(format!(
            "cannot merge {0}x{0} and {1}x{1} counts",
            a.n, b.n
        )));
    }
    Ok(CountMatrix {
        n: a.n,
        counts: a.counts.iter().zip(&b.counts).map(|(x, y)| x + y).collect(),
    })
}

/// Column-stochastic `P(C = c | l)`: rows are classifier outputs, columns ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionModel {
    matrix: SquareMatrix,
    source_counts: Option<CountMatrix>,
    floor: f64,
}

/// Substitutes `floor` for empty cells, then L1-normalizes each column.
pub fn normalize_confusion(counts: &CountMatrix, floor: f64) -> Result<ConfusionModel> {
    if !(floor > 0.0 && floor.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "confusion floor must be positive, got {floor}"
        )));
    }
    let n = counts.size();
    let mut matrix = SquareMatrix::zeros(n);
    for l in 0..n {
        let cells: Vec<f64> = (0..n)
            .map(|c| match counts.get(c, l) {
                0 => floor,
                k => k as f64,
            })
            .collect();
        let total: f64 = cells.iter().sum();
        for (c, v) in cells.into_iter().enumerate() {
            matrix.set(c, l, v / total);
        }
    }
    Ok(ConfusionModel {
        matrix,
        source_counts: Some(counts.clone()),
        floor,
    })
}

impl ConfusionModel {
    /// Wraps a column-stochastic matrix (non-negative, columns summing to 1).
    pub fn from_matrix(matrix: SquareMatrix, floor: f64) -> Result<Self> {
        Self::validated(matrix, floor, 1e-9)
    }

    fn validated(mut matrix: SquareMatrix, floor: f64, tol: f64) -> Result<Self> {
        let n = matrix.dim();
        if n < 2 {
            return Err(Error::InvalidConfusion(format!(
                "needs at least 2 labels, got {n}"
            )));
        }
        if let Some(v) = matrix
            .as_slice()
            .iter()
            .find(|v| !v.is_finite() || **v < 0.0)
        {
            return Err(Error::InvalidConfusion(format!(
                "entry {v} is not a probability"
            )));
        }
        for l in 0..n {
            let s = matrix.column_sum(l);
            if (s - 1.0).abs() > tol {
                return Err(Error::InvalidConfusion(format!(
                    "column {l} sums to {s}, not 1"
                )));
            }
            for c in 0..n {
                matrix.set(c, l, matrix.get(c, l) / s);
            }
        }
        Ok(Self {
            matrix,
            source_counts: None,
            floor,
        })
    }

    /// The exact identity: a classifier that never errs.
    pub fn identity(n: usize) -> Self {
        Self {
            matrix: SquareMatrix::identity(n),
            source_counts: None,
            floor: 0.0,
        }
    }

    pub fn size(&self) -> usize {
        self.matrix.dim()
    }

    pub fn matrix(&self) -> &SquareMatrix {
        &self.matrix
    }

    /// `P(C = predicted | truth)`
    #[inline]
    pub fn prob(&self, predicted: usize, truth: usize) -> f64 {
        self.matrix.get(predicted, truth)
    }

    pub fn source_counts(&self) -> Option<&CountMatrix> {
        self.source_counts.as_ref()
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.matrix.as_slice().iter().all(|&v| v > 0.0)
    }

    /// Relabels classes so that new class `i` is old class `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            matrix: self.matrix.permuted(perm),
            source_counts: None,
            floor: self.floor,
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        let n = self.size() as u32;
        Tensor::from_f32(
            vec![n, n],
            self.matrix.as_slice().iter().map(|&v| v as f32).collect(),
        )
        .expect("square matrix matches its dims")
    }

    pub fn from_tensor(tensor: Tensor, floor: f64) -> Result<Self> {
        let (dims, values) = tensor.into_f32()?;
        if dims.len() != 2 || dims[0] != dims[1] {
            return Err(Error::InvalidConfusion(format!(
                "expected a square 2-D tensor, got dims {dims:?}"
            )));
        }
        let matrix = SquareMatrix::from_row_major(
            dims[0] as usize,
            values.into_iter().map(f64::from).collect(),
        )?;
        Self::validated(matrix, floor, STORED_COLUMN_TOLERANCE)
    }

    /// Writes the matrix and, when given, its JSON sidecar next to it.
    pub fn store(&self, path: impl AsRef<Path>, sidecar: Option<&ConfusionSidecar>) -> Result<()> {
        let path = path.as_ref();
        store_tensor(path, &self.to_tensor())?;
        if let Some(meta) = sidecar {
            let side = sidecar_path(path);
            let text = serde_json::to_string_pretty(meta).map_err(|e| Error::json(&side, e))?;
            fs::write(&side, text + "\n").map_err(|e| Error::io(&side, e))?;
        }
        Ok(())
    }

    /// Reads a matrix; the floor comes from the sidecar when one exists.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let side = sidecar_path(path);
        let floor = if side.exists() {
            let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
            let meta: ConfusionSidecar =
                serde_json::from_str(&text).map_err(|e| Error::json(&side, e))?;
            meta.floor
        } else {
            DEFAULT_FLOOR
        };
        Self::from_tensor(load_tensor(path)?, floor)
    }
}

/// Provenance stored next to an estimated confusion matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionSidecar {
    pub floor: f64,
    pub radius: usize,
    pub n_images: usize,
    pub n_pixels: u64,
}

/// `foo.segt` -> `foo.json`
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}
