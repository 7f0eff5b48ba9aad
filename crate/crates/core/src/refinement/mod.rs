//! Confusion-aware re-estimation of per-pixel label distributions.
//!
//! Given confusion `T[c][l] = P(C = c | l)` and prior `p`, the refinement matrix is
//!
//! ```text
//! R[l][c] = T[c][l] * p[l] / m[c],    m[c] = sum_l T[c][l] * p[l]
//! ```
//!
//! and each pixel's classifier distribution `x` becomes `R x`. One matrix is built
//! per (confusion, prior) pair and shared by every pixel of an image.

use rayon::prelude::*;

use crate::confusion::ConfusionModel;
use crate::data::maps::{argmax, DEGENERATE_MASS};
use crate::data::{LabelMap, ProbabilityMap};
use crate::error::{Error, Result};
use crate::matrix::SquareMatrix;
use crate::priors::Prior;

/// `P(C = c) = sum_l P(C = c | l) P(l)`
pub fn output_marginal(confusion: &ConfusionModel, prior: &Prior) -> Result<Vec<f64>> {
    if confusion.size() != prior.len() {
        return Err(Error::ShapeMismatch(format!(
            "confusion has {} labels, prior {}",
            confusion.size(),
            prior.len()
        )));
    }
    Ok(confusion.matrix().mul_vec(prior.weights()))
}

/// `R[l][c] = P(l | C = c)` together with the output marginal it was normalized by.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinementMatrix {
    matrix: SquareMatrix,
    marginal: Vec<f64>,
    support: Vec<usize>,
}

impl RefinementMatrix {
    pub fn matrix(&self) -> &SquareMatrix {
        &self.matrix
    }

    pub fn marginal(&self) -> &[f64] {
        &self.marginal
    }

    pub fn size(&self) -> usize {
        self.matrix.dim()
    }

    /// Labels with nonzero prior weight.
    pub fn support(&self) -> &[usize] {
        &self.support
    }

    /// True when every classifier output has positive marginal, so `R` is column-stochastic.
    pub fn is_complete(&self) -> bool {
        self.marginal.iter().all(|&m| m > 0.0)
    }

    /// Refines one pixel distribution into `out`.
    ///
    /// When some outputs have zero marginal (only possible with a confusion that
    /// has zeros, e.g. the exact identity), their columns are zero and the result
    /// is renormalized; pixels left with no mass become uniform over the support.
    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        self.matrix.mul_vec_into(x, out);
        if self.is_complete() {
            out.iter_mut().for_each(|v| *v = v.min(1.0));
            return;
        }
        let mass: f64 = out.iter().sum();
        if mass <= DEGENERATE_MASS {
            out.fill(0.0);
            let u = 1.0 / self.support.len() as f64;
            self.support.iter().for_each(|&l| out[l] = u);
        } else {
            out.iter_mut().for_each(|v| *v = (*v / mass).min(1.0));
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.size()];
        self.apply_into(x, &mut out);
        out
    }
}

pub fn build_refinement_matrix(
    confusion: &ConfusionModel,
    prior: &Prior,
) -> Result<RefinementMatrix> {
    let marginal = output_marginal(confusion, prior)?;
    if marginal.iter().all(|&m| m <= 0.0) {
        return Err(Error::InvalidConfusion(
            "every output marginal is zero".into(),
        ));
    }
    let n = confusion.size();
    let mut matrix = SquareMatrix::zeros(n);
    for (c, &m) in marginal.iter().enumerate() {
        if m <= 0.0 {
            continue;
        }
        for l in 0..n {
            matrix.set(l, c, confusion.prob(c, l) * prior.get(l) / m);
        }
    }
    Ok(RefinementMatrix {
        matrix,
        marginal,
        support: prior.support(),
    })
}

/// Applies `R` to every pixel.
pub fn refine_map(r: &RefinementMatrix, probs: &ProbabilityMap) -> Result<ProbabilityMap> {
    let n = r.size();
    if probs.channels() != n {
        return Err(Error::ShapeMismatch(format!(
            "map has {} channels, refinement matrix {n}",
            probs.channels()
        )));
    }
    let mut values = vec![0.0; probs.values().len()];
    values
        .par_chunks_mut(n)
        .zip(probs.values().par_chunks(n))
        .for_each(|(out, x)| r.apply_into(x, out));
    Ok(ProbabilityMap::from_parts_unchecked(
        probs.height(),
        probs.width(),
        n,
        values,
    ))
}

/// Per-pixel index of the largest channel, lowest index on ties.
pub fn argmax_labels(probs: &ProbabilityMap) -> LabelMap {
    let labels = probs.pixels().map(|px| argmax(px) as u16).collect();
    LabelMap::new(probs.height(), probs.width(), labels).expect("map dims are positive")
}

/// Zeroes channels outside `present` and renormalizes each pixel.
///
/// Pixels with no mass on `present` become uniform over it.
pub fn labelbank_mask(probs: &ProbabilityMap, present: &[usize]) -> Result<ProbabilityMap> {
    let n = probs.channels();
    if present.is_empty() {
        return Err(Error::EmptyLabelSet);
    }
    let mut keep = vec![false; n];
    for &l in present {
        *keep
            .get_mut(l)
            .ok_or(Error::ClassOutOfRange { class: l, size: n })? = true;
    }
    let k = keep.iter().filter(|&&b| b).count();
    let mut values = Vec::with_capacity(probs.values().len());
    for px in probs.pixels() {
        let start = values.len();
        values.extend(
            px.iter()
                .zip(&keep)
                .map(|(&v, &on)| if on { v } else { 0.0 }),
        );
        let out = &mut values[start..];
        let mass: f64 = out.iter().sum();
        if mass <= DEGENERATE_MASS {
            out.iter_mut()
                .zip(&keep)
                .for_each(|(v, &on)| *v = if on { 1.0 / k as f64 } else { 0.0 });
        } else {
            out.iter_mut().for_each(|v| *v /= mass);
        }
    }
    Ok(ProbabilityMap::from_parts_unchecked(
        probs.height(),
        probs.width(),
        n,
        values,
    ))
}
