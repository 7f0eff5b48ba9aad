//! Negative log-loss of refined ground-truth probabilities as a function of the prior,
//! and the projected-gradient solver that minimizes it over the simplex.
//!
//! For a sample with ground truth `g` and classifier distribution `x`, the refined
//! probability of `g` under prior `p` and confusion `T` is
//!
//! ```text
//! P(g | x) = p[g] * sum_c T[c][g] * x[c] / m[c],    m = T p
//! ```
//!
//! and the loss is `-sum_i ln(max(P_i, 1e-10))`.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Prior;
use crate::confusion::{ConfusionModel, PixelMask};
use crate::data::{LabelMap, LabelSet, ProbabilityMap};
use crate::error::{Error, Result};

/// Clamp applied to refined probabilities before taking the log.
pub const LOSS_EPSILON: f64 = 1e-10;

const ARMIJO: f64 = 1e-4;
const MIN_STEP: f64 = 1e-16;
const MAX_STEP: f64 = 1e6;

/// Ground-truth labels paired with classifier distributions, stored flat.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SampleSet {
    n_classes: usize,
    truths: Vec<usize>,
    probs: Vec<f64>,
}

impl SampleSet {
    pub fn new(n_classes: usize) -> Self {
        Self {
            n_classes,
            ..Self::default()
        }
    }

    pub fn push(&mut self, truth: usize, probs: &[f64]) -> Result<()> {
        if probs.len() != self.n_classes {
            return Err(Error::ShapeMismatch(format!(
                "sample has {} channels, expected {}",
                probs.len(),
                self.n_classes
            )));
        }
        if truth >= self.n_classes {
            return Err(Error::ClassOutOfRange {
                class: truth,
                size: self.n_classes,
            });
        }
        self.truths.push(truth);
        self.probs.extend_from_slice(probs);
        Ok(())
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn len(&self) -> usize {
        self.truths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.truths.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &[f64])> {
        self.truths
            .iter()
            .copied()
            .zip(self.probs.chunks_exact(self.n_classes.max(1)))
    }

    /// Ground-truth frequencies of the samples.
    pub fn truth_histogram(&self) -> Result<Prior> {
        if self.is_empty() {
            return Err(Error::EmptySamples);
        }
        let mut h = vec![0.0; self.n_classes];
        for &t in &self.truths {
            h[t] += 1.0;
        }
        Prior::from_unnormalized(h)
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut inv = vec![0; perm.len()];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut out = Self::new(self.n_classes);
        for (t, x) in self.iter() {
            let px: Vec<f64> = perm.iter().map(|&old| x[old]).collect();
            out.push(inv[t], &px).expect("permutation keeps shapes");
        }
        out
    }
}

/// Gathers included, non-void sites of one image, keeping at most `max_samples`
/// chosen uniformly at random (seeded) and kept in raster order.
pub fn collect_samples(
    gt: &LabelMap,
    probs: &ProbabilityMap,
    mask: &PixelMask,
    labels: &LabelSet,
    max_samples: Option<usize>,
    seed: u64,
) -> Result<SampleSet> {
    if !gt.same_dims(probs.height(), probs.width()) || !gt.same_dims(mask.height(), mask.width()) {
        return Err(Error::ShapeMismatch(
            "ground truth, probabilities and mask differ".into(),
        ));
    }
    let mut sites: Vec<usize> = (0..gt.n_sites())
        .filter(|&s| mask.is_included(s) && !labels.is_void(gt.labels()[s]))
        .collect();
    if let Some(cap) = max_samples {
        if sites.len() > cap {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut picked: Vec<usize> = index::sample(&mut rng, sites.len(), cap)
                .into_iter()
                .map(|i| sites[i])
                .collect();
            picked.sort_unstable();
            sites = picked;
        }
    }
    let mut set = SampleSet::new(labels.size());
    for s in sites {
        set.push(gt.labels()[s] as usize, probs.pixel(s))?;
    }
    Ok(set)
}

fn check_inputs(weights: &[f64], confusion: &ConfusionModel, samples: &SampleSet) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    let n = confusion.size();
    if weights.len() != n || samples.n_classes() != n {
        return Err(Error::ShapeMismatch(format!(
            "prior has {} labels, confusion {}, samples {}",
            weights.len(),
            n,
            samples.n_classes()
        )));
    }
    Ok(())
}

/// `m = T p`; `None` if some entry is not positive.
fn output_marginal_of(weights: &[f64], confusion: &ConfusionModel) -> Option<Vec<f64>> {
    let m = confusion.matrix().mul_vec(weights);
    m.iter().all(|&v| v > 0.0).then_some(m)
}

/// `w[c][g] = T[c][g] / m[c]`, flattened row-major.
fn scaled_confusion(confusion: &ConfusionModel, marginal: &[f64]) -> Vec<f64> {
    let n = confusion.size();
    let mut w = vec![0.0; n * n];
    for c in 0..n {
        for g in 0..n {
            w[c * n + g] = confusion.prob(c, g) / marginal[c];
        }
    }
    w
}

/// Summed loss at an arbitrary positive weight vector (not necessarily on the simplex).
pub(crate) fn loss_at(weights: &[f64], confusion: &ConfusionModel, samples: &SampleSet) -> f64 {
    let n = confusion.size();
    let Some(m) = output_marginal_of(weights, confusion) else {
        return f64::INFINITY;
    };
    let w = scaled_confusion(confusion, &m);
    let floor = -LOSS_EPSILON.ln();
    samples
        .iter()
        .map(|(g, x)| {
            let s: f64 = (0..n).map(|c| w[c * n + g] * x[c]).sum();
            let p = weights[g] * s;
            if p > LOSS_EPSILON {
                -p.ln()
            } else {
                floor
            }
        })
        .sum()
}

pub(crate) fn gradient_at(
    weights: &[f64],
    confusion: &ConfusionModel,
    samples: &SampleSet,
) -> Result<Vec<f64>> {
    let n = confusion.size();
    let m = output_marginal_of(weights, confusion).ok_or_else(|| {
        Error::Solver("output marginal vanished; confusion must be strictly positive".into())
    })?;
    let w = scaled_confusion(confusion, &m);
    // grad[k] = sum_i [ -delta(k, g_i) / p[g_i] + (p[g_i] / P_i) * sum_c T[c][k] v_i[c] ],
    // v_i[c] = T[c][g_i] x_i[c] / m[c]^2. The inner sum is hoisted out of the sample loop.
    let mut direct = vec![0.0; n];
    let mut pooled = vec![0.0; n];
    for (g, x) in samples.iter() {
        let s: f64 = (0..n).map(|c| w[c * n + g] * x[c]).sum();
        let p = weights[g] * s;
        if p <= LOSS_EPSILON {
            continue;
        }
        direct[g] -= 1.0 / weights[g];
        let scale = weights[g] / p;
        for c in 0..n {
            pooled[c] += scale * w[c * n + g] * x[c] / m[c];
        }
    }
    let back = confusion.matrix().mul_vec_transposed(&pooled);
    Ok(direct.iter().zip(back).map(|(d, b)| d + b).collect())
}

/// Summed negative log-loss of the refined ground-truth probabilities.
pub fn refinement_loss(
    prior: &Prior,
    confusion: &ConfusionModel,
    samples: &SampleSet,
) -> Result<f64> {
    check_inputs(prior.weights(), confusion, samples)?;
    Ok(loss_at(prior.weights(), confusion, samples))
}

/// Partial derivatives of [`refinement_loss`] with respect to each prior weight,
/// including the prior's effect on the output marginal. Clamped samples contribute zero.
pub fn refinement_loss_gradient(
    prior: &Prior,
    confusion: &ConfusionModel,
    samples: &SampleSet,
) -> Result<Vec<f64>> {
    check_inputs(prior.weights(), confusion, samples)?;
    gradient_at(prior.weights(), confusion, samples)
}

/// Euclidean projection onto `{x : x >= 0, sum x = 1}`.
pub fn project_to_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cumulative += uj;
        let t = (cumulative - 1.0) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitKind {
    Uniform,
    Histogram,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub max_iters: usize,
    /// Stop once no weight moves by more than this in an iteration.
    pub step_tolerance: f64,
    /// Stop once the summed loss drops by less than this in an iteration.
    pub loss_tolerance: f64,
    /// Log clamp; fixed at [`LOSS_EPSILON`].
    pub epsilon: f64,
    pub init: InitKind,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iters: 500,
            step_tolerance: 1e-9,
            loss_tolerance: 1e-10,
            epsilon: LOSS_EPSILON,
            init: InitKind::Histogram,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidArgument("max_iters must be positive".into()));
        }
        if !(self.step_tolerance > 0.0 && self.loss_tolerance > 0.0) {
            return Err(Error::InvalidArgument(
                "solver tolerances must be positive".into(),
            ));
        }
        if self.epsilon != LOSS_EPSILON {
            return Err(Error::InvalidArgument(format!(
                "the log clamp is fixed at {LOSS_EPSILON:e}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub prior: Prior,
    pub loss: f64,
    pub init_loss: f64,
    pub uniform_loss: f64,
    pub iterations: usize,
}

struct Descent {
    point: Vec<f64>,
    loss: f64,
    iterations: usize,
}

/// Projected gradient descent with Armijo backtracking along the projection arc.
fn descend(
    start: Vec<f64>,
    confusion: &ConfusionModel,
    samples: &SampleSet,
    opts: &SolverOptions,
) -> Result<Descent> {
    // steps are taken on the per-sample mean so the scale does not depend on N
    let scale = 1.0 / samples.len() as f64;
    let mut x = start;
    let mut loss = loss_at(&x, confusion, samples);
    if !loss.is_finite() {
        return Err(Error::Solver(format!(
            "loss at the initial prior is {loss}"
        )));
    }
    let mut step = 1.0;
    let mut iterations = 0;
    while iterations < opts.max_iters {
        iterations += 1;
        let grad: Vec<f64> = gradient_at(&x, confusion, samples)?
            .into_iter()
            .map(|g| g * scale)
            .collect();
        let mean_loss = loss * scale;
        let mut accepted = None;
        while step >= MIN_STEP {
            let trial: Vec<f64> = x.iter().zip(&grad).map(|(xi, gi)| xi - step * gi).collect();
            let cand = project_to_simplex(&trial);
            let decrease: f64 = grad
                .iter()
                .zip(cand.iter().zip(&x))
                .map(|(g, (c, xi))| g * (c - xi))
                .sum();
            let cand_loss = loss_at(&cand, confusion, samples);
            if cand_loss.is_finite()
                && cand_loss <= loss
                && cand_loss * scale <= mean_loss + ARMIJO * decrease
            {
                accepted = Some((cand, cand_loss));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, cand_loss)) = accepted else {
            break;
        };
        let moved = cand
            .iter()
            .zip(&x)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let dropped = loss - cand_loss;
        x = cand;
        loss = cand_loss;
        if moved < opts.step_tolerance || dropped < opts.loss_tolerance {
            break;
        }
        step = (step * 2.0).min(MAX_STEP);
    }
    Ok(Descent {
        point: x,
        loss,
        iterations,
    })
}

/// Minimizes [`refinement_loss`] over priors on the simplex.
///
/// The result never scores worse than the starting prior, nor worse than the
/// uniform prior: if descent from the configured start ends above the uniform
/// loss, a second descent from uniform is run and the better end point kept.
pub fn solve_unconstrained_prior_with_report(
    confusion: &ConfusionModel,
    samples: &SampleSet,
    opts: &SolverOptions,
) -> Result<SolveReport> {
    opts.validate()?;
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    let n = confusion.size();
    if samples.n_classes() != n {
        return Err(Error::ShapeMismatch(format!(
            "samples have {} classes, confusion {n}",
            samples.n_classes()
        )));
    }
    if !confusion.is_strictly_positive() {
        return Err(Error::InvalidConfusion(
            "the prior solver needs a strictly positive confusion matrix".into(),
        ));
    }
    let uniform = vec![1.0 / n as f64; n];
    let uniform_loss = loss_at(&uniform, confusion, samples);
    let start = match opts.init {
        InitKind::Uniform => uniform.clone(),
        InitKind::Histogram => samples.truth_histogram()?.weights().to_vec(),
    };
    let init_loss = loss_at(&start, confusion, samples);
    let mut best = descend(start, confusion, samples, opts)?;
    if opts.init != InitKind::Uniform && best.loss > uniform_loss {
        let alt = descend(uniform, confusion, samples, opts)?;
        if alt.loss < best.loss {
            best = Descent {
                iterations: best.iterations + alt.iterations,
                ..alt
            };
        }
    }
    Ok(SolveReport {
        prior: Prior::from_simplex_point(best.point),
        loss: best.loss,
        init_loss,
        uniform_loss,
        iterations: best.iterations,
    })
}

pub fn solve_unconstrained_prior(
    confusion: &ConfusionModel,
    samples: &SampleSet,
    opts: &SolverOptions,
) -> Result<Prior> {
    solve_unconstrained_prior_with_report(confusion, samples, opts).map(|r| r.prior)
}
