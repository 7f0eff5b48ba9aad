//! Label priors `P(l)`: uniform, global, binary, histogram and solved (unconstrained).

mod solver;

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use solver::{
    collect_samples, project_to_simplex, refinement_loss, refinement_loss_gradient,
    solve_unconstrained_prior, solve_unconstrained_prior_with_report, InitKind, SampleSet,
    SolveReport, SolverOptions, LOSS_EPSILON,
};

use crate::confusion::sidecar_path;
use crate::data::{load_tensor, store_tensor, LabelMap, LabelSet, Manifest, Split, Tensor};
use crate::error::{Error, Result};

/// Allowed deviation of a prior's total from 1.
pub const PRIOR_SUM_TOLERANCE: f64 = 1e-9;

/// A distribution over labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Prior {
    weights: Vec<f64>,
}

impl Prior {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.len() < 2 {
            return Err(Error::InvalidPrior(format!(
                "needs at least 2 labels, got {}",
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::InvalidPrior(format!(
                "weight {w} is negative or not finite"
            )));
        }
        let s: f64 = weights.iter().sum();
        if (s - 1.0).abs() > PRIOR_SUM_TOLERANCE {
            return Err(Error::InvalidPrior(format!("weights sum to {s}")));
        }
        Ok(Self { weights })
    }

    /// Scales non-negative weights to sum to one.
    pub fn from_unnormalized(weights: Vec<f64>) -> Result<Self> {
        let s: f64 = weights.iter().sum();
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::InvalidPrior(format!("weights sum to {s}")));
        }
        Self::new(weights.into_iter().map(|w| w / s).collect())
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn get(&self, label: usize) -> f64 {
        self.weights[label]
    }

    /// Labels with nonzero weight.
    pub fn support(&self) -> Vec<usize> {
        (0..self.len()).filter(|&l| self.weights[l] > 0.0).collect()
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            weights: perm.iter().map(|&p| self.weights[p]).collect(),
        }
    }

    pub(crate) fn from_simplex_point(weights: Vec<f64>) -> Self {
        debug_assert!((weights.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        let s: f64 = weights.iter().sum();
        Self {
            weights: weights.into_iter().map(|w| w / s).collect(),
        }
    }
}

pub fn uniform_prior(labels: &LabelSet) -> Prior {
    let n = labels.size();
    Prior {
        weights: vec![1.0 / n as f64; n],
    }
}

fn class_histogram<'a>(
    maps: impl IntoIterator<Item = &'a LabelMap>,
    labels: &LabelSet,
) -> Result<Vec<u64>> {
    let mut hist = vec![0u64; labels.size()];
    for gt in maps {
        for (site, &l) in gt.labels().iter().enumerate() {
            if labels.is_void(l) {
                continue;
            }
            let slot = hist.get_mut(l as usize).ok_or(Error::InvalidLabel {
                site,
                label: l as u32,
                size: labels.size(),
            })?;
            *slot += 1;
        }
    }
    if hist.iter().all(|&h| h == 0) {
        return Err(Error::NoValidPixels);
    }
    Ok(hist)
}

fn normalized_histogram(hist: &[u64]) -> Prior {
    let total: u64 = hist.iter().sum();
    Prior {
        weights: hist.iter().map(|&h| h as f64 / total as f64).collect(),
    }
}

/// Label frequencies pooled over a set of ground-truth maps.
pub fn global_prior_from_maps(maps: &[LabelMap], labels: &LabelSet) -> Result<Prior> {
    Ok(normalized_histogram(&class_histogram(maps, labels)?))
}

/// Label frequencies pooled over every ground-truth map in one split of a manifest.
pub fn global_prior(manifest: &Manifest, split: Split) -> Result<Prior> {
    let mut hist = vec![0u64; manifest.labels.size()];
    let mut any = false;
    for rec in manifest.require_split(split)? {
        let gt = manifest.load_gt(rec)?;
        if let Ok(h) = class_histogram([&gt], &manifest.labels) {
            any = true;
            hist.iter_mut().zip(h).for_each(|(a, b)| *a += b);
        }
    }
    if !any {
        return Err(Error::NoValidPixels);
    }
    Ok(normalized_histogram(&hist))
}

/// Equal weight on every class present in the image, zero elsewhere.
pub fn binary_prior(gt: &LabelMap, labels: &LabelSet) -> Result<Prior> {
    let hist = class_histogram([gt], labels)?;
    let k = hist.iter().filter(|&&h| h > 0).count();
    Ok(Prior {
        weights: hist
            .iter()
            .map(|&h| if h > 0 { 1.0 / k as f64 } else { 0.0 })
            .collect(),
    })
}

/// Fraction of the image's non-void pixels carrying each class.
pub fn histogram_prior(gt: &LabelMap, labels: &LabelSet) -> Result<Prior> {
    Ok(normalized_histogram(&class_histogram([gt], labels)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorKind {
    Uniform,
    Global,
    Binary,
    Histogram,
    Unconstrained,
}

impl PriorKind {
    pub fn name(self) -> &'static str {
        match self {
            PriorKind::Uniform => "uniform",
            PriorKind::Global => "global",
            PriorKind::Binary => "binary",
            PriorKind::Histogram => "histogram",
            PriorKind::Unconstrained => "unconstrained",
        }
    }

    /// Whether each image gets its own prior.
    pub fn is_per_image(self) -> bool {
        !matches!(self, PriorKind::Uniform | PriorKind::Global)
    }
}

impl fmt::Display for PriorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PriorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(PriorKind::Uniform),
            "global" => Ok(PriorKind::Global),
            "binary" => Ok(PriorKind::Binary),
            "histogram" => Ok(PriorKind::Histogram),
            "unconstrained" => Ok(PriorKind::Unconstrained),
            other => Err(Error::InvalidArgument(format!(
                "unknown prior kind {other:?}"
            ))),
        }
    }
}

/// Loss of the solved prior next to the closed-form references, per image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorLoss {
    pub solved: f64,
    pub histogram: f64,
    pub uniform: f64,
    pub iterations: usize,
}

/// Sidecar JSON next to a stored prior bank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorBankSidecar {
    pub kind: PriorKind,
    pub ids: Vec<String>,
    pub solver: Option<SolverOptions>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub losses: Option<Vec<PriorLoss>>,
}

/// Priors for the evaluation images, in manifest order.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorBank {
    kind: PriorKind,
    ids: Vec<String>,
    priors: Vec<Prior>,
    solver: Option<SolverOptions>,
    losses: Option<Vec<PriorLoss>>,
}

impl PriorBank {
    pub fn new(kind: PriorKind, entries: Vec<(String, Prior)>) -> Result<Self> {
        let n = entries.first().map(|(_, p)| p.len());
        if entries.iter().any(|(_, p)| Some(p.len()) != n) {
            return Err(Error::InvalidPrior(
                "priors in a bank must share a label set".into(),
            ));
        }
        let (ids, priors) = entries.into_iter().unzip();
        Ok(Self {
            kind,
            ids,
            priors,
            solver: None,
            losses: None,
        })
    }

    /// One prior repeated for every id.
    pub fn shared(kind: PriorKind, ids: Vec<String>, prior: Prior) -> Self {
        let priors = vec![prior; ids.len()];
        Self {
            kind,
            ids,
            priors,
            solver: None,
            losses: None,
        }
    }

    pub fn with_solver(mut self, opts: SolverOptions, losses: Vec<PriorLoss>) -> Self {
        self.solver = Some(opts);
        self.losses = Some(losses);
        self
    }

    pub fn kind(&self) -> PriorKind {
        self.kind
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn priors(&self) -> &[Prior] {
        &self.priors
    }

    pub fn losses(&self) -> Option<&[PriorLoss]> {
        self.losses.as_deref()
    }

    pub fn get(&self, id: &str) -> Option<&Prior> {
        self.ids
            .iter()
            .position(|i| i == id)
            .map(|i| &self.priors[i])
    }

    /// Errors unless every evaluation image of `manifest` has a prior of the right length.
    pub fn check_covers(&self, manifest: &Manifest) -> Result<()> {
        for rec in manifest.split(Split::Evaluation) {
            let p = self.get(&rec.id).ok_or_else(|| {
                Error::InvalidPrior(format!("no prior for evaluation image {:?}", rec.id))
            })?;
            if p.len() != manifest.labels.size() {
                return Err(Error::InvalidPrior(format!(
                    "prior for {:?} has {} entries, label set has {}",
                    rec.id,
                    p.len(),
                    manifest.labels.size()
                )));
            }
        }
        Ok(())
    }

    pub fn sidecar(&self) -> PriorBankSidecar {
        PriorBankSidecar {
            kind: self.kind,
            ids: self.ids.clone(),
            solver: self.solver,
            losses: self.losses.clone(),
        }
    }

    pub fn to_tensor(&self) -> Result<Tensor> {
        let n = self.priors.first().map_or(0, Prior::len);
        Tensor::from_f32(
            vec![self.priors.len() as u32, n as u32],
            self.priors
                .iter()
                .flat_map(|p| p.weights.iter().map(|&w| w as f32))
                .collect(),
        )
    }

    pub fn store(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if self.priors.is_empty() {
            return Err(Error::InvalidPrior(
                "cannot store an empty prior bank".into(),
            ));
        }
        store_tensor(path, &self.to_tensor()?)?;
        let side = sidecar_path(path);
        let text =
            serde_json::to_string_pretty(&self.sidecar()).map_err(|e| Error::json(&side, e))?;
        fs::write(&side, text + "\n").map_err(|e| Error::io(&side, e))
    }

    /// Reads a bank; rows are renormalized in `f64` after the `f32` round trip.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let side = sidecar_path(path);
        let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let meta: PriorBankSidecar =
            serde_json::from_str(&text).map_err(|e| Error::json(&side, e))?;
        let (dims, values) = load_tensor(path)?.into_f32()?;
        if dims.len() != 2 || dims[0] as usize != meta.ids.len() {
            return Err(Error::InvalidPrior(format!(
                "prior tensor dims {dims:?} do not match {} ids",
                meta.ids.len()
            )));
        }
        let n = dims[1] as usize;
        let priors = values
            .chunks_exact(n.max(1))
            .map(|row| {
                let w: Vec<f64> = row.iter().map(|&v| f64::from(v)).collect();
                let s: f64 = w.iter().sum();
                if (s - 1.0).abs() > 1e-5 {
                    return Err(Error::InvalidPrior(format!("stored row sums to {s}")));
                }
                Prior::from_unnormalized(w)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            kind: meta.kind,
            ids: meta.ids,
            priors,
            solver: meta.solver,
            losses: meta.losses,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(n: usize) -> LabelSet {
        LabelSet::plain(n).unwrap()
    }

    #[test]
    fn uniform_values() {
        assert_eq!(uniform_prior(&set(4)).weights(), &[0.25; 4]);
        assert_eq!(uniform_prior(&set(2)).weights(), &[0.5; 2]);
        for n in [2usize, 4, 8, 16, 64] {
            assert_eq!(uniform_prior(&set(n)).weights().iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn global_counts_pixels() {
        let one = LabelMap::new(2, 2, vec![0, 0, 0, 1]).unwrap();
        assert_eq!(
            global_prior_from_maps(&[one], &set(2)).unwrap().weights(),
            &[0.75, 0.25]
        );

        let a = LabelMap::filled(2, 2, 0).unwrap();
        let b = LabelMap::filled(3, 1, 0).unwrap();
        assert_eq!(
            global_prior_from_maps(&[a, b], &set(2)).unwrap().weights(),
            &[1.0, 0.0]
        );

        let void = LabelSet::new(2, None, Some(255)).unwrap();
        let half = LabelMap::new(1, 4, vec![255, 1, 255, 1]).unwrap();
        assert_eq!(
            global_prior_from_maps(&[half], &void).unwrap().weights(),
            &[0.0, 1.0]
        );

        let all_void = LabelMap::filled(2, 2, 255).unwrap();
        assert!(matches!(
            global_prior_from_maps(&[all_void], &void),
            Err(Error::NoValidPixels)
        ));
    }

    #[test]
    fn binary_values() {
        let gt = LabelMap::new(1, 4, vec![0, 3, 3, 0]).unwrap();
        assert_eq!(
            binary_prior(&gt, &set(5)).unwrap().weights(),
            &[0.5, 0.0, 0.0, 0.5, 0.0]
        );

        let single = LabelMap::filled(2, 2, 1).unwrap();
        assert_eq!(
            binary_prior(&single, &set(3)).unwrap().weights(),
            &[0.0, 1.0, 0.0]
        );

        let all = LabelMap::new(1, 4, vec![0, 1, 2, 3]).unwrap();
        assert_eq!(binary_prior(&all, &set(4)).unwrap(), uniform_prior(&set(4)));
    }

    #[test]
    fn binary_rejects_all_void() {
        let void = LabelSet::new(3, None, Some(200)).unwrap();
        let gt = LabelMap::filled(2, 2, 200).unwrap();
        assert!(matches!(
            binary_prior(&gt, &void),
            Err(Error::NoValidPixels)
        ));
        assert!(matches!(
            histogram_prior(&gt, &void),
            Err(Error::NoValidPixels)
        ));
    }

    #[test]
    fn histogram_values() {
        let gt = LabelMap::new(2, 2, vec![0, 0, 1, 1]).unwrap();
        assert_eq!(
            histogram_prior(&gt, &set(2)).unwrap().weights(),
            &[0.5, 0.5]
        );

        let mut v = vec![2u16; 10];
        v[4] = 0;
        let gt = LabelMap::new(2, 5, v).unwrap();
        let p = histogram_prior(&gt, &set(3)).unwrap();
        assert!((p.get(0) - 0.1).abs() < 1e-15);
        assert_eq!(p.get(1), 0.0);
        assert!((p.get(2) - 0.9).abs() < 1e-15);

        let single = LabelMap::filled(3, 3, 2).unwrap();
        assert_eq!(
            histogram_prior(&single, &set(4)).unwrap(),
            binary_prior(&single, &set(4)).unwrap()
        );
    }

    #[test]
    fn prior_validation() {
        assert!(Prior::new(vec![0.5, 0.6]).is_err());
        assert!(Prior::new(vec![1.5, -0.5]).is_err());
        assert!(Prior::new(vec![1.0]).is_err());
        assert!(Prior::from_unnormalized(vec![0.0, 0.0]).is_err());
        assert_eq!(
            Prior::from_unnormalized(vec![1.0, 3.0]).unwrap().weights(),
            &[0.25, 0.75]
        );
    }

    #[test]
    fn kind_parsing() {
        for k in ["uniform", "global", "binary", "histogram", "unconstrained"] {
            assert_eq!(k.parse::<PriorKind>().unwrap().name(), k);
        }
        assert!("hist".parse::<PriorKind>().is_err());
    }

    #[test]
    fn bank_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("priors.segt");
        let bank = PriorBank::new(
            PriorKind::Histogram,
            vec![
                ("a".into(), Prior::new(vec![0.1, 0.0, 0.9]).unwrap()),
                ("b".into(), Prior::new(vec![1.0 / 3.0; 3]).unwrap()),
            ],
        )
        .unwrap();
        bank.store(&path).unwrap();
        let back = PriorBank::load(&path).unwrap();
        assert_eq!(back.kind(), PriorKind::Histogram);
        assert_eq!(back.ids(), bank.ids());
        let a = back.get("a").unwrap();
        assert_eq!(a.get(1), 0.0);
        assert!((a.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((a.get(2) - 0.9).abs() < 1e-7);
        let side: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("priors.json")).unwrap())
                .unwrap();
        assert_eq!(side["kind"], "histogram");
        assert!(side["solver"].is_null());
    }

    fn arb_map() -> impl Strategy<Value = LabelMap> {
        prop::collection::vec(0u16..6, 1..40).prop_map(|v| LabelMap::new(1, v.len(), v).unwrap())
    }

    proptest! {
        #[test]
        fn constructors_produce_valid_priors(gt in arb_map()) {
            let labels = set(6);
            for p in [
                binary_prior(&gt, &labels).unwrap(),
                histogram_prior(&gt, &labels).unwrap(),
                global_prior_from_maps(std::slice::from_ref(&gt), &labels).unwrap(),
                uniform_prior(&labels),
            ] {
                prop_assert!(p.weights().iter().all(|&w| w >= 0.0));
                prop_assert!((p.weights().iter().sum::<f64>() - 1.0).abs() <= PRIOR_SUM_TOLERANCE);
            }
        }

        #[test]
        fn binary_and_histogram_share_support(gt in arb_map()) {
            let labels = set(6);
            prop_assert_eq!(
                binary_prior(&gt, &labels).unwrap().support(),
                histogram_prior(&gt, &labels).unwrap().support()
            );
            prop_assert_eq!(
                binary_prior(&gt, &labels).unwrap().support(),
                gt.present_classes(&labels)
            );
        }
    }
}
