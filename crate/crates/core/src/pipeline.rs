//! File-to-file pipeline stages behind the `conflens` subcommands.
//!
//! Each stage loads and validates all of its inputs, computes its results in
//! memory, and only then writes outputs, so a validation failure leaves no
//! partial files behind. Work is spread over images with rayon; results are
//! collected in manifest order so outputs do not depend on the thread count.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::confusion::{
    accumulate_counts, border_mask, merge_counts, normalize_confusion, ConfusionModel,
    ConfusionSidecar, CountMatrix, PixelMask, DEFAULT_BORDER_RADIUS, DEFAULT_FLOOR,
};
use crate::data::{
    load_tensor, LabelMap, LoadedImage, Manifest, ProbabilityMap, Record, Split, LOAD_SUM_TOLERANCE,
};
use crate::error::{Error, Result};
use crate::matrix::SquareMatrix;
use crate::metrics::{evaluation_counts, render_matrix_heatmap, report_from_counts, EvalReport};
use crate::priors::{
    binary_prior, collect_samples, global_prior, histogram_prior, refinement_loss,
    solve_unconstrained_prior_with_report, uniform_prior, Prior, PriorBank, PriorKind, PriorLoss,
    SolverOptions,
};
use crate::refinement::{argmax_labels, build_refinement_matrix, labelbank_mask, refine_map};
use crate::synth::{generate, write_dataset, SynthSpec};

/// Default cap on solver samples drawn from one image.
pub const DEFAULT_MAX_SAMPLES: usize = 100_000;

/// Environment variable read as the default worker count.
pub const THREADS_ENV: &str = "CONFLENS_THREADS";

/// Runs `f` on a pool of `threads` workers (all cores when `None`).
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        if n == 0 {
            return Err(Error::InvalidArgument(
                "--threads must be at least 1".into(),
            ));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
        }
        _ => Ok(()),
    }
}

fn load_split(manifest: &Manifest, split: Split) -> Result<Vec<LoadedImage>> {
    manifest
        .require_split(split)?
        .into_par_iter()
        .map(|rec| manifest.load_image(rec, LOAD_SUM_TOLERANCE))
        .collect()
}

/// Refined outputs live at `<dir>/<id>.probs.segt` and `<dir>/<id>.labels.segt`.
pub fn refined_probs_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.probs.segt"))
}

pub fn predicted_labels_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.labels.segt"))
}

#[derive(Debug, Clone)]
pub struct ConfusionArgs {
    pub manifest: PathBuf,
    pub radius: usize,
    pub floor: f64,
    pub out: PathBuf,
}

impl ConfusionArgs {
    pub fn new(manifest: impl Into<PathBuf>, out: impl Into<PathBuf>) -> Self {
        Self {
            manifest: manifest.into(),
            radius: DEFAULT_BORDER_RADIUS,
            floor: DEFAULT_FLOOR,
            out: out.into(),
        }
    }
}

/// Per-image border-masked counts over a split, merged in manifest order.
pub fn estimate_counts(
    images: &[LoadedImage],
    manifest: &Manifest,
    radius: usize,
) -> Result<CountMatrix> {
    let partials = images
        .par_iter()
        .map(|im| {
            let pred = argmax_labels(&im.probs);
            let mask = border_mask(&im.gt, radius);
            accumulate_counts(&im.gt, &pred, &mask, &manifest.labels)
        })
        .collect::<Result<Vec<_>>>()?;
    partials
        .iter()
        .try_fold(CountMatrix::zeros(manifest.labels.size()), |acc, c| {
            merge_counts(&acc, c)
        })
}

/// Estimates the confusion model from the estimation split.
pub fn cmd_confusion(args: &ConfusionArgs) -> Result<ConfusionSidecar> {
    if args.floor.is_nan() || args.floor <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "--floor must be positive, got {}",
            args.floor
        )));
    }
    let manifest = Manifest::load(&args.manifest)?;
    let images = load_split(&manifest, Split::Estimation)?;
    let counts = estimate_counts(&images, &manifest, args.radius)?;
    let model = normalize_confusion(&counts, args.floor)?;
    let meta = ConfusionSidecar {
        floor: args.floor,
        radius: args.radius,
        n_images: images.len(),
        n_pixels: counts.total(),
    };
    ensure_parent(&args.out)?;
    model.store(&args.out, Some(&meta))?;
    Ok(meta)
}

#[derive(Debug, Clone)]
pub struct PriorArgs {
    pub manifest: PathBuf,
    pub kind: PriorKind,
    pub confusion: Option<PathBuf>,
    pub solver: SolverOptions,
    /// Border exclusion radius for solver samples.
    pub radius: usize,
    pub max_samples: Option<usize>,
    pub seed: u64,
    pub out: PathBuf,
}

impl PriorArgs {
    pub fn new(manifest: impl Into<PathBuf>, kind: PriorKind, out: impl Into<PathBuf>) -> Self {
        Self {
            manifest: manifest.into(),
            kind,
            confusion: None,
            solver: SolverOptions::default(),
            radius: DEFAULT_BORDER_RADIUS,
            max_samples: Some(DEFAULT_MAX_SAMPLES),
            seed: 0,
            out: out.into(),
        }
    }
}

fn sample_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Solves the unconstrained prior for one image and reports the reference losses.
pub fn solve_image_prior(
    image: &LoadedImage,
    manifest: &Manifest,
    confusion: &ConfusionModel,
    opts: &SolverOptions,
    mask: &PixelMask,
    max_samples: Option<usize>,
    seed: u64,
) -> Result<(Prior, PriorLoss)> {
    let samples = collect_samples(
        &image.gt,
        &image.probs,
        mask,
        &manifest.labels,
        max_samples,
        seed,
    )?;
    if samples.is_empty() {
        return Err(Error::InvalidManifest(format!(
            "{}: no unmasked non-void pixels to fit a prior on",
            image.id
        )));
    }
    let report = solve_unconstrained_prior_with_report(confusion, &samples, opts)?;
    let histogram = refinement_loss(&samples.truth_histogram()?, confusion, &samples)?;
    Ok((
        report.prior,
        PriorLoss {
            solved: report.loss,
            histogram,
            uniform: report.uniform_loss,
            iterations: report.iterations,
        },
    ))
}

/// Builds priors for every evaluation image.
pub fn build_prior_bank(args: &PriorArgs) -> Result<PriorBank> {
    args.solver.validate()?;
    let manifest = Manifest::load(&args.manifest)?;
    let eval: Vec<&Record> = manifest.require_split(Split::Evaluation)?;
    let ids: Vec<String> = eval.iter().map(|r| r.id.clone()).collect();
    match args.kind {
        PriorKind::Uniform => Ok(PriorBank::shared(
            args.kind,
            ids,
            uniform_prior(&manifest.labels),
        )),
        PriorKind::Global => Ok(PriorBank::shared(
            args.kind,
            ids,
            global_prior(&manifest, Split::Estimation)?,
        )),
        PriorKind::Binary | PriorKind::Histogram => {
            let entries = eval
                .par_iter()
                .map(|rec| {
                    let gt = manifest.load_gt(rec)?;
                    let p = match args.kind {
                        PriorKind::Binary => binary_prior(&gt, &manifest.labels),
                        _ => histogram_prior(&gt, &manifest.labels),
                    }
                    .map_err(|e| Error::InvalidManifest(format!("{}: {e}", rec.id)))?;
                    Ok((rec.id.clone(), p))
                })
                .collect::<Result<Vec<_>>>()?;
            PriorBank::new(args.kind, entries)
        }
        PriorKind::Unconstrained => {
            let path = args.confusion.as_ref().ok_or_else(|| {
                Error::InvalidArgument("--kind unconstrained requires --confusion".into())
            })?;
            let confusion = ConfusionModel::load(path)?;
            if confusion.size() != manifest.labels.size() {
                return Err(Error::InvalidConfusion(format!(
                    "confusion has {} labels, manifest {}",
                    confusion.size(),
                    manifest.labels.size()
                )));
            }
            let results = eval
                .par_iter()
                .enumerate()
                .map(|(i, rec)| {
                    let image = manifest.load_image(rec, LOAD_SUM_TOLERANCE)?;
                    let mask = border_mask(&image.gt, args.radius);
                    let (p, loss) = solve_image_prior(
                        &image,
                        &manifest,
                        &confusion,
                        &args.solver,
                        &mask,
                        args.max_samples,
                        sample_seed(args.seed, i),
                    )?;
                    Ok(((rec.id.clone(), p), loss))
                })
                .collect::<Result<Vec<_>>>()?;
            let (entries, losses): (Vec<_>, Vec<_>) = results.into_iter().unzip();
            Ok(PriorBank::new(args.kind, entries)?.with_solver(args.solver, losses))
        }
    }
}

pub fn cmd_prior(args: &PriorArgs) -> Result<PriorBank> {
    let bank = build_prior_bank(args)?;
    ensure_parent(&args.out)?;
    bank.store(&args.out)?;
    Ok(bank)
}

#[derive(Debug, Clone)]
pub struct RefineArgs {
    pub manifest: PathBuf,
    pub confusion: PathBuf,
    pub priors: PathBuf,
    pub out: PathBuf,
}

#[derive(Debug, Clone)]
pub struct LabelbankArgs {
    pub manifest: PathBuf,
    pub priors: PathBuf,
    pub out: PathBuf,
}

struct Refined {
    id: String,
    probs: ProbabilityMap,
    labels: LabelMap,
}

fn write_refined(out: &Path, refined: &[Refined]) -> Result<usize> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    refined.par_iter().try_for_each(|r| -> Result<()> {
        r.probs.store(refined_probs_path(out, &r.id))?;
        r.labels.store(predicted_labels_path(out, &r.id))
    })?;
    Ok(refined.len())
}

fn load_bank_for(manifest: &Manifest, path: &Path) -> Result<PriorBank> {
    let bank = PriorBank::load(path)?;
    bank.check_covers(manifest)?;
    Ok(bank)
}

/// Refines every evaluation image with its own prior; returns the number of images written.
pub fn cmd_refine(args: &RefineArgs) -> Result<usize> {
    let manifest = Manifest::load(&args.manifest)?;
    let confusion = ConfusionModel::load(&args.confusion)?;
    if confusion.size() != manifest.labels.size() {
        return Err(Error::InvalidConfusion(format!(
            "confusion has {} labels, manifest {}",
            confusion.size(),
            manifest.labels.size()
        )));
    }
    let bank = load_bank_for(&manifest, &args.priors)?;
    let images = load_split(&manifest, Split::Evaluation)?;
    let refined = images
        .into_par_iter()
        .map(|im| {
            let prior = bank.get(&im.id).expect("coverage checked");
            let r = build_refinement_matrix(&confusion, prior)?;
            let probs = refine_map(&r, &im.probs)?;
            let labels = argmax_labels(&probs);
            Ok(Refined {
                id: im.id,
                probs,
                labels,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_refined(&args.out, &refined)
}

/// Masks every evaluation image to the support of its prior.
pub fn cmd_labelbank(args: &LabelbankArgs) -> Result<usize> {
    let manifest = Manifest::load(&args.manifest)?;
    let bank = load_bank_for(&manifest, &args.priors)?;
    let images = load_split(&manifest, Split::Evaluation)?;
    let refined = images
        .into_par_iter()
        .map(|im| {
            let present = bank.get(&im.id).expect("coverage checked").support();
            let probs = labelbank_mask(&im.probs, &present)?;
            let labels = argmax_labels(&probs);
            Ok(Refined {
                id: im.id,
                probs,
                labels,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_refined(&args.out, &refined)
}

#[derive(Debug, Clone)]
pub struct EvalArgs {
    pub manifest: PathBuf,
    /// Directory of `<id>.labels.segt` predictions; `None` scores the raw classifier argmax.
    pub pred_dir: Option<PathBuf>,
    pub exclude_borders: bool,
    pub radius: usize,
    pub out: Option<PathBuf>,
}

impl EvalArgs {
    pub fn new(manifest: impl Into<PathBuf>, pred_dir: Option<PathBuf>) -> Self {
        Self {
            manifest: manifest.into(),
            pred_dir,
            exclude_borders: false,
            radius: DEFAULT_BORDER_RADIUS,
            out: None,
        }
    }
}

/// Scores predictions for the evaluation split.
pub fn cmd_eval(args: &EvalArgs) -> Result<EvalReport> {
    let manifest = Manifest::load(&args.manifest)?;
    let eval = manifest.require_split(Split::Evaluation)?;
    let partials = eval
        .par_iter()
        .map(|rec| {
            let gt = manifest.load_gt(rec)?;
            let pred = match &args.pred_dir {
                Some(dir) => LabelMap::load(predicted_labels_path(dir, &rec.id))?,
                None => argmax_labels(&manifest.load_image(rec, LOAD_SUM_TOLERANCE)?.probs),
            };
            if !pred.same_dims(gt.height(), gt.width()) {
                return Err(Error::ShapeMismatch(format!(
                    "{}: prediction {}x{} vs ground truth {}x{}",
                    rec.id,
                    pred.height(),
                    pred.width(),
                    gt.height(),
                    gt.width()
                )));
            }
            let mask = args.exclude_borders.then(|| border_mask(&gt, args.radius));
            evaluation_counts(&pred, &gt, &manifest.labels, mask.as_ref())
        })
        .collect::<Result<Vec<_>>>()?;
    let counts = partials
        .iter()
        .try_fold(CountMatrix::zeros(manifest.labels.size()), |acc, c| {
            merge_counts(&acc, c)
        })?;
    let report = report_from_counts(&counts)?;
    if let Some(out) = &args.out {
        ensure_parent(out)?;
        write_json(out, &report)?;
    }
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct RenderArgs {
    pub matrix: PathBuf,
    pub out: PathBuf,
    pub gamma: f64,
    pub block: usize,
}

pub fn cmd_render(args: &RenderArgs) -> Result<()> {
    let (dims, values) = load_tensor(&args.matrix)?.into_f32()?;
    if dims.len() != 2 || dims[0] != dims[1] {
        return Err(Error::ShapeMismatch(format!(
            "heatmaps need a square 2-D matrix, got dims {dims:?}"
        )));
    }
    let matrix = SquareMatrix::from_row_major(
        dims[0] as usize,
        values.into_iter().map(f64::from).collect(),
    )?;
    // encode first so bad input never leaves a file behind
    crate::metrics::encode_pgm(&matrix, args.gamma, args.block)?;
    ensure_parent(&args.out)?;
    render_matrix_heatmap(&matrix, &args.out, args.gamma, args.block)
}

#[derive(Debug, Clone)]
pub struct SynthArgs {
    pub spec: PathBuf,
    pub out_dir: PathBuf,
}

pub fn cmd_synth(args: &SynthArgs) -> Result<Manifest> {
    let spec = SynthSpec::load(&args.spec)?;
    let data = generate(&spec)?;
    write_dataset(&data, &args.out_dir)
}
