use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use conflens::confusion::{DEFAULT_BORDER_RADIUS, DEFAULT_FLOOR};
use conflens::metrics::{DEFAULT_BLOCK, DEFAULT_GAMMA};
use conflens::pipeline::{self, DEFAULT_MAX_SAMPLES, THREADS_ENV};
use conflens::priors::{InitKind, PriorKind, SolverOptions};
use conflens::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_IO: u8 = 3;

/// Confusion-aware refinement of segmentation label probabilities.
#[derive(Debug, Parser)]
#[command(name = "conflens", version)]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = THREADS_ENV)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate a confusion matrix from the estimation split.
    Confusion(ConfusionCmd),
    /// Build per-image (or shared) label priors for the evaluation split.
    Prior(PriorCmd),
    /// Refine evaluation-split probability maps.
    Refine(RefineCmd),
    /// Mask evaluation-split maps to each image's prior support.
    Labelbank(LabelbankCmd),
    /// Score predictions against ground truth.
    Eval(EvalCmd),
    /// Render a matrix as a PGM heatmap.
    Render(RenderCmd),
    /// Generate a synthetic dataset from a spec file.
    Synth(SynthCmd),
}

#[derive(Debug, Args)]
struct ConfusionCmd {
    manifest: PathBuf,
    /// Border exclusion radius in pixels.
    #[arg(long, default_value_t = DEFAULT_BORDER_RADIUS)]
    radius: usize,
    #[arg(long, default_value_t = DEFAULT_FLOOR)]
    floor: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum KindArg {
    Uniform,
    Global,
    Binary,
    Histogram,
    Unconstrained,
}

impl From<KindArg> for PriorKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Uniform => PriorKind::Uniform,
            KindArg::Global => PriorKind::Global,
            KindArg::Binary => PriorKind::Binary,
            KindArg::Histogram => PriorKind::Histogram,
            KindArg::Unconstrained => PriorKind::Unconstrained,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum InitArg {
    Uniform,
    Histogram,
}

#[derive(Debug, Args)]
struct PriorCmd {
    manifest: PathBuf,
    #[arg(long, value_enum)]
    kind: KindArg,
    /// Confusion matrix (required for `unconstrained`).
    #[arg(long)]
    confusion: Option<PathBuf>,
    #[arg(long, default_value_t = SolverOptions::default().max_iters)]
    max_iters: usize,
    #[arg(long, default_value_t = SolverOptions::default().step_tolerance)]
    step_tolerance: f64,
    #[arg(long, default_value_t = SolverOptions::default().loss_tolerance)]
    loss_tolerance: f64,
    #[arg(long, value_enum, default_value = "histogram")]
    init: InitArg,
    /// Border exclusion radius for solver samples.
    #[arg(long, default_value_t = DEFAULT_BORDER_RADIUS)]
    radius: usize,
    /// Per-image cap on solver samples; 0 uses every eligible pixel.
    #[arg(long, default_value_t = DEFAULT_MAX_SAMPLES)]
    max_samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct RefineCmd {
    manifest: PathBuf,
    #[arg(long)]
    confusion: PathBuf,
    #[arg(long)]
    priors: PathBuf,
    /// Output directory for refined maps and label maps.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct LabelbankCmd {
    manifest: PathBuf,
    #[arg(long)]
    priors: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalCmd {
    #[arg(long)]
    manifest: PathBuf,
    /// Directory of `<id>.labels.segt` predictions; omit to score the raw argmax.
    #[arg(long)]
    pred_dir: Option<PathBuf>,
    #[arg(long)]
    exclude_borders: bool,
    #[arg(long, default_value_t = DEFAULT_BORDER_RADIUS)]
    radius: usize,
    /// Report path; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RenderCmd {
    #[arg(long)]
    matrix: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_GAMMA)]
    gamma: f64,
    #[arg(long, default_value_t = DEFAULT_BLOCK)]
    block: usize,
}

#[derive(Debug, Args)]
struct SynthCmd {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

fn run(command: Command) -> conflens::Result<()> {
    match command {
        Command::Confusion(c) => {
            let meta = pipeline::cmd_confusion(&pipeline::ConfusionArgs {
                manifest: c.manifest,
                radius: c.radius,
                floor: c.floor,
                out: c.out.clone(),
            })?;
            eprintln!(
                "wrote {} ({} images, {} pixels)",
                c.out.display(),
                meta.n_images,
                meta.n_pixels
            );
        }
        Command::Prior(c) => {
            let solver = SolverOptions {
                max_iters: c.max_iters,
                step_tolerance: c.step_tolerance,
                loss_tolerance: c.loss_tolerance,
                init: match c.init {
                    InitArg::Uniform => InitKind::Uniform,
                    InitArg::Histogram => InitKind::Histogram,
                },
                ..SolverOptions::default()
            };
            let bank = pipeline::cmd_prior(&pipeline::PriorArgs {
                manifest: c.manifest,
                kind: c.kind.into(),
                confusion: c.confusion,
                solver,
                radius: c.radius,
                max_samples: (c.max_samples > 0).then_some(c.max_samples),
                seed: c.seed,
                out: c.out.clone(),
            })?;
            eprintln!("wrote {} ({} priors)", c.out.display(), bank.ids().len());
        }
        Command::Refine(c) => {
            let n = pipeline::cmd_refine(&pipeline::RefineArgs {
                manifest: c.manifest,
                confusion: c.confusion,
                priors: c.priors,
                out: c.out.clone(),
            })?;
            eprintln!("refined {n} images into {}", c.out.display());
        }
        Command::Labelbank(c) => {
            let n = pipeline::cmd_labelbank(&pipeline::LabelbankArgs {
                manifest: c.manifest,
                priors: c.priors,
                out: c.out.clone(),
            })?;
            eprintln!("masked {n} images into {}", c.out.display());
        }
        Command::Eval(c) => {
            let print = c.out.is_none();
            let report = pipeline::cmd_eval(&pipeline::EvalArgs {
                manifest: c.manifest,
                pred_dir: c.pred_dir,
                exclude_borders: c.exclude_borders,
                radius: c.radius,
                out: c.out,
            })?;
            if print {
                let text = serde_json::to_string_pretty(&report)
                    .map_err(|e| Error::InvalidArgument(e.to_string()))?;
                println!("{text}");
            } else {
                eprintln!(
                    "pixel accuracy {:.4}, mean IoU {:.4}",
                    report.pixel_accuracy, report.mean_iou
                );
            }
        }
        Command::Render(c) => pipeline::cmd_render(&pipeline::RenderArgs {
            matrix: c.matrix,
            out: c.out,
            gamma: c.gamma,
            block: c.block,
        })?,
        Command::Synth(c) => {
            let manifest = pipeline::cmd_synth(&pipeline::SynthArgs {
                spec: c.spec,
                out_dir: c.out_dir.clone(),
            })?;
            eprintln!(
                "wrote {} records under {}",
                manifest.records.len(),
                c.out_dir.display()
            );
        }
    }
    Ok(())
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::InvalidArgument(_) => EXIT_USAGE,
        e if e.is_io() => EXIT_IO,
        _ => EXIT_DATA,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match pipeline::with_threads(cli.threads, || run(cli.command)).and_then(|r| r) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
