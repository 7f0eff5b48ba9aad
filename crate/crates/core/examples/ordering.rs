//! Runs every refinement variant on the reference synthetic dataset and prints
//! pixel accuracy and mean IoU for each.
//!
//! ```text
//! cargo run --release -p conflens-core --example ordering [out-dir] [spec.json]
//! ```

use std::path::PathBuf;
use std::time::Instant;

use conflens::pipeline::*;
use conflens::synth::{bayes_optimal_accuracy, generate, write_dataset};
use conflens::{PriorKind, Split, SynthSpec};

fn main() -> conflens::Result<()> {
    let mut args = std::env::args().skip(1);
    let out: PathBuf = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("conflens-ordering"));
    let spec = match args.next() {
        Some(p) => SynthSpec::load(p)?,
        None => SynthSpec::reference(),
    };
    let start = Instant::now();
    let data = generate(&spec)?;
    let gts: Vec<_> = data.split(Split::Evaluation).map(|im| &im.gt).collect();
    let bayes = bayes_optimal_accuracy(&spec.true_matrix(), &gts, &data.labels)?;
    write_dataset(&data, &out)?;
    let manifest = out.join("manifest.json");
    let confusion = out.join("confusion.segt");
    cmd_confusion(&ConfusionArgs::new(&manifest, &confusion))?;

    let score = |name: &str, pred: Option<PathBuf>| -> conflens::Result<()> {
        let r = cmd_eval(&EvalArgs::new(&manifest, pred))?;
        println!(
            "{name:<14} accuracy {:6.2}  mIoU {:6.2}",
            100.0 * r.pixel_accuracy,
            100.0 * r.mean_iou
        );
        Ok(())
    };
    score("base", None)?;
    let binary = out.join("binary.segt");
    cmd_prior(&PriorArgs::new(&manifest, PriorKind::Binary, &binary))?;
    let lb = out.join("labelbank");
    cmd_labelbank(&LabelbankArgs {
        manifest: manifest.clone(),
        priors: binary.clone(),
        out: lb.clone(),
    })?;
    score("labelbank", Some(lb))?;
    for kind in [
        PriorKind::Uniform,
        PriorKind::Global,
        PriorKind::Binary,
        PriorKind::Histogram,
        PriorKind::Unconstrained,
    ] {
        let priors = out.join(format!("{}.segt", kind.name()));
        let mut args = PriorArgs::new(&manifest, kind, &priors);
        args.confusion = Some(confusion.clone());
        cmd_prior(&args)?;
        let dir = out.join(format!("refined-{}", kind.name()));
        cmd_refine(&RefineArgs {
            manifest: manifest.clone(),
            confusion: confusion.clone(),
            priors,
            out: dir.clone(),
        })?;
        score(kind.name(), Some(dir))?;
    }
    println!("bayes-optimal  accuracy {:6.2}", 100.0 * bayes);
    println!("elapsed {:.1?}", start.elapsed());
    Ok(())
}
