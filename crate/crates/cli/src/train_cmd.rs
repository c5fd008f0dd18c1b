use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use mricnn::kv::KvConfig;
use mricnn::network::{
    build_arch, load_checkpoint, save_checkpoint, Arch, FcVariant, NetworkSpec, Scale,
};
use mricnn::preprocess::{
    read_corpus, split_dataset, DatasetSplits, SliceDataset, SplitRatios, MANIFEST_FILE,
};
use mricnn::training::{
    evaluate, export_curves, render_curves, train_with_progress, EpochMetrics, EvalReport,
    TrainConfig,
};
use mricnn::ClassLabel;
use serde::Serialize;

use crate::manifest::{base_config, put, write_json, write_text, RunManifest};

const MODEL_KEYS: &[&str] = &["arch", "scale", "divisor", "fc_variant"];
const SPLIT_KEYS: &[&str] = &["split", "split_seed", "group_by_subject"];
const TRAIN_KEYS: &[&str] = &[
    "epochs",
    "batch_size",
    "lr",
    "rho",
    "eps",
    "class_weighting",
    "seed",
    "deterministic",
];

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// deepconvnet, alexnet or vgg16.
    #[arg(long)]
    arch: Option<String>,
    /// paper or desk.
    #[arg(long)]
    scale: Option<String>,
    /// Width divisor for the AlexNet and VGG-16 baselines.
    #[arg(long)]
    divisor: Option<usize>,
    /// Deep ConvNet dense stack: primary (512..16) or alternate (1024..32).
    #[arg(long)]
    fc_variant: Option<String>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// Train, validation and test fractions.
    #[arg(long)]
    split: Option<String>,
    /// Seed for the split (default: the training seed).
    #[arg(long)]
    split_seed: Option<u64>,
    /// Keep each subject's slices in a single partition.
    #[arg(long)]
    group_by_subject: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Slice corpus written by `preprocess`.
    #[arg(long)]
    corpus: PathBuf,
    /// Run directory.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    split: SplitArgs,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    /// none or inverse_frequency.
    #[arg(long)]
    class_weighting: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Run every kernel on one thread.
    #[arg(long)]
    deterministic: bool,
    /// Also write curves.tsv and roc.tsv under `<out>/plots`.
    #[arg(long)]
    emit_plot_data: bool,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Checkpoint directory.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// train, val, test or all.
    #[arg(long, default_value = "test")]
    subset: String,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    split: SplitArgs,
    #[arg(long)]
    seed: Option<u64>,
    /// Write report.json and a run manifest here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Typically a run's `config.txt`.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn overlay_model(kv: &mut KvConfig, m: &ModelArgs) {
    put(kv, "arch", m.arch.as_ref());
    put(kv, "scale", m.scale.as_ref());
    put(kv, "divisor", m.divisor);
    put(kv, "fc_variant", m.fc_variant.as_ref());
}

fn overlay_split(kv: &mut KvConfig, s: &SplitArgs) {
    put(kv, "split", s.split.as_ref());
    put(kv, "split_seed", s.split_seed);
    if s.group_by_subject {
        kv.set("group_by_subject", true);
    }
}

struct ModelChoice {
    arch: Arch,
    scale: Scale,
    divisor: Option<usize>,
    fc: FcVariant,
}

impl ModelChoice {
    fn from_kv(kv: &KvConfig) -> Result<Self> {
        Ok(ModelChoice {
            arch: kv.parse_value("arch")?.unwrap_or(Arch::DeepConvNet),
            scale: kv.parse_value("scale")?.unwrap_or(Scale::Paper),
            divisor: kv.parse_value("divisor")?,
            fc: kv.parse_value("fc_variant")?.unwrap_or_default(),
        })
    }

    fn build(&self, input: (usize, usize, usize)) -> Result<NetworkSpec> {
        Ok(build_arch(
            self.arch,
            input,
            self.scale,
            self.divisor,
            self.fc,
        )?)
    }

    fn record(&self, kv: &mut KvConfig) {
        kv.set("arch", self.arch);
        kv.set("scale", self.scale);
        if let Some(d) = self.divisor {
            kv.set("divisor", d);
        }
        kv.set("fc_variant", self.fc);
    }
}

struct SplitChoice {
    ratios: SplitRatios,
    seed: u64,
    grouped: bool,
}

impl SplitChoice {
    fn from_kv(kv: &KvConfig, default_seed: u64) -> Result<Self> {
        Ok(SplitChoice {
            ratios: kv.parse_value("split")?.unwrap_or_default(),
            seed: kv.parse_value("split_seed")?.unwrap_or(default_seed),
            grouped: kv.parse_value("group_by_subject")?.unwrap_or(false),
        })
    }

    fn apply(&self, data: &SliceDataset) -> Result<DatasetSplits> {
        Ok(split_dataset(data, self.ratios, self.seed, self.grouped)?)
    }

    fn record(&self, kv: &mut KvConfig) {
        kv.set("split", self.ratios);
        kv.set("split_seed", self.seed);
        kv.set("group_by_subject", self.grouped);
    }
}

fn load_corpus(dir: &Path) -> Result<(SliceDataset, (usize, usize, usize))> {
    let data = read_corpus(dir).with_context(|| format!("loading corpus {}", dir.display()))?;
    let shape = data.input_shape().ok_or_else(|| {
        mricnn::Error::Data(format!("{}: empty or mixed-size corpus", dir.display()))
    })?;
    Ok((data, shape))
}

#[derive(Debug, Serialize)]
struct SplitCounts {
    train: [usize; ClassLabel::COUNT],
    val: [usize; ClassLabel::COUNT],
    test: [usize; ClassLabel::COUNT],
}

/// `report.json` of a training run.
#[derive(Debug, Serialize)]
struct TrainSummary<'a> {
    spec: String,
    best_epoch: usize,
    steps: u64,
    initial_loss: f64,
    split_counts: SplitCounts,
    report: &'a EvalReport,
}

fn print_report(report: &EvalReport) {
    println!("accuracy {:.4}  loss {:.4}", report.accuracy, report.loss);
    println!("confusion (rows true, cols predicted: NC MCI AD)");
    for (c, row) in ClassLabel::ALL.iter().zip(&report.confusion) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:>6}")).collect();
        println!("{:<4}{}", c.as_str(), cells.join(""));
    }
    for (c, m) in ClassLabel::ALL.iter().zip(&report.per_class) {
        let auc = report.roc[c.index()]
            .auc
            .map_or("n/a".to_string(), |a| format!("{a:.4}"));
        println!(
            "{:<4}precision {:.4} recall {:.4} f1 {:.4} auc {auc}",
            c.as_str(),
            m.precision,
            m.recall,
            m.f1
        );
    }
}

pub fn run_train(args: TrainArgs) -> Result<()> {
    let mut run = RunManifest::start("train");
    let allowed: Vec<&str> = [MODEL_KEYS, SPLIT_KEYS, TRAIN_KEYS].concat();
    let mut kv = base_config(args.config.as_deref(), &allowed)?;
    overlay_model(&mut kv, &args.model);
    overlay_split(&mut kv, &args.split);
    put(&mut kv, "epochs", args.epochs);
    put(&mut kv, "batch_size", args.batch_size);
    put(&mut kv, "lr", args.lr);
    put(&mut kv, "rho", args.rho);
    put(&mut kv, "eps", args.eps);
    put(&mut kv, "class_weighting", args.class_weighting.as_ref());
    put(&mut kv, "seed", args.seed);
    if args.deterministic {
        kv.set("deterministic", true);
    }

    let mut config = TrainConfig::default();
    config.apply_kv(&kv)?;
    let model = ModelChoice::from_kv(&kv)?;
    let split = SplitChoice::from_kv(&kv, config.seed)?;

    let (data, shape) = load_corpus(&args.corpus)?;
    run.input(&args.corpus.join(MANIFEST_FILE))?;
    let spec = model.build(shape)?;
    let splits = split.apply(&data)?;
    log::info!(
        "{} on {}x{}: {} parameters; {} / {} / {} slices",
        model.arch,
        shape.1,
        shape.2,
        spec.parameter_count()?,
        splits.train.len(),
        splits.val.len(),
        splits.test.len()
    );

    let mut resolved = config.to_kv();
    model.record(&mut resolved);
    split.record(&mut resolved);
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    write_text(&args.out.join("config.txt"), &resolved.render())?;

    let metrics_path = args.out.join("metrics.tsv");
    let mut seen: Vec<EpochMetrics> = Vec::new();
    let mut io_err = None;
    let outcome = train_with_progress(&spec, &splits, &config, |m| {
        seen.push(*m);
        if let Err(e) = write_text(&metrics_path, &render_curves(&seen)) {
            io_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = io_err {
        return Err(e);
    }

    let ckpt = args.out.join("checkpoints");
    save_checkpoint(
        &outcome.best,
        &ckpt.join("best"),
        outcome.steps,
        config.seed,
    )?;
    save_checkpoint(
        &outcome.last,
        &ckpt.join("last"),
        outcome.steps,
        config.seed,
    )?;
    let summary = TrainSummary {
        spec: spec.to_string(),
        best_epoch: outcome.best_epoch,
        steps: outcome.steps,
        initial_loss: outcome.initial_loss,
        split_counts: SplitCounts {
            train: splits.train.class_counts(),
            val: splits.val.class_counts(),
            test: splits.test.class_counts(),
        },
        report: &outcome.report,
    };
    write_json(&args.out.join("report.json"), &summary)?;
    if args.emit_plot_data {
        export_curves(&outcome.report, &args.out.join("plots"))?;
    }
    println!(
        "initial loss {:.4}; best validation epoch {}",
        outcome.initial_loss, outcome.best_epoch
    );
    print_report(&outcome.report);

    run.config(&resolved);
    run.seed = Some(config.seed);
    run.outputs_under(&args.out)?;
    run.finish(&args.out)
}

pub fn run_evaluate(args: EvaluateArgs) -> Result<()> {
    let mut run = RunManifest::start("evaluate");
    let allowed: Vec<&str> = [MODEL_KEYS, SPLIT_KEYS, TRAIN_KEYS].concat();
    let mut kv = base_config(args.config.as_deref(), &allowed)?;
    overlay_model(&mut kv, &args.model);
    overlay_split(&mut kv, &args.split);
    put(&mut kv, "seed", args.seed);
    let seed = kv.parse_value("seed")?.unwrap_or(0);
    let split = SplitChoice::from_kv(&kv, seed)?;

    let (data, shape) = load_corpus(&args.corpus)?;
    run.input(&args.corpus.join(MANIFEST_FILE))?;
    // Without an explicit architecture the checkpoint's own spec is used,
    // but it still has to fit the corpus.
    let expected = match kv.get("arch") {
        Some(_) => Some(ModelChoice::from_kv(&kv)?.build(shape)?),
        None => None,
    };
    let (net, _) = load_checkpoint(&args.checkpoint, expected.as_ref())?;
    if net.spec().input_shape != shape {
        anyhow::bail!(mricnn::Error::CheckpointMismatch(format!(
            "checkpoint expects {:?} inputs, corpus slices are {shape:?}",
            net.spec().input_shape
        )));
    }
    let subset = match args.subset.as_str() {
        "all" => data,
        name => {
            let s = split.apply(&data)?;
            match name {
                "train" => s.train,
                "val" => s.val,
                "test" => s.test,
                other => anyhow::bail!(mricnn::Error::Config(format!(
                    "--subset: expected train, val, test or all, got `{other}`"
                ))),
            }
        }
    };
    let report = evaluate(&net, &subset, mricnn::tensor::Exec::Parallel)?;
    print_report(&report);
    if let Some(out) = &args.out {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        write_json(&out.join("report.json"), &report)?;
        run.input(&args.checkpoint.join(mricnn::network::CHECKPOINT_MANIFEST))?;
        let mut resolved = KvConfig::default();
        split.record(&mut resolved);
        resolved.set("subset", &args.subset);
        run.config(&resolved);
        run.outputs_under(out)?;
        run.finish(out)?;
    }
    Ok(())
}
