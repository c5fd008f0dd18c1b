use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use flate2::read::GzDecoder;
use mricnn::nifti::read_nifti;
use mricnn::preprocess::{
    build_dataset, write_corpus, LabeledVolume, PreprocessConfig, SliceDataset,
};
use mricnn::synth::{read_labels, LABELS_FILE};
use mricnn::ClassLabel;

use crate::manifest::{base_config, put, write_text, RunManifest};

const KEYS: &[&str] = &[
    "target",
    "planes",
    "selection",
    "normalization",
    "interpolation",
];

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// Directory with `labels.tsv` and the volumes it lists (`.nii` or `.nii.gz`).
    #[arg(long)]
    input: PathBuf,
    /// Corpus output directory.
    #[arg(long)]
    out: PathBuf,
    /// Slice size, `N` or `HxW`.
    #[arg(long)]
    target: Option<String>,
    /// Comma-separated subset of axial, coronal, sagittal.
    #[arg(long)]
    planes: Option<String>,
    /// `all`, `variance_top_k:K` or `center_band:F`.
    #[arg(long)]
    selection: Option<String>,
    /// `minmax_unit` or `zscore_clip:S`.
    #[arg(long)]
    normalization: Option<String>,
    /// `bilinear` or `nearest`.
    #[arg(long)]
    interpolation: Option<String>,
    /// Worker threads for slice extraction (default: all cores).
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    jobs: Option<u32>,
    #[arg(long)]
    config: Option<PathBuf>,
}

fn read_volume_bytes(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    if path.extension().is_some_and(|e| e == "gz") {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .with_context(|| format!("{}: gzip stream", path.display()))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// Per-class volume and slice counts, laid out like a demographics table.
pub fn class_table(volumes: &[LabeledVolume], dataset: &SliceDataset) -> String {
    let mut out = format!("{:<8}{:>10}{:>12}\n", "Class", "Volumes", "Slices");
    for c in ClassLabel::ALL {
        let v = volumes.iter().filter(|v| v.label == c).count();
        out.push_str(&format!(
            "{:<8}{:>10}{:>12}\n",
            c.as_str(),
            v,
            dataset.count(c)
        ));
    }
    out.push_str(&format!(
        "{:<8}{:>10}{:>12}\n",
        "Total",
        volumes.len(),
        dataset.len()
    ));
    out
}

pub fn run(args: PreprocessArgs) -> Result<()> {
    let mut run = RunManifest::start("preprocess");
    if !args.input.is_dir() {
        anyhow::bail!(mricnn::Error::Config(format!(
            "--input: {} is not a directory",
            args.input.display()
        )));
    }
    let mut kv = base_config(args.config.as_deref(), KEYS)?;
    put(&mut kv, "target", args.target);
    put(&mut kv, "planes", args.planes);
    put(&mut kv, "selection", args.selection);
    put(&mut kv, "normalization", args.normalization);
    put(&mut kv, "interpolation", args.interpolation);
    let mut config = PreprocessConfig::default();
    config.apply_kv(&kv)?;

    let labels_path = args.input.join(LABELS_FILE);
    let entries = read_labels(&args.input)?;
    run.input(&labels_path)?;
    let mut volumes = Vec::with_capacity(entries.len());
    for e in &entries {
        let path = args.input.join(&e.file);
        let bytes = read_volume_bytes(&path)?;
        let volume = read_nifti(&bytes).with_context(|| format!("{}", path.display()))?;
        run.inputs
            .insert(path.display().to_string(), mricnn::hash::sha256_hex(&bytes));
        volumes.push(LabeledVolume {
            subject_id: e.subject_id.clone(),
            label: e.label,
            volume,
        });
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs.unwrap_or(0) as usize)
        .build()
        .context("starting worker pool")?;
    let dataset = pool.install(|| build_dataset(&volumes, &config))?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    write_corpus(&dataset, &args.out)?;
    let resolved = config.to_kv();
    write_text(&args.out.join("config.txt"), &resolved.render())?;
    print!("{}", class_table(&volumes, &dataset));

    run.config(&resolved);
    run.outputs_under(&args.out)?;
    run.finish(&args.out)
}
