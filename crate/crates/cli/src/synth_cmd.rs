use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use mricnn::synth::{generate_phantoms, write_phantoms, PhantomConfig};

use crate::manifest::{base_config, put, RunManifest};

const KEYS: &[&str] = &["per_class", "seed", "difficulty", "shape"];

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory for `.nii` files and `labels.tsv`.
    #[arg(long)]
    out: PathBuf,
    /// Subjects per class.
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    per_class: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    /// Noise level in [0, 1].
    #[arg(long)]
    difficulty: Option<f64>,
    /// Volume shape `XxYxZ`.
    #[arg(long)]
    shape: Option<String>,
    /// Flat `key = value` file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn parse_shape(s: &str) -> Result<(usize, usize, usize)> {
    let dims: Vec<usize> = s
        .split('x')
        .map(|d| d.trim().parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| mricnn::Error::Config(format!("--shape: expected XxYxZ, got `{s}`")))?;
    match dims[..] {
        [x, y, z] => Ok((x, y, z)),
        _ => Err(mricnn::Error::Config(format!("--shape: expected XxYxZ, got `{s}`")).into()),
    }
}

pub fn run(args: SynthArgs) -> Result<()> {
    let mut run = RunManifest::start("synth");
    let mut kv = base_config(args.config.as_deref(), KEYS)?;
    put(&mut kv, "per_class", args.per_class);
    put(&mut kv, "seed", args.seed);
    put(&mut kv, "difficulty", args.difficulty);
    put(&mut kv, "shape", args.shape);

    let mut config = PhantomConfig::default();
    if let Some(n) = kv.parse_value::<usize>("per_class")? {
        if n == 0 {
            anyhow::bail!(mricnn::Error::Config(
                "--per-class must be at least 1".into()
            ));
        }
        config.subjects_per_class = n;
    }
    if let Some(s) = kv.parse_value("seed")? {
        config.seed = s;
    }
    if let Some(d) = kv.parse_value("difficulty")? {
        config.difficulty = d;
    }
    if let Some(s) = kv.get("shape") {
        config.volume_shape = parse_shape(s)?;
    }
    let (x, y, z) = config.volume_shape;
    kv.set("per_class", config.subjects_per_class);
    kv.set("seed", config.seed);
    kv.set("difficulty", config.difficulty);
    kv.set("shape", format!("{x}x{y}x{z}"));

    let phantoms = generate_phantoms(&config)?;
    write_phantoms(&phantoms, &args.out)?;
    log::info!(
        "wrote {} phantoms to {}",
        phantoms.len(),
        args.out.display()
    );

    run.config(&kv);
    run.seed = Some(config.seed);
    run.outputs_under(&args.out)?;
    run.finish(&args.out)
}
