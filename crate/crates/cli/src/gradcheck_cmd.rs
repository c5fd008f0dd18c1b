use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use mricnn::gradcheck::{check_network, GradCheckConfig};
use mricnn::network::{build_arch, Arch, FcVariant, Scale};

use crate::manifest::{write_json, RunManifest};
use crate::GradcheckFailed;

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value = "deepconvnet")]
    arch: Arch,
    #[arg(long, default_value = "desk")]
    scale: Scale,
    #[arg(long)]
    divisor: Option<usize>,
    #[arg(long, default_value = "primary")]
    fc_variant: FcVariant,
    /// Square input size (default: 64 at desk scale, 300 at paper scale).
    #[arg(long)]
    input: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Coordinates probed per parameter tensor.
    #[arg(long, default_value_t = 6)]
    samples: usize,
    #[arg(long, default_value_t = 2)]
    batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    tolerance: f64,
    /// Write gradcheck.json and a run manifest here.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn run(args: GradcheckArgs) -> Result<()> {
    let mut run = RunManifest::start("gradcheck");
    let size = args.input.unwrap_or(match args.scale {
        Scale::Desk => 64,
        Scale::Paper => 300,
    });
    let spec = build_arch(
        args.arch,
        (1, size, size),
        args.scale,
        args.divisor,
        args.fc_variant,
    )?;
    let config = GradCheckConfig {
        samples_per_tensor: args.samples,
        batch: args.batch,
        tolerance: args.tolerance,
        seed: args.seed,
        ..Default::default()
    };
    let report = check_network(&spec, &config)?;
    println!("{:<8}{:>14}  tensors", "layer", "max rel err");
    for (layer, err) in report.per_layer() {
        let names: Vec<String> = report
            .tensors
            .iter()
            .filter(|t| t.layer == layer)
            .map(|t| format!("{} ({} checked, {} skipped)", t.name, t.checked, t.skipped))
            .collect();
        println!("{layer:<8}{err:>14.3e}  {}", names.join(", "));
    }
    let passed = report.passed();
    println!(
        "{} {}: max relative error {:.3e} (tolerance {:.0e})",
        if passed { "PASS" } else { "FAIL" },
        args.arch,
        report.max_rel_err(),
        args.tolerance
    );
    if let Some(out) = &args.out {
        std::fs::create_dir_all(out)?;
        write_json(&out.join("gradcheck.json"), &report)?;
        run.seed = Some(args.seed);
        run.outputs_under(out)?;
        run.finish(out)?;
    }
    if passed {
        Ok(())
    } else {
        Err(GradcheckFailed.into())
    }
}
