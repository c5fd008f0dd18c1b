//! Acceptance checks, one PASS/FAIL line each. Exits nonzero if any fails.
//!
//! Run with `cargo test -p mricnn-cli --test acceptance`.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use mricnn::gradcheck::{check_network, GradCheckConfig, GradCheckReport};
use mricnn::network::{
    build_arch, cross_entropy, one_hot, softmax, softmax_ce_gradient, Arch, FcVariant, NetworkSpec,
    Scale,
};
use mricnn::nifti::{read_nifti, write_nifti, Endian, NiftiVolume};
use mricnn::preprocess::{split_dataset, SliceDataset, SliceRecord, SplitRatios};
use mricnn::tensor::reference::{conv2d_direct, dense_naive, maxpool_scan};
use mricnn::tensor::{conv2d_forward, dense_forward, maxpool_forward, ConvGeometry, Exec};
use mricnn::{ClassLabel, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

const SOFTMAX_SUM_TOL: f64 = 1e-12;
const LN3_TOL: f64 = 1e-12;
const FD_TOL: f64 = 1e-4;
const FD_CASES: usize = 50;
const CONV_TOL: f64 = 1e-12;
const GRADCHECK_TOL: f64 = 1e-3;
const MIN_TEST_ACCURACY: f64 = 0.98;
const INITIAL_LOSS_TOL: f64 = 0.1;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn equation_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let logits = Tensor::from_fn(&[200, 3], |_| rng.random_range(-30.0..30.0));
    let p = softmax(&logits).map_err(|e| e.to_string())?;
    let worst_sum = p
        .data()
        .chunks(3)
        .map(|r| (r.iter().sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);
    ensure(worst_sum < SOFTMAX_SUM_TOL, || {
        format!("softmax row sum off by {worst_sum:e}")
    })?;

    let t = one_hot(&[0, 1, 2], 3).unwrap();
    let perfect = cross_entropy(&t, &t).unwrap();
    ensure(perfect == 0.0, || {
        format!("perfect prediction loss {perfect}")
    })?;
    let uniform = cross_entropy(&softmax(&Tensor::zeros(&[3, 3])).unwrap(), &t).unwrap();
    ensure((uniform - 3f64.ln()).abs() < LN3_TOL, || {
        format!("uniform loss {uniform}")
    })?;

    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for case in 0..FD_CASES {
        let n = 1 + case % 4;
        let z = Tensor::from_fn(&[n, 3], |_| rng.random_range(-3.0..3.0));
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let t = one_hot(&labels, 3).unwrap();
        let g = softmax_ce_gradient(&softmax(&z).unwrap(), &t).unwrap();
        let loss = |z: &Tensor| cross_entropy(&softmax(z).unwrap(), &t).unwrap();
        for k in 0..z.len() {
            let (mut a, mut b) = (z.clone(), z.clone());
            a.data_mut()[k] += h;
            b.data_mut()[k] -= h;
            let numeric = (loss(&a) - loss(&b)) / (2.0 * h);
            let analytic = g.data()[k];
            worst =
                worst.max((analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8));
        }
    }
    ensure(worst < FD_TOL, || {
        format!("gradient rel err {worst:e} over {FD_CASES} cases")
    })?;
    Ok(format!("row sums within {worst_sum:.1e}, CE(perfect)=0, CE(uniform)=ln 3, {FD_CASES} FD cases max rel err {worst:.1e}"))
}

fn layer_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut cases, mut worst): (usize, f64) = (0, 0.0);
    for n in 1..=2 {
        for c in 1..=3 {
            for h in 1..=8 {
                for w in 1..=8 {
                    for k in 1..=3 {
                        for s in 1..=2 {
                            for pad in 0..k {
                                let geom = ConvGeometry::square(k, s, pad);
                                if geom.output_dims(h, w).is_err() {
                                    continue;
                                }
                                let x = random(&mut rng, &[n, c, h, w]);
                                let wt = random(&mut rng, &[2, c, k, k]);
                                let b = random(&mut rng, &[2]);
                                let fast =
                                    conv2d_forward(&x, &wt, &b, &geom, Exec::Sequential).unwrap();
                                let slow = conv2d_direct(&x, &wt, &b, &geom).unwrap();
                                worst = worst
                                    .max(fast.max_abs_diff(&slow).ok_or("conv shape mismatch")?);
                                cases += 1;
                            }
                        }
                    }
                }
            }
        }
    }
    ensure(worst <= CONV_TOL, || format!("conv differs by {worst:e}"))?;
    let mut pools = 0;
    for h in 2..=9 {
        for (k, s) in [(2, 2), (3, 2), (2, 1)] {
            let geom = ConvGeometry::square(k, s, 0);
            if geom.output_dims(h, h).is_err() {
                continue;
            }
            let x = random(&mut rng, &[2, 2, h, h]);
            ensure(
                maxpool_forward(&x, &geom).unwrap().0 == maxpool_scan(&x, &geom).unwrap(),
                || format!("maxpool {h}x{h} k{k} s{s}"),
            )?;
            pools += 1;
        }
    }
    for d in 1..=8 {
        let (x, wt, b) = (
            random(&mut rng, &[3, d]),
            random(&mut rng, &[d, 4]),
            random(&mut rng, &[4]),
        );
        let diff = dense_forward(&x, &wt, &b)
            .unwrap()
            .max_abs_diff(&dense_naive(&x, &wt, &b).unwrap())
            .unwrap();
        ensure(diff <= CONV_TOL, || format!("dense differs by {diff:e}"))?;
    }
    Ok(format!(
        "{cases} conv shapes max |diff| {worst:.1e}, {pools} pool shapes exact, dense exact"
    ))
}

fn desk(arch: Arch) -> NetworkSpec {
    build_arch(arch, (1, 64, 64), Scale::Desk, None, FcVariant::Primary).unwrap()
}

fn gradcheck(spec: &NetworkSpec) -> Result<GradCheckReport, String> {
    let config = GradCheckConfig {
        tolerance: GRADCHECK_TOL,
        ..Default::default()
    };
    let report = check_network(spec, &config).map_err(|e| e.to_string())?;
    if let Some(t) = report.tensors.iter().find(|t| t.checked == 0) {
        return Err(format!("{} had no checkable coordinate", t.name));
    }
    ensure(report.passed(), || {
        format!("max rel err {:.3e}", report.max_rel_err())
    })?;
    Ok(report)
}

fn full_model_gradcheck() -> Outcome {
    let r = gradcheck(&desk(Arch::DeepConvNet))?;
    Ok(format!(
        "{} parameter tensors, max rel err {:.2e}",
        r.tensors.len(),
        r.max_rel_err()
    ))
}

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_mricnn"));
    c.arg("-q");
    c
}

fn run(args: &[&str]) -> Result<String, String> {
    let out = bin().args(args).output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "`mricnn {}` failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr).trim()
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

fn read_json(path: &Path) -> Result<Value, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| e.to_string())
}

fn make_corpus(root: &Path, per_class: &str, shape: &str, k: usize) -> Result<PathBuf, String> {
    let raw = root.join("raw");
    let corpus = root.join("corpus");
    run(&[
        "synth",
        "--out",
        p(&raw),
        "--per-class",
        per_class,
        "--shape",
        shape,
        "--difficulty",
        "0",
    ])?;
    let selection = format!("variance_top_k:{k}");
    run(&[
        "preprocess",
        "--input",
        p(&raw),
        "--out",
        p(&corpus),
        "--target",
        "64",
        "--planes",
        "axial",
        "--selection",
        &selection,
    ])?;
    Ok(corpus)
}

fn end_to_end() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let corpus = make_corpus(tmp.path(), "20", "64x64x48", 16)?;
    let out = tmp.path().join("run");
    run(&[
        "train",
        "--corpus",
        p(&corpus),
        "--out",
        p(&out),
        "--arch",
        "deepconvnet",
        "--scale",
        "desk",
        "--epochs",
        "10",
        "--batch-size",
        "16",
        "--lr",
        "0.001",
        "--deterministic",
    ])?;
    let summary = read_json(&out.join("report.json"))?;
    let report = &summary["report"];
    let accuracy = report["accuracy"].as_f64().ok_or("no accuracy")?;
    let initial = summary["initial_loss"].as_f64().ok_or("no initial loss")?;
    let confusion: Vec<Vec<u64>> =
        serde_json::from_value(report["confusion"].clone()).map_err(|e| e.to_string())?;
    let total: u64 = confusion.iter().flatten().sum();
    let trace: u64 = (0..confusion.len()).map(|k| confusion[k][k]).sum();
    ensure(accuracy >= MIN_TEST_ACCURACY, || {
        format!("test accuracy {accuracy}")
    })?;
    ensure((initial - 3f64.ln()).abs() < INITIAL_LOSS_TOL, || {
        format!("initial loss {initial}")
    })?;
    ensure(trace as f64 / total as f64 == accuracy, || {
        format!("trace {trace}/{total} vs accuracy {accuracy}")
    })?;
    Ok(format!(
        "test accuracy {accuracy:.4} ({trace}/{total}), initial loss {initial:.4}"
    ))
}

fn hundred_records() -> SliceDataset {
    let mut records = Vec::new();
    for (label, n) in [
        (ClassLabel::NC, 33),
        (ClassLabel::MCI, 39),
        (ClassLabel::AD, 28),
    ] {
        for i in 0..n {
            records.push(SliceRecord {
                subject_id: format!("{label}{}", i / 4),
                label,
                plane: mricnn::nifti::Plane::Axial,
                slice_index: i,
                pixels: Tensor::zeros(&[2, 2]),
            });
        }
    }
    SliceDataset::new(records).unwrap()
}

fn protocol() -> Outcome {
    let data = hundred_records();
    for seed in 0..20 {
        let s =
            split_dataset(&data, SplitRatios::default(), seed, false).map_err(|e| e.to_string())?;
        for c in ClassLabel::ALL {
            let n = data.count(c) as f64;
            for (part, ratio) in [(&s.train, 0.6), (&s.val, 0.2), (&s.test, 0.2)] {
                let got = part.count(c) as f64;
                ensure((got - n * ratio).abs() <= 1.0, || {
                    format!("seed {seed} {c}: {got} for share {}", n * ratio)
                })?;
            }
        }
    }
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let corpus = make_corpus(tmp.path(), "3", "64x64x24", 2)?;
    let out = tmp.path().join("run");
    run(&[
        "train",
        "--corpus",
        p(&corpus),
        "--out",
        p(&out),
        "--scale",
        "desk",
    ])?;
    let cfg = read_json(&out.join("run_manifest.json"))?["config"].clone();
    let get = |k: &str| {
        cfg[k]
            .as_str()
            .map(str::to_string)
            .ok_or(format!("`{k}` missing from run manifest"))
    };
    let (batch, epochs, lr) = (get("batch_size")?, get("epochs")?, get("lr")?);
    ensure(batch == "100", || format!("batch_size {batch}"))?;
    ensure(epochs == "70", || format!("epochs {epochs}"))?;
    ensure(lr.parse::<f64>() == Ok(1e-4), || format!("lr {lr}"))?;
    Ok(format!("60/20/20 within 1 per class over 20 seeds; manifest batch_size={batch} epochs={epochs} lr={lr}"))
}

/// Numeric NIfTI-1 header fields as `(offset, element size, count)`.
const NUMERIC_FIELDS: &[(usize, usize, usize)] = &[
    (0, 4, 1),
    (32, 4, 1),
    (36, 2, 1),
    (40, 2, 8),
    (56, 4, 3),
    (68, 2, 4),
    (76, 4, 11),
    (120, 2, 1),
    (124, 4, 6),
    (252, 2, 2),
    (256, 4, 18),
];

fn byte_swap(le: &[u8]) -> Vec<u8> {
    let mut be = le.to_vec();
    let mut swap = |start: usize, elem: usize, count: usize| {
        for i in 0..count {
            be[start + i * elem..start + (i + 1) * elem].reverse();
        }
    };
    for &(o, e, c) in NUMERIC_FIELDS {
        swap(o, e, c);
    }
    swap(352, 8, (le.len() - 352) / 8);
    be
}

fn format_suite() -> Outcome {
    let t = Tensor::from_fn(&[7, 5, 3], |i| {
        (i[0] as f64 - 3.0) * 0.37 + (i[1] * i[2]) as f64
    });
    let v = NiftiVolume::from_voxels(t, [1.2, 0.9, 2.5]).map_err(|e| e.to_string())?;
    let le = write_nifti(&v);
    let back = read_nifti(&le).map_err(|e| e.to_string())?;
    ensure(
        back.voxels() == v.voxels() && back.header == v.header,
        || "round trip changed the volume".into(),
    )?;
    let swapped = read_nifti(&byte_swap(&le)).map_err(|e| format!("byte-swapped: {e}"))?;
    ensure(swapped.header.endian == Endian::Big, || {
        "swapped file not detected as big-endian".into()
    })?;
    let mut h = swapped.header.clone();
    h.endian = Endian::Little;
    ensure(
        h == back.header && swapped.voxels() == back.voxels(),
        || "byte-swapped file parses differently".into(),
    )?;
    let mut bad = le.clone();
    bad[344..348].copy_from_slice(b"ni2\0");
    ensure(read_nifti(&bad).is_err(), || "bad magic accepted".into())?;
    Ok("round trip exact, big-endian fixture identical, bad magic rejected".into())
}

fn reproducibility() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let corpus = make_corpus(tmp.path(), "4", "64x64x24", 4)?;
    let mut hashes = Vec::new();
    for name in ["a", "b"] {
        let out = tmp.path().join(name);
        run(&[
            "train",
            "--corpus",
            p(&corpus),
            "--out",
            p(&out),
            "--scale",
            "desk",
            "--epochs",
            "3",
            "--batch-size",
            "8",
            "--lr",
            "0.001",
            "--seed",
            "11",
            "--deterministic",
        ])?;
        let outputs: BTreeMap<String, String> =
            serde_json::from_value(read_json(&out.join("run_manifest.json"))?["outputs"].clone())
                .map_err(|e| e.to_string())?;
        hashes.push(outputs);
    }
    let files = hashes[0].len();
    ensure(
        hashes[0].keys().any(|k| k.starts_with("checkpoints/")),
        || "no checkpoint files".into(),
    )?;
    ensure(hashes[0] == hashes[1], || {
        let diff: Vec<&String> = hashes[0]
            .iter()
            .filter(|(k, v)| hashes[1].get(*k) != Some(v))
            .map(|(k, _)| k)
            .collect();
        format!("outputs differ: {diff:?}")
    })?;
    Ok(format!(
        "{files} output files (checkpoints, report, metrics) bit-identical across two runs"
    ))
}

fn baselines() -> Outcome {
    let alex = desk(Arch::AlexNet);
    let vgg = desk(Arch::Vgg16);
    ensure(alex.conv_count() == 5, || {
        format!("AlexNet has {} conv layers", alex.conv_count())
    })?;
    ensure(vgg.conv_count() == 13 && vgg.dense_count() == 3, || {
        format!(
            "VGG-16 has {} conv + {} dense",
            vgg.conv_count(),
            vgg.dense_count()
        )
    })?;
    for (name, spec) in [("AlexNet", &alex), ("VGG-16", &vgg)] {
        let paper = build_arch(
            if name == "AlexNet" {
                Arch::AlexNet
            } else {
                Arch::Vgg16
            },
            (1, 224, 224),
            Scale::Paper,
            None,
            FcVariant::Primary,
        )
        .map_err(|e| e.to_string())?;
        ensure(
            paper.conv_count() == spec.conv_count() && paper.dense_count() == spec.dense_count(),
            || format!("{name} depth differs between scales"),
        )?;
    }
    let ra = gradcheck(&alex).map_err(|e| format!("AlexNet: {e}"))?;
    let rv = gradcheck(&vgg).map_err(|e| format!("VGG-16: {e}"))?;
    Ok(format!(
        "AlexNet 5 conv (gradcheck {:.1e}), VGG-16 13 conv + 3 dense (gradcheck {:.1e})",
        ra.max_rel_err(),
        rv.max_rel_err()
    ))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("equation suite", equation_suite),
        ("layer oracles", layer_oracles),
        ("full-model gradient check", full_model_gradcheck),
        ("end-to-end learning", end_to_end),
        ("protocol fidelity", protocol),
        ("format suite", format_suite),
        ("reproducibility", reproducibility),
        ("baseline builders", baselines),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {} {name}: {detail} ({secs:.1}s)", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {} {name}: {detail} ({secs:.1}s)", i + 1);
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
