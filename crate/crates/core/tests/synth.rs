//! Phantom generator: class structure, seeding and storage.

use mricnn::nifti::{extract_plane, Plane};
use mricnn::synth::{
    generate_phantoms, read_labels, read_phantom, write_phantoms, Phantom, PhantomConfig,
};
use mricnn::{ClassLabel, Tensor};

fn config(seed: u64, difficulty: f64, per_class: usize) -> PhantomConfig {
    PhantomConfig {
        volume_shape: (32, 32, 24),
        subjects_per_class: per_class,
        seed,
        difficulty,
    }
}

fn central_axial(p: &Phantom) -> Tensor {
    extract_plane(&p.volume, Plane::Axial, p.volume.dims()[2] / 2).unwrap()
}

/// Dark pixels in the middle of the central axial slice.
fn void_area(p: &Phantom) -> usize {
    let s = central_axial(p);
    let (h, w) = (s.shape()[0], s.shape()[1]);
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let mut n = 0;
    for y in 0..h {
        for x in 0..w {
            let r = ((y as f64 - cy) / h as f64).hypot((x as f64 - cx) / w as f64);
            if r < 0.2 && s.get(&[y, x]).unwrap() < 0.25 {
                n += 1;
            }
        }
    }
    n
}

#[test]
fn void_grows_with_severity() {
    let ps = generate_phantoms(&config(1, 0.0, 3)).unwrap();
    let mean = |label: ClassLabel| {
        let v: Vec<usize> = ps
            .iter()
            .filter(|p| p.label == label)
            .map(void_area)
            .collect();
        v.iter().sum::<usize>() as f64 / v.len() as f64
    };
    let (nc, mci, ad) = (
        mean(ClassLabel::NC),
        mean(ClassLabel::MCI),
        mean(ClassLabel::AD),
    );
    assert!(nc > 0.0);
    assert!(mci > nc && ad > mci, "{nc} {mci} {ad}");
    assert!(ad >= 3.0 * nc, "{nc} vs {ad}");
}

#[test]
fn noise_free_values_are_the_four_levels() {
    let ps = generate_phantoms(&config(2, 0.0, 1)).unwrap();
    for p in &ps {
        assert!(p
            .volume
            .voxels()
            .data()
            .iter()
            .all(|v| [0.0, 0.5, 1.0].contains(v)));
    }
    let noisy = generate_phantoms(&config(2, 1.0, 1)).unwrap();
    assert!(noisy
        .iter()
        .all(|p| p.volume.voxels().data().iter().all(|v| v.abs() <= 20.0)));
}

#[test]
fn seeding_is_reproducible_and_thread_independent() {
    let c = config(7, 0.4, 2);
    let a = generate_phantoms(&c).unwrap();
    let single = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let b = single.install(|| generate_phantoms(&c).unwrap());
    assert_eq!(a, b);
    assert_ne!(
        a,
        generate_phantoms(&PhantomConfig {
            seed: 8,
            ..c.clone()
        })
        .unwrap()
    );
    let ids: Vec<&str> = a.iter().map(|p| p.subject_id.as_str()).collect();
    assert_eq!(
        ids,
        ["NC_0001", "NC_0002", "MCI_0001", "MCI_0002", "AD_0001", "AD_0002"]
    );
}

#[test]
fn invalid_configs_rejected() {
    assert!(generate_phantoms(&config(0, 0.0, 0)).is_err());
    assert!(generate_phantoms(&config(0, 1.5, 1)).is_err());
    assert!(generate_phantoms(&PhantomConfig {
        volume_shape: (8, 32, 32),
        ..config(0, 0.0, 1)
    })
    .is_err());
}

#[test]
fn write_then_read_round_trip() {
    let ps = generate_phantoms(&config(3, 0.3, 2)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_phantoms(&ps, dir.path()).unwrap();
    let entries = read_labels(dir.path()).unwrap();
    assert_eq!(entries.len(), 6);
    for (e, p) in entries.iter().zip(&ps) {
        assert_eq!(e.file, format!("{}.nii", p.subject_id));
        let back = read_phantom(dir.path(), e).unwrap();
        assert_eq!(back.label, p.label);
        assert_eq!(back.volume.voxels(), p.volume.voxels());
    }
}

/// Leave-one-out nearest-centroid accuracy on central axial slices.
fn nearest_centroid_accuracy(ps: &[Phantom]) -> f64 {
    let feats: Vec<Tensor> = ps.iter().map(central_axial).collect();
    let mut correct = 0;
    for (i, f) in feats.iter().enumerate() {
        let mut best = (f64::INFINITY, ClassLabel::NC);
        for c in ClassLabel::ALL {
            let members: Vec<&Tensor> = (0..ps.len())
                .filter(|&j| j != i && ps[j].label == c)
                .map(|j| &feats[j])
                .collect();
            let dist: f64 = (0..f.len())
                .map(|k| {
                    let centroid =
                        members.iter().map(|m| m.data()[k]).sum::<f64>() / members.len() as f64;
                    (f.data()[k] - centroid).powi(2)
                })
                .sum();
            if dist < best.0 {
                best = (dist, c);
            }
        }
        correct += usize::from(best.1 == ps[i].label);
    }
    correct as f64 / ps.len() as f64
}

#[test]
fn noise_makes_the_task_harder() {
    let easy = nearest_centroid_accuracy(&generate_phantoms(&config(4, 0.0, 8)).unwrap());
    let hard = nearest_centroid_accuracy(&generate_phantoms(&config(4, 1.0, 8)).unwrap());
    eprintln!("nearest centroid: {easy} clean, {hard} at full noise");
    assert!(easy >= 0.95, "{easy}");
    assert!(hard < easy, "{hard} vs {easy}");
}
