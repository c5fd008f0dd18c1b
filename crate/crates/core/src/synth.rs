//! Seeded phantom volumes with three structurally distinct classes.
//!
//! Every phantom is an ellipsoidal "brain" (intensity 0.5) holding a
//! brighter inner ellipsoid (1.0) and a dark central void (0.0). Relative to
//! NC, MCI shrinks the inner ellipsoid by 15% and doubles the void radius;
//! AD shrinks it by 30% and quadruples the void radius. These magnitudes are
//! arbitrary; they only need to be learnable at small sizes.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::nifti::{read_nifti, write_nifti, NiftiVolume};
use crate::tensor::Tensor;
use crate::{ClassLabel, Error, Result};

/// Voxel values are clipped into this range.
pub const VALUE_RANGE: (f64, f64) = (-20.0, 20.0);
/// Noise standard deviation at difficulty 1.
pub const MAX_NOISE_SIGMA: f64 = 4.0;
pub const LABELS_FILE: &str = "labels.tsv";
const LABELS_HEADER: &str = "subject_id\tlabel\tfile";

const BRAIN_FRACTION: f64 = 0.9;
const INNER_FRACTION: f64 = 0.7;
const VOID_FRACTION: f64 = 0.08;
const BRAIN_VALUE: f64 = 0.5;
const INNER_VALUE: f64 = 1.0;
const VOID_VALUE: f64 = 0.0;
const SHAPE_JITTER: f64 = 0.03;
const CENTER_JITTER: f64 = 1.0;

/// Inner-ellipsoid scale and void-radius scale per class.
pub fn class_signature(label: ClassLabel) -> (f64, f64) {
    match label {
        ClassLabel::NC => (1.0, 1.0),
        ClassLabel::MCI => (0.85, 2.0),
        ClassLabel::AD => (0.7, 4.0),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomConfig {
    /// `(X, Y, Z)`.
    pub volume_shape: (usize, usize, usize),
    pub subjects_per_class: usize,
    pub seed: u64,
    /// Noise amplitude relative to the class signal, in `[0, 1]`.
    pub difficulty: f64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            volume_shape: (64, 64, 48),
            subjects_per_class: 10,
            seed: 0,
            difficulty: 0.0,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        let (x, y, z) = self.volume_shape;
        if x.min(y).min(z) < 16 {
            return Err(Error::Config(format!(
                "phantom axes must be at least 16, got {x}x{y}x{z}"
            )));
        }
        if self.subjects_per_class == 0 {
            return Err(Error::Config(
                "subjects_per_class must be at least 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.difficulty) {
            return Err(Error::Config(format!(
                "difficulty must lie in [0, 1], got {}",
                self.difficulty
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub subject_id: String,
    pub label: ClassLabel,
    pub volume: NiftiVolume,
}

fn render(
    shape: (usize, usize, usize),
    label: ClassLabel,
    difficulty: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor> {
    let (nx, ny, nz) = shape;
    let dims = [nx as f64, ny as f64, nz as f64];
    let mut center = [0.0; 3];
    let mut brain = [0.0; 3];
    for a in 0..3 {
        center[a] = (dims[a] - 1.0) / 2.0 + rng.random_range(-CENTER_JITTER..=CENTER_JITTER);
        brain[a] = BRAIN_FRACTION * dims[a] / 2.0;
    }
    let (inner_scale, void_scale) = class_signature(label);
    let jitter = 1.0 + rng.random_range(-SHAPE_JITTER..=SHAPE_JITTER);
    let inner = brain.map(|r| r * INNER_FRACTION * inner_scale * jitter);
    let void = brain.map(|r| r * VOID_FRACTION * void_scale * jitter);
    let noise = Normal::new(0.0, MAX_NOISE_SIGMA * difficulty)
        .map_err(|e| Error::Internal(e.to_string()))?;

    let inside = |p: [f64; 3], r: [f64; 3]| {
        (0..3)
            .map(|a| ((p[a] - center[a]) / r[a]).powi(2))
            .sum::<f64>()
            <= 1.0
    };
    let mut data = Vec::with_capacity(nx * ny * nz);
    for x in 0..nx {
        for y in 0..ny {
            for z in 0..nz {
                let p = [x as f64, y as f64, z as f64];
                let base = if !inside(p, brain) {
                    0.0
                } else if inside(p, void) {
                    VOID_VALUE
                } else if inside(p, inner) {
                    INNER_VALUE
                } else {
                    BRAIN_VALUE
                };
                let v = if difficulty > 0.0 {
                    base + noise.sample(rng)
                } else {
                    base
                };
                data.push(v.clamp(VALUE_RANGE.0, VALUE_RANGE.1));
            }
        }
    }
    Tensor::new(vec![nx, ny, nz], data)
}

/// Generates `subjects_per_class` phantoms per class, ordered NC, MCI, AD.
/// Subject `k` (0-based, in that order) draws from its own ChaCha8 stream,
/// so output is independent of thread scheduling.
pub fn generate_phantoms(config: &PhantomConfig) -> Result<Vec<Phantom>> {
    config.validate()?;
    let per = config.subjects_per_class;
    (0..per * ClassLabel::COUNT)
        .into_par_iter()
        .map(|k| {
            let label = ClassLabel::ALL[k / per];
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(k as u64);
            let voxels = render(config.volume_shape, label, config.difficulty, &mut rng)?;
            Ok(Phantom {
                subject_id: format!("{}_{:04}", label, k % per + 1),
                label,
                volume: NiftiVolume::from_voxels(voxels, [1.0; 3])?,
            })
        })
        .collect()
}

/// Writes `<subject>.nii` per phantom plus `labels.tsv`.
pub fn write_phantoms(phantoms: &[Phantom], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut labels = String::from(LABELS_HEADER);
    labels.push('\n');
    for p in phantoms {
        let file = format!("{}.nii", p.subject_id);
        let path = dir.join(&file);
        fs::write(&path, write_nifti(&p.volume)).map_err(|e| Error::io(&path, e))?;
        labels.push_str(&format!("{}\t{}\t{}\n", p.subject_id, p.label, file));
    }
    let path = dir.join(LABELS_FILE);
    fs::write(&path, labels).map_err(|e| Error::io(&path, e))
}

/// One row of `labels.tsv`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelEntry {
    pub subject_id: String,
    pub label: ClassLabel,
    /// Relative to the dataset directory.
    pub file: String,
}

pub fn read_labels(dir: &Path) -> Result<Vec<LabelEntry>> {
    let path = dir.join(LABELS_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut lines = text.lines().enumerate();
    if lines.next().map(|(_, l)| l) != Some(LABELS_HEADER) {
        return Err(Error::Format(format!("{LABELS_FILE}: missing header line")));
    }
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let f: Vec<&str> = l.split('\t').collect();
            let [subject, label, file] = f[..] else {
                return Err(Error::Format(format!(
                    "{LABELS_FILE} line {}: expected 3 fields",
                    i + 1
                )));
            };
            Ok(LabelEntry {
                subject_id: subject.into(),
                label: label.parse()?,
                file: file.into(),
            })
        })
        .collect()
}

/// Reads a phantom back from disk.
pub fn read_phantom(dir: &Path, entry: &LabelEntry) -> Result<Phantom> {
    let path = dir.join(&entry.file);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    Ok(Phantom {
        subject_id: entry.subject_id.clone(),
        label: entry.label,
        volume: read_nifti(&bytes)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64, difficulty: f64) -> PhantomConfig {
        PhantomConfig {
            volume_shape: (24, 24, 16),
            subjects_per_class: 2,
            seed,
            difficulty,
        }
    }

    #[test]
    fn ids_and_order() {
        let ps = generate_phantoms(&small(1, 0.0)).unwrap();
        let ids: Vec<&str> = ps.iter().map(|p| p.subject_id.as_str()).collect();
        assert_eq!(
            ids,
            ["NC_0001", "NC_0002", "MCI_0001", "MCI_0002", "AD_0001", "AD_0002"]
        );
    }

    #[test]
    fn seeded() {
        assert_eq!(
            generate_phantoms(&small(5, 0.3)).unwrap(),
            generate_phantoms(&small(5, 0.3)).unwrap()
        );
        assert_ne!(
            generate_phantoms(&small(5, 0.3)).unwrap(),
            generate_phantoms(&small(6, 0.3)).unwrap()
        );
    }

    #[test]
    fn values_in_range() {
        for p in generate_phantoms(&small(2, 1.0)).unwrap() {
            assert!(p
                .volume
                .voxels()
                .data()
                .iter()
                .all(|v| (VALUE_RANGE.0..=VALUE_RANGE.1).contains(v)));
        }
    }

    #[test]
    fn invalid_configs() {
        assert!(generate_phantoms(&PhantomConfig {
            subjects_per_class: 0,
            ..Default::default()
        })
        .is_err());
        assert!(generate_phantoms(&PhantomConfig {
            volume_shape: (15, 64, 64),
            ..Default::default()
        })
        .is_err());
        assert!(generate_phantoms(&PhantomConfig {
            difficulty: 1.5,
            ..Default::default()
        })
        .is_err());
    }
}
