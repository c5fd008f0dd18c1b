//! Volumes → labeled 2D slice corpus.
//!
//! Per volume: intensity normalization, slice selection on each requested
//! plane, extraction, and resampling to the target resolution. One volume
//! per subject is enforced, and records come out ordered by
//! (subject, plane, index) regardless of how many threads did the work.

mod corpus;
mod resize;
mod split;

pub use corpus::{read_corpus, read_manifest, write_corpus, CorpusEntry, MANIFEST_FILE};
pub use resize::{resize_slice, Interpolation};
pub use split::{split_dataset, DatasetSplits, SplitRatios};

use rayon::prelude::*;

use crate::kv::KvConfig;
use crate::nifti::{extract_plane, plane_extent, NiftiVolume, Plane};
use crate::tensor::Tensor;
use crate::{ClassLabel, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Normalization {
    /// `[min, max] → [0, 1]`; a constant volume maps to all zeros.
    MinMaxUnit,
    /// Standardize, clip at `±sigma`, then rescale `[-sigma, sigma] → [0, 1]`.
    ZScoreClip(f64),
}

impl std::fmt::Display for Normalization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Normalization::MinMaxUnit => f.write_str("minmax_unit"),
            Normalization::ZScoreClip(s) => write!(f, "zscore_clip:{s}"),
        }
    }
}

impl std::str::FromStr for Normalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = split_arg(s);
        match (name.as_str(), arg) {
            ("minmax" | "minmax_unit", None) => Ok(Normalization::MinMaxUnit),
            ("zscore_clip" | "zscore", a) => {
                let sigma = a.map(parse_f64).transpose()?.unwrap_or(3.0);
                Ok(Normalization::ZScoreClip(sigma))
            }
            _ => Err(Error::Config(format!("unknown normalization `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Selection {
    All,
    /// The `k` slices with the largest pixel variance.
    VarianceTopK(usize),
    /// The central `fraction` of the plane's indices.
    CenterBand(f64),
}

impl std::fmt::Display for Selection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Selection::All => f.write_str("all"),
            Selection::VarianceTopK(k) => write!(f, "variance_top_k:{k}"),
            Selection::CenterBand(x) => write!(f, "center_band:{x}"),
        }
    }
}

impl std::str::FromStr for Selection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = split_arg(s);
        match (name.as_str(), arg) {
            ("all", None) => Ok(Selection::All),
            ("variance_top_k" | "top_k", Some(a)) => a
                .trim()
                .parse()
                .map(Selection::VarianceTopK)
                .map_err(|_| Error::Config(format!("bad k in `{s}`"))),
            ("center_band", Some(a)) => Ok(Selection::CenterBand(parse_f64(a)?)),
            _ => Err(Error::Config(format!(
                "unknown selection `{s}` (all | variance_top_k:K | center_band:F)"
            ))),
        }
    }
}

fn split_arg(s: &str) -> (String, Option<&str>) {
    match s.split_once(':') {
        Some((n, a)) => (n.trim().to_ascii_lowercase(), Some(a)),
        None => (s.trim().to_ascii_lowercase(), None),
    }
}

fn parse_f64(s: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::Config(format!("`{s}` is not a number")))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessConfig {
    /// `(H, W)` of every emitted slice.
    pub target_size: (usize, usize),
    pub planes: Vec<Plane>,
    pub selection: Selection,
    pub normalization: Normalization,
    pub interpolation: Interpolation,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            target_size: (300, 300),
            planes: Plane::ALL.to_vec(),
            selection: Selection::VarianceTopK(128),
            normalization: Normalization::MinMaxUnit,
            interpolation: Interpolation::Bilinear,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.target_size;
        if h < 8 || w < 8 {
            return Err(Error::Config(format!(
                "target size {h}x{w} must be at least 8x8"
            )));
        }
        if self.planes.is_empty() {
            return Err(Error::Config("at least one plane is required".into()));
        }
        match self.selection {
            Selection::VarianceTopK(0) => {
                return Err(Error::Config("variance_top_k needs k >= 1".into()))
            }
            Selection::CenterBand(f) if !(f > 0.0 && f <= 1.0) => {
                return Err(Error::Config(format!(
                    "center_band fraction {f} outside (0, 1]"
                )))
            }
            _ => {}
        }
        if let Normalization::ZScoreClip(s) = self.normalization {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Config(format!(
                    "zscore_clip sigma {s} must be positive"
                )));
            }
        }
        Ok(())
    }

    /// Planes deduplicated in canonical order.
    fn ordered_planes(&self) -> Vec<Plane> {
        let mut p = self.planes.clone();
        p.sort();
        p.dedup();
        p
    }

    /// Applies recognized keys (`target`, `planes`, `selection`,
    /// `normalization`, `interpolation`) from a key-value config.
    pub fn apply_kv(&mut self, kv: &KvConfig) -> Result<()> {
        if let Some(t) = kv.get("target") {
            self.target_size = parse_target(t)?;
        }
        if let Some(p) = kv.get("planes") {
            self.planes = parse_planes(p)?;
        }
        if let Some(s) = kv.parse_value("selection")? {
            self.selection = s;
        }
        if let Some(n) = kv.parse_value("normalization")? {
            self.normalization = n;
        }
        if let Some(i) = kv.parse_value("interpolation")? {
            self.interpolation = i;
        }
        self.validate()
    }

    pub fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::default();
        kv.set(
            "target",
            format!("{}x{}", self.target_size.0, self.target_size.1),
        );
        kv.set(
            "planes",
            self.ordered_planes()
                .iter()
                .map(|p| p.as_str())
                .collect::<Vec<_>>()
                .join(","),
        );
        kv.set("selection", self.selection);
        kv.set("normalization", self.normalization);
        kv.set("interpolation", self.interpolation);
        kv
    }
}

/// `"64"` or `"64x48"` (height x width).
pub fn parse_target(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::Config(format!("bad target size `{s}`"));
    match s.split_once(['x', 'X']) {
        Some((h, w)) => Ok((
            h.trim().parse().map_err(|_| bad())?,
            w.trim().parse().map_err(|_| bad())?,
        )),
        None => {
            let n = s.trim().parse().map_err(|_| bad())?;
            Ok((n, n))
        }
    }
}

pub fn parse_planes(s: &str) -> Result<Vec<Plane>> {
    if s.trim().eq_ignore_ascii_case("all") {
        return Ok(Plane::ALL.to_vec());
    }
    s.split(',').map(str::parse).collect()
}

/// Rescales voxel intensities per `mode`. Constant volumes map to 0;
/// non-finite input is rejected.
pub fn normalize_intensity(volume: &NiftiVolume, mode: Normalization) -> Result<NiftiVolume> {
    let v = volume.voxels();
    if !v.is_finite() {
        return Err(Error::Data("volume contains non-finite voxels".into()));
    }
    let data = v.data();
    if data.iter().all(|&x| x == data[0]) {
        return volume.with_voxels(v.map(|_| 0.0));
    }
    let out = match mode {
        Normalization::MinMaxUnit => {
            let (lo, hi) = data
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| {
                    (a.min(x), b.max(x))
                });
            v.map(|x| (x - lo) / (hi - lo))
        }
        Normalization::ZScoreClip(sigma) => {
            let n = data.len() as f64;
            let mean = data.iter().sum::<f64>() / n;
            let std = (data.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
            v.map(|x| (((x - mean) / std).clamp(-sigma, sigma) + sigma) / (2.0 * sigma))
        }
    };
    volume.with_voxels(out)
}

fn variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n
}

/// Slice indices along `plane` chosen by `selection`, ascending.
pub fn select_slices(
    volume: &NiftiVolume,
    plane: Plane,
    selection: Selection,
) -> Result<Vec<usize>> {
    let extent = plane_extent(volume, plane);
    match selection {
        Selection::All => Ok((0..extent).collect()),
        Selection::CenterBand(f) => {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Config(format!(
                    "center_band fraction {f} outside (0, 1]"
                )));
            }
            let count = ((f * extent as f64).round() as usize).clamp(1, extent);
            let start = (extent - count) / 2;
            Ok((start..start + count).collect())
        }
        Selection::VarianceTopK(k) => {
            if k == 0 {
                return Err(Error::Config("variance_top_k needs k >= 1".into()));
            }
            let k = if k > extent {
                log::warn!("variance_top_k:{k} exceeds {plane} extent {extent}; using {extent}");
                extent
            } else {
                k
            };
            let mut scored = (0..extent)
                .map(|i| Ok((variance(extract_plane(volume, plane, i)?.data()), i)))
                .collect::<Result<Vec<_>>>()?;
            scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            let mut picked: Vec<usize> = scored.into_iter().take(k).map(|(_, i)| i).collect();
            picked.sort_unstable();
            Ok(picked)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SliceRecord {
    pub subject_id: String,
    pub label: ClassLabel,
    pub plane: Plane,
    pub slice_index: usize,
    /// `[H, W]`, values in `[0, 1]`.
    pub pixels: Tensor,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SliceDataset {
    records: Vec<SliceRecord>,
    class_counts: [usize; ClassLabel::COUNT],
}

impl SliceDataset {
    pub fn new(records: Vec<SliceRecord>) -> Result<Self> {
        let mut class_counts = [0; ClassLabel::COUNT];
        for r in &records {
            if r.subject_id.is_empty() {
                return Err(Error::Data("record with empty subject id".into()));
            }
            class_counts[r.label.index()] += 1;
        }
        Ok(SliceDataset {
            records,
            class_counts,
        })
    }

    pub fn records(&self) -> &[SliceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Record count per class, indexed by [`ClassLabel::index`].
    pub fn class_counts(&self) -> [usize; ClassLabel::COUNT] {
        self.class_counts
    }

    pub fn count(&self, label: ClassLabel) -> usize {
        self.class_counts[label.index()]
    }

    pub fn subjects(&self) -> std::collections::BTreeSet<&str> {
        self.records.iter().map(|r| r.subject_id.as_str()).collect()
    }

    /// `(C=1, H, W)` of the slices; `None` when empty or inconsistent.
    pub fn input_shape(&self) -> Option<(usize, usize, usize)> {
        let first = self.records.first()?.pixels.shape();
        let shape = (1, first[0], first[1]);
        self.records
            .iter()
            .all(|r| r.pixels.shape() == first)
            .then_some(shape)
    }
}

/// One labeled source volume.
#[derive(Debug, Clone)]
pub struct LabeledVolume {
    pub subject_id: String,
    pub label: ClassLabel,
    pub volume: NiftiVolume,
}

/// Slices every volume into records. Work is spread over the current rayon
/// pool; output order is (subject, plane, index).
pub fn build_dataset(volumes: &[LabeledVolume], config: &PreprocessConfig) -> Result<SliceDataset> {
    config.validate()?;
    let mut order: Vec<&LabeledVolume> = volumes.iter().collect();
    order.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
    if let Some(w) = order
        .windows(2)
        .find(|w| w[0].subject_id == w[1].subject_id)
    {
        return Err(Error::DuplicateSubject(w[0].subject_id.clone()));
    }
    let planes = config.ordered_planes();
    let per_volume = order
        .par_iter()
        .map(|lv| slice_volume(lv, &planes, config))
        .collect::<Result<Vec<_>>>()?;
    SliceDataset::new(per_volume.into_iter().flatten().collect())
}

fn slice_volume(
    lv: &LabeledVolume,
    planes: &[Plane],
    config: &PreprocessConfig,
) -> Result<Vec<SliceRecord>> {
    let normalized = normalize_intensity(&lv.volume, config.normalization)?;
    let mut out = Vec::new();
    for &plane in planes {
        for index in select_slices(&normalized, plane, config.selection)? {
            let raw = extract_plane(&normalized, plane, index)?;
            let pixels = resize_slice(&raw, config.target_size, config.interpolation)?
                .map(|x| x.clamp(0.0, 1.0));
            out.push(SliceRecord {
                subject_id: lv.subject_id.clone(),
                label: lv.label,
                plane,
                slice_index: index,
                pixels,
            });
        }
    }
    Ok(out)
}

/// Number of slices a volume of `dims` yields. Depends on shape only, even
/// for variance selection (which always returns `min(k, extent)` indices).
pub fn planned_slice_count(dims: [usize; 3], config: &PreprocessConfig) -> usize {
    config
        .ordered_planes()
        .iter()
        .map(|p| {
            let extent = dims[p.fixed_axis()];
            match config.selection {
                Selection::All => extent,
                Selection::VarianceTopK(k) => k.min(extent),
                Selection::CenterBand(f) => ((f * extent as f64).round() as usize).clamp(1, extent),
            }
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vol(dims: [usize; 3], f: impl FnMut(&[usize]) -> f64) -> NiftiVolume {
        NiftiVolume::from_voxels(Tensor::from_fn(&dims, f), [1.0; 3]).unwrap()
    }

    #[test]
    fn minmax_maps_to_unit_interval() {
        let v = vol([11, 1, 1], |i| i[0] as f64);
        let n = normalize_intensity(&v, Normalization::MinMaxUnit).unwrap();
        let d = n.voxels().data();
        assert_eq!(d[0], 0.0);
        assert_eq!(d[10], 1.0);
        assert!(d.iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn constant_volume_normalizes_to_zero() {
        let v = vol([3, 3, 3], |_| 4.2);
        for mode in [Normalization::MinMaxUnit, Normalization::ZScoreClip(3.0)] {
            let n = normalize_intensity(&v, mode).unwrap();
            assert!(n.voxels().data().iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn selection_rules() {
        let v = vol([5, 5, 8], |i| ((i[0] * 3 + i[1]) * i[2]) as f64);
        assert_eq!(
            select_slices(&v, Plane::Sagittal, Selection::All).unwrap(),
            vec![0, 1, 2, 3, 4]
        );
        assert_eq!(
            select_slices(&v, Plane::Axial, Selection::CenterBand(0.5)).unwrap(),
            vec![2, 3, 4, 5]
        );
        assert_eq!(
            select_slices(&v, Plane::Axial, Selection::VarianceTopK(20))
                .unwrap()
                .len(),
            8
        );
    }

    #[test]
    fn variance_ties_prefer_lower_index() {
        let v = vol([4, 4, 4], |_| 1.0);
        assert_eq!(
            select_slices(&v, Plane::Axial, Selection::VarianceTopK(2)).unwrap(),
            vec![0, 1]
        );
    }

    #[test]
    fn config_strings_round_trip() {
        for s in ["all", "variance_top_k:8", "center_band:0.5"] {
            assert_eq!(s.parse::<Selection>().unwrap().to_string(), s);
        }
        assert_eq!(
            "zscore_clip:2.5".parse::<Normalization>().unwrap(),
            Normalization::ZScoreClip(2.5)
        );
        assert_eq!(parse_target("64").unwrap(), (64, 64));
        assert_eq!(parse_target("32x48").unwrap(), (32, 48));
        let cfg = PreprocessConfig::default();
        let mut back = PreprocessConfig {
            target_size: (9, 9),
            ..Default::default()
        };
        back.apply_kv(&cfg.to_kv()).unwrap();
        assert_eq!(back, cfg);
        assert!("variance_top_k".parse::<Selection>().is_err());
    }

    #[test]
    fn validation() {
        let mut c = PreprocessConfig {
            target_size: (4, 300),
            ..Default::default()
        };
        assert!(c.validate().is_err());
        c.target_size = (8, 8);
        c.selection = Selection::CenterBand(0.0);
        assert!(c.validate().is_err());
        c.selection = Selection::All;
        c.planes.clear();
        assert!(c.validate().is_err());
    }
}
