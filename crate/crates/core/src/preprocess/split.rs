//! Stratified, seeded train/validation/test partitioning.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{SliceDataset, SliceRecord};
use crate::{ClassLabel, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    /// 60 / 20 / 20.
    fn default() -> Self {
        SplitRatios {
            train: 0.6,
            val: 0.2,
            test: 0.2,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let r = [self.train, self.val, self.test];
        if r.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
            return Err(Error::Config(format!(
                "split ratios must be positive, got {r:?}"
            )));
        }
        if (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split ratios must sum to 1, got {r:?}"
            )));
        }
        Ok(())
    }
}

impl std::fmt::Display for SplitRatios {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{},{},{}", self.train, self.val, self.test)
    }
}

impl std::str::FromStr for SplitRatios {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::Config(format!("bad split ratios `{s}`")))?;
        let [train, val, test] = parts[..] else {
            return Err(Error::Config(format!("expected three ratios, got `{s}`")));
        };
        let r = SplitRatios { train, val, test };
        r.validate()?;
        Ok(r)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplits {
    pub train: SliceDataset,
    pub val: SliceDataset,
    pub test: SliceDataset,
}

/// Hands out `target` units on top of `lo`, at most `hi - lo` per slot,
/// to the slots with the largest `ideal - lo` remainder (ties: lower slot).
fn apportion(ideal: &[f64], lo: &[usize], hi: &[usize], target: usize) -> Vec<usize> {
    let mut out = lo.to_vec();
    let base: usize = lo.iter().sum();
    let cap: usize = hi.iter().zip(lo).map(|(h, l)| h - l).sum();
    let mut extra = target.saturating_sub(base).min(cap);
    let mut order: Vec<usize> = (0..ideal.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = ideal[a] - lo[a] as f64;
        let rb = ideal[b] - lo[b] as f64;
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    while extra > 0 {
        for &i in &order {
            if extra > 0 && out[i] < hi[i] {
                out[i] += 1;
                extra -= 1;
            }
        }
    }
    out
}

/// Per-group `(train, val, test)` counts. Every cell is the floor or ceiling
/// of its ideal share, rows sum to the group sizes, and the train and
/// validation totals hit `round(total * ratio)` whenever that is reachable.
fn allocate(sizes: &[usize], r: &SplitRatios) -> Vec<[usize; 3]> {
    let total: usize = sizes.iter().sum();
    let ideal_train: Vec<f64> = sizes.iter().map(|&n| n as f64 * r.train).collect();
    let lo: Vec<usize> = ideal_train.iter().map(|x| x.floor() as usize).collect();
    let hi: Vec<usize> = ideal_train.iter().map(|x| x.ceil() as usize).collect();
    let train = apportion(
        &ideal_train,
        &lo,
        &hi,
        (total as f64 * r.train).round() as usize,
    );

    let ideal_val: Vec<f64> = sizes.iter().map(|&n| n as f64 * r.val).collect();
    let (mut vlo, mut vhi) = (Vec::new(), Vec::new());
    for (g, &n) in sizes.iter().enumerate() {
        let rest = n - train[g];
        let ideal_test = n as f64 * r.test;
        let lo =
            (ideal_val[g].floor() as usize).max(rest.saturating_sub(ideal_test.ceil() as usize));
        let hi =
            (ideal_val[g].ceil() as usize).min(rest.saturating_sub(ideal_test.floor() as usize));
        let lo = lo.min(rest);
        vlo.push(lo);
        vhi.push(hi.max(lo).min(rest));
    }
    let val = apportion(
        &ideal_val,
        &vlo,
        &vhi,
        (total as f64 * r.val).round() as usize,
    );
    sizes
        .iter()
        .enumerate()
        .map(|(g, &n)| [train[g], val[g], n - train[g] - val[g]])
        .collect()
}

/// Splits `dataset` stratified by class.
///
/// Per-slice mode partitions records directly. With `group_by_subject`
/// the unit is the subject, so no subject appears in two partitions; this
/// requires every class to have at least three subjects.
pub fn split_dataset(
    dataset: &SliceDataset,
    ratios: SplitRatios,
    seed: u64,
    group_by_subject: bool,
) -> Result<DatasetSplits> {
    ratios.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records = dataset.records();
    let mut assignment = vec![0u8; records.len()];
    if group_by_subject {
        assign_by_subject(records, ratios, &mut rng, &mut assignment)?;
    } else {
        assign_per_slice(records, ratios, &mut rng, &mut assignment);
    }

    let mut parts: [Vec<SliceRecord>; 3] = Default::default();
    for (r, &a) in records.iter().zip(&assignment) {
        parts[a as usize].push(r.clone());
    }
    let [train, val, test] = parts;
    Ok(DatasetSplits {
        train: SliceDataset::new(train)?,
        val: SliceDataset::new(val)?,
        test: SliceDataset::new(test)?,
    })
}

fn partition_for(pos: usize, counts: &[usize; 3]) -> u8 {
    if pos < counts[0] {
        0
    } else if pos < counts[0] + counts[1] {
        1
    } else {
        2
    }
}

/// Moves one unit from the largest partition into any empty one.
fn ensure_each_partition(counts: &mut [usize; 3]) {
    for p in 0..3 {
        if counts[p] == 0 {
            let donor = (0..3)
                .max_by_key(|&q| (counts[q], std::cmp::Reverse(q)))
                .unwrap();
            counts[donor] -= 1;
            counts[p] += 1;
        }
    }
}

fn assign_by_subject(
    records: &[SliceRecord],
    ratios: SplitRatios,
    rng: &mut ChaCha8Rng,
    assignment: &mut [u8],
) -> Result<()> {
    for class in ClassLabel::ALL {
        let mut subjects: Vec<&str> = records
            .iter()
            .filter(|r| r.label == class)
            .map(|r| r.subject_id.as_str())
            .collect();
        if subjects.is_empty() {
            continue;
        }
        subjects.sort_unstable();
        subjects.dedup();
        if subjects.len() < 3 {
            return Err(Error::Infeasible(format!(
                "class {class} has {} subject(s); grouped splitting needs at least 3",
                subjects.len()
            )));
        }
        subjects.shuffle(rng);
        let mut counts = allocate(&[subjects.len()], &ratios)[0];
        ensure_each_partition(&mut counts);
        for (i, r) in records.iter().enumerate().filter(|(_, r)| r.label == class) {
            let pos = subjects.iter().position(|&s| s == r.subject_id).unwrap();
            assignment[i] = partition_for(pos, &counts);
        }
    }
    Ok(())
}

fn assign_per_slice(
    records: &[SliceRecord],
    ratios: SplitRatios,
    rng: &mut ChaCha8Rng,
    assignment: &mut [u8],
) {
    let groups: Vec<Vec<usize>> = ClassLabel::ALL
        .iter()
        .map(|&c| {
            (0..records.len())
                .filter(|&i| records[i].label == c)
                .collect()
        })
        .collect();
    let sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
    let counts = allocate(&sizes, &ratios);
    for (mut members, counts) in groups.into_iter().zip(counts) {
        members.shuffle(rng);
        for (pos, &i) in members.iter().enumerate() {
            assignment[i] = partition_for(pos, &counts);
        }
    }
}
