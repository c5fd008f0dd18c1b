//! Slice corpus on disk: one tensor dump per record plus a TSV manifest
//! (`subject_id, label, plane, index, path, sha256`).

use std::fs;
use std::path::{Path, PathBuf};

use super::{SliceDataset, SliceRecord};
use crate::hash::sha256_hex;
use crate::tensor::Tensor;
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.tsv";
const HEADER: &str = "subject_id\tlabel\tplane\tindex\tpath\tsha256";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusEntry {
    pub subject_id: String,
    pub label: crate::ClassLabel,
    pub plane: crate::nifti::Plane,
    pub index: usize,
    /// Relative to the corpus directory, `/`-separated.
    pub path: String,
    pub sha256: String,
}

impl CorpusEntry {
    fn to_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}",
            self.subject_id, self.label, self.plane, self.index, self.path, self.sha256
        )
    }

    fn parse(line: &str, lineno: usize) -> Result<Self> {
        let bad = |what: &str| Error::Format(format!("{MANIFEST_FILE} line {lineno}: {what}"));
        let f: Vec<&str> = line.split('\t').collect();
        let [subject, label, plane, index, path, sha] = f[..] else {
            return Err(bad("expected 6 tab-separated fields"));
        };
        Ok(CorpusEntry {
            subject_id: subject.to_string(),
            label: label.parse()?,
            plane: plane.parse()?,
            index: index.parse().map_err(|_| bad("bad slice index"))?,
            path: path.to_string(),
            sha256: sha.to_string(),
        })
    }
}

fn file_stem(subject: &str) -> String {
    subject
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Writes `dataset` under `dir` and returns the manifest entries in record
/// order.
pub fn write_corpus(dataset: &SliceDataset, dir: &Path) -> Result<Vec<CorpusEntry>> {
    let slices = dir.join("slices");
    fs::create_dir_all(&slices).map_err(|e| Error::io(&slices, e))?;
    let mut entries = Vec::with_capacity(dataset.len());
    let mut manifest = String::from(HEADER);
    manifest.push('\n');
    for (n, r) in dataset.records().iter().enumerate() {
        let rel = format!(
            "slices/{:06}_{}_{}_{:04}.tensor",
            n,
            file_stem(&r.subject_id),
            r.plane,
            r.slice_index
        );
        let bytes = r.pixels.to_bytes();
        let path = dir.join(&rel);
        fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
        let entry = CorpusEntry {
            subject_id: r.subject_id.clone(),
            label: r.label,
            plane: r.plane,
            index: r.slice_index,
            path: rel,
            sha256: sha256_hex(&bytes),
        };
        manifest.push_str(&entry.to_line());
        manifest.push('\n');
        entries.push(entry);
    }
    let mpath = dir.join(MANIFEST_FILE);
    fs::write(&mpath, manifest).map_err(|e| Error::io(&mpath, e))?;
    Ok(entries)
}

pub fn read_manifest(dir: &Path) -> Result<Vec<CorpusEntry>> {
    let mpath: PathBuf = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == HEADER => {}
        _ => {
            return Err(Error::Format(format!(
                "{MANIFEST_FILE}: missing header line"
            )))
        }
    }
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| CorpusEntry::parse(l, i + 1))
        .collect()
}

/// Loads a corpus, verifying every file against its manifest hash.
pub fn read_corpus(dir: &Path) -> Result<SliceDataset> {
    let entries = read_manifest(dir)?;
    let mut records = Vec::with_capacity(entries.len());
    for e in entries {
        let path = dir.join(&e.path);
        let bytes = fs::read(&path).map_err(|err| Error::io(&path, err))?;
        if sha256_hex(&bytes) != e.sha256 {
            return Err(Error::Data(format!("{}: content hash mismatch", e.path)));
        }
        let pixels = Tensor::from_bytes(&bytes)?;
        if pixels.rank() != 2 {
            return Err(Error::Format(format!("{}: slice must be 2D", e.path)));
        }
        records.push(SliceRecord {
            subject_id: e.subject_id,
            label: e.label,
            plane: e.plane,
            slice_index: e.index,
            pixels,
        });
    }
    SliceDataset::new(records)
}
