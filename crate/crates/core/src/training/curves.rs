//! Tab-separated plot data.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::metrics::{EpochMetrics, EvalReport};
use crate::{Error, Result};

pub const CURVES_FILE: &str = "curves.tsv";
pub const ROC_FILE: &str = "roc.tsv";
pub const CURVES_HEADER: &str = "epoch\ttrain_loss\tval_loss\ttrain_acc\tval_acc";
pub const ROC_HEADER: &str = "class\tfpr\ttpr";

/// 17 significant digits, enough to reproduce every `f64` exactly.
fn num(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn render_curves(curves: &[EpochMetrics]) -> String {
    let mut out = String::from(CURVES_HEADER);
    out.push('\n');
    for m in curves {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            m.epoch,
            num(m.train_loss),
            num(m.val_loss),
            num(m.train_acc),
            num(m.val_acc)
        );
    }
    out
}

pub fn render_roc(report: &EvalReport) -> String {
    let mut out = String::from(ROC_HEADER);
    out.push('\n');
    for c in &report.roc {
        for &(fpr, tpr) in &c.points {
            let _ = writeln!(out, "{}\t{}\t{}", c.class, num(fpr), num(tpr));
        }
    }
    out
}

pub fn parse_curves(text: &str) -> Result<Vec<EpochMetrics>> {
    let mut lines = text.lines();
    if lines.next() != Some(CURVES_HEADER) {
        return Err(Error::Format("curves table: missing header".into()));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let bad = || Error::Format(format!("curves table: bad row `{l}`"));
            let f: Vec<&str> = l.split('\t').collect();
            let [e, tl, vl, ta, va] = f[..] else {
                return Err(bad());
            };
            let p = |s: &str| s.parse::<f64>().map_err(|_| bad());
            Ok(EpochMetrics {
                epoch: e.parse().map_err(|_| bad())?,
                train_loss: p(tl)?,
                val_loss: p(vl)?,
                train_acc: p(ta)?,
                val_acc: p(va)?,
            })
        })
        .collect()
}

/// Writes `curves.tsv` and `roc.tsv` into `dir`.
pub fn export_curves(report: &EvalReport, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let curves = dir.join(CURVES_FILE);
    fs::write(&curves, render_curves(&report.curves)).map_err(|e| Error::io(&curves, e))?;
    let roc = dir.join(ROC_FILE);
    fs::write(&roc, render_roc(report)).map_err(|e| Error::io(&roc, e))?;
    Ok((curves, roc))
}
