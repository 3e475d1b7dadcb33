use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::color::ciede2000_image;
use super::metrics::{mse, psnr, ssim_metric};
use crate::datakit::load_image;
use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "pair,ssim,psnr_db,mse,ciede2000";

#[derive(Clone, Debug, PartialEq)]
pub struct PairMetrics {
    pub pair: String,
    pub ssim: f64,
    pub psnr_db: f64,
    pub mse: f64,
    pub ciede2000: f64,
}

impl PairMetrics {
    fn columns(&self) -> [f64; 4] {
        [self.ssim, self.psnr_db, self.mse, self.ciede2000]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SkippedPair {
    pub pair: String,
    pub reason: String,
}

/// Per-pair rows in filename order, plus pairs that could not be evaluated.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<PairMetrics>,
    pub skipped: Vec<SkippedPair>,
}

/// Population standard deviation; 0 for constant columns (even `inf`), NaN
/// when non-finite values differ.
fn std_dev(values: &[f64]) -> f64 {
    if values.windows(2).all(|w| w[0] == w[1]) {
        return 0.0;
    }
    if values.iter().any(|v| !v.is_finite()) {
        return f64::NAN;
    }
    let m = values.iter().sum::<f64>() / values.len() as f64;
    (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / values.len() as f64).sqrt()
}

fn fmt_value(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v}")
    }
}

impl MetricsReport {
    fn column(&self, i: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r.columns()[i]).collect()
    }

    /// Column means `[ssim, psnr_db, mse, ciede2000]`; `None` with no rows.
    pub fn mean(&self) -> Option<[f64; 4]> {
        if self.rows.is_empty() {
            return None;
        }
        Some(std::array::from_fn(|i| self.column(i).iter().sum::<f64>() / self.rows.len() as f64))
    }

    pub fn std(&self) -> Option<[f64; 4]> {
        if self.rows.is_empty() {
            return None;
        }
        Some(std::array::from_fn(|i| std_dev(&self.column(i))))
    }

    /// `pair,ssim,psnr_db,mse,ciede2000` rows, then `#mean`, `#std` and one
    /// `#error` line per skipped pair.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        let mut row = |label: &str, vals: [f64; 4]| {
            let cells: Vec<String> = vals.iter().map(|&v| fmt_value(v)).collect();
            let _ = writeln!(out, "{label},{}", cells.join(","));
        };
        for r in &self.rows {
            row(&r.pair, r.columns());
        }
        if let (Some(m), Some(s)) = (self.mean(), self.std()) {
            row("#mean", m);
            row("#std", s);
        }
        for s in &self.skipped {
            let _ = writeln!(out, "#error,{},{}", s.pair, s.reason.replace([',', '\n'], ";"));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

fn png_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    Ok(files)
}

/// Target for a prediction: the same file name, or `<stem>_clean.png` as
/// written by the synthetic generator.
fn counterpart(target_dir: &Path, pred: &Path) -> Option<PathBuf> {
    let name = pred.file_name()?;
    let same = target_dir.join(name);
    if same.is_file() {
        return Some(same);
    }
    let stem = pred.file_stem()?.to_string_lossy();
    let clean = target_dir.join(format!("{stem}_clean.png"));
    clean.is_file().then_some(clean)
}

fn evaluate_one(pred: &Path, target: &Path) -> Result<PairMetrics> {
    let x = load_image(pred)?.cast::<f64>();
    let y = load_image(target)?.cast::<f64>();
    if x.shape() != y.shape() {
        return Err(Error::shape("evaluate_pairs", format!("sizes differ: {:?} vs {:?}", x.shape(), y.shape())));
    }
    Ok(PairMetrics {
        pair: String::new(),
        ssim: ssim_metric(&x, &y)?,
        psnr_db: psnr(&x, &y, 1.0)?,
        mse: mse(&x, &y)?,
        ciede2000: ciede2000_image(&x, &y)?,
    })
}

/// Scores every PNG in `pred_dir` against its counterpart in `target_dir`.
pub fn evaluate_pairs(pred_dir: &Path, target_dir: &Path) -> Result<MetricsReport> {
    if !target_dir.is_dir() {
        return Err(Error::io(target_dir, "not a directory"));
    }
    let mut report = MetricsReport::default();
    for pred in png_files(pred_dir)? {
        let pair = pred.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let Some(target) = counterpart(target_dir, &pred) else {
            report.skipped.push(SkippedPair { pair, reason: "missing counterpart in target directory".into() });
            continue;
        };
        match evaluate_one(&pred, &target) {
            Ok(m) => report.rows.push(PairMetrics { pair, ..m }),
            Err(e) => report.skipped.push(SkippedPair { pair, reason: e.to_string() }),
        }
    }
    Ok(report)
}
