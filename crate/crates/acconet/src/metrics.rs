//! Saliency evaluation: S-measure, max/mean/adaptive F-measure and
//! E-measure, MAE, and the precision-recall curve.
//!
//! Conventions (also recorded in every report header):
//! - threshold sweep: 256 evenly spaced values k/255 in [0, 1]; sweep
//!   binarization is strict (`pred > t`), so a binary-perfect prediction
//!   scores precision = recall = 1 at every threshold below 1;
//! - adaptive threshold: min(1, 2 * mean(pred)), binarized inclusively
//!   (`pred >= t`), following the adaptive F-measure convention;
//! - precision := 0 when nothing is predicted positive; recall := 1 when the
//!   ground truth has no positives (such pairs are flagged);
//! - E-measure: bias-centered alignment matrix with quadratic enhancement,
//!   normalized by the full pixel count so a perfect map scores exactly 1;
//! - S-measure: alpha = 0.5, object/region terms with the published
//!   degenerate-truth special cases;
//! - dataset max/mean F and E come from per-threshold dataset averages
//!   (precision and recall are averaged before the F combination);
//! - predictions are min-max normalized per image unless constant.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rayon::prelude::*;

use crate::error::{Error, Result};

pub const N_THRESHOLDS: usize = 256;
pub const F_BETA_SQ: f64 = 0.3;
pub const S_ALPHA: f64 = 0.5;
/// Guard used inside alignment/similarity denominators.
pub const MEASURE_EPS: f64 = f64::EPSILON;

/// One prediction/ground-truth pair with identical spatial dimensions.
#[derive(Debug, Clone)]
pub struct EvalPair {
    pub pred: Array2<f64>,
    pub gt: Array2<bool>,
}

impl EvalPair {
    pub fn new(pred: Array2<f64>, gt: Array2<bool>) -> Result<Self> {
        if pred.dim() != gt.dim() {
            return Err(Error::shape(
                "evaluation pair",
                format!("{:?}", gt.dim()),
                format!("{:?}", pred.dim()),
            ));
        }
        if pred.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Config(
                "prediction values must lie in [0, 1]".into(),
            ));
        }
        Ok(EvalPair { pred, gt })
    }

    fn pixels(&self) -> usize {
        self.pred.len()
    }

    fn gt_count(&self) -> usize {
        self.gt.iter().filter(|&&v| v).count()
    }
}

/// The sweep grid: k/255 for k = 0..=255.
pub fn thresholds() -> Vec<f64> {
    (0..N_THRESHOLDS).map(|k| k as f64 / 255.0).collect()
}

/// Adaptive threshold: twice the prediction mean, clamped to <= 1.
pub fn adaptive_threshold(pred: &Array2<f64>) -> f64 {
    let mean = pred.sum() / pred.len() as f64;
    (2.0 * mean).min(1.0)
}

pub fn mae(pair: &EvalPair) -> f64 {
    let mut acc = 0.0;
    for (&p, &g) in pair.pred.iter().zip(pair.gt.iter()) {
        acc += (p - if g { 1.0 } else { 0.0 }).abs();
    }
    acc / pair.pixels() as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

pub struct PrCurve {
    pub points: Vec<PrPoint>,
    /// Set when the ground truth has no foreground pixel; recall is then
    /// defined as 1 at every threshold.
    pub empty_truth: bool,
}

fn counts_at(pair: &EvalPair, tau: f64, inclusive: bool) -> (usize, usize) {
    let mut tp = 0usize;
    let mut predicted = 0usize;
    for (&p, &g) in pair.pred.iter().zip(pair.gt.iter()) {
        let pos = if inclusive { p >= tau } else { p > tau };
        if pos {
            predicted += 1;
            if g {
                tp += 1;
            }
        }
    }
    (tp, predicted)
}

fn precision_recall(tp: usize, predicted: usize, gt_count: usize) -> (f64, f64) {
    let precision = if predicted == 0 {
        0.0
    } else {
        tp as f64 / predicted as f64
    };
    let recall = if gt_count == 0 {
        1.0
    } else {
        tp as f64 / gt_count as f64
    };
    (precision, recall)
}

pub fn pr_curve(pair: &EvalPair) -> PrCurve {
    let gt_count = pair.gt_count();
    let points = thresholds()
        .into_iter()
        .map(|tau| {
            let (tp, predicted) = counts_at(pair, tau, false);
            let (precision, recall) = precision_recall(tp, predicted, gt_count);
            PrPoint {
                threshold: tau,
                precision,
                recall,
            }
        })
        .collect();
    PrCurve {
        points,
        empty_truth: gt_count == 0,
    }
}

/// Weighted harmonic mean of precision and recall; 0 when both vanish.
pub fn f_from_pr(precision: f64, recall: f64) -> f64 {
    let denom = F_BETA_SQ * precision + recall;
    if denom <= 0.0 {
        0.0
    } else {
        (1.0 + F_BETA_SQ) * precision * recall / denom
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ThresholdMeasures {
    pub max: f64,
    pub mean: f64,
    pub adaptive: f64,
}

pub fn f_measures(pair: &EvalPair) -> ThresholdMeasures {
    let gt_count = pair.gt_count();
    let curve = pr_curve(pair);
    let fs: Vec<f64> = curve
        .points
        .iter()
        .map(|p| f_from_pr(p.precision, p.recall))
        .collect();
    let max = fs.iter().copied().fold(0.0, f64::max);
    let mean = fs.iter().sum::<f64>() / fs.len() as f64;
    let tau = adaptive_threshold(&pair.pred);
    let (tp, predicted) = counts_at(pair, tau, true);
    let (p, r) = precision_recall(tp, predicted, gt_count);
    ThresholdMeasures {
        max,
        mean,
        adaptive: f_from_pr(p, r),
    }
}

/// Enhanced-alignment value for one binarized map against a binary truth.
pub fn e_measure_binary(fm: &Array2<bool>, gt: &Array2<bool>) -> f64 {
    let n = gt.len() as f64;
    let gt_sum = gt.iter().filter(|&&v| v).count() as f64;
    if gt_sum == 0.0 {
        // completely black truth: score the black area of the prediction
        let fm_sum = fm.iter().filter(|&&v| v).count() as f64;
        return (n - fm_sum) / n;
    }
    if gt_sum == n {
        let fm_sum = fm.iter().filter(|&&v| v).count() as f64;
        return fm_sum / n;
    }
    let mu_fm = fm.iter().filter(|&&v| v).count() as f64 / n;
    let mu_gt = gt_sum / n;
    let mut acc = 0.0;
    for (&f, &g) in fm.iter().zip(gt.iter()) {
        let pf = if f { 1.0 } else { 0.0 } - mu_fm;
        let pg = if g { 1.0 } else { 0.0 } - mu_gt;
        let align = 2.0 * pg * pf / (pg * pg + pf * pf + MEASURE_EPS);
        let enhanced = (align + 1.0) * (align + 1.0) / 4.0;
        acc += enhanced;
    }
    acc / n
}

fn binarize(pred: &Array2<f64>, tau: f64, inclusive: bool) -> Array2<bool> {
    pred.mapv(|p| if inclusive { p >= tau } else { p > tau })
}

pub fn e_measures(pair: &EvalPair) -> ThresholdMeasures {
    let es: Vec<f64> = thresholds()
        .into_iter()
        .map(|tau| e_measure_binary(&binarize(&pair.pred, tau, false), &pair.gt))
        .collect();
    let max = es.iter().copied().fold(0.0, f64::max);
    let mean = es.iter().sum::<f64>() / es.len() as f64;
    let tau = adaptive_threshold(&pair.pred);
    let adaptive = e_measure_binary(&binarize(&pair.pred, tau, true), &pair.gt);
    ThresholdMeasures {
        max,
        mean,
        adaptive,
    }
}

fn sample_std(values: &[f64], mean: f64) -> f64 {
    if values.len() <= 1 {
        return 0.0;
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (ss / (values.len() as f64 - 1.0)).sqrt()
}

fn object_score(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let std = sample_std(values, mean);
    2.0 * mean / (mean * mean + 1.0 + std + MEASURE_EPS)
}

fn s_object(pair: &EvalPair) -> f64 {
    let fg: Vec<f64> = pair
        .pred
        .iter()
        .zip(pair.gt.iter())
        .filter(|(_, &g)| g)
        .map(|(&p, _)| p)
        .collect();
    let bg: Vec<f64> = pair
        .pred
        .iter()
        .zip(pair.gt.iter())
        .filter(|(_, &g)| !g)
        .map(|(&p, _)| 1.0 - p)
        .collect();
    let u = pair.gt_count() as f64 / pair.pixels() as f64;
    u * object_score(&fg) + (1.0 - u) * object_score(&bg)
}

/// Foreground centroid with 1-based rounding; falls back to the image
/// center for an empty truth (unused: that case short-circuits earlier).
fn centroid(gt: &Array2<bool>) -> (usize, usize) {
    let (rows, cols) = gt.dim();
    let total: f64 = gt.iter().filter(|&&v| v).count() as f64;
    if total == 0.0 {
        return ((rows as f64 / 2.0).round() as usize, (cols as f64 / 2.0).round() as usize);
    }
    let mut row_acc = 0.0;
    let mut col_acc = 0.0;
    for ((i, j), &v) in gt.indexed_iter() {
        if v {
            row_acc += (i + 1) as f64;
            col_acc += (j + 1) as f64;
        }
    }
    (
        (row_acc / total).round() as usize,
        (col_acc / total).round() as usize,
    )
}

/// Region similarity used by the region-aware term.
fn region_ssim(pred: &[f64], gt: &[f64]) -> f64 {
    let n = pred.len() as f64;
    if pred.is_empty() {
        return 0.0;
    }
    let x = pred.iter().sum::<f64>() / n;
    let y = gt.iter().sum::<f64>() / n;
    let denom = n - 1.0 + MEASURE_EPS;
    let mut sx = 0.0;
    let mut sy = 0.0;
    let mut sxy = 0.0;
    for (&p, &g) in pred.iter().zip(gt.iter()) {
        sx += (p - x) * (p - x);
        sy += (g - y) * (g - y);
        sxy += (p - x) * (g - y);
    }
    let (sx, sy, sxy) = (sx / denom, sy / denom, sxy / denom);
    let alpha = 4.0 * x * y * sxy;
    let beta = (x * x + y * y) * (sx + sy);
    if alpha != 0.0 {
        alpha / (beta + MEASURE_EPS)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

fn quadrant(
    pair: &EvalPair,
    rows: std::ops::Range<usize>,
    cols: std::ops::Range<usize>,
) -> (Vec<f64>, Vec<f64>, f64) {
    let mut p = Vec::with_capacity(rows.len() * cols.len());
    let mut g = Vec::with_capacity(rows.len() * cols.len());
    for i in rows.clone() {
        for j in cols.clone() {
            p.push(pair.pred[[i, j]]);
            g.push(if pair.gt[[i, j]] { 1.0 } else { 0.0 });
        }
    }
    let weight = (rows.len() * cols.len()) as f64 / pair.pixels() as f64;
    (p, g, weight)
}

fn s_region(pair: &EvalPair) -> f64 {
    let (rows, cols) = pair.gt.dim();
    let (cy, cx) = centroid(&pair.gt);
    let cy = cy.min(rows);
    let cx = cx.min(cols);
    let mut score = 0.0;
    for (rr, cc) in [
        (0..cy, 0..cx),
        (0..cy, cx..cols),
        (cy..rows, 0..cx),
        (cy..rows, cx..cols),
    ] {
        let (p, g, w) = quadrant(pair, rr, cc);
        if !p.is_empty() {
            score += w * region_ssim(&p, &g);
        }
    }
    score
}

/// Structural similarity: alpha-weighted object- and region-aware terms,
/// with the published degenerate-truth conventions.
pub fn s_measure(pair: &EvalPair) -> f64 {
    let n = pair.pixels() as f64;
    let y = pair.gt_count() as f64 / n;
    let x = pair.pred.sum() / n;
    if y == 0.0 {
        1.0 - x
    } else if y == 1.0 {
        x
    } else {
        (S_ALPHA * s_object(pair) + (1.0 - S_ALPHA) * s_region(pair)).max(0.0)
    }
}

/// Everything computed for one pair during dataset evaluation.
pub struct PairEvaluation {
    pub s: f64,
    pub mae: f64,
    pub adp_f: f64,
    pub adp_e: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub e_curve: Vec<f64>,
    pub empty_truth: bool,
}

pub fn evaluate_pair(pair: &EvalPair) -> PairEvaluation {
    let curve = pr_curve(pair);
    let precision: Vec<f64> = curve.points.iter().map(|p| p.precision).collect();
    let recall: Vec<f64> = curve.points.iter().map(|p| p.recall).collect();
    let e_curve: Vec<f64> = thresholds()
        .into_iter()
        .map(|tau| e_measure_binary(&binarize(&pair.pred, tau, false), &pair.gt))
        .collect();
    let tau = adaptive_threshold(&pair.pred);
    let (tp, predicted) = counts_at(pair, tau, true);
    let (p, r) = precision_recall(tp, predicted, pair.gt_count());
    PairEvaluation {
        s: s_measure(pair),
        mae: mae(pair),
        adp_f: f_from_pr(p, r),
        adp_e: e_measure_binary(&binarize(&pair.pred, tau, true), &pair.gt),
        precision,
        recall,
        e_curve,
        empty_truth: curve.empty_truth,
    }
}

#[derive(Debug, Clone)]
pub struct MetricReport {
    pub s_measure: f64,
    pub max_f: f64,
    pub mean_f: f64,
    pub adp_f: f64,
    pub max_e: f64,
    pub mean_e: f64,
    pub adp_e: f64,
    pub mae: f64,
    pub pr_curve: Vec<PrPoint>,
    pub images: usize,
    pub empty_truths: usize,
}

/// Aggregate per-image evaluations: scalars are averaged over images;
/// threshold-dependent quantities are averaged per threshold first, then
/// reduced to max/mean.
pub fn aggregate(evals: &[PairEvaluation]) -> Result<MetricReport> {
    if evals.is_empty() {
        return Err(Error::Dataset("no evaluation pairs".into()));
    }
    let n = evals.len() as f64;
    let mut precision = vec![0.0; N_THRESHOLDS];
    let mut recall = vec![0.0; N_THRESHOLDS];
    let mut e_curve = vec![0.0; N_THRESHOLDS];
    for ev in evals {
        for k in 0..N_THRESHOLDS {
            precision[k] += ev.precision[k];
            recall[k] += ev.recall[k];
            e_curve[k] += ev.e_curve[k];
        }
    }
    for k in 0..N_THRESHOLDS {
        precision[k] /= n;
        recall[k] /= n;
        e_curve[k] /= n;
    }
    let f_curve: Vec<f64> = precision
        .iter()
        .zip(recall.iter())
        .map(|(&p, &r)| f_from_pr(p, r))
        .collect();
    let taus = thresholds();
    let pr_points: Vec<PrPoint> = taus
        .iter()
        .enumerate()
        .map(|(k, &t)| PrPoint {
            threshold: t,
            precision: precision[k],
            recall: recall[k],
        })
        .collect();
    Ok(MetricReport {
        s_measure: evals.iter().map(|e| e.s).sum::<f64>() / n,
        max_f: f_curve.iter().copied().fold(0.0, f64::max),
        mean_f: f_curve.iter().sum::<f64>() / f_curve.len() as f64,
        adp_f: evals.iter().map(|e| e.adp_f).sum::<f64>() / n,
        max_e: e_curve.iter().copied().fold(0.0, f64::max),
        mean_e: e_curve.iter().sum::<f64>() / e_curve.len() as f64,
        adp_e: evals.iter().map(|e| e.adp_e).sum::<f64>() / n,
        mae: evals.iter().map(|e| e.mae).sum::<f64>() / n,
        pr_curve: pr_points,
        images: evals.len(),
        empty_truths: evals.iter().filter(|e| e.empty_truth).count(),
    })
}

pub fn evaluate_pairs(pairs: &[EvalPair]) -> Result<MetricReport> {
    let evals: Vec<PairEvaluation> = pairs.par_iter().map(evaluate_pair).collect();
    aggregate(&evals)
}

/// Min-max normalize to [0, 1]; constant maps are left as-is.
pub fn minmax_normalize(pred: &Array2<f64>) -> Array2<f64> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in pred.iter() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if hi - lo <= 0.0 {
        pred.clone()
    } else {
        pred.mapv(|v| (v - lo) / (hi - lo))
    }
}

/// Load an 8-bit image as a grayscale array in [0, 1].
pub fn load_gray(path: &Path) -> Result<Array2<f64>> {
    let img = image::open(path)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?
        .into_luma8();
    let (w, h) = img.dimensions();
    Ok(Array2::from_shape_fn((h as usize, w as usize), |(i, j)| {
        img.get_pixel(j as u32, i as u32)[0] as f64 / 255.0
    }))
}

fn stem_map(dir: &Path, exts: &[&str]) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        let Some(ext) = path.extension().and_then(|e| e.to_str()) else { continue };
        if !exts.contains(&ext.to_ascii_lowercase().as_str()) {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else { continue };
        out.insert(stem.to_string(), path);
    }
    Ok(out)
}

/// Evaluate a directory of prediction maps against ground-truth masks with
/// matching basenames.
pub fn evaluate_dataset(pred_dir: &Path, gt_dir: &Path) -> Result<MetricReport> {
    let preds = stem_map(pred_dir, &["png", "jpg", "jpeg"])?;
    let gts = stem_map(gt_dir, &["png", "jpg", "jpeg"])?;
    let missing_gt: Vec<&String> = preds.keys().filter(|k| !gts.contains_key(*k)).collect();
    let missing_pred: Vec<&String> = gts.keys().filter(|k| !preds.contains_key(*k)).collect();
    if !missing_gt.is_empty() || !missing_pred.is_empty() {
        let mut parts = Vec::new();
        if !missing_gt.is_empty() {
            parts.push(format!(
                "predictions without ground truth: {}",
                missing_gt
                    .iter()
                    .map(|s| s.as_str())
                    .collect::<Vec<_>>()
                    .join(", ")
            ));
        }
        if !missing_pred.is_empty() {
            parts.push(format!(
                "ground truths without predictions: {}",
                missing_pred
                    .iter()
                    .map(|s| s.as_str())
                    .collect::<Vec<_>>()
                    .join(", ")
            ));
        }
        return Err(Error::Dataset(format!(
            "unmatched basenames; {}",
            parts.join("; ")
        )));
    }
    if preds.is_empty() {
        return Err(Error::Dataset(format!(
            "no images found under {}",
            pred_dir.display()
        )));
    }
    let items: Vec<(String, PathBuf, PathBuf)> = preds
        .into_iter()
        .map(|(stem, p)| {
            let g = gts[&stem].clone();
            (stem, p, g)
        })
        .collect();
    let evals: Vec<Result<PairEvaluation>> = items
        .par_iter()
        .map(|(stem, pred_path, gt_path)| {
            let pred = minmax_normalize(&load_gray(pred_path)?);
            let gt = load_gray(gt_path)?.mapv(|v| v > 0.5);
            if pred.dim() != gt.dim() {
                return Err(Error::shape(
                    format!("evaluation pair {stem}"),
                    format!("{:?}", gt.dim()),
                    format!("{:?}", pred.dim()),
                ));
            }
            Ok(evaluate_pair(&EvalPair { pred, gt }))
        })
        .collect();
    let evals: Vec<PairEvaluation> = evals.into_iter().collect::<Result<_>>()?;
    aggregate(&evals)
}

/// Render the report as a stable key = value document with a convention
/// header; the nine scalar metrics appear in a fixed order.
pub fn report_to_string(report: &MetricReport) -> String {
    let mut out = String::new();
    out.push_str("# saliency evaluation report\n");
    out.push_str(&format!(
        "# tool: acconet {} (report format 1)\n",
        env!("CARGO_PKG_VERSION")
    ));
    out.push_str("# thresholds: 256 evenly spaced (k/255); sweep binarization pred > t\n");
    out.push_str("# adaptive threshold: min(1, 2*mean(pred)), binarization pred >= t\n");
    out.push_str("# F-measure: beta^2 = 0.3; precision := 0 when nothing predicted\n");
    out.push_str("# E-measure: alignment matrix normalized by the pixel count\n");
    out.push_str("# S-measure: alpha = 0.5; degenerate truths use published special cases\n");
    out.push_str("# empty ground truth: recall := 1 at every threshold\n");
    out.push_str("# dataset F/E: per-threshold averages of P, R and E before max/mean\n");
    out.push_str("# predictions min-max normalized per image unless constant\n");
    out.push_str(&format!("images = {}\n", report.images));
    out.push_str(&format!("empty_truths = {}\n", report.empty_truths));
    for (key, value) in [
        ("s_measure", report.s_measure),
        ("max_f", report.max_f),
        ("mean_f", report.mean_f),
        ("adp_f", report.adp_f),
        ("max_e", report.max_e),
        ("mean_e", report.mean_e),
        ("adp_e", report.adp_e),
        ("mae", report.mae),
    ] {
        out.push_str(&format!("{key} = {value:.6}\n"));
    }
    out
}

pub fn write_report(report: &MetricReport, path: &Path) -> Result<()> {
    fs::write(path, report_to_string(report)).map_err(|e| Error::io(path, e))
}

/// Delimited-text PR curve: one `threshold,precision,recall` row per
/// threshold.
pub fn pr_curve_to_csv(points: &[PrPoint]) -> String {
    let mut out = String::from("threshold,precision,recall\n");
    for p in points {
        out.push_str(&format!(
            "{:.6},{:.6},{:.6}\n",
            p.threshold, p.precision, p.recall
        ));
    }
    out
}

pub fn write_pr_csv(points: &[PrPoint], path: &Path) -> Result<()> {
    fs::write(path, pr_curve_to_csv(points)).map_err(|e| Error::io(path, e))
}

pub fn read_pr_csv(path: &Path) -> Result<Vec<PrPoint>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::Dataset(format!(
                "malformed PR row {} in {}",
                i + 1,
                path.display()
            )));
        }
        let parse = |s: &str| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Dataset(format!("bad number `{s}` in {}", path.display())))
        };
        out.push(PrPoint {
            threshold: parse(fields[0])?,
            precision: parse(fields[1])?,
            recall: parse(fields[2])?,
        });
    }
    Ok(out)
}
