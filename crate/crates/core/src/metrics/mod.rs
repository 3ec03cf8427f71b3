//! Evaluation metrics: 3D PCK and its AUC, mean end-point error, and
//! classification accuracy, in camera space or after wrist alignment.

pub mod geometry;
mod report;

pub use geometry::{distance, lift_to_3d, project, root_align, CameraIntrinsics, Point3, PoseEstimate};
pub use report::{write_metric_csv, write_pck_csv, MetricRow, CSV_VERSION_LINE};

use crate::error::{HttError, Result};

/// Number of thresholds on the default AUC grid.
pub const AUC_GRID_POINTS: usize = 100;

/// PCK values at ascending thresholds (mm).
#[derive(Clone, Debug, PartialEq)]
pub struct PckCurve {
    pub thresholds: Vec<f64>,
    pub values: Vec<f64>,
}

fn check_frames(pred: &[Vec<Point3>], gt: &[Vec<Point3>]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(HttError::shape(format!("{} predicted frames vs {} ground truth", pred.len(), gt.len())));
    }
    for (i, (p, g)) in pred.iter().zip(gt).enumerate() {
        if p.len() != g.len() {
            return Err(HttError::shape(format!(
                "frame {i}: {} predicted joints vs {} ground truth",
                p.len(),
                g.len()
            )));
        }
    }
    Ok(())
}

/// Euclidean error of every (frame, joint) pair, frame-major.
pub fn joint_errors(pred: &[Vec<Point3>], gt: &[Vec<Point3>]) -> Result<Vec<f64>> {
    check_frames(pred, gt)?;
    Ok(pred
        .iter()
        .zip(gt)
        .flat_map(|(p, g)| p.iter().zip(g).map(|(a, b)| distance(a, b)))
        .collect())
}

/// Errors after aligning each predicted frame's wrist to ground truth; the
/// wrist itself is left out.
pub fn root_aligned_errors(pred: &[Vec<Point3>], gt: &[Vec<Point3>], wrist: usize) -> Result<Vec<f64>> {
    check_frames(pred, gt)?;
    let mut out = Vec::new();
    for (p, g) in pred.iter().zip(gt) {
        let aligned = root_align(p, g, wrist)?;
        out.extend(
            aligned
                .iter()
                .zip(g)
                .enumerate()
                .filter(|&(j, _)| j != wrist)
                .map(|(_, (a, b))| distance(a, b)),
        );
    }
    Ok(out)
}

fn mean(xs: &[f64]) -> Result<f64> {
    if xs.is_empty() {
        return Err(HttError::invalid("mean of no errors"));
    }
    Ok(xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Mean end-point error over all joints and frames.
pub fn mepe(pred: &[Vec<Point3>], gt: &[Vec<Point3>]) -> Result<f64> {
    mean(&joint_errors(pred, gt)?)
}

/// Mean end-point error of the non-wrist joints after wrist alignment.
pub fn mepe_ra(pred: &[Vec<Point3>], gt: &[Vec<Point3>], wrist: usize) -> Result<f64> {
    mean(&root_aligned_errors(pred, gt, wrist)?)
}

/// `AUC_GRID_POINTS` evenly spaced thresholds covering `[0, max_mm]`.
pub fn auc_thresholds(max_mm: f64) -> Vec<f64> {
    linspace(max_mm, AUC_GRID_POINTS)
}

fn linspace(max: f64, points: usize) -> Vec<f64> {
    (0..points).map(|i| max * i as f64 / (points - 1) as f64).collect()
}

/// Fraction of errors at or below each threshold (all pairs pooled).
pub fn pck_from_errors(errors: &[f64], thresholds: &[f64]) -> Result<PckCurve> {
    if thresholds.is_empty() {
        return Err(HttError::invalid("pck needs at least one threshold"));
    }
    if thresholds.windows(2).any(|w| w[1] < w[0]) {
        return Err(HttError::invalid("pck thresholds must be ascending"));
    }
    if errors.is_empty() {
        return Err(HttError::invalid("pck of no errors"));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len() as f64;
    let values = thresholds
        .iter()
        .map(|&t| sorted.partition_point(|&e| e <= t) as f64 / n)
        .collect();
    Ok(PckCurve {
        thresholds: thresholds.to_vec(),
        values,
    })
}

pub fn pck_curve(pred: &[Vec<Point3>], gt: &[Vec<Point3>], thresholds: &[f64]) -> Result<PckCurve> {
    pck_from_errors(&joint_errors(pred, gt)?, thresholds)
}

/// Trapezoidal area under the curve, divided by its threshold span.
pub fn auc(curve: &PckCurve) -> Result<f64> {
    let t = &curve.thresholds;
    if t.len() < 2 || t.len() != curve.values.len() {
        return Err(HttError::invalid("auc needs at least two matching thresholds and values"));
    }
    let span = t[t.len() - 1] - t[0];
    if !(span > 0.0) {
        return Err(HttError::invalid("auc needs a positive threshold span"));
    }
    let area: f64 = t
        .windows(2)
        .zip(curve.values.windows(2))
        .map(|(x, y)| (x[1] - x[0]) * (y[0] + y[1]) / 2.0)
        .sum();
    Ok(area / span)
}

/// AUC over `[0, max_mm]` on the default grid.
pub fn auc_upto(errors: &[f64], max_mm: f64) -> Result<f64> {
    auc(&pck_from_errors(errors, &auc_thresholds(max_mm))?)
}

/// Fraction of exact label matches.
pub fn classification_accuracy(pred: &[usize], gt: &[usize]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(HttError::shape(format!("{} predictions vs {} labels", pred.len(), gt.len())));
    }
    if pred.is_empty() {
        return Err(HttError::invalid("accuracy of no predictions"));
    }
    let hits = pred.iter().zip(gt).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / pred.len() as f64)
}
