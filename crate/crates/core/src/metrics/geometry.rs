//! Camera model and 2.5D ↔ 3D conversion.

use crate::error::{HttError, Result};

pub type Point3 = [f64; 3];

/// Pinhole intrinsics in pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        let k = CameraIntrinsics { fx, fy, cx, cy };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) || !self.cx.is_finite() || !self.cy.is_finite() {
            return Err(HttError::invalid(format!("focal lengths must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// Per-joint image coordinates (pixels) and depth to the camera (mm).
#[derive(Clone, Debug, PartialEq)]
pub struct PoseEstimate {
    pub p2d: Vec<[f64; 2]>,
    pub depth: Vec<f64>,
}

impl PoseEstimate {
    pub fn joints(&self) -> usize {
        self.depth.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.p2d.len() != self.depth.len() {
            return Err(HttError::shape(format!(
                "pose has {} 2D joints but {} depths",
                self.p2d.len(),
                self.depth.len()
            )));
        }
        Ok(())
    }
}

/// Back-projects each joint: `X = (u - cx) z / fx`, `Y = (v - cy) z / fy`, `Z = z`.
pub fn lift_to_3d(pose: &PoseEstimate, k: &CameraIntrinsics) -> Result<Vec<Point3>> {
    pose.validate()?;
    pose.p2d
        .iter()
        .zip(&pose.depth)
        .enumerate()
        .map(|(j, (&[u, v], &z))| {
            if !(z > 0.0) {
                return Err(HttError::invalid(format!("joint {j} has non-positive depth {z}")));
            }
            Ok([(u - k.cx) * z / k.fx, (v - k.cy) * z / k.fy, z])
        })
        .collect()
}

/// Perspective projection of camera-space points back to 2.5D.
pub fn project(points: &[Point3], k: &CameraIntrinsics) -> PoseEstimate {
    PoseEstimate {
        p2d: points
            .iter()
            .map(|&[x, y, z]| [k.fx * x / z + k.cx, k.fy * y / z + k.cy])
            .collect(),
        depth: points.iter().map(|p| p[2]).collect(),
    }
}

/// Translates `pred` so its wrist coincides with the ground-truth wrist.
pub fn root_align(pred: &[Point3], gt: &[Point3], wrist: usize) -> Result<Vec<Point3>> {
    if pred.len() != gt.len() {
        return Err(HttError::shape(format!("{} predicted joints vs {} ground truth", pred.len(), gt.len())));
    }
    if wrist >= pred.len() {
        return Err(HttError::invalid(format!("wrist index {wrist} out of range for {} joints", pred.len())));
    }
    let shift = [gt[wrist][0] - pred[wrist][0], gt[wrist][1] - pred[wrist][1], gt[wrist][2] - pred[wrist][2]];
    Ok(pred.iter().map(|p| [p[0] + shift[0], p[1] + shift[1], p[2] + shift[2]]).collect())
}

pub fn distance(a: &Point3, b: &Point3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lifting_basics() {
        let k = CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0).unwrap();
        let pose = PoseEstimate {
            p2d: vec![[0.0, 0.0]],
            depth: vec![1.0],
        };
        assert_eq!(lift_to_3d(&pose, &k).unwrap(), vec![[0.0, 0.0, 1.0]]);
        let k = CameraIntrinsics::new(500.0, 480.0, 320.0, 240.0).unwrap();
        let pose = PoseEstimate {
            p2d: vec![[320.0, 240.0]],
            depth: vec![731.5],
        };
        assert_eq!(lift_to_3d(&pose, &k).unwrap(), vec![[0.0, 0.0, 731.5]]);
    }

    #[test]
    fn lifting_rejects_bad_depth() {
        let k = CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0).unwrap();
        for z in [0.0, -2.0, f64::NAN] {
            let pose = PoseEstimate {
                p2d: vec![[1.0, 1.0]],
                depth: vec![z],
            };
            assert!(lift_to_3d(&pose, &k).is_err());
        }
        assert!(CameraIntrinsics::new(0.0, 1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn lifting_is_linear_in_depth() {
        let k = CameraIntrinsics::new(300.0, 310.0, 60.0, 40.0).unwrap();
        let at = |z: f64| {
            lift_to_3d(&PoseEstimate { p2d: vec![[75.0, 12.0]], depth: vec![z] }, &k).unwrap()[0]
        };
        let (a, b) = (at(200.0), at(600.0));
        for c in 0..3 {
            assert!((b[c] - 3.0 * a[c]).abs() < 1e-9);
        }
    }

    #[test]
    fn alignment_is_a_translation() {
        let gt = vec![[1.0, 2.0, 3.0], [4.0, 6.0, 8.0]];
        let pred: Vec<Point3> = gt.iter().map(|p| [p[0] + 5.0, p[1] - 1.0, p[2] + 0.5]).collect();
        assert_eq!(root_align(&pred, &gt, 0).unwrap(), gt);
        assert_eq!(root_align(&gt, &gt, 1).unwrap(), gt);
        assert!(root_align(&gt, &gt, 2).is_err());
    }
}
