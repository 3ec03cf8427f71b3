use crate::error::{HttError, Result};
use crate::metrics::{lift_to_3d, CameraIntrinsics, Point3, PoseEstimate};

/// Largest allowed gap (mm) between stored 3D joints and the lift of the stored 2.5D pose.
pub const LIFT_TOLERANCE_MM: f64 = 1e-6;

/// Input of one frame: a precomputed feature or a small `H×W×3` image.
#[derive(Clone, Debug, PartialEq)]
pub enum FrameData {
    Feature(Vec<f64>),
    Image {
        height: usize,
        width: usize,
        pixels: Vec<f64>,
    },
}

impl FrameData {
    pub fn flat(&self) -> &[f64] {
        match self {
            FrameData::Feature(v) => v,
            FrameData::Image { pixels, .. } => pixels,
        }
    }
}

/// One annotated video.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceRecord {
    pub id: String,
    pub frames: Vec<FrameData>,
    /// Per frame: pixel coordinates and depth (mm) of every joint.
    pub gt_pose: Vec<PoseEstimate>,
    /// Per frame: camera-space joints (mm).
    pub gt_3d: Vec<Vec<Point3>>,
    pub object_label: usize,
    pub action_label: usize,
    pub intrinsics: CameraIntrinsics,
    pub fps: f64,
}

impl SequenceRecord {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn joints(&self) -> usize {
        self.gt_pose.first().map_or(0, |p| p.joints())
    }

    /// Checks every record invariant; `num_objects`/`num_actions` bound the labels when given.
    pub fn validate(&self, num_objects: Option<usize>, num_actions: Option<usize>) -> Result<()> {
        let id = &self.id;
        let n = self.frames.len();
        if n == 0 {
            return Err(HttError::data(format!("{id}: sequence has no frames")));
        }
        if self.gt_pose.len() != n || self.gt_3d.len() != n {
            return Err(HttError::data(format!(
                "{id}: {n} frames but {} 2.5D poses and {} 3D poses",
                self.gt_pose.len(),
                self.gt_3d.len()
            )));
        }
        self.intrinsics
            .validate()
            .map_err(|e| HttError::data(format!("{id}: {e}")))?;
        let j = self.joints();
        if j == 0 {
            return Err(HttError::data(format!("{id}: poses have no joints")));
        }
        let frame_len = self.frames[0].flat().len();
        for (f, frame) in self.frames.iter().enumerate() {
            let same_kind = matches!(
                (frame, &self.frames[0]),
                (FrameData::Feature(_), FrameData::Feature(_))
                    | (FrameData::Image { .. }, FrameData::Image { .. })
            );
            if !same_kind || frame.flat().len() != frame_len {
                return Err(HttError::data(format!("{id}: frame {f} differs in kind or size from frame 0")));
            }
            if let FrameData::Image { height, width, pixels } = frame {
                if pixels.len() != height * width * 3 {
                    return Err(HttError::data(format!("{id}: frame {f} image is not {height}x{width}x3")));
                }
            }
            if frame.flat().iter().any(|v| !v.is_finite()) {
                return Err(HttError::data(format!("{id}: frame {f} holds non-finite values")));
            }
            let pose = &self.gt_pose[f];
            if pose.p2d.len() != j || pose.depth.len() != j || self.gt_3d[f].len() != j {
                return Err(HttError::data(format!("{id}: frame {f} does not have {j} joints")));
            }
            let lifted = lift_to_3d(pose, &self.intrinsics).map_err(|e| HttError::data(format!("{id}: frame {f}: {e}")))?;
            for (k, (a, b)) in lifted.iter().zip(&self.gt_3d[f]).enumerate() {
                let gap = (0..3).map(|c| (a[c] - b[c]).abs()).fold(0.0, f64::max);
                if !(gap <= LIFT_TOLERANCE_MM) {
                    return Err(HttError::data(format!(
                        "{id}: frame {f} joint {k}: lifted 2.5D pose is {gap} mm from stored 3D"
                    )));
                }
            }
        }
        if let Some(no) = num_objects {
            if self.object_label >= no {
                return Err(HttError::data(format!("{id}: object label {} >= {no}", self.object_label)));
            }
        }
        if let Some(na) = num_actions {
            if self.action_label >= na {
                return Err(HttError::data(format!("{id}: action label {} >= {na}", self.action_label)));
            }
        }
        Ok(())
    }
}
