//! Mapping from external hand-dataset annotations to [`SequenceRecord`].
//!
//! No dataset is bundled. Annotations are expected as camera-space joint
//! positions in millimeters; this module reorders joints into the canonical
//! order (wrist first, then thumb, index, middle, ring and pinky chains from
//! palm to tip) and derives the 2.5D pose with the camera intrinsics.
//!
//! Known source orderings (names are `<finger><joint>`: T/I/M/R/P with
//! MCP, PIP, DIP, TIP):
//!
//! - [`FPHA_ORDER`]: wrist, the five MCP joints, then PIP/DIP/TIP per finger.
//! - [`H2O_ORDER`]: canonical order per hand; two-hand sequences put the
//!   left hand's 21 joints before the right hand's.

use super::record::{FrameData, SequenceRecord};
use crate::error::{HttError, Result};
use crate::metrics::{project, CameraIntrinsics, Point3};

pub const CANONICAL_ORDER: [&str; 21] = [
    "Wrist", "TMCP", "TPIP", "TDIP", "TTIP", "IMCP", "IPIP", "IDIP", "ITIP", "MMCP", "MPIP", "MDIP", "MTIP", "RMCP",
    "RPIP", "RDIP", "RTIP", "PMCP", "PPIP", "PDIP", "PTIP",
];

pub const FPHA_ORDER: [&str; 21] = [
    "Wrist", "TMCP", "IMCP", "MMCP", "RMCP", "PMCP", "TPIP", "TDIP", "TTIP", "IPIP", "IDIP", "ITIP", "MPIP", "MDIP",
    "MTIP", "RPIP", "RDIP", "RTIP", "PPIP", "PDIP", "PTIP",
];

pub const H2O_ORDER: [&str; 21] = CANONICAL_ORDER;

/// For each canonical joint, its index in `source`.
pub fn canonical_permutation(source: &[&str]) -> Result<Vec<usize>> {
    CANONICAL_ORDER
        .iter()
        .map(|name| {
            source
                .iter()
                .position(|s| s == name)
                .ok_or_else(|| HttError::data(format!("joint ordering lacks `{name}`")))
        })
        .collect()
}

/// Reorders each hand block (21 joints per hand) of every frame into canonical order.
pub fn reorder_hands(frames: &[Vec<Point3>], source: &[&str]) -> Result<Vec<Vec<Point3>>> {
    let perm = canonical_permutation(source)?;
    frames
        .iter()
        .enumerate()
        .map(|(f, joints)| {
            if joints.is_empty() || joints.len() % 21 != 0 {
                return Err(HttError::data(format!("frame {f}: {} joints is not a whole number of hands", joints.len())));
            }
            Ok(joints.chunks(21).flat_map(|hand| perm.iter().map(|&i| hand[i])).collect())
        })
        .collect()
}

/// Builds a record from camera-space joints (mm) in the `source` ordering.
#[allow(clippy::too_many_arguments)]
pub fn record_from_camera_joints(
    id: impl Into<String>,
    frames: Vec<FrameData>,
    joints_mm: &[Vec<Point3>],
    source: &[&str],
    intrinsics: CameraIntrinsics,
    object_label: usize,
    action_label: usize,
    fps: f64,
) -> Result<SequenceRecord> {
    let joints = reorder_hands(joints_mm, source)?;
    let gt_pose: Vec<_> = joints.iter().map(|j| project(j, &intrinsics)).collect();
    let gt_3d = gt_pose
        .iter()
        .map(|p| crate::metrics::lift_to_3d(p, &intrinsics))
        .collect::<Result<Vec<_>>>()?;
    let r = SequenceRecord {
        id: id.into(),
        frames,
        gt_pose,
        gt_3d,
        object_label,
        action_label,
        intrinsics,
        fps,
    };
    r.validate(None, None)?;
    Ok(r)
}
