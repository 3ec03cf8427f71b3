use super::network::{ClipOutput, HttModel};
use super::train::check_records;
use crate::autodiff::Scalar;
use crate::data::{FrameData, SequenceRecord};
use crate::error::{HttError, Result};
use crate::metrics::{
    auc, auc_thresholds, classification_accuracy, joint_errors, lift_to_3d, pck_from_errors, root_aligned_errors,
    CameraIntrinsics, MetricRow, PckCurve, Point3, PoseEstimate,
};
use crate::windowing::{plan_video, vote_action, ClipPlan};

/// Predicted depths below this (mm) are raised to it before lifting.
pub const MIN_PREDICTED_DEPTH_MM: f64 = 1.0;

/// Upper ends (mm) of the reported AUC ranges.
pub const AUC_RANGES_MM: [f64; 3] = [20.0, 50.0, 80.0];

/// Threshold range of the exported PCK curves.
pub const PCK_CURVE_MAX_MM: f64 = 80.0;

/// Lifts a predicted 2.5D pose, clamping depth at [`MIN_PREDICTED_DEPTH_MM`].
pub fn lift_prediction(pose: &PoseEstimate, k: &CameraIntrinsics) -> Result<Vec<Point3>> {
    let clamped = PoseEstimate {
        p2d: pose.p2d.clone(),
        depth: pose
            .depth
            .iter()
            .map(|&z| if z.is_nan() { z } else { z.max(MIN_PREDICTED_DEPTH_MM) })
            .collect(),
    };
    lift_to_3d(&clamped, k)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FramePrediction {
    pub frame: usize,
    pub pose: PoseEstimate,
    pub joints: Vec<Point3>,
    pub object: Vec<f64>,
}

impl FramePrediction {
    pub fn object_label(&self) -> usize {
        argmax(&self.object)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoPrediction {
    pub id: String,
    /// One entry per video frame, in frame order.
    pub frames: Vec<FramePrediction>,
    pub plan: ClipPlan,
    /// Action distribution of each clip, in plan order.
    pub clip_actions: Vec<Vec<f64>>,
    pub action: usize,
    /// Frames pushed through the pose block over all clips.
    pub frames_encoded: usize,
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// Test-time pass: plan the clips, run each once and vote.
pub fn predict_video<F: Scalar>(model: &HttModel<F>, record: &SequenceRecord) -> Result<VideoPrediction> {
    predict_video_with(model, record, |_, _| {})
}

/// As [`predict_video`], handing every clip's raw output to `inspect`.
pub fn predict_video_with<F: Scalar>(
    model: &HttModel<F>,
    record: &SequenceRecord,
    mut inspect: impl FnMut(usize, &ClipOutput),
) -> Result<VideoPrediction> {
    let plan = plan_video(record.len(), model.cfg.clip_length)?;
    let mut slots: Vec<Option<FramePrediction>> = vec![None; record.len()];
    let mut clip_actions = Vec::with_capacity(plan.clips.len());
    let mut frames_encoded = 0;
    for (c, clip) in plan.clips.iter().enumerate() {
        let inputs: Vec<&FrameData> = clip.frames.iter().map(|&f| &record.frames[f]).collect();
        let out = model.run_clip(&inputs)?;
        inspect(c, &out);
        frames_encoded += out.frames_encoded;
        for (&f, fo) in clip.frames.iter().zip(out.frames) {
            let joints = lift_prediction(&fo.pose, &record.intrinsics)?;
            if slots[f].is_some() {
                return Err(HttError::invalid(format!("frame {f} planned twice")));
            }
            slots[f] = Some(FramePrediction {
                frame: f,
                pose: fo.pose,
                joints,
                object: fo.object,
            });
        }
        clip_actions.push(out.action);
    }
    let frames = slots
        .into_iter()
        .enumerate()
        .map(|(f, s)| s.ok_or_else(|| HttError::invalid(format!("frame {f} not covered by any clip"))))
        .collect::<Result<_>>()?;
    let action = vote_action(&clip_actions)?;
    Ok(VideoPrediction {
        id: record.id.clone(),
        frames,
        plan,
        clip_actions,
        action,
        frames_encoded,
    })
}

/// Label of each hand's joint block: `single`, or `left` then `right`.
pub fn hand_names(hands: usize) -> &'static [&'static str] {
    if hands == 2 {
        &["left", "right"]
    } else {
        &["single"]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PckSeries {
    pub space: &'static str,
    pub hand: &'static str,
    pub curve: PckCurve,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub rows: Vec<MetricRow>,
    pub curves: Vec<PckSeries>,
}

impl Evaluation {
    pub fn value(&self, metric: &str, space: &str, hand: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.metric == metric && r.space == space && r.hand == hand)
            .map(|r| r.value)
    }
}

/// Scores predictions against their records (same order). Hands split the
/// joints into equal consecutive blocks; `wrist` indexes within a block.
pub fn score(records: &[SequenceRecord], preds: &[VideoPrediction], hands: usize, wrist: usize) -> Result<Evaluation> {
    if records.len() != preds.len() || records.is_empty() {
        return Err(HttError::shape(format!("{} predictions for {} videos", preds.len(), records.len())));
    }
    let mut rows = Vec::new();
    let mut curves = Vec::new();
    let joints = records[0].joints();
    if hands == 0 || joints % hands != 0 {
        return Err(HttError::shape(format!("{joints} joints do not split into {hands} hands")));
    }
    let per_hand = joints / hands;
    for (h, &hand) in hand_names(hands).iter().enumerate() {
        let range = h * per_hand..(h + 1) * per_hand;
        let mut pred_frames = Vec::new();
        let mut gt_frames = Vec::new();
        for (r, p) in records.iter().zip(preds) {
            if p.frames.len() != r.len() {
                return Err(HttError::shape(format!("{}: {} predicted frames for {}", r.id, p.frames.len(), r.len())));
            }
            for (fp, gt) in p.frames.iter().zip(&r.gt_3d) {
                pred_frames.push(fp.joints[range.clone()].to_vec());
                gt_frames.push(gt[range.clone()].to_vec());
            }
        }
        for (space, errors) in [
            ("camera", joint_errors(&pred_frames, &gt_frames)?),
            ("root-aligned", root_aligned_errors(&pred_frames, &gt_frames, wrist)?),
        ] {
            let mepe = errors.iter().sum::<f64>() / errors.len() as f64;
            rows.push(MetricRow::new("mepe", space, hand, mepe));
            for max in AUC_RANGES_MM {
                let a = auc(&pck_from_errors(&errors, &auc_thresholds(max))?)?;
                rows.push(MetricRow::new(format!("auc_0_{max}"), space, hand, a));
            }
            curves.push(PckSeries {
                space,
                hand,
                curve: pck_from_errors(&errors, &auc_thresholds(PCK_CURVE_MAX_MM))?,
            });
        }
    }
    let pred_actions: Vec<usize> = preds.iter().map(|p| p.action).collect();
    let gt_actions: Vec<usize> = records.iter().map(|r| r.action_label).collect();
    rows.push(MetricRow::new(
        "action_accuracy",
        "-",
        "-",
        classification_accuracy(&pred_actions, &gt_actions)?,
    ));
    let pred_objects: Vec<usize> = preds.iter().flat_map(|p| p.frames.iter().map(|f| f.object_label())).collect();
    let gt_objects: Vec<usize> = records.iter().flat_map(|r| std::iter::repeat(r.object_label).take(r.len())).collect();
    rows.push(MetricRow::new(
        "object_accuracy",
        "-",
        "-",
        classification_accuracy(&pred_objects, &gt_objects)?,
    ));
    Ok(Evaluation { rows, curves })
}

/// Predicts every video and scores the result.
pub fn evaluate<F: Scalar>(model: &HttModel<F>, records: &[SequenceRecord]) -> Result<(Evaluation, Vec<VideoPrediction>)> {
    if records.is_empty() {
        return Err(HttError::data("evaluation set is empty"));
    }
    check_records(records, &model.cfg)?;
    let preds = records.iter().map(|r| predict_video(model, r)).collect::<Result<Vec<_>>>()?;
    let eval = score(records, &preds, model.cfg.hands, model.cfg.wrist_index)?;
    Ok((eval, preds))
}

/// Frame-level predictions that copy the ground truth, for checking the scorer.
pub fn ground_truth_prediction(record: &SequenceRecord, num_objects: usize, clip_length: usize) -> Result<VideoPrediction> {
    let plan = plan_video(record.len(), clip_length)?;
    let mut one_hot = vec![0.0; num_objects];
    one_hot[record.object_label] = 1.0;
    let frames = (0..record.len())
        .map(|f| FramePrediction {
            frame: f,
            pose: record.gt_pose[f].clone(),
            joints: record.gt_3d[f].clone(),
            object: one_hot.clone(),
        })
        .collect();
    Ok(VideoPrediction {
        id: record.id.clone(),
        frames,
        clip_actions: vec![],
        action: record.action_label,
        frames_encoded: record.len(),
        plan,
    })
}
