use super::config::HttConfig;
use super::network::{ClipOutput, ClipVars};
use crate::autodiff::{Graph, Scalar, Var, LOG_CLAMP};
use crate::data::SequenceRecord;
use crate::error::{HttError, Result};
use crate::metrics::PoseEstimate;

/// `(1/J)(|p2d - gt2d|_1 + lambda_depth |depth - gt_depth|_1)`, in whatever units the poses use.
pub fn loss_hand(pred: &PoseEstimate, gt: &PoseEstimate, lambda_depth: f64) -> Result<f64> {
    let j = gt.joints();
    if pred.p2d.len() != j || pred.depth.len() != j || gt.depth.len() != j || j == 0 {
        return Err(HttError::shape(format!(
            "loss_hand: prediction has {}/{} joints, ground truth {}/{}",
            pred.p2d.len(),
            pred.depth.len(),
            gt.p2d.len(),
            gt.depth.len()
        )));
    }
    let l2d: f64 = pred
        .p2d
        .iter()
        .zip(&gt.p2d)
        .map(|(a, b)| (a[0] - b[0]).abs() + (a[1] - b[1]).abs())
        .sum();
    let ldep: f64 = pred.depth.iter().zip(&gt.depth).map(|(a, b)| (a - b).abs()).sum();
    Ok((l2d + lambda_depth * ldep) / j as f64)
}

/// `-ln p[label]` with `p` clamped at [`LOG_CLAMP`].
pub fn loss_object(probs: &[f64], label: usize) -> Result<f64> {
    nll(probs, label, "loss_object")
}

pub fn loss_action(probs: &[f64], label: usize) -> Result<f64> {
    nll(probs, label, "loss_action")
}

fn nll(probs: &[f64], label: usize, what: &str) -> Result<f64> {
    if label >= probs.len() {
        return Err(HttError::invalid(format!("{what}: label {label} out of range for {} classes", probs.len())));
    }
    Ok(-probs[label].max(LOG_CLAMP).ln())
}

/// Loss value and its parts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub action: f64,
    /// Mean of per-frame hand losses over real frames.
    pub mean_hand: f64,
    /// Mean of per-frame object losses over real frames.
    pub mean_object: f64,
}

/// Ground truth for the real frames of one clip, in clip order.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipTargets {
    pub poses: Vec<PoseEstimate>,
    pub object: usize,
    pub action: usize,
}

impl ClipTargets {
    pub fn from_record(record: &SequenceRecord, frames: &[usize]) -> Result<Self> {
        let poses = frames
            .iter()
            .map(|&f| {
                record
                    .gt_pose
                    .get(f)
                    .cloned()
                    .ok_or_else(|| HttError::data(format!("{}: no ground truth for frame {f}", record.id)))
            })
            .collect::<Result<_>>()?;
        Ok(ClipTargets {
            poses,
            object: record.object_label,
            action: record.action_label,
        })
    }
}

fn divisor(cfg: &HttConfig, real_frames: usize) -> f64 {
    if cfg.normalize_by_real_frames {
        real_frames as f64
    } else {
        cfg.clip_length as f64
    }
}

/// `L_A + (1/T) sum_frames(lambda_hand L_H + lambda_object L_O)` from plain
/// outputs; predicted and target depth are compared in internal units.
pub fn loss_total(out: &ClipOutput, gt: &ClipTargets, cfg: &HttConfig) -> Result<LossBreakdown> {
    if gt.poses.len() != out.frames.len() {
        return Err(HttError::data(format!(
            "ground truth covers {} frames, clip has {}",
            gt.poses.len(),
            out.frames.len()
        )));
    }
    let internal = |p: &PoseEstimate| PoseEstimate {
        p2d: p.p2d.clone(),
        depth: p.depth.iter().map(|z| z * cfg.depth_scale).collect(),
    };
    let action = loss_action(&out.action, gt.action)?;
    let (mut hand, mut object) = (0.0, 0.0);
    for (f, target) in out.frames.iter().zip(&gt.poses) {
        hand += loss_hand(&internal(&f.pose), &internal(target), cfg.lambda_depth)?;
        object += loss_object(&f.object, gt.object)?;
    }
    let n = out.frames.len() as f64;
    let total = action + (cfg.lambda_hand * hand + cfg.lambda_object * object) / divisor(cfg, out.frames.len());
    Ok(LossBreakdown {
        total,
        action,
        mean_hand: hand / n,
        mean_object: object / n,
    })
}

/// Graph nodes of the training loss.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub action: Var,
    /// `[n]` per-frame hand losses.
    pub hand: Var,
    /// `[n]` per-frame object losses.
    pub object: Var,
}

impl LossVars {
    pub fn breakdown<F: Scalar>(&self, g: &Graph<F>) -> LossBreakdown {
        let mean = |v: Var| {
            let xs = g.value(v);
            xs.iter().map(|x| x.as_f64()).sum::<f64>() / xs.len() as f64
        };
        LossBreakdown {
            total: g.item(self.total).as_f64(),
            action: g.value(self.action)[0].as_f64(),
            mean_hand: mean(self.hand),
            mean_object: mean(self.object),
        }
    }
}

/// Records the total loss of a forward pass on the graph.
pub fn clip_loss<F: Scalar>(g: &mut Graph<F>, v: &ClipVars, gt: &ClipTargets, cfg: &HttConfig) -> Result<LossVars> {
    let n = v.real_frames;
    let j = cfg.joints;
    if gt.poses.len() != n {
        return Err(HttError::data(format!("ground truth covers {} frames, clip has {n}", gt.poses.len())));
    }
    let mut p2d = Vec::with_capacity(n * 2 * j);
    let mut depth = Vec::with_capacity(n * j);
    for pose in &gt.poses {
        if pose.joints() != j || pose.depth.len() != j {
            return Err(HttError::shape(format!("ground truth pose has {} joints, model predicts {j}", pose.joints())));
        }
        p2d.extend(pose.p2d.iter().flatten().map(|&x| F::of(x)));
        depth.extend(pose.depth.iter().map(|&z| F::of(z * cfg.depth_scale)));
    }
    let gt2d = g.constant([n, 2 * j], p2d)?;
    let gtdep = g.constant([n, j], depth)?;
    let d2 = g.sub(v.pose2d, gt2d)?;
    let d2 = g.abs(d2);
    let l2d = g.sum_rows(d2);
    let dd = g.sub(v.depth, gtdep)?;
    let dd = g.abs(dd);
    let ldep = g.sum_rows(dd);
    let ldep = g.scale(ldep, F::of(cfg.lambda_depth));
    let hand = g.add(l2d, ldep)?;
    let hand = g.scale(hand, F::of(1.0 / j as f64));
    let object = g.cross_entropy(v.objects, &vec![gt.object; n])?;
    let action = g.cross_entropy(v.action, &[gt.action])?;
    let wh = g.scale(hand, F::of(cfg.lambda_hand));
    let wo = g.scale(object, F::of(cfg.lambda_object));
    let per_frame = g.add(wh, wo)?;
    let frame_sum = g.sum(per_frame);
    let frame_term = g.scale(frame_sum, F::of(1.0 / divisor(cfg, n)));
    let la = g.sum(action);
    let total = g.add(la, frame_term)?;
    Ok(LossVars {
        total,
        action,
        hand,
        object,
    })
}
