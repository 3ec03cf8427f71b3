//! Video → clip → segment decomposition, start-offset augmentation and
//! clip-level action voting.
//!
//! A video is split into its even- and odd-indexed frames; each half is cut
//! into consecutive clips of `T` frames (the last one padded). A clip is cut
//! into consecutive segments of `t` frames for the pose encoder.

use std::fmt;
use std::io::Write;

use rand::Rng;

use crate::error::{HttError, Result};

/// Consecutive frames of a clip seen together by the pose encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Segment {
    /// First clip-local frame index.
    pub start: usize,
    /// Real (unpadded) frames in this segment.
    pub real_len: usize,
}

impl Segment {
    pub fn frames(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.real_len
    }
}

/// Partition of one clip into pose segments.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentPlan {
    pub clip_length: usize,
    pub segment_size: usize,
    pub segments: Vec<Segment>,
}

impl SegmentPlan {
    /// Key mask of segment `i`: `true` marks a real frame.
    pub fn pad_mask(&self, i: usize) -> Vec<bool> {
        let s = self.segments[i];
        (0..self.segment_size).map(|j| j < s.real_len).collect()
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }
}

/// Splits `clip_length` real frames into `ceil(clip_length / t)` segments of `t` slots.
pub fn segment_clip(clip_length: usize, t: usize) -> Result<SegmentPlan> {
    if clip_length == 0 || t == 0 {
        return Err(HttError::invalid(format!(
            "segment_clip needs positive sizes, got clip_length={clip_length}, t={t}"
        )));
    }
    let segments = (0..clip_length.div_ceil(t))
        .map(|i| Segment {
            start: i * t,
            real_len: t.min(clip_length - i * t),
        })
        .collect();
    Ok(SegmentPlan {
        clip_length,
        segment_size: t,
        segments,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Parity {
    Even,
    Odd,
}

impl fmt::Display for Parity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Parity::Even => "even",
            Parity::Odd => "odd",
        })
    }
}

/// One clip of a video: original frame indices with stride 2.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Clip {
    pub parity: Parity,
    /// Original frame indices of the real frames, strictly increasing.
    pub frames: Vec<usize>,
}

impl Clip {
    pub fn start(&self) -> usize {
        self.frames[0]
    }

    pub fn real_len(&self) -> usize {
        self.frames.len()
    }

    pub fn pad_mask(&self, clip_length: usize) -> Vec<bool> {
        (0..clip_length).map(|i| i < self.frames.len()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClipPlan {
    pub video_length: usize,
    pub clip_length: usize,
    pub offset: usize,
    pub clips: Vec<Clip>,
}

impl ClipPlan {
    /// Debug dump, one clip per line: `clip_id parity start_idx real_len`.
    pub fn write_dump(&self, out: &mut impl Write) -> std::io::Result<()> {
        for (id, c) in self.clips.iter().enumerate() {
            writeln!(out, "{id} {} {} {}", c.parity, c.start(), c.real_len())?;
        }
        Ok(())
    }

    pub fn dump(&self) -> String {
        let mut buf = Vec::new();
        self.write_dump(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii")
    }
}

/// Clips for a whole video, starting from its first frame.
pub fn plan_video(video_length: usize, clip_length: usize) -> Result<ClipPlan> {
    plan_video_with_offset(video_length, clip_length, 0)
}

/// Clips for the video with its first `offset` frames dropped; indices stay
/// in the original numbering.
pub fn plan_video_with_offset(video_length: usize, clip_length: usize, offset: usize) -> Result<ClipPlan> {
    if video_length == 0 || clip_length == 0 {
        return Err(HttError::invalid(format!(
            "plan_video needs positive sizes, got video_length={video_length}, T={clip_length}"
        )));
    }
    if offset >= video_length {
        return Err(HttError::invalid(format!(
            "offset {offset} leaves no frames of a {video_length}-frame video"
        )));
    }
    let mut clips = Vec::new();
    for parity in [Parity::Even, Parity::Odd] {
        let first = offset + usize::from(parity == Parity::Odd);
        let sub: Vec<usize> = (first..video_length).step_by(2).collect();
        for chunk in sub.chunks(clip_length) {
            clips.push(Clip {
                parity,
                frames: chunk.to_vec(),
            });
        }
    }
    Ok(ClipPlan {
        video_length,
        clip_length,
        offset,
        clips,
    })
}

/// Uniform start offset in `[0, t)`.
pub fn sample_training_offset(t: usize, rng: &mut impl Rng) -> Result<usize> {
    if t == 0 {
        return Err(HttError::invalid("offset range t must be positive"));
    }
    Ok(rng.gen_range(0..t))
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

/// Majority vote over per-clip argmax labels.
///
/// Ties go to the label with the highest probability summed over clips, then
/// to the lowest label index. Sums are taken in sorted order so the result
/// does not depend on clip order.
pub fn vote_action(clip_distributions: &[Vec<f64>]) -> Result<usize> {
    let first = clip_distributions
        .first()
        .ok_or_else(|| HttError::invalid("vote_action needs at least one clip"))?;
    let n = first.len();
    if n == 0 || clip_distributions.iter().any(|d| d.len() != n) {
        return Err(HttError::shape("clip distributions must share one non-empty length"));
    }
    let mut votes = vec![0usize; n];
    for d in clip_distributions {
        votes[argmax(d)] += 1;
    }
    let top = *votes.iter().max().expect("non-empty");
    let mut best: Option<(usize, f64)> = None;
    for label in (0..n).filter(|&l| votes[l] == top) {
        let mut mass: Vec<f64> = clip_distributions.iter().map(|d| d[label]).collect();
        mass.sort_by(|a, b| a.total_cmp(b));
        let total: f64 = mass.iter().sum();
        if best.map_or(true, |(_, m)| total > m) {
            best = Some((label, total));
        }
    }
    Ok(best.expect("at least one candidate").0)
}
