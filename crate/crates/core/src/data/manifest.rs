//! On-disk dataset format.
//!
//! Manifest (`*.manifest`):
//!
//! ```text
//! htt-manifest 1
//! <sequence path> <object_label> <action_label>
//! ...
//! ```
//!
//! Paths are relative to the manifest's directory. Blank lines and lines
//! starting with `#` are ignored.
//!
//! Sequence file:
//!
//! ```text
//! htt-sequence 1
//! id <name>
//! joints <J>
//! frames <N>
//! fps <fps>
//! intrinsics <fx> <fy> <cx> <cy>
//! frame_kind feature <D>        (or: frame_kind image <H> <W>)
//! frame_data                    N lines of D (or H*W*3, HWC order) values
//! pose2d                        N lines of 2J values: u0 v0 u1 v1 ...
//! depth                         N lines of J values (mm)
//! pose3d                        N lines of 3J values: x0 y0 z0 ... (mm)
//! ```
//!
//! Values are written in shortest round-trip decimal form, so saving and
//! loading is bit-exact.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::record::{FrameData, SequenceRecord};
use crate::error::{HttError, Result};
use crate::metrics::{CameraIntrinsics, PoseEstimate};

pub const MANIFEST_MAGIC: &str = "htt-manifest";
pub const SEQUENCE_MAGIC: &str = "htt-sequence";
pub const FORMAT_VERSION: u32 = 1;

fn join<T: std::fmt::Display>(xs: impl IntoIterator<Item = T>) -> String {
    let mut s = String::new();
    for (i, x) in xs.into_iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        write!(s, "{x}").expect("write to string");
    }
    s
}

pub fn sequence_to_string(r: &SequenceRecord) -> String {
    let mut s = String::new();
    let k = &r.intrinsics;
    let _ = writeln!(s, "{SEQUENCE_MAGIC} {FORMAT_VERSION}");
    let _ = writeln!(s, "id {}", r.id);
    let _ = writeln!(s, "joints {}", r.joints());
    let _ = writeln!(s, "frames {}", r.len());
    let _ = writeln!(s, "fps {}", r.fps);
    let _ = writeln!(s, "intrinsics {} {} {} {}", k.fx, k.fy, k.cx, k.cy);
    match r.frames.first() {
        Some(FrameData::Image { height, width, .. }) => {
            let _ = writeln!(s, "frame_kind image {height} {width}");
        }
        Some(f) => {
            let _ = writeln!(s, "frame_kind feature {}", f.flat().len());
        }
        None => {
            let _ = writeln!(s, "frame_kind feature 0");
        }
    }
    s.push_str("frame_data\n");
    for f in &r.frames {
        let _ = writeln!(s, "{}", join(f.flat()));
    }
    s.push_str("pose2d\n");
    for p in &r.gt_pose {
        let _ = writeln!(s, "{}", join(p.p2d.iter().flatten()));
    }
    s.push_str("depth\n");
    for p in &r.gt_pose {
        let _ = writeln!(s, "{}", join(&p.depth));
    }
    s.push_str("pose3d\n");
    for p in &r.gt_3d {
        let _ = writeln!(s, "{}", join(p.iter().flatten()));
    }
    s
}

struct Lines<'a> {
    src: &'a str,
    iter: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str, src: &'a str) -> Self {
        Lines {
            src,
            iter: text.lines().enumerate(),
            line: 0,
        }
    }

    fn err(&self, msg: impl std::fmt::Display) -> HttError {
        HttError::data(format!("{}:{}: {msg}", self.src, self.line))
    }

    fn next(&mut self) -> Result<&'a str> {
        match self.iter.next() {
            Some((i, l)) => {
                self.line = i + 1;
                Ok(l.trim())
            }
            None => Err(HttError::data(format!("{}: unexpected end of file", self.src))),
        }
    }

    fn keyed(&mut self, key: &str) -> Result<Vec<&'a str>> {
        let l = self.next()?;
        let mut parts = l.split_whitespace();
        if parts.next() != Some(key) {
            return Err(self.err(format!("expected `{key}`, got `{l}`")));
        }
        Ok(parts.collect())
    }

    fn keyed_one<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let parts = self.keyed(key)?;
        match parts.as_slice() {
            [v] => v.parse().map_err(|_| self.err(format!("bad value `{v}` for `{key}`"))),
            _ => Err(self.err(format!("`{key}` takes one value"))),
        }
    }

    fn numbers(&mut self, expected: usize, what: &str, frame: usize) -> Result<Vec<f64>> {
        let l = self.next()?;
        let vals: Vec<f64> = l
            .split_whitespace()
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| self.err(format!("frame {frame}: unparsable {what} value")))?;
        if vals.len() != expected {
            return Err(self.err(format!("frame {frame}: expected {expected} {what} values, got {}", vals.len())));
        }
        Ok(vals)
    }

    fn section(&mut self, name: &str) -> Result<()> {
        let l = self.next()?;
        if l != name {
            return Err(self.err(format!("expected section `{name}`, got `{l}`")));
        }
        Ok(())
    }
}

fn check_version(line: &str, magic: &str, src: &str) -> Result<()> {
    let mut parts = line.split_whitespace();
    if parts.next() != Some(magic) {
        return Err(HttError::data(format!("{src}:1: not an {magic} file")));
    }
    match parts.next().and_then(|v| v.parse::<u32>().ok()) {
        Some(FORMAT_VERSION) => Ok(()),
        Some(v) => Err(HttError::data(format!("{src}:1: unknown format version {v}"))),
        None => Err(HttError::data(format!("{src}:1: missing format version"))),
    }
}

/// Parses one sequence file; labels come from the manifest.
pub fn sequence_from_str(text: &str, src: &str, object_label: usize, action_label: usize) -> Result<SequenceRecord> {
    let mut l = Lines::new(text, src);
    let first = l.next()?;
    check_version(first, SEQUENCE_MAGIC, src)?;
    let id: String = l.keyed_one("id")?;
    let joints: usize = l.keyed_one("joints")?;
    let frames: usize = l.keyed_one("frames")?;
    let fps: f64 = l.keyed_one("fps")?;
    let k = l.keyed("intrinsics")?;
    let k: Vec<f64> = k
        .iter()
        .map(|v| v.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| l.err("bad intrinsics"))?;
    if k.len() != 4 {
        return Err(l.err("intrinsics takes fx fy cx cy"));
    }
    let intrinsics = CameraIntrinsics {
        fx: k[0],
        fy: k[1],
        cx: k[2],
        cy: k[3],
    };
    let kind = l.keyed("frame_kind")?;
    let parse_dim = |v: &str| v.parse::<usize>().map_err(|_| l.err(format!("bad frame_kind size `{v}`")));
    let (image, frame_len) = match kind.as_slice() {
        ["feature", d] => (None, parse_dim(d)?),
        ["image", h, w] => {
            let (h, w) = (parse_dim(h)?, parse_dim(w)?);
            (Some((h, w)), h * w * 3)
        }
        _ => return Err(l.err("frame_kind must be `feature <D>` or `image <H> <W>`")),
    };
    l.section("frame_data")?;
    let mut frame_data = Vec::with_capacity(frames);
    for f in 0..frames {
        let v = l.numbers(frame_len, "frame", f)?;
        frame_data.push(match image {
            None => FrameData::Feature(v),
            Some((height, width)) => FrameData::Image {
                height,
                width,
                pixels: v,
            },
        });
    }
    l.section("pose2d")?;
    let mut p2d = Vec::with_capacity(frames);
    for f in 0..frames {
        let v = l.numbers(2 * joints, "pose2d", f)?;
        p2d.push(v.chunks_exact(2).map(|c| [c[0], c[1]]).collect::<Vec<_>>());
    }
    l.section("depth")?;
    let mut gt_pose = Vec::with_capacity(frames);
    for (f, p) in p2d.into_iter().enumerate() {
        let depth = l.numbers(joints, "depth", f)?;
        gt_pose.push(PoseEstimate { p2d: p, depth });
    }
    l.section("pose3d")?;
    let mut gt_3d = Vec::with_capacity(frames);
    for f in 0..frames {
        let v = l.numbers(3 * joints, "pose3d", f)?;
        gt_3d.push(v.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect());
    }
    if let Some((i, extra)) = l.iter.find(|(_, s)| !s.trim().is_empty()) {
        return Err(HttError::data(format!("{src}:{}: trailing content `{}`", i + 1, extra.trim())));
    }
    let record = SequenceRecord {
        id,
        frames: frame_data,
        gt_pose,
        gt_3d,
        object_label,
        action_label,
        intrinsics,
        fps,
    };
    record
        .validate(None, None)
        .map_err(|e| HttError::data(format!("{src}: {e}")))?;
    Ok(record)
}

fn file_name(r: &SequenceRecord) -> String {
    format!("{}.seq", r.id)
}

/// Writes the manifest at `path` and one sequence file per record next to it.
pub fn save_manifest(records: &[SequenceRecord], path: &Path) -> Result<()> {
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    if !dir.as_os_str().is_empty() {
        fs::create_dir_all(&dir).map_err(|e| HttError::io(&dir, e))?;
    }
    let mut manifest = format!("{MANIFEST_MAGIC} {FORMAT_VERSION}\n");
    for r in records {
        if r.id.is_empty() || r.id.contains(char::is_whitespace) || r.id.contains('/') {
            return Err(HttError::data(format!("sequence id `{}` is not a valid file stem", r.id)));
        }
        let name = file_name(r);
        let p = dir.join(&name);
        fs::write(&p, sequence_to_string(r)).map_err(|e| HttError::io(&p, e))?;
        let _ = writeln!(manifest, "{name} {} {}", r.object_label, r.action_label);
    }
    fs::write(path, manifest).map_err(|e| HttError::io(path, e))
}

/// Manifest entries: sequence path (resolved) and labels.
pub fn read_manifest_entries(path: &Path) -> Result<Vec<(PathBuf, usize, usize)>> {
    let text = fs::read_to_string(path).map_err(|e| HttError::io(path, e))?;
    let src = path.display().to_string();
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut lines = text.lines().enumerate().filter(|(_, l)| {
        let t = l.trim();
        !t.is_empty() && !t.starts_with('#')
    });
    let (_, first) = lines
        .next()
        .ok_or_else(|| HttError::data(format!("{src}: empty manifest")))?;
    check_version(first, MANIFEST_MAGIC, &src)?;
    let mut out = Vec::new();
    for (i, line) in lines {
        let parts: Vec<&str> = line.split_whitespace().collect();
        let bad = || HttError::data(format!("{src}:{}: expected `<path> <object_label> <action_label>`", i + 1));
        let [p, o, a] = parts.as_slice() else { return Err(bad()) };
        let o = o.parse().map_err(|_| bad())?;
        let a = a.parse().map_err(|_| bad())?;
        out.push((dir.join(p), o, a));
    }
    Ok(out)
}

pub fn load_sequence(path: &Path, object_label: usize, action_label: usize) -> Result<SequenceRecord> {
    let text = fs::read_to_string(path).map_err(|e| HttError::io(path, e))?;
    sequence_from_str(&text, &path.display().to_string(), object_label, action_label)
}

pub fn load_manifest(path: &Path) -> Result<Vec<SequenceRecord>> {
    read_manifest_entries(path)?
        .into_iter()
        .map(|(p, o, a)| {
            if !p.exists() {
                return Err(HttError::data(format!(
                    "{}: missing sequence file {}",
                    path.display(),
                    p.display()
                )));
            }
            load_sequence(&p, o, a)
        })
        .collect()
}
