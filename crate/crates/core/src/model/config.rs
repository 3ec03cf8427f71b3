use std::fmt::Write as _;

use crate::autodiff::LEAKY_SLOPE;
use crate::error::{HttError, Result};
use crate::kv::KvMap;
use crate::transformer::EncoderConfig;

/// How frames become `d`-dimensional features.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FrameEncoderKind {
    /// Precomputed `d`-dimensional features, passed through unchanged.
    Identity,
    /// One valid convolution, leaky rectifier, global average pool and a linear map to `d`.
    TinyConv { channels: usize, kernel: usize, stride: usize },
}

/// Which per-frame inputs feed the action token `h`. Disabled branches
/// contribute zeros to the concatenation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ActionInputs {
    pub pose2d: bool,
    pub object: bool,
    pub feature: bool,
}

impl Default for ActionInputs {
    fn default() -> Self {
        ActionInputs {
            pose2d: true,
            object: true,
            feature: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HttConfig {
    /// Joint count over all hands.
    pub joints: usize,
    /// 1 for single-hand data, 2 when the first half of the joints is the left hand.
    pub hands: usize,
    /// Wrist index within each hand.
    pub wrist_index: usize,
    pub num_objects: usize,
    pub num_actions: usize,
    /// Action window T.
    pub clip_length: usize,
    /// Pose window t.
    pub segment_length: usize,
    pub token_dim: usize,
    pub pose_encoder: EncoderConfig,
    pub action_encoder: EncoderConfig,
    /// Weight of the depth term inside the hand loss.
    pub lambda_depth: f64,
    /// Weight of the hand loss in the total loss.
    pub lambda_hand: f64,
    /// Weight of the object loss in the total loss.
    pub lambda_object: f64,
    pub image_height: usize,
    pub image_width: usize,
    pub frame_encoder: FrameEncoderKind,
    /// Internal depth units per millimeter (1e-3: the network predicts meters).
    pub depth_scale: f64,
    /// Divide the per-frame loss sum by the number of real frames instead of T.
    pub normalize_by_real_frames: bool,
    pub action_inputs: ActionInputs,
    pub leaky_slope: f64,
}

impl HttConfig {
    fn with_sizes(joints: usize, hands: usize, num_objects: usize, num_actions: usize) -> Self {
        let d = 512;
        HttConfig {
            joints,
            hands,
            wrist_index: 0,
            num_objects,
            num_actions,
            clip_length: 128,
            segment_length: 16,
            token_dim: d,
            pose_encoder: EncoderConfig::standard(d, 16),
            action_encoder: EncoderConfig::standard(d, 129),
            lambda_depth: 200.0,
            lambda_hand: 0.5,
            lambda_object: 1.0,
            image_height: 270,
            image_width: 480,
            frame_encoder: FrameEncoderKind::Identity,
            depth_scale: 1e-3,
            normalize_by_real_frames: false,
            action_inputs: ActionInputs::default(),
            leaky_slope: LEAKY_SLOPE,
        }
    }

    /// Single right hand, 26 objects, 45 actions.
    pub fn fpha() -> Self {
        Self::with_sizes(21, 1, 26, 45)
    }

    /// Two hands, 8 objects, 36 actions.
    pub fn h2o() -> Self {
        Self::with_sizes(42, 2, 8, 36)
    }

    /// Gradient-check size: T=8, t=4, d=16, two heads, two layers, J=2, three actions.
    pub fn tiny() -> Self {
        let mut c = Self::with_sizes(2, 1, 2, 3);
        c.resize(8, 4, 16, 2, 32);
        c
    }

    /// Sets windows and encoder sizes, keeping layer counts.
    pub fn resize(&mut self, clip_length: usize, segment_length: usize, token_dim: usize, heads: usize, ff_dim: usize) {
        self.clip_length = clip_length;
        self.segment_length = segment_length;
        self.token_dim = token_dim;
        for (enc, len) in [(&mut self.pose_encoder, segment_length), (&mut self.action_encoder, clip_length + 1)] {
            enc.token_dim = token_dim;
            enc.num_heads = heads;
            enc.feed_forward_dim = ff_dim;
            enc.max_sequence_length = len;
        }
    }

    pub fn joints_per_hand(&self) -> usize {
        self.joints / self.hands
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HttError::Config(m));
        if self.joints == 0 || self.num_objects == 0 || self.num_actions == 0 {
            return bad("joints, num_objects and num_actions must be at least 1".into());
        }
        if !(self.hands == 1 || self.hands == 2) || self.joints % self.hands != 0 {
            return bad(format!("hands must be 1 or 2 and divide joints ({})", self.joints));
        }
        if self.wrist_index >= self.joints_per_hand() {
            return bad(format!("wrist_index {} out of range", self.wrist_index));
        }
        if self.segment_length == 0 || self.segment_length > self.clip_length {
            return bad(format!(
                "need 1 <= segment_length ({}) <= clip_length ({})",
                self.segment_length, self.clip_length
            ));
        }
        for (w, name) in [
            (self.lambda_depth, "lambda_depth"),
            (self.lambda_hand, "lambda_hand"),
            (self.lambda_object, "lambda_object"),
            (self.depth_scale, "depth_scale"),
        ] {
            if !(w > 0.0) {
                return bad(format!("{name} must be positive"));
            }
        }
        for (enc, name, len) in [
            (&self.pose_encoder, "pose", self.segment_length),
            (&self.action_encoder, "action", self.clip_length + 1),
        ] {
            enc.validate()?;
            if enc.token_dim != self.token_dim {
                return bad(format!("{name} encoder token_dim differs from token_dim"));
            }
            if enc.max_sequence_length < len {
                return bad(format!("{name} encoder max_sequence_length must be at least {len}"));
            }
        }
        if let FrameEncoderKind::TinyConv { channels, kernel, stride } = self.frame_encoder {
            if channels == 0 || kernel == 0 || stride == 0 {
                return bad("conv_channels, conv_kernel and conv_stride must be at least 1".into());
            }
            if self.image_height < kernel || self.image_width < kernel {
                return bad(format!("image {}x{} is smaller than the kernel", self.image_height, self.image_width));
            }
        }
        Ok(())
    }

    /// `key = value` lines readable by [`HttConfig::from_kv`].
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let p = &self.pose_encoder;
        let a = &self.action_encoder;
        let (kind, ch, k, st) = match self.frame_encoder {
            FrameEncoderKind::Identity => ("identity", 8, 3, 2),
            FrameEncoderKind::TinyConv { channels, kernel, stride } => ("tiny_conv", channels, kernel, stride),
        };
        let lines: Vec<(&str, String)> = vec![
            ("joints", self.joints.to_string()),
            ("hands", self.hands.to_string()),
            ("wrist_index", self.wrist_index.to_string()),
            ("num_objects", self.num_objects.to_string()),
            ("num_actions", self.num_actions.to_string()),
            ("clip_length", self.clip_length.to_string()),
            ("segment_length", self.segment_length.to_string()),
            ("token_dim", self.token_dim.to_string()),
            ("pose_layers", p.num_layers.to_string()),
            ("pose_heads", p.num_heads.to_string()),
            ("pose_ff_dim", p.feed_forward_dim.to_string()),
            ("action_layers", a.num_layers.to_string()),
            ("action_heads", a.num_heads.to_string()),
            ("action_ff_dim", a.feed_forward_dim.to_string()),
            ("final_norm", p.final_norm.to_string()),
            ("lambda_depth", self.lambda_depth.to_string()),
            ("lambda_hand", self.lambda_hand.to_string()),
            ("lambda_object", self.lambda_object.to_string()),
            ("image_height", self.image_height.to_string()),
            ("image_width", self.image_width.to_string()),
            ("frame_encoder", kind.to_string()),
            ("conv_channels", ch.to_string()),
            ("conv_kernel", k.to_string()),
            ("conv_stride", st.to_string()),
            ("depth_scale", self.depth_scale.to_string()),
            ("normalize_by_real_frames", self.normalize_by_real_frames.to_string()),
            ("use_pose_input", self.action_inputs.pose2d.to_string()),
            ("use_object_input", self.action_inputs.object.to_string()),
            ("use_feature_input", self.action_inputs.feature.to_string()),
            ("leaky_slope", self.leaky_slope.to_string()),
        ];
        for (k, v) in lines {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// Reads the keys of [`MODEL_KEYS`]; missing keys keep the FPHA defaults.
    pub fn from_kv(kv: &KvMap) -> Result<Self> {
        let mut c = Self::fpha();
        c.joints = kv.get_or("joints", c.joints)?;
        c.hands = kv.get_or("hands", c.hands)?;
        c.wrist_index = kv.get_or("wrist_index", c.wrist_index)?;
        c.num_objects = kv.get_or("num_objects", c.num_objects)?;
        c.num_actions = kv.get_or("num_actions", c.num_actions)?;
        let t_clip = kv.get_or("clip_length", c.clip_length)?;
        let t_seg = kv.get_or("segment_length", c.segment_length)?;
        let d = kv.get_or("token_dim", c.token_dim)?;
        c.resize(t_clip, t_seg, d, c.pose_encoder.num_heads, c.pose_encoder.feed_forward_dim);
        let final_norm = kv.get_or("final_norm", true)?;
        let slope = kv.get_or("leaky_slope", c.leaky_slope)?;
        c.leaky_slope = slope;
        for (enc, pre) in [(&mut c.pose_encoder, "pose"), (&mut c.action_encoder, "action")] {
            enc.num_layers = kv.get_or(&format!("{pre}_layers"), enc.num_layers)?;
            enc.num_heads = kv.get_or(&format!("{pre}_heads"), enc.num_heads)?;
            enc.feed_forward_dim = kv.get_or(&format!("{pre}_ff_dim"), enc.feed_forward_dim)?;
            enc.final_norm = final_norm;
            enc.activation_slope = slope;
        }
        c.lambda_depth = kv.get_or("lambda_depth", c.lambda_depth)?;
        c.lambda_hand = kv.get_or("lambda_hand", c.lambda_hand)?;
        c.lambda_object = kv.get_or("lambda_object", c.lambda_object)?;
        c.image_height = kv.get_or("image_height", c.image_height)?;
        c.image_width = kv.get_or("image_width", c.image_width)?;
        let kind: String = kv.get_or("frame_encoder", "identity".to_string())?;
        c.frame_encoder = match kind.as_str() {
            "identity" => FrameEncoderKind::Identity,
            "tiny_conv" => FrameEncoderKind::TinyConv {
                channels: kv.get_or("conv_channels", 8)?,
                kernel: kv.get_or("conv_kernel", 3)?,
                stride: kv.get_or("conv_stride", 2)?,
            },
            other => {
                return Err(HttError::Config(format!(
                    "field `frame_encoder`: expected identity or tiny_conv, got `{other}`"
                )))
            }
        };
        c.depth_scale = kv.get_or("depth_scale", c.depth_scale)?;
        c.normalize_by_real_frames = kv.get_or("normalize_by_real_frames", false)?;
        c.action_inputs = ActionInputs {
            pose2d: kv.get_or("use_pose_input", true)?,
            object: kv.get_or("use_object_input", true)?,
            feature: kv.get_or("use_feature_input", true)?,
        };
        c.validate()?;
        Ok(c)
    }
}

/// Keys understood by [`HttConfig::from_kv`].
pub const MODEL_KEYS: &[&str] = &[
    "joints",
    "hands",
    "wrist_index",
    "num_objects",
    "num_actions",
    "clip_length",
    "segment_length",
    "token_dim",
    "pose_layers",
    "pose_heads",
    "pose_ff_dim",
    "action_layers",
    "action_heads",
    "action_ff_dim",
    "final_norm",
    "lambda_depth",
    "lambda_hand",
    "lambda_object",
    "image_height",
    "image_width",
    "frame_encoder",
    "conv_channels",
    "conv_kernel",
    "conv_stride",
    "depth_scale",
    "normalize_by_real_frames",
    "use_pose_input",
    "use_object_input",
    "use_feature_input",
    "leaky_slope",
];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for c in [HttConfig::fpha(), HttConfig::h2o(), HttConfig::tiny()] {
            c.validate().unwrap();
        }
        let f = HttConfig::fpha();
        assert_eq!((f.joints, f.num_objects, f.num_actions), (21, 26, 45));
        assert_eq!((f.clip_length, f.segment_length, f.token_dim), (128, 16, 512));
        assert_eq!((f.lambda_depth, f.lambda_hand, f.lambda_object), (200.0, 0.5, 1.0));
        assert_eq!((f.image_height, f.image_width), (270, 480));
        assert_eq!((f.pose_encoder.num_layers, f.pose_encoder.num_heads, f.pose_encoder.feed_forward_dim), (2, 8, 2048));
        let h = HttConfig::h2o();
        assert_eq!((h.joints, h.num_objects, h.num_actions), (42, 8, 36));
    }

    #[test]
    fn kv_round_trip() {
        let mut c = HttConfig::tiny();
        c.frame_encoder = FrameEncoderKind::TinyConv {
            channels: 4,
            kernel: 3,
            stride: 1,
        };
        c.image_height = 6;
        c.image_width = 5;
        c.action_inputs.object = false;
        let kv = KvMap::parse(&c.to_kv(), "echo").unwrap();
        kv.check_known(MODEL_KEYS).unwrap();
        assert_eq!(HttConfig::from_kv(&kv).unwrap(), c);
    }

    #[test]
    fn invalid_windows_are_rejected() {
        let mut c = HttConfig::tiny();
        c.segment_length = 9;
        assert!(c.validate().is_err());
        let mut c = HttConfig::tiny();
        c.lambda_depth = 0.0;
        assert!(c.validate().is_err());
    }
}
