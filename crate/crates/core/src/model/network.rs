use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::{FrameEncoderKind, HttConfig};
use crate::autodiff::{Bound, Graph, ParamId, ParamStore, Scalar, Tensor, Var};
use crate::data::FrameData;
use crate::error::{HttError, Result};
use crate::metrics::PoseEstimate;
use crate::transformer::{AttentionRecord, Encoded, Encoder, LayerAttention};
use crate::windowing::{segment_clip, Segment};

/// Standard deviation of the initial action token.
pub const ALPHA_INIT_STD: f64 = 0.02;

/// Affine map `x W + b` with `W: [in, out]`.
#[derive(Clone, Copy, Debug)]
pub struct Affine {
    pub w: ParamId,
    pub b: ParamId,
}

impl Affine {
    fn new<F: Scalar>(store: &mut ParamStore<F>, name: &str, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        Affine {
            w: store.add_kaiming(format!("{name}.w"), fan_in, fan_out, rng),
            b: store.add_const(format!("{name}.b"), fan_out, 0.0),
        }
    }

    pub fn apply<F: Scalar>(&self, g: &mut Graph<F>, p: &Bound, x: Var) -> Result<Var> {
        g.linear(x, p[self.w], Some(p[self.b]))
    }
}

#[derive(Clone, Debug)]
enum FrameEncoder {
    Identity,
    TinyConv { conv: Affine, proj: Affine, kernel: usize, stride: usize },
}

/// Graph handles of one clip's forward pass. Row `i` of every per-frame
/// tensor belongs to the clip's `i`-th real frame.
#[derive(Clone, Debug)]
pub struct ClipVars {
    pub real_frames: usize,
    /// Frames pushed through the pose block (each real frame exactly once).
    pub frames_encoded: usize,
    pub segments: Vec<Segment>,
    pub features: Var,
    /// `[n x d]` pose tokens g.
    pub tokens: Var,
    /// `[n x 3J]` raw MLP1 output.
    pub pose_raw: Var,
    /// `[n x 2J]` pixels.
    pub pose2d: Var,
    /// `[n x J]` internal depth units.
    pub depth: Var,
    /// `[n x n_o]` object distributions.
    pub objects: Var,
    /// `[n x d]` action tokens h.
    pub action_tokens: Var,
    /// `[1 x d]`.
    pub alpha_out: Var,
    /// `[1 x n_a]`.
    pub action: Var,
    pub pose_attention: Vec<Vec<LayerAttention>>,
    pub action_attention: Vec<LayerAttention>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameOutput {
    pub token: Vec<f64>,
    /// Pixels and millimeters.
    pub pose: PoseEstimate,
    pub object: Vec<f64>,
}

/// Plain values of a clip's forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipOutput {
    pub frames: Vec<FrameOutput>,
    pub action: Vec<f64>,
    pub alpha_out: Vec<f64>,
    pub frames_encoded: usize,
    /// One entry per segment, each holding one record per layer.
    pub pose_attention: Vec<Vec<AttentionRecord>>,
    /// One record per layer over the `T + 1` action-block positions.
    pub action_attention: Vec<AttentionRecord>,
}

/// Action distribution and attention of the action block.
#[derive(Clone, Debug)]
pub struct ActionBlockOut {
    pub action: Var,
    pub alpha_out: Var,
    pub attention: Vec<LayerAttention>,
}

fn to_f64<F: Scalar>(xs: &[F]) -> Vec<f64> {
    xs.iter().map(|x| x.as_f64()).collect()
}

/// The full cascade: frame encoder, pose block with heads, and action block.
#[derive(Clone, Debug)]
pub struct HttModel<F: Scalar = f64> {
    pub cfg: HttConfig,
    pub store: ParamStore<F>,
    frame_encoder: FrameEncoder,
    pub pose_encoder: Encoder<F>,
    pub action_encoder: Encoder<F>,
    pub mlp1: [Affine; 3],
    pub mlp2: [Affine; 2],
    pub fc1: Affine,
    pub fc2: Affine,
    pub fc3: Affine,
    pub fc4: Affine,
    pub alpha_in: ParamId,
}

impl<F: Scalar> HttModel<F> {
    pub fn new(cfg: HttConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = cfg.token_dim;
        let j = cfg.joints;
        let frame_encoder = match cfg.frame_encoder {
            FrameEncoderKind::Identity => FrameEncoder::Identity,
            FrameEncoderKind::TinyConv { channels, kernel, stride } => FrameEncoder::TinyConv {
                conv: Affine::new(&mut store, "frame.conv", kernel * kernel * 3, channels, &mut rng),
                proj: Affine::new(&mut store, "frame.proj", channels, d, &mut rng),
                kernel,
                stride,
            },
        };
        let pose_encoder = Encoder::new(cfg.pose_encoder.clone(), &mut store, "pose", &mut rng)?;
        let mlp1 = [
            Affine::new(&mut store, "mlp1.0", d, d, &mut rng),
            Affine::new(&mut store, "mlp1.1", d, d, &mut rng),
            Affine::new(&mut store, "mlp1.2", d, 3 * j, &mut rng),
        ];
        let mlp2 = [
            Affine::new(&mut store, "mlp2.0", d, d, &mut rng),
            Affine::new(&mut store, "mlp2.1", d, cfg.num_objects, &mut rng),
        ];
        let fc1 = Affine::new(&mut store, "fc1", 3 * d, d, &mut rng);
        let fc2 = Affine::new(&mut store, "fc2", 2 * j, d, &mut rng);
        let fc3 = Affine::new(&mut store, "fc3", cfg.num_objects, d, &mut rng);
        let action_encoder = Encoder::new(cfg.action_encoder.clone(), &mut store, "action", &mut rng)?;
        let fc4 = Affine::new(&mut store, "fc4", d, cfg.num_actions, &mut rng);
        let normal = Normal::new(0.0, ALPHA_INIT_STD).expect("positive std");
        let alpha: Vec<F> = (0..d).map(|_| F::of(normal.sample(&mut rng))).collect();
        let alpha_in = store.add("alpha_in", Tensor::new([1, d], alpha)?);
        Ok(HttModel {
            cfg,
            store,
            frame_encoder,
            pose_encoder,
            action_encoder,
            mlp1,
            mlp2,
            fc1,
            fc2,
            fc3,
            fc4,
            alpha_in,
        })
    }

    fn slope(&self) -> F {
        F::of(self.cfg.leaky_slope)
    }

    /// `[n x d]` features of the given frames.
    pub fn frame_encode(&self, g: &mut Graph<F>, p: &Bound, frames: &[&FrameData]) -> Result<Var> {
        let d = self.cfg.token_dim;
        match &self.frame_encoder {
            FrameEncoder::Identity => {
                let mut data = Vec::with_capacity(frames.len() * d);
                for (i, f) in frames.iter().enumerate() {
                    match f {
                        FrameData::Feature(v) if v.len() == d => data.extend(v.iter().map(|&x| F::of(x))),
                        FrameData::Feature(v) => {
                            return Err(HttError::Compat(format!(
                                "frame {i}: identity encoder needs {d}-dimensional features, got {}",
                                v.len()
                            )))
                        }
                        FrameData::Image { .. } => {
                            return Err(HttError::Compat(format!("frame {i}: identity encoder got an image")))
                        }
                    }
                }
                g.constant([frames.len(), d], data)
            }
            FrameEncoder::TinyConv { conv, proj, kernel, stride } => {
                let mut rows = Vec::with_capacity(frames.len());
                for (i, f) in frames.iter().enumerate() {
                    let FrameData::Image { height, width, pixels } = f else {
                        return Err(HttError::Compat(format!("frame {i}: convolutional encoder needs an image")));
                    };
                    if (*height, *width) != (self.cfg.image_height, self.cfg.image_width) {
                        return Err(HttError::Compat(format!(
                            "frame {i}: image is {height}x{width}, model expects {}x{}",
                            self.cfg.image_height, self.cfg.image_width
                        )));
                    }
                    let img = g.constant([*height, *width, 3], pixels.iter().map(|&x| F::of(x)).collect())?;
                    let cols = g.im2col(img, *kernel, *stride)?;
                    let h = conv.apply(g, p, cols)?;
                    let h = g.leaky_relu(h, self.slope());
                    let pooled = g.mean_rows(h)?;
                    rows.push(proj.apply(g, p, pooled)?);
                }
                g.concat_rows(&rows)
            }
        }
    }

    /// Encodes one `[t x d]` segment; `pad_mask[i]` is true for real frames.
    pub fn pose_block(&self, g: &mut Graph<F>, p: &Bound, features: Var, pad_mask: &[bool]) -> Result<Encoded> {
        self.pose_encoder.encode(g, p, features, pad_mask)
    }

    /// MLP1 on `[n x d]` tokens: returns (raw `[n x 3J]`, 2D `[n x 2J]`, depth `[n x J]`).
    pub fn decode_pose(&self, g: &mut Graph<F>, p: &Bound, tokens: Var) -> Result<(Var, Var, Var)> {
        let j = self.cfg.joints;
        let mut x = self.mlp1[0].apply(g, p, tokens)?;
        x = g.leaky_relu(x, self.slope());
        x = self.mlp1[1].apply(g, p, x)?;
        x = g.leaky_relu(x, self.slope());
        let raw = self.mlp1[2].apply(g, p, x)?;
        let p2d = g.slice_cols(raw, 0, 2 * j)?;
        let depth = g.slice_cols(raw, 2 * j, j)?;
        Ok((raw, p2d, depth))
    }

    /// Softmax of MLP2 on `[n x d]` tokens.
    pub fn classify_object(&self, g: &mut Graph<F>, p: &Bound, tokens: Var) -> Result<Var> {
        let x = self.mlp2[0].apply(g, p, tokens)?;
        let x = g.leaky_relu(x, self.slope());
        let logits = self.mlp2[1].apply(g, p, x)?;
        g.softmax(logits)
    }

    /// `FC1[FC2(p2d), FC3(objects), tokens]`; disabled inputs are replaced by zeros.
    pub fn assemble_action_token(&self, g: &mut Graph<F>, p: &Bound, p2d: Var, objects: Var, tokens: Var) -> Result<Var> {
        let n = g.shape(tokens)[0];
        let d = self.cfg.token_dim;
        let on = self.cfg.action_inputs;
        let pose = if on.pose2d { self.fc2.apply(g, p, p2d)? } else { g.zeros([n, d]) };
        let obj = if on.object { self.fc3.apply(g, p, objects)? } else { g.zeros([n, d]) };
        let feat = if on.feature { tokens } else { g.zeros([n, d]) };
        let cat = g.concat_cols(&[pose, obj, feat])?;
        self.fc1.apply(g, p, cat)
    }

    /// Runs A on `[alpha_in; h]`. `h` is `[T x d]` and `pad_mask` has T entries.
    pub fn action_block(&self, g: &mut Graph<F>, p: &Bound, h: Var, pad_mask: &[bool]) -> Result<ActionBlockOut> {
        let mut mask = Vec::with_capacity(pad_mask.len() + 1);
        mask.push(true);
        mask.extend_from_slice(pad_mask);
        let seq = g.concat_rows(&[p[self.alpha_in], h])?;
        let enc = self.action_encoder.encode(g, p, seq, &mask)?;
        let alpha_out = g.slice_rows(enc.tokens, 0, 1)?;
        let logits = self.fc4.apply(g, p, alpha_out)?;
        let action = g.softmax(logits)?;
        Ok(ActionBlockOut {
            action,
            alpha_out,
            attention: enc.attention,
        })
    }

    /// Full cascade over the real frames of one clip (1 ≤ n ≤ T). Segments and
    /// the action sequence are padded to t and T with zeros and masked.
    pub fn forward_clip(&self, g: &mut Graph<F>, p: &Bound, frames: &[&FrameData]) -> Result<ClipVars> {
        self.forward_clip_filled(g, p, frames, None)
    }

    /// As [`forward_clip`](Self::forward_clip), but padded slots hold the
    /// encoded features of `fill` (at least `T - n` frames) instead of zeros.
    pub fn forward_clip_filled(
        &self,
        g: &mut Graph<F>,
        p: &Bound,
        frames: &[&FrameData],
        fill: Option<&[&FrameData]>,
    ) -> Result<ClipVars> {
        let n = frames.len();
        let (big_t, t, d) = (self.cfg.clip_length, self.cfg.segment_length, self.cfg.token_dim);
        if n == 0 || n > big_t {
            return Err(HttError::shape(format!("clip has {n} frames, expected 1..={big_t}")));
        }
        let features = self.frame_encode(g, p, frames)?;
        let fill = match fill {
            Some(f) if f.len() < big_t - n => {
                return Err(HttError::shape(format!("{} fill frames for {} padded slots", f.len(), big_t - n)))
            }
            Some(f) if n < big_t => Some(self.frame_encode(g, p, &f[..big_t - n])?),
            _ => None,
        };
        let pad = |g: &mut Graph<F>, rows: usize| match fill {
            Some(f) => g.slice_rows(f, 0, rows),
            None => Ok(g.zeros([rows, d])),
        };
        let plan = segment_clip(n, t)?;
        let mut seg_tokens = Vec::with_capacity(plan.segments.len());
        let mut pose_attention = Vec::with_capacity(plan.segments.len());
        let mut frames_encoded = 0;
        for seg in &plan.segments {
            let real = g.slice_rows(features, seg.start, seg.real_len)?;
            let input = if seg.real_len < t {
                let padding = pad(g, t - seg.real_len)?;
                g.concat_rows(&[real, padding])?
            } else {
                real
            };
            let mask: Vec<bool> = (0..t).map(|i| i < seg.real_len).collect();
            let enc = self.pose_block(g, p, input, &mask)?;
            frames_encoded += seg.real_len;
            seg_tokens.push(if seg.real_len < t { g.slice_rows(enc.tokens, 0, seg.real_len)? } else { enc.tokens });
            pose_attention.push(enc.attention);
        }
        let tokens = if seg_tokens.len() == 1 { seg_tokens[0] } else { g.concat_rows(&seg_tokens)? };
        let (pose_raw, pose2d, depth) = self.decode_pose(g, p, tokens)?;
        let objects = self.classify_object(g, p, tokens)?;
        let action_tokens = self.assemble_action_token(g, p, pose2d, objects, tokens)?;
        let h = if n < big_t {
            let padding = pad(g, big_t - n)?;
            g.concat_rows(&[action_tokens, padding])?
        } else {
            action_tokens
        };
        let mask: Vec<bool> = (0..big_t).map(|i| i < n).collect();
        let out = self.action_block(g, p, h, &mask)?;
        Ok(ClipVars {
            real_frames: n,
            frames_encoded,
            segments: plan.segments,
            features,
            tokens,
            pose_raw,
            pose2d,
            depth,
            objects,
            action_tokens,
            alpha_out: out.alpha_out,
            action: out.action,
            pose_attention,
            action_attention: out.attention,
        })
    }

    /// Reads the values of a forward pass; depth is converted back to mm.
    pub fn materialize(&self, g: &Graph<F>, v: &ClipVars) -> ClipOutput {
        let (j, d, no) = (self.cfg.joints, self.cfg.token_dim, self.cfg.num_objects);
        let tokens = g.value(v.tokens);
        let p2d = g.value(v.pose2d);
        let depth = g.value(v.depth);
        let objects = g.value(v.objects);
        let inv = 1.0 / self.cfg.depth_scale;
        let frames = (0..v.real_frames)
            .map(|i| FrameOutput {
                token: to_f64(&tokens[i * d..(i + 1) * d]),
                pose: PoseEstimate {
                    p2d: p2d[i * 2 * j..(i + 1) * 2 * j]
                        .chunks_exact(2)
                        .map(|c| [c[0].as_f64(), c[1].as_f64()])
                        .collect(),
                    depth: depth[i * j..(i + 1) * j].iter().map(|x| x.as_f64() * inv).collect(),
                },
                object: to_f64(&objects[i * no..(i + 1) * no]),
            })
            .collect();
        ClipOutput {
            frames,
            action: to_f64(g.value(v.action)),
            alpha_out: to_f64(g.value(v.alpha_out)),
            frames_encoded: v.frames_encoded,
            pose_attention: v
                .pose_attention
                .iter()
                .map(|seg| seg.iter().map(|l| l.record(g)).collect())
                .collect(),
            action_attention: v.action_attention.iter().map(|l| l.record(g)).collect(),
        }
    }

    /// Forward pass on a fresh graph, returning plain values.
    pub fn run_clip(&self, frames: &[&FrameData]) -> Result<ClipOutput> {
        let mut g = Graph::new();
        let p = self.store.bind(&mut g);
        let v = self.forward_clip(&mut g, &p, frames)?;
        Ok(self.materialize(&g, &v))
    }
}
