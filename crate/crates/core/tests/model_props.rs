use htt_core::autodiff::Graph;
use htt_core::data::{synth_generate, FrameData, SequenceRecord, SynthSpec};
use htt_core::model::checkpoint::{checkpoint_from_str, checkpoint_to_string};
use htt_core::model::eval::{ground_truth_prediction, predict_video, score};
use htt_core::model::loss::{clip_loss, loss_total, ClipTargets};
use htt_core::model::train::EPOCH_CSV_HEADER;
use htt_core::model::{load_checkpoint, save_checkpoint, FrameEncoderKind, HttConfig, HttModel, Schedule, Trainer};
use htt_core::windowing::{plan_video, vote_action};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn frames(seed: u64, n: usize, d: usize) -> Vec<FrameData> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| FrameData::Feature((0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())).collect()
}

fn tiny_data() -> (SynthSpec, Vec<SequenceRecord>, HttConfig) {
    let spec = SynthSpec {
        num_verbs: 2,
        num_objects: 2,
        sequences_per_class: 1,
        frames: 14,
        joints: 2,
        feature_dim: 16,
        seed: 9,
        ..SynthSpec::default()
    };
    let data = synth_generate(&spec).unwrap();
    let mut cfg = HttConfig::tiny();
    cfg.num_actions = spec.num_actions();
    (spec, data, cfg)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn probabilities_and_attention_are_normalized(seed in 0u64..1000, n in 1usize..=8) {
        let cfg = HttConfig::tiny();
        let model = HttModel::<f64>::new(cfg.clone(), seed).unwrap();
        let owned = frames(seed + 1, n, cfg.token_dim);
        let refs: Vec<&FrameData> = owned.iter().collect();
        let out = model.run_clip(&refs).unwrap();
        prop_assert_eq!(out.frames.len(), n);
        prop_assert!((out.action.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        prop_assert!(out.action.iter().all(|&p| p >= 0.0));
        for f in &out.frames {
            prop_assert!((f.object.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
        let records = out.pose_attention.iter().flatten().chain(&out.action_attention);
        for rec in records {
            for h in 0..rec.heads {
                for q in 0..rec.queries {
                    let row = rec.row(h, q);
                    prop_assert!(row.iter().all(|&w| w >= 0.0));
                    prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
                }
            }
        }
        // α token plus n real frames are the only visible action-block keys
        for rec in &out.action_attention {
            for h in 0..rec.heads {
                prop_assert!(rec.row(h, 0)[n + 1..].iter().all(|&w| w == 0.0));
            }
        }
    }
}

#[test]
fn action_loss_reaches_pose_block_parameters() {
    let cfg = HttConfig::tiny();
    let model = HttModel::<f64>::new(cfg.clone(), 4).unwrap();
    let owned = frames(4, 6, cfg.token_dim);
    let refs: Vec<&FrameData> = owned.iter().collect();
    let mut g = Graph::new();
    let p = model.store.bind(&mut g);
    let v = model.forward_clip(&mut g, &p, &refs).unwrap();
    let action = g.cross_entropy(v.action, &[1]).unwrap();
    let action = g.sum(action);
    g.backward(action).unwrap();
    let grads = model.store.collect_grads(&g, &p);
    let mut upstream = model.pose_encoder.all_params();
    for a in model.mlp1.iter().chain(&model.mlp2) {
        upstream.extend([a.w, a.b]);
    }
    for id in upstream {
        let norm: f64 = grads[id.index()].iter().map(|x| x * x).sum();
        assert!(norm > 0.0, "{} gets no gradient from the action loss", model.store.name(id));
    }
}

#[test]
fn forward_and_backward_are_deterministic() {
    let cfg = HttConfig::tiny();
    let run = || {
        let model = HttModel::<f64>::new(cfg.clone(), 21).unwrap();
        let owned = frames(21, 7, cfg.token_dim);
        let refs: Vec<&FrameData> = owned.iter().collect();
        let mut g = Graph::new();
        let p = model.store.bind(&mut g);
        let v = model.forward_clip(&mut g, &p, &refs).unwrap();
        let l = g.sum(v.pose_raw);
        g.backward(l).unwrap();
        let bits: Vec<u64> = model.store.collect_grads(&g, &p).concat().iter().map(|x| x.to_bits()).collect();
        (g.item(l).to_bits(), bits)
    };
    assert_eq!(run(), run());
}

#[test]
fn graph_and_value_losses_agree() {
    let (_, data, cfg) = tiny_data();
    let model = HttModel::<f64>::new(cfg.clone(), 2).unwrap();
    let r = &data[1];
    let idx: Vec<usize> = (0..5).collect();
    let refs: Vec<&FrameData> = idx.iter().map(|&f| &r.frames[f]).collect();
    let gt = ClipTargets::from_record(r, &idx).unwrap();
    let mut g = Graph::new();
    let p = model.store.bind(&mut g);
    let v = model.forward_clip(&mut g, &p, &refs).unwrap();
    let l = clip_loss(&mut g, &v, &gt, &cfg).unwrap();
    let out = model.materialize(&g, &v);
    let value = loss_total(&out, &gt, &cfg).unwrap();
    assert!((value.total - g.item(l.total)).abs() <= 1e-9 * value.total.abs().max(1.0));
}

#[test]
fn one_small_step_lowers_the_clip_loss() {
    let (_, data, cfg) = tiny_data();
    let model = HttModel::<f64>::new(cfg, 8).unwrap();
    let mut t = Trainer::new(model, Schedule::default()).unwrap();
    let idx: Vec<usize> = (0..8).collect();
    let before = t.accumulate_clip(&data[0], &idx, 1.0).unwrap();
    t.step(1e-4).unwrap();
    let after = t.accumulate_clip(&data[0], &idx, 1.0).unwrap();
    assert!(after.total < before.total, "{} -> {}", before.total, after.total);
}

#[test]
fn each_frame_is_encoded_once_per_video() {
    let (_, data, cfg) = tiny_data();
    let model = HttModel::<f64>::new(cfg.clone(), 1).unwrap();
    for r in &data {
        let pred = predict_video(&model, r).unwrap();
        assert_eq!(pred.frames_encoded, r.len());
        assert_eq!(pred.plan.clips.len(), plan_video(r.len(), cfg.clip_length).unwrap().clips.len());
        assert_eq!(pred.action, vote_action(&pred.clip_actions).unwrap());
    }
}

#[test]
fn ground_truth_scores_perfectly() {
    let (spec, data, cfg) = tiny_data();
    let preds: Vec<_> = data
        .iter()
        .map(|r| ground_truth_prediction(r, spec.num_objects, cfg.clip_length).unwrap())
        .collect();
    let e = score(&data, &preds, 1, 0).unwrap();
    for space in ["camera", "root-aligned"] {
        assert_eq!(e.value("mepe", space, "single"), Some(0.0));
        assert_eq!(e.value("auc_0_20", space, "single"), Some(1.0));
    }
    assert_eq!(e.value("action_accuracy", "-", "-"), Some(1.0));
    assert_eq!(e.value("object_accuracy", "-", "-"), Some(1.0));
}

#[test]
fn checkpoint_round_trip_keeps_every_bit() {
    let (_, data, cfg) = tiny_data();
    let schedule = Schedule {
        epochs: 2,
        learning_rate: 1e-3,
        ..Schedule::default()
    };
    let mut t = Trainer::new(HttModel::<f64>::new(cfg, 6).unwrap(), schedule).unwrap();
    t.run_epoch(&data).unwrap();
    let text = checkpoint_to_string(&t);
    let back: Trainer = checkpoint_from_str(&text, "mem").unwrap();
    assert_eq!(checkpoint_to_string(&back), text);
    assert_eq!(back.model.cfg, t.model.cfg);
    let a = predict_video(&t.model, &data[0]).unwrap();
    let b = predict_video(&back.model, &data[0]).unwrap();
    assert_eq!(a, b);
    let e = checkpoint_from_str::<f64>(&text.replace("scalar f64", "scalar f32"), "mem").unwrap_err();
    assert!(e.to_string().contains("f32"), "{e}");
    let truncated: String = text.lines().take(20).map(|l| format!("{l}\n")).collect();
    assert!(checkpoint_from_str::<f64>(&truncated, "mem").is_err());
}

#[test]
fn resumed_training_matches_uninterrupted() {
    let (_, data, cfg) = tiny_data();
    let schedule = Schedule {
        epochs: 4,
        learning_rate: 1e-3,
        halving_period: 2,
        batch_clips: 3,
        seed: 13,
    };
    let mut straight = Trainer::new(HttModel::<f64>::new(cfg.clone(), 2).unwrap(), schedule.clone()).unwrap();
    let logs = straight.run(&data, |_, _| Ok(())).unwrap();
    assert_eq!(logs.iter().map(|l| l.learning_rate).collect::<Vec<_>>(), vec![1e-3, 1e-3, 5e-4, 5e-4]);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.ckpt");
    let mut first = Trainer::new(HttModel::<f64>::new(cfg, 2).unwrap(), schedule).unwrap();
    let mut resumed_logs = vec![first.run_epoch(&data).unwrap(), first.run_epoch(&data).unwrap()];
    save_checkpoint(&first, &path).unwrap();
    let mut second: Trainer = load_checkpoint(&path).unwrap();
    assert_eq!(second.next_epoch, 2);
    resumed_logs.extend(second.run(&data, |_, _| Ok(())).unwrap());
    assert_eq!(checkpoint_to_string(&second), checkpoint_to_string(&straight));
    let rows = |l: &[htt_core::model::EpochLog]| l.iter().map(|x| x.csv_row()).collect::<Vec<_>>();
    assert_eq!(rows(&resumed_logs), rows(&logs));
    assert_eq!(EPOCH_CSV_HEADER.split(',').count(), logs[0].csv_row().split(',').count());
}

#[test]
fn single_precision_model_runs() {
    let cfg = HttConfig::tiny();
    let model = HttModel::<f32>::new(cfg.clone(), 3).unwrap();
    let owned = frames(3, 5, cfg.token_dim);
    let refs: Vec<&FrameData> = owned.iter().collect();
    let out = model.run_clip(&refs).unwrap();
    assert!((out.action.iter().sum::<f64>() - 1.0).abs() < 1e-5);
}

#[test]
fn image_frames_go_through_the_conv_encoder() {
    let mut cfg = HttConfig::tiny();
    cfg.image_height = 6;
    cfg.image_width = 5;
    cfg.frame_encoder = FrameEncoderKind::TinyConv {
        channels: 4,
        kernel: 3,
        stride: 1,
    };
    let model = HttModel::<f64>::new(cfg, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut image = || FrameData::Image {
        height: 6,
        width: 5,
        pixels: (0..90).map(|_| rng.gen_range(0.0..1.0)).collect(),
    };
    let owned: Vec<FrameData> = (0..3).map(|_| image()).collect();
    let refs: Vec<&FrameData> = owned.iter().collect();
    let out = model.run_clip(&refs).unwrap();
    assert_eq!(out.frames.len(), 3);
    let wrong = FrameData::Image {
        height: 4,
        width: 5,
        pixels: vec![0.0; 60],
    };
    assert!(model.run_clip(&[&wrong]).is_err());
}
