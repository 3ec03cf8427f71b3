use std::fs;

use htt_core::data::manifest::{sequence_from_str, sequence_to_string};
use htt_core::data::{load_manifest, save_manifest, synth_generate, FrameData, SynthSpec};
use htt_core::HttError;

const GOLDEN: &str = "\
htt-sequence 1
id golden
joints 2
frames 2
fps 30
intrinsics 100 100 50 50
frame_kind feature 3
frame_data
0.5 -1 2
0 0 0.25
pose2d
50 50 150 50
60 40 50 70
depth
500 200
1000 100
pose3d
0 0 500 200 0 200
100 -100 1000 0 20 100
";

fn small_spec() -> SynthSpec {
    SynthSpec {
        num_verbs: 2,
        num_objects: 2,
        sequences_per_class: 2,
        frames: 12,
        feature_dim: 8,
        seed: 5,
        ..SynthSpec::default()
    }
}

#[test]
fn golden_sequence_parses() {
    let r = sequence_from_str(GOLDEN, "golden.seq", 1, 3).unwrap();
    assert_eq!(r.id, "golden");
    assert_eq!((r.len(), r.joints(), r.object_label, r.action_label), (2, 2, 1, 3));
    assert_eq!(r.fps, 30.0);
    assert_eq!(r.frames[0], FrameData::Feature(vec![0.5, -1.0, 2.0]));
    assert_eq!(r.gt_pose[1].p2d, vec![[60.0, 40.0], [50.0, 70.0]]);
    assert_eq!(r.gt_pose[0].depth, vec![500.0, 200.0]);
    assert_eq!(r.gt_3d[0][1], [200.0, 0.0, 200.0]);
    assert_eq!(r.gt_3d[1][0], [100.0, -100.0, 1000.0]);
    assert_eq!(sequence_to_string(&r), GOLDEN);
}

#[test]
fn inconsistent_lift_names_the_frame() {
    let bad = GOLDEN.replace("100 -100 1000 0 20 100", "100 -100 1000 0 21 100");
    let e = sequence_from_str(&bad, "bad.seq", 0, 0).unwrap_err();
    assert!(matches!(e, HttError::Data(_)), "{e}");
    let msg = e.to_string();
    assert!(msg.contains("bad.seq") && msg.contains("frame 1"), "{msg}");
}

#[test]
fn malformed_sequences_are_rejected() {
    for text in [
        GOLDEN.replace("htt-sequence 1", "htt-sequence 9"),
        GOLDEN.replace("frames 2", "frames 3"),
        GOLDEN.replace("0.5 -1 2", "0.5 -1"),
        GOLDEN.replace("intrinsics 100 100 50 50", "intrinsics 100 100 50"),
    ] {
        assert!(sequence_from_str(&text, "bad.seq", 0, 0).is_err());
    }
}

#[test]
fn manifest_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let records = synth_generate(&small_spec()).unwrap();
    let path = dir.path().join("set.manifest");
    save_manifest(&records, &path).unwrap();
    let loaded = load_manifest(&path).unwrap();
    assert_eq!(loaded, records);
    for (a, b) in loaded.iter().zip(&records) {
        for (fa, fb) in a.frames.iter().zip(&b.frames) {
            assert!(fa.flat().iter().zip(fb.flat()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }
    let first = fs::read(&path).unwrap();
    save_manifest(&loaded, &path).unwrap();
    assert_eq!(fs::read(&path).unwrap(), first);
}

#[test]
fn missing_sequence_file_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("set.manifest");
    fs::write(&path, "htt-manifest 1\n# comment\nabsent.seq 0 0\n").unwrap();
    let msg = load_manifest(&path).unwrap_err().to_string();
    assert!(msg.contains("absent.seq"), "{msg}");
}

#[test]
fn bad_manifest_lines_are_located() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("set.manifest");
    fs::write(&path, "htt-manifest 1\na.seq 0\n").unwrap();
    let msg = load_manifest(&path).unwrap_err().to_string();
    assert!(msg.contains(":2"), "{msg}");
    fs::write(&path, "htt-manifest 2\n").unwrap();
    assert!(load_manifest(&path).is_err());
}

#[test]
fn synthetic_records_are_consistent() {
    let spec = small_spec();
    let records = synth_generate(&spec).unwrap();
    assert_eq!(records.len(), spec.num_actions() * spec.sequences_per_class);
    for r in &records {
        r.validate(Some(spec.num_objects), Some(spec.num_actions())).unwrap();
        assert_eq!(r.len(), spec.frames);
    }
    let noiseless = SynthSpec { noise: 0.0, ..spec };
    assert_eq!(synth_generate(&noiseless).unwrap(), synth_generate(&noiseless).unwrap());
}
