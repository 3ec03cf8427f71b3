use htt_core::windowing::{plan_video, plan_video_with_offset, segment_clip, vote_action};
use proptest::prelude::*;

fn partition(len: usize, clip: usize, t: usize, offset: usize) -> Vec<Vec<usize>> {
    let plan = plan_video_with_offset(len, clip, offset).unwrap();
    let mut groups = Vec::new();
    for c in &plan.clips {
        for s in segment_clip(c.frames.len(), t).unwrap().segments {
            groups.push(c.frames[s.frames()].to_vec());
        }
    }
    groups
}

proptest! {
    #[test]
    fn segments_partition_the_clip(t in 1usize..20, n in 1usize..200) {
        let plan = segment_clip(n, t).unwrap();
        let mut next = 0;
        for s in &plan.segments {
            prop_assert_eq!(s.start, next);
            prop_assert!(s.real_len >= 1 && s.real_len <= t);
            next += s.real_len;
        }
        prop_assert_eq!(next, n);
        prop_assert_eq!(plan.segments.len(), n.div_ceil(t));
    }

    #[test]
    fn videos_are_covered_exactly_once(len in 1usize..5000, clip in 1usize..300) {
        let plan = plan_video(len, clip).unwrap();
        let mut seen = vec![false; len];
        for c in &plan.clips {
            prop_assert!(c.frames.len() <= clip);
            for &f in &c.frames {
                prop_assert!(!seen[f]);
                seen[f] = true;
            }
        }
        prop_assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn distinct_offsets_give_distinct_partitions(
        t in 2usize..12,
        segs in 1usize..6,
        extra in 0usize..400,
        a in 0usize..12,
        b in 0usize..12,
    ) {
        let (a, b) = (a % t, b % t);
        prop_assume!(a != b);
        let len = 2 * t + extra;
        prop_assert_ne!(partition(len, segs * t, t, a), partition(len, segs * t, t, b));
    }

    #[test]
    fn voting_ignores_clip_order(
        dists in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 4), 1..12),
        rotate in 0usize..12,
    ) {
        let mut shuffled = dists.clone();
        shuffled.reverse();
        let k = rotate % shuffled.len();
        shuffled.rotate_left(k);
        prop_assert_eq!(vote_action(&dists).unwrap(), vote_action(&shuffled).unwrap());
    }
}

#[test]
fn plan_dump_golden() {
    let dump = plan_video(7, 2).unwrap().dump();
    let expected = "0 even 0 2\n1 even 4 2\n2 odd 1 2\n3 odd 5 1\n";
    assert_eq!(dump, expected);
}
