//! Property tests for the persistence layer: round-trip identity and
//! robustness of the readers against corrupted input.

use proptest::prelude::*;
use qsi::grid::PixelGrid;
use qsi::io::{decode_frame_stack, decode_map_csv, decode_mask, encode_frame_stack, encode_map_csv, MapPayload, StackMeta};
use qsi::simulator::{FrameCluster, FramePair};

fn arb_stack() -> impl Strategy<Value = (Vec<FrameCluster>, StackMeta)> {
    (1u32..5, 1u32..5, 1u32..4, 0usize..4).prop_flat_map(|(w, h, frames, n_clusters)| {
        let npix = (w * h) as usize;
        let usable = proptest::sample::subsequence((0..frames).collect::<Vec<_>>(), 1..=frames as usize);
        let plane = proptest::collection::vec(-1e6f32..1e6, npix);
        let frame = (plane.clone(), plane).prop_map(|(n1, n2)| FramePair { n1, n2 });
        let cluster_frames = proptest::collection::vec(frame, frames as usize);
        let clusters = proptest::collection::vec(
            (cluster_frames, any::<u64>(), any::<u64>()),
            n_clusters,
        );
        (usable, clusters, any::<u64>(), any::<[u8; 32]>()).prop_map(
            move |(usable, clusters, seed, digest)| {
                let grid = PixelGrid::new(w, h).unwrap();
                let clusters: Vec<FrameCluster> = clusters
                    .into_iter()
                    .map(|(frames, cluster_id, seed_tag)| FrameCluster {
                        grid,
                        frames,
                        usable_indices: usable.clone(),
                        cluster_id,
                        seed_tag,
                    })
                    .collect();
                let meta = StackMeta {
                    grid,
                    cluster_frames: frames,
                    usable_indices: usable.clone(),
                    exposure_us: 1.7,
                    duty_cycle_us: 544.0,
                    seed,
                    scene_digest: digest,
                };
                (clusters, meta)
            },
        )
    })
}

proptest! {
    #[test]
    fn stack_round_trip_is_bit_exact((clusters, meta) in arb_stack()) {
        let bytes = encode_frame_stack(&clusters, &meta).unwrap();
        let (meta2, clusters2) = decode_frame_stack(&bytes).unwrap();
        prop_assert_eq!(&meta, &meta2);
        prop_assert_eq!(&clusters, &clusters2);
        let bytes2 = encode_frame_stack(&clusters2, &meta2).unwrap();
        prop_assert_eq!(bytes, bytes2);
    }

    #[test]
    fn truncated_stacks_error_instead_of_crashing(
        (clusters, meta) in arb_stack(),
        cut_fraction in 0.0f64..1.0,
    ) {
        let bytes = encode_frame_stack(&clusters, &meta).unwrap();
        let cut = ((bytes.len() as f64) * cut_fraction) as usize;
        if cut < bytes.len() {
            prop_assert!(decode_frame_stack(&bytes[..cut]).is_err());
        }
    }

    #[test]
    fn bit_flipped_stacks_never_crash(
        (clusters, meta) in arb_stack(),
        flips in proptest::collection::vec((any::<prop::sample::Index>(), 0u8..8), 1..6),
    ) {
        let mut bytes = encode_frame_stack(&clusters, &meta).unwrap();
        for (idx, bit) in flips {
            let i = idx.index(bytes.len());
            bytes[i] ^= 1 << bit;
        }
        // a flip may land in a count and still decode; it must never panic
        let _ = decode_frame_stack(&bytes);
    }

    #[test]
    fn arbitrary_bytes_never_crash_the_readers(bytes in proptest::collection::vec(any::<u8>(), 0..2048)) {
        let _ = decode_frame_stack(&bytes);
        let _ = decode_mask(&bytes);
        if let Ok(text) = std::str::from_utf8(&bytes) {
            let _ = decode_map_csv(text);
        }
    }

    #[test]
    fn map_csv_round_trip(
        w in 1u32..8,
        h in 1u32..8,
        seed in any::<u64>(),
    ) {
        let grid = PixelGrid::new(w, h).unwrap();
        let mut state = seed;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let values: Vec<f64> = (0..grid.len()).map(|_| next() * 10.0 - 5.0).collect();
        let excluded: Vec<bool> = (0..grid.len()).map(|_| next() < 0.1).collect();
        let map = MapPayload {
            grid,
            values: values
                .iter()
                .zip(&excluded)
                .map(|(&v, &e)| if e { 0.0 } else { v })
                .collect(),
            excluded,
            kind: "variance".into(),
            attrs: vec![("bin_radius".into(), "2".into())],
        };
        let text = encode_map_csv(&map);
        let back = decode_map_csv(&text).unwrap();
        prop_assert_eq!(&map.excluded, &back.excluded);
        for (a, b) in map.values.iter().zip(&back.values) {
            // nine significant digits survive the trip
            prop_assert!((a - b).abs() <= 1e-8 * a.abs().max(1e-300));
        }
        prop_assert_eq!(text, encode_map_csv(&back));
    }
}
