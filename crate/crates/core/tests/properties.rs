mod common;

use attnforge_core::attention::suite::Variant;
use common::props::*;
use proptest::prelude::*;

fn shape(max_pool: bool) -> impl Strategy<Value = [usize; 4]> {
    let lo = if max_pool { 2 } else { 1 };
    (1usize..=2, prop::sample::select(vec![4usize, 8, 16]), lo..=7usize, lo..=7usize).prop_map(|(n, c, h, w)| [n, c, h, w])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn sigmoid_gates_never_amplify(
        v in prop::sample::select(vec![
            Variant::Gam, Variant::GamGc, Variant::GamMaxPool, Variant::ChannelOnly,
            Variant::SpatialOnly, Variant::Se, Variant::Cbam, Variant::CbamWmp,
        ]),
        s in shape(true),
        seed in any::<u64>(),
    ) {
        let cfg = v.config(2, 2);
        prop_assert_eq!(gating_bound(&cfg, s, seed, 1.0), Ok(()));
    }

    #[test]
    fn bam_at_most_doubles(s in shape(false), r in prop::sample::select(vec![1usize, 2, 4]), seed in any::<u64>()) {
        let cfg = attnforge_core::AttentionConfig::bam(r);
        prop_assert_eq!(gating_bound(&cfg, s, seed, 2.0), Ok(()));
    }

    #[test]
    fn gam_channel_commutes_with_position_permutations(
        s in shape(false),
        r in prop::sample::select(vec![1usize, 2, 4]),
        seed in any::<u64>(),
    ) {
        prop_assert_eq!(gam_channel_equivariance(s, r, seed), Ok(()));
    }

    #[test]
    fn se_gate_has_no_spatial_variation(s in shape(false), seed in any::<u64>()) {
        prop_assert_eq!(se_gate_spatially_constant(s, 2, seed), Ok(()));
    }

    #[test]
    fn cbam_spatial_gate_has_no_channel_variation(s in shape(false), max_pool in any::<bool>(), seed in any::<u64>()) {
        prop_assert_eq!(cbam_gate_channel_constant(s, 2, max_pool, seed), Ok(()));
    }

    #[test]
    fn channel_shuffle_is_a_bijection(
        n in 1usize..=2,
        g in 1usize..=4,
        per in 1usize..=4,
        h in 1usize..=5,
        w in 1usize..=5,
        seed in any::<u64>(),
    ) {
        prop_assert_eq!(shuffle_bijective([n, g * per, h, w], g, seed), Ok(()));
    }

    #[test]
    fn grouped_conv_equals_masked_dense(
        g in 1usize..=4,
        per_in in 1usize..=3,
        per_out in 1usize..=3,
        k in prop::sample::select(vec![1usize, 3, 5]),
        h in 1usize..=7,
        w in 1usize..=7,
        seed in any::<u64>(),
    ) {
        let err = group_conv_vs_masked_dense([1, g * per_in, h, w], per_out, g, k, seed);
        prop_assert!(err <= 1e-12, "max abs error {err:e}");
    }
}
