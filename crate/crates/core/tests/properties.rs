use proptest::prelude::*;

use cegan_core::data::{batch_plan, make_mask, mask_area, split_indices, MaskKind, MaskSpec};
use cegan_core::loss::{adversarial_loss_d, reconstruction_loss};
use cegan_core::{Tape, Tensor};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pool_then_upsample_restores_shape(n in 1usize..3, c in 1usize..4, h in 1usize..6, w in 1usize..6) {
        let (h, w) = (2 * h, 2 * w);
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::from_fn([n, c, h, w], |i| i as f32));
        let p = tape.maxpool2d(x).unwrap();
        let u = tape.upsample2x(p).unwrap();
        prop_assert_eq!(tape.value(u).shape(), &[n, c, h, w]);
    }

    #[test]
    fn reconstruction_loss_is_nonnegative_and_zero_only_on_equality(
        a in prop::collection::vec(0f32..1.0, 12), b in prop::collection::vec(0f32..1.0, 12)
    ) {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::new([1, 3, 2, 2], a.clone()).unwrap());
        let y = tape.constant(Tensor::new([1, 3, 2, 2], b.clone()).unwrap());
        let l = reconstruction_loss(&mut tape, x, y, None, 1.0).unwrap();
        let v = tape.value(l).item().unwrap();
        prop_assert!(v >= 0.0);
        prop_assert_eq!(v == 0.0, a == b);
    }

    #[test]
    fn disturbing_a_perfect_discriminator_raises_its_loss(
        real in prop::collection::vec(0.5f64..1.0, 4), fake in prop::collection::vec(0.0f64..0.5, 4)
    ) {
        let mut tape = Tape::<f64>::new();
        let loss = |tape: &mut Tape<f64>, r: Vec<f64>, f: Vec<f64>| {
            let r = tape.constant(Tensor::new([4, 1], r).unwrap());
            let f = tape.constant(Tensor::new([4, 1], f).unwrap());
            let l = adversarial_loss_d(tape, r, f).unwrap();
            tape.value(l).item().unwrap()
        };
        let perfect = loss(&mut tape, vec![1.0 - 1e-9; 4], vec![1e-9; 4]);
        let disturbed = loss(&mut tape, real, fake);
        prop_assert!(disturbed > perfect);
    }

    #[test]
    fn mask_area_tracks_coverage(coverage in 0.01f64..0.9, size in 2usize..9, seed in any::<u64>()) {
        let size = size * 8;
        for kind in [MaskKind::Center, MaskKind::RandomBlock] {
            let spec = MaskSpec { kind, coverage, fill: 0.0, seed };
            let m = make_mask::<f32>(&spec, size, size).unwrap();
            let side = spec.side(size, size).unwrap();
            prop_assert_eq!(mask_area(&m), side * side);
            prop_assert!((side as f64 - coverage.sqrt() * size as f64).abs() <= 0.5 + 1e-9);
        }
    }

    #[test]
    fn split_partitions_indices(n in 2usize..500, frac in 0.05f64..0.95, seed in any::<u64>()) {
        if let Ok((train, test)) = split_indices(n, frac, seed) {
            let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
            all.sort();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            prop_assert_eq!(train.len(), (frac * n as f64 + 1e-9).floor() as usize);
        }
    }

    #[test]
    fn batch_plan_covers_each_index_once(n in 1usize..300, bs in 1usize..40, seed in any::<u64>(), epoch in 0u64..50) {
        let plan = batch_plan(n, bs, seed, epoch).unwrap();
        prop_assert_eq!(plan.len(), n.div_ceil(bs));
        let mut all: Vec<usize> = plan.concat();
        all.sort();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(plan, batch_plan(n, bs, seed, epoch).unwrap());
    }
}
