use au3d::landmark_io::Point3;
use au3d::metrics::{f1_frame, f1_macro_3class, f1_micro_3class, ClassCounts, ConfusionCounts};
use au3d::neuralnet::gradcheck::random_grids;
use au3d::neuralnet::{load_checkpoint, save_checkpoint, ArchitectureDescriptor, Input, Network, Variant};
use au3d::voxelizer::{encode_frame, normalize};
use proptest::prelude::*;

fn frame() -> impl Strategy<Value = Vec<Point3>> {
    prop::collection::vec(prop::array::uniform3(-100.0f64..100.0), 2..90).prop_filter("spread on every axis", |pts| {
        (0..3).all(|k| {
            let lo = pts.iter().map(|p| p[k]).fold(f64::INFINITY, f64::min);
            let hi = pts.iter().map(|p| p[k]).fold(f64::NEG_INFINITY, f64::max);
            hi - lo > 1e-3
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn normalized_coordinates_span_unit_cube(pts in frame()) {
        let n = normalize(&pts).unwrap();
        for k in 0..3 {
            let lo = n.points.iter().map(|p| p[k]).fold(f64::INFINITY, f64::min);
            let hi = n.points.iter().map(|p| p[k]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert_eq!(lo, 0.0);
            prop_assert_eq!(hi, 1.0);
        }
    }

    #[test]
    fn grid_touches_every_face(pts in frame(), c in 2usize..32) {
        let g = encode_frame(&pts, c).unwrap();
        prop_assert!(g.count() >= 1 && g.count() <= pts.len());
        for k in 0..3 {
            prop_assert!(g.active().any(|p| [p.0, p.1, p.2][k] == 0));
            prop_assert!(g.active().any(|p| [p.0, p.1, p.2][k] == c - 1));
        }
    }

    #[test]
    fn axis_permutation_permutes_grid(pts in frame(), c in 2usize..16) {
        let swapped: Vec<Point3> = pts.iter().map(|p| [p[1], p[2], p[0]]).collect();
        let (a, b) = (encode_frame(&pts, c).unwrap(), encode_frame(&swapped, c).unwrap());
        for (x, y, z) in a.active() {
            prop_assert!(b.get(y, z, x));
        }
        prop_assert_eq!(a.count(), b.count());
    }

    #[test]
    fn f1_is_bounded_and_symmetric_in_errors(tp in 0u64..50, fp in 0u64..50, fn_ in 0u64..50, tn in 0u64..50) {
        let f = f1_frame(&ConfusionCounts { tp, fp, fn_, tn });
        prop_assert!((0.0..=1.0).contains(&f));
        prop_assert_eq!(f, f1_frame(&ConfusionCounts { tp, fp: fn_, fn_: fp, tn }));
        prop_assert_eq!(f == 1.0, tp > 0 && fp == 0 && fn_ == 0);
    }

    #[test]
    fn three_class_scores_bounded(pairs in prop::collection::vec((0usize..3, 0usize..3), 0..60)) {
        let mut c = ClassCounts::default();
        pairs.iter().for_each(|&(p, a)| c.add(p, a));
        for v in [f1_macro_3class(&c), f1_micro_3class(&c)] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        if !pairs.is_empty() && pairs.iter().all(|&(p, a)| p == a) {
            prop_assert_eq!(f1_micro_3class(&c), 1.0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn checkpoint_round_trip_preserves_predictions(seed in any::<u64>(), three in any::<bool>()) {
        let variant = if three { Variant::ThreeClass } else { Variant::Binary };
        let d = ArchitectureDescriptor::small(variant);
        let net = Network::<f32>::init(&d, seed).unwrap();
        let bytes = save_checkpoint(&net, None);
        let (back, header) = load_checkpoint(&bytes).unwrap();
        prop_assert_eq!(header.rng_seed, seed);
        prop_assert_eq!(&save_checkpoint(&back, None), &bytes);
        let grids = random_grids(d.input_c, 3, seed);
        let refs: Vec<_> = grids.iter().collect();
        let a = net.predict(&Input::Voxels(&refs)).unwrap();
        let b = back.predict(&Input::Voxels(&refs)).unwrap();
        prop_assert_eq!(a.probs.data(), b.probs.data());
    }

    #[test]
    fn softmax_heads_sum_to_one(seed in any::<u64>()) {
        let d = ArchitectureDescriptor::small(Variant::ThreeClass);
        let net = Network::<f64>::init(&d, seed).unwrap();
        let grids = random_grids(d.input_c, 4, seed);
        let refs: Vec<_> = grids.iter().collect();
        let p = net.predict(&Input::Voxels(&refs)).unwrap();
        for head in p.probs.data().chunks(3) {
            prop_assert!((head.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
