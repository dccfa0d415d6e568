mod common;

use proptest::prelude::*;
use saliency3d::{aggregate, attribute_records, cam_2d, cam_layer, negate_gradients, LayerRecord, Tensor, UpsampleSpec};

fn record() -> impl Strategy<Value = (LayerRecord, [usize; 3])> {
    (1usize..=3, 1usize..=3, 1usize..=4, 1usize..=4).prop_flat_map(|(c, t, h, w)| {
        let n = c * t * h * w;
        (
            prop::collection::vec(0f32..4.0, n),
            prop::collection::vec(-1f32..1.0, n),
            (t..=2 * t, h..=3 * h, w..=3 * w),
        )
            .prop_map(move |(a, g, (tt, th, tw))| {
                let dims = [c, t, h, w];
                let rec = LayerRecord::new(
                    "l",
                    Tensor::from_vec(&dims, a).unwrap(),
                    Tensor::from_vec(&dims, g).unwrap(),
                )
                .unwrap();
                (rec, [tt, th, tw])
            })
    })
}

proptest! {
    #[test]
    fn matches_brute_force_layer_map((rec, target) in record()) {
        let got = cam_layer(&rec, target).unwrap();
        let want = common::cam_oracle(&rec.alpha, &rec.grad, target);
        for (a, b) in got.values.data().iter().zip(want) {
            prop_assert!((*a as f64 - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn invariant_to_positive_scaling((rec, target) in record(), s in 1e-3f32..1e3, u in 1e-3f32..1e3) {
        let base = cam_layer(&rec, target).unwrap();
        let scaled = LayerRecord::new("l", rec.alpha.scale(u), rec.grad.scale(s)).unwrap();
        let other = cam_layer(&scaled, target).unwrap();
        for (a, b) in base.values.data().iter().zip(other.values.data()) {
            prop_assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn bounded_in_unit_interval((rec, target) in record()) {
        let cam = cam_layer(&rec, target).unwrap();
        prop_assert!(cam.values.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        let spec = UpsampleSpec { gaussian_sigma: 0.8 };
        let smooth = saliency3d::cam::cam_layer_with(&rec, target, &spec).unwrap();
        prop_assert!(smooth.values.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn aggregate_dominates_components((a, target) in record(), (b, _) in record()) {
        let (ca, cb) = (cam_layer(&a, target).unwrap(), cam_layer(&b, target).unwrap());
        let sum = aggregate(&[ca.clone(), cb.clone()]).unwrap();
        for i in 0..sum.values.len() {
            let s = sum.values.data()[i];
            prop_assert!(s >= ca.values.data()[i] && s >= cb.values.data()[i]);
        }
        prop_assert_eq!(sum.layers.len(), 2);
    }

    #[test]
    fn counterfactual_support_is_disjoint((rec, target) in record()) {
        let plain = cam_layer(&rec, target).unwrap();
        let flipped = LayerRecord::new("l", rec.alpha.clone(), negate_gradients(&rec.grad)).unwrap();
        let counter = cam_layer(&flipped, target).unwrap();
        for (a, b) in plain.values.data().iter().zip(counter.values.data()) {
            prop_assert_eq!(a.min(*b), 0.0);
        }
    }

    #[test]
    fn negative_gradients_give_zero((rec, target) in record()) {
        let neg = rec.grad.map(|v| -v.abs() - 1e-3);
        let r = LayerRecord::new("l", rec.alpha.clone(), neg).unwrap();
        prop_assert!(cam_layer(&r, target).unwrap().values.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn record_order_does_not_change_selection((a, target) in record(), (b, _) in record()) {
        let b = LayerRecord { layer_id: "m".into(), ..b };
        let recs = [a.clone(), b.clone()];
        let x = attribute_records(&recs, &["l", "m"], target, &UpsampleSpec::default()).unwrap();
        let recs_rev = [b, a];
        let y = attribute_records(&recs_rev, &["l", "m"], target, &UpsampleSpec::default()).unwrap();
        prop_assert_eq!(x, y);
    }

    #[test]
    fn image_map_matches_single_frame_volume((rec, target) in record()) {
        let d = rec.alpha.dims().to_vec();
        let plane = |t: &Tensor| Tensor::from_vec(&[d[0], d[2], d[3]], t.data().iter().copied().enumerate()
            .filter(|(i, _)| (i / (d[2] * d[3])) % d[1] == 0).map(|(_, v)| v).collect()).unwrap();
        let img = LayerRecord::new("l", plane(&rec.alpha), plane(&rec.grad)).unwrap();
        let got = cam_2d(&img, [target[1], target[2]]).unwrap();
        let want = common::cam_oracle(&img.alpha, &img.grad, [1, target[1], target[2]]);
        for (a, b) in got.values.data().iter().zip(want) {
            prop_assert!((*a as f64 - b).abs() <= 1e-6);
        }
    }
}
