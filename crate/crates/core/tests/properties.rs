use angioseg::eval::{dice, per_class_dice};
use angioseg::image::{BinaryMask, Frame, Label, LabelMask};
use angioseg::morphology::{
    black_top_hat, close, dilate, erode, filter_small_components, Connectivity, StructuringElement,
};
use proptest::prelude::*;

fn frame() -> impl Strategy<Value = Frame> {
    (2usize..14, 2usize..14).prop_flat_map(|(w, h)| {
        prop::collection::vec(0.0f32..=1.0, w * h).prop_map(move |v| Frame::from_vec(w, h, v).unwrap())
    })
}

fn mask_pair() -> impl Strategy<Value = (BinaryMask, BinaryMask)> {
    (1usize..10, 1usize..10).prop_flat_map(|(w, h)| {
        let m = move || prop::collection::vec(any::<bool>(), w * h).prop_map(move |v| BinaryMask::from_vec(w, h, v).unwrap());
        (m(), m())
    })
}

fn label_pair() -> impl Strategy<Value = (LabelMask, LabelMask)> {
    (1usize..8, 1usize..8).prop_flat_map(|(w, h)| {
        let m = move || {
            prop::collection::vec(0usize..3, w * h)
                .prop_map(move |v| LabelMask::from_vec(w, h, v.into_iter().map(|i| Label::ALL[i]).collect()).unwrap())
        };
        (m(), m())
    })
}

fn element() -> impl Strategy<Value = StructuringElement> {
    (0usize..4, 0usize..4).prop_map(|(a, b)| StructuringElement::rect(2 * a + 1, 2 * b + 1).unwrap())
}

proptest! {
    #[test]
    fn top_hat_is_non_negative(f in frame(), se in element()) {
        prop_assert!(black_top_hat(&f, se).data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn closing_is_extensive_and_idempotent(f in frame(), se in element()) {
        let once = close(&f, se);
        prop_assert!(once.data().iter().zip(f.data()).all(|(c, v)| c >= v));
        let twice = close(&once, se);
        prop_assert!(once.data().iter().zip(twice.data()).all(|(a, b)| (a - b).abs() <= 1e-6));
    }

    #[test]
    fn erosion_below_dilation(f in frame(), se in element()) {
        let (e, d) = (erode(&f, se), dilate(&f, se));
        prop_assert!(e.data().iter().zip(f.data()).zip(d.data()).all(|((e, v), d)| e <= v && v <= d));
    }

    #[test]
    fn component_filter_is_anti_extensive_and_idempotent((m, _) in mask_pair(), min_area in 0usize..6, eight in any::<bool>()) {
        let conn = if eight { Connectivity::Eight } else { Connectivity::Four };
        let kept = filter_small_components(&m, min_area, conn);
        prop_assert!(kept.is_subset_of(&m));
        prop_assert_eq!(filter_small_components(&kept, min_area, conn), kept);
    }

    #[test]
    fn dice_is_symmetric_and_bounded((a, b) in mask_pair()) {
        let d = dice(&a, &b).unwrap();
        prop_assert_eq!(d, dice(&b, &a).unwrap());
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert_eq!(dice(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn binary_score_is_the_foreground_union_dice((p, t) in label_pair()) {
        let r = per_class_dice(&p, &t).unwrap();
        prop_assert_eq!(r.binary, dice(&p.foreground(), &t.foreground()).unwrap());
    }
}
