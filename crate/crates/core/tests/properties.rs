use ldrcnet::arch::{crop_top_left, reflect_pad};
use ldrcnet::metrics::{psnr, psnr_from_mse, ssim};
use ldrcnet::train::{cosine_lr, TrainConfig};
use ldrcnet::{Shape, Tensor};
use proptest::prelude::*;

fn image(side: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(0.0f32..=1.0, 3 * side * side)
        .prop_map(move |d| Tensor::new(Shape::new(1, 3, side, side), d).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn psnr_decreases_with_mse(a in 1e-8f64..1.0, b in 1e-8f64..1.0) {
        prop_assume!(a < b);
        prop_assert!(psnr_from_mse(a, 1.0) > psnr_from_mse(b, 1.0));
    }

    #[test]
    fn psnr_ignores_a_shared_pixel_permutation(a in image(4), b in image(4), rot in 0usize..48) {
        let perm = |t: &Tensor| {
            let mut d = t.data().to_vec();
            d.rotate_left(rot);
            Tensor::new(t.shape(), d).unwrap()
        };
        let p = psnr(&a, &b, 1.0).unwrap();
        let q = psnr(&perm(&a), &perm(&b), 1.0).unwrap();
        prop_assert!(p == q || (p - q).abs() <= 1e-9 * p.abs());
    }

    #[test]
    fn metrics_are_symmetric_and_ssim_is_bounded(a in image(12), b in image(12)) {
        let s = ssim(&a, &b).unwrap();
        prop_assert!((-1.0..=1.0).contains(&s));
        prop_assert!((s - ssim(&b, &a).unwrap()).abs() <= 1e-12);
        prop_assert_eq!(psnr(&a, &b, 1.0).unwrap(), psnr(&b, &a, 1.0).unwrap());
    }

    #[test]
    fn cosine_schedule_is_monotone(total in 1u64..5000, frac in 0.0f64..1.0) {
        let cfg = TrainConfig { total_steps: total, ..Default::default() };
        let s = ((total as f64) * frac) as u64;
        let here = cosine_lr(s, &cfg).unwrap();
        let next = cosine_lr((s + 1).min(total), &cfg).unwrap();
        prop_assert!(next <= here);
        prop_assert!(here <= cfg.lr_init && here >= cfg.lr_final);
    }

    #[test]
    fn reflect_pad_then_crop_is_identity(h in 2usize..9, w in 2usize..9, seed in any::<u64>()) {
        let data = (0..h * w).map(|i| ((i as u64).wrapping_mul(seed | 1) % 97) as f32).collect();
        let x = Tensor::new(Shape::new(1, 1, h, w), data).unwrap();
        let (hp, wp) = (h.next_multiple_of(4), w.next_multiple_of(4));
        let p = reflect_pad(&x, hp, wp);
        prop_assert_eq!(p.shape(), Shape::new(1, 1, hp, wp));
        prop_assert_eq!(crop_top_left(&p, h, w).unwrap(), x);
    }
}
