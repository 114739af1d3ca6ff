use ldrcnet::arch::{Ablation, ModelConfig, Networks, VariantRegistry, CONSTRAINT_PREFIX, ENCODER_PREFIX};
use ldrcnet::{Graph, Shape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn image(n: usize, side: usize, seed: u64) -> Tensor {
    Tensor::uniform(Shape::new(n, 3, side, side), 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn build(ablation: Ablation) -> Networks {
    let cfg = ModelConfig {
        ablation,
        ..ModelConfig::default()
    };
    Networks::build(&cfg, 7).unwrap()
}

#[test]
fn degradation_maps_halve_resolution_and_double_width() {
    let nets = build(Ablation::Full);
    let mut g = Graph::new();
    let r = g.constant(image(1, 64, 1)).unwrap();
    let deg = nets.encode(&mut g, r).unwrap().unwrap();
    let shapes: Vec<Shape> = deg.levels.iter().map(|&v| g.shape(v)).collect();
    assert_eq!(
        shapes,
        [Shape::new(1, 16, 64, 64), Shape::new(1, 32, 32, 32), Shape::new(1, 64, 16, 16)]
    );
    assert_eq!(g.tagged("deg2"), Some(deg.level(1)));
}

#[test]
fn restorer_and_constraint_preserve_image_shape() {
    let nets = build(Ablation::Full);
    let mut g = Graph::new();
    let r = g.constant(image(2, 32, 1)).unwrap();
    let b = g.constant(image(2, 32, 2)).unwrap();
    let out = nets.derain(&mut g, r).unwrap();
    assert_eq!(g.shape(out), Shape::new(2, 3, 32, 32));
    let deg = nets.encode(&mut g, r).unwrap().unwrap();
    let rhat = nets.reconstruct_rainy(&mut g, b, &deg).unwrap();
    assert_eq!(g.shape(rhat), Shape::new(2, 3, 32, 32));
    for tag in ["enc0", "bottleneck", "dec2", "output", "rhat"] {
        assert!(g.tagged(tag).is_some(), "{tag}");
    }
}

#[test]
fn inputs_not_divisible_by_four_are_rejected() {
    let nets = build(Ablation::Full);
    assert!(nets.infer(&image(1, 30, 1)).is_err());
    let bad = Tensor::zeros(Shape::new(1, 1, 32, 32));
    assert!(nets.infer(&bad).is_err());
}

#[test]
fn conv_head_with_zero_output_weights_returns_input() {
    let mut nets = build(Ablation::S1);
    for (name, p) in nets.store.iter_mut() {
        if name.starts_with("der.out.") {
            p.value.data_mut().fill(0.0);
        }
    }
    let r = image(1, 32, 3);
    assert_eq!(nets.infer(&r).unwrap().data(), r.data());
}

#[test]
fn vanilla_encoder_differs_only_by_offset_predictors() {
    let full = build(Ablation::Full);
    let s4 = build(Ablation::S4);
    let offsets: usize = full
        .store
        .iter()
        .filter(|(_, n, _)| n.starts_with(ENCODER_PREFIX) && n.contains(".offset."))
        .map(|(_, _, p)| p.value.numel())
        .sum();
    assert!(offsets > 0);
    assert_eq!(full.parameter_count(ENCODER_PREFIX), s4.parameter_count(ENCODER_PREFIX) + offsets);
    assert_eq!(full.parameter_count("der."), s4.parameter_count("der."));
    assert_eq!(full.parameter_count(CONSTRAINT_PREFIX), s4.parameter_count(CONSTRAINT_PREFIX));
}

#[test]
fn ablation_audits() {
    let a = |ab| build(ab).audit();
    let full = a(Ablation::Full);
    assert!(full.has_encoder && full.has_constraint);
    assert_eq!(full.deformable_layers, 6);
    assert_eq!(full.msi_blocks, 6);
    assert_eq!(full.restorer, "unet");

    let s1 = a(Ablation::S1);
    assert_eq!(s1.restorer, "residual-head");
    assert!(s1.has_encoder);

    let s2 = a(Ablation::S2);
    assert!(!s2.has_encoder && !s2.has_constraint);
    assert_eq!((s2.deformable_layers, s2.msi_blocks, s2.concat_fusions), (0, 0, 0));

    let s3 = a(Ablation::S3);
    assert!(s3.has_encoder && !s3.has_constraint);
    assert_eq!(s3.msi_blocks, 3);

    let s4 = a(Ablation::S4);
    assert_eq!(s4.deformable_layers, 0);
    assert_eq!(s4.msi_blocks, 6);

    let s5 = a(Ablation::S5);
    assert_eq!(s5.msi_blocks, 0);
    assert_eq!(s5.concat_fusions, 6);
}

#[test]
fn every_variant_runs_forward_and_backward() {
    let r = image(1, 64, 5);
    let b = image(1, 64, 6);
    for v in VariantRegistry::default().iter() {
        let mut nets = v.build(&ModelConfig::default(), 1).unwrap();
        let mut g = Graph::new();
        let rv = g.constant(r.clone()).unwrap();
        let bv = g.constant(b.clone()).unwrap();
        let out = nets.derain(&mut g, rv).unwrap();
        let loss = g.mse_loss(out, bv).unwrap();
        g.backward_into(loss, &mut nets.store).unwrap();
        let touched = nets.store.iter().filter(|(_, _, p)| p.grad.data().iter().any(|&x| x != 0.0)).count();
        assert!(touched > 0, "{}", v.ablation());
    }
}

#[test]
fn building_is_reproducible_per_seed() {
    let a = Networks::build(&ModelConfig::default(), 11).unwrap();
    let b = Networks::build(&ModelConfig::default(), 11).unwrap();
    let c = Networks::build(&ModelConfig::default(), 12).unwrap();
    assert_eq!(a.store.fingerprint(""), b.store.fingerprint(""));
    assert_ne!(a.store.fingerprint(""), c.store.fingerprint(""));
}

#[test]
fn registry_lookup_is_case_insensitive() {
    let r = VariantRegistry::default();
    assert_eq!(r.get("S5").unwrap().ablation(), Ablation::S5);
    assert!(r.get("s9").is_err());
    assert_eq!(r.names(), ["full", "s1", "s2", "s3", "s4", "s5"]);
}

#[test]
fn any_multiple_of_four_runs_and_other_sizes_are_padded() {
    for ablation in Ablation::ALL {
        let nets = build(ablation);
        let x = Tensor::uniform(Shape::new(1, 3, 20, 44), 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(2));
        assert_eq!(nets.infer(&x).unwrap().shape(), x.shape(), "{ablation}");
    }
    let nets = build(Ablation::Full);
    let odd = Tensor::uniform(Shape::new(1, 3, 25, 38), 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(3));
    assert!(nets.infer(&odd).is_err());
    let out = nets.infer_padded(&odd).unwrap();
    assert_eq!(out.shape(), odd.shape());
    assert_eq!(out, nets.infer_padded(&odd).unwrap());
}

#[test]
fn reflect_padding_mirrors_the_border() {
    use ldrcnet::arch::{crop_top_left, reflect_pad};
    let x = Tensor::new(Shape::new(1, 1, 2, 3), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
    let p = reflect_pad(&x, 4, 4);
    assert_eq!(
        p.data(),
        &[1.0, 2.0, 3.0, 2.0, 4.0, 5.0, 6.0, 5.0, 1.0, 2.0, 3.0, 2.0, 1.0, 2.0, 3.0, 2.0]
    );
    assert_eq!(crop_top_left(&p, 2, 3).unwrap(), x);
}
