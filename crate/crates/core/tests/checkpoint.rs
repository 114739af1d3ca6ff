use ldrcnet::arch::{Ablation, ModelConfig, Networks};
use ldrcnet::data::{synth_pair, synthetic_scene, ImagePair, RainParams};
use ldrcnet::train::checkpoint::{MAGIC, VERSION};
use ldrcnet::train::{Checkpoint, Phase, TrainConfig, Trainer};
use ldrcnet::Error;

fn small() -> ModelConfig {
    let mut cfg = ModelConfig::with_base(4);
    cfg.ca_reduction = 2;
    cfg
}

fn data() -> Vec<ImagePair> {
    let (rainy, clean) = synth_pair(&synthetic_scene(16, 16, 0), &RainParams::default()).unwrap();
    vec![ImagePair { rainy, clean }]
}

fn trained(phase: Phase) -> Trainer {
    let cfg = TrainConfig {
        total_steps: 4,
        patch_size: 16,
        ..Default::default()
    };
    let nets = Networks::build(&small(), 3).unwrap();
    let mut t = Trainer::new(nets, cfg.clone(), Phase::Constraint).unwrap();
    t.run(&data(), |_, _| Ok(true)).unwrap();
    if phase != Phase::Constraint {
        t = Trainer::from_checkpoint(&t.checkpoint(), cfg, phase).unwrap();
        t.run(&data(), |t, _| Ok(t.step_count() < 2)).unwrap();
    }
    t
}

#[test]
fn save_load_save_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let t = trained(Phase::Derain);
    let ckpt = t.checkpoint();
    let (a, b) = (dir.path().join("a.ldrc"), dir.path().join("b.ldrc"));
    ckpt.save(&a).unwrap();
    let loaded = Checkpoint::load(&a).unwrap();
    assert_eq!(loaded, ckpt);
    loaded.save(&b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!((loaded.phase, loaded.step), (Phase::Derain, 2));
}

#[test]
fn header_layout() {
    let bytes = trained(Phase::Constraint).checkpoint().to_bytes();
    assert_eq!(&bytes[..4], MAGIC);
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), VERSION);
    assert_eq!(bytes[8], Phase::Constraint.tag());
    assert_eq!(u64::from_le_bytes(bytes[9..17].try_into().unwrap()), 4);
    let len = u32::from_le_bytes(bytes[17..21].try_into().unwrap()) as usize;
    let text = std::str::from_utf8(&bytes[21..21 + len]).unwrap();
    assert_eq!(ModelConfig::from_text(text).unwrap(), small());
}

#[test]
fn reloaded_inference_is_bit_exact() {
    let t = trained(Phase::Derain);
    let input = &data()[0].rainy;
    let before = t.nets.infer(input).unwrap();
    let (nets, _) = Checkpoint::from_bytes(&t.checkpoint().to_bytes()).unwrap().restore().unwrap();
    assert_eq!(nets.infer(input).unwrap(), before);
}

#[test]
fn derain_checkpoint_restores_the_freeze_mask() {
    let (nets, adam) = trained(Phase::Derain).checkpoint().restore().unwrap();
    for (_, name, p) in nets.store.iter() {
        let expect = name.starts_with("enc.") || name.starts_with("con.");
        assert_eq!(p.frozen, expect, "{name}");
    }
    assert!(adam.moments.keys().all(|k| k.starts_with("der.")));
    assert_eq!(adam.t, 2);
}

#[test]
fn corrupt_files_are_rejected() {
    let bytes = trained(Phase::Constraint).checkpoint().to_bytes();
    let mut bad = bytes.clone();
    bad[0] = b'X';
    let err = Checkpoint::from_bytes(&bad).unwrap_err();
    assert!(matches!(err, Error::Format(ref m) if m.contains("magic")), "{err}");
    let mut bad = bytes.clone();
    bad[4] = 99;
    assert!(Checkpoint::from_bytes(&bad).unwrap_err().to_string().contains("version"));
    for cut in [3, 20, bytes.len() / 2, bytes.len() - 1] {
        let err = Checkpoint::from_bytes(&bytes[..cut]).unwrap_err();
        assert!(err.to_string().contains("truncated"), "cut {cut}: {err}");
    }
    let mut long = bytes.clone();
    long.push(0);
    assert!(Checkpoint::from_bytes(&long).is_err());
}

#[test]
fn wrong_variant_records_are_rejected() {
    let mut ckpt = trained(Phase::Constraint).checkpoint();
    ckpt.model.ablation = Ablation::S4;
    assert!(ckpt.restore().is_err());
}

#[test]
fn phase_transitions() {
    let c = trained(Phase::Constraint).checkpoint();
    let d = trained(Phase::Derain).checkpoint();
    let cfg = TrainConfig {
        total_steps: 4,
        patch_size: 16,
        ..Default::default()
    };
    assert!(Trainer::from_checkpoint(&d, cfg.clone(), Phase::Constraint).is_err());
    assert_eq!(Trainer::from_checkpoint(&d, cfg.clone(), Phase::Derain).unwrap().step_count(), 2);
    assert_eq!(Trainer::from_checkpoint(&c, cfg, Phase::Derain).unwrap().step_count(), 0);
}
