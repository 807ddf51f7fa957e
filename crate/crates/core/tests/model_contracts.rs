use keytailor::dit::checkpoint;
use keytailor::dit::model::ConditioningValues;
use keytailor::dit::{denoise, Ablations, KeyTailorModel, LatentBundle, ModelConfig, TrainConfig};
use keytailor::numerics::{Graph, SeededRng, Tensor};
use keytailor::pipeline::train;
use keytailor::Error;

fn small_bundle(seed: u64) -> LatentBundle {
    LatentBundle::random(4, 32, 16, 2, &mut SeededRng::new(seed))
}

fn noisy_latent(bundle: &LatentBundle, seed: u64) -> Tensor {
    Tensor::randn(bundle.grid().to_vec(), 1.0, &mut SeededRng::new(seed))
}

fn model(ablations: Ablations) -> KeyTailorModel {
    KeyTailorModel::new(ModelConfig::default(), ablations).unwrap()
}

/// A model whose zero-initialized paths carry signal.
fn live_model(ablations: Ablations) -> KeyTailorModel {
    let mut m = model(ablations);
    m.perturb_silent_params(0.05, &mut SeededRng::new(99));
    m
}

fn conditioning(m: &KeyTailorModel, bundle: &LatentBundle) -> ConditioningValues<f32> {
    let mut g = Graph::<f32>::inference();
    let c = m.condition(&mut g, bundle).unwrap();
    c.values(&g)
}

#[test]
fn zero_adapters_reproduce_base_model_bitwise() {
    let bundle = small_bundle(1);
    let x = noisy_latent(&bundle, 2);
    let mut m = model(Ablations::default());
    for t in [0.0, 0.3, 0.9] {
        m.adapters = true;
        let adapted = m.predict(&bundle, &x, t).unwrap();
        m.adapters = false;
        let base = m.predict(&bundle, &x, t).unwrap();
        assert!(adapted.bit_eq(&base), "t = {t}");
    }
}

#[test]
fn nonzero_adapters_change_the_output() {
    let bundle = small_bundle(1);
    let x = noisy_latent(&bundle, 2);
    let mut m = live_model(Ablations::default());
    let adapted = m.predict(&bundle, &x, 0.5).unwrap();
    m.adapters = false;
    let base = m.predict(&bundle, &x, 0.5).unwrap();
    assert!(adapted.max_abs_diff(&base).unwrap() > 1e-4);
}

#[test]
fn training_leaves_frozen_weights_untouched() {
    let bundle = small_bundle(3);
    let mut m = model(Ablations::default());
    let frozen = m.store.checksum(|p| !p.trainable);
    let trainable = m.store.checksum(|p| p.trainable);
    let cfg = TrainConfig {
        steps: 5,
        ..TrainConfig::default()
    };
    train(&mut m, &bundle, &cfg, |_, _| {}).unwrap();
    assert_eq!(m.store.checksum(|p| !p.trainable), frozen);
    assert_ne!(m.store.checksum(|p| p.trainable), trainable);
}

#[test]
fn ablations_touch_only_their_own_path() {
    let bundle = small_bundle(4);
    let base = conditioning(&live_model(Ablations::default()), &bundle);
    let variant = |name: &str| {
        let mut a = Ablations::default();
        a.set(name, true).unwrap();
        conditioning(&live_model(a), &bundle)
    };
    let same = |a: &Tensor, b: &Tensor| a.bit_eq(b);

    let v = variant("no-qkey");
    assert!(v.keyframe_pool.is_none());
    assert!(same(&v.garment, &base.garment) && same(&v.background, &base.background));
    assert!(same(&v.pose, &base.pose) && same(&v.mask, &base.mask));

    let v = variant("no-gdde");
    assert!(same(&v.garment, &bundle.reference_latent));
    assert!(same(&v.background, &base.background));
    assert!(!same(&v.garment, &base.garment));

    let v = variant("no-distill");
    assert!(same(&v.garment, &bundle.garment_latent));
    assert!(same(&v.background, &base.background));

    let v = variant("no-keybg");
    assert!(same(&v.video_background, &base.video_background));
    assert!(same(&v.background, &v.video_background));
    assert!(!same(&v.background, &base.background));
    assert!(same(&v.garment, &base.garment));

    let v = variant("no-cbdo");
    assert!(same(&v.video_background, &bundle.agnostic_latent));
    assert!(same(&v.background, &v.video_background));
    assert!(same(&v.garment, &base.garment) && same(&v.pose, &base.pose));

    let v = variant("no-fusion");
    assert_eq!(v.mask.shape()[0], 17);
    assert!(same(&v.background, &v.video_background));
    assert!(same(&v.garment, &base.garment));

    // keyframe ablations act before the model
    for name in ["keyframes-1", "no-iks"] {
        let v = variant(name);
        assert!(same(&v.garment, &base.garment) && same(&v.background, &base.background));
    }
}

#[test]
fn background_fusion_is_the_convex_blend() {
    let bundle = small_bundle(5);
    let v = conditioning(&live_model(Ablations::default()), &bundle);
    let bg = v.video_background.data();
    let key = bundle.key_background.data();
    let [c, t, h, w] = bundle.grid();
    let plane = h * w;
    for ch in 0..c {
        for f in 0..t {
            for p in 0..plane {
                let i = (ch * t + f) * plane + p;
                let want = 0.3 * bg[i] as f64 + 0.7 * key[ch * plane + p] as f64;
                assert!((v.background.data()[i] as f64 - want).abs() < 1e-5);
            }
        }
    }
}

#[test]
fn keyframe_bias_follows_the_pooled_keyframes() {
    let mut bundle = small_bundle(6);
    let x = noisy_latent(&bundle, 7);
    let m = live_model(Ablations::default());
    let before = m.predict(&bundle, &x, 0.4).unwrap();
    // shifting the keyframes moves the output even with the garment path disabled
    let mut a = Ablations::default();
    a.set("no-distill", true).unwrap();
    let m_nd = live_model(a);
    let before_nd = m_nd.predict(&bundle, &x, 0.4).unwrap();
    bundle.keyframe_garment = bundle.keyframe_garment.map(|v| v + 1.0);
    assert!(
        m.predict(&bundle, &x, 0.4)
            .unwrap()
            .max_abs_diff(&before)
            .unwrap()
            > 0.0
    );
    assert!(
        m_nd.predict(&bundle, &x, 0.4)
            .unwrap()
            .max_abs_diff(&before_nd)
            .unwrap()
            > 0.0
    );
    // and does nothing once the bias is ablated too
    let mut a = Ablations::default();
    a.set("no-distill", true).unwrap();
    a.set("no-qkey", true).unwrap();
    let m_off = live_model(a);
    let mut shifted = bundle.clone();
    let after = m_off.predict(&shifted, &x, 0.4).unwrap();
    shifted.keyframe_garment = shifted.keyframe_garment.map(|v| v - 1.0);
    assert!(m_off.predict(&shifted, &x, 0.4).unwrap().bit_eq(&after));
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    let bundle = small_bundle(8);
    let m = live_model(Ablations::default());
    checkpoint::save(&path, &m).unwrap();
    let loaded = checkpoint::load(&path, ModelConfig::default(), Ablations::default()).unwrap();
    let a = denoise(&m, &bundle, 3, 11).unwrap();
    let b = denoise(&loaded, &bundle, 3, 11).unwrap();
    assert!(a.bit_eq(&b));
    assert_eq!(checkpoint::encode(&m), checkpoint::encode(&loaded));
}

#[test]
fn checkpoint_rejects_other_architectures_and_damage() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    checkpoint::save(&path, &model(Ablations::default())).unwrap();
    let mut other = Ablations::default();
    other.set("no-qkey", true).unwrap();
    assert!(matches!(
        checkpoint::load(&path, ModelConfig::default(), other),
        Err(Error::Format(_))
    ));
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    assert!(matches!(
        checkpoint::load(&path, ModelConfig::default(), Ablations::default()),
        Err(Error::Format(_))
    ));
    let mut flipped = bytes.clone();
    flipped[0] = b'X';
    std::fs::write(&path, &flipped).unwrap();
    assert!(matches!(
        checkpoint::load(&path, ModelConfig::default(), Ablations::default()),
        Err(Error::Format(_))
    ));
}

#[test]
fn bundle_round_trip_and_missing_role() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = small_bundle(9);
    bundle.write(dir.path()).unwrap();
    assert_eq!(LatentBundle::read(dir.path()).unwrap(), bundle);
    let manifest = dir.path().join("bundle.tsv");
    let text = std::fs::read_to_string(&manifest).unwrap();
    let trimmed: String = text
        .lines()
        .filter(|l| !l.starts_with("target"))
        .map(|l| format!("{l}\n"))
        .collect();
    std::fs::write(&manifest, trimmed).unwrap();
    assert!(matches!(
        LatentBundle::read(dir.path()),
        Err(Error::Format(_))
    ));
}

#[test]
fn model_rejects_mismatched_bundles() {
    let bundle = LatentBundle::random(4, 32, 8, 2, &mut SeededRng::new(1));
    let m = model(Ablations::default());
    let x = noisy_latent(&bundle, 2);
    assert!(matches!(
        m.predict(&bundle, &x, 0.5),
        Err(Error::Dimension(_))
    ));
}

#[test]
fn sampling_is_deterministic() {
    let bundle = small_bundle(10);
    let m = live_model(Ablations::default());
    let a = denoise(&m, &bundle, 4, 5).unwrap();
    let b = denoise(&m, &bundle, 4, 5).unwrap();
    let c = denoise(&m, &bundle, 4, 6).unwrap();
    assert!(a.bit_eq(&b));
    assert!(!a.bit_eq(&c));
}

#[test]
fn training_is_deterministic() {
    let bundle = small_bundle(11);
    let cfg = TrainConfig {
        steps: 3,
        ..TrainConfig::default()
    };
    let run = || {
        let mut m = model(Ablations::default());
        let log = train(&mut m, &bundle, &cfg, |_, _| {}).unwrap();
        (checkpoint::encode(&m), log.step_losses)
    };
    let (a, la) = run();
    let (b, lb) = run();
    assert_eq!(a, b);
    assert_eq!(la, lb);
}
