use naim::codec::*;
use naim::seed;
use naim::synth::gen_colors;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

#[test]
fn direction_points_toward_the_positive_class() {
    let mut rng = seed::rng(3, "test/direction");
    let mut codes = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..400 {
        let z: Vec<f64> = (0..6).map(|_| StandardNormal.sample(&mut rng)).collect();
        labels.push(z[2] > 0.0);
        codes.push(LatentCode::new(z));
    }
    let v = attribute_direction(&codes, &labels).unwrap();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    assert!((norm - 1.0).abs() < 1e-12);
    assert!(v[2] > 0.9, "{v:?}");
}

#[test]
fn direction_rejects_bad_input() {
    let codes = vec![LatentCode::new(vec![0.0, 1.0]); 4];
    assert!(attribute_direction(&codes, &[true; 4]).is_err());
    assert!(attribute_direction(&codes, &[true, false]).is_err());
    assert!(attribute_direction(&[], &[]).is_err());
}

#[test]
fn png_roundtrip_uses_round_half_up() {
    let dir = tempfile::tempdir().unwrap();
    let im = Image::new(1, 3, 1, vec![0.0, 0.5, 1.0]).unwrap();
    let path = dir.path().join("a.png");
    im.save_png(&path).unwrap();
    let back = Image::load_png(&path).unwrap();
    assert_eq!(back.data(), &[0.0, 128.0 / 255.0, 1.0]);
    assert!(Image::load_png(&dir.path().join("missing.png")).is_err());
}

#[test]
fn small_autoencoder_learns_monochromes() {
    let set = gen_colors(1000, 8, 12).unwrap();
    let cfg = AutoencoderConfig { latent_dim: 8, stage_channels: vec![4, 8], epochs: 6, batch_size: 32, lr: 3e-3, ..Default::default() };
    let (ae, log) = train_autoencoder(&set.images, &cfg).unwrap();
    assert_eq!(log.epoch_loss.len(), 6);
    assert!(log.epoch_loss.last() < log.epoch_loss.first());
    let held_out = gen_colors(100, 8, 13).unwrap();
    let baseline = {
        let mean = Image::filled(8, 8, &[0.5, 0.5, 0.5]).unwrap();
        held_out.images.iter().map(|im| im.mse(&mean).unwrap()).sum::<f64>() / 100.0
    };
    assert!(ae.reconstruction_mse(&held_out.images).unwrap() < 0.5 * baseline);

    let batch = ae.encode_batch(&held_out.images[..5]).unwrap();
    for (im, z) in held_out.images[..5].iter().zip(&batch) {
        assert_eq!(&ae.encode(im).unwrap(), z);
    }
    let mut rng = seed::rng(0, "test/decode");
    let z = LatentCode::new((0..8).map(|_| rng.random_range(-100.0..100.0)).collect());
    assert!(ae.decode(&z).unwrap().data().iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn autoencoder_rejects_small_or_mixed_sets() {
    let set = gen_colors(999, 8, 1).unwrap();
    assert!(train_autoencoder(&set.images, &AutoencoderConfig::default()).is_err());
}
