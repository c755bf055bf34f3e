use naim::bench::*;
use naim::codec::{AutoencoderConfig, AutoencoderModel, Image};
use naim::diffcore::{Linear, Mlp, MlpConfig, Tensor};
use naim::nam::NaimModel;
use naim::seed;
use naim::synth::{Domain, ImageEffect};
use proptest::prelude::*;
use rand::Rng;

fn affine(a: f64, b: f64) -> Mlp {
    let layer = Linear::new(Tensor::new(vec![1, 1], vec![a]).unwrap(), Tensor::new(vec![1], vec![b]).unwrap()).unwrap();
    Mlp::from_layers(MlpConfig::new(1, 0, 1, 1), vec![layer]).unwrap()
}

fn colors_fixture() -> (NaimModel, AutoencoderModel, Vec<Image>) {
    let mut rng = seed::rng(8, "test/bench");
    let ae = AutoencoderModel::new(8, 8, 3, &AutoencoderConfig { latent_dim: 4, stage_channels: vec![2, 2], ..Default::default() }).unwrap();
    let head = Mlp::new(MlpConfig::new(4, 8, 2, 1), &mut rng).unwrap();
    let model = NaimModel::new(0.0, vec![affine(1.0, 0.0)], vec![], Some(head)).unwrap();
    let images = (0..12)
        .map(|_| Image::filled(8, 8, &[rng.random(), rng.random(), rng.random()]).unwrap())
        .collect();
    (model, ae, images)
}

#[test]
fn oracle_model_recovers_the_linear_effect_exactly() {
    let model = NaimModel::new(0.0, vec![affine(2.0, -1.0)], vec![], None).unwrap();
    let rows: Vec<Vec<f64>> = (0..200).map(|i| vec![i as f64 / 199.0]).collect();
    let report = numeric_effect_benchmark(&model, &rows, Domain::Squares, ImageEffect::Linear).unwrap();
    let row = report.row("f1=2x").unwrap();
    assert!(row.mse <= 1e-8 && row.r2 >= 1.0 - 1e-8, "{row:?}");
}

#[test]
fn degenerate_pairs_are_skipped_and_counted() {
    let (model, ae, images) = colors_fixture();
    let truth = ImageEffectTruth { domain: Domain::Colors, effect: ImageEffect::Linear, mean: 1.0 };
    let (scores, skipped) = score_pairs(&model, &ae, &images, &truth, &[(0, 0), (1, 2), (3, 3)], 5).unwrap();
    assert_eq!(skipped, 2);
    assert_eq!(scores.len(), 1);
    let same = vec![images[0].clone(); 4];
    let params = ImageEffectParams { n_pairs: 5, n_steps: 5, seed: 0 };
    assert!(image_effect_benchmark(&model, &ae, &same, &truth, &params).is_err());
}

#[test]
fn pair_average_ignores_pair_order() {
    let (model, ae, images) = colors_fixture();
    let truth = ImageEffectTruth { domain: Domain::Colors, effect: ImageEffect::Linear, mean: 1.0 };
    let pairs = sample_pairs(images.len(), 15, 4);
    let mut reversed = pairs.clone();
    reversed.reverse();
    let mean = |s: &[PairScore]| s.iter().map(|p| p.r2).sum::<f64>() / s.len() as f64;
    let (a, _) = score_pairs(&model, &ae, &images, &truth, &pairs, 7).unwrap();
    let (b, _) = score_pairs(&model, &ae, &images, &truth, &reversed, 7).unwrap();
    assert!((mean(&a) - mean(&b)).abs() < 1e-12);
}

#[test]
fn bench_argument_errors() {
    let (model, ae, images) = colors_fixture();
    let truth = ImageEffectTruth { domain: Domain::Colors, effect: ImageEffect::Linear, mean: 1.0 };
    assert!(image_effect_benchmark(&model, &ae, &images, &truth, &ImageEffectParams { n_pairs: 0, n_steps: 5, seed: 0 }).is_err());
    assert!(image_effect_benchmark(&model, &ae, &images, &truth, &ImageEffectParams { n_pairs: 3, n_steps: 1, seed: 0 }).is_err());
    assert!(score_pairs(&model, &ae, &images, &truth, &[(0, 99)], 5).is_err());
}

#[test]
fn report_csv_embeds_seed_scale_and_spec() {
    let dir = tempfile::tempdir().unwrap();
    let report = BenchReport {
        protocol: "image_effect".into(),
        domain: Domain::Colors,
        image_effect: ImageEffect::Power,
        seed: 42,
        scale: vec![("n_pairs".into(), 50), ("n_steps".into(), 50)],
        rows: vec![BenchRow { label: "image_effect".into(), mse: 0.5, r2: 0.25, count: 50 }],
        skipped: 1,
    };
    let path = dir.path().join("r.csv");
    report.write_csv(&path).unwrap();
    let text = std::fs::read_to_string(path).unwrap();
    assert!(text.contains("image_effect,colors,2x^4,42,n_pairs=50;n_steps=50,image_effect,0.5,0.25,50,1"), "{text}");
    assert!(report.summary().contains("seed=42"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn metric_identities(truth in proptest::collection::vec(-10.0f64..10.0, 2..30), noise in proptest::collection::vec(-1.0f64..1.0, 30)) {
        prop_assume!(truth.iter().any(|t| (t - truth[0]).abs() > 1e-6));
        let pred: Vec<f64> = truth.iter().zip(&noise).map(|(t, e)| t + e).collect();
        let m = mse(&pred, &truth).unwrap();
        let r = r2(&pred, &truth).unwrap();
        prop_assert!(m >= 0.0);
        prop_assert!(r <= 1.0);
        prop_assert_eq!(r == 1.0, m == 0.0);
        prop_assert_eq!(r2(&truth, &truth).unwrap(), 1.0);
        prop_assert_eq!(mse(&truth, &truth).unwrap(), 0.0);
    }
}

#[test]
fn pairs_closer_than_the_pixel_resolution_are_skipped() {
    let (model, ae, _) = colors_fixture();
    let truth = ImageEffectTruth { domain: Domain::Colors, effect: ImageEffect::Linear, mean: 1.0 };
    let near = vec![
        Image::filled(8, 8, &[0.5, 0.1, 0.2]).unwrap(),
        Image::filled(8, 8, &[0.5 + 0.5 * PHI_RESOLUTION, 0.9, 0.9]).unwrap(),
        Image::filled(8, 8, &[0.5 + 2.0 * PHI_RESOLUTION, 0.1, 0.2]).unwrap(),
    ];
    let (scores, skipped) = score_pairs(&model, &ae, &near, &truth, &[(0, 1), (0, 2)], 5).unwrap();
    assert_eq!((scores.len(), skipped), (1, 1));
}
