mod common;

use advseg::data::{slice_volume, SliceBatch};
use advseg::discriminator::{build_discriminator, disc_forward, DiscriminatorConfig};
use advseg::layers::{one_hot, softmax, LabelMap};
use advseg::optim::{Adam, AdamConfig};
use advseg::train::{
    discriminator_step, fit, predict_volume, predict_volume_batched, segmentor_step, TrainConfig, Trainer,
};
use advseg::unet::{build_unet, UnetConfig};
use advseg::{Error, Modality, Mode, Tensor};
use common::phantoms;

fn small_cfg() -> TrainConfig {
    TrainConfig {
        epochs: 3,
        batch_size: 2,
        base_channels: 8,
        disc_widths: [8, 16, 32, 64],
        seed: 3,
        ..Default::default()
    }
}

fn batch_of(size: usize, n: usize) -> SliceBatch {
    let cases = phantoms(1, n, size);
    let slices = slice_volume(&cases[0], true).unwrap();
    SliceBatch::from_slices(&slices.iter().collect::<Vec<_>>()).unwrap()
}

#[test]
fn every_step_satisfies_loss_identity() {
    let out = fit(phantoms(4, 2, 32), &small_cfg()).unwrap();
    let h = &out.history;
    assert_eq!(h.epochs.len(), 3);
    // Three training cases of two slices, two slices per batch.
    assert_eq!(h.steps.len(), 3 * 3);
    for s in &h.steps {
        assert!(s.is_finite());
        assert!(s.chi_seg >= 0.0 && s.chi_adv >= 0.0 && s.disc_loss >= 0.0);
        assert!((s.chi - (s.chi_seg + 0.1 * s.chi_adv)).abs() <= 1e-6);
    }
    assert!(h.epochs.windows(2).all(|w| w[0].epoch < w[1].epoch));
    assert!(h.best_epoch.is_some());
}

#[test]
fn zero_lambda_matches_discriminator_free_training() {
    let cases = phantoms(3, 2, 32);
    let slices: Vec<_> = cases.iter().flat_map(|c| slice_volume(c, true).unwrap()).collect();
    let with_d = TrainConfig { lambda_adv: 0.0, ..small_cfg() };
    let without_d = TrainConfig { adversarial: false, ..with_d.clone() };
    let mut a = Trainer::new(&with_d).unwrap();
    let mut b = Trainer::new(&without_d).unwrap();
    assert!(a.discriminator.is_some() && b.discriminator.is_none());
    for epoch in 0..2 {
        let la = a.train_epoch(&slices, epoch).unwrap();
        let lb = b.train_epoch(&slices, epoch).unwrap();
        assert_eq!(la.len(), lb.len());
        for (x, y) in la.iter().zip(&lb) {
            assert_eq!(x.chi_seg.to_bits(), y.chi_seg.to_bits());
            assert_eq!(x.chi, x.chi_seg);
        }
        let (pa, pb) = (a.segmentor.flat_params(), b.segmentor.flat_params());
        assert!(pa.iter().zip(&pb).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

#[test]
fn segmentor_step_leaves_discriminator_alone() {
    let batch = batch_of(32, 2);
    let mut g = build_unet(&UnetConfig { base_channels: 4, ..Default::default() }).unwrap();
    let mut d = build_discriminator(&DiscriminatorConfig { widths: [4, 8, 16, 32], ..Default::default() }).unwrap();
    let mut opt = Adam::new(&g, AdamConfig::default()).unwrap();
    let (params, grads) = (d.flat_params(), d.flat_grads());
    let g_before = g.flat_params();
    let l = segmentor_step(&mut g, Some(&mut d), &mut opt, &batch, 0.1, 9).unwrap();
    assert_eq!(d.flat_params(), params);
    assert_eq!(d.flat_grads(), grads);
    assert_ne!(g.flat_params(), g_before);
    assert!((l.chi - (l.chi_seg + 0.1 * l.chi_adv)).abs() <= 1e-6);
}

#[test]
fn identical_real_and_fake_cost_at_least_two_ln_two() {
    let mut d = build_discriminator(&DiscriminatorConfig { widths: [4, 8, 16, 32], ..Default::default() }).unwrap();
    let mut opt = Adam::new(&d, AdamConfig::default()).unwrap();
    let x = softmax(
        &Tensor::new((2, 2, 16, 16), advseg::tensor::FillSpec::SeededNormal { mean: 0.0, std: 1.0, seed: 4 }).unwrap(),
    );
    let loss = discriminator_step(&mut d, &mut opt, &x, &x).unwrap();
    assert!(loss >= 2.0 * std::f64::consts::LN_2 - 1e-9, "{loss}");
}

#[test]
fn discriminator_step_checks_shapes() {
    let mut d = build_discriminator(&DiscriminatorConfig { widths: [4, 8, 16, 32], ..Default::default() }).unwrap();
    let mut opt = Adam::new(&d, AdamConfig::default()).unwrap();
    let a = Tensor::zeros((1, 2, 16, 16)).unwrap();
    let b = Tensor::zeros((1, 2, 32, 32)).unwrap();
    assert!(matches!(discriminator_step(&mut d, &mut opt, &a, &b), Err(Error::ShapeMismatch(_))));
}

#[test]
fn discriminator_separates_crisp_from_uniform() {
    let mut d = build_discriminator(&DiscriminatorConfig { widths: [8, 16, 32, 64], ..Default::default() }).unwrap();
    let mut opt = Adam::new(&d, AdamConfig::default()).unwrap();
    let labels =
        LabelMap::new(1, 32, 32, (0..1024).map(|i| (((i / 32) / 8 + (i % 32) / 8) % 2) as u8).collect()).unwrap();
    let real = one_hot(&labels).unwrap();
    let fake = Tensor::new((1, 2, 32, 32), advseg::tensor::FillSpec::Constant(0.5)).unwrap();
    for _ in 0..200 {
        discriminator_step(&mut d, &mut opt, &real, &fake).unwrap();
    }
    let correct = |conf: &Tensor, class: usize| -> usize {
        let p = conf.shape().plane();
        (0..p).filter(|&i| (conf.data()[p + i] > conf.data()[i]) == (class == 1)).count()
    };
    let hits = correct(&disc_forward(&mut d, &real).unwrap(), 1) + correct(&disc_forward(&mut d, &fake).unwrap(), 0);
    assert!(hits as f64 / 2048.0 > 0.95, "accuracy {}", hits as f64 / 2048.0);
}

#[test]
fn repeated_batch_overfits() {
    let batch = batch_of(32, 2);
    let mut g = build_unet(&UnetConfig { base_channels: 16, ..Default::default() }).unwrap();
    let mut d = build_discriminator(&DiscriminatorConfig { widths: [8, 16, 32, 64], ..Default::default() }).unwrap();
    let mut opt = Adam::new(&g, AdamConfig::default()).unwrap();
    let first = segmentor_step(&mut g, Some(&mut d), &mut opt, &batch, 0.1, 0).unwrap().chi_seg;
    let mut last = first;
    for step in 1..50 {
        last = segmentor_step(&mut g, Some(&mut d), &mut opt, &batch, 0.1, step).unwrap().chi_seg;
    }
    assert!(last <= 0.7 * first, "{first} -> {last}");
}

#[test]
fn prediction_ignores_batch_grouping() {
    let case = &phantoms(1, 5, 32)[0];
    let g = build_unet(&UnetConfig { base_channels: 4, seed: 8, ..Default::default() }).unwrap();
    let one = predict_volume_batched(&g, case, 1).unwrap();
    let four = predict_volume_batched(&g, case, 4).unwrap();
    assert_eq!(one, four);
    assert_eq!(one.dims(), case.dims());
    assert_eq!(predict_volume(&g, case).unwrap(), one);
}

#[test]
fn saturated_background_bias_predicts_nothing() {
    let case = &phantoms(1, 3, 32)[0];
    let mut g = build_unet(&UnetConfig { base_channels: 4, ..Default::default() }).unwrap();
    let head = g.params_mut().iter_mut().find(|p| p.name == "head").unwrap();
    head.conv.bias = vec![1e4, -1e4];
    assert_eq!(predict_volume(&g, case).unwrap().count(), 0);
}

#[test]
fn prediction_needs_input_modalities() {
    let mut case = phantoms(1, 2, 32).remove(0);
    case.modalities.remove(&Modality::Cbf);
    let g = build_unet(&UnetConfig { base_channels: 4, ..Default::default() }).unwrap();
    assert!(matches!(predict_volume(&g, &case), Err(Error::InvalidData(_))));
}

#[test]
fn fit_needs_two_cases() {
    assert!(matches!(fit(phantoms(1, 2, 32), &small_cfg()), Err(Error::InvalidData(_))));
    assert!(matches!(fit(Vec::new(), &small_cfg()), Err(Error::InvalidData(_))));
}

#[test]
fn trainer_rejects_bad_config() {
    assert!(matches!(Trainer::new(&TrainConfig { batch_size: 0, ..small_cfg() }), Err(Error::InvalidConfig(_))));
}

#[test]
fn dropout_makes_training_forward_stochastic_per_seed() {
    let batch = batch_of(32, 1);
    let mut g = build_unet(&UnetConfig { base_channels: 4, ..Default::default() }).unwrap();
    let a = g.forward(&batch.images, Mode::Train { seed: 1 }).unwrap();
    let b = g.forward(&batch.images, Mode::Train { seed: 1 }).unwrap();
    let c = g.forward(&batch.images, Mode::Train { seed: 2 }).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}
