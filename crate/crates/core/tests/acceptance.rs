//! One line per acceptance criterion. Pass criterion numbers as arguments to
//! run a subset, e.g. `cargo test --test acceptance -- 2 9`.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use advseg::data::{load_volume, read_vol1, save_volume, slice_volume, split_train_valid, write_vol1, SliceBatch};
use advseg::discriminator::{build_discriminator, disc_forward, DiscriminatorConfig};
use advseg::gradcheck::full_suite;
use advseg::layers::{one_hot, LabelMap};
use advseg::metrics::{dice, evaluate_case};
use advseg::network::{load_checkpoint, read_checkpoint, write_checkpoint};
use advseg::optim::{Adam, AdamConfig};
use advseg::rng::Rng;
use advseg::tensor::FillSpec;
use advseg::train::{discriminator_step, fit, predict_volume, TrainConfig, Trainer};
use advseg::unet::{build_unet, unet_config_from_checkpoint, UnetConfig};
use advseg::{Network, Shape, Tensor};
use common::{brute_metrics, close, phantoms, random_pair};

type Outcome = Result<String, String>;
/// History CSV, checkpoints, predicted labels.
type RunArtifacts = (String, Vec<Vec<u8>>, Vec<u8>);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e2s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn ckpt(net: &Network) -> Vec<u8> {
    let mut buf = Vec::new();
    write_checkpoint(net, &mut buf).expect("in-memory write");
    buf
}

fn small_cfg(seed: u64) -> TrainConfig {
    TrainConfig { batch_size: 2, base_channels: 8, disc_widths: [8, 16, 32, 64], seed, ..Default::default() }
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let outcomes = full_suite(0).map_err(e2s)?;
    let secs = start.elapsed().as_secs_f64();
    let failed: Vec<String> =
        outcomes.iter().filter(|o| !o.passed()).map(|o| format!("{} {:.2e}", o.name, o.max_rel_error)).collect();
    ensure(failed.is_empty(), || format!("failed checks: {}", failed.join(", ")))?;
    ensure(outcomes.iter().all(|o| o.checked > 0), || "a check compared no entries".into())?;
    ensure(secs < 60.0, || format!("took {secs:.1}s"))?;
    let worst = |net: bool| {
        outcomes.iter().filter(|o| (o.tolerance > 1e-3) == net).map(|o| o.max_rel_error).fold(0.0, f64::max)
    };
    Ok(format!(
        "{} checks, worst layer {:.1e} (< 1e-3), worst network {:.1e} (< 1e-2)",
        outcomes.len(),
        worst(false),
        worst(true)
    ))
}

fn structure() -> Outcome {
    let g = build_unet(&UnetConfig::default()).map_err(e2s)?;
    let d = build_discriminator(&DiscriminatorConfig::default()).map_err(e2s)?;
    ensure(g.conv_count() == 23, || format!("U-Net has {} convs", g.conv_count()))?;
    ensure(d.conv_count() == 5, || format!("discriminator has {} convs", d.conv_count()))?;
    for n in [1, 2, 4] {
        let s = g.output_shape(Shape::new(n, 3, 256, 256)).map_err(e2s)?;
        ensure(s == Shape::new(n, 2, 256, 256), || format!("U-Net n={n} gives {s:?}"))?;
    }
    let x = Tensor::new((1, 3, 256, 256), FillSpec::SeededNormal { mean: 0.0, std: 1.0, seed: 1 }).map_err(e2s)?;
    let y = g.infer(&x).map_err(e2s)?;
    ensure(y.shape() == Shape::new(1, 2, 256, 256), || format!("U-Net forward gives {:?}", y.shape()))?;
    for (n, h, w) in [(1, 16, 16), (2, 32, 48), (3, 64, 16), (1, 256, 256)] {
        let s = d.output_shape(Shape::new(n, 2, h, w)).map_err(e2s)?;
        ensure(s == Shape::new(n, 2, h, w), || format!("discriminator ({n},2,{h},{w}) gives {s:?}"))?;
    }
    let p = Tensor::new((2, 2, 32, 48), FillSpec::SeededUniform { lo: 0.0, hi: 1.0, seed: 2 }).map_err(e2s)?;
    let c = d.infer(&p).map_err(e2s)?;
    ensure(c.shape() == p.shape(), || format!("discriminator forward gives {:?}", c.shape()))?;
    Ok("23 and 5 convolutions, (n,3,256,256) -> (n,2,256,256), (n,2,h,w) -> (n,2,h,w)".into())
}

fn loss_identity() -> Outcome {
    let cfg = TrainConfig { epochs: 3, lambda_adv: 0.1, ..small_cfg(3) };
    let out = fit(phantoms(4, 2, 32), &cfg).map_err(e2s)?;
    let steps = &out.history.steps;
    ensure(out.history.epochs.len() == 3, || format!("{} epochs recorded", out.history.epochs.len()))?;
    let mut worst = 0.0f64;
    for (i, s) in steps.iter().enumerate() {
        ensure(s.is_finite(), || format!("step {i} not finite"))?;
        let gap = (s.chi - (s.chi_seg + 0.1 * s.chi_adv)).abs();
        worst = worst.max(gap);
        ensure(gap <= 1e-6, || format!("step {i}: gap {gap:.2e}"))?;
    }
    Ok(format!("{} steps, max |chi - (chi_seg + 0.1 chi_adv)| = {worst:.1e} (<= 1e-6)", steps.len()))
}

fn ablation() -> Outcome {
    let cases = phantoms(3, 2, 32);
    let slices: Vec<_> = cases.iter().flat_map(|c| slice_volume(c, true).unwrap()).collect();
    let with_d = TrainConfig { lambda_adv: 0.0, ..small_cfg(21) };
    let without_d = TrainConfig { adversarial: false, ..with_d.clone() };
    let mut a = Trainer::new(&with_d).map_err(e2s)?;
    let mut b = Trainer::new(&without_d).map_err(e2s)?;
    let same =
        |a: &Network, b: &Network| a.flat_params().iter().zip(b.flat_params()).all(|(x, y)| x.to_bits() == y.to_bits());
    ensure(same(&a.segmentor, &b.segmentor), || "initial parameters differ".into())?;
    let mut steps = 0;
    for epoch in 0..3u64 {
        let mut order: Vec<usize> = (0..slices.len()).collect();
        Rng::new(epoch).shuffle(&mut order);
        for chunk in order.chunks(2) {
            let batch = SliceBatch::from_slices(&chunk.iter().map(|&i| &slices[i]).collect::<Vec<_>>()).map_err(e2s)?;
            let la = a.train_batch(&batch).map_err(e2s)?;
            let lb = b.train_batch(&batch).map_err(e2s)?;
            steps += 1;
            ensure(la.chi_seg.to_bits() == lb.chi_seg.to_bits(), || format!("step {steps}: chi_seg differs"))?;
            ensure(same(&a.segmentor, &b.segmentor), || format!("step {steps}: parameters differ"))?;
        }
    }
    let d = a.discriminator.as_ref().ok_or("adversarial trainer lost its discriminator")?;
    ensure(d.parameter_count() > 0, || "empty discriminator".into())?;
    Ok(format!("{steps} steps, segmentor parameters bitwise equal after every step"))
}

fn metric_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = Rng::new(2025);
    for i in 0..50 {
        let (pred, gt) = random_pair(&mut rng);
        let f = evaluate_case(&pred, &gt).map_err(e2s)?;
        let s = brute_metrics(&pred, &gt);
        let exact = [
            ("dice", f.dice, s.dice),
            ("precision", f.precision, s.precision),
            ("recall", f.recall, s.recall),
            ("avd", f.avd, s.avd),
        ];
        for (name, a, b) in exact {
            ensure(close(a, b, 0.0), || format!("pair {i}: {name} {a} vs {b}"))?;
        }
        for (name, a, b) in [("hausdorff", f.hausdorff, s.hausdorff), ("avg_distance", f.avg_distance, s.avg_distance)]
        {
            ensure(close(a, b, 1e-9), || format!("pair {i}: {name} {a} vs {b}"))?;
        }
        ensure((f.pred_empty, f.gt_empty) == (s.pred_empty, s.gt_empty), || format!("pair {i}: empty flags"))?;
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 30.0, || format!("took {secs:.1}s"))?;
    Ok("50 pairs, six metrics agree with the brute-force oracle".into())
}

fn phantom_overfit() -> Outcome {
    let start = Instant::now();
    let cases: Vec<_> = (0..8)
        .map(|seed| {
            advseg::data::generate_phantom(&advseg::data::PhantomConfig { seed, depth: 4, size: 64, lesion_count: 2 })
                .unwrap()
        })
        .collect();
    let slices: Vec<_> = cases.iter().flat_map(|c| slice_volume(c, true).unwrap()).collect();
    let cfg = TrainConfig { lambda_adv: 0.1, base_channels: 16, seed: 6, ..Default::default() };
    let mut t = Trainer::new(&cfg).map_err(e2s)?;
    let mean_dice = |g: &Network| -> Result<f64, String> {
        let mut sum = 0.0;
        for c in &cases {
            sum += dice(&predict_volume(g, c).map_err(e2s)?, c.mask.as_ref().unwrap()).map_err(e2s)?;
        }
        Ok(sum / cases.len() as f64)
    };
    let mut last = 0.0;
    for epoch in 0..300 {
        for (i, l) in t.train_epoch(&slices, epoch).map_err(e2s)?.iter().enumerate() {
            ensure(l.is_finite(), || format!("epoch {epoch} step {i}: non-finite loss"))?;
        }
        if (epoch + 1) % 5 == 0 {
            last = mean_dice(&t.segmentor)?;
            if last >= 0.85 {
                let secs = start.elapsed().as_secs_f64();
                ensure(secs <= 900.0, || format!("reached Dice {last:.3} but took {secs:.0}s"))?;
                return Ok(format!("training-set Dice {last:.3} (>= 0.85) after {} epochs, losses finite", epoch + 1));
            }
        }
        let secs = start.elapsed().as_secs_f64();
        ensure(secs <= 900.0, || format!("Dice {last:.3} after {} epochs when the 15 min budget ran out", epoch + 1))?;
    }
    Err(format!("Dice {last:.3} after 300 epochs"))
}

fn discriminator_sanity() -> Outcome {
    let mut d = build_discriminator(&DiscriminatorConfig::default()).map_err(e2s)?;
    let mut opt = Adam::new(&d, AdamConfig::default()).map_err(e2s)?;
    let labels = LabelMap::new(1, 32, 32, (0..1024).map(|i| (((i / 32) / 8 + (i % 32) / 8) % 2) as u8).collect())
        .map_err(e2s)?;
    let real = one_hot(&labels).map_err(e2s)?;
    let fake = Tensor::new((1, 2, 32, 32), FillSpec::Constant(0.5)).map_err(e2s)?;
    for _ in 0..200 {
        discriminator_step(&mut d, &mut opt, &real, &fake).map_err(e2s)?;
    }
    let hits = |conf: &Tensor, real: bool| -> usize {
        let p = conf.shape().plane();
        (0..p).filter(|&i| (conf.data()[p + i] > conf.data()[i]) == real).count()
    };
    let correct = hits(&disc_forward(&mut d, &real).map_err(e2s)?, true)
        + hits(&disc_forward(&mut d, &fake).map_err(e2s)?, false);
    let acc = correct as f64 / 2048.0;
    ensure(acc > 0.95, || format!("accuracy {acc:.4}"))?;
    Ok(format!("per-pixel accuracy {acc:.4} (> 0.95) after 200 steps"))
}

fn determinism() -> Outcome {
    let cases = phantoms(3, 2, 32);
    let cfg = TrainConfig { epochs: 2, ..small_cfg(8) };
    let run = || -> Result<RunArtifacts, String> {
        let out = fit(cases.clone(), &cfg).map_err(e2s)?;
        let d = out.discriminator.as_ref().ok_or("no discriminator")?;
        let pred = cases
            .iter()
            .map(|c| predict_volume(&out.final_segmentor, c).map(|m| m.data))
            .collect::<Result<Vec<_>, _>>()
            .map_err(e2s)?;
        Ok((out.history.to_csv(), vec![ckpt(&out.best_segmentor), ckpt(&out.final_segmentor), ckpt(d)], pred.concat()))
    };
    let (a, b) = (run()?, run()?);
    ensure(a.0 == b.0, || "history CSVs differ".into())?;
    ensure(a.1 == b.1, || "checkpoints differ".into())?;
    ensure(a.2 == b.2, || "predictions differ".into())?;

    let g = build_unet(&UnetConfig { base_channels: 4, seed: 5, ..Default::default() }).map_err(e2s)?;
    let bytes = ckpt(&g);
    let entries = read_checkpoint(bytes.as_slice()).map_err(e2s)?;
    let mut h =
        build_unet(&UnetConfig { seed: 77, ..unet_config_from_checkpoint(&entries).map_err(e2s)? }).map_err(e2s)?;
    load_checkpoint(&mut h, bytes.as_slice()).map_err(e2s)?;
    ensure(ckpt(&h) == bytes, || "ADVSEG1 round trip changed bytes".into())?;

    let dir = tempfile::tempdir().map_err(e2s)?;
    let path = dir.path().join("case.vol1");
    save_volume(&cases[0], &path).map_err(e2s)?;
    let on_disk = std::fs::read(&path).map_err(e2s)?;
    let back = load_volume(&path).map_err(e2s)?;
    let mut again = Vec::new();
    write_vol1(&mut again, &back.modalities, back.mask.as_ref()).map_err(e2s)?;
    ensure(again == on_disk, || "VOL1 round trip changed bytes".into())?;
    let mut mask_only = Vec::new();
    write_vol1(&mut mask_only, &BTreeMap::new(), cases[0].mask.as_ref()).map_err(e2s)?;
    let parsed = read_vol1(mask_only.as_slice()).map_err(e2s)?;
    ensure(parsed.mask == cases[0].mask, || "mask-only VOL1 round trip differs".into())?;
    Ok(format!(
        "{} history bytes, 3 checkpoints and predictions identical; VOL1 and ADVSEG1 round trips exact",
        a.0.len()
    ))
}

fn splits() -> Outcome {
    for (n, want) in [(94usize, (75usize, 19usize)), (10, (8, 2))] {
        for seed in 0..5 {
            let (t, v) = split_train_valid((0..n).collect::<Vec<_>>(), 0.8, seed).map_err(e2s)?;
            ensure((t.len(), v.len()) == want, || format!("{n} cases split {}/{}", t.len(), v.len()))?;
            let mut all: Vec<usize> = t.into_iter().chain(v).collect();
            all.sort_unstable();
            ensure(all == (0..n).collect::<Vec<_>>(), || format!("{n} cases: split lost or duplicated items"))?;
        }
    }
    Ok("94 -> 75/19, 10 -> 8/2".into())
}

fn main() -> ExitCode {
    let criteria: [(u32, fn() -> Outcome); 9] = [
        (1, gradient_suite),
        (2, structure),
        (3, loss_identity),
        (4, ablation),
        (5, metric_oracle),
        (6, phantom_overfit),
        (7, discriminator_sanity),
        (8, determinism),
        (9, splits),
    ];
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failures = 0;
    for (id, run) in criteria {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {id} PASS {detail} ({secs:.1}s)"),
            Err(why) => {
                failures += 1;
                println!("criterion {id} FAIL {why} ({secs:.1}s)");
            }
        }
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
