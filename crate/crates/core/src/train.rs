//! Adversarial training of the segmentor against the discriminator, and
//! slice-wise inference.
//!
//! Every batch runs one segmentor forward pass, then one discriminator update
//! (ground truth labelled real, detached segmentor probabilities labelled
//! fake), then one segmentor update on
//! `chi = chi_seg + lambda_adv * chi_adv`, where `chi_adv` is the
//! discriminator's cross-entropy of the segmentor probabilities against the
//! all-real label. The discriminator's parameters are never touched by the
//! segmentor update.

use std::fmt::Write as _;
use std::time::Instant;

use crate::data::{slice_volume, split_train_valid, Slice, SliceBatch};
use crate::discriminator::{build_discriminator, disc_backward, disc_forward, DiscriminatorConfig};
use crate::error::{Error, Result};
use crate::layers::{one_hot, softmax, softmax_backward, softmax_cross_entropy, LabelMap};
use crate::metrics::dice;
use crate::network::{Mode, Network};
use crate::optim::{Adam, AdamConfig};
use crate::rng::{derive_seed, Rng};
use crate::tensor::Tensor;
use crate::unet::{build_unet, unet_infer, UnetConfig};
use crate::volume::{MaskVolume, VolumeCase};

const SHUFFLE_STREAM: u64 = 0x5e1f;
const DROPOUT_STREAM: u64 = 0xd0;
const SEGMENTOR_INIT: u64 = 0x6e;
const DISCRIMINATOR_INIT: u64 = 0xd1;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lambda_adv: f64,
    pub optimizer: AdamConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub split_ratio: f64,
    pub seed: u64,
    pub dropout_rate: f32,
    pub base_channels: usize,
    pub disc_widths: [usize; 4],
    pub disc_slope: f32,
    /// When false no discriminator exists and the segmentor trains on
    /// `chi_seg` alone.
    pub adversarial: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_adv: 0.1,
            optimizer: AdamConfig::default(),
            epochs: 10,
            batch_size: 4,
            split_ratio: 0.8,
            seed: 0,
            dropout_rate: 0.5,
            base_channels: 64,
            disc_widths: [64, 128, 256, 512],
            disc_slope: 0.2,
            adversarial: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_adv >= 0.0 && self.lambda_adv.is_finite()) {
            return Err(Error::InvalidConfig(format!("lambda_adv must be finite and >= 0, got {}", self.lambda_adv)));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::InvalidConfig(format!("split_ratio must be in (0, 1), got {}", self.split_ratio)));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidConfig(format!("dropout_rate must be in [0, 1), got {}", self.dropout_rate)));
        }
        self.optimizer.validate()
    }

    pub fn unet_config(&self) -> UnetConfig {
        UnetConfig {
            in_channels: 3,
            num_classes: 2,
            base_channels: self.base_channels,
            dropout_rate: self.dropout_rate,
            seed: derive_seed(self.seed, SEGMENTOR_INIT),
        }
    }

    pub fn discriminator_config(&self) -> DiscriminatorConfig {
        DiscriminatorConfig {
            in_channels: 2,
            widths: self.disc_widths,
            slope: self.disc_slope,
            seed: derive_seed(self.seed, DISCRIMINATOR_INIT),
        }
    }
}

/// Losses of one training step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub chi: f64,
    pub chi_seg: f64,
    pub chi_adv: f64,
    pub lambda_adv: f64,
    pub disc_loss: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [self.chi, self.chi_seg, self.chi_adv, self.disc_loss].iter().all(|v| v.is_finite())
    }
}

/// `chi_seg + lambda_adv * chi_adv`.
pub fn total_loss(chi_seg: f64, chi_adv: f64, lambda_adv: f64) -> Result<f64> {
    if !(chi_seg.is_finite() && chi_adv.is_finite() && lambda_adv.is_finite()) {
        return Err(Error::InvalidValue(format!("non-finite loss term ({chi_seg}, {chi_adv}, {lambda_adv})")));
    }
    if lambda_adv < 0.0 {
        return Err(Error::InvalidValue(format!("lambda_adv must be >= 0, got {lambda_adv}")));
    }
    Ok(chi_seg + lambda_adv * chi_adv)
}

/// One discriminator update: `gt_onehot` should be classified real (1) and
/// `pred_probs` fake (0) at every pixel. Returns the sum of both mean
/// cross-entropies.
pub fn discriminator_step(d: &mut Network, opt: &mut Adam, gt_onehot: &Tensor, pred_probs: &Tensor) -> Result<f64> {
    if gt_onehot.shape() != pred_probs.shape() {
        return Err(Error::ShapeMismatch(format!(
            "ground truth {:?} vs prediction {:?}",
            gt_onehot.shape(),
            pred_probs.shape()
        )));
    }
    let s = gt_onehot.shape();
    d.zero_grads();
    let mut total = 0.0;
    for (input, class) in [(gt_onehot, 1u8), (pred_probs, 0u8)] {
        let conf = disc_forward(d, input)?;
        let (loss, grad) = softmax_cross_entropy(&conf, &LabelMap::filled(s.n, s.h, s.w, class))?;
        disc_backward(d, &grad)?;
        total += loss;
    }
    d.clear_cache();
    opt.step(d)?;
    Ok(total)
}

/// Segmentor update given logits from a cached training forward pass of `g`.
/// `d`, when present, scores the probabilities; its parameters and gradient
/// store are left untouched.
fn segmentor_update(
    g: &mut Network,
    opt: &mut Adam,
    d: Option<&mut Network>,
    logits: &Tensor,
    labels: &LabelMap,
    lambda_adv: f64,
) -> Result<LossBreakdown> {
    let (chi_seg, mut d_logits) = softmax_cross_entropy(logits, labels)?;
    let mut chi_adv = 0.0;
    if let Some(d) = d {
        let probs = softmax(logits);
        let conf = disc_forward(d, &probs)?;
        let s = probs.shape();
        let (loss, d_conf) = softmax_cross_entropy(&conf, &LabelMap::filled(s.n, s.h, s.w, 1))?;
        chi_adv = loss;
        if lambda_adv > 0.0 {
            let d_probs = d.backward_input_only(&d_conf)?;
            let mut d_adv = softmax_backward(&probs, &d_probs)?;
            d_adv.scale_assign(lambda_adv as f32);
            d_logits.add_assign(&d_adv)?;
        }
        d.clear_cache();
    }
    g.zero_grads();
    g.backward(&d_logits)?;
    g.clear_cache();
    opt.step(g)?;
    Ok(LossBreakdown { chi: total_loss(chi_seg, chi_adv, lambda_adv)?, chi_seg, chi_adv, lambda_adv, disc_loss: 0.0 })
}

/// One segmentor update on `batch` against a fixed discriminator.
pub fn segmentor_step(
    g: &mut Network,
    d: Option<&mut Network>,
    opt: &mut Adam,
    batch: &SliceBatch,
    lambda_adv: f64,
    dropout_seed: u64,
) -> Result<LossBreakdown> {
    let logits = g.forward(&batch.images, Mode::Train { seed: dropout_seed })?;
    segmentor_update(g, opt, d, &logits, &batch.labels, lambda_adv)
}

/// Networks and optimizer state for one training run.
pub struct Trainer {
    pub segmentor: Network,
    pub discriminator: Option<Network>,
    seg_opt: Adam,
    disc_opt: Option<Adam>,
    cfg: TrainConfig,
    steps: u64,
}

impl Trainer {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let segmentor = build_unet(&cfg.unet_config())?;
        let seg_opt = Adam::new(&segmentor, cfg.optimizer)?;
        let (discriminator, disc_opt) = if cfg.adversarial {
            let d = build_discriminator(&cfg.discriminator_config())?;
            let opt = Adam::new(&d, cfg.optimizer)?;
            (Some(d), Some(opt))
        } else {
            (None, None)
        };
        Ok(Self { segmentor, discriminator, seg_opt, disc_opt, cfg: cfg.clone(), steps: 0 })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Discriminator step then segmentor step on one batch.
    pub fn train_batch(&mut self, batch: &SliceBatch) -> Result<LossBreakdown> {
        let dropout_seed = derive_seed(derive_seed(self.cfg.seed, DROPOUT_STREAM), self.steps);
        self.steps += 1;
        let logits = self.segmentor.forward(&batch.images, Mode::Train { seed: dropout_seed })?;
        let mut disc_loss = 0.0;
        if let (Some(d), Some(opt)) = (self.discriminator.as_mut(), self.disc_opt.as_mut()) {
            let gt = one_hot(&batch.labels)?;
            disc_loss = discriminator_step(d, opt, &gt, &softmax(&logits))?;
        }
        let mut losses = segmentor_update(
            &mut self.segmentor,
            &mut self.seg_opt,
            self.discriminator.as_mut(),
            &logits,
            &batch.labels,
            self.cfg.lambda_adv,
        )?;
        losses.disc_loss = disc_loss;
        Ok(losses)
    }

    /// One pass over `slices` in seeded shuffled order.
    pub fn train_epoch(&mut self, slices: &[Slice], epoch: usize) -> Result<Vec<LossBreakdown>> {
        let mut order: Vec<usize> = (0..slices.len()).collect();
        Rng::new(derive_seed(derive_seed(self.cfg.seed, SHUFFLE_STREAM), epoch as u64)).shuffle(&mut order);
        let mut out = Vec::with_capacity(order.len().div_ceil(self.cfg.batch_size));
        for chunk in order.chunks(self.cfg.batch_size) {
            let refs: Vec<&Slice> = chunk.iter().map(|&i| &slices[i]).collect();
            out.push(self.train_batch(&SliceBatch::from_slices(&refs)?)?);
        }
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub losses: LossBreakdown,
    pub val_dice: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub steps: Vec<LossBreakdown>,
    pub best_epoch: Option<usize>,
    pub train_cases: Vec<String>,
    pub valid_cases: Vec<String>,
}

impl TrainHistory {
    pub const CSV_HEADER: &'static str = "epoch,chi,chi_seg,chi_adv,disc_loss,val_dice";

    /// `epoch,chi,chi_seg,chi_adv,disc_loss,val_dice`, one row per epoch.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for e in &self.epochs {
            let l = &e.losses;
            let _ = writeln!(s, "{},{},{},{},{},{}", e.epoch, l.chi, l.chi_seg, l.chi_adv, l.disc_loss, e.val_dice);
        }
        s
    }
}

pub struct FitOutcome {
    /// Segmentor parameters from the epoch with the best validation Dice.
    pub best_segmentor: Network,
    pub final_segmentor: Network,
    pub discriminator: Option<Network>,
    pub history: TrainHistory,
}

fn mean_losses(steps: &[LossBreakdown], lambda_adv: f64) -> LossBreakdown {
    let n = steps.len().max(1) as f64;
    let avg = |f: fn(&LossBreakdown) -> f64| steps.iter().map(f).sum::<f64>() / n;
    let chi_seg = avg(|l| l.chi_seg);
    let chi_adv = avg(|l| l.chi_adv);
    LossBreakdown { chi: chi_seg + lambda_adv * chi_adv, chi_seg, chi_adv, lambda_adv, disc_loss: avg(|l| l.disc_loss) }
}

pub fn fit(cases: Vec<VolumeCase>, cfg: &TrainConfig) -> Result<FitOutcome> {
    fit_with(cases, cfg, |_| {})
}

/// [`fit`] with a callback after every epoch.
pub fn fit_with(
    cases: Vec<VolumeCase>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<FitOutcome> {
    cfg.validate()?;
    if cases.len() < 2 {
        return Err(Error::InvalidData(format!("training needs at least 2 cases, got {}", cases.len())));
    }
    let (train, valid) = split_train_valid(cases, cfg.split_ratio, cfg.seed)?;
    let mut slices = Vec::new();
    for case in &train {
        slices.extend(slice_volume(case, true)?);
    }
    for case in &valid {
        if case.mask.is_none() {
            return Err(Error::InvalidData(format!("validation case {} has no mask", case.case_id)));
        }
    }
    let mut trainer = Trainer::new(cfg)?;
    let mut history = TrainHistory {
        train_cases: train.iter().map(|c| c.case_id.clone()).collect(),
        valid_cases: valid.iter().map(|c| c.case_id.clone()).collect(),
        ..Default::default()
    };
    let mut best: Option<(f64, Network)> = None;
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let steps = trainer.train_epoch(&slices, epoch)?;
        let mut dice_sum = 0.0;
        for case in &valid {
            let pred = predict_volume(&trainer.segmentor, case)?;
            dice_sum += dice(&pred, case.mask.as_ref().expect("checked above"))?;
        }
        let val_dice = dice_sum / valid.len() as f64;
        if best.as_ref().is_none_or(|(b, _)| val_dice > *b) {
            best = Some((val_dice, trainer.segmentor.clone()));
            history.best_epoch = Some(epoch);
        }
        let record = EpochRecord {
            epoch,
            losses: mean_losses(&steps, cfg.lambda_adv),
            val_dice,
            seconds: start.elapsed().as_secs_f64(),
        };
        history.steps.extend(steps);
        history.epochs.push(record);
        on_epoch(&record);
    }
    let final_segmentor = trainer.segmentor;
    let best_segmentor = best.map(|(_, n)| n).unwrap_or_else(|| final_segmentor.clone());
    Ok(FitOutcome { best_segmentor, final_segmentor, discriminator: trainer.discriminator, history })
}

/// Lesion where the class-1 logit exceeds the class-0 logit.
pub fn logits_to_labels(logits: &Tensor) -> Vec<Vec<u8>> {
    let s = logits.shape();
    let plane = s.plane();
    (0..s.n)
        .map(|n| {
            let item = logits.item(n);
            (0..plane).map(|i| (item[plane + i] > item[i]) as u8).collect()
        })
        .collect()
}

/// Segments every slice of a case in inference mode and restacks the labels.
pub fn predict_volume(g: &Network, case: &VolumeCase) -> Result<MaskVolume> {
    predict_volume_batched(g, case, 4)
}

pub fn predict_volume_batched(g: &Network, case: &VolumeCase, batch_size: usize) -> Result<MaskVolume> {
    if batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
    }
    let slices = slice_volume(case, false)?;
    let (_, h, w) = case.dims();
    let mut labels = Vec::with_capacity(slices.len());
    for chunk in slices.chunks(batch_size) {
        let mut images = Vec::with_capacity(chunk.len() * 3 * h * w);
        for s in chunk {
            images.extend_from_slice(&s.image);
        }
        let x = Tensor::from_vec((chunk.len(), 3, h, w), images)?;
        labels.extend(logits_to_labels(&unet_infer(g, &x)?));
    }
    MaskVolume::from_slices(h, w, &labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn total_loss_cases() {
        assert!((total_loss(0.5, 0.3, 0.1).unwrap() - 0.53).abs() < 1e-12);
        assert_eq!(total_loss(0.7, 123.0, 0.0).unwrap(), 0.7);
        assert_eq!(total_loss(0.0, 0.9, 1.0).unwrap(), 0.9);
        assert!(matches!(total_loss(f64::NAN, 0.0, 0.1), Err(Error::InvalidValue(_))));
        assert!(matches!(total_loss(0.1, f64::INFINITY, 0.1), Err(Error::InvalidValue(_))));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { lambda_adv: -0.1, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { split_ratio: 1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn history_csv() {
        let h = TrainHistory {
            epochs: vec![EpochRecord {
                epoch: 0,
                losses: LossBreakdown { chi: 1.5, chi_seg: 1.0, chi_adv: 5.0, lambda_adv: 0.1, disc_loss: 1.25 },
                val_dice: 0.5,
                seconds: 3.0,
            }],
            ..Default::default()
        };
        assert_eq!(h.to_csv(), "epoch,chi,chi_seg,chi_adv,disc_loss,val_dice\n0,1.5,1,5,1.25,0.5\n");
    }
}
