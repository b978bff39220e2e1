//! Central finite-difference checks of every backward pass.
//!
//! Each check draws unit-scale random data, reduces the output to a scalar
//! `L = sum(r * y)` with fixed random `r` (accumulated in `f64`), and compares
//! the analytic gradient `a` of `L` with
//!
//! ```text
//! n = (L(v + eps) - L(v - eps)) / ((v + eps) - (v - eps))
//! ```
//!
//! where the denominator is the step actually representable in `f32`. The
//! error of one point is `|a - n| / max(|a|, |n|, floor)`; a check reports the
//! worst point.
//!
//! Linear layers are checked on normals rounded to multiples of 1/64 with
//! `eps = 1/128`, so their `f32` evaluation is exact and any mismatch is a
//! real gradient error. Activations and the loss use plain normals.
//! Activation inputs within `1e-3` of zero are skipped.
//!
//! The whole-network checks sample parameters and inputs, use `eps = 5e-2`
//! and skip every probe whose two evaluations differ in some activation sign
//! or max-pool winner; between those evaluations the loss is affine in the
//! probed value. Rounding through twenty-odd `f32` layers leaves about `1e-3`
//! of absolute noise in `n`, so these checks use a floor of `0.1`.

use crate::discriminator::{build_discriminator, DiscriminatorConfig};
use crate::error::Result;
use crate::layers::{
    activation_backward, activation_forward, bilinear_upsample, bilinear_upsample_backward, conv2d_backward,
    conv2d_forward, dropout_backward, dropout_forward, maxpool2x2_backward, maxpool2x2_forward, softmax_cross_entropy,
    upconv2x2_backward, upconv2x2_forward, Activation, ConvParams, LabelMap,
};
use crate::network::{Mode, Network};
use crate::rng::{derive_seed, Rng};
use crate::tensor::{Shape, Tensor};
use crate::unet::{build_unet, UnetConfig};

pub const LAYER_TOLERANCE: f64 = 1e-3;
pub const NETWORK_TOLERANCE: f64 = 1e-2;
pub const LAYER_EPS: f32 = 1.0 / 128.0;
pub const KINK_EPS: f32 = 1e-3;
pub const NETWORK_EPS: f32 = 5e-2;
pub const LAYER_FLOOR: f64 = 1e-3;
pub const NETWORK_FLOOR: f64 = 1e-1;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub checked: usize,
    pub skipped: usize,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.max_rel_error < self.tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

struct Tally {
    name: String,
    tolerance: f64,
    floor: f64,
    worst: f64,
    checked: usize,
    skipped: usize,
}

impl Tally {
    fn new(name: &str, tolerance: f64, floor: f64) -> Self {
        Self { name: name.to_string(), tolerance, floor, worst: 0.0, checked: 0, skipped: 0 }
    }

    fn add(&mut self, analytic: f32, numeric: f64) {
        self.worst = self.worst.max(relative_error(analytic as f64, numeric, self.floor));
        self.checked += 1;
    }

    fn finish(self) -> CheckOutcome {
        CheckOutcome {
            name: self.name,
            max_rel_error: self.worst,
            tolerance: self.tolerance,
            checked: self.checked,
            skipped: self.skipped,
        }
    }
}

fn random(shape: impl Into<Shape>, rng: &mut Rng) -> Tensor {
    let shape = shape.into();
    let data = (0..shape.numel()).map(|_| rng.normal(0.0, 1.0)).collect();
    Tensor::from_vec(shape, data).expect("shape matches data")
}

/// Unit-scale normals rounded to multiples of 1/64.
fn dyadic(shape: impl Into<Shape>, rng: &mut Rng) -> Tensor {
    let mut t = random(shape, rng);
    for v in t.data_mut() {
        *v = (*v * 64.0).round() / 64.0;
    }
    t
}

fn dot(r: &Tensor, y: &Tensor) -> f64 {
    r.data().iter().zip(y.data()).map(|(&a, &b)| a as f64 * b as f64).sum()
}

/// Central difference of `f` at `v`.
fn central(v: f32, eps: f32, mut f: impl FnMut(f32) -> Result<f64>) -> Result<f64> {
    let (hi, lo) = (v + eps, v - eps);
    Ok((f(hi)? - f(lo)?) / (hi as f64 - lo as f64))
}

/// Checks every element of `values` against `analytic`, evaluating the loss
/// with one element replaced. `skip` excludes points by original value.
fn check_all(
    tally: &mut Tally,
    values: &[f32],
    analytic: &[f32],
    eps: f32,
    skip: impl Fn(f32) -> bool,
    mut loss: impl FnMut(&[f32]) -> Result<f64>,
) -> Result<()> {
    let mut buf = values.to_vec();
    for i in 0..values.len() {
        if skip(values[i]) {
            tally.skipped += 1;
            continue;
        }
        let numeric = central(values[i], eps, |v| {
            buf[i] = v;
            loss(&buf)
        })?;
        buf[i] = values[i];
        tally.add(analytic[i], numeric);
    }
    Ok(())
}

fn no_skip(_: f32) -> bool {
    false
}

fn conv_check(name: &str, geometry: (usize, usize, usize), rng: &mut Rng) -> Result<Vec<CheckOutcome>> {
    let (k, stride, pad) = geometry;
    let x = dyadic((1, 2, 6, 6), rng);
    let p = ConvParams {
        weight: dyadic((3, 2, k, k), rng),
        bias: dyadic((1, 1, 1, 3), rng).into_data(),
        stride,
        padding: pad,
    };
    let y = conv2d_forward(&x, &p)?;
    let r = dyadic(y.shape(), rng);
    let g = conv2d_backward(&x, &p, &r)?;

    let mut input = Tally::new(&format!("{name}.input"), LAYER_TOLERANCE, LAYER_FLOOR);
    check_all(&mut input, x.data(), g.d_input.data(), LAYER_EPS, no_skip, |v| {
        Ok(dot(&r, &conv2d_forward(&Tensor::from_vec(x.shape(), v.to_vec())?, &p)?))
    })?;

    let mut weight = Tally::new(&format!("{name}.weight"), LAYER_TOLERANCE, LAYER_FLOOR);
    let dw = g.d_weights.expect("conv has weights");
    check_all(&mut weight, p.weight.data(), dw.data(), LAYER_EPS, no_skip, |v| {
        let q = ConvParams { weight: Tensor::from_vec(p.weight.shape(), v.to_vec())?, ..p.clone() };
        Ok(dot(&r, &conv2d_forward(&x, &q)?))
    })?;

    let mut bias = Tally::new(&format!("{name}.bias"), LAYER_TOLERANCE, LAYER_FLOOR);
    let db = g.d_bias.expect("conv has a bias");
    check_all(&mut bias, &p.bias, &db, LAYER_EPS, no_skip, |v| {
        let q = ConvParams { bias: v.to_vec(), ..p.clone() };
        Ok(dot(&r, &conv2d_forward(&x, &q)?))
    })?;
    Ok(vec![input.finish(), weight.finish(), bias.finish()])
}

fn upconv_check(rng: &mut Rng) -> Result<Vec<CheckOutcome>> {
    let x = dyadic((1, 4, 3, 3), rng);
    let p = ConvParams {
        weight: dyadic((2, 4, 2, 2), rng),
        bias: dyadic((1, 1, 1, 2), rng).into_data(),
        stride: 2,
        padding: 0,
    };
    let y = upconv2x2_forward(&x, &p)?;
    let r = dyadic(y.shape(), rng);
    let g = upconv2x2_backward(&x, &p, &r)?;

    let mut input = Tally::new("upconv2x2.input", LAYER_TOLERANCE, LAYER_FLOOR);
    check_all(&mut input, x.data(), g.d_input.data(), LAYER_EPS, no_skip, |v| {
        Ok(dot(&r, &upconv2x2_forward(&Tensor::from_vec(x.shape(), v.to_vec())?, &p)?))
    })?;
    let mut weight = Tally::new("upconv2x2.weight", LAYER_TOLERANCE, LAYER_FLOOR);
    let dw = g.d_weights.expect("up-conv has weights");
    check_all(&mut weight, p.weight.data(), dw.data(), LAYER_EPS, no_skip, |v| {
        let q = ConvParams { weight: Tensor::from_vec(p.weight.shape(), v.to_vec())?, ..p.clone() };
        Ok(dot(&r, &upconv2x2_forward(&x, &q)?))
    })?;
    let mut bias = Tally::new("upconv2x2.bias", LAYER_TOLERANCE, LAYER_FLOOR);
    let db = g.d_bias.expect("up-conv has a bias");
    check_all(&mut bias, &p.bias, &db, LAYER_EPS, no_skip, |v| {
        let q = ConvParams { bias: v.to_vec(), ..p.clone() };
        Ok(dot(&r, &upconv2x2_forward(&x, &q)?))
    })?;
    Ok(vec![input.finish(), weight.finish(), bias.finish()])
}

fn maxpool_check(rng: &mut Rng) -> Result<CheckOutcome> {
    // Distinct values 0.05 apart, so no perturbation changes a window's winner.
    let shape = Shape::new(1, 2, 6, 6);
    let mut data: Vec<f32> = (0..shape.numel()).map(|i| (i as f32 - 36.0) * 0.05).collect();
    rng.shuffle(&mut data);
    let x = Tensor::from_vec(shape, data)?;
    let (y, rec) = maxpool2x2_forward(&x)?;
    let r = random(y.shape(), rng);
    let dx = maxpool2x2_backward(&rec, &r)?;
    let mut t = Tally::new("maxpool2x2", LAYER_TOLERANCE, LAYER_FLOOR);
    check_all(&mut t, x.data(), dx.data(), LAYER_EPS, no_skip, |v| {
        Ok(dot(&r, &maxpool2x2_forward(&Tensor::from_vec(shape, v.to_vec())?)?.0))
    })?;
    Ok(t.finish())
}

fn activation_check(name: &str, kind: Activation, rng: &mut Rng) -> Result<CheckOutcome> {
    let x = random((1, 2, 6, 6), rng);
    let r = random(x.shape(), rng);
    let dx = activation_backward(kind, &x, &r)?;
    let mut t = Tally::new(name, LAYER_TOLERANCE, LAYER_FLOOR);
    check_all(
        &mut t,
        x.data(),
        dx.data(),
        KINK_EPS,
        |v| v.abs() <= KINK_EPS,
        |v| Ok(dot(&r, &activation_forward(kind, &Tensor::from_vec(x.shape(), v.to_vec())?)?)),
    )?;
    Ok(t.finish())
}

fn dropout_check(rng: &mut Rng) -> Result<CheckOutcome> {
    let x = dyadic((1, 2, 6, 6), rng);
    let r = dyadic(x.shape(), rng);
    let seed = rng.next_u64();
    let (_, rec) = dropout_forward(&x, 0.5, seed, true)?;
    let dx = dropout_backward(&rec, &r)?;
    let mut t = Tally::new("dropout", LAYER_TOLERANCE, LAYER_FLOOR);
    check_all(&mut t, x.data(), dx.data(), LAYER_EPS, no_skip, |v| {
        Ok(dot(&r, &dropout_forward(&Tensor::from_vec(x.shape(), v.to_vec())?, 0.5, seed, true)?.0))
    })?;
    Ok(t.finish())
}

fn upsample_check(rng: &mut Rng) -> Result<CheckOutcome> {
    let x = dyadic((1, 2, 3, 3), rng);
    let y = bilinear_upsample(&x, 2)?;
    let r = dyadic(y.shape(), rng);
    let dx = bilinear_upsample_backward(&r, x.shape(), 2)?;
    let mut t = Tally::new("bilinear_x2", LAYER_TOLERANCE, LAYER_FLOOR);
    check_all(&mut t, x.data(), dx.data(), LAYER_EPS, no_skip, |v| {
        Ok(dot(&r, &bilinear_upsample(&Tensor::from_vec(x.shape(), v.to_vec())?, 2)?))
    })?;
    Ok(t.finish())
}

fn cross_entropy_check(rng: &mut Rng) -> Result<CheckOutcome> {
    let logits = random((1, 2, 4, 4), rng);
    let labels = LabelMap::new(1, 4, 4, (0..16).map(|_| rng.below(2) as u8).collect())?;
    let (_, d) = softmax_cross_entropy(&logits, &labels)?;
    let mut t = Tally::new("softmax_cross_entropy", LAYER_TOLERANCE, LAYER_FLOOR);
    check_all(&mut t, logits.data(), d.data(), LAYER_EPS, no_skip, |v| {
        Ok(softmax_cross_entropy(&Tensor::from_vec(logits.shape(), v.to_vec())?, &labels)?.0)
    })?;
    Ok(t.finish())
}

/// Every layer kernel, checked exhaustively on small random tensors.
pub fn layer_suite(seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut rng = Rng::new(derive_seed(seed, 0x9c));
    let mut out = Vec::new();
    out.extend(conv_check("conv3x3", (3, 1, 1), &mut rng)?);
    out.extend(conv_check("conv1x1", (1, 1, 0), &mut rng)?);
    out.extend(conv_check("conv4x4s2", (4, 2, 1), &mut rng)?);
    out.push(maxpool_check(&mut rng)?);
    out.extend(upconv_check(&mut rng)?);
    out.push(activation_check("relu", Activation::Relu, &mut rng)?);
    out.push(activation_check("leaky_relu", Activation::LeakyRelu(0.2), &mut rng)?);
    out.push(dropout_check(&mut rng)?);
    out.push(upsample_check(&mut rng)?);
    out.push(cross_entropy_check(&mut rng)?);
    Ok(out)
}

/// Loss at the current values, and the kink pattern of that forward pass.
fn network_loss(net: &mut Network, x: &Tensor, r: &Tensor, mode: Mode) -> Result<(f64, Vec<usize>)> {
    let y = net.forward(x, mode)?;
    let pattern = net.kink_pattern().expect("forward pass cached");
    net.clear_cache();
    Ok((dot(r, &y), pattern))
}

/// Central difference at one network value, or `None` when the two
/// evaluations sit on different sides of some kink. `slot` reaches the value
/// being perturbed.
fn network_probe(
    net: &mut Network,
    x: &mut Tensor,
    r: &Tensor,
    mode: Mode,
    slot: impl for<'a> Fn(&'a mut Network, &'a mut Tensor) -> &'a mut f32,
) -> Result<Option<f64>> {
    let v = *slot(net, x);
    let (hi, lo) = (v + NETWORK_EPS, v - NETWORK_EPS);
    let at = |net: &mut Network, x: &mut Tensor, value: f32| -> Result<(f64, Vec<usize>)> {
        *slot(net, x) = value;
        network_loss(net, x, r, mode)
    };
    let (f_hi, p_hi) = at(net, x, hi)?;
    let (f_lo, p_lo) = at(net, x, lo)?;
    *slot(net, x) = v;
    if p_hi != p_lo {
        return Ok(None);
    }
    Ok(Some((f_hi - f_lo) / (hi as f64 - lo as f64)))
}

fn network_check(
    name: &str,
    net: &mut Network,
    mut x: Tensor,
    mode: Mode,
    per_weight: usize,
    rng: &mut Rng,
) -> Result<CheckOutcome> {
    let y = net.forward(&x, mode)?;
    let r = random(y.shape(), rng);
    net.zero_grads();
    let dx = net.backward(&r)?;
    net.clear_cache();
    let grads = net.grads().to_vec();
    let mut t = Tally::new(name, NETWORK_TOLERANCE, NETWORK_FLOOR);

    for (i, grad) in grads.iter().enumerate() {
        let n_w = net.params()[i].conv.weight.len();
        for _ in 0..per_weight {
            let j = rng.below(n_w);
            match network_probe(net, &mut x, &r, mode, |n, _| &mut n.params_mut()[i].conv.weight.data_mut()[j])? {
                Some(numeric) => t.add(grad.weight.data()[j], numeric),
                None => t.skipped += 1,
            }
        }
        let j = rng.below(net.params()[i].conv.bias.len());
        match network_probe(net, &mut x, &r, mode, |n, _| &mut n.params_mut()[i].conv.bias[j])? {
            Some(numeric) => t.add(grad.bias[j], numeric),
            None => t.skipped += 1,
        }
    }
    for _ in 0..per_weight * 2 {
        let j = rng.below(x.len());
        match network_probe(net, &mut x, &r, mode, |_, x| &mut x.data_mut()[j])? {
            Some(numeric) => t.add(dx.data()[j], numeric),
            None => t.skipped += 1,
        }
    }
    Ok(t.finish())
}

/// Sampled parameter and input gradients of a tiny U-Net and a thin
/// discriminator.
pub fn network_suite(seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut rng = Rng::new(derive_seed(seed, 0x9d));
    let mut unet = build_unet(&UnetConfig { base_channels: 4, seed: rng.next_u64(), ..Default::default() })?;
    let x = random((1, 3, 32, 32), &mut rng);
    let mode = Mode::Train { seed: rng.next_u64() };
    let u = network_check("unet_tiny", &mut unet, x, mode, 16, &mut rng)?;

    let mut disc = build_discriminator(&DiscriminatorConfig {
        widths: [4, 8, 16, 32],
        seed: rng.next_u64(),
        ..Default::default()
    })?;
    let x = random((1, 2, 32, 32), &mut rng);
    let d = network_check("discriminator_thin", &mut disc, x, Mode::Eval, 16, &mut rng)?;
    Ok(vec![u, d])
}

pub fn full_suite(seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut out = layer_suite(seed)?;
    out.extend(network_suite(seed)?);
    Ok(out)
}
