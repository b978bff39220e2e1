//! Browser demo for the advseg engine.
//!
//! Three operations are exported to JavaScript: rendering a phantom slice
//! with its lesion mask, scoring two elliptical masks, and bilinear
//! upsampling of a coarse grid. Each has a plain Rust counterpart so it can
//! be tested natively.

use advseg::data::{generate_phantom, PhantomConfig};
use advseg::layers::bilinear_upsample;
use advseg::metrics::evaluate_case;
use advseg::{MaskVolume, Modality, Tensor};
use wasm_bindgen::prelude::*;

fn gray(v: f32, lo: f32, hi: f32) -> u8 {
    if hi > lo {
        (((v - lo) / (hi - lo)).clamp(0.0, 1.0) * 255.0).round() as u8
    } else {
        0
    }
}

/// RGBA pixels (`size * size * 4`) of one phantom slice, lesion tinted red.
pub fn render_phantom_slice(seed: u64, size: usize, slice: usize, modality: &str) -> advseg::Result<Vec<u8>> {
    let case = generate_phantom(&PhantomConfig { seed, size, ..Default::default() })?;
    let m: Modality = modality.parse()?;
    let grid = case
        .modalities
        .get(&m)
        .ok_or_else(|| advseg::Error::InvalidData(format!("phantoms carry no {modality} map")))?;
    if slice >= grid.depth {
        return Err(advseg::Error::InvalidData(format!("slice {slice} of {}", grid.depth)));
    }
    let values = grid.slice(slice);
    let lo = values.iter().cloned().fold(f32::INFINITY, f32::min);
    let hi = values.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let mask = case.mask.as_ref().map(|mk| mk.slice(slice));
    let mut rgba = Vec::with_capacity(values.len() * 4);
    for (i, &v) in values.iter().enumerate() {
        let g = gray(v, lo, hi);
        if mask.is_some_and(|mk| mk[i] == 1) {
            rgba.extend_from_slice(&[g / 2 + 128, g / 2, g / 2, 255]);
        } else {
            rgba.extend_from_slice(&[g, g, g, 255]);
        }
    }
    Ok(rgba)
}

/// Filled ellipse on an `h x w` single-slice mask.
pub fn ellipse_mask(h: usize, w: usize, cy: f64, cx: f64, ry: f64, rx: f64) -> advseg::Result<MaskVolume> {
    let mut data = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let d = ((y as f64 - cy) / ry).powi(2) + ((x as f64 - cx) / rx).powi(2);
            data.push((d <= 1.0) as u8);
        }
    }
    MaskVolume::new(1, h, w, data)
}

/// Dice, Hausdorff, average distance, precision, recall and AVD of two
/// ellipses `[cy, cx, ry, rx]` on a `size x size` grid.
pub fn compare_ellipses(size: usize, pred: [f64; 4], gt: [f64; 4]) -> advseg::Result<Vec<f64>> {
    let p = ellipse_mask(size, size, pred[0], pred[1], pred[2], pred[3])?;
    let g = ellipse_mask(size, size, gt[0], gt[1], gt[2], gt[3])?;
    let r = evaluate_case(&p, &g)?;
    Ok(vec![r.dice, r.hausdorff, r.avg_distance, r.precision, r.recall, r.avd])
}

/// Bilinear upsampling of an `h x w` grid by `scale`.
pub fn upsample_grid(values: &[f32], h: usize, w: usize, scale: usize) -> advseg::Result<Vec<f32>> {
    let x = Tensor::from_vec((1, 1, h, w), values.to_vec())?;
    Ok(bilinear_upsample(&x, scale)?.data().to_vec())
}

/// Grayscale RGBA of a grid, scaled to its own range.
pub fn grid_to_rgba(values: &[f32]) -> Vec<u8> {
    let lo = values.iter().cloned().fold(f32::INFINITY, f32::min);
    let hi = values.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    values
        .iter()
        .flat_map(|&v| {
            let g = gray(v, lo, hi);
            [g, g, g, 255]
        })
        .collect()
}

fn js(e: advseg::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen(js_name = phantomSlice)]
pub fn phantom_slice(seed: u32, size: usize, slice: usize, modality: &str) -> Result<Vec<u8>, JsError> {
    render_phantom_slice(seed as u64, size, slice, modality).map_err(js)
}

#[wasm_bindgen(js_name = ellipseMetrics)]
#[allow(clippy::too_many_arguments)]
pub fn ellipse_metrics(
    size: usize,
    py: f64,
    px: f64,
    pry: f64,
    prx: f64,
    gy: f64,
    gx: f64,
    gry: f64,
    grx: f64,
) -> Result<Vec<f64>, JsError> {
    compare_ellipses(size, [py, px, pry, prx], [gy, gx, gry, grx]).map_err(js)
}

#[wasm_bindgen(js_name = ellipseRgba)]
pub fn ellipse_rgba(size: usize, pred: Vec<f64>, gt: Vec<f64>) -> Result<Vec<u8>, JsError> {
    let mk = |v: &[f64]| -> Result<MaskVolume, JsError> {
        match v {
            [cy, cx, ry, rx] => ellipse_mask(size, size, *cy, *cx, *ry, *rx).map_err(js),
            _ => Err(JsError::new("ellipse needs [cy, cx, ry, rx]")),
        }
    };
    let (p, g) = (mk(&pred)?, mk(&gt)?);
    Ok(p.data
        .iter()
        .zip(&g.data)
        .flat_map(|(&a, &b)| match (a, b) {
            (1, 1) => [240, 200, 40, 255],
            (1, 0) => [220, 60, 60, 255],
            (0, 1) => [60, 120, 220, 255],
            _ => [20, 20, 20, 255],
        })
        .collect())
}

#[wasm_bindgen(js_name = upsampleRgba)]
pub fn upsample_rgba(values: Vec<f32>, h: usize, w: usize, scale: usize) -> Result<Vec<u8>, JsError> {
    upsample_grid(&values, h, w, scale).map(|v| grid_to_rgba(&v)).map_err(js)
}
