#![allow(dead_code)]

use advseg::data::{generate_phantom, PhantomConfig};
use advseg::rng::Rng;
use advseg::{MaskVolume, VolumeCase};

/// Metrics computed straight from their definitions, by coordinates and
/// exhaustive pair search.
#[derive(Debug, Clone, Copy)]
pub struct BruteMetrics {
    pub dice: f64,
    pub hausdorff: f64,
    pub avg_distance: f64,
    pub precision: f64,
    pub recall: f64,
    pub avd: f64,
    pub pred_empty: bool,
    pub gt_empty: bool,
}

fn at(m: &MaskVolume, z: i64, y: i64, x: i64) -> bool {
    let (d, h, w) = m.dims();
    if z < 0 || y < 0 || x < 0 || z >= d as i64 || y >= h as i64 || x >= w as i64 {
        return false;
    }
    m.data[(z as usize * h + y as usize) * w + x as usize] == 1
}

fn boundary(m: &MaskVolume) -> Vec<[i64; 3]> {
    let (d, h, w) = m.dims();
    let mut pts = Vec::new();
    for z in 0..d as i64 {
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                if !at(m, z, y, x) {
                    continue;
                }
                let nbrs = [(z - 1, y, x), (z + 1, y, x), (z, y - 1, x), (z, y + 1, x), (z, y, x - 1), (z, y, x + 1)];
                if nbrs.iter().any(|&(a, b, c)| !at(m, a, b, c)) {
                    pts.push([z, y, x]);
                }
            }
        }
    }
    pts
}

fn nearest(p: [i64; 3], set: &[[i64; 3]]) -> f64 {
    set.iter()
        .map(|q| {
            let s: i64 = (0..3).map(|k| (p[k] - q[k]) * (p[k] - q[k])).sum();
            (s as f64).sqrt()
        })
        .fold(f64::INFINITY, f64::min)
}

pub fn brute_metrics(pred: &MaskVolume, gt: &MaskVolume) -> BruteMetrics {
    let (d, h, w) = gt.dims();
    let (mut inter, mut np, mut ng) = (0usize, 0usize, 0usize);
    for z in 0..d as i64 {
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                let (p, g) = (at(pred, z, y, x), at(gt, z, y, x));
                np += p as usize;
                ng += g as usize;
                inter += (p && g) as usize;
            }
        }
    }
    let dice = if np + ng == 0 { 1.0 } else { 2.0 * inter as f64 / (np + ng) as f64 };
    let precision = match (np, ng) {
        (0, 0) => 1.0,
        (0, _) => 0.0,
        _ => inter as f64 / np as f64,
    };
    let recall = match (ng, np) {
        (0, 0) => 1.0,
        (0, _) => 0.0,
        _ => inter as f64 / ng as f64,
    };
    let avd = if ng == 0 { f64::INFINITY } else { (np as f64 - ng as f64).abs() / ng as f64 };
    let (bp, bg) = (boundary(pred), boundary(gt));
    let (hausdorff, avg_distance) = if bp.is_empty() || bg.is_empty() {
        (f64::INFINITY, f64::INFINITY)
    } else {
        let a: Vec<f64> = bp.iter().map(|&p| nearest(p, &bg)).collect();
        let b: Vec<f64> = bg.iter().map(|&p| nearest(p, &bp)).collect();
        let max = |v: &[f64]| v.iter().cloned().fold(0.0, f64::max);
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        (max(&a).max(max(&b)), (mean(&a) + mean(&b)) / 2.0)
    };
    BruteMetrics { dice, hausdorff, avg_distance, precision, recall, avd, pred_empty: np == 0, gt_empty: ng == 0 }
}

/// Random mask pair up to 8 x 16 x 16: blobby, sparse, empty or full.
pub fn random_pair(rng: &mut Rng) -> (MaskVolume, MaskVolume) {
    let d = 1 + rng.below(8);
    let h = 1 + rng.below(16);
    let w = 1 + rng.below(16);
    let make = |rng: &mut Rng| {
        let kind = rng.below(10);
        let n = d * h * w;
        let data: Vec<u8> = match kind {
            0 => vec![0; n],
            1 => vec![1; n],
            2..=4 => {
                let p = rng.uniform01();
                (0..n).map(|_| (rng.uniform01() < p) as u8).collect()
            }
            _ => {
                let c = [rng.uniform_f64() * d as f64, rng.uniform_f64() * h as f64, rng.uniform_f64() * w as f64];
                let r = [
                    0.5 + rng.uniform_f64() * d as f64,
                    0.5 + rng.uniform_f64() * h as f64,
                    0.5 + rng.uniform_f64() * w as f64,
                ];
                let mut v = Vec::with_capacity(n);
                for z in 0..d {
                    for y in 0..h {
                        for x in 0..w {
                            let p = [z as f64, y as f64, x as f64];
                            let s: f64 = (0..3).map(|k| ((p[k] - c[k]) / r[k]).powi(2)).sum();
                            v.push((s <= 1.0) as u8);
                        }
                    }
                }
                v
            }
        };
        MaskVolume::new(d, h, w, data).unwrap()
    };
    let pred = make(rng);
    let gt = make(rng);
    (pred, gt)
}

/// Exact for finite values and for matching infinities; distances to `tol`.
pub fn close(a: f64, b: f64, tol: f64) -> bool {
    if a.is_infinite() || b.is_infinite() {
        return a == b;
    }
    (a - b).abs() <= tol
}

pub fn phantoms(count: u64, depth: usize, size: usize) -> Vec<VolumeCase> {
    (0..count).map(|seed| generate_phantom(&PhantomConfig { seed, depth, size, lesion_count: 2 }).unwrap()).collect()
}
