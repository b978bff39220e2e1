//! Segmentation quality on 3-D binary masks: Dice, Hausdorff distance,
//! average symmetric surface distance, precision, recall and relative
//! absolute volume difference.
//!
//! Conventions:
//! * voxel spacing is isotropic 1.0 and distances are Euclidean between
//!   voxel centers;
//! * a surface voxel is a foreground voxel with at least one of its six face
//!   neighbours in the background, where positions outside the grid count as
//!   background;
//! * distances involving an empty mask are `+inf` and the matching
//!   `pred_empty` / `gt_empty` flag is set; AVD is `+inf` when the ground truth
//!   is empty.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::volume::MaskVolume;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsReport {
    pub dice: f64,
    pub hausdorff: f64,
    pub avg_distance: f64,
    pub precision: f64,
    pub recall: f64,
    pub avd: f64,
    pub pred_empty: bool,
    pub gt_empty: bool,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str = "case_id,dice,hausdorff,avg_distance,precision,recall,avd,pred_empty,gt_empty";

    /// One CSV row; infinities print as `inf`, flags as 0/1.
    pub fn csv_row(&self, case_id: &str) -> String {
        let mut s = String::new();
        let _ = write!(
            s,
            "{case_id},{},{},{},{},{},{},{},{}",
            self.dice,
            self.hausdorff,
            self.avg_distance,
            self.precision,
            self.recall,
            self.avd,
            self.pred_empty as u8,
            self.gt_empty as u8
        );
        s
    }
}

/// Mean over a set of cases.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SetReport {
    pub mean: MetricsReport,
    pub cases: usize,
    /// Cases left out of the Hausdorff / average-distance means.
    pub distance_excluded: usize,
    /// Cases left out of the AVD mean.
    pub avd_excluded: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

fn check_dims(pred: &MaskVolume, gt: &MaskVolume) -> Result<()> {
    if pred.dims() != gt.dims() {
        return Err(Error::ShapeMismatch(format!("prediction {:?} vs ground truth {:?}", pred.dims(), gt.dims())));
    }
    Ok(())
}

pub fn confusion(pred: &MaskVolume, gt: &MaskVolume) -> Result<Confusion> {
    check_dims(pred, gt)?;
    let mut c = Confusion::default();
    for (&p, &g) in pred.data.iter().zip(&gt.data) {
        match (p == 1, g == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => {}
        }
    }
    Ok(c)
}

fn dice_from(c: Confusion) -> f64 {
    let denom = 2 * c.tp + c.fp + c.fn_;
    if denom == 0 {
        1.0
    } else {
        (2 * c.tp) as f64 / denom as f64
    }
}

fn precision_recall_from(c: Confusion) -> (f64, f64) {
    let pred = c.tp + c.fp;
    let gt = c.tp + c.fn_;
    let ratio = |num: usize, den: usize, other_empty: bool| {
        if den > 0 {
            num as f64 / den as f64
        } else if other_empty {
            1.0
        } else {
            0.0
        }
    };
    (ratio(c.tp, pred, gt == 0), ratio(c.tp, gt, pred == 0))
}

fn avd_from(c: Confusion) -> f64 {
    let pred = (c.tp + c.fp) as f64;
    let gt = (c.tp + c.fn_) as f64;
    if gt == 0.0 {
        f64::INFINITY
    } else {
        (pred - gt).abs() / gt
    }
}

/// `2|P∩G| / (|P| + |G|)`, 1 when both are empty.
pub fn dice(pred: &MaskVolume, gt: &MaskVolume) -> Result<f64> {
    Ok(dice_from(confusion(pred, gt)?))
}

pub fn precision_recall(pred: &MaskVolume, gt: &MaskVolume) -> Result<(f64, f64)> {
    Ok(precision_recall_from(confusion(pred, gt)?))
}

/// `||P| - |G|| / |G|`.
pub fn avd(pred: &MaskVolume, gt: &MaskVolume) -> Result<f64> {
    Ok(avd_from(confusion(pred, gt)?))
}

/// Indices of surface voxels.
pub fn surface_voxels(m: &MaskVolume) -> Vec<usize> {
    let (d, h, w) = m.dims();
    let mut out = Vec::new();
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                let i = (z * h + y) * w + x;
                if m.data[i] == 0 {
                    continue;
                }
                let exposed = z == 0
                    || z + 1 == d
                    || y == 0
                    || y + 1 == h
                    || x == 0
                    || x + 1 == w
                    || m.data[i - h * w] == 0
                    || m.data[i + h * w] == 0
                    || m.data[i - w] == 0
                    || m.data[i + w] == 0
                    || m.data[i - 1] == 0
                    || m.data[i + 1] == 0;
                if exposed {
                    out.push(i);
                }
            }
        }
    }
    out
}

/// Lower envelope of parabolas (Felzenszwalb-Huttenlocher) along one line.
/// `None` entries are unreachable; output is the squared distance.
fn edt_line(f: &[Option<f64>], out: &mut [Option<f64>], v: &mut Vec<usize>, zb: &mut Vec<f64>) {
    v.clear();
    zb.clear();
    for (q, fq) in f.iter().enumerate() {
        let Some(fq) = *fq else { continue };
        let qf = q as f64;
        while let Some(&p) = v.last() {
            let fp = f[p].expect("envelope holds finite points");
            let pf = p as f64;
            let s = ((fq + qf * qf) - (fp + pf * pf)) / (2.0 * qf - 2.0 * pf);
            if s <= *zb.last().expect("boundary per vertex") {
                v.pop();
                zb.pop();
            } else {
                v.push(q);
                zb.push(s);
                break;
            }
        }
        if v.is_empty() {
            v.push(q);
            zb.push(f64::NEG_INFINITY);
        }
    }
    if v.is_empty() {
        out.fill(None);
        return;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        let qf = q as f64;
        while k + 1 < v.len() && zb[k + 1] < qf {
            k += 1;
        }
        let p = v[k];
        let d = qf - p as f64;
        *o = Some(d * d + f[p].expect("finite"));
    }
}

/// Exact squared Euclidean distance from every voxel to the nearest voxel of
/// `targets`.
fn squared_distance_map(dims: (usize, usize, usize), targets: &[usize]) -> Vec<Option<f64>> {
    let (d, h, w) = dims;
    let mut grid: Vec<Option<f64>> = vec![None; d * h * w];
    for &t in targets {
        grid[t] = Some(0.0);
    }
    let longest = d.max(h).max(w);
    let (mut line, mut out) = (vec![None; longest], vec![None; longest]);
    let (mut v, mut zb) = (Vec::with_capacity(longest), Vec::with_capacity(longest));
    let mut pass = |len: usize, stride: usize, starts: &mut dyn Iterator<Item = usize>| {
        for start in starts {
            for i in 0..len {
                line[i] = grid[start + i * stride];
            }
            edt_line(&line[..len], &mut out[..len], &mut v, &mut zb);
            for i in 0..len {
                grid[start + i * stride] = out[i];
            }
        }
    };
    pass(w, 1, &mut (0..d * h).map(|r| r * w));
    pass(h, w, &mut (0..d).flat_map(|z| (0..w).map(move |x| z * h * w + x)));
    pass(d, h * w, &mut (0..h * w));
    grid
}

/// Directed `(max, mean)` distance from surface `from` to surface `to`.
fn directed(dims: (usize, usize, usize), from: &[usize], to: &[usize]) -> (f64, f64) {
    let map = squared_distance_map(dims, to);
    let mut max = 0.0f64;
    let mut sum = 0.0f64;
    for &i in from {
        let dist = map[i].expect("target surface is non-empty").sqrt();
        max = max.max(dist);
        sum += dist;
    }
    (max, sum / from.len() as f64)
}

/// `(hausdorff, average symmetric surface distance)`, `+inf` if either mask is empty.
pub fn surface_distances(pred: &MaskVolume, gt: &MaskVolume) -> Result<(f64, f64)> {
    check_dims(pred, gt)?;
    let (sp, sg) = (surface_voxels(pred), surface_voxels(gt));
    if sp.is_empty() || sg.is_empty() {
        return Ok((f64::INFINITY, f64::INFINITY));
    }
    let (max_pg, mean_pg) = directed(pred.dims(), &sp, &sg);
    let (max_gp, mean_gp) = directed(pred.dims(), &sg, &sp);
    Ok((max_pg.max(max_gp), (mean_pg + mean_gp) / 2.0))
}

pub fn evaluate_case(pred: &MaskVolume, gt: &MaskVolume) -> Result<MetricsReport> {
    let c = confusion(pred, gt)?;
    let (hausdorff, avg_distance) = surface_distances(pred, gt)?;
    let (precision, recall) = precision_recall_from(c);
    Ok(MetricsReport {
        dice: dice_from(c),
        hausdorff,
        avg_distance,
        precision,
        recall,
        avd: avd_from(c),
        pred_empty: c.tp + c.fp == 0,
        gt_empty: c.tp + c.fn_ == 0,
    })
}

/// Unweighted mean over cases. Distance means skip cases with an empty mask
/// and AVD skips cases with empty ground truth; a mean over no cases is
/// `+inf`. The mean's flags are set when every case carries them.
pub fn evaluate_set(reports: &[MetricsReport]) -> Result<SetReport> {
    if reports.is_empty() {
        return Err(Error::InvalidData("no cases to evaluate".into()));
    }
    let n = reports.len() as f64;
    let mean_of = |f: fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    let finite_mean = |f: fn(&MetricsReport) -> f64, keep: fn(&MetricsReport) -> bool| {
        let kept: Vec<f64> = reports.iter().filter(|r| keep(r)).map(f).collect();
        if kept.is_empty() {
            f64::INFINITY
        } else {
            kept.iter().sum::<f64>() / kept.len() as f64
        }
    };
    let has_distances = |r: &MetricsReport| !r.pred_empty && !r.gt_empty;
    let has_avd = |r: &MetricsReport| !r.gt_empty;
    let mean = MetricsReport {
        dice: mean_of(|r| r.dice),
        hausdorff: finite_mean(|r| r.hausdorff, has_distances),
        avg_distance: finite_mean(|r| r.avg_distance, has_distances),
        precision: mean_of(|r| r.precision),
        recall: mean_of(|r| r.recall),
        avd: finite_mean(|r| r.avd, has_avd),
        pred_empty: reports.iter().all(|r| r.pred_empty),
        gt_empty: reports.iter().all(|r| r.gt_empty),
    };
    Ok(SetReport {
        mean,
        cases: reports.len(),
        distance_excluded: reports.iter().filter(|r| !has_distances(r)).count(),
        avd_excluded: reports.iter().filter(|r| !has_avd(r)).count(),
    })
}
