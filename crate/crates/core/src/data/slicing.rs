use crate::error::{Error, Result};
use crate::layers::LabelMap;
use crate::tensor::Tensor;
use crate::volume::{Modality, VolumeCase};

/// Channels whose standard deviation is at or below this are constant and
/// normalize to zero.
pub const MIN_STD: f64 = 1e-6;

/// One axial slice ready for the network.
#[derive(Clone, Debug, PartialEq)]
pub struct Slice {
    pub case_id: String,
    pub index: usize,
    pub h: usize,
    pub w: usize,
    /// `(3, h, w)`: CT, DPWI, CBF, each z-scored.
    pub image: Vec<f32>,
    pub label: Option<Vec<u8>>,
}

/// A batch of slices as network tensors.
#[derive(Clone, Debug)]
pub struct SliceBatch {
    pub images: Tensor,
    pub labels: LabelMap,
    pub provenance: Vec<(String, usize)>,
}

impl SliceBatch {
    /// Requires every slice to carry a label and share one size.
    pub fn from_slices(slices: &[&Slice]) -> Result<Self> {
        let first = slices.first().ok_or_else(|| Error::InvalidData("empty batch".into()))?;
        let (h, w) = (first.h, first.w);
        let mut images = Vec::with_capacity(slices.len() * 3 * h * w);
        let mut labels = Vec::with_capacity(slices.len() * h * w);
        let mut provenance = Vec::with_capacity(slices.len());
        for s in slices {
            if (s.h, s.w) != (h, w) {
                return Err(Error::InvalidData(format!("slice {}x{} in a {h}x{w} batch", s.h, s.w)));
            }
            let label = s
                .label
                .as_ref()
                .ok_or_else(|| Error::InvalidData(format!("slice {}:{} has no label", s.case_id, s.index)))?;
            images.extend_from_slice(&s.image);
            labels.extend_from_slice(label);
            provenance.push((s.case_id.clone(), s.index));
        }
        let n = slices.len();
        Ok(Self {
            images: Tensor::from_vec((n, 3, h, w), images)?,
            labels: LabelMap::new(n, h, w, labels)?,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.provenance.len()
    }

    pub fn is_empty(&self) -> bool {
        self.provenance.is_empty()
    }
}

/// Zero-mean, unit-variance rescaling (population std, accumulated in `f64`).
/// Constant inputs map to all zeros.
pub fn normalize_slice(values: &[f32]) -> Vec<f32> {
    let n = values.len().max(1) as f64;
    let mean = values.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = values.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std <= MIN_STD {
        return vec![0.0; values.len()];
    }
    values.iter().map(|&v| ((v as f64 - mean) / std) as f32).collect()
}

/// Splits a case into axial slices, stacking CT, DPWI and CBF as channels.
/// With `training` set the case must carry a mask, and each slice gets its label.
pub fn slice_volume(case: &VolumeCase, training: bool) -> Result<Vec<Slice>> {
    let grids = Modality::INPUT
        .iter()
        .map(|m| {
            case.modalities
                .get(m)
                .ok_or_else(|| Error::InvalidData(format!("case {} lacks modality {m}", case.case_id)))
        })
        .collect::<Result<Vec<_>>>()?;
    if training && case.mask.is_none() {
        return Err(Error::InvalidData(format!("case {} has no ground-truth mask", case.case_id)));
    }
    let (depth, h, w) = case.dims();
    let mut out = Vec::with_capacity(depth);
    for z in 0..depth {
        let mut image = Vec::with_capacity(3 * h * w);
        for g in &grids {
            image.extend(normalize_slice(g.slice(z)));
        }
        let label = case.mask.as_ref().map(|m| m.slice(z).to_vec());
        out.push(Slice { case_id: case.case_id.clone(), index: z, h, w, image, label });
    }
    Ok(out)
}
