//! 3-D grids shared by the data pipeline and the metrics.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// CT perfusion channels. Declaration order equals byte order of the names,
/// which is the on-disk order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Modality {
    Cbf,
    Cbv,
    Ct,
    Dpwi,
    Mtt,
    Tmax,
}

impl Modality {
    pub const ALL: [Modality; 6] =
        [Modality::Cbf, Modality::Cbv, Modality::Ct, Modality::Dpwi, Modality::Mtt, Modality::Tmax];
    /// Network input channels, in channel order.
    pub const INPUT: [Modality; 3] = [Modality::Ct, Modality::Dpwi, Modality::Cbf];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Cbf => "CBF",
            Modality::Cbv => "CBV",
            Modality::Ct => "CT",
            Modality::Dpwi => "DPWI",
            Modality::Mtt => "MTT",
            Modality::Tmax => "Tmax",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Modality::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidData(format!("unknown modality {s:?}")))
    }
}

/// `(depth, h, w)` grid of intensities, `w` fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid3 {
    pub depth: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl Grid3 {
    pub fn new(depth: usize, h: usize, w: usize, data: Vec<f32>) -> Result<Self> {
        if depth == 0 || h == 0 || w == 0 || data.len() != depth * h * w {
            return Err(Error::InvalidData(format!("{} values for grid ({depth}, {h}, {w})", data.len())));
        }
        Ok(Self { depth, h, w, data })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.depth, self.h, self.w)
    }

    pub fn slice(&self, z: usize) -> &[f32] {
        let plane = self.h * self.w;
        &self.data[z * plane..(z + 1) * plane]
    }
}

/// Binary `(depth, h, w)` mask, 1 = lesion.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskVolume {
    pub depth: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<u8>,
}

impl MaskVolume {
    pub fn new(depth: usize, h: usize, w: usize, data: Vec<u8>) -> Result<Self> {
        if depth == 0 || h == 0 || w == 0 || data.len() != depth * h * w {
            return Err(Error::InvalidData(format!("{} values for mask ({depth}, {h}, {w})", data.len())));
        }
        if let Some(v) = data.iter().find(|&&v| v > 1) {
            return Err(Error::InvalidData(format!("mask value {v} is not binary")));
        }
        Ok(Self { depth, h, w, data })
    }

    pub fn zeros(depth: usize, h: usize, w: usize) -> Self {
        Self { depth, h, w, data: vec![0; depth * h * w] }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.depth, self.h, self.w)
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    pub fn get(&self, z: usize, y: usize, x: usize) -> bool {
        self.data[(z * self.h + y) * self.w + x] == 1
    }

    pub fn slice(&self, z: usize) -> &[u8] {
        let plane = self.h * self.w;
        &self.data[z * plane..(z + 1) * plane]
    }

    /// Stacks 2-D slices back into a volume, in the given order.
    pub fn from_slices(h: usize, w: usize, slices: &[Vec<u8>]) -> Result<Self> {
        let mut data = Vec::with_capacity(slices.len() * h * w);
        for s in slices {
            if s.len() != h * w {
                return Err(Error::InvalidData(format!("slice of {} values for {h}x{w}", s.len())));
            }
            data.extend_from_slice(s);
        }
        Self::new(slices.len(), h, w, data)
    }
}

/// One patient case: co-registered modality volumes and an optional lesion mask.
#[derive(Clone, Debug, PartialEq)]
pub struct VolumeCase {
    pub case_id: String,
    pub modalities: BTreeMap<Modality, Grid3>,
    pub mask: Option<MaskVolume>,
}

impl VolumeCase {
    pub fn new(
        case_id: impl Into<String>,
        modalities: BTreeMap<Modality, Grid3>,
        mask: Option<MaskVolume>,
    ) -> Result<Self> {
        let case = Self { case_id: case_id.into(), modalities, mask };
        case.validate()?;
        Ok(case)
    }

    pub fn validate(&self) -> Result<()> {
        let mut dims = self.modalities.values().map(Grid3::dims);
        let first =
            dims.next().ok_or_else(|| Error::InvalidData(format!("case {} has no modalities", self.case_id)))?;
        if let Some(other) = dims.find(|d| *d != first) {
            return Err(Error::InvalidData(format!(
                "case {}: modality dims {other:?} differ from {first:?}",
                self.case_id
            )));
        }
        if let Some(mask) = &self.mask {
            if mask.dims() != first {
                return Err(Error::InvalidData(format!(
                    "case {}: mask dims {:?} differ from volume dims {first:?}",
                    self.case_id,
                    mask.dims()
                )));
            }
        }
        Ok(())
    }

    /// `(depth, h, w)` shared by all modalities.
    pub fn dims(&self) -> (usize, usize, usize) {
        self.modalities.values().next().map(Grid3::dims).unwrap_or((0, 0, 0))
    }

    pub fn depth(&self) -> usize {
        self.dims().0
    }
}
