//! Synthetic perfusion-CT cases with ellipsoidal lesions.
//!
//! Each modality is a smooth random field (trilinear interpolation of a coarse
//! seeded lattice) plus mild voxel noise; lesion voxels get a modality-specific
//! shift: CT slightly darker, DPWI brighter, CBF darker. All arithmetic is
//! plain floating point without transcendental calls, so cases are bit-exact
//! across platforms for a given seed.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::rng::{derive_seed, Rng};
use crate::volume::{Grid3, MaskVolume, Modality, VolumeCase};

pub const PHANTOM_DIVISOR: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhantomConfig {
    pub seed: u64,
    pub depth: usize,
    pub size: usize,
    pub lesion_count: usize,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self { seed: 0, depth: 4, size: 256, lesion_count: 2 }
    }
}

/// Axis-aligned ellipsoid in voxel coordinates `(z, y, x)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ellipsoid {
    pub center: [f64; 3],
    pub radii: [f64; 3],
}

impl Ellipsoid {
    /// Inclusive `x` range covered on row `(z, y)`, if any.
    fn row_span(&self, z: usize, y: usize, w: usize) -> Option<(usize, usize)> {
        let dz = (z as f64 - self.center[0]) / self.radii[0];
        let dy = (y as f64 - self.center[1]) / self.radii[1];
        let rem = 1.0 - dz * dz - dy * dy;
        if rem < 0.0 {
            return None;
        }
        let half = self.radii[2] * rem.sqrt();
        let lo = (self.center[2] - half).ceil().max(0.0);
        let hi = (self.center[2] + half).floor().min(w as f64 - 1.0);
        (lo <= hi).then_some((lo as usize, hi as usize))
    }
}

struct ModalityStyle {
    modality: Modality,
    base: f32,
    texture: f32,
    noise: f32,
    lesion_shift: f32,
}

const STYLES: [ModalityStyle; 3] = [
    ModalityStyle { modality: Modality::Ct, base: 40.0, texture: 4.0, noise: 0.5, lesion_shift: -6.0 },
    ModalityStyle { modality: Modality::Dpwi, base: 100.0, texture: 8.0, noise: 1.0, lesion_shift: 30.0 },
    ModalityStyle { modality: Modality::Cbf, base: 50.0, texture: 6.0, noise: 0.8, lesion_shift: -25.0 },
];

fn check(cfg: &PhantomConfig) -> Result<()> {
    if cfg.depth == 0 {
        return Err(Error::InvalidConfig("phantom depth must be >= 1".into()));
    }
    if cfg.size == 0 || !cfg.size.is_multiple_of(PHANTOM_DIVISOR) {
        return Err(Error::InvalidConfig(format!(
            "phantom size must be a positive multiple of {PHANTOM_DIVISOR}, got {}",
            cfg.size
        )));
    }
    Ok(())
}

/// The lesion geometry a given configuration produces.
pub fn phantom_lesions(cfg: &PhantomConfig) -> Result<Vec<Ellipsoid>> {
    check(cfg)?;
    let mut rng = Rng::new(derive_seed(cfg.seed, 0x1e51));
    let size = cfg.size as f64;
    let z_max = (cfg.depth - 1) as f64;
    let rz_hi = (cfg.depth as f64 * 0.6).max(1.0);
    Ok((0..cfg.lesion_count)
        .map(|_| {
            let center = [
                rng.uniform_f64() * z_max,
                size * (0.25 + 0.5 * rng.uniform_f64()),
                size * (0.25 + 0.5 * rng.uniform_f64()),
            ];
            let radii = [
                1.0 + (rz_hi - 1.0) * rng.uniform_f64(),
                size * (0.07 + 0.09 * rng.uniform_f64()),
                size * (0.07 + 0.09 * rng.uniform_f64()),
            ];
            Ellipsoid { center, radii }
        })
        .collect())
}

fn rasterize(lesions: &[Ellipsoid], depth: usize, size: usize) -> MaskVolume {
    let mut mask = MaskVolume::zeros(depth, size, size);
    for e in lesions {
        for z in 0..depth {
            for y in 0..size {
                if let Some((lo, hi)) = e.row_span(z, y, size) {
                    let row = (z * size + y) * size;
                    mask.data[row + lo..=row + hi].fill(1);
                }
            }
        }
    }
    mask
}

/// Smooth field over `(depth, size, size)`: a coarse lattice of standard
/// normals, trilinearly interpolated.
fn smooth_field(rng: &mut Rng, depth: usize, size: usize) -> Vec<f32> {
    const LATTICE: usize = 6;
    let lz = depth.div_ceil(4) + 1;
    let lattice: Vec<f32> = (0..lz * LATTICE * LATTICE).map(|_| rng.normal(0.0, 1.0)).collect();
    let at = |k: usize, i: usize, j: usize| lattice[(k * LATTICE + i) * LATTICE + j];
    let coord = |v: usize, len: usize, cells: usize| -> (usize, usize, f32) {
        if len <= 1 || cells <= 1 {
            return (0, 0, 0.0);
        }
        let u = v as f32 * (cells - 1) as f32 / (len - 1) as f32;
        let i0 = (u as usize).min(cells - 2);
        (i0, i0 + 1, u - i0 as f32)
    };
    let mut out = Vec::with_capacity(depth * size * size);
    for z in 0..depth {
        let (k0, k1, tz) = coord(z, depth, lz);
        for y in 0..size {
            let (i0, i1, ty) = coord(y, size, LATTICE);
            for x in 0..size {
                let (j0, j1, tx) = coord(x, size, LATTICE);
                let plane = |k| {
                    let top = at(k, i0, j0) * (1.0 - tx) + at(k, i0, j1) * tx;
                    let bot = at(k, i1, j0) * (1.0 - tx) + at(k, i1, j1) * tx;
                    top * (1.0 - ty) + bot * ty
                };
                out.push(plane(k0) * (1.0 - tz) + plane(k1) * tz);
            }
        }
    }
    out
}

/// Deterministic synthetic case `phantom_<seed>` with CT, DPWI and CBF volumes
/// and the exact lesion mask.
pub fn generate_phantom(cfg: &PhantomConfig) -> Result<VolumeCase> {
    let lesions = phantom_lesions(cfg)?;
    let (depth, size) = (cfg.depth, cfg.size);
    let mask = rasterize(&lesions, depth, size);
    let mut modalities = BTreeMap::new();
    for (k, style) in STYLES.iter().enumerate() {
        let mut rng = Rng::new(derive_seed(cfg.seed, 0x7e47 + k as u64));
        let field = smooth_field(&mut rng, depth, size);
        let data = field
            .iter()
            .zip(&mask.data)
            .map(|(&f, &m)| {
                style.base + style.texture * f + style.noise * rng.normal(0.0, 1.0) + style.lesion_shift * m as f32
            })
            .collect();
        modalities.insert(style.modality, Grid3::new(depth, size, size, data)?);
    }
    VolumeCase::new(format!("phantom_{}", cfg.seed), modalities, Some(mask))
}
