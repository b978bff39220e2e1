//! The `VOL1` container.
//!
//! Little-endian throughout: magic `VOL1`; u32 modality count; per modality a
//! u8 name length, the name bytes, u32 depth, h, w and the raw `f32` values;
//! then a u8 mask flag, and when it is 1, u32 depth, h, w and one byte (0 or 1)
//! per voxel. Modalities are written in name order. The case id is the file
//! stem.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::volume::{Grid3, MaskVolume, Modality, VolumeCase};

const MAGIC: &[u8; 4] = b"VOL1";

/// Raw file contents before case-level validation.
#[derive(Clone, Debug, PartialEq)]
pub struct Vol1Contents {
    pub modalities: BTreeMap<Modality, Grid3>,
    pub mask: Option<MaskVolume>,
}

pub fn write_vol1<W: Write>(
    mut out: W,
    modalities: &BTreeMap<Modality, Grid3>,
    mask: Option<&MaskVolume>,
) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&(modalities.len() as u32).to_le_bytes())?;
    for (m, grid) in modalities {
        let name = m.name().as_bytes();
        out.write_all(&[name.len() as u8])?;
        out.write_all(name)?;
        for d in [grid.depth, grid.h, grid.w] {
            out.write_all(&(d as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(grid.data.len() * 4);
        for v in &grid.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    match mask {
        None => out.write_all(&[0])?,
        Some(mask) => {
            out.write_all(&[1])?;
            for d in [mask.depth, mask.h, mask.w] {
                out.write_all(&(d as u32).to_le_bytes())?;
            }
            out.write_all(&mask.data)?;
        }
    }
    out.flush()?;
    Ok(())
}

fn read_bytes<R: Read>(input: &mut R, n: usize, what: &str) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; n];
    input.read_exact(&mut buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::FormatError(format!("truncated VOL1 file while reading {what}")),
        _ => Error::Io(e),
    })?;
    Ok(buf)
}

fn read_u32<R: Read>(input: &mut R, what: &str) -> Result<u32> {
    let b = read_bytes(input, 4, what)?;
    Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

fn read_dims<R: Read>(input: &mut R) -> Result<(usize, usize, usize)> {
    let d = read_u32(input, "depth")? as usize;
    let h = read_u32(input, "height")? as usize;
    let w = read_u32(input, "width")? as usize;
    if d == 0 || h == 0 || w == 0 || d.saturating_mul(h).saturating_mul(w) > (1 << 31) {
        return Err(Error::FormatError(format!("implausible dims ({d}, {h}, {w})")));
    }
    Ok((d, h, w))
}

pub fn read_vol1<R: Read>(mut input: R) -> Result<Vol1Contents> {
    if read_bytes(&mut input, 4, "magic")? != MAGIC {
        return Err(Error::FormatError("bad VOL1 magic".into()));
    }
    let count = read_u32(&mut input, "modality count")?;
    if count as usize > Modality::ALL.len() {
        return Err(Error::FormatError(format!("{count} modalities listed")));
    }
    let mut modalities = BTreeMap::new();
    for _ in 0..count {
        let len = read_bytes(&mut input, 1, "name length")?[0] as usize;
        let name = String::from_utf8(read_bytes(&mut input, len, "name")?)
            .map_err(|_| Error::FormatError("modality name is not UTF-8".into()))?;
        let modality: Modality = name.parse()?;
        let (d, h, w) = read_dims(&mut input)?;
        let raw = read_bytes(&mut input, d * h * w * 4, "values")?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        if modalities.insert(modality, Grid3::new(d, h, w, data)?).is_some() {
            return Err(Error::FormatError(format!("modality {name} repeated")));
        }
    }
    let mask = match read_bytes(&mut input, 1, "mask flag")?[0] {
        0 => None,
        1 => {
            let (d, h, w) = read_dims(&mut input)?;
            let data = read_bytes(&mut input, d * h * w, "mask")?;
            Some(MaskVolume::new(d, h, w, data)?)
        }
        f => return Err(Error::FormatError(format!("mask flag {f}"))),
    };
    let mut rest = [0u8; 1];
    if input.read(&mut rest)? != 0 {
        return Err(Error::FormatError("trailing bytes after VOL1 payload".into()));
    }
    Ok(Vol1Contents { modalities, mask })
}

fn case_id_of(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Reads a full case; at least one modality is required.
pub fn load_volume(path: &Path) -> Result<VolumeCase> {
    let contents = read_vol1(BufReader::new(File::open(path)?))?;
    VolumeCase::new(case_id_of(path), contents.modalities, contents.mask)
}

pub fn save_volume(case: &VolumeCase, path: &Path) -> Result<()> {
    case.validate()?;
    write_vol1(BufWriter::new(File::create(path)?), &case.modalities, case.mask.as_ref())
}

/// Reads the mask of any VOL1 file, including mask-only prediction files.
pub fn load_mask(path: &Path) -> Result<MaskVolume> {
    let contents = read_vol1(BufReader::new(File::open(path)?))?;
    contents.mask.ok_or_else(|| Error::InvalidData(format!("{} carries no mask", path.display())))
}

/// Writes a mask-only VOL1 file (zero modalities).
pub fn save_mask(mask: &MaskVolume, path: &Path) -> Result<()> {
    write_vol1(BufWriter::new(File::create(path)?), &BTreeMap::new(), Some(mask))
}
