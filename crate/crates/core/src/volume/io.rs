//! `VOL1` binary volume format.
//!
//! Layout, all little-endian: magic `VOL1`; `u32` d, h, w; `f32` spacing x3;
//! `f32` origin x3 (both in `(d, h, w)` order); `u8` unit tag (0 = HU,
//! 1 = normalized); then `d*h*w` `f32` voxels with `w` (x) fastest.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{GridSpec, ValueUnit, Volume3D};
use crate::error::{Error, Result};

pub const VOL1_MAGIC: &[u8; 4] = b"VOL1";

fn format_err(reason: impl Into<String>) -> Error {
    Error::Format {
        format: "VOL1",
        reason: reason.into(),
    }
}

pub fn write_vol1<W: Write>(w: &mut W, v: &Volume3D) -> Result<()> {
    let g = v.grid();
    let mut header = Vec::with_capacity(4 + 12 + 24 + 1);
    header.extend_from_slice(VOL1_MAGIC);
    for d in g.dims {
        let d = u32::try_from(d).map_err(|_| format_err("dimension exceeds u32"))?;
        header.extend_from_slice(&d.to_le_bytes());
    }
    for s in g.spacing.iter().chain(&g.origin) {
        header.extend_from_slice(&(*s as f32).to_le_bytes());
    }
    header.push(v.unit().tag());
    w.write_all(&header)?;

    let mut body = Vec::with_capacity(v.len() * 4);
    for x in v.data() {
        body.extend_from_slice(&(*x as f32).to_le_bytes());
    }
    w.write_all(&body)?;
    Ok(())
}

fn read_array<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|e| format_err(format!("truncated header: {e}")))?;
    Ok(buf)
}

pub fn read_vol1<R: Read>(r: &mut R) -> Result<Volume3D> {
    let magic: [u8; 4] = read_array(r)?;
    if &magic != VOL1_MAGIC {
        return Err(format_err(format!("bad magic {magic:?}")));
    }
    let mut dims = [0usize; 3];
    for d in &mut dims {
        *d = u32::from_le_bytes(read_array(r)?) as usize;
    }
    let mut floats = [0f64; 6];
    for f in &mut floats {
        *f = f32::from_le_bytes(read_array(r)?) as f64;
    }
    let [tag] = read_array::<_, 1>(r)?;
    let unit = ValueUnit::from_tag(tag).ok_or_else(|| format_err(format!("unknown unit tag {tag}")))?;
    let grid = GridSpec::new(
        dims,
        [floats[0], floats[1], floats[2]],
        [floats[3], floats[4], floats[5]],
    )?;

    let mut body = vec![0u8; grid.len() * 4];
    r.read_exact(&mut body)
        .map_err(|e| format_err(format!("truncated voxel data: {e}")))?;
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Volume3D::new(grid, unit, data)
}

pub fn write_vol1_file(path: impl AsRef<Path>, v: &Volume3D) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_vol1(&mut w, v)?;
    w.flush()?;
    Ok(())
}

pub fn read_vol1_file(path: impl AsRef<Path>) -> Result<Volume3D> {
    read_vol1(&mut BufReader::new(File::open(path)?))
}
