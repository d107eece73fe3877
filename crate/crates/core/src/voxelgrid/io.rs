//! `vgrid` files: a JSON header plus a raw little-endian payload.
//!
//! ```json
//! {"dims":[nx,ny,nz],"spacing":[sx,sy,sz],"origin":[ox,oy,oz],
//!  "dtype":"u8"|"f32","order":"x-fastest","data_file":"name.raw"}
//! ```
//! `data_file` is resolved relative to the header.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{LabelGrid, ScalarGrid, VoxelGrid};
use crate::error::{CmacError, Result};
use crate::Vec3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VgridHeader {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
    pub dtype: Dtype,
    pub order: String,
    pub data_file: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    U8,
    F32,
}

/// A grid read from disk, typed by its header.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyGrid {
    Label(LabelGrid),
    Scalar(ScalarGrid),
}

fn payload_path(header_path: &Path, h: &VgridHeader) -> PathBuf {
    header_path
        .parent()
        .unwrap_or(Path::new("."))
        .join(&h.data_file)
}

fn header_for<T: super::Voxel>(g: &VoxelGrid<T>, dtype: Dtype, header_path: &Path) -> VgridHeader {
    let stem = header_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("grid");
    VgridHeader {
        dims: g.dims(),
        spacing: [g.spacing().x, g.spacing().y, g.spacing().z],
        origin: [g.origin().x, g.origin().y, g.origin().z],
        dtype,
        order: "x-fastest".into(),
        data_file: format!("{stem}.raw"),
    }
}

fn write_header(path: &Path, h: &VgridHeader) -> Result<()> {
    let mut text = serde_json::to_string_pretty(h)?;
    text.push('\n');
    Ok(std::fs::write(path, text)?)
}

pub fn write_label(path: &Path, g: &LabelGrid) -> Result<()> {
    let h = header_for(g, Dtype::U8, path);
    std::fs::write(payload_path(path, &h), g.data())?;
    write_header(path, &h)
}

pub fn write_scalar(path: &Path, g: &ScalarGrid) -> Result<()> {
    let h = header_for(g, Dtype::F32, path);
    let bytes: Vec<u8> = g.data().iter().flat_map(|v| v.to_le_bytes()).collect();
    std::fs::write(payload_path(path, &h), bytes)?;
    write_header(path, &h)
}

pub fn read_header(path: &Path) -> Result<VgridHeader> {
    let text = std::fs::read_to_string(path)?;
    let h: VgridHeader =
        serde_json::from_str(&text).map_err(|e| CmacError::parse(path, e.to_string()))?;
    if h.order != "x-fastest" {
        return Err(CmacError::parse(
            path,
            format!("unsupported order '{}'", h.order),
        ));
    }
    Ok(h)
}

pub fn read(path: &Path) -> Result<AnyGrid> {
    let h = read_header(path)?;
    let bytes = std::fs::read(payload_path(path, &h))?;
    let n: usize = h.dims.iter().product();
    let width = match h.dtype {
        Dtype::U8 => 1,
        Dtype::F32 => 4,
    };
    if bytes.len() != n * width {
        return Err(CmacError::parse(
            path,
            format!(
                "payload has {} bytes, header implies {}",
                bytes.len(),
                n * width
            ),
        ));
    }
    let spacing = Vec3::from(h.spacing);
    let origin = Vec3::from(h.origin);
    let bad = |e: CmacError| CmacError::parse(path, e.to_string());
    Ok(match h.dtype {
        Dtype::U8 => AnyGrid::Label(VoxelGrid::new(h.dims, spacing, origin, bytes).map_err(bad)?),
        Dtype::F32 => {
            let data = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            AnyGrid::Scalar(VoxelGrid::new(h.dims, spacing, origin, data).map_err(bad)?)
        }
    })
}

pub fn read_label(path: &Path) -> Result<LabelGrid> {
    match read(path)? {
        AnyGrid::Label(g) => Ok(g),
        AnyGrid::Scalar(_) => Err(CmacError::parse(path, "expected a u8 label grid")),
    }
}

pub fn read_scalar(path: &Path) -> Result<ScalarGrid> {
    match read(path)? {
        AnyGrid::Scalar(g) => Ok(g),
        AnyGrid::Label(g) => Ok(g.map(|v| v as f32)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_both_dtypes() {
        let dir = tempfile::tempdir().unwrap();
        let l = VoxelGrid::new(
            [2, 3, 1],
            Vec3::new(1.25, 1.25, 2.0),
            Vec3::new(-1.0, 0.5, 3.0),
            vec![0u8, 1, 1, 0, 2, 1],
        )
        .unwrap();
        let p = dir.path().join("l.vgrid");
        write_label(&p, &l).unwrap();
        assert_eq!(read_label(&p).unwrap(), l);
        let s = l.map(|v| v as f32 * 0.3 - 1.0);
        let p = dir.path().join("s.vgrid");
        write_scalar(&p, &s).unwrap();
        assert_eq!(read_scalar(&p).unwrap(), s);
    }

    #[test]
    fn short_payload_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let l = VoxelGrid::filled([2, 2, 2], Vec3::repeat(1.0), Vec3::zeros(), 1u8).unwrap();
        let p = dir.path().join("g.vgrid");
        write_label(&p, &l).unwrap();
        std::fs::write(dir.path().join("g.raw"), [1u8; 7]).unwrap();
        let e = read(&p).unwrap_err();
        assert!(e.to_string().contains("7 bytes"), "{e}");
    }
}
