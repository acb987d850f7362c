//! Two-file volume format: `<name>.hdr.json` header plus `<name>.raw`
//! little-endian payload (int16 HU or uint8 label codes, row-major).

use std::path::{Path, PathBuf};

use ahfx_core::grid::{GridKind, VoxelData, VoxelGrid};
use serde::{Deserialize, Serialize};

use crate::error::{read_file, read_text, write_file, AppError, AppResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeHeader {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub kind: GridKind,
    pub dtype: String,
}

/// `base.hdr.json` and `base.raw` for a base path; a path already ending in
/// `.hdr.json` or `.raw` is reduced to its base first.
pub fn volume_paths(path: &Path) -> (PathBuf, PathBuf) {
    let s = path.to_string_lossy();
    let base = s
        .strip_suffix(".hdr.json")
        .or_else(|| s.strip_suffix(".raw"))
        .unwrap_or(&s)
        .to_string();
    (
        PathBuf::from(format!("{base}.hdr.json")),
        PathBuf::from(format!("{base}.raw")),
    )
}

fn dtype_of(kind: GridKind) -> &'static str {
    match kind {
        GridKind::IntensityHu => "int16",
        GridKind::Label => "uint8",
    }
}

pub fn read_volume(path: &Path) -> AppResult<VoxelGrid> {
    let (hdr_path, raw_path) = volume_paths(path);
    let header: VolumeHeader = serde_json::from_str(&read_text(&hdr_path)?)
        .map_err(|e| AppError::invalid(format!("{}: malformed header: {e}", hdr_path.display())))?;
    if header.dtype != dtype_of(header.kind) {
        return Err(AppError::invalid(format!(
            "{}: dtype `{}` does not match kind (expected `{}`)",
            hdr_path.display(),
            header.dtype,
            dtype_of(header.kind)
        )));
    }
    let raw = read_file(&raw_path)?;
    let n: usize = header.dims.iter().product();
    let width = match header.kind {
        GridKind::IntensityHu => 2,
        GridKind::Label => 1,
    };
    if raw.len() != n * width {
        return Err(AppError::invalid(format!(
            "{}: payload holds {} voxels, header declares {n}",
            raw_path.display(),
            raw.len() / width
        )));
    }
    let data = match header.kind {
        GridKind::IntensityHu => VoxelData::Intensity(
            raw.chunks_exact(2)
                .map(|b| i16::from_le_bytes([b[0], b[1]]))
                .collect(),
        ),
        GridKind::Label => VoxelData::Label(raw),
    };
    Ok(VoxelGrid::new(header.dims, header.spacing_mm, data)?)
}

/// Header JSON and raw payload bytes of `grid`.
pub fn encode_volume(grid: &VoxelGrid) -> (Vec<u8>, Vec<u8>) {
    let header = VolumeHeader {
        dims: grid.dims(),
        spacing_mm: grid.spacing(),
        kind: grid.kind(),
        dtype: dtype_of(grid.kind()).into(),
    };
    let mut text = serde_json::to_string_pretty(&header).expect("header serializes");
    text.push('\n');
    let payload: Vec<u8> = match grid.data() {
        VoxelData::Intensity(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
        VoxelData::Label(v) => v.clone(),
    };
    (text.into_bytes(), payload)
}

pub fn write_volume(grid: &VoxelGrid, path: &Path) -> AppResult<()> {
    let (hdr_path, raw_path) = volume_paths(path);
    let (header, payload) = encode_volume(grid);
    write_file(&hdr_path, &header)?;
    write_file(&raw_path, &payload)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_encoding() {
        let dir = tempfile::tempdir().unwrap();
        let hu = VoxelGrid::intensity([2, 2, 1], [0.7, 0.7, 1.0], vec![-1000, 0, 40, 1]).unwrap();
        let p = dir.path().join("ct");
        write_volume(&hu, &p).unwrap();
        let raw = std::fs::read(dir.path().join("ct.raw")).unwrap();
        assert_eq!(&raw[..2], &(-1000i16).to_le_bytes());
        let back = read_volume(&dir.path().join("ct.hdr.json")).unwrap();
        assert_eq!(back, hu);
        assert_eq!(back.spacing(), [0.7, 0.7, 1.0]);

        let lab = VoxelGrid::labels([1, 1, 2], [1.0; 3], vec![255, 0]).unwrap();
        write_volume(&lab, &dir.path().join("m")).unwrap();
        assert_eq!(
            std::fs::read(dir.path().join("m.raw")).unwrap(),
            vec![0xFF, 0]
        );
    }

    #[test]
    fn short_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let lab = VoxelGrid::labels([10, 10, 10], [1.0; 3], vec![0; 1000]).unwrap();
        let p = dir.path().join("m");
        write_volume(&lab, &p).unwrap();
        std::fs::write(dir.path().join("m.raw"), vec![0u8; 999]).unwrap();
        let err = read_volume(&p).unwrap_err();
        assert!(err.to_string().contains("999"), "{err}");
    }
}
