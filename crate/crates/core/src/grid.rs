//! Voxel grids, label maps and binary masks.
//!
//! Grids are row-major over `dims = [d0, d1, d2]`: voxel `(i, j, k)` lives at
//! `(i * d1 + j) * d2 + k`, so the last axis varies fastest. Axis `a` has
//! physical spacing `spacing[a]` in millimetres and voxel centres sit at
//! `index * spacing`.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The fixed vocabulary of segmented structures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Structure {
    LeftAtrium,
    RightAtrium,
    LeftVentricle,
    RightVentricle,
    Myocardium,
    PulmonaryArtery,
    VenaCavaInferior,
    Lung,
    PleuralEffusion,
    PericardialEffusion,
}

impl Structure {
    pub const ALL: [Structure; 10] = [
        Structure::LeftAtrium,
        Structure::RightAtrium,
        Structure::LeftVentricle,
        Structure::RightVentricle,
        Structure::Myocardium,
        Structure::PulmonaryArtery,
        Structure::VenaCavaInferior,
        Structure::Lung,
        Structure::PleuralEffusion,
        Structure::PericardialEffusion,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Structure::LeftAtrium => "left_atrium",
            Structure::RightAtrium => "right_atrium",
            Structure::LeftVentricle => "left_ventricle",
            Structure::RightVentricle => "right_ventricle",
            Structure::Myocardium => "myocardium",
            Structure::PulmonaryArtery => "pulmonary_artery",
            Structure::VenaCavaInferior => "vena_cava_inferior",
            Structure::Lung => "lung",
            Structure::PleuralEffusion => "pleural_effusion",
            Structure::PericardialEffusion => "pericardial_effusion",
        }
    }
}

impl fmt::Display for Structure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Structure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Structure::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::InvalidLabelMap(format!("unknown structure name `{s}`")))
    }
}

/// Structure name to label code. Code 0 is background.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<String, u8>", into = "BTreeMap<String, u8>")]
pub struct LabelMap {
    entries: BTreeMap<Structure, u8>,
}

impl LabelMap {
    pub fn new(entries: impl IntoIterator<Item = (Structure, u8)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        let mut seen = BTreeMap::new();
        for (structure, code) in entries {
            if code == 0 {
                return Err(Error::InvalidLabelMap(format!(
                    "`{structure}` uses reserved background code 0"
                )));
            }
            if let Some(other) = seen.insert(code, structure) {
                return Err(Error::InvalidLabelMap(format!(
                    "code {code} assigned to both `{other}` and `{structure}`"
                )));
            }
            if map.insert(structure, code).is_some() {
                return Err(Error::InvalidLabelMap(format!(
                    "`{structure}` listed twice"
                )));
            }
        }
        Ok(Self { entries: map })
    }

    /// Codes 1..=10 in vocabulary order.
    pub fn standard() -> Self {
        Self::new(Structure::ALL.into_iter().zip(1u8..)).expect("standard map is valid")
    }

    pub fn code(&self, structure: Structure) -> Option<u8> {
        self.entries.get(&structure).copied()
    }

    pub fn require(&self, structure: Structure) -> Result<u8> {
        self.code(structure)
            .ok_or_else(|| Error::MissingStructure(structure.name().to_string()))
    }

    pub fn contains_code(&self, code: u8) -> bool {
        code == 0 || self.entries.values().any(|&c| c == code)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Structure, u8)> + '_ {
        self.entries.iter().map(|(&s, &c)| (s, c))
    }
}

impl TryFrom<BTreeMap<String, u8>> for LabelMap {
    type Error = Error;

    fn try_from(raw: BTreeMap<String, u8>) -> Result<Self> {
        let entries = raw
            .into_iter()
            .map(|(name, code)| Ok((name.parse::<Structure>()?, code)))
            .collect::<Result<Vec<_>>>()?;
        LabelMap::new(entries)
    }
}

impl From<LabelMap> for BTreeMap<String, u8> {
    fn from(map: LabelMap) -> Self {
        map.entries
            .into_iter()
            .map(|(s, c)| (s.name().to_string(), c))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridKind {
    IntensityHu,
    Label,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VoxelData {
    /// Hounsfield units.
    Intensity(Vec<i16>),
    /// Structure codes.
    Label(Vec<u8>),
}

impl VoxelData {
    pub fn len(&self) -> usize {
        match self {
            VoxelData::Intensity(v) => v.len(),
            VoxelData::Label(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    dims: [usize; 3],
    spacing: [f64; 3],
    data: VoxelData,
}

impl VoxelGrid {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], data: VoxelData) -> Result<Self> {
        validate_geometry(dims, spacing)?;
        let expected = voxel_count(dims);
        if data.len() != expected {
            return Err(Error::InvalidGrid(format!(
                "data length {} does not match dims {}x{}x{} = {expected}",
                data.len(),
                dims[0],
                dims[1],
                dims[2]
            )));
        }
        Ok(Self {
            dims,
            spacing,
            data,
        })
    }

    pub fn intensity(dims: [usize; 3], spacing: [f64; 3], data: Vec<i16>) -> Result<Self> {
        Self::new(dims, spacing, VoxelData::Intensity(data))
    }

    pub fn labels(dims: [usize; 3], spacing: [f64; 3], data: Vec<u8>) -> Result<Self> {
        Self::new(dims, spacing, VoxelData::Label(data))
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn kind(&self) -> GridKind {
        match self.data {
            VoxelData::Intensity(_) => GridKind::IntensityHu,
            VoxelData::Label(_) => GridKind::Label,
        }
    }

    pub fn data(&self) -> &VoxelData {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn hu(&self) -> Option<&[i16]> {
        match &self.data {
            VoxelData::Intensity(v) => Some(v),
            VoxelData::Label(_) => None,
        }
    }

    pub fn codes(&self) -> Option<&[u8]> {
        match &self.data {
            VoxelData::Label(v) => Some(v),
            VoxelData::Intensity(_) => None,
        }
    }

    /// Checks that every code in a label grid is declared in `map`; names the
    /// first offending voxel.
    pub fn validate_labels(&self, map: &LabelMap) -> Result<()> {
        let codes = self
            .codes()
            .ok_or_else(|| Error::InvalidGrid("expected a label grid".into()))?;
        if let Some((idx, code)) = codes
            .iter()
            .enumerate()
            .find(|(_, &c)| !map.contains_code(c))
        {
            return Err(Error::InvalidGrid(format!(
                "voxel {idx} carries code {code} which the label map does not declare"
            )));
        }
        Ok(())
    }

    pub fn same_geometry(&self, other: &VoxelGrid) -> bool {
        self.dims == other.dims && self.spacing == other.spacing
    }

    /// Binary mask of voxels carrying `code`.
    pub fn mask_of(&self, code: u8) -> Result<Mask> {
        let codes = self
            .codes()
            .ok_or_else(|| Error::InvalidGrid("expected a label grid".into()))?;
        Ok(Mask {
            dims: self.dims,
            spacing: self.spacing,
            bits: codes.iter().map(|&c| c == code).collect(),
        })
    }
}

pub(crate) fn voxel_count(dims: [usize; 3]) -> usize {
    dims[0] * dims[1] * dims[2]
}

fn validate_geometry(dims: [usize; 3], spacing: [f64; 3]) -> Result<()> {
    if dims.contains(&0) {
        return Err(Error::InvalidGrid(format!(
            "dims must be positive, got {dims:?}"
        )));
    }
    if spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(Error::InvalidGrid(format!(
            "spacing must be positive and finite, got {spacing:?}"
        )));
    }
    Ok(())
}

/// Binary voxel set sharing a grid's geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    dims: [usize; 3],
    spacing: [f64; 3],
    bits: Vec<bool>,
}

impl Mask {
    pub fn empty(dims: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        validate_geometry(dims, spacing)?;
        Ok(Self {
            dims,
            spacing,
            bits: vec![false; voxel_count(dims)],
        })
    }

    pub fn from_bits(dims: [usize; 3], spacing: [f64; 3], bits: Vec<bool>) -> Result<Self> {
        validate_geometry(dims, spacing)?;
        if bits.len() != voxel_count(dims) {
            return Err(Error::InvalidGrid(format!(
                "mask length {} does not match dims {dims:?}",
                bits.len()
            )));
        }
        Ok(Self {
            dims,
            spacing,
            bits,
        })
    }

    /// Builds a mask from a predicate over voxel indices.
    pub fn from_fn(
        dims: [usize; 3],
        spacing: [f64; 3],
        mut inside: impl FnMut(usize, usize, usize) -> bool,
    ) -> Result<Self> {
        let mut mask = Self::empty(dims, spacing)?;
        for i in 0..dims[0] {
            for j in 0..dims[1] {
                for k in 0..dims[2] {
                    let idx = mask.index(i, j, k);
                    mask.bits[idx] = inside(i, j, k);
                }
            }
        }
        Ok(mask)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> bool {
        self.bits[self.index(i, j, k)]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, value: bool) {
        let idx = self.index(i, j, k);
        self.bits[idx] = value;
    }

    pub fn count(&self) -> u64 {
        self.bits.iter().filter(|&&b| b).count() as u64
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    fn zip_with(&self, other: &Mask, op: impl Fn(bool, bool) -> bool) -> Mask {
        assert_eq!(self.dims, other.dims, "mask geometry mismatch");
        Mask {
            dims: self.dims,
            spacing: self.spacing,
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(&a, &b)| op(a, b))
                .collect(),
        }
    }

    pub fn union(&self, other: &Mask) -> Mask {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn intersection(&self, other: &Mask) -> Mask {
        self.zip_with(other, |a, b| a && b)
    }

    pub fn difference(&self, other: &Mask) -> Mask {
        self.zip_with(other, |a, b| a && !b)
    }

    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    pub fn is_disjoint(&self, other: &Mask) -> bool {
        self.bits.iter().zip(&other.bits).all(|(&a, &b)| !(a && b))
    }

    /// Rotate by 90 degrees in the plane of axes `(a, b)`: the new axis `a`
    /// runs along old `b` and new axis `b` runs along old `a` reversed.
    /// Spacing follows its axis.
    pub fn rotate90(&self, a: usize, b: usize) -> Mask {
        assert!(a < 3 && b < 3 && a != b);
        let mut dims = self.dims;
        dims.swap(a, b);
        let mut spacing = self.spacing;
        spacing.swap(a, b);
        let mut out = Mask {
            dims,
            spacing,
            bits: vec![false; self.bits.len()],
        };
        for i in 0..self.dims[0] {
            for j in 0..self.dims[1] {
                for k in 0..self.dims[2] {
                    let src = [i, j, k];
                    let mut dst = src;
                    dst[a] = src[b];
                    dst[b] = self.dims[a] - 1 - src[a];
                    let idx = out.index(dst[0], dst[1], dst[2]);
                    out.bits[idx] = self.get(i, j, k);
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_map_rejects_background_and_duplicate_codes() {
        assert!(LabelMap::new([(Structure::Lung, 0)]).is_err());
        assert!(LabelMap::new([(Structure::Lung, 3), (Structure::Myocardium, 3)]).is_err());
        let map = LabelMap::standard();
        assert_eq!(map.code(Structure::LeftAtrium), Some(1));
        assert_eq!(map.code(Structure::PericardialEffusion), Some(10));
    }

    #[test]
    fn grid_rejects_length_mismatch() {
        let err = VoxelGrid::intensity([10, 10, 10], [1.0; 3], vec![0; 999]).unwrap_err();
        assert!(matches!(err, Error::InvalidGrid(_)));
    }

    #[test]
    fn grid_rejects_nonpositive_spacing() {
        assert!(VoxelGrid::labels([1, 1, 1], [1.0, 0.0, 1.0], vec![0]).is_err());
    }

    #[test]
    fn undeclared_code_is_reported_with_voxel() {
        let map = LabelMap::new([(Structure::Lung, 1)]).unwrap();
        let grid = VoxelGrid::labels([1, 1, 3], [1.0; 3], vec![0, 1, 7]).unwrap();
        let err = grid.validate_labels(&map).unwrap_err();
        assert!(format!("{err}").contains("voxel 2"));
    }

    #[test]
    fn rotation_preserves_count_and_round_trips() {
        let m = Mask::from_fn([3, 4, 5], [1.0, 2.0, 3.0], |i, j, k| {
            (i + 2 * j + k) % 3 == 0
        })
        .unwrap();
        let r = m.rotate90(0, 1);
        assert_eq!(r.dims(), [4, 3, 5]);
        assert_eq!(r.spacing(), [2.0, 1.0, 3.0]);
        assert_eq!(r.count(), m.count());
        let back = r.rotate90(0, 1).rotate90(0, 1).rotate90(0, 1);
        assert_eq!(back, m);
    }
}
