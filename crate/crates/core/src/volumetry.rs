//! Segmentation-derived measurements and the scan feature vector.
//!
//! Volumes accumulate as integer voxel counts and densities as integer HU
//! sums or exact sorted medians, so every measurement is bit-reproducible
//! regardless of how scans are scheduled.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::edt;
use crate::error::{Error, Result};
use crate::grid::{LabelMap, Mask, Structure, VoxelGrid};
use crate::table::{FeatureTable, Sex};

/// Width of the inner lung boundary band.
pub const BOUNDARY_BAND_MM: f64 = 10.0;

/// Consistency constant of the modified Z-score.
pub const MODIFIED_Z_CONSTANT: f64 = 0.6745;

/// A measurable region: one of the base structures or a derived set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Region {
    Base(Structure),
    TotalLung,
    LungTissue,
    LungBoundary,
    TotalHeart,
}

impl Region {
    pub fn name(self) -> &'static str {
        match self {
            Region::Base(s) => s.name(),
            Region::TotalLung => "total_lung",
            Region::LungTissue => "lung_tissue",
            Region::LungBoundary => "lung_boundary",
            Region::TotalHeart => "total_heart",
        }
    }
}

const HEART_PARTS: [Structure; 5] = [
    Structure::LeftAtrium,
    Structure::RightAtrium,
    Structure::LeftVentricle,
    Structure::RightVentricle,
    Structure::Myocardium,
];

/// Base structures plus the derived lung and heart sets.
#[derive(Debug, Clone)]
pub struct DerivedStructureSet {
    pub base: BTreeMap<Structure, Mask>,
    pub total_lung: Mask,
    pub lung_tissue: Mask,
    pub lung_boundary: Mask,
    pub total_heart: Mask,
}

impl DerivedStructureSet {
    pub fn mask(&self, region: Region) -> &Mask {
        match region {
            Region::Base(s) => &self.base[&s],
            Region::TotalLung => &self.total_lung,
            Region::LungTissue => &self.lung_tissue,
            Region::LungBoundary => &self.lung_boundary,
            Region::TotalHeart => &self.total_heart,
        }
    }
}

/// Splits a label grid into base masks and derives total lung (lung ∪
/// effusion), lung tissue (lung \ effusion), the inner boundary band of lung
/// tissue within `band_mm` of the total-lung exterior, and total heart.
pub fn derive_structures_with_band(
    labels: &VoxelGrid,
    map: &LabelMap,
    band_mm: f64,
) -> Result<DerivedStructureSet> {
    labels.validate_labels(map)?;
    let mut base = BTreeMap::new();
    for structure in Structure::ALL {
        let code = map.require(structure)?;
        base.insert(structure, labels.mask_of(code)?);
    }
    let lung = &base[&Structure::Lung];
    let effusion = &base[&Structure::PleuralEffusion];
    let total_lung = lung.union(effusion);
    let lung_tissue = lung.difference(effusion);

    let exterior = Mask::from_bits(
        total_lung.dims(),
        total_lung.spacing(),
        total_lung.bits().iter().map(|&b| !b).collect(),
    )?;
    let d2 = edt::squared_distance(&exterior, true);
    let limit = band_mm * band_mm * (1.0 + 1e-12);
    let lung_boundary = Mask::from_bits(
        lung_tissue.dims(),
        lung_tissue.spacing(),
        lung_tissue
            .bits()
            .iter()
            .zip(&d2)
            .map(|(&inside, &d)| inside && d <= limit)
            .collect(),
    )?;

    let mut total_heart = Mask::empty(labels.dims(), labels.spacing())?;
    for part in HEART_PARTS {
        total_heart = total_heart.union(&base[&part]);
    }
    Ok(DerivedStructureSet {
        base,
        total_lung,
        lung_tissue,
        lung_boundary,
        total_heart,
    })
}

pub fn derive_structures(labels: &VoxelGrid, map: &LabelMap) -> Result<DerivedStructureSet> {
    derive_structures_with_band(labels, map, BOUNDARY_BAND_MM)
}

/// Volume in millilitres: voxel count times voxel volume.
pub fn measure_volume(mask: &Mask) -> f64 {
    let s = mask.spacing();
    mask.count() as f64 * (s[0] * s[1] * s[2]) / 1000.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityStat {
    Mean,
    Median,
}

/// HU statistic over the voxels of `mask`; `None` for an empty mask.
/// The median of an even count is the lower middle element.
pub fn measure_density(
    intensity: &VoxelGrid,
    mask: &Mask,
    stat: DensityStat,
) -> Result<Option<f64>> {
    let hu = intensity
        .hu()
        .ok_or_else(|| Error::InvalidGrid("density needs an intensity grid".into()))?;
    if intensity.dims() != mask.dims() {
        return Err(Error::InvalidGrid("intensity and mask dims differ".into()));
    }
    let mut values: Vec<i16> = hu
        .iter()
        .zip(mask.bits())
        .filter_map(|(&v, &m)| m.then_some(v))
        .collect();
    if values.is_empty() {
        return Ok(None);
    }
    Ok(Some(match stat {
        DensityStat::Mean => {
            let sum: i64 = values.iter().map(|&v| i64::from(v)).sum();
            sum as f64 / values.len() as f64
        }
        DensityStat::Median => {
            values.sort_unstable();
            f64::from(values[(values.len() - 1) / 2])
        }
    }))
}

/// Maximum inscribed sphere diameter (mm): twice the largest distance from a
/// structure voxel to the nearest voxel outside it. `None` for an empty mask.
pub fn measure_diameter(mask: &Mask) -> Option<f64> {
    if mask.is_empty() {
        return None;
    }
    let dist = edt::distance_to_complement(mask);
    let max = mask
        .bits()
        .iter()
        .zip(&dist)
        .filter_map(|(&m, &d)| m.then_some(d))
        .fold(0.0f64, f64::max);
    Some(2.0 * max)
}

/// Regions whose volume is reported.
pub const VOLUME_REGIONS: [Region; 8] = [
    Region::TotalLung,
    Region::Base(Structure::PleuralEffusion),
    Region::TotalHeart,
    Region::Base(Structure::LeftAtrium),
    Region::Base(Structure::RightAtrium),
    Region::Base(Structure::LeftVentricle),
    Region::Base(Structure::RightVentricle),
    Region::Base(Structure::PericardialEffusion),
];

/// Regions whose density is reported.
pub const DENSITY_REGIONS: [Region; 4] = [
    Region::LungTissue,
    Region::LungBoundary,
    Region::Base(Structure::VenaCavaInferior),
    Region::Base(Structure::RightAtrium),
];

/// Structures whose diameter is reported.
pub const DIAMETER_STRUCTURES: [Structure; 2] =
    [Structure::VenaCavaInferior, Structure::PulmonaryArtery];

/// Effusions may legitimately be absent: an empty mask is a real zero volume
/// rather than a segmentation failure.
fn absence_is_zero(region: Region) -> bool {
    matches!(
        region,
        Region::Base(Structure::PleuralEffusion) | Region::Base(Structure::PericardialEffusion)
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionMeasurement {
    pub volume_ml: f64,
    pub missing: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Measurements {
    pub volumes: BTreeMap<Region, RegionMeasurement>,
    pub density_mean: BTreeMap<Region, Option<f64>>,
    pub density_median: BTreeMap<Region, Option<f64>>,
    pub diameters: BTreeMap<Structure, Option<f64>>,
}

pub fn measure(intensity: &VoxelGrid, structures: &DerivedStructureSet) -> Result<Measurements> {
    let mut volumes = BTreeMap::new();
    let mut all_regions: Vec<Region> = Structure::ALL.iter().map(|&s| Region::Base(s)).collect();
    all_regions.extend([
        Region::TotalLung,
        Region::LungTissue,
        Region::LungBoundary,
        Region::TotalHeart,
    ]);
    for region in all_regions {
        let mask = structures.mask(region);
        volumes.insert(
            region,
            RegionMeasurement {
                volume_ml: measure_volume(mask),
                missing: mask.is_empty(),
            },
        );
    }
    let mut density_mean = BTreeMap::new();
    let mut density_median = BTreeMap::new();
    for region in DENSITY_REGIONS {
        let mask = structures.mask(region);
        density_mean.insert(region, measure_density(intensity, mask, DensityStat::Mean)?);
        density_median.insert(
            region,
            measure_density(intensity, mask, DensityStat::Median)?,
        );
    }
    let diameters = DIAMETER_STRUCTURES
        .iter()
        .map(|&s| (s, measure_diameter(&structures.base[&s])))
        .collect();
    Ok(Measurements {
        volumes,
        density_mean,
        density_median,
        diameters,
    })
}

/// Median and MAD of one volume feature on the training population.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZEntry {
    pub median: f64,
    pub mad: f64,
    pub degenerate: bool,
}

impl ZEntry {
    /// Fits on the non-missing values. `Ok(None)` when all are missing; an
    /// error when exactly one value is present.
    pub fn fit(name: &str, values: &[Option<f64>]) -> Result<Option<ZEntry>> {
        let present: Vec<f64> = values.iter().flatten().copied().collect();
        match present.len() {
            0 => Ok(None),
            1 => Err(Error::InvalidParam(format!(
                "`{name}` needs at least 2 training values for a Z reference"
            ))),
            _ => {
                let median = crate::stats::lower_median(&present).expect("non-empty");
                let deviations: Vec<f64> = present.iter().map(|v| libm::fabs(v - median)).collect();
                let mad = crate::stats::lower_median(&deviations).expect("non-empty");
                Ok(Some(ZEntry {
                    median,
                    mad,
                    degenerate: mad == 0.0,
                }))
            }
        }
    }

    /// `0.6745 · (x − median) / MAD`; `None` when the reference is degenerate.
    pub fn apply(&self, x: f64) -> Option<f64> {
        if self.degenerate {
            None
        } else {
            Some(MODIFIED_Z_CONSTANT * (x - self.median) / self.mad)
        }
    }
}

/// Per-volume-feature Z references fitted on training scans only.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ZReference {
    pub constant: f64,
    pub entries: BTreeMap<String, ZEntry>,
}

impl ZReference {
    pub fn fit(volumes: &[(String, Vec<Option<f64>>)]) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (name, values) in volumes {
            if let Some(entry) = ZEntry::fit(name, values)? {
                entries.insert(name.clone(), entry);
            }
        }
        Ok(Self {
            constant: MODIFIED_Z_CONSTANT,
            entries,
        })
    }

    /// Fits on the volume columns of `table` restricted to `rows`.
    pub fn fit_table(table: &FeatureTable, rows: &[usize]) -> Result<Self> {
        let mut volumes = Vec::new();
        for region in VOLUME_REGIONS {
            let name = volume_feature(region);
            let c = table
                .column_index(&name)
                .ok_or_else(|| Error::UnknownFeature(name.clone()))?;
            volumes.push((name, rows.iter().map(|&r| table.get(r, c)).collect()));
        }
        Self::fit(&volumes)
    }

    pub fn z(&self, volume_name: &str, x: Option<f64>) -> Option<f64> {
        let entry = self.entries.get(volume_name)?;
        entry.apply(x?)
    }

    /// Recomputes every Z column (and the absolute heart Z) of `table` in place.
    pub fn apply_to_table(&self, table: &FeatureTable) -> Result<FeatureTable> {
        let mut out = FeatureTable::new(table.names().to_vec())?;
        let abs_col = table.column_index(ABS_HEART_Z);
        for r in 0..table.n_rows() {
            let mut row = table.row(r).to_vec();
            for region in VOLUME_REGIONS {
                let vname = volume_feature(region);
                let zname = z_feature(region);
                let (Some(vc), Some(zc)) = (table.column_index(&vname), table.column_index(&zname))
                else {
                    continue;
                };
                row[zc] = self.z(&vname, row[vc]);
                if region == Region::TotalHeart {
                    if let Some(ac) = abs_col {
                        row[ac] = row[zc].map(libm::fabs);
                    }
                }
            }
            out.push_row(table.row_ids()[r].clone(), row)?;
        }
        Ok(out)
    }
}

/// Per-scan acquisition metadata needed for the feature vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanMeta {
    pub age: f64,
    pub sex: Sex,
    pub contrast: bool,
}

pub const ABS_HEART_Z: &str = "abs_z_total_heart";

pub fn volume_feature(region: Region) -> String {
    format!("vol_{}", region.name())
}

pub fn z_feature(region: Region) -> String {
    format!("z_{}", region.name())
}

pub fn diameter_feature(structure: Structure) -> String {
    format!("diam_{}", structure.name())
}

pub fn density_feature(region: Region, stat: DensityStat, contrast_only: bool) -> String {
    let prefix = match stat {
        DensityStat::Mean => "mean",
        DensityStat::Median => "median",
    };
    if contrast_only {
        format!("{prefix}_{}_contrast", region.name())
    } else {
        format!("{prefix}_{}", region.name())
    }
}

/// (name, numerator, denominator) for every volume ratio.
pub const RATIOS: [(&str, Region, Region); 7] = [
    ("ratio_heart", Region::TotalHeart, Region::TotalLung),
    (
        "ratio_pleural",
        Region::Base(Structure::PleuralEffusion),
        Region::TotalLung,
    ),
    (
        "ratio_left_atrium",
        Region::Base(Structure::LeftAtrium),
        Region::TotalHeart,
    ),
    (
        "ratio_right_atrium",
        Region::Base(Structure::RightAtrium),
        Region::TotalHeart,
    ),
    (
        "ratio_left_ventricle",
        Region::Base(Structure::LeftVentricle),
        Region::TotalHeart,
    ),
    (
        "ratio_right_ventricle",
        Region::Base(Structure::RightVentricle),
        Region::TotalHeart,
    ),
    (
        "ratio_pericardial",
        Region::Base(Structure::PericardialEffusion),
        Region::TotalHeart,
    ),
];

/// Every candidate feature, in table column order.
pub fn feature_names() -> Vec<String> {
    let mut names = vec!["age".to_string()];
    names.extend(VOLUME_REGIONS.iter().map(|&r| volume_feature(r)));
    names.extend(DIAMETER_STRUCTURES.iter().map(|&s| diameter_feature(s)));
    for contrast_only in [false, true] {
        for region in DENSITY_REGIONS {
            for stat in [DensityStat::Mean, DensityStat::Median] {
                names.push(density_feature(region, stat, contrast_only));
            }
        }
    }
    names.extend(RATIOS.iter().map(|(n, _, _)| n.to_string()));
    names.extend(VOLUME_REGIONS.iter().map(|&r| z_feature(r)));
    names.push(ABS_HEART_Z.to_string());
    names
}

/// The twelve features of the published final model.
pub const FINAL_FEATURES: [&str; 12] = [
    "mean_lung_boundary",
    "ratio_pleural",
    "vol_left_atrium",
    "vol_pleural_effusion",
    "median_lung_tissue",
    "mean_vena_cava_inferior",
    "vol_right_atrium",
    "ratio_right_ventricle",
    ABS_HEART_Z,
    "age",
    "mean_right_atrium",
    "diam_vena_cava_inferior",
];

/// Features removed by hand after the selection step (mean lung density and
/// total heart volume).
pub const PUBLISHED_DROP_LIST: [&str; 2] = ["mean_lung_tissue", "vol_total_heart"];

/// Named feature values for one scan.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub names: Vec<String>,
    pub values: Vec<Option<f64>>,
}

impl FeatureVector {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.names
            .iter()
            .position(|n| n == name)
            .and_then(|i| self.values[i])
    }
}

/// Assembles the full candidate feature vector. Missing measurements
/// propagate; Z features are missing when no reference is supplied.
pub fn build_feature_vector(
    meas: &Measurements,
    zref: Option<&ZReference>,
    meta: &ScanMeta,
) -> FeatureVector {
    let volume = |region: Region| -> Option<f64> {
        let m = meas.volumes.get(&region)?;
        if m.missing && !absence_is_zero(region) {
            None
        } else {
            Some(m.volume_ml)
        }
    };
    let mut values: BTreeMap<String, Option<f64>> = BTreeMap::new();
    values.insert("age".into(), Some(meta.age));
    for region in VOLUME_REGIONS {
        values.insert(volume_feature(region), volume(region));
    }
    for s in DIAMETER_STRUCTURES {
        values.insert(
            diameter_feature(s),
            meas.diameters.get(&s).copied().flatten(),
        );
    }
    for region in DENSITY_REGIONS {
        for (stat, table) in [
            (DensityStat::Mean, &meas.density_mean),
            (DensityStat::Median, &meas.density_median),
        ] {
            let v = table.get(&region).copied().flatten();
            values.insert(density_feature(region, stat, false), v);
            values.insert(
                density_feature(region, stat, true),
                if meta.contrast { v } else { None },
            );
        }
    }
    for (name, num, den) in RATIOS {
        let ratio = match (volume(num), volume(den)) {
            (Some(n), Some(d)) if d > 0.0 => Some(n / d),
            _ => None,
        };
        values.insert(name.into(), ratio);
    }
    for region in VOLUME_REGIONS {
        let z = zref.and_then(|z| z.z(&volume_feature(region), volume(region)));
        values.insert(z_feature(region), z);
    }
    let heart_z = values[&z_feature(Region::TotalHeart)];
    values.insert(ABS_HEART_Z.into(), heart_z.map(libm::fabs));

    let names = feature_names();
    let values = names.iter().map(|n| values[n]).collect();
    FeatureVector { names, values }
}

/// Axis-parallel projection: per-pixel count of mask voxels along `axis`,
/// linearly rescaled so the maximum maps to 255. Rows run over the lower
/// remaining axis, columns over the higher one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Projection {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

pub fn render_projection(mask: &Mask, axis: usize) -> Projection {
    assert!(axis < 3, "axis must be 0, 1 or 2");
    let dims = mask.dims();
    let (row_axis, col_axis) = match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    let (height, width) = (dims[row_axis], dims[col_axis]);
    let mut counts = vec![0u32; height * width];
    for i in 0..dims[0] {
        for j in 0..dims[1] {
            for k in 0..dims[2] {
                if mask.get(i, j, k) {
                    let idx = [i, j, k];
                    counts[idx[row_axis] * width + idx[col_axis]] += 1;
                }
            }
        }
    }
    let max = counts.iter().copied().max().unwrap_or(0);
    let pixels = counts
        .iter()
        .map(|&c| {
            if max == 0 {
                0
            } else {
                ((u64::from(c) * 255 + u64::from(max) / 2) / u64::from(max)) as u8
            }
        })
        .collect();
    Projection {
        width,
        height,
        pixels,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_from_fn(
        dims: [usize; 3],
        spacing: [f64; 3],
        f: impl Fn(usize, usize, usize) -> u8,
    ) -> VoxelGrid {
        let mut data = Vec::new();
        for i in 0..dims[0] {
            for j in 0..dims[1] {
                for k in 0..dims[2] {
                    data.push(f(i, j, k));
                }
            }
        }
        VoxelGrid::labels(dims, spacing, data).unwrap()
    }

    fn code(s: Structure) -> u8 {
        LabelMap::standard().code(s).unwrap()
    }

    #[test]
    fn disjoint_lung_and_effusion_union() {
        let lung = code(Structure::Lung);
        let eff = code(Structure::PleuralEffusion);
        // 10x10x10 lung block followed by a 2x10x10 effusion block.
        let g = grid_from_fn(
            [12, 10, 10],
            [1.0; 3],
            |i, _, _| if i < 10 { lung } else { eff },
        );
        let d = derive_structures(&g, &LabelMap::standard()).unwrap();
        assert_eq!(d.base[&Structure::Lung].count(), 1000);
        assert_eq!(d.base[&Structure::PleuralEffusion].count(), 200);
        assert_eq!(d.total_lung.count(), 1200);
        assert!(d
            .lung_tissue
            .is_disjoint(&d.base[&Structure::PleuralEffusion]));
        assert!(d.lung_boundary.is_subset_of(&d.lung_tissue));
    }

    #[test]
    fn missing_structure_in_map_is_an_error() {
        let map = LabelMap::new([(Structure::Lung, 1)]).unwrap();
        let g = grid_from_fn([2, 2, 2], [1.0; 3], |_, _, _| 0);
        assert_eq!(
            derive_structures(&g, &map).unwrap_err(),
            Error::MissingStructure("left_atrium".into())
        );
    }

    #[test]
    fn volume_arithmetic() {
        let m = Mask::from_fn([10, 10, 10], [1.0; 3], |_, _, _| true).unwrap();
        assert_eq!(measure_volume(&m), 1.0);
        let m = Mask::from_fn([10, 10, 10], [0.7, 0.7, 1.0], |_, _, _| true).unwrap();
        assert!((measure_volume(&m) - 0.49).abs() < 1e-12);
        let e = Mask::empty([3, 3, 3], [1.0; 3]).unwrap();
        assert_eq!(measure_volume(&e), 0.0);
    }

    #[test]
    fn density_constant_and_even_count() {
        let mask = Mask::from_fn([1, 1, 100], [1.0; 3], |_, _, _| true).unwrap();
        let g = VoxelGrid::intensity([1, 1, 100], [1.0; 3], vec![-700; 100]).unwrap();
        assert_eq!(
            measure_density(&g, &mask, DensityStat::Mean).unwrap(),
            Some(-700.0)
        );
        assert_eq!(
            measure_density(&g, &mask, DensityStat::Median).unwrap(),
            Some(-700.0)
        );

        let mask = Mask::from_fn([1, 1, 2], [1.0; 3], |_, _, _| true).unwrap();
        let g = VoxelGrid::intensity([1, 1, 2], [1.0; 3], vec![-600, -800]).unwrap();
        assert_eq!(
            measure_density(&g, &mask, DensityStat::Mean).unwrap(),
            Some(-700.0)
        );
        assert_eq!(
            measure_density(&g, &mask, DensityStat::Median).unwrap(),
            Some(-800.0)
        );

        let empty = Mask::empty([1, 1, 2], [1.0; 3]).unwrap();
        assert_eq!(
            measure_density(&g, &empty, DensityStat::Mean).unwrap(),
            None
        );
    }

    #[test]
    fn single_voxel_diameter() {
        let m = Mask::from_fn([3, 3, 3], [1.0; 3], |i, j, k| (i, j, k) == (1, 1, 1)).unwrap();
        assert!(measure_diameter(&m).unwrap() <= 2.0);
        assert_eq!(
            measure_diameter(&Mask::empty([3, 3, 3], [1.0; 3]).unwrap()),
            None
        );
    }

    #[test]
    fn zscore_reference_hand_values() {
        let vals: Vec<Option<f64>> = [100.0, 110.0, 120.0, 130.0, 140.0].map(Some).to_vec();
        let e = ZEntry::fit("v", &vals).unwrap().unwrap();
        assert_eq!((e.median, e.mad, e.degenerate), (120.0, 10.0, false));
        assert_eq!(e.apply(120.0), Some(0.0));
        assert!((e.apply(130.0).unwrap() - 0.6745).abs() < 1e-15);

        let c = ZEntry::fit("v", &[Some(50.0); 3]).unwrap().unwrap();
        assert!(c.degenerate);
        assert_eq!(c.apply(50.0), None);

        assert!(ZEntry::fit("v", &[Some(1.0), None]).is_err());
        assert_eq!(ZEntry::fit("v", &[None, None]).unwrap(), None);
    }

    fn meas_with(volumes: &[(Region, f64)], mean_vci: Option<f64>) -> Measurements {
        let mut m = Measurements {
            volumes: BTreeMap::new(),
            density_mean: BTreeMap::new(),
            density_median: BTreeMap::new(),
            diameters: BTreeMap::new(),
        };
        for &(r, v) in volumes {
            m.volumes.insert(
                r,
                RegionMeasurement {
                    volume_ml: v,
                    missing: v == 0.0,
                },
            );
        }
        m.density_mean
            .insert(Region::Base(Structure::VenaCavaInferior), mean_vci);
        m
    }

    #[test]
    fn feature_vector_ratios_and_contrast_twins() {
        let m = meas_with(
            &[
                (Region::Base(Structure::PleuralEffusion), 200.0),
                (Region::TotalLung, 4000.0),
                (Region::Base(Structure::RightVentricle), 120.0),
                (Region::TotalHeart, 600.0),
            ],
            Some(-50.0),
        );
        let meta = ScanMeta {
            age: 70.0,
            sex: Sex::M,
            contrast: false,
        };
        let fv = build_feature_vector(&m, None, &meta);
        assert_eq!(fv.get("ratio_pleural"), Some(0.05));
        assert!((fv.get("ratio_right_ventricle").unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(fv.get("mean_vena_cava_inferior"), Some(-50.0));
        assert_eq!(fv.get("mean_vena_cava_inferior_contrast"), None);
        assert_eq!(fv.get("age"), Some(70.0));

        let fv = build_feature_vector(
            &m,
            None,
            &ScanMeta {
                contrast: true,
                ..meta
            },
        );
        assert_eq!(fv.get("mean_vena_cava_inferior_contrast"), Some(-50.0));
    }

    #[test]
    fn zero_denominator_makes_ratio_missing() {
        let m = meas_with(
            &[
                (Region::Base(Structure::PleuralEffusion), 200.0),
                (Region::TotalLung, 0.0),
            ],
            None,
        );
        let fv = build_feature_vector(
            &m,
            None,
            &ScanMeta {
                age: 1.0,
                sex: Sex::F,
                contrast: true,
            },
        );
        assert_eq!(fv.get("ratio_pleural"), None);
        assert_eq!(fv.get("vol_total_lung"), None);
    }

    #[test]
    fn final_features_are_candidates() {
        let names = feature_names();
        for f in FINAL_FEATURES.iter().chain(PUBLISHED_DROP_LIST.iter()) {
            assert!(names.iter().any(|n| n == f), "{f}");
        }
        assert_eq!(names.len(), 43);
    }

    #[test]
    fn projections() {
        let empty = Mask::empty([4, 5, 6], [1.0; 3]).unwrap();
        assert!(render_projection(&empty, 2).pixels.iter().all(|&p| p == 0));
        let one = Mask::from_fn([4, 5, 6], [1.0; 3], |i, j, k| (i, j, k) == (1, 2, 3)).unwrap();
        let p = render_projection(&one, 2);
        assert_eq!((p.height, p.width), (4, 5));
        assert_eq!(p.pixels.iter().filter(|&&v| v != 0).count(), 1);
        assert_eq!(p.pixels[5 + 2], 255);
    }
}
