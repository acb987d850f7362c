//! Analytic ground truth: geometric phantoms with closed-form volumes and
//! diameters, and Gaussian synthetic cohorts with a known Bayes AUROC.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{LabelMap, Structure, VoxelGrid};
use crate::stats::{normal_cdf, normal_pdf};
use crate::table::{CohortManifest, FeatureTable, ManifestRow, Sex};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    /// Centre inside iff Σ((x − c)/a)² ≤ 1.
    Ellipsoid { semi_axes: [f64; 3] },
    /// Circular cross-section perpendicular to `axis`; `half_length` along it.
    Cylinder {
        axis: usize,
        radius: f64,
        half_length: f64,
    },
    /// Half-open per axis: `c − size/2 ≤ x < c + size/2`, so aligned boxes
    /// hit an exact voxel count.
    Box { size: [f64; 3] },
}

impl Shape {
    fn contains(&self, p: [f64; 3]) -> bool {
        match *self {
            Shape::Ellipsoid { semi_axes: a } => {
                (0..3).map(|d| (p[d] / a[d]) * (p[d] / a[d])).sum::<f64>() <= 1.0
            }
            Shape::Cylinder {
                axis,
                radius,
                half_length,
            } => {
                let r2: f64 = (0..3).filter(|&d| d != axis).map(|d| p[d] * p[d]).sum();
                r2 <= radius * radius && libm::fabs(p[axis]) <= half_length
            }
            Shape::Box { size } => (0..3).all(|d| -size[d] / 2.0 <= p[d] && p[d] < size[d] / 2.0),
        }
    }

    fn half_extent(&self) -> [f64; 3] {
        match *self {
            Shape::Ellipsoid { semi_axes } => semi_axes,
            Shape::Cylinder {
                axis,
                radius,
                half_length,
            } => {
                let mut e = [radius; 3];
                e[axis] = half_length;
                e
            }
            Shape::Box { size } => [size[0] / 2.0, size[1] / 2.0, size[2] / 2.0],
        }
    }

    /// Closed-form volume in mm³.
    pub fn volume_mm3(&self) -> f64 {
        match *self {
            Shape::Ellipsoid { semi_axes: a } => 4.0 / 3.0 * PI * a[0] * a[1] * a[2],
            Shape::Cylinder {
                radius,
                half_length,
                ..
            } => PI * radius * radius * 2.0 * half_length,
            Shape::Box { size } => size[0] * size[1] * size[2],
        }
    }

    /// Diameter of the largest inscribed sphere, in mm.
    pub fn inscribed_diameter(&self) -> f64 {
        match *self {
            Shape::Ellipsoid { semi_axes: a } => 2.0 * a[0].min(a[1]).min(a[2]),
            Shape::Cylinder {
                radius,
                half_length,
                ..
            } => 2.0 * radius.min(half_length),
            Shape::Box { size } => size[0].min(size[1]).min(size[2]),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Shape::Ellipsoid { semi_axes } => semi_axes.iter().all(|&v| v > 0.0 && v.is_finite()),
            Shape::Cylinder {
                axis,
                radius,
                half_length,
            } => {
                axis < 3
                    && radius > 0.0
                    && half_length > 0.0
                    && radius.is_finite()
                    && half_length.is_finite()
            }
            Shape::Box { size } => size.iter().all(|&v| v > 0.0 && v.is_finite()),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidPhantom(format!(
                "invalid shape parameters {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomStructure {
    pub structure: Structure,
    pub shape: Shape,
    /// Centre in mm; voxel (i, j, k) sits at (i, j, k) · spacing.
    pub center: [f64; 3],
    pub fill_hu: i16,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    #[serde(default = "default_background")]
    pub background_hu: i16,
    /// Painted in order; later structures overwrite earlier ones.
    pub structures: Vec<PhantomStructure>,
}

fn default_background() -> i16 {
    -1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomTruth {
    pub structure: Structure,
    pub volume_ml: f64,
    pub diameter_mm: f64,
    pub fill_hu: i16,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub intensity: VoxelGrid,
    pub labels: VoxelGrid,
    pub label_map: LabelMap,
    pub truths: Vec<PhantomTruth>,
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dims.contains(&0) || !self.spacing.iter().all(|&s| s > 0.0 && s.is_finite()) {
            return Err(Error::InvalidPhantom(
                "dims must be positive and spacing finite and positive".into(),
            ));
        }
        for (n, s) in self.structures.iter().enumerate() {
            s.shape.validate()?;
            let e = s.shape.half_extent();
            for d in 0..3 {
                let hi = (self.dims[d] - 1) as f64 * self.spacing[d];
                if s.center[d] - e[d] < 0.0 || s.center[d] + e[d] > hi {
                    return Err(Error::InvalidPhantom(format!(
                        "structure {n} ({}) exceeds the grid along axis {d}",
                        s.structure
                    )));
                }
            }
        }
        Ok(())
    }

    /// Same physical geometry sampled at half the spacing.
    pub fn refined(&self) -> Self {
        Self {
            dims: self.dims.map(|d| 2 * d - 1),
            spacing: self.spacing.map(|s| s / 2.0),
            ..self.clone()
        }
    }

    /// One structure per shape kind, well separated, on a 1 mm grid:
    /// ellipsoid (30, 20, 10) mm, sphere r = 10 mm, cylinder r = 10 mm
    /// length 30 mm, and a 10 mm cube. The cylinder center sits between
    /// voxel centers along its axis so its end caps do not fall on a voxel
    /// plane.
    pub fn oracle_suite() -> Self {
        let s = |structure, shape, center, fill_hu| PhantomStructure {
            structure,
            shape,
            center,
            fill_hu,
        };
        Self {
            dims: [96, 64, 48],
            spacing: [1.0, 1.0, 1.0],
            background_hu: -1000,
            structures: vec![
                s(
                    Structure::Lung,
                    Shape::Ellipsoid {
                        semi_axes: [30.0, 20.0, 10.0],
                    },
                    [33.0, 23.0, 13.0],
                    -850,
                ),
                s(
                    Structure::LeftVentricle,
                    Shape::Ellipsoid {
                        semi_axes: [10.0, 10.0, 10.0],
                    },
                    [80.0, 15.0, 15.0],
                    40,
                ),
                s(
                    Structure::VenaCavaInferior,
                    Shape::Cylinder {
                        axis: 2,
                        radius: 10.0,
                        half_length: 15.0,
                    },
                    [20.0, 53.0, 28.5],
                    120,
                ),
                s(
                    Structure::RightAtrium,
                    Shape::Box {
                        size: [10.0, 10.0, 10.0],
                    },
                    [70.0, 50.0, 35.0],
                    60,
                ),
            ],
        }
    }
}

/// Voxelizes by centre-point test and reports each structure's closed-form
/// volume and inscribed diameter. Codes follow [`LabelMap::standard`].
pub fn build_phantom(spec: &PhantomSpec) -> Result<Phantom> {
    spec.validate()?;
    let map = LabelMap::standard();
    let [d0, d1, d2] = spec.dims;
    let n = d0 * d1 * d2;
    let mut hu = vec![spec.background_hu; n];
    let mut codes = vec![0u8; n];
    for s in &spec.structures {
        let code = map.require(s.structure)?;
        let e = s.shape.half_extent();
        // Only the bounding box can contain voxels.
        let range = |d: usize| {
            let lo = libm::floor((s.center[d] - e[d]) / spec.spacing[d]).max(0.0) as usize;
            let hi =
                (libm::ceil((s.center[d] + e[d]) / spec.spacing[d]) as usize).min(spec.dims[d] - 1);
            lo..=hi
        };
        for i in range(0) {
            for j in range(1) {
                for k in range(2) {
                    let p = [
                        i as f64 * spec.spacing[0] - s.center[0],
                        j as f64 * spec.spacing[1] - s.center[1],
                        k as f64 * spec.spacing[2] - s.center[2],
                    ];
                    if s.shape.contains(p) {
                        let idx = (i * d1 + j) * d2 + k;
                        hu[idx] = s.fill_hu;
                        codes[idx] = code;
                    }
                }
            }
        }
    }
    let truths = spec
        .structures
        .iter()
        .map(|s| PhantomTruth {
            structure: s.structure,
            volume_ml: s.shape.volume_mm3() / 1000.0,
            diameter_mm: s.shape.inscribed_diameter(),
            fill_hu: s.fill_hu,
        })
        .collect();
    Ok(Phantom {
        intensity: VoxelGrid::intensity(spec.dims, spec.spacing, hu)?,
        labels: VoxelGrid::labels(spec.dims, spec.spacing, codes)?,
        label_map: map,
        truths,
    })
}

/// Class-conditional Gaussian for one feature; both classes share `sd`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureGen {
    pub name: String,
    pub mean_neg: f64,
    pub mean_pos: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortGenSpec {
    pub n_subjects: usize,
    pub prevalence: f64,
    pub features: Vec<FeatureGen>,
    /// Per-scan noise sd as a fraction of each feature's `sd`.
    pub scan_noise: f64,
    /// Probability that any single feature cell is missing.
    pub missing_rate: f64,
    /// Probability that a subject has a second study.
    pub second_study_rate: f64,
    pub max_scans_per_study: usize,
    pub male_fraction: f64,
    pub age_mean: f64,
    pub age_sd: f64,
    pub seed: u64,
}

impl Default for CohortGenSpec {
    fn default() -> Self {
        Self {
            n_subjects: 1000,
            prevalence: 0.077,
            features: Vec::new(),
            scan_noise: 0.1,
            missing_rate: 0.0,
            second_study_rate: 0.094,
            max_scans_per_study: 3,
            male_fraction: 0.5,
            age_mean: 70.0,
            age_sd: 12.0,
            seed: 0,
        }
    }
}

impl CohortGenSpec {
    /// Cohort at the published scale and prevalence: `informative` features
    /// sharing a total Mahalanobis separation chosen so the Bayes AUROC is
    /// `target_auroc`, plus `noise` uninformative features.
    pub fn with_target_auroc(
        n_subjects: usize,
        prevalence: f64,
        target_auroc: f64,
        informative: usize,
        noise: usize,
        seed: u64,
    ) -> Self {
        let d = separation_for_auroc(target_auroc);
        let per = d / libm::sqrt(informative as f64);
        let mut features: Vec<FeatureGen> = (0..informative)
            .map(|i| FeatureGen {
                name: format!("signal_{i}"),
                mean_neg: 0.0,
                mean_pos: per * (1.0 + i as f64),
                sd: 1.0 + i as f64,
            })
            .collect();
        features.extend((0..noise).map(|i| FeatureGen {
            name: format!("noise_{i}"),
            mean_neg: 10.0 * i as f64,
            mean_pos: 10.0 * i as f64,
            sd: 2.0,
        }));
        Self {
            n_subjects,
            prevalence,
            features,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParam(m));
        if self.n_subjects == 0 {
            return bad("n_subjects must be positive".into());
        }
        if !(self.prevalence > 0.0 && self.prevalence < 1.0) {
            return bad(format!(
                "prevalence must lie in (0, 1), got {}",
                self.prevalence
            ));
        }
        if let Some(f) = self
            .features
            .iter()
            .find(|f| !(f.sd > 0.0 && f.sd.is_finite()))
        {
            return bad(format!("feature `{}` needs a positive sd", f.name));
        }
        for (name, v) in [
            ("missing_rate", self.missing_rate),
            ("second_study_rate", self.second_study_rate),
            ("male_fraction", self.male_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if !(self.scan_noise >= 0.0 && self.age_sd >= 0.0) || self.max_scans_per_study == 0 {
            return bad(
                "scan_noise and age_sd must be non-negative, max_scans_per_study positive".into(),
            );
        }
        Ok(())
    }
}

/// Mahalanobis separation of the class-conditional Gaussians.
pub fn separation(spec: &CohortGenSpec) -> f64 {
    libm::sqrt(
        spec.features
            .iter()
            .map(|f| {
                let z = (f.mean_pos - f.mean_neg) / f.sd;
                z * z
            })
            .sum(),
    )
}

/// d with Φ(d/√2) = auroc, by bisection.
pub fn separation_for_auroc(auroc: f64) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 40.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if normal_cdf(mid / core::f64::consts::SQRT_2) < auroc {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// AUROC of the true log-likelihood ratio for separation `d`:
/// ∫ φ(s) Φ(s + d) ds by composite Simpson on [−12, 12].
pub fn bayes_auroc_for_separation(d: f64) -> f64 {
    let n = 4800;
    let (a, b) = (-12.0, 12.0);
    let h = (b - a) / n as f64;
    let f = |s: f64| normal_pdf(s) * normal_cdf(s + d);
    let mut acc = f(a) + f(b);
    for i in 1..n {
        acc += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    acc * h / 3.0
}

pub fn bayes_auroc(spec: &CohortGenSpec) -> Result<f64> {
    spec.validate()?;
    Ok(bayes_auroc_for_separation(separation(spec)))
}

#[derive(Debug, Clone)]
pub struct GeneratedCohort {
    pub manifest: CohortManifest,
    /// One row per scan, keyed by scan id.
    pub features: FeatureTable,
    pub study_labels: BTreeMap<String, bool>,
    pub subject_labels: BTreeMap<String, bool>,
}

const BASE_TIMESTAMP: i64 = 1_420_070_400; // 2015-01-01T00:00:00Z

/// Seeded synthetic cohort. Each subject draws a class; each of its studies
/// draws a latent feature vector from that class; each scan of the study is
/// the latent plus small noise. Subject `i` uses RNG stream `i`.
pub fn generate_cohort(spec: &CohortGenSpec) -> Result<GeneratedCohort> {
    spec.validate()?;
    let names: Vec<String> = spec.features.iter().map(|f| f.name.clone()).collect();
    let mut table = FeatureTable::new(names)?;
    let mut rows = Vec::new();
    let mut study_labels = BTreeMap::new();
    let mut subject_labels = BTreeMap::new();
    let width = format!("{}", spec.n_subjects).len().max(5);
    for s in 0..spec.n_subjects {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(s as u64);
        let subject = format!("S{s:0width$}");
        let positive = rng.random::<f64>() < spec.prevalence;
        let sex = if rng.random::<f64>() < spec.male_fraction {
            Sex::M
        } else {
            Sex::F
        };
        let z: f64 = rng.sample(StandardNormal);
        let age = libm::round((spec.age_mean + spec.age_sd * z).clamp(18.0, 105.0));
        let n_studies = if rng.random::<f64>() < spec.second_study_rate {
            2
        } else {
            1
        };
        let first = BASE_TIMESTAMP + rng.random_range(0..4 * 365 * 86_400i64);
        subject_labels.insert(subject.clone(), positive);
        for st in 0..n_studies {
            let study = format!("{subject}-{}", st + 1);
            let ts = first + st as i64 * rng.random_range(30 * 86_400..730 * 86_400i64);
            let latent: Vec<f64> = spec
                .features
                .iter()
                .map(|f| {
                    let z: f64 = rng.sample(StandardNormal);
                    (if positive { f.mean_pos } else { f.mean_neg }) + f.sd * z
                })
                .collect();
            let contrast = rng.random::<f64>() < 0.8;
            let n_scans = rng.random_range(1..=spec.max_scans_per_study);
            for sc in 0..n_scans {
                let scan = format!("{study}-{}", sc + 1);
                let values = spec
                    .features
                    .iter()
                    .zip(&latent)
                    .map(|(f, &l)| {
                        let z: f64 = rng.sample(StandardNormal);
                        let v = l + spec.scan_noise * f.sd * z;
                        (rng.random::<f64>() >= spec.missing_rate).then_some(v)
                    })
                    .collect();
                table.push_row(scan.clone(), values)?;
                rows.push(ManifestRow {
                    subject_id: subject.clone(),
                    study_id: study.clone(),
                    scan_id: scan.clone(),
                    timestamp: ts + 60 * sc as i64,
                    sex,
                    age,
                    contrast,
                    volume_path: format!("volumes/{scan}"),
                    mask_path: format!("masks/{scan}"),
                });
            }
            study_labels.insert(study, positive);
        }
    }
    Ok(GeneratedCohort {
        manifest: CohortManifest::new(rows)?,
        features: table,
        study_labels,
        subject_labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volumetry::{measure_diameter, measure_volume};

    #[test]
    fn closed_form_values() {
        let e = Shape::Ellipsoid {
            semi_axes: [30.0, 20.0, 10.0],
        };
        assert!((e.volume_mm3() - 25132.741228718345).abs() < 1e-9);
        let s = Shape::Ellipsoid {
            semi_axes: [10.0; 3],
        };
        assert_eq!(s.inscribed_diameter(), 20.0);
    }

    #[test]
    fn box_is_exact_and_sphere_diameter_close() {
        let p = build_phantom(&PhantomSpec::oracle_suite()).unwrap();
        let map = &p.label_map;
        let cube = p
            .labels
            .mask_of(map.code(Structure::RightAtrium).unwrap())
            .unwrap();
        assert_eq!(cube.count(), 1000);
        let sphere = p
            .labels
            .mask_of(map.code(Structure::LeftVentricle).unwrap())
            .unwrap();
        let d = measure_diameter(&sphere).unwrap();
        assert!((d - 20.0).abs() <= 2.0, "{d}");
        let ell = p
            .labels
            .mask_of(map.code(Structure::Lung).unwrap())
            .unwrap();
        let v = measure_volume(&ell);
        assert!(
            (v - 25.132741228718345).abs() / 25.132741228718345 < 0.02,
            "{v}"
        );
    }

    #[test]
    fn out_of_bounds_shape_is_rejected() {
        let mut spec = PhantomSpec::oracle_suite();
        spec.structures[0].center[0] = 5.0;
        assert!(matches!(
            build_phantom(&spec),
            Err(Error::InvalidPhantom(_))
        ));
    }

    #[test]
    fn bayes_closed_forms() {
        let one = bayes_auroc_for_separation(1.0);
        assert!((one - 0.7602499389065233).abs() < 1e-9);
        assert!((bayes_auroc_for_separation(0.0) - 0.5).abs() < 1e-12);
        let two = bayes_auroc_for_separation(libm::sqrt(2.0));
        assert!((two - 0.8413447460685429).abs() < 1e-9);
        let d = separation_for_auroc(0.87);
        assert!((bayes_auroc_for_separation(d) - 0.87).abs() < 1e-9);
    }

    #[test]
    fn cohort_prevalence_missingness_and_determinism() {
        let mut spec = CohortGenSpec::with_target_auroc(4672, 0.077, 0.87, 4, 2, 5);
        spec.missing_rate = 0.1;
        let c = generate_cohort(&spec).unwrap();
        let pos = c.subject_labels.values().filter(|&&y| y).count();
        assert!((330..=390).contains(&pos), "{pos}");
        let cells = c.features.n_rows() * c.features.n_features();
        let rate = c.features.missing_count() as f64 / cells as f64;
        assert!((rate - 0.1).abs() < 0.01, "{rate}");
        let again = generate_cohort(&spec).unwrap();
        assert_eq!(c.features, again.features);
    }
}
