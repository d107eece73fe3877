//! Segmentation overlap, surface distances, calcification-to-heart distance,
//! tet quality and the JSON report.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geom::{tet_signed_volume, TriangleDistanceIndex};
use crate::mesh::{extract_component_surface, Component, TetMesh, TriSurface};
use crate::spatial::PointIndex;
use crate::voxelgrid::{sample_surface, LabelGrid};
use crate::Vec3;

pub const REPORT_SCHEMA: &str = "cmac-report/1";
/// Default number of area-uniform samples per surface.
pub const N_SAMPLES: usize = 10_000;

/// `2|y ∩ ŷ| / (|y| + |ŷ|)`, 1 when both are empty.
pub fn dice(y: &LabelGrid, yhat: &LabelGrid) -> Result<f64> {
    y.check_congruent(yhat)?;
    let (mut both, mut sum) = (0usize, 0usize);
    for (&a, &b) in y.data().iter().zip(yhat.data()) {
        let (a, b) = (a != 0, b != 0);
        both += (a && b) as usize;
        sum += a as usize + b as usize;
    }
    Ok(if sum == 0 {
        1.0
    } else {
        2.0 * both as f64 / sum as f64
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceDistances {
    /// Largest nearest-neighbour distance in either direction (or the chosen percentile).
    pub hd: f64,
    /// Mean of the two directed mean nearest-neighbour distances.
    pub cd: f64,
}

fn directed(from: &[Vec3], to: &PointIndex) -> Vec<f64> {
    from.iter()
        .map(|p| to.nearest(p).map_or(f64::INFINITY, |(_, d)| d))
        .collect()
}

fn percentile(mut v: Vec<f64>, q: f64) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = ((q / 100.0) * (v.len() - 1) as f64).round() as usize;
    v[k.min(v.len() - 1)]
}

/// Symmetric distances between point clouds. `hd_percentile` replaces the
/// maximum with a percentile of the pooled nearest-neighbour distances.
pub fn cloud_distances(
    a: &[Vec3],
    b: &[Vec3],
    hd_percentile: Option<f64>,
) -> Option<SurfaceDistances> {
    if a.is_empty() || b.is_empty() {
        return None;
    }
    let da = directed(a, &PointIndex::new(b));
    let db = directed(b, &PointIndex::new(a));
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let cd = 0.5 * (mean(&da) + mean(&db));
    let hd = match hd_percentile {
        None => da.iter().chain(&db).cloned().fold(0.0, f64::max),
        Some(q) => percentile(da.into_iter().chain(db).collect(), q),
    };
    Some(SurfaceDistances { hd, cd })
}

/// Distances between area-uniform samples of two surfaces (same seed for both).
pub fn surface_distances(
    a: &TriSurface,
    b: &TriSurface,
    n_samples: usize,
    seed: u64,
) -> Option<SurfaceDistances> {
    cloud_distances(
        &sample_surface(a, n_samples, seed),
        &sample_surface(b, n_samples, seed),
        None,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdHeart {
    pub value: f64,
    pub empty: bool,
}

/// Mean distance from calcification surface samples to the aortic root surface.
pub fn cd_heart(
    calc: &TriSurface,
    heart: &TetMesh,
    n_samples: usize,
    seed: u64,
) -> Result<CdHeart> {
    let root = extract_component_surface(heart, &Component::AORTIC_ROOT)?.surface;
    Ok(cd_heart_to(calc, &root, n_samples, seed))
}

/// [`cd_heart`] against an already extracted heart surface.
pub fn cd_heart_to(
    calc: &TriSurface,
    heart_surface: &TriSurface,
    n_samples: usize,
    seed: u64,
) -> CdHeart {
    let pts = sample_surface(calc, n_samples, seed);
    if pts.is_empty() {
        return CdHeart {
            value: 0.0,
            empty: true,
        };
    }
    let index = TriangleDistanceIndex::new(&heart_surface.vertices, &heart_surface.faces);
    let value = pts.iter().map(|p| index.distance(p)).sum::<f64>() / pts.len() as f64;
    CdHeart {
        value,
        empty: false,
    }
}

/// `6√2 · V / ℓ_rms³`: 1 for the regular tet, 0 when flat, negative when inverted.
pub fn scaled_jacobian(p: [&Vec3; 4]) -> f64 {
    let v = tet_signed_volume(p[0], p[1], p[2], p[3]);
    let mut s = 0.0;
    for i in 0..4 {
        for j in i + 1..4 {
            s += (p[i] - p[j]).norm_squared();
        }
    }
    let rms = (s / 6.0).sqrt();
    if rms == 0.0 {
        return 0.0;
    }
    6.0 * std::f64::consts::SQRT_2 * v / (rms * rms * rms)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JacobianStats {
    pub min: f64,
    pub mean: f64,
    /// Ten equal bins over [0, 1]; non-positive values land in the first.
    pub histogram: [usize; 10],
    pub n: usize,
}

pub fn jacobian_stats(mesh: &TetMesh) -> Option<JacobianStats> {
    if mesh.tets.is_empty() {
        return None;
    }
    let mut hist = [0usize; 10];
    let (mut min, mut sum) = (f64::INFINITY, 0.0);
    for t in &mesh.tets {
        let q = scaled_jacobian(t.map(|i| &mesh.vertices[i]));
        min = min.min(q);
        sum += q;
        hist[((q.max(0.0) * 10.0) as usize).min(9)] += 1;
    }
    Some(JacobianStats {
        min,
        mean: sum / mesh.tets.len() as f64,
        histogram: hist,
        n: mesh.tets.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Ok,
    /// No calcification left after post-processing; nothing was meshed.
    Empty,
    Failed,
}

/// Everything measured for one case. Geometry fields are `null` when the
/// corresponding stage did not run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub schema: String,
    pub status: RunStatus,
    pub failed_stage: Option<String>,
    pub error: Option<String>,
    /// Raw segmentation vs post-processed segmentation on the input grid.
    pub dice: Option<f64>,
    /// Post-processed segmentation isosurface vs final calcification surface.
    pub hd: Option<f64>,
    pub cd: Option<f64>,
    pub cd_heart: Option<f64>,
    pub cd_heart_raw: Option<f64>,
    pub min_scaled_jacobian: Option<f64>,
    pub mean_scaled_jacobian: Option<f64>,
    pub jacobian_histogram: Option<[usize; 10]>,
    pub merged_nodes: Option<usize>,
    pub components_kept: Option<usize>,
    pub components_dropped: Option<usize>,
    pub unmerged_near_heart: Option<usize>,
    pub tet_success: bool,
    pub background_success: Option<bool>,
    pub selected_iterate: Option<usize>,
    pub n_iterates: Option<usize>,
    pub dmtet_initial_loss: Option<f64>,
    pub dmtet_final_loss: Option<f64>,
    pub dmtet_watertight: Option<bool>,
    pub dmtet_wedges_filled: Option<usize>,
    pub contact_vertices: Option<usize>,
    pub distance_kind: String,
    pub n_samples: usize,
    /// Wall-clock seconds per stage. Kept out of `report.json` so that file is
    /// reproducible byte for byte; the pipeline writes it to `timings.json`.
    #[serde(skip)]
    pub timings: BTreeMap<String, f64>,
}

impl QualityReport {
    pub fn new(n_samples: usize) -> Self {
        QualityReport {
            schema: REPORT_SCHEMA.to_string(),
            status: RunStatus::Ok,
            failed_stage: None,
            error: None,
            dice: None,
            hd: None,
            cd: None,
            cd_heart: None,
            cd_heart_raw: None,
            min_scaled_jacobian: None,
            mean_scaled_jacobian: None,
            jacobian_histogram: None,
            merged_nodes: None,
            components_kept: None,
            components_dropped: None,
            unmerged_near_heart: None,
            tet_success: false,
            background_success: None,
            selected_iterate: None,
            n_iterates: None,
            dmtet_initial_loss: None,
            dmtet_final_loss: None,
            dmtet_watertight: None,
            dmtet_wedges_filled: None,
            contact_vertices: None,
            distance_kind: "point-to-sample".to_string(),
            n_samples,
            timings: BTreeMap::new(),
        }
    }

    pub fn set_jacobian(&mut self, s: Option<&JacobianStats>) {
        self.min_scaled_jacobian = s.map(|s| s.min);
        self.mean_scaled_jacobian = s.map(|s| s.mean);
        self.jacobian_histogram = s.map(|s| s.histogram);
    }

    pub fn total_time(&self) -> f64 {
        self.timings.values().sum()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn timings_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.timings)? + "\n")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::icosphere;
    use crate::voxelgrid::VoxelGrid;
    use rand::{Rng, SeedableRng};

    #[test]
    fn dice_cases() {
        let mut a = VoxelGrid::filled([4, 1, 1], Vec3::repeat(1.0), Vec3::zeros(), 0u8).unwrap();
        let mut b = a.clone();
        assert_eq!(dice(&a, &b).unwrap(), 1.0);
        a.set(0, 0, 0, 1);
        a.set(1, 0, 0, 1);
        b.set(2, 0, 0, 1);
        b.set(3, 0, 0, 1);
        assert_eq!(dice(&a, &b).unwrap(), 0.0);
        b.set(2, 0, 0, 0);
        b.set(1, 0, 0, 1);
        assert!((dice(&a, &b).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(dice(&a, &b).unwrap(), dice(&b, &a).unwrap());
        let mut c = b.clone();
        c.set(0, 0, 0, 1);
        c.set(3, 0, 0, 0);
        // |a ∩ c| = 2, |a| = |c| = 2
        assert_eq!(dice(&a, &c).unwrap(), 1.0);
    }

    #[test]
    fn half_overlap_gives_two_thirds() {
        let mut a = VoxelGrid::filled([3, 1, 1], Vec3::repeat(1.0), Vec3::zeros(), 0u8).unwrap();
        let mut b = a.clone();
        a.set(0, 0, 0, 1);
        a.set(1, 0, 0, 1);
        b.set(1, 0, 0, 1);
        b.set(2, 0, 0, 1);
        assert!((dice(&a, &b).unwrap() - 0.5).abs() < 1e-15);
        let mut c = VoxelGrid::filled([4, 1, 1], Vec3::repeat(1.0), Vec3::zeros(), 0u8).unwrap();
        let mut d = c.clone();
        for i in 0..3 {
            c.set(i, 0, 0, 1);
            d.set(i + 1, 0, 0, 1);
        }
        assert!((dice(&c, &d).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn distances_match_brute_force() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut cloud = |n: usize| -> Vec<Vec3> {
            (0..n)
                .map(|_| Vec3::new(rng.random(), rng.random(), rng.random()))
                .collect()
        };
        let (a, b) = (cloud(100), cloud(100));
        let nn = |p: &Vec3, q: &[Vec3]| {
            q.iter()
                .map(|x| (p - x).norm())
                .fold(f64::INFINITY, f64::min)
        };
        let da: Vec<f64> = a.iter().map(|p| nn(p, &b)).collect();
        let db: Vec<f64> = b.iter().map(|p| nn(p, &a)).collect();
        let cd = 0.5 * (da.iter().sum::<f64>() / 100.0 + db.iter().sum::<f64>() / 100.0);
        let hd = da.iter().chain(&db).cloned().fold(0.0, f64::max);
        let d = cloud_distances(&a, &b, None).unwrap();
        assert_eq!(d.hd, hd);
        assert!((d.cd - cd).abs() < 1e-15);
        let s = cloud_distances(&b, &a, None).unwrap();
        assert_eq!(s.hd, d.hd);
        assert!((s.cd - d.cd).abs() < 1e-15);
        assert!(cloud_distances(&a, &b, Some(95.0)).unwrap().hd <= hd);
    }

    #[test]
    fn concentric_spheres() {
        let a = icosphere(Vec3::zeros(), 1.0, 4);
        let b = icosphere(Vec3::zeros(), 1.1, 4);
        let d = surface_distances(&a, &b, 2000, 1).unwrap();
        assert!((d.cd - 0.1).abs() < 0.01, "{d:?}");
        assert!(d.hd >= d.cd && d.hd < 0.13);
        let same = surface_distances(&a, &a, 2000, 1).unwrap();
        assert_eq!((same.hd, same.cd), (0.0, 0.0));
    }

    #[test]
    fn jacobian_of_regular_flat_and_sliver() {
        let s = 1.0 / 2f64.sqrt();
        let reg = [
            Vec3::new(1., 0., -s),
            Vec3::new(-1., 0., -s),
            Vec3::new(0., 1., s),
            Vec3::new(0., -1., s),
        ];
        let q = scaled_jacobian([&reg[0], &reg[1], &reg[2], &reg[3]]);
        assert!((q.abs() - 1.0).abs() < 1e-12, "{q}");
        let flat = [
            Vec3::zeros(),
            Vec3::new(1., 0., 0.),
            Vec3::new(0., 1., 0.),
            Vec3::new(1., 1., 0.),
        ];
        assert_eq!(
            scaled_jacobian([&flat[0], &flat[1], &flat[2], &flat[3]]),
            0.0
        );
        let sliver = [
            Vec3::zeros(),
            Vec3::new(1., 0., 0.),
            Vec3::new(0., 1., 0.),
            Vec3::new(1., 1., 0.05),
        ];
        let qs = scaled_jacobian([&sliver[0], &sliver[1], &sliver[2], &sliver[3]]).abs();
        assert!(qs < q.abs() && qs > 0.0);
        // invariant under rigid motion and scaling
        let moved: Vec<Vec3> = reg
            .iter()
            .map(|p| Vec3::new(p.y, -p.x, p.z) * 3.5 + Vec3::new(1., 2., 3.))
            .collect();
        assert!((scaled_jacobian([&moved[0], &moved[1], &moved[2], &moved[3]]) - q).abs() < 1e-12);
    }

    #[test]
    fn empty_calcification_has_flagged_zero_cd_heart() {
        let heart = icosphere(Vec3::zeros(), 1.0, 1);
        let r = cd_heart_to(&TriSurface::default(), &heart, 100, 0);
        assert!(r.empty && r.value == 0.0);
        let calc = icosphere(Vec3::new(0., 0., 3.), 0.5, 2);
        let r = cd_heart_to(&calc, &heart, 500, 0);
        assert!(!r.empty && r.value > 1.4 && r.value < 2.6);
    }

    #[test]
    fn report_json_has_schema_and_nulls() {
        let mut r = QualityReport::new(N_SAMPLES);
        r.timings.insert("a".into(), 1.0);
        r.timings.insert("b".into(), 2.0);
        let j: serde_json::Value = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(j["schema"], REPORT_SCHEMA);
        assert!(j["hd"].is_null());
        assert!(j.get("timings").is_none());
        assert!(r.total_time() >= 2.0);
    }
}
