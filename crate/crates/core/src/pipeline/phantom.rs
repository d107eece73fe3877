//! Synthetic hearts with calcification blobs for tests and benchmarks.
//!
//! Both kinds are Kuhn-split lattices whose nodes sit on voxel corners, so the
//! heart stencil is exactly the set of labelled cells. Geometry scales with the
//! field of view up to [`MAX_EXTENT`], roughly an aortic root in a cardiac crop.
//!
//! * `sphere-shell`: a ball whose upper cap is split into three leaflet sectors;
//!   the blob grows in the spherical shell just outside the cap.
//! * `tube-leaflets`: an open tube closed at mid-height by a disc of three
//!   leaflet sectors; the blob sits on top of the disc, inside the lumen.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CmacError, Result};
use crate::mesh::{lattice_tet_mesh, Component, TetMesh};
use crate::voxelgrid::{dilate, stencil_tets, Kernel, LabelGrid, ScalarGrid, VoxelGrid};
use crate::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
#[value(rename_all = "kebab-case")]
pub enum PhantomKind {
    SphereShell,
    TubeLeaflets,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomSpec {
    pub kind: PhantomKind,
    /// Voxels per axis.
    pub n: usize,
    pub spacing: f64,
    /// Empty voxels between each blob and the heart stencil.
    pub gap: usize,
    /// Target voxel volume of each blob in mm³; `None` draws one from the seed.
    pub volume: Option<f64>,
    pub blobs: usize,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            kind: PhantomKind::SphereShell,
            n: 32,
            spacing: 1.25,
            gap: 0,
            volume: None,
            blobs: 1,
            seed: 0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n < 16 || !(self.spacing.is_finite() && self.spacing > 0.0) || self.blobs == 0 {
            return Err(CmacError::InvalidInput(format!(
                "bad phantom spec {self:?}"
            )));
        }
        if let Some(v) = self.volume {
            if !(v.is_finite() && v > 0.0) {
                return Err(CmacError::InvalidInput(format!(
                    "blob volume must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Phantom {
    pub heart: TetMesh,
    pub calcification: LabelGrid,
    /// Calcification at 1, heart wall at 0.3, plus a little noise.
    pub image: ScalarGrid,
    pub spec: PhantomSpec,
    /// Achieved voxel volume per blob in mm³.
    pub blob_volumes: Vec<f64>,
}

/// Field of view (mm) beyond which the heart stops growing with the grid.
pub const MAX_EXTENT: f64 = 64.0;

/// Where a blob grows from: its seed point and the direction away from the wall.
struct Anchor {
    point: Vec3,
    outward: Vec3,
}

fn sector(p: &Vec3, c: &Vec3) -> usize {
    let a = (p.y - c.y).atan2(p.x - c.x) + PI;
    ((a / (2.0 * PI / 3.0)) as usize).min(2)
}

pub fn make_phantom(spec: &PhantomSpec) -> Result<Phantom> {
    spec.validate()?;
    let n = spec.n;
    let s = spec.spacing;
    let grid = VoxelGrid::filled([n; 3], Vec3::repeat(s), Vec3::zeros(), 0u8)?;
    let c = Vec3::repeat((n as f64 - 1.0) * 0.5 * s);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let origin = Vec3::repeat(-0.5 * s);
    let ext = (n as f64 * s).min(MAX_EXTENT);
    let (heart, anchors): (TetMesh, Vec<Anchor>) = match spec.kind {
        PhantomKind::SphereShell => {
            let r = 0.22 * ext;
            let heart = lattice_tet_mesh([n; 3], origin, Vec3::repeat(s), |p| {
                let d = p - c;
                if d.norm() >= r {
                    None
                } else if d.z > 0.45 * r {
                    Some(Component::LEAFLETS[sector(&p, &c)])
                } else {
                    Some(Component::Aorta)
                }
            });
            let anchors = (0..spec.blobs)
                .map(|_| {
                    let theta = rng.random_range(0.15..0.45) * PI * 0.5;
                    let phi = rng.random_range(0.0..2.0 * PI);
                    let d = Vec3::new(
                        theta.sin() * phi.cos(),
                        theta.sin() * phi.sin(),
                        theta.cos(),
                    );
                    Anchor {
                        point: c + d * r,
                        outward: d,
                    }
                })
                .collect();
            (heart, anchors)
        }
        PhantomKind::TubeLeaflets => {
            let ro = 0.3 * ext;
            let ri = 0.18 * ext;
            let h = 0.35 * ext;
            let t = 1.0 * s;
            let heart = lattice_tet_mesh([n; 3], origin, Vec3::repeat(s), |p| {
                let d = p - c;
                let rho = d.xy().norm();
                if rho >= ro || d.z.abs() >= h {
                    None
                } else if rho >= ri {
                    Some(Component::Aorta)
                } else if d.z.abs() < t {
                    Some(Component::LEAFLETS[sector(&p, &c)])
                } else {
                    None
                }
            });
            let anchors = (0..spec.blobs)
                .map(|_| {
                    let rho = rng.random_range(0.2..0.6) * ri;
                    let phi = rng.random_range(0.0..2.0 * PI);
                    Anchor {
                        point: c + Vec3::new(rho * phi.cos(), rho * phi.sin(), t),
                        outward: Vec3::z(),
                    }
                })
                .collect();
            (heart, anchors)
        }
    };
    let stencil = stencil_tets(&heart, &Component::HEART, &grid);
    let mut forbidden = stencil.clone();
    for _ in 0..spec.gap {
        forbidden = dilate(&forbidden, &Kernel::ball3())?;
    }
    let vv = grid.voxel_volume();
    let mut calc = grid.clone();
    let mut blob_volumes = Vec::new();
    for a in &anchors {
        let target = spec.volume.unwrap_or_else(|| rng.random_range(40.0..120.0));
        let k = ((target / vv).round() as usize).max(1);
        let r_est = (3.0 * target / (4.0 * PI)).cbrt();
        let center = a.point + a.outward * ((spec.gap as f64 + 0.5) * s + 0.5 * r_est);
        let blob = blob_voxels(&grid, &center, k, &forbidden, &calc);
        blob_volumes.push(blob.count() as f64 * vv);
        calc = calc.union(&blob)?;
    }
    let mut image = grid.map(|_| 0.0f32);
    for (idx, v) in image.data_mut().iter_mut().enumerate() {
        let noise = rng.random_range(-0.05..0.05);
        let base = if calc.data()[idx] != 0 {
            1.0
        } else if stencil.data()[idx] != 0 {
            0.3
        } else {
            0.0
        };
        *v = (base + noise) as f32;
    }
    Ok(Phantom {
        heart,
        calcification: calc,
        image,
        spec: spec.clone(),
        blob_volumes,
    })
}

/// The `k` free voxels nearest to `center` (lowest index on ties).
fn blob_voxels(
    grid: &LabelGrid,
    center: &Vec3,
    k: usize,
    forbidden: &LabelGrid,
    taken: &LabelGrid,
) -> LabelGrid {
    let mut cand: Vec<(f64, usize)> = (0..grid.len())
        .filter(|&idx| forbidden.data()[idx] == 0 && taken.data()[idx] == 0)
        .map(|idx| ((grid.center(grid.coords(idx)) - center).norm(), idx))
        .collect();
    cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut out = grid.clone();
    for &(_, idx) in cand.iter().take(k) {
        out.data_mut()[idx] = 1;
    }
    out
}

/// Phantom specs for a reproducible corpus: both kinds, gaps 0 and 1, one or
/// two blobs.
pub fn corpus_specs(cases: usize, n: usize, seed: u64) -> Vec<PhantomSpec> {
    (0..cases)
        .map(|k| PhantomSpec {
            kind: if k % 2 == 0 {
                PhantomKind::SphereShell
            } else {
                PhantomKind::TubeLeaflets
            },
            n,
            gap: (k / 2) % 2,
            blobs: 1 + (k % 5 == 4) as usize,
            seed: seed.wrapping_add(k as u64),
            ..PhantomSpec::default()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{extract_component_surface, is_watertight_manifold, pinched_vertices};
    use crate::postprocess::stencil_gap;

    fn spec(kind: PhantomKind, gap: usize) -> PhantomSpec {
        PhantomSpec {
            kind,
            gap,
            volume: Some(60.0),
            ..PhantomSpec::default()
        }
    }

    #[test]
    fn hearts_have_closed_roots_and_all_leaflets() {
        for kind in [PhantomKind::SphereShell, PhantomKind::TubeLeaflets] {
            let p = make_phantom(&spec(kind, 0)).unwrap();
            for c in Component::AORTIC_ROOT {
                assert!(p.heart.has_component(c), "{kind:?} lacks {c:?}");
            }
            let root = extract_component_surface(&p.heart, &Component::AORTIC_ROOT).unwrap();
            let r = is_watertight_manifold(&root.surface);
            assert!(r.ok, "{kind:?}: {r:?}");
            assert!(pinched_vertices(&root.surface).is_empty(), "{kind:?}");
            assert!(root.surface.signed_volume() > 0.0);
        }
    }

    #[test]
    fn gap_is_exact() {
        for kind in [PhantomKind::SphereShell, PhantomKind::TubeLeaflets] {
            for gap in [0, 1, 2] {
                let p = make_phantom(&spec(kind, gap)).unwrap();
                let st = stencil_tets(&p.heart, &Component::HEART, &p.calcification);
                assert_eq!(
                    stencil_gap(&p.calcification, &st).unwrap(),
                    Some(gap),
                    "{kind:?} gap {gap}"
                );
            }
        }
    }

    #[test]
    fn volume_within_ten_percent() {
        for kind in [PhantomKind::SphereShell, PhantomKind::TubeLeaflets] {
            for v in [30.0, 80.0] {
                let p = make_phantom(&PhantomSpec {
                    volume: Some(v),
                    ..spec(kind, 0)
                })
                .unwrap();
                let got = p.calcification.count() as f64 * p.calcification.voxel_volume();
                assert!((got - v).abs() <= 0.1 * v, "{kind:?}: {got} vs {v}");
            }
        }
    }

    #[test]
    fn same_seed_same_phantom() {
        let a = make_phantom(&PhantomSpec {
            seed: 7,
            ..PhantomSpec::default()
        })
        .unwrap();
        let b = make_phantom(&PhantomSpec {
            seed: 7,
            ..PhantomSpec::default()
        })
        .unwrap();
        assert_eq!(a.calcification, b.calcification);
        assert_eq!(a.heart, b.heart);
        assert_eq!(a.image, b.image);
    }
}
