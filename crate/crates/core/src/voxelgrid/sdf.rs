use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{LabelGrid, ScalarGrid};
use crate::dmtet::marching::{lattice_isosurface, CrossingConvention};
use crate::error::Result;
use crate::geom::TriangleDistanceIndex;
use crate::mesh::TriSurface;
use crate::Vec3;

/// The 0.5-isosurface of a label grid, by marching tets over the voxel-center
/// lattice. Faces are oriented away from the foreground.
pub fn isosurface(label: &LabelGrid) -> Result<TriSurface> {
    let d = label.dims();
    lattice_isosurface(
        d,
        label.origin(),
        label.spacing(),
        |i, j, k| if label.get(i, j, k) != 0 { 0.5 } else { -0.5 },
        CrossingConvention::Printed,
    )
}

/// Signed distance from each voxel center to the 0.5-isosurface, positive inside.
/// Grids without an isosurface get ± the grid diagonal.
pub fn sdf_from_label(label: &LabelGrid) -> Result<ScalarGrid> {
    let iso = isosurface(label)?;
    let d = label.dims();
    let diag =
        (Vec3::new(d[0] as f64, d[1] as f64, d[2] as f64).component_mul(&label.spacing())).norm();
    let index = TriangleDistanceIndex::new(&iso.vertices, &iso.faces);
    let data = (0..label.len())
        .map(|idx| {
            let p = label.center(label.coords(idx));
            let dist = if index.is_empty() {
                diag
            } else {
                index.distance(&p)
            };
            let s = if label.data()[idx] != 0 { dist } else { -dist };
            s as f32
        })
        .collect();
    Ok(label.with_data(data))
}

/// Uniform area-weighted samples on a triangle surface.
pub fn sample_surface(s: &TriSurface, n: usize, seed: u64) -> Vec<Vec3> {
    if n == 0 || s.faces.is_empty() {
        return Vec::new();
    }
    let mut cum = Vec::with_capacity(s.faces.len());
    let mut total = 0.0;
    for f in 0..s.faces.len() {
        total += s.face_area(f);
        cum.push(total);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let r = rng.random::<f64>() * total;
            let f = cum.partition_point(|&c| c <= r).min(s.faces.len() - 1);
            let (u, v): (f64, f64) = (rng.random(), rng.random());
            let su = u.sqrt();
            let [a, b, c] = s.tri(f);
            a * (1.0 - su) + b * (su * (1.0 - v)) + c * (su * v)
        })
        .collect()
}

/// `n` area-uniform points on the 0.5-isosurface of `label`.
pub fn surface_points(label: &LabelGrid, n: usize, seed: u64) -> Result<Vec<Vec3>> {
    Ok(sample_surface(&isosurface(label)?, n, seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::point_triangle_distance;
    use crate::voxelgrid::VoxelGrid;

    fn sphere_label(n: usize, r: f64, h: f64) -> (LabelGrid, Vec3) {
        let mut g = VoxelGrid::filled([n; 3], Vec3::repeat(h), Vec3::zeros(), 0u8).unwrap();
        let c = Vec3::repeat((n as f64 - 1.0) * h / 2.0);
        for idx in 0..g.len() {
            if (g.center(g.coords(idx)) - c).norm() <= r {
                g.data_mut()[idx] = 1;
            }
        }
        (g, c)
    }

    #[test]
    fn half_space_sdf_is_linear() {
        let h = 1.25;
        let mut g = VoxelGrid::filled([8, 5, 5], Vec3::repeat(h), Vec3::zeros(), 0u8).unwrap();
        for idx in 0..g.len() {
            if g.coords(idx)[0] <= 3 {
                g.data_mut()[idx] = 1;
            }
        }
        let sdf = sdf_from_label(&g).unwrap();
        for idx in 0..g.len() {
            let x = g.coords(idx)[0] as f64;
            let expect = (3.5 - x) * h;
            assert!(
                (sdf.data()[idx] as f64 - expect).abs() < 1e-5,
                "{} vs {expect}",
                sdf.data()[idx]
            );
        }
    }

    #[test]
    fn empty_label_is_all_negative() {
        let g = VoxelGrid::filled([4, 4, 4], Vec3::repeat(1.0), Vec3::zeros(), 0u8).unwrap();
        assert!(sdf_from_label(&g).unwrap().data().iter().all(|&v| v < 0.0));
    }

    #[test]
    fn sign_follows_label_and_distance_matches_brute_force() {
        let (g, _) = sphere_label(10, 3.2, 1.0);
        let sdf = sdf_from_label(&g).unwrap();
        let iso = isosurface(&g).unwrap();
        for idx in 0..g.len() {
            let s = sdf.data()[idx] as f64;
            assert_eq!(s > 0.0, g.data()[idx] == 1);
            let p = g.center(g.coords(idx));
            let brute = (0..iso.faces.len())
                .map(|f| {
                    let [a, b, c] = iso.tri(f);
                    point_triangle_distance(&p, a, b, c)
                })
                .fold(f64::INFINITY, f64::min);
            assert!((s.abs() - brute).abs() < 0.01, "{s} vs {brute}");
        }
    }

    #[test]
    fn sphere_surface_points_near_radius() {
        let h = 1.25;
        let r = 6.0;
        let (g, c) = sphere_label(14, r, h);
        let pts = surface_points(&g, 500, 3).unwrap();
        assert_eq!(pts.len(), 500);
        assert!(pts.iter().all(|p| ((p - c).norm() - r).abs() < h));
        assert_eq!(pts, surface_points(&g, 500, 3).unwrap());
        assert!(surface_points(&g, 0, 3).unwrap().is_empty());
    }
}
