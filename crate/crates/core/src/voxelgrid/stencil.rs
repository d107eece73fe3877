use super::{LabelGrid, Voxel, VoxelGrid};
use crate::error::{CmacError, Result};
use crate::geom::tet_signed_volume;
use crate::mesh::{is_watertight_manifold, Component, TetMesh, TriSurface, WindingIndex};
use crate::Vec3;

/// Voxels whose center lies inside the closed surface (winding number ≥ 1).
pub fn stencil_mesh<T: Voxel>(surface: &TriSurface, template: &VoxelGrid<T>) -> Result<LabelGrid> {
    let d = template.dims();
    stencil_mesh_region(surface, template, [0, 0, 0], [d[0] - 1, d[1] - 1, d[2] - 1])
}

/// [`stencil_mesh`] evaluated only inside the inclusive voxel box `lo..=hi`;
/// voxels outside the box are 0.
pub fn stencil_mesh_region<T: Voxel>(
    surface: &TriSurface,
    template: &VoxelGrid<T>,
    lo: [usize; 3],
    hi: [usize; 3],
) -> Result<LabelGrid> {
    let rep = is_watertight_manifold(surface);
    if rep.boundary_edges > 0 {
        return Err(CmacError::OpenSurface {
            boundary_edges: rep.boundary_edges,
        });
    }
    if !rep.ok {
        return Err(CmacError::NotManifold(rep));
    }
    let d = template.dims();
    let hi = [0, 1, 2].map(|a| hi[a].min(d[a] - 1));
    let mut out = vec![0u8; template.len()];
    let bb = surface.bbox();
    let index = WindingIndex::new(surface);
    for k in lo[2]..=hi[2] {
        for j in lo[1]..=hi[1] {
            let row = template.center([0, j, k]);
            if row.y < bb.min.y || row.y > bb.max.y || row.z < bb.min.z || row.z > bb.max.z {
                continue;
            }
            let xs = index.row_crossings(row.y, row.z);
            if xs.is_empty() {
                continue;
            }
            // winding of a point = sum of signs of crossings strictly to its right
            let mut right: i32 = xs.iter().map(|c| c.1).sum();
            let mut next = 0;
            for i in lo[0]..=hi[0] {
                let x = template.center([i, j, k]).x;
                while next < xs.len() && xs[next].0 <= x {
                    right -= xs[next].1;
                    next += 1;
                }
                if right >= 1 {
                    out[template.index(i, j, k)] = 1;
                }
            }
        }
    }
    Ok(template.with_data(out))
}

/// Voxels whose center lies in a (closed) tet of the selected components.
///
/// Same answer as [`stencil_mesh`] on the boundary surface of the selection,
/// but it needs no manifold boundary, which tet unions do not always have.
pub fn stencil_tets<T: Voxel>(
    mesh: &TetMesh,
    components: &[Component],
    template: &VoxelGrid<T>,
) -> LabelGrid {
    let mut out = vec![0u8; template.len()];
    let d = template.dims();
    for (t, c) in mesh.tets.iter().zip(&mesh.components) {
        if !components.contains(c) {
            continue;
        }
        let p = t.map(|i| mesh.vertices[i]);
        let vol = tet_signed_volume(&p[0], &p[1], &p[2], &p[3]);
        if vol == 0.0 {
            continue;
        }
        let Some((lo, hi)) = voxel_range(template, &p) else {
            continue;
        };
        let tol = -1e-12 * vol.abs();
        for k in lo[2]..=hi[2] {
            for j in lo[1]..=hi[1] {
                for i in lo[0]..=hi[0] {
                    let q = template.center([i, j, k]);
                    let inside = (0..4).all(|f| {
                        let mut r = p;
                        r[f] = q;
                        tet_signed_volume(&r[0], &r[1], &r[2], &r[3]) * vol.signum() >= tol
                    });
                    if inside {
                        out[i + d[0] * (j + d[1] * k)] = 1;
                    }
                }
            }
        }
    }
    template.with_data(out)
}

/// Inclusive voxel index box covering the points, if it meets the grid.
fn voxel_range<T: Voxel>(g: &VoxelGrid<T>, p: &[Vec3]) -> Option<([usize; 3], [usize; 3])> {
    let d = g.dims();
    let mut lo = [0usize; 3];
    let mut hi = [0usize; 3];
    for a in 0..3 {
        let (mn, mx) = p
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(mn, mx), q| {
                let v = (q[a] - g.origin()[a]) / g.spacing()[a];
                (mn.min(v), mx.max(v))
            });
        let l = mn.ceil().max(0.0);
        let h = mx.floor().min(d[a] as f64 - 1.0);
        if l > h {
            return None;
        }
        lo[a] = l as usize;
        hi[a] = h as usize;
    }
    Some((lo, hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{icosphere, point_inside};

    #[test]
    fn sphere_volume_at_64() {
        let n = 64;
        let h = 1.0 / 32.0;
        let g =
            VoxelGrid::filled([n; 3], Vec3::repeat(h), Vec3::repeat(-1.0 + h / 2.0), 0u8).unwrap();
        let s = icosphere(Vec3::zeros(), 0.9, 4);
        let st = stencil_mesh(&s, &g).unwrap();
        let vol = st.count() as f64 * g.voxel_volume();
        let exact = 4.0 / 3.0 * std::f64::consts::PI * 0.9f64.powi(3);
        assert!((vol - exact).abs() < 0.05 * exact, "{vol} vs {exact}");
    }

    #[test]
    fn surface_outside_grid_gives_nothing() {
        let g = VoxelGrid::filled([8; 3], Vec3::repeat(1.0), Vec3::zeros(), 0u8).unwrap();
        let s = icosphere(Vec3::repeat(100.0), 2.0, 1);
        assert_eq!(stencil_mesh(&s, &g).unwrap().count(), 0);
    }

    #[test]
    fn hollow_shell_marks_only_shell() {
        let g = VoxelGrid::filled([20; 3], Vec3::repeat(1.0), Vec3::zeros(), 0u8).unwrap();
        let c = Vec3::repeat(9.5);
        let outer = icosphere(c, 8.0, 3);
        let mut inner = icosphere(c, 4.0, 3);
        for f in &mut inner.faces {
            f.swap(1, 2);
        }
        let s = crate::mesh::merge_surfaces(&outer, &inner).unwrap();
        let st = stencil_mesh(&s, &g).unwrap();
        for idx in 0..g.len() {
            let p = g.center(g.coords(idx));
            assert_eq!(st.data()[idx] == 1, point_inside(&s, &p), "{p:?}");
        }
        assert_eq!(st.get(10, 10, 10), 0);
    }

    #[test]
    fn open_surface_rejected() {
        let g = VoxelGrid::filled([4; 3], Vec3::repeat(1.0), Vec3::zeros(), 0u8).unwrap();
        let mut s = icosphere(Vec3::zeros(), 1.0, 0);
        s.faces.pop();
        assert!(matches!(
            stencil_mesh(&s, &g),
            Err(CmacError::OpenSurface { boundary_edges: 3 })
        ));
    }

    #[test]
    fn tet_stencil_matches_surface_stencil() {
        use crate::mesh::{extract_component_surface, lattice_tet_mesh};
        let c = Vec3::repeat(2.0);
        let heart = lattice_tet_mesh([8, 8, 8], Vec3::zeros(), Vec3::repeat(0.5), |p| {
            ((p - c).norm() < 1.6).then_some(Component::Aorta)
        });
        let g =
            VoxelGrid::filled([17, 17, 17], Vec3::repeat(0.27), Vec3::repeat(-0.1), 0u8).unwrap();
        let by_tets = stencil_tets(&heart, &[Component::Aorta], &g);
        let surf = extract_component_surface(&heart, &[Component::Aorta])
            .unwrap()
            .surface;
        let by_surface = stencil_mesh(&surf, &g).unwrap();
        assert!(by_tets.count() > 100);
        assert_eq!(by_tets, by_surface);
        assert_eq!(stencil_tets(&heart, &[Component::Lv], &g).count(), 0);
    }
}
