use super::TriSurface;
use crate::error::{CmacError, Result};
use crate::geom::{triangles_intersect, Aabb};

/// Faces of `a` and `b` whose triangles intersect, first hit in `a`-major order.
pub(crate) fn first_intersection(a: &TriSurface, b: &TriSurface) -> Option<(usize, usize)> {
    if a.faces.is_empty() || b.faces.is_empty() {
        return None;
    }
    let bb_b = b.bbox();
    let cell = (2.0 * b.mean_edge_length())
        .max(bb_b.diagonal() / 256.0)
        .max(1e-12);
    let dims = [0, 1, 2].map(|k| ((bb_b.max[k] - bb_b.min[k]) / cell) as usize + 1);
    let mut bins = vec![Vec::<u32>::new(); dims[0] * dims[1] * dims[2]];
    let cell_of =
        |x: f64, k: usize| (((x - bb_b.min[k]) / cell).max(0.0) as usize).min(dims[k] - 1);
    let face_box = |s: &TriSurface, f: usize| Aabb::from_points(s.tri(f));
    for f in 0..b.faces.len() {
        let fb = face_box(b, f);
        let lo = [0, 1, 2].map(|k| cell_of(fb.min[k], k));
        let hi = [0, 1, 2].map(|k| cell_of(fb.max[k], k));
        for z in lo[2]..=hi[2] {
            for y in lo[1]..=hi[1] {
                for x in lo[0]..=hi[0] {
                    bins[x + dims[0] * (y + dims[1] * z)].push(f as u32);
                }
            }
        }
    }
    let mut seen = Vec::new();
    for fa in 0..a.faces.len() {
        let ab = face_box(a, fa);
        if !ab.overlaps(&bb_b) {
            continue;
        }
        let lo = [0, 1, 2].map(|k| cell_of(ab.min[k], k));
        let hi = [0, 1, 2].map(|k| cell_of(ab.max[k], k));
        seen.clear();
        for z in lo[2]..=hi[2] {
            for y in lo[1]..=hi[1] {
                for x in lo[0]..=hi[0] {
                    seen.extend_from_slice(&bins[x + dims[0] * (y + dims[1] * z)]);
                }
            }
        }
        seen.sort_unstable();
        seen.dedup();
        for &fb in &seen {
            if face_box(b, fb as usize).overlaps(&ab)
                && triangles_intersect(a.tri(fa), b.tri(fb as usize))
            {
                return Some((fa, fb as usize));
            }
        }
    }
    None
}

/// Disjoint union of two non-intersecting closed surfaces.
pub fn merge_surfaces(a: &TriSurface, b: &TriSurface) -> Result<TriSurface> {
    if let Some((fa, fb)) = first_intersection(a, b) {
        return Err(CmacError::Intersection(fa, fb));
    }
    let n = a.vertices.len();
    let mut out = TriSurface::new(
        a.vertices.iter().chain(&b.vertices).copied().collect(),
        a.faces
            .iter()
            .copied()
            .chain(b.faces.iter().map(|f| f.map(|i| i + n)))
            .collect(),
    );
    if let (Some(ta), Some(tb)) = (&a.vertex_tags, &b.vertex_tags) {
        out.vertex_tags = Some(ta.iter().chain(tb).copied().collect());
    }
    if let (Some(ta), Some(tb)) = (&a.face_tags, &b.face_tags) {
        out.face_tags = Some(ta.iter().chain(tb).copied().collect());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{icosphere, is_watertight_manifold};
    use crate::Vec3;

    #[test]
    fn disjoint_tets_concatenate() {
        let t = TriSurface::new(
            vec![
                Vec3::zeros(),
                Vec3::new(1., 0., 0.),
                Vec3::new(0., 1., 0.),
                Vec3::new(0., 0., 1.),
            ],
            vec![[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]],
        );
        let mut u = t.clone();
        for v in &mut u.vertices {
            *v += Vec3::repeat(3.0);
        }
        let m = merge_surfaces(&t, &u).unwrap();
        assert_eq!(m.faces.len(), 8);
        assert!(is_watertight_manifold(&m).ok);
    }

    #[test]
    fn nested_shells_kept() {
        let a = icosphere(Vec3::zeros(), 1.0, 2);
        let b = icosphere(Vec3::zeros(), 2.0, 2);
        let m = merge_surfaces(&a, &b).unwrap();
        assert_eq!(m.faces.len(), a.faces.len() + b.faces.len());
    }

    #[test]
    fn overlapping_spheres_rejected() {
        let a = icosphere(Vec3::zeros(), 1.0, 2);
        let b = icosphere(Vec3::new(1.0, 0.0, 0.0), 1.0, 2);
        assert!(matches!(
            merge_surfaces(&a, &b),
            Err(CmacError::Intersection(_, _))
        ));
    }
}
