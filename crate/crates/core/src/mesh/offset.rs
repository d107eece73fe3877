use super::{connected_face_components, TriSurface};
use crate::dmtet::marching::{lattice_isosurface, CrossingConvention};
use crate::error::{CmacError, Result};
use crate::geom::TriangleDistanceIndex;
use crate::Vec3;

/// Outer shell of the `distance` level set of the unsigned distance to `s`,
/// sampled on a lattice of spacing `resolution`.
pub fn offset_surface(s: &TriSurface, distance: f64, resolution: f64) -> Result<TriSurface> {
    if !(resolution.is_finite() && resolution > 0.0) {
        return Err(CmacError::InvalidInput(
            "offset resolution must be positive".into(),
        ));
    }
    if !(distance.is_finite() && distance >= 2.0 * resolution) {
        return Err(CmacError::InvalidInput(format!(
            "offset distance {distance} is undersampled at resolution {resolution}"
        )));
    }
    if s.faces.is_empty() {
        return Err(CmacError::Empty("offset of an empty surface".into()));
    }
    let bb = s.bbox().expanded(distance + 2.0 * resolution);
    let dims = [0, 1, 2].map(|a| ((bb.max[a] - bb.min[a]) / resolution).ceil() as usize + 1);
    let origin = bb.min;
    let index = TriangleDistanceIndex::new(&s.vertices, &s.faces);
    let cap = distance + 2.0 * resolution;
    let n = dims[0] * dims[1] * dims[2];
    let mut field = vec![0.0f64; n];
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let p = origin + Vec3::new(i as f64, j as f64, k as f64) * resolution;
                let d = index.closest(&p, cap).map_or(cap, |(d, _, _)| d);
                // exact zeros would collapse several crossings onto one lattice node
                let f = distance - d;
                field[i + dims[0] * (j + dims[1] * k)] = if f.abs() < 1e-4 * resolution {
                    -1e-4 * resolution
                } else {
                    f
                };
            }
        }
    }
    let iso = lattice_isosurface(
        dims,
        origin,
        Vec3::repeat(resolution),
        |i, j, k| field[i + dims[0] * (j + dims[1] * k)],
        CrossingConvention::Printed,
    )?;
    let (label, ncomp) = connected_face_components(&iso);
    let mut vol = vec![0.0f64; ncomp];
    for (f, &c) in iso.faces.iter().zip(&label) {
        vol[c] += iso.vertices[f[0]].dot(&iso.vertices[f[1]].cross(&iso.vertices[f[2]])) / 6.0;
    }
    let keep = (0..ncomp)
        .max_by(|&a, &b| vol[a].total_cmp(&vol[b]).then(b.cmp(&a)))
        .ok_or_else(|| CmacError::Empty("offset level set is empty".into()))?;
    let mut out = TriSurface::new(
        iso.vertices,
        iso.faces
            .iter()
            .zip(&label)
            .filter(|(_, &c)| c == keep)
            .map(|(f, _)| *f)
            .collect(),
    );
    out.compact();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{icosphere, is_watertight_manifold, point_inside};

    fn radii(s: &TriSurface, c: &Vec3) -> (f64, f64) {
        s.vertices
            .iter()
            .map(|v| (v - c).norm())
            .fold((f64::INFINITY, 0.0), |(lo, hi), r| (lo.min(r), hi.max(r)))
    }

    #[test]
    fn sphere_offset_is_bigger_sphere() {
        let c = Vec3::new(0.3, -0.2, 0.1);
        let s = icosphere(c, 5.0, 3);
        let o = offset_surface(&s, 3.0, 0.5).unwrap();
        let r = is_watertight_manifold(&o);
        assert!(r.ok, "{r:?}");
        let (lo, hi) = radii(&o, &c);
        assert!(lo > 8.0 - 0.5 && hi < 8.0 + 0.5, "{lo} {hi}");
        assert!(s.vertices.iter().all(|v| point_inside(&o, v)));
    }

    #[test]
    fn offset_composes() {
        let c = Vec3::zeros();
        let s = icosphere(c, 4.0, 3);
        let once = offset_surface(&s, 4.0, 0.5).unwrap();
        let twice = offset_surface(&offset_surface(&s, 2.0, 0.5).unwrap(), 2.0, 0.5).unwrap();
        let (a0, a1) = radii(&once, &c);
        let (b0, b1) = radii(&twice, &c);
        assert!((a0 - b0).abs() <= 1.0 && (a1 - b1).abs() <= 1.0);
    }

    #[test]
    fn undersampled_offset_rejected() {
        let s = icosphere(Vec3::zeros(), 1.0, 1);
        assert!(offset_surface(&s, 0.5, 0.5).is_err());
    }
}
