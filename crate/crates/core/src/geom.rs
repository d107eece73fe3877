//! Small geometric kernels shared by the mesh and voxel modules.

use crate::Vec3;

#[inline]
pub fn tet_signed_volume(a: &Vec3, b: &Vec3, c: &Vec3, d: &Vec3) -> f64 {
    (b - a).dot(&(c - a).cross(&(d - a))) / 6.0
}

#[inline]
pub fn tri_area(a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    0.5 * (b - a).cross(&(c - a)).norm()
}

/// Unnormalized triangle normal (twice the area vector).
#[inline]
pub fn tri_normal(a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
    (b - a).cross(&(c - a))
}

/// Closest point on triangle `abc` to `p` (Ericson, Real-Time Collision Detection 5.1.5).
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}

#[inline]
pub fn point_triangle_distance(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    (p - closest_point_on_triangle(p, a, b, c)).norm()
}

/// Signed solid angle subtended by triangle `abc` at `p` (Van Oosterom & Strackee).
pub fn solid_angle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    let ra = a - p;
    let rb = b - p;
    let rc = c - p;
    let la = ra.norm();
    let lb = rb.norm();
    let lc = rc.norm();
    let num = ra.dot(&rb.cross(&rc));
    let den = la * lb * lc + ra.dot(&rb) * lc + rb.dot(&rc) * la + rc.dot(&ra) * lb;
    2.0 * num.atan2(den)
}

/// Segment `pq` against triangle `abc`, excluding touching at the segment end points.
pub fn segment_hits_triangle(p: &Vec3, q: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> bool {
    let dir = q - p;
    let e1 = b - a;
    let e2 = c - a;
    let h = dir.cross(&e2);
    let det = e1.dot(&h);
    let scale = e1.norm() * e2.norm() * dir.norm();
    if det.abs() <= 1e-14 * scale {
        return false;
    }
    let inv = 1.0 / det;
    let s = p - a;
    let u = inv * s.dot(&h);
    if !(0.0..=1.0).contains(&u) {
        return false;
    }
    let qv = s.cross(&e1);
    let v = inv * dir.dot(&qv);
    if v < 0.0 || u + v > 1.0 {
        return false;
    }
    let t = inv * e2.dot(&qv);
    t > 1e-12 && t < 1.0 - 1e-12
}

/// Triangle-triangle intersection via edge/triangle crossings. Coplanar overlaps
/// are not reported.
pub fn triangles_intersect(t0: [&Vec3; 3], t1: [&Vec3; 3]) -> bool {
    for i in 0..3 {
        let (p, q) = (t0[i], t0[(i + 1) % 3]);
        if segment_hits_triangle(p, q, t1[0], t1[1], t1[2]) {
            return true;
        }
        let (p, q) = (t1[i], t1[(i + 1) % 3]);
        if segment_hits_triangle(p, q, t0[0], t0[1], t0[2]) {
            return true;
        }
    }
    false
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn empty() -> Self {
        Aabb {
            min: Vec3::repeat(f64::INFINITY),
            max: Vec3::repeat(f64::NEG_INFINITY),
        }
    }

    pub fn from_points<'a>(pts: impl IntoIterator<Item = &'a Vec3>) -> Self {
        let mut b = Aabb::empty();
        for p in pts {
            b.grow(p);
        }
        b
    }

    pub fn grow(&mut self, p: &Vec3) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    pub fn is_empty(&self) -> bool {
        self.min.x > self.max.x
    }

    pub fn expanded(&self, r: f64) -> Self {
        Aabb {
            min: self.min.add_scalar(-r),
            max: self.max.add_scalar(r),
        }
    }

    pub fn overlaps(&self, o: &Aabb) -> bool {
        (0..3).all(|k| self.min[k] <= o.max[k] && o.min[k] <= self.max[k])
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }

    pub fn diagonal(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            (self.max - self.min).norm()
        }
    }
}

/// Uniform-grid bucketing of triangles for exact closest-point queries.
pub struct TriangleDistanceIndex<'a> {
    verts: &'a [Vec3],
    faces: &'a [[usize; 3]],
    origin: Vec3,
    cell: f64,
    dims: [usize; 3],
    cells: Vec<Vec<u32>>,
}

impl<'a> TriangleDistanceIndex<'a> {
    pub fn new(verts: &'a [Vec3], faces: &'a [[usize; 3]]) -> Self {
        let bb = Aabb::from_points(faces.iter().flat_map(|f| f.iter().map(|&i| &verts[i])));
        if faces.is_empty() {
            return TriangleDistanceIndex {
                verts,
                faces,
                origin: Vec3::zeros(),
                cell: 1.0,
                dims: [0; 3],
                cells: Vec::new(),
            };
        }
        let mean_edge = faces
            .iter()
            .map(|f| (verts[f[1]] - verts[f[0]]).norm() + (verts[f[2]] - verts[f[1]]).norm())
            .sum::<f64>()
            / (2.0 * faces.len() as f64);
        let ext = bb.max - bb.min;
        let mut cell = (2.0 * mean_edge).max(ext.max() / 128.0).max(1e-9);
        // keep the cell count bounded
        while (0..3)
            .map(|k| (ext[k] / cell).floor() + 1.0)
            .product::<f64>()
            > 4.0e6
        {
            cell *= 1.5;
        }
        let dims = [0, 1, 2].map(|k| (ext[k] / cell).floor() as usize + 1);
        let mut cells = vec![Vec::new(); dims[0] * dims[1] * dims[2]];
        let origin = bb.min;
        for (fi, f) in faces.iter().enumerate() {
            let tb = Aabb::from_points(f.iter().map(|&i| &verts[i]));
            let lo = [0, 1, 2]
                .map(|k| (((tb.min[k] - origin[k]) / cell).floor() as usize).min(dims[k] - 1));
            let hi = [0, 1, 2]
                .map(|k| (((tb.max[k] - origin[k]) / cell).floor() as usize).min(dims[k] - 1));
            for z in lo[2]..=hi[2] {
                for y in lo[1]..=hi[1] {
                    for x in lo[0]..=hi[0] {
                        cells[x + dims[0] * (y + dims[1] * z)].push(fi as u32);
                    }
                }
            }
        }
        TriangleDistanceIndex {
            verts,
            faces,
            origin,
            cell,
            dims,
            cells,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    /// Closest triangle to `p` within `max_dist` (unbounded when infinite).
    /// Returns `(distance, face, closest point)`; ties go to the lowest face index.
    pub fn closest(&self, p: &Vec3, max_dist: f64) -> Option<(f64, usize, Vec3)> {
        if self.faces.is_empty() {
            return None;
        }
        let d = self.dims;
        let c = [0, 1, 2].map(|k| ((p[k] - self.origin[k]) / self.cell).floor() as i64);
        let mut best: Option<(f64, usize, Vec3)> = None;
        let max_ring = (0..3)
            .map(|k| c[k].abs().max((c[k] - d[k] as i64 + 1).abs()))
            .max()
            .unwrap_or(0)
            + 1;
        for r in 0..=max_ring {
            // lower bound on distance of any cell in ring r
            let ring_lb = (r as f64 - 1.0).max(0.0) * self.cell;
            if let Some((bd, _, _)) = best {
                if ring_lb > bd {
                    break;
                }
            }
            if ring_lb > max_dist {
                break;
            }
            for z in (c[2] - r)..=(c[2] + r) {
                if z < 0 || z >= d[2] as i64 {
                    continue;
                }
                for y in (c[1] - r)..=(c[1] + r) {
                    if y < 0 || y >= d[1] as i64 {
                        continue;
                    }
                    let on_shell_yz = (z - c[2]).abs() == r || (y - c[1]).abs() == r;
                    let xs: Vec<i64> = if on_shell_yz {
                        ((c[0] - r)..=(c[0] + r)).collect()
                    } else {
                        vec![c[0] - r, c[0] + r]
                    };
                    for x in xs {
                        if x < 0 || x >= d[0] as i64 {
                            continue;
                        }
                        for &fi in &self.cells[x as usize + d[0] * (y as usize + d[1] * z as usize)]
                        {
                            let f = self.faces[fi as usize];
                            let q = closest_point_on_triangle(
                                p,
                                &self.verts[f[0]],
                                &self.verts[f[1]],
                                &self.verts[f[2]],
                            );
                            let dist = (p - q).norm();
                            let better = match best {
                                None => true,
                                Some((bd, bf, _)) => {
                                    dist < bd || (dist == bd && (fi as usize) < bf)
                                }
                            };
                            if better {
                                best = Some((dist, fi as usize, q));
                            }
                        }
                    }
                }
            }
        }
        best.filter(|(bd, _, _)| *bd <= max_dist)
    }

    pub fn distance(&self, p: &Vec3) -> f64 {
        self.closest(p, f64::INFINITY)
            .map_or(f64::INFINITY, |(d, _, _)| d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: f64, y: f64, z: f64) -> Vec3 {
        Vec3::new(x, y, z)
    }

    #[test]
    fn regular_tet_volume() {
        let vol = tet_signed_volume(
            &v(0., 0., 0.),
            &v(1., 0., 0.),
            &v(0., 1., 0.),
            &v(0., 0., 1.),
        );
        assert!((vol - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn closest_point_regions() {
        let (a, b, c) = (v(0., 0., 0.), v(1., 0., 0.), v(0., 1., 0.));
        assert!(
            (closest_point_on_triangle(&v(0.2, 0.2, 1.0), &a, &b, &c) - v(0.2, 0.2, 0.0)).norm()
                < 1e-15
        );
        assert_eq!(closest_point_on_triangle(&v(-1., -1., 0.), &a, &b, &c), a);
        let q = closest_point_on_triangle(&v(1., 1., 0.), &a, &b, &c);
        assert!((q - v(0.5, 0.5, 0.)).norm() < 1e-15);
    }

    #[test]
    fn solid_angle_of_closed_tet_is_four_pi_inside() {
        let p = [v(0., 0., 0.), v(1., 0., 0.), v(0., 1., 0.), v(0., 0., 1.)];
        let faces = [[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]];
        let c = v(0.2, 0.2, 0.2);
        let w: f64 = faces
            .iter()
            .map(|f| solid_angle(&c, &p[f[0]], &p[f[1]], &p[f[2]]))
            .sum();
        assert!((w - 4.0 * std::f64::consts::PI).abs() < 1e-12);
        let far = v(5., 5., 5.);
        let w: f64 = faces
            .iter()
            .map(|f| solid_angle(&far, &p[f[0]], &p[f[1]], &p[f[2]]))
            .sum();
        assert!(w.abs() < 1e-12);
    }

    #[test]
    fn crossing_triangles_detected() {
        let t0 = [v(0., 0., 0.), v(2., 0., 0.), v(0., 2., 0.)];
        let t1 = [v(0.5, 0.5, -1.), v(0.5, 0.5, 1.), v(1.5, 1.5, 0.5)];
        assert!(triangles_intersect(
            [&t0[0], &t0[1], &t0[2]],
            [&t1[0], &t1[1], &t1[2]]
        ));
        let t2 = [v(0., 0., 1.), v(2., 0., 1.), v(0., 2., 1.)];
        assert!(!triangles_intersect(
            [&t0[0], &t0[1], &t0[2]],
            [&t2[0], &t2[1], &t2[2]]
        ));
    }

    #[test]
    fn distance_index_matches_brute_force() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let verts: Vec<Vec3> = (0..60)
            .map(|_| v(rng.random(), rng.random(), rng.random()))
            .collect();
        let faces: Vec<[usize; 3]> = (0..20).map(|i| [3 * i, 3 * i + 1, 3 * i + 2]).collect();
        let idx = TriangleDistanceIndex::new(&verts, &faces);
        for _ in 0..200 {
            let p = v(
                rng.random_range(-1.0..2.0),
                rng.random_range(-1.0..2.0),
                rng.random_range(-1.0..2.0),
            );
            let brute = faces
                .iter()
                .map(|f| point_triangle_distance(&p, &verts[f[0]], &verts[f[1]], &verts[f[2]]))
                .fold(f64::INFINITY, f64::min);
            assert!((idx.distance(&p) - brute).abs() < 1e-12);
        }
    }
}
