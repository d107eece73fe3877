use std::f64::consts::PI;

use super::TriSurface;
use crate::geom::{solid_angle, Aabb};
use crate::Vec3;

/// Generalized winding number: summed signed solid angles over 4π.
pub fn winding_number(s: &TriSurface, p: &Vec3) -> f64 {
    (0..s.faces.len())
        .map(|f| {
            let [a, b, c] = s.tri(f);
            solid_angle(p, a, b, c)
        })
        .sum::<f64>()
        / (4.0 * PI)
}

/// `winding_number > 0.5`.
pub fn point_inside(s: &TriSurface, p: &Vec3) -> bool {
    winding_number(s, p) > 0.5
}

/// Integer winding numbers of a closed surface by signed crossings of rays cast
/// along +x, with faces bucketed by their yz footprint. Exact for closed
/// surfaces except for points within `PERTURB` of a face.
pub struct WindingIndex<'a> {
    s: &'a TriSurface,
    lo: [f64; 2],
    cell: f64,
    dims: [usize; 2],
    bins: Vec<Vec<u32>>,
    bbox: Aabb,
    perturb: [f64; 2],
}

impl<'a> WindingIndex<'a> {
    pub fn new(s: &'a TriSurface) -> Self {
        let bbox = s.bbox();
        let scale = bbox.diagonal().max(1e-300);
        // irrational-ish sub-resolution nudge keeps rays off lattice-aligned edges
        let perturb = [
            scale * 1.234_567_891e-9 * std::f64::consts::SQRT_2,
            scale * 2.718_281_83e-9 / std::f64::consts::SQRT_2,
        ];
        if s.faces.is_empty() {
            return WindingIndex {
                s,
                lo: [0.0; 2],
                cell: 1.0,
                dims: [0; 2],
                bins: Vec::new(),
                bbox,
                perturb,
            };
        }
        let ext = [bbox.max.y - bbox.min.y, bbox.max.z - bbox.min.z];
        let target = (s.faces.len() as f64).sqrt().max(1.0);
        let cell = (ext[0].max(ext[1]) / target).max(scale * 1e-6);
        let dims = [(ext[0] / cell) as usize + 1, (ext[1] / cell) as usize + 1];
        let lo = [bbox.min.y, bbox.min.z];
        let mut bins = vec![Vec::new(); dims[0] * dims[1]];
        for f in 0..s.faces.len() {
            let [a, b, c] = s.tri(f);
            let ylo = a.y.min(b.y).min(c.y);
            let yhi = a.y.max(b.y).max(c.y);
            let zlo = a.z.min(b.z).min(c.z);
            let zhi = a.z.max(b.z).max(c.z);
            let i0 = (((ylo - lo[0]) / cell) as usize).min(dims[0] - 1);
            let i1 = (((yhi - lo[0]) / cell) as usize).min(dims[0] - 1);
            let j0 = (((zlo - lo[1]) / cell) as usize).min(dims[1] - 1);
            let j1 = (((zhi - lo[1]) / cell) as usize).min(dims[1] - 1);
            for j in j0..=j1 {
                for i in i0..=i1 {
                    bins[i + dims[0] * j].push(f as u32);
                }
            }
        }
        WindingIndex {
            s,
            lo,
            cell,
            dims,
            bins,
            bbox,
            perturb,
        }
    }

    /// Signed crossings `(x, ±1)` of the line through `(y, z)` parallel to x,
    /// sorted by x. The sign is the x-component sign of the face normal.
    pub fn row_crossings(&self, y: f64, z: f64) -> Vec<(f64, i32)> {
        let y = y + self.perturb[0];
        let z = z + self.perturb[1];
        if self.bins.is_empty()
            || y < self.bbox.min.y
            || y > self.bbox.max.y
            || z < self.bbox.min.z
            || z > self.bbox.max.z
        {
            return Vec::new();
        }
        let i = (((y - self.lo[0]) / self.cell) as usize).min(self.dims[0] - 1);
        let j = (((z - self.lo[1]) / self.cell) as usize).min(self.dims[1] - 1);
        let mut out = Vec::new();
        for &f in &self.bins[i + self.dims[0] * j] {
            let [a, b, c] = self.s.tri(f as usize);
            let o = |p: &Vec3, q: &Vec3| (q.y - p.y) * (z - p.z) - (q.z - p.z) * (y - p.y);
            let (d0, d1, d2) = (o(a, b), o(b, c), o(c, a));
            let pos = d0 > 0.0 && d1 > 0.0 && d2 > 0.0;
            let neg = d0 < 0.0 && d1 < 0.0 && d2 < 0.0;
            if !(pos || neg) {
                continue;
            }
            let sum = d0 + d1 + d2;
            // barycentric weights: d1 ↔ a, d2 ↔ b, d0 ↔ c
            let x = (d1 * a.x + d2 * b.x + d0 * c.x) / sum;
            out.push((x, if pos { 1 } else { -1 }));
        }
        out.sort_by(|p, q| p.0.total_cmp(&q.0));
        out
    }

    /// Integer winding number of `p`.
    pub fn winding(&self, p: &Vec3) -> i32 {
        self.row_crossings(p.y, p.z)
            .iter()
            .filter(|(x, _)| *x > p.x)
            .map(|(_, s)| s)
            .sum()
    }

    pub fn inside(&self, p: &Vec3) -> bool {
        self.winding(p) >= 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::segment_hits_triangle;
    use crate::mesh::icosphere;
    use rand::{Rng, SeedableRng};

    fn tet_surface() -> TriSurface {
        TriSurface::new(
            vec![
                Vec3::zeros(),
                Vec3::new(1., 0., 0.),
                Vec3::new(0., 1., 0.),
                Vec3::new(0., 0., 1.),
            ],
            vec![[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]],
        )
    }

    #[test]
    fn tet_centroid_inside_far_point_outside() {
        let s = tet_surface();
        assert!(point_inside(&s, &Vec3::repeat(0.25)));
        assert!(!point_inside(&s, &Vec3::repeat(10.0)));
        let w = WindingIndex::new(&s);
        assert!(w.inside(&Vec3::repeat(0.25)));
        assert!(!w.inside(&Vec3::repeat(10.0)));
    }

    /// Parity of crossings along a random ray direction.
    fn ray_parity(s: &TriSurface, p: &Vec3, dir: &Vec3) -> bool {
        let q = p + dir * 100.0;
        (0..s.faces.len())
            .filter(|&f| {
                let [a, b, c] = s.tri(f);
                segment_hits_triangle(p, &q, a, b, c)
            })
            .count()
            % 2
            == 1
    }

    #[test]
    fn agrees_with_ray_parity_on_sphere() {
        let s = icosphere(Vec3::zeros(), 1.0, 3);
        let w = WindingIndex::new(&s);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let dir = Vec3::new(0.3141, 0.5926, 0.5358).normalize();
        for _ in 0..1000 {
            let p = Vec3::new(
                rng.random_range(-1.3..1.3),
                rng.random_range(-1.3..1.3),
                rng.random_range(-1.3..1.3),
            );
            let oracle = ray_parity(&s, &p, &dir);
            assert_eq!(point_inside(&s, &p), oracle, "{p:?}");
            assert_eq!(w.inside(&p), oracle, "{p:?}");
        }
    }

    #[test]
    fn inverted_inner_shell_cancels() {
        let outer = icosphere(Vec3::zeros(), 2.0, 2);
        let mut inner = icosphere(Vec3::zeros(), 1.0, 2);
        for f in &mut inner.faces {
            f.swap(1, 2);
        }
        let mut s = outer.clone();
        let n = s.vertices.len();
        s.vertices.extend(inner.vertices);
        s.faces.extend(inner.faces.iter().map(|f| f.map(|i| i + n)));
        let w = WindingIndex::new(&s);
        assert!(!w.inside(&Vec3::zeros()));
        assert!(!point_inside(&s, &Vec3::zeros()));
        assert!(w.inside(&Vec3::new(1.5, 0.0, 0.0)));
        assert!(point_inside(&s, &Vec3::new(0.0, 1.5, 0.0)));
    }
}
