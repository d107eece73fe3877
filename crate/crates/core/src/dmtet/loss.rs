//! Surface quality loss: uniform-Laplacian smoothness, edge-length and
//! corner-angle penalties, plus the displacement regularizer, with analytic
//! gradients with respect to the surface vertices.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    /// Laplacian, edge length, angle and displacement weights.
    pub lambda: [f64; 4],
    /// Desired edge length.
    pub eps_len: f64,
    /// Desired corner angle in degrees.
    pub alpha_deg: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda: [10.0, 1.0, 1.0, 0.5],
            eps_len: 0.1,
            alpha_deg: 60.0,
        }
    }
}

/// Weighted loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossTerms {
    pub laplacian: f64,
    pub length: f64,
    pub angle: f64,
    pub displacement: f64,
}

impl LossTerms {
    pub fn total(&self) -> f64 {
        self.laplacian + self.length + self.angle + self.displacement
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Angle filter in degrees: close to 1 below 10° and above 150°, close to 0 in between.
pub fn angle_filter(a: f64) -> f64 {
    // 1 - sig(a - 10) written as sig(10 - a) to keep precision in the middle
    sigmoid(10.0 - a) + sigmoid(a - 150.0)
}

fn angle_filter_deriv(a: f64) -> f64 {
    let ds = |x: f64| sigmoid(x) * sigmoid(-x);
    -ds(a - 10.0) + ds(a - 150.0)
}

/// Connectivity the loss is evaluated on. Triangles with a repeated vertex are dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct LossTopology {
    pub n_vertices: usize,
    pub triangles: Vec<[usize; 3]>,
    /// Unique undirected edges.
    pub edges: Vec<[usize; 2]>,
    nbr_start: Vec<usize>,
    nbrs: Vec<usize>,
    /// Vertices whose one-ring is closed; the Laplacian is taken only there.
    closed: Vec<bool>,
}

impl LossTopology {
    pub fn new(n_vertices: usize, triangles: &[[usize; 3]]) -> Self {
        let triangles: Vec<[usize; 3]> = triangles
            .iter()
            .copied()
            .filter(|t| t[0] != t[1] && t[1] != t[2] && t[0] != t[2])
            .collect();
        let mut count: HashMap<[usize; 2], u32> = HashMap::new();
        for t in &triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *count.entry([a.min(b), a.max(b)]).or_insert(0) += 1;
            }
        }
        let mut edges: Vec<[usize; 2]> = count.keys().copied().collect();
        edges.sort_unstable();
        let mut closed = vec![true; n_vertices];
        let mut deg = vec![0usize; n_vertices];
        for e in &edges {
            if count[e] < 2 {
                closed[e[0]] = false;
                closed[e[1]] = false;
            }
            deg[e[0]] += 1;
            deg[e[1]] += 1;
        }
        let mut nbr_start = vec![0usize; n_vertices + 1];
        for i in 0..n_vertices {
            nbr_start[i + 1] = nbr_start[i] + deg[i];
        }
        let mut fill = nbr_start.clone();
        let mut nbrs = vec![0usize; nbr_start[n_vertices]];
        for &[a, b] in &edges {
            nbrs[fill[a]] = b;
            fill[a] += 1;
            nbrs[fill[b]] = a;
            fill[b] += 1;
        }
        for i in 0..n_vertices {
            if deg[i] == 0 {
                closed[i] = false;
            }
        }
        LossTopology {
            n_vertices,
            triangles,
            edges,
            nbr_start,
            nbrs,
            closed,
        }
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.nbrs[self.nbr_start[i]..self.nbr_start[i + 1]]
    }

    pub fn is_closed(&self, i: usize) -> bool {
        self.closed[i]
    }
}

/// Loss of a surface without the displacement term, and its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceLoss {
    pub terms: LossTerms,
    pub grad: Vec<Vec3>,
    /// Zero-length edges and collinear corners left out of the gradient.
    pub skipped: usize,
}

pub fn surface_loss(x: &[Vec3], topo: &LossTopology, w: &LossWeights) -> SurfaceLoss {
    let mut grad = vec![Vec3::zeros(); x.len()];
    let mut terms = LossTerms::default();
    let mut skipped = 0usize;

    // Laplacian
    for i in 0..topo.n_vertices {
        if !topo.is_closed(i) {
            continue;
        }
        let nb = topo.neighbors(i);
        let inv = 1.0 / nb.len() as f64;
        let mean = nb.iter().map(|&k| x[k]).sum::<Vec3>() * inv;
        let l = x[i] - mean;
        let n = l.norm();
        terms.laplacian += n;
        if n > 0.0 {
            let g = l * (w.lambda[0] / n);
            grad[i] += g;
            for &k in nb {
                grad[k] -= g * inv;
            }
        }
    }
    terms.laplacian *= w.lambda[0];

    // edge length
    let lens: Vec<f64> = topo
        .edges
        .iter()
        .map(|&[a, b]| (x[a] - x[b]).norm())
        .collect();
    let q: f64 = lens.iter().map(|l| (l - w.eps_len).powi(2)).sum();
    let root = q.sqrt();
    terms.length = w.lambda[1] * root;
    if root > 0.0 {
        for (e, &[a, b]) in topo.edges.iter().enumerate() {
            let l = lens[e];
            if l == 0.0 {
                skipped += 1;
                continue;
            }
            let g = (x[a] - x[b]) * (w.lambda[1] * (l - w.eps_len) / (root * l));
            grad[a] += g;
            grad[b] -= g;
        }
    }

    // corner angles, in degrees
    let deg = 180.0 / std::f64::consts::PI;
    let mut corners: Vec<(usize, usize, usize, f64, Vec3, Vec3)> =
        Vec::with_capacity(3 * topo.triangles.len());
    let mut qa = 0.0;
    for t in &topo.triangles {
        for k in 0..3 {
            let (a, b, c) = (t[k], t[(k + 1) % 3], t[(k + 2) % 3]);
            let u = x[b] - x[a];
            let v = x[c] - x[a];
            let cr = u.cross(&v);
            let s = cr.norm();
            let co = u.dot(&v);
            let ang = s.atan2(co) * deg;
            qa += (ang - w.alpha_deg).powi(2) * angle_filter(ang);
            if s == 0.0 || u.norm() == 0.0 || v.norm() == 0.0 {
                skipped += 1;
                continue;
            }
            let nh = cr / s;
            let den = s * s + co * co;
            let du = (v.cross(&nh) * co - v * s) / den;
            let dv = (nh.cross(&u) * co - u * s) / den;
            corners.push((a, b, c, ang, du, dv));
        }
    }
    let ra = qa.sqrt();
    terms.angle = w.lambda[2] * ra;
    if ra > 0.0 {
        for (a, b, c, ang, du, dv) in corners {
            let d = ang - w.alpha_deg;
            let dg = 2.0 * d * angle_filter(ang) + d * d * angle_filter_deriv(ang);
            let coef = w.lambda[2] * dg / (2.0 * ra) * deg;
            grad[b] += du * coef;
            grad[c] += dv * coef;
            grad[a] -= (du + dv) * coef;
        }
    }
    SurfaceLoss {
        terms,
        grad,
        skipped,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    /// Regular hexagon fan with edge length `e`, center at the origin.
    fn hexagon(e: f64) -> (Vec<Vec3>, Vec<[usize; 3]>) {
        let mut v = vec![Vec3::zeros()];
        for k in 0..6 {
            let t = k as f64 * std::f64::consts::PI / 3.0;
            v.push(Vec3::new(e * t.cos(), e * t.sin(), 0.0));
        }
        let f = (0..6).map(|k| [0, 1 + k, 1 + (k + 1) % 6]).collect();
        (v, f)
    }

    #[test]
    fn flat_equilateral_patch_has_zero_loss() {
        let w = LossWeights::default();
        let (v, f) = hexagon(w.eps_len);
        let topo = LossTopology::new(v.len(), &f);
        let l = surface_loss(&v, &topo, &w);
        assert!(l.terms.total().abs() < 1e-12, "{:?}", l.terms);
        assert!(topo.is_closed(0) && !topo.is_closed(1));
    }

    #[test]
    fn single_long_edge_gives_length_term() {
        let w = LossWeights::default();
        let (e, d) = (w.eps_len, 0.03);
        let half = (e + d) / 2.0;
        let v = vec![
            Vec3::zeros(),
            Vec3::new(e + d, 0., 0.),
            Vec3::new(half, (e * e - half * half).sqrt(), 0.),
        ];
        let topo = LossTopology::new(3, &[[0, 1, 2]]);
        let l = surface_loss(&v, &topo, &w);
        assert!((l.terms.length - w.lambda[1] * d).abs() < 1e-15);
    }

    #[test]
    fn filter_is_small_in_the_middle() {
        assert!(angle_filter(60.0) < 1e-20);
        assert!(angle_filter(0.0) > 0.99);
        assert!(angle_filter(179.0) > 0.99);
    }

    fn fd_check(v: &[Vec3], topo: &LossTopology, w: &LossWeights) -> f64 {
        let g = surface_loss(v, topo, w).grad;
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for i in 0..v.len() {
            for a in 0..3 {
                let mut p = v.to_vec();
                p[i][a] += h;
                let fp = surface_loss(&p, topo, w).terms.total();
                p[i][a] -= 2.0 * h;
                let fm = surface_loss(&p, topo, w).terms.total();
                let fd = (fp - fm) / (2.0 * h);
                worst = worst.max((fd - g[i][a]).abs());
                scale = scale.max(fd.abs());
            }
        }
        worst / scale
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let s = crate::mesh::icosphere(Vec3::zeros(), 1.0, 1);
        for lambda in [[1.0, 0., 0., 0.], [0., 1., 0., 0.], [0., 0., 1., 0.]] {
            let w = LossWeights {
                eps_len: 0.3,
                alpha_deg: 60.0,
                lambda,
            };
            let v: Vec<Vec3> = s
                .vertices
                .iter()
                .map(|p| {
                    p + Vec3::new(
                        rng.random_range(-0.1..0.1),
                        rng.random_range(-0.1..0.1),
                        rng.random_range(-0.1..0.1),
                    )
                })
                .collect();
            let topo = LossTopology::new(v.len(), &s.faces);
            let e = fd_check(&v, &topo, &w);
            assert!(e < 1e-6, "{e} {lambda:?}");
        }
    }

    #[test]
    fn zero_length_edge_is_skipped() {
        let v = vec![
            Vec3::zeros(),
            Vec3::zeros(),
            Vec3::new(0., 1., 0.),
            Vec3::new(1., 1., 0.),
        ];
        let topo = LossTopology::new(4, &[[0, 1, 2], [1, 3, 2]]);
        let l = surface_loss(&v, &topo, &LossWeights::default());
        assert!(l.skipped >= 1);
        assert!(l.grad.iter().all(|g| g.iter().all(|x| x.is_finite())));
    }
}
