//! Marching tetrahedra with a topology that can be frozen and re-evaluated.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{CmacError, Result};
use crate::geom::tet_signed_volume;
use crate::mesh::TriSurface;
use crate::Vec3;

/// Which nodal values count as inside.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CrossingConvention {
    /// Inside iff `s > 0`; an edge crosses when one end is `<= 0` and the other `> 0`.
    #[default]
    Printed,
    /// Inside iff `s >= 0`; an edge crosses when one end is `< 0` and the other `>= 0`.
    Alternate,
}

impl CrossingConvention {
    #[inline]
    pub fn inside(self, s: f64) -> bool {
        match self {
            CrossingConvention::Printed => s > 0.0,
            CrossingConvention::Alternate => s >= 0.0,
        }
    }
}

/// Zero crossing on edge `(a, b)` of the linear interpolant.
///
/// Written as `v_a + (v_b - v_a) * s_a / (s_a - s_b)`, which is algebraically
/// `(v_a s_b - v_b s_a) / (s_b - s_a)` and returns `v_a` bit-exactly when `s_a == 0`.
/// A parameter of exactly 1 returns `v_b` as is.
#[inline]
pub fn crossing_point(va: &Vec3, vb: &Vec3, sa: f64, sb: f64) -> Vec3 {
    let t = sa / (sa - sb);
    if t == 1.0 {
        return *vb;
    }
    va + (vb - va) * t
}

/// Sign-change structure of a tet mesh under a nodal field.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CrossingTopology {
    /// `(a, b)` with `a` outside and `b` inside. Output vertex `i` lies on edge `i`.
    pub crossing_edges: Vec<[usize; 2]>,
    /// Output triangles over crossing-edge ids, oriented from inside to outside.
    pub triangles: Vec<[usize; 3]>,
    /// Crossing edge that generated each output vertex.
    pub vertex_origin: Vec<usize>,
}

impl CrossingTopology {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    /// Output vertex positions for the given node positions and values.
    pub fn vertices(&self, positions: &[Vec3], values: &[f64]) -> Vec<Vec3> {
        self.crossing_edges
            .iter()
            .map(|&[a, b]| crossing_point(&positions[a], &positions[b], values[a], values[b]))
            .collect()
    }

    pub fn surface(&self, positions: &[Vec3], values: &[f64]) -> TriSurface {
        TriSurface::new(self.vertices(positions, values), self.triangles.clone())
    }

    /// True if every crossing edge still has its outside/inside ends as recorded.
    pub fn consistent_with(&self, values: &[f64], conv: CrossingConvention) -> bool {
        self.crossing_edges
            .iter()
            .all(|&[a, b]| !conv.inside(values[a]) && conv.inside(values[b]))
    }
}

/// Local edges of a tet in a fixed order.
const TET_EDGES: [[usize; 2]; 6] = [[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]];

fn max_edge(p: &[Vec3; 4]) -> f64 {
    TET_EDGES
        .iter()
        .map(|&[i, j]| (p[i] - p[j]).norm())
        .fold(0.0, f64::max)
}

/// Build the crossing topology. Tets at positions `>= n_real` are auxiliary and
/// exempt from the degeneracy check.
pub fn crossing_topology(
    tets: &[[usize; 4]],
    n_real: usize,
    positions: &[Vec3],
    values: &[f64],
    conv: CrossingConvention,
) -> Result<CrossingTopology> {
    let mut topo = CrossingTopology::default();
    let mut edge_id: HashMap<(usize, usize), usize> = HashMap::new();
    for (ti, tet) in tets.iter().enumerate() {
        let inside = tet.map(|n| conv.inside(values[n]));
        let n_in = inside.iter().filter(|&&b| b).count();
        let p = tet.map(|n| positions[n]);
        if ti < n_real {
            let l = max_edge(&p);
            let vol = tet_signed_volume(&p[0], &p[1], &p[2], &p[3]);
            if !(vol.abs() > 1e-12 * l * l * l) {
                return Err(CmacError::DegenerateTet(ti));
            }
        }
        if n_in == 0 || n_in == 4 {
            continue;
        }
        let mut local = |i: usize, j: usize| -> usize {
            let (a, b) = if inside[i] {
                (tet[j], tet[i])
            } else {
                (tet[i], tet[j])
            };
            *edge_id.entry((a, b)).or_insert_with(|| {
                topo.crossing_edges.push([a, b]);
                topo.vertex_origin.push(topo.crossing_edges.len() - 1);
                topo.crossing_edges.len() - 1
            })
        };
        let ins: Vec<usize> = (0..4).filter(|&i| inside[i]).collect();
        let outs: Vec<usize> = (0..4).filter(|&i| !inside[i]).collect();
        let mid = |i: usize, j: usize| (p[i] + p[j]) * 0.5;
        let c_in = ins.iter().map(|&i| p[i]).sum::<Vec3>() / ins.len() as f64;
        let c_out = outs.iter().map(|&i| p[i]).sum::<Vec3>() / outs.len() as f64;
        let away = c_out - c_in;
        let emit = |tri: [usize; 3], mids: [Vec3; 3], topo_tris: &mut Vec<[usize; 3]>| {
            let n = (mids[1] - mids[0]).cross(&(mids[2] - mids[0]));
            if n.dot(&away) < 0.0 {
                topo_tris.push([tri[0], tri[2], tri[1]]);
            } else {
                topo_tris.push(tri);
            }
        };
        let mut tris = Vec::new();
        match n_in {
            1 | 3 => {
                let (apex, others) = if n_in == 1 {
                    (ins[0], &outs)
                } else {
                    (outs[0], &ins)
                };
                let ids = [0, 1, 2].map(|k| local(apex, others[k]));
                let mids = [0, 1, 2].map(|k| mid(apex, others[k]));
                emit(ids, mids, &mut tris);
            }
            _ => {
                let (p1, p2, n1, n2) = (ins[0], ins[1], outs[0], outs[1]);
                // cyclic quad p1n1, p1n2, p2n2, p2n1 split along p1n1 - p2n2
                let q = [local(p1, n1), local(p1, n2), local(p2, n2), local(p2, n1)];
                let m = [mid(p1, n1), mid(p1, n2), mid(p2, n2), mid(p2, n1)];
                emit([q[0], q[1], q[2]], [m[0], m[1], m[2]], &mut tris);
                emit([q[0], q[2], q[3]], [m[0], m[2], m[3]], &mut tris);
            }
        }
        topo.triangles.extend(tris);
    }
    Ok(topo)
}

/// Isosurface of a nodal field together with its crossing topology.
pub fn marching_tets(
    tets: &[[usize; 4]],
    n_real: usize,
    positions: &[Vec3],
    values: &[f64],
    conv: CrossingConvention,
) -> Result<(TriSurface, CrossingTopology)> {
    let topo = crossing_topology(tets, n_real, positions, values, conv)?;
    Ok((topo.surface(positions, values), topo))
}

/// The six tetrahedra of a unit cube sharing the main diagonal (corner ids are
/// `x + 2y + 4z`). The split is conforming across neighbouring cubes.
pub const KUHN_TETS: [[usize; 4]; 6] = [
    [0, 1, 3, 7],
    [0, 1, 5, 7],
    [0, 2, 3, 7],
    [0, 2, 6, 7],
    [0, 4, 5, 7],
    [0, 4, 6, 7],
];

/// Marching tets over a regular lattice of nodal values. Only cubes with mixed
/// signs are tetrahedralized. Node `(i, j, k)` sits at `origin + (i, j, k) * h`.
pub fn lattice_isosurface(
    dims: [usize; 3],
    origin: Vec3,
    h: Vec3,
    value: impl Fn(usize, usize, usize) -> f64,
    conv: CrossingConvention,
) -> Result<TriSurface> {
    if dims.iter().any(|&d| d < 2) {
        return Ok(TriSurface::default());
    }
    let mut node_of: HashMap<usize, usize> = HashMap::new();
    let mut positions = Vec::new();
    let mut values = Vec::new();
    let mut tets = Vec::new();
    let gid = |i: usize, j: usize, k: usize| i + dims[0] * (j + dims[1] * k);
    for k in 0..dims[2] - 1 {
        for j in 0..dims[1] - 1 {
            for i in 0..dims[0] - 1 {
                let mut corner_val = [0.0; 8];
                let mut n_in = 0;
                for (c, cv) in corner_val.iter_mut().enumerate() {
                    *cv = value(i + (c & 1), j + ((c >> 1) & 1), k + ((c >> 2) & 1));
                    n_in += conv.inside(*cv) as usize;
                }
                if n_in == 0 || n_in == 8 {
                    continue;
                }
                let mut local = [0usize; 8];
                for c in 0..8 {
                    let (ci, cj, ck) = (i + (c & 1), j + ((c >> 1) & 1), k + ((c >> 2) & 1));
                    let g = gid(ci, cj, ck);
                    local[c] = *node_of.entry(g).or_insert_with(|| {
                        positions.push(
                            origin + Vec3::new(ci as f64, cj as f64, ck as f64).component_mul(&h),
                        );
                        values.push(corner_val[c]);
                        positions.len() - 1
                    });
                }
                for t in KUHN_TETS {
                    tets.push(t.map(|c| local[c]));
                }
            }
        }
    }
    let n = tets.len();
    let (surf, _) = marching_tets(&tets, n, &positions, &values, conv)?;
    Ok(surf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::tri_normal;

    fn unit_tet() -> Vec<Vec3> {
        vec![
            Vec3::new(0., 0., 0.),
            Vec3::new(1., 0., 0.),
            Vec3::new(0., 1., 0.),
            Vec3::new(0., 0., 1.),
        ]
    }

    #[test]
    fn one_positive_gives_midpoint_triangle() {
        let p = unit_tet();
        let (s, topo) = marching_tets(
            &[[0, 1, 2, 3]],
            1,
            &p,
            &[1.0, -1.0, -1.0, -1.0],
            CrossingConvention::Printed,
        )
        .unwrap();
        assert_eq!(s.faces.len(), 1);
        let mut v = s.vertices.clone();
        v.sort_by(|a, b| a.as_slice().partial_cmp(b.as_slice()).unwrap());
        assert_eq!(
            v,
            vec![
                Vec3::new(0., 0., 0.5),
                Vec3::new(0., 0.5, 0.),
                Vec3::new(0.5, 0., 0.)
            ]
        );
        // normal points away from the positive node at the origin
        let f = s.faces[0];
        let n = tri_normal(&s.vertices[f[0]], &s.vertices[f[1]], &s.vertices[f[2]]);
        assert!(n.dot(&Vec3::new(1., 1., 1.)) > 0.0);
        assert_eq!(topo.crossing_edges.len(), 3);
    }

    #[test]
    fn two_positive_gives_quad() {
        let p = unit_tet();
        let (s, _) = marching_tets(
            &[[0, 1, 2, 3]],
            1,
            &p,
            &[1.0, 1.0, -1.0, -1.0],
            CrossingConvention::Printed,
        )
        .unwrap();
        assert_eq!(s.faces.len(), 2);
        assert_eq!(s.vertices.len(), 4);
    }

    #[test]
    fn uniform_signs_emit_nothing() {
        let p = unit_tet();
        for vals in [[1.0; 4], [-1.0; 4], [0.0; 4]] {
            let (s, _) =
                marching_tets(&[[0, 1, 2, 3]], 1, &p, &vals, CrossingConvention::Printed).unwrap();
            assert!(s.faces.is_empty());
        }
    }

    #[test]
    fn zero_node_is_hit_exactly() {
        let p = vec![
            Vec3::new(0.1, 0.3, 0.7),
            Vec3::new(1.3, 0.2, 0.1),
            Vec3::new(0.4, 1.1, 0.3),
            Vec3::new(0.2, 0.1, 0.9),
        ];
        let (s, topo) = marching_tets(
            &[[0, 1, 2, 3]],
            1,
            &p,
            &[0.0, 0.37, -0.2, -0.5],
            CrossingConvention::Printed,
        )
        .unwrap();
        let e = topo
            .crossing_edges
            .iter()
            .position(|&e| e == [0, 1])
            .unwrap();
        assert_eq!(s.vertices[e], p[0]);
    }

    #[test]
    fn fake_edges_land_on_the_inside_end() {
        let p = vec![
            Vec3::new(0.1, 0.3, 0.7),
            Vec3::new(1.3, 0.2, 0.1),
            Vec3::new(0.4, 1.1, 0.3),
            Vec3::new(20., -30., 9.),
        ];
        // alternate convention: boundary zeros are inside, the fake node is not
        let (s, topo) = marching_tets(
            &[[0, 1, 2, 3]],
            0,
            &p,
            &[0.0, 0.0, 0.0, -1e12],
            CrossingConvention::Alternate,
        )
        .unwrap();
        assert_eq!(s.faces.len(), 1);
        for (e, &[a, b]) in topo.crossing_edges.iter().enumerate() {
            assert_eq!(a, 3);
            assert_eq!(s.vertices[e], p[b]);
        }
        let x = crossing_point(&p[3], &p[0], -1e12, 1.0);
        // relative to the edge length the vertex sits 1/(1e12 + 1) of the way from v_b
        assert!((x - p[0]).norm() / (p[3] - p[0]).norm() <= 1.001e-12);
    }

    #[test]
    fn degenerate_real_tet_is_rejected() {
        let p = vec![
            Vec3::zeros(),
            Vec3::new(1., 0., 0.),
            Vec3::new(0., 1., 0.),
            Vec3::new(1., 1., 0.),
        ];
        let err = marching_tets(
            &[[0, 1, 2, 3]],
            1,
            &p,
            &[1., -1., -1., -1.],
            CrossingConvention::Printed,
        );
        assert!(matches!(err, Err(CmacError::DegenerateTet(0))));
        assert!(marching_tets(
            &[[0, 1, 2, 3]],
            0,
            &p,
            &[1., -1., -1., -1.],
            CrossingConvention::Printed
        )
        .is_ok());
    }

    #[test]
    fn kuhn_tets_fill_the_cube() {
        let corner =
            |c: usize| Vec3::new((c & 1) as f64, ((c >> 1) & 1) as f64, ((c >> 2) & 1) as f64);
        let vol: f64 = KUHN_TETS
            .iter()
            .map(|t| {
                tet_signed_volume(&corner(t[0]), &corner(t[1]), &corner(t[2]), &corner(t[3])).abs()
            })
            .sum();
        assert!((vol - 1.0).abs() < 1e-15);
    }

    #[test]
    fn lattice_sphere_is_closed() {
        let n = 12;
        let c = Vec3::repeat(5.5);
        let s = lattice_isosurface(
            [n; 3],
            Vec3::zeros(),
            Vec3::repeat(1.0),
            |i, j, k| 4.0 - (Vec3::new(i as f64, j as f64, k as f64) - c).norm(),
            CrossingConvention::Printed,
        )
        .unwrap();
        let r = crate::mesh::is_watertight_manifold(&s);
        assert!(r.ok, "{r:?}");
        assert!(s.signed_volume() > 0.0);
    }
}
