use std::collections::BTreeMap;
use std::f64::consts::PI;

use crate::mesh::{TriSurface, VertexTag};
use crate::spatial::PointIndex;

/// Merge tolerance for near-coincident output vertices.
pub const CLEAN_TOL: f64 = 1e-2;

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Merges vertices closer than `tol` (union-find; each group takes the position
/// and tag of its lowest index), removes faces with fewer than three distinct
/// vertices and drops unreferenced vertices.
pub fn clean_mesh(s: &TriSurface, tol: f64) -> TriSurface {
    let n = s.vertices.len();
    let mut parent: Vec<usize> = (0..n).collect();
    let index = PointIndex::new(&s.vertices);
    for i in 0..n {
        for (j, _) in index.within(&s.vertices[i], tol) {
            if j <= i {
                continue;
            }
            let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
            if ri != rj {
                let (lo, hi) = (ri.min(rj), ri.max(rj));
                parent[hi] = lo;
            }
        }
    }
    let rep: Vec<usize> = (0..n).map(|i| find(&mut parent, i)).collect();
    let mut faces = Vec::with_capacity(s.faces.len());
    let mut face_tags = s.face_tags.as_ref().map(|_| Vec::new());
    for (fi, f) in s.faces.iter().enumerate() {
        let g = f.map(|i| rep[i]);
        if g[0] == g[1] || g[1] == g[2] || g[0] == g[2] {
            continue;
        }
        faces.push(g);
        if let (Some(out), Some(tags)) = (face_tags.as_mut(), s.face_tags.as_ref()) {
            out.push(tags[fi]);
        }
    }
    let mut out = TriSurface {
        vertices: s.vertices.clone(),
        faces,
        vertex_tags: s.vertex_tags.clone(),
        face_tags,
    };
    out.compact();
    out
}

/// Resolves edges shared by more than two faces, which appear where the
/// surface touches itself along a line (typically two contact patches on both
/// sides of a heart edge with an empty wedge between them).
///
/// The faces around such an edge are sorted by angle. Each empty wedge between
/// two of them is a tetrahedron candidate; adding the narrowest one to the
/// interior replaces its two faces by the other two faces of the tet. Wedges
/// opening onto free vertices are preferred over wedges between contact
/// vertices, which would mostly face the heart. Returns the repaired surface
/// and the number of wedges filled; gives up on an edge without candidates.
pub fn close_nonmanifold_edges(s: &TriSurface) -> (TriSurface, usize) {
    let mut out = s.clone();
    let mut filled = 0;
    let limit = 4 * s.faces.len() + 16;
    while filled < limit {
        let mut edges: BTreeMap<[usize; 2], Vec<usize>> = BTreeMap::new();
        for (fi, f) in out.faces.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                edges.entry([a.min(b), a.max(b)]).or_default().push(fi);
            }
        }
        let mut progress = false;
        for (e, fs) in &edges {
            if fs.len() <= 2 {
                continue;
            }
            if let Some((fa, fb, p, q)) = best_wedge(&out, *e, fs, &edges) {
                let [a, b] = *e;
                let tag = out.face_tags.as_ref().map(|t| t[fa]);
                let mut drop = vec![fa, fb];
                let mut add = Vec::new();
                for f in [[b, p, q], [a, q, p]] {
                    // a new face meeting its own reverse closes a cavity
                    match find_face(&out, &edges, [f[0], f[2], f[1]]) {
                        Some(r) => drop.push(r),
                        None => add.push(f),
                    }
                }
                drop.sort_unstable();
                for &d in drop.iter().rev() {
                    out.faces.swap_remove(d);
                    if let Some(t) = out.face_tags.as_mut() {
                        t.swap_remove(d);
                    }
                }
                for f in add {
                    out.faces.push(f);
                    if let (Some(t), Some(tag)) = (out.face_tags.as_mut(), tag) {
                        t.push(tag);
                    }
                }
                out.compact();
                filled += 1;
                progress = true;
                break;
            }
        }
        if !progress {
            break;
        }
    }
    (out, filled)
}

/// Index of the face with exactly this vertex cycle.
fn find_face(
    s: &TriSurface,
    edges: &BTreeMap<[usize; 2], Vec<usize>>,
    f: [usize; 3],
) -> Option<usize> {
    let same = |g: [usize; 3]| {
        (0..3).any(|r| g[r] == f[0] && g[(r + 1) % 3] == f[1] && g[(r + 2) % 3] == f[2])
    };
    edges
        .get(&[f[0].min(f[1]), f[0].max(f[1])])?
        .iter()
        .copied()
        .find(|&i| same(s.faces[i]))
}

/// The wedge to fill at edge `e = [a, b]`: faces `(fa, fb)` where `fa` runs
/// `a -> b` with apex `p` and `fb` runs `b -> a` with apex `q`.
fn best_wedge(
    s: &TriSurface,
    e: [usize; 2],
    fs: &[usize],
    edges: &BTreeMap<[usize; 2], Vec<usize>>,
) -> Option<(usize, usize, usize, usize)> {
    let [a, b] = e;
    let u = (s.vertices[b] - s.vertices[a]).normalize();
    let x = if u.x.abs() < 0.9 {
        u.cross(&crate::Vec3::x())
    } else {
        u.cross(&crate::Vec3::y())
    }
    .normalize();
    let y = u.cross(&x);
    // (angle, face, apex, runs a -> b)
    let mut around: Vec<(f64, usize, usize, bool)> = fs
        .iter()
        .map(|&fi| {
            let f = s.faces[fi];
            let k = f.iter().position(|&v| v == a).unwrap();
            let forward = f[(k + 1) % 3] == b;
            let w = f.iter().copied().find(|&v| v != a && v != b).unwrap();
            let r = s.vertices[w] - s.vertices[a];
            (r.dot(&y).atan2(r.dot(&x)), fi, w, forward)
        })
        .collect();
    around.sort_by(|l, r| l.0.total_cmp(&r.0).then(l.1.cmp(&r.1)));
    let contact = |v: usize| {
        s.vertex_tags
            .as_ref()
            .is_some_and(|t| t[v] == VertexTag::Contact)
    };
    let n = around.len();
    let mut best: Option<((usize, f64), (usize, usize, usize, usize))> = None;
    for i in 0..n {
        let (ta, fa, p, fwd_a) = around[i];
        let (tb, fb, q, fwd_b) = around[(i + 1) % n];
        // a face running a -> b has the outside at increasing angle
        if !fwd_a || fwd_b || p == q {
            continue;
        }
        // faces left on edge pq: the existing ones, plus each new face that
        // does not cancel an existing reverse, minus the ones it cancels
        let existing = edges.get(&[p.min(q), p.max(q)]).map_or(0, Vec::len);
        let cancels = [[b, q, p], [a, p, q]]
            .iter()
            .filter(|f| find_face(s, edges, **f).is_some())
            .count();
        let left = existing + 2 - 2 * cancels;
        if left != 0 && left != 2 {
            continue;
        }
        let angle = (tb - ta).rem_euclid(2.0 * PI);
        if angle >= PI {
            continue;
        }
        let key = (contact(p) as usize + contact(q) as usize, angle);
        if best
            .as_ref()
            .is_none_or(|(k, _)| key.0 < k.0 || (key.0 == k.0 && key.1 < k.1))
        {
            best = Some((key, (fa, fb, p, q)));
        }
    }
    best.map(|(_, w)| w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{icosphere, is_watertight_manifold, VertexTag};
    use crate::Vec3;

    #[test]
    fn no_near_duplicates_is_identity() {
        let s = icosphere(Vec3::zeros(), 1.0, 2);
        assert_eq!(clean_mesh(&s, CLEAN_TOL), s);
    }

    #[test]
    fn coincident_vertices_merge_and_degenerate_face_goes() {
        // a tetrahedron whose apex is split into two coincident copies
        // plus a sliver face between them
        let v = vec![
            Vec3::zeros(),
            Vec3::new(1., 0., 0.),
            Vec3::new(0., 1., 0.),
            Vec3::new(0., 0., 1.),
            Vec3::new(0., 0., 1.0 + 1e-3),
        ];
        let f = vec![[0, 2, 1], [0, 1, 3], [1, 2, 4], [2, 0, 3], [3, 1, 4]];
        let mut s = TriSurface::new(v, f);
        s.vertex_tags = Some(vec![
            VertexTag::Free,
            VertexTag::Free,
            VertexTag::Free,
            VertexTag::Contact,
            VertexTag::Free,
        ]);
        let c = clean_mesh(&s, CLEAN_TOL);
        assert_eq!(c.vertices.len(), 4);
        assert_eq!(c.faces.len(), 4);
        assert_eq!(c.vertices[3], Vec3::new(0., 0., 1.));
        assert_eq!(c.vertex_tags.as_ref().unwrap()[3], VertexTag::Contact);
        assert!(is_watertight_manifold(&c).ok);
    }

    #[test]
    fn chains_merge_transitively() {
        let v: Vec<Vec3> = (0..4)
            .map(|k| Vec3::new(k as f64 * 0.006, 0., 0.))
            .chain([Vec3::new(0., 1., 0.), Vec3::new(1., 0., 0.)])
            .collect();
        let s = TriSurface::new(v, vec![[0, 4, 5], [3, 5, 4]]);
        let c = clean_mesh(&s, CLEAN_TOL);
        assert_eq!(c.faces.len(), 2);
        assert_eq!(c.vertices.len(), 3);
        assert_eq!(c.vertices[0], Vec3::zeros());
    }
    #[test]
    fn two_cubes_sharing_an_edge_get_joined() {
        // unit cubes at the origin and at (1, 1, 0) touch along the z axis edge x = y = 1
        let mut v = Vec::new();
        let mut f = Vec::new();
        for o in [Vec3::zeros(), Vec3::new(1., 1., 0.)] {
            let c = crate::mesh::lattice_tet_mesh([1, 1, 1], o, Vec3::repeat(1.0), |_| {
                Some(crate::mesh::Component::Calcification)
            });
            let ext = crate::mesh::extract_component_surface(
                &c,
                &[crate::mesh::Component::Calcification],
            )
            .unwrap()
            .surface;
            let base = v.len();
            v.extend(ext.vertices.iter().copied());
            f.extend(ext.faces.iter().map(|t| t.map(|i| i + base)));
        }
        let joined = clean_mesh(&TriSurface::new(v, f), CLEAN_TOL);
        assert!(is_watertight_manifold(&joined).nonmanifold_edges > 0);
        let (fixed, n) = close_nonmanifold_edges(&joined);
        assert!(n >= 1);
        assert!(
            is_watertight_manifold(&fixed).ok,
            "{:?}",
            is_watertight_manifold(&fixed)
        );
        assert!(fixed.signed_volume() > joined.signed_volume());
    }

    #[test]
    fn manifold_input_is_untouched() {
        let s = icosphere(Vec3::zeros(), 1.0, 1);
        assert_eq!(close_nonmanifold_edges(&s), (s, 0));
    }
}
