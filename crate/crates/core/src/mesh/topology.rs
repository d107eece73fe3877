use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::TriSurface;
use crate::spatial::PointIndex;

/// Defect counts of a triangle surface; `ok` iff all are zero.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ManifoldReport {
    pub ok: bool,
    /// Edges used by exactly one face.
    pub boundary_edges: usize,
    /// Edges used by three or more faces.
    pub nonmanifold_edges: usize,
    /// Two-face edges traversed in the same direction by both faces.
    pub misoriented_edges: usize,
    /// Vertex pairs closer than the tolerance.
    pub duplicate_vertices: usize,
    /// Faces with a repeated vertex index.
    pub degenerate_faces: usize,
}

pub const DUPLICATE_TOL: f64 = 1e-9;

pub fn is_watertight_manifold(s: &TriSurface) -> ManifoldReport {
    is_watertight_manifold_tol(s, DUPLICATE_TOL)
}

pub fn is_watertight_manifold_tol(s: &TriSurface, tol: f64) -> ManifoldReport {
    let mut r = ManifoldReport::default();
    // directed use counts per undirected edge
    let mut edges: HashMap<(usize, usize), (u32, u32)> = HashMap::new();
    for f in &s.faces {
        if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
            r.degenerate_faces += 1;
            continue;
        }
        for k in 0..3 {
            let (a, b) = (f[k], f[(k + 1) % 3]);
            let e = edges.entry((a.min(b), a.max(b))).or_insert((0, 0));
            if a < b {
                e.0 += 1;
            } else {
                e.1 += 1;
            }
        }
    }
    for &(fwd, bwd) in edges.values() {
        match fwd + bwd {
            1 => r.boundary_edges += 1,
            2 => {
                if fwd != 1 {
                    r.misoriented_edges += 1;
                }
            }
            _ => r.nonmanifold_edges += 1,
        }
    }
    let mut used = vec![false; s.vertices.len()];
    for f in &s.faces {
        for &i in f {
            used[i] = true;
        }
    }
    let ids: Vec<usize> = (0..s.vertices.len()).filter(|&i| used[i]).collect();
    let pts: Vec<_> = ids.iter().map(|&i| s.vertices[i]).collect();
    let idx = PointIndex::new(&pts);
    for (k, p) in pts.iter().enumerate() {
        r.duplicate_vertices += idx.within(p, tol).iter().filter(|(j, _)| *j > k).count();
    }
    r.ok = r.boundary_edges == 0
        && r.nonmanifold_edges == 0
        && r.misoriented_edges == 0
        && r.duplicate_vertices == 0
        && r.degenerate_faces == 0;
    r
}

/// Edge-connected face components, numbered by lowest face index. Returns the
/// component id of every face and the number of components.
pub fn connected_face_components(s: &TriSurface) -> (Vec<usize>, usize) {
    let n = s.faces.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let mut first: HashMap<(usize, usize), usize> = HashMap::new();
    for (fi, f) in s.faces.iter().enumerate() {
        for k in 0..3 {
            let (a, b) = (f[k], f[(k + 1) % 3]);
            match first.get(&(a.min(b), a.max(b))) {
                Some(&g) => {
                    let (ra, rb) = (find(&mut parent, fi), find(&mut parent, g));
                    if ra != rb {
                        parent[ra.max(rb)] = ra.min(rb);
                    }
                }
                None => {
                    first.insert((a.min(b), a.max(b)), fi);
                }
            }
        }
    }
    let mut label = vec![usize::MAX; n];
    let mut ids: HashMap<usize, usize> = HashMap::new();
    for fi in 0..n {
        let r = find(&mut parent, fi);
        let next = ids.len();
        label[fi] = *ids.entry(r).or_insert(next);
    }
    (label, ids.len())
}

/// Vertices whose incident faces do not form a single edge-connected fan
/// (pinch points). Isolated vertices are not reported.
pub fn pinched_vertices(s: &TriSurface) -> Vec<usize> {
    // link of v: the opposite edge of every incident face
    let mut link: Vec<Vec<[usize; 2]>> = vec![Vec::new(); s.vertices.len()];
    for f in &s.faces {
        for k in 0..3 {
            link[f[k]].push([f[(k + 1) % 3], f[(k + 2) % 3]]);
        }
    }
    let mut out = Vec::new();
    for (v, edges) in link.iter().enumerate() {
        if edges.len() < 2 {
            continue;
        }
        let mut ids: Vec<usize> = edges.iter().flatten().copied().collect();
        ids.sort_unstable();
        ids.dedup();
        let mut parent: Vec<usize> = (0..ids.len()).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        let pos = |x: usize| ids.binary_search(&x).unwrap_or(0);
        let mut groups = ids.len();
        for e in edges {
            let (a, b) = (find(&mut parent, pos(e[0])), find(&mut parent, pos(e[1])));
            if a != b {
                parent[a.max(b)] = a.min(b);
                groups -= 1;
            }
        }
        if groups > 1 {
            out.push(v);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Vec3;

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
    fn closed_tet_is_ok() {
        assert!(is_watertight_manifold(&tet_surface()).ok);
        assert!(pinched_vertices(&tet_surface()).is_empty());
    }

    #[test]
    fn two_tets_sharing_a_vertex_pinch_it() {
        let a = tet_surface();
        let mut s = a.clone();
        s.vertices.extend([
            Vec3::new(-1., 0., 0.),
            Vec3::new(0., -1., 0.),
            Vec3::new(0., 0., -1.),
        ]);
        // mirror image through the origin, sharing vertex 0
        s.faces.extend([[4, 5, 6], [0, 6, 5], [0, 4, 6], [0, 5, 4]]);
        assert!(is_watertight_manifold(&s).ok);
        assert_eq!(pinched_vertices(&s), vec![0]);
    }

    #[test]
    fn missing_face_gives_three_boundary_edges() {
        let mut s = tet_surface();
        s.faces.pop();
        let r = is_watertight_manifold(&s);
        assert!(!r.ok);
        assert_eq!(r.boundary_edges, 3);
    }

    #[test]
    fn shared_edge_between_two_tets_is_nonmanifold() {
        let mut s = tet_surface();
        let off = Vec3::new(0., 0., 0.);
        // second tet sharing edge 0-1, apex on the other side
        s.vertices.push(Vec3::new(0., -1., 0.) + off);
        s.vertices.push(Vec3::new(0., 0., -1.) + off);
        s.faces.extend([[1, 4, 5], [0, 5, 4], [0, 1, 5], [0, 4, 1]]);
        let r = is_watertight_manifold(&s);
        assert_eq!(r.nonmanifold_edges, 1);
        assert!(!r.ok);
    }

    #[test]
    fn flipped_face_is_misoriented() {
        let mut s = tet_surface();
        s.faces[0] = [1, 3, 2];
        assert_eq!(is_watertight_manifold(&s).misoriented_edges, 3);
    }

    #[test]
    fn duplicate_vertex_reported() {
        let mut s = tet_surface();
        s.vertices.push(Vec3::zeros());
        s.faces[1] = [4, 3, 2];
        let r = is_watertight_manifold(&s);
        assert_eq!(r.duplicate_vertices, 1);
    }

    #[test]
    fn two_shells_are_two_components() {
        let mut s = tet_surface();
        let n = s.vertices.len();
        let t = tet_surface();
        s.vertices
            .extend(t.vertices.iter().map(|v| v + Vec3::repeat(5.0)));
        s.faces.extend(t.faces.iter().map(|f| f.map(|i| i + n)));
        let (lab, k) = connected_face_components(&s);
        assert_eq!(k, 2);
        assert_eq!(lab, vec![0, 0, 0, 0, 1, 1, 1, 1]);
    }
}
