//! Nearest-neighbour queries over point sets.

use kiddo::immutable::float::kdtree::ImmutableKdTree;
use kiddo::SquaredEuclidean;

use crate::Vec3;

/// Static k-d tree over a point set. Ties are broken toward the lowest index so
/// results never depend on tree layout.
pub struct PointIndex {
    tree: Option<ImmutableKdTree<f64, u32, 3, 32>>,
    len: usize,
}

impl PointIndex {
    pub fn new(points: &[Vec3]) -> Self {
        if points.is_empty() {
            return PointIndex { tree: None, len: 0 };
        }
        let raw: Vec<[f64; 3]> = points.iter().map(|p| [p.x, p.y, p.z]).collect();
        PointIndex {
            tree: Some(ImmutableKdTree::new_from_slice(&raw)),
            len: points.len(),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// `(index, euclidean distance)` of the nearest point.
    pub fn nearest(&self, q: &Vec3) -> Option<(usize, f64)> {
        let tree = self.tree.as_ref()?;
        let qa = [q.x, q.y, q.z];
        let nn = tree.nearest_one::<SquaredEuclidean>(&qa);
        let ties = tree.within_unsorted::<SquaredEuclidean>(&qa, nn.distance);
        let best = ties
            .iter()
            .filter(|t| t.distance <= nn.distance)
            .map(|t| t.item)
            .chain(std::iter::once(nn.item))
            .min()
            .unwrap_or(nn.item);
        Some((best as usize, nn.distance.sqrt()))
    }

    /// All points within `radius` (inclusive), sorted by distance then index.
    pub fn within(&self, q: &Vec3, radius: f64) -> Vec<(usize, f64)> {
        let Some(tree) = self.tree.as_ref() else {
            return Vec::new();
        };
        let mut out: Vec<(usize, f64)> = tree
            .within_unsorted::<SquaredEuclidean>(&[q.x, q.y, q.z], radius * radius)
            .into_iter()
            .map(|n| (n.item as usize, n.distance.sqrt()))
            .filter(|&(_, d)| d <= radius)
            .collect();
        out.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_index_answers_none() {
        let idx = PointIndex::new(&[]);
        assert!(idx.nearest(&Vec3::zeros()).is_none());
        assert!(idx.within(&Vec3::zeros(), 1.0).is_empty());
    }

    #[test]
    fn duplicate_points_resolve_to_lowest_index() {
        let pts = vec![
            Vec3::new(1., 0., 0.),
            Vec3::new(0., 0., 0.),
            Vec3::new(0., 0., 0.),
        ];
        let idx = PointIndex::new(&pts);
        assert_eq!(idx.nearest(&Vec3::new(0.1, 0., 0.)), Some((1, 0.1)));
        let w = idx.within(&Vec3::zeros(), 1.0);
        assert_eq!(w.iter().map(|x| x.0).collect::<Vec<_>>(), vec![1, 2, 0]);
    }

    #[test]
    fn nearest_matches_brute_force() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Vec3> = (0..500)
            .map(|_| Vec3::new(rng.random(), rng.random(), rng.random()))
            .collect();
        let idx = PointIndex::new(&pts);
        for _ in 0..100 {
            let q = Vec3::new(rng.random(), rng.random(), rng.random());
            let (bi, bd) = pts
                .iter()
                .enumerate()
                .map(|(i, p)| (i, (p - q).norm()))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap();
            let (i, d) = idx.nearest(&q).unwrap();
            assert_eq!(i, bi);
            assert!((d - bd).abs() < 1e-12);
        }
    }
}
