use super::{Voxel, VoxelGrid};
use crate::Vec3;

/// Cell corner and fractional offsets for a world point, clamped to the grid.
/// `active[a]` is false when the coordinate was clamped along axis `a`.
#[inline]
fn locate<T: Voxel>(g: &VoxelGrid<T>, p: &Vec3) -> ([usize; 3], [f64; 3], [bool; 3]) {
    let u = g.to_voxel(p);
    let d = g.dims();
    let mut base = [0usize; 3];
    let mut frac = [0.0; 3];
    let mut active = [false; 3];
    for a in 0..3 {
        let hi = (d[a] - 1) as f64;
        if d[a] == 1 {
            continue;
        }
        let x = u[a];
        if x <= 0.0 {
            base[a] = 0;
            frac[a] = 0.0;
            active[a] = x == 0.0;
        } else if x >= hi {
            base[a] = d[a] - 2;
            frac[a] = 1.0;
            active[a] = x == hi;
        } else {
            let f = x.floor();
            base[a] = (f as usize).min(d[a] - 2);
            frac[a] = x - base[a] as f64;
            active[a] = true;
        }
    }
    (base, frac, active)
}

#[inline]
fn corner<T: Voxel>(g: &VoxelGrid<T>, base: [usize; 3], o: [usize; 3]) -> f64 {
    let d = g.dims();
    let i = (base[0] + o[0]).min(d[0] - 1);
    let j = (base[1] + o[1]).min(d[1] - 1);
    let k = (base[2] + o[2]).min(d[2] - 1);
    g.get(i, j, k).into()
}

pub(crate) fn trilinear_at<T: Voxel>(g: &VoxelGrid<T>, p: &Vec3) -> f64 {
    let (b, f, _) = locate(g, p);
    let mut acc = 0.0;
    for dz in 0..2 {
        let wz = if dz == 0 { 1.0 - f[2] } else { f[2] };
        for dy in 0..2 {
            let wy = if dy == 0 { 1.0 - f[1] } else { f[1] };
            for dx in 0..2 {
                let wx = if dx == 0 { 1.0 - f[0] } else { f[0] };
                let w = wx * wy * wz;
                if w != 0.0 {
                    acc += w * corner(g, b, [dx, dy, dz]);
                }
            }
        }
    }
    acc
}

/// Trilinear interpolation in world coordinates; points outside clamp to the
/// boundary value.
pub fn sample_trilinear<T: Voxel>(grid: &VoxelGrid<T>, points: &[Vec3]) -> Vec<f64> {
    points.iter().map(|p| trilinear_at(grid, p)).collect()
}

/// Value and world-space gradient of the trilinear interpolant. The gradient is
/// zero along clamped axes; on cell faces the slope of the upper cell is used.
pub fn sample_trilinear_grad<T: Voxel>(grid: &VoxelGrid<T>, p: &Vec3) -> (f64, Vec3) {
    let (b, f, active) = locate(grid, p);
    let h = grid.spacing();
    let mut val = 0.0;
    let mut grad = Vec3::zeros();
    for dz in 0..2usize {
        for dy in 0..2usize {
            for dx in 0..2usize {
                let o = [dx, dy, dz];
                let c = corner(grid, b, o);
                let w1 = [0, 1, 2].map(|a| if o[a] == 0 { 1.0 - f[a] } else { f[a] });
                let dw = [0, 1, 2].map(|a| if o[a] == 0 { -1.0 } else { 1.0 });
                val += w1[0] * w1[1] * w1[2] * c;
                grad.x += dw[0] * w1[1] * w1[2] * c;
                grad.y += w1[0] * dw[1] * w1[2] * c;
                grad.z += w1[0] * w1[1] * dw[2] * c;
            }
        }
    }
    for a in 0..3 {
        grad[a] = if active[a] && grid.dims()[a] > 1 {
            grad[a] / h[a]
        } else {
            0.0
        };
    }
    (val, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_grid(seed: u64) -> VoxelGrid<f32> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let dims = [5, 4, 6];
        let data = (0..120).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        VoxelGrid::new(
            dims,
            Vec3::new(0.5, 1.0, 1.5),
            Vec3::new(-1.0, 2.0, 0.5),
            data,
        )
        .unwrap()
    }

    #[test]
    fn exact_at_voxel_centers() {
        let g = random_grid(1);
        for idx in 0..g.len() {
            let p = g.center(g.coords(idx));
            assert_eq!(trilinear_at(&g, &p), g.data()[idx] as f64);
        }
    }

    #[test]
    fn midpoint_is_mean() {
        let g = random_grid(2);
        let p = (g.center([1, 1, 1]) + g.center([2, 1, 1])) * 0.5;
        let m = 0.5 * (g.get(1, 1, 1) as f64 + g.get(2, 1, 1) as f64);
        assert!((trilinear_at(&g, &p) - m).abs() < 1e-12);
    }

    #[test]
    fn matches_eight_corner_oracle() {
        let g = random_grid(3);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..500 {
            let u = [
                rng.random_range(0.0..4.0),
                rng.random_range(0.0..3.0),
                rng.random_range(0.0..5.0),
            ];
            let p = g.origin() + Vec3::new(u[0], u[1], u[2]).component_mul(&g.spacing());
            let i0 = [0, 1, 2].map(|a| (u[a] as f64).floor() as usize);
            let mut oracle = 0.0;
            for c in 0..8 {
                let o = [c & 1, (c >> 1) & 1, (c >> 2) & 1];
                let mut w = 1.0;
                for a in 0..3 {
                    let t = u[a] - i0[a] as f64;
                    w *= if o[a] == 1 { t } else { 1.0 - t };
                }
                let idx = [0, 1, 2].map(|a| (i0[a] + o[a]).min(g.dims()[a] - 1));
                oracle += w * g.get(idx[0], idx[1], idx[2]) as f64;
            }
            assert!((trilinear_at(&g, &p) - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn clamps_outside() {
        let g = random_grid(5);
        let far = g.origin() - Vec3::repeat(10.0);
        assert_eq!(trilinear_at(&g, &far), g.get(0, 0, 0) as f64);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let g = random_grid(6);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let u = Vec3::new(
                rng.random_range(0.1..3.9),
                rng.random_range(0.1..2.9),
                rng.random_range(0.1..4.9),
            );
            let p = g.origin() + u.component_mul(&g.spacing());
            let (_, gr) = sample_trilinear_grad(&g, &p);
            for a in 0..3 {
                let mut e = Vec3::zeros();
                e[a] = 1e-7;
                let fd = (trilinear_at(&g, &(p + e)) - trilinear_at(&g, &(p - e))) / 2e-7;
                assert!((fd - gr[a]).abs() < 1e-5, "{fd} vs {}", gr[a]);
            }
        }
    }
}
