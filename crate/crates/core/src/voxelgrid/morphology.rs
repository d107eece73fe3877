use super::{LabelGrid, VoxelGrid};
use crate::error::{CmacError, Result};
use crate::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    IsotropicBall,
    AdaptiveEllipsoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MorphOp {
    Dilate,
    Erode,
    Close,
}

/// Binary structuring element with odd extents, centered, stored x-fastest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Kernel {
    shape: [usize; 3],
    weights: Vec<bool>,
    kind: KernelKind,
    offsets: Vec<[i64; 3]>,
}

const MEMBERSHIP_TOL: f64 = 1e-9;

impl Kernel {
    fn from_predicate(
        shape: [usize; 3],
        kind: KernelKind,
        inside: impl Fn(Vec3) -> bool,
    ) -> Result<Kernel> {
        if shape.iter().any(|&s| s == 0 || s % 2 == 0) {
            return Err(CmacError::InvalidInput(format!(
                "kernel shape must be odd and positive, got {shape:?}"
            )));
        }
        let half = shape.map(|s| (s / 2) as i64);
        let mut weights = Vec::with_capacity(shape.iter().product());
        let mut offsets = Vec::new();
        for z in -half[2]..=half[2] {
            for y in -half[1]..=half[1] {
                for x in -half[0]..=half[0] {
                    let on =
                        (x, y, z) == (0, 0, 0) || inside(Vec3::new(x as f64, y as f64, z as f64));
                    weights.push(on);
                    if on {
                        offsets.push([x, y, z]);
                    }
                }
            }
        }
        Ok(Kernel {
            shape,
            weights,
            kind,
            offsets,
        })
    }

    /// Voxel centers within `radius` voxels of the center.
    pub fn ball(shape: [usize; 3], radius: f64) -> Result<Kernel> {
        Self::from_predicate(shape, KernelKind::IsotropicBall, |d| {
            d.norm() <= radius + MEMBERSHIP_TOL
        })
    }

    /// The 3×3×3 ball: every voxel center within √3 of the center, i.e. the full cube.
    pub fn ball3() -> Kernel {
        Self::ball([3, 3, 3], 3f64.sqrt()).expect("static shape")
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }
    pub fn weights(&self) -> &[bool] {
        &self.weights
    }
    pub fn kind(&self) -> KernelKind {
        self.kind
    }
    /// Offsets of the set voxels, in scan order.
    pub fn offsets(&self) -> &[[i64; 3]] {
        &self.offsets
    }
    pub fn len(&self) -> usize {
        self.offsets.len()
    }
    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }
}

/// Voxelized ellipsoid whose largest semi-axis lies along `direction`.
///
/// Semi-axes are in voxels and sorted descending; the two minor axes span the
/// plane orthogonal to `direction`.
pub fn adaptive_kernel(direction: Vec3, shape: [usize; 3], semiaxes: [f64; 3]) -> Result<Kernel> {
    let n = direction.norm();
    if !(n.is_finite() && n > 0.0) {
        return Err(CmacError::InvalidInput(
            "adaptive kernel direction must be nonzero".into(),
        ));
    }
    if semiaxes.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
        return Err(CmacError::InvalidInput("semi-axes must be positive".into()));
    }
    let mut ax = semiaxes;
    ax.sort_by(|a, b| b.total_cmp(a));
    let e1 = direction / n;
    let least = (0..3)
        .min_by(|&a, &b| e1[a].abs().total_cmp(&e1[b].abs()))
        .unwrap_or(0);
    let mut helper = Vec3::zeros();
    helper[least] = 1.0;
    let e2 = e1.cross(&helper).normalize();
    let e3 = e1.cross(&e2);
    Kernel::from_predicate(shape, KernelKind::AdaptiveEllipsoid, |d| {
        let q = (d.dot(&e1) / ax[0]).powi(2)
            + (d.dot(&e2) / ax[1]).powi(2)
            + (d.dot(&e3) / ax[2]).powi(2);
        q <= 1.0 + MEMBERSHIP_TOL
    })
}

fn stamp(out: &mut [u8], g: &LabelGrid, c: [usize; 3], offsets: &[[i64; 3]]) {
    for o in offsets {
        let q = [c[0] as i64 + o[0], c[1] as i64 + o[1], c[2] as i64 + o[2]];
        if let Some(i) = g.index_checked(q) {
            out[i] = 1;
        }
    }
}

fn fits(g: &LabelGrid, c: [usize; 3], offsets: &[[i64; 3]]) -> bool {
    offsets.iter().all(|o| {
        let q = [c[0] as i64 + o[0], c[1] as i64 + o[1], c[2] as i64 + o[2]];
        g.index_checked(q).is_some_and(|i| g.data()[i] != 0)
    })
}

/// Binary dilation; voxels outside the grid count as 0.
pub fn dilate(label: &LabelGrid, kernel: &Kernel) -> Result<LabelGrid> {
    label.ensure_binary()?;
    let mut out = vec![0u8; label.len()];
    for idx in label.nonzero() {
        stamp(&mut out, label, label.coords(idx), kernel.offsets());
    }
    Ok(label.with_data(out))
}

/// Binary erosion; voxels outside the grid count as 0.
pub fn erode(label: &LabelGrid, kernel: &Kernel) -> Result<LabelGrid> {
    label.ensure_binary()?;
    let mut out = vec![0u8; label.len()];
    for idx in label.nonzero() {
        if fits(label, label.coords(idx), kernel.offsets()) {
            out[idx] = 1;
        }
    }
    Ok(label.with_data(out))
}

/// Dilation then erosion, computed on a grid padded by the kernel half-extent
/// so the result is extensive up to the border.
pub fn close(label: &LabelGrid, kernel: &Kernel) -> Result<LabelGrid> {
    label.ensure_binary()?;
    let pad = kernel.shape().map(|s| s / 2);
    let big = pad_grid(label, pad);
    Ok(label.with_data(crop_grid(
        &erode(&dilate(&big, kernel)?, kernel)?,
        pad,
        label.dims(),
    )))
}

fn pad_grid(label: &LabelGrid, pad: [usize; 3]) -> LabelGrid {
    let d = label.dims();
    let nd = [d[0] + 2 * pad[0], d[1] + 2 * pad[1], d[2] + 2 * pad[2]];
    let mut data = vec![0u8; nd[0] * nd[1] * nd[2]];
    for idx in label.nonzero() {
        let c = label.coords(idx);
        data[(c[0] + pad[0]) + nd[0] * ((c[1] + pad[1]) + nd[1] * (c[2] + pad[2]))] = 1;
    }
    VoxelGrid::new(nd, label.spacing(), label.origin(), data).expect("padded dims are valid")
}

fn crop_grid(big: &LabelGrid, pad: [usize; 3], dims: [usize; 3]) -> Vec<u8> {
    let nd = big.dims();
    let mut data = Vec::with_capacity(dims.iter().product());
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            let row = nd[0] * ((y + pad[1]) + nd[1] * (z + pad[2])) + pad[0];
            data.extend_from_slice(&big.data()[row..row + dims[0]]);
        }
    }
    data
}

pub fn morphology(label: &LabelGrid, op: MorphOp, kernel: &Kernel) -> Result<LabelGrid> {
    match op {
        MorphOp::Dilate => dilate(label, kernel),
        MorphOp::Erode => erode(label, kernel),
        MorphOp::Close => close(label, kernel),
    }
}

/// Dilation where each site `p` stamps its own kernel `kernel_at(p)`.
pub fn variant_dilate<'k>(
    label: &LabelGrid,
    mut kernel_at: impl FnMut(usize) -> &'k Kernel,
) -> Result<LabelGrid> {
    label.ensure_binary()?;
    let mut out = vec![0u8; label.len()];
    for idx in label.nonzero() {
        stamp(&mut out, label, label.coords(idx), kernel_at(idx).offsets());
    }
    Ok(label.with_data(out))
}

/// Closing with a spatially varying kernel: `{p : p + K_p ⊆ ⋃_q (q + K_q)}`.
/// Sites off the grid use the kernel of the nearest grid voxel, which makes
/// the result extensive and equal to [`close`] for a constant kernel.
pub fn variant_close<'k>(
    label: &LabelGrid,
    mut kernel_at: impl FnMut(usize) -> &'k Kernel,
) -> Result<LabelGrid> {
    label.ensure_binary()?;
    let mut kernels: Vec<Option<&'k Kernel>> = vec![None; label.len()];
    let mut pad = [0usize; 3];
    for idx in label.nonzero() {
        let k = kernel_at(idx);
        for a in 0..3 {
            pad[a] = pad[a].max(k.shape()[a] / 2);
        }
        kernels[idx] = Some(k);
    }
    let big = pad_grid(label, pad);
    let d = label.dims();
    let small_index = |c: [usize; 3]| -> usize {
        let q = [0, 1, 2].map(|a| (c[a] as i64 - pad[a] as i64).clamp(0, d[a] as i64 - 1) as usize);
        q[0] + d[0] * (q[1] + d[1] * q[2])
    };
    let mut dil = vec![0u8; big.len()];
    for idx in big.nonzero() {
        let c = big.coords(idx);
        let k = kernels[small_index(c)].expect("set voxel has a kernel");
        stamp(&mut dil, &big, c, k.offsets());
    }
    let dil = big.with_data(dil);
    let mut out = vec![0u8; big.len()];
    for idx in dil.nonzero() {
        let c = dil.coords(idx);
        let si = small_index(c);
        let k = match kernels[si] {
            Some(k) => k,
            None => {
                let k = kernel_at(si);
                kernels[si] = Some(k);
                k
            }
        };
        if big.data()[idx] != 0 || fits(&dil, c, k.offsets()) {
            out[idx] = 1;
        }
    }
    Ok(label.with_data(crop_grid(&big.with_data(out), pad, d)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn empty(d: [usize; 3]) -> LabelGrid {
        VoxelGrid::filled(d, Vec3::repeat(1.0), Vec3::zeros(), 0u8).unwrap()
    }

    fn random_label(d: [usize; 3], p: f64, seed: u64) -> LabelGrid {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut g = empty(d);
        for v in g.data_mut() {
            *v = rng.random_bool(p) as u8;
        }
        g
    }

    /// Brute-force dilation straight from the definition.
    fn dilate_oracle(g: &LabelGrid, k: &Kernel) -> LabelGrid {
        let mut out = empty(g.dims());
        let half = k.shape().map(|s| (s / 2) as i64);
        for idx in 0..g.len() {
            let c = g.coords(idx);
            let mut hit = false;
            for (w, &on) in k.weights().iter().enumerate() {
                if !on {
                    continue;
                }
                let ox = (w % k.shape()[0]) as i64 - half[0];
                let oy = ((w / k.shape()[0]) % k.shape()[1]) as i64 - half[1];
                let oz = (w / (k.shape()[0] * k.shape()[1])) as i64 - half[2];
                let q = [c[0] as i64 - ox, c[1] as i64 - oy, c[2] as i64 - oz];
                if g.index_checked(q).is_some_and(|i| g.data()[i] == 1) {
                    hit = true;
                }
            }
            out.data_mut()[idx] = hit as u8;
        }
        out
    }

    #[test]
    fn ball3_is_full_cube() {
        assert_eq!(Kernel::ball3().len(), 27);
        assert_eq!(Kernel::ball([3, 3, 3], 1.0).unwrap().len(), 7);
    }

    #[test]
    fn close_of_empty_is_empty() {
        let g = empty([5, 5, 5]);
        assert_eq!(close(&g, &Kernel::ball3()).unwrap().count(), 0);
    }

    #[test]
    fn single_voxel_dilation_is_kernel_footprint() {
        let mut g = empty([7, 7, 7]);
        g.set(3, 3, 3, 1);
        for k in [
            Kernel::ball3(),
            Kernel::ball([3, 3, 3], 1.0).unwrap(),
            adaptive_kernel(Vec3::new(1., 1., 0.), [7, 7, 7], [3., 1.5, 1.5]).unwrap(),
        ] {
            let d = dilate(&g, &k).unwrap();
            assert_eq!(d, dilate_oracle(&g, &k));
            assert_eq!(d.count(), k.len());
        }
    }

    #[test]
    fn dilation_matches_oracle_on_random_grids() {
        let k = adaptive_kernel(Vec3::new(0.3, -0.2, 0.9), [7, 7, 7], [3., 1.5, 1.5]).unwrap();
        for s in 0..5 {
            let g = random_label([9, 8, 7], 0.05, s);
            assert_eq!(dilate(&g, &k).unwrap(), dilate_oracle(&g, &k));
        }
    }

    #[test]
    fn gap_between_two_voxels_is_closed() {
        let mut g = empty([7, 5, 5]);
        g.set(2, 2, 2, 1);
        g.set(4, 2, 2, 1);
        let c = close(&g, &Kernel::ball3()).unwrap();
        assert_eq!(c.get(3, 2, 2), 1);
    }

    #[test]
    fn axis_aligned_ellipsoid() {
        let k = adaptive_kernel(Vec3::new(1., 0., 0.), [7, 7, 7], [3., 1., 1.]).unwrap();
        for &[x, y, z] in k.offsets() {
            let q = (x as f64 / 3.0).powi(2) + (y as f64).powi(2) + (z as f64).powi(2);
            assert!(q <= 1.0 + 1e-9);
        }
        let on_axis: Vec<i64> = k
            .offsets()
            .iter()
            .filter(|o| o[1] == 0 && o[2] == 0)
            .map(|o| o[0])
            .collect();
        assert_eq!(on_axis, vec![-3, -2, -1, 0, 1, 2, 3]);
        assert_eq!(k.len(), 7 + 4);
    }

    #[test]
    fn equal_semiaxes_give_ball() {
        let k = adaptive_kernel(Vec3::new(0.2, 0.5, -0.3), [7, 7, 7], [2.5; 3]).unwrap();
        assert_eq!(k.offsets(), Kernel::ball([7, 7, 7], 2.5).unwrap().offsets());
    }

    #[test]
    fn rotating_direction_permutes_axes() {
        let kx = adaptive_kernel(Vec3::new(1., 0., 0.), [7, 7, 7], [3., 1.5, 1.5]).unwrap();
        let ky = adaptive_kernel(Vec3::new(0., 1., 0.), [7, 7, 7], [3., 1.5, 1.5]).unwrap();
        let mut a: Vec<[i64; 3]> = kx.offsets().iter().map(|o| [o[1], o[0], o[2]]).collect();
        let mut b = ky.offsets().to_vec();
        a.sort();
        b.sort();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_direction_rejected() {
        assert!(adaptive_kernel(Vec3::zeros(), [7, 7, 7], [3., 1.5, 1.5]).is_err());
        assert!(Kernel::ball([2, 3, 3], 1.0).is_err());
    }

    #[test]
    fn non_binary_rejected() {
        let mut g = empty([3, 3, 3]);
        g.set(1, 1, 1, 2);
        assert!(dilate(&g, &Kernel::ball3()).is_err());
    }

    #[test]
    fn constant_variant_close_equals_close() {
        let k = Kernel::ball([5, 5, 5], 2.0).unwrap();
        let g = random_label([10, 10, 10], 0.15, 9);
        assert_eq!(variant_close(&g, |_| &k).unwrap(), close(&g, &k).unwrap());
    }
}
