//! Property tests for invariants that hold for any input.

use nalgebra::{Rotation3, Unit};
use proptest::prelude::*;

use cmac::assemble::{stitch, STITCH_TOL};
use cmac::dmtet::{clean_mesh, close_nonmanifold_edges, crossing_point, CLEAN_TOL};
use cmac::mesh::{
    icosphere, io as mesh_io, is_watertight_manifold, lattice_tet_mesh, Component, TetMesh,
};
use cmac::metrics::{dice, scaled_jacobian};
use cmac::spatial::PointIndex;
use cmac::voxelgrid::{close, dilate, erode, isosurface, Kernel, LabelGrid, VoxelGrid};
use cmac::Vec3;

fn vec3(r: f64) -> impl Strategy<Value = Vec3> {
    (-r..r, -r..r, -r..r).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn label(n: usize) -> impl Strategy<Value = LabelGrid> {
    proptest::collection::vec(prop_oneof![3 => Just(0u8), 1 => Just(1u8)], n * n * n)
        .prop_map(move |d| VoxelGrid::new([n; 3], Vec3::repeat(1.0), Vec3::zeros(), d).unwrap())
}

fn heart() -> TetMesh {
    lattice_tet_mesh([6, 2, 3], Vec3::zeros(), Vec3::repeat(1.0), |c| {
        Some(if c.z < 2.0 {
            Component::Aorta
        } else {
            Component::LEAFLETS[(c.x / 2.0) as usize]
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dice_is_symmetric_and_bounded(a in label(5), b in label(5)) {
        let ab = dice(&a, &b).unwrap();
        let ba = dice(&b, &a).unwrap();
        prop_assert_eq!(ab, ba);
        prop_assert!((0.0..=1.0).contains(&ab));
        if a.count() > 0 {
            prop_assert_eq!(dice(&a, &a).unwrap(), 1.0);
        }
    }

    #[test]
    fn scaled_jacobian_ignores_rigid_motion_and_scale(
        p in proptest::array::uniform4(vec3(1.0)),
        axis in vec3(1.0),
        angle in -3.1f64..3.1,
        shift in vec3(10.0),
        scale in 0.1f64..10.0,
    ) {
        let vol = (p[1] - p[0]).cross(&(p[2] - p[0])).dot(&(p[3] - p[0]));
        prop_assume!(vol.abs() > 1e-3 && axis.norm() > 1e-3);
        let r = Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle);
        let q = p.map(|v| r * v * scale + shift);
        let a = scaled_jacobian([&p[0], &p[1], &p[2], &p[3]]);
        let b = scaled_jacobian([&q[0], &q[1], &q[2], &q[3]]);
        prop_assert!((a - b).abs() < 1e-9, "{} vs {}", a, b);
        prop_assert!((-1.0..=1.0).contains(&a));
    }

    #[test]
    fn crossing_is_the_zero_of_the_interpolant(va in vec3(5.0), vb in vec3(5.0), sa in -1.0f64..=0.0, sb in 1e-6f64..1.0) {
        prop_assume!((va - vb).norm() > 1e-6);
        let x = crossing_point(&va, &vb, sa, sb);
        let t = (x - va).dot(&(vb - va)) / (vb - va).norm_squared();
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&t));
        prop_assert!((sa + t * (sb - sa)).abs() <= 1e-9 * sa.abs().max(sb));
        if sa == 0.0 {
            prop_assert_eq!(x, va);
        }
    }

    #[test]
    fn nearest_matches_brute_force(pts in proptest::collection::vec(vec3(10.0), 1..60), q in vec3(12.0)) {
        let idx = PointIndex::new(&pts);
        let (i, d) = idx.nearest(&q).unwrap();
        let best = pts.iter().map(|p| (p - q).norm()).fold(f64::INFINITY, f64::min);
        prop_assert_eq!(d, best);
        prop_assert_eq!((pts[i] - q).norm(), best);
    }

    #[test]
    fn morphology_is_ordered(g in label(6)) {
        let k = Kernel::ball3();
        let d = dilate(&g, &k).unwrap();
        let e = erode(&g, &k).unwrap();
        let c = close(&g, &k).unwrap();
        for i in 0..g.len() {
            let (gi, di, ei, ci) = (g.data()[i], d.data()[i], e.data()[i], c.data()[i]);
            prop_assert!(ei <= gi && gi <= di);
            prop_assert!(gi <= ci && ci <= di);
        }
    }

    #[test]
    fn voxel_isosurface_encloses_the_voxel_volume(mut g in label(6)) {
        // the surface is open where foreground touches the grid border
        for idx in 0..g.len() {
            if g.coords(idx).iter().any(|&c| c == 0 || c == 5) {
                g.data_mut()[idx] = 0;
            }
        }
        let s = isosurface(&g).unwrap();
        if g.count() == 0 {
            prop_assert!(s.is_empty());
        } else {
            prop_assert_eq!(is_watertight_manifold(&s).boundary_edges, 0);
            prop_assert!(s.signed_volume() > 0.0);
        }
    }

    #[test]
    fn surface_text_round_trip_is_the_quantized_surface(r in 0.1f64..100.0, c in vec3(100.0)) {
        let s = icosphere(c, r, 1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.tsurf");
        mesh_io::write_tsurf(&path, &s).unwrap();
        let back = mesh_io::read_tsurf(&path).unwrap();
        prop_assert_eq!(&back.faces, &s.faces);
        for (a, b) in back.vertices.iter().zip(&s.vertices) {
            prop_assert_eq!(*a, mesh_io::quantize(b));
        }
    }

    #[test]
    fn cleaning_is_idempotent(r in 0.5f64..5.0, sub in 0usize..3) {
        let s = icosphere(Vec3::zeros(), r, sub);
        let once = clean_mesh(&s, CLEAN_TOL);
        prop_assert_eq!(&clean_mesh(&once, CLEAN_TOL), &once);
        prop_assert_eq!(close_nonmanifold_edges(&once), (once.clone(), 0));
    }

    #[test]
    fn stitching_never_moves_the_heart(x in 0usize..6, y in 0usize..2, lift in prop_oneof![Just(0.0), Just(0.5), Just(2.0)]) {
        let h = heart();
        let mut calc = lattice_tet_mesh([1, 1, 1], Vec3::new(x as f64, y as f64, 3.0 + lift), Vec3::repeat(1.0), |_| {
            Some(Component::Calcification)
        });
        calc.canonicalize_orientation();
        let (combined, rep) = stitch(&calc, &h, STITCH_TOL).unwrap();
        let n = h.vertices.len();
        prop_assert_eq!(&combined.vertices[..n], &h.vertices[..]);
        prop_assert_eq!(&combined.tets[..h.tets.len()], &h.tets[..]);
        prop_assert_eq!(&combined.components[..h.tets.len()], &h.components[..]);
        if lift == 0.0 {
            prop_assert_eq!(rep.merged_node_count, 4);
            prop_assert_eq!(rep.components_kept, 1);
        } else {
            prop_assert_eq!(rep.merged_node_count, 0);
            prop_assert_eq!(combined.tets.len(), h.tets.len());
        }
        for t in &combined.tets[h.tets.len()..] {
            prop_assert!(t.iter().all(|&v| v < combined.vertices.len()));
        }
    }
}
