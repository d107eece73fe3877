//! Round trips through the external mesher binary.

use std::path::PathBuf;

use cmac::assemble::{tetrahedralize, tetrahedralize_plc, QualityOpts};
use cmac::bgmesh::MesherSetup;
use cmac::mesh::{
    extract_component_surface, icosphere, lattice_tet_mesh, point_inside, Component, TriSurface,
};
use cmac::metrics::jacobian_stats;
use cmac::Vec3;

fn setup(dir: &std::path::Path) -> MesherSetup {
    let mut m = MesherSetup::new(dir);
    m.executable = PathBuf::from(env!("CARGO_BIN_EXE_cmac-tetgen"));
    m
}

fn unit_cube() -> TriSurface {
    let m = lattice_tet_mesh([1, 1, 1], Vec3::zeros(), Vec3::repeat(1.0), |_| {
        Some(Component::Calcification)
    });
    extract_component_surface(&m, &[Component::Calcification])
        .unwrap()
        .surface
}

#[test]
fn unit_cube_fills_its_volume() {
    let dir = tempfile::tempdir().unwrap();
    let job = setup(dir.path()).job(unit_cube(), "cube", QualityOpts::default());
    let m = tetrahedralize(&job).unwrap();
    assert!((m.volume() - 1.0).abs() < 1e-9, "{}", m.volume());
    assert!((0..m.tets.len()).all(|t| m.tet_volume(t) > 0.0));
    // every input vertex comes back unchanged
    for v in &unit_cube().vertices {
        assert!(m.vertices.contains(v));
    }
}

#[test]
fn sphere_tets_are_positive_and_decent() {
    let dir = tempfile::tempdir().unwrap();
    let s = icosphere(Vec3::new(3.0, -2.0, 1.0), 2.0, 2);
    let job = setup(dir.path()).job(s.clone(), "sphere", QualityOpts::default());
    let m = tetrahedralize(&job).unwrap();
    assert!((0..m.tets.len()).all(|t| m.tet_volume(t) > 0.0));
    assert!((m.volume() - s.signed_volume()).abs() < 1e-9 * s.signed_volume());
    let j = jacobian_stats(&m).unwrap();
    assert!(j.min > 0.0);
}

#[test]
fn open_surface_is_refused_before_dispatch() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = unit_cube();
    s.faces.pop();
    let job = setup(dir.path()).job(s, "open", QualityOpts::default());
    assert!(tetrahedralize(&job).is_err());
    assert_eq!(
        std::fs::read_dir(dir.path())
            .map(|d| d.count())
            .unwrap_or(0),
        0
    );
}

#[test]
fn missing_executable_is_a_mesher_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = setup(dir.path());
    m.executable = dir.path().join("no-such-mesher");
    let err = tetrahedralize(&m.job(unit_cube(), "cube", QualityOpts::default())).unwrap_err();
    assert!(matches!(err.root(), cmac::CmacError::Mesher(_)), "{err}");
}

#[test]
fn nested_plc_fills_both_regions_and_keeps_the_inner_facets() {
    let dir = tempfile::tempdir().unwrap();
    let outer = icosphere(Vec3::zeros(), 3.0, 2);
    let inner = icosphere(Vec3::zeros(), 1.0, 1);
    let n = outer.vertices.len();
    let mut plc = outer.clone();
    plc.vertices.extend(&inner.vertices);
    plc.faces
        .extend(inner.faces.iter().map(|f| f.map(|i| i + n)));
    let job = setup(dir.path()).job(plc, "nested", QualityOpts::default());
    let m = tetrahedralize_plc(&job.input_surface, &job).unwrap();
    let want = outer.signed_volume();
    assert!(
        (m.volume() - want).abs() < 1e-9 * want,
        "{} vs {want}",
        m.volume()
    );
    // tets whose centroid is inside the inner surface add up to its volume
    let inside: f64 = (0..m.tets.len())
        .filter(|&t| {
            point_inside(
                &inner,
                &(m.tets[t].iter().map(|&v| m.vertices[v]).sum::<Vec3>() / 4.0),
            )
        })
        .map(|t| m.tet_volume(t))
        .sum();
    assert!(
        (inside - inner.signed_volume()).abs() < 1e-9,
        "{inside} vs {}",
        inner.signed_volume()
    );
}
