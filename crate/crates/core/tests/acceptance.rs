//! Acceptance suite. Runs as a plain binary (`harness = false`) and prints one
//! PASS/FAIL line per criterion, then exits nonzero if any failed.
//!
//! The phantom corpus is run once and every corpus-wide criterion reads from
//! the collected per-case evidence.

use std::collections::{BTreeSet, HashSet};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cmac::assemble::evaluate_iterate;
use cmac::bgmesh::BackgroundMesh;
use cmac::dmtet::{
    crossing_point, crossing_topology, optimize, CrossingConvention, DmtetProblem, OptState,
    FAKE_SDF,
};
use cmac::mesh::{
    extract_component_surface, is_watertight_manifold, Component, TriSurface, VertexTag,
};
use cmac::metrics::cd_heart_to;
use cmac::pipeline::{
    corpus_specs, make_phantom, run, run_case, write_phantom, PhantomKind, PhantomSpec,
    PipelineConfig,
};
use cmac::postprocess::{mean_symmetric_chamfer, post_process, stencil_gap};
use cmac::remesh::{constrained_remesh, separate_contact};
use cmac::seg_losses::{
    boundary_term, chamfer, dice_ce, gbd, gch, gdl, lambda_at, LossConfig, LOG_FLOOR,
};
use cmac::spatial::PointIndex;
use cmac::voxelgrid::{isosurface, sample_surface, stencil_tets, LabelGrid, ScalarGrid, VoxelGrid};
use cmac::{TetMesh, Vec3};

const CORPUS_CASES: usize = 50;
const CORPUS_N: usize = 32;
const CORPUS_SEED: u64 = 1000;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn tetgen() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_cmac-tetgen"))
}

fn base_config(spec: &PhantomSpec) -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.paths.mesher = Some(tetgen());
    cfg.preprocessing.spacing = spec.spacing;
    cfg.seed = spec.seed;
    cfg
}

fn root_surface(heart: &TetMesh) -> TriSurface {
    extract_component_surface(heart, &Component::AORTIC_ROOT)
        .unwrap()
        .surface
}

fn bits(p: &Vec3) -> [u64; 3] {
    [p.x.to_bits(), p.y.to_bits(), p.z.to_bits()]
}

// ---------------------------------------------------------------- crossings

fn crossings() -> Verdict {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_interp, mut worst_fake) = (0.0f64, 0.0f64);
    let (mut exact_checks, mut fake_checks, mut bad_exact) = (0usize, 0usize, 0usize);
    for case in 0..1000 {
        let mut pos: Vec<Vec3> = (0..4)
            .map(|_| Vec3::new(rng.random(), rng.random(), rng.random()) * 2.0)
            .collect();
        let mut val: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let tet = [[0, 1, 2, 3]];
        // every third tet has one or two boundary nodes at exactly zero
        let n_zero = if case % 3 == 0 { 1 + case % 2 } else { 0 };
        for v in val.iter_mut().take(n_zero) {
            *v = 0.0;
        }
        if case % 7 == 0 {
            // a fake configuration: node 3 is the fake node, the rest sit on or inside the boundary
            pos[3] = Vec3::new(5.0, 5.0, 5.0);
            val[3] = FAKE_SDF;
            for v in val.iter_mut().take(3) {
                *v = v.abs();
            }
            val[0] = 0.0;
            let topo =
                crossing_topology(&tet, 0, &pos, &val, CrossingConvention::Alternate).unwrap();
            for &[a, b] in &topo.crossing_edges {
                assert_eq!(a, 3, "the fake node is the only outside node");
                let x = crossing_point(&pos[a], &pos[b], val[a], val[b]);
                let rel = (x - pos[b]).norm() / (pos[a] - pos[b]).norm();
                worst_fake = worst_fake.max(rel);
                fake_checks += 1;
            }
            continue;
        }
        let Ok(topo) = crossing_topology(&tet, 1, &pos, &val, CrossingConvention::Printed) else {
            continue;
        };
        for &[a, b] in &topo.crossing_edges {
            let x = crossing_point(&pos[a], &pos[b], val[a], val[b]);
            // interpolate the field at x along the edge, independently of the formula
            let d = pos[b] - pos[a];
            let t = (x - pos[a]).dot(&d) / d.norm_squared();
            let off_line = ((x - pos[a]) - d * t).norm() / d.norm();
            let s = val[a] + t * (val[b] - val[a]);
            let scale = val[a].abs().max(val[b].abs());
            worst_interp = worst_interp.max((s.abs() / scale).max(off_line));
            if val[a] == 0.0 {
                exact_checks += 1;
                if x != pos[a] {
                    bad_exact += 1;
                }
            }
        }
    }
    let dt = t0.elapsed().as_secs_f64();
    verdict(
        worst_interp <= 1e-9 && bad_exact == 0 && exact_checks > 0 && worst_fake <= 1e-12 && fake_checks > 0 && dt < 1.0,
        format!(
            "max |s(x)|/|s| {worst_interp:.2e}; {exact_checks} boundary-node edges, {bad_exact} inexact; \
             {fake_checks} fake edges, max rel offset from v_b {worst_fake:.2e}; {dt:.3}s"
        ),
    )
}

// ---------------------------------------------------------------- gradient

fn gradient_check(bg: &BackgroundMesh, y_ca2: &LabelGrid, cfg: &PipelineConfig) -> Verdict {
    let t0 = Instant::now();
    let cfg = cfg.resolved();
    let prob = match DmtetProblem::new(y_ca2, bg, cfg.dmtet.weights, cfg.dmtet.convention) {
        Ok(p) => p,
        Err(e) => return verdict(false, format!("problem setup failed: {e}")),
    };
    let na = prob.n_active();
    let h = 1e-6;
    let (mut worst_v, mut worst_s) = (0.0f64, 0.0f64);
    for seed in 0..20u64 {
        let st = prob.random_state(seed, 0.1 * cfg.preprocessing.spacing, 0.2);
        let ev = prob.evaluate(&st);
        let (mut err_v, mut ref_v, mut err_s, mut ref_s) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for k in 0..na {
            for a in 0..4 {
                let bump = |p: &mut OptState, d: f64| {
                    if a < 3 {
                        p.dv[k][a] += d
                    } else {
                        p.dsdf[k] += d
                    }
                };
                let mut p = st.clone();
                bump(&mut p, h);
                let fp = prob.value(&p);
                bump(&mut p, -2.0 * h);
                let fm = prob.value(&p);
                let fd = (fp - fm) / (2.0 * h);
                if a < 3 {
                    err_v = err_v.max((fd - ev.grad.dv[k][a]).abs());
                    ref_v = ref_v.max(fd.abs());
                } else {
                    err_s = err_s.max((fd - ev.grad.dsdf[k]).abs());
                    ref_s = ref_s.max(fd.abs());
                }
            }
        }
        worst_v = worst_v.max(err_v / ref_v);
        worst_s = worst_s.max(err_s / ref_s);
    }
    let dt = t0.elapsed().as_secs_f64();
    verdict(
        worst_v < 1e-4 && worst_s < 1e-4 && dt < 30.0,
        format!("{na} active nodes, 20 states: max rel err dv {worst_v:.2e}, dsdf {worst_s:.2e}; {dt:.1}s"),
    )
}

// ---------------------------------------------------------------- loss oracles

fn ln_floor(x: f64) -> f64 {
    if x <= 0.0 {
        LOG_FLOOR
    } else {
        x.ln().max(LOG_FLOOR)
    }
}

fn oracle_dice_ce(y: &[f64], p: &[f64], lambda: f64, eps: f64) -> f64 {
    let inter: f64 = y.iter().zip(p).map(|(a, b)| a * b).sum();
    let total: f64 = y.iter().sum::<f64>() + p.iter().sum::<f64>();
    let bce: f64 = y
        .iter()
        .zip(p)
        .map(|(&t, &q)| -(t * ln_floor(q) + (1.0 - t) * ln_floor(1.0 - q)))
        .sum::<f64>();
    1.0 - 2.0 * inter / (total + eps) + lambda * bce / y.len() as f64
}

fn oracle_gdl(y: &[f64], p: &[f64], eps: [f64; 2]) -> f64 {
    // classes as explicit one-hot channels
    let chan = |c: usize, v: f64| if c == 1 { v } else { 1.0 - v };
    let (mut num, mut den) = (0.0, 0.0);
    for c in 0..2 {
        let count: f64 = y.iter().map(|&v| chan(c, v)).sum();
        let w = (count + eps[c]).powi(-2);
        num += w * y
            .iter()
            .zip(p)
            .map(|(&a, &b)| chan(c, a) * chan(c, b))
            .sum::<f64>();
        den += w * y
            .iter()
            .zip(p)
            .map(|(&a, &b)| chan(c, a) + chan(c, b))
            .sum::<f64>();
    }
    1.0 - 2.0 * num / den
}

fn oracle_boundary(sdf: &[f64], p: &[f64], clip: (f64, f64)) -> f64 {
    let mut acc = 0.0;
    for (s, q) in sdf.iter().zip(p) {
        let c = if *s < clip.0 {
            clip.0
        } else if *s > clip.1 {
            clip.1
        } else {
            *s
        };
        acc -= c * q;
    }
    acc
}

fn oracle_chamfer(a: &[Vec3], b: &[Vec3]) -> f64 {
    let dir = |from: &[Vec3], to: &[Vec3]| {
        from.iter()
            .map(|p| {
                to.iter()
                    .map(|q| (p - q).norm_squared())
                    .fold(f64::INFINITY, f64::min)
            })
            .sum::<f64>()
            / from.len() as f64
    };
    dir(a, b) + dir(b, a)
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * b.abs().max(1.0)
}

fn loss_oracles() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let d = [4usize; 3];
    let cfg = LossConfig::default();
    let mut mismatches = Vec::new();
    for case in 0..100 {
        let density = rng.random_range(0.0..1.0);
        let y: Vec<u8> = (0..64).map(|_| rng.random_bool(density) as u8).collect();
        let p: Vec<f32> = (0..64)
            .map(|_| match rng.random_range(0..10) {
                0 => 0.0,
                1 => 1.0,
                _ => rng.random_range(0.0..1.0),
            })
            .collect();
        let s: Vec<f32> = (0..64).map(|_| rng.random_range(-5.0..5.0)).collect();
        let a: Vec<Vec3> = (0..rng.random_range(1..30))
            .map(|_| Vec3::new(rng.random(), rng.random(), rng.random()))
            .collect();
        let b: Vec<Vec3> = (0..rng.random_range(1..30))
            .map(|_| Vec3::new(rng.random(), rng.random(), rng.random()))
            .collect();
        let yg = VoxelGrid::new(d, Vec3::repeat(1.0), Vec3::zeros(), y.clone()).unwrap();
        let pg: ScalarGrid =
            VoxelGrid::new(d, Vec3::repeat(1.0), Vec3::zeros(), p.clone()).unwrap();
        let sg: ScalarGrid =
            VoxelGrid::new(d, Vec3::repeat(1.0), Vec3::zeros(), s.clone()).unwrap();
        let yf: Vec<f64> = y.iter().map(|&v| v as f64).collect();
        let pf: Vec<f64> = p.iter().map(|&v| v as f64).collect();
        let sf: Vec<f64> = s.iter().map(|&v| v as f64).collect();
        let epoch = rng.random_range(0..2500);
        let lambda = rng.random_range(0.0..1.0);
        let eps = (cfg.eps0, cfg.eps1);
        let ramp = if epoch <= 1000 {
            0.0
        } else if epoch >= 2000 {
            1000.0
        } else {
            (epoch - 1000) as f64
        };
        let pairs = [
            (
                "dice_ce",
                dice_ce(&yg, &pg, 1.0, 1e-5),
                oracle_dice_ce(&yf, &pf, 1.0, 1e-5),
            ),
            (
                "gdl",
                gdl(&yg, &pg, eps.0, eps.1),
                oracle_gdl(&yf, &pf, [eps.0, eps.1]),
            ),
            (
                "boundary",
                boundary_term(&sg, &pg, cfg.sdf_clip),
                oracle_boundary(&sf, &pf, cfg.sdf_clip),
            ),
            (
                "gbd",
                gbd(&yg, &pg, &sg, &cfg, epoch),
                oracle_gdl(&yf, &pf, [eps.0, eps.1])
                    + ramp * oracle_boundary(&sf, &pf, cfg.sdf_clip),
            ),
            ("chamfer", chamfer(&a, &b), oracle_chamfer(&a, &b)),
            (
                "gch",
                gch(&yg, &pg, &a, &b, eps, lambda),
                oracle_gdl(&yf, &pf, [eps.0, eps.1]) + lambda * oracle_chamfer(&a, &b),
            ),
        ];
        for (name, got, want) in pairs {
            match got {
                Ok(g) if close(g, want) => {}
                other => mismatches.push(format!("case {case} {name}: {other:?} vs {want}")),
            }
        }
        if !close(lambda_at(epoch, &cfg.lambda_schedule), ramp) {
            mismatches.push(format!("case {case} ramp at epoch {epoch}"));
        }
    }
    let empty = VoxelGrid::filled(d, Vec3::repeat(1.0), Vec3::zeros(), 0u8).unwrap();
    let perfect = empty.map(|_| 0.0f32);
    let g0 = gdl(&empty, &perfect, -100.0, 100.0);
    let exact = matches!(g0, Ok(v) if v == 0.0);
    verdict(
        mismatches.is_empty() && exact,
        format!(
            "600 evaluator/oracle pairs, {} mismatches{}; empty perfect GDL = {g0:?}",
            mismatches.len(),
            mismatches
                .first()
                .map(|m| format!(" (first: {m})"))
                .unwrap_or_default()
        ),
    )
}

// ---------------------------------------------------------------- corpus

#[derive(Default)]
struct CaseEvidence {
    label: String,
    ok: bool,
    error: Option<String>,
    background_success: bool,
    tet_success: bool,
    iterate0_failed: bool,
    contact_tagged: usize,
    contact_inexact: usize,
    near_heart_inexact: usize,
    min_merged_kept: Option<usize>,
    loss: Option<(f64, f64)>,
    sj_opt: Option<f64>,
    sj_raw: Option<f64>,
    dmtet_watertight: bool,
    selected_watertight: bool,
    contact_faces_identical: bool,
    free_counts_nonincreasing: bool,
    drift_ratio: f64,
    remesh_iterates: usize,
    wall: f64,
}

fn contact_face_keys(s: &TriSurface, nodes: &PointIndex) -> BTreeSet<[[u64; 3]; 3]> {
    let sep = separate_contact(s, nodes, 1e-9);
    sep.contact
        .faces
        .iter()
        .map(|f| {
            let k = f.map(|v| bits(&sep.contact.vertices[v]));
            let r = (0..3).min_by_key(|&r| k[r]).unwrap();
            [k[r], k[(r + 1) % 3], k[(r + 2) % 3]]
        })
        .collect()
}

fn run_corpus_case(
    k: usize,
    spec: &PhantomSpec,
    work: &Path,
    keep: &mut Option<(BackgroundMesh, LabelGrid, PipelineConfig)>,
) -> CaseEvidence {
    let t0 = Instant::now();
    let mut ev = CaseEvidence {
        label: format!(
            "case {k} ({:?}, gap {}, seed {})",
            spec.kind, spec.gap, spec.seed
        ),
        ..Default::default()
    };
    let p = match make_phantom(spec) {
        Ok(p) => p,
        Err(e) => {
            ev.error = Some(e.to_string());
            return ev;
        }
    };
    let cfg = base_config(spec);
    let res = run_case(
        &p.heart,
        &p.calcification,
        &cfg,
        &work.join(format!("case_{k:03}")),
    );
    let r = &res.report;
    let a = &res.artifacts;
    ev.ok = res.ok();
    ev.error = r.error.clone();
    ev.background_success = r.background_success == Some(true);
    ev.tet_success = r.tet_success;
    ev.iterate0_failed = a
        .diagnostics
        .first()
        .is_some_and(|d| d.min_scaled_jacobian.is_none());
    ev.loss = r.dmtet_initial_loss.zip(r.dmtet_final_loss);
    ev.sj_opt = r.min_scaled_jacobian;
    ev.dmtet_watertight = a
        .dmtet
        .as_ref()
        .is_some_and(|d| is_watertight_manifold(&d.surface).ok);

    let heart_bits: HashSet<[u64; 3]> = p.heart.vertices.iter().map(bits).collect();
    let heart_index = PointIndex::new(&p.heart.vertices);
    if let Some(sel) = &a.selection {
        ev.selected_watertight = is_watertight_manifold(&sel.surface).ok;
        let tags = sel.surface.vertex_tags.as_deref();
        for (i, v) in sel.surface.vertices.iter().enumerate() {
            let exact = heart_bits.contains(&bits(v));
            if tags.is_some_and(|t| t[i] == VertexTag::Contact) {
                ev.contact_tagged += 1;
                ev.contact_inexact += (!exact) as usize;
            }
            // anything this close to a heart node must sit on it exactly
            if !exact && heart_index.nearest(v).is_some_and(|(_, d)| d < 1e-6) {
                ev.near_heart_inexact += 1;
            }
        }
    }
    if let Some(st) = &a.stitch {
        ev.min_merged_kept = st
            .components
            .iter()
            .filter(|c| c.kept)
            .map(|c| c.merged)
            .min();
    }

    let resolved = cfg.resolved();
    if let (Some(bg), Some(post), Some(dm)) = (&a.background, &a.postprocess, &a.dmtet) {
        // unoptimized variant: raw isosurface, no remeshing
        let mut dcfg = resolved.dmtet.clone();
        dcfg.optimize = false;
        if let Ok(raw) = optimize(&post.y_ca2, bg, &dcfg) {
            let mesher = resolved.mesher_setup(work.join(format!("case_{k:03}_raw")));
            ev.sj_raw = evaluate_iterate(0, &raw.surface, &mesher, resolved.assemble.quality)
                .diagnostic
                .min_scaled_jacobian;
        }
        // remeshing constraints, exercised on every case whether or not the run needed it
        let root = root_surface(&p.heart);
        let nodes = PointIndex::new(&root.vertices);
        let mut rcfg = resolved.remesh.clone();
        rcfg.n_remesh = rcfg.n_remesh.max(5);
        if let Ok(rm) = constrained_remesh(&dm.surface, &nodes, &rcfg) {
            ev.remesh_iterates = rm.iterates.len();
            let keys0 = contact_face_keys(&rm.iterates[0], &nodes);
            ev.contact_faces_identical = rm
                .iterates
                .iter()
                .all(|s| contact_face_keys(s, &nodes) == keys0);
            let free_counts: Vec<usize> = rm
                .iterates
                .iter()
                .map(|s| separate_contact(s, &nodes, 1e-9).free.vertices.len())
                .collect();
            ev.free_counts_nonincreasing = free_counts.windows(2).all(|w| w[1] <= w[0]);
            let free0 = separate_contact(&rm.iterates[0], &nodes, 1e-9).free;
            let edge = rm.iterates[0].mean_edge_length();
            let s0 = sample_surface(&free0, 2000, 0);
            ev.drift_ratio = rm.iterates[1..]
                .iter()
                .map(|s| {
                    let free = separate_contact(s, &nodes, 1e-9).free;
                    mean_symmetric_chamfer(&sample_surface(&free, 2000, 0), &s0) / edge
                })
                .fold(0.0, f64::max);
        }
        if keep.is_none() && spec.kind == PhantomKind::SphereShell {
            *keep = Some((bg.clone(), post.y_ca2.clone(), cfg.clone()));
        }
    }
    ev.wall = t0.elapsed().as_secs_f64();
    ev
}

fn fails<'a>(cases: &'a [CaseEvidence], bad: impl Fn(&CaseEvidence) -> bool) -> Vec<&'a str> {
    cases
        .iter()
        .filter(|c| bad(c))
        .map(|c| c.label.as_str())
        .collect()
}

fn list(names: &[&str]) -> String {
    if names.is_empty() {
        String::new()
    } else {
        format!(
            "; failing: {}",
            names.iter().take(5).copied().collect::<Vec<_>>().join(", ")
        )
    }
}

fn contact_matching(cases: &[CaseEvidence]) -> Verdict {
    let bad = fails(cases, |c| {
        !c.ok
            || c.contact_inexact > 0
            || c.near_heart_inexact > 0
            || c.min_merged_kept.is_some_and(|m| m < 3)
    });
    let tagged: usize = cases.iter().map(|c| c.contact_tagged).sum();
    let min_merged = cases.iter().filter_map(|c| c.min_merged_kept).min();
    verdict(
        bad.is_empty() && tagged > 0,
        format!("{tagged} contact vertices over {} cases, all bit-exact heart nodes; min merged per kept component {min_merged:?}{}", cases.len(), list(&bad)),
    )
}

fn tet_success(cases: &[CaseEvidence]) -> Verdict {
    let tet = cases.iter().filter(|c| c.tet_success).count();
    let bg = cases.iter().filter(|c| c.background_success).count();
    let recovered = cases
        .iter()
        .filter(|c| c.tet_success && c.iterate0_failed)
        .count();
    let bad = fails(cases, |c| !c.tet_success || !c.background_success);
    let first_err = cases
        .iter()
        .find_map(|c| c.error.clone())
        .map(|e| format!(" ({e})"))
        .unwrap_or_default();
    verdict(
        bad.is_empty(),
        format!(
            "tetrahedralization {tet}/{n}, background {bg}/{n}, {recovered} recovered by iterate fallback{}{first_err}",
            list(&bad),
            n = cases.len()
        ),
    )
}

fn optimization_efficacy(cases: &[CaseEvidence]) -> Verdict {
    let loss_bad = fails(cases, |c| !c.loss.is_some_and(|(i, f)| f < i));
    let better = cases
        .iter()
        .filter(|c| match (c.sj_opt, c.sj_raw) {
            (Some(o), Some(r)) => o > r,
            (Some(_), None) => true,
            _ => false,
        })
        .count();
    let frac = better as f64 / cases.len() as f64;
    verdict(
        loss_bad.is_empty() && frac >= 0.9,
        format!(
            "loss decreased on {}/{n}; min SJ beats the unoptimized variant on {better}/{n}{}",
            cases.len() - loss_bad.len(),
            list(&loss_bad),
            n = cases.len()
        ),
    )
}

fn remesh_constraints(cases: &[CaseEvidence]) -> Verdict {
    let with = cases.iter().filter(|c| c.remesh_iterates > 0).count();
    let bad = fails(cases, |c| {
        c.remesh_iterates == 0
            || !c.contact_faces_identical
            || !c.free_counts_nonincreasing
            || !(c.drift_ratio < 2.0)
    });
    let iterates: usize = cases.iter().map(|c| c.remesh_iterates).sum();
    let drift = cases.iter().map(|c| c.drift_ratio).fold(0.0, f64::max);
    verdict(
        bad.is_empty(),
        format!(
            "{with} cases, {iterates} iterates; max chamfer drift {drift:.3} mean edge lengths{}",
            list(&bad)
        ),
    )
}

fn watertightness(cases: &[CaseEvidence]) -> Verdict {
    let bad = fails(cases, |c| !c.dmtet_watertight || !c.selected_watertight);
    verdict(
        bad.is_empty(),
        format!(
            "DMTet surfaces {}/{n}, selected surfaces {}/{n}{}",
            cases.iter().filter(|c| c.dmtet_watertight).count(),
            cases.iter().filter(|c| c.selected_watertight).count(),
            list(&bad),
            n = cases.len()
        ),
    )
}

// ---------------------------------------------------------------- gap repair

fn gap_repair() -> Verdict {
    let mut lines = Vec::new();
    let mut pass = true;
    for (k, kind) in [PhantomKind::SphereShell, PhantomKind::TubeLeaflets]
        .into_iter()
        .cycle()
        .take(6)
        .enumerate()
    {
        let spec = PhantomSpec {
            kind,
            gap: 2,
            seed: 500 + k as u64,
            ..PhantomSpec::default()
        };
        let p = make_phantom(&spec).unwrap();
        let cfg = base_config(&spec).resolved();
        let raw_gap = stencil_gap(
            &p.calcification,
            &stencil_tets(&p.heart, &Component::HEART, &p.calcification),
        )
        .unwrap();
        let post = match post_process(&p.calcification, &p.heart, &cfg.postprocess) {
            Ok(o) => o,
            Err(e) => {
                pass = false;
                lines.push(format!("seed {}: {e}", spec.seed));
                continue;
            }
        };
        let gap = stencil_gap(
            &post.y_ca2,
            &stencil_tets(&p.heart, &Component::HEART, &post.y_ca2),
        )
        .unwrap();
        let root = root_surface(&p.heart);
        let n = cfg.metrics.n_samples;
        let before = cd_heart_to(&isosurface(&p.calcification).unwrap(), &root, n, 0).value;
        let after = cd_heart_to(&isosurface(&post.y_ca2).unwrap(), &root, n, 0).value;
        let ok = raw_gap == Some(2) && gap == Some(0) && after < before;
        pass &= ok;
        if !ok || lines.is_empty() {
            lines.push(format!(
                "seed {}: gap {raw_gap:?} -> {gap:?}, cd_heart {before:.3} -> {after:.3}",
                spec.seed
            ));
        }
    }
    verdict(pass, format!("6 gap-2 phantoms; {}", lines.join("; ")))
}

// ---------------------------------------------------------------- runtime, determinism

fn runtime(work: &Path) -> Verdict {
    let spec = PhantomSpec {
        n: 128,
        seed: 7,
        ..PhantomSpec::default()
    };
    let t0 = Instant::now();
    let p = make_phantom(&spec).unwrap();
    let res = run_case(
        &p.heart,
        &p.calcification,
        &base_config(&spec),
        &work.join("big"),
    );
    let wall = t0.elapsed().as_secs_f64();
    let stages: Vec<String> = res
        .report
        .timings
        .iter()
        .map(|(k, v)| format!("{k} {v:.2}s"))
        .collect();
    verdict(
        res.ok() && wall <= 120.0,
        format!(
            "128^3 phantom in {wall:.1}s [{}]{}",
            stages.join(", "),
            res.report
                .error
                .map(|e| format!(" error: {e}"))
                .unwrap_or_default()
        ),
    )
}

const DETERMINISTIC_FILES: [&str; 8] = [
    "report.json",
    "combined.tmesh",
    "combined.vtk",
    "calc.tmesh",
    "calc_surface.tsurf",
    "dmtet_surface.tsurf",
    "stitch.json",
    "iterates.json",
];

fn determinism(work: &Path) -> Verdict {
    let spec = PhantomSpec {
        kind: PhantomKind::TubeLeaflets,
        seed: 11,
        ..PhantomSpec::default()
    };
    let p = make_phantom(&spec).unwrap();
    let dir = work.join("determinism");
    let mut cfg = write_phantom(&dir.join("input"), &p).unwrap();
    cfg.paths.mesher = Some(tetgen());
    let mut outs = Vec::new();
    for run_id in ["a", "b"] {
        cfg.paths.output_dir = dir.join(run_id);
        if let Err(e) = run(&cfg) {
            return verdict(false, format!("run {run_id} failed: {e}"));
        }
        outs.push(cfg.paths.output_dir.clone());
    }
    let differing: Vec<&str> = DETERMINISTIC_FILES
        .iter()
        .copied()
        .filter(|f| {
            std::fs::read(outs[0].join(f)).ok() != std::fs::read(outs[1].join(f)).ok()
                || !outs[0].join(f).exists()
        })
        .collect();
    verdict(
        differing.is_empty(),
        format!(
            "{} output files compared, differing or missing: {differing:?}",
            DETERMINISTIC_FILES.len()
        ),
    )
}

// ---------------------------------------------------------------- main

fn main() -> ExitCode {
    // `cargo test -- <filter>` style arguments are accepted and ignored
    let work = tempfile::tempdir().expect("temporary directory");
    let mut results: Vec<(usize, &str, Verdict)> = Vec::new();

    results.push((1, "crossing points", crossings()));
    results.push((3, "loss oracles", loss_oracles()));

    let t0 = Instant::now();
    let mut keep = None;
    let cases: Vec<CaseEvidence> = corpus_specs(CORPUS_CASES, CORPUS_N, CORPUS_SEED)
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let ev = run_corpus_case(k, s, work.path(), &mut keep);
            eprintln!(
                "  {}: {} in {:.1}s",
                ev.label,
                if ev.ok { "ok" } else { "FAILED" },
                ev.wall
            );
            ev
        })
        .collect();
    eprintln!(
        "  corpus of {} cases in {:.1}s",
        cases.len(),
        t0.elapsed().as_secs_f64()
    );

    results.push((
        2,
        "gradient check",
        match &keep {
            Some((bg, y, cfg)) => gradient_check(bg, y, cfg),
            None => verdict(false, "no sphere-shell case produced a background mesh"),
        },
    ));
    drop(keep);
    results.push((4, "contact matching", contact_matching(&cases)));
    results.push((5, "tetrahedralization success", tet_success(&cases)));
    results.push((6, "optimization efficacy", optimization_efficacy(&cases)));
    results.push((7, "anatomical consistency repair", gap_repair()));
    results.push((8, "remeshing constraints", remesh_constraints(&cases)));
    results.push((9, "watertightness", watertightness(&cases)));
    results.push((10, "run-time envelope", runtime(work.path())));
    results.push((11, "determinism", determinism(work.path())));

    results.sort_by_key(|r| r.0);
    let mut failed = 0;
    for (id, name, v) in &results {
        println!(
            "criterion {id:>2} {} {name}: {}",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
        failed += (!v.pass) as usize;
    }
    println!(
        "{} of {} criteria passed",
        results.len() - failed,
        results.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
