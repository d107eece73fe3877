//! End-to-end orchestration: configuration, the staged run, output files and
//! benchmarking over generated phantoms.

pub mod phantom;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::assemble::{
    evaluate_iterate, select_from, stitch, IterateDiagnostic, QualityOpts, Selection, StitchReport,
    STITCH_TOL,
};
use crate::bgmesh::{generate_background_mesh, BackgroundMesh, BgmeshConfig, MesherSetup};
use crate::dmtet::{
    optimize, trace_csv, CrossingConvention, DmtetConfig, DmtetResult, DmtetStatus,
};
use crate::error::{CmacError, Result};
use crate::mesh::{
    extract_component_surface, io as mesh_io, is_watertight_manifold, Component, TetMesh,
    TriSurface,
};
use crate::metrics::{cd_heart_to, cloud_distances, dice, QualityReport, RunStatus, N_SAMPLES};
use crate::postprocess::{post_process, PostprocessConfig, PostprocessOutput};
use crate::remesh::{constrained_remesh, RemeshConfig, RemeshOutput};
use crate::spatial::PointIndex;
use crate::voxelgrid::{
    downsample_majority, io as grid_io, isosurface, preprocess, resample_label_nearest,
    sample_surface, threshold_segment, LabelGrid,
};
use crate::Vec3;

pub use phantom::{corpus_specs, make_phantom, Phantom, PhantomKind, PhantomSpec};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub image: Option<PathBuf>,
    pub segmentation: Option<PathBuf>,
    pub heart_mesh: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// Overrides `$CMAC_TETGEN` and the default lookup.
    pub mesher: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessingConfig {
    /// Isotropic voxel spacing in mm.
    pub spacing: f64,
    pub crop: [usize; 3],
    /// Defaults to the center of the heart mesh bounding box.
    pub crop_center: Option<[f64; 3]>,
    /// Intensity clip range in HU before min-max normalization.
    pub clip: [f64; 2],
    /// Threshold on the normalized image when no segmentation file is given.
    pub threshold: f64,
    /// The image is in HU. Thresholding an uncalibrated image needs `allow_uncalibrated`.
    pub calibrated: bool,
    pub allow_uncalibrated: bool,
}

impl Default for PreprocessingConfig {
    fn default() -> Self {
        PreprocessingConfig {
            spacing: 1.25,
            crop: [128; 3],
            crop_center: None,
            clip: [-200.0, 1500.0],
            // 130 HU on the default clip range
            threshold: 330.0 / 1700.0,
            calibrated: true,
            allow_uncalibrated: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AssembleConfig {
    pub stitch_tol: f64,
    /// Remeshing is skipped when the DMTet surface already meshes to this min scaled Jacobian.
    pub jacobian_threshold: f64,
    pub quality: QualityOpts,
    pub timeout_s: u64,
}

impl Default for AssembleConfig {
    fn default() -> Self {
        AssembleConfig {
            stitch_tol: STITCH_TOL,
            jacobian_threshold: 0.2,
            quality: QualityOpts::default(),
            timeout_s: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsConfig {
    pub n_samples: usize,
    /// Report this percentile as HD instead of the maximum.
    pub hd_percentile: Option<f64>,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            n_samples: N_SAMPLES,
            hd_percentile: None,
        }
    }
}

/// Everything a run needs. The top-level `seed` and `crossing_convention`
/// override the per-stage copies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub preprocessing: PreprocessingConfig,
    pub postprocess: PostprocessConfig,
    pub background: BgmeshConfig,
    pub dmtet: DmtetConfig,
    pub remesh: RemeshConfig,
    pub assemble: AssembleConfig,
    pub metrics: MetricsConfig,
    pub crossing_convention: CrossingConvention,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            paths: Paths::default(),
            preprocessing: PreprocessingConfig::default(),
            postprocess: PostprocessConfig::default(),
            background: BgmeshConfig::default(),
            dmtet: DmtetConfig::default(),
            remesh: RemeshConfig::default(),
            assemble: AssembleConfig::default(),
            metrics: MetricsConfig::default(),
            crossing_convention: CrossingConvention::Printed,
            seed: 0,
        }
    }
}

/// Independent stream for stage `k` of a run seeded with `seed`.
pub fn split_seed(seed: u64, k: u64) -> u64 {
    // splitmix64 finalizer over a counter
    let mut z = seed.wrapping_add(k.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| match e {
            CmacError::Json(j) => CmacError::parse(path, j.to_string()),
            e => e,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.preprocessing;
        if !(p.spacing.is_finite() && p.spacing > 0.0)
            || p.crop.contains(&0)
            || !(p.clip[0] < p.clip[1])
        {
            return Err(CmacError::InvalidInput(format!(
                "bad preprocessing config {p:?}"
            )));
        }
        if !(0.0..=1.0).contains(&p.threshold) {
            return Err(CmacError::InvalidInput(format!(
                "threshold {} is outside [0, 1]",
                p.threshold
            )));
        }
        self.postprocess.validate()?;
        self.background.validate()?;
        self.dmtet.validate()?;
        let r = &self.remesh;
        if r.n_remesh > 15
            || !(r.ratio > 0.0 && r.ratio < 1.0)
            || r.max_passes == 0
            || !(r.contact_tol >= 0.0)
        {
            return Err(CmacError::InvalidInput(format!("bad remesh config {r:?}")));
        }
        let a = &self.assemble;
        if !(a.stitch_tol.is_finite() && a.stitch_tol >= 0.0)
            || !(0.0..=1.0).contains(&a.jacobian_threshold)
        {
            return Err(CmacError::InvalidInput(format!(
                "bad assemble config {a:?}"
            )));
        }
        if a.quality.max_radius_edge_ratio <= 1.0 || a.timeout_s == 0 {
            return Err(CmacError::InvalidInput(format!("bad mesher options {a:?}")));
        }
        if self.metrics.n_samples == 0
            || self
                .metrics
                .hd_percentile
                .is_some_and(|q| !(0.0..=100.0).contains(&q))
        {
            return Err(CmacError::InvalidInput(format!(
                "bad metrics config {:?}",
                self.metrics
            )));
        }
        Ok(())
    }

    /// Stage configs with the shared seed, spacing and convention applied.
    pub fn resolved(&self) -> PipelineConfig {
        let mut c = self.clone();
        c.background.voxel_spacing = c.preprocessing.spacing;
        c.dmtet.convention = c.crossing_convention;
        c.dmtet.seed = split_seed(c.seed, 1);
        c.remesh.seed = split_seed(c.seed, 2);
        c
    }

    pub fn mesher_setup(&self, workdir: impl Into<PathBuf>) -> MesherSetup {
        let mut m = MesherSetup::new(workdir);
        if let Some(exe) = &self.paths.mesher {
            m.executable = exe.clone();
        }
        m.timeout_s = self.assemble.timeout_s;
        m
    }
}

/// In-memory products of a run; a field is `None` when its stage did not run.
#[derive(Debug, Clone, Default)]
pub struct Artifacts {
    pub postprocess: Option<PostprocessOutput>,
    pub background: Option<BackgroundMesh>,
    pub dmtet: Option<DmtetResult>,
    pub remesh: Option<RemeshOutput>,
    /// Every surface handed to the mesher, iterate order.
    pub iterates: Vec<TriSurface>,
    pub diagnostics: Vec<IterateDiagnostic>,
    pub selection: Option<Selection>,
    pub combined: Option<TetMesh>,
    pub stitch: Option<StitchReport>,
}

#[derive(Debug)]
pub struct CaseResult {
    pub report: QualityReport,
    pub artifacts: Artifacts,
    pub error: Option<CmacError>,
}

impl CaseResult {
    pub fn ok(&self) -> bool {
        self.error.is_none()
    }
}

struct Timer<'a> {
    timings: &'a mut BTreeMap<String, f64>,
}

impl Timer<'_> {
    fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let t0 = Instant::now();
        let out = f();
        let dt = t0.elapsed().as_secs_f64();
        *self.timings.entry(stage.to_string()).or_insert(0.0) += dt;
        log::debug!("stage={stage} elapsed={dt:.3}s");
        out
    }
}

/// Runs every stage on in-memory inputs. Mesher exchange files go to `workdir`.
/// Failures are recorded in the report rather than returned, so callers get
/// whatever was produced before the failing stage.
pub fn run_case(
    heart: &TetMesh,
    y0: &LabelGrid,
    cfg: &PipelineConfig,
    workdir: &Path,
) -> CaseResult {
    let cfg = cfg.resolved();
    let mut report = QualityReport::new(cfg.metrics.n_samples);
    let mut art = Artifacts::default();
    let error = match run_stages(heart, y0, &cfg, workdir, &mut report, &mut art) {
        Ok(()) => None,
        Err(e) => {
            report.status = RunStatus::Failed;
            if let CmacError::Stage { stage, .. } = &e {
                report.failed_stage = Some(stage.to_string());
            }
            report.error = Some(e.root().to_string());
            log::error!("{e}");
            Some(e)
        }
    };
    CaseResult {
        report,
        artifacts: art,
        error,
    }
}

fn run_stages(
    heart: &TetMesh,
    y0: &LabelGrid,
    cfg: &PipelineConfig,
    workdir: &Path,
    report: &mut QualityReport,
    art: &mut Artifacts,
) -> Result<()> {
    use crate::error::StageExt;
    let mut timings = BTreeMap::new();
    let result = (|| {
        let mut t = Timer {
            timings: &mut timings,
        };
        let n = cfg.metrics.n_samples;
        let mseed = split_seed(cfg.seed, 3);
        let root = t
            .time("setup", || {
                extract_component_surface(heart, &Component::AORTIC_ROOT)
            })
            .stage("setup")?
            .surface;

        let post = t
            .time("postprocess", || post_process(y0, heart, &cfg.postprocess))
            .stage("postprocess")?;
        let y_ca2 = post.y_ca2.clone();
        art.postprocess = Some(post);
        // the post-processed grid is finer by `upsample`; compare on the input grid
        let coarse = downsample_majority(&y_ca2, cfg.postprocess.upsample).stage("metrics")?;
        if coarse.dims() != y0.dims() {
            return Err(CmacError::ShapeMismatch(coarse.dims(), y0.dims()).in_stage("metrics"));
        }
        report.dice = Some(dice(y0, &y0.with_data(coarse.into_data())).stage("metrics")?);
        let raw_surface = t.time("metrics", || isosurface(y0)).stage("metrics")?;
        if !raw_surface.is_empty() {
            report.cd_heart_raw = Some(
                t.time("metrics", || cd_heart_to(&raw_surface, &root, n, mseed))
                    .value,
            );
        }
        if y_ca2.count() == 0 {
            report.status = RunStatus::Empty;
            return Ok(());
        }

        let mesher = cfg.mesher_setup(workdir);
        let bg = t.time("background", || {
            generate_background_mesh(heart, &cfg.background, &mesher)
        });
        report.background_success = Some(bg.is_ok());
        let bg = bg.stage("background")?;

        let dm = t
            .time("dmtet", || optimize(&y_ca2, &bg, &cfg.dmtet))
            .stage("dmtet")?;
        art.background = Some(bg);
        report.dmtet_initial_loss = dm.initial_loss();
        report.dmtet_final_loss = dm.final_loss();
        report.dmtet_watertight = Some(is_watertight_manifold(&dm.surface).ok);
        report.dmtet_wedges_filled = Some(dm.wedges_filled);
        if dm.status == DmtetStatus::Empty {
            art.dmtet = Some(dm);
            report.status = RunStatus::Empty;
            return Ok(());
        }
        let s0 = dm.surface.clone();
        art.dmtet = Some(dm);

        let q = cfg.assemble.quality;
        let first = t.time("tetrahedralize", || evaluate_iterate(0, &s0, &mesher, q));
        let satisfied = first
            .diagnostic
            .min_scaled_jacobian
            .is_some_and(|j| j >= cfg.assemble.jacobian_threshold);
        let mut outcomes = vec![first];
        let mut iterates = vec![s0.clone()];
        if !satisfied && cfg.remesh.n_remesh > 0 {
            let nodes = PointIndex::new(&root.vertices);
            let rm = t
                .time("remesh", || constrained_remesh(&s0, &nodes, &cfg.remesh))
                .stage("remesh")?;
            for (k, s) in rm.iterates.iter().enumerate().skip(1) {
                outcomes.push(t.time("select", || evaluate_iterate(k, s, &mesher, q)));
            }
            iterates = rm.iterates.clone();
            art.remesh = Some(rm);
        }
        report.n_iterates = Some(iterates.len());
        art.diagnostics = outcomes.iter().map(|o| o.diagnostic.clone()).collect();
        art.iterates = iterates.clone();
        let sel = select_from(&iterates, outcomes).stage("select")?;
        report.tet_success = true;
        report.selected_iterate = Some(sel.index);
        report.set_jacobian(Some(&sel.jacobian));

        let (combined, st) = t
            .time("stitch", || {
                stitch(&sel.mesh, heart, cfg.assemble.stitch_tol)
            })
            .stage("stitch")?;
        report.merged_nodes = Some(st.merged_node_count);
        report.components_kept = Some(st.components_kept);
        report.components_dropped = Some(st.components_dropped);
        report.unmerged_near_heart = Some(st.unmerged_near_heart);

        t.time("metrics", || -> Result<()> {
            let heart_index = PointIndex::new(&heart.vertices);
            report.contact_vertices = Some(
                sel.surface
                    .vertices
                    .iter()
                    .filter(|p| heart_index.nearest(p).is_some_and(|(_, d)| d == 0.0))
                    .count(),
            );
            let post_surface = isosurface(&y_ca2)?;
            let a = sample_surface(&post_surface, n, mseed);
            let b = sample_surface(&sel.surface, n, mseed);
            if let Some(d) = cloud_distances(&a, &b, cfg.metrics.hd_percentile) {
                report.hd = Some(d.hd);
                report.cd = Some(d.cd);
            }
            report.cd_heart = Some(cd_heart_to(&sel.surface, &root, n, mseed).value);
            Ok(())
        })
        .stage("metrics")?;
        art.combined = Some(combined);
        art.stitch = Some(st);
        art.selection = Some(sel);
        Ok(())
    })();
    for (stage, dt) in &timings {
        log::info!("stage={stage} elapsed={dt:.3}s");
    }
    report.timings = timings;
    result
}

/// Loads the segmentation named by the config, or thresholds the image.
pub fn load_segmentation(cfg: &PipelineConfig, heart: &TetMesh) -> Result<LabelGrid> {
    let p = &cfg.preprocessing;
    let center = p.crop_center.map(Vec3::from).unwrap_or_else(|| {
        let bb = crate::geom::Aabb::from_points(&heart.vertices);
        (bb.min + bb.max) * 0.5
    });
    let spacing = Vec3::repeat(p.spacing);
    let half = Vec3::new(
        p.crop[0] as f64 - 1.0,
        p.crop[1] as f64 - 1.0,
        p.crop[2] as f64 - 1.0,
    ) * 0.5;
    if let Some(path) = &cfg.paths.segmentation {
        let seg = grid_io::read_label(path)?;
        seg.ensure_binary()?;
        // segmentations already on the working spacing are taken as cropped
        if (seg.spacing() - spacing).norm() <= 1e-9 * p.spacing {
            return Ok(seg);
        }
        return resample_label_nearest(&seg, p.crop, spacing, center - half * p.spacing);
    }
    let Some(path) = &cfg.paths.image else {
        return Err(CmacError::InvalidInput(
            "config names neither a segmentation nor an image".into(),
        ));
    };
    if !p.calibrated && !p.allow_uncalibrated {
        return Err(CmacError::InvalidInput(
            "refusing to threshold an uncalibrated image; set preprocessing.allow_uncalibrated"
                .into(),
        ));
    }
    let image = grid_io::read_scalar(path)?;
    let norm = preprocess(&image, p.spacing, center, p.crop, p.clip[0], p.clip[1])?;
    Ok(threshold_segment(&norm, p.threshold))
}

pub fn load_heart(path: &Path) -> Result<TetMesh> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("vtk") => mesh_io::read_tet_vtk(path),
        _ => mesh_io::read_tmesh(path),
    }
}

/// Writes every artifact plus `report.json` and `timings.json` into `dir`.
pub fn write_outputs(dir: &Path, res: &CaseResult) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let a = &res.artifacts;
    if let Some(p) = &a.postprocess {
        grid_io::write_label(&dir.join("seg_post.vgrid"), &p.y_ca2)?;
    }
    if let Some(bg) = &a.background {
        mesh_io::write_tmesh(&dir.join("background.tmesh"), &bg.mesh)?;
    }
    if let Some(d) = &a.dmtet {
        mesh_io::write_tsurf(&dir.join("dmtet_surface.tsurf"), &d.surface)?;
        std::fs::write(dir.join("dmtet_trace.csv"), trace_csv(&d.trace))?;
    }
    if !a.iterates.is_empty() {
        let it_dir = dir.join("iterates");
        std::fs::create_dir_all(&it_dir)?;
        for (k, s) in a.iterates.iter().enumerate() {
            mesh_io::write_tsurf(&it_dir.join(format!("iterate_{k:02}.tsurf")), s)?;
        }
        std::fs::write(
            dir.join("iterates.json"),
            serde_json::to_string_pretty(&a.diagnostics)? + "\n",
        )?;
    }
    if let Some(sel) = &a.selection {
        mesh_io::write_tsurf(&dir.join("calc_surface.tsurf"), &sel.surface)?;
        mesh_io::write_tmesh(&dir.join("calc.tmesh"), &sel.mesh)?;
    }
    if let Some(m) = &a.combined {
        mesh_io::write_tmesh(&dir.join("combined.tmesh"), m)?;
        mesh_io::write_tet_vtk(&dir.join("combined.vtk"), m)?;
    }
    if let Some(st) = &a.stitch {
        std::fs::write(
            dir.join("stitch.json"),
            serde_json::to_string_pretty(st)? + "\n",
        )?;
    }
    std::fs::write(dir.join("report.json"), res.report.to_json()?)?;
    std::fs::write(dir.join("timings.json"), res.report.timings_json()?)?;
    Ok(())
}

/// File-driven run: load inputs, run, write outputs. Returns the report, or
/// the error of the failing stage after the partial report has been written.
pub fn run(cfg: &PipelineConfig) -> Result<QualityReport> {
    cfg.validate()?;
    let out = &cfg.paths.output_dir;
    let t0 = Instant::now();
    let heart_path = cfg
        .paths
        .heart_mesh
        .as_ref()
        .ok_or_else(|| CmacError::InvalidInput("config names no heart mesh".into()))?;
    let heart = load_heart(heart_path).map_err(|e| e.in_stage("load"))?;
    let y0 = load_segmentation(cfg, &heart).map_err(|e| e.in_stage("load"))?;
    let load_time = t0.elapsed().as_secs_f64();
    let mut res = run_case(&heart, &y0, cfg, &out.join("mesher"));
    res.report.timings.insert("load".into(), load_time);
    let t1 = Instant::now();
    write_outputs(out, &res)?;
    res.report
        .timings
        .insert("write".into(), t1.elapsed().as_secs_f64());
    std::fs::write(out.join("timings.json"), res.report.timings_json()?)?;
    match res.error {
        Some(e) => Err(e),
        None => Ok(res.report),
    }
}

/// Writes a phantom as pipeline inputs: `heart.tmesh`, `segmentation.vgrid`,
/// `image.vgrid` and a ready-to-run `config.json` pointing at them.
pub fn write_phantom(dir: &Path, p: &Phantom) -> Result<PipelineConfig> {
    std::fs::create_dir_all(dir)?;
    mesh_io::write_tmesh(&dir.join("heart.tmesh"), &p.heart)?;
    grid_io::write_label(&dir.join("segmentation.vgrid"), &p.calcification)?;
    grid_io::write_scalar(&dir.join("image.vgrid"), &p.image)?;
    std::fs::write(
        dir.join("phantom.json"),
        serde_json::to_string_pretty(&p.spec)? + "\n",
    )?;
    let mut cfg = PipelineConfig::default();
    cfg.paths.heart_mesh = Some(dir.join("heart.tmesh"));
    cfg.paths.segmentation = Some(dir.join("segmentation.vgrid"));
    cfg.paths.output_dir = dir.join("out");
    cfg.preprocessing.spacing = p.spec.spacing;
    cfg.seed = p.spec.seed;
    std::fs::write(
        dir.join("config.json"),
        serde_json::to_string_pretty(&cfg)? + "\n",
    )?;
    Ok(cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageStats {
    pub min: f64,
    pub median: f64,
    pub max: f64,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchCase {
    pub spec: PhantomSpec,
    pub status: RunStatus,
    pub error: Option<String>,
    pub timings: BTreeMap<String, f64>,
    pub stage_sum: f64,
    pub wall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub cases: Vec<BenchCase>,
    pub stages: BTreeMap<String, StageStats>,
    pub wall: StageStats,
}

fn stats(mut xs: Vec<f64>) -> StageStats {
    xs.sort_by(f64::total_cmp);
    let n = xs.len().max(1);
    let median = if xs.is_empty() {
        0.0
    } else if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    };
    StageStats {
        min: xs.first().copied().unwrap_or(0.0),
        median,
        max: xs.last().copied().unwrap_or(0.0),
        mean: xs.iter().sum::<f64>() / n as f64,
    }
}

/// Runs the pipeline on each phantom in turn; a failing case is recorded and
/// does not stop the others.
pub fn bench(cfg: &PipelineConfig, specs: &[PhantomSpec], workdir: &Path) -> Result<BenchSummary> {
    cfg.validate()?;
    let mut cases = Vec::new();
    for (k, spec) in specs.iter().enumerate() {
        let t0 = Instant::now();
        let (status, error, timings) = match make_phantom(spec) {
            Ok(p) => {
                let mut c = cfg.clone();
                c.preprocessing.spacing = spec.spacing;
                c.seed = spec.seed;
                let res = run_case(
                    &p.heart,
                    &p.calcification,
                    &c,
                    &workdir.join(format!("case_{k:03}")),
                );
                (
                    res.report.status,
                    res.report.error.clone(),
                    res.report.timings.clone(),
                )
            }
            Err(e) => (RunStatus::Failed, Some(e.to_string()), BTreeMap::new()),
        };
        let wall = t0.elapsed().as_secs_f64();
        let stage_sum = timings.values().sum();
        log::info!("bench case {k}: {status:?} in {wall:.2}s");
        cases.push(BenchCase {
            spec: spec.clone(),
            status,
            error,
            timings,
            stage_sum,
            wall,
        });
    }
    let mut per: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for c in &cases {
        for (s, v) in &c.timings {
            per.entry(s.clone()).or_default().push(*v);
        }
    }
    let stages = per.into_iter().map(|(s, v)| (s, stats(v))).collect();
    let wall = stats(cases.iter().map(|c| c.wall).collect());
    Ok(BenchSummary {
        cases,
        stages,
        wall,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = PipelineConfig::default();
        c.validate().unwrap();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(PipelineConfig::from_json(&text).unwrap(), c);
        assert_eq!(PipelineConfig::from_json("{}").unwrap(), c);
        assert_eq!(c.dmtet.n_opt, 100);
        assert_eq!(c.dmtet.weights.lambda, [10.0, 1.0, 1.0, 0.5]);
        assert_eq!(c.remesh.ratio, 0.8);
        assert_eq!(c.preprocessing.crop, [128; 3]);
    }

    #[test]
    fn bad_values_are_rejected() {
        for bad in [
            r#"{"remesh": {"n_remesh": 40}}"#,
            r#"{"assemble": {"stitch_tol": -1}}"#,
            r#"{"preprocessing": {"clip": [10, 0]}}"#,
            r#"{"dmtet": {"lr": 0}}"#,
            r#"{"postprocess": {"kernel_shape": [4, 5, 5]}}"#,
        ] {
            assert!(PipelineConfig::from_json(bad).is_err(), "{bad}");
        }
        assert!(matches!(
            PipelineConfig::from_json("{\"seed\": \"x\"}"),
            Err(CmacError::Json(_))
        ));
    }

    #[test]
    fn stage_seeds_differ_and_repeat() {
        let c = PipelineConfig {
            seed: 5,
            ..Default::default()
        }
        .resolved();
        assert_ne!(c.dmtet.seed, c.remesh.seed);
        assert_eq!(
            c,
            PipelineConfig {
                seed: 5,
                ..Default::default()
            }
            .resolved()
        );
    }

    #[test]
    fn empty_segmentation_skips_the_mesher() {
        let p = make_phantom(&PhantomSpec::default()).unwrap();
        let empty = p.calcification.map(|_| 0u8);
        let mut cfg = PipelineConfig::default();
        cfg.paths.mesher = Some("/nonexistent/mesher".into());
        let dir = tempfile::tempdir().unwrap();
        let res = run_case(&p.heart, &empty, &cfg, dir.path());
        assert!(res.ok(), "{:?}", res.error);
        assert_eq!(res.report.status, RunStatus::Empty);
        assert!(res.artifacts.background.is_none());
        assert!(!res.report.tet_success);
    }

    #[test]
    fn missing_mesher_fails_in_the_background_stage() {
        let p = make_phantom(&PhantomSpec::default()).unwrap();
        let mut cfg = PipelineConfig::default();
        cfg.paths.mesher = Some("/nonexistent/mesher".into());
        let dir = tempfile::tempdir().unwrap();
        let res = run_case(&p.heart, &p.calcification, &cfg, dir.path());
        assert_eq!(res.report.status, RunStatus::Failed);
        assert_eq!(
            res.report.failed_stage.as_deref(),
            Some("bgmesh.tetrahedralize")
        );
        assert_eq!(res.report.background_success, Some(false));
        assert!(matches!(
            res.error.as_ref().unwrap().root(),
            CmacError::Mesher(_) | CmacError::Io(_)
        ));
    }

    #[test]
    fn uncalibrated_threshold_needs_opt_in() {
        let p = make_phantom(&PhantomSpec::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("image.vgrid");
        grid_io::write_scalar(&img, &p.image).unwrap();
        let mut cfg = PipelineConfig::default();
        cfg.paths.image = Some(img);
        cfg.preprocessing.calibrated = false;
        assert!(load_segmentation(&cfg, &p.heart).is_err());
        cfg.preprocessing.allow_uncalibrated = true;
        cfg.preprocessing.clip = [0.0, 1.0];
        cfg.preprocessing.threshold = 0.65;
        cfg.preprocessing.crop = [32; 3];
        let seg = load_segmentation(&cfg, &p.heart).unwrap();
        assert_eq!(seg.count(), p.calcification.count());
    }

    #[test]
    fn stats_are_ordered() {
        let s = stats(vec![3.0, 1.0, 2.0, 10.0]);
        assert_eq!((s.min, s.median, s.max, s.mean), (1.0, 2.5, 10.0, 4.0));
    }
}
