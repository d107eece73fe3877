//! File-exchange client for an external TetGen-compatible tetrahedralizer.
//!
//! The job writes `<workdir>/<name>.poly`, runs `<exe> -<switches> <name>.poly`
//! and reads back `<name>.1.node` / `<name>.1.ele`. Floats cross the boundary
//! with 17 significant digits, so input vertices come back bit-identical.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{CmacError, Result};
use crate::mesh::io::fmt_g;
use crate::mesh::{is_watertight_manifold, Component, TetMesh, TriSurface};
use crate::Vec3;

/// Environment variable that overrides the mesher executable.
pub const MESHER_ENV: &str = "CMAC_TETGEN";

const EXCHANGE_DIGITS: usize = 17;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QualityOpts {
    /// TetGen `-q` bound on the radius-edge ratio.
    pub max_radius_edge_ratio: f64,
    /// TetGen `-a` bound on the tet volume; `None` leaves sizing to the mesher.
    pub max_volume: Option<f64>,
}

impl Default for QualityOpts {
    fn default() -> Self {
        QualityOpts {
            max_radius_edge_ratio: 2.0,
            max_volume: None,
        }
    }
}

impl QualityOpts {
    /// `p` keeps the PLC, `Y` forbids Steiner points on it, `Q` silences output.
    pub fn switches(&self) -> String {
        let mut s = format!("pYQq{}", fmt_g(self.max_radius_edge_ratio, 6));
        if let Some(v) = self.max_volume {
            let _ = write!(s, "a{}", fmt_g(v, 6));
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct MesherJob {
    pub input_surface: TriSurface,
    pub quality_opts: QualityOpts,
    pub workdir: PathBuf,
    pub executable: PathBuf,
    pub timeout_s: u64,
    /// File stem for the exchange files.
    pub name: String,
}

impl MesherJob {
    pub fn new(input_surface: TriSurface, workdir: impl Into<PathBuf>) -> Self {
        MesherJob {
            input_surface,
            quality_opts: QualityOpts::default(),
            workdir: workdir.into(),
            executable: default_executable(),
            timeout_s: 120,
            name: "surface".into(),
        }
    }
}

/// `$CMAC_TETGEN`, else a `cmac-tetgen` next to (or one level above) the
/// running executable, else `cmac-tetgen` from `PATH`.
pub fn default_executable() -> PathBuf {
    if let Some(p) = std::env::var_os(MESHER_ENV) {
        return PathBuf::from(p);
    }
    let name = format!("cmac-tetgen{}", std::env::consts::EXE_SUFFIX);
    if let Ok(exe) = std::env::current_exe() {
        for dir in exe.ancestors().skip(1).take(2) {
            let cand = dir.join(&name);
            if cand.is_file() {
                return cand;
            }
        }
    }
    PathBuf::from(name)
}

/// TetGen `.poly` text for a triangle surface: 0-based nodes, one facet per face.
pub fn poly_string(s: &TriSurface) -> String {
    let mut out = String::with_capacity(64 * s.vertices.len() + 24 * s.faces.len());
    let _ = writeln!(out, "{} 3 0 0", s.vertices.len());
    for (i, v) in s.vertices.iter().enumerate() {
        let _ = writeln!(
            out,
            "{i} {} {} {}",
            fmt_g(v.x, EXCHANGE_DIGITS),
            fmt_g(v.y, EXCHANGE_DIGITS),
            fmt_g(v.z, EXCHANGE_DIGITS)
        );
    }
    let _ = writeln!(out, "{} 0", s.faces.len());
    for f in &s.faces {
        let _ = writeln!(out, "1\n3 {} {} {}", f[0], f[1], f[2]);
    }
    out.push_str("0\n0\n");
    out
}

fn data_lines(text: &str) -> impl Iterator<Item = Vec<&str>> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(|l| l.split_whitespace().collect())
}

/// Parse TetGen `.node` and `.ele` text. Indices may start at 0 or 1.
pub fn parse_node_ele(
    node_path: &Path,
    node: &str,
    ele_path: &Path,
    ele: &str,
) -> Result<(Vec<Vec3>, Vec<[usize; 4]>)> {
    let mut lines = data_lines(node);
    let head = lines
        .next()
        .ok_or_else(|| CmacError::parse(node_path, "missing header"))?;
    let n: usize = head
        .first()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| CmacError::parse(node_path, "bad count"))?;
    let mut first = None;
    let mut verts = Vec::with_capacity(n);
    for (k, t) in lines.take(n).enumerate() {
        if t.len() < 4 {
            return Err(CmacError::parse(
                node_path,
                format!("node record {k} is short"),
            ));
        }
        let id: usize = t[0]
            .parse()
            .map_err(|_| CmacError::parse(node_path, "bad node id"))?;
        let base = *first.get_or_insert(id);
        if id != base + k {
            return Err(CmacError::parse(
                node_path,
                format!("node ids not consecutive at record {k}"),
            ));
        }
        let mut p = Vec3::zeros();
        for a in 0..3 {
            p[a] = t[1 + a].parse().map_err(|_| {
                CmacError::parse(node_path, format!("bad coordinate '{}'", t[1 + a]))
            })?;
        }
        verts.push(p);
    }
    if verts.len() != n {
        return Err(CmacError::parse(node_path, "fewer nodes than declared"));
    }
    let base = first.unwrap_or(0);
    let mut lines = data_lines(ele);
    let head = lines
        .next()
        .ok_or_else(|| CmacError::parse(ele_path, "missing header"))?;
    let m: usize = head
        .first()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| CmacError::parse(ele_path, "bad count"))?;
    let mut tets = Vec::with_capacity(m);
    for t in lines.take(m) {
        if t.len() < 5 {
            return Err(CmacError::parse(ele_path, "short element record"));
        }
        let mut tet = [0usize; 4];
        for k in 0..4 {
            let i: usize = t[1 + k]
                .parse()
                .map_err(|_| CmacError::parse(ele_path, "bad element index"))?;
            if i < base || i - base >= n {
                return Err(CmacError::parse(
                    ele_path,
                    format!("element references missing node {i}"),
                ));
            }
            tet[k] = i - base;
        }
        tets.push(tet);
    }
    if tets.len() != m {
        return Err(CmacError::parse(ele_path, "fewer elements than declared"));
    }
    Ok((verts, tets))
}

fn run_once(exe: &Path, switches: &str, poly: &Path, timeout: Duration) -> Result<()> {
    let mut child = Command::new(exe)
        .arg(format!("-{switches}"))
        .arg(poly)
        .stdin(Stdio::null())
        .stdout(Stdio::null())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| CmacError::Mesher(format!("cannot start {}: {e}", exe.display())))?;
    let start = Instant::now();
    loop {
        if let Some(status) = child.try_wait()? {
            if status.success() {
                return Ok(());
            }
            let mut err = String::new();
            if let Some(mut s) = child.stderr.take() {
                use std::io::Read;
                let _ = s.read_to_string(&mut err);
            }
            return Err(CmacError::Mesher(format!(
                "exit code {:?}: {}",
                status.code(),
                err.trim()
            )));
        }
        if start.elapsed() > timeout {
            let _ = child.kill();
            let _ = child.wait();
            return Err(CmacError::Mesher(format!(
                "timed out after {} s",
                timeout.as_secs()
            )));
        }
        std::thread::sleep(Duration::from_millis(5));
    }
}

/// Tetrahedralize the interior of a closed surface. Tets come back positively
/// oriented and labelled [`Component::Background`].
pub fn tetrahedralize(job: &MesherJob) -> Result<TetMesh> {
    let s = &job.input_surface;
    let report = is_watertight_manifold(s);
    if !report.ok {
        return Err(CmacError::NotManifold(report));
    }
    tetrahedralize_plc(s, job)
}

/// Like [`tetrahedralize`] but skips the single-shell manifold check, for
/// multi-shell PLCs that are validated by the caller.
pub fn tetrahedralize_plc(s: &TriSurface, job: &MesherJob) -> Result<TetMesh> {
    std::fs::create_dir_all(&job.workdir)?;
    let poly = job.workdir.join(format!("{}.poly", job.name));
    std::fs::write(&poly, poly_string(s))?;
    let node = job.workdir.join(format!("{}.1.node", job.name));
    let ele = job.workdir.join(format!("{}.1.ele", job.name));
    let switches = job.quality_opts.switches();
    let timeout = Duration::from_secs(job.timeout_s.max(1));
    let mut last = None;
    for attempt in 0..2 {
        let _ = std::fs::remove_file(&node);
        let _ = std::fs::remove_file(&ele);
        match run_once(&job.executable, &switches, &poly, timeout) {
            Ok(()) => {
                last = None;
                break;
            }
            Err(e) => {
                log::warn!("mesher attempt {} failed: {e}", attempt + 1);
                last = Some(e);
            }
        }
    }
    if let Some(e) = last {
        return Err(e);
    }
    let node_txt = std::fs::read_to_string(&node)?;
    let ele_txt = std::fs::read_to_string(&ele)?;
    let (verts, tets) = parse_node_ele(&node, &node_txt, &ele, &ele_txt)?;
    if verts.len() < s.vertices.len() || verts[..s.vertices.len()] != s.vertices[..] {
        return Err(CmacError::Mesher(
            "input vertices were not preserved verbatim".into(),
        ));
    }
    if tets.is_empty() {
        return Err(CmacError::Mesher("no tetrahedra produced".into()));
    }
    let n = tets.len();
    let mut m = TetMesh::new(verts, tets, vec![Component::Background; n])?;
    m.canonicalize_orientation();
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn switches_include_quality_and_volume() {
        let q = QualityOpts {
            max_radius_edge_ratio: 1.4,
            max_volume: Some(0.5),
        };
        assert_eq!(q.switches(), "pYQq1.4a0.5");
        assert_eq!(QualityOpts::default().switches(), "pYQq2");
    }

    #[test]
    fn poly_round_trips_coordinates() {
        let s = TriSurface::new(
            vec![
                Vec3::new(0.1, 1.0 / 3.0, -2e-7),
                Vec3::new(1., 0., 0.),
                Vec3::new(0., 1., 0.),
            ],
            vec![[0, 1, 2]],
        );
        let txt = poly_string(&s);
        let line = txt.lines().nth(1).unwrap();
        let xs: Vec<f64> = line
            .split_whitespace()
            .skip(1)
            .map(|t| t.parse().unwrap())
            .collect();
        assert_eq!(Vec3::new(xs[0], xs[1], xs[2]), s.vertices[0]);
    }

    #[test]
    fn node_ele_with_one_based_ids() {
        let node = "4 3 0 0\n1 0 0 0\n2 1 0 0\n3 0 1 0\n4 0 0 1\n";
        let ele = "1 4 0\n1 1 2 3 4\n";
        let (v, t) = parse_node_ele(Path::new("a.node"), node, Path::new("a.ele"), ele).unwrap();
        assert_eq!(v.len(), 4);
        assert_eq!(t, vec![[0, 1, 2, 3]]);
        assert!(parse_node_ele(
            Path::new("a.node"),
            node,
            Path::new("a.ele"),
            "1 4 0\n1 1 2 3 9\n"
        )
        .is_err());
    }

    #[test]
    fn open_surface_rejected_before_dispatch() {
        let s = TriSurface::new(
            vec![Vec3::zeros(), Vec3::new(1., 0., 0.), Vec3::new(0., 1., 0.)],
            vec![[0, 1, 2]],
        );
        let mut job = MesherJob::new(s, std::env::temp_dir());
        job.executable = PathBuf::from("/nonexistent/mesher");
        assert!(matches!(
            tetrahedralize(&job),
            Err(CmacError::NotManifold(_))
        ));
    }
}
