//! Text formats for surfaces and tet meshes.
//!
//! * OBJ: `v`/`f` records only.
//! * tsurf: `tsurf 1`, `vertices N`, lines `x y z tag`, `faces M`, lines `a b c tag`
//!   (0-based; tag `-` when absent).
//! * tmesh: `tmesh 1`, `vertices N`, lines `x y z flags`, `tets M`, lines `a b c d component`.
//! * legacy VTK unstructured grid (ASCII), with a `component` cell scalar for tets.
//!
//! Coordinates are written with 9 significant digits.

use std::fmt::Write as _;
use std::path::Path;

use super::{Component, TetMesh, TriSurface, VertexTag};
use crate::error::{CmacError, Result};
use crate::Vec3;

pub const MESH_DIGITS: usize = 9;

/// `%.{digits}g`-style formatting: shortest of fixed/scientific, trailing zeros trimmed.
pub fn fmt_g(x: f64, digits: usize) -> String {
    if x == 0.0 {
        return if x.is_sign_negative() {
            "-0".into()
        } else {
            "0".into()
        };
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{:.*e}", digits - 1, x);
    let (mant, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("exponent digits");
    if exp < -5 || exp >= digits as i32 {
        let mant = trim_zeros(mant);
        format!("{mant}e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs())
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{:.*}", decimals, x)).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn push_point(out: &mut String, p: &Vec3) {
    let _ = write!(
        out,
        "{} {} {}",
        fmt_g(p.x, MESH_DIGITS),
        fmt_g(p.y, MESH_DIGITS),
        fmt_g(p.z, MESH_DIGITS)
    );
}

/// Round each coordinate to what the mesh writers emit.
pub fn quantize(p: &Vec3) -> Vec3 {
    p.map(|x| fmt_g(x, MESH_DIGITS).parse().expect("formatted float"))
}

struct Lines<'a> {
    path: &'a Path,
    it: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn new(path: &'a Path, text: &'a str) -> Self {
        Lines {
            path,
            it: text.lines().enumerate(),
        }
    }

    fn err(&self, line: usize, msg: impl std::fmt::Display) -> CmacError {
        CmacError::parse(self.path, format!("line {}: {msg}", line + 1))
    }

    /// Next non-empty, non-comment line as whitespace tokens.
    fn next_tokens(&mut self) -> Result<(usize, Vec<&'a str>)> {
        for (n, l) in self.it.by_ref() {
            let l = l.trim();
            if l.is_empty() || l.starts_with('#') {
                continue;
            }
            return Ok((n, l.split_whitespace().collect()));
        }
        Err(CmacError::parse(self.path, "unexpected end of file"))
    }

    fn header(&mut self, key: &str) -> Result<usize> {
        let (n, t) = self.next_tokens()?;
        if t.len() != 2 || t[0] != key {
            return Err(self.err(n, format!("expected '{key} <count>'")));
        }
        t[1].parse().map_err(|_| self.err(n, "bad count"))
    }
}

fn parse_f(l: &Lines, n: usize, s: &str) -> Result<f64> {
    let v: f64 = s
        .parse()
        .map_err(|_| l.err(n, format!("bad number '{s}'")))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(l.err(n, "non-finite coordinate"))
    }
}

fn parse_u(l: &Lines, n: usize, s: &str) -> Result<usize> {
    s.parse().map_err(|_| l.err(n, format!("bad index '{s}'")))
}

pub fn obj_string(s: &TriSurface) -> String {
    let mut out = String::new();
    for v in &s.vertices {
        out.push_str("v ");
        push_point(&mut out, v);
        out.push('\n');
    }
    for f in &s.faces {
        let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    out
}

pub fn write_obj(path: &Path, s: &TriSurface) -> Result<()> {
    Ok(std::fs::write(path, obj_string(s))?)
}

pub fn read_obj(path: &Path) -> Result<TriSurface> {
    let text = std::fs::read_to_string(path)?;
    let l = Lines::new(path, &text);
    let mut s = TriSurface::default();
    for (n, line) in text.lines().enumerate() {
        let t: Vec<&str> = line.split_whitespace().collect();
        match t.first() {
            Some(&"v") if t.len() >= 4 => s.vertices.push(Vec3::new(
                parse_f(&l, n, t[1])?,
                parse_f(&l, n, t[2])?,
                parse_f(&l, n, t[3])?,
            )),
            Some(&"f") if t.len() >= 4 => {
                let idx: Vec<usize> = t[1..]
                    .iter()
                    .map(|x| {
                        let head = x.split('/').next().unwrap_or(x);
                        parse_u(&l, n, head).and_then(|i| {
                            i.checked_sub(1)
                                .ok_or_else(|| l.err(n, "OBJ indices start at 1"))
                        })
                    })
                    .collect::<Result<_>>()?;
                for k in 1..idx.len() - 1 {
                    s.faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    s.validate()
        .map_err(|e| CmacError::parse(path, e.to_string()))?;
    Ok(s)
}

pub fn tsurf_string(s: &TriSurface) -> String {
    let mut out = format!("tsurf 1\nvertices {}\n", s.vertices.len());
    for (i, v) in s.vertices.iter().enumerate() {
        push_point(&mut out, v);
        let tag = s.vertex_tags.as_ref().map_or("-", |t| t[i].as_str());
        let _ = writeln!(out, " {tag}");
    }
    let _ = writeln!(out, "faces {}", s.faces.len());
    for (i, f) in s.faces.iter().enumerate() {
        let tag = s
            .face_tags
            .as_ref()
            .map_or_else(|| "-".to_string(), |t| t[i].to_string());
        let _ = writeln!(out, "{} {} {} {tag}", f[0], f[1], f[2]);
    }
    out
}

pub fn write_tsurf(path: &Path, s: &TriSurface) -> Result<()> {
    Ok(std::fs::write(path, tsurf_string(s))?)
}

pub fn read_tsurf(path: &Path) -> Result<TriSurface> {
    let text = std::fs::read_to_string(path)?;
    let mut l = Lines::new(path, &text);
    let (n, t) = l.next_tokens()?;
    if t != ["tsurf", "1"] {
        return Err(l.err(n, "missing 'tsurf 1' header"));
    }
    let nv = l.header("vertices")?;
    let mut s = TriSurface::default();
    let mut vtags = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (n, t) = l.next_tokens()?;
        if t.len() != 4 {
            return Err(l.err(n, "expected 'x y z tag'"));
        }
        s.vertices.push(Vec3::new(
            parse_f(&l, n, t[0])?,
            parse_f(&l, n, t[1])?,
            parse_f(&l, n, t[2])?,
        ));
        vtags.push(match t[3] {
            "-" => None,
            "free" => Some(VertexTag::Free),
            "contact" => Some(VertexTag::Contact),
            "border" => Some(VertexTag::Border),
            other => return Err(l.err(n, format!("unknown vertex tag '{other}'"))),
        });
    }
    let nf = l.header("faces")?;
    let mut ftags = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (n, t) = l.next_tokens()?;
        if t.len() != 4 {
            return Err(l.err(n, "expected 'a b c tag'"));
        }
        s.faces.push([
            parse_u(&l, n, t[0])?,
            parse_u(&l, n, t[1])?,
            parse_u(&l, n, t[2])?,
        ]);
        ftags.push(match t[3] {
            "-" => None,
            x => Some(x.parse::<u8>().map_err(|_| l.err(n, "bad face tag"))?),
        });
    }
    if vtags.iter().all(Option::is_some) && !vtags.is_empty() {
        s.vertex_tags = Some(vtags.into_iter().flatten().collect());
    }
    if ftags.iter().all(Option::is_some) && !ftags.is_empty() {
        s.face_tags = Some(ftags.into_iter().flatten().collect());
    }
    s.validate()
        .map_err(|e| CmacError::parse(path, e.to_string()))?;
    Ok(s)
}

pub fn tmesh_string(m: &TetMesh) -> String {
    let mut out = format!("tmesh 1\nvertices {}\n", m.vertices.len());
    for (v, f) in m.vertices.iter().zip(&m.node_flags) {
        push_point(&mut out, v);
        let _ = writeln!(out, " {f}");
    }
    let _ = writeln!(out, "tets {}", m.tets.len());
    for (t, c) in m.tets.iter().zip(&m.components) {
        let _ = writeln!(out, "{} {} {} {} {}", t[0], t[1], t[2], t[3], *c as u8);
    }
    out
}

pub fn write_tmesh(path: &Path, m: &TetMesh) -> Result<()> {
    Ok(std::fs::write(path, tmesh_string(m))?)
}

pub fn read_tmesh(path: &Path) -> Result<TetMesh> {
    let text = std::fs::read_to_string(path)?;
    let mut l = Lines::new(path, &text);
    let (n, t) = l.next_tokens()?;
    if t != ["tmesh", "1"] {
        return Err(l.err(n, "missing 'tmesh 1' header"));
    }
    let nv = l.header("vertices")?;
    let mut m = TetMesh::default();
    for _ in 0..nv {
        let (n, t) = l.next_tokens()?;
        if t.len() != 3 && t.len() != 4 {
            return Err(l.err(n, "expected 'x y z [flags]'"));
        }
        m.vertices.push(Vec3::new(
            parse_f(&l, n, t[0])?,
            parse_f(&l, n, t[1])?,
            parse_f(&l, n, t[2])?,
        ));
        m.node_flags.push(match t.get(3) {
            Some(f) => f.parse().map_err(|_| l.err(n, "bad node flags"))?,
            None => 0,
        });
    }
    let nt = l.header("tets")?;
    for _ in 0..nt {
        let (n, t) = l.next_tokens()?;
        if t.len() != 5 {
            return Err(l.err(n, "expected 'a b c d component'"));
        }
        m.tets.push([
            parse_u(&l, n, t[0])?,
            parse_u(&l, n, t[1])?,
            parse_u(&l, n, t[2])?,
            parse_u(&l, n, t[3])?,
        ]);
        let c: u8 = t[4].parse().map_err(|_| l.err(n, "bad component"))?;
        m.components
            .push(Component::from_u8(c).ok_or_else(|| l.err(n, format!("unknown component {c}")))?);
    }
    m.validate()
        .map_err(|e| CmacError::parse(path, e.to_string()))?;
    Ok(m)
}

const VTK_TETRA: u8 = 10;
const VTK_TRIANGLE: u8 = 5;

fn vtk_points(out: &mut String, pts: &[Vec3]) {
    let _ = writeln!(out, "POINTS {} double", pts.len());
    for p in pts {
        push_point(out, p);
        out.push('\n');
    }
}

pub fn tet_vtk_string(m: &TetMesh) -> String {
    let mut out = String::from(
        "# vtk DataFile Version 3.0\ncmac tet mesh\nASCII\nDATASET UNSTRUCTURED_GRID\n",
    );
    vtk_points(&mut out, &m.vertices);
    let _ = writeln!(out, "CELLS {} {}", m.tets.len(), 5 * m.tets.len());
    for t in &m.tets {
        let _ = writeln!(out, "4 {} {} {} {}", t[0], t[1], t[2], t[3]);
    }
    let _ = writeln!(out, "CELL_TYPES {}", m.tets.len());
    for _ in &m.tets {
        let _ = writeln!(out, "{VTK_TETRA}");
    }
    let _ = writeln!(
        out,
        "CELL_DATA {}\nSCALARS component int 1\nLOOKUP_TABLE default",
        m.tets.len()
    );
    for c in &m.components {
        let _ = writeln!(out, "{}", *c as u8);
    }
    out
}

pub fn surface_vtk_string(s: &TriSurface) -> String {
    let mut out = String::from(
        "# vtk DataFile Version 3.0\ncmac surface\nASCII\nDATASET UNSTRUCTURED_GRID\n",
    );
    vtk_points(&mut out, &s.vertices);
    let _ = writeln!(out, "CELLS {} {}", s.faces.len(), 4 * s.faces.len());
    for f in &s.faces {
        let _ = writeln!(out, "3 {} {} {}", f[0], f[1], f[2]);
    }
    let _ = writeln!(out, "CELL_TYPES {}", s.faces.len());
    for _ in &s.faces {
        let _ = writeln!(out, "{VTK_TRIANGLE}");
    }
    out
}

pub fn write_tet_vtk(path: &Path, m: &TetMesh) -> Result<()> {
    Ok(std::fs::write(path, tet_vtk_string(m))?)
}

pub fn write_surface_vtk(path: &Path, s: &TriSurface) -> Result<()> {
    Ok(std::fs::write(path, surface_vtk_string(s))?)
}

/// Import tetrahedra from a legacy ASCII VTK unstructured grid. Component labels
/// come from an integer cell scalar named `component` (Aorta when absent).
pub fn read_tet_vtk(path: &Path) -> Result<TetMesh> {
    let text = std::fs::read_to_string(path)?;
    let err = |m: &str| CmacError::parse(path, m.to_string());
    let mut tok = text.lines().skip(2).flat_map(|l| l.split_whitespace());
    let mut next = || tok.next().ok_or_else(|| err("unexpected end of file"));
    let num = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| err(&format!("bad integer '{s}'")))
    };
    let mut pts = Vec::new();
    let mut cells: Vec<Vec<usize>> = Vec::new();
    let mut types = Vec::new();
    let mut comp: Option<Vec<u8>> = None;
    loop {
        let Ok(key) = next() else { break };
        match key {
            "ASCII" | "DATASET" | "UNSTRUCTURED_GRID" => {}
            "POINTS" => {
                let n = num(next()?)?;
                next()?;
                for _ in 0..n {
                    let mut c = [0.0; 3];
                    for x in &mut c {
                        let s = next()?;
                        *x = s
                            .parse()
                            .map_err(|_| err(&format!("bad coordinate '{s}'")))?;
                    }
                    pts.push(Vec3::new(c[0], c[1], c[2]));
                }
            }
            "CELLS" => {
                let n = num(next()?)?;
                next()?;
                for _ in 0..n {
                    let k = num(next()?)?;
                    cells.push(
                        (0..k)
                            .map(|_| next().and_then(num))
                            .collect::<Result<_>>()?,
                    );
                }
            }
            "CELL_TYPES" => {
                let n = num(next()?)?;
                for _ in 0..n {
                    types.push(num(next()?)?);
                }
            }
            "CELL_DATA" => {
                next()?;
            }
            "SCALARS" => {
                let name = next()?;
                next()?;
                let mut t = next()?;
                if t == "1" {
                    t = next()?;
                }
                if t != "LOOKUP_TABLE" {
                    return Err(err("expected LOOKUP_TABLE"));
                }
                next()?;
                let vals = (0..cells.len())
                    .map(|_| next().and_then(num))
                    .collect::<Result<Vec<_>>>()?;
                if name == "component" {
                    comp = Some(vals.into_iter().map(|v| v as u8).collect());
                }
            }
            other => return Err(err(&format!("unsupported VTK section '{other}'"))),
        }
    }
    let mut m = TetMesh {
        vertices: pts,
        ..Default::default()
    };
    m.node_flags = vec![0; m.vertices.len()];
    for (i, c) in cells.iter().enumerate() {
        if types.get(i).copied() != Some(VTK_TETRA as usize) {
            continue;
        }
        m.tets.push([c[0], c[1], c[2], c[3]]);
        let label = comp.as_ref().map_or(Component::Aorta as u8, |v| v[i]);
        m.components.push(
            Component::from_u8(label).ok_or_else(|| err(&format!("unknown component {label}")))?,
        );
    }
    m.validate()
        .map_err(|e| CmacError::parse(path, e.to_string()))?;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::icosphere;

    #[test]
    fn fmt_g_matches_printf() {
        assert_eq!(fmt_g(1.0, 9), "1");
        assert_eq!(fmt_g(0.1, 9), "0.1");
        assert_eq!(fmt_g(123456789.0, 9), "123456789");
        assert_eq!(fmt_g(1234567891.0, 9), "1.23456789e+09");
        assert_eq!(fmt_g(1.0 / 3.0, 9), "0.333333333");
        assert_eq!(fmt_g(-2.5e-7, 9), "-2.5e-07");
        assert_eq!(fmt_g(0.0001, 9), "0.0001");
        assert_eq!(fmt_g(0.1, 17), "0.10000000000000001");
    }

    #[test]
    fn formats_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = icosphere(Vec3::new(1.5, 2.0, -3.0), 2.0, 1);
        for v in &mut s.vertices {
            *v = quantize(v);
        }
        s.vertex_tags = Some(
            (0..s.vertices.len())
                .map(|i| [VertexTag::Free, VertexTag::Contact, VertexTag::Border][i % 3])
                .collect(),
        );
        s.face_tags = Some((0..s.faces.len()).map(|i| (i % 7) as u8).collect());
        let p = dir.path().join("s.tsurf");
        write_tsurf(&p, &s).unwrap();
        assert_eq!(read_tsurf(&p).unwrap(), s);
        let p = dir.path().join("s.obj");
        write_obj(&p, &s).unwrap();
        let o = read_obj(&p).unwrap();
        assert_eq!(
            (o.vertices.clone(), o.faces.clone()),
            (s.vertices.clone(), s.faces.clone())
        );

        let mut m = crate::mesh::tests::five_tet_cube();
        m.components[2] = Component::Leaflet2;
        m.node_flags[3] = 5;
        let p = dir.path().join("m.tmesh");
        write_tmesh(&p, &m).unwrap();
        assert_eq!(read_tmesh(&p).unwrap(), m);
        let p = dir.path().join("m.vtk");
        write_tet_vtk(&p, &m).unwrap();
        let v = read_tet_vtk(&p).unwrap();
        assert_eq!(
            (v.vertices, v.tets, v.components),
            (m.vertices.clone(), m.tets.clone(), m.components.clone())
        );
    }

    #[test]
    fn writing_is_idempotent_after_one_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = icosphere(Vec3::new(0.1, 0.2, 0.3), 1.7, 1);
        let p = dir.path().join("a.tsurf");
        write_tsurf(&p, &s).unwrap();
        let back = read_tsurf(&p).unwrap();
        for (a, b) in back.vertices.iter().zip(&s.vertices) {
            assert!((a - b).norm() <= 1e-8 * b.norm());
        }
        assert_eq!(tsurf_string(&back), tsurf_string(&s));
    }

    #[test]
    fn malformed_input_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.tmesh");
        std::fs::write(&p, "tmesh 1\nvertices 1\n0 0 zero\ntets 0\n").unwrap();
        let e = read_tmesh(&p).unwrap_err();
        assert!(e.to_string().contains("bad.tmesh"), "{e}");
    }
}
