//! Vendored TetGen (1.5) exposed through a single file-exchange call.
//!
//! [`tetrahedralize_files`] reads `<input_base>.poly` (and `<input_base>.node`
//! when the poly file references an external node list), runs TetGen with the
//! given command-line switches and writes `<output_base>.node` and
//! `<output_base>.ele`. Coordinates are written with 17 significant digits so
//! every input vertex round-trips bit-exactly.
//!
//! The `cmac-tetgen` executable of the `cmac` crate wraps this call with a
//! TetGen-compatible command line.

use std::ffi::{c_char, c_int, CString};
use std::path::Path;

extern "C" {
    fn cmac_tetgen_run(
        switches: *const c_char,
        in_base: *const c_char,
        out_base: *const c_char,
    ) -> c_int;
}

#[derive(Debug, thiserror::Error)]
pub enum TetgenError {
    #[error("path is not valid UTF-8 or contains a NUL byte: {0}")]
    BadPath(String),
    #[error("switch string contains a NUL byte")]
    BadSwitches,
    #[error("failed to read PLC input '{0}'")]
    Input(String),
    #[error("tetgen produced no tetrahedra")]
    Empty,
    #[error("failed to write output files")]
    Output,
    #[error("tetgen terminated with code {0}")]
    Terminated(i32),
}

impl TetgenError {
    /// Process exit code used by the `cmac-tetgen` executable.
    pub fn exit_code(&self) -> i32 {
        match self {
            TetgenError::BadPath(_) | TetgenError::BadSwitches => 2,
            TetgenError::Input(_) => 10,
            TetgenError::Empty => 30,
            TetgenError::Output => 20,
            TetgenError::Terminated(c) => *c,
        }
    }
}

fn c_path(p: &Path) -> Result<CString, TetgenError> {
    let s = p
        .to_str()
        .ok_or_else(|| TetgenError::BadPath(p.display().to_string()))?;
    CString::new(s).map_err(|_| TetgenError::BadPath(s.to_string()))
}

/// Runs TetGen on `<input_base>.poly`. `switches` uses TetGen syntax without
/// the leading dash (for example `"pYQq1.4a2.0"`).
pub fn tetrahedralize_files(
    switches: &str,
    input_base: &Path,
    output_base: &Path,
) -> Result<(), TetgenError> {
    let sw =
        CString::new(switches.trim_start_matches('-')).map_err(|_| TetgenError::BadSwitches)?;
    let inp = c_path(input_base)?;
    let out = c_path(output_base)?;
    // SAFETY: all three pointers are valid NUL-terminated strings for the duration of the call.
    let code = unsafe { cmac_tetgen_run(sw.as_ptr(), inp.as_ptr(), out.as_ptr()) };
    match code {
        0 => Ok(()),
        10 => Err(TetgenError::Input(input_base.display().to_string())),
        20 => Err(TetgenError::Output),
        30 => Err(TetgenError::Empty),
        c => Err(TetgenError::Terminated(c)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    #[test]
    fn cube_plc_is_meshed() {
        let dir = std::env::temp_dir().join(format!("cmac-tetgen-test-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let base = dir.join("cube");
        let poly = "8 3 0 0\n\
            0 0 0 0\n1 1 0 0\n2 1 1 0\n3 0 1 0\n4 0 0 1\n5 1 0 1\n6 1 1 1\n7 0 1 1\n\
            6 0\n\
            1\n4 0 3 2 1\n1\n4 4 5 6 7\n1\n4 0 1 5 4\n1\n4 1 2 6 5\n1\n4 2 3 7 6\n1\n4 3 0 4 7\n\
            0\n0\n";
        fs::write(base.with_extension("poly"), poly).unwrap();
        let out = dir.join("cube.1");
        tetrahedralize_files("pYQ", &base, &out).unwrap();
        let ele = fs::read_to_string(dir.join("cube.1.ele")).unwrap();
        let n: usize = ele.split_whitespace().next().unwrap().parse().unwrap();
        assert!(n >= 5);
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn missing_input_is_reported() {
        let r = tetrahedralize_files(
            "pQ",
            Path::new("/nonexistent/none"),
            Path::new("/tmp/none.1"),
        );
        assert!(matches!(r, Err(TetgenError::Input(_))));
    }
}
