//! TetGen-compatible command line: `cmac-tetgen -pYq1.4 path/to/file.poly`
//! writes `path/to/file.1.node` and `path/to/file.1.ele`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

fn usage() -> ExitCode {
    eprintln!("usage: cmac-tetgen -<switches> <file.poly>");
    ExitCode::from(2)
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (switches, file) = match args.as_slice() {
        [s, f] if s.starts_with('-') => (s.trim_start_matches('-').to_string(), f.clone()),
        [f] => (String::new(), f.clone()),
        _ => return usage(),
    };
    let path = PathBuf::from(&file);
    if path.extension().and_then(|e| e.to_str()) != Some("poly") {
        return usage();
    }
    let base = path.with_extension("");
    let out = Path::new(&format!("{}.1", base.display())).to_path_buf();
    match cmac_tetgen::tetrahedralize_files(&switches, &base, &out) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("cmac-tetgen: {e}");
            ExitCode::from(e.exit_code().clamp(1, 255) as u8)
        }
    }
}
