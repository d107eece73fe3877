use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cmac::mesh::{extract_component_surface, io as mesh_io, Component, TetMesh, TriSurface};
use cmac::metrics::{cloud_distances, jacobian_stats, N_SAMPLES};
use cmac::pipeline::{
    bench, corpus_specs, load_heart, make_phantom, run, write_phantom, PhantomKind, PhantomSpec,
    PipelineConfig,
};
use cmac::voxelgrid::sample_surface;
use cmac::CmacError;

#[derive(Parser)]
#[command(
    name = "cmac",
    version,
    about = "Embed a calcification segmentation into a labelled heart tet mesh"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the full pipeline from a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `paths.output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic heart, segmentation, image and config.
    Phantom {
        #[arg(long, value_enum, default_value = "sphere-shell")]
        kind: PhantomKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 32)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        gap: usize,
        /// Blob volume in mm³.
        #[arg(long)]
        volume: Option<f64>,
        #[arg(long, default_value_t = 1)]
        blobs: usize,
    },
    /// Surface distances between two meshes (surfaces or tet meshes).
    Metrics {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long, default_value_t = N_SAMPLES)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Time the pipeline over generated phantoms.
    Bench {
        #[arg(long, default_value_t = 1)]
        cases: usize,
        #[arg(long, default_value_t = 32)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Base config; paths are ignored.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Where mesher files go; a temporary directory by default.
        #[arg(long)]
        workdir: Option<PathBuf>,
    },
}

const EXIT_CONFIG: u8 = 2;
const EXIT_STAGE: u8 = 3;
const EXIT_MESHER: u8 = 4;

fn exit_code(e: &CmacError, config_phase: bool) -> u8 {
    match e.root() {
        CmacError::Mesher(_) => EXIT_MESHER,
        _ if config_phase => EXIT_CONFIG,
        _ => EXIT_STAGE,
    }
}

enum Loaded {
    Surface(TriSurface),
    Tets(TetMesh),
}

fn load_mesh(path: &Path) -> cmac::Result<Loaded> {
    Ok(match path.extension().and_then(|e| e.to_str()) {
        Some("obj") => Loaded::Surface(mesh_io::read_obj(path)?),
        Some("tsurf") => Loaded::Surface(mesh_io::read_tsurf(path)?),
        _ => Loaded::Tets(load_heart(path)?),
    })
}

fn surface_of(m: &Loaded) -> cmac::Result<TriSurface> {
    match m {
        Loaded::Surface(s) => Ok(s.clone()),
        Loaded::Tets(t) => {
            let mut comps: Vec<Component> = t.components.clone();
            comps.sort();
            comps.dedup();
            Ok(extract_component_surface(t, &comps)?.surface)
        }
    }
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<(), u8> {
    match serde_json::to_string_pretty(v) {
        Ok(s) => {
            println!("{s}");
            Ok(())
        }
        Err(e) => {
            eprintln!("error: {e}");
            Err(EXIT_STAGE)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(code) => ExitCode::from(code),
    }
}

fn dispatch(cmd: Cmd) -> Result<(), u8> {
    let fail = |e: CmacError, config_phase: bool| {
        eprintln!("error: {e}");
        exit_code(&e, config_phase)
    };
    match cmd {
        Cmd::Run { config, out } => {
            let mut cfg = PipelineConfig::load(&config).map_err(|e| fail(e, true))?;
            if let Some(o) = out {
                cfg.paths.output_dir = o;
            }
            let report = run(&cfg).map_err(|e| {
                let config_phase = matches!(&e, CmacError::Stage { stage: "load", .. });
                fail(e, config_phase)
            })?;
            print_json(&report)
        }
        Cmd::Phantom {
            kind,
            seed,
            out,
            n,
            gap,
            volume,
            blobs,
        } => {
            let spec = PhantomSpec {
                kind,
                n,
                gap,
                volume,
                blobs,
                seed,
                ..PhantomSpec::default()
            };
            let p = make_phantom(&spec).map_err(|e| fail(e, true))?;
            write_phantom(&out, &p).map_err(|e| fail(e, false))?;
            println!("{}", out.join("config.json").display());
            Ok(())
        }
        Cmd::Metrics {
            pred,
            reference,
            samples,
            seed,
        } => {
            let a = load_mesh(&pred).map_err(|e| fail(e, true))?;
            let b = load_mesh(&reference).map_err(|e| fail(e, true))?;
            let sa = surface_of(&a).map_err(|e| fail(e, false))?;
            let sb = surface_of(&b).map_err(|e| fail(e, false))?;
            let d = cloud_distances(
                &sample_surface(&sa, samples, seed),
                &sample_surface(&sb, samples, seed),
                None,
            );
            let jac = |m: &Loaded| match m {
                Loaded::Tets(t) => jacobian_stats(t).map(|j| j.min),
                Loaded::Surface(_) => None,
            };
            print_json(&serde_json::json!({
                "hd": d.map(|d| d.hd),
                "cd": d.map(|d| d.cd),
                "pred_min_scaled_jacobian": jac(&a),
                "ref_min_scaled_jacobian": jac(&b),
                "n_samples": samples,
            }))
        }
        Cmd::Bench {
            cases,
            n,
            seed,
            config,
            workdir,
        } => {
            let cfg = match config {
                Some(p) => PipelineConfig::load(&p).map_err(|e| fail(e, true))?,
                None => PipelineConfig::default(),
            };
            let tmp = tempfile::tempdir().map_err(|e| fail(e.into(), false))?;
            let dir = workdir.unwrap_or_else(|| tmp.path().to_path_buf());
            let summary =
                bench(&cfg, &corpus_specs(cases, n, seed), &dir).map_err(|e| fail(e, true))?;
            print_json(&summary)
        }
    }
}
