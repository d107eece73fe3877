use std::path::PathBuf;

use crate::mesh::ManifoldReport;

pub type Result<T, E = CmacError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum CmacError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch([usize; 3], [usize; 3]),

    #[error("label grid is not binary (found value {0})")]
    NotBinary(u8),

    #[error("surface is open: {boundary_edges} boundary edges")]
    OpenSurface { boundary_edges: usize },

    #[error("surface is not a watertight manifold: {0:?}")]
    NotManifold(ManifoldReport),

    #[error("surfaces intersect: face {0} of the first and face {1} of the second")]
    Intersection(usize, usize),

    #[error("degenerate tetrahedron {0} (zero volume)")]
    DegenerateTet(usize),

    #[error("empty result: {0}")]
    Empty(String),

    #[error("mesher failure: {0}")]
    Mesher(String),

    #[error("parse error in {path}: {msg}")]
    Parse { path: PathBuf, msg: String },

    #[error("stage '{stage}' failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<CmacError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CmacError {
    pub fn parse(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        CmacError::Parse {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// Wraps an error with the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ CmacError::Stage { .. } => e,
            e => CmacError::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    /// Innermost error, skipping stage wrappers.
    pub fn root(&self) -> &CmacError {
        match self {
            CmacError::Stage { source, .. } => source.root(),
            e => e,
        }
    }
}

pub trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.in_stage(stage))
    }
}
