use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    // container
    #[error("duplicate plugin id `{id}` (registered as {existing}, rejected {rejected})")]
    DuplicatePlugin {
        id: String,
        existing: String,
        rejected: String,
    },
    #[error("no service provider registered for `{0}`")]
    MissingService(String),
    #[error("invalid event: {0}")]
    InvalidEvent(String),
    #[error("plugin manifest line {line}: {message}")]
    PluginManifest { line: usize, message: String },

    // modules
    #[error("line {line}: {message}")]
    Header { line: usize, message: String },
    #[error("parameter `{param}`: {message}")]
    Harvest { param: String, message: String },
    #[error("module `{module}` failed: {source}")]
    Module {
        module: String,
        #[source]
        source: Box<Error>,
    },
    #[error("unknown command `{0}`")]
    UnknownCommand(String),

    // convert
    #[error("cannot convert {from} to {to}")]
    Conversion { from: String, to: String },

    // ndimage
    #[error("invalid image geometry: {0}")]
    Geometry(String),
    #[error("position {position:?} out of bounds for dims {dims:?}")]
    OutOfBounds {
        position: Vec<usize>,
        dims: Vec<usize>,
    },
    #[error("{0}")]
    Unsupported(String),

    // ops
    #[error("no op matches {request}{}", format_near_misses(.near_misses))]
    NoMatch {
        request: String,
        near_misses: Vec<String>,
    },
    #[error("ambiguous request {request}: candidates {candidates:?} tie")]
    Ambiguous {
        request: String,
        candidates: Vec<String>,
    },
    #[error("op contract violated: {0}")]
    Contract(String),
    #[error("{0}")]
    Op(String),
    #[error("parse error at {line}:{column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unbound identifier `{0}`")]
    Unbound(String),

    // io
    #[error("no format claims {0}")]
    NoFormat(String),
    #[error("malformed {format} data at byte {offset}: {message}")]
    Malformed {
        format: String,
        offset: u64,
        message: String,
    },
    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),

    // updater
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("transport error: {0}")]
    Transport(String),

    // cli
    #[error("{0}")]
    Usage(String),

    #[error("allocation of {bytes} bytes failed")]
    Allocation { bytes: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn format_near_misses(near: &[String]) -> String {
    if near.is_empty() {
        String::new()
    } else {
        format!("; near misses: {}", near.join("; "))
    }
}

impl Error {
    pub(crate) fn harvest(param: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Harvest {
            param: param.into(),
            message: message.into(),
        }
    }

    pub(crate) fn op(message: impl Into<String>) -> Self {
        Error::Op(message.into())
    }
}
