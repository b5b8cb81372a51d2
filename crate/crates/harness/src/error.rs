use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] sosp_core::Error),

    #[error("invalid experiment spec: {0}")]
    Spec(String),

    #[error("malformed input: {0}")]
    Decode(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization failed: {0}")]
    Serialize(String),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

impl HarnessError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        use sosp_core::Error as E;
        match self {
            Self::Core(e) => match e {
                E::ZeroDimension | E::DimensionMismatch { .. } | E::InvalidArgument { .. } => "invalid-argument",
                E::NonFinite { .. } => "non-finite",
                E::MissingGradient | E::MissingTruth => "missing-capability",
                E::NonFiniteDerivative => "non-finite-derivative",
                E::NonConvergence { .. } => "non-convergence",
                E::CoverTooLarge { .. } => "cover-too-large",
                E::IllConditioned { .. } => "ill-conditioned",
                E::SearchExhausted { .. } => "search-exhausted",
            },
            Self::Spec(_) => "invalid-spec",
            Self::Decode(_) => "malformed-input",
            Self::Io { .. } => "io",
            Self::Serialize(_) => "serialize",
        }
    }

    /// Process exit status: 2 for bad input, 1 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Spec(_) | Self::Decode(_) => 2,
            Self::Core(sosp_core::Error::InvalidArgument { .. } | sosp_core::Error::ZeroDimension) => 2,
            _ => 1,
        }
    }

    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Body<'a> {
            code: &'a str,
            message: String,
        }
        #[derive(Serialize)]
        struct Wrapper<'a> {
            error: Body<'a>,
        }
        serde_json::to_string(&Wrapper {
            error: Body {
                code: self.code(),
                message: self.to_string(),
            },
        })
        .unwrap_or_else(|_| "{\"error\":{\"code\":\"serialize\",\"message\":\"\"}}".into())
    }
}

impl From<serde_json::Error> for HarnessError {
    fn from(e: serde_json::Error) -> Self {
        Self::Serialize(e.to_string())
    }
}

impl From<csv::Error> for HarnessError {
    fn from(e: csv::Error) -> Self {
        Self::Serialize(e.to_string())
    }
}
