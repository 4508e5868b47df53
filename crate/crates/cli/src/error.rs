use std::fmt;

/// Process exit codes.
pub mod code {
    pub const OK: u8 = 0;
    pub const CONFIG: u8 = 2;
    pub const DATA: u8 = 3;
    pub const CHECK: u8 = 4;
}

/// A failure attributed to one pipeline stage.
#[derive(Debug)]
pub struct StageError {
    pub stage: &'static str,
    pub code: u8,
    pub source: anyhow::Error,
}

impl StageError {
    pub fn new(stage: &'static str, code: u8, source: impl Into<anyhow::Error>) -> Self {
        StageError {
            stage,
            code,
            source: source.into(),
        }
    }

    pub fn config(stage: &'static str, msg: impl fmt::Display) -> Self {
        Self::new(stage, code::CONFIG, anyhow::anyhow!("{msg}"))
    }

    pub fn data(stage: &'static str, msg: impl fmt::Display) -> Self {
        Self::new(stage, code::DATA, anyhow::anyhow!("{msg}"))
    }

    pub fn check(stage: &'static str, msg: impl fmt::Display) -> Self {
        Self::new(stage, code::CHECK, anyhow::anyhow!("{msg}"))
    }
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage={} exit={} error: {:#}", self.stage, self.code, self.source)
    }
}

impl std::error::Error for StageError {}

/// Exit code for a library error: bad configuration or a missing input
/// file is a config error, anything about the content is a data error.
pub fn classify(e: &anyhow::Error) -> u8 {
    use argmine::Error as E;
    for cause in e.chain() {
        if let Some(err) = cause.downcast_ref::<E>() {
            return match err {
                E::Config(_) | E::Usage(_) => code::CONFIG,
                E::File { source, .. } if source.kind() == std::io::ErrorKind::NotFound => code::CONFIG,
                _ => code::DATA,
            };
        }
    }
    code::DATA
}

pub trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T, StageError>;
}

impl<T, E: Into<anyhow::Error>> StageExt<T> for Result<T, E> {
    fn stage(self, stage: &'static str) -> Result<T, StageError> {
        self.map_err(|e| {
            let e = e.into();
            StageError {
                stage,
                code: classify(&e),
                source: e,
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn library_errors_map_to_codes() {
        let cfg: Result<(), _> = Err(argmine::Error::Config("x".into()));
        assert_eq!(cfg.stage("train").unwrap_err().code, code::CONFIG);
        let data: Result<(), _> = Err(argmine::Error::Data("x".into()));
        let e = data.stage("pairs").unwrap_err();
        assert_eq!((e.stage, e.code), ("pairs", code::DATA));
        assert!(e.to_string().starts_with("stage=pairs exit=3"));
    }
}
