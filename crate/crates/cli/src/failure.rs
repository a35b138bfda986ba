use std::fmt;

/// A failed run, split by exit code: usage/config errors exit 2, runtime
/// failures (I/O, divergence, failed checks) exit 1.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        Failure::Usage(msg.into())
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<qpmseg::Error> for Failure {
    fn from(e: qpmseg::Error) -> Self {
        if e.is_usage() {
            Failure::Usage(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

impl From<qpmseg::TensorError> for Failure {
    fn from(e: qpmseg::TensorError) -> Self {
        Failure::Runtime(e.to_string())
    }
}

pub type Outcome<T = ()> = Result<T, Failure>;
