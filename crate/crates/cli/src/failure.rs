use groove::Error;

/// A failed command, classified by exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl Failure {
    pub const USAGE: u8 = 1;
    pub const DATA: u8 = 2;
    pub const NUMERIC: u8 = 3;

    pub fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => Self::USAGE,
            Failure::Data(_) => Self::DATA,
            Failure::Numeric(_) => Self::NUMERIC,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Numeric(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let message = e.to_string();
        match e {
            Error::NonFiniteLoss { .. } | Error::DegenerateStd(_) => Failure::Numeric(message),
            Error::InvalidArgument(_) | Error::TaskMismatch { .. } | Error::UntrainedModel => Failure::Usage(message),
            _ => Failure::Data(message),
        }
    }
}

/// Attaches a path to an I/O or format error.
pub fn at_path<T>(result: groove::Result<T>, path: &std::path::Path) -> Result<T, Failure> {
    result.map_err(|e| match Failure::from(e) {
        Failure::Data(m) => Failure::Data(format!("{}: {m}", path.display())),
        other => other,
    })
}
