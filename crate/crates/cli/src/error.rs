use std::fmt;

/// Process exit codes.
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_SAMPLER: i32 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub kind: String,
    pub message: String,
}

impl CliError {
    pub fn input(kind: &str, message: impl Into<String>) -> Self {
        CliError { code: EXIT_INPUT, kind: kind.into(), message: message.into() }
    }

    pub fn io(context: &str, e: std::io::Error) -> Self {
        Self::input("io", format!("{context}: {e}"))
    }
}

impl From<simplexsm::Error> for CliError {
    fn from(e: simplexsm::Error) -> Self {
        use simplexsm::Error as E;
        let code = match e {
            E::SingularSystem { .. } | E::Study(_) => EXIT_NUMERIC,
            E::InfeasibleTruncation { .. } | E::EnvelopeFailure { .. } => EXIT_SAMPLER,
            _ => EXIT_INPUT,
        };
        CliError { code, kind: e.kind().to_string(), message: e.to_string() }
    }
}

impl fmt::Display for CliError {
    /// Single line: `error: kind=<kind> msg=<message>`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let msg = self.message.replace(['\n', '\r'], " ");
        write!(f, "error: kind={} msg={}", self.kind, msg)
    }
}
