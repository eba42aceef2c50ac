//! Command implementations behind the `fairmix` binary.

pub mod args;
pub mod commands;
pub mod model_file;

/// Why a command failed, carrying the process exit code.
#[derive(Debug)]
pub enum Failure {
    /// Bad flags or option values: exit code 2.
    Usage(String),
    /// Unreadable or malformed input data: exit code 3.
    Data(String),
    /// The solver could not produce a finite answer: exit code 4.
    Numerical(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Data(_) => 3,
            Failure::Numerical(_) => 4,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Numerical(m) => m,
        }
    }
}

impl From<fairmix_core::Error> for Failure {
    fn from(err: fairmix_core::Error) -> Self {
        if err.is_data_error() {
            Failure::Data(err.to_string())
        } else {
            Failure::Numerical(err.to_string())
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(err: std::io::Error) -> Self {
        Failure::Data(err.to_string())
    }
}

pub fn run(cli: args::Cli) -> Result<(), Failure> {
    match cli.command {
        args::Command::Simulate(a) => commands::simulate(a),
        args::Command::Fit(a) => commands::fit(a),
        args::Command::Evaluate(a) => commands::evaluate(a),
        args::Command::Sensitivity(a) => commands::sensitivity(a),
    }
}
