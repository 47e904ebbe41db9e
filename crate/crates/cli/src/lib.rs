//! Library side of the `gridmpc` command-line tool: configuration handling
//! and the four subcommands.

pub mod commands;
pub mod config;

use gridmpc::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_PARAMETER: i32 = 2;
pub const EXIT_EXCITATION: i32 = 3;
pub const EXIT_INFEASIBLE: i32 = 4;

/// Process exit status for a failed command.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Excitation(_) => EXIT_EXCITATION,
        Error::Runtime { .. } => EXIT_INFEASIBLE,
        Error::Parameter(_) | Error::Ingestion { .. } | Error::Io { .. } | Error::Csv(_) | Error::Json(_) => {
            EXIT_PARAMETER
        }
    }
}
