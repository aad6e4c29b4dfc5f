//! Exit-code conventions of the `pointsim` binary.

use pointsim::harness::RunOutput;

pub const EXIT_OK: u8 = 0;
pub const EXIT_VIOLATION: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;

/// Exit status for a finished run.
pub fn run_status(run: &RunOutput) -> u8 {
    if run.ok() {
        EXIT_OK
    } else {
        EXIT_VIOLATION
    }
}
