//! Douglas-Rachford iteration for the union of two lines through
//! `(-1/2, 0)` and `(1/2, 0)` against the x-axis.
//!
//! The crate provides the set-valued operator, a global Lyapunov certificate
//! for admissible angle pairs, perturbation bounds, and the experiment
//! drivers used by the `drlines` command-line tool.

pub mod dr;
pub mod error;
pub mod experiments;
pub mod geometry;
pub mod lyapunov;
pub mod robust;

pub use error::{Error, Result};
pub use geometry::{ProblemConfig, RegionLabel, Side, Vec2};
pub use lyapunov::{certify, Certification, LyapunovCertificate};

/// CSV writer with a header row and CRLF record terminators.
pub fn csv_writer<W: std::io::Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_writer(out)
}
