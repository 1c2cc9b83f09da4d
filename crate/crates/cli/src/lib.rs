//! Library side of the `darp` command: scenario documents, comparisons and reports.

pub mod cli;
pub mod compare;
pub mod document;
pub mod report;
