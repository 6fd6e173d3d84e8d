//! Report schema shared between the `caqr` binary and its integration tests.

pub mod report;
