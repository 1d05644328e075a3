//! Subcommand implementations behind the `ppinn` binary.

pub mod config;
pub mod eval;
pub mod figures;
pub mod train;
pub mod verify;
