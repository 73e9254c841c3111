//! Scenario-file front end for the GCHS toolkit: scenario parsing and the
//! check/audit/simulate/bracket subcommands.

pub mod commands;
pub mod scenario;
