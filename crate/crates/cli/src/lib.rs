//! Command-line front end and benchmark driver for snpvault.

pub mod bench;
pub mod commands;
