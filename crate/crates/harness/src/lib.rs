//! Command-line and HTTP front ends for the gridguard workbench.

pub mod cli;
pub mod config;
pub mod service;
