//! Command-line tools and the HTTP correction service.

pub mod commands;
pub mod config;
pub mod service;
