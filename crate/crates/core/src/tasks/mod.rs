//! Concrete task processes.

pub mod data;
pub mod models;
pub mod supervised;
