//! Find, classify and strip non-critical JavaScript from recorded web pages.

pub mod analysis;
pub mod classify;
pub mod cli;
pub mod depgraph;
pub mod extract;
pub mod har;
pub mod html;
pub mod metrics;
pub mod model;
pub mod proxy;
pub mod rewrite;
pub mod session;
