//! Library side of the `vform` command: campaign configs, execution and
//! SVG snapshots.

pub mod campaign;
pub mod config;
pub mod render;
