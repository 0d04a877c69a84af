//! Asynchronous many-task runtime and octree AMR finite-volume mini-app.

pub mod aggregator;
pub mod amr;
pub mod bufferpool;
pub mod dist;
pub mod hydro;
pub mod lanes;
pub mod sim;
pub mod taskgraph;
