//! Gaussian process occupancy mapping (GPOM) on 2D grids.
//!
//! Two per-scan pipelines share one latent map: the classical pipeline,
//! which regresses every cell of a local window around the robot, and a
//! fast pipeline, which splits the window into free space, an uncertain
//! band between two rings, and unobserved space, and only regresses the
//! band. Around them sit a laser-scan simulator, step timing, and ROC/AUC
//! scoring against ground truth.

pub mod world;
pub mod simulator;
pub mod gp;
pub mod sampling;
pub mod mapping;
pub mod eval;
pub mod bench;
